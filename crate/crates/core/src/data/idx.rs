//! Big-endian IDX files: `u32` magic, `u32` dimension sizes, then `u8` data.

use std::fs;
use std::path::Path;

use super::{DataError, Dataset};
use crate::tensor::Tensor;

/// Unsigned-byte data with three dimensions (count, rows, cols).
pub const IMAGES_MAGIC: u32 = 0x0000_0803;
/// Unsigned-byte data with one dimension (count).
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Idx {
    dims: Vec<usize>,
    data: Vec<u8>,
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DataError::Truncated {
            offset,
            needed: offset + 4,
            available: bytes.len(),
        })
}

fn parse(bytes: &[u8], magic: u32) -> Result<Idx, DataError> {
    let found = read_be_u32(bytes, 0)?;
    if found != magic {
        return Err(DataError::BadMagic {
            offset: 0,
            found,
            expected: magic,
        });
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|d| read_be_u32(bytes, 4 + 4 * d).map(|v| v as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let header = 4 + 4 * ndim;
    let needed = header + dims.iter().product::<usize>();
    if bytes.len() < needed {
        return Err(DataError::Truncated {
            offset: bytes.len(),
            needed,
            available: bytes.len(),
        });
    }
    Ok(Idx {
        dims,
        data: bytes[header..needed].to_vec(),
    })
}

/// Parses an image/label IDX pair held in memory.
pub fn read_idx(images: &[u8], labels: &[u8], name: &str) -> Result<Dataset, DataError> {
    let img = parse(images, IMAGES_MAGIC)?;
    let lab = parse(labels, LABELS_MAGIC)?;
    if img.dims[0] != lab.dims[0] {
        return Err(DataError::CountMismatch {
            offset: 4,
            images: img.dims[0],
            labels: lab.dims[0],
        });
    }
    let (n, rows, cols) = (img.dims[0], img.dims[1], img.dims[2]);
    if n == 0 {
        return Err(DataError::Invalid("IDX files hold no samples".into()));
    }
    let pixels = img.data.iter().map(|&b| f64::from(b) / 255.0).collect();
    let inputs = Tensor::new(vec![n, 1, rows, cols], pixels)?;
    let labels: Vec<usize> = lab.data.iter().map(|&b| usize::from(b)).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(inputs, labels, classes, name)
}

/// Loads a grayscale image dataset. Pixels are scaled to `[0, 1]` and get an
/// explicit channel axis: inputs have shape `(n, 1, rows, cols)`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let read = |p: &Path| {
        fs::read(p).map_err(|source| DataError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    let images_path = images_path.as_ref();
    let images = read(images_path)?;
    let labels = read(labels_path.as_ref())?;
    let name = images_path
        .file_stem()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    read_idx(&images, &labels, &name)
}

/// Encodes a `(n, 1, rows, cols)` dataset as IDX image and label bytes.
/// Pixels are rounded to the nearest multiple of 1/255.
pub fn write_idx(dataset: &Dataset) -> Result<(Vec<u8>, Vec<u8>), DataError> {
    let &[n, 1, rows, cols] = dataset.inputs.shape() else {
        return Err(DataError::Invalid(format!(
            "IDX images need shape (n, 1, rows, cols), got {:?}",
            dataset.inputs.shape()
        )));
    };
    if dataset.labels.iter().any(|&l| l > 255) {
        return Err(DataError::Invalid("labels above 255 do not fit in IDX bytes".into()));
    }
    let mut images = IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [n, rows, cols] {
        images.extend_from_slice(&(d as u32).to_be_bytes());
    }
    images.extend(
        dataset
            .inputs
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut labels = LABELS_MAGIC.to_be_bytes().to_vec();
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    labels.extend(dataset.labels.iter().map(|&l| l as u8));
    Ok((images, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    #[test]
    fn parses_small_pair() {
        let mut images = header(IMAGES_MAGIC, &[2, 4, 4]);
        assert_eq!(&images[..4], &[0, 0, 8, 3]);
        images.extend((0..32).map(|i| if i == 0 { 255 } else { 0 }));
        let mut labels = header(LABELS_MAGIC, &[2]);
        labels.extend([1, 0]);
        let d = read_idx(&images, &labels, "t").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.inputs.shape(), &[2, 1, 4, 4]);
        assert_eq!(d.inputs.data()[0], 1.0);
        assert_eq!(d.inputs.data()[1], 0.0);
        assert_eq!(d.labels, vec![1, 0]);
    }

    #[test]
    fn count_mismatch() {
        let mut images = header(IMAGES_MAGIC, &[10, 1, 1]);
        images.extend([0u8; 10]);
        let mut labels = header(LABELS_MAGIC, &[9]);
        labels.extend([0u8; 9]);
        assert!(matches!(
            read_idx(&images, &labels, "t"),
            Err(DataError::CountMismatch { offset: 4, images: 10, labels: 9 })
        ));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut labels = header(LABELS_MAGIC, &[1]);
        labels.push(0);
        let wrong = header(0x0000_0802, &[1, 1]);
        assert!(matches!(read_idx(&wrong, &labels, "t"), Err(DataError::BadMagic { offset: 0, .. })));
        let short = header(IMAGES_MAGIC, &[2, 2, 2]);
        assert!(matches!(
            read_idx(&short, &labels, "t"),
            Err(DataError::Truncated { offset: 16, needed: 24, .. })
        ));
        assert!(matches!(read_idx(&[0, 0], &labels, "t"), Err(DataError::Truncated { .. })));
    }
}
