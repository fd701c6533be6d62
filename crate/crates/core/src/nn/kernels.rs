//! Batched forward/backward kernels over flat row-major buffers.
//!
//! Every accumulation runs in ascending input-coordinate order starting from
//! the bias, so a compact network and a dense network with zeroed extra
//! coordinates produce the same sums bit for bit.

pub(crate) fn dense_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    batch: usize,
    n_in: usize,
    n_out: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; batch * n_out];
    for s in 0..batch {
        let xs = &x[s * n_in..(s + 1) * n_in];
        let ys = &mut y[s * n_out..(s + 1) * n_out];
        for (o, yo) in ys.iter_mut().enumerate() {
            let wo = &w[o * n_in..(o + 1) * n_in];
            let mut acc = b[o];
            for (wi, xi) in wo.iter().zip(xs) {
                acc += wi * xi;
            }
            *yo = acc;
        }
    }
    y
}

/// Returns `(dx, dw, db)`.
pub(crate) fn dense_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    batch: usize,
    n_in: usize,
    n_out: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; batch * n_in];
    let mut dw = vec![0.0; n_out * n_in];
    let mut db = vec![0.0; n_out];
    for s in 0..batch {
        let xs = &x[s * n_in..(s + 1) * n_in];
        let dys = &dy[s * n_out..(s + 1) * n_out];
        let dxs = &mut dx[s * n_in..(s + 1) * n_in];
        for (o, &g) in dys.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let wo = &w[o * n_in..(o + 1) * n_in];
            let dwo = &mut dw[o * n_in..(o + 1) * n_in];
            for i in 0..n_in {
                dwo[i] += g * xs[i];
                dxs[i] += g * wo[i];
            }
        }
    }
    (dx, dw, db)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    /// Input coordinate for output `o` and kernel tap `k`, if inside the image.
    #[inline]
    fn src(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let p = o * self.stride + k;
        (p >= self.pad && p - self.pad < limit).then(|| p - self.pad)
    }
}

pub(crate) fn conv_forward(x: &[f64], w: &[f64], b: &[f64], batch: usize, g: ConvGeom) -> Vec<f64> {
    let (in_sz, out_sz) = (g.in_ch * g.h * g.w, g.out_ch * g.h_out * g.w_out);
    let plane = g.h_out * g.w_out;
    let kk = g.kernel * g.kernel;
    let mut y = vec![0.0; batch * out_sz];
    for s in 0..batch {
        let xs = &x[s * in_sz..(s + 1) * in_sz];
        for o in 0..g.out_ch {
            let yo = &mut y[s * out_sz + o * plane..s * out_sz + (o + 1) * plane];
            yo.fill(b[o]);
            for c in 0..g.in_ch {
                let xc = &xs[c * g.h * g.w..(c + 1) * g.h * g.w];
                let wk = &w[(o * g.in_ch + c) * kk..(o * g.in_ch + c + 1) * kk];
                for ky in 0..g.kernel {
                    for kx in 0..g.kernel {
                        let wv = wk[ky * g.kernel + kx];
                        for oy in 0..g.h_out {
                            let Some(iy) = g.src(oy, ky, g.h) else { continue };
                            for ox in 0..g.w_out {
                                let Some(ix) = g.src(ox, kx, g.w) else { continue };
                                yo[oy * g.w_out + ox] += wv * xc[iy * g.w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Returns `(dx, dw, db)`.
pub(crate) fn conv_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    batch: usize,
    g: ConvGeom,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (in_sz, out_sz) = (g.in_ch * g.h * g.w, g.out_ch * g.h_out * g.w_out);
    let plane = g.h_out * g.w_out;
    let kk = g.kernel * g.kernel;
    let mut dx = vec![0.0; batch * in_sz];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; g.out_ch];
    for s in 0..batch {
        let xs = &x[s * in_sz..(s + 1) * in_sz];
        let dxs = &mut dx[s * in_sz..(s + 1) * in_sz];
        for o in 0..g.out_ch {
            let dyo = &dy[s * out_sz + o * plane..s * out_sz + (o + 1) * plane];
            db[o] += dyo.iter().sum::<f64>();
            for c in 0..g.in_ch {
                let base = c * g.h * g.w;
                let widx = (o * g.in_ch + c) * kk;
                for ky in 0..g.kernel {
                    for kx in 0..g.kernel {
                        let wv = w[widx + ky * g.kernel + kx];
                        let mut acc = 0.0;
                        for oy in 0..g.h_out {
                            let Some(iy) = g.src(oy, ky, g.h) else { continue };
                            for ox in 0..g.w_out {
                                let Some(ix) = g.src(ox, kx, g.w) else { continue };
                                let d = dyo[oy * g.w_out + ox];
                                acc += d * xs[base + iy * g.w + ix];
                                dxs[base + iy * g.w + ix] += d * wv;
                            }
                        }
                        dw[widx + ky * g.kernel + kx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

pub(crate) fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub(crate) fn relu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(dy)
        .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
        .collect()
}

pub(crate) fn gap_forward(x: &[f64], batch: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut y = vec![0.0; batch * c];
    for (i, yi) in y.iter_mut().enumerate() {
        *yi = x[i * hw..(i + 1) * hw].iter().sum::<f64>() / hw as f64;
    }
    debug_assert_eq!(y.len(), batch * c);
    y
}

pub(crate) fn gap_backward(dy: &[f64], hw: usize) -> Vec<f64> {
    dy.iter()
        .flat_map(|&d| std::iter::repeat_n(d / hw as f64, hw))
        .collect()
}
