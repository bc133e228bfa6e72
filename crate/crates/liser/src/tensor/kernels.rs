//! Numeric kernels behind the tape ops. All loops are single-threaded and
//! arranged so the innermost dimension walks contiguous memory.

/// Same-padding 2-D convolution over NCHW data. Kernel dims must be odd.
pub(crate) fn conv2d_forward(
    x: &[f64],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    k: &[f64],
    cout: usize,
    kh: usize,
    kw: usize,
    bias: &[f64],
) -> Vec<f64> {
    let ph = kh / 2;
    let pw = kw / 2;
    let mut out = vec![0.0; n * cout * h * w];
    for ni in 0..n {
        for co in 0..cout {
            let out_base = (ni * cout + co) * h * w;
            out[out_base..out_base + h * w].fill(bias[co]);
            for ci in 0..cin {
                let in_base = (ni * cin + ci) * h * w;
                for dh in 0..kh {
                    // h_in = h_out + dh - ph must land in [0, h)
                    let ho_lo = ph.saturating_sub(dh);
                    let ho_hi = (h + ph).saturating_sub(dh).min(h);
                    if ho_lo >= ho_hi {
                        continue;
                    }
                    for dw in 0..kw {
                        let coeff = k[((co * cin + ci) * kh + dh) * kw + dw];
                        let wo_lo = pw.saturating_sub(dw);
                        let wo_hi = (w + pw).saturating_sub(dw).min(w);
                        if wo_lo >= wo_hi {
                            continue;
                        }
                        let wi0 = wo_lo + dw - pw; // never underflows: wo_lo + dw >= pw
                        for ho in ho_lo..ho_hi {
                            let hi_in = ho + dh - ph;
                            let orow = out_base + ho * w;
                            let irow = in_base + hi_in * w + wi0;
                            let dst = &mut out[orow + wo_lo..orow + wo_hi];
                            let src = &x[irow..irow + (wo_hi - wo_lo)];
                            for (o, xv) in dst.iter_mut().zip(src) {
                                *o += coeff * xv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of `conv2d_forward` with respect to input, kernel, and bias.
/// `need_dx = false` skips the input-gradient pass (the input is a leaf that
/// nothing differentiates).
pub(crate) fn conv2d_backward(
    x: &[f64],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    k: &[f64],
    cout: usize,
    kh: usize,
    kw: usize,
    dy: &[f64],
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let ph = kh / 2;
    let pw = kw / 2;
    let mut dx = if need_dx { vec![0.0; x.len()] } else { Vec::new() };
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; cout];

    // db[co] = sum over n, h, w of dy
    for ni in 0..n {
        for co in 0..cout {
            let base = (ni * cout + co) * h * w;
            db[co] += dy[base..base + h * w].iter().sum::<f64>();
        }
    }

    // dx[ci][hi][wi] += k[co][ci][dh][dw] * dy[co][hi + ph - dh][wi + pw - dw]
    for ni in 0..if need_dx { n } else { 0 } {
        for ci in 0..cin {
            let dx_base = (ni * cin + ci) * h * w;
            for co in 0..cout {
                let dy_base = (ni * cout + co) * h * w;
                for dh in 0..kh {
                    // ho = hi + ph - dh must land in [0, h)
                    let hi_lo = dh.saturating_sub(ph);
                    let hi_hi = (h + dh).saturating_sub(ph).min(h);
                    if hi_lo >= hi_hi {
                        continue;
                    }
                    for dw in 0..kw {
                        let coeff = k[((co * cin + ci) * kh + dh) * kw + dw];
                        let wi_lo = dw.saturating_sub(pw);
                        let wi_hi = (w + dw).saturating_sub(pw).min(w);
                        if wi_lo >= wi_hi {
                            continue;
                        }
                        let wo0 = wi_lo + pw - dw; // never underflows: wi_lo + pw >= dw
                        for hi in hi_lo..hi_hi {
                            let ho = hi + ph - dh;
                            let drow = dx_base + hi * w;
                            let grow = dy_base + ho * w + wo0;
                            let dst = &mut dx[drow + wi_lo..drow + wi_hi];
                            let src = &dy[grow..grow + (wi_hi - wi_lo)];
                            for (d, g) in dst.iter_mut().zip(src) {
                                *d += coeff * g;
                            }
                        }
                    }
                }
            }
        }
    }

    // dk[co][ci][dh][dw] = sum over n, valid (ho, wo) of dy * x at the shifted spot
    for co in 0..cout {
        for ci in 0..cin {
            for dh in 0..kh {
                let ho_lo = ph.saturating_sub(dh);
                let ho_hi = (h + ph).saturating_sub(dh).min(h);
                if ho_lo >= ho_hi {
                    continue;
                }
                for dw in 0..kw {
                    let wo_lo = pw.saturating_sub(dw);
                    let wo_hi = (w + pw).saturating_sub(dw).min(w);
                    if wo_lo >= wo_hi {
                        continue;
                    }
                    let wi0 = wo_lo + dw - pw;
                    let mut acc = 0.0;
                    for ni in 0..n {
                        let dy_base = (ni * cout + co) * h * w;
                        let x_base = (ni * cin + ci) * h * w;
                        for ho in ho_lo..ho_hi {
                            let hi_in = ho + dh - ph;
                            let grow = dy_base + ho * w + wo_lo;
                            let xrow = x_base + hi_in * w + wi0;
                            let gs = &dy[grow..grow + (wo_hi - wo_lo)];
                            let xs = &x[xrow..xrow + (wo_hi - wo_lo)];
                            acc += gs.iter().zip(xs).map(|(g, xv)| g * xv).sum::<f64>();
                        }
                    }
                    dk[((co * cin + ci) * kh + dh) * kw + dw] = acc;
                }
            }
        }
    }

    (dx, dk, db)
}

/// Non-overlapping max pooling over NCHW data. Returns pooled values plus the
/// flat input index of each window maximum (first occurrence in row-major
/// window order wins ties).
pub(crate) fn maxpool2d_forward(
    x: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    ph: usize,
    pw: usize,
) -> (Vec<f64>, Vec<u32>) {
    let oh = h / ph;
    let ow = w / pw;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            for yo in 0..oh {
                for xo in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0u32;
                    for dy in 0..ph {
                        let row = base + (yo * ph + dy) * w + xo * pw;
                        for dxi in 0..pw {
                            let v = x[row + dxi];
                            if v > best {
                                best = v;
                                best_idx = (row + dxi) as u32;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_idx);
                }
            }
        }
    }
    (out, arg)
}

/// Per-channel batch statistics over N, H, W: biased mean and variance.
pub(crate) fn channel_stats(x: &[f64], n: usize, c: usize, hw: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (n * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ci in 0..c {
        let mut acc = 0.0;
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            acc += x[base..base + hw].iter().sum::<f64>();
        }
        mean[ci] = acc / m;
        let mut sq = 0.0;
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            sq += x[base..base + hw].iter().map(|v| (v - mean[ci]) * (v - mean[ci])).sum::<f64>();
        }
        var[ci] = sq / m;
    }
    (mean, var)
}

/// Normalize NCHW data with per-channel statistics: gamma * (x - mean) / sqrt(var + eps) + beta.
pub(crate) fn batchnorm_apply(
    x: &[f64],
    n: usize,
    c: usize,
    hw: usize,
    mean: &[f64],
    var: &[f64],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * hw;
            let inv = 1.0 / (var[ci] + eps).sqrt();
            let g = gamma[ci];
            let b = beta[ci];
            let mu = mean[ci];
            for (o, xv) in out[base..base + hw].iter_mut().zip(&x[base..base + hw]) {
                *o = g * (xv - mu) * inv + b;
            }
        }
    }
    out
}

/// y = x * w^T + b with x of shape n x d, w of shape m x d, b of length m.
pub(crate) fn linear_forward(x: &[f64], n: usize, d: usize, w: &[f64], m: usize, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for ni in 0..n {
        let xrow = &x[ni * d..(ni + 1) * d];
        let orow = &mut out[ni * m..(ni + 1) * m];
        for mi in 0..m {
            let wrow = &w[mi * d..(mi + 1) * d];
            let mut acc = b[mi];
            for (xv, wv) in xrow.iter().zip(wrow) {
                acc += xv * wv;
            }
            orow[mi] = acc;
        }
    }
    out
}

/// Plain matrix product: a of shape r x k times b of shape k x c.
pub(crate) fn matmul(a: &[f64], r: usize, k: usize, b: &[f64], c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for ri in 0..r {
        let orow = &mut out[ri * c..(ri + 1) * c];
        for ki in 0..k {
            let av = a[ri * k + ki];
            let brow = &b[ki * c..(ki + 1) * c];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Numerically stable softmax of one row, written into `out`.
pub(crate) fn softmax_row(z: &[f64], out: &mut [f64]) {
    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, zv) in out.iter_mut().zip(z) {
        let e = (zv - mx).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// log(sum(exp(z))) of one row, stable against large magnitudes.
pub(crate) fn logsumexp_row(z: &[f64]) -> f64 {
    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}
