//! Raw numeric kernels shared by the data ops and the autodiff tape.
//!
//! All kernels work on row-major `(c, h, w)` buffers of `f64`. Each output
//! element is produced by exactly one task with a fixed-order inner sum, so
//! results are bit-stable regardless of the rayon thread count.

use rayon::prelude::*;

/// Area-average pooling with non-overlapping `factor x factor` windows.
/// Caller guarantees `h % factor == 0 && w % factor == 0`.
pub fn area_downsample(src: &[f64], c: usize, h: usize, w: usize, factor: usize) -> Vec<f64> {
    let (oh, ow) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let oplane = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..factor {
                    let row = (oy * factor + dy) * w + ox * factor;
                    for dx in 0..factor {
                        acc += plane[row + dx];
                    }
                }
                oplane[oy * ow + ox] = acc * inv;
            }
        }
    }
    out
}

/// Sampling plan for one axis of an align-corners bilinear resize.
/// For each output index: (low index, high index, weight of the high index).
pub fn bilinear_axis(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|o| {
            if out_len == 1 || in_len == 1 {
                return (0, 0, 0.0);
            }
            let pos = o as f64 * (in_len - 1) as f64 / (out_len - 1) as f64;
            let i0 = (pos.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

pub fn bilinear_resize(
    src: &[f64],
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let ys = bilinear_axis(h, oh);
    let xs = bilinear_axis(w, ow);
    let mut out = vec![0.0; c * oh * ow];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(ch, oplane)| {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                let top = plane[y0 * w + x0] * (1.0 - wx) + plane[y0 * w + x1] * wx;
                let bot = plane[y1 * w + x0] * (1.0 - wx) + plane[y1 * w + x1] * wx;
                oplane[oy * ow + ox] = top * (1.0 - wy) + bot * wy;
            }
        }
    });
    out
}

/// Scatter the output-side gradient of `bilinear_resize` back to the input.
pub fn bilinear_resize_backward(
    grad_out: &[f64],
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let ys = bilinear_axis(h, oh);
    let xs = bilinear_axis(w, ow);
    let mut grad_in = vec![0.0; c * h * w];
    grad_in.par_chunks_mut(h * w).enumerate().for_each(|(ch, gplane)| {
        let oplane = &grad_out[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                let g = oplane[oy * ow + ox];
                gplane[y0 * w + x0] += g * (1.0 - wy) * (1.0 - wx);
                gplane[y0 * w + x1] += g * (1.0 - wy) * wx;
                gplane[y1 * w + x0] += g * wy * (1.0 - wx);
                gplane[y1 * w + x1] += g * wy * wx;
            }
        }
    });
    grad_in
}

pub fn nearest_upsample2(src: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h * 2, w * 2);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let oplane = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            let iy = oy / 2;
            for ox in 0..ow {
                oplane[oy * ow + ox] = plane[iy * w + ox / 2];
            }
        }
    }
    out
}

pub fn nearest_upsample2_backward(grad_out: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h * 2, w * 2);
    let mut grad_in = vec![0.0; c * h * w];
    for ch in 0..c {
        let gplane = &mut grad_in[ch * h * w..(ch + 1) * h * w];
        let oplane = &grad_out[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            let iy = oy / 2;
            for ox in 0..ow {
                gplane[iy * w + ox / 2] += oplane[oy * ow + ox];
            }
        }
    }
    grad_in
}

pub fn conv_out_dim(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// Direct 2-D convolution (cross-correlation). Kernel layout `(co, ci, kh, kw)`.
pub fn conv2d(
    x: &[f64],
    (ci, h, w): (usize, usize, usize),
    k: &[f64],
    (co, kh, kw): (usize, usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    let mut out = vec![0.0; co * oh * ow];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(oc, oplane)| {
        oplane.fill(bias[oc]);
        for ic in 0..ci {
            let plane = &x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let kv = k[((oc * ci + ic) * kh + ky) * kw + kx];
                    if kv == 0.0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let irow = iy as usize * w;
                        let orow = oy * ow;
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            oplane[orow + ox] += kv * plane[irow + ix as usize];
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient of `conv2d` w.r.t. its input.
pub fn conv2d_backward_input(
    grad_out: &[f64],
    (ci, h, w): (usize, usize, usize),
    k: &[f64],
    (co, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    let mut grad_in = vec![0.0; ci * h * w];
    grad_in.par_chunks_mut(h * w).enumerate().for_each(|(ic, gplane)| {
        for oc in 0..co {
            let goplane = &grad_out[oc * oh * ow..(oc + 1) * oh * ow];
            for ky in 0..kh {
                for kx in 0..kw {
                    let kv = k[((oc * ci + ic) * kh + ky) * kw + kx];
                    if kv == 0.0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let irow = iy as usize * w;
                        let orow = oy * ow;
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            gplane[irow + ix as usize] += kv * goplane[orow + ox];
                        }
                    }
                }
            }
        }
    });
    grad_in
}

/// Gradient of `conv2d` w.r.t. the kernel.
pub fn conv2d_backward_kernel(
    grad_out: &[f64],
    x: &[f64],
    (ci, h, w): (usize, usize, usize),
    (co, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    let mut grad_k = vec![0.0; co * ci * kh * kw];
    grad_k
        .par_chunks_mut(ci * kh * kw)
        .enumerate()
        .for_each(|(oc, gk)| {
            let goplane = &grad_out[oc * oh * ow..(oc + 1) * oh * ow];
            for ic in 0..ci {
                let plane = &x[ic * h * w..(ic + 1) * h * w];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let irow = iy as usize * w;
                            let orow = oy * ow;
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += goplane[orow + ox] * plane[irow + ix as usize];
                            }
                        }
                        gk[(ic * kh + ky) * kw + kx] = acc;
                    }
                }
            }
        });
    grad_k
}

/// Per-output-channel sum of the gradient, i.e. the bias gradient.
pub fn conv2d_backward_bias(grad_out: &[f64], co: usize) -> Vec<f64> {
    let plane = grad_out.len() / co;
    (0..co)
        .map(|oc| grad_out[oc * plane..(oc + 1) * plane].iter().sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_downsample_preserves_constant() {
        let src = vec![0.5; 16 * 16];
        let out = area_downsample(&src, 1, 16, 16, 8);
        assert_eq!(out.len(), 4);
        for v in out {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn bilinear_identity_when_same_size() {
        let src: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let out = bilinear_resize(&src, 1, 3, 4, 3, 4);
        assert_eq!(src, out);
    }

    #[test]
    fn conv_dims() {
        assert_eq!(conv_out_dim(48, 3, 1, 1), 48);
        assert_eq!(conv_out_dim(48, 3, 2, 1), 24);
        assert_eq!(conv_out_dim(6, 3, 2, 1), 3);
    }

    #[test]
    fn conv2d_matches_hand_computed_1x1_input() {
        // 1 channel, 2x2 input, single 3x3 kernel of ones, pad 1, stride 1:
        // each output equals the sum of the in-bounds neighbourhood.
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let k = vec![1.0; 9];
        let out = conv2d(&x, (1, 2, 2), &k, (1, 3, 3), &[0.0], 1, 1);
        assert_eq!(out, vec![10.0, 10.0, 10.0, 10.0]);
    }
}
