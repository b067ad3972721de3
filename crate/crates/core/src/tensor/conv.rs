use super::ops::gemm;
use super::DiffTensor;
use crate::error::{shape_err, Result};

fn dims3(x: &DiffTensor, what: &str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => shape_err(format!("{what} needs a [C, H, W] tensor, got {s:?}")),
    }
}

struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let Geometry { cin, h, w, kh, kw, pad, ho, wo } = *self;
        let mut cols = vec![0.0; cin * kh * kw * ho * wo];
        for ci in 0..cin {
            let plane = &input[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = (ci * kh + ky) * kw + kx;
                    let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                    // valid output columns: 0 <= ox + kx - pad < w
                    let ox_lo = pad.saturating_sub(kx);
                    let ox_hi = (w + pad).saturating_sub(kx).min(wo);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..ho {
                        let iy = oy + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let iy = iy - pad;
                        let ix0 = ox_lo + kx - pad;
                        let n = ox_hi - ox_lo;
                        dst[oy * wo + ox_lo..oy * wo + ox_hi]
                            .copy_from_slice(&plane[iy * w + ix0..iy * w + ix0 + n]);
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let Geometry { cin, h, w, kh, kw, pad, ho, wo } = *self;
        let mut out = vec![0.0; cin * h * w];
        for ci in 0..cin {
            let plane = &mut out[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = (ci * kh + ky) * kw + kx;
                    let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                    let ox_lo = pad.saturating_sub(kx);
                    let ox_hi = (w + pad).saturating_sub(kx).min(wo);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..ho {
                        let iy = oy + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let iy = iy - pad;
                        let ix0 = ox_lo + kx - pad;
                        let n = ox_hi - ox_lo;
                        let d = &mut plane[iy * w + ix0..iy * w + ix0 + n];
                        let s = &src[oy * wo + ox_lo..oy * wo + ox_hi];
                        d.iter_mut().zip(s).for_each(|(d, s)| *d += s);
                    }
                }
            }
        }
        out
    }
}

/// Zero-padded 2-D cross-correlation (no kernel flip).
///
/// `input` is `[C_in, H, W]`, `kernel` is `[C_out, C_in, kh, kw]`; the output
/// is `[C_out, H - kh + 1 + 2 pad, W - kw + 1 + 2 pad]`.
pub fn conv2d(input: &DiffTensor, kernel: &DiffTensor, padding: usize) -> Result<DiffTensor> {
    let (cin, h, w) = dims3(input, "conv2d input")?;
    let &[cout, kcin, kh, kw] = kernel.shape() else {
        return shape_err(format!(
            "conv2d kernel must be [C_out, C_in, k, k], got {:?}",
            kernel.shape()
        ));
    };
    if kcin != cin {
        return shape_err(format!(
            "conv2d channel mismatch: input has {cin}, kernel expects {kcin}"
        ));
    }
    if kh > h + 2 * padding || kw > w + 2 * padding {
        return shape_err(format!(
            "kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * padding,
            w + 2 * padding
        ));
    }
    let geo = Geometry {
        cin,
        h,
        w,
        kh,
        kw,
        pad: padding,
        ho: h + 2 * padding - kh + 1,
        wo: w + 2 * padding - kw + 1,
    };
    let (ho, wo) = (geo.ho, geo.wo);
    let kk = cin * kh * kw;
    let cols = geo.im2col(input.data());
    let mut out = vec![0.0; cout * ho * wo];
    gemm(cout, kk, ho * wo, kernel.data(), false, &cols, false, 0.0, &mut out);
    let keep_cols = kernel.requires_grad();
    let cols = if keep_cols { cols } else { Vec::new() };
    Ok(DiffTensor::from_op(
        vec![cout, ho, wo],
        out,
        vec![input.clone(), kernel.clone()],
        move |g, ps| {
            let dinput = ps[0].requires_grad().then(|| {
                let mut dcols = vec![0.0; kk * ho * wo];
                gemm(kk, cout, ho * wo, ps[1].data(), true, g, false, 0.0, &mut dcols);
                geo.col2im(&dcols)
            });
            let dkernel = ps[1].requires_grad().then(|| {
                let mut dk = vec![0.0; cout * kk];
                gemm(cout, ho * wo, kk, g, false, &cols, true, 0.0, &mut dk);
                dk
            });
            vec![dinput, dkernel]
        },
    ))
}

fn max_pool_impl(
    input: &DiffTensor,
    out_h: usize,
    out_w: usize,
    window: impl Fn(usize, usize) -> (std::ops::Range<usize>, std::ops::Range<usize>),
) -> DiffTensor {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let x = input.data();
    let mut out = vec![0.0; c * out_h * out_w];
    let mut argmax = vec![0u32; c * out_h * out_w];
    for ch in 0..c {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let (rows, cols) = window(oy, ox);
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                // row-major scan with strict comparison: ties go to the first cell
                for iy in rows {
                    for ix in cols.clone() {
                        let idx = (ch * h + iy) * w + ix;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (ch * out_h + oy) * out_w + ox;
                out[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
    let n_in = x.len();
    DiffTensor::from_op(
        vec![c, out_h, out_w],
        out,
        vec![input.clone()],
        move |g, _| {
            let mut dx = vec![0.0; n_in];
            for (gv, &i) in g.iter().zip(&argmax) {
                dx[i as usize] += gv;
            }
            vec![Some(dx)]
        },
    )
}

/// Max over non-overlapping 2x2 cells. Requires even spatial sizes.
pub fn max_pool2d(input: &DiffTensor, size: usize) -> Result<DiffTensor> {
    let (_, h, w) = dims3(input, "max_pool2d")?;
    if size != 2 {
        return shape_err(format!("only 2x2 pooling is supported, got {size}"));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return shape_err(format!("max_pool2d needs even spatial sizes, got {h}x{w}"));
    }
    Ok(max_pool_impl(input, h / 2, w / 2, |oy, ox| {
        (2 * oy..2 * oy + 2, 2 * ox..2 * ox + 2)
    }))
}

/// 3x3 max pooling with stride 2 and one cell of (ignored) padding.
///
/// Windows are centred on even indices, so on odd-sized rasters the result
/// commutes exactly with quarter-turn rotations about the centre pixel.
pub fn max_pool2d_centered(input: &DiffTensor) -> Result<DiffTensor> {
    let (_, h, w) = dims3(input, "max_pool2d_centered")?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    Ok(max_pool_impl(input, oh, ow, move |oy, ox| {
        let r = (2 * oy).saturating_sub(1)..(2 * oy + 2).min(h);
        let c = (2 * ox).saturating_sub(1)..(2 * ox + 2).min(w);
        (r, c)
    }))
}

/// Source positions for corner-aligned linear interpolation along one axis.
fn axis_weights(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|o| {
            if n_in == 1 || n_out == 1 {
                return (0, 0, 0.0);
            }
            let pos = o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
            let i0 = (pos.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Bilinear upsampling by an integer factor with corner-aligned sampling.
pub fn upsample_bilinear(input: &DiffTensor, factor: usize) -> Result<DiffTensor> {
    let (c, h, w) = dims3(input, "upsample_bilinear")?;
    if factor == 0 {
        return shape_err("upsampling factor must be positive");
    }
    let (oh, ow) = (h * factor, w * factor);
    let rw = axis_weights(h, oh);
    let cw = axis_weights(w, ow);
    let x = input.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for (oy, &(r0, r1, tr)) in rw.iter().enumerate() {
            for (ox, &(c0, c1, tc)) in cw.iter().enumerate() {
                let top = plane[r0 * w + c0] * (1.0 - tc) + plane[r0 * w + c1] * tc;
                let bot = plane[r1 * w + c0] * (1.0 - tc) + plane[r1 * w + c1] * tc;
                out[(ch * oh + oy) * ow + ox] = top * (1.0 - tr) + bot * tr;
            }
        }
    }
    Ok(DiffTensor::from_op(
        vec![c, oh, ow],
        out,
        vec![input.clone()],
        move |g, _| {
            let mut dx = vec![0.0; c * h * w];
            for ch in 0..c {
                let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
                for (oy, &(r0, r1, tr)) in rw.iter().enumerate() {
                    for (ox, &(c0, c1, tc)) in cw.iter().enumerate() {
                        let gv = g[(ch * oh + oy) * ow + ox];
                        plane[r0 * w + c0] += gv * (1.0 - tr) * (1.0 - tc);
                        plane[r0 * w + c1] += gv * (1.0 - tr) * tc;
                        plane[r1 * w + c0] += gv * tr * (1.0 - tc);
                        plane[r1 * w + c1] += gv * tr * tc;
                    }
                }
            }
            vec![Some(dx)]
        },
    ))
}
