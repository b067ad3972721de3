use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::DiffTensor;
use crate::error::{shape_err, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Separable 2-D transform of an `h x w` row-major complex buffer.
struct Fft2 {
    h: usize,
    w: usize,
    rows: Arc<dyn Fft<f64>>,
    cols: Arc<dyn Fft<f64>>,
    rows_inv: Arc<dyn Fft<f64>>,
    cols_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(h: usize, w: usize) -> Self {
        PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            Fft2 {
                h,
                w,
                rows: p.plan_fft_forward(w),
                cols: p.plan_fft_forward(h),
                rows_inv: p.plan_fft_inverse(w),
                cols_inv: p.plan_fft_inverse(h),
            }
        })
    }

    /// Forward transforms of one or two real `ph x pw` patches zero-padded to
    /// `h x w`, computed with a single complex transform of `a + i b`.
    fn forward_pair(&self, a: &[f64], b: Option<&[f64]>, ph: usize, pw: usize) -> (Vec<Complex64>, Vec<Complex64>) {
        let mut s = Scratch::default();
        self.forward_pair_into(a, b, ph, pw, &mut s);
        (s.fa, s.fb)
    }

    fn forward_pair_into(&self, a: &[f64], b: Option<&[f64]>, ph: usize, pw: usize, s: &mut Scratch) {
        let (h, w) = (self.h, self.w);
        let zero = Complex64::default();
        s.buf.clear();
        s.buf.resize(h * w, zero);
        s.t.resize(h * w, zero);
        let buf = &mut s.buf;
        for r in 0..ph {
            for c in 0..pw {
                buf[r * w + c] = Complex64::new(a[r * pw + c], b.map_or(0.0, |b| b[r * pw + c]));
            }
        }
        // rows past `ph` are zero and stay zero
        self.rows.process(&mut buf[..ph * w]);
        transpose(buf, &mut s.t, h, w);
        self.cols.process(&mut s.t);
        if b.is_none() {
            s.fa.resize(h * w, zero);
            transpose(&s.t, &mut s.fa, w, h);
            return;
        }
        transpose(&s.t, buf, w, h);
        s.fa.resize(h * w, zero);
        s.fb.resize(h * w, zero);
        for r in 0..h {
            let rr = (h - r) % h;
            for c in 0..w {
                let z = buf[r * w + c];
                let zc = buf[rr * w + (w - c) % w].conj();
                s.fa[r * w + c] = (z + zc) * 0.5;
                // (z - zc) / 2i
                let d = (z - zc) * 0.5;
                s.fb[r * w + c] = Complex64::new(d.im, -d.re);
            }
        }
    }

    /// Real parts of the inverse transforms of the spectra of one or two real
    /// signals, each cropped to its top-left `ph x pw` block.
    fn inverse_pair(&self, a: &[Complex64], b: Option<&[Complex64]>, ph: usize, pw: usize) -> (Vec<f64>, Vec<f64>) {
        let (h, w) = (self.h, self.w);
        let mut t = vec![Complex64::default(); h * w];
        for r in 0..h {
            for c in 0..w {
                let z = a[r * w + c];
                let z = match b {
                    Some(b) => {
                        let y = b[r * w + c];
                        Complex64::new(z.re - y.im, z.im + y.re)
                    }
                    None => z,
                };
                t[c * h + r] = z;
            }
        }
        self.cols_inv.process(&mut t);
        let mut rows = vec![Complex64::default(); ph * w];
        for r in 0..ph {
            for c in 0..w {
                rows[r * w + c] = t[c * h + r];
            }
        }
        self.rows_inv.process(&mut rows);
        let norm = 1.0 / (h * w) as f64;
        let mut oa = Vec::with_capacity(ph * pw);
        let mut ob = Vec::with_capacity(if b.is_some() { ph * pw } else { 0 });
        for r in 0..ph {
            for z in &rows[r * w..r * w + pw] {
                oa.push(z.re * norm);
                if b.is_some() {
                    ob.push(z.im * norm);
                }
            }
        }
        (oa, ob)
    }

    /// Forward transforms of `count` real patches stored back to back.
    fn forward_many(&self, data: &[f64], count: usize, ph: usize, pw: usize) -> Vec<Vec<Complex64>> {
        let size = ph * pw;
        let mut out = Vec::with_capacity(count);
        let mut i = 0;
        while i < count {
            let a = &data[i * size..(i + 1) * size];
            if i + 1 < count {
                let (fa, fb) = self.forward_pair(a, Some(&data[(i + 1) * size..(i + 2) * size]), ph, pw);
                out.push(fa);
                out.push(fb);
                i += 2;
            } else {
                out.push(self.forward_pair(a, None, ph, pw).0);
                i += 1;
            }
        }
        out
    }

    /// Inverse transforms of real-signal spectra, concatenated.
    fn inverse_many(&self, spectra: &[Vec<Complex64>], ph: usize, pw: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(spectra.len() * ph * pw);
        for pair in spectra.chunks(2) {
            let (a, b) = self.inverse_pair(&pair[0], pair.get(1).map(|v| v.as_slice()), ph, pw);
            out.extend(a);
            out.extend(b);
        }
        out
    }
}

#[derive(Default)]
struct Scratch {
    buf: Vec<Complex64>,
    t: Vec<Complex64>,
    fa: Vec<Complex64>,
    fb: Vec<Complex64>,
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Valid cross-correlation of a bank of kernels over one scene.
///
/// `scene` is `[C, Hs, Ws]`, `kernels` is `[N, C, h, w]`; the result is
/// `[N, Hs - h + 1, Ws - w + 1]` with
/// `out[n, y, x] = sum_{c, i, j} scene[c, y + i, x + j] * kernels[n, c, i, j]`.
/// Evaluated in the frequency domain on an `Hs x Ws` grid; since the output
/// is restricted to valid positions, circular wrap-around never contributes.
pub fn correlate_fft(scene: &DiffTensor, kernels: &DiffTensor) -> Result<DiffTensor> {
    let &[c, hs, ws] = scene.shape() else {
        return shape_err(format!("scene must be [C, H, W], got {:?}", scene.shape()));
    };
    let &[n, kc, h, w] = kernels.shape() else {
        return shape_err(format!(
            "kernels must be [N, C, h, w], got {:?}",
            kernels.shape()
        ));
    };
    if kc != c {
        return shape_err(format!("kernel channels {kc} differ from scene channels {c}"));
    }
    if h > hs || w > ws {
        return shape_err(format!("kernel {h}x{w} larger than scene {hs}x{ws}"));
    }
    let (ho, wo) = (hs - h + 1, ws - w + 1);
    let plan = Fft2::new(hs, ws);
    let grid = hs * ws;
    let kd = kernels.data();
    let fs = plan.forward_many(scene.data(), c, hs, ws);
    // Kernel spectra are formed one pair at a time and folded straight into
    // the per-output accumulators; storing all N * C of them is slower.
    let mut acc = vec![vec![Complex64::default(); grid]; n];
    for_kernel_spectra(&plan, kd, n, c, h, w, |ni, ci, fk| {
        for ((a, s), k) in acc[ni].iter_mut().zip(&fs[ci]).zip(fk) {
            *a += s * k.conj();
        }
    });
    let out = plan.inverse_many(&acc, ho, wo);
    drop(acc);
    let fs = if grad_needed(scene, kernels) { fs } else { Vec::new() };
    Ok(DiffTensor::from_op(
        vec![n, ho, wo],
        out,
        vec![scene.clone(), kernels.clone()],
        move |g, ps| {
            let plan = Fft2::new(hs, ws);
            let fg = plan.forward_many(g, n, ho, wo);
            let dscene = ps[0].requires_grad().then(|| {
                let kd = ps[1].data();
                let mut spectra = vec![vec![Complex64::default(); grid]; c];
                for_kernel_spectra(&plan, kd, n, c, h, w, |ni, ci, fk| {
                    for ((a, g), k) in spectra[ci].iter_mut().zip(&fg[ni]).zip(fk) {
                        *a += g * k;
                    }
                });
                plan.inverse_many(&spectra, hs, ws)
            });
            let dkernels = ps[1].requires_grad().then(|| {
                let mut d = Vec::with_capacity(n * c * h * w);
                let product = |i: usize| -> Vec<Complex64> {
                    fs[i % c].iter().zip(&fg[i / c]).map(|(s, g)| s * g.conj()).collect()
                };
                let mut i = 0;
                while i < n * c {
                    let a = product(i);
                    if i + 1 < n * c {
                        let b = product(i + 1);
                        let (oa, ob) = plan.inverse_pair(&a, Some(&b), h, w);
                        d.extend(oa);
                        d.extend(ob);
                        i += 2;
                    } else {
                        d.extend(plan.inverse_pair(&a, None, h, w).0);
                        i += 1;
                    }
                }
                d
            });
            vec![dscene, dkernels]
        },
    ))
}

/// Calls `f(n, c, spectrum)` for every `h x w` kernel of an `[N, C, h, w]` bank.
fn for_kernel_spectra(
    plan: &Fft2,
    kd: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    mut f: impl FnMut(usize, usize, &[Complex64]),
) {
    let size = h * w;
    let total = n * c;
    let mut s = Scratch::default();
    let mut i = 0;
    while i < total {
        let a = &kd[i * size..(i + 1) * size];
        if i + 1 < total {
            plan.forward_pair_into(a, Some(&kd[(i + 1) * size..(i + 2) * size]), h, w, &mut s);
            f(i / c, i % c, &s.fa);
            f((i + 1) / c, (i + 1) % c, &s.fb);
            i += 2;
        } else {
            plan.forward_pair_into(a, None, h, w, &mut s);
            f(i / c, i % c, &s.fa);
            i += 1;
        }
    }
}

fn grad_needed(a: &DiffTensor, b: &DiffTensor) -> bool {
    super::grad_enabled() && (a.requires_grad() || b.requires_grad())
}
