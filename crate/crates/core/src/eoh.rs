//! Orientation histograms sampled from Fourier coefficient fields, group
//! subsampling and the rotated template stack used for place matching.

use std::f64::consts::TAU;
use std::rc::Rc;

use crate::error::{shape_err, Error, Result};
use crate::field::{rotation_map, FeatureField, Interpolation};
use crate::group::{discretization_matrix, RepSpec};
use crate::tensor::{linear_map, mix_channels, softmax, DiffTensor, SparseMap};

/// `a_0 + sum_j a_j cos(j g) + b_j sin(j g)` for coefficients `[a_0, a_1, b_1, ...]`.
pub fn sample_so2_signal(coeffs: &[f64], angle: f64) -> f64 {
    let mut v = coeffs.first().copied().unwrap_or(0.0);
    for (j, pair) in coeffs[1.min(coeffs.len())..].chunks(2).enumerate() {
        let (s, c) = ((j + 1) as f64 * angle).sin_cos();
        v += pair[0] * c + pair.get(1).copied().unwrap_or(0.0) * s;
    }
    v
}

/// Per-pixel logits on `N` orientations (`N / 2` for quotient fields) before
/// normalization: `[bins, H, W]`.
pub fn orientation_logits(coeff_field: &FeatureField, n: usize) -> Result<DiffTensor> {
    let (jc, quotient) = match coeff_field.rep {
        RepSpec::IrrepSum(jc) => (jc, false),
        RepSpec::QuotientIrrepSum(jc) => (jc, true),
        r => {
            return Err(Error::RepMismatch(format!(
                "orientation histograms need an irrep sum, got {r}"
            )))
        }
    };
    if coeff_field.fields() != 1 {
        return shape_err(format!(
            "orientation histograms need a single field, got {}",
            coeff_field.fields()
        ));
    }
    let q = discretization_matrix(n, jc, quotient)?;
    mix_channels(&coeff_field.tensor, 1, q.matrix())
}

/// Per-pixel normalized orientation histogram `[bins, H, W]`; bin `i`
/// corresponds to the angle `2 pi i / N`.
pub fn generate_eoh(coeff_field: &FeatureField, n: usize) -> Result<DiffTensor> {
    softmax(&orientation_logits(coeff_field, n)?, 0)
}

fn group_dims(map: &DiffTensor) -> Result<(usize, usize, usize)> {
    match *map.shape() {
        [n, h, w] => Ok((n, h, w)),
        ref s => shape_err(format!("orientation map must be [N, H, W], got {s:?}")),
    }
}

fn check_divides(n: usize, m: usize) -> Result<()> {
    if m == 0 || n % m != 0 {
        return Err(Error::InvalidArgument(format!(
            "subgroup order {m} does not divide {n}"
        )));
    }
    Ok(())
}

/// Keep the bins `{0, N/M, 2N/M, ...}` of every pixel.
pub fn subsample_group(map: &DiffTensor, m: usize) -> Result<DiffTensor> {
    let (n, h, w) = group_dims(map)?;
    check_divides(n, m)?;
    let hw = h * w;
    let step = n / m;
    let src: Vec<Option<usize>> = (0..m * hw)
        .map(|i| Some((i / hw) * step * hw + i % hw))
        .collect();
    linear_map(map, &Rc::new(SparseMap::gather(map.len(), &[m, h, w], &src)))
}

/// Sparse map from an `[N, h, w]` orientation map to its `[N, M, h, w]`
/// stack: entry `i` is the map rotated by `2 pi i / N` (space and bins)
/// and reduced to the bins of C_M.
pub fn alignment_map(n: usize, m: usize, h: usize, w: usize, method: Interpolation) -> Result<SparseMap> {
    check_divides(n, m)?;
    let hw = h * w;
    let step = n / m;
    let mut rows = Vec::with_capacity(n * m * hw);
    for i in 0..n {
        let rot = rotation_map(1, h, w, TAU * i as f64 / n as f64, method);
        for k in 0..m {
            let channel = (k * step + n - i) % n;
            for p in 0..hw {
                rows.push(rot.row(p).map(|(j, wt)| (channel * hw + j, wt)).collect());
            }
        }
    }
    Ok(SparseMap::from_rows(n * hw, &[n, m, h, w], rows))
}

/// Sparse map producing `N` spatially rotated copies of a `[C, h, w]`
/// descriptor without touching its channels: `[N, C, h, w]`.
pub fn spatial_alignment_map(n: usize, c: usize, h: usize, w: usize, method: Interpolation) -> SparseMap {
    let hw = h * w;
    let mut rows = Vec::with_capacity(n * c * hw);
    for i in 0..n {
        let rot = rotation_map(1, h, w, TAU * i as f64 / n as f64, method);
        for ch in 0..c {
            for p in 0..hw {
                rows.push(rot.row(p).map(|(j, wt)| (ch * hw + j, wt)).collect());
            }
        }
    }
    SparseMap::from_rows(c * hw, &[n, c, h, w], rows)
}

/// The `[N, M, h, w]` stack of rotated, subsampled copies of an odd-sized
/// crop orientation map.
pub fn subgroup_alignment(crop_map: &DiffTensor, m: usize, method: Interpolation) -> Result<DiffTensor> {
    let (n, h, w) = group_dims(crop_map)?;
    if h % 2 == 0 || w % 2 == 0 {
        return shape_err(format!("alignment needs an odd crop, got {h}x{w}"));
    }
    linear_map(crop_map, &Rc::new(alignment_map(n, m, h, w, method)?))
}
