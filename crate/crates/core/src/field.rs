//! Representation-typed feature fields and their rotation action.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::group::{rep_matrix, GroupElement, RepSpec};
use crate::tensor::{linear_map, DiffTensor, SparseMap};

/// Resampling rule for rotated rasters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Nearest,
    #[default]
    Bilinear,
}

/// A stack of `K` feature fields of one representation type, stored as a
/// `[K * D, H, W]` tensor with the `D` components of each field contiguous.
#[derive(Clone, Debug)]
pub struct FeatureField {
    pub tensor: DiffTensor,
    pub rep: RepSpec,
}

impl FeatureField {
    pub fn new(tensor: DiffTensor, rep: RepSpec) -> Result<Self> {
        if tensor.shape().len() != 3 {
            return shape_err(format!(
                "feature field tensor must be [K*D, H, W], got {:?}",
                tensor.shape()
            ));
        }
        if tensor.shape()[0] % rep.dim() != 0 {
            return Err(Error::RepMismatch(format!(
                "{} channels are not a multiple of dim({rep}) = {}",
                tensor.shape()[0],
                rep.dim()
            )));
        }
        Ok(FeatureField { tensor, rep })
    }

    /// Number of feature fields `K`.
    pub fn fields(&self) -> usize {
        self.tensor.shape()[0] / self.rep.dim()
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }
}

/// If `theta` is a whole number of quarter turns, return how many (mod 4).
fn quarter_turns(theta: f64) -> Option<usize> {
    let q = theta.rem_euclid(TAU) / FRAC_PI_2;
    let k = q.round();
    ((q - k).abs() < 1e-12).then_some(k as usize % 4)
}

/// Sampling rows of a rotated `h x w` plane: `out(x) = in(R(-theta) x)`
/// about the raster centre, with `x` the column and `y` the row axis.
fn plane_rows(h: usize, w: usize, theta: f64, method: Interpolation) -> Vec<Vec<(usize, f64)>> {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let exact = quarter_turns(theta).filter(|&q| q % 2 == 0 || h == w);
    let mut rows = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            if let Some(q) = exact {
                let (sr, sc) = match q {
                    0 => (r, c),
                    1 => (h - 1 - c, r),
                    2 => (h - 1 - r, w - 1 - c),
                    _ => (c, w - 1 - r),
                };
                rows.push(vec![(sr * w + sc, 1.0)]);
                continue;
            }
            let (x, y) = (c as f64 - cx, r as f64 - cy);
            let (s, co) = theta.sin_cos();
            // R(-theta) = [[c, s], [-s, c]]
            let sx = co * x + s * y + cx;
            let sy = -s * x + co * y + cy;
            let mut row = Vec::new();
            match method {
                Interpolation::Nearest => {
                    let (ir, ic) = (sy.round(), sx.round());
                    if ir >= 0.0 && ic >= 0.0 && (ir as usize) < h && (ic as usize) < w {
                        row.push((ir as usize * w + ic as usize, 1.0));
                    }
                }
                Interpolation::Bilinear => {
                    let (r0, c0) = (sy.floor(), sx.floor());
                    let (tr, tc) = (sy - r0, sx - c0);
                    for (dr, wr) in [(0.0, 1.0 - tr), (1.0, tr)] {
                        for (dc, wc) in [(0.0, 1.0 - tc), (1.0, tc)] {
                            let (rr, cc) = (r0 + dr, c0 + dc);
                            let wgt = wr * wc;
                            if wgt == 0.0 || rr < 0.0 || cc < 0.0 {
                                continue;
                            }
                            let (rr, cc) = (rr as usize, cc as usize);
                            if rr < h && cc < w {
                                row.push((rr * w + cc, wgt));
                            }
                        }
                    }
                }
            }
            rows.push(row);
        }
    }
    rows
}

/// Sparse map rotating every channel of a `[C, H, W]` raster. Quarter turns
/// on square rasters (and half turns on any raster) are exact permutations.
pub fn rotation_map(c: usize, h: usize, w: usize, theta: f64, method: Interpolation) -> SparseMap {
    field_rotation_map(c, 1, None, h, w, theta, method)
}

/// Rotation of a `[K * D, H, W]` field: spatial resampling followed by the
/// per-pixel `D x D` matrix `rho`.
fn field_rotation_map(
    k: usize,
    d: usize,
    rho: Option<&nalgebra::DMatrix<f64>>,
    h: usize,
    w: usize,
    theta: f64,
    method: Interpolation,
) -> SparseMap {
    let plane = plane_rows(h, w, theta, method);
    let hw = h * w;
    let mut rows = Vec::with_capacity(k * d * hw);
    for f in 0..k {
        for i in 0..d {
            for src in &plane {
                let mut row = Vec::new();
                for e in 0..d {
                    let coef = rho.map_or(if i == e { 1.0 } else { 0.0 }, |m| m[(i, e)]);
                    if coef.abs() < 1e-15 {
                        continue;
                    }
                    let base = (f * d + e) * hw;
                    row.extend(src.iter().map(|&(j, wgt)| (base + j, coef * wgt)));
                }
                rows.push(row);
            }
        }
    }
    SparseMap::from_rows(k * d * hw, &[k * d, h, w], rows)
}

/// Rotate a `[C, H, W]` raster by `theta` about its centre; samples from
/// outside the raster are zero.
pub fn rotate_raster(image: &DiffTensor, theta: f64, method: Interpolation) -> Result<DiffTensor> {
    let &[c, h, w] = image.shape() else {
        return shape_err(format!("raster must be [C, H, W], got {:?}", image.shape()));
    };
    linear_map(image, &Rc::new(rotation_map(c, h, w, theta, method)))
}

/// Representation matrix used when acting on a field, converting rotations to
/// cyclic elements for regular fields.
pub fn field_action_matrix(rep: RepSpec, g: &GroupElement) -> Result<nalgebra::DMatrix<f64>> {
    match rep {
        RepSpec::Regular(n) => {
            let gc = g.as_cyclic(n).ok_or_else(|| Error::IncompatibleElement {
                element: g.to_string(),
                rep: rep.to_string(),
            })?;
            rep_matrix(rep, &gc)
        }
        _ => rep_matrix(rep, g),
    }
}

/// The combined spatial + fibre action `T_g` as a sparse map on a field of
/// the given layout.
pub fn transform_map(
    rep: RepSpec,
    k: usize,
    h: usize,
    w: usize,
    g: &GroupElement,
    method: Interpolation,
) -> Result<SparseMap> {
    let rho = field_action_matrix(rep, g)?;
    Ok(field_rotation_map(k, rep.dim(), Some(&rho), h, w, g.angle(), method))
}

/// `[T_g f](x) = rho(g) f(R(g)^-1 x)`.
pub fn transform_field(field: &FeatureField, g: &GroupElement, method: Interpolation) -> Result<FeatureField> {
    let map = transform_map(field.rep, field.fields(), field.height(), field.width(), g, method)?;
    FeatureField::new(linear_map(&field.tensor, &Rc::new(map))?, field.rep)
}

/// Average over the group of each field's reconstructed signal, i.e. its
/// `a_0` channel. The result is a trivial field.
pub fn group_pool(field: &FeatureField) -> Result<FeatureField> {
    if !field.rep.is_fourier() {
        return Err(Error::RepMismatch(format!(
            "group pooling needs a Fourier representation, got {}",
            field.rep
        )));
    }
    let (k, d, h, w) = (field.fields(), field.rep.dim(), field.height(), field.width());
    let hw = h * w;
    let src: Vec<Option<usize>> = (0..k * hw).map(|i| Some((i / hw) * d * hw + i % hw)).collect();
    let map = SparseMap::gather(field.tensor.len(), &[k, h, w], &src);
    FeatureField::new(linear_map(&field.tensor, &Rc::new(map))?, RepSpec::Trivial)
}
