use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angular structure of one basis element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// `G(rho) R((n - m) phi)`, both frequencies positive.
    A,
    /// `G(rho) R((n + m) phi) F`, both frequencies positive.
    B,
    /// Column `0` or `1` of `G(rho) R(n phi)`, input frequency zero.
    Column(u8),
    /// Row `[cos m phi, sin m phi]` (0) or `[sin m phi, -cos m phi]` (1), output frequency zero.
    Row(u8),
    /// `G(rho)`, both frequencies zero.
    Radial,
}

/// One analytic steerable kernel and its rasterization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisElement {
    pub ring: usize,
    /// Angular frequency of the element.
    pub mu: u32,
    pub kind: BasisKind,
    /// Samples laid out `[d_out, d_in, k, k]`, unit Frobenius norm.
    pub raster: Vec<f64>,
    /// Scale applied to the analytic definition to normalize the raster.
    pub norm_scale: f64,
}

/// All steerable kernels mapping input frequency `m` to output frequency `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelBasis {
    pub m: u32,
    pub n: u32,
    pub size: usize,
    pub rings: Vec<f64>,
    pub sigma: f64,
    pub elements: Vec<BasisElement>,
}

fn irrep_dim(j: u32) -> usize {
    if j == 0 {
        1
    } else {
        2
    }
}

/// Default radial profile: integer rings `0..=(k-1)/2`, width 0.6.
pub fn default_rings(size: usize) -> Vec<f64> {
    (0..=size / 2).map(|r| r as f64).collect()
}

pub const DEFAULT_SIGMA: f64 = 0.6;

impl KernelBasis {
    pub fn d_in(&self) -> usize {
        irrep_dim(self.m)
    }

    pub fn d_out(&self) -> usize {
        irrep_dim(self.n)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Analytic (unnormalized) value of element `idx` at continuous offset
    /// `(x, y)`, as a `d_out x d_in` matrix. Returns zero at the origin for
    /// non-zero angular frequency.
    pub fn evaluate(&self, idx: usize, x: f64, y: f64) -> DMatrix<f64> {
        let e = &self.elements[idx];
        let rho = x.hypot(y);
        let g = (-(rho - self.rings[e.ring]).powi(2) / (2.0 * self.sigma * self.sigma)).exp();
        let (d_out, d_in) = (self.d_out(), self.d_in());
        if e.mu != 0 && rho < 1e-12 {
            return DMatrix::zeros(d_out, d_in);
        }
        let phi = y.atan2(x);
        let (m, n) = (self.m as f64, self.n as f64);
        let rot = |a: f64| {
            let (s, c) = a.sin_cos();
            DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
        };
        let mat = match e.kind {
            BasisKind::Radial => DMatrix::from_element(1, 1, 1.0),
            BasisKind::A => rot((n - m) * phi),
            BasisKind::B => rot((n + m) * phi) * DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            BasisKind::Column(col) => rot(n * phi).columns(col as usize, 1).into_owned(),
            BasisKind::Row(0) => {
                let (s, c) = (m * phi).sin_cos();
                DMatrix::from_row_slice(1, 2, &[c, s])
            }
            BasisKind::Row(_) => {
                let (s, c) = (m * phi).sin_cos();
                DMatrix::from_row_slice(1, 2, &[s, -c])
            }
        };
        mat * g
    }
}

/// Analytic steerable kernels for input frequency `m` and output frequency `n`,
/// sampled on a `size x size` grid centred on the middle pixel.
///
/// Each element satisfies `k(R x) = rho_n(R) k(x) rho_m(R)^-1`. On the ring of
/// radius zero only angular frequency zero is admitted.
pub fn build_kernel_basis(m: u32, n: u32, size: usize, rings: &[f64], sigma: f64) -> Result<KernelBasis> {
    if size % 2 == 0 {
        return Err(Error::InvalidArgument(format!("kernel size must be odd, got {size}")));
    }
    let half = (size / 2) as f64;
    if rings.iter().any(|&r| !(0.0..=half).contains(&r)) {
        return Err(Error::InvalidArgument(format!(
            "ring radii must lie in [0, {half}], got {rings:?}"
        )));
    }
    let shapes: Vec<(BasisKind, u32)> = match (m, n) {
        (0, 0) => vec![(BasisKind::Radial, 0)],
        (0, n) => vec![(BasisKind::Column(0), n), (BasisKind::Column(1), n)],
        (m, 0) => vec![(BasisKind::Row(0), m), (BasisKind::Row(1), m)],
        (m, n) => vec![(BasisKind::A, m.abs_diff(n)), (BasisKind::B, m + n)],
    };
    let mut basis = KernelBasis {
        m,
        n,
        size,
        rings: rings.to_vec(),
        sigma,
        elements: Vec::new(),
    };
    for (ring, &r) in rings.iter().enumerate() {
        for &(kind, mu) in &shapes {
            if r == 0.0 && mu != 0 {
                continue;
            }
            basis.elements.push(BasisElement {
                ring,
                mu,
                kind,
                raster: Vec::new(),
                norm_scale: 1.0,
            });
        }
    }
    let (d_out, d_in) = (basis.d_out(), basis.d_in());
    for idx in 0..basis.elements.len() {
        let mut raster = vec![0.0; d_out * d_in * size * size];
        for row in 0..size {
            for col in 0..size {
                let (x, y) = (col as f64 - half, row as f64 - half);
                let v = basis.evaluate(idx, x, y);
                for o in 0..d_out {
                    for i in 0..d_in {
                        raster[((o * d_in + i) * size + row) * size + col] = v[(o, i)];
                    }
                }
            }
        }
        let norm = raster.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if norm > 1e-12 { 1.0 / norm } else { 1.0 };
        raster.iter_mut().for_each(|v| *v *= scale);
        let e = &mut basis.elements[idx];
        e.raster = raster;
        e.norm_scale = scale;
    }
    Ok(basis)
}
