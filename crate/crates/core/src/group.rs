//! Planar rotation groups and their real representations.
//!
//! Three groups appear throughout the crate: the continuous rotation group
//! SO(2), its cyclic subgroups C_N, and the quotient SO(2)/C_2 used for the
//! parallel-jaw gripper. The quotient is realized in the doubled angle
//! `alpha = 2 * theta`, so every quotient representation is an ordinary SO(2)
//! representation evaluated at twice the rotation angle.
//!
//! Fourier coefficient vectors always use the channel order
//! `[a_0, a_1, b_1, a_2, b_2, ..., a_jc, b_jc]`.

use std::f64::consts::{PI, TAU};
use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Which group a representation (or element) lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupTag {
    So2,
    Cyclic(usize),
    So2ModC2,
}

/// An element of SO(2), C_N or SO(2)/C_2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GroupElement {
    /// Continuous rotation, angle normalized to `[0, 2pi)`.
    Rotation(f64),
    /// The `index`-th element of C_`order`, i.e. rotation by `2 pi index / order`.
    Cyclic { index: usize, order: usize },
    /// Rotation modulo pi, angle normalized to `[0, pi)`.
    Quotient(f64),
}

fn wrap(angle: f64, period: f64) -> f64 {
    let a = angle.rem_euclid(period);
    // rem_euclid can return `period` itself for tiny negative inputs
    if a >= period {
        0.0
    } else {
        a
    }
}

impl GroupElement {
    pub fn rotation(angle: f64) -> Self {
        GroupElement::Rotation(wrap(angle, TAU))
    }

    pub fn cyclic(index: usize, order: usize) -> Self {
        assert!(order > 0, "cyclic group order must be positive");
        GroupElement::Cyclic {
            index: index % order,
            order,
        }
    }

    pub fn quotient(angle: f64) -> Self {
        GroupElement::Quotient(wrap(angle, PI))
    }

    pub fn identity() -> Self {
        GroupElement::Rotation(0.0)
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        match *self {
            GroupElement::Rotation(a) | GroupElement::Quotient(a) => a,
            GroupElement::Cyclic { index, order } => TAU * index as f64 / order as f64,
        }
    }

    pub fn period(&self) -> f64 {
        match self {
            GroupElement::Quotient(_) => PI,
            _ => TAU,
        }
    }

    pub fn is_identity(&self) -> bool {
        match *self {
            GroupElement::Cyclic { index, .. } => index == 0,
            GroupElement::Rotation(a) | GroupElement::Quotient(a) => a == 0.0,
        }
    }

    /// Group product `self * other`.
    pub fn compose(&self, other: &GroupElement) -> Result<GroupElement> {
        use GroupElement::*;
        match (*self, *other) {
            (Cyclic { index: i, order: n }, Cyclic { index: j, order: m }) => {
                if n != m {
                    return Err(Error::InvalidArgument(format!(
                        "cannot compose elements of C_{n} and C_{m}"
                    )));
                }
                Ok(GroupElement::cyclic(i + j, n))
            }
            (Quotient(a), Quotient(b)) => Ok(GroupElement::quotient(a + b)),
            (Quotient(_), _) | (_, Quotient(_)) => Err(Error::InvalidArgument(
                "cannot compose a quotient element with a full-group element".into(),
            )),
            (a, b) => Ok(GroupElement::rotation(a.angle() + b.angle())),
        }
    }

    pub fn inverse(&self) -> GroupElement {
        match *self {
            GroupElement::Rotation(a) => GroupElement::rotation(-a),
            GroupElement::Quotient(a) => GroupElement::quotient(-a),
            GroupElement::Cyclic { index, order } => GroupElement::cyclic(order - index, order),
        }
    }

    /// Reinterpret the element as a member of C_`order` if its angle is an
    /// exact multiple of `2 pi / order`.
    pub fn as_cyclic(&self, order: usize) -> Option<GroupElement> {
        if let GroupElement::Cyclic { index, order: n } = *self {
            if (index * order) % n == 0 {
                return Some(GroupElement::cyclic(index * order / n, order));
            }
            return None;
        }
        let steps = self.angle() * order as f64 / TAU;
        let k = steps.round();
        if (steps - k).abs() < 1e-9 {
            Some(GroupElement::cyclic(k as usize, order))
        } else {
            None
        }
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupElement::Rotation(a) => write!(f, "Rot({a:.6})"),
            GroupElement::Quotient(a) => write!(f, "Rot({a:.6}) mod pi"),
            GroupElement::Cyclic { index, order } => write!(f, "C_{order}[{index}]"),
        }
    }
}

/// A real representation of one of the rotation groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepSpec {
    /// rho_0: leaves scalars unchanged.
    Trivial,
    /// rho_1: the 2x2 rotation matrix.
    Standard,
    /// rho_j, the frequency-j irrep (1-dimensional for j = 0).
    Irrep(u32),
    /// rho_0 + rho_1 + ... + rho_jc.
    IrrepSum(u32),
    /// Cyclic permutation representation of C_N.
    Regular(usize),
    /// rho_0 + ... + rho_jc of SO(2)/C_2, in the doubled angle.
    QuotientIrrepSum(u32),
}

impl RepSpec {
    pub fn dim(&self) -> usize {
        match *self {
            RepSpec::Trivial => 1,
            RepSpec::Standard => 2,
            RepSpec::Irrep(0) => 1,
            RepSpec::Irrep(_) => 2,
            RepSpec::IrrepSum(jc) | RepSpec::QuotientIrrepSum(jc) => 1 + 2 * jc as usize,
            RepSpec::Regular(n) => n,
        }
    }

    pub fn group(&self) -> GroupTag {
        match *self {
            RepSpec::Regular(n) => GroupTag::Cyclic(n),
            RepSpec::QuotientIrrepSum(_) => GroupTag::So2ModC2,
            _ => GroupTag::So2,
        }
    }

    /// Decomposition into irreducible blocks, as `(offset, theta-frequency)`
    /// pairs. The block dimension is 1 for frequency 0 and 2 otherwise.
    /// Quotient frequencies are reported in the rotation angle, i.e. doubled.
    /// Returns `None` for the regular representation.
    pub fn irrep_blocks(&self) -> Option<Vec<(usize, u32)>> {
        let freqs: Vec<u32> = match *self {
            RepSpec::Trivial => vec![0],
            RepSpec::Standard => vec![1],
            RepSpec::Irrep(j) => vec![j],
            RepSpec::IrrepSum(jc) => (0..=jc).collect(),
            RepSpec::QuotientIrrepSum(jc) => (0..=jc).map(|j| 2 * j).collect(),
            RepSpec::Regular(_) => return None,
        };
        let mut offset = 0;
        let mut blocks = Vec::with_capacity(freqs.len());
        for f in freqs {
            blocks.push((offset, f));
            offset += if f == 0 { 1 } else { 2 };
        }
        Some(blocks)
    }

    /// True for the Fourier-coefficient representations that carry an `a_0` channel.
    pub fn is_fourier(&self) -> bool {
        matches!(self, RepSpec::IrrepSum(_) | RepSpec::QuotientIrrepSum(_))
    }

    /// Cut-off frequency of a Fourier representation.
    pub fn max_frequency(&self) -> Option<u32> {
        match *self {
            RepSpec::IrrepSum(jc) | RepSpec::QuotientIrrepSum(jc) => Some(jc),
            _ => None,
        }
    }
}

impl fmt::Display for RepSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RepSpec::Trivial => write!(f, "trivial"),
            RepSpec::Standard => write!(f, "standard"),
            RepSpec::Irrep(j) => write!(f, "irrep({j})"),
            RepSpec::IrrepSum(j) => write!(f, "irrep_sum({j})"),
            RepSpec::Regular(n) => write!(f, "regular({n})"),
            RepSpec::QuotientIrrepSum(j) => write!(f, "quotient_irrep_sum({j})"),
        }
    }
}

/// The 2x2 rotation matrix entries `(cos a, sin a)` laid out as `[[c, -s], [s, c]]`.
pub fn rotation_2x2(angle: f64) -> [[f64; 2]; 2] {
    let (s, c) = angle.sin_cos();
    [[c, -s], [s, c]]
}

fn irrep_block_matrix(blocks: &[(usize, u32)], dim: usize, angle: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    for &(off, freq) in blocks {
        if freq == 0 {
            m[(off, off)] = 1.0;
        } else {
            let r = rotation_2x2(freq as f64 * angle);
            for i in 0..2 {
                for j in 0..2 {
                    m[(off + i, off + j)] = r[i][j];
                }
            }
        }
    }
    m
}

/// Cyclic permutation sending `(v_0, ..., v_{N-1})` to
/// `(v_{N-i}, ..., v_{N-1}, v_0, ..., v_{N-1-i})`.
pub fn regular_permutation(order: usize, index: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(order, order);
    for k in 0..order {
        m[(k, (k + order - index % order) % order)] = 1.0;
    }
    m
}

/// Matrix `rho(g)` of size `dim(rep)`.
pub fn rep_matrix(rep: RepSpec, g: &GroupElement) -> Result<DMatrix<f64>> {
    let incompatible = || Error::IncompatibleElement {
        element: g.to_string(),
        rep: rep.to_string(),
    };
    match rep {
        RepSpec::Regular(n) => match *g {
            GroupElement::Cyclic { index, order } if order == n => {
                Ok(regular_permutation(n, index))
            }
            _ => Err(incompatible()),
        },
        RepSpec::QuotientIrrepSum(_) => {
            // any rotation acts on SO(2)/C_2 through its class mod pi
            let angle = g.angle().rem_euclid(PI);
            let blocks = rep.irrep_blocks().expect("fourier rep");
            Ok(irrep_block_matrix(&blocks, rep.dim(), angle))
        }
        _ => {
            if matches!(g, GroupElement::Quotient(_)) && rep != RepSpec::Trivial {
                // a class mod pi does not determine rho_j for odd j
                if rep
                    .irrep_blocks()
                    .map(|b| b.iter().any(|&(_, f)| f % 2 == 1))
                    .unwrap_or(true)
                {
                    return Err(incompatible());
                }
            }
            let blocks = rep.irrep_blocks().expect("non-regular rep");
            Ok(irrep_block_matrix(&blocks, rep.dim(), g.angle()))
        }
    }
}

/// Change of basis from Fourier coefficients to samples on a cyclic group.
#[derive(Clone, Debug)]
pub struct DiscretizationMatrix {
    matrix: DMatrix<f64>,
    samples: usize,
    max_frequency: u32,
    quotient: bool,
}

impl DiscretizationMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Number of rows (sampled angles). Equals `N` for the full group and
    /// `N / 2` for the quotient.
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// The `N` this matrix was built for.
    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn max_frequency(&self) -> u32 {
        self.max_frequency
    }

    pub fn is_quotient(&self) -> bool {
        self.quotient
    }

    /// Evaluate the band-limited signal at every sampled angle.
    pub fn discretize(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.matrix.ncols() {
            return Err(Error::Shape(format!(
                "expected {} coefficients, got {}",
                self.matrix.ncols(),
                coeffs.len()
            )));
        }
        Ok((0..self.rows())
            .map(|i| (0..coeffs.len()).map(|j| self.matrix[(i, j)] * coeffs[j]).sum())
            .collect())
    }

    /// Least-squares inverse `D Q^T samples` with `D = diag(1/R, 2/R, ...)`, `R` the row count.
    pub fn fit(&self, samples: &[f64]) -> Result<Vec<f64>> {
        if samples.len() != self.rows() {
            return Err(Error::Shape(format!(
                "expected {} samples, got {}",
                self.rows(),
                samples.len()
            )));
        }
        if self.rows() < self.matrix.ncols() {
            return Err(Error::Aliasing {
                samples: self.rows(),
                coefficients: self.matrix.ncols(),
            });
        }
        Ok(self.fit_matrix().iter_rows_as_vec(samples))
    }

    /// The matrix `D Q^T` of shape `(1 + 2 jc) x R`.
    pub fn fit_matrix(&self) -> DMatrix<f64> {
        let rows = self.rows() as f64;
        let mut m = self.matrix.transpose();
        for j in 0..m.nrows() {
            let w = if j == 0 { 1.0 / rows } else { 2.0 / rows };
            m.row_mut(j).scale_mut(w);
        }
        m
    }
}

trait MatVec {
    fn iter_rows_as_vec(&self, v: &[f64]) -> Vec<f64>;
}

impl MatVec for DMatrix<f64> {
    fn iter_rows_as_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.nrows())
            .map(|i| (0..self.ncols()).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }
}

/// Sampling matrix `Q` for `N` orientations and cut-off `jc`.
///
/// Full group: row `i` is `[1, cos g_i, sin g_i, ..., cos jc g_i, sin jc g_i]`
/// with `g_i = 2 pi i / N`. Quotient: `N / 2` rows at `theta_i = 2 pi i / N`
/// in `[0, pi)`, evaluated in `alpha = 2 theta_i`.
pub fn discretization_matrix(n: usize, jc: u32, quotient: bool) -> Result<DiscretizationMatrix> {
    let coefficients = 1 + 2 * jc as usize;
    let rows = if quotient {
        if n % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "quotient discretization needs an even N, got {n}"
            )));
        }
        n / 2
    } else {
        n
    };
    // The quotient variant may have fewer rows than coefficients; it can then
    // sample but not be inverted (see `fit`).
    if n < coefficients || rows == 0 {
        return Err(Error::Aliasing {
            samples: n,
            coefficients,
        });
    }
    let mut m = DMatrix::zeros(rows, coefficients);
    for i in 0..rows {
        let base = TAU * i as f64 / n as f64;
        let angle = if quotient { 2.0 * base } else { base };
        m[(i, 0)] = 1.0;
        for j in 1..=jc as usize {
            let (s, c) = (j as f64 * angle).sin_cos();
            m[(i, 2 * j - 1)] = c;
            m[(i, 2 * j)] = s;
        }
    }
    Ok(DiscretizationMatrix {
        matrix: m,
        samples: n,
        max_frequency: jc,
        quotient,
    })
}

/// Recover Fourier coefficients from `N` uniform samples on C_N.
pub fn fit_coefficients(samples: &[f64], n: usize, jc: u32) -> Result<Vec<f64>> {
    if samples.len() != n {
        return Err(Error::Shape(format!(
            "expected {n} samples, got {}",
            samples.len()
        )));
    }
    discretization_matrix(n, jc, false)?.fit(samples)
}
