use std::rc::Rc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::basis::{build_kernel_basis, default_rings, KernelBasis, DEFAULT_SIGMA};
use crate::error::{Error, Result};
use crate::field::FeatureField;
use crate::group::RepSpec;
use crate::tensor::{conv2d, linear_map, matmul, DiffTensor, SparseMap};

/// Summary of one `(input block, output block)` basis, for manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockBasisInfo {
    pub m: u32,
    pub n: u32,
    pub elements: Vec<(usize, u32, super::basis::BasisKind)>,
}

/// Convolution between stacks of steerable feature fields.
///
/// The kernel is a learned linear combination of analytic steerable basis
/// kernels, so its parameter count depends only on the representations,
/// kernel size and widths.
#[derive(Clone, Debug)]
pub struct SteerableConv {
    pub rep_in: RepSpec,
    pub rep_out: RepSpec,
    pub fields_in: usize,
    pub fields_out: usize,
    pub size: usize,
    pub padding: usize,
    /// `[fields_out * fields_in, basis_len]`.
    pub coefficients: DiffTensor,
    /// Basis rasters embedded in the full `d_out x d_in` block layout,
    /// `[basis_len, d_out * d_in * k * k]`.
    embedded: DiffTensor,
    /// Reorders `[ko, ki, do, di, y, x]` into the conv layout.
    to_conv: Rc<SparseMap>,
    pub blocks: Vec<BlockBasisInfo>,
}

impl SteerableConv {
    pub fn new(
        rep_in: RepSpec,
        fields_in: usize,
        rep_out: RepSpec,
        fields_out: usize,
        size: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (Some(bin), Some(bout)) = (rep_in.irrep_blocks(), rep_out.irrep_blocks()) else {
            return Err(Error::RepMismatch(format!(
                "steerable convolution needs irrep-decomposed representations, got {rep_in} -> {rep_out}"
            )));
        };
        let quotient_in = matches!(rep_in, RepSpec::QuotientIrrepSum(_));
        if quotient_in && !matches!(rep_out, RepSpec::QuotientIrrepSum(_)) {
            return Err(Error::RepMismatch(format!(
                "cannot map quotient fields {rep_in} to {rep_out}"
            )));
        }
        let (d_in, d_out) = (rep_in.dim(), rep_out.dim());
        let kk = size * size;
        let rings = default_rings(size);
        let mut embedded = Vec::new();
        let mut blocks = Vec::new();
        let mut count = 0;
        for &(off_out, n) in &bout {
            for &(off_in, m) in &bin {
                let basis: KernelBasis = build_kernel_basis(m, n, size, &rings, DEFAULT_SIGMA)?;
                let (bd_out, bd_in) = (basis.d_out(), basis.d_in());
                for e in &basis.elements {
                    let mut row = vec![0.0; d_out * d_in * kk];
                    for o in 0..bd_out {
                        for i in 0..bd_in {
                            let src = &e.raster[(o * bd_in + i) * kk..(o * bd_in + i + 1) * kk];
                            let dst = ((off_out + o) * d_in + off_in + i) * kk;
                            row[dst..dst + kk].copy_from_slice(src);
                        }
                    }
                    embedded.extend(row);
                    count += 1;
                }
                blocks.push(BlockBasisInfo {
                    m,
                    n,
                    elements: basis.elements.iter().map(|e| (e.ring, e.mu, e.kind)).collect(),
                });
            }
        }
        if count == 0 {
            return Err(Error::InvalidArgument(format!(
                "no admissible steerable kernels for {rep_in} -> {rep_out} at size {size}"
            )));
        }
        let embedded = DiffTensor::constant(&[count, d_out * d_in * kk], embedded)?;

        // Basis kernels have unit norm and spread over `d_out` output rows, so
        // each output channel receives about unit kernel energy.
        let std = (d_out as f64 / (fields_in * count) as f64).sqrt();
        let coeffs: Vec<f64> = (0..fields_out * fields_in * count)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let coefficients = DiffTensor::parameter(&[fields_out * fields_in, count], coeffs)?;

        let (ko, ki) = (fields_out, fields_in);
        let total = ko * ki * d_out * d_in * kk;
        let mut src = vec![None; total];
        for a in 0..ko {
            for b in 0..ki {
                for o in 0..d_out {
                    for i in 0..d_in {
                        for p in 0..kk {
                            let from = (a * ki + b) * d_out * d_in * kk + (o * d_in + i) * kk + p;
                            let to = ((a * d_out + o) * (ki * d_in) + b * d_in + i) * kk + p;
                            src[to] = Some(from);
                        }
                    }
                }
            }
        }
        let to_conv = Rc::new(SparseMap::gather(
            total,
            &[ko * d_out, ki * d_in, size, size],
            &src,
        ));
        Ok(SteerableConv {
            rep_in,
            rep_out,
            fields_in,
            fields_out,
            size,
            padding,
            coefficients,
            embedded,
            to_conv,
            blocks,
        })
    }

    pub fn basis_len(&self) -> usize {
        self.embedded.shape()[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.coefficients.len()
    }

    /// The materialized convolution kernel `[K_out * D_out, K_in * D_in, k, k]`.
    pub fn kernel(&self) -> Result<DiffTensor> {
        let w = matmul(&self.coefficients, &self.embedded)?;
        linear_map(&w, &self.to_conv)
    }

    pub fn forward(&self, field: &FeatureField) -> Result<FeatureField> {
        if field.rep != self.rep_in || field.fields() != self.fields_in {
            return Err(Error::RepMismatch(format!(
                "layer expects {} x {}, got {} x {}",
                self.fields_in,
                self.rep_in,
                field.fields(),
                field.rep
            )));
        }
        let y = conv2d(&field.tensor, &self.kernel()?, self.padding)?;
        FeatureField::new(y, self.rep_out)
    }
}

/// Materialize the layer's kernel and convolve.
pub fn steerable_conv_forward(field: &FeatureField, layer: &SteerableConv) -> Result<FeatureField> {
    layer.forward(field)
}
