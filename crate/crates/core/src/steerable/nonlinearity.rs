use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::field::FeatureField;
use crate::group::{discretization_matrix, RepSpec};
use crate::tensor::{elu, max_pool2d, max_pool2d_centered, mix_channels, DiffTensor};

/// Smallest sample count that is a multiple of 4 and at least twice the
/// number of Fourier coefficients.
pub fn default_sample_count(jc: u32) -> usize {
    let min = 2 * (1 + 2 * jc as usize);
    min.div_ceil(4) * 4
}

/// Sampling and fitting matrices for a Fourier field with `samples` angles.
/// Quotient fields are handled in their doubled angle, where they are
/// ordinary band-limited signals.
#[derive(Clone, Debug)]
pub struct FourierSampler {
    pub rep: RepSpec,
    pub samples: usize,
    sample: DMatrix<f64>,
    fit: DMatrix<f64>,
}

impl FourierSampler {
    pub fn new(rep: RepSpec, samples: Option<usize>) -> Result<Self> {
        let jc = rep.max_frequency().ok_or_else(|| {
            Error::RepMismatch(format!("Fourier sampling needs an irrep sum, got {rep}"))
        })?;
        let s = samples.unwrap_or_else(|| default_sample_count(jc));
        if s < 2 * (1 + 2 * jc as usize) || s % 4 != 0 {
            return Err(Error::Aliasing {
                samples: s,
                coefficients: 1 + 2 * jc as usize,
            });
        }
        let q = discretization_matrix(s, jc, false)?;
        Ok(FourierSampler {
            rep,
            samples: s,
            sample: q.matrix().clone(),
            fit: q.fit_matrix(),
        })
    }

    /// `[K * D, H, W] -> [K * S, H, W]`.
    pub fn to_samples(&self, x: &DiffTensor, fields: usize) -> Result<DiffTensor> {
        mix_channels(x, fields, &self.sample)
    }

    /// `[K * S, H, W] -> [K * D, H, W]`.
    pub fn to_coefficients(&self, x: &DiffTensor, fields: usize) -> Result<DiffTensor> {
        mix_channels(x, fields, &self.fit)
    }
}

fn check_rep(field: &FeatureField, sampler: &FourierSampler) -> Result<()> {
    if field.rep != sampler.rep {
        return Err(Error::RepMismatch(format!(
            "nonlinearity built for {}, got {}",
            sampler.rep, field.rep
        )));
    }
    Ok(())
}

/// ELU applied to the signal sampled at `S` angles, then projected back to
/// Fourier coefficients. Commutes exactly with rotations in C_S.
pub fn fourier_pointwise_elu(field: &FeatureField, sampler: &FourierSampler) -> Result<FeatureField> {
    check_rep(field, sampler)?;
    let k = field.fields();
    let s = sampler.to_samples(&field.tensor, k)?;
    let y = sampler.to_coefficients(&elu(&s), k)?;
    FeatureField::new(y, field.rep)
}

/// Spatial max pooling of the sampled signal, fitted back to coefficients.
/// `centered` selects the 3x3 stride-2 pool for odd rasters.
pub fn fourier_max_pool(field: &FeatureField, sampler: &FourierSampler, centered: bool) -> Result<FeatureField> {
    check_rep(field, sampler)?;
    let k = field.fields();
    let s = sampler.to_samples(&field.tensor, k)?;
    let pooled = if centered {
        max_pool2d_centered(&s)?
    } else {
        max_pool2d(&s, 2)?
    };
    FeatureField::new(sampler.to_coefficients(&pooled, k)?, field.rep)
}
