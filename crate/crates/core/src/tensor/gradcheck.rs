//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{no_grad, DiffTensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Denominator floor of the relative error, so that near-zero gradients
    /// are compared absolutely.
    pub floor: f64,
    /// Probe at most this many coordinates per input (sampled without
    /// replacement); `None` probes every coordinate.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            floor: 1e-5,
            max_coords: Some(64),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(input index, coordinate)` of the worst probe.
    pub worst: (usize, usize),
    pub probes: usize,
}

/// Compare the analytic gradient of the scalar `f(inputs)` against central
/// differences with respect to every input.
pub fn check_gradients<F>(f: F, inputs: &[DiffTensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&[DiffTensor]) -> Result<DiffTensor>,
{
    let params: Vec<DiffTensor> = inputs.iter().map(|t| t.to_parameter()).collect();
    let loss = f(&params)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        probes: 0,
    };
    for (ti, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < input.len() => sample(&mut rng, input.len(), k).into_vec(),
            _ => (0..input.len()).collect(),
        };
        for j in coords {
            let eval = |delta: f64| -> Result<f64> {
                let mut data = input.data().to_vec();
                data[j] += delta;
                let mut probe = inputs.to_vec();
                probe[ti] = DiffTensor::constant(input.shape(), data)?;
                let y = no_grad(|| f(&probe))?;
                if y.len() != 1 {
                    return Err(Error::Shape("gradient check needs a scalar function".into()));
                }
                Ok(y.item())
            };
            let numeric = (eval(opts.step)? - eval(-opts.step)?) / (2.0 * opts.step);
            let a = analytic[ti][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.probes += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = (ti, j);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{mul, sum};

    #[test]
    fn cubic_passes() {
        let x = DiffTensor::constant(&[4], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let r = check_gradients(
            |p| Ok(sum(&mul(&mul(&p[0], &p[0])?, &p[0])?)),
            &[x],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-6);
        assert_eq!(r.probes, 4);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // detach() hides the dependency of the second factor from backward
        let x = DiffTensor::constant(&[2], vec![1.0, 2.0]).unwrap();
        let r = check_gradients(
            |p| Ok(sum(&mul(&p[0], &p[0].detach())?)),
            &[x],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_relative_error > 0.4);
    }
}
