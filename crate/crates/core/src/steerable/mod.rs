//! Steerable kernel bases, equivariant layers and network assembly.

mod basis;
mod layer;
mod nonlinearity;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use basis::{build_kernel_basis, default_rings, BasisElement, BasisKind, KernelBasis, DEFAULT_SIGMA};
pub use layer::{steerable_conv_forward, BlockBasisInfo, SteerableConv};
pub use nonlinearity::{default_sample_count, fourier_max_pool, fourier_pointwise_elu, FourierSampler};

use crate::error::{Error, Result};
use crate::field::{group_pool, transform_field, FeatureField, Interpolation};
use crate::group::{GroupElement, RepSpec};
use crate::tensor::{
    add, add_channel_bias, conv2d, elu, max_pool2d, max_pool2d_centered, spatial_mean,
    upsample_bilinear, DiffTensor,
};

/// Declarative description of one layer. Input types are inferred from the
/// preceding layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum LayerSpec {
    /// Steerable convolution with "same" padding unless `padding` is given.
    Conv {
        rep: RepSpec,
        fields: usize,
        size: usize,
        #[serde(default)]
        padding: Option<usize>,
    },
    /// Pointwise ELU, through angular sampling for Fourier fields.
    Elu {
        #[serde(default)]
        samples: Option<usize>,
    },
    /// 2x2 max pooling (even rasters).
    Pool,
    /// 3x3 stride-2 max pooling centred on even indices (odd rasters).
    PoolCentered,
    /// Bilinear x2 upsampling.
    Upsample,
    /// `x + body(x)`; also realizes U-Net skips when the body contains a
    /// pool/upsample pair.
    Residual { body: Vec<LayerSpec> },
    /// Keep the frequency-zero channel of every Fourier field.
    GroupPool,
    /// Plain 1x1 convolution with bias on trivial fields.
    PointConv { channels: usize },
    /// Average over the raster.
    SpatialMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_rep: RepSpec,
    pub input_fields: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Debug)]
enum Layer {
    Conv(SteerableConv),
    Elu(Option<FourierSampler>),
    Pool(Option<FourierSampler>),
    PoolCentered(Option<FourierSampler>),
    Upsample,
    Residual(Vec<Layer>),
    GroupPool,
    PointConv { weight: DiffTensor, bias: DiffTensor },
    SpatialMean,
}

/// A callable stack of layers mapping feature fields to feature fields.
#[derive(Clone, Debug)]
pub struct Network {
    pub spec: NetworkSpec,
    pub output_rep: RepSpec,
    pub output_fields: usize,
    layers: Vec<Layer>,
}

fn sampler_for(rep: RepSpec, samples: Option<usize>) -> Result<Option<FourierSampler>> {
    match rep {
        RepSpec::Trivial | RepSpec::Regular(_) => Ok(None),
        r if r.is_fourier() => FourierSampler::new(r, samples).map(Some),
        r => Err(Error::RepMismatch(format!(
            "no pointwise nonlinearity for {r}"
        ))),
    }
}

fn build_layers(
    specs: &[LayerSpec],
    mut rep: RepSpec,
    mut fields: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<Layer>, RepSpec, usize)> {
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let layer = match spec {
            LayerSpec::Conv { rep: r, fields: f, size, padding } => {
                let conv = SteerableConv::new(rep, fields, *r, *f, *size, padding.unwrap_or(size / 2), rng)?;
                rep = *r;
                fields = *f;
                Layer::Conv(conv)
            }
            LayerSpec::Elu { samples } => Layer::Elu(sampler_for(rep, *samples)?),
            LayerSpec::Pool => Layer::Pool(sampler_for(rep, None)?),
            LayerSpec::PoolCentered => Layer::PoolCentered(sampler_for(rep, None)?),
            LayerSpec::Upsample => Layer::Upsample,
            LayerSpec::Residual { body } => {
                let (layers, r, f) = build_layers(body, rep, fields, rng)?;
                if r != rep || f != fields {
                    return Err(Error::RepMismatch(format!(
                        "residual body maps {fields} x {rep} to {f} x {r}"
                    )));
                }
                Layer::Residual(layers)
            }
            LayerSpec::GroupPool => {
                if !rep.is_fourier() {
                    return Err(Error::RepMismatch(format!("cannot group-pool {rep}")));
                }
                rep = RepSpec::Trivial;
                Layer::GroupPool
            }
            LayerSpec::PointConv { channels } => {
                if rep != RepSpec::Trivial {
                    return Err(Error::RepMismatch(format!(
                        "plain 1x1 convolution needs trivial fields, got {rep}"
                    )));
                }
                let std = (2.0 / fields as f64).sqrt();
                let w: Vec<f64> = (0..channels * fields)
                    .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let weight = DiffTensor::parameter(&[*channels, fields, 1, 1], w)?;
                let bias = DiffTensor::parameter(&[*channels], vec![0.0; *channels])?;
                fields = *channels;
                Layer::PointConv { weight, bias }
            }
            LayerSpec::SpatialMean => Layer::SpatialMean,
        };
        out.push(layer);
    }
    Ok((out, rep, fields))
}

fn pool_with(
    field: &FeatureField,
    sampler: &Option<FourierSampler>,
    centered: bool,
) -> Result<FeatureField> {
    match sampler {
        Some(s) => fourier_max_pool(field, s, centered),
        None => {
            let t = if centered {
                max_pool2d_centered(&field.tensor)?
            } else {
                max_pool2d(&field.tensor, 2)?
            };
            FeatureField::new(t, field.rep)
        }
    }
}

fn run_layers(layers: &[Layer], mut x: FeatureField) -> Result<FeatureField> {
    for layer in layers {
        x = match layer {
            Layer::Conv(c) => c.forward(&x)?,
            Layer::Elu(Some(s)) => fourier_pointwise_elu(&x, s)?,
            Layer::Elu(None) => FeatureField::new(elu(&x.tensor), x.rep)?,
            Layer::Pool(s) => pool_with(&x, s, false)?,
            Layer::PoolCentered(s) => pool_with(&x, s, true)?,
            Layer::Upsample => FeatureField::new(upsample_bilinear(&x.tensor, 2)?, x.rep)?,
            Layer::Residual(body) => {
                let y = run_layers(body, x.clone())?;
                FeatureField::new(add(&x.tensor, &y.tensor)?, x.rep)?
            }
            Layer::GroupPool => group_pool(&x)?,
            Layer::PointConv { weight, bias } => {
                let y = conv2d(&x.tensor, weight, 0)?;
                FeatureField::new(add_channel_bias(&y, bias)?, x.rep)?
            }
            Layer::SpatialMean => FeatureField::new(spatial_mean(&x.tensor)?, x.rep)?,
        };
    }
    Ok(x)
}

fn collect_params(layers: &[Layer], out: &mut Vec<DiffTensor>) {
    for layer in layers {
        match layer {
            Layer::Conv(c) => out.push(c.coefficients.clone()),
            Layer::Residual(body) => collect_params(body, out),
            Layer::PointConv { weight, bias } => {
                out.push(weight.clone());
                out.push(bias.clone());
            }
            _ => {}
        }
    }
}

fn take_param(it: &mut impl Iterator<Item = DiffTensor>, old: &DiffTensor) -> Result<DiffTensor> {
    let new = it
        .next()
        .ok_or_else(|| Error::Shape("too few parameters supplied".into()))?;
    if new.shape() != old.shape() {
        return Err(Error::Shape(format!(
            "parameter shape {:?} does not match {:?}",
            new.shape(),
            old.shape()
        )));
    }
    Ok(new)
}

fn replace_params(layers: &mut [Layer], it: &mut impl Iterator<Item = DiffTensor>) -> Result<()> {
    for layer in layers.iter_mut() {
        match layer {
            Layer::Conv(c) => c.coefficients = take_param(it, &c.coefficients)?,
            Layer::Residual(body) => replace_params(body, it)?,
            Layer::PointConv { weight, bias } => {
                *weight = take_param(it, weight)?;
                *bias = take_param(it, bias)?;
            }
            _ => {}
        }
    }
    Ok(())
}

fn describe(layers: &[Layer], out: &mut Vec<SteerableConv>) {
    for layer in layers {
        match layer {
            Layer::Conv(c) => out.push(c.clone()),
            Layer::Residual(body) => describe(body, out),
            _ => {}
        }
    }
}

/// Build a network from its description, drawing initial weights from `rng`.
pub fn assemble_network(spec: &NetworkSpec, rng: &mut impl Rng) -> Result<Network> {
    let (layers, output_rep, output_fields) = build_layers(&spec.layers, spec.input_rep, spec.input_fields, rng)?;
    Ok(Network {
        spec: spec.clone(),
        output_rep,
        output_fields,
        layers,
    })
}

impl Network {
    pub fn forward(&self, input: &FeatureField) -> Result<FeatureField> {
        if input.rep != self.spec.input_rep || input.fields() != self.spec.input_fields {
            return Err(Error::RepMismatch(format!(
                "network expects {} x {}, got {} x {}",
                self.spec.input_fields,
                self.spec.input_rep,
                input.fields(),
                input.rep
            )));
        }
        run_layers(&self.layers, input.clone())
    }

    /// Trainable tensors in a fixed traversal order.
    pub fn parameters(&self) -> Vec<DiffTensor> {
        let mut out = Vec::new();
        collect_params(&self.layers, &mut out);
        out
    }

    pub fn set_parameters(&mut self, params: Vec<DiffTensor>) -> Result<()> {
        let mut it = params.into_iter();
        replace_params(&mut self.layers, &mut it)?;
        if it.next().is_some() {
            return Err(Error::Shape("too many parameters supplied".into()));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// The steerable convolutions in traversal order.
    pub fn conv_layers(&self) -> Vec<SteerableConv> {
        let mut out = Vec::new();
        describe(&self.layers, &mut out);
        out
    }
}

/// `max |net(T_g x) - T_g net(x)|`, with each side transformed by its own
/// representation. Spatially collapsed outputs are compared without
/// spatial resampling.
pub fn equivariance_residual(
    net: &Network,
    input: &FeatureField,
    g: &GroupElement,
    method: Interpolation,
) -> Result<f64> {
    let a = net.forward(&transform_field(input, g, method)?)?;
    let b = transform_field(&net.forward(input)?, g, method)?;
    Ok(a
        .tensor
        .data()
        .iter()
        .zip(b.tensor.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}
