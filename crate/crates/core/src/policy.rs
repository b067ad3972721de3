//! Pick-position, pick-angle and place models and greedy action selection.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::Action;
use crate::eoh::{alignment_map, generate_eoh, orientation_logits, spatial_alignment_map};
use crate::error::{shape_err, Error, Result};
use crate::field::{FeatureField, Interpolation};
use crate::group::RepSpec;
use crate::steerable::{assemble_network, LayerSpec, Network, NetworkSpec};
use crate::tensor::{correlate_fft, linear_map, reshape, softmax, DiffTensor, SparseMap};

/// Local descriptor used by the place model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Descriptor {
    /// Orientation histograms, aligned by rotating space and bins.
    #[default]
    Eoh,
    /// Rotation-invariant (group-pooled) features, aligned by rotating space only.
    Invariant,
}

/// Hyperparameters of the three models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub height: usize,
    pub width: usize,
    /// Observation channels.
    pub channels: usize,
    /// Orientation bins of place actions; pick angles use `n / 2` bins on `[0, pi)`.
    pub n: usize,
    /// Bins kept on the scene side of the place model.
    pub m: usize,
    pub pick_crop: usize,
    pub place_crop: usize,
    pub descriptor: Descriptor,
    pub kernel_size: usize,
    pub pick_fields: usize,
    pub pick_frequency: u32,
    pub pick_hidden: usize,
    pub angle_fields: usize,
    pub angle_frequency: u32,
    pub angle_head_frequency: u32,
    pub place_fields: usize,
    pub place_frequency: u32,
    pub place_layers: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            height: 64,
            width: 64,
            channels: 1,
            n: 36,
            m: 12,
            pick_crop: 25,
            place_crop: 25,
            descriptor: Descriptor::Eoh,
            kernel_size: 5,
            pick_fields: 4,
            pick_frequency: 3,
            pick_hidden: 8,
            angle_fields: 2,
            angle_frequency: 6,
            angle_head_frequency: 6,
            place_fields: 2,
            place_frequency: 3,
            place_layers: 4,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.m == 0 || self.n % self.m != 0 {
            return bad(format!("M = {} must divide N = {}", self.m, self.n));
        }
        if self.n % 2 != 0 {
            return bad(format!("N = {} must be even for the gripper bins", self.n));
        }
        let coeffs = 1 + 2 * self.place_frequency as usize;
        if self.m < coeffs {
            return Err(Error::Aliasing {
                samples: self.m,
                coefficients: coeffs,
            });
        }
        if self.n / 2 < 1 + 2 * self.angle_head_frequency as usize {
            return Err(Error::Aliasing {
                samples: self.n / 2,
                coefficients: 1 + 2 * self.angle_head_frequency as usize,
            });
        }
        if self.pick_crop % 2 == 0 || self.place_crop % 2 == 0 {
            return bad("crop sides must be odd".into());
        }
        if self.height % 4 != 0 || self.width % 4 != 0 {
            return bad("observation sides must be divisible by 4".into());
        }
        if self.kernel_size % 2 == 0 {
            return bad("kernel size must be odd".into());
        }
        Ok(())
    }

    /// Padding applied to the scene before place matching.
    pub fn place_padding(&self) -> usize {
        (self.place_crop - 1) / 2
    }

    fn conv(&self, rep: RepSpec, fields: usize) -> LayerSpec {
        LayerSpec::Conv {
            rep,
            fields,
            size: self.kernel_size,
            padding: None,
        }
    }

    fn res_block(&self, rep: RepSpec, fields: usize) -> LayerSpec {
        LayerSpec::Residual {
            body: vec![self.conv(rep, fields), LayerSpec::Elu { samples: None }, self.conv(rep, fields)],
        }
    }

    /// U-Net with two pooling stages and three residual blocks, group-pooled
    /// and followed by two plain 1x1 convolutions.
    pub fn pick_network(&self) -> NetworkSpec {
        let rep = RepSpec::IrrepSum(self.pick_frequency);
        let k = self.pick_fields;
        let elu = || LayerSpec::Elu { samples: None };
        let inner = vec![
            LayerSpec::Pool,
            self.conv(rep, k),
            elu(),
            self.res_block(rep, k),
            elu(),
            self.res_block(rep, k),
            elu(),
            LayerSpec::Upsample,
        ];
        let middle = vec![
            LayerSpec::Pool,
            self.conv(rep, k),
            elu(),
            LayerSpec::Residual { body: inner },
            self.res_block(rep, k),
            elu(),
            LayerSpec::Upsample,
        ];
        NetworkSpec {
            input_rep: RepSpec::Trivial,
            input_fields: self.channels,
            layers: vec![
                self.conv(rep, k),
                elu(),
                LayerSpec::Residual { body: middle },
                self.conv(rep, k),
                elu(),
                LayerSpec::GroupPool,
                LayerSpec::PointConv { channels: self.pick_hidden },
                elu(),
                LayerSpec::PointConv { channels: 1 },
            ],
        }
    }

    /// Five convolutions with two centred pools, ending in one quotient
    /// Fourier field averaged over the crop.
    pub fn angle_network(&self) -> NetworkSpec {
        let rep = RepSpec::IrrepSum(self.angle_frequency);
        let k = self.angle_fields;
        let elu = || LayerSpec::Elu { samples: None };
        NetworkSpec {
            input_rep: RepSpec::Trivial,
            input_fields: self.channels,
            layers: vec![
                self.conv(rep, k),
                elu(),
                self.conv(rep, k),
                elu(),
                LayerSpec::PoolCentered,
                self.conv(rep, k),
                elu(),
                self.conv(rep, k),
                elu(),
                LayerSpec::PoolCentered,
                self.conv(RepSpec::QuotientIrrepSum(self.angle_head_frequency), 1),
                LayerSpec::SpatialMean,
            ],
        }
    }

    /// Stride-one encoder for place descriptors.
    pub fn place_network(&self) -> NetworkSpec {
        let rep = RepSpec::IrrepSum(self.place_frequency);
        let mut layers = Vec::new();
        for _ in 0..self.place_layers.saturating_sub(1) {
            layers.push(self.conv(rep, self.place_fields));
            layers.push(LayerSpec::Elu { samples: None });
        }
        match self.descriptor {
            Descriptor::Eoh => layers.push(self.conv(rep, 1)),
            Descriptor::Invariant => {
                layers.push(self.conv(RepSpec::Trivial, self.m));
            }
        }
        NetworkSpec {
            input_rep: RepSpec::Trivial,
            input_fields: self.channels,
            layers,
        }
    }
}

/// The trained models of a policy.
#[derive(Clone, Debug)]
pub struct PolicyBundle {
    pub config: PolicyConfig,
    pub pick_net: Network,
    pub angle_net: Network,
    pub scene_net: Network,
    pub crop_net: Network,
    align: Rc<SparseMap>,
}

/// Index of the first maximum.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Zero-pad a `[C, H, W]` tensor by `p` on every side.
pub fn pad(x: &DiffTensor, p: usize) -> Result<DiffTensor> {
    let &[c, h, w] = x.shape() else {
        return shape_err(format!("pad needs [C, H, W], got {:?}", x.shape()));
    };
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let src: Vec<Option<usize>> = (0..c * hp * wp)
        .map(|i| {
            let (ch, r, col) = (i / (hp * wp), (i / wp) % hp, i % wp);
            (r >= p && r < h + p && col >= p && col < w + p).then(|| (ch * h + r - p) * w + col - p)
        })
        .collect();
    linear_map(x, &Rc::new(SparseMap::gather(x.len(), &[c, hp, wp], &src)))
}

/// Odd `size x size` window of `obs` centred on `(u, v)`, zero outside.
pub fn crop(obs: &DiffTensor, u: usize, v: usize, size: usize) -> Result<DiffTensor> {
    let &[c, h, w] = obs.shape() else {
        return shape_err(format!("crop needs [C, H, W], got {:?}", obs.shape()));
    };
    if size % 2 == 0 {
        return shape_err(format!("crop side must be odd, got {size}"));
    }
    let half = (size / 2) as i64;
    let mut data = vec![0.0; c * size * size];
    for ch in 0..c {
        for r in 0..size {
            let sr = u as i64 + r as i64 - half;
            if sr < 0 || sr >= h as i64 {
                continue;
            }
            for col in 0..size {
                let sc = v as i64 + col as i64 - half;
                if sc < 0 || sc >= w as i64 {
                    continue;
                }
                data[(ch * size + r) * size + col] = obs.data()[(ch * h + sr as usize) * w + sc as usize];
            }
        }
    }
    DiffTensor::constant(&[c, size, size], data)
}

fn trivial(x: &DiffTensor) -> Result<FeatureField> {
    FeatureField::new(x.clone(), RepSpec::Trivial)
}

impl PolicyBundle {
    pub fn new(config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pick_net = assemble_network(&config.pick_network(), &mut rng)?;
        // zero final weights: the pick map starts uniform over the raster
        let mut params = pick_net.parameters();
        let k = params.len() - 2;
        params[k] = DiffTensor::parameter(params[k].shape(), vec![0.0; params[k].len()])?;
        pick_net.set_parameters(params)?;
        let angle_net = assemble_network(&config.angle_network(), &mut rng)?;
        let scene_net = assemble_network(&config.place_network(), &mut rng)?;
        let crop_net = assemble_network(&config.place_network(), &mut rng)?;
        let h = config.place_crop;
        let align = match config.descriptor {
            Descriptor::Eoh => alignment_map(config.n, config.m, h, h, Interpolation::Bilinear)?,
            Descriptor::Invariant => spatial_alignment_map(config.n, config.m, h, h, Interpolation::Bilinear),
        };
        Ok(PolicyBundle {
            config,
            pick_net,
            angle_net,
            scene_net,
            crop_net,
            align: Rc::new(align),
        })
    }

    fn check_obs(&self, obs: &DiffTensor) -> Result<()> {
        let c = &self.config;
        if obs.shape() != [c.channels, c.height, c.width] {
            return shape_err(format!(
                "observation must be [{}, {}, {}], got {:?}",
                c.channels,
                c.height,
                c.width,
                obs.shape()
            ));
        }
        Ok(())
    }

    /// Flat `H * W` pick-position logits.
    pub fn pick_logits(&self, obs: &DiffTensor) -> Result<DiffTensor> {
        self.check_obs(obs)?;
        let y = self.pick_net.forward(&trivial(obs)?)?;
        reshape(&y.tensor, &[obs.len() / self.config.channels])
    }

    /// `H x W` map of pick probabilities.
    pub fn pick_position(&self, obs: &DiffTensor) -> Result<DiffTensor> {
        let p = softmax(&self.pick_logits(obs)?, 0)?;
        reshape(&p, &[self.config.height, self.config.width])
    }

    /// `N / 2` gripper-angle logits for a crop centred on the pick pixel.
    pub fn pick_angle_logits(&self, crop: &DiffTensor) -> Result<DiffTensor> {
        let c = &self.config;
        if crop.shape() != [c.channels, c.pick_crop, c.pick_crop] {
            return shape_err(format!("pick crop has shape {:?}", crop.shape()));
        }
        let coeffs = self.angle_net.forward(&trivial(crop)?)?;
        let logits = orientation_logits(&coeffs, c.n)?;
        reshape(&logits, &[c.n / 2])
    }

    /// Gripper-angle histogram over `N / 2` bins of `[0, pi)`.
    pub fn pick_angle(&self, crop: &DiffTensor) -> Result<DiffTensor> {
        softmax(&self.pick_angle_logits(crop)?, 0)
    }

    /// Scene descriptors `[M, H + 2p, W + 2p]`.
    pub fn scene_descriptors(&self, obs: &DiffTensor) -> Result<DiffTensor> {
        self.check_obs(obs)?;
        let padded = pad(obs, self.config.place_padding())?;
        let y = self.scene_net.forward(&trivial(&padded)?)?;
        self.descriptors(y, self.config.m)
    }

    /// Crop descriptors: `[N, h, h]` histograms, or `[M, h, h]` invariant features.
    pub fn crop_descriptors(&self, crop: &DiffTensor) -> Result<DiffTensor> {
        let c = &self.config;
        if crop.shape() != [c.channels, c.place_crop, c.place_crop] {
            return shape_err(format!("place crop has shape {:?}", crop.shape()));
        }
        let y = self.crop_net.forward(&trivial(crop)?)?;
        self.descriptors(y, c.n)
    }

    fn descriptors(&self, y: FeatureField, bins: usize) -> Result<DiffTensor> {
        match self.config.descriptor {
            Descriptor::Eoh => generate_eoh(&y, bins),
            Descriptor::Invariant => softmax(&y.tensor, 0),
        }
    }

    /// Joint place logits `[N, H, W]`: entry `(i, u, v)` scores moving the
    /// pick point to `(u, v)` while rotating by `2 pi i / N`.
    pub fn place_logits(&self, obs: &DiffTensor, crop: &DiffTensor) -> Result<DiffTensor> {
        let scene = self.scene_descriptors(obs)?;
        let template = self.crop_descriptors(crop)?;
        let kernels = linear_map(&template, &self.align)?;
        correlate_fft(&scene, &kernels)
    }

    /// Alias of [`place_logits`](Self::place_logits): the scores are used
    /// directly as one joint distribution's logits.
    pub fn place_distribution(&self, obs: &DiffTensor, crop: &DiffTensor) -> Result<DiffTensor> {
        self.place_logits(obs, crop)
    }

    pub fn parameters(&self) -> Vec<DiffTensor> {
        let mut p = self.pick_net.parameters();
        p.extend(self.angle_net.parameters());
        p.extend(self.scene_net.parameters());
        p.extend(self.crop_net.parameters());
        p
    }

    pub fn set_parameters(&mut self, params: Vec<DiffTensor>) -> Result<()> {
        let counts = [
            self.pick_net.parameters().len(),
            self.angle_net.parameters().len(),
            self.scene_net.parameters().len(),
        ];
        let mut it = params.into_iter();
        let mut take = |k: usize| it.by_ref().take(k).collect::<Vec<_>>();
        let (a, b, c) = (take(counts[0]), take(counts[1]), take(counts[2]));
        let d: Vec<_> = take(usize::MAX);
        self.pick_net.set_parameters(a)?;
        self.angle_net.set_parameters(b)?;
        self.scene_net.set_parameters(c)?;
        self.crop_net.set_parameters(d)
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Greedy pick then place for one observation.
    pub fn select_actions(&self, obs: &DiffTensor) -> Result<(Action, Action)> {
        crate::tensor::no_grad(|| {
            let pick_map = self.pick_logits(obs)?;
            let c = &self.config;
            select_actions(
                pick_map.data(),
                c.width,
                |u, v| Ok(self.pick_angle_logits(&crop(obs, u, v, c.pick_crop)?)?.data().to_vec()),
                |u, v| Ok(self.place_logits(obs, &crop(obs, u, v, c.place_crop)?)?.data().to_vec()),
                c.height,
            )
        })
    }
}

/// Greedy action selection. `pick_map` is a row-major `H x W` score map,
/// `pick_angle_fn(u, v)` returns gripper-angle scores at a pick pixel and
/// `place_fn(u, v)` returns `[N, H, W]` place scores for that pick. Ties go
/// to the lowest flat index.
pub fn select_actions(
    pick_map: &[f64],
    width: usize,
    pick_angle_fn: impl Fn(usize, usize) -> Result<Vec<f64>>,
    place_fn: impl Fn(usize, usize) -> Result<Vec<f64>>,
    height: usize,
) -> Result<(Action, Action)> {
    let p = argmax_first(pick_map);
    let (u, v) = (p / width, p % width);
    let theta = argmax_first(&pick_angle_fn(u, v)?);
    let place = place_fn(u, v)?;
    let q = argmax_first(&place);
    let plane = height * width;
    Ok((
        Action { u, v, theta_index: theta },
        Action {
            u: (q % plane) / width,
            v: q % width,
            theta_index: q / plane,
        },
    ))
}
