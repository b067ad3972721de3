//! Behavior-cloning targets, augmentation, the training loop and evaluation.

use std::f64::consts::TAU;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    apply_action, check_success, generate_episode, oracle_actions, render_observation, Action, Demo, EnvConfig,
    Scene, PLATE_HEIGHT, TOOL_HEIGHT,
};
use crate::error::{Error, Result};
use crate::field::{rotate_raster, Interpolation};
use crate::policy::{crop, PolicyBundle, PolicyConfig};
use crate::tensor::{adam_step, add, cross_entropy, no_grad, AdamState, DiffTensor};

/// First seed of the evaluation range; training demos use small seeds.
pub const EVAL_SEED_BASE: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Evaluate every this many iterations; 0 evaluates only at the end.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub augment_rotation: bool,
    /// Largest augmentation shift in pixels, per axis.
    pub augment_shift: usize,
    pub seed: u64,
    pub policy: PolicyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 5000,
            learning_rate: 1e-4,
            eval_every: 1000,
            eval_episodes: 50,
            augment_rotation: true,
            augment_shift: 8,
            seed: 0,
            policy: PolicyConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        self.policy.validate()
    }
}

/// One training pair: a `[C, H, W]` observation and its expert actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub pick: Action,
    pub place: Action,
}

pub fn samples_from_demos(demos: &[Demo]) -> Vec<Sample> {
    demos
        .iter()
        .flat_map(|d| &d.steps)
        .map(|s| Sample {
            obs: s.obs.clone(),
            pick: s.pick,
            place: s.place,
        })
        .collect()
}

/// Class indices `(pick position, pick angle, place)` of a demonstrated step.
pub fn make_targets(pick: &Action, place: &Action, h: usize, w: usize, n: usize) -> Result<(usize, usize, usize)> {
    let oob = |what: &str, a: &Action| {
        Err(Error::ActionOutOfBounds(format!(
            "{what} ({}, {}, {}) outside {h}x{w} with {n} bins",
            a.u, a.v, a.theta_index
        )))
    };
    if pick.u >= h || pick.v >= w || pick.theta_index >= n / 2 {
        return oob("pick", pick);
    }
    if place.u >= h || place.v >= w || place.theta_index >= n {
        return oob("place", place);
    }
    Ok((
        pick.u * w + pick.v,
        pick.theta_index,
        place.theta_index * h * w + place.u * w + place.v,
    ))
}

/// Inverse of the place flattening.
pub fn unflatten_place(index: usize, h: usize, w: usize) -> Action {
    Action {
        u: (index % (h * w)) / w,
        v: index % w,
        theta_index: index / (h * w),
    }
}

/// Pixel `(u, v)` moved by a rotation of `theta` about the raster centre and
/// a shift, rounded; `None` if it leaves the raster.
fn move_pixel(u: usize, v: usize, theta: f64, du: i64, dv: i64, h: usize, w: usize) -> Option<(usize, usize)> {
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, c) = theta.sin_cos();
    let (dx, dy) = (v as f64 - cx, u as f64 - cy);
    let x = (cx + c * dx - s * dy).round() as i64 + dv;
    let y = (cy + s * dx + c * dy).round() as i64 + du;
    (x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h).then_some((y as usize, x as usize))
}

fn shift_raster(data: &[f64], c: usize, h: usize, w: usize, du: i64, dv: i64) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for ch in 0..c {
        for r in 0..h {
            let sr = r as i64 - du;
            if sr < 0 || sr >= h as i64 {
                continue;
            }
            for col in 0..w {
                let sc = col as i64 - dv;
                if sc >= 0 && sc < w as i64 {
                    out[(ch * h + r) * w + col] = data[(ch * h + sr as usize) * w + sc as usize];
                }
            }
        }
    }
    out
}

/// Augmentation draw: a rotation bin of C_N and a pixel shift.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentDraw {
    pub rotation: usize,
    pub du: i64,
    pub dv: i64,
}

/// Apply one draw. Returns `None` if a label leaves the raster, the pick
/// pixel leaves the tool, the place pixel lands on raised material, or the
/// shift pushes content out of view.
pub fn apply_augment(
    sample: &Sample,
    dims: [usize; 3],
    n: usize,
    draw: AugmentDraw,
) -> Result<Option<Sample>> {
    let [c, h, w] = dims;
    let theta = TAU * draw.rotation as f64 / n as f64;
    let obs = if draw.rotation == 0 {
        sample.obs.clone()
    } else {
        let t = DiffTensor::constant(&[c, h, w], sample.obs.clone())?;
        no_grad(|| rotate_raster(&t, theta, Interpolation::Bilinear))?.data().to_vec()
    };
    let obs = shift_raster(&obs, c, h, w, draw.du, draw.dv);
    let mass = |d: &[f64]| d.iter().sum::<f64>();
    if mass(&obs) < 0.98 * mass(&sample.obs) {
        return Ok(None);
    }
    let Some((pu, pv)) = move_pixel(sample.pick.u, sample.pick.v, theta, draw.du, draw.dv, h, w) else {
        return Ok(None);
    };
    let Some((qu, qv)) = move_pixel(sample.place.u, sample.place.v, theta, draw.du, draw.dv, h, w) else {
        return Ok(None);
    };
    // silhouettes read from the first (height) channel
    let tool_level = (PLATE_HEIGHT + TOOL_HEIGHT) / 2.0;
    if obs[pu * w + pv] < tool_level || obs[qu * w + qv] > PLATE_HEIGHT / 2.0 {
        return Ok(None);
    }
    Ok(Some(Sample {
        obs,
        pick: Action {
            u: pu,
            v: pv,
            theta_index: (sample.pick.theta_index + draw.rotation) % (n / 2),
        },
        place: Action {
            u: qu,
            v: qv,
            theta_index: sample.place.theta_index,
        },
    }))
}

/// Random rigid augmentation with up to 100 draws; falls back to the
/// original pair when none is admissible.
pub fn augment(sample: &Sample, dims: [usize; 3], n: usize, rotate: bool, shift: usize, rng: &mut impl Rng) -> Result<Sample> {
    let s = shift as i64;
    for _ in 0..100 {
        let draw = AugmentDraw {
            rotation: if rotate { rng.gen_range(0..n) } else { 0 },
            du: rng.gen_range(-s..=s),
            dv: rng.gen_range(-s..=s),
        };
        if let Some(out) = apply_augment(sample, dims, n, draw)? {
            return Ok(out);
        }
    }
    Ok(sample.clone())
}

/// Summed loss terms of one step, as plain numbers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub pick_position: f64,
    pub pick_angle: f64,
    pub place: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.pick_position + self.pick_angle + self.place
    }
}

/// The three cross-entropy losses of one sample, graph attached.
pub fn sample_loss(bundle: &PolicyBundle, sample: &Sample) -> Result<(DiffTensor, LossTerms)> {
    let c = &bundle.config;
    let (tp, ta, tq) = make_targets(&sample.pick, &sample.place, c.height, c.width, c.n)?;
    let obs = DiffTensor::constant(&[c.channels, c.height, c.width], sample.obs.clone())?;
    let l_pick = cross_entropy(&bundle.pick_logits(&obs)?, tp)?;
    let angle_crop = crop(&obs, sample.pick.u, sample.pick.v, c.pick_crop)?;
    let l_angle = cross_entropy(&bundle.pick_angle_logits(&angle_crop)?, ta)?;
    let place_crop = crop(&obs, sample.pick.u, sample.pick.v, c.place_crop)?;
    let l_place = cross_entropy(&bundle.place_logits(&obs, &place_crop)?, tq)?;
    let terms = LossTerms {
        pick_position: l_pick.item(),
        pick_angle: l_angle.item(),
        place: l_place.item(),
    };
    Ok((add(&add(&l_pick, &l_angle)?, &l_place)?, terms))
}

/// One row of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iteration: usize,
    pub loss_pick_pos: f64,
    pub loss_pick_angle: f64,
    pub loss_place: f64,
    /// Success rate on `[0, 100]`, present on evaluation iterations.
    pub eval_success_rate: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights of the best evaluation snapshot (the final ones if none ran).
    pub best: PolicyBundle,
    pub last: PolicyBundle,
    pub best_iteration: usize,
    pub best_success: Option<f64>,
    pub optimizer: AdamState,
    pub metrics: Vec<MetricRow>,
}

fn check_samples(cfg: &PolicyConfig, samples: &[Sample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let len = cfg.channels * cfg.height * cfg.width;
    for (i, s) in samples.iter().enumerate() {
        if s.obs.len() != len {
            return Err(Error::ConfigMismatch(format!(
                "sample {i} has {} values, config expects {len}",
                s.obs.len()
            )));
        }
        make_targets(&s.pick, &s.place, cfg.height, cfg.width, cfg.n)?;
    }
    Ok(())
}

/// Behavior cloning with batch size one. `on_row` sees every metric row as
/// it is produced.
pub fn train(
    cfg: &TrainConfig,
    env: &EnvConfig,
    samples: &[Sample],
    mut on_row: impl FnMut(&MetricRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_samples(&cfg.policy, samples)?;
    let mut bundle = PolicyBundle::new(cfg.policy.clone(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_a11e);
    let mut opt = AdamState::new(cfg.learning_rate);
    let dims = [cfg.policy.channels, cfg.policy.height, cfg.policy.width];
    let start = Instant::now();
    let mut metrics = Vec::with_capacity(cfg.iterations);
    let mut best: Option<(f64, usize, Vec<DiffTensor>)> = None;
    for it in 1..=cfg.iterations {
        let base = &samples[rng.gen_range(0..samples.len())];
        let sample = augment(base, dims, cfg.policy.n, cfg.augment_rotation, cfg.augment_shift, &mut rng)?;
        let params = bundle.parameters();
        let (loss, terms) = sample_loss(&bundle, &sample)?;
        loss.backward()?;
        let grads: Vec<_> = params.iter().map(|p| p.grad()).collect();
        let fresh = adam_step(&mut opt, &params, &grads)?;
        bundle.set_parameters(fresh)?;
        let eval_now = (cfg.eval_every > 0 && it % cfg.eval_every == 0) || it == cfg.iterations;
        let success = if eval_now && cfg.eval_episodes > 0 {
            let report = evaluate(&bundle, env, cfg.eval_episodes, cfg.seed)?;
            let better = best.as_ref().map_or(true, |b| report.success_rate > b.0);
            if better {
                best = Some((report.success_rate, it, bundle.parameters()));
            }
            Some(report.success_rate)
        } else {
            None
        };
        let row = MetricRow {
            iteration: it,
            loss_pick_pos: terms.pick_position,
            loss_pick_angle: terms.pick_angle,
            loss_place: terms.place,
            eval_success_rate: success,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_row(&row);
        metrics.push(row);
    }
    let last = bundle.clone();
    let (best_bundle, best_iteration, best_success) = match best {
        Some((rate, it, params)) => {
            let mut b = bundle;
            b.set_parameters(params)?;
            (b, it, Some(rate))
        }
        None => (bundle, cfg.iterations, None),
    };
    Ok(TrainOutcome {
        best: best_bundle,
        last,
        best_iteration,
        best_success,
        optimizer: opt,
        metrics,
    })
}

/// Anything that acts on a scene.
pub trait Policy {
    fn act(&self, scene: &Scene, obs: &DiffTensor) -> Result<(Action, Action)>;
    /// Orientation bins of the place action.
    fn bins(&self) -> usize;
}

impl Policy for PolicyBundle {
    fn act(&self, _scene: &Scene, obs: &DiffTensor) -> Result<(Action, Action)> {
        self.select_actions(obs)
    }

    fn bins(&self) -> usize {
        self.config.n
    }
}

/// The scripted expert, reading the true scene.
#[derive(Clone, Copy, Debug)]
pub struct OraclePolicy {
    pub n: usize,
}

impl Policy for OraclePolicy {
    fn act(&self, scene: &Scene, _obs: &DiffTensor) -> Result<(Action, Action)> {
        oracle_actions(scene, self.n)
    }

    fn bins(&self) -> usize {
        self.n
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub successes: usize,
    /// Successes on a `[0, 100]` scale.
    pub success_rate: f64,
    pub mean_translation_error: f64,
    /// Mean absolute wrapped rotation error, radians.
    pub mean_rotation_error: f64,
    pub mean_inference_seconds: f64,
}

/// Seed of evaluation episode `i` for evaluation seed `seed`.
pub fn eval_episode_seed(seed: u64, i: usize) -> u64 {
    EVAL_SEED_BASE + seed.wrapping_mul(1 << 20) + i as u64
}

/// Roll a policy out on `episodes` held-out scenes.
pub fn evaluate(policy: &impl Policy, env: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalReport> {
    let (mut successes, mut terr, mut rerr, mut secs) = (0, 0.0, 0.0, 0.0);
    for i in 0..episodes {
        let scene = generate_episode(eval_episode_seed(seed, i), env)?;
        let obs = DiffTensor::constant(&[env.channels, env.height, env.width], render_observation(&scene, env.channels))?;
        let t = Instant::now();
        let (pick, place) = policy.act(&scene, &obs)?;
        secs += t.elapsed().as_secs_f64();
        let after = apply_action(&scene, &pick, &place, policy.bins());
        let report = check_success(&after);
        successes += report.success as usize;
        terr += report.translation_error;
        rerr += report.rotation_error.abs();
    }
    let k = episodes.max(1) as f64;
    Ok(EvalReport {
        episodes,
        successes,
        success_rate: 100.0 * successes as f64 / k,
        mean_translation_error: terr / k,
        mean_rotation_error: rerr / k,
        mean_inference_seconds: secs / k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::record_demo;

    #[test]
    fn flattening() {
        let a = Action { u: 0, v: 0, theta_index: 0 };
        let b = Action { u: 0, v: 0, theta_index: 1 };
        assert_eq!(make_targets(&a, &b, 64, 64, 36).unwrap(), (0, 0, 4096));
        let c = Action { u: 64, v: 0, theta_index: 0 };
        assert!(matches!(make_targets(&c, &b, 64, 64, 36), Err(Error::ActionOutOfBounds(_))));
        let d = Action { u: 0, v: 0, theta_index: 18 };
        assert!(make_targets(&d, &b, 64, 64, 36).is_err());
    }

    fn demo_sample() -> Sample {
        let demo = record_demo(0, &EnvConfig::default(), 36).unwrap().unwrap();
        samples_from_demos(&[demo]).remove(0)
    }

    #[test]
    fn identity_draw_is_identity() {
        let s = demo_sample();
        let out = apply_augment(&s, [1, 64, 64], 36, AugmentDraw { rotation: 0, du: 0, dv: 0 })
            .unwrap()
            .unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn one_bin_rotation_shifts_pick_angle() {
        let s = demo_sample();
        for k in [1, 9, 18, 35] {
            if let Some(out) = apply_augment(&s, [1, 64, 64], 36, AugmentDraw { rotation: k, du: 0, dv: 0 }).unwrap() {
                assert_eq!(out.pick.theta_index, (s.pick.theta_index + k) % 18);
                assert_eq!(out.place.theta_index, s.place.theta_index);
            }
        }
    }

    #[test]
    fn oracle_evaluation_is_deterministic() {
        let env = EnvConfig::default();
        let a = evaluate(&OraclePolicy { n: 36 }, &env, 20, 3).unwrap();
        let b = evaluate(&OraclePolicy { n: 36 }, &env, 20, 3).unwrap();
        assert_eq!(a.successes, b.successes);
        assert!(a.success_rate >= 95.0);
    }
}
