//! Dataset, checkpoint, training and evaluation behavior end to end.

use std::cell::RefCell;
use std::fs;

use histoport::env::{collect_demos, generate_episode, render_observation, Scene};
use histoport::io::{load_checkpoint, read_dataset, save_checkpoint, write_dataset};
use histoport::policy::crop;
use histoport::tensor::no_grad;
use histoport::train::{evaluate, make_targets, sample_loss, samples_from_demos, train, Policy, TrainOutcome};
use histoport::{Action, DiffTensor, EnvConfig, PolicyBundle, PolicyConfig, Sample, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 36;

fn obs_tensor(env: &EnvConfig, s: &Sample) -> DiffTensor {
    DiffTensor::constant(&[env.channels, env.height, env.width], s.obs.clone()).unwrap()
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

fn short_config(iterations: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        iterations,
        eval_every: 0,
        eval_episodes: 0,
        seed,
        ..TrainConfig::default()
    }
}

fn param_bits(bundle: &PolicyBundle) -> Vec<u64> {
    bundle.parameters().iter().flat_map(|p| p.data().to_vec()).map(f64::to_bits).collect()
}

/// Uniform random pick and place over the whole action space.
struct RandomPolicy(RefCell<ChaCha8Rng>);

impl Policy for RandomPolicy {
    fn act(&self, scene: &Scene, _obs: &DiffTensor) -> histoport::Result<(Action, Action)> {
        let mut rng = self.0.borrow_mut();
        let mut draw = |bins: usize| Action {
            u: rng.gen_range(0..scene.height),
            v: rng.gen_range(0..scene.width),
            theta_index: rng.gen_range(0..bins),
        };
        Ok((draw(N / 2), draw(N)))
    }

    fn bins(&self) -> usize {
        N
    }
}

#[test]
fn dataset_round_trip_is_deterministic() {
    let env = EnvConfig::default();
    let demos = collect_demos(3, 7, &env, N).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_dataset(a.path(), &demos, [1, 64, 64]).unwrap();
    write_dataset(b.path(), &collect_demos(3, 7, &env, N).unwrap(), [1, 64, 64]).unwrap();
    for ep in 0..3 {
        for file in ["obs_0.tns", "act_0.json"] {
            let rel = format!("episode_{ep:05}/{file}");
            assert_eq!(fs::read(a.path().join(&rel)).unwrap(), fs::read(b.path().join(&rel)).unwrap(), "{rel}");
        }
    }
    let back = read_dataset(a.path()).unwrap();
    assert_eq!((back.dims, back.n), ([1, 64, 64], N));
    assert_eq!(back.samples, samples_from_demos(&demos));
}

#[test]
fn initial_pick_loss_is_uniform() {
    let env = EnvConfig::default();
    let samples = samples_from_demos(&collect_demos(5, 0, &env, N).unwrap());
    let uniform = (64.0f64 * 64.0).ln();
    for (seed, s) in samples.iter().enumerate() {
        let bundle = PolicyBundle::new(PolicyConfig::default(), seed as u64).unwrap();
        let (_, terms) = no_grad(|| sample_loss(&bundle, s)).unwrap();
        assert!((terms.pick_position - uniform).abs() <= 1.0, "seed {seed}: {}", terms.pick_position);
    }
}

#[test]
fn training_is_deterministic() {
    let env = EnvConfig::default();
    let samples = samples_from_demos(&collect_demos(2, 0, &env, N).unwrap());
    let run = || train(&short_config(3, 11), &env, &samples, |_| {}).unwrap();
    let (a, b): (TrainOutcome, TrainOutcome) = (run(), run());
    assert_eq!(a.metrics.len(), 3);
    for (x, y) in a.metrics.iter().zip(&b.metrics) {
        assert!((x.loss_pick_pos - y.loss_pick_pos).abs() <= 1e-12);
        assert!((x.loss_pick_angle - y.loss_pick_angle).abs() <= 1e-12);
        assert!((x.loss_place - y.loss_place).abs() <= 1e-12);
    }
    assert_eq!(param_bits(&a.last), param_bits(&b.last));
}

#[test]
fn evaluation_has_no_side_effects() {
    let env = EnvConfig::default();
    let bundle = PolicyBundle::new(PolicyConfig::default(), 4).unwrap();
    let before = param_bits(&bundle);
    let first = evaluate(&bundle, &env, 3, 9).unwrap();
    let second = evaluate(&bundle, &env, 3, 9).unwrap();
    assert_eq!(param_bits(&bundle), before);
    assert_eq!(first.successes, second.successes);
    assert_eq!(first.mean_translation_error, second.mean_translation_error);
    assert_eq!(first.mean_rotation_error, second.mean_rotation_error);
}

#[test]
fn untrained_policy_is_near_chance() {
    let env = EnvConfig::default();
    let random = RandomPolicy(RefCell::new(ChaCha8Rng::seed_from_u64(3)));
    let chance = evaluate(&random, &env, 200, 1).unwrap().success_rate;
    let untrained = evaluate(&PolicyBundle::new(PolicyConfig::default(), 0).unwrap(), &env, 20, 1)
        .unwrap()
        .success_rate;
    println!("random policy {chance:.1}%, untrained network {untrained:.1}%");
    assert!(chance < 5.0, "random policy {chance}");
    assert!(untrained < 5.0, "untrained network {untrained}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let env = EnvConfig::default();
    let samples = samples_from_demos(&collect_demos(1, 0, &env, N).unwrap());
    let trained = train(&short_config(2, 5), &env, &samples, |_| {}).unwrap().last;
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &trained, 5, serde_json::json!({})).unwrap();
    let (loaded, manifest) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(manifest.seed, 5);
    assert_eq!(param_bits(&loaded), param_bits(&trained));
    for seed in 0..3 {
        let scene = generate_episode(100 + seed, &env).unwrap();
        let obs = DiffTensor::constant(&[1, 64, 64], render_observation(&scene, 1)).unwrap();
        assert_eq!(loaded.select_actions(&obs).unwrap(), trained.select_actions(&obs).unwrap());
    }
}

#[test]
fn overfits_a_single_demo() {
    let env = EnvConfig::default();
    let samples = samples_from_demos(&collect_demos(1, 0, &env, N).unwrap());
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        augment_rotation: false,
        augment_shift: 0,
        ..short_config(500, 0)
    };
    let bundle = train(&cfg, &env, &samples, |_| {}).unwrap().last;
    let s = &samples[0];
    let c = &bundle.config;
    let (tp, ta, tq) = make_targets(&s.pick, &s.place, c.height, c.width, c.n).unwrap();
    let obs = obs_tensor(&env, s);
    no_grad(|| {
        let pick = argmax(bundle.pick_logits(&obs).unwrap().data());
        let angle_crop = crop(&obs, s.pick.u, s.pick.v, c.pick_crop).unwrap();
        let angle = argmax(bundle.pick_angle_logits(&angle_crop).unwrap().data());
        let place_crop = crop(&obs, s.pick.u, s.pick.v, c.place_crop).unwrap();
        let place = argmax(bundle.place_logits(&obs, &place_crop).unwrap().data());
        assert_eq!((pick, angle, place), (tp, ta, tq));
    });
}
