//! Invariant suite behind `histoport check`.

use std::f64::consts::{FRAC_PI_2, TAU};

use histoport::env::{generate_episode, render_observation, EnvConfig};
use histoport::eoh::{generate_eoh, subgroup_alignment};
use histoport::field::{rotate_raster, transform_field, FeatureField, Interpolation};
use histoport::group::{discretization_matrix, rep_matrix, rotation_2x2, GroupElement, RepSpec};
use histoport::io::{parse_weight_blob, weight_blob};
use histoport::policy::{crop, PolicyBundle, PolicyConfig};
use histoport::steerable::{assemble_network, build_kernel_basis, default_rings, equivariance_residual, LayerSpec, NetworkSpec, DEFAULT_SIGMA};
use histoport::tensor::gradcheck::{check_gradients, GradCheckOptions};
use histoport::tensor::{conv2d, correlate_fft, cross_entropy, no_grad, reshape, DiffTensor};
use histoport::train::{evaluate, OraclePolicy};
use histoport::Result;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Faults that can be injected to confirm the suite notices them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Faults {
    /// Swap two rows of every non-identity regular permutation.
    pub corrupt_regular: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub residual: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.residual.is_finite() && self.residual <= self.tolerance
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mat_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    max_abs_diff(a.as_slice(), b.as_slice())
}

/// Representation matrix, optionally with the regular-rep fault applied.
fn rho(rep: RepSpec, g: &GroupElement, faults: Faults) -> Result<DMatrix<f64>> {
    let m = rep_matrix(rep, g)?;
    if let (RepSpec::Regular(n), true) = (rep, faults.corrupt_regular) {
        if n > 2 && !g.is_identity() {
            let mut bad = m.clone();
            bad.swap_rows(0, 1);
            return Ok(bad);
        }
    }
    Ok(m)
}

fn random_element(rep: RepSpec, rng: &mut impl Rng) -> GroupElement {
    match rep {
        RepSpec::Regular(n) => GroupElement::cyclic(rng.gen_range(0..n), n),
        _ => GroupElement::rotation(rng.gen_range(0.0..TAU)),
    }
}

const REPS: [RepSpec; 6] = [
    RepSpec::Trivial,
    RepSpec::Standard,
    RepSpec::Irrep(3),
    RepSpec::IrrepSum(3),
    RepSpec::QuotientIrrepSum(2),
    RepSpec::Regular(12),
];

fn group_laws(faults: Faults, pairs: usize) -> Result<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut hom, mut orth, mut inv) = (0.0f64, 0.0f64, 0.0f64);
    for rep in REPS {
        for _ in 0..pairs {
            let (a, b) = (random_element(rep, &mut rng), random_element(rep, &mut rng));
            let (ra, rb) = (rho(rep, &a, faults)?, rho(rep, &b, faults)?);
            hom = hom.max(mat_diff(&rho(rep, &a.compose(&b)?, faults)?, &(&ra * &rb)));
            orth = orth.max(mat_diff(&(&ra * ra.transpose()), &DMatrix::identity(rep.dim(), rep.dim())));
            inv = inv.max(mat_diff(&rho(rep, &a.inverse(), faults)?, &ra.transpose()));
        }
    }
    Ok([hom, orth, inv])
}

/// `Q rho_irrep(g) = P(g) Q` on every element of C_N.
fn intertwiner(faults: Faults) -> Result<f64> {
    let mut worst = 0.0f64;
    for n in [4usize, 12, 36, 180] {
        let jc = ((n - 1) / 2).min(3) as u32;
        let q = discretization_matrix(n, jc, false)?;
        for k in 0..n {
            let g = GroupElement::cyclic(k, n);
            let lhs = q.matrix() * rep_matrix(RepSpec::IrrepSum(jc), &g)?;
            let rhs = rho(RepSpec::Regular(n), &g, faults)? * q.matrix();
            worst = worst.max(mat_diff(&lhs, &rhs));
        }
    }
    Ok(worst)
}

fn fourier_roundtrip() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for (n, jc, quotient) in [(7, 3, false), (12, 3, false), (36, 6, false), (16, 3, true), (36, 6, true)] {
        let q = discretization_matrix(n, jc, quotient)?;
        let c: Vec<f64> = (0..1 + 2 * jc as usize).map(|_| rng.gen_range(-1.0..1.0)).collect();
        worst = worst.max(max_abs_diff(&q.fit(&q.discretize(&c)?)?, &c));
    }
    Ok(worst)
}

fn nyquist_rejected() -> f64 {
    let rejected = discretization_matrix(6, 3, false).is_err() && discretization_matrix(12, 6, false).is_err();
    if rejected {
        0.0
    } else {
        1.0
    }
}

fn irrep(j: u32, angle: f64) -> DMatrix<f64> {
    if j == 0 {
        return DMatrix::identity(1, 1);
    }
    let r = rotation_2x2(j as f64 * angle);
    DMatrix::from_row_slice(2, 2, &[r[0][0], r[0][1], r[1][0], r[1][1]])
}

/// `K(g x) = rho_out(g) K(x) rho_in(g)^T` at sampled angles.
fn kernel_constraint(max_j: u32, angles: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for m in 0..=max_j {
        for n in 0..=max_j {
            let basis = build_kernel_basis(m, n, 5, &default_rings(5), DEFAULT_SIGMA)?;
            for idx in 0..basis.len() {
                for a in 0..angles {
                    let t = TAU * a as f64 / angles as f64;
                    let (x, y) = (1.3, -0.4);
                    let (s, c) = t.sin_cos();
                    let lhs = basis.evaluate(idx, c * x - s * y, s * x + c * y);
                    let rhs = irrep(n, t) * basis.evaluate(idx, x, y) * irrep(m, t).transpose();
                    worst = worst.max(mat_diff(&lhs, &rhs));
                }
            }
        }
    }
    Ok(worst)
}

fn random_input(c: usize, h: usize, w: usize, rng: &mut impl Rng) -> Result<DiffTensor> {
    DiffTensor::constant(&[c, h, w], (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn small_network(rng: &mut ChaCha8Rng) -> Result<histoport::steerable::Network> {
    let conv = |rep, fields| LayerSpec::Conv {
        rep,
        fields,
        size: 5,
        padding: None,
    };
    let spec = NetworkSpec {
        input_rep: RepSpec::Trivial,
        input_fields: 1,
        layers: vec![
            conv(RepSpec::IrrepSum(3), 2),
            LayerSpec::Elu { samples: None },
            conv(RepSpec::IrrepSum(3), 2),
            LayerSpec::Elu { samples: None },
            conv(RepSpec::IrrepSum(3), 1),
        ],
    };
    assemble_network(&spec, rng)
}

fn network_quarter_turn() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let net = small_network(&mut rng)?;
    let x = FeatureField::new(random_input(1, 16, 16, &mut rng)?, RepSpec::Trivial)?;
    no_grad(|| equivariance_residual(&net, &x, &GroupElement::rotation(FRAC_PI_2), Interpolation::Bilinear))
}

fn rot90(x: &DiffTensor, k: usize) -> Result<DiffTensor> {
    rotate_raster(x, FRAC_PI_2 * k as f64, Interpolation::Nearest)
}

/// `out'[(i + s) mod n] = rot90(out[i])` for `[n, H, W]` maps.
fn shifted_rotation_residual(base: &DiffTensor, turned: &DiffTensor, shift: usize, spatial: bool) -> Result<f64> {
    let &[n, h, w] = base.shape() else {
        return Ok(f64::INFINITY);
    };
    let expected = if spatial { rot90(base, 1)? } else { base.clone() };
    let (e, t) = (expected.data(), turned.data());
    let hw = h * w;
    let mut worst = 0.0f64;
    for i in 0..n {
        let j = (i + shift) % n;
        worst = worst.max(max_abs_diff(&t[j * hw..(j + 1) * hw], &e[i * hw..(i + 1) * hw]));
    }
    Ok(worst)
}

fn eoh_quarter_turn() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let net = small_network(&mut rng)?;
    let x = random_input(1, 16, 16, &mut rng)?;
    let n = 36;
    no_grad(|| {
        let a = generate_eoh(&net.forward(&FeatureField::new(x.clone(), RepSpec::Trivial)?)?, n)?;
        let b = generate_eoh(&net.forward(&FeatureField::new(rot90(&x, 1)?, RepSpec::Trivial)?)?, n)?;
        shifted_rotation_residual(&a, &b, n / 4, true)
    })
}

fn desk_scene(seed: u64) -> Result<DiffTensor> {
    let env = EnvConfig::default();
    let scene = generate_episode(seed, &env)?;
    DiffTensor::constant(&[1, env.height, env.width], render_observation(&scene, 1))
}

/// Pick-map, gripper-angle and place residuals of a fresh policy.
fn policy_residuals() -> Result<[f64; 5]> {
    let bundle = PolicyBundle::new(PolicyConfig::default(), 3)?;
    let c = &bundle.config;
    let obs = desk_scene(5)?;
    no_grad(|| {
        let (h, w) = (c.height, c.width);
        let pick = reshape(&bundle.pick_logits(&obs)?, &[1, h, w])?;
        let pick_turned = reshape(&bundle.pick_logits(&rot90(&obs, 1)?)?, &[1, h, w])?;
        let pick_res = shifted_rotation_residual(&pick, &pick_turned, 0, true)?;

        let angle_crop = crop(&obs, 30, 33, c.pick_crop)?;
        let a0 = bundle.pick_angle_logits(&angle_crop)?;
        let a_half = bundle.pick_angle_logits(&rot90(&angle_crop, 2)?)?;
        let a_quarter = bundle.pick_angle_logits(&rot90(&angle_crop, 1)?)?;
        let half = c.n / 2;
        let half_res = max_abs_diff(a0.data(), a_half.data());
        let quarter_res = (0..half)
            .map(|i| (a_quarter.data()[(i + c.n / 4) % half] - a0.data()[i]).abs())
            .fold(0.0, f64::max);

        let place_crop = crop(&obs, 30, 33, c.place_crop)?;
        let base = bundle.place_logits(&obs, &place_crop)?;
        let scene_turned = bundle.place_logits(&rot90(&obs, 1)?, &place_crop)?;
        let scene_res = shifted_rotation_residual(&base, &scene_turned, c.n / 4, true)?;
        let crop_turned = bundle.place_logits(&obs, &rot90(&place_crop, 1)?)?;
        let crop_res = shifted_rotation_residual(&base, &crop_turned, c.n - c.n / 4, false)?;
        Ok([pick_res, half_res, quarter_res, scene_res, crop_res])
    })
}

/// Brute-force alignment: rotate the whole map (space and bins) by each
/// element of C_N, then keep every `N / M`-th bin.
pub fn brute_force_alignment(map: &DiffTensor, m: usize) -> Result<Vec<f64>> {
    let &[n, h, w] = map.shape() else {
        return Ok(Vec::new());
    };
    let hw = h * w;
    let mut out = Vec::with_capacity(n * m * hw);
    for i in 0..n {
        let g = GroupElement::cyclic(i, n);
        let field = FeatureField::new(map.clone(), RepSpec::Regular(n))?;
        let turned = transform_field(&field, &g, Interpolation::Bilinear)?;
        let t = turned.tensor.data();
        for k in 0..m {
            let bin = k * (n / m);
            out.extend_from_slice(&t[bin * hw..(bin + 1) * hw]);
        }
    }
    Ok(out)
}

fn alignment_oracle() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut worst = 0.0f64;
    for (n, m) in [(12, 4), (36, 12), (36, 6)] {
        let map = DiffTensor::constant(&[n, 7, 7], (0..n * 49).map(|_| rng.gen_range(0.0..1.0)).collect())?;
        let fast = subgroup_alignment(&map, m, Interpolation::Bilinear)?;
        worst = worst.max(max_abs_diff(fast.data(), &brute_force_alignment(&map, m)?));
    }
    Ok(worst)
}

fn parameter_counts() -> Result<f64> {
    let counts = [36usize, 72, 120, 180]
        .iter()
        .map(|&n| PolicyBundle::new(PolicyConfig { n, ..Default::default() }, 0).map(|b| b.parameter_count()))
        .collect::<Result<Vec<_>>>()?;
    let spread = counts.iter().max().unwrap_or(&0) - counts.iter().min().unwrap_or(&0);
    Ok(spread as f64)
}

fn render_quarter_turn() -> Result<f64> {
    let env = EnvConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let scene = generate_episode(seed, &env)?;
        let a = DiffTensor::constant(&[1, 64, 64], render_observation(&scene, 1))?;
        let b = render_observation(&scene.rotated_quarter(1), 1);
        worst = worst.max(max_abs_diff(rot90(&a, 1)?.data(), &b));
    }
    Ok(worst)
}

fn oracle_failures(episodes: usize) -> Result<f64> {
    let report = evaluate(&OraclePolicy { n: 36 }, &EnvConfig::default(), episodes, 0)?;
    Ok((report.episodes - report.successes) as f64)
}

fn gradient_error() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let opts = GradCheckOptions::default();
    let x = random_input(2, 7, 6, &mut rng)?;
    let k = DiffTensor::constant(&[3, 2, 3, 3], (0..54).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let conv = check_gradients(|p| cross_entropy(&conv2d(&p[0], &p[1], 1)?, 4), &[x.clone(), k.clone()], &opts)?;
    let corr = check_gradients(|p| cross_entropy(&correlate_fft(&p[0], &p[1])?, 3), &[x, k], &opts)?;
    Ok(conv.max_relative_error.max(corr.max_relative_error))
}

fn blob_roundtrip() -> Result<f64> {
    let params = PolicyBundle::new(PolicyConfig::default(), 1)?.parameters();
    let flat: Vec<f64> = params.iter().flat_map(|p| p.data().iter().copied()).collect();
    let back = parse_weight_blob(&weight_blob(&params))?;
    Ok(if back == flat { 0.0 } else { 1.0 })
}

/// Run every check; errors inside a check count as an infinite residual.
pub fn run_checks(faults: Faults) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut push = |name, tolerance, r: Result<f64>| {
        out.push(CheckResult {
            name,
            residual: r.unwrap_or(f64::INFINITY),
            tolerance,
        })
    };
    match group_laws(faults, 100) {
        Ok([hom, orth, inv]) => {
            push("group.homomorphism", 1e-10, Ok(hom));
            push("group.orthogonality", 1e-10, Ok(orth));
            push("group.inverse", 1e-10, Ok(inv));
        }
        Err(e) => {
            for name in ["group.homomorphism", "group.orthogonality", "group.inverse"] {
                push(name, 1e-10, Err(histoport::Error::InvalidArgument(e.to_string())));
            }
        }
    }
    push("group.discretization_intertwiner", 1e-10, intertwiner(faults));
    push("fourier.roundtrip", 1e-10, fourier_roundtrip());
    push("fourier.nyquist_rejected", 0.0, Ok(nyquist_rejected()));
    push("steerable.kernel_constraint", 1e-9, kernel_constraint(3, 36));
    push("steerable.network_quarter_turn", 1e-9, network_quarter_turn());
    push("eoh.quarter_turn", 1e-5, eoh_quarter_turn());
    match policy_residuals() {
        Ok([p, h, q, s, c]) => {
            push("policy.pick_quarter_turn", 1e-5, Ok(p));
            push("policy.angle_half_turn", 1e-6, Ok(h));
            push("policy.angle_quarter_shift", 1e-5, Ok(q));
            push("policy.place_scene_quarter_turn", 1e-4, Ok(s));
            push("policy.place_crop_quarter_turn", 1e-4, Ok(c));
        }
        Err(_) => {
            for (name, tol) in [
                ("policy.pick_quarter_turn", 1e-5),
                ("policy.angle_half_turn", 1e-6),
                ("policy.angle_quarter_shift", 1e-5),
                ("policy.place_scene_quarter_turn", 1e-4),
                ("policy.place_crop_quarter_turn", 1e-4),
            ] {
                push(name, tol, Ok(f64::INFINITY));
            }
        }
    }
    push("eoh.alignment_oracle", 1e-12, alignment_oracle());
    push("policy.parameter_count_invariance", 0.0, parameter_counts());
    push("env.render_quarter_turn", 1e-12, render_quarter_turn());
    push("env.oracle_failures_per_100", 1.0, oracle_failures(100));
    push("tensor.gradients", 1e-4, gradient_error());
    push("io.weight_blob_roundtrip", 0.0, blob_roundtrip());
    out
}

/// The results as an aligned text table.
pub fn format_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for r in results {
        s.push_str(&format!(
            "{:<width$}  {}  residual {:.3e}  tolerance {:.1e}\n",
            r.name,
            if r.passed() { "PASS" } else { "FAIL" },
            r.residual,
            r.tolerance,
        ));
    }
    s
}
