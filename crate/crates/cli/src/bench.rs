//! Parameter-count and inference-cost sweep over N.

use std::io::Write;
use std::time::Instant;

use histoport::env::{generate_episode, render_observation, EnvConfig};
use histoport::policy::{PolicyBundle, PolicyConfig};
use histoport::tensor::{memory, DiffTensor};
use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub params: usize,
    pub median_ms: f64,
    pub tensor_bytes: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        return f64::NAN;
    }
    if k % 2 == 1 {
        v[k / 2]
    } else {
        (v[k / 2 - 1] + v[k / 2]) / 2.0
    }
}

/// Build a policy per `N`, time full pick+place inference and record the
/// peak tensor bytes; fails if the parameter counts differ.
pub fn run_bench(ns: &[usize], repeats: usize, base: &PolicyConfig, seed: u64) -> CliResult<Vec<BenchRow>> {
    let env = EnvConfig {
        height: base.height,
        width: base.width,
        channels: base.channels,
        ..EnvConfig::default()
    };
    let scene = generate_episode(seed, &env)?;
    let obs = DiffTensor::constant(&[env.channels, env.height, env.width], render_observation(&scene, env.channels))?;
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let bundle = PolicyBundle::new(PolicyConfig { n, ..base.clone() }, seed)?;
        let mut times = Vec::with_capacity(repeats);
        memory::reset_peak();
        let before = memory::live_bytes();
        for _ in 0..repeats.max(1) {
            let t = Instant::now();
            bundle.select_actions(&obs)?;
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        rows.push(BenchRow {
            n,
            params: bundle.parameter_count(),
            median_ms: median(times),
            tensor_bytes: memory::peak_bytes() - before,
        });
    }
    if let Some(first) = rows.first() {
        if let Some(bad) = rows.iter().find(|r| r.params != first.params) {
            return Err(CliError::Invariant(format!(
                "parameter count {} at N = {} differs from {} at N = {}",
                bad.params, bad.n, first.params, first.n
            )));
        }
    }
    Ok(rows)
}

pub fn write_bench_csv(rows: &[BenchRow], out: impl Write) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
