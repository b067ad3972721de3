//! Subcommand implementations. Each writes its human-readable report to `out`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use histoport::env::{collect_demos, generate_episode, render_observation};
use histoport::io::{load_checkpoint, read_dataset, save_checkpoint, write_dataset};
use histoport::train::{evaluate, samples_from_demos, train, EvalReport, OraclePolicy};
use histoport::DiffTensor;
use serde_json::json;

use crate::bench::{run_bench, write_bench_csv};
use crate::check::{format_table, run_checks, Faults};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::viz::{arrows_svg, heatmap_ppm};

#[derive(Debug, Parser)]
#[command(name = "histoport", version, about = "Equivariant pick-and-place on a synthetic kitting task")]
pub struct Cli {
    /// Flat JSON run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the subcommand.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (or file, for `bench`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record expert demonstrations into a dataset directory.
    GenData {
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Train a policy and write a checkpoint plus metrics.csv.
    Train {
        /// Dataset from gen-data; demos are generated in memory when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint (or the scripted expert) on held-out scenes.
    Eval(EvalArgs),
    /// Run the invariant suite.
    Check {
        /// Corrupt the regular representation to confirm the suite fails.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Parameter count and inference time across orientation counts.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "36,72,120,180")]
        ns: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Render the scene descriptor map of a checkpoint.
    VizEoh {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8)]
        stride: usize,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate the scripted expert instead of a checkpoint.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, default_value_t = 50)]
    pub episodes: usize,
}

fn out_dir(cli: &Cli, fallback: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn run_config(cli: &Cli) -> CliResult<RunConfig> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli, out: &mut impl Write) -> CliResult<()> {
    let cfg = run_config(cli)?;
    match &cli.command {
        Command::GenData { episodes } => {
            let seed = cli.seed.unwrap_or(cfg.first_demo_seed);
            gen_data(&cfg, *episodes, seed, &out_dir(cli, "data"), out)
        }
        Command::Train { data } => {
            let mut cfg = cfg;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            train_cmd(&cfg, data.as_deref(), &out_dir(cli, "run"), out)
        }
        Command::Eval(args) => eval_cmd(&cfg, args, cli.seed.unwrap_or(0), cli.out.as_deref(), out),
        Command::Check { inject_fault } => check_cmd(*inject_fault, out),
        Command::Bench { ns, repeats } => {
            let rows = run_bench(ns, *repeats, &cfg.policy(), cli.seed.unwrap_or(cfg.seed))?;
            match &cli.out {
                Some(path) => write_bench_csv(&rows, fs::File::create(path)?)?,
                None => write_bench_csv(&rows, &mut *out)?,
            }
            let rising = rows.windows(2).all(|w| w[1].median_ms >= w[0].median_ms);
            writeln!(out, "parameter counts equal across N; median time monotone in N: {rising}")?;
            Ok(())
        }
        Command::VizEoh { checkpoint, stride } => {
            viz_cmd(&cfg, checkpoint, cli.seed.unwrap_or(0), *stride, &out_dir(cli, "viz"), out)
        }
    }
}

pub fn gen_data(cfg: &RunConfig, episodes: usize, seed: u64, dir: &Path, out: &mut impl Write) -> CliResult<()> {
    let env = cfg.env();
    let demos = collect_demos(episodes, seed, &env, cfg.n)?;
    write_dataset(dir, &demos, [env.channels, env.height, env.width])?;
    let seeds: Vec<u64> = demos.iter().map(|d| d.seed).collect();
    writeln!(out, "wrote {} episodes to {} (scene seeds {seeds:?})", demos.len(), dir.display())?;
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig, data: Option<&Path>, dir: &Path, out: &mut impl Write) -> CliResult<()> {
    let env = cfg.env();
    let samples = match data {
        Some(d) => {
            let ds = read_dataset(d)?;
            if ds.dims != [cfg.channels, cfg.height, cfg.width] || ds.n != cfg.n {
                return Err(CliError::Config(format!(
                    "dataset has dims {:?} and N = {}, config has [{}, {}, {}] and N = {}",
                    ds.dims, ds.n, cfg.channels, cfg.height, cfg.width, cfg.n
                )));
            }
            ds.samples
        }
        None => samples_from_demos(&collect_demos(cfg.demos, cfg.first_demo_seed, &env, cfg.n)?),
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg).map_err(histoport::Error::from)? + "\n")?;
    let mut log = csv::Writer::from_path(dir.join("metrics.csv"))?;
    let mut write_err = None;
    let outcome = train(&cfg.train(), &env, &samples, |row| {
        let r = log.serialize(row).and_then(|_| log.flush().map_err(csv::Error::from));
        if let Err(e) = r {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    let notes = json!({
        "best_iteration": outcome.best_iteration,
        "best_success_rate": outcome.best_success,
        "samples": samples.len(),
    });
    save_checkpoint(&dir.join("checkpoint"), &outcome.best, cfg.seed, notes)?;
    match outcome.best_success {
        Some(s) => writeln!(out, "best success {s:.1}/100 at iteration {}", outcome.best_iteration)?,
        None => writeln!(out, "trained {} iterations without evaluation", cfg.iterations)?,
    }
    writeln!(out, "checkpoint written to {}", dir.join("checkpoint").display())?;
    Ok(())
}

fn report_csv(report: &EvalReport) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(report)?;
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

pub fn eval_cmd(cfg: &RunConfig, args: &EvalArgs, seed: u64, csv_path: Option<&Path>, out: &mut impl Write) -> CliResult<()> {
    let report = if args.oracle {
        evaluate(&OraclePolicy { n: cfg.n }, &cfg.env(), args.episodes, seed)?
    } else {
        let dir = args.checkpoint.as_ref().expect("clap requires a checkpoint without --oracle");
        let (bundle, _) = load_checkpoint(dir)?;
        let p = &bundle.config;
        let env = histoport::EnvConfig {
            height: p.height,
            width: p.width,
            channels: p.channels,
            ..cfg.env()
        };
        evaluate(&bundle, &env, args.episodes, seed)?
    };
    writeln!(
        out,
        "success {:.1}/100 ({}/{} episodes), mean translation error {:.3} px, mean rotation error {:.4} rad, {:.3} s per inference",
        report.success_rate,
        report.successes,
        report.episodes,
        report.mean_translation_error,
        report.mean_rotation_error,
        report.mean_inference_seconds
    )?;
    let text = report_csv(&report)?;
    match csv_path {
        Some(p) => fs::write(p, &text)?,
        None => write!(out, "{text}")?,
    }
    Ok(())
}

pub fn check_cmd(inject_fault: bool, out: &mut impl Write) -> CliResult<()> {
    let results = run_checks(Faults { corrupt_regular: inject_fault });
    write!(out, "{}", format_table(&results))?;
    let failed: Vec<_> = results.iter().filter(|r| !r.passed()).collect();
    if failed.is_empty() {
        return Ok(());
    }
    let names: Vec<String> = failed.iter().map(|r| format!("{} (residual {:.3e})", r.name, r.residual)).collect();
    Err(CliError::Invariant(names.join(", ")))
}

pub fn viz_cmd(cfg: &RunConfig, checkpoint: &Path, seed: u64, stride: usize, dir: &Path, out: &mut impl Write) -> CliResult<()> {
    let (bundle, _) = load_checkpoint(checkpoint)?;
    let p = &bundle.config;
    let env = histoport::EnvConfig {
        height: p.height,
        width: p.width,
        channels: p.channels,
        ..cfg.env()
    };
    let scene = generate_episode(seed, &env)?;
    let obs = DiffTensor::constant(&[env.channels, env.height, env.width], render_observation(&scene, env.channels))?;
    let map = histoport::tensor::no_grad(|| bundle.scene_descriptors(&obs))?;
    let &[bins, h, w] = map.shape() else {
        return Err(CliError::Invariant(format!("descriptor map has shape {:?}", map.shape())));
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join("eoh_heatmap.ppm"), heatmap_ppm(map.data(), bins, h, w))?;
    fs::write(dir.join("eoh_arrows.svg"), arrows_svg(map.data(), bins, h, w, stride))?;
    writeln!(out, "wrote {h}x{w} heatmap and {bins}-bin arrows to {}", dir.display())?;
    Ok(())
}
