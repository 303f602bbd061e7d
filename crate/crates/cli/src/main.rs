//! Command-line entry point: scenario configuration, evader pretraining,
//! pursuer training with ablations, evaluation, gradient checks and plot
//! emission.

mod config;
mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::{RunConfig, KEY_HELP};
use pursuit_core::evader_policy::{pretrain, pretrain_csv, save_qtables};
use pursuit_core::gradcheck;
use pursuit_core::road_network::build_grid;
use pursuit_core::trainer::{
    self, evaluate, load_run, metrics_csv, save_run, train,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_QTABLES: u8 = 3;
const EXIT_CHECKPOINT: u8 = 4;
const EXIT_CSV: u8 = 5;

#[derive(Parser)]
#[command(
    name = "pursuit",
    about = "Team-vs-team multi-vehicle pursuit lab",
    after_help = format!(
        "EXIT CODES:\n  \
         2  invalid configuration or usage\n  \
         3  missing or unreadable evader tables\n  \
         4  corrupt run checkpoint\n  \
         5  malformed metrics CSV\n\n\
         CONFIG KEYS (flat key=value file, overridable via --set):\n{}\n\n\
         PURSUIT_SEED is used as the master seed when no config names one.",
        KEY_HELP
    )
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Ablation {
    /// Full method.
    None,
    /// Information term disabled (weight 0): plain TD training.
    NoMi,
    /// Road-topology block removed from every observation.
    NoAdj,
}

#[derive(Subcommand)]
enum Cmd {
    /// Pretrain the evading team's Q-tables against random pursuers.
    TrainEvaders {
        /// Flat key=value config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one config key, e.g. --set seed=9.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory for qtables.txt and the pretraining metrics.
        #[arg(long)]
        out: PathBuf,
        /// Also dump the lane adjacency listing to this path.
        #[arg(long)]
        dump_network: Option<PathBuf>,
    },
    /// Train the pursuing team against frozen evader tables.
    TrainPursuers {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Evader tables produced by train-evaders.
        #[arg(long)]
        qtables: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "none")]
        ablation: Ablation,
    },
    /// Greedy evaluation of one or more finished runs.
    Eval {
        /// Run directory; repeat for several methods.
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "20")]
        episodes: u32,
        /// Comma-separated evaluation seeds.
        #[arg(long)]
        seeds: String,
        #[arg(long, default_value = "1")]
        workers: usize,
        /// Write the summary table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a per-step trajectory log of the evaluated episodes.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Run every finite-difference gradient suite.
    Gradcheck,
    /// Render metrics CSV into SVG line charts.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn fail(code: u8, msg: String) -> ExitCode {
    eprintln!("error: {}", msg);
    ExitCode::from(code)
}

fn parse_overrides(set: &[String]) -> Result<Vec<(String, String)>, String> {
    set.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| format!("--set needs KEY=VALUE, got {:?}", s))
        })
        .collect()
}

fn load_config(path: &Option<PathBuf>, set: &[String]) -> Result<RunConfig, String> {
    let text = match path {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| format!("{}: {}", p.display(), e))?),
        None => None,
    };
    let env_seed = std::env::var("PURSUIT_SEED")
        .ok()
        .map(|s| s.parse::<u64>().map_err(|_| format!("PURSUIT_SEED {:?} is not an integer", s)))
        .transpose()?;
    RunConfig::from_sources(text.as_deref(), &parse_overrides(set)?, env_seed)
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::TrainEvaders {
            config,
            set,
            out,
            dump_network,
        } => cmd_train_evaders(&config, &set, &out, &dump_network),
        Cmd::TrainPursuers {
            config,
            set,
            qtables,
            out,
            ablation,
        } => cmd_train_pursuers(&config, &set, &qtables, &out, ablation),
        Cmd::Eval {
            runs,
            episodes,
            seeds,
            workers,
            out,
            trajectory,
        } => cmd_eval(&runs, episodes, &seeds, workers, &out, &trajectory),
        Cmd::Gradcheck => cmd_gradcheck(),
        Cmd::Plot { metrics, out_dir } => cmd_plot(&metrics, &out_dir),
    }
}

fn cmd_train_evaders(
    config: &Option<PathBuf>,
    set: &[String],
    out: &Path,
    dump_network: &Option<PathBuf>,
) -> ExitCode {
    let cfg = match load_config(config, set) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let net = match build_grid(cfg.rows, cfg.cols, cfg.lane_length) {
        Ok(n) => n,
        Err(e) => return fail(EXIT_CONFIG, e.to_string()),
    };
    if let Some(path) = dump_network {
        if let Err(e) = fs::write(path, net.adjacency_listing()) {
            return fail(EXIT_CONFIG, format!("{}: {}", path.display(), e));
        }
    }
    let result = match pretrain(&net, &cfg.sim, &cfg.evader) {
        Ok(r) => r,
        Err(e) => return fail(1, e.to_string()),
    };
    if let Err(e) = fs::create_dir_all(out)
        .and_then(|_| fs::write(out.join("qtables.txt"), save_qtables(&result.tables)))
        .and_then(|_| fs::write(out.join("pretrain_metrics.csv"), pretrain_csv(&result.metrics)))
        .and_then(|_| fs::write(out.join("config.txt"), cfg.to_text()))
    {
        return fail(1, e.to_string());
    }
    println!(
        "pretrained {} evader tables over {} episodes -> {}",
        result.tables.len(),
        cfg.evader.episodes,
        out.display()
    );
    ExitCode::SUCCESS
}

fn cmd_train_pursuers(
    config: &Option<PathBuf>,
    set: &[String],
    qtables: &Path,
    out: &Path,
    ablation: Ablation,
) -> ExitCode {
    let mut cfg = match load_config(config, set) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    match ablation {
        Ablation::None => {}
        Ablation::NoMi => cfg.train.mi_weight = 0.0,
        Ablation::NoAdj => cfg.train.include_adj = false,
    }
    let net = match build_grid(cfg.rows, cfg.cols, cfg.lane_length) {
        Ok(n) => n,
        Err(e) => return fail(EXIT_CONFIG, e.to_string()),
    };
    let qtext = match fs::read_to_string(qtables) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_QTABLES, format!("{}: {}", qtables.display(), e)),
    };
    let tables = match pursuit_core::evader_policy::load_qtables(&qtext, cfg.sim.num_evaders) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_QTABLES, format!("{}: {}", qtables.display(), e)),
    };
    let result = match train(&net, &cfg.sim, &cfg.train, &tables) {
        Ok(r) => r,
        Err(trainer::TrainError::Config(e)) => return fail(EXIT_CONFIG, e),
        Err(e) => return fail(1, e.to_string()),
    };
    if let Err(e) = save_run(out, &result.encoder, &result.dqn, &result.critic, &qtext, &cfg.to_text())
        .and_then(|_| {
            fs::write(out.join("metrics.csv"), metrics_csv(&result.metrics)).map_err(Into::into)
        })
    {
        return fail(1, e.to_string());
    }
    let last = result.metrics.last();
    println!(
        "trained {} episodes (final completion step {}) -> {}",
        result.metrics.len(),
        last.map_or(0, |m| m.completion_step),
        out.display()
    );
    ExitCode::SUCCESS
}

fn cmd_eval(
    runs: &[PathBuf],
    episodes: u32,
    seeds: &str,
    workers: usize,
    out: &Option<PathBuf>,
    trajectory: &Option<PathBuf>,
) -> ExitCode {
    let seed_list: Result<Vec<u64>, _> = seeds
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<u64>())
        .collect();
    let seed_list = match seed_list {
        Ok(v) if !v.is_empty() => v,
        _ => return fail(EXIT_CONFIG, format!("--seeds needs a comma-separated list, got {:?}", seeds)),
    };
    if episodes == 0 {
        return fail(EXIT_CONFIG, "--episodes must be positive".into());
    }

    let mut table = String::from(
        "method,episodes,best_return,mean_return,best_step,mean_step,capture_rate\n",
    );
    println!(
        "{:<24} {:>12} {:>12} {:>10} {:>10} {:>13}",
        "method", "best_return", "mean_return", "best_step", "mean_step", "capture_rate"
    );
    let mut trajectory_log: Option<Vec<String>> = trajectory.as_ref().map(|_| Vec::new());
    for dir in runs {
        let artifacts = match load_run(dir) {
            Ok(a) => a,
            Err(e) => return fail(EXIT_CHECKPOINT, format!("{}: {}", dir.display(), e)),
        };
        let mut kv_text = String::new();
        for (k, v) in &artifacts.config {
            kv_text.push_str(&format!("{}={}\n", k, v));
        }
        let cfg = match RunConfig::from_sources(Some(&kv_text), &[], None) {
            Ok(c) => c,
            Err(e) => return fail(EXIT_CHECKPOINT, format!("{}: config.txt: {}", dir.display(), e)),
        };
        let net = match build_grid(cfg.rows, cfg.cols, cfg.lane_length) {
            Ok(n) => n,
            Err(e) => return fail(EXIT_CHECKPOINT, e.to_string()),
        };
        let mut rows = Vec::new();
        for &seed in &seed_list {
            let summary = match evaluate(
                &net,
                &cfg.sim,
                &cfg.train,
                &artifacts,
                episodes,
                seed,
                workers,
                trajectory_log.as_mut(),
            ) {
                Ok(s) => s,
                Err(e) => return fail(EXIT_CHECKPOINT, e.to_string()),
            };
            rows.extend(summary.rows);
        }
        let n = rows.len() as f64;
        let best_return = rows.iter().map(|r| r.undiscounted).fold(f64::NEG_INFINITY, f64::max);
        let mean_return = rows.iter().map(|r| r.undiscounted).sum::<f64>() / n;
        let best_step = rows.iter().map(|r| r.completion_step).min().unwrap();
        let mean_step = rows.iter().map(|r| r.completion_step as f64).sum::<f64>() / n;
        let captured: usize = rows.iter().map(|r| r.captures).sum();
        let rate = captured as f64 / (rows.len() * cfg.sim.num_evaders) as f64;
        let method = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        println!(
            "{:<24} {:>12.3} {:>12.3} {:>10} {:>10.1} {:>13.3}",
            method, best_return, mean_return, best_step, mean_step, rate
        );
        table.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            method,
            rows.len(),
            best_return,
            mean_return,
            best_step,
            mean_step,
            rate
        ));
    }
    if let Some(path) = out {
        if let Err(e) = fs::write(path, &table) {
            return fail(1, format!("{}: {}", path.display(), e));
        }
    }
    if let (Some(path), Some(log)) = (trajectory, trajectory_log) {
        if let Err(e) = fs::write(path, log.join("\n") + "\n") {
            return fail(1, format!("{}: {}", path.display(), e));
        }
    }
    ExitCode::SUCCESS
}

fn cmd_gradcheck() -> ExitCode {
    let mut ok = true;
    for suite in gradcheck::run_all() {
        let status = if suite.passed() { "pass" } else { "FAIL" };
        println!(
            "{:<16} {:>3} instances  max rel err {:.3e}  tolerance {:.0e}  {}",
            suite.name, suite.instances, suite.max_rel_err, suite.tolerance, status
        );
        ok &= suite.passed();
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn cmd_plot(metrics: &Path, out_dir: &Path) -> ExitCode {
    let text = match fs::read_to_string(metrics) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_CSV, format!("{}: {}", metrics.display(), e)),
    };
    let rows = match plot::parse_metrics(&text) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_CSV, format!("{}: {}", metrics.display(), e)),
    };
    let episodes: Vec<f64> = rows.iter().map(|r| r.episode).collect();
    let returns: Vec<f64> = rows.iter().map(|r| r.undiscounted).collect();
    let losses: Vec<f64> = rows.iter().map(|r| r.total_loss).collect();
    let reward_svg = plot::line_chart(
        "Undiscounted return per episode",
        "episode",
        "undiscounted return",
        &episodes,
        &returns,
    );
    let loss_svg = plot::line_chart(
        "Training loss per episode",
        "episode",
        "mean batch loss",
        &episodes,
        &losses,
    );
    if let Err(e) = fs::create_dir_all(out_dir)
        .and_then(|_| fs::write(out_dir.join("reward_vs_episode.svg"), reward_svg))
        .and_then(|_| fs::write(out_dir.join("loss_vs_step.svg"), loss_svg))
    {
        return fail(1, e.to_string());
    }
    println!("wrote {}/reward_vs_episode.svg and loss_vs_step.svg", out_dir.display());
    ExitCode::SUCCESS
}
