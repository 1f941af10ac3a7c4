use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use aoii_sched::baselines::{baseline, monte_carlo_eval, PolicyKind};
use aoii_sched::experiment::{emit_csv, load_spec, run_sweep, ExperimentSpec};
use aoii_sched::mappo::{write_training_log, Checkpoint, Trainer};
use aoii_sched::oracle::{relative_value_iteration, system_mdp, value_iteration, DEFAULT_SIZE_CAP};
use aoii_sched::whittle::WhittleTable;

#[derive(Parser)]
#[command(name = "aoii-sched", version, about = "AoII-aware joint scheduling: index tables, training, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment spec (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "AOII_OUT_DIR", default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn spec(&self) -> Result<ExperimentSpec> {
        let path = self.config.as_deref().context("--config is required")?;
        let mut spec = load_spec(path).with_context(|| format!("loading {}", path.display()))?;
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        Ok(spec)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compute the Whittle index table for the spec's monitors.
    WhittleTable {
        #[command(flatten)]
        common: Common,
    },
    /// Train WI-MAPPO; writes the training log and a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides the number of training episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Precomputed index table; built from the spec if absent.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Monte-Carlo evaluation of a checkpoint or a baseline policy.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Overrides the number of evaluation episodes.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        table: Option<PathBuf>,
        /// wi-mappo | aoi-greedy | whittle-greedy | whittle-myopic | random | do-nothing
        #[arg(long, default_value = "wi-mappo")]
        policy: PolicyKind,
    },
    /// Exact value iteration and relative value iteration on a tiny system.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// AoII truncation level.
        #[arg(long, default_value_t = 20)]
        x_cap: u64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Weight sweep producing the accuracy/throughput tradeoff table.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::WhittleTable { common } => {
            let spec = common.spec()?;
            let table = spec.build_table()?;
            let path = common.out_dir()?.join("whittle_table.json");
            table.save(&path)?;
            for (k, col) in table.columns.iter().enumerate() {
                let sat = col.saturated_from.map_or("none".to_string(), |x| x.to_string());
                println!("column {k}: p={} w={} I(1)={} saturated_from={sat}", col.p, col.w, col.indices[1]);
            }
            println!("wrote {}", path.display());
        }
        Command::Train { common, episodes, table } => {
            let spec = common.spec()?;
            let out = common.out_dir()?;
            let table = Arc::new(load_or_build_table(&spec, table.as_deref())?);
            let episodes = episodes.unwrap_or(spec.train.episodes);
            let mut trainer = Trainer::new(spec.system.clone(), spec.train.hyperparams.clone(), table, spec.seed)?;
            let logs = trainer.train(episodes, |l| {
                eprintln!(
                    "episode {:>4}  reward {:>10.4}  accuracy {:.4}  throughput {:.4}  entropy {:.3}",
                    l.episode, l.mean_reward, l.mean_accuracy, l.mean_throughput, l.entropy_mean
                )
            })?;
            write_training_log(&logs, fs::File::create(out.join("training_log.csv"))?)?;
            trainer.checkpoint().save(&out.join("checkpoint.json"))?;
            println!("wrote {}", out.display());
        }
        Command::Evaluate {
            common,
            episodes,
            checkpoint,
            table,
            policy,
        } => {
            let (cfg, eval, seed, mut pol): (_, _, _, Box<dyn aoii_sched::SchedulingPolicy>) = match policy {
                PolicyKind::WiMappo => {
                    let path = checkpoint.context("--checkpoint is required for wi-mappo")?;
                    let ckpt = Checkpoint::load(&path)?;
                    let spec = common.config.as_ref().map(|_| common.spec()).transpose()?;
                    let eval = spec.as_ref().map(|s| s.eval.clone()).unwrap_or_default();
                    let seed = common.seed.or(spec.as_ref().map(|s| s.seed)).unwrap_or(0);
                    (ckpt.system.clone(), eval.clone(), seed, Box::new(ckpt.policy(eval.mode)))
                }
                kind => {
                    let spec = common.spec()?;
                    let table = Arc::new(load_or_build_table(&spec, table.as_deref())?);
                    let pol = baseline(kind, &spec.system, Some(table))?;
                    (spec.system.clone(), spec.eval.clone(), spec.seed, pol)
                }
            };
            let episodes = episodes.unwrap_or(eval.episodes);
            let metrics = monte_carlo_eval(pol.as_mut(), &cfg, episodes, eval.horizon, aoii_sched::experiment::eval_seed(seed))?;
            let text = serde_json::to_string_pretty(&metrics)?;
            println!("{text}");
            let path = common.out_dir()?.join(format!("eval_{policy}.json"));
            fs::write(&path, text)?;
        }
        Command::Oracle { common, x_cap, tol } => {
            let spec = common.spec()?;
            let sys = system_mdp(&spec.system, x_cap, DEFAULT_SIZE_CAP)?;
            let vi = value_iteration(&sys.mdp, spec.system.discount, tol, 10_000_000)?;
            let rvi = relative_value_iteration(&sys.mdp, tol, 10_000_000)?;
            println!("states {}  discounted iterations {}  average gain {:.6}", sys.states.len(), vi.iterations, rvi.gain);
            let path = common.out_dir()?.join("oracle.csv");
            let mut w = std::io::BufWriter::new(fs::File::create(&path)?);
            let s0 = &sys.states[0];
            let mut header = vec!["state".to_string()];
            header.extend((1..=s0.aoii.len()).map(|i| format!("x_{i}")));
            header.extend((0..s0.gains.rows() * s0.gains.cols()).map(|k| format!("g_{k}")));
            header.extend((1..=s0.release.len()).map(|m| format!("b_{m}")));
            header.extend(["vi_value", "vi_action", "rvi_bias", "rvi_action"].map(String::from));
            writeln!(w, "{}", header.join(","))?;
            let fmt_action = |k: usize| {
                sys.joint_actions[k]
                    .entries()
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            for (s, state) in sys.states.iter().enumerate() {
                let mut row = vec![s.to_string()];
                row.extend(state.aoii.iter().map(u64::to_string));
                row.extend(state.gains.as_slice().iter().map(usize::to_string));
                row.extend(state.release.iter().map(u32::to_string));
                row.push(vi.values[s].to_string());
                row.push(fmt_action(vi.policy[s]));
                row.push(rvi.bias[s].to_string());
                row.push(fmt_action(rvi.policy[s]));
                writeln!(w, "{}", row.join(","))?;
            }
            w.flush()?;
            println!("wrote {}", path.display());
        }
        Command::Sweep { common, episodes } => {
            let mut spec = common.spec()?;
            if let Some(e) = episodes {
                spec.train.episodes = e;
            }
            let rows = run_sweep(&spec)?;
            let path = common.out_dir()?.join("sweep.csv");
            emit_csv(&rows, &path)?;
            for r in &rows {
                println!(
                    "{:>5} {:>15}  accuracy {:.4} ± {:.4}  throughput {:.4} ± {:.4}",
                    r.multiplier, r.policy, r.accuracy, r.accuracy_se, r.throughput, r.throughput_se
                );
            }
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn load_or_build_table(spec: &ExperimentSpec, path: Option<&Path>) -> Result<WhittleTable> {
    let table = match path {
        Some(p) => WhittleTable::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => spec.build_table()?,
    };
    if table.num_devices() != spec.system.num_monitors() {
        bail!(
            "table covers {} monitors, spec has {}",
            table.num_devices(),
            spec.system.num_monitors()
        );
    }
    Ok(table)
}
