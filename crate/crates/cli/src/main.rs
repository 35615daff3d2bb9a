use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use railmarl::comm::{comm_env, round_histogram, success_rate, train_comm, transcript_variability, CommRun};
use railmarl::config::RunConfig;
use railmarl::env::EnvState;
use railmarl::error::{Error, Result};
use railmarl::gen::{generate_env, GeneratorParams};
use railmarl::metrics::{run_ablation_seeds, AblationAxis};
use railmarl::net::{load_checkpoint, save_checkpoint, CheckpointMeta};
use railmarl::obs::OBS_DIM;
use railmarl::render::render_frame;
use railmarl::replay::{env_from_text, env_to_text, record_episode, replay, Replay};
use railmarl::trainer::{train_with, EvalMode, EvalRecord, EvalStats, NetPolicy, TrainerConfig};

/// Output directory override, taking precedence over flags and config.
const OUT_ENV: &str = "RAILMARL_OUT";

#[derive(Parser, Debug)]
#[command(name = "railmarl", version, about = "Multi-agent train rescheduling lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug)]
struct OutArg {
    /// Output directory (overridden by RAILMARL_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an environment file.
    GenEnv {
        #[arg(long, default_value_t = 25)]
        width: usize,
        #[arg(long, default_value_t = 25)]
        height: usize,
        #[arg(long, default_value_t = 4)]
        agents: usize,
        #[arg(long, default_value_t = 4)]
        hubs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        mixed_speeds: bool,
        /// Write the fixed two-train communication layout instead.
        #[arg(long)]
        comm_layout: bool,
        /// Destination file, or a directory to receive `env.txt`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the actor-critic.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
    /// Evaluate a checkpoint on environment files, keeping a replay of each episode.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        envs: Vec<PathBuf>,
        #[arg(long, default_value = "sample")]
        mode: EvalMode,
        /// Let the policy act at every step instead of decision points only.
        #[arg(long)]
        no_masking: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Run the two-train communication experiment.
    CommTrain {
        #[arg(long)]
        config: PathBuf,
        /// Train with communication symbols masked out.
        #[arg(long)]
        no_comm: bool,
        #[command(flatten)]
        out: OutArg,
    },
    /// Verify a replay file and print its frames.
    Replay {
        #[arg(long)]
        file: PathBuf,
        /// Print every frame, not just the first and last.
        #[arg(long)]
        frames: bool,
    },
    /// Draw an environment or replay file as ASCII frames.
    Render {
        #[arg(long)]
        file: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
    /// Train both variants of an ablation over several seeds.
    Ablation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "masking")]
        axis: AblationAxis,
        #[arg(long)]
        budget: u64,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[command(flatten)]
        out: OutArg,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Format(_) | Error::Json(_) | Error::Grid(_) => 1,
        Error::Gen(railmarl::error::GenError::InvalidParams(_)) => 1,
        _ => 2,
    }
}

fn out_dir(flag: &OutArg, config: Option<&RunConfig>) -> Result<PathBuf> {
    let dir = std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .or_else(|| flag.out.clone())
        .or_else(|| config.and_then(|c| c.out_dir.clone()))
        .ok_or_else(|| Error::Config(format!("no output directory: pass --out or set {OUT_ENV}")))?;
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenEnv {
            width,
            height,
            agents,
            hubs,
            seed,
            mixed_speeds,
            comm_layout,
            out,
        } => {
            let env = if comm_layout {
                comm_env(seed)
            } else {
                let mut p = GeneratorParams::new(width, height, agents, hubs, seed);
                p.mixed_speeds = mixed_speeds;
                generate_env(&p)?
            };
            let path = if out.is_dir() { out.join("env.txt") } else { out };
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            let text = env_to_text(&env);
            // reload to make sure the file is what the validator accepts
            let back = env_from_text(&text)?;
            fs::write(&path, &text)?;
            println!(
                "{}: {}x{} grid, {} rail cells, {} agents, max_steps {}, grid digest {:016x}: valid",
                path.display(),
                back.grid.width(),
                back.grid.height(),
                back.grid.rail_cells().count(),
                back.n_agents(),
                back.max_steps,
                back.grid.digest()
            );
            Ok(())
        }
        Command::Train { config, out } => cmd_train(&config, &out),
        Command::Eval {
            checkpoint,
            envs,
            mode,
            no_masking,
            seed,
            out,
        } => cmd_eval(&checkpoint, &envs, mode, !no_masking, seed, &out),
        Command::CommTrain { config, no_comm, out } => cmd_comm(&config, no_comm, &out),
        Command::Replay { file, frames } => {
            let r = Replay::from_text(&read_text(&file)?)?;
            let states = replay(&r)?;
            let last = states.last().expect("initial state present");
            for (i, s) in states.iter().enumerate() {
                if frames || i == 0 || i + 1 == states.len() {
                    print!("{}", render_frame(s));
                    println!();
                }
            }
            println!(
                "replay ok: {} steps, {}/{} arrived, final digest {:016x}",
                r.steps.len(),
                last.arrived_count(),
                last.n_agents(),
                last.dynamic_digest()
            );
            Ok(())
        }
        Command::Render { file, out } => {
            let text = read_text(&file)?;
            let states: Vec<EnvState> = if text.starts_with("railreplay") {
                replay(&Replay::from_text(&text)?)?
            } else {
                vec![env_from_text(&text)?]
            };
            let mut frames = String::new();
            for s in &states {
                frames.push_str(&render_frame(s));
                frames.push('\n');
            }
            print!("{frames}");
            if out.out.is_some() || std::env::var_os(OUT_ENV).is_some() {
                fs::write(out_dir(&out, None)?.join("frames.txt"), frames)?;
            }
            Ok(())
        }
        Command::Ablation {
            config,
            axis,
            budget,
            seeds,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            if seeds.is_empty() {
                return Err(Error::Config("at least one seed is needed".into()));
            }
            let dir = out_dir(&out, Some(&cfg))?;
            fs::write(dir.join("config.resolved.json"), cfg.resolved_json())?;
            let summary = run_ablation_seeds(&cfg.trainer, axis, budget, &seeds)?;
            fs::write(dir.join("ablation.csv"), summary.to_csv())?;
            write_json(&dir.join("ablation.json"), &summary)?;
            print!("{}", summary.summary_text());
            Ok(())
        }
    }
}

fn checkpoint_meta(t: &TrainerConfig, decision_steps: u64) -> CheckpointMeta {
    CheckpointMeta {
        gamma: t.gamma,
        lr: t.lr,
        entropy_coef: t.entropy_coef,
        value_coef: t.value_coef,
        decision_steps,
    }
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    decision_steps: u64,
    episodes: u64,
    final_stage: usize,
    final_eval: Option<&'a EvalRecord>,
}

fn cmd_train(config: &Path, out: &OutArg) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let dir = out_dir(out, Some(&cfg))?;
    fs::write(dir.join("config.resolved.json"), cfg.resolved_json())?;
    let t = &cfg.trainer;
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let hook = |rec: &EvalRecord, params: &railmarl::net::NetworkParams| -> Result<()> {
        let path = ckpt_dir.join(format!("step_{:010}.ckpt", rec.decision_steps));
        save_checkpoint(&path, params, &checkpoint_meta(t, rec.decision_steps))
    };
    let outcome = train_with(t, Some(&hook))?;
    fs::write(dir.join("metrics.csv"), outcome.metrics.to_csv())?;
    fs::write(dir.join("timing.csv"), outcome.metrics.timing_csv())?;
    save_checkpoint(
        &dir.join("final.ckpt"),
        &outcome.params,
        &checkpoint_meta(t, outcome.decision_steps),
    )?;
    let summary = TrainSummary {
        decision_steps: outcome.decision_steps,
        episodes: outcome.episodes,
        final_stage: outcome.final_stage,
        final_eval: outcome.metrics.last(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    if let Some(r) = outcome.metrics.last() {
        println!(
            "trained {} decisions over {} episodes; arrival rate {:.3}, mean return {:.3}",
            outcome.decision_steps, outcome.episodes, r.arrival_rate, r.mean_return
        );
    }
    Ok(())
}

fn cmd_eval(checkpoint: &Path, envs: &[PathBuf], mode: EvalMode, masking: bool, seed: u64, out: &OutArg) -> Result<()> {
    let (params, _) = load_checkpoint(checkpoint).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read {}: {io}", checkpoint.display())),
        other => other,
    })?;
    if params.spec().input_dim != OBS_DIM {
        return Err(Error::Config(format!(
            "checkpoint expects {} inputs, the rail observation has {OBS_DIM}",
            params.spec().input_dim
        )));
    }
    let mut loaded = Vec::with_capacity(envs.len());
    for p in envs {
        loaded.push(env_from_text(&read_text(p)?)?);
    }
    let dir = out_dir(out, None)?;
    let replay_dir = dir.join("replays");
    fs::create_dir_all(&replay_dir)?;
    let mut policy = NetPolicy::new(&params, mode, seed);
    let mut episodes = Vec::with_capacity(loaded.len());
    for (i, env) in loaded.iter().enumerate() {
        let mut env = env.clone();
        let (stats, rep) = record_episode(&mut env, &mut policy, masking)?;
        fs::write(replay_dir.join(format!("episode_{i:04}.replay")), rep.to_text())?;
        episodes.push(stats);
    }
    let stats = EvalStats::from_episodes(episodes);
    let mut csv = String::from("env,agents,arrived,steps,decisions,mean_return\n");
    for (p, e) in envs.iter().zip(&stats.episodes) {
        csv.push_str(&format!(
            "{},{},{},{},{},{:.6}\n",
            p.display(),
            e.n_agents,
            e.arrived,
            e.steps,
            e.decisions,
            e.mean_return()
        ));
    }
    fs::write(dir.join("eval.csv"), csv)?;
    fs::write(
        dir.join("eval_summary.csv"),
        format!(
            "mode,masking,episodes,arrival_rate,mean_return\n{},{},{},{:.6},{:.6}\n",
            mode,
            masking,
            stats.episodes.len(),
            stats.arrival_rate,
            stats.mean_return
        ),
    )?;
    println!(
        "{} episodes, mode {mode}: arrival rate {:.3}, mean return {:.3}",
        stats.episodes.len(),
        stats.arrival_rate,
        stats.mean_return
    );
    Ok(())
}

#[derive(Serialize)]
struct CommSummary {
    episodes: u64,
    comm_enabled: bool,
    trailing_window: usize,
    trailing_success: f64,
    round_histogram: Vec<(u32, usize)>,
    transcript_variability: Option<f64>,
    forced_endings: usize,
}

fn cmd_comm(config: &Path, no_comm: bool, out: &OutArg) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if no_comm {
        cfg.comm.comm_enabled = false;
    }
    let dir = out_dir(out, Some(&cfg))?;
    fs::write(dir.join("config.resolved.json"), cfg.resolved_json())?;
    let c = &cfg.comm;
    let run: CommRun = train_comm(c)?;
    fs::write(dir.join("curve.csv"), run.curve_csv())?;
    fs::write(dir.join("transcripts.tsv"), run.transcript_text())?;
    let hist = round_histogram(&run.log, c.window);
    let mut hcsv = String::from("rounds,episodes\n");
    for (r, n) in &hist {
        hcsv.push_str(&format!("{r},{n}\n"));
    }
    fs::write(dir.join("rounds.csv"), hcsv)?;
    save_checkpoint(
        &dir.join("comm.ckpt"),
        &run.params,
        &CheckpointMeta {
            gamma: c.gamma,
            lr: c.lr,
            entropy_coef: c.entropy_coef,
            value_coef: c.value_coef,
            decision_steps: 0,
        },
    )?;
    let summary = CommSummary {
        episodes: c.episodes,
        comm_enabled: c.comm_enabled,
        trailing_window: c.window,
        trailing_success: success_rate(&run.log, c.window),
        round_histogram: hist.into_iter().collect(),
        transcript_variability: transcript_variability(&run.log, c.window),
        forced_endings: run.log.iter().filter(|t| t.forced).count(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "{} episodes, comm {}: trailing-{} success {:.3}",
        c.episodes,
        if c.comm_enabled { "on" } else { "off" },
        c.window,
        summary.trailing_success
    );
    Ok(())
}
