use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hacman::hacman::threads_from_env;
use hacman::harness::critic_map::dump_critic_map;
use hacman::harness::eval::{eval_checkpoint, transcript, write_report, write_transcript};
use hacman::harness::gradcheck::{all_pass, run_suite, SuiteOptions};
use hacman::harness::{run_training, RunConfig};
use hacman::pointcloud::Seg;
use hacman::baselines::AgentKind;
use hacman::TaskVariant;

#[derive(Parser)]
#[command(name = "hacman", version, about = "Train and evaluate planar pushing agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Total environment steps.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Expected agent kind; a checkpoint of another kind is an error.
        #[arg(long)]
        agent: Option<AgentKind>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// `easy`, `hard` or `object_set/init_mode/goal_mode`; defaults to the training variant.
        #[arg(long)]
        variant: Option<TaskVariant>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path (default: `<checkpoint>.eval.json`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-step records as JSON lines.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every architecture.
    Gradcheck {
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Write per-point actor and critic maps of one reset observation.
    DumpCriticMap {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn train(config: &Path, seed: Option<u64>, steps: Option<usize>, out: Option<PathBuf>) -> ExitCode {
    if !config.is_file() {
        return fail(2, format!("config file not found: {}", config.display()));
    }
    let mut cfg = match RunConfig::load(config) {
        Ok(c) => c,
        Err(e) => return fail(1, e),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = steps {
        cfg.train.total_env_steps = n;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    match run_training(&cfg, threads_from_env()) {
        Ok(outcome) => {
            let s = &outcome.summary;
            println!(
                "trained {} for {} steps ({} episodes, {} critic / {} actor updates)",
                cfg.agent, s.env_steps, s.episodes, s.critic_updates, s.actor_updates
            );
            if let Some(e) = &s.last_eval {
                println!("last eval success {:.3} +/- {:.3}", e.success_rate, e.success_std_error);
            }
            println!("checkpoint {}", outcome.final_checkpoint.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(1, e),
    }
}

fn eval(
    checkpoint: &Path,
    agent_kind: Option<AgentKind>,
    episodes: usize,
    variant: Option<TaskVariant>,
    seed: u64,
    out: Option<PathBuf>,
    transcript_path: Option<PathBuf>,
) -> ExitCode {
    let (report, agent, env) = match eval_checkpoint(checkpoint, agent_kind, episodes, variant, seed, threads_from_env()) {
        Ok(r) => r,
        Err(e) => return fail(1, e),
    };
    println!("{}", report.summary_line());
    let out = out.unwrap_or_else(|| with_suffix(checkpoint, ".eval.json"));
    if let Err(e) = write_report(&out, &report) {
        return fail(1, e);
    }
    if let Some(p) = transcript_path {
        let res = transcript(&agent, &env, report.variant, episodes, seed).and_then(|t| write_transcript(&p, &t));
        if let Err(e) = res {
            return fail(1, e);
        }
    }
    ExitCode::SUCCESS
}

fn gradcheck(seeds: u64, inject_fault: bool) -> ExitCode {
    let opts = SuiteOptions { seeds: (0..seeds).collect(), inject_fault, ..SuiteOptions::default() };
    let cases = match run_suite(&opts) {
        Ok(c) => c,
        Err(e) => return fail(1, e),
    };
    for c in &cases {
        println!(
            "{:<32} {:<6} seed {:<4} max rel {:.3e}  max abs {:.3e}  worst {}  {}",
            c.architecture,
            c.role.name(),
            c.seed,
            c.report.max_rel_error,
            c.report.max_abs_error,
            c.report.worst_parameter,
            if c.report.passes(opts.tolerance) { "ok" } else { "FAIL" }
        );
    }
    if all_pass(&cases, opts.tolerance) {
        println!("{} checks passed", cases.len());
        ExitCode::SUCCESS
    } else {
        for c in cases.iter().filter(|c| !c.report.passes(opts.tolerance)) {
            eprintln!("failed: {} {} seed {} at {}", c.architecture, c.role.name(), c.seed, c.report.worst_parameter);
        }
        ExitCode::from(1)
    }
}

fn dump(checkpoint: &Path, seed: u64, out: &Path) -> ExitCode {
    match dump_critic_map(checkpoint, seed, out) {
        Ok(rows) => {
            let n_obj = rows.iter().filter(|r| r.seg == Seg::Object).count();
            println!("wrote {} rows ({} object) to {}", rows.len(), n_obj, out.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(1, e),
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Train { config, seed, steps, out } => train(&config, seed, steps, out),
        Command::Eval { checkpoint, agent, episodes, variant, seed, out, transcript } => {
            eval(&checkpoint, agent, episodes, variant, seed, out, transcript)
        }
        Command::Gradcheck { seeds, inject_fault } => gradcheck(seeds, inject_fault),
        Command::DumpCriticMap { checkpoint, seed, out } => dump(&checkpoint, seed, &out),
    }
}
