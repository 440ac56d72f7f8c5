//! Batch command-line interface over datasets, training runs, checkpoints,
//! and reports.
//!
//! Five subcommands: `demo` records scripted-expert datasets, `train` runs
//! the imitation loop from a TOML run file, `eval` compares a checkpoint (or
//! the scripted expert itself) against recorded demonstrations, `ablate`
//! sweeps the compared variants, and `inspect-memory` dumps per-step
//! attention diagnostics for one demonstration.
//!
//! Relative OUTPUT paths land under `MAGAIL_RUN_DIR` when that variable is
//! set; input paths are taken as given. Flags win over run-file fields.
//! Every command is deterministic under a fixed seed. Exit codes: 2 config
//! or schema violations, 3 missing dataset, 4 checkpoint problems, 5 index
//! out of range, 1 anything else.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::agents::{embed, LOCAL_PREFIX};
use crate::error::{Error, Result};
use crate::evaluation::{self, BinConfig};
use crate::laneworld::{record_demos, replay, Dataset, Persona, TrackSpec, Trajectory};
use crate::memory::{self, MemoryConfig, MemoryState};
use crate::training::{
    ablate_variant, combined_table, eval_rollouts, expert_eval_traces, load_any, load_checkpoint,
    sg_rollouts, train, Ablation, AnyModel, LoadedModel, RunFile, TrainConfig,
};

#[derive(Parser, Debug)]
#[command(
    name = "magail",
    version,
    about = "memory-augmented adversarial imitation on a two-lane driving world"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Record scripted-expert demonstrations into a dataset file.
    Demo(DemoArgs),
    /// Train from a TOML run file into a run directory.
    Train(TrainArgs),
    /// Roll out a checkpoint (or the scripted expert) and compare it against
    /// a demonstration dataset.
    Eval(EvalArgs),
    /// Train and evaluate the compared variants under one config and seed.
    Ablate(AblateArgs),
    /// Teacher-force one demonstration through a checkpoint's local memory
    /// and dump per-step attention diagnostics as CSV.
    InspectMemory(InspectMemoryArgs),
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    /// Comma-separated persona names (aggressive, yielding).
    #[arg(
        long,
        value_delimiter = ',',
        default_values_t = [String::from("aggressive"), String::from("yielding")]
    )]
    pub personas: Vec<String>,
    /// Episodes recorded per persona.
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    /// Records per trajectory.
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Run file supplying the track; the built-in track when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Run file (TOML).
    pub config: PathBuf,
    /// Demonstration dataset; overrides the run file's `dataset`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Run directory to create; overrides the run file's `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Variant switch: full, no_RA, no_local, no_global, plain_gail,
    /// bc_only, sg_only.
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to roll out.
    #[arg(long, required_unless_present = "expert", conflicts_with = "expert")]
    pub checkpoint: Option<PathBuf>,
    /// Roll out the scripted expert instead: comma-separated persona names.
    #[arg(long, value_delimiter = ',')]
    pub expert: Option<Vec<String>>,
    /// Demonstration dataset providing the comparison side and the track.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Episodes to simulate (per persona under --expert).
    #[arg(long, default_value_t = 20)]
    pub episodes: usize,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Act with the policy mean instead of sampling.
    #[arg(long)]
    pub greedy: bool,
    /// Directory for report.csv and report.txt.
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Run file (TOML); its ablation field is ignored, each compared
    /// variant runs in turn with the same seed.
    pub config: PathBuf,
    /// Demonstration dataset; overrides the run file's `dataset`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output root: one subdirectory per variant plus ablation.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaluation episodes per variant.
    #[arg(long, default_value_t = 20)]
    pub episodes: usize,
    /// Evaluation steps per episode; the config horizon when omitted.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct InspectMemoryArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Trajectory index within the dataset.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses the process arguments, runs the chosen command, and maps errors
/// to the documented exit codes.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Demo(args) => cmd_demo(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Ablate(args) => cmd_ablate(&args),
        Command::InspectMemory(args) => cmd_inspect_memory(&args),
    }
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => 2,
        Error::DatasetMissing { .. } => 3,
        Error::Checkpoint { .. } => 4,
        Error::IndexOutOfRange { .. } => 5,
        _ => 1,
    }
}

/// Prints to stdout, treating a closed pipe downstream (`magail ... | head`)
/// as the consumer being done rather than a failure.
fn emit(text: &str) {
    use std::io::Write as _;
    let mut out = std::io::stdout().lock();
    if out.write_all(text.as_bytes()).and_then(|()| out.flush()).is_err() {
        std::process::exit(0);
    }
}

fn join_root(root: Option<PathBuf>, path: &Path) -> PathBuf {
    match root {
        Some(r) if path.is_relative() => r.join(path),
        _ => path.to_path_buf(),
    }
}

/// Output paths stay as given when absolute; relative ones land under
/// `MAGAIL_RUN_DIR` when set, the working directory otherwise.
fn resolve_out(path: &Path) -> PathBuf {
    let root = std::env::var_os("MAGAIL_RUN_DIR")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from);
    join_root(root, path)
}

fn load_run_file(path: &Path) -> Result<RunFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunFile::from_toml(&text)
}

fn parse_personas(names: &[String]) -> Result<Vec<Persona>> {
    if names.is_empty() {
        return Err(Error::EmptyInput { what: "persona list" });
    }
    names.iter().map(|n| Persona::by_name(n)).collect()
}

fn pick_path(flag: Option<PathBuf>, config: Option<PathBuf>, field: &str) -> Result<PathBuf> {
    flag.or(config).ok_or_else(|| {
        Error::config(field, format!("no {field} path given (flag --{field} or run file `{field}`)"))
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_demo(args: &DemoArgs) -> Result<()> {
    let spec = match &args.config {
        Some(path) => load_run_file(path)?.track,
        None => TrackSpec::default_track(),
    };
    let personas = parse_personas(&args.personas)?;
    let out = resolve_out(&args.out);
    let dataset = record_demos(&spec, &personas, args.episodes, args.steps, args.seed, &out)?;
    emit(&format!("wrote {} trajectories to {}\n", dataset.len(), out.display()));
    Ok(())
}

fn default_run_dir(cfg: &TrainConfig) -> PathBuf {
    PathBuf::from(format!("runs/{}-seed{}", cfg.ablation.name(), cfg.seed))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut run = load_run_file(&args.config)?;
    if let Some(name) = &args.ablation {
        run.train.ablation = Ablation::parse(name)?;
    }
    if let Some(seed) = args.seed {
        run.train.seed = seed;
    }
    if let Some(iterations) = args.iterations {
        run.train.iterations = iterations;
    }
    let dataset = pick_path(args.dataset.clone(), run.dataset.clone(), "dataset")?;
    let out = args
        .out
        .clone()
        .or_else(|| run.out.clone())
        .unwrap_or_else(|| default_run_dir(&run.train));
    let outcome = train(&run.train, &run.track, &dataset, &resolve_out(&out))?;
    if let Some(bc) = &outcome.bc {
        emit(&format!(
            "cloning holdout mse {:.6e} -> {:.6e} over {} epochs\n",
            bc.initial_holdout_mse, bc.final_holdout_mse, bc.epochs_run
        ));
    }
    if let Some(last) = outcome.rows.last() {
        emit(&format!(
            "iteration {}: mean critic score {:.6e}, mean dispersion {:.6e}\n",
            last.iteration, last.mean_score, last.mean_dispersion
        ));
    }
    emit(&format!("run directory {}\n", outcome.run_dir.display()));
    emit(&format!("checkpoint {}\n", outcome.checkpoint.display()));
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let dataset = Dataset::load(&args.dataset)?;
    let expert_traces = replay(&dataset)?;
    let spec = dataset.header.track.clone();
    let model_traces = match (&args.checkpoint, &args.expert) {
        (Some(path), None) => match load_any(path)? {
            AnyModel::Policy(model) => eval_rollouts(
                &model.store,
                &spec,
                model.dims,
                model.uses_local,
                model.uses_global,
                &model.global,
                args.episodes,
                args.steps,
                args.seed,
                args.greedy,
            )?,
            AnyModel::StaticGaussian { mean, std, .. } => {
                // Zero spread collapses every draw to the mean action.
                let std = if args.greedy { vec![0.0; std.len()] } else { std };
                sg_rollouts(&spec, &mean, &std, args.episodes, args.steps, args.seed)?
            }
        },
        (None, Some(names)) => {
            let personas = parse_personas(names)?;
            expert_eval_traces(&spec, &personas, args.episodes, args.steps, args.seed)?
        }
        _ => unreachable!("the parser enforces exactly one of --checkpoint/--expert"),
    };
    let report = evaluation::report(&model_traces, &expert_traces, BinConfig::default())?;
    let out = resolve_out(&args.out);
    write_text(&out.join("report.csv"), &report.to_csv())?;
    write_text(&out.join("report.txt"), &report.to_table())?;
    emit(&report.to_table());
    emit(&format!("report files in {}\n", out.display()));
    Ok(())
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let run = load_run_file(&args.config)?;
    let dataset_path = pick_path(args.dataset.clone(), run.dataset.clone(), "dataset")?;
    let out_root = resolve_out(
        &args.out.clone().or_else(|| run.out.clone()).unwrap_or_else(|| PathBuf::from("ablation")),
    );
    let steps = args.steps.unwrap_or(run.train.horizon);
    let dataset = Dataset::load(&dataset_path)?;
    let expert = replay(&dataset)?;
    let mut outcomes = Vec::new();
    for variant in Ablation::COMPARED {
        emit(&format!("training variant {}\n", variant.name()));
        let dir = out_root.join(variant.name());
        let outcome = ablate_variant(
            &run.train,
            &run.track,
            &dataset_path,
            &expert,
            variant,
            &dir,
            args.episodes,
            steps,
        )
        .map_err(|e| {
            eprintln!("variant {} failed", variant.name());
            e
        })?;
        outcomes.push(outcome);
    }
    let table = combined_table(&outcomes);
    let table_path = out_root.join("ablation.csv");
    write_text(&table_path, &table)?;
    emit(&table);
    emit(&format!("combined table {}\n", table_path.display()));
    Ok(())
}

/// Per-record local-memory diagnostics for one demonstration: attention
/// entropy, the most-attended slot (first on ties), and the read dispersion
/// the training penalty would see on this feature sequence. Values are
/// printed with 17 significant digits so a parse round trip is exact.
pub fn inspect_memory_csv(model: &LoadedModel, traj: &Trajectory) -> Result<String> {
    let mut local = MemoryState::fresh(MemoryConfig::new(model.dims.k_local, model.dims.l)?);
    let mut out = String::from("step,alpha_entropy,top_slot,dispersion\n");
    let mut prev: Option<Vec<f64>> = None;
    for (t, f) in traj.states.iter().enumerate() {
        let s_e = embed(&model.store, f)?;
        let (ro, next) = memory::step(&model.store, LOCAL_PREFIX, &local, &s_e)?;
        local = next;
        let alpha = ro.alpha.data();
        let entropy: f64 = -alpha.iter().filter(|a| **a > 0.0).map(|a| a * a.ln()).sum::<f64>();
        let mut top = 0;
        for (i, a) in alpha.iter().enumerate() {
            if *a > alpha[top] {
                top = i;
            }
        }
        let m = ro.m.data().to_vec();
        let disp = prev.as_deref().map_or(0.0, |p| memory::dispersion(p, &m));
        prev = Some(m);
        out.push_str(&format!("{t},{entropy:.16e},{top},{disp:.16e}\n"));
    }
    Ok(out)
}

fn cmd_inspect_memory(args: &InspectMemoryArgs) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    if !model.uses_local {
        return Err(Error::Checkpoint {
            message: "checkpoint has no local memory to inspect".to_string(),
        });
    }
    let dataset = Dataset::load(&args.dataset)?;
    let traj = dataset
        .trajectories
        .get(args.index)
        .ok_or(Error::IndexOutOfRange { index: args.index, len: dataset.len() })?;
    let csv = inspect_memory_csv(&model, traj)?;
    match &args.out {
        Some(path) => {
            let path = resolve_out(path);
            write_text(&path, &csv)?;
            emit(&format!("wrote {} rows to {}\n", traj.len(), path.display()));
        }
        None => emit(&csv),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{init_params, rollout, RolloutCtx};

    #[test]
    fn exit_codes_follow_the_documented_mapping() {
        assert_eq!(exit_code(&Error::config("discount", "x")), 2);
        assert_eq!(exit_code(&Error::DatasetMissing { path: "d.jsonl".into() }), 3);
        assert_eq!(exit_code(&Error::Checkpoint { message: "bad".into() }), 4);
        assert_eq!(exit_code(&Error::IndexOutOfRange { index: 9, len: 2 }), 5);
        assert_eq!(exit_code(&Error::EmptyInput { what: "x" }), 1);
        assert_eq!(exit_code(&Error::UnknownPersona { name: "x".into() }), 1);
    }

    #[test]
    fn relative_outputs_join_the_run_root() {
        let root = Some(PathBuf::from("/tmp/root"));
        assert_eq!(join_root(root.clone(), Path::new("runs/a")), Path::new("/tmp/root/runs/a"));
        assert_eq!(join_root(root, Path::new("/abs/x")), Path::new("/abs/x"));
        assert_eq!(join_root(None, Path::new("runs/a")), Path::new("runs/a"));
    }

    #[test]
    fn parser_accepts_the_documented_shapes() {
        let cli = Cli::try_parse_from([
            "magail", "demo", "--personas", "aggressive,yielding", "--episodes", "10", "--steps",
            "100", "--seed", "7", "--out", "d.jsonl",
        ])
        .unwrap();
        match cli.command {
            Command::Demo(a) => {
                assert_eq!(a.personas, ["aggressive", "yielding"]);
                assert_eq!(a.episodes, 10);
            }
            _ => panic!("expected demo"),
        }

        assert!(Cli::try_parse_from(["magail", "eval", "--dataset", "d.jsonl"]).is_err());
        assert!(Cli::try_parse_from([
            "magail", "eval", "--dataset", "d", "--checkpoint", "c.bin", "--expert", "aggressive",
        ])
        .is_err());
        let cli = Cli::try_parse_from([
            "magail", "eval", "--dataset", "d", "--expert", "aggressive,yielding", "--greedy",
        ])
        .unwrap();
        match cli.command {
            Command::Eval(a) => {
                assert_eq!(a.expert.unwrap().len(), 2);
                assert!(a.greedy);
                assert_eq!(a.episodes, 20);
            }
            _ => panic!("expected eval"),
        }
    }

    #[test]
    fn unknown_personas_are_rejected() {
        let err =
            parse_personas(&["aggressive".to_string(), "cautious".to_string()]).unwrap_err();
        match err {
            Error::UnknownPersona { name } => assert_eq!(name, "cautious"),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(matches!(parse_personas(&[]), Err(Error::EmptyInput { .. })));
    }

    #[test]
    fn memory_inspection_matches_the_rollout_penalty_stream() {
        let cfg = TrainConfig {
            iterations: 1,
            batch: 1,
            horizon: 8,
            slot_width: 4,
            seed: 3,
            ..TrainConfig::default()
        };
        let store = init_params(&cfg).unwrap();
        let dims = cfg.memory_dims();
        let global = MemoryState::fresh(MemoryConfig::new(dims.k_global, dims.l).unwrap());
        let spec = TrackSpec::default_track();
        let ctx = RolloutCtx {
            store: &store,
            spec: &spec,
            ablation: Ablation::Full,
            dims,
            global: &global,
            greedy: false,
        };
        let buf = rollout(&ctx, cfg.horizon, 11, 12).unwrap();
        let traj = Trajectory {
            persona: "x".to_string(),
            seed: 0,
            states: buf.steps.iter().map(|r| r.features.clone()).collect(),
            actions: vec![vec![0.0; 3]; buf.len()],
        };
        let model = LoadedModel {
            store,
            dims,
            uses_local: true,
            uses_global: true,
            global,
            iteration: 0,
        };

        let csv = inspect_memory_csv(&model, &traj).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,alpha_entropy,top_slot,dispersion");
        assert_eq!(lines.len(), 1 + cfg.horizon);

        let ln_k = (dims.k_local as f64).ln();
        for (t, line) in lines[1..].iter().enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[0].parse::<usize>().unwrap(), t);
            let entropy: f64 = cols[1].parse().unwrap();
            assert!(entropy >= -1e-9 && entropy <= ln_k + 1e-9);
            let top: usize = cols[2].parse().unwrap();
            assert!(top < dims.k_local);
            // 17 significant digits round-trip: the column must reproduce the
            // rollout's stored penalty term bit for bit.
            let disp: f64 = cols[3].parse().unwrap();
            assert_eq!(disp.to_bits(), buf.steps[t].dispersion.to_bits());
        }
        let first: Vec<&str> = lines[1].split(',').collect();
        let first_entropy: f64 = first[1].parse().unwrap();
        assert!((first_entropy - ln_k).abs() < 1e-9);
        assert_eq!(first[3].parse::<f64>().unwrap(), 0.0);
    }
}
