//! End-to-end runs: parameter initialization, the adversarial training loop,
//! checkpoint files, evaluation rollouts, and the ablation sweep.
//!
//! A run directory is laid out as `config.toml` (the resolved run file),
//! `demos.txt` (the dataset path), `metrics.csv` (one row per iteration,
//! flushed as it is written), and `checkpoints/` with periodic snapshots and
//! a `final.bin`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::{critic_update, init_critic_params, CriticBatch, CRITIC_HIDDEN};
use crate::agents::{
    augment, bc_train, embed, init_embed_params, init_policy_params, BcConfig, BcReport,
    MemoryDims, EMBED_HIDDEN, GLOBAL_PREFIX, LOCAL_PREFIX, POLICY_HIDDEN,
};
use crate::error::{Error, Result};
use crate::evaluation::{self, BinConfig, MetricsReport};
use crate::laneworld::{
    replay, reset, run_expert_episode, step, Action, Dataset, Events, Persona, SimTrace,
    TrackSpec, Trajectory, ACTION_DIM, DT, FEATURE_DIM,
};
use crate::memory::{self, init_memory_params, MemoryConfig, MemoryState};
use crate::numerics::checkpoint::{self, Meta};
use crate::numerics::rng::{derive_seed, tags};
use crate::numerics::{OptState, ParamStore, RngStream, Tensor};
use crate::training::config::{Ablation, TrainConfig};
use crate::training::rollout::{
    advantages, compute_rewards, normalize_advantages, preload_global, rollout, RolloutBuffer,
    RolloutCtx,
};
use crate::training::update::policy_update;

/// Memory controllers start small but nonzero. All-zero controllers are a
/// fixed point of the write path: an empty memory reads out zero, the write
/// controller then sees only zeros, and no gradient ever leaves that state.
pub const CTRL_INIT_STD: f64 = 0.1;

pub const RUN_SCHEMA_VERSION: u32 = 1;
const CHECKPOINT_KIND: &str = "magail";
const SG_KIND: &str = "static_gaussian";
const GLOBAL_STATE_PREFIX: &str = "global_state/";
const METRICS_HEADER: &str =
    "iteration,mean_score,mean_dispersion,lane_changes,offroad_steps,hard_brakes,collisions,traverse_m";

/// On-disk run description: the training section plus the track, with
/// optional default paths. Command-line flags win over the path fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub schema_version: u32,
    /// Demonstration dataset consumed by train/ablate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Output directory for train/ablate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "TrackSpec::default_track")]
    pub track: TrackSpec,
}

impl Default for RunFile {
    fn default() -> Self {
        RunFile {
            schema_version: RUN_SCHEMA_VERSION,
            dataset: None,
            out: None,
            train: TrainConfig::default(),
            track: TrackSpec::default_track(),
        }
    }
}

impl RunFile {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != RUN_SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("expected {RUN_SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        self.train.validate()?;
        self.track.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: RunFile =
            toml::from_str(text).map_err(|e| Error::config("run file", e.to_string()))?;
        file.validate()?;
        Ok(file)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config("run file", e.to_string()))
    }
}

/// Fresh parameters for every module, drawn from one seeded stream in a
/// fixed order: embedding, policy, local memory, global memory, critic.
pub fn init_params(cfg: &TrainConfig) -> Result<ParamStore> {
    let dims = cfg.memory_dims();
    let mut store = ParamStore::new();
    let mut rng = RngStream::from_tags(cfg.seed, &[tags::PARAM_INIT]);
    init_embed_params(&mut store, &mut rng, EMBED_HIDDEN, dims.l)?;
    init_policy_params(&mut store, &mut rng, dims.l, POLICY_HIDDEN)?;
    init_memory_params(&mut store, LOCAL_PREFIX, dims.l, CTRL_INIT_STD, &mut rng)?;
    init_memory_params(&mut store, GLOBAL_PREFIX, dims.l, CTRL_INIT_STD, &mut rng)?;
    init_critic_params(&mut store, &mut rng, 3 * dims.l, CRITIC_HIDDEN)?;
    Ok(store)
}

/// A policy checkpoint read back from disk.
pub struct LoadedModel {
    pub store: ParamStore,
    pub dims: MemoryDims,
    pub uses_local: bool,
    pub uses_global: bool,
    pub global: MemoryState,
    pub iteration: u64,
}

/// Any checkpoint this crate writes.
pub enum AnyModel {
    Policy(Box<LoadedModel>),
    StaticGaussian { mean: Vec<f64>, std: Vec<f64>, iteration: u64 },
}

pub fn save_checkpoint(
    path: &Path,
    store: &ParamStore,
    dims: MemoryDims,
    uses_local: bool,
    uses_global: bool,
    iteration: u64,
    global: &MemoryState,
) -> Result<()> {
    let mut dmap = BTreeMap::new();
    for (name, value) in [
        ("l", dims.l as u64),
        ("k_local", dims.k_local as u64),
        ("k_global", dims.k_global as u64),
        ("feature_dim", FEATURE_DIM as u64),
        ("action_dim", ACTION_DIM as u64),
        ("uses_local", uses_local as u64),
        ("uses_global", uses_global as u64),
    ] {
        dmap.insert(name.to_string(), value);
    }
    let meta = Meta { kind: CHECKPOINT_KIND.into(), iteration, dims: dmap };
    let snapshot = global.snapshot(GLOBAL_STATE_PREFIX);
    let mut named: Vec<(&str, &Tensor)> = store.iter().collect();
    for (name, t) in &snapshot {
        named.push((name.as_str(), t));
    }
    checkpoint::save(path, &meta, &named)
}

fn model_from_loaded(loaded: checkpoint::Loaded) -> Result<LoadedModel> {
    let dim = |name: &str| -> Result<u64> {
        loaded
            .meta
            .dims
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint { message: format!("missing dim `{name}`") })
    };
    for (name, expected) in [("feature_dim", FEATURE_DIM as u64), ("action_dim", ACTION_DIM as u64)]
    {
        let got = dim(name)?;
        if got != expected {
            return Err(Error::Checkpoint {
                message: format!("{name} {got} does not match this build ({expected})"),
            });
        }
    }
    let dims = MemoryDims {
        l: dim("l")? as usize,
        k_local: dim("k_local")? as usize,
        k_global: dim("k_global")? as usize,
    };
    let mut store = ParamStore::new();
    for (name, t) in &loaded.tensors {
        if !name.starts_with(GLOBAL_STATE_PREFIX) {
            store.insert(name, t.clone())?;
        }
    }
    let global = MemoryState::from_snapshot(
        MemoryConfig::new(dims.k_global, dims.l)?,
        &loaded.tensors,
        GLOBAL_STATE_PREFIX,
    )?;
    Ok(LoadedModel {
        store,
        dims,
        uses_local: dim("uses_local")? != 0,
        uses_global: dim("uses_global")? != 0,
        global,
        iteration: loaded.meta.iteration,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedModel> {
    let loaded = checkpoint::load(path)?;
    if loaded.meta.kind != CHECKPOINT_KIND {
        return Err(Error::Checkpoint {
            message: format!("kind `{}` is not a policy checkpoint", loaded.meta.kind),
        });
    }
    model_from_loaded(loaded)
}

/// Loads either checkpoint kind, dispatching on the stored `kind`.
pub fn load_any(path: &Path) -> Result<AnyModel> {
    let loaded = checkpoint::load(path)?;
    match loaded.meta.kind.as_str() {
        CHECKPOINT_KIND => Ok(AnyModel::Policy(Box::new(model_from_loaded(loaded)?))),
        SG_KIND => Ok(AnyModel::StaticGaussian {
            mean: loaded.tensor("sg/mean")?.data().to_vec(),
            std: loaded.tensor("sg/std")?.data().to_vec(),
            iteration: loaded.meta.iteration,
        }),
        other => {
            Err(Error::Checkpoint { message: format!("unknown checkpoint kind `{other}`") })
        }
    }
}

/// Per-dimension mean and standard deviation of every demonstrated action,
/// the state-blind baseline. Degenerate dimensions get a small std floor so
/// they stay samplable.
pub fn static_gaussian_fit(dataset: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = dataset.total_records();
    if n == 0 {
        return Err(Error::EmptyInput { what: "demonstration dataset" });
    }
    let mut mean = vec![0.0; ACTION_DIM];
    let mut sq = vec![0.0; ACTION_DIM];
    for traj in &dataset.trajectories {
        for a in &traj.actions {
            for j in 0..ACTION_DIM {
                mean[j] += a[j];
                sq[j] += a[j] * a[j];
            }
        }
    }
    let n = n as f64;
    let mut std = vec![0.0; ACTION_DIM];
    for j in 0..ACTION_DIM {
        mean[j] /= n;
        std[j] = (sq[j] / n - mean[j] * mean[j]).max(0.0).sqrt().max(1e-6);
    }
    Ok((mean, std))
}

fn save_static_gaussian(path: &Path, mean: &[f64], std: &[f64]) -> Result<()> {
    let mut dims = BTreeMap::new();
    dims.insert("action_dim".to_string(), ACTION_DIM as u64);
    let meta = Meta { kind: SG_KIND.into(), iteration: 0, dims };
    let mean_t = Tensor::new(vec![ACTION_DIM], mean.to_vec())?;
    let std_t = Tensor::new(vec![ACTION_DIM], std.to_vec())?;
    checkpoint::save(path, &meta, &[("sg/mean", &mean_t), ("sg/std", &std_t)])
}

/// Episodes driven by seeded draws from the fitted action Gaussian,
/// traced with the same record convention as policy rollouts.
pub fn sg_rollouts(
    spec: &TrackSpec,
    mean: &[f64],
    std: &[f64],
    episodes: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<SimTrace>> {
    if steps == 0 {
        return Err(Error::EmptyInput { what: "rollout length" });
    }
    if mean.len() != ACTION_DIM || std.len() != ACTION_DIM {
        return Err(Error::shape(
            "static gaussian",
            format!("mean has {} entries, std {}", mean.len(), std.len()),
        ));
    }
    let mut traces = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let env_seed = derive_seed(seed, &[tags::EVAL, ep as u64, 0]);
        let mut noise = RngStream::from_tags(seed, &[tags::EVAL, ep as u64, 1]);
        let mut state = reset(spec, env_seed)?;
        let mut trace = SimTrace::new(DT);
        let mut pending = Events::none();
        for t in 0..steps {
            trace.push(spec, &state, pending);
            if t + 1 < steps {
                let action = Action::new(
                    mean[0] + std[0] * noise.normal(),
                    mean[1] + std[1] * noise.normal(),
                    mean[2] + std[2] * noise.normal(),
                )?;
                let (next, events) = step(spec, &state, &action)?;
                state = next;
                pending = events;
            }
        }
        traces.push(trace);
    }
    Ok(traces)
}

/// One metrics.csv row: critic and penalty statistics over every collected
/// step, event counts and distance averaged per rollout.
#[derive(Clone, Copy, Debug)]
pub struct IterationRow {
    pub iteration: usize,
    pub mean_score: f64,
    pub mean_dispersion: f64,
    pub lane_changes: f64,
    pub offroad_steps: f64,
    pub hard_brakes: f64,
    pub collisions: f64,
    pub traverse_m: f64,
}

impl IterationRow {
    fn from_buffers(iteration: usize, buffers: &[RolloutBuffer]) -> Self {
        let total_steps: usize = buffers.iter().map(|b| b.len()).sum();
        let n = buffers.len() as f64;
        let mut row = IterationRow {
            iteration,
            mean_score: 0.0,
            mean_dispersion: 0.0,
            lane_changes: 0.0,
            offroad_steps: 0.0,
            hard_brakes: 0.0,
            collisions: 0.0,
            traverse_m: 0.0,
        };
        for buf in buffers {
            for rec in &buf.steps {
                row.mean_score += rec.score;
                row.mean_dispersion += rec.dispersion;
            }
            for s in &buf.trace.steps {
                row.lane_changes += s.events.lane_change as u32 as f64;
                row.offroad_steps += s.events.offroad as u32 as f64;
                row.hard_brakes += s.events.hard_brake as u32 as f64;
                row.collisions += s.events.collision as u32 as f64;
                row.traverse_m += s.v_x * s.psi.cos() * buf.trace.dt;
            }
        }
        row.mean_score /= total_steps as f64;
        row.mean_dispersion /= total_steps as f64;
        row.lane_changes /= n;
        row.offroad_steps /= n;
        row.hard_brakes /= n;
        row.collisions /= n;
        row.traverse_m /= n;
        row
    }

    fn csv(&self) -> String {
        format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            self.iteration,
            self.mean_score,
            self.mean_dispersion,
            self.lane_changes,
            self.offroad_steps,
            self.hard_brakes,
            self.collisions,
            self.traverse_m,
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub rows: Vec<IterationRow>,
    pub bc: Option<BcReport>,
}

fn draw_batch<'a>(dataset: &'a Dataset, cfg: &TrainConfig, index: u64) -> Vec<&'a Trajectory> {
    let mut rng = RngStream::from_tags(cfg.seed, &[tags::EXPERT_BATCH, index]);
    (0..cfg.batch).map(|_| &dataset.trajectories[rng.index(dataset.len())]).collect()
}

/// Teacher-forces a batch of demonstrations through the embedding and both
/// memories with the current weights, mirroring the rollout wiring, and pairs
/// each augmented state with its recorded action.
fn expert_feature_batch(
    store: &ParamStore,
    trajs: &[&Trajectory],
    ablation: Ablation,
    dims: MemoryDims,
    global: &MemoryState,
) -> Result<CriticBatch> {
    let zero = Tensor::zeros(vec![dims.l]);
    let mut states = Vec::new();
    let mut actions = Vec::new();
    for traj in trajs {
        let mut local = MemoryState::fresh(MemoryConfig::new(dims.k_local, dims.l)?);
        let mut global_scratch = global.clone();
        for (f, a) in traj.states.iter().zip(&traj.actions) {
            let s_e = embed(store, f)?;
            let m_l = if ablation.uses_local() {
                let (ro, next) = memory::step(store, LOCAL_PREFIX, &local, &s_e)?;
                local = next;
                ro.m
            } else {
                zero.clone()
            };
            let m_g = if ablation.uses_global() {
                let (ro, next) = memory::read(store, GLOBAL_PREFIX, &global_scratch, &s_e)?;
                global_scratch = next;
                ro.m
            } else {
                zero.clone()
            };
            states.push(augment(&s_e, &m_l, &m_g)?);
            actions.push(a.clone());
        }
    }
    CriticBatch::new(states, actions)
}

fn policy_feature_batch(buffers: &[RolloutBuffer]) -> Result<CriticBatch> {
    let mut states = Vec::new();
    let mut actions = Vec::new();
    for buf in buffers {
        for rec in &buf.steps {
            states.push(rec.s_aug.clone());
            actions.push(rec.action.to_vec());
        }
    }
    CriticBatch::new(states, actions)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains per the config and lays out the run directory. Behavioural cloning
/// always runs first (except for the action-Gaussian baseline); the
/// adversarial loop then alternates critic ascent and clipped policy steps
/// on freshly preloaded global memory. The final checkpoint stores the
/// global memory rebuilt under the final weights from the expert batch at
/// index `iterations`, so evaluation reads a state the saved weights wrote.
pub fn train(
    cfg: &TrainConfig,
    spec: &TrackSpec,
    dataset_path: &Path,
    run_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    let dataset = Dataset::load(dataset_path)?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput { what: "demonstration dataset" });
    }
    for (i, traj) in dataset.trajectories.iter().enumerate() {
        if traj.len() != cfg.horizon {
            return Err(Error::config(
                "horizon",
                format!("trajectory {i} has {} records, config expects {}", traj.len(), cfg.horizon),
            ));
        }
    }

    let dims = cfg.memory_dims();
    let ablation = cfg.ablation;
    let ckpt_dir = run_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let run_file = RunFile {
        schema_version: RUN_SCHEMA_VERSION,
        dataset: Some(dataset_path.to_path_buf()),
        out: None,
        train: *cfg,
        track: spec.clone(),
    };
    write_file(&run_dir.join("config.toml"), &run_file.to_toml()?)?;
    write_file(&run_dir.join("demos.txt"), &format!("{}\n", dataset_path.display()))?;
    let metrics_path = run_dir.join("metrics.csv");
    let mut metrics = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    writeln!(metrics, "{METRICS_HEADER}").map_err(|e| Error::io(&metrics_path, e))?;

    let final_path = ckpt_dir.join("final.bin");
    if ablation == Ablation::SgOnly {
        let (mean, std) = static_gaussian_fit(&dataset)?;
        save_static_gaussian(&final_path, &mean, &std)?;
        return Ok(TrainOutcome {
            run_dir: run_dir.to_path_buf(),
            checkpoint: final_path,
            rows: Vec::new(),
            bc: None,
        });
    }

    let mut store = init_params(cfg)?;
    let bc = Some(bc_train(
        &mut store,
        &dataset,
        &BcConfig { epochs: cfg.bc_epochs, lr: cfg.bc_lr, dims },
    )?);

    let global_cfg = MemoryConfig::new(dims.k_global, dims.l)?;
    let preload = |store: &ParamStore, index: u64| -> Result<MemoryState> {
        if !ablation.uses_global() {
            return Ok(MemoryState::fresh(global_cfg));
        }
        let batch = draw_batch(&dataset, cfg, index);
        let states: Vec<&[Vec<f64>]> = batch.iter().map(|t| t.states.as_slice()).collect();
        Ok(preload_global(store, &MemoryState::fresh(global_cfg), &states)?.0)
    };

    let mut rows = Vec::new();
    if ablation.adversarial() {
        let mut critic_opt = OptState::rmsprop(cfg.critic_lr);
        for i in 0..cfg.iterations {
            let batch = draw_batch(&dataset, cfg, i as u64);
            let global = preload(&store, i as u64)?;

            let mut buffers = Vec::with_capacity(cfg.batch);
            for j in 0..cfg.batch {
                let ctx = RolloutCtx {
                    store: &store,
                    spec,
                    ablation,
                    dims,
                    global: &global,
                    greedy: false,
                };
                let env = derive_seed(cfg.seed, &[tags::EPISODE, i as u64, j as u64]);
                let noise = derive_seed(cfg.seed, &[tags::ACTION_NOISE, i as u64, j as u64]);
                buffers.push(rollout(&ctx, cfg.horizon, env, noise)?);
            }

            let expert_batch = expert_feature_batch(&store, &batch, ablation, dims, &global)?;
            let policy_batch = policy_feature_batch(&buffers)?;
            for _ in 0..cfg.critic_steps {
                critic_update(&mut store, &expert_batch, &policy_batch, &mut critic_opt, cfg.clip)?;
            }

            compute_rewards(&store, &mut buffers, cfg.effective_penalty())?;
            for buf in buffers.iter_mut() {
                advantages(buf, cfg.discount, cfg.gae_lambda);
            }
            normalize_advantages(&mut buffers);
            policy_update(&mut store, &buffers, &global, cfg)?;

            let row = IterationRow::from_buffers(i + 1, &buffers);
            writeln!(metrics, "{}", row.csv()).map_err(|e| Error::io(&metrics_path, e))?;
            metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
            rows.push(row);

            if (i + 1) % 10 == 0 {
                save_checkpoint(
                    &ckpt_dir.join(format!("iter_{:04}.bin", i + 1)),
                    &store,
                    dims,
                    ablation.uses_local(),
                    ablation.uses_global(),
                    (i + 1) as u64,
                    &global,
                )?;
            }
        }
    }

    let final_global = preload(&store, cfg.iterations as u64)?;
    let final_iteration = if ablation.adversarial() { cfg.iterations as u64 } else { 0 };
    save_checkpoint(
        &final_path,
        &store,
        dims,
        ablation.uses_local(),
        ablation.uses_global(),
        final_iteration,
        &final_global,
    )?;
    Ok(TrainOutcome { run_dir: run_dir.to_path_buf(), checkpoint: final_path, rows, bc })
}

/// Seeded evaluation episodes under a loaded model; returns just the traces.
#[allow(clippy::too_many_arguments)]
pub fn eval_rollouts(
    store: &ParamStore,
    spec: &TrackSpec,
    dims: MemoryDims,
    uses_local: bool,
    uses_global: bool,
    global: &MemoryState,
    episodes: usize,
    steps: usize,
    seed: u64,
    greedy: bool,
) -> Result<Vec<SimTrace>> {
    let ablation = Ablation::from_flags(uses_local, uses_global);
    let ctx = RolloutCtx { store, spec, ablation, dims, global, greedy };
    (0..episodes)
        .map(|ep| {
            let env = derive_seed(seed, &[tags::EVAL, ep as u64, 0]);
            let noise = derive_seed(seed, &[tags::EVAL, ep as u64, 1]);
            rollout(&ctx, steps, env, noise).map(|b| b.trace)
        })
        .collect()
}

/// Expert traces generated with the demo recorder's exact seed derivation:
/// recording a dataset and replaying it gives these same trajectories bit
/// for bit, so an expert-vs-expert comparison is a true self-comparison.
pub fn expert_eval_traces(
    spec: &TrackSpec,
    personas: &[Persona],
    episodes_per_persona: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<SimTrace>> {
    let mut traces = Vec::with_capacity(personas.len() * episodes_per_persona);
    for (pi, persona) in personas.iter().enumerate() {
        for ep in 0..episodes_per_persona {
            let ep_seed = derive_seed(seed, &[tags::EXPERT_BATCH, pi as u64, ep as u64]);
            let (_, _, trace) = run_expert_episode(spec, persona, ep_seed, steps)?;
            traces.push(trace);
        }
    }
    Ok(traces)
}

pub struct AblationOutcome {
    pub variant: Ablation,
    pub train: TrainOutcome,
    pub report: MetricsReport,
}

/// Trains one variant into `dir`, rolls it out against the replayed expert
/// traces, and writes that variant's report files.
#[allow(clippy::too_many_arguments)]
pub fn ablate_variant(
    cfg: &TrainConfig,
    spec: &TrackSpec,
    dataset_path: &Path,
    expert: &[SimTrace],
    variant: Ablation,
    dir: &Path,
    eval_episodes: usize,
    eval_steps: usize,
) -> Result<AblationOutcome> {
    let mut vcfg = *cfg;
    vcfg.ablation = variant;
    let train_outcome = train(&vcfg, spec, dataset_path, dir)?;
    let model = load_checkpoint(&train_outcome.checkpoint)?;
    let traces = eval_rollouts(
        &model.store,
        spec,
        model.dims,
        model.uses_local,
        model.uses_global,
        &model.global,
        eval_episodes,
        eval_steps,
        vcfg.seed,
        false,
    )?;
    let report = evaluation::report(&traces, expert, BinConfig::default())?;
    write_file(&dir.join("report.csv"), &report.to_csv())?;
    write_file(&dir.join("report.txt"), &report.to_table())?;
    Ok(AblationOutcome { variant, train: train_outcome, report })
}

/// The cross-variant emergent-behaviour comparison as CSV text.
pub fn combined_table(outcomes: &[AblationOutcome]) -> String {
    let mut combined =
        String::from("variant,lane_change_rate,offroad_steps,hard_brake_rate,traverse_km\n");
    for o in outcomes {
        combined.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            o.variant.name(),
            o.report.emergent.lane_change_rate,
            o.report.emergent.offroad_steps,
            o.report.emergent.hard_brake_rate,
            o.report.emergent.traverse_km,
        ));
    }
    combined
}

/// Trains the four compared variants with one config and seed, evaluates
/// each against the replayed demonstrations, and writes per-variant reports
/// plus a combined `ablation.csv` under `out_root`.
pub fn ablate(
    cfg: &TrainConfig,
    spec: &TrackSpec,
    dataset_path: &Path,
    out_root: &Path,
    eval_episodes: usize,
    eval_steps: usize,
) -> Result<Vec<AblationOutcome>> {
    let dataset = Dataset::load(dataset_path)?;
    let expert = replay(&dataset)?;
    let mut outcomes = Vec::new();
    for variant in Ablation::COMPARED {
        let dir = out_root.join(variant.name());
        outcomes.push(ablate_variant(
            cfg,
            spec,
            dataset_path,
            &expert,
            variant,
            &dir,
            eval_episodes,
            eval_steps,
        )?);
    }
    write_file(&out_root.join("ablation.csv"), &combined_table(&outcomes))?;
    Ok(outcomes)
}
