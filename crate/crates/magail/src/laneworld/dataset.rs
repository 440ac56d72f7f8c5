//! Demonstration storage: line-delimited JSON with a self-describing header
//! line followed by one trajectory per line. Floats are written with 17
//! significant digits so files round-trip bit-exactly.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laneworld::expert::{run_expert_episode, Persona};
use crate::laneworld::track::TrackSpec;
use crate::laneworld::world::{SimTrace, DT, FEATURE_DIM};
use crate::numerics::rng::{derive_seed, tags};

pub const DATASET_VERSION: u32 = 1;
pub const ACTION_DIM: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub feature_dim: usize,
    pub action_dim: usize,
    pub dt: f64,
    pub track: TrackSpec,
    pub personas: Vec<Persona>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub persona: String,
    pub seed: u64,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub trajectories: Vec<Trajectory>,
}

/// JSON formatter that renders every float in scientific notation with 16
/// fractional digits (17 significant), enough for f64 values to survive a
/// parse round trip unchanged.
struct SciFormatter;

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:e}")
    }
}

fn write_json_line<T: Serialize, W: io::Write>(writer: &mut W, value: &T) -> Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(&mut *writer, SciFormatter);
    value.serialize(&mut ser)?;
    writer.write_all(b"\n").map_err(|e| Error::io(PathBuf::new(), e))?;
    Ok(())
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.format_version != DATASET_VERSION {
            return Err(Error::config(
                "dataset.format_version",
                format!("expected {DATASET_VERSION}, got {}", h.format_version),
            ));
        }
        if h.feature_dim != FEATURE_DIM {
            return Err(Error::config(
                "dataset.feature_dim",
                format!("expected {FEATURE_DIM}, got {}", h.feature_dim),
            ));
        }
        if h.action_dim != ACTION_DIM {
            return Err(Error::config(
                "dataset.action_dim",
                format!("expected {ACTION_DIM}, got {}", h.action_dim),
            ));
        }
        if !(h.dt > 0.0) || !h.dt.is_finite() {
            return Err(Error::config("dataset.dt", "must be finite and positive"));
        }
        h.track.validate()?;
        for (i, traj) in self.trajectories.iter().enumerate() {
            if traj.states.is_empty() {
                return Err(Error::config(
                    "dataset.states",
                    format!("trajectory {i} has no records"),
                ));
            }
            if traj.states.len() != traj.actions.len() {
                return Err(Error::config(
                    "dataset.states",
                    format!(
                        "trajectory {i}: {} states vs {} actions",
                        traj.states.len(),
                        traj.actions.len()
                    ),
                ));
            }
            for (t, (s, a)) in traj.states.iter().zip(&traj.actions).enumerate() {
                if s.len() != h.feature_dim {
                    return Err(Error::config(
                        "dataset.states",
                        format!("trajectory {i} record {t}: state has {} entries", s.len()),
                    ));
                }
                if a.len() != h.action_dim {
                    return Err(Error::config(
                        "dataset.actions",
                        format!("trajectory {i} record {t}: action has {} entries", a.len()),
                    ));
                }
                if s.iter().chain(a.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        context: format!("dataset trajectory {i} record {t}"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn total_records(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        write_json_line(&mut w, &self.header)?;
        for traj in &self.trajectories {
            write_json_line(&mut w, traj)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|_| Error::DatasetMissing { path: path.into() })?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines();
        let header_line = match lines.next() {
            Some(line) => line.map_err(|e| Error::io(path, e))?,
            None => return Err(Error::config("dataset", "file has no header line")),
        };
        let header: DatasetHeader = serde_json::from_str(&header_line)?;
        let mut trajectories = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            trajectories.push(serde_json::from_str(&line)?);
        }
        let ds = Dataset { header, trajectories };
        ds.validate()?;
        Ok(ds)
    }
}

/// Runs every persona for `episodes_per_persona` seeded episodes of `t`
/// records each and persists the result at `path`. Episode seeds are derived
/// from `seed` so distinct personas and episodes never share RNG streams,
/// and each trajectory stores the seed that regenerates it.
pub fn record_demos(
    spec: &TrackSpec,
    personas: &[Persona],
    episodes_per_persona: usize,
    t: usize,
    seed: u64,
    path: &Path,
) -> Result<Dataset> {
    if t == 0 {
        return Err(Error::EmptyInput { what: "records per trajectory" });
    }
    spec.validate()?;
    let mut trajectories = Vec::with_capacity(personas.len() * episodes_per_persona);
    for (pi, persona) in personas.iter().enumerate() {
        for ep in 0..episodes_per_persona {
            let ep_seed = derive_seed(seed, &[tags::EXPERT_BATCH, pi as u64, ep as u64]);
            let (states, actions, _) = run_expert_episode(spec, persona, ep_seed, t)?;
            trajectories.push(Trajectory {
                persona: persona.name.clone(),
                seed: ep_seed,
                states,
                actions,
            });
        }
    }
    let ds = Dataset {
        header: DatasetHeader {
            format_version: DATASET_VERSION,
            feature_dim: FEATURE_DIM,
            action_dim: ACTION_DIM,
            dt: DT,
            track: spec.clone(),
            personas: personas.to_vec(),
        },
        trajectories,
    };
    ds.save(path)?;
    Ok(ds)
}

/// Re-simulates every stored trajectory from its (persona, seed) pair and
/// returns the full traces, recovering events and leader speeds that the
/// feature rows do not carry. The format makes this exact: recorded states
/// and actions must match the replay bit for bit, and any mismatch means the
/// file was edited or written by an incompatible build.
pub fn replay(dataset: &Dataset) -> Result<Vec<SimTrace>> {
    dataset.validate()?;
    let mut traces = Vec::with_capacity(dataset.trajectories.len());
    for (i, traj) in dataset.trajectories.iter().enumerate() {
        let persona = dataset
            .header
            .personas
            .iter()
            .find(|p| p.name == traj.persona)
            .ok_or_else(|| Error::UnknownPersona { name: traj.persona.clone() })?;
        let (states, actions, trace) =
            run_expert_episode(&dataset.header.track, persona, traj.seed, traj.states.len())?;
        if states != traj.states || actions != traj.actions {
            return Err(Error::config(
                format!("dataset.trajectories[{i}]"),
                "stored records do not match their replay",
            ));
        }
        traces.push(trace);
    }
    Ok(traces)
}
