//! Deterministic multi-lane driving simulator: track geometry, world
//! dynamics with NPC traffic, scripted expert personas, and the
//! demonstration file format.

pub mod dataset;
pub mod expert;
pub mod track;
pub mod world;

pub use dataset::{record_demos, replay, Dataset, DatasetHeader, Trajectory, ACTION_DIM};
pub use expert::{expert_action, run_expert_episode, ExpertCtl, Persona};
pub use track::{Segment, TrackSpec};
pub use world::{
    cast_ray, features, front_gap, reset, side_window, step, Action, Events, Npc, SimTrace,
    TraceStep, WorldState, DT, FEATURE_DIM,
};
