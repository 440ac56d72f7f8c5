//! World state and dynamics for the multi-lane loop: ego kinematics in
//! Frenet coordinates, constant-speed NPC traffic, per-step events, and the
//! range-finder feature vector fed to the learners.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::laneworld::track::TrackSpec;
use crate::numerics::rng::{tags, RngStream};

pub const DT: f64 = 0.1;
pub const ACCEL_MAX: f64 = 4.0;
pub const BRAKE_MAX: f64 = 8.0;
pub const DRAG: f64 = 0.02;
pub const SPEED_MAX: f64 = 60.0;
pub const STEER_GAIN: f64 = 0.2;
pub const COLLIDE_LONG: f64 = 4.0;
pub const COLLIDE_LAT: f64 = 2.0;
pub const COLLISION_DAMAGE: f64 = 100.0;
pub const OFFROAD_MARGIN: f64 = 1.0;
pub const HARD_BRAKE_ACCEL: f64 = -3.0;
pub const RAY_COUNT: usize = 19;
pub const RAY_MAX: f64 = 200.0;
pub const FRONT_MAX: f64 = 200.0;
pub const BACK_MAX: f64 = 50.0;
pub const NPC_MIN_GAP: f64 = 20.0;

/// Feature vector layout. Heading angle, lateral position in lane widths,
/// speeds in km/h, then 19 range-finder rays and same-lane front/back gaps.
pub const FEATURE_DIM: usize = 25;
pub const IDX_ANGLE: usize = 0;
pub const IDX_TRACK_POS: usize = 1;
pub const IDX_SPEED_X: usize = 2;
pub const IDX_SPEED_Z: usize = 3;
pub const IDX_RAYS: usize = 4;
pub const IDX_FRONT: usize = 23;
pub const IDX_BACK: usize = 24;

/// Control input. The constructor clamps each channel into its valid range,
/// so downstream code never sees out-of-range commands.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Action {
    steer: f64,
    accel: f64,
    brake: f64,
}

impl Action {
    pub fn new(steer: f64, accel: f64, brake: f64) -> Result<Self> {
        for (name, v) in [("steer", steer), ("accel", accel), ("brake", brake)] {
            if !v.is_finite() {
                return Err(Error::NonFinite { context: format!("action {name}") });
            }
        }
        Ok(Action {
            steer: steer.clamp(-1.0, 1.0),
            accel: accel.clamp(0.0, 1.0),
            brake: brake.clamp(0.0, 1.0),
        })
    }

    pub fn coast() -> Self {
        Action { steer: 0.0, accel: 0.0, brake: 0.0 }
    }

    pub fn steer(&self) -> f64 {
        self.steer
    }

    pub fn accel(&self) -> f64 {
        self.accel
    }

    pub fn brake(&self) -> f64 {
        self.brake
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.steer, self.accel, self.brake]
    }
}

/// Other vehicles hold their lane at a constant speed, so seeded spacing is
/// preserved for the whole episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Npc {
    pub lane: usize,
    pub s: f64,
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub s: f64,
    pub d: f64,
    pub psi: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub damage: f64,
    pub step_index: u64,
    pub npcs: Vec<Npc>,
    pub dt: f64,
}

/// Events raised by a single transition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Events {
    pub lane_change: bool,
    pub collision: bool,
    pub offroad: bool,
    pub hard_brake: bool,
}

impl Events {
    pub fn none() -> Self {
        Events::default()
    }

    pub fn any(&self) -> bool {
        self.lane_change || self.collision || self.offroad || self.hard_brake
    }
}

/// One record of a simulated trajectory: the raw quantities evaluation needs,
/// plus the events of the transition that ARRIVED at this record (so record 0
/// is always event-free and T records describe T-1 transitions).
#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub v_x: f64,
    pub psi: f64,
    pub d: f64,
    pub front: f64,
    pub leader_speed: Option<f64>,
    pub events: Events,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimTrace {
    pub dt: f64,
    pub steps: Vec<TraceStep>,
}

impl SimTrace {
    pub fn new(dt: f64) -> Self {
        SimTrace { dt, steps: Vec::new() }
    }

    pub fn push(&mut self, spec: &TrackSpec, state: &WorldState, events: Events) {
        let (front, leader_speed) = front_gap(spec, state);
        self.steps.push(TraceStep {
            v_x: state.v_x,
            psi: state.psi,
            d: state.d,
            front,
            leader_speed,
            events,
        });
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Speed assigned to all NPCs in a lane; inner lanes are slower, so the ego
/// has a reason to change lanes.
pub fn npc_lane_speed(lane: usize) -> f64 {
    8.5 + 2.5 * lane as f64
}

/// Fresh episode: ego at the loop start in a seeded lane with seeded speed,
/// NPCs stratified around the loop with at least [`NPC_MIN_GAP`] between
/// same-lane neighbours.
pub fn reset(spec: &TrackSpec, seed: u64) -> Result<WorldState> {
    spec.validate()?;
    let length = spec.total_length();
    let usable = length - 60.0;

    let mut per_lane = vec![0usize; spec.lanes];
    for i in 0..spec.npc_count {
        per_lane[i % spec.lanes] += 1;
    }
    for (lane, &n) in per_lane.iter().enumerate() {
        if n > 0 && usable / n as f64 <= NPC_MIN_GAP {
            return Err(Error::config(
                "track.npc_count",
                format!("lane {lane} cannot hold {n} vehicles with {NPC_MIN_GAP} m gaps"),
            ));
        }
    }

    let mut ego_rng = RngStream::from_tags(seed, &[tags::EPISODE]);
    let ego_lane = ego_rng.index(spec.lanes);
    let v_x = ego_rng.uniform_in(5.0, 15.0);

    let mut npc_rng = RngStream::from_tags(seed, &[tags::NPC_LAYOUT]);
    let mut npcs = Vec::with_capacity(spec.npc_count);
    for (lane, &n) in per_lane.iter().enumerate() {
        if n == 0 {
            continue;
        }
        // Equal slots with jitter bounded by slot - NPC_MIN_GAP keep every
        // same-lane gap at or above NPC_MIN_GAP, including across the wrap.
        let slot = usable / n as f64;
        for j in 0..n {
            let jitter = npc_rng.uniform_in(0.0, slot - NPC_MIN_GAP);
            npcs.push(Npc {
                lane,
                s: 30.0 + j as f64 * slot + jitter,
                speed: npc_lane_speed(lane),
            });
        }
    }

    Ok(WorldState {
        s: 0.0,
        d: spec.lane_center(ego_lane),
        psi: 0.0,
        v_x,
        v_y: 0.0,
        damage: 0.0,
        step_index: 0,
        npcs,
        dt: DT,
    })
}

/// Advances the world by one step. Update order: speed, heading, lateral,
/// longitudinal, NPCs, then collision resolution. Events describe this
/// transition; hard braking is judged on the realised speed change so it
/// matches a finite difference of the recorded speed series exactly.
pub fn step(spec: &TrackSpec, state: &WorldState, action: &Action) -> Result<(WorldState, Events)> {
    let dt = state.dt;
    let v_old = state.v_x;
    let d_old = state.d;

    let dv = (ACCEL_MAX * action.accel - BRAKE_MAX * action.brake - DRAG * v_old) * dt;
    let mut v_x = (v_old + dv).clamp(0.0, SPEED_MAX);
    let psi = state.psi + STEER_GAIN * action.steer * v_x * dt;
    let d = d_old + v_x * psi.sin() * dt;
    let s = spec.wrap_s(state.s + v_x * psi.cos() * dt);

    let npcs: Vec<Npc> = state
        .npcs
        .iter()
        .map(|n| Npc { s: spec.wrap_s(n.s + n.speed * dt), ..*n })
        .collect();

    let mut damage = state.damage;
    let mut collision = false;
    let mut nearest: Option<(f64, f64)> = None; // (|gap|, npc speed)
    let length = spec.total_length();
    for npc in &npcs {
        let fwd = spec.forward_gap(s, npc.s);
        let gap = if fwd <= 0.5 * length { fwd } else { fwd - length };
        let lat = spec.lane_center(npc.lane) - d;
        if gap.abs() < COLLIDE_LONG && lat.abs() < COLLIDE_LAT {
            collision = true;
            damage += COLLISION_DAMAGE;
            if nearest.map_or(true, |(g, _)| gap.abs() < g) {
                nearest = Some((gap.abs(), npc.speed));
            }
        }
    }
    if let Some((_, npc_speed)) = nearest {
        // Contact kills the relative speed; the ego is carried at NPC pace.
        v_x = npc_speed;
    }

    let events = Events {
        lane_change: spec.lane_of(d_old) != spec.lane_of(d),
        collision,
        offroad: d.abs() > spec.half_width() + OFFROAD_MARGIN,
        hard_brake: (v_x - v_old) / dt < HARD_BRAKE_ACCEL,
    };

    let next = WorldState {
        s,
        d,
        psi,
        v_x,
        v_y: v_x * psi.sin(),
        damage,
        step_index: state.step_index + 1,
        npcs,
        dt,
    };
    for (name, v) in [("s", next.s), ("d", next.d), ("psi", next.psi), ("v_x", next.v_x)] {
        if !v.is_finite() {
            return Err(Error::NonFinite { context: format!("world step field {name}") });
        }
    }
    Ok((next, events))
}

/// Distance to the track edge along a ray at world heading `phi`, from
/// lateral offset `d` at arc position `s`. Relative to the road, a straight
/// ray bends as l(x) = d + x sin(phi) - kappa (x cos(phi))^2 / 2; the hit is
/// the smallest positive root against either edge, clamped to [`RAY_MAX`].
pub fn cast_ray(spec: &TrackSpec, s: f64, d: f64, phi: f64) -> f64 {
    let kappa = spec.curvature_at(s);
    let (sin_phi, cos_phi) = phi.sin_cos();
    let a = -0.5 * kappa * cos_phi * cos_phi;
    let b = sin_phi;
    let hw = spec.half_width();

    let mut best = f64::INFINITY;
    let mut consider = |x: f64| {
        if x > 1e-9 && x < best {
            best = x;
        }
    };
    for edge in [hw, -hw] {
        let c = d - edge;
        if a.abs() < 1e-12 {
            if b.abs() > 1e-12 {
                consider(-c / b);
            }
        } else {
            let disc = b * b - 4.0 * a * c;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                consider((-b - sq) / (2.0 * a));
                consider((-b + sq) / (2.0 * a));
            }
        }
    }
    best.min(RAY_MAX)
}

/// Clamped gap to the nearest same-lane NPC ahead, plus its speed when it is
/// inside sensing range.
pub fn front_gap(spec: &TrackSpec, state: &WorldState) -> (f64, Option<f64>) {
    let lane = spec.lane_of(state.d);
    let mut best: Option<(f64, f64)> = None;
    for npc in &state.npcs {
        if npc.lane != lane {
            continue;
        }
        let gap = spec.forward_gap(state.s, npc.s);
        if best.map_or(true, |(g, _)| gap < g) {
            best = Some((gap, npc.speed));
        }
    }
    match best {
        Some((gap, speed)) if gap < FRONT_MAX => (gap, Some(speed)),
        _ => (FRONT_MAX, None),
    }
}

pub const SIDE_CLEAR_AHEAD: f64 = 30.0;
pub const SIDE_CLEAR_BEHIND: f64 = 15.0;

/// Whether the lanes adjacent to the ego are free of NPCs inside the merge
/// window (behind `SIDE_CLEAR_BEHIND` to ahead `SIDE_CLEAR_AHEAD`). Returns
/// (left clear, right clear); a lane that does not exist is never clear.
pub fn side_window(spec: &TrackSpec, state: &WorldState) -> (bool, bool) {
    let lane = spec.lane_of(state.d);
    let clear = |target: Option<usize>| -> bool {
        let Some(target) = target else { return false };
        state.npcs.iter().filter(|n| n.lane == target).all(|n| {
            let ahead = spec.forward_gap(state.s, n.s);
            let behind = spec.forward_gap(n.s, state.s);
            ahead > SIDE_CLEAR_AHEAD && behind > SIDE_CLEAR_BEHIND
        })
    };
    let left = if lane + 1 < spec.lanes { Some(lane + 1) } else { None };
    let right = lane.checked_sub(1);
    (clear(left), clear(right))
}

/// Clamped gap to the nearest same-lane NPC behind.
pub fn back_gap(spec: &TrackSpec, state: &WorldState) -> f64 {
    let lane = spec.lane_of(state.d);
    let mut best = f64::INFINITY;
    for npc in &state.npcs {
        if npc.lane != lane {
            continue;
        }
        let gap = spec.forward_gap(npc.s, state.s);
        if gap < best {
            best = gap;
        }
    }
    best.min(BACK_MAX)
}

/// The 25-entry observation: heading angle (clamped to one turn), lateral
/// position in lane widths, longitudinal and vertical speed in km/h, 19 edge
/// rays fanned over the front half-plane, and same-lane front/back gaps.
pub fn features(spec: &TrackSpec, state: &WorldState) -> Vec<f64> {
    let mut f = Vec::with_capacity(FEATURE_DIM);
    f.push(state.psi.clamp(-PI, PI));
    f.push(state.d / spec.lane_width);
    f.push(state.v_x * 3.6);
    f.push(0.0);
    for i in 0..RAY_COUNT {
        let theta = -0.5 * PI + i as f64 * PI / 18.0;
        f.push(cast_ray(spec, state.s, state.d, state.psi + theta));
    }
    let (front, _) = front_gap(spec, state);
    f.push(front);
    f.push(back_gap(spec, state));
    debug_assert_eq!(f.len(), FEATURE_DIM);
    f
}
