//! Behaviour metrics: kinematic series derived from simulated traces,
//! histogram KL divergences against expert demonstrations, and emergent
//! event summaries (lane changes, off-road time, hard brakes, distance).

use crate::error::{Error, Result};
use crate::laneworld::SimTrace;

/// Additive smoothing applied to both histograms before the KL sum.
pub const KL_EPSILON: f64 = 1e-6;

/// The five per-step quantities whose distributions are compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Speed,
    Acceleration,
    TurnRate,
    Jerk,
    Ittc,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Speed,
        Metric::Acceleration,
        Metric::TurnRate,
        Metric::Jerk,
        Metric::Ittc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Speed => "speed",
            Metric::Acceleration => "acceleration",
            Metric::TurnRate => "turn_rate",
            Metric::Jerk => "jerk",
            Metric::Ittc => "ittc",
        }
    }
}

/// Per-step kinematic series of one trajectory. Speed and iTTC cover every
/// record (T values); acceleration and turn rate are first differences
/// (T-1); jerk is a second difference (T-2).
#[derive(Clone, Debug)]
pub struct DerivedSeries {
    pub speed: Vec<f64>,
    pub acceleration: Vec<f64>,
    pub turn_rate: Vec<f64>,
    pub jerk: Vec<f64>,
    pub ittc: Vec<f64>,
}

impl DerivedSeries {
    pub fn series(&self, metric: Metric) -> &[f64] {
        match metric {
            Metric::Speed => &self.speed,
            Metric::Acceleration => &self.acceleration,
            Metric::TurnRate => &self.turn_rate,
            Metric::Jerk => &self.jerk,
            Metric::Ittc => &self.ittc,
        }
    }
}

/// Forward finite differences of speed and heading at the trace's dt, plus
/// inverse time-to-collision: closing speed over front distance while a
/// leader is in range, zero otherwise.
pub fn derive(trace: &SimTrace) -> Result<DerivedSeries> {
    let t = trace.steps.len();
    if t < 3 {
        return Err(Error::shape(
            "derive",
            format!("need at least 3 records for finite differences, got {t}"),
        ));
    }
    if !(trace.dt.is_finite() && trace.dt > 0.0) {
        return Err(Error::config("trace.dt", format!("must be positive, got {}", trace.dt)));
    }
    let dt = trace.dt;
    let speed: Vec<f64> = trace.steps.iter().map(|s| s.v_x).collect();
    let acceleration: Vec<f64> = speed.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    let turn_rate: Vec<f64> = trace
        .steps
        .windows(2)
        .map(|w| (w[1].psi - w[0].psi) / dt)
        .collect();
    let jerk: Vec<f64> = acceleration.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    let ittc: Vec<f64> = trace
        .steps
        .iter()
        .map(|s| match s.leader_speed {
            Some(leader) => (s.v_x - leader).max(0.0) / s.front,
            None => 0.0,
        })
        .collect();
    let out = DerivedSeries { speed, acceleration, turn_rate, jerk, ittc };
    for metric in Metric::ALL {
        if out.series(metric).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: format!("derived {}", metric.name()) });
        }
    }
    Ok(out)
}

/// Normalized bin counts over fixed edges. Out-of-range values land in the
/// nearest end bin so a model that strays outside the expert's support is
/// still counted, just without resolution out there.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn histogram(values: &[f64], edges: &[f64]) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::EmptyInput { what: "histogram values" });
    }
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("histogram.edges", "need at least 2 strictly ascending edges"));
    }
    let bins = edges.len() - 1;
    let mut counts = vec![0usize; bins];
    for &v in values {
        // partition_point gives the count of edges <= v; shifting by one maps
        // v in [edges[i], edges[i+1]) to bin i and clamps the outside.
        let idx = edges.partition_point(|e| *e <= v).saturating_sub(1).min(bins - 1);
        counts[idx] += 1;
    }
    let total = values.len() as f64;
    let probs = counts.iter().map(|&c| c as f64 / total).collect();
    Ok(Histogram { edges: edges.to_vec(), probs })
}

/// KL(p || q) after adding `eps` to every bin of both histograms and
/// re-normalizing, so empty model bins stay finite. p is the expert side.
pub fn kl_divergence(p: &Histogram, q: &Histogram, eps: f64) -> Result<f64> {
    if p.edges != q.edges {
        return Err(Error::shape(
            "kl_divergence",
            format!("histograms use different edges ({} vs {})", p.edges.len(), q.edges.len()),
        ));
    }
    let smooth = |h: &Histogram| -> Vec<f64> {
        let sum: f64 = h.probs.iter().map(|v| v + eps).sum();
        h.probs.iter().map(|v| (v + eps) / sum).collect()
    };
    let ps = smooth(p);
    let qs = smooth(q);
    let kl: f64 = ps.iter().zip(&qs).map(|(a, b)| a * (a / b).ln()).sum();
    // Gibbs' inequality guarantees >= 0 in exact arithmetic; rounding in the
    // sum can leave a negative ulp behind, which callers never want.
    Ok(kl.max(0.0))
}

/// Uniform bin edges fitted to `values`: `bins` bins spanning [min, max]
/// widened by `widen` of the span on each side. The 1e-9 floor keeps the
/// range positive when every value is identical.
pub fn fit_edges(values: &[f64], bins: usize, widen: f64) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyInput { what: "edge fitting values" });
    }
    if bins == 0 {
        return Err(Error::config("report.bins", "must be positive"));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let pad = widen * (hi - lo) + 1e-9;
    let (lo, hi) = (lo - pad, hi + pad);
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    // Float rounding must not leave the last data point past the final edge.
    edges[bins] = edges[bins].max(hi);
    Ok(edges)
}

/// Mean per-trajectory event counts plus mean distance covered.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmergentMetrics {
    pub lane_change_rate: f64,
    pub offroad_steps: f64,
    pub hard_brake_rate: f64,
    pub traverse_km: f64,
}

impl EmergentMetrics {
    pub fn rows(&self) -> [(&'static str, f64); 4] {
        [
            ("lane_change_rate", self.lane_change_rate),
            ("offroad_steps", self.offroad_steps),
            ("hard_brake_rate", self.hard_brake_rate),
            ("traverse_km", self.traverse_km),
        ]
    }
}

pub fn emergent(traces: &[SimTrace]) -> Result<EmergentMetrics> {
    if traces.is_empty() {
        return Err(Error::EmptyInput { what: "trajectories" });
    }
    let n = traces.len() as f64;
    let mut lane_changes = 0.0;
    let mut offroad = 0.0;
    let mut hard_brakes = 0.0;
    let mut traverse = 0.0;
    for trace in traces {
        lane_changes += trace.steps.iter().filter(|s| s.events.lane_change).count() as f64;
        offroad += trace.steps.iter().filter(|s| s.events.offroad).count() as f64;
        hard_brakes += trace.steps.iter().filter(|s| s.events.hard_brake).count() as f64;
        let m: f64 = trace.steps.iter().map(|s| s.v_x * s.psi.cos() * trace.dt).sum();
        traverse += m / 1000.0;
    }
    Ok(EmergentMetrics {
        lane_change_rate: lane_changes / n,
        offroad_steps: offroad / n,
        hard_brake_rate: hard_brakes / n,
        traverse_km: traverse / n,
    })
}

/// Binning policy for [`report`]: edges are always fitted from the expert
/// side so every model is measured against the same reference support.
#[derive(Clone, Copy, Debug)]
pub struct BinConfig {
    pub bins: usize,
    pub widen: f64,
}

impl Default for BinConfig {
    fn default() -> Self {
        BinConfig { bins: 32, widen: 0.1 }
    }
}

/// Five distribution divergences plus the four emergent metrics of the
/// model side.
#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub kl: [f64; 5],
    pub emergent: EmergentMetrics,
    pub model_trajectories: usize,
    pub expert_trajectories: usize,
}

impl MetricsReport {
    pub fn kl(&self, metric: Metric) -> f64 {
        self.kl[metric as usize]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,name,value\n");
        out.push_str(&format!("count,model_trajectories,{}\n", self.model_trajectories));
        out.push_str(&format!("count,expert_trajectories,{}\n", self.expert_trajectories));
        for metric in Metric::ALL {
            out.push_str(&format!("kl,{},{:.12e}\n", metric.name(), self.kl(metric)));
        }
        for (name, value) in self.emergent.rows() {
            out.push_str(&format!("emergent,{name},{value:.12e}\n"));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "trajectories: {} model vs {} expert\n\n",
            self.model_trajectories, self.expert_trajectories
        ));
        out.push_str("KL divergence (expert || model)\n");
        for metric in Metric::ALL {
            out.push_str(&format!("  {:<18} {:>10.4}\n", metric.name(), self.kl(metric)));
        }
        out.push_str("\nemergent behaviour (mean per trajectory)\n");
        for (name, value) in self.emergent.rows() {
            out.push_str(&format!("  {name:<18} {value:>10.4}\n"));
        }
        out
    }
}

/// Full comparison: pools each derived quantity across trajectories, fits
/// bins to the expert pool, and reports KL(expert || model) per quantity
/// together with the model's emergent metrics.
pub fn report(model: &[SimTrace], expert: &[SimTrace], cfg: BinConfig) -> Result<MetricsReport> {
    if model.is_empty() {
        return Err(Error::EmptyInput { what: "model trajectories" });
    }
    if expert.is_empty() {
        return Err(Error::EmptyInput { what: "expert trajectories" });
    }
    let model_series: Vec<DerivedSeries> = model.iter().map(derive).collect::<Result<_>>()?;
    let expert_series: Vec<DerivedSeries> = expert.iter().map(derive).collect::<Result<_>>()?;
    let pool = |set: &[DerivedSeries], metric: Metric| -> Vec<f64> {
        set.iter().flat_map(|s| s.series(metric).iter().copied()).collect()
    };
    let mut kl = [0.0; 5];
    for metric in Metric::ALL {
        let expert_pool = pool(&expert_series, metric);
        let model_pool = pool(&model_series, metric);
        let edges = fit_edges(&expert_pool, cfg.bins, cfg.widen)?;
        let p = histogram(&expert_pool, &edges)?;
        let q = histogram(&model_pool, &edges)?;
        kl[metric as usize] = kl_divergence(&p, &q, KL_EPSILON)?;
    }
    Ok(MetricsReport {
        kl,
        emergent: emergent(model)?,
        model_trajectories: model.len(),
        expert_trajectories: expert.len(),
    })
}
