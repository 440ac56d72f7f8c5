//! Slot memory with LSTM read/write controllers.
//!
//! A memory is a matrix `M ∈ R^{k×l}`. Each step runs a read (the read LSTM
//! turns the input into a query, scores every slot by dot product, softmax
//! normalizes the scores, and the output is the attention-weighted slot sum)
//! followed by a write (the write LSTM maps the read output to a write vector
//! and every slot moves toward it by its own attention weight):
//!
//! `M'_j = (1 − α_j)·M_j + α_j·m̀`
//!
//! The same attention distribution drives both halves of the step. Slots the
//! attention ignores are untouched, and the update never grows the largest
//! magnitude beyond `max(|M|, |m̀|)`.
//!
//! Everything is expressed as tape graphs; the plain-value API below runs a
//! private one-shot tape, so a rollout and a gradient pass compute
//! bit-identical values.

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::rng::RngStream;
use crate::numerics::tape::{Tape, TensorRef};
use crate::numerics::tensor::Tensor;

/// Attention weights must sum to 1 within this tolerance before a write.
const ALPHA_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryConfig {
    /// Number of slots.
    pub k: usize,
    /// Slot width; also the controller hidden size.
    pub l: usize,
}

impl MemoryConfig {
    pub fn new(k: usize, l: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("memory slots", "k must be at least 1"));
        }
        if l == 0 {
            return Err(Error::config("memory width", "l must be at least 1"));
        }
        Ok(MemoryConfig { k, l })
    }
}

/// Memory matrix plus both controller states. A value type: operations
/// return new states and never mutate in place.
#[derive(Clone, Debug)]
pub struct MemoryState {
    pub config: MemoryConfig,
    pub m: Tensor,
    pub h_r: Tensor,
    pub c_r: Tensor,
    pub h_w: Tensor,
    pub c_w: Tensor,
}

impl MemoryState {
    /// All-zero memory and controllers: uniform attention, zero output.
    pub fn fresh(config: MemoryConfig) -> Self {
        MemoryState {
            config,
            m: Tensor::zeros(vec![config.k, config.l]),
            h_r: Tensor::zeros(vec![config.l]),
            c_r: Tensor::zeros(vec![config.l]),
            h_w: Tensor::zeros(vec![config.l]),
            c_w: Tensor::zeros(vec![config.l]),
        }
    }

    /// Zeroes the memory and both controllers; the config is kept.
    pub fn reset(&self) -> Self {
        Self::fresh(self.config)
    }

    /// Named tensors for checkpointing, in a fixed order.
    pub fn snapshot(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}M"), self.m.clone()),
            (format!("{prefix}h_r"), self.h_r.clone()),
            (format!("{prefix}c_r"), self.c_r.clone()),
            (format!("{prefix}h_w"), self.h_w.clone()),
            (format!("{prefix}c_w"), self.c_w.clone()),
        ]
    }

    /// Rebuilds a state from checkpoint tensors written by [`snapshot`].
    ///
    /// [`snapshot`]: MemoryState::snapshot
    pub fn from_snapshot(
        config: MemoryConfig,
        tensors: &[(String, Tensor)],
        prefix: &str,
    ) -> Result<Self> {
        let get = |name: &str| -> Result<Tensor> {
            let full = format!("{prefix}{name}");
            tensors
                .iter()
                .find(|(n, _)| *n == full)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Checkpoint { message: format!("tensor {full} missing") })
        };
        let state = MemoryState {
            config,
            m: get("M")?,
            h_r: get("h_r")?,
            c_r: get("c_r")?,
            h_w: get("h_w")?,
            c_w: get("c_w")?,
        };
        if state.m.shape() != [config.k, config.l] {
            return Err(Error::Checkpoint {
                message: format!(
                    "memory shape {:?} does not match config [{}, {}]",
                    state.m.shape(),
                    config.k,
                    config.l
                ),
            });
        }
        for (name, t) in [
            ("h_r", &state.h_r),
            ("c_r", &state.c_r),
            ("h_w", &state.h_w),
            ("c_w", &state.c_w),
        ] {
            if t.shape() != [config.l] {
                return Err(Error::Checkpoint {
                    message: format!("{name} shape {:?} does not match l={}", t.shape(), config.l),
                });
            }
        }
        Ok(state)
    }
}

/// What a read produced: query, attention, and the weighted slot sum.
#[derive(Clone)]
pub struct Readout {
    pub q: Tensor,
    pub alpha: Tensor,
    pub m: Tensor,
}

/// The four gate weight matrices of one controller, as tape nodes.
#[derive(Clone, Copy)]
pub struct CtrlRefs {
    pub w_f: TensorRef,
    pub w_i: TensorRef,
    pub w_c: TensorRef,
    pub w_o: TensorRef,
}

pub const GATE_NAMES: [&str; 4] = ["w_f", "w_i", "w_c", "w_o"];

/// Declares one controller's gate weights `[l, l + x_dim]` drawn from
/// `N(0, std²)`, under `{prefix}/w_f` … `{prefix}/w_o`.
pub fn init_controller(
    store: &mut ParamStore,
    prefix: &str,
    l: usize,
    x_dim: usize,
    std: f64,
    rng: &mut RngStream,
) -> Result<()> {
    for gate in GATE_NAMES {
        let w = rng.normal_tensor(vec![l, l + x_dim], std);
        store.insert(&format!("{prefix}/{gate}"), w)?;
    }
    Ok(())
}

/// Declares both controllers of a memory under `{prefix}/read` and
/// `{prefix}/write`. Controller input width equals the slot width.
pub fn init_memory_params(
    store: &mut ParamStore,
    prefix: &str,
    l: usize,
    std: f64,
    rng: &mut RngStream,
) -> Result<()> {
    init_controller(store, &format!("{prefix}/read"), l, l, std, rng)?;
    init_controller(store, &format!("{prefix}/write"), l, l, std, rng)
}

/// Puts one controller's weights on a tape, trainable or frozen.
pub fn bind_controller(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    trainable: bool,
) -> Result<CtrlRefs> {
    let mut refs = [None; 4];
    for (i, gate) in GATE_NAMES.iter().enumerate() {
        let name = format!("{prefix}/{gate}");
        refs[i] = Some(if trainable {
            tape.param(store, &name)?
        } else {
            tape.constant(store.value(&name)?.clone())
        });
    }
    Ok(CtrlRefs {
        w_f: refs[0].unwrap(),
        w_i: refs[1].unwrap(),
        w_c: refs[2].unwrap(),
        w_o: refs[3].unwrap(),
    })
}

/// Memory state as tape nodes.
#[derive(Clone, Copy)]
pub struct StateRefs {
    pub m: TensorRef,
    pub h_r: TensorRef,
    pub c_r: TensorRef,
    pub h_w: TensorRef,
    pub c_w: TensorRef,
}

/// Readout as tape nodes.
#[derive(Clone, Copy)]
pub struct ReadoutRefs {
    pub q: TensorRef,
    pub alpha: TensorRef,
    pub m: TensorRef,
}

/// Puts a state's tensors on the tape as constants (no gradient flows into
/// the pre-step state; controllers and weights still receive gradient).
pub fn state_constants(tape: &mut Tape, state: &MemoryState) -> StateRefs {
    StateRefs {
        m: tape.constant(state.m.clone()),
        h_r: tape.constant(state.h_r.clone()),
        c_r: tape.constant(state.c_r.clone()),
        h_w: tape.constant(state.h_w.clone()),
        c_w: tape.constant(state.c_w.clone()),
    }
}

/// Gate update: `f=σ(w_f[h;x])`, `i=σ(w_i[h;x])`, `c̃=tanh(w_c[h;x])`,
/// `c'=f·c+i·c̃`, `o=σ(w_o[h;x])`, `h'=o·tanh(c')`. No bias terms.
pub fn lstm_cell_on_tape(
    tape: &mut Tape,
    ctrl: CtrlRefs,
    h: TensorRef,
    c: TensorRef,
    x: TensorRef,
) -> Result<(TensorRef, TensorRef)> {
    let hx = tape.concat(&[h, x])?;
    let f_pre = tape.matvec(ctrl.w_f, hx)?;
    let f = tape.sigmoid(f_pre)?;
    let i_pre = tape.matvec(ctrl.w_i, hx)?;
    let i = tape.sigmoid(i_pre)?;
    let c_tilde_pre = tape.matvec(ctrl.w_c, hx)?;
    let c_tilde = tape.tanh(c_tilde_pre)?;
    let keep = tape.mul(f, c)?;
    let add = tape.mul(i, c_tilde)?;
    let c_new = tape.add(keep, add)?;
    let o_pre = tape.matvec(ctrl.w_o, hx)?;
    let o = tape.sigmoid(o_pre)?;
    let c_act = tape.tanh(c_new)?;
    let h_new = tape.mul(o, c_act)?;
    Ok((h_new, c_new))
}

/// Dot-product scores softmax-normalized, stabilized by subtracting the
/// maximum score (a constant shift, so the distribution is unchanged).
pub fn attend_on_tape(tape: &mut Tape, m: TensorRef, q: TensorRef) -> Result<TensorRef> {
    let scores = tape.matvec(m, q)?;
    let max = tape
        .value(scores)
        .data()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted = tape.add_scalar(scores, -max)?;
    let e = tape.exp(shifted)?;
    let total = tape.sum(e)?;
    let inv = tape.recip(total)?;
    tape.mul_scalar_node(e, inv)
}

/// Read half: advance the read controller on `s`, use its output as the
/// query, attend over slots, and return the weighted slot sum.
pub fn read_on_tape(
    tape: &mut Tape,
    read_ctrl: CtrlRefs,
    state: StateRefs,
    s: TensorRef,
) -> Result<(ReadoutRefs, TensorRef)> {
    let (q, c_r_new) = lstm_cell_on_tape(tape, read_ctrl, state.h_r, state.c_r, s)?;
    let alpha = attend_on_tape(tape, state.m, q)?;
    let m_out = tape.tmatvec(state.m, alpha)?;
    Ok((ReadoutRefs { q, alpha, m: m_out }, c_r_new))
}

/// Write half: advance the write controller on the read output and move
/// every slot toward the write vector by its attention weight.
pub fn write_on_tape(
    tape: &mut Tape,
    write_ctrl: CtrlRefs,
    state: StateRefs,
    readout: ReadoutRefs,
) -> Result<(TensorRef, TensorRef, TensorRef)> {
    let sum: f64 = tape.value(readout.alpha).data().iter().sum();
    if (sum - 1.0).abs() > ALPHA_SUM_TOL {
        return Err(Error::AttentionNotNormalized { sum });
    }
    let (m_hat, c_w_new) = lstm_cell_on_tape(tape, write_ctrl, state.h_w, state.c_w, readout.m)?;
    let erased = tape.scale_rows(state.m, readout.alpha)?;
    let kept = tape.sub(state.m, erased)?;
    let added = tape.outer(readout.alpha, m_hat)?;
    let m_new = tape.add(kept, added)?;
    Ok((m_new, m_hat, c_w_new))
}

/// Full step on a tape: read then write with the same attention. Returns the
/// pre-write readout and the post-write state.
pub fn step_on_tape(
    tape: &mut Tape,
    read_ctrl: CtrlRefs,
    write_ctrl: CtrlRefs,
    state: StateRefs,
    s: TensorRef,
) -> Result<(ReadoutRefs, StateRefs)> {
    let (readout, c_r_new) = read_on_tape(tape, read_ctrl, state, s)?;
    let (m_new, h_w_new, c_w_new) = write_on_tape(tape, write_ctrl, state, readout)?;
    let new_state = StateRefs {
        m: m_new,
        h_r: readout.q,
        c_r: c_r_new,
        h_w: h_w_new,
        c_w: c_w_new,
    };
    Ok((readout, new_state))
}

fn check_input(state: &MemoryState, s: &Tensor, op: &str) -> Result<()> {
    if s.shape() != [state.config.l] {
        return Err(Error::shape(
            op,
            format!("input shape {:?} vs slot width {}", s.shape(), state.config.l),
        ));
    }
    Ok(())
}

/// One gate update outside any model, for small controllers and tests.
pub fn lstm_cell(
    store: &ParamStore,
    prefix: &str,
    h: &Tensor,
    c: &Tensor,
    x: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let ctrl = bind_controller(&mut tape, store, prefix, false)?;
    let h_ref = tape.constant(h.clone());
    let c_ref = tape.constant(c.clone());
    let x_ref = tape.constant(x.clone());
    let (h_new, c_new) = lstm_cell_on_tape(&mut tape, ctrl, h_ref, c_ref, x_ref)?;
    Ok((tape.value(h_new).clone(), tape.value(c_new).clone()))
}

/// Attention weights over slots for a query.
pub fn attend(m: &Tensor, q: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let m_ref = tape.constant(m.clone());
    let q_ref = tape.constant(q.clone());
    let alpha = attend_on_tape(&mut tape, m_ref, q_ref)?;
    Ok(tape.value(alpha).clone())
}

/// Read with plain values: returns the readout and the state with the read
/// controller advanced (memory and write controller untouched).
pub fn read(
    store: &ParamStore,
    prefix: &str,
    state: &MemoryState,
    s: &Tensor,
) -> Result<(Readout, MemoryState)> {
    check_input(state, s, "memory read")?;
    let mut tape = Tape::new();
    let ctrl = bind_controller(&mut tape, store, &format!("{prefix}/read"), false)?;
    let st = state_constants(&mut tape, state);
    let s_ref = tape.constant(s.clone());
    let (ro, c_r_new) = read_on_tape(&mut tape, ctrl, st, s_ref)?;
    let readout = Readout {
        q: tape.value(ro.q).clone(),
        alpha: tape.value(ro.alpha).clone(),
        m: tape.value(ro.m).clone(),
    };
    let mut next = state.clone();
    next.h_r = readout.q.clone();
    next.c_r = tape.value(c_r_new).clone();
    Ok((readout, next))
}

/// Write with plain values: expects the readout produced by [`read`] on this
/// same state, advances the write controller and the memory.
pub fn write(
    store: &ParamStore,
    prefix: &str,
    state: &MemoryState,
    readout: &Readout,
) -> Result<MemoryState> {
    if readout.alpha.len() != state.config.k {
        return Err(Error::SlotMismatch { expected: state.config.k, got: readout.alpha.len() });
    }
    let mut tape = Tape::new();
    let ctrl = bind_controller(&mut tape, store, &format!("{prefix}/write"), false)?;
    let st = state_constants(&mut tape, state);
    let ro = ReadoutRefs {
        q: tape.constant(readout.q.clone()),
        alpha: tape.constant(readout.alpha.clone()),
        m: tape.constant(readout.m.clone()),
    };
    let (m_new, h_w_new, c_w_new) = write_on_tape(&mut tape, ctrl, st, ro)?;
    let mut next = state.clone();
    next.m = tape.value(m_new).clone();
    next.h_w = tape.value(h_w_new).clone();
    next.c_w = tape.value(c_w_new).clone();
    Ok(next)
}

/// Read then write. Returns the pre-write readout and the post-write state.
pub fn step(
    store: &ParamStore,
    prefix: &str,
    state: &MemoryState,
    s: &Tensor,
) -> Result<(Readout, MemoryState)> {
    check_input(state, s, "memory step")?;
    let mut tape = Tape::new();
    let read_ctrl = bind_controller(&mut tape, store, &format!("{prefix}/read"), false)?;
    let write_ctrl = bind_controller(&mut tape, store, &format!("{prefix}/write"), false)?;
    let st = state_constants(&mut tape, state);
    let s_ref = tape.constant(s.clone());
    let (ro, new_st) = step_on_tape(&mut tape, read_ctrl, write_ctrl, st, s_ref)?;
    let readout = Readout {
        q: tape.value(ro.q).clone(),
        alpha: tape.value(ro.alpha).clone(),
        m: tape.value(ro.m).clone(),
    };
    let next = MemoryState {
        config: state.config,
        m: tape.value(new_st.m).clone(),
        h_r: tape.value(new_st.h_r).clone(),
        c_r: tape.value(new_st.c_r).clone(),
        h_w: tape.value(new_st.h_w).clone(),
        c_w: tape.value(new_st.c_w).clone(),
    };
    Ok((readout, next))
}

/// The slot update rule on plain values: `M'_j = (1−α_j)·M_j + α_j·v`.
/// Exposed separately so the rule itself is testable with arbitrary write
/// vectors, not only ones a controller can produce.
pub fn convex_slot_update(m: &Tensor, alpha: &[f64], v: &[f64]) -> Result<Tensor> {
    let (k, l) = (m.rows(), m.cols());
    if alpha.len() != k {
        return Err(Error::SlotMismatch { expected: k, got: alpha.len() });
    }
    if v.len() != l {
        return Err(Error::shape("convex_slot_update", format!("write vector [{}] vs width {l}", v.len())));
    }
    let md = m.data();
    let mut out = vec![0.0; k * l];
    for j in 0..k {
        let a = alpha[j];
        for i in 0..l {
            let x = md[j * l + i];
            out[j * l + i] = x - a * x + a * v[i];
        }
    }
    Tensor::new(vec![k, l], out)
}

/// One minus the cosine of the angle between consecutive memory outputs.
/// Zero when either vector is (numerically) zero, so the first step of an
/// episode carries no change penalty.
pub fn dispersion(prev: &[f64], curr: &[f64]) -> f64 {
    assert_eq!(prev.len(), curr.len(), "dispersion inputs must have equal width");
    let dot: f64 = prev.iter().zip(curr).map(|(a, b)| a * b).sum();
    let np: f64 = prev.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nc: f64 = curr.iter().map(|a| a * a).sum::<f64>().sqrt();
    if np < 1e-12 || nc < 1e-12 {
        return 0.0;
    }
    (1.0 - dot / (np * nc)).clamp(0.0, 2.0)
}

/// Shannon entropy of an attention distribution, in nats. Zero mass
/// contributes zero. Uniform attention over k slots gives ln k.
pub fn attention_entropy(alpha: &[f64]) -> f64 {
    alpha
        .iter()
        .filter(|&&a| a > 0.0)
        .map(|&a| -a * a.ln())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff::{finite_diff_grad, rel_err};
    use crate::numerics::rng::{tags, RngStream};
    use crate::numerics::tape::forward_backward;
    use proptest::prelude::*;

    fn zero_ctrl_store(l: usize) -> ParamStore {
        let mut store = ParamStore::new();
        for gate in GATE_NAMES {
            store.insert(&format!("ctl/{gate}"), Tensor::zeros(vec![l, 2 * l])).unwrap();
        }
        store
    }

    fn random_mem_store(seed: u64, l: usize, std: f64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = RngStream::from_tags(seed, &[tags::PARAM_INIT]);
        init_memory_params(&mut store, "mem", l, std, &mut rng).unwrap();
        store
    }

    #[test]
    fn lstm_zero_weights_zero_inputs() {
        let store = zero_ctrl_store(2);
        let z = Tensor::zeros(vec![2]);
        let (h, c) = lstm_cell(&store, "ctl", &z, &z, &z).unwrap();
        assert_eq!(h.data(), &[0.0, 0.0]);
        assert_eq!(c.data(), &[0.0, 0.0]);
    }

    #[test]
    fn lstm_zero_weights_carries_half_the_cell() {
        // Gates all σ(0)=0.5, candidate tanh(0)=0: c' = 0.5·2 = 1,
        // h' = 0.5·tanh(1).
        let store = zero_ctrl_store(1);
        let z = Tensor::zeros(vec![1]);
        let c = Tensor::from_vec(vec![2.0]).unwrap();
        let (h2, c2) = lstm_cell(&store, "ctl", &z, &c, &z).unwrap();
        assert!((c2.data()[0] - 1.0).abs() < 1e-15);
        assert!((h2.data()[0] - 0.38079707797788245).abs() < 1e-15);
    }

    #[test]
    fn attend_uniform_on_zero_memory() {
        let m = Tensor::zeros(vec![4, 3]);
        let q = Tensor::from_vec(vec![1.0, -2.0, 0.5]).unwrap();
        let alpha = attend(&m, &q).unwrap();
        for &a in alpha.data() {
            assert!((a - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn attend_identity_memory() {
        let m = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let q = Tensor::from_vec(vec![2.0, 0.0]).unwrap();
        let alpha = attend(&m, &q).unwrap();
        assert!((alpha.data()[0] - 0.8807970779778823).abs() < 1e-12);
        assert!((alpha.data()[1] - 0.11920292202211755).abs() < 1e-12);
    }

    #[test]
    fn attend_is_shift_invariant() {
        // Scores gain a constant c by giving every slot an extra all-ones
        // coordinate and the query an extra coordinate of c.
        let base = [0.3, -1.2, 0.7, 2.0, -0.4, 0.9];
        let q3 = [0.5, -1.0, 2.0];
        for c in [0.0, 5.0, -17.0, 300.0] {
            let mut rows = Vec::new();
            for r in 0..2 {
                rows.extend_from_slice(&base[r * 3..(r + 1) * 3]);
                rows.push(1.0);
            }
            let m = Tensor::new(vec![2, 4], rows).unwrap();
            let q0 = Tensor::from_vec(vec![q3[0], q3[1], q3[2], 0.0]).unwrap();
            let qc = Tensor::from_vec(vec![q3[0], q3[1], q3[2], c]).unwrap();
            let a0 = attend(&m, &q0).unwrap();
            let ac = attend(&m, &qc).unwrap();
            for (x, y) in a0.data().iter().zip(ac.data()) {
                assert!((x - y).abs() < 1e-12, "shift {c}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn read_on_fresh_state_is_uniform_and_zero() {
        let store = random_mem_store(3, 4, 0.4);
        let state = MemoryState::fresh(MemoryConfig::new(5, 4).unwrap());
        let s = Tensor::from_vec(vec![0.3, -0.5, 1.0, 0.2]).unwrap();
        let (ro, next) = read(&store, "mem", &state, &s).unwrap();
        for &a in ro.alpha.data() {
            assert!((a - 0.2).abs() < 1e-15);
        }
        assert_eq!(ro.m.data(), &[0.0; 4][..]);
        // Read advanced its controller but left memory and writer alone.
        assert!(next.m.bit_eq(&state.m));
        assert!(next.h_w.bit_eq(&state.h_w));
        assert!(!next.h_r.bit_eq(&state.h_r) || ro.q.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn one_hot_attention_reads_that_row() {
        // Extreme scores force attention onto row 0.
        let m = Tensor::new(vec![2, 2], vec![50.0, 0.0, 0.0, 50.0]).unwrap();
        let q = Tensor::from_vec(vec![3.0, 0.0]).unwrap();
        let alpha = attend(&m, &q).unwrap();
        assert!(alpha.data()[0] > 1.0 - 1e-12);
        // m = Σ α_j M_j ≈ row 0.
        let mut tape = Tape::new();
        let m_ref = tape.constant(m.clone());
        let a_ref = tape.constant(alpha.clone());
        let out = tape.tmatvec(m_ref, a_ref).unwrap();
        let got = tape.value(out).data().to_vec();
        assert!((got[0] - 50.0).abs() < 1e-9);
        assert!(got[1].abs() < 1e-9);
    }

    #[test]
    fn write_one_hot_replaces_exactly_one_slot() {
        let m = Tensor::new(vec![2, 2], vec![1.0, 1.0, 2.0, 2.0]).unwrap();
        let updated = convex_slot_update(&m, &[0.0, 1.0], &[5.0, 5.0]).unwrap();
        assert_eq!(updated.data(), &[1.0, 1.0, 5.0, 5.0]);
    }

    #[test]
    fn write_half_mass_halves_toward_target() {
        let m = Tensor::new(vec![2, 2], vec![1.0, 1.0, 2.0, 2.0]).unwrap();
        let updated = convex_slot_update(&m, &[0.5, 0.5], &[0.0, 0.0]).unwrap();
        assert_eq!(updated.data(), &[0.5, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn untouched_slot_is_bit_identical() {
        let m = Tensor::new(vec![2, 3], vec![0.1, -0.0, 3.25, -7.5, 0.3, 2.0]).unwrap();
        let updated = convex_slot_update(&m, &[0.0, 1.0], &[9.0, 9.0, 9.0]).unwrap();
        assert_eq!(updated.data()[0].to_bits(), m.data()[0].to_bits());
        assert_eq!(updated.data()[2].to_bits(), m.data()[2].to_bits());
    }

    #[test]
    fn write_rejects_unnormalized_attention() {
        let store = random_mem_store(5, 3, 0.3);
        let state = MemoryState::fresh(MemoryConfig::new(2, 3).unwrap());
        let bad = Readout {
            q: Tensor::zeros(vec![3]),
            alpha: Tensor::from_vec(vec![0.9, 0.3]).unwrap(),
            m: Tensor::zeros(vec![3]),
        };
        let err = write(&store, "mem", &state, &bad).unwrap_err();
        assert!(matches!(err, Error::AttentionNotNormalized { .. }));
    }

    #[test]
    fn step_is_deterministic_and_keeps_shape() {
        let store = random_mem_store(7, 4, 0.4);
        let cfg = MemoryConfig::new(6, 4).unwrap();
        let state = MemoryState::fresh(cfg);
        let s = Tensor::from_vec(vec![0.5, -0.2, 0.9, -1.3]).unwrap();
        let (ro1, st1) = step(&store, "mem", &state, &s).unwrap();
        let (ro2, st2) = step(&store, "mem", &state, &s).unwrap();
        assert!(ro1.alpha.bit_eq(&ro2.alpha));
        assert!(st1.m.bit_eq(&st2.m));
        assert_eq!(st1.m.shape(), &[6, 4]);
        assert_eq!(st1.config, cfg);
    }

    #[test]
    fn step_equals_read_then_write() {
        let store = random_mem_store(11, 3, 0.5);
        let cfg = MemoryConfig::new(4, 3).unwrap();
        let mut state = MemoryState::fresh(cfg);
        let mut rng = RngStream::from_tags(2, &[tags::GRAD_CHECK]);
        // Check the composition away from the zero point.
        state.m = rng.normal_tensor(vec![4, 3], 1.0);
        for _ in 0..3 {
            let s = rng.normal_tensor(vec![3], 1.0);
            let (_, st) = step(&store, "mem", &state, &s).unwrap();
            state = st;
        }
        let s = rng.normal_tensor(vec![3], 1.0);
        let (ro_a, st_a) = step(&store, "mem", &state, &s).unwrap();
        let (ro_b, mid) = read(&store, "mem", &state, &s).unwrap();
        let st_b = write(&store, "mem", &mid, &ro_b).unwrap();
        assert!(ro_a.m.bit_eq(&ro_b.m));
        assert!(st_a.m.bit_eq(&st_b.m));
        assert!(st_a.h_r.bit_eq(&mid.h_r));
        assert!(st_a.h_w.bit_eq(&st_b.h_w));
        assert!(st_a.c_w.bit_eq(&st_b.c_w));
    }

    #[test]
    fn rewriting_raises_attention_on_the_written_slot() {
        // Slot 1 dominates before the write. Writing a vector more aligned
        // with q into slot 0 (one-hot) must raise slot 0's attention.
        let m = Tensor::new(vec![2, 2], vec![1.0, 0.0, 3.0, 0.0]).unwrap();
        let q = Tensor::from_vec(vec![1.0, 0.0]).unwrap();
        let before = attend(&m, &q).unwrap();
        let updated = convex_slot_update(&m, &[1.0, 0.0], &[5.0, 0.0]).unwrap();
        let after = attend(&updated, &q).unwrap();
        assert!(before.data()[0] < 0.5);
        assert!(after.data()[0] > before.data()[0]);
        assert!(after.data()[0] > 0.5);
    }

    #[test]
    fn reset_zeroes_everything_and_is_idempotent() {
        let store = random_mem_store(13, 3, 0.5);
        let cfg = MemoryConfig::new(4, 3).unwrap();
        // Start from occupied memory: an all-zero start is a fixed point of
        // the update (zero readout, bias-free gates), so warming from fresh
        // would never populate anything for reset to clear.
        let mut rng = RngStream::from_tags(13, &[tags::GRAD_CHECK, 7]);
        let mut state = MemoryState::fresh(cfg);
        state.m = rng.normal_tensor(vec![4, 3], 1.0);
        let s = Tensor::from_vec(vec![1.0, 2.0, -1.0]).unwrap();
        for _ in 0..5 {
            state = step(&store, "mem", &state, &s).unwrap().1;
        }
        assert!(state.m.max_abs() > 0.0);
        let r1 = state.reset();
        let r2 = r1.reset();
        assert_eq!(r1.m.max_abs(), 0.0);
        assert_eq!(r1.h_r.max_abs(), 0.0);
        assert_eq!(r1.c_w.max_abs(), 0.0);
        assert!(r1.m.bit_eq(&r2.m));
        assert_eq!(r1.config, cfg);
        let (ro, _) = read(&store, "mem", &r1, &s).unwrap();
        for &a in ro.alpha.data() {
            assert!((a - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn snapshot_round_trips() {
        let store = random_mem_store(17, 3, 0.5);
        let cfg = MemoryConfig::new(4, 3).unwrap();
        let mut state = MemoryState::fresh(cfg);
        let mut rng = RngStream::from_tags(17, &[tags::GRAD_CHECK, 8]);
        state.m = rng.normal_tensor(vec![4, 3], 1.0);
        let s = Tensor::from_vec(vec![0.4, -0.1, 0.8]).unwrap();
        for _ in 0..3 {
            state = step(&store, "mem", &state, &s).unwrap().1;
        }
        let snap = state.snapshot("g/");
        let back = MemoryState::from_snapshot(cfg, &snap, "g/").unwrap();
        assert!(back.m.bit_eq(&state.m));
        assert!(back.c_r.bit_eq(&state.c_r));
        assert!(MemoryState::from_snapshot(cfg, &snap, "other/").is_err());
    }

    #[test]
    fn dispersion_matches_hand_values() {
        assert!(dispersion(&[1.0, 2.0], &[1.0, 2.0]) < 1e-15);
        assert!((dispersion(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
        assert!((dispersion(&[1.0, 0.0], &[-1.0, 0.0]) - 2.0).abs() < 1e-15);
        assert!((dispersion(&[1.0, 0.0], &[1.0, 1.0]) - 0.292893218813452).abs() < 1e-12);
        assert_eq!(dispersion(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
        assert_eq!(dispersion(&[1e-13, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn attention_entropy_bounds() {
        let k = 100;
        let uniform = vec![1.0 / k as f64; k];
        assert!((attention_entropy(&uniform) - (k as f64).ln()).abs() < 1e-12);
        let onehot = {
            let mut v = vec![0.0; k];
            v[3] = 1.0;
            v
        };
        assert_eq!(attention_entropy(&onehot), 0.0);
    }

    #[test]
    fn gradient_through_step_matches_finite_differences() {
        let mut store = random_mem_store(23, 3, 0.4);
        let cfg = MemoryConfig::new(4, 3).unwrap();
        let mut rng = RngStream::from_tags(23, &[tags::GRAD_CHECK, 1]);
        let init = MemoryState {
            config: cfg,
            m: rng.normal_tensor(vec![4, 3], 0.5),
            h_r: rng.normal_tensor(vec![3], 0.3),
            c_r: rng.normal_tensor(vec![3], 0.3),
            h_w: rng.normal_tensor(vec![3], 0.3),
            c_w: rng.normal_tensor(vec![3], 0.3),
        };
        let input = rng.normal_tensor(vec![3], 0.8);
        let weights: Vec<f64> = (0..12 + 3).map(|_| rng.normal()).collect();

        let build = |t: &mut Tape, s: &ParamStore| {
            let read_ctrl = bind_controller(t, s, "mem/read", true)?;
            let write_ctrl = bind_controller(t, s, "mem/write", true)?;
            let st = state_constants(t, &init);
            let s_ref = t.constant(input.clone());
            let (ro, new_st) = step_on_tape(t, read_ctrl, write_ctrl, st, s_ref)?;
            // Weighted sums make every output coordinate matter.
            let w_m = t.constant(Tensor::new(vec![4, 3], weights[..12].to_vec()).unwrap());
            let w_o = t.constant(Tensor::from_vec(weights[12..].to_vec()).unwrap());
            let mem_term = t.mul(new_st.m, w_m)?;
            let mem_sum = t.sum(mem_term)?;
            let out_term = t.dot(ro.m, w_o)?;
            let both = t.concat(&[mem_sum, out_term])?;
            t.sum(both)
        };

        store.zero_grads();
        forward_backward(&mut store, build).unwrap();
        let fd = finite_diff_grad(&store, 1e-5, |s| {
            let mut s = s.clone();
            forward_backward(&mut s, build)
        })
        .unwrap();
        for name in store.names() {
            let an = store.grad(&name).unwrap();
            for (i, (&a, &b)) in an.iter().zip(fd[&name].iter()).enumerate() {
                assert!(
                    rel_err(a, b) <= 1e-4,
                    "{name}[{i}]: analytic {a} vs fd {b}"
                );
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn attention_is_a_distribution(
            seed in 0u64..1000,
            k in 1usize..8,
            l in 1usize..6,
        ) {
            let mut rng = RngStream::from_tags(seed, &[tags::GRAD_CHECK, 2]);
            let m = rng.normal_tensor(vec![k, l], 2.0);
            let q = rng.normal_tensor(vec![l], 2.0);
            let alpha = attend(&m, &q).unwrap();
            let sum: f64 = alpha.data().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(alpha.data().iter().all(|&a| a >= 0.0));
        }

        #[test]
        fn slot_update_contracts_and_preserves(
            seed in 0u64..1000,
            k in 1usize..8,
            l in 1usize..6,
            zero_slot in 0usize..8,
        ) {
            let mut rng = RngStream::from_tags(seed, &[tags::GRAD_CHECK, 3]);
            let m = rng.normal_tensor(vec![k, l], 3.0);
            let v: Vec<f64> = (0..l).map(|_| 3.0 * rng.normal()).collect();
            let mut alpha: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
            if zero_slot < k {
                alpha[zero_slot] = 0.0;
            }
            let total: f64 = alpha.iter().sum();
            if total > 0.0 {
                for a in alpha.iter_mut() { *a /= total; }
            } else {
                alpha = vec![1.0 / k as f64; k];
            }
            let updated = convex_slot_update(&m, &alpha, &v).unwrap();

            let bound = m.max_abs().max(v.iter().fold(0.0f64, |acc, x| acc.max(x.abs())));
            prop_assert!(updated.max_abs() <= bound, "max {} exceeds bound {}", updated.max_abs(), bound);

            if zero_slot < k && alpha[zero_slot] == 0.0 {
                for i in 0..l {
                    prop_assert_eq!(
                        updated.data()[zero_slot * l + i].to_bits(),
                        m.data()[zero_slot * l + i].to_bits()
                    );
                }
            }
        }

        #[test]
        fn dispersion_range_and_symmetries(
            seed in 0u64..1000,
            l in 1usize..8,
            a in 0.01f64..50.0,
            b in 0.01f64..50.0,
        ) {
            let mut rng = RngStream::from_tags(seed, &[tags::GRAD_CHECK, 4]);
            let v: Vec<f64> = (0..l).map(|_| rng.normal()).collect();
            let w: Vec<f64> = (0..l).map(|_| rng.normal()).collect();
            let d = dispersion(&v, &w);
            prop_assert!((0.0..=2.0).contains(&d));
            prop_assert!(dispersion(&v, &v) <= 1e-12);
            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            if v.iter().any(|&x| x.abs() > 1e-6) {
                prop_assert!((dispersion(&v, &neg) - 2.0).abs() <= 1e-12);
                let av: Vec<f64> = v.iter().map(|x| a * x).collect();
                let bv: Vec<f64> = v.iter().map(|x| b * x).collect();
                prop_assert!(dispersion(&av, &bv) <= 1e-12);
            }
        }

        #[test]
        fn read_output_stays_in_slot_hull(
            seed in 0u64..1000,
            k in 1usize..8,
            l in 1usize..6,
        ) {
            let mut rng = RngStream::from_tags(seed, &[tags::GRAD_CHECK, 5]);
            let m = rng.normal_tensor(vec![k, l], 2.0);
            let q = rng.normal_tensor(vec![l], 2.0);
            let alpha = attend(&m, &q).unwrap();
            let mut tape = Tape::new();
            let m_ref = tape.constant(m.clone());
            let a_ref = tape.constant(alpha);
            let out = tape.tmatvec(m_ref, a_ref).unwrap();
            let bound = m.max_abs() * (1.0 + 1e-12) + 1e-300;
            prop_assert!(tape.value(out).max_abs() <= bound);
        }

        #[test]
        fn lstm_output_is_strictly_inside_unit_box(
            seed in 0u64..1000,
            l in 1usize..5,
        ) {
            let mut rng = RngStream::from_tags(seed, &[tags::GRAD_CHECK, 6]);
            let mut store = ParamStore::new();
            init_controller(&mut store, "ctl", l, l, 2.0, &mut rng).unwrap();
            let h = rng.normal_tensor(vec![l], 2.0);
            let c = rng.normal_tensor(vec![l], 4.0);
            let x = rng.normal_tensor(vec![l], 2.0);
            let (h2, _) = lstm_cell(&store, "ctl", &h, &c, &x).unwrap();
            prop_assert!(h2.data().iter().all(|&v| v.abs() < 1.0));
        }
    }
}
