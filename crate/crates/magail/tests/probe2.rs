// Temporary diagnostic probe; not part of the suite.

use magail::agents::{
    augment_on_tape, bind_embed, bind_policy, embed_on_tape, policy_forward_on_tape,
    squash_on_tape,
};
use magail::laneworld::{record_demos, Persona, TrackSpec};
use magail::numerics::{ParamStore, Tape, Tensor};
use magail::training::{init_params, TrainConfig};

fn bc_like_grad(store: &mut ParamStore, features: &[f64], action: &[f64], l: usize) {
    store.zero_grads();
    let mut tape = Tape::new();
    let e = bind_embed(&mut tape, store, true).unwrap();
    let p = bind_policy(&mut tape, store, true).unwrap();
    let s_e = embed_on_tape(&mut tape, e, features).unwrap();
    let zl = tape.constant(Tensor::zeros(vec![l]));
    let zg = tape.constant(Tensor::zeros(vec![l]));
    let aug = augment_on_tape(&mut tape, s_e, zl, zg).unwrap();
    let out = policy_forward_on_tape(&mut tape, p, aug).unwrap();
    let pred = squash_on_tape(&mut tape, out.mean).unwrap();
    let target = tape.constant(Tensor::new(vec![3], action.to_vec()).unwrap());
    let diff = tape.sub(pred, target).unwrap();
    let sq = tape.mul(diff, diff).unwrap();
    let loss = tape.mean(sq).unwrap();
    tape.backward(loss).unwrap();
    tape.grads_into(store).unwrap();
    let g_ls = store.grad("policy/log_std").unwrap().to_vec();
    let g_vb = store.grad("policy/value_b").unwrap().to_vec();
    let g_mb = store.grad("policy/mean_b").unwrap().to_vec();
    eprintln!("grad log_std {g_ls:?}");
    eprintln!("grad value_b {g_vb:?}");
    eprintln!("grad mean_b  {g_mb:?}");
}

#[test]
#[ignore]
fn probe_bc_log_std_grad() {
    let dir = std::env::temp_dir().join("magail_probe2");
    std::fs::create_dir_all(&dir).unwrap();
    let spec = TrackSpec::default_track();
    let personas = vec![Persona::by_name("aggressive").unwrap()];
    let ds = record_demos(&spec, &personas, 1, 5, 42, &dir.join("d.jsonl")).unwrap();
    let cfg = TrainConfig { horizon: 5, batch: 1, slot_width: 8, ..TrainConfig::default() };
    let mut store = init_params(&cfg).unwrap();
    store.set_value("policy/log_std", vec![-1.8; 3]).unwrap();
    eprintln!("log_std before {:?}", store.value("policy/log_std").unwrap().data());
    let f = ds.trajectories[0].states[0].clone();
    let a = ds.trajectories[0].actions[0].clone();
    bc_like_grad(&mut store, &f, &a, 8);
}
