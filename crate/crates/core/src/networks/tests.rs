use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::sparse_topology::{evolve_with_fraction, random_init_mask};

fn arch(n_agents: usize, n_actions: usize) -> (AgentArch, MixerArch) {
    (
        AgentArch {
            n_agents,
            obs_dim: 3,
            n_actions,
            hidden_dim: 8,
            shared: false,
        },
        MixerArch {
            n_agents,
            state_dim: 4,
            embed_dim: 5,
            hyper_dim: 6,
        },
    )
}

fn small_team(seed: u64) -> QmixNets {
    let (a, m) = arch(2, 3);
    QmixNets::build(0, a, m, "agent", &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn rand_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::uniform(rows, cols, 1.0, rng)
}

#[test]
fn zero_agent_weights_return_output_bias() {
    let mut team = small_team(1);
    let ids = team.agents.param_ids();
    for id in ids {
        let m = team.store.value_mut(id);
        let bias = m.rows() == 1;
        if !(bias && id == team.agents.nets[0].fc2_b) {
            m.scale_in_place(0.0);
        }
    }
    let fc2_b = team.store.value(team.agents.nets[0].fc2_b).clone();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_matrix(1, team.agents.arch.input_dim(), &mut rng);
    let h = rand_matrix(1, 8, &mut rng);
    let (q, _) = team.agents.step_plain(&team.store, 0, &x, &h).unwrap();
    assert_eq!(q, fc2_b);
}

#[test]
fn agent_forward_is_pure() {
    let team = small_team(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_matrix(2, team.agents.arch.input_dim(), &mut rng);
    let h = rand_matrix(2, 8, &mut rng);
    let a = team.agents.step_plain(&team.store, 1, &x, &h).unwrap();
    let b = team.agents.step_plain(&team.store, 1, &x, &h).unwrap();
    assert_eq!(a, b);
}

#[test]
fn tape_unroll_matches_plain_steps() {
    let team = small_team(5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (steps, batch) = (3, 2);
    let inp = rand_matrix(steps * batch, team.agents.arch.input_dim(), &mut rng);
    let mut tape = Tape::new();
    let bound = team.agents.bind(&team.store, &mut tape, true);
    let x = tape.input(inp.clone());
    let q = team.agents.unroll_tape(&mut tape, &bound, 1, x, steps, batch).unwrap();
    let q_tape = tape.value(q).clone();

    let mut h = Matrix::zeros(batch, 8);
    for t in 0..steps {
        let rows: Vec<Vec<f64>> = (0..batch).map(|b| inp.row(t * batch + b).to_vec()).collect();
        let (qt, hn) = team
            .agents
            .step_plain(&team.store, 1, &Matrix::from_rows(&rows).unwrap(), &h)
            .unwrap();
        h = hn;
        for b in 0..batch {
            for u in 0..3 {
                let d = (qt.get(b, u) - q_tape.get(t * batch + b, u)).abs();
                assert!(d <= 1e-12 * (1.0 + qt.get(b, u).abs()), "t={t} b={b} u={u}");
            }
        }
    }
}

#[test]
fn mixer_tape_matches_plain() {
    let team = small_team(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let q = rand_matrix(5, 2, &mut rng);
    let s = rand_matrix(5, 4, &mut rng);
    let plain = team.mixer.forward_plain(&team.store, &q, &s).unwrap();
    let mut tape = Tape::new();
    let qn = tape.input(q);
    let sn = tape.input(s);
    let out = team.mixer.forward_tape(&team.store, &mut tape, true, qn, sn).unwrap();
    for (a, b) in plain.as_slice().iter().zip(tape.value(out).as_slice()) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }
}

#[test]
fn zero_hypernet_outputs_leave_state_value() {
    let mut team = small_team(9);
    let m = team.mixer.clone();
    let zeroed = m.hyper_w1.l2.w;
    let mut ids = vec![m.hyper_w1.l2.w, m.hyper_w1.l2.b, m.hyper_b1.w, m.hyper_b1.b];
    ids.extend([m.hyper_w2.l2.w, m.hyper_w2.l2.b]);
    for id in ids {
        team.store.value_mut(id).scale_in_place(0.0);
    }
    assert!(team.store.value(zeroed).as_slice().iter().all(|v| *v == 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let q = rand_matrix(3, 2, &mut rng);
    let s = rand_matrix(3, 4, &mut rng);
    let out = team.mixer.forward_plain(&team.store, &q, &s).unwrap();
    let h = plain::relu(
        plain::linear(&s, team.store.value(m.value.l1.w), team.store.value(m.value.l1.b)).unwrap(),
    );
    let v = plain::linear(&h, team.store.value(m.value.l2.w), team.store.value(m.value.l2.b)).unwrap();
    assert_eq!(out, v);
}

#[test]
fn mixer_is_monotone_in_each_utility() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..100 {
        let team = small_team(100 + seed);
        let q = rand_matrix(1, 2, &mut rng);
        let s = rand_matrix(1, 4, &mut rng);
        let base = team.mix_plain(&team.store, q.as_slice(), s.as_slice()).unwrap();
        for i in 0..2 {
            let mut qp = q.as_slice().to_vec();
            qp[i] += 0.5;
            let up = team.mix_plain(&team.store, &qp, s.as_slice()).unwrap();
            assert!(up >= base - 1e-12);
        }
    }
}

#[test]
fn greedy_tie_break_and_single_agent() {
    assert_eq!(greedy_joint_action(&[vec![0.0, 1.0, 0.0]], &[vec![true; 3]]), vec![1]);
    assert_eq!(
        greedy_joint_action(&[vec![2.0; 4], vec![2.0; 4]], &[vec![true; 4], vec![true; 4]]),
        vec![0, 0]
    );
    assert_eq!(argmax_available(&[5.0, 1.0, 3.0], &[false, true, true]), Some(2));
    assert_eq!(argmax_available(&[5.0], &[false]), None);
}

#[test]
fn target_copy_freezes_until_sync() {
    let mut team = small_team(12);
    let groups = team.groups(0.5, 0.5, Grouping::Pooled, "").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for g in &groups {
        random_init_mask(&mut team.store, g, &mut rng).unwrap();
    }
    let mut target = TargetCopy::new(&team.store);
    let q = rand_matrix(2, 2, &mut rng);
    let s = rand_matrix(2, 4, &mut rng);
    assert_eq!(
        team.mixer.forward_plain(&team.store, &q, &s).unwrap(),
        team.mixer.forward_plain(&target.store, &q, &s).unwrap()
    );

    let mut grads = crate::numerics::Gradients::new();
    for sl in team.store.slots() {
        let (r, c) = sl.weights.shape();
        grads.insert(sl.slot_id, rand_matrix(r, c, &mut rng));
    }
    let frozen = target.store.clone();
    for g in &groups {
        evolve_with_fraction(&mut team.store, g, &grads, 0.5).unwrap();
    }
    assert_ne!(team.store, frozen);
    assert_eq!(target.store, frozen);
    target.sync(&team.store).unwrap();
    assert_eq!(target.store.mask_ones(), team.store.mask_ones());
    assert_eq!(target.store, team.store);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let team = small_team(14);
    let (a, mut m) = arch(2, 3);
    m.embed_dim = 7;
    let un = UnrestrictedNets::build(1 << 16, a, m, "uagent", &mut ChaCha8Rng::seed_from_u64(15))
        .unwrap();
    let ck = Checkpoint::new("abc".into(), 42, team, Some(un));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    for (p, q) in back.restricted.store.params().iter().zip(ck.restricted.store.params()) {
        for (x, y) in p.value().as_slice().iter().zip(q.value().as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn shared_agents_use_one_parameter_set() {
    let (mut a, m) = arch(3, 2);
    a.shared = true;
    let team = QmixNets::build(0, a, m, "agent", &mut ChaCha8Rng::seed_from_u64(16)).unwrap();
    assert_eq!(team.agents.nets.len(), 1);
    assert_eq!(team.agents.weight_slots().len(), 5);
}
