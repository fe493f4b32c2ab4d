use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::networks::{Grouping, MixerNet, QmixNets, UnrestrictedMixer, UnrestrictedNets};
use crate::sparse_topology::random_init_mask;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

fn grid_arch() -> (AgentArch, MixerArch) {
    (
        AgentArch {
            n_agents: 2,
            obs_dim: 28,
            n_actions: 5,
            hidden_dim: 64,
            shared: false,
        },
        MixerArch {
            n_agents: 2,
            state_dim: 22,
            embed_dim: 32,
            hyper_dim: 64,
        },
    )
}

fn model(s: f64, unrestricted: bool) -> CostModel {
    let (agent, mixer) = grid_arch();
    CostModel {
        agent,
        mixer,
        unrestricted_mixer: unrestricted.then_some(MixerArch {
            embed_dim: 256,
            ..mixer
        }),
        agent_sparsity: s,
        mixer_sparsity: s,
        batch: 32,
    }
}

#[test]
fn layer_formula_examples() {
    assert_eq!(linear_size(0.0, 64, 64), 4096.0);
    assert!(close(linear_size(0.9, 64, 64), 409.6));
    assert!(close(gru_size(0.9, 64, 64), 2457.6));
    assert!(close(linear_fwd_flops(0.9, 64, 64), 812.8));
    assert_eq!(linear_fwd_flops(1.0, 64, 64), 0.0);
    assert_eq!(gru_fwd_flops(1.0, 64, 64), 0.0);
    assert!(close(gru_fwd_flops(0.9, 64, 64) / gru_fwd_flops(0.0, 64, 64), 0.1));
}

#[test]
fn train_formula_examples() {
    let c = ComponentFlops {
        agent: 1000.0,
        mixer: 100.0,
        ..Default::default()
    };
    assert_eq!(train_flops(TrainFormula::Qmix, 32, &c, 2, 3).unwrap(), 140_800.0);
    assert_eq!(train_flops(TrainFormula::ResTable, 32, &c, 2, 3).unwrap(), 32.0 * (4000.0 + 1100.0));
    assert_eq!(train_flops(TrainFormula::ResDerived, 32, &c, 2, 3).unwrap(), 176_000.0);
    let f = 7.0;
    let all = ComponentFlops {
        agent: f,
        mixer: f,
        unrestricted_agent: f,
        unrestricted_mixer: f,
    };
    assert_eq!(train_flops(TrainFormula::Wqmix, 32, &all, 2, 3).unwrap(), 32.0 * 14.0 * f);
    assert!(train_flops(TrainFormula::Qmix, 0, &c, 2, 3).is_err());
    assert!(TrainFormula::parse("vdn").is_err());
}

#[test]
fn dense_report_has_unit_ratios() {
    let r = report::<MixerNet, UnrestrictedMixer>(&model(0.0, false), None, None).unwrap();
    assert!(r.rows.iter().all(|row| row.ratio() == 1.0));
    let w = report::<MixerNet, UnrestrictedMixer>(&model(0.0, true), None, None).unwrap();
    assert!(w.row("train_flops_wqmix").is_some());
    assert!(w.rows.iter().all(|row| row.ratio() == 1.0));
}

#[test]
fn agent_only_sparsity_scales_agent_rows() {
    let mut m = model(0.0, false);
    m.agent_sparsity = 0.9;
    let r = report::<MixerNet, UnrestrictedMixer>(&m, None, None).unwrap();
    assert!(close(r.row("size_agent").unwrap().ratio(), 0.1));
    assert!(close(r.row("flops_agent").unwrap().ratio(), 0.1));
    assert_eq!(r.row("size_mixer").unwrap().ratio(), 1.0);
    assert_eq!(r.row("flops_mixer").unwrap().ratio(), 1.0);
}

#[test]
fn independent_recomputation_of_grid_costs() {
    let s = 0.9;
    let r = report::<MixerNet, UnrestrictedMixer>(&model(s, false), None, None).unwrap();
    let k = 1.0 - s;
    let inp = 28 + 5 + 2;
    let agent_size = 2.0 * k * (inp * 64 + 3 * 64 * 128 + 64 * 5) as f64;
    let agent_flops = 2.0 * k * ((2 * inp - 1) * 64 + 3 * 64 * 255 + 127 * 5) as f64;
    let mixer_size = k * (22 * 64 + 64 * 64 + 22 * 32 + 22 * 64 + 64 * 32 + 22 * 64 + 64) as f64;
    let mixer_flops =
        k * (43 * 64 + 127 * 64 + 43 * 32 + 43 * 64 + 127 * 32 + 43 * 64 + 127) as f64;
    assert!(close(r.row("size_agent").unwrap().budgeted, agent_size));
    assert!(close(r.row("flops_agent").unwrap().budgeted, agent_flops));
    assert!(close(r.row("size_mixer").unwrap().budgeted, mixer_size));
    assert!(close(r.row("flops_mixer").unwrap().budgeted, mixer_flops));
    assert!(close(r.row("total_size").unwrap().budgeted, 2.0 * (agent_size + mixer_size)));
    assert!(close(r.row("inference_flops").unwrap().budgeted, agent_flops));
    assert!(close(
        r.row("train_flops_qmix").unwrap().budgeted,
        4.0 * 32.0 * (agent_flops + mixer_flops)
    ));
    assert!(close(
        r.row("train_flops_res_table").unwrap().budgeted,
        4.0 * 32.0 * agent_flops + 15.0 * 32.0 * mixer_flops
    ));
    assert!(close(
        r.row("train_flops_res_derived").unwrap().budgeted,
        32.0 * (4.0 * agent_flops + 23.0 * mixer_flops)
    ));
}

#[test]
fn network_totals_are_slot_sums() {
    let r = report::<MixerNet, UnrestrictedMixer>(&model(0.7, true), None, None).unwrap();
    for n in &r.networks {
        let s: f64 = n.slots.iter().map(|x| x.flops).sum();
        assert_eq!(n.flops(), s);
    }
}

#[test]
fn costs_decrease_with_sparsity() {
    let mut prev: Option<FlopsReport> = None;
    for s in [0.0, 0.3, 0.6, 0.9, 0.95] {
        let r = report::<MixerNet, UnrestrictedMixer>(&model(s, true), None, None).unwrap();
        if let Some(p) = &prev {
            for (a, b) in p.rows.iter().zip(&r.rows) {
                assert!(b.budgeted < a.budgeted, "{}", a.quantity);
            }
        }
        prev = Some(r);
    }
}

#[test]
fn allocated_parameters_match_accounting() {
    let (agent, mixer) = grid_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut nets = QmixNets::build(0, agent, mixer, "agent", &mut rng).unwrap();
    let umixer = MixerArch {
        embed_dim: 256,
        ..mixer
    };
    let unets = UnrestrictedNets::build(1000, agent, umixer, "uagent", &mut rng).unwrap();
    let dense = report(&model(0.0, true), Some(&nets), Some(&unets)).unwrap();
    for row in &dense.rows {
        assert_eq!(row.realized, Some(row.dense), "{}", row.quantity);
    }
    let a = dense.network("agent").unwrap();
    let m = dense.network("mixer").unwrap();
    assert_eq!(
        (a.dense_size() + m.dense_size()) as usize + a.bias_params + m.bias_params,
        nets.store.total_len()
    );
    assert_eq!((a.dense_size() + m.dense_size()) as usize, nets.store.sparse_len());

    for g in nets.groups(0.9, 0.9, Grouping::Pooled, "").unwrap() {
        random_init_mask(&mut nets.store, &g, &mut rng).unwrap();
    }
    let sparse = report(&model(0.9, false), Some(&nets), None::<&UnrestrictedNets>).unwrap();
    let realized = sparse.row("size_agent").unwrap().realized.unwrap();
    let budget = sparse.row("size_agent").unwrap().budgeted;
    assert!((realized - budget).abs() <= 1.0);
}

#[test]
fn csv_and_table_render() {
    let r = report::<MixerNet, UnrestrictedMixer>(&model(0.9, false), None, None).unwrap();
    let csv = r.to_csv();
    assert!(csv.starts_with(FLOPS_CSV_HEADER));
    assert_eq!(csv.lines().count(), r.rows.len() + 1);
    assert!(r.to_table().contains("train_flops_res_table"));
    assert!(r.to_table().contains("train_flops_res_derived"));
}
