mod common;

use common::{closure_scc_count, random_instance, random_raw_graph, random_solution, SMALL};
use lrt_core::codegen;
use lrt_core::dfg::{condense_sccs, decompose_diagonal};
use lrt_core::model;
use lrt_core::stats::scc_count;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn spilling_more_never_lowers_cost_or_raises_pressure() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut flips = 0;
    while flips < 1000 {
        let inst = random_instance(&mut rng, &SMALL);
        let flags = inst.graph.edge_count() + inst.node_count();
        if flags == 0 {
            continue;
        }
        let base = random_solution(&mut rng, &inst);
        for _ in 0..50 {
            let k = rng.gen_range(0..flags);
            let (mut off, mut on) = (base.clone(), base.clone());
            if k < inst.graph.edge_count() {
                off.edge_spill[k] = false;
                on.edge_spill[k] = true;
            } else {
                off.state_spill[k - inst.graph.edge_count()] = false;
                on.state_spill[k - inst.graph.edge_count()] = true;
            }
            assert!(model::cost(&on, &inst).spill >= model::cost(&off, &inst).spill);
            let (p_on, p_off) = (model::pressure(&on, &inst), model::pressure(&off, &inst));
            assert!(p_on.points.iter().zip(&p_off.points).all(|(a, b)| a <= b));
            flips += 1;
        }
    }
}

#[test]
fn load_count_matches_cost_on_feasible_solutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    while checked < 50 {
        let inst = random_instance(&mut rng, &SMALL);
        let sol = random_solution(&mut rng, &inst);
        if !model::feasible(&sol, &inst).feasible {
            continue;
        }
        let p = codegen::generate(&sol, &inst, false).unwrap();
        assert_eq!(p.load_count() as u64, model::cost(&sol, &inst).uspill);
        p.check_def_before_use().unwrap();
        checked += 1;
    }
}

#[test]
fn scc_count_matches_transitive_closure() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (n, spec, raw) = random_raw_graph(&mut rng, 10);
        assert_eq!(scc_count(&raw), closure_scc_count(n, &spec));
        let condensed = condense_sccs(&raw);
        assert_eq!(scc_count(&condensed), scc_count(&raw));
        assert_eq!(condensed.nodes().len(), scc_count(&raw));
    }
}

#[test]
fn diagonal_decomposition_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let (_, _, raw) = random_raw_graph(&mut rng, 10);
        let once = decompose_diagonal(&raw);
        assert_eq!(decompose_diagonal(&once), once);
    }
}
