//! Simulated network against the in-process solver.

mod common;

use common::oracles::{doubling_ratio, equivalent, pose_payload_per_round};
use common::small_grid;
use dpgo::certify::{InitMethod, SolveConfig};
use dpgo::netsim::run_distributed;
use dpgo::rbcd::Selection;

#[test]
fn distributed_run_reproduces_central_run() {
    for seed in 0..4 {
        for (sel, init) in
            [(Selection::Greedy, InitMethod::Chordal), (Selection::Uniform, InitMethod::SpanningTree), (Selection::Importance, InitMethod::Random)]
        {
            let (g, _) = small_grid(seed, 4);
            let mut cfg = SolveConfig { init, seed, ..Default::default() };
            cfg.local.selection = sel;
            cfg.local.seed = seed;
            let (same, leaks) = equivalent(&g, &cfg);
            assert!(same, "seed {seed} {sel:?}: traces differ");
            assert_eq!(leaks, 0);
        }
    }
}

#[test]
fn payload_scales_with_inter_robot_edges() {
    let r = doubling_ratio(1);
    assert!((1.8..=2.2).contains(&r), "ratio {r}");
}

#[test]
fn no_inter_robot_edges_means_no_pose_payload() {
    let (g, _) = small_grid(0, 1);
    let dist = run_distributed(&g, &SolveConfig::default(), true).unwrap();
    assert_eq!(pose_payload_per_round(&dist.transcript), 0.0);
}
