use std::collections::BTreeMap;

use foodsec_core::allocator::{
    solve_bruteforce, solve_dp, solve_greedy, AllocationProblem, AllocationResult, Candidate,
};
use foodsec_core::{Error, Group};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Costs on a 0.01 grid; utilities from a small set so that ties are common.
fn random_problem(rng: &mut ChaCha8Rng, max_n: usize, with_floors: bool) -> AllocationProblem {
    let n = rng.random_range(0..=max_n);
    let candidates = (0..n)
        .map(|i| Candidate {
            record_id: format!("r{:03}", rng.random_range(0..1000) * 100 + i),
            utility: rng.random_range(0..8) as f64 * 0.125,
            cost: rng.random_range(0..2000) as f64 / 100.0,
            group: if rng.random_bool(0.5) {
                Group::Rural
            } else {
                Group::Urban
            },
        })
        .collect();
    let mut floors = BTreeMap::new();
    if with_floors {
        floors.insert(Group::Rural, rng.random_range(0..3));
        floors.insert(Group::Urban, rng.random_range(0..3));
    }
    AllocationProblem {
        candidates,
        budget: rng.random_range(0..6000) as f64 / 100.0,
        floors,
        cost_resolution: None,
    }
}

fn check_feasible(p: &AllocationProblem, r: &AllocationResult) {
    assert!(r.total_cost <= p.budget + 1e-9, "{} > {}", r.total_cost, p.budget);
    for (g, &f) in &p.floors {
        assert!(r.per_group_counts[g] >= f, "floor {g:?} unmet");
    }
    let mut ids = r.selected.clone();
    ids.dedup();
    assert_eq!(ids.len(), r.selected.len());
}

#[test]
fn dp_agrees_with_bruteforce_on_200_random_instances() {
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_problem(&mut rng, 15, seed % 2 == 1);
        match (solve_dp(&p), solve_bruteforce(&p)) {
            (Ok(dp), Ok(bf)) => {
                assert_eq!(dp.selected, bf.selected, "seed {seed}");
                assert_eq!(dp.total_utility, bf.total_utility, "seed {seed}");
                check_feasible(&p, &dp);
            }
            (Err(Error::InfeasibleFloors { group: a, .. }), Err(Error::InfeasibleFloors { group: b, .. })) => {
                assert_eq!(a, b, "seed {seed}")
            }
            (a, b) => panic!("seed {seed}: dp {a:?} vs brute force {b:?}"),
        }
    }
}

#[test]
fn greedy_never_beats_dp_and_stays_feasible() {
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let p = random_problem(&mut rng, 15, seed % 2 == 0);
        let (Ok(dp), Ok(greedy)) = (solve_dp(&p), solve_greedy(&p)) else {
            continue;
        };
        assert!(greedy.total_utility <= dp.total_utility, "seed {seed}");
        check_feasible(&p, &greedy);
        check_feasible(&p, &dp);
    }
}

#[test]
fn scaling_costs_and_budget_keeps_the_selection() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let mut p = random_problem(&mut rng, 12, false);
        p.cost_resolution = Some(0.01);
        let base = solve_dp(&p).unwrap();
        // powers of two scale every quantity exactly
        for k in [0.25, 2.0, 8.0] {
            let mut q = p.clone();
            for c in &mut q.candidates {
                c.cost *= k;
            }
            q.budget *= k;
            q.cost_resolution = Some(0.01 * k);
            assert_eq!(solve_dp(&q).unwrap().selected, base.selected, "seed {seed} k {k}");
        }
    }
}

#[test]
fn free_candidate_never_lowers_the_optimum() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let p = random_problem(&mut rng, 12, false);
        let before = solve_dp(&p).unwrap().total_utility;
        let mut q = p.clone();
        q.candidates.push(Candidate {
            record_id: "zz-free".into(),
            utility: rng.random_range(1..5) as f64,
            cost: 0.0,
            group: Group::Urban,
        });
        let after = solve_dp(&q).unwrap();
        assert!(after.total_utility >= before);
        assert!(after.selected.contains(&"zz-free".to_string()));
    }
}

#[test]
fn raising_the_budget_never_lowers_utility() {
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
        let mut p = random_problem(&mut rng, 15, false);
        p.cost_resolution = Some(0.01);
        let mut last = 0.0;
        for step in 0..=20 {
            p.budget = step as f64 * 5.0;
            let dp = solve_dp(&p).unwrap();
            assert_eq!(dp.total_utility, solve_bruteforce(&p).unwrap().total_utility);
            assert!(dp.total_utility >= last, "seed {seed} budget {}", p.budget);
            last = dp.total_utility;
        }
    }
}
