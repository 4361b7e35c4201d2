mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ivmatch::ipmodel::ROW_TOLERANCE;
use ivmatch::solver::{incumbent_heuristic, lp_bound, solve, Limits, LpBound, Status};

use common::{brute_force, random_program};

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Large enough for odd-set and parity cuts and reduced-cost fixing to act.
    #[test]
    fn medium_programs_match_enumeration(seed in any::<u64>()) {
        let program = random_program(&mut ChaCha8Rng::seed_from_u64(seed), 11);
        let oracle = brute_force(&program);
        let sol = solve(&program, &Limits::default()).unwrap();
        match oracle {
            None => prop_assert_eq!(sol.status, Status::Infeasible),
            Some((best, _)) => {
                prop_assert_eq!(sol.status, Status::Optimal);
                prop_assert!(close(sol.objective, best), "solver {} vs oracle {}", sol.objective, best);
                let pairs: Vec<(usize, usize)> = sol.pairs.iter().map(|p| (p.long, p.short)).collect();
                let x = program.selection(&pairs).unwrap();
                prop_assert!(program.violations(&x, ROW_TOLERANCE).is_empty());
            }
        }
    }

    #[test]
    fn root_relaxation_bounds_the_optimum(seed in any::<u64>()) {
        let program = random_program(&mut ChaCha8Rng::seed_from_u64(seed), 9);
        let free = vec![None; program.n_vars()];
        match (lp_bound(&program, &free).unwrap(), brute_force(&program)) {
            (LpBound::Bound(b), Some((best, _))) => prop_assert!(b <= best + 1e-7),
            (LpBound::Bound(_), None) | (LpBound::Infeasible, None) => {}
            (LpBound::Infeasible, Some(_)) => prop_assert!(false, "relaxation infeasible but a matching exists"),
        }
    }

    #[test]
    fn heuristic_returns_feasible_points(seed in any::<u64>()) {
        let program = random_program(&mut ChaCha8Rng::seed_from_u64(seed), 9);
        if let Some(x) = incumbent_heuristic(&program) {
            prop_assert!(program.is_feasible(&x));
            prop_assert!(x.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn node_limit_reports_an_honest_gap(seed in any::<u64>()) {
        let program = random_program(&mut ChaCha8Rng::seed_from_u64(seed), 10);
        let limits = Limits { max_nodes: 1, time_limit_secs: None };
        let sol = solve(&program, &limits).unwrap();
        let oracle = brute_force(&program);
        match sol.status {
            Status::Optimal | Status::FeasibleGap => {
                let (best, _) = oracle.expect("solver found a matching");
                prop_assert!(sol.bound <= best + 1e-6 && best <= sol.objective + 1e-6);
                if sol.status == Status::Optimal {
                    prop_assert!(close(sol.objective, best));
                }
            }
            Status::Infeasible => prop_assert!(oracle.is_none()),
            Status::UnknownLimit => {}
        }
    }
}

#[test]
fn zero_node_budget_stops_before_searching() {
    let program = random_program(&mut ChaCha8Rng::seed_from_u64(7), 8);
    let sol = solve(&program, &Limits { max_nodes: 0, time_limit_secs: None }).unwrap();
    assert_eq!(sol.nodes, 0);
    assert!(matches!(sol.status, Status::FeasibleGap | Status::UnknownLimit | Status::Optimal));
}
