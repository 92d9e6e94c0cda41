mod common;

use ddss::data::{BlockPartition, SparseDataset};
use ddss::model::{lambda_max, LossFamily, ModelSpec, Regularizer};
use ddss::screening::{screen_pass, ActiveSet, RadiusRule};
use ddss::solver::{oracle_solve, reference_blocks, OracleOptions, MASS_TOL};
use ddss::synth::{gen_synthetic, SynthSpec};
use ddss::Problem;
use proptest::prelude::*;

fn instance(n: usize, p: usize, density: f64, ratio: f64, seed: u64, group: bool, ridge: f64) -> Problem {
    let s = gen_synthetic(&SynthSpec { n, p, density, k_true: 3.min(p), noise: 0.2, seed, unit_rows: false }).unwrap();
    let (part, reg) = if group {
        (BlockPartition::equal(p, 2).unwrap(), Regularizer::GroupL2)
    } else {
        (BlockPartition::singletons(p), Regularizer::L1)
    };
    let lmax = lambda_max(LossFamily::Squared, reg, &part, &s.data);
    let spec = ModelSpec::new(LossFamily::Squared, reg, ratio * lmax, ridge, part).unwrap();
    Problem::new(spec, s.data).unwrap()
}

fn blocks_with_mass(problem: &Problem, x: &[f64]) -> Vec<usize> {
    let part = &problem.spec().partition;
    (0..part.len()).filter(|&b| part.block(b).iter().any(|&j| x[j].abs() > MASS_TOL)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Two nested passes at arbitrary points never remove a block the optimum uses.
    #[test]
    fn screening_at_arbitrary_points_is_safe(
        n in 10usize..40,
        p in 4usize..12,
        density in prop_oneof![Just(0.3), Just(1.0)],
        ratio in prop_oneof![Just(0.9), Just(0.5), Just(0.1)],
        seed in 0u64..10_000,
        group in any::<bool>(),
        ridge in prop_oneof![Just(0.0), Just(0.05)],
        x1 in prop::collection::vec(-0.5f64..0.5, 12),
        x2 in prop::collection::vec(-0.5f64..0.5, 12),
        blend in 0.0f64..1.0,
    ) {
        let problem = instance(n, p, density, ratio, seed, group, ridge);
        let oracle = oracle_solve(problem.spec(), problem.data(), &OracleOptions::default()).unwrap();
        let needed = blocks_with_mass(&problem, &oracle.x);
        // points between random and optimal make the gap small enough to eliminate
        let mix = |r: &[f64]| -> Vec<f64> { (0..p).map(|j| blend * oracle.x[j] + (1.0 - blend) * r[j]).collect() };
        let full = ActiveSet::full(&problem.spec().partition);
        let first = screen_pass(&problem, &full, &full.compact(&mix(&x1)).unwrap(), RadiusRule::Safe).unwrap();
        for b in &needed {
            prop_assert!(first.active.blocks().contains(b), "first pass removed block {}", b);
        }
        let next = first.active;
        let x2c = next.project_from(&full, &full.compact(&mix(&x2)).unwrap());
        let second = screen_pass(&problem, &next, &x2c, RadiusRule::Safe).unwrap();
        for b in &needed {
            prop_assert!(second.active.blocks().contains(b), "second pass removed block {}", b);
        }
    }

    /// At an optimum the survivors lie inside the equicorrelation set.
    #[test]
    fn survivors_at_the_optimum_are_equicorrelated(
        n in 10usize..40,
        p in 4usize..12,
        ratio in prop_oneof![Just(0.9), Just(0.5), Just(0.1), Just(0.01)],
        seed in 0u64..10_000,
        group in any::<bool>(),
    ) {
        let problem = instance(n, p, 0.5, ratio, seed, group, 0.0);
        let oracle = oracle_solve(problem.spec(), problem.data(), &OracleOptions::with_tol(1e-14)).unwrap();
        let full = ActiveSet::full(&problem.spec().partition);
        let out = screen_pass(&problem, &full, &full.compact(&oracle.x).unwrap(), RadiusRule::Safe).unwrap();
        let b_star = reference_blocks(&problem, &oracle.x, 1e-6).unwrap();
        for b in out.active.blocks() {
            prop_assert!(b_star.contains(b), "block {} survived outside {:?}", b, b_star);
        }
    }
}

/// `A = I_100`, `y = (10, 0.5, ..., 0.5)`, `lambda = 0.004`: the optimum is
/// `(9.6, 0.1, ..., 0.1)`. Moving `x_2` to 0.3 leaves a small gap under which
/// the radius `sqrt(2 L gap)` with `L = 1` eliminates block 2, which the optimum uses.
#[test]
fn smoothness_only_radius_can_eliminate_an_active_block() {
    let n = 100;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut y = vec![0.5; n];
    y[0] = 10.0;
    let data = SparseDataset::from_dense(&rows, y).unwrap();
    let problem = Problem::new(ModelSpec::lasso(n, 0.004).unwrap(), data).unwrap();
    let mut x_star = vec![0.1; n];
    x_star[0] = 9.6;
    let oracle = oracle_solve(problem.spec(), problem.data(), &OracleOptions::default()).unwrap();
    for (a, b) in oracle.x.iter().zip(&x_star) {
        assert!((a - b).abs() < 1e-12);
    }
    let mut x = x_star.clone();
    x[1] = 0.3;
    let full = ActiveSet::full(&problem.spec().partition);
    let verbatim = screen_pass(&problem, &full, &x, RadiusRule::Verbatim).unwrap();
    assert!(verbatim.report.eliminated.contains(&1), "{:?}", verbatim.report.eliminated);
    let safe = screen_pass(&problem, &full, &x, RadiusRule::Safe).unwrap();
    assert!(safe.report.eliminated.is_empty());
}

#[test]
fn null_iterate_at_lambda_max_clears_every_block() {
    for ratio in [1.0, 2.0] {
        let problem = instance(30, 8, 0.5, ratio, 4, false, 0.0);
        let full = ActiveSet::full(&problem.spec().partition);
        let out = screen_pass(&problem, &full, &[0.0; 8], RadiusRule::Safe).unwrap();
        assert!(out.active.is_empty());
        assert!(out.report.null_certificate);
        assert_eq!(out.report.eliminated.len(), 8);
    }
}

#[test]
fn eliminated_and_survivors_partition_the_tested_blocks() {
    let problem = common::lasso_instance(50, 20, 0.3, 0.3, 8);
    let oracle = oracle_solve(problem.spec(), problem.data(), &OracleOptions::default()).unwrap();
    let full = ActiveSet::full(&problem.spec().partition);
    let out = screen_pass(&problem, &full, &oracle.x, RadiusRule::Safe).unwrap();
    let r = &out.report;
    let mut all: Vec<usize> = r.eliminated.iter().chain(&r.survivors).copied().collect();
    all.sort_unstable();
    assert_eq!(all, r.tested);
    assert_eq!(r.margins.len(), r.tested.len());
    for (b, m) in r.tested.iter().zip(&r.margins) {
        assert_eq!(r.eliminated.contains(b), *m > 0.0);
    }
    assert_eq!(out.active.epoch(), 1);
    assert!(!r.eliminated.is_empty());
}

#[test]
fn converged_runs_keep_the_support() {
    // at an exact optimum the computed gap is rounding noise; support blocks
    // sit on the elimination boundary and must stay
    for (n, p, density, seed) in [(119, 26, 1.0, 100), (58, 34, 0.5, 101)] {
        let problem = common::lasso_instance(n, p, density, 0.9, seed);
        let out = ddss::solver::ddss_sequential(&problem, &ddss::solver::SolverConfig { epochs: 30, ..Default::default() })
            .unwrap();
        assert!(out.final_gap < 1e-12);
        let oracle = oracle_solve(problem.spec(), problem.data(), &OracleOptions::default()).unwrap();
        for b in blocks_with_mass(&problem, &oracle.x) {
            assert!(out.final_active.contains(&b), "block {b} eliminated");
        }
    }
}
