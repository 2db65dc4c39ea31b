//! Property-based checks of structural invariants across modules.

use holderlab::cli::parse_config;
use holderlab::grid_paths::{read_path_csv, write_path_csv, DistanceBand, Partition, SampledPath};
use holderlab::holder_inequalities::{check_all, trial_inputs, SuiteConfig};
use holderlab::mlmc::{geometric_schedule, level_sum_direct, mc_mean, theoretical_level_sum, DiscreteNorm};
use holderlab::stochastic_schemes::RngStream;
use holderlab::summation::pairwise_sum;
use proptest::prelude::*;

fn grid_strategy() -> impl Strategy<Value = Partition> {
    prop::collection::vec(0.001f64..1.0, 1..20).prop_map(|mut gaps| {
        let total: f64 = gaps.iter().sum();
        gaps.iter_mut().for_each(|g| *g /= total);
        let mut points = vec![0.0];
        let mut t = 0.0;
        for g in &gaps[..gaps.len() - 1] {
            t += g;
            points.push(t);
        }
        points.push(1.0);
        Partition::new(points).unwrap()
    })
}

fn path_strategy() -> impl Strategy<Value = SampledPath> {
    (grid_strategy(), 1usize..3).prop_flat_map(|(grid, dim)| {
        prop::collection::vec(-10.0f64..10.0, grid.len() * dim)
            .prop_map(move |values| SampledPath::new(grid.clone(), values, dim).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_trials_satisfy_every_inequality(seed in any::<u64>()) {
        let inputs = trial_inputs(seed, &SuiteConfig::default()).unwrap();
        for report in check_all(&inputs, 4).unwrap() {
            prop_assert!(report.holds, "{} violated: lhs {} > rhs {}", report.name, report.lhs, report.rhs);
        }
    }

    #[test]
    fn refine_then_restrict_is_identity(path in path_strategy(), k in 1usize..6) {
        let back = path.refine(k).unwrap().restrict(path.grid()).unwrap();
        for (a, b) in back.values().iter().zip(path.values()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn interpolation_reproduces_node_values(path in path_strategy()) {
        for (i, &t) in path.grid().points().iter().enumerate() {
            let v = path.interpolate(t).unwrap();
            prop_assert_eq!(v.as_slice(), path.value(i));
        }
    }

    #[test]
    fn seminorm_is_absolutely_homogeneous_and_translation_invariant(
        path in path_strategy(), lambda in -5.0f64..5.0, r in 0.0f64..1.0,
    ) {
        let base = path.holder_seminorm(r, DistanceBand::Full, 1).unwrap();
        let scaled = path.scaled(lambda).holder_seminorm(r, DistanceBand::Full, 1).unwrap();
        prop_assert!((scaled - lambda.abs() * base).abs() <= 1e-10 * (1.0 + scaled));
        let shifted = path.map_states(path.dim(), |x| x.iter().map(|v| v + 3.5).collect()).unwrap();
        let s = shifted.holder_seminorm(r, DistanceBand::Full, 1).unwrap();
        prop_assert!((s - base).abs() <= 1e-10 * (1.0 + base));
    }

    #[test]
    fn path_csv_round_trips_exactly(path in path_strategy()) {
        let mut buf = Vec::new();
        write_path_csv(&path, &mut buf).unwrap();
        let back = read_path_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, path);
    }

    #[test]
    fn pairwise_sum_is_accurate(xs in prop::collection::vec(-1e6f64..1e6, 0..500)) {
        let exact: f64 = xs.iter().sum();
        let abs: f64 = xs.iter().map(|x| x.abs()).sum();
        prop_assert!((pairwise_sum(&xs) - exact).abs() <= 2.0 * xs.len() as f64 * f64::EPSILON * abs);
    }

    #[test]
    fn streams_are_deterministic_and_distinct(seed in any::<u64>(), idx in 0u64..1000) {
        let a = RngStream::new(seed).derive("tag", idx);
        let b = RngStream::new(seed).derive("tag", idx);
        prop_assert_eq!(a.fingerprint(), b.fingerprint());
        let (mut ua, mut ub) = (a.uniforms(), b.uniforms());
        for _ in 0..8 {
            prop_assert_eq!(ua.next_u64(), ub.next_u64());
        }
        let c = RngStream::new(seed).derive("tag", idx + 1);
        prop_assert_ne!(a.fingerprint(), c.fingerprint());
        let d = RngStream::new(seed).derive("other", idx);
        prop_assert_ne!(a.fingerprint(), d.fingerprint());
    }

    #[test]
    fn geometric_schedule_cost_is_levels_times_finest(levels in 0usize..16, n0 in 1usize..8) {
        let s = geometric_schedule(levels, n0).unwrap();
        prop_assert_eq!(s.finest_level(), levels);
        let want = (((levels + 1) * n0) << levels) as f64;
        prop_assert_eq!(s.total_cost(), want);
    }

    #[test]
    fn level_sum_closed_form_matches_direct_sum(rho in 0.05f64..1.5, levels in 1usize..30) {
        let closed = theoretical_level_sum(rho, levels).unwrap();
        let direct = level_sum_direct(rho, levels);
        prop_assert!((closed - direct).abs() <= 1e-11 * direct);
    }

    #[test]
    fn mean_of_a_deterministic_sampler_is_that_path(path in path_strategy(), m in 1usize..40) {
        let sampler = |_: &RngStream| Ok(path.clone());
        let (mean, err) = mc_mean(&sampler, m, DiscreteNorm::Sup, &RngStream::new(1), Some(&path)).unwrap();
        for (a, b) in mean.values().iter().zip(path.values()) {
            prop_assert!((a - b).abs() <= 1e-13 * (1.0 + b.abs()));
        }
        prop_assert!(err.unwrap() <= 1e-12);
    }

    #[test]
    fn config_file_and_flags_resolve_identically(samples in 1usize..100000, seed in any::<u64>(), p in 1.0f64..6.0) {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, format!("# generated\nsamples = {samples}\nseed = {seed}\np = {p}\n")).unwrap();
        let from_file = parse_config(["holderlab", "euler", "--config", file.to_str().unwrap()]).unwrap();
        let argv = format!("holderlab euler --samples {samples} --seed {seed} --p {p}");
        let from_flags = parse_config(argv.split_whitespace()).unwrap();
        prop_assert_eq!(from_file.seed, from_flags.seed);
        prop_assert_eq!(&from_file.params, &from_flags.params);
    }
}
