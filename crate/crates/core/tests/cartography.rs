use annobudget::cartography::{compute_map, confidence_variability, transitions, CartographyMap, Region, RegionRule, TransitionReport};
use annobudget::model::DynamicsRecord;
use ndarray::Array2;
use proptest::prelude::*;

fn dynamics_strategy() -> impl Strategy<Value = (Vec<String>, DynamicsRecord)> {
    (1usize..40, 2usize..8).prop_flat_map(|(n, e)| {
        proptest::collection::vec(
            prop_oneof![3 => 0.0f64..=1.0, 1 => Just(0.0), 1 => Just(1.0), 1 => Just(0.5)],
            n * e,
        )
        .prop_map(move |values| {
            let ids = (0..n).map(|i| format!("n{i:02}")).collect();
            let gold_probs = Array2::from_shape_vec((n, e), values).unwrap();
            (ids, DynamicsRecord { gold_probs })
        })
    })
}

fn rule_strategy() -> impl Strategy<Value = RegionRule> {
    prop_oneof![
        Just(RegionRule::default()),
        Just(RegionRule::Percentile),
        (0.0f64..=0.5, 0.0f64..=1.0).prop_map(|(v, c)| RegionRule::Threshold {
            variability_threshold: v,
            confidence_threshold: c,
        }),
    ]
}

fn relabel(map: &CartographyMap, regions: &[Region]) -> CartographyMap {
    let mut out = map.clone();
    for (e, &r) in out.entries.iter_mut().zip(regions) {
        e.region = r;
    }
    out
}

proptest! {
    #[test]
    fn statistics_stay_in_bounds((ids, dynamics) in dynamics_strategy(), rule in rule_strategy()) {
        let map = compute_map(&dynamics, &ids, rule, 3, 1).unwrap();
        prop_assert_eq!(map.entries.len(), ids.len());
        for (entry, series) in map.entries.iter().zip(dynamics.gold_probs.rows()) {
            prop_assert!((0.0..=1.0).contains(&entry.confidence));
            prop_assert!((0.0..=0.5).contains(&entry.variability));
            let constant = series.iter().all(|&p| p == series[0]);
            prop_assert_eq!(entry.variability == 0.0, constant);
        }
        let counts = map.region_counts();
        prop_assert_eq!(counts.iter().sum::<usize>(), ids.len());
    }

    #[test]
    fn threshold_rule_is_total_and_ordered(c in 0.0f64..=1.0, v in 0.0f64..=0.5, tv in 0.0f64..=0.5, tc in 0.0f64..=1.0) {
        // A two-epoch series with mean c and population std v, when representable.
        prop_assume!(c - v >= 0.0 && c + v <= 1.0);
        let dynamics = DynamicsRecord { gold_probs: Array2::from_shape_vec((1, 2), vec![c - v, c + v]).unwrap() };
        let rule = RegionRule::Threshold { variability_threshold: tv, confidence_threshold: tc };
        let map = compute_map(&dynamics, &["x".to_string()], rule, 1, 0).unwrap();
        let e = &map.entries[0];
        let expected = if e.variability >= tv {
            Region::Ambiguous
        } else if e.confidence >= tc {
            Region::Easy
        } else {
            Region::Hard
        };
        prop_assert_eq!(e.region, expected);
    }

    #[test]
    fn transition_proportions_sum_to_one(
        (ids, dynamics) in dynamics_strategy(),
        seed in any::<u64>(),
    ) {
        let map = compute_map(&dynamics, &ids, RegionRule::default(), 1, 0).unwrap();
        let mut rng = annobudget::rng::SplitMix64::new(seed);
        let later: Vec<Region> = ids.iter().map(|_| Region::ALL[rng.below(3) as usize]).collect();
        let other = relabel(&map, &later);
        let report = transitions(&map, &other).unwrap();
        let total: f64 = report.proportions.iter().flatten().sum();
        prop_assert_eq!(report.movers + report.non_movers, ids.len());
        if report.movers > 0 {
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(!report.no_transitions);
        } else {
            prop_assert_eq!(total, 0.0);
            prop_assert!(report.no_transitions);
        }
        for i in 0..3 {
            prop_assert_eq!(report.proportions[i][i], 0.0);
        }

        // Instance order does not matter.
        let mut shuffled = other.clone();
        rng.shuffle(&mut shuffled.entries);
        prop_assert_eq!(transitions(&map, &shuffled).unwrap(), report);
    }

    #[test]
    fn percentile_rule_marks_a_third_ambiguous((ids, dynamics) in dynamics_strategy()) {
        let map = compute_map(&dynamics, &ids, RegionRule::Percentile, 1, 0).unwrap();
        let [easy, ambiguous, hard] = map.region_counts();
        prop_assert_eq!(ambiguous, ids.len() / 3);
        prop_assert!(easy >= hard);
    }
}

#[test]
fn constant_and_extreme_series() {
    assert_eq!(confidence_variability(&[0.3, 0.3, 0.3]), (0.3, 0.0));
    let (c, v) = confidence_variability(&[0.0, 1.0]);
    assert_eq!(c, 0.5);
    assert!((v - 0.5).abs() < 1e-15);
}

#[test]
fn default_rule_examples() {
    let gold_probs = Array2::from_shape_vec(
        (3, 4),
        vec![
            0.9, 0.95, 0.9, 0.95, // confident, stable
            0.1, 0.9, 0.1, 0.9, // oscillating
            0.1, 0.05, 0.1, 0.05, // stably wrong
        ],
    )
    .unwrap();
    let ids: Vec<String> = ["e", "a", "h"].iter().map(|s| s.to_string()).collect();
    let map = compute_map(&DynamicsRecord { gold_probs }, &ids, RegionRule::default(), 1, 0).unwrap();
    let regions: Vec<Region> = map.entries.iter().map(|e| e.region).collect();
    assert_eq!(regions, vec![Region::Easy, Region::Ambiguous, Region::Hard]);

    let mut csv = Vec::new();
    map.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next(), Some("instance_id,confidence,variability,region,k,replicate"));
    assert!(text.lines().nth(2).unwrap().contains(",ambiguous,1,0"));
}

#[test]
fn single_epoch_dynamics_are_rejected() {
    let dynamics = DynamicsRecord { gold_probs: Array2::zeros((2, 1)) };
    let ids = vec!["a".to_string(), "b".to_string()];
    assert!(compute_map(&dynamics, &ids, RegionRule::default(), 1, 0).is_err());
}

#[test]
fn six_to_four_split_of_movers() {
    let mut counts = [[0usize; 3]; 3];
    counts[Region::Easy.index()][Region::Ambiguous.index()] = 6;
    counts[Region::Ambiguous.index()][Region::Easy.index()] = 4;
    counts[Region::Hard.index()][Region::Hard.index()] = 9;
    let report = TransitionReport::from_counts(1, 10, counts);
    assert_eq!(report.movers, 10);
    assert_eq!(report.non_movers, 9);
    assert!((report.proportion(Region::Easy, Region::Ambiguous) - 0.6).abs() < 1e-15);
    assert!((report.proportion(Region::Ambiguous, Region::Easy) - 0.4).abs() < 1e-15);

    let identical = TransitionReport::from_counts(1, 10, [[3, 0, 0], [0, 2, 0], [0, 0, 1]]);
    assert!(identical.no_transitions);
    assert!(identical.moves().iter().all(|(_, p, _)| *p == 0.0));

    let pooled = TransitionReport::pooled([&report, &identical]).unwrap();
    assert_eq!(pooled.movers, 10);
    assert_eq!(pooled.non_movers, 15);
}
