use duelbench::domain::CriterionKind;
use duelbench::qa::QaConfig;
use duelbench::sim::{run_benchmark_sim, BehaviorModel, PopulationGroup, SimConfig};

fn faithful(count: usize) -> Vec<PopulationGroup> {
    vec![PopulationGroup {
        behavior: BehaviorModel::Faithful,
        count,
    }]
}

#[test]
fn uniform_truth_recovers_uniform_scores() {
    let config = SimConfig {
        seed: 3,
        prompts: 10,
        criteria: vec![CriterionKind::Preference],
        true_scores: [(CriterionKind::Preference, vec![25.0; 4])].into(),
        population: faithful(40),
        ..SimConfig::default()
    };
    let run = run_benchmark_sim(&config).unwrap();
    assert!(run.report.complete);
    for s in run.report.rankings[&CriterionKind::Preference].scores.as_slice() {
        assert!((24.0..=26.0).contains(s), "{s}");
    }
}

#[test]
fn all_speeder_votes_are_flagged() {
    let config = SimConfig {
        seed: 4,
        prompts: 2,
        population: vec![PopulationGroup {
            behavior: BehaviorModel::Speeder { response_ms: 300 },
            count: 40,
        }],
        ..SimConfig::default()
    };
    let run = run_benchmark_sim(&config).unwrap();
    let row = run.report.qa.row("speeder").unwrap();
    assert!(row.accepted_votes > 0);
    assert_eq!(row.timing_flagged_votes, row.accepted_votes);
    assert_eq!(row.disqualified, 0);
}

#[test]
fn adversaries_are_caught_and_contamination_drops() {
    let population = vec![
        PopulationGroup {
            behavior: BehaviorModel::Faithful,
            count: 50,
        },
        PopulationGroup {
            behavior: BehaviorModel::AlwaysLeft,
            count: 10,
        },
        PopulationGroup {
            behavior: BehaviorModel::AdversarialRandom,
            count: 5,
        },
    ];
    let config = SimConfig {
        seed: 8,
        prompts: 3,
        population,
        ..SimConfig::default()
    };
    let guarded = run_benchmark_sim(&config).unwrap();
    let baseline = run_benchmark_sim(&SimConfig {
        qa: QaConfig::disabled(),
        ..config
    })
    .unwrap();
    assert!(guarded.report.complete && baseline.report.complete);
    let left = guarded.report.qa.row("always_left").unwrap();
    assert!(left.disqualified_fraction() >= 0.8, "{}", guarded.report.qa.render());
    assert_eq!(guarded.report.qa.row("faithful").unwrap().disqualified, 0);
    assert_eq!(baseline.report.qa.row("always_left").unwrap().disqualified, 0);
    assert!(guarded.report.qa.contamination < baseline.report.qa.contamination);
}

#[test]
fn noisy_population_still_orders_correctly() {
    let config = SimConfig {
        seed: 12,
        prompts: 20,
        criteria: vec![CriterionKind::Coherence],
        population: vec![PopulationGroup {
            behavior: BehaviorModel::Noisy { epsilon: 0.2 },
            count: 40,
        }],
        ..SimConfig::default()
    };
    let run = run_benchmark_sim(&config).unwrap();
    let ranking = &run.report.rankings[&CriterionKind::Coherence];
    // lapses shrink scores toward 25 but leave the order alone in expectation
    assert_eq!(ranking.ordering[0].as_str(), "flux-1");
    assert!(ranking.scores.as_slice()[0] < 29.61);
}

/// Quadrupling the quota should shrink the recovery error, allowing one
/// violation over five seeds. Each run covers all three criteria so the
/// per-seed maximum is less noisy.
#[test]
fn recovery_error_shrinks_with_quota() {
    let error = |seed: u64, quota: u32| {
        let config = SimConfig {
            seed,
            prompts: 4,
            votes_per_comparison: quota,
            population: faithful(quota as usize * 2 + 10),
            ..SimConfig::default()
        };
        run_benchmark_sim(&config).unwrap().report.max_recovery_error()
    };
    let pairs: Vec<(f64, f64)> = (0..5).map(|seed| (error(seed, 4), error(seed, 16))).collect();
    let violations = pairs.iter().filter(|(small, large)| large >= small).count();
    assert!(violations <= 1, "{violations} violations: {pairs:?}");
}
