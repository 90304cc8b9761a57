//! Ranking metrics and report arithmetic checked against independent references.

mod common;

use proptest::prelude::*;
use rand::Rng;
use std::collections::BTreeMap;
use trajverb::eval::{
    average_precision, chance_scores, confidence_interval, make_report, map_scores, ConditionRuns, ReportInput,
    ScoredEntry, ScoredSet, SeedRun,
};
use trajverb::oracle::{ClipRef, Verb};
use trajverb::rng::rng_from;

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..=12).prop_flat_map(|n| {
        // scores from a small grid so ties are common
        (prop::collection::vec((0u8..6).prop_map(|k| k as f64 / 5.0), n), prop::collection::vec(any::<bool>(), n))
            .prop_filter("needs a positive", |(_, l)| l.iter().any(|&x| x))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn ap_equals_exhaustive_reference((scores, labels) in instance()) {
        let ap = average_precision(&scores, &labels).unwrap();
        prop_assert_eq!(ap, common::exhaustive_ap(&scores, &labels));
        prop_assert!((0.0..=1.0).contains(&ap));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interval_contains_the_mean(samples in prop::collection::vec(-5.0f64..5.0, 2..12)) {
        let ci = confidence_interval(&samples, 0.95).unwrap();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        prop_assert!((ci.mean - mean).abs() < 1e-12);
        prop_assert!(ci.contains(ci.mean));
        prop_assert!((ci.hi - ci.mean - (ci.mean - ci.lo)).abs() < 1e-9);
    }

    #[test]
    fn permuting_entries_leaves_map_unchanged(seed in any::<u64>()) {
        let mut rng = rng_from(seed);
        let set = random_set(&mut rng, &[Verb::Fall, Verb::Roll, Verb::Spin], 20, 0.5);
        let mut shuffled = set.clone();
        for i in (1..shuffled.entries.len()).rev() {
            let j = rng.gen_range(0..=i);
            shuffled.entries.swap(i, j);
        }
        prop_assert_eq!(map_scores(&set).unwrap(), map_scores(&shuffled).unwrap());
    }

    #[test]
    fn macro_is_mean_of_per_verb(seed in any::<u64>()) {
        let set = random_set(&mut rng_from(seed), &Verb::ALL, 10, 0.3);
        let m = map_scores(&set).unwrap();
        let mean = m.per_verb.values().sum::<f64>() / m.per_verb.len() as f64;
        prop_assert!((m.macro_ - mean).abs() < 1e-15);
    }

    #[test]
    fn significance_is_symmetric_and_irreflexive(offsets in prop::collection::vec(0.0f64..0.6, 3)) {
        let names = ["Traj3D", "Traj2D", "Image2D"];
        let input = ReportInput {
            conditions: names
                .iter()
                .zip(&offsets)
                .map(|(n, o)| condition(n, *o, 3))
                .collect(),
            chance: Vec::new(),
            metadata: BTreeMap::new(),
            bootstrap_seed: 1,
        };
        let dir = tempfile::tempdir().unwrap();
        let sum = make_report(&input, dir.path()).unwrap();
        for a in names {
            prop_assert_eq!(sum.significant("micro", a, a), None);
            prop_assert!(sum.significance.iter().all(|(_, x, y, _)| x != y));
            for b in names {
                prop_assert_eq!(sum.significant("macro", a, b), sum.significant("macro", b, a));
                if a != b {
                    let (x, y) = (&sum.conditions[a].micro, &sum.conditions[b].micro);
                    let disjoint = x.hi < y.lo || y.hi < x.lo;
                    prop_assert_eq!(sum.significant("micro", a, b), Some(disjoint));
                }
            }
        }
    }
}

fn random_set<R: Rng>(rng: &mut R, verbs: &[Verb], per_verb: u64, skill: f64) -> ScoredSet {
    let mut entries = Vec::new();
    for &verb in verbs {
        for i in 0..per_verb {
            let label = i % 3 == 0 || i == 1;
            let score = rng.gen::<f64>() + if label { skill } else { 0.0 };
            entries.push(ScoredEntry { verb, clip: ClipRef { episode_seed: i, start_frame: 0 }, score, label });
        }
    }
    ScoredSet { entries }
}

fn condition(name: &str, skill: f64, seeds: u64) -> ConditionRuns {
    ConditionRuns {
        name: name.to_string(),
        label: name.to_string(),
        runs: (0..seeds)
            .map(|s| {
                let mut rng = rng_from(s * 1000 + (skill * 1e6) as u64);
                SeedRun {
                    seed: s,
                    scores: random_set(&mut rng, &[Verb::Fall, Verb::Roll], 30, skill),
                    probe_mse: Some(1.0 - skill + 0.01 * s as f64),
                }
            })
            .collect(),
    }
}

#[test]
fn random_scores_give_prevalence() {
    // n = 2000, prevalence 0.4, 100 trials, each within 0.03
    let mut rng = rng_from(11);
    for _ in 0..100 {
        let labels: Vec<bool> = (0..2000).map(|i| i % 5 < 2).collect();
        let scores: Vec<f64> = (0..2000).map(|_| rng.gen()).collect();
        let ap = average_precision(&scores, &labels).unwrap();
        assert!((ap - 0.4).abs() < 0.03, "{ap}");
    }
}

#[test]
fn micro_matches_macro_for_identical_verbs() {
    // every verb carries the same label pattern and the same score law, with
    // scores drawn in disjoint ranges per verb offset to keep pooling fair
    let mut rng = rng_from(5);
    let verbs = [Verb::Fall, Verb::Roll, Verb::Slide, Verb::Spin];
    let mut micro = 0.0;
    let mut macro_ = 0.0;
    let trials = 200;
    for _ in 0..trials {
        let set = random_set(&mut rng, &verbs, 200, 0.4);
        let m = map_scores(&set).unwrap();
        micro += m.micro / trials as f64;
        macro_ += m.macro_ / trials as f64;
    }
    assert!((micro - macro_).abs() < 0.01, "micro {micro} macro {macro_}");
}

#[test]
fn two_verbs_with_known_ap_average_exactly() {
    // fall: positives at ranks 1 and 3 -> (1 + 2/3) / 2 = 0.8333...
    // roll: positives at ranks 1 and 2 -> 1.0
    // macro = 0.9166...
    let e = |verb, i: u64, score, label| ScoredEntry { verb, clip: ClipRef { episode_seed: i, start_frame: 0 }, score, label };
    let set = ScoredSet {
        entries: vec![
            e(Verb::Fall, 0, 0.9, true),
            e(Verb::Fall, 1, 0.8, false),
            e(Verb::Fall, 2, 0.7, true),
            e(Verb::Roll, 3, 0.3, true),
            e(Verb::Roll, 4, 0.2, true),
            e(Verb::Roll, 5, 0.1, false),
        ],
    };
    let m = map_scores(&set).unwrap();
    assert_eq!(m.per_verb[&Verb::Fall], (1.0 + 2.0 / 3.0) / 2.0);
    assert_eq!(m.per_verb[&Verb::Roll], 1.0);
    assert_eq!(m.macro_, ((1.0 + 2.0 / 3.0) / 2.0 + 1.0) / 2.0);
}

#[test]
fn table_intervals_recompute_from_per_seed_metrics() {
    let input = ReportInput {
        conditions: vec![condition("Traj3D", 0.5, 5), condition("Traj2D", 0.4, 4), condition("Random", 0.0, 3)],
        chance: (0..3).map(|s| SeedRun { seed: s, scores: chance_scores(&random_set(&mut rng_from(s), &[Verb::Fall, Verb::Roll], 30, 0.0), &mut rng_from(90 + s)), probe_mse: None }).collect(),
        metadata: BTreeMap::new(),
        bootstrap_seed: 3,
    };
    let dir = tempfile::tempdir().unwrap();
    make_report(&input, dir.path()).unwrap();

    let per_seed = std::fs::read_to_string(dir.path().join("per_seed.csv")).unwrap();
    let mut micro: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut macro_: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for line in per_seed.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        micro.entry(f[0].to_string()).or_default().push(f[2].parse().unwrap());
        macro_.entry(f[0].to_string()).or_default().push(f[3].parse().unwrap());
    }
    let ci = |xs: &[f64]| {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let half = common::T975[xs.len() - 2] * sd / n.sqrt();
        [mean, (mean - half).clamp(0.0, 1.0), (mean + half).clamp(0.0, 1.0)].map(|v| format!("{:.2}", v * 100.0))
    };
    let table = std::fs::read_to_string(dir.path().join("table1.csv")).unwrap();
    let mut rows = 0;
    for line in table.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let expect: Vec<String> = ci(&micro[f[0]]).into_iter().chain(ci(&macro_[f[0]])).collect();
        assert_eq!(f[1..].to_vec(), expect, "{}", f[0]);
        rows += 1;
    }
    assert_eq!(rows, 3);
}

#[test]
fn regenerated_report_is_byte_identical() {
    let input = ReportInput {
        conditions: vec![condition("Traj3D", 0.5, 3), condition("Image2D", 0.3, 3)],
        chance: Vec::new(),
        metadata: BTreeMap::from([("config_hash".to_string(), "abc".to_string())]),
        bootstrap_seed: 9,
    };
    let dir = tempfile::tempdir().unwrap();
    make_report(&input, &dir.path().join("a")).unwrap();
    make_report(&input, &dir.path().join("b")).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(dir.path().join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 10);
    for n in names {
        assert_eq!(std::fs::read(dir.path().join("a").join(&n)).unwrap(), std::fs::read(dir.path().join("b").join(&n)).unwrap());
    }
}
