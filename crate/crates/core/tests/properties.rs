use std::collections::BTreeSet;

use proptest::prelude::*;
use sumloop::corpus::{split_pools, LabelRecord, PoolState, Provenance};
use sumloop::engine::checkpoint::{IterationCheckpoint, IterationInfo, RunDir};
use sumloop::engine::{IterationRecord, PhaseTimings};
use sumloop::metrics::{Aggregation, ExampleScores, MetricsReport, Overlap};
use sumloop::model::Prediction;
use sumloop::strategies::{select, ScoreEntry, ScoreNormalization, ScoreTable, SelectionKind};
use sumloop::synth::{generate, SynthOptions};

/// Ids sorted ascending by (score, id), placed by counting how many entries
/// precede each one.
fn rank_oracle(entries: &[(String, i32)]) -> Vec<String> {
    let mut out = vec![String::new(); entries.len()];
    for (id, s) in entries {
        let rank = entries
            .iter()
            .filter(|(oid, os)| os < s || (os == s && oid < id))
            .count();
        out[rank] = id.clone();
    }
    out
}

fn table(entries: &[(String, i32)], f: impl Fn(f64) -> f64) -> ScoreTable {
    ScoreTable::new(
        entries
            .iter()
            .map(|(id, s)| ScoreEntry {
                sample_id: id.clone(),
                score: f(*s as f64),
                token_count: 1,
            })
            .collect(),
        ScoreNormalization::None,
    )
    .unwrap()
}

/// Distinct ids in shuffled order with small integer scores (many ties),
/// plus a budget.
fn scored() -> impl Strategy<Value = (Vec<(String, i32)>, usize)> {
    prop::collection::btree_set(0u32..500, 1..40)
        .prop_flat_map(|ids| {
            let n = ids.len();
            let ids: Vec<String> = ids.into_iter().map(|i| format!("u{i:03}")).collect();
            (
                Just(ids).prop_shuffle(),
                prop::collection::vec(-20i32..=0, n),
                0..=n,
            )
        })
        .prop_map(|(ids, scores, b)| (ids.into_iter().zip(scores).collect(), b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn deterministic_selections_match_rank_oracle((entries, b) in scored(), seed: u64) {
        let t = table(&entries, |x| x);
        let asc = rank_oracle(&entries);
        let n = asc.len();
        let top: Vec<String> = asc[n - b..].iter().rev().cloned().collect();
        let start = (n - b) / 2;
        prop_assert_eq!(select(SelectionKind::Top, &t, b, seed).unwrap(), top);
        prop_assert_eq!(select(SelectionKind::Bottom, &t, b, seed).unwrap(), asc[..b].to_vec());
        prop_assert_eq!(select(SelectionKind::Middle, &t, b, seed).unwrap(), asc[start..start + b].to_vec());
        prop_assert!(select(SelectionKind::None, &t, b, seed).unwrap().is_empty());
    }

    #[test]
    fn random_selection_is_a_reproducible_subset((entries, b) in scored(), seed: u64) {
        let t = table(&entries, |x| x);
        let picked = select(SelectionKind::Random, &t, b, seed).unwrap();
        prop_assert_eq!(&picked, &select(SelectionKind::Random, &t, b, seed).unwrap());
        let set: BTreeSet<&String> = picked.iter().collect();
        prop_assert_eq!(set.len(), b);
        prop_assert!(picked.iter().all(|id| entries.iter().any(|(e, _)| e == id)));

        // entry order does not matter
        let mut rev = entries.clone();
        rev.reverse();
        prop_assert_eq!(&picked, &select(SelectionKind::Random, &table(&rev, |x| x), b, seed).unwrap());
    }

    #[test]
    fn selections_ignore_monotone_rescaling((entries, b) in scored(), seed: u64) {
        let base = table(&entries, |x| x);
        let transforms: [fn(f64) -> f64; 3] = [|x| 3.0 * x - 7.0, |x| x * x * x, |x| x / 4.0 + 100.0];
        for f in transforms {
            let t = table(&entries, f);
            for kind in [SelectionKind::Top, SelectionKind::Bottom, SelectionKind::Middle, SelectionKind::Random] {
                prop_assert_eq!(select(kind, &t, b, seed).unwrap(), select(kind, &base, b, seed).unwrap());
            }
        }
    }

    #[test]
    fn budget_over_table_size_is_rejected((entries, _) in scored()) {
        let t = table(&entries, |x| x);
        prop_assert!(select(SelectionKind::Top, &t, entries.len() + 1, 0).is_err());
    }
}

#[test]
fn random_selection_is_uniform() {
    let entries: Vec<(String, i32)> = (0..20).map(|i| (format!("u{i:02}"), -(i % 3))).collect();
    let t = table(&entries, |x| x);
    let mut counts = [0usize; 20];
    let trials = 20_000;
    for seed in 0..trials {
        for id in select(SelectionKind::Random, &t, 5, seed).unwrap() {
            counts[id[1..].parse::<usize>().unwrap()] += 1;
        }
    }
    // expected 5000 per id, sd about 61
    for c in counts {
        assert!((c as f64 - 5000.0).abs() < 300.0, "{counts:?}");
    }
}

fn pseudo(id: &str, iteration: u32, conf: f64) -> LabelRecord {
    LabelRecord {
        sample_id: id.to_string(),
        summary: format!("summary of {id}"),
        provenance: Provenance::PseudoModel,
        iteration_added: iteration,
        confidence_at_selection: Some(conf),
    }
}

fn expert(id: &str, iteration: u32) -> LabelRecord {
    LabelRecord {
        sample_id: id.to_string(),
        summary: format!("expert summary of {id}"),
        provenance: Provenance::ExpertHuman,
        iteration_added: iteration,
        confidence_at_selection: None,
    }
}

/// Pool after `rounds` commits; each round takes the listed positions of the
/// current unlabeled set, alternating pseudo and expert labels.
fn evolved_pool(n: usize, l0: usize, seed: u64, rounds: &[Vec<usize>], confs: &[f64]) -> (PoolState, BTreeSet<String>) {
    let corpus = generate(&SynthOptions::new(n, seed));
    let all: BTreeSet<String> = corpus.ids().map(String::from).collect();
    let mut pool = split_pools(&corpus, l0, seed).unwrap();
    for (r, picks) in rounds.iter().enumerate() {
        let it = r as u32 + 1;
        let unl: Vec<String> = pool.unlabeled().iter().cloned().collect();
        let chosen: BTreeSet<usize> = picks.iter().filter(|_| !unl.is_empty()).map(|p| p % unl.len()).collect();
        let records = chosen
            .into_iter()
            .enumerate()
            .map(|(k, pos)| {
                if k % 2 == 0 {
                    pseudo(&unl[pos], it, confs[k % confs.len()])
                } else {
                    expert(&unl[pos], it)
                }
            })
            .collect();
        pool.commit(records, it).unwrap();
    }
    (pool, all)
}

fn pool_case() -> impl Strategy<Value = (usize, usize, u64, Vec<Vec<usize>>, Vec<f64>)> {
    (10usize..80).prop_flat_map(|n| {
        (
            Just(n),
            1..n,
            any::<u64>(),
            prop::collection::vec(prop::collection::vec(any::<usize>(), 0..8), 0..5),
            prop::collection::vec(-1e6f64..0.0, 1..4),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pools_stay_a_partition((n, l0, seed, rounds, confs) in pool_case()) {
        let (pool, all) = evolved_pool(n, l0, seed, &rounds, &confs);
        let labeled: BTreeSet<&String> = pool.labeled().keys().collect();
        prop_assert!(labeled.iter().all(|id| !pool.unlabeled().contains(*id)));
        prop_assert_eq!(pool.universe(), all);
        prop_assert_eq!(pool.labeled_len() + pool.unlabeled_len(), n);
        prop_assert_eq!(pool.iteration() as usize, rounds.len());
        let gold = pool.labeled().values().filter(|r| r.provenance == Provenance::Gold).count();
        prop_assert_eq!(gold, l0);
        prop_assert_eq!(PoolState::from_json(&pool.to_json()).unwrap(), pool);
    }

    #[test]
    fn split_is_reproducible(n in 10usize..80, seed: u64) {
        let corpus = generate(&SynthOptions::new(n, 3));
        let l0 = n / 3 + 1;
        prop_assert_eq!(split_pools(&corpus, l0, seed).unwrap(), split_pools(&corpus, l0, seed).unwrap());
    }

    #[test]
    fn checkpoints_round_trip(
        (n, l0, seed, rounds, confs) in pool_case(),
        scores in prop::collection::vec((-1e9f64..=0.0, 1u32..500), 0..20),
        metric in 0.0f64..=1.0,
        ms in 0.0f64..1e6,
        with_scores: bool,
    ) {
        let (pool, _) = evolved_pool(n, l0, seed, &rounds, &confs);
        let it = pool.iteration();
        let preds: Vec<Prediction> = scores
            .iter()
            .enumerate()
            .map(|(k, &(ll, tc))| Prediction {
                sample_id: format!("s{k:04}"),
                summary: format!("pred \"{k}\"\nline"),
                log_likelihood: ll,
                token_count: tc,
            })
            .collect();
        let summary = MetricsReport {
            concept_f1: metric,
            affirmation_f1: metric / 3.0,
            rouge_l_f1: 1.0 - metric,
            n_examples: 1,
            aggregation: Aggregation::Macro,
            per_example: vec![ExampleScores {
                id: "t0001".into(),
                concept_f1: metric,
                affirmation_f1: metric / 3.0,
                rouge_l_f1: 1.0 - metric,
                concepts: Overlap { matched: 1, predicted: 2, reference: 3 },
                affirmations: Overlap::default(),
            }],
        };
        let cp = IterationCheckpoint {
            info: IterationInfo {
                record: IterationRecord {
                    iteration: it,
                    n_train_points: pool.labeled_len(),
                    n_unlabeled: pool.unlabeled_len(),
                    added_pseudo: 0,
                    added_expert: 0,
                    metrics: summary.summary(),
                },
                timings: PhaseTimings { select_ms: ms, fit_ms: ms * 2.0, eval_ms: ms / 7.0, predict_ms: 0.1 },
                reused_from: with_scores.then(|| "base".to_string()),
            },
            pool,
            metrics: summary,
            scores: with_scores.then_some(preds),
        };
        let dir = tempfile::tempdir().unwrap();
        let rd = RunDir::new(dir.path(), "r");
        rd.write_iteration(it, &cp).unwrap();
        let back = rd.read_iteration(it).unwrap();
        prop_assert_eq!(back.pool, cp.pool);
        prop_assert_eq!(back.metrics, cp.metrics);
        prop_assert_eq!(back.scores, cp.scores);
        prop_assert_eq!(back.info, cp.info);
    }
}
