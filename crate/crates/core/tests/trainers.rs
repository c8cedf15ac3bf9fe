mod common;

use common::*;
use lexdt::lattice::{forward_score, normalized_score, LatticeConfig};
use lexdt::trainer_dt::{
    discrimination_objective, ebw_step, gradient, gt_step, smoothed_objective, train_dt,
    CompetitionCorpus, DampingState, DtConfig, Optimizer, ScoreKind,
};
use lexdt::trainer_ml::{bw_step, ml_objective, train_ml, MlConfig};
use lexdt::worldsim::Corpus;

fn lc() -> LatticeConfig {
    LatticeConfig::default()
}

#[test]
fn ml_objective_matches_enumeration() {
    let (lex, corpus) = toy_corpus(11, 3, 1);
    let want: f64 = corpus
        .clips
        .iter()
        .zip(&corpus.positives)
        .map(|(c, p)| enumerate(c, &p[0], &lex, 0.1).total.ln())
        .sum();
    let got = ml_objective(&corpus, &lex, &lc()).unwrap().value;
    assert!(log_rel_err(got, want) < 1e-10);
}

#[test]
fn bw_counts_match_enumeration() {
    // one sample: reestimated rows are normalized enumerated posteriors
    let (lex, corpus) = toy_corpus(12, 1, 1);
    let t = &corpus.positives[0][0];
    let e = enumerate(&corpus.clips[0], t, &lex, 0.1);
    let cfg = MlConfig {
        floor: 0.0,
        ..MlConfig::default()
    };
    let next = bw_step(&corpus, &lex, &cfg).unwrap().lexicon;
    let m = t.words[0];
    if t.words.iter().filter(|&&w| w == m).count() == 1 {
        let g0 = &e.gamma[0][0];
        let s: f64 = g0.iter().sum();
        for (a, b) in next.entries[m].dists.initial.iter().zip(g0) {
            assert!((a - b / s).abs() < 1e-10);
        }
        for (i, features) in e.occupancy[0].iter().enumerate() {
            for (n, bins) in features.iter().enumerate() {
                let s: f64 = bins.iter().sum();
                for (a, b) in next.entries[m].dists.output[i][n].iter().zip(bins) {
                    assert!((a - b / s).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn bw_never_decreases_likelihood() {
    for seed in 0..6 {
        let (mut lex, corpus) = toy_corpus(100 + seed, 3, 2);
        let cfg = MlConfig::default();
        let mut prev = ml_objective(&corpus, &lex, &cfg.lattice).unwrap().value;
        for _ in 0..15 {
            lex = bw_step(&corpus, &lex, &cfg).unwrap().lexicon;
            let cur = ml_objective(&corpus, &lex, &cfg.lattice).unwrap().value;
            assert!(cur >= prev - 1e-9 * prev.abs(), "seed {seed}: {prev} -> {cur}");
            prev = cur;
        }
    }
}

#[test]
fn ml_trace_is_nondecreasing_and_shuffle_invariant() {
    let (lex, corpus) = toy_corpus(7, 4, 2);
    let cfg = MlConfig {
        max_iterations: 20,
        ..MlConfig::default()
    };
    let (a, trace) = train_ml(&corpus, &lex, &cfg).unwrap();
    for w in trace.windows(2) {
        assert!(w[1].log_likelihood >= w[0].log_likelihood - 1e-9 * w[0].log_likelihood.abs());
    }
    let order = [2, 0, 3, 1];
    let shuffled = Corpus {
        clips: order.iter().map(|&i| corpus.clips[i].clone()).collect(),
        positives: order.iter().map(|&i| corpus.positives[i].clone()).collect(),
    };
    let (b, _) = train_ml(&shuffled, &lex, &cfg).unwrap();
    for (x, y) in a.entries.iter().zip(&b.entries) {
        for r in 0..x.dists.row_count() {
            for (p, q) in x.dists.row(r).iter().zip(y.dists.row(r)) {
                assert!((p - q).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn bw_fixed_point_is_stable() {
    let (lex, corpus) = toy_corpus(21, 3, 1);
    let cfg = MlConfig {
        max_iterations: 3000,
        tolerance: 1e-15,
        floor: 0.0,
        ..MlConfig::default()
    };
    let (fixed, _) = train_ml(&corpus, &lex, &cfg).unwrap();
    let again = bw_step(&corpus, &fixed, &cfg).unwrap().lexicon;
    let mut worst: f64 = 0.0;
    for (x, y) in fixed.entries.iter().zip(&again.entries) {
        for r in 0..x.dists.row_count() {
            for (p, q) in x.dists.row(r).iter().zip(y.dists.row(r)) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    assert!(worst < 1e-8, "{worst}");
}

#[test]
fn objective_examples() {
    let (lex, data) = toy_competition(3, 2, 2);
    // singleton sets contribute nothing
    let single = CompetitionCorpus {
        clips: data.clips.clone(),
        sets: data
            .sets
            .iter()
            .map(|s| lexdt::grammar::CompetitionSet {
                sentences: vec![s.sentences[0].clone()],
                ..s.clone()
            })
            .collect(),
    };
    assert_eq!(discrimination_objective(&single, &lex, &lc()).unwrap().value, 0.0);
    assert_eq!(smoothed_objective(&single, &lex, &lc()).unwrap().value, 0.0);
    // equal scores give log(1/2)
    let twin = CompetitionCorpus {
        clips: data.clips[..1].to_vec(),
        sets: vec![lexdt::grammar::CompetitionSet {
            sentences: vec![data.sets[0].sentences[0].clone(); 2],
            ..data.sets[0].clone()
        }],
    };
    assert!((discrimination_objective(&twin, &lex, &lc()).unwrap().value - 0.5f64.ln()).abs() < 1e-14);
    // hand arithmetic on enumerated likelihoods
    let mut want_o = 0.0;
    let mut want_s = 0.0;
    for set in &data.sets {
        let clip = &data.clips[set.clip_id];
        let l: Vec<f64> = set
            .sentences
            .iter()
            .map(|s| enumerate(clip, s, &lex, 0.1).total)
            .collect();
        want_o += (l[0] / l.iter().sum::<f64>()).ln();
        let n: Vec<f64> = set
            .sentences
            .iter()
            .map(|s| normalized_score(clip, s, &lex, &lc()).unwrap().exp())
            .collect();
        want_s += (n[0] / n.iter().sum::<f64>()).ln();
    }
    let o = discrimination_objective(&data, &lex, &lc()).unwrap().value;
    let s = smoothed_objective(&data, &lex, &lc()).unwrap().value;
    assert!((o - want_o).abs() < 1e-10 * want_o.abs().max(1.0));
    assert!((s - want_s).abs() < 1e-10 * want_s.abs().max(1.0));
}

#[test]
fn gradient_matches_finite_differences() {
    for seed in 0..6 {
        let (lex, data) = toy_competition(40 + seed, 2, 3);
        assert!(parameter_count(&lex) <= 200);
        for kind in [ScoreKind::Normalized, ScoreKind::Likelihood] {
            let g = gradient(&data, &lex, kind, &lc()).unwrap();
            let f = |l: &lexdt::lexicon::Lexicon| match kind {
                ScoreKind::Normalized => smoothed_objective(&data, l, &lc()).unwrap().value,
                ScoreKind::Likelihood => discrimination_objective(&data, l, &lc()).unwrap().value,
            };
            let worst = finite_difference_check(&lex, &g.gradient, f, 1e-6, 1e-8);
            assert!(worst <= 1e-4, "seed {seed} {kind:?}: {worst}");
        }
    }
}

#[test]
fn unused_parameters_have_zero_gradient() {
    let (lex, data) = toy_competition(5, 2, 2);
    let g = gradient(&data, &lex, ScoreKind::Normalized, &lc()).unwrap();
    let used: std::collections::BTreeSet<usize> = data
        .sets
        .iter()
        .flat_map(|s| s.sentences.iter().flat_map(|t| t.words.iter().copied()))
        .collect();
    for m in 0..lex.entry_count() {
        if !used.contains(&m) {
            assert_eq!(g.gradient.entries[m], lex.entries[m].dists.zeros_like());
        }
    }
}

#[test]
fn singleton_sets_are_fixed_points() {
    let (lex, data) = toy_competition(9, 3, 1);
    let d = DampingState::new(&lex, 2.0, 1e-4);
    let cfg = DtConfig::default();
    let g = gt_step(&data, &lex, &d, &cfg).unwrap();
    assert_eq!(g.lexicon.unwrap(), lex);
    let e = ebw_step(&data, &lex, &d, &cfg).unwrap();
    assert_eq!(e.lexicon.unwrap(), lex);
    let (out, trace) = train_dt(&data, &lex, &cfg).unwrap();
    assert_eq!(out, lex);
    assert_eq!(trace.len(), 1);
}

#[test]
fn zero_iterations_return_input() {
    let (lex, data) = toy_competition(9, 2, 3);
    let cfg = DtConfig {
        max_iterations: 0,
        ..DtConfig::default()
    };
    assert_eq!(train_dt(&data, &lex, &cfg).unwrap().0, lex);
}

#[test]
fn dt_accepted_objective_is_nondecreasing() {
    for seed in 0..4 {
        for optimizer in [Optimizer::GrowthTransform, Optimizer::ExtendedBaumWelch] {
            let (lex, data) = toy_competition(70 + seed, 3, 3);
            let cfg = DtConfig {
                optimizer,
                ..DtConfig::default()
            };
            let (_, trace) = train_dt(&data, &lex, &cfg).unwrap();
            let accepted: Vec<f64> = trace.iter().filter(|r| r.accepted).map(|r| r.objective).collect();
            for w in accepted.windows(2) {
                assert!(w[1] >= w[0]);
            }
            assert!(accepted.last().unwrap() >= &accepted[0]);
            assert!(trace.last().unwrap().iteration <= 100);
        }
    }
}

#[test]
fn dt_ranks_positives_first_on_toy_task() {
    for optimizer in [Optimizer::GrowthTransform, Optimizer::ExtendedBaumWelch] {
        let (lex, data) = toy_discrimination_task(5);
        let cfg = DtConfig {
            optimizer,
            ..DtConfig::default()
        };
        let kind = optimizer.score_kind();
        let (out, trace) = train_dt(&data, &lex, &cfg).unwrap();
        assert!(trace.last().unwrap().objective > trace[0].objective, "{optimizer:?}");
        for set in &data.sets {
            let clip = &data.clips[set.clip_id];
            let s: Vec<f64> = set
                .sentences
                .iter()
                .map(|t| match kind {
                    ScoreKind::Likelihood => forward_score(clip, t, &out, &lc()).unwrap(),
                    ScoreKind::Normalized => normalized_score(clip, t, &out, &lc()).unwrap(),
                })
                .collect();
            assert!(s[0] > s[1], "{optimizer:?}: {s:?}");
        }
    }
}

/// Each noun is seen only on clips that show its class next to one other
/// class; only the shared class explains all of a noun's clips.
#[test]
fn ml_learns_nouns_cross_situationally() {
    use lexdt::grammar::SentenceTemplate;
    use lexdt::lexicon::{init_uniform, FeatureConfig, FeatureKind, PosConfig};
    use lexdt::worldsim::{Detection, VideoClip};
    let pos = PosConfig {
        name: "noun".into(),
        state_count: 1,
        features: vec![FeatureKind::ObjectClass],
        bins: vec![3],
        arity: 1,
    };
    let vocab: Vec<(String, String)> = ["a", "b", "c"].iter().map(|w| (w.to_string(), "noun".to_string())).collect();
    let lex = init_uniform(&[pos], &FeatureConfig::default(), &vocab, 0.05, 4).unwrap();
    let mut clips = Vec::new();
    let mut positives = Vec::new();
    for m in 0..3 {
        for other in (0..3).filter(|&o| o != m) {
            let id = clips.len();
            let d = |c: usize, x: f64| Detection {
                class_id: c,
                strength: 1.0,
                x,
                y: 0.0,
            };
            clips.push(VideoClip {
                clip_id: id,
                frames: vec![vec![d(m, 0.0), d(other, 3.0)]; 3],
            });
            positives.push(vec![SentenceTemplate {
                words: vec![m],
                args: vec![vec![0]],
                participant_count: 1,
            }]);
        }
    }
    let corpus = Corpus { clips, positives };
    let (out, trace) = train_ml(&corpus, &lex, &MlConfig::default()).unwrap();
    assert!(trace.last().unwrap().log_likelihood > trace[0].log_likelihood);
    for m in 0..3 {
        let row = &out.entries[m].dists.output[0][0];
        let best = (0..3).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
        assert_eq!(best, m, "{row:?}");
    }
}

mod invariants {
    use super::*;
    use lexdt::trainer_dt::discrimination_weights;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn weights_sum_to_zero_with_positive_first(seed in 0u64..10_000, size in 2usize..4) {
            let (lex, data) = toy_competition(seed, 2, size);
            for set in &data.sets {
                let clip = data.clip(set.clip_id).unwrap();
                for kind in [ScoreKind::Normalized, ScoreKind::Likelihood] {
                    let eps = discrimination_weights(clip, set, &lex, kind, &lc()).unwrap();
                    prop_assert!(eps.iter().sum::<f64>().abs() < 1e-10);
                    prop_assert!(eps[set.positive_index] >= 0.0);
                    for (g, e) in eps.iter().enumerate() {
                        if g != set.positive_index {
                            prop_assert!(*e <= 0.0);
                        }
                    }
                }
            }
        }

        #[test]
        fn discrimination_objectives_are_nonpositive(seed in 0u64..10_000) {
            let (lex, data) = toy_competition(seed, 3, 3);
            prop_assert!(discrimination_objective(&data, &lex, &lc()).unwrap().value <= 0.0);
            prop_assert!(smoothed_objective(&data, &lex, &lc()).unwrap().value <= 0.0);
        }

        #[test]
        fn one_bw_step_never_lowers_likelihood(seed in 0u64..10_000) {
            let (lex, corpus) = toy_corpus(seed, 2, 2);
            let cfg = MlConfig::default();
            let step = bw_step(&corpus, &lex, &cfg).unwrap();
            let after = ml_objective(&corpus, &step.lexicon, &cfg.lattice).unwrap().value;
            prop_assert!(after >= step.log_likelihood - 1e-9 * step.log_likelihood.abs());
        }

        #[test]
        fn json_round_trip_is_exact(seed in 0u64..10_000) {
            let lex = random_lexicon(&mut rng(seed), 3);
            prop_assert_eq!(lexdt::lexicon::Lexicon::from_json(&lex.to_json()).unwrap(), lex);
        }
    }
}
