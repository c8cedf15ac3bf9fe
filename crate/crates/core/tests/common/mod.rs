//! Shared helpers for integration tests: random small instances and an
//! exhaustive enumerator over every (assignment, state) path of a clip.

#![allow(dead_code)]

use lexdt::grammar::SentenceTemplate;
use lexdt::lattice::{compute_features, track_weight};
use lexdt::lexicon::{init_random, FeatureConfig, FeatureKind, Lexicon, PosConfig};
use lexdt::worldsim::{Detection, VideoClip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CLASSES: usize = 3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Four parts of speech with the given state counts (noun, adverb, verb,
/// preposition) and two words each.
pub fn small_lexicon(states: [usize; 4], seed: u64) -> Lexicon {
    let pos = |name: &str, s: usize, features: Vec<FeatureKind>, bins: Vec<usize>, arity: usize| PosConfig {
        name: name.into(),
        state_count: s,
        features,
        bins,
        arity,
    };
    let table = vec![
        pos("noun", states[0], vec![FeatureKind::ObjectClass], vec![CLASSES], 1),
        pos("adverb", states[1], vec![FeatureKind::ActorSpeed], vec![3], 1),
        pos(
            "verb",
            states[2],
            vec![FeatureKind::DistanceChange, FeatureKind::ActorSpeed],
            vec![3, 3],
            2,
        ),
        pos("preposition", states[3], vec![FeatureKind::RelativeAngle], vec![4], 2),
    ];
    let vocab: Vec<(String, String)> = [
        ("n0", "noun"),
        ("n1", "noun"),
        ("a0", "adverb"),
        ("a1", "adverb"),
        ("v0", "verb"),
        ("v1", "verb"),
        ("p0", "preposition"),
        ("p1", "preposition"),
    ]
    .iter()
    .map(|(w, p)| (w.to_string(), p.to_string()))
    .collect();
    init_random(&table, &FeatureConfig::default(), &vocab, 0.05, seed).unwrap()
}

pub fn random_lexicon(r: &mut ChaCha8Rng, max_states: usize) -> Lexicon {
    let mut s = [1; 4];
    for x in s.iter_mut() {
        *x = r.random_range(1..=max_states);
    }
    small_lexicon(s, r.random())
}

pub fn random_template(r: &mut ChaCha8Rng, lexicon: &Lexicon, max_words: usize, max_participants: usize) -> SentenceTemplate {
    loop {
        let participants = r.random_range(1..=max_participants);
        let len = r.random_range(1..=max_words);
        let mut words = Vec::new();
        let mut args = Vec::new();
        for _ in 0..len {
            let m = loop {
                let m = r.random_range(0..lexicon.entry_count());
                if lexicon.pos_of(m).arity <= participants.max(1) && (lexicon.pos_of(m).arity == 1 || participants >= 2) {
                    break m;
                }
            };
            let a: Vec<usize> = if lexicon.pos_of(m).arity == 1 {
                vec![r.random_range(0..participants)]
            } else {
                let x = r.random_range(0..participants);
                let mut y = r.random_range(0..participants);
                while y == x {
                    y = r.random_range(0..participants);
                }
                vec![x, y]
            };
            words.push(m);
            args.push(a);
        }
        let t = SentenceTemplate {
            words,
            args,
            participant_count: participants,
        };
        if t.check(lexicon).is_ok() {
            return t;
        }
    }
}

pub fn random_clip(r: &mut ChaCha8Rng, max_frames: usize, max_dets: usize) -> VideoClip {
    let frames = r.random_range(1..=max_frames);
    VideoClip {
        clip_id: 0,
        frames: (0..frames)
            .map(|_| {
                (0..r.random_range(1..=max_dets))
                    .map(|_| Detection {
                        class_id: r.random_range(0..CLASSES),
                        strength: r.random_range(0.05..1.0),
                        x: r.random_range(0.0..2.5),
                        y: r.random_range(0.0..2.5),
                    })
                    .collect()
            })
            .collect(),
    }
}

pub struct Instance {
    pub lexicon: Lexicon,
    pub template: SentenceTemplate,
    pub clip: VideoClip,
}

/// Within the exhaustive-check bounds: <= 3 frames, <= 3 detections,
/// <= 2 participants, <= 3 words, <= 2 states.
pub fn random_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let lexicon = random_lexicon(&mut r, 2);
    let template = random_template(&mut r, &lexicon, 3, 2);
    let clip = random_clip(&mut r, 3, 3);
    Instance { lexicon, template, clip }
}

/// Exhaustive sums over every path, with normalized posteriors.
pub struct Enumeration {
    pub total: f64,
    pub best: f64,
    pub best_assignment: Vec<Vec<usize>>,
    pub best_states: Vec<Vec<usize>>,
    /// `gamma[l][t][i]`
    pub gamma: Vec<Vec<Vec<f64>>>,
    /// `xi[l][t - 1][i][k]`
    pub xi: Vec<Vec<Vec<Vec<f64>>>>,
    /// `occupancy[l][i][n][h]`
    pub occupancy: Vec<Vec<Vec<Vec<f64>>>>,
}

fn digits(mut index: usize, radices: &[usize]) -> Vec<usize> {
    radices
        .iter()
        .map(|&r| {
            let d = index % r;
            index /= r;
            d
        })
        .collect()
}

pub fn enumerate(clip: &VideoClip, template: &SentenceTemplate, lexicon: &Lexicon, kappa: f64) -> Enumeration {
    let frames = clip.frames.len();
    let parts = template.participant_count;
    let words = template.len();
    let states: Vec<usize> = template.words.iter().map(|&m| lexicon.pos_of(m).state_count).collect();

    let assign_radices: Vec<usize> = (0..frames).flat_map(|t| vec![clip.frames[t].len(); parts]).collect();
    let assign_total: usize = assign_radices.iter().product();
    let state_radices: Vec<usize> = (0..frames).flat_map(|_| states.clone()).collect();
    let state_total: usize = state_radices.iter().product();

    let mut e = Enumeration {
        total: 0.0,
        best: 0.0,
        best_assignment: Vec::new(),
        best_states: Vec::new(),
        gamma: states.iter().map(|&i| vec![vec![0.0; i]; frames]).collect(),
        xi: states
            .iter()
            .map(|&i| vec![vec![vec![0.0; i]; i]; frames.saturating_sub(1)])
            .collect(),
        occupancy: template
            .words
            .iter()
            .map(|&m| {
                let pos = lexicon.pos_of(m);
                vec![pos.bins.iter().map(|&z| vec![0.0; z]).collect(); pos.state_count]
            })
            .collect(),
    };
    for a in 0..assign_total {
        let flat = digits(a, &assign_radices);
        let assignment: Vec<Vec<usize>> = flat.chunks(parts).map(|c| c.to_vec()).collect();
        let w = track_weight(clip, &assignment, kappa).unwrap();
        let feats = compute_features(clip, &assignment, template, lexicon).unwrap();
        for s in 0..state_total {
            let flat_q = digits(s, &state_radices);
            // q[t][l]
            let q: Vec<&[usize]> = flat_q.chunks(words).collect();
            let mut p = w;
            for l in 0..words {
                let d = &lexicon.entries[template.words[l]].dists;
                p *= d.initial[q[0][l]];
                for t in 1..frames {
                    p *= d.transition[q[t - 1][l]][q[t][l]];
                }
                for t in 0..frames {
                    for (n, &h) in feats.features[l][t].iter().enumerate() {
                        p *= d.output[q[t][l]][n][h];
                    }
                }
            }
            e.total += p;
            if p > e.best {
                e.best = p;
                e.best_assignment = assignment.clone();
                e.best_states = (0..words).map(|l| (0..frames).map(|t| q[t][l]).collect()).collect();
            }
            for l in 0..words {
                for t in 0..frames {
                    e.gamma[l][t][q[t][l]] += p;
                    if t > 0 {
                        e.xi[l][t - 1][q[t - 1][l]][q[t][l]] += p;
                    }
                    for (n, &h) in feats.features[l][t].iter().enumerate() {
                        e.occupancy[l][q[t][l]][n][h] += p;
                    }
                }
            }
        }
    }
    let z = e.total;
    for g in e.gamma.iter_mut().flatten().flatten() {
        *g /= z;
    }
    for x in e.xi.iter_mut().flatten().flatten().flatten() {
        *x /= z;
    }
    for o in e.occupancy.iter_mut().flatten().flatten().flatten() {
        *o /= z;
    }
    e
}

pub fn log_rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn toy_clips(r: &mut ChaCha8Rng, count: usize, max_frames: usize, max_dets: usize) -> Vec<VideoClip> {
    (0..count)
        .map(|id| {
            let mut c = random_clip(r, max_frames, max_dets);
            if c.frames.len() < 2 {
                c.frames.push(c.frames[0].clone());
            }
            c.clip_id = id;
            c
        })
        .collect()
}

/// Random lexicon plus clips, each with a few random positive sentences.
pub fn toy_corpus(seed: u64, clips: usize, per_clip: usize) -> (Lexicon, lexdt::worldsim::Corpus) {
    let mut r = rng(seed);
    let lexicon = random_lexicon(&mut r, 2);
    let clips = toy_clips(&mut r, clips, 3, 3);
    let positives = clips
        .iter()
        .map(|_| (0..per_clip).map(|_| random_template(&mut r, &lexicon, 3, 2)).collect())
        .collect();
    (lexicon, lexdt::worldsim::Corpus { clips, positives })
}

/// Random lexicon plus one competition set of distinct random sentences per clip.
pub fn toy_competition(seed: u64, clips: usize, set_size: usize) -> (Lexicon, lexdt::trainer_dt::CompetitionCorpus) {
    let mut r = rng(seed);
    let lexicon = random_lexicon(&mut r, 2);
    let clips = toy_clips(&mut r, clips, 3, 3);
    let sets = clips
        .iter()
        .map(|c| {
            let mut sentences: Vec<SentenceTemplate> = Vec::new();
            while sentences.len() < set_size {
                let t = random_template(&mut r, &lexicon, 2, 2);
                if !sentences.contains(&t) {
                    sentences.push(t);
                }
            }
            lexdt::grammar::CompetitionSet {
                clip_id: c.clip_id,
                sentences,
                positive_index: 0,
            }
        })
        .collect();
    (lexicon, lexdt::trainer_dt::CompetitionCorpus { clips, sets })
}

pub fn parameter_count(lexicon: &Lexicon) -> usize {
    lexicon
        .entries
        .iter()
        .map(|e| (0..e.dists.row_count()).map(|r| e.dists.row(r).len()).sum::<usize>())
        .sum()
}

/// Compares an analytic gradient with central differences of `f` over raw
/// (unnormalized) parameters; returns the worst relative error among
/// components above the absolute floor.
pub fn finite_difference_check(
    lexicon: &Lexicon,
    analytic: &lexdt::lexicon::ParamTable,
    f: impl Fn(&Lexicon) -> f64,
    step: f64,
    abs_floor: f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for m in 0..lexicon.entry_count() {
        for row in 0..lexicon.entries[m].dists.row_count() {
            for k in 0..lexicon.entries[m].dists.row(row).len() {
                let mut plus = lexicon.clone();
                plus.entries[m].dists.row_mut(row)[k] += step;
                let mut minus = lexicon.clone();
                minus.entries[m].dists.row_mut(row)[k] -= step;
                let fd = (f(&plus) - f(&minus)) / (2.0 * step);
                let g = analytic.entries[m].row(row)[k];
                let diff = (fd - g).abs();
                if diff <= abs_floor {
                    continue;
                }
                worst = worst.max(diff / g.abs().max(fd.abs()));
            }
        }
    }
    worst
}

/// Two nouns, two clips: clip 0 shows class 0 (plus a weaker class-2
/// distractor), clip 1 shows class 1. Each clip's set ranks its own noun
/// against the other noun.
pub fn toy_discrimination_task(seed: u64) -> (Lexicon, lexdt::trainer_dt::CompetitionCorpus) {
    let pos = PosConfig {
        name: "noun".into(),
        state_count: 2,
        features: vec![FeatureKind::ObjectClass],
        bins: vec![CLASSES],
        arity: 1,
    };
    let vocab = vec![("a".to_string(), "noun".to_string()), ("b".to_string(), "noun".to_string())];
    let lexicon = lexdt::lexicon::init_uniform(&[pos], &FeatureConfig::default(), &vocab, 0.05, seed).unwrap();
    let mut r = rng(seed);
    let clips: Vec<VideoClip> = (0..2)
        .map(|id| VideoClip {
            clip_id: id,
            frames: (0..3)
                .map(|t| {
                    vec![
                        Detection {
                            class_id: id,
                            strength: r.random_range(0.7..1.0),
                            x: t as f64 * 0.5,
                            y: 0.0,
                        },
                        Detection {
                            class_id: 2,
                            strength: r.random_range(0.2..0.5),
                            x: 1.0,
                            y: 1.0,
                        },
                    ]
                })
                .collect(),
        })
        .collect();
    let noun = |m: usize| SentenceTemplate {
        words: vec![m],
        args: vec![vec![0]],
        participant_count: 1,
    };
    let sets = (0..2)
        .map(|id| lexdt::grammar::CompetitionSet {
            clip_id: id,
            sentences: vec![noun(id), noun(1 - id)],
            positive_index: 0,
        })
        .collect();
    (lexicon, lexdt::trainer_dt::CompetitionCorpus { clips, sets })
}
