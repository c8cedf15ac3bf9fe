//! Synthetic stand-in for real video: objects move along scripted straight
//! trajectories in a 2D arena, a noisy "detector" overgenerates detections,
//! and an oracle decides from the hidden trajectories whether a sentence is
//! true of a clip.
//!
//! Ground truth lives in a [`GroundTruthStore`] that is returned separately
//! from the [`Corpus`]; trainers only ever see the corpus.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{realize, GrammarSpec, SentenceTemplate};
use crate::lattice::features::{quantize_angle, DECREASING, INCREASING, STABLE};
use crate::lexicon::{normalize_row, Distributions, FeatureConfig, FeatureKind, Lexicon, PosConfig, WordModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: usize,
    pub strength: f64,
    pub x: f64,
    pub y: f64,
}

/// Per-frame detections only; the generating trajectories are not here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoClip {
    pub clip_id: usize,
    pub frames: Vec<Vec<Detection>>,
}

impl VideoClip {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

/// What a word means in the synthetic world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "class")]
pub enum Meaning {
    Class(usize),
    Approach,
    Depart,
    Fast,
    Slow,
    LeftOf,
    RightOf,
    Moving,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Expected false-positive detections per frame (at most two per frame).
    pub false_positive_rate: f64,
    /// Standard deviation of the position noise on true detections.
    pub position_jitter: f64,
    pub true_strength: (f64, f64),
    pub false_strength: (f64, f64),
    /// Probability that a true detection reports a wrong class.
    pub class_confusion: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            false_positive_rate: 0.6,
            position_jitter: 0.15,
            true_strength: (0.6, 1.0),
            false_strength: (0.2, 0.6),
            class_confusion: 0.05,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        NoiseConfig {
            false_positive_rate: 0.0,
            position_jitter: 0.0,
            true_strength: (1.0, 1.0),
            false_strength: (1.0, 1.0),
            class_confusion: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub classes: Vec<String>,
    pub clip_count: usize,
    pub frame_count: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub arena: f64,
    pub slow_speed: f64,
    pub fast_speed: f64,
    /// Mean speed separating "slowly" from "quickly".
    pub speed_threshold: f64,
    /// Minimum path length for an object to count as moving.
    pub min_move: f64,
    /// Minimum net distance change for approach / depart.
    pub distance_delta: f64,
    /// Gap between mover and target at the near end of the motion.
    pub near_gap: f64,
    pub noise: NoiseConfig,
    /// Full-grammar positives (with a preposition or adverb) per clip.
    pub extended_positives: (usize, usize),
    pub meanings: BTreeMap<String, Meaning>,
}

impl Default for SimConfig {
    fn default() -> Self {
        let classes: Vec<String> = ["person", "backpack", "trash-can", "chair", "bicycle", "box"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut meanings: BTreeMap<String, Meaning> = classes
            .iter()
            .enumerate()
            .map(|(c, name)| (name.clone(), Meaning::Class(c)))
            .collect();
        meanings.insert("approached".into(), Meaning::Approach);
        meanings.insert("departed".into(), Meaning::Depart);
        meanings.insert("quickly".into(), Meaning::Fast);
        meanings.insert("slowly".into(), Meaning::Slow);
        meanings.insert("to-the-left-of".into(), Meaning::LeftOf);
        meanings.insert("to-the-right-of".into(), Meaning::RightOf);
        SimConfig {
            classes,
            clip_count: 61,
            frame_count: 8,
            min_objects: 2,
            max_objects: 3,
            arena: 24.0,
            slow_speed: 0.6,
            fast_speed: 1.6,
            speed_threshold: 1.0,
            min_move: 2.0,
            distance_delta: 2.0,
            near_gap: 1.5,
            noise: NoiseConfig::default(),
            extended_positives: (1, 2),
            meanings,
        }
    }
}

/// Part-of-speech configuration of the default world.
pub fn default_pos_table(class_count: usize) -> Vec<PosConfig> {
    vec![
        PosConfig {
            name: "noun".into(),
            state_count: 1,
            features: vec![FeatureKind::ObjectClass],
            bins: vec![class_count],
            arity: 1,
        },
        PosConfig {
            name: "verb".into(),
            state_count: 3,
            features: vec![FeatureKind::DistanceChange, FeatureKind::ActorSpeed],
            bins: vec![3, 3],
            arity: 2,
        },
        PosConfig {
            name: "preposition".into(),
            state_count: 1,
            features: vec![FeatureKind::RelativeAngle],
            bins: vec![4],
            arity: 2,
        },
        PosConfig {
            name: "adverb".into(),
            state_count: 2,
            features: vec![FeatureKind::ActorSpeed],
            bins: vec![3],
            arity: 1,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTrack {
    pub class_id: usize,
    pub positions: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub clip_id: usize,
    pub objects: Vec<ObjectTrack>,
    /// Scripted event, for inspection: (mover, target, meaning, speed).
    pub script: (usize, usize, Meaning, f64),
}

/// Hidden per-clip trajectories, kept apart from the clips themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthStore {
    truths: Vec<GroundTruth>,
}

impl GroundTruthStore {
    pub fn new(truths: Vec<GroundTruth>) -> Self {
        GroundTruthStore { truths }
    }

    pub fn get(&self, clip_id: usize) -> Option<&GroundTruth> {
        self.truths.iter().find(|g| g.clip_id == clip_id)
    }

    pub fn len(&self) -> usize {
        self.truths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truths.is_empty()
    }
}

/// Clips with their annotated positive sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub clips: Vec<VideoClip>,
    /// `positives[i]` are the positive sentences of `clips[i]`.
    pub positives: Vec<Vec<SentenceTemplate>>,
}

impl Corpus {
    pub fn positive_count(&self) -> usize {
        self.positives.iter().map(Vec::len).sum()
    }

    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            clips: indices.iter().map(|&i| self.clips[i].clone()).collect(),
            positives: indices.iter().map(|&i| self.positives[i].clone()).collect(),
        }
    }
}

/// Word meanings resolved against lexicon entry ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Semantics {
    by_entry: Vec<Meaning>,
}

impl Semantics {
    pub fn new(config: &SimConfig, lexicon: &Lexicon) -> Result<Semantics> {
        let by_entry = lexicon
            .entries
            .iter()
            .map(|e| {
                let m = config
                    .meanings
                    .get(&e.name)
                    .copied()
                    .ok_or_else(|| Error::Config(format!("word `{}` has no meaning in the world", e.name)))?;
                if let Meaning::Class(c) = m {
                    if c >= config.classes.len() {
                        return Err(Error::Config(format!("word `{}` names class {c} out of range", e.name)));
                    }
                }
                Ok(m)
            })
            .collect::<Result<_>>()?;
        Ok(Semantics { by_entry })
    }

    pub fn meaning(&self, entry: usize) -> Meaning {
        self.by_entry[entry]
    }
}

fn path_length(track: &ObjectTrack) -> f64 {
    track
        .positions
        .windows(2)
        .map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1))
        .sum()
}

fn separation(a: &ObjectTrack, b: &ObjectTrack, t: usize) -> f64 {
    (a.positions[t].0 - b.positions[t].0).hypot(a.positions[t].1 - b.positions[t].1)
}

fn holds(meaning: Meaning, args: &[&ObjectTrack], config: &SimConfig) -> bool {
    let frames = args[0].positions.len();
    let moved = |a: &ObjectTrack| path_length(a) >= config.min_move;
    let mean_speed = |a: &ObjectTrack| path_length(a) / (frames.max(2) - 1) as f64;
    let change = |a: &ObjectTrack, b: &ObjectTrack| separation(a, b, frames - 1) - separation(a, b, 0);
    let sector_share = |a: &ObjectTrack, b: &ObjectTrack, sector: usize| {
        let hits = (0..frames)
            .filter(|&t| {
                let dx = b.positions[t].0 - a.positions[t].0;
                let dy = b.positions[t].1 - a.positions[t].1;
                quantize_angle(dx, dy, 4) == sector
            })
            .count();
        2 * hits > frames
    };
    match meaning {
        Meaning::Class(c) => args[0].class_id == c,
        Meaning::Approach => moved(args[0]) && change(args[0], args[1]) <= -config.distance_delta,
        Meaning::Depart => moved(args[0]) && change(args[0], args[1]) >= config.distance_delta,
        Meaning::Fast => moved(args[0]) && mean_speed(args[0]) > config.speed_threshold,
        Meaning::Slow => moved(args[0]) && mean_speed(args[0]) <= config.speed_threshold,
        Meaning::LeftOf => sector_share(args[0], args[1], 0),
        Meaning::RightOf => sector_share(args[0], args[1], 2),
        Meaning::Moving => moved(args[0]),
    }
}

/// True iff some injective assignment of participants to ground-truth objects
/// satisfies every word of the template.
pub fn oracle_label(truth: &GroundTruth, template: &SentenceTemplate, semantics: &Semantics, config: &SimConfig) -> bool {
    let objects = truth.objects.len();
    let parts = template.participant_count;
    if parts > objects {
        return false;
    }
    let mut binding = vec![usize::MAX; parts];
    fn search(
        p: usize,
        binding: &mut Vec<usize>,
        truth: &GroundTruth,
        template: &SentenceTemplate,
        semantics: &Semantics,
        config: &SimConfig,
    ) -> bool {
        if p == binding.len() {
            return template.words.iter().zip(&template.args).all(|(&m, args)| {
                let tracks: Vec<&ObjectTrack> = args.iter().map(|&a| &truth.objects[binding[a]]).collect();
                holds(semantics.meaning(m), &tracks, config)
            });
        }
        for o in 0..truth.objects.len() {
            if binding[..p].contains(&o) {
                continue;
            }
            binding[p] = o;
            if search(p + 1, binding, truth, template, semantics, config) {
                return true;
            }
        }
        false
    }
    search(0, &mut binding, truth, template, semantics, config)
}

fn clip_rng(seed: u64, clip: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (clip as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn random_point(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> (f64, f64) {
    (rng.random_range(lo..hi), rng.random_range(lo..hi))
}

fn script_clip(config: &SimConfig, clip_id: usize, rng: &mut ChaCha8Rng) -> Result<GroundTruth> {
    let k = rng.random_range(config.min_objects..=config.max_objects);
    let classes: Vec<usize> = sample(rng, config.classes.len(), k).into_vec();
    let frames = config.frame_count;
    let verbs: Vec<Meaning> = [Meaning::Approach, Meaning::Depart]
        .into_iter()
        .filter(|m| config.meanings.values().any(|x| x == m))
        .collect();
    let verb = if verbs.is_empty() {
        Meaning::Moving
    } else {
        verbs[rng.random_range(0..verbs.len())]
    };
    let base = if rng.random_bool(0.5) {
        config.fast_speed
    } else {
        config.slow_speed
    };
    let speed = base * rng.random_range(0.85..1.15);
    let travel = speed * (frames - 1) as f64;
    let margin = 2.0;
    let target = random_point(rng, margin, config.arena - margin);
    let heading = rng.random_range(0.0..2.0 * PI);
    let (ux, uy) = (heading.cos(), heading.sin());
    // mover runs along (ux, uy): toward the target for approach, away otherwise
    let (start, dir) = match verb {
        Meaning::Approach => {
            let d0 = config.near_gap + travel;
            ((target.0 - ux * d0, target.1 - uy * d0), (ux, uy))
        }
        _ => ((target.0 + ux * config.near_gap, target.1 + uy * config.near_gap), (ux, uy)),
    };
    let mover: Vec<(f64, f64)> = (0..frames)
        .map(|t| {
            let s = speed * t as f64;
            (start.0 + dir.0 * s, start.1 + dir.1 * s)
        })
        .collect();
    let mut objects = vec![
        ObjectTrack {
            class_id: classes[0],
            positions: mover,
        },
        ObjectTrack {
            class_id: classes[1],
            positions: vec![target; frames],
        },
    ];
    for &c in &classes[2..] {
        // keep bystanders clear of the target and the mover's path
        let mut p = random_point(rng, margin, config.arena - margin);
        for _ in 0..50 {
            let clear = objects
                .iter()
                .all(|o| o.positions.iter().all(|q| (q.0 - p.0).hypot(q.1 - p.1) > 3.0));
            if clear {
                break;
            }
            p = random_point(rng, margin, config.arena - margin);
        }
        objects.push(ObjectTrack {
            class_id: c,
            positions: vec![p; frames],
        });
    }
    Ok(GroundTruth {
        clip_id,
        objects,
        script: (0, 1, verb, speed),
    })
}

fn detect(config: &SimConfig, truth: &GroundTruth, rng: &mut ChaCha8Rng) -> VideoClip {
    let noise = &config.noise;
    let jitter = Normal::new(0.0, noise.position_jitter.max(0.0)).expect("finite jitter");
    let uniform_strength = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            hi
        }
    };
    let classes = config.classes.len();
    let mut frames = Vec::with_capacity(config.frame_count);
    for t in 0..config.frame_count {
        let mut dets = Vec::new();
        for o in &truth.objects {
            let mut class_id = o.class_id;
            if classes > 1 && rng.random_bool(noise.class_confusion.clamp(0.0, 1.0)) {
                class_id = (class_id + rng.random_range(1..classes)) % classes;
            }
            let (x, y) = o.positions[t];
            let (dx, dy) = if noise.position_jitter > 0.0 {
                (jitter.sample(rng), jitter.sample(rng))
            } else {
                (0.0, 0.0)
            };
            dets.push(Detection {
                class_id,
                strength: uniform_strength(rng, noise.true_strength),
                x: x + dx,
                y: y + dy,
            });
        }
        let p = (noise.false_positive_rate / 2.0).clamp(0.0, 1.0);
        for _ in 0..2 {
            if rng.random_bool(p) {
                let (x, y) = random_point(rng, 0.0, config.arena);
                dets.push(Detection {
                    class_id: rng.random_range(0..classes),
                    strength: uniform_strength(rng, noise.false_strength),
                    x,
                    y,
                });
            }
        }
        // detector output order carries no information
        let order = sample(rng, dets.len(), dets.len()).into_vec();
        frames.push(order.into_iter().map(|i| dets[i].clone()).collect());
    }
    VideoClip {
        clip_id: truth.clip_id,
        frames,
    }
}

fn has_extended_word(template: &SentenceTemplate, semantics: &Semantics) -> bool {
    template.words.iter().any(|&m| {
        matches!(
            semantics.meaning(m),
            Meaning::LeftOf | Meaning::RightOf | Meaning::Fast | Meaning::Slow
        )
    })
}

pub(crate) fn check_config(config: &SimConfig) -> Result<()> {
    if config.frame_count < 2 {
        return Err(Error::Config("clips need at least 2 frames".into()));
    }
    if config.min_objects < 2 || config.min_objects > config.max_objects {
        return Err(Error::Config("need 2 <= min_objects <= max_objects".into()));
    }
    if config.max_objects > config.classes.len() {
        return Err(Error::Config(format!(
            "{} objects per clip but only {} classes",
            config.max_objects,
            config.classes.len()
        )));
    }
    if config.extended_positives.0 > config.extended_positives.1 {
        return Err(Error::Config("extended_positives range is empty".into()));
    }
    Ok(())
}

/// Generates clips, their positive sentences and the hidden ground truth.
///
/// Every restricted-grammar sentence true of a clip is a positive; in
/// addition each clip gets a few true full-grammar sentences that use a
/// preposition or adverb.
pub fn generate_corpus(
    config: &SimConfig,
    grammar: &GrammarSpec,
    lexicon: &Lexicon,
    seed: u64,
) -> Result<(Corpus, GroundTruthStore)> {
    check_config(config)?;
    grammar.check(lexicon)?;
    let semantics = Semantics::new(config, lexicon)?;
    let restricted = grammar.enumerate_restricted(lexicon)?;
    let full = grammar.enumerate(&grammar.full, lexicon)?;
    let extended: Vec<&SentenceTemplate> = full.iter().filter(|t| has_extended_word(t, &semantics)).collect();

    let mut clips = Vec::with_capacity(config.clip_count);
    let mut positives = Vec::with_capacity(config.clip_count);
    let mut truths = Vec::with_capacity(config.clip_count);
    for id in 0..config.clip_count {
        let mut rng = clip_rng(seed, id);
        let truth = script_clip(config, id, &mut rng)?;
        let clip = detect(config, &truth, &mut rng);
        let mut pos: Vec<SentenceTemplate> = restricted
            .iter()
            .filter(|t| oracle_label(&truth, t, &semantics, config))
            .cloned()
            .collect();
        let true_ext: Vec<&SentenceTemplate> = extended
            .iter()
            .copied()
            .filter(|t| oracle_label(&truth, t, &semantics, config))
            .collect();
        let (lo, hi) = config.extended_positives;
        let want = rng.random_range(lo..=hi).min(true_ext.len());
        let mut picks = sample(&mut rng, true_ext.len(), want).into_vec();
        picks.sort_unstable();
        pos.extend(picks.into_iter().map(|i| true_ext[i].clone()));
        clips.push(clip);
        positives.push(pos);
        truths.push(truth);
    }
    Ok((Corpus { clips, positives }, GroundTruthStore::new(truths)))
}

/// Truth labels of `sentences` for every clip, `labels[clip][sentence]`.
pub fn label_matrix(
    store: &GroundTruthStore,
    clips: &[VideoClip],
    sentences: &[SentenceTemplate],
    semantics: &Semantics,
    config: &SimConfig,
) -> Result<Vec<Vec<bool>>> {
    clips
        .iter()
        .map(|c| {
            let truth = store
                .get(c.clip_id)
                .ok_or_else(|| Error::Malformed(format!("no ground truth for clip {}", c.clip_id)))?;
            Ok(sentences
                .iter()
                .map(|s| oracle_label(truth, s, semantics, config))
                .collect())
        })
        .collect()
}

fn row(values: &[f64], floor: f64) -> Vec<f64> {
    let mut r = values.to_vec();
    normalize_row(&mut r, floor);
    r
}

/// Hand-engineered word models matching the world's generative rules; the
/// reference ("hand") lexicon for evaluation.
pub fn hand_lexicon(config: &SimConfig, template: &Lexicon) -> Result<Lexicon> {
    let semantics = Semantics::new(config, template)?;
    let floor = 1e-3;
    let mut entries = Vec::with_capacity(template.entries.len());
    for (m, entry) in template.entries.iter().enumerate() {
        let pos = &template.pos_table[entry.pos];
        let mut d = Distributions::uniform(pos);
        let states = pos.state_count;
        let speed_bins = template.features.speed_edges.len() + 1;
        let peaked = |z: usize, hot: &[usize], mass: f64| {
            let mut v = vec![(1.0 - mass) / z as f64; z];
            for &h in hot {
                v[h] += mass / hot.len() as f64;
            }
            row(&v, floor)
        };
        let moving: Vec<usize> = (1..speed_bins).collect();
        let meaning = semantics.meaning(m);
        // states: 0 = onset (no motion yet), 1.. = ongoing
        if states > 1 {
            d.initial = peaked(states, &[0], 0.9);
            for i in 0..states {
                let next = if i + 1 < states { i + 1 } else { i };
                let mut v = vec![0.02; states];
                v[i] += 0.3;
                v[next] += 0.6;
                if i > 0 {
                    v[1] += 0.2;
                }
                d.transition[i] = row(&v, floor);
            }
        }
        for i in 0..states {
            for (n, (&kind, &z)) in pos.features.iter().zip(&pos.bins).enumerate() {
                let onset = states > 1 && i == 0;
                d.output[i][n] = match (kind, meaning) {
                    (FeatureKind::ObjectClass, Meaning::Class(c)) => peaked(z, &[c], 0.85),
                    (FeatureKind::RelativeAngle, Meaning::LeftOf) => peaked(z, &[0], 0.85),
                    (FeatureKind::RelativeAngle, Meaning::RightOf) => peaked(z, &[z / 2], 0.85),
                    (FeatureKind::DistanceChange, _) if onset => peaked(z, &[STABLE], 0.8),
                    (FeatureKind::DistanceChange, Meaning::Approach) => peaked(z, &[DECREASING], 0.8),
                    (FeatureKind::DistanceChange, Meaning::Depart) => peaked(z, &[INCREASING], 0.8),
                    (FeatureKind::ActorSpeed, _) if onset => peaked(z, &[0], 0.8),
                    (FeatureKind::ActorSpeed, Meaning::Fast) => peaked(z, &[z - 1], 0.8),
                    (FeatureKind::ActorSpeed, Meaning::Slow) => peaked(z, &moving[..moving.len().saturating_sub(1).max(1)], 0.8),
                    (FeatureKind::ActorSpeed, _) => peaked(z, &moving, 0.8),
                    _ => vec![1.0 / z as f64; z],
                };
            }
        }
        entries.push(WordModel {
            name: entry.name.clone(),
            pos: entry.pos,
            dists: d,
        });
    }
    Ok(Lexicon {
        pos_table: template.pos_table.clone(),
        features: template.features.clone(),
        entries,
    })
}

/// Uniform lexicon over the grammar's vocabulary with the default parts of
/// speech for the world's classes.
pub fn world_template(config: &SimConfig, grammar: &GrammarSpec) -> Result<Lexicon> {
    let lexicon = crate::lexicon::init_uniform(
        &default_pos_table(config.classes.len()),
        &FeatureConfig::default(),
        &grammar.vocabulary(),
        0.0,
        0,
    )?;
    grammar.check(&lexicon)?;
    Ok(lexicon)
}

/// The default world: simulation settings, the builtin grammar and its
/// template lexicon.
pub fn default_world() -> (SimConfig, GrammarSpec, Lexicon) {
    let config = SimConfig::default();
    let grammar = GrammarSpec::builtin();
    let lexicon = world_template(&config, &grammar).expect("default world is consistent");
    (config, grammar, lexicon)
}

// ---------------------------------------------------------------------------
// corpus files

pub const CLIP_DIR: &str = "clips";
pub const ANNOTATIONS_FILE: &str = "annotations.tsv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

fn clip_file(dir: &Path, clip_id: usize) -> PathBuf {
    dir.join(CLIP_DIR).join(format!("clip_{clip_id:04}.tsv"))
}

pub fn clip_to_text(clip: &VideoClip) -> String {
    let mut s = format!("# clip {}\n# frame\tclass\tstrength\tx\ty\n", clip.clip_id);
    for (t, frame) in clip.frames.iter().enumerate() {
        for d in frame {
            let _ = writeln!(s, "{t}\t{}\t{}\t{}\t{}", d.class_id, d.strength, d.x, d.y);
        }
    }
    s
}

pub fn clip_from_text(text: &str) -> Result<VideoClip> {
    let mut clip_id = None;
    let mut frames: Vec<Vec<Detection>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let bad = |column: usize, message: String| Error::Parse {
            line: line_no,
            column,
            message,
        };
        if let Some(rest) = line.strip_prefix("# clip ") {
            clip_id = Some(rest.trim().parse::<usize>().map_err(|e| bad(8, e.to_string()))?);
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(bad(1, format!("expected 5 fields, found {}", fields.len())));
        }
        let frame: usize = fields[0].parse().map_err(|e| bad(1, format!("frame: {e}")))?;
        let class_id: usize = fields[1].parse().map_err(|e| bad(2, format!("class: {e}")))?;
        let num = |k: usize, name: &str| -> Result<f64> {
            let v: f64 = fields[k].parse().map_err(|e| bad(k + 1, format!("{name}: {e}")))?;
            if !v.is_finite() {
                return Err(bad(k + 1, format!("{name} is not finite")));
            }
            Ok(v)
        };
        let strength = num(2, "strength")?;
        if !(strength > 0.0) {
            return Err(bad(3, "strength must be positive".into()));
        }
        let (x, y) = (num(3, "x")?, num(4, "y")?);
        if frame != frames.len() && frame + 1 != frames.len() {
            return Err(bad(1, format!("frame {frame} out of order")));
        }
        if frame == frames.len() {
            frames.push(Vec::new());
        }
        frames[frame].push(Detection { class_id, strength, x, y });
    }
    let clip_id = clip_id.ok_or_else(|| Error::Parse {
        line: 1,
        column: 1,
        message: "missing `# clip <id>` header".into(),
    })?;
    if frames.len() < 2 {
        return Err(Error::Malformed(format!("clip {clip_id} has fewer than 2 frames")));
    }
    Ok(VideoClip { clip_id, frames })
}

pub fn write_corpus(
    dir: &Path,
    corpus: &Corpus,
    truth: &GroundTruthStore,
    config: &SimConfig,
    lexicon: &Lexicon,
) -> Result<()> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| Error::io(p, e)
    };
    fs::create_dir_all(dir.join(CLIP_DIR)).map_err(io(dir))?;
    for clip in &corpus.clips {
        let path = clip_file(dir, clip.clip_id);
        fs::write(&path, clip_to_text(clip)).map_err(io(&path))?;
    }
    let mut ann = String::new();
    for (clip, sentences) in corpus.clips.iter().zip(&corpus.positives) {
        for s in sentences {
            let _ = writeln!(ann, "{}\t{}", clip.clip_id, realize(s, lexicon));
        }
    }
    let path = dir.join(ANNOTATIONS_FILE);
    fs::write(&path, ann).map_err(io(&path))?;
    let path = dir.join(GROUND_TRUTH_FILE);
    let gt = serde_json::to_string_pretty(truth).expect("ground truth serializes");
    fs::write(&path, gt + "\n").map_err(io(&path))?;
    let path = dir.join("world.toml");
    fs::write(&path, toml::to_string(config).expect("config serializes")).map_err(io(&path))?;
    Ok(())
}

pub fn read_clips(dir: &Path) -> Result<Vec<VideoClip>> {
    let clip_dir = dir.join(CLIP_DIR);
    let mut paths: Vec<PathBuf> = fs::read_dir(&clip_dir)
        .map_err(|e| Error::io(&clip_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            clip_from_text(&text)
        })
        .collect()
}

/// Reads a corpus directory; annotations are parsed with the full grammar.
pub fn read_corpus(dir: &Path, grammar: &GrammarSpec, lexicon: &Lexicon) -> Result<Corpus> {
    let clips = read_clips(dir)?;
    let path = dir.join(ANNOTATIONS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut positives = vec![Vec::new(); clips.len()];
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            line: ln + 1,
            column: 1,
            message,
        };
        let (id, sentence) = line.split_once('\t').ok_or_else(|| bad("expected `clip_id<TAB>sentence`".into()))?;
        let id: usize = id.trim().parse().map_err(|e| bad(format!("clip id: {e}")))?;
        let k = clips
            .iter()
            .position(|c| c.clip_id == id)
            .ok_or_else(|| bad(format!("unknown clip {id}")))?;
        let parse = grammar.parse_str(sentence, lexicon).map_err(|e| bad(e.to_string()))?;
        positives[k].push(parse.template);
    }
    Ok(Corpus { clips, positives })
}

pub fn read_ground_truth(dir: &Path) -> Result<GroundTruthStore> {
    let path = dir.join(GROUND_TRUTH_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn read_world(dir: &Path) -> Result<SimConfig> {
    let path = dir.join("world.toml");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        line: 0,
        column: 0,
        message: e.to_string(),
    })
}
