//! Scoring held-out video-sentence pairs, ROC analysis, baselines and the
//! cross-validated experiment.

use std::collections::BTreeSet;

use log::info;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{GrammarSpec, SentenceTemplate};
use crate::lattice::{self, LatticeConfig};
use crate::lexicon::{init_uniform, Lexicon, DEFAULT_JITTER};
use crate::trainer_dt::{train_ml_ml, train_two_phase, DtConfig};
use crate::trainer_ml::{train_ml, MlConfig};
use crate::worldsim::{generate_corpus, hand_lexicon, label_matrix, Corpus, GroundTruthStore, Semantics, SimConfig, VideoClip};

/// Score and oracle label of one (clip, test sentence) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairJudgment {
    pub clip_id: usize,
    /// Index into the test sentence list.
    pub sentence: usize,
    pub score: f64,
    pub label: bool,
}

impl PairJudgment {
    pub fn predicted(&self, threshold: f64) -> bool {
        self.score >= threshold
    }
}

/// Scores every clip against every sentence (clip-major), attaching
/// `labels[clip][sentence]`.
pub fn score_pairs(
    clips: &[VideoClip],
    sentences: &[SentenceTemplate],
    labels: &[Vec<bool>],
    lexicon: &Lexicon,
    config: &LatticeConfig,
) -> Result<Vec<PairJudgment>> {
    if labels.len() != clips.len() || labels.iter().any(|l| l.len() != sentences.len()) {
        return Err(Error::Malformed("label matrix does not match clips x sentences".into()));
    }
    let banks = lattice::prepare_clips(clips, lexicon)?;
    let pairs: Vec<(usize, usize)> = (0..clips.len())
        .flat_map(|c| (0..sentences.len()).map(move |s| (c, s)))
        .collect();
    pairs
        .par_iter()
        .map(|&(c, s)| {
            Ok(PairJudgment {
                clip_id: clips[c].clip_id,
                sentence: s,
                score: lattice::normalized_score_in(&banks[c], &sentences[s], lexicon, config)?,
                label: labels[c][s],
            })
        })
        .collect()
}

/// The reference pipeline with the hand-built lexicon.
pub fn baseline_hand(
    clips: &[VideoClip],
    sentences: &[SentenceTemplate],
    labels: &[Vec<bool>],
    hand: &Lexicon,
    config: &LatticeConfig,
) -> Result<Vec<PairJudgment>> {
    score_pairs(clips, sentences, labels, hand, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    /// From (0, 0) to (1, 1), one point per distinct score threshold.
    pub points: Vec<OperatingPoint>,
    pub auc: f64,
}

fn class_counts(labels: impl Iterator<Item = bool>) -> (usize, usize) {
    labels.fold((0, 0), |(p, n), l| if l { (p + 1, n) } else { (p, n + 1) })
}

fn trapezoid(points: &[OperatingPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Threshold sweep from the highest score down; tied scores move together.
pub fn roc(judgments: &[PairJudgment]) -> Result<Roc> {
    let (pos, neg) = class_counts(judgments.iter().map(|j| j.label));
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass {
            positives: pos,
            negatives: neg,
        });
    }
    if let Some(j) = judgments.iter().find(|j| j.score.is_nan()) {
        return Err(Error::NonFinite(format!("clip {} sentence {} scored NaN", j.clip_id, j.sentence)));
    }
    let mut order: Vec<&PairJudgment> = judgments.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = vec![OperatingPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = order[i].score;
        while i < order.len() && order[i].score == s {
            if order[i].label {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(OperatingPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    let auc = trapezoid(&points);
    Ok(Roc { points, auc })
}

/// Area under the polyline (0,0) -> point -> (1,1).
pub fn point_auc(p: OperatingPoint) -> f64 {
    trapezoid(&[OperatingPoint { fpr: 0.0, tpr: 0.0 }, p, OperatingPoint { fpr: 1.0, tpr: 1.0 }])
}

fn operating_point(labels: &[bool], predictions: &[bool]) -> OperatingPoint {
    let (pos, neg) = class_counts(labels.iter().copied());
    let tp = labels.iter().zip(predictions).filter(|(l, p)| **l && **p).count();
    let fp = labels.iter().zip(predictions).filter(|(l, p)| !**l && **p).count();
    OperatingPoint {
        fpr: if neg == 0 { 0.0 } else { fp as f64 / neg as f64 },
        tpr: if pos == 0 { 0.0 } else { tp as f64 / pos as f64 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChanceResult {
    pub predictions: Vec<bool>,
    pub point: OperatingPoint,
}

/// Independent fair coin flips per pair.
pub fn baseline_chance(labels: &[bool], seed: u64) -> ChanceResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let predictions: Vec<bool> = labels.iter().map(|_| rng.random_bool(0.5)).collect();
    let point = operating_point(labels, &predictions);
    ChanceResult { predictions, point }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindResult {
    /// Per sentence: answer "hit" on every clip.
    pub hit: Vec<bool>,
    pub f1: f64,
    pub point: OperatingPoint,
}

fn f1(tp: usize, fp: usize, positives: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (tp + fp + positives) as f64
    }
}

/// Best F1 over decisions that depend only on the sentence.
///
/// F1 of a hit set is `2 TP / (TP + FP + P)`, a ratio of sums over the
/// chosen sentences, so the optimum is a prefix of the sentences sorted by
/// their positive rate.
pub fn baseline_blind(sentences: &[usize], labels: &[bool], sentence_count: usize) -> BlindResult {
    let mut n = vec![0usize; sentence_count];
    let mut tp = vec![0usize; sentence_count];
    for (&s, &l) in sentences.iter().zip(labels) {
        n[s] += 1;
        tp[s] += l as usize;
    }
    let positives: usize = tp.iter().sum();
    let mut order: Vec<usize> = (0..sentence_count).filter(|&s| n[s] > 0).collect();
    // tp_a / n_a > tp_b / n_b, compared exactly
    order.sort_by(|&a, &b| (tp[b] * n[a]).cmp(&(tp[a] * n[b])).then(a.cmp(&b)));
    let (mut best, mut best_k) = (0.0, 0);
    let (mut acc_tp, mut acc_fp) = (0, 0);
    for (k, &s) in order.iter().enumerate() {
        acc_tp += tp[s];
        acc_fp += n[s] - tp[s];
        let f = f1(acc_tp, acc_fp, positives);
        if f > best {
            best = f;
            best_k = k + 1;
        }
    }
    let mut hit = vec![false; sentence_count];
    for &s in &order[..best_k] {
        hit[s] = true;
    }
    let predictions: Vec<bool> = sentences.iter().map(|&s| hit[s]).collect();
    BlindResult {
        hit,
        f1: best,
        point: operating_point(labels, &predictions),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Chance,
    Blind,
    Hand,
    Ml,
    #[serde(rename = "ml+ml")]
    MlMl,
    #[serde(rename = "dt+ml")]
    DtMl,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Chance, Method::Blind, Method::Hand, Method::Ml, Method::MlMl, Method::DtMl];

    pub fn name(self) -> &'static str {
        match self {
            Method::Chance => "chance",
            Method::Blind => "blind",
            Method::Hand => "hand",
            Method::Ml => "ml",
            Method::MlMl => "ml+ml",
            Method::DtMl => "dt+ml",
        }
    }

    pub fn is_trained(self) -> bool {
        matches!(self, Method::Ml | Method::MlMl | Method::DtMl)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Settings shared by the trained methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub ml: MlConfig,
    pub dt: DtConfig,
    /// Jitter of the uniform initial lexicon.
    pub init_jitter: f64,
    pub init_seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            ml: MlConfig::default(),
            dt: DtConfig::default(),
            init_jitter: DEFAULT_JITTER,
            init_seed: 0,
        }
    }
}

/// Uniform (jittered) starting lexicon over the template's vocabulary.
pub fn initial_lexicon(template: &Lexicon, config: &TrainerConfig) -> Result<Lexicon> {
    init_uniform(
        &template.pos_table,
        &template.features,
        &template.vocabulary(),
        config.init_jitter,
        config.init_seed,
    )
}

/// Trains one of the learned methods on a training corpus.
pub fn train_method(
    method: Method,
    corpus: &Corpus,
    grammar: &GrammarSpec,
    template: &Lexicon,
    config: &TrainerConfig,
) -> Result<Lexicon> {
    let lexicon0 = initial_lexicon(template, config)?;
    match method {
        Method::Ml => Ok(train_ml(corpus, &lexicon0, &config.ml)?.0),
        Method::MlMl => Ok(train_ml_ml(corpus, grammar, &lexicon0, &config.ml)?.lexicon),
        Method::DtMl => Ok(train_two_phase(corpus, grammar, &lexicon0, &config.dt, &config.ml)?.lexicon),
        other => Err(Error::Config(format!("`{}` is not a trained method", other.name()))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub ratios: Vec<f64>,
    pub folds: usize,
    /// Test sentences from the restricted grammar (nouns and verbs).
    pub nv_sentences: usize,
    /// Test sentences using the other parts of speech.
    pub all_sentences: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            ratios: vec![0.67, 0.33, 0.17],
            folds: 3,
            nv_sentences: 12,
            all_sentences: 12,
            seed: 0,
            methods: Method::ALL.to_vec(),
        }
    }
}

impl ExperimentPlan {
    pub fn check(&self) -> Result<()> {
        if self.ratios.is_empty() {
            return Err(Error::Config("no training ratios configured".into()));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(Error::Config(format!("ratio {r} outside (0, 1)")));
        }
        if self.folds == 0 {
            return Err(Error::Config("need at least one fold".into()));
        }
        Ok(())
    }
}

/// Training and test clip positions of every fold at one ratio.
///
/// Clips are shuffled once; fold `k` rotates the order by `k * N / folds`
/// and trains on the first `round(ratio * N)` clips, testing on the rest.
pub fn fold_splits(clip_count: usize, ratio: f64, folds: usize, seed: u64) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = sample(&mut rng, clip_count, clip_count).into_vec();
    let train = ((ratio * clip_count as f64).round() as usize).clamp(1, clip_count.saturating_sub(1));
    (0..folds)
        .map(|k| {
            let shift = k * clip_count / folds;
            let rotated: Vec<usize> = (0..clip_count).map(|i| order[(i + shift) % clip_count]).collect();
            let mut a = rotated[..train].to_vec();
            let mut b = rotated[train..].to_vec();
            a.sort_unstable();
            b.sort_unstable();
            (a, b)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSentences {
    pub sentences: Vec<SentenceTemplate>,
    /// `true` for the noun-verb set, `false` for the other parts of speech.
    pub is_nv: Vec<bool>,
}

/// Distinct annotated sentences, split by grammar: restricted (NV) and the
/// rest (ALL).
pub fn choose_test_sentences(corpus: &Corpus, grammar: &GrammarSpec, lexicon: &Lexicon, plan: &ExperimentPlan) -> Result<TestSentences> {
    let restricted: BTreeSet<SentenceTemplate> = grammar.enumerate_restricted(lexicon)?.into_iter().collect();
    let mut nv = BTreeSet::new();
    let mut all = BTreeSet::new();
    for s in corpus.positives.iter().flatten() {
        if restricted.contains(s) {
            nv.insert(s.clone());
        } else {
            all.insert(s.clone());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x7E57);
    let mut pick = |pool: BTreeSet<SentenceTemplate>, count: usize, what: &str| -> Result<Vec<SentenceTemplate>> {
        if pool.len() < count {
            return Err(Error::Config(format!(
                "only {} distinct {what} sentences are annotated, {count} requested",
                pool.len()
            )));
        }
        let pool: Vec<SentenceTemplate> = pool.into_iter().collect();
        let mut idx = sample(&mut rng, pool.len(), count).into_vec();
        idx.sort_unstable();
        Ok(idx.into_iter().map(|i| pool[i].clone()).collect())
    };
    let nv = pick(nv, plan.nv_sentences, "noun-verb")?;
    let all = pick(all, plan.all_sentences, "other")?;
    let is_nv = nv.iter().map(|_| true).chain(all.iter().map(|_| false)).collect();
    Ok(TestSentences {
        sentences: nv.into_iter().chain(all).collect(),
        is_nv,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    /// Pooled judgments over folds (empty for the point baselines).
    pub judgments: Vec<PairJudgment>,
    /// Full ROC for scored methods; the single-point polyline otherwise.
    pub curve: Vec<OperatingPoint>,
    pub auc: f64,
    pub auc_nv: Option<f64>,
    pub auc_all: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioResult {
    pub ratio: f64,
    pub training_clips: Vec<usize>,
    pub methods: Vec<MethodResult>,
}

impl RatioResult {
    pub fn auc(&self, method: Method) -> Option<f64> {
        self.methods.iter().find(|m| m.method == method).map(|m| m.auc)
    }
}

/// Everything the cross-validation needs besides the plan.
pub struct ExperimentInputs<'a> {
    pub corpus: &'a Corpus,
    pub truth: &'a GroundTruthStore,
    pub world: &'a SimConfig,
    pub grammar: &'a GrammarSpec,
    /// Vocabulary, parts of speech and quantizers; its parameters are unused.
    pub template: &'a Lexicon,
    pub hand: &'a Lexicon,
    pub trainer: &'a TrainerConfig,
}

fn subset_auc(judgments: &[PairJudgment], is_nv: &[bool], nv: bool) -> Option<f64> {
    let part: Vec<PairJudgment> = judgments.iter().filter(|j| is_nv[j.sentence] == nv).cloned().collect();
    roc(&part).ok().map(|r| r.auc)
}

fn scored_result(method: Method, judgments: Vec<PairJudgment>, tests: &TestSentences) -> Result<MethodResult> {
    let r = roc(&judgments)?;
    Ok(MethodResult {
        method,
        auc_nv: subset_auc(&judgments, &tests.is_nv, true),
        auc_all: subset_auc(&judgments, &tests.is_nv, false),
        judgments,
        curve: r.points,
        auc: r.auc,
    })
}

fn point_result(method: Method, point: OperatingPoint) -> MethodResult {
    MethodResult {
        method,
        judgments: Vec::new(),
        curve: vec![OperatingPoint { fpr: 0.0, tpr: 0.0 }, point, OperatingPoint { fpr: 1.0, tpr: 1.0 }],
        auc: point_auc(point),
        auc_nv: None,
        auc_all: None,
    }
}

/// Three-fold cross-validation at every ratio, pooling held-out judgments
/// across folds. Fold assignments are shared by all methods.
pub fn cross_validate(inputs: &ExperimentInputs<'_>, plan: &ExperimentPlan) -> Result<Vec<RatioResult>> {
    plan.check()?;
    let corpus = inputs.corpus;
    let tests = choose_test_sentences(corpus, inputs.grammar, inputs.template, plan)?;
    let semantics = Semantics::new(inputs.world, inputs.template)?;
    let labels = label_matrix(inputs.truth, &corpus.clips, &tests.sentences, &semantics, inputs.world)?;
    let lc = &inputs.trainer.ml.lattice;
    let mut results = Vec::with_capacity(plan.ratios.len());
    for &ratio in &plan.ratios {
        let splits = fold_splits(corpus.clips.len(), ratio, plan.folds, plan.seed);
        info!(
            "ratio {ratio}: {} training clips per fold",
            splits.first().map_or(0, |s| s.0.len())
        );
        // (method, fold) -> judgments
        let jobs: Vec<(Method, usize)> = plan
            .methods
            .iter()
            .filter(|m| !matches!(m, Method::Chance | Method::Blind))
            .flat_map(|&m| (0..splits.len()).map(move |f| (m, f)))
            .collect();
        let scored: Vec<Vec<PairJudgment>> = jobs
            .par_iter()
            .map(|&(method, fold)| {
                let (train, test) = &splits[fold];
                let test_clips: Vec<VideoClip> = test.iter().map(|&i| corpus.clips[i].clone()).collect();
                let test_labels: Vec<Vec<bool>> = test.iter().map(|&i| labels[i].clone()).collect();
                let lexicon = if method == Method::Hand {
                    inputs.hand.clone()
                } else {
                    train_method(method, &corpus.subset(train), inputs.grammar, inputs.template, inputs.trainer).map_err(
                        |e| Error::Fold {
                            fold,
                            source: Box::new(e),
                        },
                    )?
                };
                score_pairs(&test_clips, &tests.sentences, &test_labels, &lexicon, lc)
            })
            .collect::<Result<Vec<_>>>()?;
        // pooled held-out pairs, for the score-free baselines
        let held: Vec<(usize, bool)> = splits
            .iter()
            .flat_map(|(_, test)| {
                test.iter()
                    .flat_map(|&i| labels[i].iter().enumerate().map(|(s, &l)| (s, l)).collect::<Vec<_>>())
            })
            .collect();
        let held_sentences: Vec<usize> = held.iter().map(|h| h.0).collect();
        let held_labels: Vec<bool> = held.iter().map(|h| h.1).collect();
        let mut methods = Vec::new();
        for &method in &plan.methods {
            let r = match method {
                Method::Chance => point_result(method, baseline_chance(&held_labels, plan.seed ^ 0xC4A1CE).point),
                Method::Blind => point_result(method, baseline_blind(&held_sentences, &held_labels, tests.sentences.len()).point),
                _ => {
                    let pooled: Vec<PairJudgment> = jobs
                        .iter()
                        .zip(&scored)
                        .filter(|((m, _), _)| *m == method)
                        .flat_map(|(_, j)| j.iter().cloned())
                        .collect();
                    scored_result(method, pooled, &tests)?
                }
            };
            info!("ratio {ratio} {}: AUC {:.4}", method.name(), r.auc);
            methods.push(r);
        }
        results.push(RatioResult {
            ratio,
            training_clips: splits.iter().map(|s| s.0.len()).collect(),
            methods,
        });
    }
    Ok(results)
}

/// A full experiment: corpus seeds, world, trainers and plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub corpus_seeds: Vec<u64>,
    pub world: SimConfig,
    pub plan: ExperimentPlan,
    pub trainer: TrainerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus_seeds: vec![1, 2, 3],
            world: SimConfig::default(),
            plan: ExperimentPlan::default(),
            trainer: TrainerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<ExperimentConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub corpus_seed: u64,
    pub ratios: Vec<RatioResult>,
}

/// Generates one corpus per seed with the default grammar and runs
/// [`cross_validate`] on each.
pub fn run_experiment(config: &ExperimentConfig, grammar: &GrammarSpec, template: &Lexicon) -> Result<Vec<SeedResult>> {
    let hand = hand_lexicon(&config.world, template)?;
    config
        .corpus_seeds
        .iter()
        .map(|&seed| {
            let (corpus, truth) = generate_corpus(&config.world, grammar, template, seed)?;
            let inputs = ExperimentInputs {
                corpus: &corpus,
                truth: &truth,
                world: &config.world,
                grammar,
                template,
                hand: &hand,
                trainer: &config.trainer,
            };
            Ok(SeedResult {
                corpus_seed: seed,
                ratios: cross_validate(&inputs, &config.plan)?,
            })
        })
        .collect()
}

/// Mean AUC of a method at a ratio over corpus seeds.
pub fn mean_auc(results: &[SeedResult], ratio: f64, method: Method) -> Option<f64> {
    let v: Vec<f64> = results
        .iter()
        .filter_map(|s| s.ratios.iter().find(|r| r.ratio == ratio)?.auc(method))
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
