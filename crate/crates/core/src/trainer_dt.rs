//! Discriminative training: positive sentences against sampled negatives in
//! per-clip competition sets.
//!
//! Two update rules are provided. The growth-transformation step climbs the
//! per-frame normalized objective using its exact gradient; the extended
//! Baum-Welch step climbs the raw objective from discrimination-weighted
//! counts. Both use per-distribution damping with the same adaptive schedule.

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{sample_negatives, CompetitionSet, GrammarSpec, SentenceTemplate};
use crate::lattice::{self, ClipBank, LatticeConfig};
use crate::lexicon::{normalize_row, Lexicon, ParamTable, DEFAULT_FLOOR};
use crate::trainer_ml::{converged, sentence_counts_in, train_ml, MlConfig, MlTraceRow};
use crate::worldsim::{Corpus, VideoClip};

pub const DEFAULT_NEGATIVES: usize = 47;

/// Which sentence score enters the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    /// `log L`
    Likelihood,
    /// `log L / T + log pi(S)`
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// Gradient-driven growth transformation on the normalized objective.
    GrowthTransform,
    /// Count-based extended Baum-Welch on the likelihood objective.
    ExtendedBaumWelch,
}

impl Optimizer {
    pub fn score_kind(self) -> ScoreKind {
        match self {
            Optimizer::GrowthTransform => ScoreKind::Normalized,
            Optimizer::ExtendedBaumWelch => ScoreKind::Likelihood,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DtConfig {
    pub optimizer: Optimizer,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub max_retries: usize,
    /// Damping growth factor after a rejected update.
    pub punishment: f64,
    /// Damping used in place of a zero previous value.
    pub damping_floor: f64,
    pub floor: f64,
    pub negatives: usize,
    pub seed: u64,
    pub lattice: LatticeConfig,
}

impl Default for DtConfig {
    fn default() -> Self {
        DtConfig {
            optimizer: Optimizer::GrowthTransform,
            max_iterations: 100,
            tolerance: 1e-6,
            max_retries: 30,
            punishment: 2.0,
            damping_floor: 1e-4,
            floor: DEFAULT_FLOOR,
            negatives: DEFAULT_NEGATIVES,
            seed: 0,
            lattice: LatticeConfig::default(),
        }
    }
}

impl DtConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.punishment > 1.0) {
            return Err(Error::Config(format!("punishment factor must exceed 1, got {}", self.punishment)));
        }
        if !(self.damping_floor > 0.0) {
            return Err(Error::Config("damping floor must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.floor) {
            return Err(Error::Config(format!("floor {} outside [0, 0.5)", self.floor)));
        }
        Ok(())
    }
}

/// Clips with one competition set per positive sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct CompetitionCorpus {
    pub clips: Vec<VideoClip>,
    pub sets: Vec<CompetitionSet>,
}

impl CompetitionCorpus {
    pub fn clip(&self, clip_id: usize) -> Result<&VideoClip> {
        Ok(&self.clips[self.clip_index(clip_id)?])
    }

    fn clip_index(&self, clip_id: usize) -> Result<usize> {
        self.clips
            .iter()
            .position(|c| c.clip_id == clip_id)
            .ok_or_else(|| Error::Malformed(format!("competition set refers to unknown clip {clip_id}")))
    }
}

fn to_score(kind: ScoreKind, log_l: f64, frames: usize, template: &SentenceTemplate, lexicon: &Lexicon) -> f64 {
    match kind {
        ScoreKind::Likelihood => log_l,
        ScoreKind::Normalized => lattice::normalize(log_l, frames, lattice::sentence_prior(template, lexicon)),
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Scores of every sentence of a competition set.
pub fn set_scores(
    clip: &VideoClip,
    set: &CompetitionSet,
    lexicon: &Lexicon,
    kind: ScoreKind,
    config: &LatticeConfig,
) -> Result<Vec<f64>> {
    set_scores_in(&ClipBank::new(clip, lexicon)?, set, lexicon, kind, config)
}

fn set_scores_in(
    bank: &ClipBank<'_>,
    set: &CompetitionSet,
    lexicon: &Lexicon,
    kind: ScoreKind,
    config: &LatticeConfig,
) -> Result<Vec<f64>> {
    let frames = bank.clip().frames.len();
    set.sentences
        .iter()
        .map(|s| {
            let l = lattice::forward_score_in(bank, s, lexicon, config)?;
            Ok(to_score(kind, l, frames, s, lexicon))
        })
        .collect()
}

/// `eps(g) = delta(g is positive) - exp(score_g) / sum_k exp(score_k)`.
pub fn weights_from_scores(scores: &[f64], positive: usize, clip_id: usize) -> Result<Vec<f64>> {
    let z = log_sum_exp(scores);
    if z == f64::NEG_INFINITY {
        return Err(Error::DegenerateCompetitionSet { clip_id });
    }
    Ok(scores
        .iter()
        .enumerate()
        .map(|(g, s)| (g == positive) as u8 as f64 - (s - z).exp())
        .collect())
}

pub fn discrimination_weights(
    clip: &VideoClip,
    set: &CompetitionSet,
    lexicon: &Lexicon,
    kind: ScoreKind,
    config: &LatticeConfig,
) -> Result<Vec<f64>> {
    let scores = set_scores(clip, set, lexicon, kind, config)?;
    weights_from_scores(&scores, set.positive_index, set.clip_id)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtObjective {
    pub value: f64,
    /// Contribution of every competition set.
    pub per_set: Vec<f64>,
    /// Sets whose positive sentence has zero likelihood.
    pub zero_positive: Vec<usize>,
}

fn objective(data: &CompetitionCorpus, lexicon: &Lexicon, kind: ScoreKind, config: &LatticeConfig) -> Result<DtObjective> {
    let banks = lattice::prepare_clips(&data.clips, lexicon)?;
    let per_set: Vec<f64> = data
        .sets
        .par_iter()
        .map(|set| {
            let scores = set_scores_in(&banks[data.clip_index(set.clip_id)?], set, lexicon, kind, config)?;
            let pos = scores[set.positive_index];
            Ok(if pos == f64::NEG_INFINITY {
                pos
            } else {
                pos - log_sum_exp(&scores)
            })
        })
        .collect::<Result<_>>()?;
    let zero_positive = per_set
        .iter()
        .enumerate()
        .filter(|(_, v)| **v == f64::NEG_INFINITY)
        .map(|(r, _)| r)
        .collect();
    Ok(DtObjective {
        value: per_set.iter().sum(),
        per_set,
        zero_positive,
    })
}

/// `O = sum_r [log L(positive) - log sum_g L(g)]`, never positive.
pub fn discrimination_objective(data: &CompetitionCorpus, lexicon: &Lexicon, config: &LatticeConfig) -> Result<DtObjective> {
    objective(data, lexicon, ScoreKind::Likelihood, config)
}

/// The same objective over per-frame normalized scores with sentence priors.
pub fn smoothed_objective(data: &CompetitionCorpus, lexicon: &Lexicon, config: &LatticeConfig) -> Result<DtObjective> {
    objective(data, lexicon, ScoreKind::Normalized, config)
}

/// Derivatives of an objective with respect to every raw parameter, with the
/// discrimination-weighted counts they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTable {
    pub objective: f64,
    /// `sum_r sum_g eps(r, g) * scale_r * count_g`, where `scale_r` is `1/T_r`
    /// for normalized scores and 1 otherwise.
    pub weighted_counts: ParamTable,
    /// `weighted_counts / lambda`, component-wise.
    pub gradient: ParamTable,
    /// Every competition set's weights, in set order.
    pub weights: Vec<Vec<f64>>,
}

fn set_gradient(
    bank: &ClipBank<'_>,
    set: &CompetitionSet,
    lexicon: &Lexicon,
    kind: ScoreKind,
    config: &LatticeConfig,
) -> Result<(f64, ParamTable, Vec<f64>)> {
    let frames = bank.clip().frames.len();
    let mut scores = Vec::with_capacity(set.len());
    let mut counts = Vec::with_capacity(set.len());
    for (g, s) in set.sentences.iter().enumerate() {
        match sentence_counts_in(bank, s, lexicon, config) {
            Ok((l, c)) => {
                scores.push(to_score(kind, l, frames, s, lexicon));
                counts.push(Some(c));
            }
            Err(Error::NonFinite(msg)) => {
                if g == set.positive_index {
                    return Err(Error::NonFinite(format!(
                        "positive sentence of clip {}: {msg}",
                        set.clip_id
                    )));
                }
                scores.push(f64::NEG_INFINITY);
                counts.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let eps = weights_from_scores(&scores, set.positive_index, set.clip_id)?;
    let scale = match kind {
        ScoreKind::Likelihood => 1.0,
        ScoreKind::Normalized => 1.0 / frames as f64,
    };
    let mut weighted = ParamTable::zeros(lexicon);
    for (e, c) in eps.iter().zip(&counts) {
        if let Some(c) = c {
            weighted.add_scaled(c, e * scale);
        }
    }
    let contribution = scores[set.positive_index] - log_sum_exp(&scores);
    Ok((contribution, weighted, eps))
}

/// Exact gradient of the chosen objective with respect to raw parameters.
pub fn gradient(data: &CompetitionCorpus, lexicon: &Lexicon, kind: ScoreKind, config: &LatticeConfig) -> Result<GradientTable> {
    let banks = lattice::prepare_clips(&data.clips, lexicon)?;
    let parts: Vec<(f64, ParamTable, Vec<f64>)> = data
        .sets
        .par_iter()
        .map(|set| set_gradient(&banks[data.clip_index(set.clip_id)?], set, lexicon, kind, config))
        .collect::<Result<_>>()?;
    let mut weighted_counts = ParamTable::zeros(lexicon);
    let mut value = 0.0;
    let mut weights = Vec::with_capacity(parts.len());
    for (v, w, e) in parts {
        value += v;
        weighted_counts.add_scaled(&w, 1.0);
        weights.push(e);
    }
    let mut gradient = weighted_counts.clone();
    for (g, entry) in gradient.entries.iter_mut().zip(&lexicon.entries) {
        for r in 0..g.row_count() {
            for (x, &p) in g.row_mut(r).iter_mut().zip(entry.dists.row(r)) {
                *x = if *x == 0.0 { 0.0 } else { *x / p };
            }
        }
    }
    Ok(GradientTable {
        objective: value,
        weighted_counts,
        gradient,
        weights,
    })
}

/// Per-distribution damping constants and the adaptive schedule state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampingState {
    /// `c[entry][row]`
    pub c: Vec<Vec<f64>>,
    pub punishment: f64,
    pub floor: f64,
    /// Update attempts made so far (`w`).
    pub iteration: usize,
    /// Attempt index of the last accepted update (`y`).
    pub last_success: usize,
}

impl DampingState {
    pub fn new(lexicon: &Lexicon, punishment: f64, floor: f64) -> Self {
        DampingState {
            c: lexicon.entries.iter().map(|e| vec![0.0; e.dists.row_count()]).collect(),
            punishment,
            floor,
            iteration: 0,
            last_success: 0,
        }
    }

    pub fn record_success(&mut self) {
        self.last_success = self.iteration;
    }

    pub fn record_failure(&mut self) {
        self.iteration += 1;
    }

    pub fn max_c(&self) -> f64 {
        self.c.iter().flatten().copied().fold(0.0, f64::max)
    }
}

/// After an accepted update, `C_i = max(0, -min_k grad_{i,k})`; after a
/// rejection, `C_i = max(C'_i, floor) * punishment`.
pub fn adapt_damping(damping: &DampingState, gradient: &ParamTable) -> DampingState {
    let mut next = damping.clone();
    let succeeded = damping.iteration == damping.last_success;
    for (cs, g) in next.c.iter_mut().zip(&gradient.entries) {
        for (r, c) in cs.iter_mut().enumerate() {
            let row = g.row(r);
            *c = if succeeded {
                let min = row.iter().copied().fold(f64::INFINITY, f64::min);
                (-min).max(0.0)
            } else {
                // Relative to the row's own scale: parameters sitting at the
                // floor carry gradients many orders above one.
                let scale = row.iter().fold(1.0f64, |a, &x| a.max(x.abs()));
                c.max(damping.floor * scale) * damping.punishment
            };
        }
    }
    next
}

/// Rows whose gradient is identically zero, or whose update is a constant
/// multiple of the old row, stay as they are.
fn damped_update(
    lexicon: &Lexicon,
    gradient: &GradientTable,
    damping: &DampingState,
    floor: f64,
    count_form: bool,
) -> Option<Lexicon> {
    let mut next = lexicon.clone();
    for (m, entry) in next.entries.iter_mut().enumerate() {
        for r in 0..entry.dists.row_count() {
            let g = gradient.gradient.entries[m].row(r);
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let c = damping.c[m][r];
            let old = lexicon.entries[m].dists.row(r);
            let mut row: Vec<f64> = if count_form {
                let w = gradient.weighted_counts.entries[m].row(r);
                w.iter().zip(old).map(|(w, p)| w + c * p).collect()
            } else {
                g.iter().zip(old).map(|(g, p)| p * (g + c)).collect()
            };
            if row.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return None;
            }
            let total: f64 = row.iter().sum();
            if !(total > 0.0) {
                if g.iter().all(|&x| x == g[0]) {
                    continue;
                }
                return None;
            }
            row.iter_mut().for_each(|x| *x /= total);
            normalize_row(&mut row, floor);
            entry.dists.row_mut(r).copy_from_slice(&row);
        }
    }
    Some(next)
}

/// Result of one damped update attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// `None` when the damping was too small to keep every parameter
    /// nonnegative.
    pub lexicon: Option<Lexicon>,
    pub accepted: bool,
    pub objective_before: f64,
    pub objective_after: f64,
}

fn attempt(
    data: &CompetitionCorpus,
    lexicon: &Lexicon,
    gradient: &GradientTable,
    damping: &DampingState,
    config: &DtConfig,
) -> Result<StepOutcome> {
    let kind = config.optimizer.score_kind();
    let count_form = config.optimizer == Optimizer::ExtendedBaumWelch;
    let candidate = damped_update(lexicon, gradient, damping, config.floor, count_form);
    let after = match &candidate {
        Some(l) => objective(data, l, kind, &config.lattice)?.value,
        None => f64::NEG_INFINITY,
    };
    let accepted = candidate.is_some() && after >= gradient.objective;
    Ok(StepOutcome {
        lexicon: candidate,
        accepted,
        objective_before: gradient.objective,
        objective_after: after,
    })
}

/// Growth-transformation update
/// `lambda_ij <- lambda'_ij (d_ij + C_i) / sum_k lambda'_ik (d_ik + C_i)`
/// of the normalized objective with the given damping.
pub fn gt_step(data: &CompetitionCorpus, lexicon: &Lexicon, damping: &DampingState, config: &DtConfig) -> Result<StepOutcome> {
    let g = gradient(data, lexicon, ScoreKind::Normalized, &config.lattice)?;
    let cfg = DtConfig {
        optimizer: Optimizer::GrowthTransform,
        ..config.clone()
    };
    attempt(data, lexicon, &g, damping, &cfg)
}

/// Extended Baum-Welch update: discrimination-weighted counts plus
/// `C_i * lambda'`, renormalized, on the likelihood objective.
pub fn ebw_step(data: &CompetitionCorpus, lexicon: &Lexicon, damping: &DampingState, config: &DtConfig) -> Result<StepOutcome> {
    let g = gradient(data, lexicon, ScoreKind::Likelihood, &config.lattice)?;
    let cfg = DtConfig {
        optimizer: Optimizer::ExtendedBaumWelch,
        ..config.clone()
    };
    attempt(data, lexicon, &g, damping, &cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtTraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub accepted: bool,
    pub max_damping: f64,
}

/// Damped ascent with retry on rejection. Row 0 of the trace is the
/// starting point; every attempt adds a row.
pub fn train_dt(data: &CompetitionCorpus, lexicon0: &Lexicon, config: &DtConfig) -> Result<(Lexicon, Vec<DtTraceRow>)> {
    config.check()?;
    let kind = config.optimizer.score_kind();
    let mut lexicon = lexicon0.clone();
    let mut trace = Vec::new();
    if config.max_iterations == 0 {
        return Ok((lexicon, trace));
    }
    let mut damping = DampingState::new(&lexicon, config.punishment, config.damping_floor);
    let mut grad = gradient(data, &lexicon, kind, &config.lattice)?;
    if !grad.objective.is_finite() {
        return Err(Error::NonFinite(format!("initial objective is {}", grad.objective)));
    }
    trace.push(DtTraceRow {
        iteration: 0,
        objective: grad.objective,
        accepted: true,
        max_damping: 0.0,
    });
    for iteration in 1..=config.max_iterations {
        if grad.gradient.max_abs() == 0.0 {
            info!("dt: zero gradient, objective is stationary");
            break;
        }
        damping = adapt_damping(&damping, &grad.gradient);
        let mut retries = 0;
        let outcome = loop {
            let out = attempt(data, &lexicon, &grad, &damping, config)?;
            trace.push(DtTraceRow {
                iteration,
                objective: out.objective_after,
                accepted: out.accepted,
                max_damping: damping.max_c(),
            });
            if out.accepted {
                damping.record_success();
                break out;
            }
            damping.record_failure();
            retries += 1;
            if retries > config.max_retries {
                return Err(Error::TrainingAborted(format!(
                    "iteration {iteration}: {} rejected updates; objective {:.12}, last candidate {:.12}, max damping {:.3e}",
                    retries,
                    grad.objective,
                    out.objective_after,
                    damping.max_c()
                )));
            }
            damping = adapt_damping(&damping, &grad.gradient);
        };
        debug!(
            "dt iteration {iteration}: {:.9} -> {:.9} after {retries} retries",
            outcome.objective_before, outcome.objective_after
        );
        lexicon = outcome.lexicon.expect("accepted updates carry a lexicon");
        let done = converged(outcome.objective_before, outcome.objective_after, config.tolerance);
        grad = gradient(data, &lexicon, kind, &config.lattice)?;
        if done {
            info!("dt converged after {iteration} iterations");
            break;
        }
    }
    Ok((lexicon, trace))
}

/// Positives that the restricted grammar generates, per clip.
pub fn restricted_positives(corpus: &Corpus, grammar: &GrammarSpec, lexicon: &Lexicon) -> Result<Vec<Vec<SentenceTemplate>>> {
    let restricted = grammar.enumerate_restricted(lexicon)?;
    Ok(corpus
        .positives
        .iter()
        .map(|p| p.iter().filter(|s| restricted.contains(s)).cloned().collect())
        .collect())
}

/// One competition set per restricted positive: the positive plus negatives
/// drawn from restricted sentences not annotated on the clip.
pub fn build_competition_sets(
    corpus: &Corpus,
    grammar: &GrammarSpec,
    lexicon: &Lexicon,
    negatives: usize,
    seed: u64,
) -> Result<CompetitionCorpus> {
    let restricted = grammar.enumerate_restricted(lexicon)?;
    let mut sets = Vec::new();
    for (clip, positives) in corpus.clips.iter().zip(&corpus.positives) {
        let annotated: Vec<bool> = restricted.iter().map(|s| positives.contains(s)).collect();
        for (k, p) in positives.iter().filter(|s| restricted.contains(s)).enumerate() {
            let set_seed = seed ^ ((clip.clip_id as u64) << 20 | k as u64).wrapping_mul(0xA24B_AED4_963E_E407);
            sets.push(sample_negatives(clip.clip_id, &annotated, &restricted, p, negatives, set_seed)?);
        }
    }
    Ok(CompetitionCorpus {
        clips: corpus.clips.clone(),
        sets,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseResult {
    pub lexicon: Lexicon,
    /// Phase-1 output, the seed of phase 2.
    pub seed_lexicon: Lexicon,
    pub phase1: Vec<DtTraceRow>,
    pub phase2: Vec<MlTraceRow>,
}

/// Discriminative training of the restricted-grammar words, then maximum
/// likelihood over the full corpus starting from those words.
pub fn train_two_phase(
    corpus: &Corpus,
    grammar: &GrammarSpec,
    lexicon0: &Lexicon,
    dt: &DtConfig,
    ml: &MlConfig,
) -> Result<TwoPhaseResult> {
    let data = build_competition_sets(corpus, grammar, lexicon0, dt.negatives, dt.seed)?;
    let (trained, phase1) = train_dt(&data, lexicon0, dt)?;
    let mut seed_lexicon = lexicon0.clone();
    seed_lexicon.copy_entries_from(&trained, &grammar.restricted_entries(lexicon0));
    let (lexicon, phase2) = train_ml(corpus, &seed_lexicon, ml)?;
    Ok(TwoPhaseResult {
        lexicon,
        seed_lexicon,
        phase1,
        phase2,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlMlResult {
    pub lexicon: Lexicon,
    pub seed_lexicon: Lexicon,
    pub phase1: Vec<MlTraceRow>,
    pub phase2: Vec<MlTraceRow>,
}

/// Maximum likelihood on the restricted-grammar positives, then on the full
/// corpus starting from those words.
pub fn train_ml_ml(corpus: &Corpus, grammar: &GrammarSpec, lexicon0: &Lexicon, ml: &MlConfig) -> Result<MlMlResult> {
    let restricted = Corpus {
        clips: corpus.clips.clone(),
        positives: restricted_positives(corpus, grammar, lexicon0)?,
    };
    let (trained, phase1) = train_ml(&restricted, lexicon0, ml)?;
    let mut seed_lexicon = lexicon0.clone();
    seed_lexicon.copy_entries_from(&trained, &grammar.restricted_entries(lexicon0));
    let (lexicon, phase2) = train_ml(corpus, &seed_lexicon, ml)?;
    Ok(MlMlResult {
        lexicon,
        seed_lexicon,
        phase1,
        phase2,
    })
}
