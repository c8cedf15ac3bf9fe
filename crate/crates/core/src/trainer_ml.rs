//! Maximum-likelihood training by Baum-Welch occurrence counting over the
//! positive video-sentence pairs.

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::SentenceTemplate;
use crate::lattice::{self, ClipBank, LatticeConfig};
use crate::lexicon::{normalize_row, Lexicon, ParamTable, RowKind, DEFAULT_FLOOR};
use crate::worldsim::{Corpus, VideoClip};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlConfig {
    pub max_iterations: usize,
    /// Stop when the relative change of the log-likelihood falls below this.
    pub tolerance: f64,
    pub floor: f64,
    pub lattice: LatticeConfig,
}

impl Default for MlConfig {
    fn default() -> Self {
        MlConfig {
            max_iterations: 50,
            tolerance: 1e-6,
            floor: DEFAULT_FLOOR,
            lattice: LatticeConfig::default(),
        }
    }
}

impl MlConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if !(0.0..0.5).contains(&self.floor) {
            return Err(Error::Config(format!("floor {} outside [0, 0.5)", self.floor)));
        }
        Ok(())
    }
}

/// A (clip, sentence) pair addressed by positions in a [`Corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRef {
    pub clip: usize,
    pub sentence: usize,
}

fn samples(corpus: &Corpus) -> Vec<(SampleRef, &VideoClip, &SentenceTemplate)> {
    corpus
        .clips
        .iter()
        .zip(&corpus.positives)
        .enumerate()
        .flat_map(|(c, (clip, sentences))| {
            sentences
                .iter()
                .enumerate()
                .map(move |(s, t)| (SampleRef { clip: c, sentence: s }, clip, t))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlObjective {
    /// `sum_r log L(D_r; S_r, lambda)`; `-inf` if any sample has zero likelihood.
    pub value: f64,
    pub zero_likelihood: Vec<SampleRef>,
}

pub fn ml_objective(corpus: &Corpus, lexicon: &Lexicon, config: &LatticeConfig) -> Result<MlObjective> {
    let refs = samples(corpus);
    let banks = lattice::prepare_clips(&corpus.clips, lexicon)?;
    let scores: Vec<f64> = refs
        .par_iter()
        .map(|(r, _, t)| lattice::forward_score_in(&banks[r.clip], t, lexicon, config))
        .collect::<Result<_>>()?;
    let zero_likelihood: Vec<SampleRef> = refs
        .iter()
        .zip(&scores)
        .filter(|(_, s)| **s == f64::NEG_INFINITY)
        .map(|(r, _)| r.0)
        .collect();
    let value = scores.iter().sum();
    Ok(MlObjective { value, zero_likelihood })
}

/// Expected parameter-use counts of one sentence on one clip, pooled over
/// the sentence's word occurrences, plus its log-likelihood.
pub fn sentence_counts(
    clip: &VideoClip,
    template: &SentenceTemplate,
    lexicon: &Lexicon,
    config: &LatticeConfig,
) -> Result<(f64, ParamTable)> {
    sentence_counts_in(&ClipBank::new(clip, lexicon)?, template, lexicon, config)
}

pub(crate) fn sentence_counts_in(
    bank: &ClipBank<'_>,
    template: &SentenceTemplate,
    lexicon: &Lexicon,
    config: &LatticeConfig,
) -> Result<(f64, ParamTable)> {
    let post = lattice::posteriors_in(bank, template, lexicon, config)?;
    let mut counts = ParamTable::zeros(lexicon);
    for w in &post.words {
        counts.entries[w.entry].add_scaled(&w.counts(), 1.0);
    }
    Ok((post.log_likelihood, counts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BwStep {
    pub lexicon: Lexicon,
    /// Objective of the input lexicon.
    pub log_likelihood: f64,
    /// Rows with no expected occupancy, left unchanged.
    pub unchanged: Vec<(usize, RowKind)>,
    pub zero_likelihood: Vec<SampleRef>,
}

/// One Baum-Welch reestimation over all positive samples.
pub fn bw_step(corpus: &Corpus, lexicon: &Lexicon, config: &MlConfig) -> Result<BwStep> {
    let refs = samples(corpus);
    let banks = lattice::prepare_clips(&corpus.clips, lexicon)?;
    let results: Vec<Option<(f64, ParamTable)>> = refs
        .par_iter()
        .map(|(r, _, t)| match sentence_counts_in(&banks[r.clip], t, lexicon, &config.lattice) {
            Ok(c) => Ok(Some(c)),
            Err(Error::NonFinite(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let mut total = ParamTable::zeros(lexicon);
    let mut log_likelihood = 0.0;
    let mut zero_likelihood = Vec::new();
    for (r, res) in refs.iter().zip(results) {
        match res {
            Some((ll, counts)) => {
                log_likelihood += ll;
                total.add_scaled(&counts, 1.0);
            }
            None => {
                log_likelihood = f64::NEG_INFINITY;
                zero_likelihood.push(r.0);
            }
        }
    }
    if !zero_likelihood.is_empty() {
        warn!("{} samples have zero likelihood and contribute no counts", zero_likelihood.len());
    }
    let mut next = lexicon.clone();
    let mut unchanged = Vec::new();
    for (m, (entry, counts)) in next.entries.iter_mut().zip(&total.entries).enumerate() {
        for row in 0..counts.row_count() {
            let mut r = counts.row(row).to_vec();
            if normalize_row(&mut r, config.floor) {
                entry.dists.row_mut(row).copy_from_slice(&r);
            } else {
                unchanged.push((m, counts.row_kind(row)));
            }
        }
    }
    Ok(BwStep {
        lexicon: next,
        log_likelihood,
        unchanged,
        zero_likelihood,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlTraceRow {
    pub iteration: usize,
    pub log_likelihood: f64,
}

/// Iterates [`bw_step`] until the relative objective change drops below the
/// tolerance. The trace holds the objective of every visited lexicon.
pub fn train_ml(corpus: &Corpus, lexicon0: &Lexicon, config: &MlConfig) -> Result<(Lexicon, Vec<MlTraceRow>)> {
    config.check()?;
    let mut lexicon = lexicon0.clone();
    let mut trace = Vec::new();
    if config.max_iterations == 0 {
        return Ok((lexicon, trace));
    }
    let mut previous: Option<f64> = None;
    for iteration in 0..config.max_iterations {
        let step = bw_step(corpus, &lexicon, config)?;
        trace.push(MlTraceRow {
            iteration,
            log_likelihood: step.log_likelihood,
        });
        debug!("ml iteration {iteration}: log L = {:.9}", step.log_likelihood);
        if let Some(p) = previous {
            if converged(p, step.log_likelihood, config.tolerance) {
                info!("ml converged after {iteration} iterations");
                return Ok((lexicon, trace));
            }
        }
        previous = Some(step.log_likelihood);
        lexicon = step.lexicon;
    }
    let last = ml_objective(corpus, &lexicon, &config.lattice)?.value;
    trace.push(MlTraceRow {
        iteration: config.max_iterations,
        log_likelihood: last,
    });
    Ok((lexicon, trace))
}

pub(crate) fn converged(previous: f64, current: f64, tolerance: f64) -> bool {
    if !previous.is_finite() || !current.is_finite() {
        return previous == current;
    }
    (current - previous).abs() <= tolerance * previous.abs().max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{init_uniform, Distributions, FeatureConfig, FeatureKind, PosConfig, WordModel};
    use crate::worldsim::Detection;

    fn det(class_id: usize, x: f64) -> Detection {
        Detection {
            class_id,
            strength: 1.0,
            x,
            y: 0.0,
        }
    }

    fn noun_lexicon(states: usize) -> Lexicon {
        let pos = PosConfig {
            name: "noun".into(),
            state_count: states,
            features: vec![FeatureKind::ObjectClass],
            bins: vec![2],
            arity: 1,
        };
        let vocab = vec![("a".to_string(), "noun".to_string()), ("b".to_string(), "noun".to_string())];
        init_uniform(&[pos], &FeatureConfig::default(), &vocab, 0.05, 1).unwrap()
    }

    fn one(word: usize) -> SentenceTemplate {
        SentenceTemplate {
            words: vec![word],
            args: vec![vec![0]],
            participant_count: 1,
        }
    }

    #[test]
    fn objective_sums_samples() {
        let lex = noun_lexicon(2);
        let clip = VideoClip {
            clip_id: 0,
            frames: vec![vec![det(0, 0.0), det(1, 1.0)], vec![det(1, 0.5)]],
        };
        let single = Corpus {
            clips: vec![clip.clone()],
            positives: vec![vec![one(0)]],
        };
        let double = Corpus {
            clips: vec![clip.clone(), clip.clone()],
            positives: vec![vec![one(0)], vec![one(0)]],
        };
        let lc = LatticeConfig::default();
        let a = ml_objective(&single, &lex, &lc).unwrap().value;
        let b = ml_objective(&double, &lex, &lc).unwrap().value;
        assert!((a - lattice::forward_score(&clip, &one(0), &lex, &lc).unwrap()).abs() < 1e-15);
        assert!((b - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn unseen_word_is_untouched() {
        let lex = noun_lexicon(2);
        let corpus = Corpus {
            clips: vec![VideoClip {
                clip_id: 0,
                frames: vec![vec![det(0, 0.0)], vec![det(0, 0.0)]],
            }],
            positives: vec![vec![one(0)]],
        };
        let step = bw_step(&corpus, &lex, &MlConfig::default()).unwrap();
        assert_eq!(step.lexicon.entries[1], lex.entries[1]);
        assert!(step.unchanged.iter().filter(|(m, _)| *m == 1).count() == lex.entries[1].dists.row_count());
    }

    /// One single-state word, one detection per frame: the output row
    /// becomes the empirical class frequencies.
    #[test]
    fn single_state_output_is_empirical_frequency() {
        let pos = PosConfig {
            name: "noun".into(),
            state_count: 1,
            features: vec![FeatureKind::ObjectClass],
            bins: vec![2],
            arity: 1,
        };
        let mut d = Distributions::uniform(&pos);
        d.output[0][0] = vec![0.9, 0.1];
        let lex = Lexicon {
            pos_table: vec![pos],
            features: FeatureConfig::default(),
            entries: vec![WordModel {
                name: "a".into(),
                pos: 0,
                dists: d,
            }],
        };
        // two frames, two detections in frame 1: posterior over the frame-1
        // detection is proportional to b(class) * coherence
        let clip = VideoClip {
            clip_id: 0,
            frames: vec![vec![det(0, 0.0)], vec![det(0, 0.0), det(1, 0.0)]],
        };
        let corpus = Corpus {
            clips: vec![clip],
            positives: vec![vec![one(0)]],
        };
        let step = bw_step(&corpus, &lex, &MlConfig { floor: 0.0, ..MlConfig::default() }).unwrap();
        // frame 0: class 0 for sure; frame 1: class 0 w.p. 0.9, class 1 w.p. 0.1
        let want = [(1.0 + 0.9) / 2.0, 0.1 / 2.0];
        let got = &step.lexicon.entries[0].dists.output[0][0];
        assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12);
    }

    #[test]
    fn zero_iterations_returns_input() {
        let lex = noun_lexicon(2);
        let corpus = Corpus {
            clips: vec![],
            positives: vec![],
        };
        let cfg = MlConfig {
            max_iterations: 0,
            ..MlConfig::default()
        };
        let (out, trace) = train_ml(&corpus, &lex, &cfg).unwrap();
        assert_eq!(out, lex);
        assert!(trace.is_empty());
    }

    #[test]
    fn bad_tolerance_is_config_error() {
        let cfg = MlConfig {
            tolerance: 0.0,
            ..MlConfig::default()
        };
        assert!(matches!(cfg.check().unwrap_err(), Error::Config(_)));
    }
}
