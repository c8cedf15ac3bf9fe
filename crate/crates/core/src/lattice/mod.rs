//! Video-sentence scoring on the joint tracking/word-HMM lattice.
//!
//! Every detection in a frame is a candidate for every participant; the noun
//! models carry the class evidence. Track weights are unnormalized, which is
//! harmless because every sentence compared against a clip shares them.

mod bank;
mod engine;
pub mod features;
pub mod track;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grammar::SentenceTemplate;
use crate::lexicon::Lexicon;
use crate::worldsim::VideoClip;

pub use bank::ClipBank;
pub use engine::{Posteriors, ViterbiPath, WordPosterior};
pub use features::{compute_features, FeatureTensor};
pub use track::track_weight;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatticeConfig {
    /// Coherence factor is `exp(-kappa * displacement^2)`.
    pub kappa: f64,
    pub max_participants: usize,
    pub max_words: usize,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig {
            kappa: 0.1,
            max_participants: 3,
            max_words: 6,
        }
    }
}

/// `log L(D; S, lambda)`: sum over all assignment and state sequences.
/// `-inf` when every path has zero weight.
pub fn forward_score(clip: &VideoClip, template: &SentenceTemplate, lexicon: &Lexicon, config: &LatticeConfig) -> Result<f64> {
    forward_score_in(&bank_for(clip, template, lexicon)?, template, lexicon, config)
}

/// [`forward_score`] on a prepared clip.
pub fn forward_score_in(bank: &ClipBank<'_>, template: &SentenceTemplate, lexicon: &Lexicon, config: &LatticeConfig) -> Result<f64> {
    engine::Lattice::new(bank, template, lexicon, config)?.forward()
}

/// One bank per clip, every part of speech prepared.
pub fn prepare_clips<'a>(clips: &'a [VideoClip], lexicon: &Lexicon) -> Result<Vec<ClipBank<'a>>> {
    use rayon::prelude::*;
    clips.par_iter().map(|c| ClipBank::new(c, lexicon)).collect()
}

/// A bank holding only the parts of speech the sentence uses.
fn bank_for<'a>(clip: &'a VideoClip, template: &SentenceTemplate, lexicon: &Lexicon) -> Result<ClipBank<'a>> {
    template.check(lexicon)?;
    let mut wanted = vec![false; lexicon.pos_table.len()];
    for &m in &template.words {
        wanted[lexicon.entries[m].pos] = true;
    }
    ClipBank::with_parts(clip, lexicon, &wanted)
}

/// Best single path and its log weight.
pub fn viterbi_score(
    clip: &VideoClip,
    template: &SentenceTemplate,
    lexicon: &Lexicon,
    config: &LatticeConfig,
) -> Result<ViterbiPath> {
    engine::Lattice::new(&bank_for(clip, template, lexicon)?, template, lexicon, config)?.viterbi()
}

/// Per-word state, transition and output-bin posteriors. Errors when the
/// sentence has zero likelihood on the clip.
pub fn posteriors(clip: &VideoClip, template: &SentenceTemplate, lexicon: &Lexicon, config: &LatticeConfig) -> Result<Posteriors> {
    posteriors_in(&bank_for(clip, template, lexicon)?, template, lexicon, config)
}

/// [`posteriors`] on a prepared clip.
pub fn posteriors_in(bank: &ClipBank<'_>, template: &SentenceTemplate, lexicon: &Lexicon, config: &LatticeConfig) -> Result<Posteriors> {
    engine::Lattice::new(bank, template, lexicon, config)?.posteriors()
}

/// `log pi(S) = sum_l [log I + sum_n log Z_n]`, the log size of the uniform
/// state and output spaces of the sentence's words.
pub fn sentence_prior(template: &SentenceTemplate, lexicon: &Lexicon) -> f64 {
    template
        .words
        .iter()
        .map(|&m| {
            let pos = lexicon.pos_of(m);
            (pos.state_count as f64).ln() + pos.bins.iter().map(|&z| (z as f64).ln()).sum::<f64>()
        })
        .sum()
}

/// Per-frame score with the sentence prior: `log L / T + log pi`.
pub fn normalize(log_likelihood: f64, frames: usize, log_prior: f64) -> f64 {
    log_likelihood / frames as f64 + log_prior
}

pub fn normalized_score(
    clip: &VideoClip,
    template: &SentenceTemplate,
    lexicon: &Lexicon,
    config: &LatticeConfig,
) -> Result<f64> {
    normalized_score_in(&bank_for(clip, template, lexicon)?, template, lexicon, config)
}

/// [`normalized_score`] on a prepared clip.
pub fn normalized_score_in(bank: &ClipBank<'_>, template: &SentenceTemplate, lexicon: &Lexicon, config: &LatticeConfig) -> Result<f64> {
    let log_l = forward_score_in(bank, template, lexicon, config)?;
    Ok(normalize(log_l, bank.clip().frames.len(), sentence_prior(template, lexicon)))
}
