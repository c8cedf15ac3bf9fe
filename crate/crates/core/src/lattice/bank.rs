//! Quantized features of every part of speech at every frame of one clip.
//!
//! Bins depend only on the detections and the feature configuration, never
//! on model probabilities, so one bank serves every sentence scored on the
//! clip and every training iteration.

use crate::error::{Error, Result};
use crate::lexicon::{FeatureConfig, Lexicon, PosConfig};
use crate::worldsim::VideoClip;

use super::features::{word_features, ArgDetections};

#[derive(Debug, Clone)]
pub struct ClipBank<'a> {
    pub(crate) clip: &'a VideoClip,
    pos_table: Vec<PosConfig>,
    features: FeatureConfig,
    /// `bins[pos][t][combo * N + n]`; empty for parts of speech not prepared.
    bins: Vec<Vec<Vec<usize>>>,
}

/// Radix of one argument's slot in a combo index: the current detection at
/// frame 0, else the (previous, current) pair with the current one fastest.
pub(crate) fn combo_radix(clip: &VideoClip, t: usize) -> usize {
    if t == 0 {
        clip.frames[0].len()
    } else {
        clip.frames[t - 1].len() * clip.frames[t].len()
    }
}

fn pos_bins(clip: &VideoClip, pos: &PosConfig, config: &FeatureConfig) -> Result<Vec<Vec<usize>>> {
    let n_feat = pos.feature_count();
    let mut args = Vec::with_capacity(pos.arity);
    (0..clip.frames.len())
        .map(|t| {
            let radix = combo_radix(clip, t);
            let dc = clip.frames[t].len();
            let combos = radix.checked_pow(pos.arity as u32).ok_or_else(|| {
                Error::ComplexityCap(format!("feature table of `{}` overflows at frame {t}", pos.name))
            })?;
            let frame = &clip.frames[t];
            let mut bins = vec![0usize; combos * n_feat];
            for c in 0..combos {
                args.clear();
                let mut rest = c;
                for _ in 0..pos.arity {
                    let slot = rest % radix;
                    rest /= radix;
                    args.push(if t == 0 {
                        ArgDetections {
                            current: &frame[slot],
                            previous: None,
                        }
                    } else {
                        ArgDetections {
                            current: &frame[slot % dc],
                            previous: Some(&clip.frames[t - 1][slot / dc]),
                        }
                    });
                }
                word_features(pos, config, &args, &mut bins[c * n_feat..(c + 1) * n_feat])?;
            }
            Ok(bins)
        })
        .collect()
}

impl<'a> ClipBank<'a> {
    /// Prepares every part of speech of the lexicon.
    pub fn new(clip: &'a VideoClip, lexicon: &Lexicon) -> Result<Self> {
        Self::with_parts(clip, lexicon, &vec![true; lexicon.pos_table.len()])
    }

    /// Prepares only the parts of speech flagged in `wanted`.
    pub fn with_parts(clip: &'a VideoClip, lexicon: &Lexicon, wanted: &[bool]) -> Result<Self> {
        if clip.frames.is_empty() || clip.frames.iter().any(Vec::is_empty) {
            return Err(Error::Malformed(format!("clip {} has an empty frame", clip.clip_id)));
        }
        let bins = lexicon
            .pos_table
            .iter()
            .zip(wanted)
            .map(|(pos, &w)| if w { pos_bins(clip, pos, &lexicon.features) } else { Ok(Vec::new()) })
            .collect::<Result<_>>()?;
        Ok(ClipBank {
            clip,
            pos_table: lexicon.pos_table.clone(),
            features: lexicon.features.clone(),
            bins,
        })
    }

    pub fn clip(&self) -> &'a VideoClip {
        self.clip
    }

    /// Errors unless the bank was built for this lexicon's feature layout.
    pub(crate) fn check(&self, lexicon: &Lexicon) -> Result<()> {
        if self.pos_table != lexicon.pos_table || self.features != lexicon.features {
            return Err(Error::Malformed(format!(
                "feature bank of clip {} was prepared for a different lexicon layout",
                self.clip.clip_id
            )));
        }
        Ok(())
    }

    pub(crate) fn bins(&self, pos: usize, t: usize) -> Result<&[usize]> {
        self.bins[pos]
            .get(t)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Malformed(format!("part of speech `{}` was not prepared", self.pos_table[pos].name)))
    }
}
