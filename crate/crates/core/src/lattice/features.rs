//! Quantized per-word features computed from the detections bound to a
//! word's arguments. Bins are 0-based.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grammar::SentenceTemplate;
use crate::lexicon::{FeatureConfig, FeatureKind, Lexicon, PosConfig};
use crate::worldsim::{Detection, VideoClip};

pub const DECREASING: usize = 0;
pub const STABLE: usize = 1;
pub const INCREASING: usize = 2;

/// Bin of `speed` given ascending edges: values below the first edge fall in bin 0.
pub fn quantize_speed(speed: f64, edges: &[f64]) -> usize {
    edges.iter().take_while(|&&e| speed >= e).count()
}

pub fn quantize_distance_change(delta: f64, threshold: f64) -> usize {
    if delta < -threshold {
        DECREASING
    } else if delta > threshold {
        INCREASING
    } else {
        STABLE
    }
}

/// Sector of the direction `(dx, dy)`; sector 0 is centred on +x (east) and
/// sectors advance counter-clockwise.
pub fn quantize_angle(dx: f64, dy: f64, sectors: usize) -> usize {
    if dx == 0.0 && dy == 0.0 {
        return 0;
    }
    let width = 2.0 * PI / sectors as f64;
    let a = dy.atan2(dx).rem_euclid(2.0 * PI);
    ((a / width).round() as usize) % sectors
}

/// One argument's detection at frame t and at t-1 (absent at frame 0).
#[derive(Debug, Clone, Copy)]
pub struct ArgDetections<'a> {
    pub current: &'a Detection,
    pub previous: Option<&'a Detection>,
}

fn velocity(a: &ArgDetections<'_>) -> (f64, f64) {
    match a.previous {
        Some(p) => (a.current.x - p.x, a.current.y - p.y),
        None => (0.0, 0.0),
    }
}

fn distance(a: &Detection, b: &Detection) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Writes the feature vector of a word whose arguments are bound to `args`.
///
/// At frame 0 there is no predecessor: velocities are zero and the distance
/// change is "stable".
pub fn word_features(pos: &PosConfig, config: &FeatureConfig, args: &[ArgDetections<'_>], out: &mut [usize]) -> Result<()> {
    for (n, (&kind, &bins)) in pos.features.iter().zip(&pos.bins).enumerate() {
        out[n] = match kind {
            FeatureKind::ObjectClass => {
                let c = args[0].current.class_id;
                if c >= bins {
                    return Err(Error::Malformed(format!(
                        "detection class {c} outside the {bins} class bins of `{}`",
                        pos.name
                    )));
                }
                c
            }
            FeatureKind::ActorSpeed => {
                let (vx, vy) = velocity(&args[0]);
                quantize_speed(vx.hypot(vy), &config.speed_edges)
            }
            FeatureKind::DistanceChange => match (args[0].previous, args[1].previous) {
                (Some(pa), Some(pb)) => {
                    let delta = distance(args[0].current, args[1].current) - distance(pa, pb);
                    quantize_distance_change(delta, config.distance_threshold)
                }
                _ => STABLE,
            },
            FeatureKind::RelativeAngle => {
                let dx = args[1].current.x - args[0].current.x;
                let dy = args[1].current.y - args[0].current.y;
                quantize_angle(dx, dy, bins)
            }
        };
    }
    Ok(())
}

/// `features[l][t]` is the feature vector of word `l` at frame `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureTensor {
    pub features: Vec<Vec<Vec<usize>>>,
}

/// Features of every word under a fixed participant-to-detection assignment;
/// `assignment[t][p]` is the detection index of participant `p` at frame `t`.
pub fn compute_features(
    clip: &VideoClip,
    assignment: &[Vec<usize>],
    template: &SentenceTemplate,
    lexicon: &Lexicon,
) -> Result<FeatureTensor> {
    if assignment.len() != clip.frames.len() {
        return Err(Error::Malformed(format!(
            "assignment covers {} frames, clip has {}",
            assignment.len(),
            clip.frames.len()
        )));
    }
    let det = |t: usize, p: usize| -> Result<&Detection> {
        let d = *assignment[t]
            .get(p)
            .ok_or_else(|| Error::Malformed(format!("frame {t} has no detection for participant {p}")))?;
        clip.frames[t]
            .get(d)
            .ok_or_else(|| Error::Malformed(format!("frame {t} has no detection {d}")))
    };
    let mut features = Vec::with_capacity(template.len());
    for (&m, args) in template.words.iter().zip(&template.args) {
        let pos = lexicon.pos_of(m);
        let mut per_frame = Vec::with_capacity(clip.frames.len());
        for t in 0..clip.frames.len() {
            let bound = args
                .iter()
                .map(|&p| {
                    Ok(ArgDetections {
                        current: det(t, p)?,
                        previous: if t == 0 { None } else { Some(det(t - 1, p)?) },
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut x = vec![0; pos.feature_count()];
            word_features(pos, &lexicon.features, &bound, &mut x)?;
            per_frame.push(x);
        }
        features.push(per_frame);
    }
    Ok(FeatureTensor { features })
}
