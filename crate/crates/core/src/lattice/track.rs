//! Track factor of a participant-to-detection assignment: detection strength
//! in every frame times a temporal coherence factor between adjacent frames.

use crate::error::{Error, Result};
use crate::worldsim::{Detection, VideoClip};

pub fn coherence(previous: &Detection, current: &Detection, kappa: f64) -> f64 {
    let d2 = (current.x - previous.x).powi(2) + (current.y - previous.y).powi(2);
    (-kappa * d2).exp()
}

/// Unnormalized weight of `assignment[t][p]` (detection index of participant
/// `p` at frame `t`).
pub fn track_weight(clip: &VideoClip, assignment: &[Vec<usize>], kappa: f64) -> Result<f64> {
    if assignment.len() != clip.frames.len() {
        return Err(Error::Malformed("assignment length differs from frame count".into()));
    }
    let get = |t: usize, d: usize| {
        clip.frames[t]
            .get(d)
            .ok_or_else(|| Error::Malformed(format!("frame {t} has no detection {d}")))
    };
    let mut w = 1.0;
    for (t, tuple) in assignment.iter().enumerate() {
        if t > 0 && tuple.len() != assignment[t - 1].len() {
            return Err(Error::Malformed("participant count changes between frames".into()));
        }
        for (p, &d) in tuple.iter().enumerate() {
            let cur = get(t, d)?;
            w *= cur.strength;
            if t > 0 {
                w *= coherence(get(t - 1, assignment[t - 1][p])?, cur, kappa);
            }
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(frames: Vec<Vec<(f64, f64, f64)>>) -> VideoClip {
        VideoClip {
            clip_id: 0,
            frames: frames
                .into_iter()
                .map(|f| {
                    f.into_iter()
                        .map(|(strength, x, y)| Detection {
                            class_id: 0,
                            strength,
                            x,
                            y,
                        })
                        .collect()
                })
                .collect(),
        }
    }

    #[test]
    fn full_strength_still_track_has_unit_weight() {
        let c = clip(vec![vec![(1.0, 2.0, 3.0)]; 4]);
        let a = vec![vec![0]; 4];
        assert_eq!(track_weight(&c, &a, 7.5).unwrap(), 1.0);
    }

    #[test]
    fn half_strength_frame_halves_weight() {
        let mut frames = vec![vec![(1.0, 0.0, 0.0)]; 3];
        let full = track_weight(&clip(frames.clone()), &vec![vec![0]; 3], 1.0).unwrap();
        frames[1][0].0 = 0.5;
        let half = track_weight(&clip(frames), &vec![vec![0]; 3], 1.0).unwrap();
        assert_eq!(half, full * 0.5);
    }

    #[test]
    fn displacement_gives_gaussian_factor() {
        let d: f64 = 1.3;
        let c = clip(vec![vec![(1.0, 0.0, 0.0)], vec![(1.0, d, 0.0)]]);
        let w = track_weight(&c, &[vec![0], vec![0]], 1.0).unwrap();
        assert!((w - (-d * d).exp()).abs() < 1e-15);
    }

    #[test]
    fn bad_index_is_error() {
        let c = clip(vec![vec![(1.0, 0.0, 0.0)]]);
        assert!(track_weight(&c, &[vec![3]], 1.0).is_err());
    }
}
