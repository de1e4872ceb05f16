use serde::{Deserialize, Serialize};

use super::types::{Action, DemoSample, Observation};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Largest horizontal shift, pixels.
    pub max_shift: i32,
    /// Steering change per pixel of shift.
    pub gain_k: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_shift: 4,
            gain_k: 0.015,
        }
    }
}

/// Shifts an `h × w` image horizontally by `shift` pixels (positive moves
/// content right), replicating the edge column into the uncovered area.
pub fn shift_image(image: &[f32], h: usize, w: usize, shift: i32) -> Vec<f32> {
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        let row = &image[r * w..(r + 1) * w];
        for (c, v) in out[r * w..(r + 1) * w].iter_mut().enumerate() {
            let src = (c as i64 - shift as i64).clamp(0, w as i64 - 1) as usize;
            *v = row[src];
        }
    }
    out
}

/// Shifted observation and the correspondingly adjusted action; the map and
/// throttle are left untouched.
pub fn augment_observation(
    observation: &Observation,
    action: Action,
    shift_px: i32,
    cfg: &AugmentConfig,
) -> Result<(Observation, Action)> {
    if shift_px.abs() > cfg.max_shift {
        return Err(Error::InvalidInput(format!(
            "shift {shift_px} exceeds the configured maximum {}",
            cfg.max_shift
        )));
    }
    if shift_px == 0 {
        return Ok((observation.clone(), action));
    }
    let mut o = observation.clone();
    o.image = shift_image(&observation.image, observation.image_h, observation.image_w, shift_px);
    let steering = (action.steering + cfg.gain_k * shift_px as f32).clamp(-1.0, 1.0);
    Ok((o, Action::new(steering, action.throttle)))
}

pub fn augment_sample(sample: &DemoSample, shift_px: i32, cfg: &AugmentConfig) -> Result<DemoSample> {
    let (observation, action) = augment_observation(&sample.observation, sample.action, shift_px, cfg)?;
    let mut out = sample.clone();
    out.observation = observation;
    out.action = action;
    Ok(out)
}
