use std::f64::consts::FRAC_PI_2;

use rand::Rng;

use super::TrainError;
use crate::nn::GradientVector;

/// Which gradient keeps its direction when the two conflict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primary {
    Original,
    Masked,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibrated {
    pub combined: GradientVector,
    /// Angle between the two gradients, in `[0, pi]`.
    pub theta: f64,
    pub applied: bool,
    pub primary: Option<Primary>,
    /// The secondary gradient after projection, when `applied`.
    pub projected: Option<GradientVector>,
}

/// Sums the two gradients; if they conflict (negative inner product) a
/// randomly chosen primary is kept and the other is projected onto the
/// primary's orthogonal complement first.
pub fn calibrate_gradients<R: Rng + ?Sized>(
    g_ori: &GradientVector,
    g_mask: &GradientVector,
    rng: &mut R,
) -> Result<Calibrated, TrainError> {
    calibrate_with(g_ori, g_mask, || {
        if rng.random::<bool>() {
            Primary::Original
        } else {
            Primary::Masked
        }
    })
}

/// [`calibrate_gradients`] with a fixed primary.
pub fn calibrate_with_primary(
    g_ori: &GradientVector,
    g_mask: &GradientVector,
    primary: Primary,
) -> Result<Calibrated, TrainError> {
    calibrate_with(g_ori, g_mask, || primary)
}

fn calibrate_with(
    g_ori: &GradientVector,
    g_mask: &GradientVector,
    choose: impl FnOnce() -> Primary,
) -> Result<Calibrated, TrainError> {
    if g_ori.len() != g_mask.len() {
        return Err(TrainError::LengthMismatch {
            expected: g_ori.len(),
            found: g_mask.len(),
        });
    }
    let sum = |a: &GradientVector, b: &[f64]| {
        let mut out = a.clone();
        out.values_mut().iter_mut().zip(b).for_each(|(x, y)| *x += y);
        out
    };
    let (n1, n2) = (g_ori.norm(), g_mask.norm());
    if n1 == 0.0 || n2 == 0.0 {
        return Ok(Calibrated {
            combined: sum(g_ori, g_mask.values()),
            theta: FRAC_PI_2,
            applied: false,
            primary: None,
            projected: None,
        });
    }
    let dot = g_ori.dot(g_mask);
    let theta = (dot / (n1 * n2)).clamp(-1.0, 1.0).acos();
    if dot >= 0.0 {
        return Ok(Calibrated {
            combined: sum(g_ori, g_mask.values()),
            theta,
            applied: false,
            primary: None,
            projected: None,
        });
    }
    let primary = choose();
    let (p, s, pn) = match primary {
        Primary::Original => (g_ori, g_mask, n1),
        Primary::Masked => (g_mask, g_ori, n2),
    };
    let scale = dot / (pn * pn);
    let mut projected = s.clone();
    projected
        .values_mut()
        .iter_mut()
        .zip(p.values())
        .for_each(|(sv, pv)| *sv -= scale * pv);
    Ok(Calibrated {
        combined: sum(p, projected.values()),
        theta,
        applied: true,
        primary: Some(primary),
        projected: Some(projected),
    })
}
