//! Gradient-domain uncorrelation between structure and detail layers.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hierarchy::PeelHierarchy;
use crate::image::{gradient, Image};

/// Mean over pixels, channels and both directions of `|∇P ∘ ∇I|`.
pub fn gcc(detail: &Image, structure: &Image) -> Result<f64> {
    detail.check_same_shape(structure, "gcc")?;
    let (gp, gi) = (gradient(detail), gradient(structure));
    let sum: f64 = gp
        .dx
        .iter()
        .zip(&gi.dx)
        .chain(gp.dy.iter().zip(&gi.dy))
        .map(|(a, b)| (a * b).abs())
        .sum();
    Ok(sum / (2 * gp.dx.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleGcc {
    pub t: usize,
    pub gcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GccReport {
    pub per_scale: Vec<ScaleGcc>,
    pub mean_gcc: f64,
}

impl GccReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn last(&self) -> Option<f64> {
        self.per_scale.last().map(|s| s.gcc)
    }
}

/// `gcc(P^t, I^t)` for every scale, with `P^t = input - I^t`.
pub fn hierarchy_report(h: &PeelHierarchy) -> GccReport {
    let per_scale: Vec<ScaleGcc> = h
        .scales
        .iter()
        .map(|layer| {
            let peeled = h
                .input
                .sub(&layer.structure)
                .expect("hierarchy layers share the input shape");
            ScaleGcc {
                t: layer.t,
                gcc: gcc(&peeled, &layer.structure).expect("same shape"),
            }
        })
        .collect();
    let mean_gcc = if per_scale.is_empty() {
        0.0
    } else {
        per_scale.iter().map(|s| s.gcc).sum::<f64>() / per_scale.len() as f64
    };
    GccReport {
        per_scale,
        mean_gcc,
    }
}

/// Anisotropic total variation `Σ |dx| + |dy|`.
pub fn total_variation(img: &Image) -> f64 {
    let g = gradient(img);
    g.dx.iter().chain(&g.dy).map(|v| v.abs()).sum()
}
