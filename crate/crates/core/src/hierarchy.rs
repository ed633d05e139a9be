//! Multi-scale peeling: runs the guider and the peeler scale after scale and
//! keeps every layer of the resulting disassembly.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{HipeError, Result};
use crate::guider::{
    init_reference, modulated_reference, self_guidance, step_reference, threshold_guidance,
    GuidanceMap, ScaleSchedule,
};
use crate::image::{gradient, save_image, Image};
use crate::peeler::{peel_once_anchored, Anchor, PeelConfig};

/// One scale of a hierarchy.
#[derive(Debug, Clone)]
pub struct ScaleLayer {
    /// 1-based scale index.
    pub t: usize,
    /// Structure layer `I^t`.
    pub structure: Image,
    /// Detail component `C_t = I^{t-1} - I^t`.
    pub detail: Image,
    pub guidance: GuidanceMap,
    pub stats: ScaleStats,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScaleStats {
    pub iterations: usize,
    pub residual: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PeelHierarchy {
    pub input: Image,
    pub scales: Vec<ScaleLayer>,
    /// `None` for externally guided hierarchies.
    pub schedule: Option<ScaleSchedule>,
    pub config: PeelConfig,
}

impl PeelHierarchy {
    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    /// `I^t`, with `I^0` the input.
    pub fn structure(&self, t: usize) -> &Image {
        if t == 0 {
            &self.input
        } else {
            &self.scales[t - 1].structure
        }
    }

    /// Final structure remainder `I^T`.
    pub fn remainder(&self) -> &Image {
        self.structure(self.scales.len())
    }

    /// Cumulative peeled detail `P^t = I^0 - I^t`.
    pub fn peeled(&self, t: usize) -> Result<Image> {
        self.input.sub(self.structure(t))
    }

    /// `I^T + Σ_t C_t`, summed in scale order.
    pub fn reconstruct(&self) -> Result<Image> {
        let mut acc = self.remainder().clone();
        for layer in self.scales.iter().rev() {
            acc = acc.add(&layer.detail)?;
        }
        Ok(acc)
    }

    /// `‖input - (I^T + Σ C_t)‖∞`.
    pub fn reconstruction_error(&self) -> Result<f64> {
        self.input.max_abs_diff(&self.reconstruct()?)
    }

    /// Largest number of edge pixels that appear in `G^{t+1}` but not in `G^t`.
    pub fn nesting_violations(&self) -> usize {
        self.scales
            .windows(2)
            .map(|w| w[1].guidance.edges_not_in(&w[0].guidance))
            .max()
            .unwrap_or(0)
    }

    /// Per scale, the fraction of pixels where `|∇I^t| > tau` although
    /// `|∇I^{t-1}| <= tau / 2`.
    pub fn leakage(&self, tau: f64) -> Vec<f64> {
        let mut prev = gradient(&self.input).magnitude;
        self.scales
            .iter()
            .map(|layer| {
                let cur = gradient(&layer.structure).magnitude;
                let leaked = cur
                    .iter()
                    .zip(&prev)
                    .filter(|(&c, &p)| c > tau && p <= tau / 2.0)
                    .count();
                let frac = leaked as f64 / cur.len() as f64;
                prev = cur;
                frac
            })
            .collect()
    }

    /// Write `<stem>_I<t>.png`, `<stem>_C<t>.png` and `<stem>_G<t>.png` for
    /// every scale. Detail layers are stored as `(C + 1) / 2`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(3 * self.scales.len());
        for layer in &self.scales {
            let t = layer.t;
            let i_path = dir.join(format!("{stem}_I{t}.png"));
            save_image(&layer.structure, &i_path)?;
            let c_path = dir.join(format!("{stem}_C{t}.png"));
            save_image(&layer.detail.map(|v| (v + 1.0) / 2.0)?, &c_path)?;
            let g_path = dir.join(format!("{stem}_G{t}.png"));
            save_image(&layer.guidance.to_image(), &g_path)?;
            written.extend([i_path, c_path, g_path]);
        }
        Ok(written)
    }
}

/// Full unsupervised peel over `schedule.scales` scales.
///
/// Without `ggr`, the input's own thresholded gradients act as the edge
/// annotation.
pub fn peel(
    input: &Image,
    schedule: &ScaleSchedule,
    cfg: &PeelConfig,
    ggr: Option<&GuidanceMap>,
) -> Result<PeelHierarchy> {
    schedule.validate()?;
    cfg.validate()?;
    let own;
    let ggr = match ggr {
        Some(g) => {
            g.check_dims(input.width(), input.height(), "G^gr")?;
            g
        }
        None => {
            own = self_guidance(input, cfg.beta_g)?;
            &own
        }
    };
    let input_grad = gradient(input);
    let mut reference = init_reference(&input_grad, schedule.alpha(1), ggr)?;
    let mut scales: Vec<ScaleLayer> = Vec::with_capacity(schedule.scales);
    for t in 1..=schedule.scales {
        if t > 1 {
            reference = step_reference(&reference, schedule.alpha(t), ggr)?;
        }
        let guidance = threshold_guidance(&reference, cfg.beta_g)?;
        let prev = scales.last().map_or(input, |l| &l.structure);
        let anchor = match cfg.anchor {
            Anchor::Previous => prev,
            Anchor::First => input,
        };
        let p = peel_once_anchored(prev, anchor, &guidance, &reference, cfg)
            .map_err(|e| e.at_scale(t))?;
        scales.push(ScaleLayer {
            t,
            structure: p.smoothed,
            detail: p.detail,
            guidance,
            stats: ScaleStats {
                iterations: p.iterations,
                residual: p.residual,
                seconds: p.seconds,
            },
        });
    }
    Ok(PeelHierarchy {
        input: input.clone(),
        scales,
        schedule: Some(*schedule),
        config: cfg.clone(),
    })
}

/// One peel per supplied guide, chained in order. Each guide is used as the
/// guidance map directly and modulates the current input's gradients to form
/// the reference.
pub fn peel_with_external_guidance(
    input: &Image,
    guides: &[GuidanceMap],
    cfg: &PeelConfig,
) -> Result<PeelHierarchy> {
    if guides.is_empty() {
        return Err(HipeError::EmptySequence(
            "at least one guidance map is required".into(),
        ));
    }
    cfg.validate()?;
    for g in guides {
        g.check_dims(input.width(), input.height(), "external guide")?;
    }
    let mut scales: Vec<ScaleLayer> = Vec::with_capacity(guides.len());
    for (k, guide) in guides.iter().enumerate() {
        let t = k + 1;
        let prev = scales.last().map_or(input, |l| &l.structure);
        let anchor = match cfg.anchor {
            Anchor::Previous => prev,
            Anchor::First => input,
        };
        let reference = modulated_reference(&gradient(prev), guide)?;
        let p =
            peel_once_anchored(prev, anchor, guide, &reference, cfg).map_err(|e| e.at_scale(t))?;
        scales.push(ScaleLayer {
            t,
            structure: p.smoothed,
            detail: p.detail,
            guidance: guide.clone(),
            stats: ScaleStats {
                iterations: p.iterations,
                residual: p.residual,
                seconds: p.seconds,
            },
        });
    }
    Ok(PeelHierarchy {
        input: input.clone(),
        scales,
        schedule: None,
        config: cfg.clone(),
    })
}
