//! Downstream uses of a peel hierarchy: abstraction, Retinex-style low-light
//! enhancement, and guidance maps taken from another modality.

use serde::{Deserialize, Serialize};

use crate::error::{HipeError, Result};
use crate::guider::{self_guidance, GuidanceMap};
use crate::hierarchy::PeelHierarchy;
use crate::image::Image;

/// Log-domain guard, one 8-bit quantization step.
pub const LOG_GUARD: f64 = 1.0 / 255.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractionConfig {
    /// 1-based scale whose structure layer is abstracted.
    pub scale_index: usize,
    pub quant_levels: usize,
    pub edge_overlay: bool,
    pub edge_color: [f64; 3],
}

impl Default for AbstractionConfig {
    fn default() -> Self {
        Self {
            scale_index: 1,
            quant_levels: 8,
            edge_overlay: false,
            edge_color: [0.0, 0.0, 0.0],
        }
    }
}

/// Uniform quantization to bin centers, `levels` bins per channel.
pub fn quantize(img: &Image, levels: usize) -> Result<Image> {
    if levels < 2 {
        return Err(HipeError::InvalidParameter(format!(
            "quant_levels must be at least 2, got {levels}"
        )));
    }
    let l = levels as f64;
    img.map(|v| {
        let k = (v.clamp(0.0, 1.0) * l).floor().min(l - 1.0);
        (k + 0.5) / l
    })
}

/// Quantize `img` and optionally paint the edge pixels of `edges`.
pub fn abstract_image(
    img: &Image,
    edges: Option<&GuidanceMap>,
    cfg: &AbstractionConfig,
) -> Result<Image> {
    let q = quantize(img, cfg.quant_levels)?;
    let Some(edges) = edges.filter(|_| cfg.edge_overlay) else {
        return Ok(q);
    };
    edges.check_dims(img.width(), img.height(), "edge overlay")?;
    let c = img.channels();
    let gray = cfg.edge_color.iter().sum::<f64>() / 3.0;
    let mut data = q.into_data();
    for (p, px) in data.chunks_exact_mut(c).enumerate() {
        if edges.is_edge(p) {
            if c == 1 {
                px[0] = gray;
            } else {
                px.copy_from_slice(&cfg.edge_color);
            }
        }
    }
    Image::new(img.width(), img.height(), c, data)
}

/// Abstraction of the structure layer at `cfg.scale_index`, overlaid with
/// that scale's guidance map when requested.
pub fn abstract_hierarchy(h: &PeelHierarchy, cfg: &AbstractionConfig) -> Result<Image> {
    if cfg.scale_index == 0 || cfg.scale_index > h.len() {
        return Err(HipeError::InvalidParameter(format!(
            "scale_index {} outside 1..={}",
            cfg.scale_index,
            h.len()
        )));
    }
    let layer = &h.scales[cfg.scale_index - 1];
    abstract_image(&layer.structure, Some(&layer.guidance), cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetinexConfig {
    /// 1-based scales used as illumination estimates; empty means all.
    pub scale_indices: Vec<usize>,
    /// Per-scale weights; empty means uniform.
    pub weights: Vec<f64>,
    pub gain: f64,
    pub offset: f64,
}

impl Default for RetinexConfig {
    fn default() -> Self {
        Self {
            scale_indices: Vec::new(),
            weights: Vec::new(),
            gain: 1.0,
            offset: 0.0,
        }
    }
}

impl RetinexConfig {
    fn resolve(&self, scales: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        let indices: Vec<usize> = if self.scale_indices.is_empty() {
            (1..=scales).collect()
        } else {
            self.scale_indices.clone()
        };
        if let Some(&bad) = indices.iter().find(|&&t| t == 0 || t > scales) {
            return Err(HipeError::InvalidParameter(format!(
                "retinex scale {bad} outside 1..={scales}"
            )));
        }
        let weights = if self.weights.is_empty() {
            vec![1.0 / indices.len() as f64; indices.len()]
        } else {
            self.weights.clone()
        };
        if weights.len() != indices.len() {
            return Err(HipeError::InvalidParameter(format!(
                "{} retinex weights for {} scales",
                weights.len(),
                indices.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(HipeError::InvalidParameter(
                "retinex weights must be nonnegative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(HipeError::InvalidParameter(format!(
                "retinex weights sum to {sum}, expected 1"
            )));
        }
        Ok((indices, weights))
    }
}

#[derive(Debug, Clone)]
pub struct RetinexOutput {
    /// Enhanced image, remapped and clamped.
    pub enhanced: Image,
    /// Unclamped log-domain reflectance.
    pub reflectance: Image,
    /// Weighted geometric mean of the illumination layers.
    pub illumination: Image,
}

/// Multi-scale Retinex with the hierarchy's structure layers standing in for
/// Gaussian-blurred illumination estimates.
pub fn retinex_enhance(
    input: &Image,
    h: &PeelHierarchy,
    cfg: &RetinexConfig,
) -> Result<RetinexOutput> {
    input.check_same_shape(&h.input, "retinex input")?;
    let (indices, weights) = cfg.resolve(h.len())?;
    let n = input.data().len();
    let mut reflectance = vec![0.0; n];
    let mut log_illum = vec![0.0; n];
    for (&t, &wk) in indices.iter().zip(&weights) {
        let layer = h.structure(t).data();
        for i in 0..n {
            let li = (layer[i] + LOG_GUARD).ln();
            reflectance[i] += wk * ((input.data()[i] + LOG_GUARD).ln() - li);
            log_illum[i] += wk * li;
        }
    }
    let (w, hh, c) = (input.width(), input.height(), input.channels());
    let reflectance = Image::new(w, hh, c, reflectance)?;
    let enhanced = reflectance.map(|r| (cfg.gain * r + cfg.offset).clamp(0.0, 1.0))?;
    let illumination = Image::new(
        w,
        hh,
        c,
        log_illum
            .into_iter()
            .map(|v| (v.exp() - LOG_GUARD).clamp(0.0, 1.0))
            .collect(),
    )?;
    Ok(RetinexOutput {
        enhanced,
        reflectance,
        illumination,
    })
}

/// Binary guide from another image of the same scene (for example a depth
/// map), for use with externally guided peeling.
pub fn guidance_from_reference(reference: &Image, beta_g: f64) -> Result<GuidanceMap> {
    self_guidance(reference, beta_g)
}
