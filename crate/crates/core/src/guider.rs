//! Edge guidance: the closed-form guidance threshold, the reference-gradient
//! recurrence across scales, and multi-scale edge confidence.

use crate::error::{HipeError, Result};
use crate::image::{gradient, GradientField, Image};

/// Per-pixel edge indicator in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl GuidanceMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(HipeError::ShapeMismatch(format!(
                "{width}x{height} guidance map needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(HipeError::InvalidParameter(format!(
                "guidance value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// A grayscale image used as a soft guidance map. RGB images are reduced
    /// by channel mean.
    pub fn from_image(img: &Image) -> Result<Self> {
        let c = img.channels();
        let values = img
            .data()
            .chunks_exact(c)
            .map(|px| (px.iter().sum::<f64>() / c as f64).clamp(0.0, 1.0))
            .collect();
        Self::new(img.width(), img.height(), values)
    }

    pub fn to_image(&self) -> Image {
        Image::new(self.width, self.height, 1, self.values.clone())
            .expect("guidance values are valid samples")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_edge(&self, i: usize) -> bool {
        self.values[i] > 0.5
    }

    pub fn edge_count(&self) -> usize {
        (0..self.values.len()).filter(|&i| self.is_edge(i)).count()
    }

    /// `{0, 1}` version of the map, thresholded at 0.5.
    pub fn binarized(&self) -> GuidanceMap {
        GuidanceMap {
            values: self
                .values
                .iter()
                .map(|&v| if v > 0.5 { 1.0 } else { 0.0 })
                .collect(),
            ..self.clone()
        }
    }

    /// Number of edge pixels of `self` that are not edges of `other`.
    pub fn edges_not_in(&self, other: &GuidanceMap) -> usize {
        (0..self.values.len())
            .filter(|&i| self.is_edge(i) && !other.is_edge(i))
            .count()
    }

    pub(crate) fn check_dims(&self, width: usize, height: usize, what: &str) -> Result<()> {
        if self.width == width && self.height == height {
            Ok(())
        } else {
            Err(HipeError::ShapeMismatch(format!(
                "{what}: guidance is {}x{}, expected {width}x{height}",
                self.width, self.height
            )))
        }
    }
}

/// Geometric peeling-strength schedule `alpha_t = min(alpha1 * eta^(t-1), 1)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScaleSchedule {
    pub alpha1: f64,
    pub eta: f64,
    pub scales: usize,
}

impl Default for ScaleSchedule {
    fn default() -> Self {
        Self {
            alpha1: 0.3,
            eta: 1.5,
            scales: 4,
        }
    }
}

impl ScaleSchedule {
    pub fn new(alpha1: f64, eta: f64, scales: usize) -> Result<Self> {
        let s = Self {
            alpha1,
            eta,
            scales,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 > 0.0 && self.alpha1 <= 1.0) {
            return Err(HipeError::InvalidParameter(format!(
                "alpha1 must lie in (0, 1], got {}",
                self.alpha1
            )));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(HipeError::InvalidParameter(format!(
                "eta must be finite and >= 0, got {}",
                self.eta
            )));
        }
        if self.scales == 0 {
            return Err(HipeError::InvalidParameter("T must be at least 1".into()));
        }
        Ok(())
    }

    /// Strength at 1-based scale `t`.
    pub fn alpha(&self, t: usize) -> f64 {
        debug_assert!(t >= 1);
        (self.alpha1 * self.eta.powi(t as i32 - 1)).min(1.0)
    }
}

/// Synthetic target gradients for one scale.
///
/// `magnitude` carries the recurrence; `dx`/`dy` are the input's directional
/// gradients rescaled per pixel so that their channel-max magnitude tracks it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceGradient {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub magnitude: Vec<f64>,
}

impl ReferenceGradient {
    /// Reference with `magnitude = clamp(mag, 0, 1)` and unscaled directions
    /// wherever the input magnitude is at most one.
    pub fn from_gradient(grad: &GradientField) -> ReferenceGradient {
        let magnitude: Vec<f64> = grad.magnitude.iter().map(|m| m.clamp(0.0, 1.0)).collect();
        rescaled(grad, &grad.magnitude, magnitude)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    fn check_guidance(&self, g: &GuidanceMap) -> Result<()> {
        g.check_dims(self.width, self.height, "reference gradient")
    }
}

/// Rescale the directional components of `grad` from `old_mag` to `new_mag`.
fn rescaled(grad: &GradientField, old_mag: &[f64], new_mag: Vec<f64>) -> ReferenceGradient {
    rescale_parts(
        grad.width,
        grad.height,
        grad.channels,
        &grad.dx,
        &grad.dy,
        old_mag,
        new_mag,
    )
}

fn rescale_parts(
    width: usize,
    height: usize,
    channels: usize,
    dx: &[f64],
    dy: &[f64],
    old_mag: &[f64],
    new_mag: Vec<f64>,
) -> ReferenceGradient {
    let mut out_dx = vec![0.0; dx.len()];
    let mut out_dy = vec![0.0; dy.len()];
    for (p, (&old, &new)) in old_mag.iter().zip(&new_mag).enumerate() {
        if old > 0.0 {
            let scale = new / old;
            for c in 0..channels {
                let i = p * channels + c;
                out_dx[i] = dx[i] * scale;
                out_dy[i] = dy[i] * scale;
            }
        }
    }
    ReferenceGradient {
        width,
        height,
        channels,
        dx: out_dx,
        dy: out_dy,
        magnitude: new_mag,
    }
}

/// Pointwise minimizer of the guider-consistency loss
/// `G (1 - m) + beta_g (1 - G) m` over binary `G`.
///
/// A pixel is an edge iff `1 - m < beta_g * m`, i.e. `m > 1 / (1 + beta_g)`;
/// ties resolve to zero.
pub fn threshold_guidance(reference: &ReferenceGradient, beta_g: f64) -> Result<GuidanceMap> {
    check_beta(beta_g)?;
    let values = reference
        .magnitude
        .iter()
        .map(|&m| if 1.0 - m < beta_g * m { 1.0 } else { 0.0 })
        .collect();
    GuidanceMap::new(reference.width, reference.height, values)
}

fn check_beta(beta_g: f64) -> Result<()> {
    if beta_g > 0.0 && beta_g.is_finite() {
        Ok(())
    } else {
        Err(HipeError::InvalidParameter(format!(
            "beta_g must be > 0, got {beta_g}"
        )))
    }
}

/// Value of the guider-consistency loss of `g` against reference magnitudes.
pub fn guidance_objective(g: &GuidanceMap, magnitude: &[f64], beta_g: f64) -> f64 {
    g.values
        .iter()
        .zip(magnitude)
        .map(|(&gv, &m)| gv * (1.0 - m) + beta_g * (1.0 - gv) * m)
        .sum()
}

/// Binary guidance of an image by its own gradients (the annotation-free
/// stand-in for a hand-drawn edge map).
pub fn self_guidance(img: &Image, beta_g: f64) -> Result<GuidanceMap> {
    threshold_guidance(&ReferenceGradient::from_gradient(&gradient(img)), beta_g)
}

/// First-scale reference: `clamp((1 - alpha1) * mag + ggr, 0, 1)`.
pub fn init_reference(
    input_grad: &GradientField,
    alpha1: f64,
    ggr: &GuidanceMap,
) -> Result<ReferenceGradient> {
    ggr.check_dims(input_grad.width, input_grad.height, "init_reference")?;
    check_alpha(alpha1)?;
    let magnitude = input_grad
        .magnitude
        .iter()
        .zip(&ggr.values)
        .map(|(&m, &g)| ((1.0 - alpha1) * m + g).clamp(0.0, 1.0))
        .collect();
    Ok(rescaled(input_grad, &input_grad.magnitude, magnitude))
}

/// Later-scale reference: `(1 - alpha_t) * mag + alpha_t * mag * ggr`.
pub fn step_reference(
    reference: &ReferenceGradient,
    alpha_t: f64,
    ggr: &GuidanceMap,
) -> Result<ReferenceGradient> {
    reference.check_guidance(ggr)?;
    check_alpha(alpha_t)?;
    let magnitude = reference
        .magnitude
        .iter()
        .zip(&ggr.values)
        // m (1 - a (1 - g)) equals (1 - a) m + a m g and is exact for a = 0 or g = 1
        .map(|(&m, &g)| m * (1.0 - alpha_t * (1.0 - g)))
        .collect();
    Ok(rescale_parts(
        reference.width,
        reference.height,
        reference.channels,
        &reference.dx,
        &reference.dy,
        &reference.magnitude,
        magnitude,
    ))
}

/// Reference for an externally supplied guide: input gradients modulated by
/// the guide value per pixel.
pub fn modulated_reference(grad: &GradientField, guide: &GuidanceMap) -> Result<ReferenceGradient> {
    guide.check_dims(grad.width, grad.height, "modulated_reference")?;
    let magnitude = grad
        .magnitude
        .iter()
        .zip(&guide.values)
        .map(|(&m, &g)| (m * g).clamp(0.0, 1.0))
        .collect();
    Ok(rescaled(grad, &grad.magnitude, magnitude))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(HipeError::InvalidParameter(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )))
    }
}

/// Quantized gradient orientation: 0°, 45°, 90° or 135°, as the offset of
/// one of the two neighbors compared during suppression.
fn direction_offset(gx: f64, gy: f64) -> (isize, isize) {
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if !(22.5..157.5).contains(&angle) {
        (1, 0)
    } else if angle < 67.5 {
        (1, 1)
    } else if angle < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}

/// Thin a guidance map along the gradient direction of `grad`.
///
/// Pixel strength is `map * magnitude`; a pixel keeps its map value only if
/// its strength is strictly greater than both in-bounds neighbors along the
/// quantized gradient direction.
pub fn non_maximum_suppression(map: &GuidanceMap, grad: &GradientField) -> Result<GuidanceMap> {
    map.check_dims(grad.width, grad.height, "non_maximum_suppression")?;
    let (w, h, ch) = (grad.width, grad.height, grad.channels);
    let strength: Vec<f64> = map
        .values
        .iter()
        .zip(&grad.magnitude)
        .map(|(g, m)| g * m)
        .collect();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let s = strength[p];
            if s <= 0.0 {
                continue;
            }
            // direction of the channel carrying the largest response
            let (mut gx, mut gy, mut best) = (0.0, 0.0, -1.0);
            for c in 0..ch {
                let (a, b) = (grad.dx[p * ch + c], grad.dy[p * ch + c]);
                let m = a * a + b * b;
                if m > best {
                    best = m;
                    gx = a;
                    gy = b;
                }
            }
            let (ox, oy) = direction_offset(gx, gy);
            let survives = [(ox, oy), (-ox, -oy)].iter().all(|&(dx, dy)| {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    return true;
                }
                s > strength[ny as usize * w + nx as usize]
            });
            if survives {
                out[p] = map.values[p];
            }
        }
    }
    GuidanceMap::new(w, h, out)
}

/// Average of the per-scale maps after non-maximum suppression.
pub fn edge_confidence(maps: &[GuidanceMap], grads: &[GradientField]) -> Result<GuidanceMap> {
    let first = maps
        .first()
        .ok_or_else(|| HipeError::EmptySequence("edge_confidence needs at least one map".into()))?;
    if maps.len() != grads.len() {
        return Err(HipeError::ShapeMismatch(format!(
            "{} maps but {} gradient fields",
            maps.len(),
            grads.len()
        )));
    }
    let mut acc = vec![0.0; first.values.len()];
    for (map, grad) in maps.iter().zip(grads) {
        map.check_dims(first.width, first.height, "edge_confidence")?;
        let thin = non_maximum_suppression(map, grad)?;
        for (a, v) in acc.iter_mut().zip(&thin.values) {
            *a += v;
        }
    }
    let n = maps.len() as f64;
    GuidanceMap::new(
        first.width,
        first.height,
        acc.into_iter().map(|v| (v / n).clamp(0.0, 1.0)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_with(width: usize, height: usize, mags: Vec<f64>) -> ReferenceGradient {
        ReferenceGradient {
            width,
            height,
            channels: 1,
            dx: mags.clone(),
            dy: vec![0.0; mags.len()],
            magnitude: mags,
        }
    }

    #[test]
    fn threshold_examples() {
        let zero = threshold_guidance(&reference_with(3, 1, vec![0.0; 3]), 1.5).unwrap();
        assert_eq!(zero.values(), &[0.0, 0.0, 0.0]);
        let ones = threshold_guidance(&reference_with(3, 1, vec![1.0; 3]), 1.5).unwrap();
        assert_eq!(ones.values(), &[1.0, 1.0, 1.0]);
        // threshold 1 / (1 + 1.5) = 0.4
        let g = threshold_guidance(&reference_with(2, 1, vec![0.5, 0.3]), 1.5).unwrap();
        assert_eq!(g.values(), &[1.0, 0.0]);
    }

    #[test]
    fn threshold_tie_resolves_to_zero() {
        // beta = 1 gives threshold 0.5 exactly
        let g = threshold_guidance(&reference_with(1, 1, vec![0.5]), 1.0).unwrap();
        assert_eq!(g.values(), &[0.0]);
    }

    #[test]
    fn threshold_rejects_nonpositive_beta() {
        let r = reference_with(1, 1, vec![0.5]);
        assert!(matches!(
            threshold_guidance(&r, 0.0),
            Err(HipeError::InvalidParameter(_))
        ));
        assert!(threshold_guidance(&r, -1.0).is_err());
    }

    fn grad_1d(mags: &[f64]) -> GradientField {
        GradientField {
            width: mags.len(),
            height: 1,
            channels: 1,
            dx: mags.to_vec(),
            dy: vec![0.0; mags.len()],
            magnitude: mags.to_vec(),
        }
    }

    #[test]
    fn init_reference_examples() {
        let grad = grad_1d(&[0.2, -0.5, 0.0, 0.9]);
        let mags = vec![0.2, 0.5, 0.0, 0.9];
        let grad = GradientField {
            magnitude: mags,
            ..grad
        };
        let none = GuidanceMap::filled(4, 1, 0.0).unwrap();
        let id = init_reference(&grad, 0.0, &none).unwrap();
        assert_eq!(id.dx, grad.dx);
        assert_eq!(id.magnitude, grad.magnitude);

        let shrunk = init_reference(&grad, 1.0, &none).unwrap();
        assert!(shrunk.magnitude.iter().all(|&m| m == 0.0));

        let one = GuidanceMap::filled(1, 1, 1.0).unwrap();
        let r = init_reference(&grad_1d(&[0.5]), 0.2, &one).unwrap();
        assert_eq!(r.magnitude, vec![1.0]);
        assert!((r.dx[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn init_reference_preserves_sign() {
        let grad = GradientField {
            magnitude: vec![0.5],
            ..grad_1d(&[-0.5])
        };
        let r = init_reference(&grad, 0.5, &GuidanceMap::filled(1, 1, 0.0).unwrap()).unwrap();
        assert!((r.dx[0] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn init_reference_shape_mismatch() {
        let grad = grad_1d(&[0.1, 0.2]);
        let g = GuidanceMap::filled(3, 1, 0.0).unwrap();
        assert!(matches!(
            init_reference(&grad, 0.3, &g),
            Err(HipeError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn step_reference_examples() {
        let r = reference_with(3, 1, vec![0.2, 0.6, 0.9]);
        let zeros = GuidanceMap::filled(3, 1, 0.0).unwrap();
        let ones = GuidanceMap::filled(3, 1, 1.0).unwrap();
        assert_eq!(step_reference(&r, 0.0, &zeros).unwrap(), r);
        assert_eq!(step_reference(&r, 0.7, &ones).unwrap(), r);
        let half = step_reference(&r, 0.5, &zeros).unwrap();
        for (a, b) in half.magnitude.iter().zip(&r.magnitude) {
            assert!((a - b / 2.0).abs() < 1e-15);
        }
        for (a, b) in half.dx.iter().zip(&r.dx) {
            assert!((a - b / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn schedule_clamps_at_one() {
        let s = ScaleSchedule::new(0.3, 1.5, 6).unwrap();
        assert!((s.alpha(1) - 0.3).abs() < 1e-15);
        assert!((s.alpha(2) - 0.45).abs() < 1e-15);
        assert_eq!(s.alpha(5), 1.0);
        assert!(ScaleSchedule::new(0.0, 1.5, 4).is_err());
        assert!(ScaleSchedule::new(0.3, -1.0, 4).is_err());
        assert!(ScaleSchedule::new(0.3, 1.5, 0).is_err());
    }

    #[test]
    fn confidence_of_zero_map_is_zero() {
        let img = Image::new(4, 1, 1, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let grad = gradient(&img);
        let zero = GuidanceMap::filled(4, 1, 0.0).unwrap();
        let c = edge_confidence(&[zero], &[grad]).unwrap();
        assert!(c.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn confidence_requires_maps() {
        assert!(matches!(
            edge_confidence(&[], &[]),
            Err(HipeError::EmptySequence(_))
        ));
    }

    #[test]
    fn confidence_of_identical_maps_is_their_nms() {
        let img = Image::new(
            5,
            5,
            1,
            (0..25)
                .map(|i| if i % 5 >= 2 { 0.9 } else { 0.1 })
                .collect(),
        )
        .unwrap();
        let grad = gradient(&img);
        let map = GuidanceMap::filled(5, 5, 1.0).unwrap();
        let nms = non_maximum_suppression(&map, &grad).unwrap();
        let maps = vec![map; 24];
        let grads = vec![grad; 24];
        assert_eq!(edge_confidence(&maps, &grads).unwrap(), nms);
        // the step between columns 1 and 2 survives as a one-pixel line
        for y in 0..5 {
            for x in 0..5 {
                let expect = if x == 1 { 1.0 } else { 0.0 };
                assert_eq!(nms.values()[y * 5 + x], expect, "({x},{y})");
            }
        }
    }

    #[test]
    fn confidence_half_where_one_scale_fires() {
        // Two-scale hand enumeration: the step survives NMS at column 1 in
        // both scales but only the first scale marks it as an edge.
        let img = Image::new(4, 2, 1, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        let grad = gradient(&img);
        let on = GuidanceMap::filled(4, 2, 1.0).unwrap();
        let off = GuidanceMap::filled(4, 2, 0.0).unwrap();
        let c = edge_confidence(&[on, off], &[grad.clone(), grad]).unwrap();
        assert_eq!(c.values(), &[0.0, 0.5, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn nms_keeps_diagonal_ridge() {
        // gradient pointing at 45 degrees
        let img = Image::new(
            4,
            4,
            1,
            (0..16)
                .map(|i| if (i % 4) + (i / 4) >= 3 { 1.0 } else { 0.0 })
                .collect(),
        )
        .unwrap();
        let grad = gradient(&img);
        assert_eq!(direction_offset(1.0, 1.0), (1, 1));
        assert_eq!(direction_offset(-1.0, 1.0), (-1, 1));
        assert_eq!(direction_offset(0.0, -1.0), (0, 1));
        let nms = non_maximum_suppression(&GuidanceMap::filled(4, 4, 1.0).unwrap(), &grad).unwrap();
        assert!(nms.edge_count() > 0);
        assert!(nms.edge_count() < 16);
    }

    fn enumerate_min(mags: &[f64], beta: f64) -> f64 {
        let n = mags.len();
        (0u32..(1 << n))
            .map(|bits| {
                (0..n)
                    .map(|i| {
                        let g = f64::from((bits >> i) & 1);
                        g * (1.0 - mags[i]) + beta * (1.0 - g) * mags[i]
                    })
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
    }

    proptest! {
        #[test]
        fn threshold_is_exhaustive_minimizer(
            mags in proptest::collection::vec(0.0f64..=1.0, 1..=9),
            beta in 0.1f64..5.0,
        ) {
            let n = mags.len();
            let g = threshold_guidance(&reference_with(n, 1, mags.clone()), beta).unwrap();
            let best = enumerate_min(&mags, beta);
            prop_assert!(guidance_objective(&g, &mags, beta) <= best + 1e-12);
        }

        #[test]
        fn nested_edges_under_monotone_schedule(
            mags in proptest::collection::vec(0.0f64..1.4, 16),
            ggr_bits in proptest::collection::vec(proptest::bool::ANY, 16),
            alpha1 in 0.01f64..1.0,
            eta in 1.0f64..3.0,
        ) {
            let grad = GradientField { magnitude: mags.clone(), ..grad_1d(&mags) };
            let ggr = GuidanceMap::new(16, 1, ggr_bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).unwrap();
            let sched = ScaleSchedule::new(alpha1, eta, 5).unwrap();
            let mut r = init_reference(&grad, sched.alpha(1), &ggr).unwrap();
            let mut prev = threshold_guidance(&r, 1.5).unwrap();
            for t in 2..=5 {
                let next = step_reference(&r, sched.alpha(t), &ggr).unwrap();
                for (i, (&a, &b)) in next.magnitude.iter().zip(&r.magnitude).enumerate() {
                    if ggr.values()[i] == 0.0 { prop_assert!(a <= b); }
                }
                r = next;
                let g = threshold_guidance(&r, 1.5).unwrap();
                prop_assert_eq!(g.edges_not_in(&prev), 0);
                prev = g;
            }
        }
    }
}
