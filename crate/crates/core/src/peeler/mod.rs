//! One structure/detail separation per scale.
//!
//! The peel minimizes, per channel,
//!
//! ```text
//! |x - target|² + Σ_d wpre (D_d x - g_d)² + Σ_d wcon (D_d x)²
//! wpre = λ_pre G²,   wcon = λ_con / (m G + ε)²
//! ```
//!
//! over the structure layer `x`, where `D_d` are forward differences, `G` is
//! the guidance map, `m` the reference magnitude and `g_d` the reference
//! directional gradients. The minimizer solves the normal equations
//! `(Id + Σ_d D_dᵀ W D_d) x = target + Σ_d D_dᵀ (wpre g_d)`.

mod amg;
mod operator;
mod solver;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HipeError, Result};
use crate::guider::{GuidanceMap, ReferenceGradient};
use crate::image::Image;

pub use amg::AggregationAmg;
pub use operator::{LinearOperator, StencilOperator, WeightedGraph};
pub use solver::{
    dot, pcg, AmgConjugateGradient, ConjugateGradient, Identity, Jacobi, LinearSolver,
    Preconditioner, SolveOutcome, SolveStats, SolverRegistry, DEFAULT_SOLVER,
};

/// Which image the data term of each scale anchors to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    /// The previous scale's structure layer.
    #[default]
    Previous,
    /// The original input image.
    First,
}

impl std::str::FromStr for Anchor {
    type Err = HipeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "previous" | "prev" => Ok(Anchor::Previous),
            "first" => Ok(Anchor::First),
            other => Err(HipeError::InvalidParameter(format!(
                "anchor must be `previous` or `first`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeelConfig {
    pub lambda_pre: f64,
    pub lambda_con: f64,
    pub beta_g: f64,
    pub epsilon: f64,
    pub cg_tol: f64,
    /// `None` means `10 * sqrt(pixel count)`.
    pub cg_max_iters: Option<usize>,
    pub solver: String,
    pub anchor: Anchor,
}

impl Default for PeelConfig {
    fn default() -> Self {
        Self {
            lambda_pre: 0.4,
            lambda_con: 4.0,
            beta_g: 1.5,
            epsilon: 0.005,
            cg_tol: 1e-6,
            cg_max_iters: None,
            solver: DEFAULT_SOLVER.to_string(),
            anchor: Anchor::Previous,
        }
    }
}

impl PeelConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(HipeError::InvalidParameter(format!(
                    "{name} must be finite and >= 0, got {v}"
                )))
            }
        };
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(HipeError::InvalidParameter(format!(
                    "{name} must be finite and > 0, got {v}"
                )))
            }
        };
        nonneg("lambda_pre", self.lambda_pre)?;
        nonneg("lambda_con", self.lambda_con)?;
        positive("beta_g", self.beta_g)?;
        positive("epsilon", self.epsilon)?;
        positive("cg_tol", self.cg_tol)?;
        if self.cg_max_iters == Some(0) {
            return Err(HipeError::InvalidParameter(
                "cg_max_iters must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn max_iters_for(&self, pixels: usize) -> usize {
        self.cg_max_iters
            .unwrap_or_else(|| ((10.0 * (pixels as f64).sqrt()).ceil() as usize).max(1))
    }
}

/// Assembled normal equations of one peel.
#[derive(Debug, Clone)]
pub struct PeelSystem {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// `λ_pre G²` per pixel, shared by both directions and all channels.
    pub wpre: Vec<f64>,
    /// `λ_con / (m G + ε)²` per pixel.
    pub wcon: Vec<f64>,
    /// Data-term anchor.
    pub target: Image,
    /// Reference gradients along x, channel-interleaved.
    pub gx: Vec<f64>,
    /// Reference gradients along y, channel-interleaved.
    pub gy: Vec<f64>,
}

impl PeelSystem {
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// `wpre + wcon`, the edge weights of the operator.
    pub fn edge_weights(&self) -> Vec<f64> {
        self.wpre
            .iter()
            .zip(&self.wcon)
            .map(|(a, b)| a + b)
            .collect()
    }

    pub fn operator(&self) -> StencilOperator {
        StencilOperator::new(self.width, self.height, self.edge_weights())
    }

    /// Right-hand side for channel `c`: `target + Dxᵀ(wpre gx) + Dyᵀ(wpre gy)`.
    pub fn rhs(&self, c: usize) -> Vec<f64> {
        let (w, h, ch) = (self.width, self.height, self.channels);
        let mut b = self.target.plane(c);
        let fx = |p: usize| self.wpre[p] * self.gx[p * ch + c];
        let fy = |p: usize| self.wpre[p] * self.gy[p * ch + c];
        b.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, v) in row.iter_mut().enumerate() {
                let p = y * w + x;
                // Dᵀ f at p = f(p - 1) - f(p), with f zero on the boundary row/column
                if x + 1 < w {
                    *v -= fx(p);
                }
                if x > 0 {
                    *v += fx(p - 1);
                }
                if y + 1 < h {
                    *v -= fy(p);
                }
                if y > 0 {
                    *v += fy(p - w);
                }
            }
        });
        b
    }
}

pub fn assemble(
    input: &Image,
    g: &GuidanceMap,
    reference: &ReferenceGradient,
    cfg: &PeelConfig,
) -> Result<PeelSystem> {
    assemble_anchored(input, input, g, reference, cfg)
}

/// Like [`assemble`] but with a data term anchored to `anchor` rather than
/// the scale input.
pub fn assemble_anchored(
    input: &Image,
    anchor: &Image,
    g: &GuidanceMap,
    reference: &ReferenceGradient,
    cfg: &PeelConfig,
) -> Result<PeelSystem> {
    cfg.validate()?;
    input.check_same_shape(anchor, "anchor")?;
    let (w, h, ch) = (input.width(), input.height(), input.channels());
    g.check_dims(w, h, "assemble")?;
    if reference.width != w || reference.height != h || reference.channels != ch {
        return Err(HipeError::ShapeMismatch(format!(
            "reference gradient is {}x{}x{}, input is {w}x{h}x{ch}",
            reference.width, reference.height, reference.channels
        )));
    }
    let wpre: Vec<f64> = g
        .values()
        .iter()
        .map(|&gv| cfg.lambda_pre * gv * gv)
        .collect();
    let wcon: Vec<f64> = g
        .values()
        .iter()
        .zip(&reference.magnitude)
        .map(|(&gv, &m)| {
            let d = m * gv + cfg.epsilon;
            cfg.lambda_con / (d * d)
        })
        .collect();
    if wpre
        .iter()
        .chain(&wcon)
        .any(|v| !(*v >= 0.0 && v.is_finite()))
    {
        return Err(HipeError::InvalidParameter(
            "assembled weights must be finite and nonnegative".into(),
        ));
    }
    Ok(PeelSystem {
        width: w,
        height: h,
        channels: ch,
        wpre,
        wcon,
        target: anchor.clone(),
        gx: reference.dx.clone(),
        gy: reference.dy.clone(),
    })
}

/// Peel objective evaluated term by term at `img`.
pub fn objective(img: &Image, sys: &PeelSystem) -> Result<f64> {
    img.check_same_shape(&sys.target, "objective")?;
    let (w, h, ch) = (sys.width, sys.height, sys.channels);
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            for c in 0..ch {
                let i = p * ch + c;
                let v = img.data()[i];
                let r = v - sys.target.data()[i];
                total += r * r;
                if x + 1 < w {
                    let d = img.data()[i + ch] - v;
                    let e = d - sys.gx[i];
                    total += sys.wpre[p] * e * e + sys.wcon[p] * d * d;
                }
                if y + 1 < h {
                    let d = img.data()[i + w * ch] - v;
                    let e = d - sys.gy[i];
                    total += sys.wpre[p] * e * e + sys.wcon[p] * d * d;
                }
            }
        }
    }
    Ok(total)
}

/// Unclamped per-channel solution planes together with solver statistics.
#[derive(Debug, Clone)]
pub struct RawSolution {
    pub planes: Vec<Vec<f64>>,
    pub stats: Vec<SolveStats>,
}

impl RawSolution {
    pub fn to_image(&self, width: usize, height: usize) -> Result<Image> {
        Image::from_planes(width, height, &self.planes)
    }

    pub fn iterations(&self) -> usize {
        self.stats.iter().map(|s| s.iterations).max().unwrap_or(0)
    }

    pub fn residual(&self) -> f64 {
        self.stats.iter().map(|s| s.residual).fold(0.0, f64::max)
    }
}

/// Solve each channel with the solver named in `cfg`, starting from `x0`
/// (the target when `None`). No clamping is applied.
pub fn solve_raw(
    sys: &PeelSystem,
    cfg: &PeelConfig,
    registry: &SolverRegistry,
    x0: Option<&Image>,
) -> Result<RawSolution> {
    cfg.validate()?;
    let solver = registry.get(&cfg.solver).ok_or_else(|| {
        HipeError::InvalidParameter(format!(
            "unknown solver `{}` (available: {})",
            cfg.solver,
            registry.names().join(", ")
        ))
    })?;
    let start = x0.unwrap_or(&sys.target);
    start.check_same_shape(&sys.target, "initial guess")?;
    let op = sys.operator();
    let max_iters = cfg.max_iters_for(sys.pixel_count());
    let pre = solver.preconditioner(&op);
    let results: Vec<(Vec<f64>, SolveOutcome)> = (0..sys.channels)
        .into_par_iter()
        .map(|c| {
            let b = sys.rhs(c);
            let mut x = start.plane(c);
            let outcome = solver::pcg(&op, pre.as_ref(), &b, &mut x, cfg.cg_tol, max_iters);
            (x, outcome)
        })
        .collect();
    let mut planes = Vec::with_capacity(results.len());
    let mut stats = Vec::with_capacity(results.len());
    for (x, outcome) in results {
        match outcome {
            SolveOutcome::Converged(s) => stats.push(s),
            SolveOutcome::NotConverged(s) => {
                return Err(HipeError::ConvergenceFailure {
                    residual: s.residual,
                    iterations: s.iterations,
                    scale: None,
                })
            }
        }
        planes.push(x);
    }
    Ok(RawSolution { planes, stats })
}

/// Structure layer of the system, clamped to `[0, 1]` on emission.
pub fn solve(sys: &PeelSystem, cfg: &PeelConfig) -> Result<Image> {
    let raw = solve_raw(sys, cfg, SolverRegistry::builtin(), None)?;
    Ok(raw.to_image(sys.width, sys.height)?.clamped())
}

/// Result of a single peel.
#[derive(Debug, Clone)]
pub struct Peel {
    pub smoothed: Image,
    pub detail: Image,
    pub iterations: usize,
    pub residual: f64,
    pub seconds: f64,
}

/// Split `input` into `smoothed + detail`, with `detail = input - smoothed`.
pub fn peel_once(
    input: &Image,
    g: &GuidanceMap,
    reference: &ReferenceGradient,
    cfg: &PeelConfig,
) -> Result<Peel> {
    peel_once_anchored(input, input, g, reference, cfg)
}

pub fn peel_once_anchored(
    input: &Image,
    anchor: &Image,
    g: &GuidanceMap,
    reference: &ReferenceGradient,
    cfg: &PeelConfig,
) -> Result<Peel> {
    let started = Instant::now();
    let sys = assemble_anchored(input, anchor, g, reference, cfg)?;
    let raw = solve_raw(&sys, cfg, SolverRegistry::builtin(), Some(input))?;
    let smoothed = raw.to_image(sys.width, sys.height)?.clamped();
    let detail = input.sub(&smoothed)?;
    Ok(Peel {
        smoothed,
        detail,
        iterations: raw.iterations(),
        residual: raw.residual(),
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guider::{self_guidance, ReferenceGradient};
    use crate::image::gradient;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(w, h, c, (0..w * h * c).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    fn self_guided(img: &Image, cfg: &PeelConfig) -> (GuidanceMap, ReferenceGradient) {
        let g = self_guidance(img, cfg.beta_g).unwrap();
        (g, ReferenceGradient::from_gradient(&gradient(img)))
    }

    #[test]
    fn data_term_only_is_identity() {
        let img = random_image(6, 5, 3, 1);
        let cfg = PeelConfig {
            lambda_pre: 0.0,
            lambda_con: 0.0,
            ..Default::default()
        };
        let (g, r) = self_guided(&img, &cfg);
        let sys = assemble(&img, &g, &r, &cfg).unwrap();
        assert!(sys.edge_weights().iter().all(|&v| v == 0.0));
        for c in 0..3 {
            assert_eq!(sys.rhs(c), img.plane(c));
        }
        let p = peel_once(&img, &g, &r, &cfg).unwrap();
        assert_eq!(p.smoothed, img);
        assert!(p.detail.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_edge_weights() {
        let img = random_image(4, 4, 1, 2);
        let cfg = PeelConfig::default();
        let g = GuidanceMap::filled(4, 4, 0.0).unwrap();
        let r = ReferenceGradient::from_gradient(&gradient(&img));
        let sys = assemble(&img, &g, &r, &cfg).unwrap();
        assert!(sys.wpre.iter().all(|&v| v == 0.0));
        let expect = 4.0 / (0.005f64 * 0.005);
        assert!(sys.wcon.iter().all(|&v| (v - expect).abs() < 1e-6));
    }

    #[test]
    fn edge_weight_at_defaults() {
        let r = ReferenceGradient {
            width: 1,
            height: 1,
            channels: 1,
            dx: vec![0.5],
            dy: vec![0.0],
            magnitude: vec![0.5],
        };
        let img = Image::filled(1, 1, 1, 0.2).unwrap();
        let g = GuidanceMap::filled(1, 1, 1.0).unwrap();
        let sys = assemble(&img, &g, &r, &PeelConfig::default()).unwrap();
        // 4 / 0.505²
        assert!((sys.wcon[0] - 15.684_74).abs() < 1e-4, "{}", sys.wcon[0]);
        assert!((sys.wpre[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn rejects_negative_weights_and_shape_mismatch() {
        let img = random_image(3, 3, 1, 3);
        let g = GuidanceMap::filled(3, 3, 0.0).unwrap();
        let r = ReferenceGradient::from_gradient(&gradient(&img));
        let bad = PeelConfig {
            lambda_con: -1.0,
            ..Default::default()
        };
        assert!(matches!(
            assemble(&img, &g, &r, &bad),
            Err(HipeError::InvalidParameter(_))
        ));
        let g4 = GuidanceMap::filled(4, 3, 0.0).unwrap();
        assert!(matches!(
            assemble(&img, &g4, &r, &PeelConfig::default()),
            Err(HipeError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn constant_input_is_a_fixed_point() {
        let img = Image::filled(9, 7, 3, 0.42).unwrap();
        let cfg = PeelConfig::default();
        for gv in [0.0, 0.5, 1.0] {
            let g = GuidanceMap::filled(9, 7, gv).unwrap();
            let r = ReferenceGradient::from_gradient(&gradient(&img));
            let p = peel_once(&img, &g, &r, &cfg).unwrap();
            assert!(p.smoothed.max_abs_diff(&img).unwrap() < 1e-12);
            assert!(p.detail.data().iter().all(|v| v.abs() < 1e-12));
            let sys = assemble(&img, &g, &r, &cfg).unwrap();
            assert_eq!(objective(&img, &sys).unwrap(), 0.0);
        }
    }

    #[test]
    fn exact_split() {
        let img = random_image(16, 12, 3, 4);
        let cfg = PeelConfig::default();
        let (g, r) = self_guided(&img, &cfg);
        let p = peel_once(&img, &g, &r, &cfg).unwrap();
        for ((a, s), d) in img
            .data()
            .iter()
            .zip(p.smoothed.data())
            .zip(p.detail.data())
        {
            assert_eq!(*d, a - s);
        }
    }

    #[test]
    fn residual_contract_holds() {
        let img = random_image(20, 20, 1, 5);
        let cfg = PeelConfig::default();
        let (g, r) = self_guided(&img, &cfg);
        let sys = assemble(&img, &g, &r, &cfg).unwrap();
        let raw = solve_raw(&sys, &cfg, SolverRegistry::builtin(), None).unwrap();
        let op = sys.operator();
        let b = sys.rhs(0);
        let mut ax = vec![0.0; b.len()];
        op.apply(&raw.planes[0], &mut ax);
        let rn: f64 = ax
            .iter()
            .zip(&b)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rn / bn <= cfg.cg_tol);
    }

    #[test]
    fn solution_lowers_objective() {
        let img = random_image(8, 8, 3, 6);
        let cfg = PeelConfig::default();
        let (g, r) = self_guided(&img, &cfg);
        let sys = assemble(&img, &g, &r, &cfg).unwrap();
        let raw = solve_raw(&sys, &cfg, SolverRegistry::builtin(), None).unwrap();
        let x = raw.to_image(8, 8).unwrap();
        assert!(objective(&x, &sys).unwrap() <= objective(&img, &sys).unwrap());
    }

    #[test]
    fn convergence_failure_reports_residual() {
        let img = random_image(24, 24, 1, 7);
        let cfg = PeelConfig {
            cg_max_iters: Some(2),
            cg_tol: 1e-12,
            ..Default::default()
        };
        let (g, r) = self_guided(&img, &cfg);
        match peel_once(&img, &g, &r, &cfg) {
            Err(HipeError::ConvergenceFailure {
                residual,
                iterations,
                ..
            }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 1e-12 && residual.is_finite());
            }
            other => panic!("expected convergence failure, got {other:?}"),
        }
    }

    #[test]
    fn unknown_solver_is_rejected() {
        let img = random_image(4, 4, 1, 8);
        let cfg = PeelConfig {
            solver: "nope".into(),
            ..Default::default()
        };
        let (g, r) = self_guided(&img, &cfg);
        assert!(matches!(
            peel_once(&img, &g, &r, &cfg),
            Err(HipeError::InvalidParameter(_))
        ));
    }

    #[test]
    fn default_iteration_cap() {
        let cfg = PeelConfig::default();
        assert_eq!(cfg.max_iters_for(64 * 64), 640);
        assert_eq!(
            PeelConfig {
                cg_max_iters: Some(7),
                ..cfg
            }
            .max_iters_for(100),
            7
        );
    }

    #[test]
    fn anchor_parses() {
        assert_eq!("first".parse::<Anchor>().unwrap(), Anchor::First);
        assert_eq!("previous".parse::<Anchor>().unwrap(), Anchor::Previous);
        assert!("other".parse::<Anchor>().is_err());
    }
}
