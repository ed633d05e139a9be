//! Independent reference minimizers for the peel objective.
//!
//! `dense_solve` builds the normal equations from explicit dense difference
//! matrices and solves them by Gaussian elimination. `descent_minimize` runs
//! accelerated gradient descent on the loss terms directly. Neither touches
//! the matrix-free operator or the registered solvers, so both can be used to
//! check them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::guider::{self_guidance, GuidanceMap, ReferenceGradient};
use crate::image::{gradient, Image};
use crate::peeler::{assemble, objective, solve_raw, PeelConfig, PeelSystem, SolverRegistry};

/// Dense `n x n` forward-difference matrices along x and y.
fn difference_matrices(w: usize, h: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = w * h;
    let mut dx = vec![vec![0.0; n]; n];
    let mut dy = vec![vec![0.0; n]; n];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w {
                dx[p][p] = -1.0;
                dx[p][p + 1] = 1.0;
            }
            if y + 1 < h {
                dy[p][p] = -1.0;
                dy[p][p + w] = 1.0;
            }
        }
    }
    (dx, dy)
}

/// Dense matrix `Id + Dxᵀ W Dx + Dyᵀ W Dy` with `W = diag(wpre + wcon)`.
pub fn dense_matrix(sys: &PeelSystem) -> Vec<Vec<f64>> {
    let (w, h) = (sys.width, sys.height);
    let n = w * h;
    let (dx, dy) = difference_matrices(w, h);
    let weights = sys.edge_weights();
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for d in [&dx, &dy] {
        for k in 0..n {
            let wk = weights[k];
            if wk == 0.0 {
                continue;
            }
            for i in 0..n {
                if d[k][i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    a[i][j] += d[k][i] * wk * d[k][j];
                }
            }
        }
    }
    a
}

/// Dense right-hand side for channel `c`.
pub fn dense_rhs(sys: &PeelSystem, c: usize) -> Vec<f64> {
    let (w, h, ch) = (sys.width, sys.height, sys.channels);
    let n = w * h;
    let (dx, dy) = difference_matrices(w, h);
    let mut b: Vec<f64> = sys.target.plane(c);
    for (d, g) in [(&dx, &sys.gx), (&dy, &sys.gy)] {
        for k in 0..n {
            let f = sys.wpre[k] * g[k * ch + c];
            for (i, bi) in b.iter_mut().enumerate() {
                *bi += d[k][i] * f;
            }
        }
    }
    b
}

/// Gaussian elimination with partial pivoting.
pub fn gaussian_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        a.swap(col, pivot);
        b.swap(col, pivot);
        let diag = a[col][col];
        for row in col + 1..n {
            let factor = a[row][col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Exact minimizer of the system, one dense solve per channel.
pub fn dense_solve(sys: &PeelSystem) -> Result<Image> {
    let a = dense_matrix(sys);
    let planes: Vec<Vec<f64>> = (0..sys.channels)
        .map(|c| gaussian_solve(a.clone(), dense_rhs(sys, c)))
        .collect();
    Image::from_planes(sys.width, sys.height, &planes)
}

/// Gradient of the objective, accumulated term by term.
pub fn objective_gradient(img: &Image, sys: &PeelSystem) -> Vec<f64> {
    let (w, h, ch) = (sys.width, sys.height, sys.channels);
    let x = img.data();
    let t = sys.target.data();
    let mut grad: Vec<f64> = x.iter().zip(t).map(|(a, b)| 2.0 * (a - b)).collect();
    for y in 0..h {
        for xx in 0..w {
            let p = y * w + xx;
            for c in 0..ch {
                let i = p * ch + c;
                let mut term = |j: usize, g: f64| {
                    let d = x[j] - x[i];
                    let s = 2.0 * (sys.wpre[p] * (d - g) + sys.wcon[p] * d);
                    grad[j] += s;
                    grad[i] -= s;
                };
                if xx + 1 < w {
                    term(i + ch, sys.gx[i]);
                }
                if y + 1 < h {
                    term(i + w * ch, sys.gy[i]);
                }
            }
        }
    }
    grad
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DescentStats {
    pub steps: usize,
    pub gradient_norm: f64,
}

/// Nesterov-accelerated gradient descent from the system target.
///
/// Step size and momentum come from the Gershgorin bound on the objective's
/// Hessian, `2 (1 + 8 max w)`, and its strong convexity constant 2. Stops when
/// the gradient norm falls below `grad_tol` or after `max_steps`.
pub fn descent_minimize(
    sys: &PeelSystem,
    max_steps: usize,
    grad_tol: f64,
) -> Result<(Image, DescentStats)> {
    let wmax = sys
        .wpre
        .iter()
        .zip(&sys.wcon)
        .map(|(a, b)| a + b)
        .fold(0.0, f64::max);
    let lipschitz = 2.0 * (1.0 + 8.0 * wmax);
    let kappa = lipschitz / 2.0;
    let momentum = (kappa.sqrt() - 1.0) / (kappa.sqrt() + 1.0);
    let step = 1.0 / lipschitz;

    let (w, h, ch) = (sys.width, sys.height, sys.channels);
    let mut x = sys.target.clone();
    let mut prev = x.data().to_vec();
    let mut steps = 0;
    let mut gnorm = f64::INFINITY;
    while steps < max_steps {
        let cur = x.data().to_vec();
        let look: Vec<f64> = cur
            .iter()
            .zip(&prev)
            .map(|(a, b)| a + momentum * (a - b))
            .collect();
        let look_img = Image::new(w, h, ch, look)?;
        let g = objective_gradient(&look_img, sys);
        let next: Vec<f64> = look_img
            .data()
            .iter()
            .zip(&g)
            .map(|(a, gi)| a - step * gi)
            .collect();
        prev = cur;
        x = Image::new(w, h, ch, next)?;
        steps += 1;
        if steps % 50 == 0 || steps == max_steps {
            gnorm = objective_gradient(&x, sys)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if gnorm <= grad_tol {
                break;
            }
        }
    }
    Ok((
        x,
        DescentStats {
            steps,
            gradient_norm: gnorm,
        },
    ))
}

/// Seeded random image with samples in `[0, 1)`.
pub fn random_image(width: usize, height: usize, channels: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::new(
        width,
        height,
        channels,
        (0..width * height * channels)
            .map(|_| rng.gen::<f64>())
            .collect(),
    )
    .expect("valid random image")
}

/// Seeded piecewise-constant image with additive texture, so that
/// self-guidance finds both edge and flat regions.
pub fn random_textured_image(width: usize, height: usize, channels: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split_x = rng.gen_range(1..width.max(2));
    let split_y = rng.gen_range(1..height.max(2));
    let levels: Vec<f64> = (0..4 * channels).map(|_| rng.gen_range(0.1..0.9)).collect();
    let mut data = Vec::with_capacity(width * height * channels);
    for y in 0..height {
        for x in 0..width {
            let q = usize::from(x >= split_x) + 2 * usize::from(y >= split_y);
            for c in 0..channels {
                let v = levels[q * channels + c] + rng.gen_range(-0.08..0.08);
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Image::new(width, height, channels, data).expect("valid textured image")
}

/// Random soft guidance map with edge-like values in `[0, 1]`.
pub fn random_guidance(width: usize, height: usize, seed: u64) -> GuidanceMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GuidanceMap::new(
        width,
        height,
        (0..width * height)
            .map(|_| {
                if rng.gen_bool(0.3) {
                    rng.gen_range(0.5..=1.0)
                } else {
                    0.0
                }
            })
            .collect(),
    )
    .expect("values in range")
}

/// A seeded random peel system of the given size.
pub fn random_system(
    size: usize,
    channels: usize,
    seed: u64,
    cfg: &PeelConfig,
) -> Result<PeelSystem> {
    let img = random_textured_image(size, size, channels, seed);
    let reference = ReferenceGradient::from_gradient(&gradient(&img));
    let guidance = if seed % 2 == 0 {
        self_guidance(&img, cfg.beta_g)?
    } else {
        random_guidance(size, size, seed ^ 0x5eed)
    };
    assemble(&img, &guidance, &reference, cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub size: usize,
    pub seed: u64,
    /// Max |CG - dense| over all checked systems.
    pub dense_max_deviation: f64,
    /// Max relative objective gap between CG and dense solutions.
    pub objective_max_gap: f64,
    /// Max |CG - descent| over all checked systems.
    pub descent_max_deviation: f64,
    pub dense_tolerance: f64,
    pub objective_tolerance: f64,
    pub descent_tolerance: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.dense_max_deviation <= self.dense_tolerance
            && self.objective_max_gap <= self.objective_tolerance
            && self.descent_max_deviation <= self.descent_tolerance
    }
}

/// Solver tolerance used when comparing against the oracles.
pub const ORACLE_CG_TOL: f64 = 1e-10;
pub const DENSE_TOLERANCE: f64 = 1e-6;
pub const OBJECTIVE_TOLERANCE: f64 = 1e-8;
pub const DESCENT_TOLERANCE: f64 = 1e-4;

/// Compare the configured solver with both oracles on a gray and an RGB
/// system of `size x size` pixels.
pub fn oracle_check(size: usize, seed: u64, base: &PeelConfig) -> Result<OracleReport> {
    let cfg = PeelConfig {
        cg_tol: ORACLE_CG_TOL,
        cg_max_iters: Some(100 * size * size + 1000),
        ..base.clone()
    };
    let mut report = OracleReport {
        size,
        seed,
        dense_max_deviation: 0.0,
        objective_max_gap: 0.0,
        descent_max_deviation: 0.0,
        dense_tolerance: DENSE_TOLERANCE,
        objective_tolerance: OBJECTIVE_TOLERANCE,
        descent_tolerance: DESCENT_TOLERANCE,
    };
    for (k, channels) in [1usize, 3].into_iter().enumerate() {
        let sys = random_system(size, channels, seed.wrapping_add(k as u64), &cfg)?;
        let cg = solve_raw(&sys, &cfg, SolverRegistry::builtin(), None)?.to_image(size, size)?;
        let dense = dense_solve(&sys)?;
        let (descent, _) = descent_minimize(&sys, 200_000, 1e-8)?;
        let (fc, fd) = (objective(&cg, &sys)?, objective(&dense, &sys)?);
        report.dense_max_deviation = report.dense_max_deviation.max(cg.max_abs_diff(&dense)?);
        report.objective_max_gap = report
            .objective_max_gap
            .max((fc - fd).abs() / fd.abs().max(f64::MIN_POSITIVE));
        report.descent_max_deviation = report.descent_max_deviation.max(cg.max_abs_diff(&descent)?);
    }
    Ok(report)
}
