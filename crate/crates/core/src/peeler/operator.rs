use rayon::prelude::*;

/// A symmetric positive definite operator applied matrix-free.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// `y = A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    fn diagonal(&self) -> Vec<f64>;

    /// The operator as `diag(mass) + weighted graph Laplacian`, when it has one.
    fn graph(&self) -> Option<WeightedGraph> {
        None
    }
}

/// Symmetric `diag(mass) + L`, where `L` is the Laplacian of a graph with
/// nonnegative edge weights, stored as CSR with both directions present.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    pub mass: Vec<f64>,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub weights: Vec<f64>,
}

impl WeightedGraph {
    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .zip(&self.weights[range])
            .map(|(&j, &w)| (j as usize, w))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.mass[i] + self.neighbors(i).map(|(_, w)| w).sum::<f64>())
            .collect()
    }
}

/// `Id + Dxᵀ W Dx + Dyᵀ W Dy` on a `width x height` grid, with forward
/// differences that vanish on the last column/row and one weight per pixel
/// shared by both directions.
#[derive(Debug, Clone)]
pub struct StencilOperator {
    width: usize,
    height: usize,
    weights: Vec<f64>,
}

impl StencilOperator {
    pub fn new(width: usize, height: usize, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), width * height, "one weight per pixel");
        Self {
            width,
            height,
            weights,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight of the x-difference leaving pixel `p` (zero on the last column).
    #[inline]
    pub fn wx(&self, x: usize, p: usize) -> f64 {
        if x + 1 < self.width {
            self.weights[p]
        } else {
            0.0
        }
    }

    /// Weight of the y-difference leaving pixel `p` (zero on the last row).
    #[inline]
    pub fn wy(&self, y: usize, p: usize) -> f64 {
        if y + 1 < self.height {
            self.weights[p]
        } else {
            0.0
        }
    }
}

impl LinearOperator for StencilOperator {
    fn dim(&self) -> usize {
        self.width * self.height
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (w, h) = (self.width, self.height);
        debug_assert_eq!(x.len(), w * h);
        let wt = &self.weights;
        y.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
            let base = row * w;
            for (col, o) in out.iter_mut().enumerate() {
                let p = base + col;
                let xp = x[p];
                let mut acc = xp;
                if col + 1 < w {
                    acc += wt[p] * (xp - x[p + 1]);
                }
                if col > 0 {
                    acc += wt[p - 1] * (xp - x[p - 1]);
                }
                if row + 1 < h {
                    acc += wt[p] * (xp - x[p + w]);
                }
                if row > 0 {
                    acc += wt[p - w] * (xp - x[p - w]);
                }
                *o = acc;
            }
        });
    }

    fn diagonal(&self) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        (0..w * h)
            .map(|p| {
                let (col, row) = (p % w, p / w);
                let mut d = 1.0 + self.wx(col, p) + self.wy(row, p);
                if col > 0 {
                    d += self.weights[p - 1];
                }
                if row > 0 {
                    d += self.weights[p - w];
                }
                d
            })
            .collect()
    }

    fn graph(&self) -> Option<WeightedGraph> {
        let (w, h) = (self.width, self.height);
        let n = w * h;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(4 * n);
        let mut weights = Vec::with_capacity(4 * n);
        row_ptr.push(0);
        for p in 0..n {
            let (col, row) = (p % w, p / w);
            if row > 0 {
                cols.push((p - w) as u32);
                weights.push(self.weights[p - w]);
            }
            if col > 0 {
                cols.push((p - 1) as u32);
                weights.push(self.weights[p - 1]);
            }
            if col + 1 < w {
                cols.push((p + 1) as u32);
                weights.push(self.weights[p]);
            }
            if row + 1 < h {
                cols.push((p + w) as u32);
                weights.push(self.weights[p]);
            }
            row_ptr.push(cols.len());
        }
        Some(WeightedGraph {
            mass: vec![1.0; n],
            row_ptr,
            cols,
            weights,
        })
    }
}
