//! Aggregation multigrid for `diag(mass) + weighted Laplacian` systems.
//!
//! Aggregates come from two rounds of strongest-neighbor pair matching, so
//! strongly coupled pixels (flat regions, where the smoothness weight is
//! huge) are merged while weak couplings across edges are kept apart. With
//! piecewise-constant prolongation the Galerkin coarse operator is again a
//! mass plus Laplacian: masses add up and inter-aggregate weights add up.

use super::operator::WeightedGraph;
use super::solver::Preconditioner;

/// Levels at or below this size are solved directly.
const COARSEST: usize = 100;
/// Coarsening that keeps more than this fraction of nodes has stalled.
const STALL: f64 = 0.85;
const MAX_LEVELS: usize = 24;
/// Neighbors with weight below this fraction of the strongest are not paired.
const STRONG: f64 = 0.25;
/// Sweeps used at the coarsest level when it is too large to factorize.
const COARSE_SWEEPS: usize = 8;
const DENSE_LIMIT: usize = 400;

const UNSET: u32 = u32::MAX;

struct Level {
    graph: WeightedGraph,
    diag: Vec<f64>,
    /// Fine node -> aggregate on the next level (empty on the last level).
    agg: Vec<u32>,
}

impl Level {
    fn new(graph: WeightedGraph) -> Self {
        let diag = graph.diagonal();
        Self {
            graph,
            diag,
            agg: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let off: f64 = self.graph.neighbors(i).map(|(j, w)| w * x[j]).sum();
            *yi = self.diag[i] * x[i] - off;
        }
    }

    fn forward_sweep(&self, b: &[f64], x: &mut [f64]) {
        for i in 0..self.len() {
            let off: f64 = self.graph.neighbors(i).map(|(j, w)| w * x[j]).sum();
            x[i] = (b[i] + off) / self.diag[i];
        }
    }

    fn backward_sweep(&self, b: &[f64], x: &mut [f64]) {
        for i in (0..self.len()).rev() {
            let off: f64 = self.graph.neighbors(i).map(|(j, w)| w * x[j]).sum();
            x[i] = (b[i] + off) / self.diag[i];
        }
    }
}

/// Greedy matching of each node with its strongest unmatched neighbor.
fn pair_matching(g: &WeightedGraph) -> (Vec<u32>, usize) {
    let n = g.len();
    let mut agg = vec![UNSET; n];
    let mut nc = 0u32;
    for i in 0..n {
        if agg[i] != UNSET {
            continue;
        }
        let strongest = g.neighbors(i).map(|(_, w)| w).fold(0.0, f64::max);
        let mut best: Option<(usize, f64)> = None;
        for (j, w) in g.neighbors(i) {
            if j == i || agg[j] != UNSET || w < STRONG * strongest || w <= 0.0 {
                continue;
            }
            if best.is_none_or(|(_, bw)| w > bw) {
                best = Some((j, w));
            }
        }
        agg[i] = nc;
        if let Some((j, _)) = best {
            agg[j] = nc;
        }
        nc += 1;
    }
    (agg, nc as usize)
}

/// Galerkin coarse graph for piecewise-constant prolongation.
fn coarsen(g: &WeightedGraph, agg: &[u32], nc: usize) -> WeightedGraph {
    let mut mass = vec![0.0; nc];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nc];
    for (i, &a) in agg.iter().enumerate() {
        mass[a as usize] += g.mass[i];
        members[a as usize].push(i);
    }
    let mut row_ptr = Vec::with_capacity(nc + 1);
    let mut cols = Vec::new();
    let mut weights = Vec::new();
    // position of coarse neighbor J in the current row, or UNSET
    let mut slot = vec![UNSET; nc];
    row_ptr.push(0);
    for (a, group) in members.iter().enumerate() {
        let start = cols.len();
        for &i in group {
            for (j, w) in g.neighbors(i) {
                let b = agg[j] as usize;
                if b == a {
                    continue;
                }
                if slot[b] == UNSET {
                    slot[b] = cols.len() as u32;
                    cols.push(b as u32);
                    weights.push(w);
                } else {
                    weights[slot[b] as usize] += w;
                }
            }
        }
        for &c in &cols[start..] {
            slot[c as usize] = UNSET;
        }
        row_ptr.push(cols.len());
    }
    WeightedGraph {
        mass,
        row_ptr,
        cols,
        weights,
    }
}

/// Dense Cholesky factor of a small SPD level.
struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    fn new(level: &Level) -> Option<Self> {
        let n = level.len();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = level.diag[i];
            for (j, w) in level.graph.neighbors(i) {
                a[i * n + j] -= w;
            }
        }
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= a[j * n + k] * a[j * n + k];
            }
            if !(d > 0.0) {
                return None;
            }
            let d = d.sqrt();
            a[j * n + j] = d;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= a[i * n + k] * a[j * n + k];
                }
                a[i * n + j] = s / d;
            }
        }
        Some(Self { n, l: a })
    }

    fn solve(&self, b: &[f64], x: &mut [f64]) {
        let (n, l) = (self.n, &self.l);
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[i * n + k] * x[k];
            }
            x[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= l[k * n + i] * x[k];
            }
            x[i] = s / l[i * n + i];
        }
    }
}

/// Symmetric W-cycle preconditioner: forward Gauss-Seidel before and
/// backward Gauss-Seidel after each coarse correction.
pub struct AggregationAmg {
    levels: Vec<Level>,
    coarse: Option<DenseCholesky>,
}

impl AggregationAmg {
    pub fn new(graph: WeightedGraph) -> Self {
        let mut levels = vec![Level::new(graph)];
        while levels.len() < MAX_LEVELS {
            let last = levels.last_mut().expect("at least one level");
            let n = last.len();
            if n <= COARSEST {
                break;
            }
            let (first, n1) = pair_matching(&last.graph);
            let mid = coarsen(&last.graph, &first, n1);
            let (second, n2) = pair_matching(&mid);
            if n2 as f64 > STALL * n as f64 {
                break;
            }
            last.agg = first.iter().map(|&a| second[a as usize]).collect();
            let next = coarsen(&last.graph, &last.agg, n2);
            levels.push(Level::new(next));
        }
        let bottom = levels.last().expect("at least one level");
        let coarse = if bottom.len() <= DENSE_LIMIT {
            DenseCholesky::new(bottom)
        } else {
            None
        };
        Self { levels, coarse }
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Level::len).collect()
    }

    /// `x ≈ A_l⁻¹ b` with `x` starting at zero.
    fn cycle(&self, l: usize, b: &[f64], x: &mut [f64]) {
        let level = &self.levels[l];
        x.iter_mut().for_each(|v| *v = 0.0);
        if l + 1 == self.levels.len() {
            match &self.coarse {
                Some(chol) => chol.solve(b, x),
                None => {
                    for _ in 0..COARSE_SWEEPS {
                        level.forward_sweep(b, x);
                        level.backward_sweep(b, x);
                    }
                }
            }
            return;
        }
        let next = &self.levels[l + 1];
        let nc = next.len();

        level.forward_sweep(b, x);
        let mut r = vec![0.0; level.len()];
        level.apply(x, &mut r);
        let mut rc = vec![0.0; nc];
        for (i, &a) in level.agg.iter().enumerate() {
            rc[a as usize] += b[i] - r[i];
        }

        // two coarse iterations (W-cycle); the second corrects the first
        let mut xc = vec![0.0; nc];
        self.cycle(l + 1, &rc, &mut xc);
        let mut tmp = vec![0.0; nc];
        next.apply(&xc, &mut tmp);
        for (t, r) in tmp.iter_mut().zip(&rc) {
            *t = r - *t;
        }
        let mut dc = vec![0.0; nc];
        if l + 2 < self.levels.len() {
            self.cycle(l + 1, &tmp, &mut dc);
            for (a, d) in xc.iter_mut().zip(&dc) {
                *a += d;
            }
        }

        for (i, &a) in level.agg.iter().enumerate() {
            x[i] += xc[a as usize];
        }
        level.backward_sweep(b, x);
    }
}

impl Preconditioner for AggregationAmg {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.cycle(0, r, z);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::peeler::{LinearOperator, StencilOperator};

    fn grid(w: usize, h: usize, weight: impl Fn(usize) -> f64) -> StencilOperator {
        StencilOperator::new(w, h, (0..w * h).map(weight).collect())
    }

    #[test]
    fn coarse_operator_is_galerkin_product() {
        let op = grid(5, 4, |p| 0.5 + (p % 7) as f64);
        let g = op.graph().unwrap();
        let (agg, nc) = pair_matching(&g);
        let coarse = Level::new(coarsen(&g, &agg, nc));
        let fine = Level::new(g);
        // Pᵀ A P e_J, column by column
        for jc in 0..nc {
            let x: Vec<f64> = agg
                .iter()
                .map(|&a| (a as usize == jc) as u8 as f64)
                .collect();
            let mut ax = vec![0.0; x.len()];
            fine.apply(&x, &mut ax);
            let mut expect = vec![0.0; nc];
            for (i, &a) in agg.iter().enumerate() {
                expect[a as usize] += ax[i];
            }
            let mut e = vec![0.0; nc];
            e[jc] = 1.0;
            let mut got = vec![0.0; nc];
            coarse.apply(&e, &mut got);
            for (a, b) in got.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stencil_graph_matches_operator() {
        let op = grid(6, 5, |p| (p * 3 % 5) as f64);
        let level = Level::new(op.graph().unwrap());
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).cos()).collect();
        let (mut a, mut b) = (vec![0.0; 30], vec![0.0; 30]);
        op.apply(&x, &mut a);
        level.apply(&x, &mut b);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
        assert_eq!(level.diag, op.diagonal());
    }

    #[test]
    fn coarsens_by_about_four() {
        let op = grid(64, 64, |_| 10.0);
        let amg = AggregationAmg::new(op.graph().unwrap());
        let sizes = amg.level_sizes();
        assert_eq!(sizes[0], 4096);
        assert!(sizes[1] <= 1100, "{sizes:?}");
        assert!(*sizes.last().unwrap() <= COARSEST);
    }

    #[test]
    fn preconditioner_is_symmetric() {
        let op = grid(17, 13, |p| if p % 5 == 0 { 3.0 } else { 900.0 });
        let amg = AggregationAmg::new(op.graph().unwrap());
        let n = op.dim();
        let u: Vec<f64> = (0..n).map(|i| ((i * 31) % 7) as f64 - 3.0).collect();
        let v: Vec<f64> = (0..n).map(|i| ((i * 17) % 11) as f64 * 0.1).collect();
        let (mut mu, mut mv) = (vec![0.0; n], vec![0.0; n]);
        amg.apply(&u, &mut mu);
        amg.apply(&v, &mut mv);
        let a: f64 = v.iter().zip(&mu).map(|(p, q)| p * q).sum();
        let b: f64 = u.iter().zip(&mv).map(|(p, q)| p * q).sum();
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} {b}");
        let uu: f64 = u.iter().zip(&mu).map(|(p, q)| p * q).sum();
        assert!(uu > 0.0);
    }
}
