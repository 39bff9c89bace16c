//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use structdl::{Dictionary, GroupStructure};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Penalty `Σ_b κ_b ‖u restricted to block b‖₂` over arbitrary index blocks.
pub struct BlockPenalty {
    pub blocks: Vec<(Vec<(usize, usize)>, f64)>,
}

impl BlockPenalty {
    pub fn rows(k: usize, n: usize, kappa: f64) -> Self {
        Self {
            blocks: (0..k)
                .map(|j| ((0..n).map(|i| (j, i)).collect(), kappa))
                .collect(),
        }
    }

    pub fn entries(k: usize, n: usize, kappa: f64) -> Self {
        Self {
            blocks: (0..k)
                .flat_map(|j| (0..n).map(move |i| (vec![(j, i)], kappa)))
                .collect(),
        }
    }

    pub fn groups(sizes: &[usize], n: usize, kappa: f64) -> Self {
        let mut blocks = Vec::new();
        let mut start = 0;
        for &s in sizes {
            let idx = (start..start + s)
                .flat_map(|j| (0..n).map(move |i| (j, i)))
                .collect();
            blocks.push((idx, kappa));
            start += s;
        }
        Self { blocks }
    }

    pub fn and(mut self, other: Self) -> Self {
        self.blocks.extend(other.blocks);
        self
    }

    pub fn value(&self, u: &DMatrix<f64>) -> f64 {
        self.blocks
            .iter()
            .map(|(idx, k)| k * idx.iter().map(|&p| u[p] * u[p]).sum::<f64>().sqrt())
            .sum()
    }

    /// argmin_u ½‖u − v‖²_F + penalty(u), via block-coordinate ascent on the
    /// dual: u = v − Σ_b y_b with ‖y_b‖₂ ≤ κ_b.
    pub fn prox(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut ys: Vec<Vec<f64>> = self
            .blocks
            .iter()
            .map(|(idx, _)| vec![0.0; idx.len()])
            .collect();
        let mut u = v.clone();
        // larger blocks first
        let mut order: Vec<usize> = (0..self.blocks.len()).collect();
        order.sort_by_key(|&b| std::cmp::Reverse(self.blocks[b].0.len()));
        for _ in 0..200_000 {
            let mut change = 0.0f64;
            for &b in &order {
                let (idx, kappa) = &self.blocks[b];
                let y = &mut ys[b];
                // w = v − Σ_{others} y restricted to the block = u + y_b
                let w: Vec<f64> = idx
                    .iter()
                    .zip(y.iter())
                    .map(|(&p, &yb)| u[p] + yb)
                    .collect();
                let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                let scale = if norm > *kappa { kappa / norm } else { 1.0 };
                for ((&p, yb), wb) in idx.iter().zip(y.iter_mut()).zip(&w) {
                    let new = wb * scale;
                    change = change.max((new - *yb).abs());
                    *yb = new;
                    u[p] = wb - new;
                }
            }
            if change < 1e-15 {
                break;
            }
        }
        u
    }
}

/// Scalar prox of κ|·| by bisection on the subdifferential.
pub fn scalar_soft_oracle(v: f64, kappa: f64) -> f64 {
    let right = |u: f64| u - v + if u >= 0.0 { kappa } else { -kappa };
    let left = |u: f64| u - v + if u > 0.0 { kappa } else { -kappa };
    let (mut lo, mut hi) = (-v.abs() - kappa - 1.0, v.abs() + kappa + 1.0);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if right(mid) < 0.0 {
            lo = mid;
        } else if left(mid) > 0.0 {
            hi = mid;
        } else {
            return mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn soft(v: &DMatrix<f64>, k: f64) -> DMatrix<f64> {
    v.map(|x| x.signum() * (x.abs() - k).max(0.0))
}

/// Block shrinkage of row ranges given by `sizes`, per column when
/// `per_column` is set, otherwise over the whole row block.
pub fn group_shrink(v: &DMatrix<f64>, sizes: &[usize], k: f64, per_column: bool) -> DMatrix<f64> {
    let mut out = v.clone();
    let mut start = 0;
    for &s in sizes {
        if per_column {
            for i in 0..v.ncols() {
                let n = v.view((start, i), (s, 1)).norm();
                let f = if n > k { 1.0 - k / n } else { 0.0 };
                out.view_mut((start, i), (s, 1)).scale_mut(f);
            }
        } else {
            let n = v.rows(start, s).norm();
            let f = if n > k { 1.0 - k / n } else { 0.0 };
            out.rows_mut(start, s).scale_mut(f);
        }
        start += s;
    }
    out
}

pub fn row_shrink(v: &DMatrix<f64>, k: f64) -> DMatrix<f64> {
    let mut out = v.clone();
    for j in 0..v.nrows() {
        let n = v.row(j).norm();
        let f = if n > k { 1.0 - k / n } else { 0.0 };
        out.row_mut(j).scale_mut(f);
    }
    out
}

pub fn spectral_norm_sq(d: &DMatrix<f64>) -> f64 {
    d.singular_values()
        .iter()
        .fold(0.0f64, |a, &b| a.max(b))
        .powi(2)
}

/// Accelerated proximal gradient for ½‖X − D·Z‖² + g(Z).
pub fn fista<P, G>(
    x: &DMatrix<f64>,
    d: &DMatrix<f64>,
    prox: P,
    value: G,
    iters: usize,
) -> (DMatrix<f64>, f64)
where
    P: Fn(&DMatrix<f64>, f64) -> DMatrix<f64>,
    G: Fn(&DMatrix<f64>) -> f64,
{
    let step = 1.0 / spectral_norm_sq(d);
    let mut z = DMatrix::zeros(d.ncols(), x.ncols());
    let mut y = z.clone();
    let mut t = 1.0f64;
    let obj = |z: &DMatrix<f64>| 0.5 * (x - d * z).norm_squared() + value(z);
    for _ in 0..iters {
        let grad = d.transpose() * (d * &y - x);
        let next = prox(&(&y - grad * step), step);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &z) * ((t - 1.0) / t_next);
        // restart when the objective goes up
        if obj(&next) > obj(&z) {
            y = z.clone();
            t = 1.0;
            continue;
        }
        z = next;
        t = t_next;
    }
    let v = obj(&z);
    (z, v)
}

/// Reference solver for ½‖X − D(A + B)‖² + λr‖A‖_{1,2} + λe‖B‖₁ (no groups),
/// by accelerated proximal gradient on the stacked variable.
pub fn dirty_reference(x: &DMatrix<f64>, d: &DMatrix<f64>, lr: f64, le: f64, iters: usize) -> f64 {
    let k = d.ncols();
    let mut dd = DMatrix::zeros(d.nrows(), 2 * k);
    dd.columns_mut(0, k).copy_from(d);
    dd.columns_mut(k, k).copy_from(d);
    let prox = |z: &DMatrix<f64>, step: f64| {
        let mut out = z.clone();
        out.rows_mut(0, k)
            .copy_from(&row_shrink(&z.rows(0, k).into_owned(), lr * step));
        out.rows_mut(k, k)
            .copy_from(&soft(&z.rows(k, k).into_owned(), le * step));
        out
    };
    let value = |z: &DMatrix<f64>| {
        let a = z.rows(0, k);
        let b = z.rows(k, k);
        lr * a.row_iter().map(|r| r.norm()).sum::<f64>()
            + le * b.iter().map(|v| v.abs()).sum::<f64>()
    };
    fista(x, &dd, prox, value, iters).1
}

/// Disjoint-subspace instance: `classes` subspaces of dimension `r` in
/// dimension `classes·r − 1`, pairwise disjoint but not independent, with
/// perturbed, normalized sub-dictionaries of `r` atoms each.
pub fn disjoint_instance(
    rng: &mut ChaCha8Rng,
    classes: usize,
    r: usize,
) -> (Dictionary, Vec<DMatrix<f64>>) {
    let m = classes * r - 1;
    let mut bases = Vec::new();
    for c in 0..classes - 1 {
        let mut b = DMatrix::zeros(m, r);
        for i in 0..r {
            b[(c * r + i, i)] = 1.0;
        }
        bases.push(b);
    }
    // last subspace: remaining coordinates plus one direction mixing the rest
    let free = m - (classes - 1) * r;
    let mut last = DMatrix::zeros(m, r);
    for i in 0..free {
        last[((classes - 1) * r + i, i)] = 1.0;
    }
    for i in free..r {
        let mut u = nalgebra::DVector::<f64>::zeros(m);
        for j in 0..(classes - 1) * r {
            u[j] = rng.sample(StandardNormal);
        }
        u.normalize_mut();
        last.set_column(i, &u);
    }
    bases.push(last);
    let q = randn(rng, m, m).qr().q();
    let bases: Vec<DMatrix<f64>> = bases
        .into_iter()
        .map(|b| structdl::theory::orthonormal_basis(&(&q * b)))
        .collect();
    let mut atoms = DMatrix::zeros(m, classes * r);
    for (c, b) in bases.iter().enumerate() {
        let mix = DMatrix::<f64>::identity(r, r) + randn(rng, r, r) * 0.1;
        atoms.columns_mut(c * r, r).copy_from(&(b * mix));
    }
    let gs = GroupStructure::uniform(classes, r).unwrap();
    (Dictionary::normalized(atoms, gs).unwrap(), bases)
}
