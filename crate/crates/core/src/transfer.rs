//! Discretized transfer operator on a box covering and its invariant vector.
//!
//! Entry `p_kl` estimates the probability that a uniformly chosen point of
//! box `l`, pushed through `f(·, λ)` with `λ ~ ρ`, lands in box `k`:
//!
//! ```text
//! p_kl ≈ 1/(M·N) · #{(i, j) : f(x_j, λ_i) ∈ C_k}
//! ```
//!
//! with `N` Halton test points `x_j ∈ C_l` and `M` parameter draws `λ_i`.
//! Images that land outside the covering (or escape) have no destination
//! box and are counted as per-column leakage, so every column satisfies
//! `Σ_k count_kl + leaked_l = M·N` exactly.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dynamics::DynamicalSystem;
use crate::error::{Error, Result};
use crate::geometry::{BoxPartition, MAX_DIM};
use crate::sampling::{stream_rng, ParamMode, ParameterModel, TestCloud};

/// Sampling budget and perturbation for [`assemble`].
#[derive(Clone, Debug, PartialEq)]
pub struct AssemblyConfig {
    /// Halton test points per box, `N`.
    pub points_per_box: usize,
    /// Parameter draws per box, `M`.
    pub param_samples: usize,
    /// Radius of the uniform ball perturbation added to every image; 0 disables it.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        AssemblyConfig {
            points_per_box: 64,
            param_samples: 64,
            epsilon: 0.0,
            seed: 0,
        }
    }
}

/// Sparse column-wise matrix of hit counts with per-column leakage.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    dim: usize,
    col_ptr: Vec<usize>,
    rows: Vec<u32>,
    counts: Vec<u32>,
    leaked: Vec<u32>,
    samples: u32,
    config: AssemblyConfig,
}

type Column = (Vec<(u32, u32)>, u32);

impl TransitionMatrix {
    fn from_columns(dim: usize, columns: Vec<Column>, samples: u32, config: AssemblyConfig) -> Self {
        let mut col_ptr = Vec::with_capacity(dim + 1);
        let mut rows = Vec::new();
        let mut counts = Vec::new();
        let mut leaked = Vec::with_capacity(dim);
        col_ptr.push(0);
        for (entries, leak) in columns {
            for (k, c) in entries {
                rows.push(k);
                counts.push(c);
            }
            col_ptr.push(rows.len());
            leaked.push(leak);
        }
        TransitionMatrix {
            dim,
            col_ptr,
            rows,
            counts,
            leaked,
            samples,
            config,
        }
    }

    /// Builds a matrix from `(k, l, count)` triplets (0-based) with
    /// `samples` draws per column; whatever a column does not account for
    /// becomes leakage.
    pub fn from_counts(dim: usize, samples: u32, triplets: &[(usize, usize, u32)]) -> Result<Self> {
        let mut columns: Vec<Vec<(u32, u32)>> = vec![Vec::new(); dim];
        for &(k, l, c) in triplets {
            if k >= dim || l >= dim {
                return Err(Error::input(format!("entry ({k}, {l}) outside a {dim}x{dim} matrix")));
            }
            if c > 0 {
                columns[l].push((k as u32, c));
            }
        }
        let mut out = Vec::with_capacity(dim);
        for (l, mut col) in columns.into_iter().enumerate() {
            col.sort_unstable();
            let mut merged: Vec<(u32, u32)> = Vec::with_capacity(col.len());
            for (k, c) in col {
                match merged.last_mut() {
                    Some((kk, cc)) if *kk == k => *cc += c,
                    _ => merged.push((k, c)),
                }
            }
            let total: u64 = merged.iter().map(|&(_, c)| c as u64).sum();
            if total > samples as u64 {
                return Err(Error::input(format!("column {l} has {total} hits for {samples} samples")));
            }
            out.push((merged, samples - total as u32));
        }
        let config = AssemblyConfig {
            points_per_box: samples as usize,
            param_samples: 1,
            ..Default::default()
        };
        Ok(TransitionMatrix::from_columns(dim, out, samples, config))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `M·N`, the number of samples behind every column.
    pub fn samples_per_column(&self) -> u32 {
        self.samples
    }

    pub fn config(&self) -> &AssemblyConfig {
        &self.config
    }

    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    /// `(k, count)` pairs of column `l`, ascending in `k`.
    pub fn column_counts(&self, l: usize) -> impl Iterator<Item = (usize, u32)> + '_ {
        let range = self.col_ptr[l]..self.col_ptr[l + 1];
        self.rows[range.clone()]
            .iter()
            .zip(&self.counts[range])
            .map(|(&k, &c)| (k as usize, c))
    }

    /// `(k, p_kl)` pairs of column `l`.
    pub fn column(&self, l: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let total = self.samples as f64;
        self.column_counts(l).map(move |(k, c)| (k, c as f64 / total))
    }

    pub fn entry(&self, k: usize, l: usize) -> f64 {
        self.column(l).find(|&(kk, _)| kk == k).map_or(0.0, |(_, p)| p)
    }

    pub fn leaked_count(&self, l: usize) -> u32 {
        self.leaked[l]
    }

    pub fn leakage(&self, l: usize) -> f64 {
        self.leaked[l] as f64 / self.samples as f64
    }

    pub fn column_sum(&self, l: usize) -> f64 {
        self.column(l).map(|(_, p)| p).sum()
    }

    /// Whether hits plus leakage in column `l` account for exactly `M·N` samples.
    pub fn column_balanced(&self, l: usize) -> bool {
        let hits: u64 = self.column_counts(l).map(|(_, c)| c as u64).sum();
        hits + self.leaked[l] as u64 == self.samples as u64
    }

    pub fn all_columns_balanced(&self) -> bool {
        (0..self.dim).all(|l| self.column_balanced(l))
    }

    /// Fraction of all samples that leaked.
    pub fn total_leakage(&self) -> f64 {
        let leaked: u64 = self.leaked.iter().map(|&c| c as u64).sum();
        leaked as f64 / (self.samples as f64 * self.dim.max(1) as f64)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.dim]; self.dim];
        for l in 0..self.dim {
            for (k, p) in self.column(l) {
                out[k][l] = p;
            }
        }
        out
    }
}

fn check_partition(p: &BoxPartition, sys: &dyn DynamicalSystem) -> Result<()> {
    if p.is_empty() {
        return Err(Error::input("cannot assemble a matrix on an empty covering"));
    }
    if sys.dim() != p.dim() {
        return Err(Error::input(format!(
            "system `{}` has dimension {} but the covering has {}",
            sys.name(),
            sys.dim(),
            p.dim()
        )));
    }
    Ok(())
}

/// Writes a uniform sample of the ball of radius `eps` into `out`.
fn ball_offset<R: Rng>(rng: &mut R, eps: f64, out: &mut [f64]) {
    let n = out.len();
    loop {
        let mut norm2 = 0.0;
        for o in out.iter_mut() {
            *o = rng.sample(StandardNormal);
            norm2 += *o * *o;
        }
        if norm2 > 0.0 {
            let u: f64 = rng.random();
            let scale = eps * u.powf(1.0 / n as f64) / norm2.sqrt();
            out.iter_mut().for_each(|o| *o *= scale);
            return;
        }
    }
}

/// Monte-Carlo estimate of the transition matrix on the covering `p`.
///
/// Box `l` draws its parameters from random stream `2l` and its ball
/// offsets from stream `2l + 1` of `cfg.seed`, so the result does not depend
/// on how columns are scheduled across workers.
pub fn assemble(
    p: &BoxPartition,
    sys: &dyn DynamicalSystem,
    pm: &ParameterModel,
    cfg: &AssemblyConfig,
) -> Result<TransitionMatrix> {
    check_partition(p, sys)?;
    if cfg.points_per_box == 0 || cfg.param_samples == 0 {
        return Err(Error::input("points per box and parameter samples must be at least 1"));
    }
    if !(cfg.epsilon.is_finite() && cfg.epsilon >= 0.0) {
        return Err(Error::input(format!("perturbation radius {} must be >= 0", cfg.epsilon)));
    }
    let samples = cfg
        .points_per_box
        .checked_mul(cfg.param_samples)
        .filter(|&s| s <= u32::MAX as usize)
        .ok_or_else(|| Error::input("M·N does not fit in a 32-bit count"))? as u32;

    let n = p.dim();
    let cloud = TestCloud::halton(n, cfg.points_per_box)?;
    // identical draws: evaluate each point once and weight the hit by M
    let collapse = cfg.epsilon == 0.0 && pm.is_degenerate();
    let fixed = match pm.mode() {
        ParamMode::Dirac(v) => v,
        _ => pm.bounds().0,
    };

    let columns: Vec<Result<Column>> = (0..p.len())
        .into_par_iter()
        .map(|l| {
            let b = p.leaf(l);
            let mut x = [0.0; MAX_DIM];
            let mut y = [0.0; MAX_DIM];
            let mut hits: Vec<u32> = Vec::with_capacity(samples as usize);
            let mut leaked = 0u32;
            if collapse {
                for j in 0..cloud.len() {
                    cloud.point_in(&b, j, &mut x[..n]);
                    let landed = sys.eval(&x[..n], fixed, &mut y[..n]).ok().and_then(|_| p.locate(&y[..n]));
                    match landed {
                        Some(k) => hits.extend(std::iter::repeat_n(k as u32, cfg.param_samples)),
                        None => leaked += cfg.param_samples as u32,
                    }
                }
            } else {
                let lambdas = pm.draw_stream(cfg.param_samples, cfg.seed, 2 * l as u64)?;
                let mut rng = stream_rng(cfg.seed, 2 * l as u64 + 1);
                let mut offset = [0.0; MAX_DIM];
                for &lambda in &lambdas {
                    for j in 0..cloud.len() {
                        cloud.point_in(&b, j, &mut x[..n]);
                        let landed = match sys.eval(&x[..n], lambda, &mut y[..n]) {
                            Ok(()) => {
                                if cfg.epsilon > 0.0 {
                                    ball_offset(&mut rng, cfg.epsilon, &mut offset[..n]);
                                    for i in 0..n {
                                        y[i] += offset[i];
                                    }
                                }
                                p.locate(&y[..n])
                            }
                            Err(_) => None,
                        };
                        match landed {
                            Some(k) => hits.push(k as u32),
                            None => leaked += 1,
                        }
                    }
                }
            }
            hits.sort_unstable();
            let mut entries: Vec<(u32, u32)> = Vec::new();
            for k in hits {
                match entries.last_mut() {
                    Some((kk, c)) if *kk == k => *c += 1,
                    _ => entries.push((k, 1)),
                }
            }
            Ok((entries, leaked))
        })
        .collect();
    let columns = columns.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(TransitionMatrix::from_columns(p.len(), columns, samples, cfg.clone()))
}

/// Transition matrix of the deterministic map `f(·, λ̄)`: [`assemble`] with a
/// fixed parameter and a single draw per test point.
pub fn deterministic_matrix(
    p: &BoxPartition,
    sys: &dyn DynamicalSystem,
    lambda: f64,
    points_per_box: usize,
) -> Result<TransitionMatrix> {
    let pm = ParameterModel::new(lambda, lambda, ParamMode::Dirac(lambda))?;
    let cfg = AssemblyConfig {
        points_per_box,
        param_samples: 1,
        epsilon: 0.0,
        seed: 0,
    };
    assemble(p, sys, &pm, &cfg)
}

/// Stopping rule for [`invariant_measure`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerOptions {
    /// ℓ¹ tolerance on `‖P̂α − α‖`.
    pub tol: f64,
    pub max_iter: usize,
    /// Longest cycle of iterates that is averaged when plain iteration
    /// oscillates.
    pub max_period: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions {
            tol: 1e-10,
            max_iter: 100_000,
            max_period: 32,
        }
    }
}

/// Normalized stationary vector of the column-renormalized matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureVector {
    /// One weight per box of the covering; dropped boxes carry 0.
    pub weights: Vec<f64>,
    /// `‖P̂α − α‖₁` of the returned vector.
    pub residual: f64,
    pub iterations: usize,
    /// Whether `residual < tol`.
    pub converged: bool,
    /// Number of iterates averaged (1 unless the chain is periodic).
    pub period: usize,
    /// Boxes removed because all of their mass leaked.
    pub dropped: Vec<usize>,
}

impl MeasureVector {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Column-renormalized matrix in row-major form over the retained boxes.
struct Renormalized {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl Renormalized {
    fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().with_min_len(1024).enumerate().for_each(|(k, yk)| {
            let range = self.row_ptr[k]..self.row_ptr[k + 1];
            *yk = self.cols[range.clone()]
                .iter()
                .zip(&self.vals[range])
                .map(|(&l, &v)| v * x[l as usize])
                .sum();
        });
    }
}

/// Drops boxes whose columns retain no mass (repeatedly, since dropping a
/// box removes its row from every other column) and renormalizes the rest.
fn renormalize(p: &TransitionMatrix) -> Result<(Renormalized, Vec<usize>, Vec<usize>)> {
    let d = p.dim();
    let mut active = vec![true; d];
    loop {
        let mut changed = false;
        for l in 0..d {
            if active[l] && !p.column_counts(l).any(|(k, c)| c > 0 && active[k]) {
                active[l] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let kept: Vec<usize> = (0..d).filter(|&l| active[l]).collect();
    let dropped: Vec<usize> = (0..d).filter(|&l| !active[l]).collect();
    if kept.is_empty() {
        return Err(Error::input("every column of the transition matrix leaks all of its mass"));
    }
    let mut new_index = vec![u32::MAX; d];
    for (i, &l) in kept.iter().enumerate() {
        new_index[l] = i as u32;
    }

    let m = kept.len();
    let mut row_len = vec![0usize; m];
    let mut entries: Vec<(u32, u32, f64)> = Vec::with_capacity(p.nnz());
    for (new_l, &l) in kept.iter().enumerate() {
        let retained: u64 = p
            .column_counts(l)
            .filter(|&(k, _)| active[k])
            .map(|(_, c)| c as u64)
            .sum();
        for (k, c) in p.column_counts(l).filter(|&(k, _)| active[k]) {
            let nk = new_index[k];
            row_len[nk as usize] += 1;
            entries.push((nk, new_l as u32, c as f64 / retained as f64));
        }
    }
    let mut row_ptr = vec![0usize; m + 1];
    for k in 0..m {
        row_ptr[k + 1] = row_ptr[k] + row_len[k];
    }
    let mut fill = row_ptr.clone();
    let mut cols = vec![0u32; entries.len()];
    let mut vals = vec![0.0; entries.len()];
    // columns are visited in ascending order, so each row stays sorted by column
    for (k, l, v) in entries {
        let slot = &mut fill[k as usize];
        cols[*slot] = l;
        vals[*slot] = v;
        *slot += 1;
    }
    Ok((Renormalized { row_ptr, cols, vals }, kept, dropped))
}

fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn normalize(x: &mut [f64]) {
    let s: f64 = x.iter().sum();
    if s > 0.0 {
        x.iter_mut().for_each(|v| *v /= s);
    }
}

/// How often the iterate history is scanned for a cycle.
const PERIOD_CHECK_EVERY: usize = 25;

/// Stationary vector of `P` by power iteration from the uniform vector.
///
/// Columns are renormalized to discard leakage. If the iterates settle into
/// a cycle of length `p <= max_period` (a periodic chain) rather than a fixed
/// point, the mean of one full cycle is returned instead, which is exactly
/// invariant once the cycle has converged.
pub fn invariant_measure(p: &TransitionMatrix, opts: &PowerOptions) -> Result<MeasureVector> {
    if !(opts.tol.is_finite() && opts.tol > 0.0) {
        return Err(Error::input(format!("tolerance {} must be positive", opts.tol)));
    }
    let (mat, kept, dropped) = renormalize(p)?;
    if !dropped.is_empty() {
        log::warn!("dropped {} boxes whose images all left the covering", dropped.len());
    }
    let m = mat.dim();
    let expand = |alpha: &[f64]| {
        let mut w = vec![0.0; p.dim()];
        for (i, &l) in kept.iter().enumerate() {
            w[l] = alpha[i];
        }
        w
    };

    let max_period = opts.max_period.max(1);
    let mut history: VecDeque<Vec<f64>> = VecDeque::with_capacity(max_period + 1);
    let mut alpha = vec![1.0 / m as f64; m];
    let mut next = vec![0.0; m];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        mat.apply(&alpha, &mut next);
        normalize(&mut next);
        residual = l1_diff(&next, &alpha);
        if residual < opts.tol {
            return Ok(MeasureVector {
                weights: expand(&alpha),
                residual,
                iterations,
                converged: true,
                period: 1,
                dropped,
            });
        }
        iterations += 1;
        if history.len() == max_period + 1 {
            history.pop_front();
        }
        history.push_back(std::mem::replace(&mut alpha, next.clone()));

        if max_period > 1 && iterations % PERIOD_CHECK_EVERY == 0 && history.len() == max_period + 1 {
            if let Some(found) = cycle_average(&mat, &history, &alpha, opts.tol) {
                let (avg, period, res) = found;
                return Ok(MeasureVector {
                    weights: expand(&avg),
                    residual: res,
                    iterations,
                    converged: true,
                    period,
                    dropped,
                });
            }
        }
    }
    log::warn!("power iteration stopped at {iterations} iterations with residual {residual:e}");
    Ok(MeasureVector {
        weights: expand(&alpha),
        residual,
        iterations,
        converged: false,
        period: 1,
        dropped,
    })
}

/// Looks for the shortest cycle `p >= 2` with `‖α_t − α_{t−p}‖ < p·tol`
/// and returns the cycle mean when its residual is below `tol`.
fn cycle_average(
    mat: &Renormalized,
    history: &VecDeque<Vec<f64>>,
    current: &[f64],
    tol: f64,
) -> Option<(Vec<f64>, usize, f64)> {
    let len = history.len();
    for period in 2..len {
        let back = &history[len - period];
        if l1_diff(current, back) >= period as f64 * tol {
            continue;
        }
        let mut avg = current.to_vec();
        for past in history.iter().skip(len - period + 1) {
            avg.iter_mut().zip(past).for_each(|(a, v)| *a += v);
        }
        avg.iter_mut().for_each(|a| *a /= period as f64);
        normalize(&mut avg);
        let mut image = vec![0.0; avg.len()];
        mat.apply(&avg, &mut image);
        normalize(&mut image);
        let res = l1_diff(&image, &avg);
        if res < tol {
            return Some((avg, period, res));
        }
    }
    None
}

/// `‖P̂α − α‖₁` for a weight vector over all boxes of `p`.
pub fn fixed_point_residual(p: &TransitionMatrix, weights: &[f64]) -> Result<f64> {
    let (mat, kept, _) = renormalize(p)?;
    let alpha: Vec<f64> = kept.iter().map(|&l| weights[l]).collect();
    let mut image = vec![0.0; alpha.len()];
    mat.apply(&alpha, &mut image);
    Ok(l1_diff(&image, &alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DiscreteMap;
    use crate::geometry::HyperBox;

    fn interval_partition(depth: u32) -> BoxPartition {
        let mut p = BoxPartition::new(HyperBox::from_bounds(&[0.0], &[1.0]).unwrap());
        for _ in 0..depth {
            p.subdivide_all().unwrap();
        }
        p
    }

    fn doubling() -> DiscreteMap<impl Fn(&[f64], f64, &mut [f64]) + Send + Sync> {
        DiscreteMap::new("doubling", 1, |x, _l, out| out[0] = (2.0 * x[0]).rem_euclid(1.0)).unwrap()
    }

    #[test]
    fn identity_gives_identity_matrix() {
        let id = DiscreteMap::new("id", 2, |x, _l, out| out.copy_from_slice(x)).unwrap();
        let mut p = BoxPartition::new(HyperBox::from_bounds(&[0.0, 0.0], &[1.0, 1.0]).unwrap());
        for _ in 0..4 {
            p.subdivide_all().unwrap();
        }
        let pm = ParameterModel::new(0.0, 1.0, ParamMode::Uniform).unwrap();
        let cfg = AssemblyConfig {
            points_per_box: 8,
            param_samples: 3,
            ..Default::default()
        };
        let m = assemble(&p, &id, &pm, &cfg).unwrap();
        for l in 0..p.len() {
            assert_eq!(m.column(l).collect::<Vec<_>>(), vec![(l, 1.0)]);
            assert_eq!(m.leakage(l), 0.0);
        }
    }

    #[test]
    fn constant_map_fills_one_row() {
        let c = DiscreteMap::new("c", 1, |_x, _l, out| out[0] = 0.3).unwrap();
        let p = interval_partition(3);
        let k = p.locate(&[0.3]).unwrap();
        let m = deterministic_matrix(&p, &c, 0.0, 16).unwrap();
        for l in 0..p.len() {
            assert_eq!(m.entry(k, l), 1.0);
            assert!(m.column_balanced(l));
        }
    }

    #[test]
    fn leaked_and_escaped_samples_are_counted() {
        let out = DiscreteMap::new("shift", 1, |x, _l, o| o[0] = x[0] + 0.5).unwrap();
        let p = interval_partition(2);
        let m = deterministic_matrix(&p, &out, 0.0, 100).unwrap();
        assert!(m.all_columns_balanced());
        // the top two quarters map beyond 1
        assert_eq!(m.leakage(3), 1.0);
        assert_eq!(m.leakage(2), 1.0);
        assert_eq!(m.leakage(0), 0.0);

        let blow = DiscreteMap::new("nan", 1, |_x, _l, o| o[0] = f64::INFINITY).unwrap();
        let m = deterministic_matrix(&p, &blow, 0.0, 10).unwrap();
        assert!((0..4).all(|l| m.leakage(l) == 1.0 && m.column_balanced(l)));
    }

    /// Exact Ulam entries for the doubling map: `|f^{-1}(C_k) ∩ C_l| / |C_l|`,
    /// computed from the two preimage branches `x/2` and `(x+1)/2`.
    fn exact_doubling_entry(k: usize, l: usize, d: usize) -> f64 {
        let w = 1.0 / d as f64;
        let (ck0, ck1) = (k as f64 * w, (k + 1) as f64 * w);
        let (cl0, cl1) = (l as f64 * w, (l + 1) as f64 * w);
        let overlap = |a0: f64, a1: f64| (a1.min(cl1) - a0.max(cl0)).max(0.0);
        (overlap(ck0 / 2.0, ck1 / 2.0) + overlap((ck0 + 1.0) / 2.0, (ck1 + 1.0) / 2.0)) / w
    }

    #[test]
    fn doubling_map_matches_exact_ulam_matrix() {
        let p = interval_partition(1);
        let m = deterministic_matrix(&p, &doubling(), 0.0, 10_000).unwrap();
        for k in 0..2 {
            for l in 0..2 {
                let exact = exact_doubling_entry(k, l, 2);
                assert_eq!(exact, 0.5);
                assert!((m.entry(k, l) - exact).abs() < 0.02);
            }
        }
        let mu = invariant_measure(&m, &PowerOptions::default()).unwrap();
        assert!(mu.weights.iter().all(|w| (w - 0.5).abs() < 0.02));
        assert!(mu.converged);
    }

    #[test]
    fn identity_measure_is_uniform() {
        let triplets: Vec<_> = (0..4).map(|i| (i, i, 10)).collect();
        let m = TransitionMatrix::from_counts(4, 10, &triplets).unwrap();
        let mu = invariant_measure(&m, &PowerOptions::default()).unwrap();
        assert_eq!(mu.weights, vec![0.25; 4]);
        assert_eq!(mu.residual, 0.0);
    }

    #[test]
    fn absorbing_state() {
        let triplets: Vec<_> = (0..5).map(|l| (2, l, 7)).collect();
        let m = TransitionMatrix::from_counts(5, 7, &triplets).unwrap();
        let mu = invariant_measure(&m, &PowerOptions::default()).unwrap();
        assert_eq!(mu.weights, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn periodic_chain_is_averaged() {
        // 3-cycle 0→1→2→0 fed by a transient box 3
        let triplets = [(1, 0, 4), (2, 1, 4), (0, 2, 4), (0, 3, 2), (3, 3, 2)];
        let m = TransitionMatrix::from_counts(4, 4, &triplets).unwrap();
        let mu = invariant_measure(&m, &PowerOptions::default()).unwrap();
        assert!(mu.converged);
        assert_eq!(mu.period, 3);
        assert!(mu.residual < 1e-10);
        for w in &mu.weights[..3] {
            assert!((w - 1.0 / 3.0).abs() < 1e-9);
        }
        assert!(mu.weights[3] < 1e-9);
        assert!(fixed_point_residual(&m, &mu.weights).unwrap() < 1e-10);
    }

    #[test]
    fn full_leakage_columns_are_dropped() {
        // box 2 leaks everything; box 1 only feeds box 2, so it goes too
        let triplets = [(0, 0, 5), (2, 1, 5)];
        let m = TransitionMatrix::from_counts(3, 5, &triplets).unwrap();
        let mu = invariant_measure(&m, &PowerOptions::default()).unwrap();
        assert_eq!(mu.dropped, vec![1, 2]);
        assert_eq!(mu.weights, vec![1.0, 0.0, 0.0]);

        let all = TransitionMatrix::from_counts(2, 5, &[]).unwrap();
        assert!(invariant_measure(&all, &PowerOptions::default()).is_err());
    }

    #[test]
    fn non_convergence_is_flagged() {
        let triplets = [(1, 0, 1), (0, 1, 1)];
        let m = TransitionMatrix::from_counts(2, 1, &triplets).unwrap();
        // uniform start is already the cycle mean; break symmetry with a transient
        let m2 = TransitionMatrix::from_counts(3, 2, &[(1, 0, 2), (0, 1, 2), (0, 2, 2)]).unwrap();
        let opts = PowerOptions {
            max_period: 1,
            max_iter: 50,
            ..Default::default()
        };
        let mu = invariant_measure(&m2, &opts).unwrap();
        assert!(!mu.converged);
        assert!(mu.residual > 1e-10);
        assert!(invariant_measure(&m, &PowerOptions::default()).unwrap().converged);
    }

    #[test]
    fn assembly_is_reproducible_across_workers() {
        let sys = DiscreteMap::new("logistic", 1, |x, l, o| o[0] = l * x[0] * (1.0 - x[0])).unwrap();
        let p = interval_partition(6);
        let pm = ParameterModel::new(3.7, 3.9, ParamMode::TruncGauss { mu: 3.8, sigma2: 0.01 }).unwrap();
        let cfg = AssemblyConfig {
            points_per_box: 16,
            param_samples: 16,
            epsilon: 0.01,
            seed: 11,
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| assemble(&p, &sys, &pm, &cfg).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a, b);
        assert!(a.all_columns_balanced());
    }

    #[test]
    fn collapsed_dirac_matches_explicit_draws() {
        // a fixed parameter without perturbation counts every hit M times
        let p = interval_partition(3);
        let pm = ParameterModel::new(0.0, 1.0, ParamMode::Dirac(0.5)).unwrap();
        let cfg = AssemblyConfig {
            points_per_box: 8,
            param_samples: 4,
            epsilon: 0.0,
            seed: 0,
        };
        let m = assemble(&p, &doubling(), &pm, &cfg).unwrap();
        assert_eq!(m.samples_per_column(), 32);
        for l in 0..p.len() {
            assert!(m.column_counts(l).all(|(_, c)| c % 4 == 0));
        }
    }

    fn max_entry_distance(a: &TransitionMatrix, b: &TransitionMatrix) -> f64 {
        let (da, db) = (a.to_dense(), b.to_dense());
        da.iter()
            .flatten()
            .zip(db.iter().flatten())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn epsilon_perturbation_tends_to_unperturbed_matrix() {
        let p = interval_partition(3);
        let pm = ParameterModel::new(0.0, 0.0, ParamMode::Dirac(0.0)).unwrap();
        let with_eps = |epsilon| {
            let cfg = AssemblyConfig {
                points_per_box: 10_000,
                param_samples: 1,
                epsilon,
                seed: 5,
            };
            assemble(&p, &doubling(), &pm, &cfg).unwrap()
        };
        let base = with_eps(0.0);
        let d: Vec<f64> = [0.1, 0.01, 0.001].iter().map(|&e| max_entry_distance(&with_eps(e), &base)).collect();
        assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
    }

    #[test]
    fn monte_carlo_error_shrinks_like_inverse_sqrt() {
        // a uniformly random rotation spreads every box evenly: p_kl = 1/8
        let rot = DiscreteMap::new("rotation", 1, |x, l, o| o[0] = (x[0] + l).rem_euclid(1.0)).unwrap();
        let p = interval_partition(3);
        let pm = ParameterModel::new(0.0, 1.0, ParamMode::Uniform).unwrap();
        let rms = |m: usize| {
            let mut sq = 0.0;
            let mut count = 0.0;
            for seed in 0..16 {
                let cfg = AssemblyConfig {
                    points_per_box: 1,
                    param_samples: m,
                    epsilon: 0.0,
                    seed,
                };
                let mat = assemble(&p, &rot, &pm, &cfg).unwrap();
                for row in mat.to_dense() {
                    for v in row {
                        sq += (v - 0.125) * (v - 0.125);
                        count += 1.0;
                    }
                }
            }
            (sq / count).sqrt()
        };
        let ratio = rms(256) / rms(1024);
        assert!((1.0..=4.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn narrow_gaussian_matches_dirac() {
        let sys = DiscreteMap::new("logistic", 1, |x, l, o| o[0] = l * x[0] * (1.0 - x[0])).unwrap();
        let p = interval_partition(6);
        let cfg = AssemblyConfig {
            points_per_box: 64,
            param_samples: 16,
            epsilon: 0.0,
            seed: 2,
        };
        let gauss = ParameterModel::new(3.7, 3.9, ParamMode::TruncGauss { mu: 3.8, sigma2: 1e-14 }).unwrap();
        let dirac = ParameterModel::new(3.7, 3.9, ParamMode::Dirac(3.8)).unwrap();
        let a = assemble(&p, &sys, &gauss, &cfg).unwrap();
        let b = assemble(&p, &sys, &dirac, &cfg).unwrap();
        assert!(max_entry_distance(&a, &b) < 0.02);
    }

    #[test]
    fn ball_offsets_stay_in_ball() {
        let mut rng = stream_rng(3, 0);
        let mut v = [0.0; 3];
        let mut mean_r = 0.0;
        for _ in 0..20_000 {
            ball_offset(&mut rng, 0.5, &mut v);
            let r = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(r <= 0.5);
            mean_r += r;
        }
        // E|v| for a uniform 3-ball of radius ε is 3ε/4
        assert!((mean_r / 20_000.0 - 0.375).abs() < 0.005);
    }
}
