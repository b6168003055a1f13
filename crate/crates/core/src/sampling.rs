//! Test points inside boxes and parameter draws from `Λ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as NormalCdf};

use crate::error::{Error, Result};
use crate::geometry::HyperBox;

/// Radical inverse of `index` in `base`: the base-`b` digits of `index`
/// mirrored about the radix point.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv_base = 1.0 / base as f64;
    let mut scale = inv_base;
    let mut out = 0.0;
    while index > 0 {
        out += (index % base) as f64 * scale;
        index /= base;
        scale *= inv_base;
    }
    out
}

/// The first `n` primes.
pub fn first_primes(n: usize) -> Vec<u64> {
    let mut primes: Vec<u64> = Vec::with_capacity(n);
    let mut k = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|&&p| p * p <= k).all(|&p| k % p != 0) {
            primes.push(k);
        }
        k += 1;
    }
    primes
}

/// Multidimensional Halton sequence, coordinate `j` using the `j`-th prime.
///
/// The counter starts at 1, so emitted points lie in the open cube `(0,1)^n`.
#[derive(Clone, Debug)]
pub struct HaltonSequence {
    index: u64,
    bases: Vec<u64>,
}

impl HaltonSequence {
    pub fn new(dim: usize) -> Self {
        HaltonSequence {
            index: 1,
            bases: first_primes(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.bases.len()
    }

    /// Index of the next point to be emitted.
    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn bases(&self) -> &[u64] {
        &self.bases
    }

    /// Writes the current point into `out` and advances.
    pub fn next_into(&mut self, out: &mut [f64]) {
        for (o, &b) in out.iter_mut().zip(&self.bases) {
            *o = radical_inverse(self.index, b);
        }
        self.index += 1;
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        self.next_into(&mut p);
        p
    }
}

/// Maps a unit-cube point `u` into `b` as `center + radius * (2u - 1)`.
pub fn map_unit_point(b: &HyperBox, u: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = b.center()[i] + b.radius()[i] * (2.0 * u[i] - 1.0);
    }
}

/// Draws `count` Halton points from `h` and maps them into `b`.
pub fn sample_box(b: &HyperBox, count: usize, h: &mut HaltonSequence) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::input("sample count must be at least 1"));
    }
    if h.dim() != b.dim() {
        return Err(Error::input("Halton dimension does not match the box"));
    }
    let mut u = vec![0.0; b.dim()];
    Ok((0..count)
        .map(|_| {
            h.next_into(&mut u);
            let mut x = vec![0.0; b.dim()];
            map_unit_point(b, &u, &mut x);
            x
        })
        .collect())
}

/// The first `count` Halton points of the unit cube, reused for every box.
#[derive(Clone, Debug)]
pub struct TestCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl TestCloud {
    pub fn halton(dim: usize, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::input("points per box must be at least 1"));
        }
        let mut h = HaltonSequence::new(dim);
        let mut coords = vec![0.0; dim * count];
        for chunk in coords.chunks_exact_mut(dim) {
            h.next_into(chunk);
        }
        Ok(TestCloud { dim, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn unit_point(&self, j: usize) -> &[f64] {
        &self.coords[j * self.dim..(j + 1) * self.dim]
    }

    /// Writes test point `j` of box `b` into `out`.
    pub fn point_in(&self, b: &HyperBox, j: usize, out: &mut [f64]) {
        map_unit_point(b, self.unit_point(j), out);
    }
}

/// How parameters are chosen from `Λ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamMode {
    /// Uniform grid including both endpoints.
    Grid,
    /// A single fixed value.
    Dirac(f64),
    Uniform,
    /// Gaussian `N(mu, sigma2)` truncated to `Λ` and renormalized.
    TruncGauss { mu: f64, sigma2: f64 },
}

impl ParamMode {
    pub fn name(&self) -> &'static str {
        match self {
            ParamMode::Grid => "grid",
            ParamMode::Dirac(_) => "dirac",
            ParamMode::Uniform => "uniform",
            ParamMode::TruncGauss { .. } => "gauss",
        }
    }
}

/// The parameter set `Λ = [lo, hi]` together with a way of drawing from it.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterModel {
    lo: f64,
    hi: f64,
    mode: ParamMode,
}

/// Smallest Gaussian mass inside `Λ` accepted for rejection sampling.
const MIN_TRUNCATED_MASS: f64 = 1e-9;

impl ParameterModel {
    /// Validates the model. A Gaussian with zero variance becomes
    /// `Dirac(mu)`.
    pub fn new(lo: f64, hi: f64, mode: ParamMode) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::input(format!("parameter set [{lo}, {hi}] is not a valid interval")));
        }
        let mode = match mode {
            ParamMode::Dirac(v) if !(lo..=hi).contains(&v) => {
                return Err(Error::input(format!("fixed parameter {v} lies outside [{lo}, {hi}]")));
            }
            ParamMode::TruncGauss { mu, sigma2 } => {
                if !(mu.is_finite() && sigma2.is_finite() && sigma2 >= 0.0) {
                    return Err(Error::input(format!(
                        "Gaussian needs finite mu and sigma2 >= 0, got mu={mu} sigma2={sigma2}"
                    )));
                }
                if sigma2 == 0.0 {
                    return ParameterModel::new(lo, hi, ParamMode::Dirac(mu));
                }
                let normal = NormalCdf::new(mu, sigma2.sqrt())
                    .map_err(|e| Error::input(format!("Gaussian: {e}")))?;
                let mass = normal.cdf(hi) - normal.cdf(lo);
                if mass < MIN_TRUNCATED_MASS {
                    return Err(Error::input(format!(
                        "N({mu}, {sigma2}) has mass {mass:e} on [{lo}, {hi}]; cannot truncate"
                    )));
                }
                mode
            }
            other => other,
        };
        Ok(ParameterModel { lo, hi, mode })
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn mode(&self) -> ParamMode {
        self.mode
    }

    /// Whether every draw is the same value.
    pub fn is_degenerate(&self) -> bool {
        matches!(self.mode, ParamMode::Dirac(_)) || self.lo == self.hi
    }

    /// The `m`-point uniform grid on `Λ`; the midpoint when `m == 1`.
    pub fn grid(&self, m: usize) -> Vec<f64> {
        match m {
            0 => Vec::new(),
            1 => vec![0.5 * (self.lo + self.hi)],
            _ => {
                let step = (self.hi - self.lo) / (m - 1) as f64;
                (0..m)
                    .map(|i| if i == m - 1 { self.hi } else { self.lo + i as f64 * step })
                    .collect()
            }
        }
    }

    /// Draws `count` values using the random stream `stream` of `seed`.
    /// Grid and Dirac modes ignore the stream.
    pub fn draw_stream(&self, count: usize, seed: u64, stream: u64) -> Result<Vec<f64>> {
        if count == 0 {
            return Err(Error::input("parameter sample count must be at least 1"));
        }
        Ok(match self.mode {
            ParamMode::Grid => self.grid(count),
            ParamMode::Dirac(v) => vec![v; count],
            ParamMode::Uniform => {
                let mut rng = stream_rng(seed, stream);
                (0..count).map(|_| self.uniform(&mut rng)).collect()
            }
            ParamMode::TruncGauss { mu, sigma2 } => {
                let mut rng = stream_rng(seed, stream);
                // validated in `new`: sigma2 > 0 and enough mass on Λ
                let normal = Normal::new(mu, sigma2.sqrt()).expect("validated Gaussian");
                (0..count).map(|_| self.truncated(&normal, &mut rng)).collect()
            }
        })
    }

    fn uniform<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }

    fn truncated<R: Rng>(&self, normal: &Normal<f64>, rng: &mut R) -> f64 {
        loop {
            let v = normal.sample(rng);
            if (self.lo..=self.hi).contains(&v) {
                return v;
            }
        }
    }
}

/// Independent, reproducible random stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `count` parameters from `pm` with stream 0 of `seed`.
pub fn draw_parameters(pm: &ParameterModel, count: usize, seed: u64) -> Result<Vec<f64>> {
    pm.draw_stream(count, seed, 0)
}
