//! Subdivision algorithm for coverings of `(Q, Λ)`-attractors.
//!
//! Each step bisects every live box, then keeps only the boxes hit by
//! `f(x, λ_k)` for some test point `x` of some live box and some grid value
//! `λ_k`. Marking the targets of a forward scatter is the same predicate as
//! discarding every box that no image reaches.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

use crate::dynamics::DynamicalSystem;
use crate::error::{Error, Result};
use crate::geometry::{BoxPartition, HyperBox, MAX_DEPTH, MAX_DIM};
use crate::sampling::{ParamMode, ParameterModel, TestCloud};

/// When to stop subdividing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StopRule {
    /// Stop after exactly this many subdivision steps.
    Depth(u32),
    /// Stop once `diam(C_ℓ) < ratio * diam(Q)`.
    DiameterRatio(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubdivisionConfig {
    pub stop: StopRule,
    /// Halton test points per box.
    pub points_per_box: usize,
    /// Number of uniform grid values of `Λ`.
    pub grid_size: usize,
}

impl Default for SubdivisionConfig {
    fn default() -> Self {
        SubdivisionConfig {
            stop: StopRule::Depth(12),
            points_per_box: 32,
            grid_size: 16,
        }
    }
}

impl SubdivisionConfig {
    /// Number of steps the stop rule amounts to for root box `q`.
    ///
    /// With cyclic bisection the leaf diameter after `ℓ` steps is known in
    /// advance, so a diameter ratio resolves to a depth before the run.
    pub fn target_depth(&self, q: &HyperBox) -> Result<u32> {
        match self.stop {
            StopRule::Depth(d) if d <= MAX_DEPTH => Ok(d),
            StopRule::Depth(d) => Err(Error::input(format!("depth {d} exceeds {MAX_DEPTH}"))),
            StopRule::DiameterRatio(eps) => {
                if !(eps.is_finite() && eps > 0.0) {
                    return Err(Error::input(format!("diameter ratio {eps} must be positive")));
                }
                let target = eps * q.diameter();
                let mut r = q.radius().to_vec();
                for depth in 0..=MAX_DEPTH {
                    let diam = 2.0 * r.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if diam < target {
                        return Ok(depth);
                    }
                    r[depth as usize % q.dim()] *= 0.5;
                }
                Err(Error::input(format!("diameter ratio {eps} needs more than {MAX_DEPTH} steps")))
            }
        }
    }
}

/// Box counts for one subdivision step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepStats {
    /// Depth reached by this step.
    pub step: u32,
    /// Leaves after bisection.
    pub leaves_before: usize,
    /// Leaves surviving selection.
    pub leaves_after: usize,
}

impl StepStats {
    pub fn kept_fraction(&self) -> f64 {
        if self.leaves_before == 0 {
            0.0
        } else {
            self.leaves_after as f64 / self.leaves_before as f64
        }
    }
}

/// Marks every live leaf hit by an image of a test point, then removes the
/// rest. Excluded leaves neither send nor receive images. Returns the number
/// of leaves kept.
pub fn selection_step(
    p: &mut BoxPartition,
    sys: &dyn DynamicalSystem,
    lambdas: &[f64],
    cloud: &TestCloud,
) -> Result<usize> {
    if lambdas.is_empty() {
        return Err(Error::input("selection needs at least one parameter value"));
    }
    if sys.dim() != p.dim() {
        return Err(Error::input(format!(
            "system `{}` has dimension {} but the partition has {}",
            sys.name(),
            sys.dim(),
            p.dim()
        )));
    }
    let n = p.dim();
    let marks: Vec<AtomicBool> = (0..p.len()).map(|_| AtomicBool::new(false)).collect();
    {
        let part = &*p;
        (0..part.len()).into_par_iter().for_each(|l| {
            if part.is_excluded_leaf(l) {
                return;
            }
            let b = part.leaf(l);
            let mut x = [0.0; MAX_DIM];
            let mut y = [0.0; MAX_DIM];
            for j in 0..cloud.len() {
                cloud.point_in(&b, j, &mut x[..n]);
                for &lambda in lambdas {
                    if sys.eval(&x[..n], lambda, &mut y[..n]).is_err() {
                        continue;
                    }
                    if let Some(k) = part.locate(&y[..n]) {
                        marks[k].store(true, Ordering::Relaxed);
                    }
                }
            }
        });
    }
    let marks: Vec<bool> = marks.into_iter().map(AtomicBool::into_inner).collect();
    p.remove_unmarked(&marks)?;
    Ok(p.len())
}

/// Result of [`run_subdivision`].
#[derive(Clone, Debug)]
pub struct SubdivisionOutcome {
    pub partition: BoxPartition,
    pub stats: Vec<StepStats>,
    /// Depth at which every box was discarded, if that happened.
    pub vanished_at: Option<u32>,
}

/// Parameter values used by selection: the `Λ` grid, or the single fixed value.
pub fn selection_parameters(pm: &ParameterModel, grid_size: usize) -> Result<Vec<f64>> {
    match pm.mode() {
        ParamMode::Grid => {
            if grid_size == 0 {
                return Err(Error::input("grid size must be at least 1"));
            }
            Ok(pm.grid(grid_size))
        }
        ParamMode::Dirac(v) => Ok(vec![v]),
        other => Err(Error::input(format!(
            "subdivision uses a grid or fixed parameter, not `{}`",
            other.name()
        ))),
    }
}

/// Runs the subdivision algorithm from the single box `q`.
pub fn run_subdivision(
    q: HyperBox,
    excluded: Vec<HyperBox>,
    sys: &dyn DynamicalSystem,
    pm: &ParameterModel,
    cfg: &SubdivisionConfig,
) -> Result<SubdivisionOutcome> {
    run_subdivision_with(q, excluded, sys, pm, cfg, |_, _| Ok(()))
}

/// Like [`run_subdivision`], calling `observe` after every step.
pub fn run_subdivision_with<F>(
    q: HyperBox,
    excluded: Vec<HyperBox>,
    sys: &dyn DynamicalSystem,
    pm: &ParameterModel,
    cfg: &SubdivisionConfig,
    mut observe: F,
) -> Result<SubdivisionOutcome>
where
    F: FnMut(&StepStats, &BoxPartition) -> Result<()>,
{
    if sys.dim() != q.dim() {
        return Err(Error::input(format!(
            "system `{}` has dimension {} but Q has {}",
            sys.name(),
            sys.dim(),
            q.dim()
        )));
    }
    let lambdas = selection_parameters(pm, cfg.grid_size)?;
    let cloud = TestCloud::halton(q.dim(), cfg.points_per_box)?;
    let target = cfg.target_depth(&q)?;

    let mut partition = BoxPartition::new(q).with_excluded(excluded)?;
    let mut stats = Vec::with_capacity(target as usize);
    let mut vanished_at = None;
    for _ in 0..target {
        partition.subdivide_all()?;
        let leaves_before = partition.len();
        let leaves_after = selection_step(&mut partition, sys, &lambdas, &cloud)?;
        let step = StepStats {
            step: partition.depth(),
            leaves_before,
            leaves_after,
        };
        log::debug!(
            "depth {}: {} -> {} boxes ({:.3} kept)",
            step.step,
            leaves_before,
            leaves_after,
            step.kept_fraction()
        );
        stats.push(step);
        observe(&step, &partition)?;
        if partition.is_empty() {
            log::warn!("covering vanished at depth {}", step.step);
            vanished_at = Some(step.step);
            break;
        }
    }
    Ok(SubdivisionOutcome {
        partition,
        stats,
        vanished_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DiscreteMap, SystemRegistry, SystemSpec};

    fn unit_interval() -> HyperBox {
        HyperBox::from_bounds(&[0.0], &[1.0]).unwrap()
    }

    fn fixed(v: f64) -> ParameterModel {
        ParameterModel::new(v, v, ParamMode::Dirac(v)).unwrap()
    }

    fn depth(d: u32, n: usize, m: usize) -> SubdivisionConfig {
        SubdivisionConfig {
            stop: StopRule::Depth(d),
            points_per_box: n,
            grid_size: m,
        }
    }

    #[test]
    fn identity_keeps_everything() {
        let id = DiscreteMap::new("id", 2, |x, _l, out| out.copy_from_slice(x)).unwrap();
        let q = HyperBox::from_bounds(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let out = run_subdivision(q, vec![], &id, &fixed(0.0), &depth(6, 4, 1)).unwrap();
        assert_eq!(out.partition.len(), 64);
        assert!(out.stats.iter().all(|s| s.leaves_before == s.leaves_after));
    }

    #[test]
    fn constant_map_keeps_one_leaf() {
        let c = DiscreteMap::new("const", 2, |_x, _l, out| out.copy_from_slice(&[0.3, 0.7])).unwrap();
        let q = HyperBox::from_bounds(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let mut p = BoxPartition::new(q);
        for _ in 0..4 {
            p.subdivide_all().unwrap();
        }
        let cloud = TestCloud::halton(2, 8).unwrap();
        selection_step(&mut p, &c, &[0.0], &cloud).unwrap();
        assert_eq!(p.len(), 1);
        assert!(p.leaf(0).contains(&[0.3, 0.7]));
    }

    /// Interval hull of `F^ℓ`-style iteration with one box of slack per step:
    /// if `Q_{ℓ-1} ⊆ [½-a, ½+a]` then `Q_ℓ ⊆ [½-a/2-w_ℓ, ½+a/2+w_ℓ]`.
    fn contraction_hull(depth: u32) -> (f64, f64) {
        let mut a: f64 = 0.5;
        for l in 1..=depth {
            a = (0.5 * a + 0.5f64.powi(l as i32)).min(0.5);
        }
        (0.5 - a, 0.5 + a)
    }

    #[test]
    fn contraction_converges_to_fixed_point() {
        let f = DiscreteMap::new("contract", 1, |x, _l, out| out[0] = 0.5 * x[0] + 0.25).unwrap();
        let mut seen_half = true;
        let out = run_subdivision_with(unit_interval(), vec![], &f, &fixed(0.0), &depth(10, 32, 1), |s, p| {
            seen_half &= p.locate(&[0.5]).is_some();
            let (lo, hi) = contraction_hull(s.step);
            for b in p.leaves() {
                assert!(b.lower(0) >= lo - 1e-12 && b.upper(0) <= hi + 1e-12);
            }
            Ok(())
        })
        .unwrap();
        assert!(seen_half);
        assert!(out.partition.len() <= 2);
        let half = out.partition.locate(&[0.5]).unwrap();
        assert_eq!(out.partition.leaf(half).radius(), &[0.5f64.powi(11)]);
    }

    #[test]
    fn epsilon_rule_maps_to_depth() {
        let q = HyperBox::from_bounds(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let cfg = SubdivisionConfig {
            stop: StopRule::DiameterRatio(0.26),
            ..Default::default()
        };
        // diam ratios: 1, 0.79, 0.5, 0.395, 0.25
        assert_eq!(cfg.target_depth(&q).unwrap(), 4);
        let cfg = SubdivisionConfig {
            stop: StopRule::DiameterRatio(0.0),
            ..Default::default()
        };
        assert!(cfg.target_depth(&q).is_err());
    }

    #[test]
    fn vanishing_covering_stops_early() {
        let away = DiscreteMap::new("away", 1, |_x, _l, out| out[0] = 5.0).unwrap();
        let out = run_subdivision(unit_interval(), vec![], &away, &fixed(0.0), &depth(8, 4, 1)).unwrap();
        assert_eq!(out.vanished_at, Some(1));
        assert!(out.partition.is_empty());
        assert_eq!(out.stats.len(), 1);
    }

    #[test]
    fn rejects_distribution_modes() {
        let henon = SystemRegistry::with_builtins().build(&SystemSpec::named("henon")).unwrap();
        let q = HyperBox::from_bounds(&[-3.0, -0.6], &[2.0, 0.6]).unwrap();
        let pm = ParameterModel::new(1.2, 1.4, ParamMode::Uniform).unwrap();
        assert!(run_subdivision(q, vec![], &*henon, &pm, &depth(2, 4, 4)).is_err());
    }

    fn henon_covering(lo: f64, hi: f64, d: u32) -> BoxPartition {
        let henon = SystemRegistry::with_builtins().build(&SystemSpec::named("henon")).unwrap();
        let q = HyperBox::from_bounds(&[-3.0, -0.6], &[2.0, 0.6]).unwrap();
        let pm = ParameterModel::new(lo, hi, ParamMode::Grid).unwrap();
        run_subdivision(q, vec![], &*henon, &pm, &depth(d, 16, 5)).unwrap().partition
    }

    fn henon_with_lambdas(lambdas: &[f64], d: u32) -> BoxPartition {
        let henon = SystemRegistry::with_builtins().build(&SystemSpec::named("henon")).unwrap();
        let q = HyperBox::from_bounds(&[-3.0, -0.6], &[2.0, 0.6]).unwrap();
        let cloud = TestCloud::halton(2, 16).unwrap();
        let mut p = BoxPartition::new(q);
        for _ in 0..d {
            p.subdivide_all().unwrap();
            selection_step(&mut p, &*henon, lambdas, &cloud).unwrap();
        }
        p
    }

    #[test]
    fn larger_lambda_never_shrinks_covering() {
        let small = henon_with_lambdas(&[1.2, 1.3], 10);
        let large = henon_with_lambdas(&[1.2, 1.3, 1.4], 10);
        assert!(small.is_refinement_of(&large));
        assert!(large.len() > small.len());
    }

    #[test]
    fn parallel_and_serial_agree() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| henon_covering(1.2, 1.4, 12))
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.paths(), b.paths());
        assert_eq!(a.paths(), henon_covering(1.2, 1.4, 12).paths());
    }
}
