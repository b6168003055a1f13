//! Boxes and the dyadic partition of an initial box `Q`.
//!
//! A [`BoxPartition`] stores its live leaves as bit-paths from the root. Bit
//! `j` (counted from the root) selects the low (`0`) or high (`1`) half of the
//! split at level `j`, which always bisects coordinate `j mod n`. Paths are
//! kept sorted, so leaf indices follow a depth-first, low-child-first order
//! and are stable for a given history of subdivisions and removals.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Deepest partition representable with `u64` bit-paths.
pub const MAX_DEPTH: u32 = 63;

/// Largest supported state dimension.
pub const MAX_DIM: usize = 8;

/// A closed generalized rectangle `{y : |y_i - c_i| <= r_i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperBox {
    center: Vec<f64>,
    radius: Vec<f64>,
}

impl HyperBox {
    pub fn new(center: Vec<f64>, radius: Vec<f64>) -> Result<Self> {
        if center.is_empty() || center.len() > MAX_DIM {
            return Err(Error::input(format!("box dimension must be in 1..={MAX_DIM}")));
        }
        if center.len() != radius.len() {
            return Err(Error::input(format!(
                "center has {} coordinates but radius has {}",
                center.len(),
                radius.len()
            )));
        }
        if let Some(c) = center.iter().find(|c| !c.is_finite()) {
            return Err(Error::input(format!("box center {c} is not finite")));
        }
        if let Some(r) = radius.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::input(format!("box radius {r} must be positive and finite")));
        }
        Ok(HyperBox { center, radius })
    }

    /// Builds the box `[lo_0, hi_0] x ... x [lo_{n-1}, hi_{n-1}]`.
    pub fn from_bounds(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::input("bounds have different lengths"));
        }
        let center = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let radius = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
        HyperBox::new(center, radius)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> &[f64] {
        &self.radius
    }

    pub fn lower(&self, i: usize) -> f64 {
        self.center[i] - self.radius[i]
    }

    pub fn upper(&self, i: usize) -> f64 {
        self.center[i] + self.radius[i]
    }

    /// Closed-box membership.
    pub fn contains(&self, y: &[f64]) -> bool {
        y.len() == self.dim()
            && y.iter()
                .zip(self.center.iter().zip(&self.radius))
                .all(|(y, (c, r))| (y - c).abs() <= *r)
    }

    /// Membership in the open interior.
    pub fn contains_open(&self, y: &[f64]) -> bool {
        y.len() == self.dim()
            && y.iter()
                .zip(self.center.iter().zip(&self.radius))
                .all(|(y, (c, r))| (y - c).abs() < *r)
    }

    /// Lebesgue measure.
    pub fn volume(&self) -> f64 {
        self.radius.iter().map(|r| 2.0 * r).product()
    }

    /// Euclidean diameter, `2 * |r|`.
    pub fn diameter(&self) -> f64 {
        2.0 * self.radius.iter().map(|r| r * r).sum::<f64>().sqrt()
    }

    /// Splits the box in half along coordinate `s`, returning `(low, high)`.
    pub fn bisect(&self, s: usize) -> Result<(HyperBox, HyperBox)> {
        if s >= self.dim() {
            return Err(Error::input(format!(
                "split coordinate {s} out of range for a {}-dimensional box",
                self.dim()
            )));
        }
        let half = 0.5 * self.radius[s];
        let mut low = self.clone();
        let mut high = self.clone();
        low.radius[s] = half;
        high.radius[s] = half;
        low.center[s] -= half;
        high.center[s] += half;
        Ok((low, high))
    }
}

/// Depth-`ℓ` binary bisection partition of a root box, holding the live leaves.
#[derive(Clone, Debug)]
pub struct BoxPartition {
    root: HyperBox,
    depth: u32,
    paths: Vec<u64>,
    excluded: Vec<HyperBox>,
}

impl BoxPartition {
    /// A depth-0 partition whose single leaf is `root`.
    pub fn new(root: HyperBox) -> Self {
        BoxPartition {
            root,
            depth: 0,
            paths: vec![0],
            excluded: Vec::new(),
        }
    }

    /// Attaches the open boxes of an excluded region `U`.
    ///
    /// A leaf whose center lies in some `U`-box is treated as removed from
    /// the domain: [`locate`](Self::locate) never returns it.
    pub fn with_excluded(mut self, excluded: Vec<HyperBox>) -> Result<Self> {
        if let Some(u) = excluded.iter().find(|u| u.dim() != self.root.dim()) {
            return Err(Error::input(format!(
                "excluded box has dimension {} but the root has {}",
                u.dim(),
                self.root.dim()
            )));
        }
        self.excluded = excluded;
        Ok(self)
    }

    /// Rebuilds a partition from an explicit list of depth-`depth` leaves,
    /// e.g. a covering read back from disk. Leaves are re-ordered into
    /// canonical index order.
    pub fn from_leaves(root: HyperBox, depth: u32, leaves: &[HyperBox]) -> Result<Self> {
        if depth > MAX_DEPTH {
            return Err(Error::input(format!("depth {depth} exceeds {MAX_DEPTH}")));
        }
        let mut part = BoxPartition {
            root,
            depth,
            paths: Vec::with_capacity(leaves.len()),
            excluded: Vec::new(),
        };
        let expected = part.leaf_radius();
        for leaf in leaves {
            if leaf.dim() != part.dim() {
                return Err(Error::input("leaf dimension does not match the root"));
            }
            let path = part.descend(leaf.center()).ok_or_else(|| {
                Error::input(format!("leaf center {:?} lies outside the root", leaf.center()))
            })?;
            let same_size = leaf
                .radius()
                .iter()
                .zip(&expected)
                .all(|(r, e)| (r - e).abs() <= 1e-9 * e);
            if !same_size {
                return Err(Error::input(format!(
                    "leaf radius {:?} does not match depth {depth} radius {expected:?}",
                    leaf.radius()
                )));
            }
            part.paths.push(path);
        }
        part.paths.sort_unstable();
        if part.paths.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::input("duplicate leaves"));
        }
        Ok(part)
    }

    pub fn root(&self) -> &HyperBox {
        &self.root
    }

    pub fn dim(&self) -> usize {
        self.root.dim()
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn excluded(&self) -> &[HyperBox] {
        &self.excluded
    }

    /// Bit-paths of the live leaves, in index order.
    pub fn paths(&self) -> &[u64] {
        &self.paths
    }

    /// Coordinate bisected at subdivision step `level`.
    pub fn split_axis(&self, level: u32) -> usize {
        level as usize % self.dim()
    }

    /// Radius shared by every leaf at the current depth.
    pub fn leaf_radius(&self) -> Vec<f64> {
        let mut r = self.root.radius().to_vec();
        for level in 0..self.depth {
            r[self.split_axis(level)] *= 0.5;
        }
        r
    }

    /// Diameter shared by every leaf at the current depth.
    pub fn leaf_diameter(&self) -> f64 {
        2.0 * self.leaf_radius().iter().map(|r| r * r).sum::<f64>().sqrt()
    }

    /// The box of leaf `i`.
    pub fn leaf(&self, i: usize) -> HyperBox {
        self.box_of_path(self.paths[i])
    }

    pub fn leaves(&self) -> impl ExactSizeIterator<Item = HyperBox> + '_ {
        self.paths.iter().map(|&p| self.box_of_path(p))
    }

    fn box_of_path(&self, path: u64) -> HyperBox {
        let mut b = self.root.clone();
        for level in 0..self.depth {
            let s = self.split_axis(level);
            let half = 0.5 * b.radius[s];
            b.radius[s] = half;
            if (path >> (self.depth - 1 - level)) & 1 == 0 {
                b.center[s] -= half;
            } else {
                b.center[s] += half;
            }
        }
        b
    }

    /// Integer cell coordinates of leaf `i` on the uniform depth-`ℓ` grid.
    pub fn grid_coords(&self, i: usize) -> Vec<u64> {
        let path = self.paths[i];
        let mut coords = vec![0u64; self.dim()];
        for level in 0..self.depth {
            let s = self.split_axis(level);
            coords[s] = (coords[s] << 1) | ((path >> (self.depth - 1 - level)) & 1);
        }
        coords
    }

    /// Whether leaf `i` lies in the excluded region (center-membership rule).
    pub fn is_excluded_leaf(&self, i: usize) -> bool {
        !self.excluded.is_empty() && self.center_excluded(&self.leaf(i))
    }

    fn center_excluded(&self, b: &HyperBox) -> bool {
        self.excluded.iter().any(|u| u.contains_open(b.center()))
    }

    /// Bit-path of the depth-`ℓ` cell containing `y`, ignoring pruning.
    /// A point on a split plane goes to the high side.
    fn descend(&self, y: &[f64]) -> Option<u64> {
        if !self.root.contains(y) {
            return None;
        }
        let n = self.dim();
        let mut c = [0.0; MAX_DIM];
        let mut r = [0.0; MAX_DIM];
        c[..n].copy_from_slice(self.root.center());
        r[..n].copy_from_slice(self.root.radius());
        let mut path = 0u64;
        for level in 0..self.depth {
            let s = self.split_axis(level);
            let half = 0.5 * r[s];
            r[s] = half;
            path <<= 1;
            if y[s] < c[s] {
                c[s] -= half;
            } else {
                c[s] += half;
                path |= 1;
            }
        }
        if !self.excluded.is_empty() && self.excluded.iter().any(|u| u.contains_open(&c[..n])) {
            return None;
        }
        Some(path)
    }

    /// Index of the live leaf containing `y`, or `None` if `y` is outside
    /// the root, in a pruned cell, or in an excluded leaf.
    pub fn locate(&self, y: &[f64]) -> Option<usize> {
        if y.len() != self.dim() {
            return None;
        }
        let path = self.descend(y)?;
        self.paths.binary_search(&path).ok()
    }

    /// Bisects every live leaf along coordinate `depth mod n`.
    pub fn subdivide_all(&mut self) -> Result<()> {
        if self.depth >= MAX_DEPTH {
            return Err(Error::input(format!("cannot subdivide beyond depth {MAX_DEPTH}")));
        }
        self.paths = self
            .paths
            .iter()
            .flat_map(|&p| [p << 1, (p << 1) | 1])
            .collect();
        self.depth += 1;
        Ok(())
    }

    /// Drops every leaf whose mark is `false`; survivors keep their order.
    pub fn remove_unmarked(&mut self, marks: &[bool]) -> Result<()> {
        if marks.len() != self.paths.len() {
            return Err(Error::input(format!(
                "{} marks for {} leaves",
                marks.len(),
                self.paths.len()
            )));
        }
        let mut keep = marks.iter();
        self.paths.retain(|_| *keep.next().unwrap());
        Ok(())
    }

    /// Drops the leaves at the given indices (any order, duplicates allowed).
    pub fn remove_indices(&mut self, indices: &[usize]) -> Result<()> {
        let mut marks = vec![true; self.len()];
        for &i in indices {
            *marks
                .get_mut(i)
                .ok_or_else(|| Error::input(format!("leaf index {i} out of range")))? = false;
        }
        self.remove_unmarked(&marks)
    }

    /// Summed volume of live leaves.
    pub fn volume(&self) -> f64 {
        let leaf: f64 = self.leaf_radius().iter().map(|r| 2.0 * r).product();
        leaf * self.len() as f64
    }

    /// True if every live leaf of `self` lies inside a live leaf of
    /// `coarser`, a partition of the same root at a depth not exceeding ours.
    pub fn is_refinement_of(&self, coarser: &BoxPartition) -> bool {
        if coarser.root != self.root || coarser.depth > self.depth {
            return false;
        }
        let shift = self.depth - coarser.depth;
        self.paths
            .iter()
            .all(|p| coarser.paths.binary_search(&(p >> shift)).is_ok())
    }

    /// Groups the given leaf indices into connected components, where two
    /// leaves are adjacent when their closed boxes touch (faces, edges or
    /// corners). Components are returned in order of their smallest index.
    pub fn connected_components(&self, members: &[usize]) -> Vec<Vec<usize>> {
        let n = self.dim();
        let coords: Vec<Vec<u64>> = members.iter().map(|&i| self.grid_coords(i)).collect();
        let lookup: HashMap<&[u64], usize> = coords
            .iter()
            .enumerate()
            .map(|(k, c)| (c.as_slice(), k))
            .collect();

        let mut seen = vec![false; members.len()];
        let mut components = Vec::new();
        let offsets = neighbor_offsets(n);
        let mut order: Vec<usize> = (0..members.len()).collect();
        order.sort_by_key(|&k| members[k]);
        for start in order {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut comp = Vec::new();
            while let Some(k) = stack.pop() {
                comp.push(members[k]);
                for off in &offsets {
                    let nb: Option<Vec<u64>> = coords[k]
                        .iter()
                        .zip(off)
                        .map(|(&c, &o)| c.checked_add_signed(o))
                        .collect();
                    if let Some(&j) = nb.as_deref().and_then(|nb| lookup.get(nb)) {
                        if !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
            comp.sort_unstable();
            components.push(comp);
        }
        components
    }
}

fn neighbor_offsets(n: usize) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v| {
                [-1i64, 0, 1].into_iter().map(move |d| {
                    let mut w = v.clone();
                    w.push(d);
                    w
                })
            })
            .collect();
    }
    out.retain(|v| v.iter().any(|&d| d != 0));
    out
}
