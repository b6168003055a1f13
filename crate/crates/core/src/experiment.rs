//! JSON-configured experiments: coverings, measures on them, and pictures.
//!
//! A config names a system, the box `Q`, the parameter interval `Λ`, one or
//! more coverings (each a subdivision run) and any number of measures, each
//! computed on one of the coverings. [`run_experiment`] writes
//!
//! - `covering_<name>.csv` (plus `covering_<name>_l<depth>.csv` for every snapshot depth)
//! - `stats_<name>.csv` with per-step box counts
//! - `measure_<name>.csv` and, on request, `matrix_<name>.txt`
//! - SVG pictures for every covering, snapshot and measure
//! - `summary.json`
//!
//! Every output depends only on the config, so reruns are byte-identical.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicalSystem, SystemRegistry, SystemSpec};
use crate::error::{Error, Result};
use crate::geometry::{BoxPartition, HyperBox, MAX_DIM};
use crate::io::{save_covering, save_matrix, save_stats, save_text, CoveringTable};
use crate::render::{render_svg, Colormap, RenderOptions};
use crate::sampling::{ParamMode, ParameterModel};
use crate::subdivision::{run_subdivision_with, StepStats, StopRule, SubdivisionConfig, SubdivisionOutcome};
use crate::transfer::{assemble, invariant_measure, AssemblyConfig, MeasureVector, PowerOptions, TransitionMatrix};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub center: Vec<f64>,
    pub radius: Vec<f64>,
}

impl BoxSpec {
    fn to_box(&self, field: &str) -> Result<HyperBox> {
        HyperBox::new(self.center.clone(), self.radius.clone()).map_err(|e| Error::config(field, e.to_string()))
    }
}

impl From<&HyperBox> for BoxSpec {
    fn from(b: &HyperBox) -> Self {
        BoxSpec {
            center: b.center().to_vec(),
            radius: b.radius().to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Grid,
    Dirac,
    Uniform,
    Gauss,
}

fn default_grid() -> ModeName {
    ModeName::Grid
}
fn default_subdivision_points() -> usize {
    32
}
fn default_grid_size() -> usize {
    16
}
fn default_measure_points() -> usize {
    64
}
fn default_param_samples() -> usize {
    64
}
fn default_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    100_000
}
fn default_projections() -> Vec<[usize; 2]> {
    vec![[0, 1]]
}
fn default_width() -> u32 {
    800
}
fn default_height() -> u32 {
    600
}
fn default_true() -> bool {
    true
}

/// One subdivision run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoveringSpec {
    pub name: String,
    /// Number of subdivision steps; exclusive with `epsilon`.
    #[serde(default)]
    pub depth: Option<u32>,
    /// Stop once the box diameter is below `epsilon * diam(Q)`.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Intermediate depths whose coverings are saved as well.
    #[serde(default)]
    pub snapshots: Vec<u32>,
    /// Open boxes `U` removed from `Q`.
    #[serde(default)]
    pub excluded: Vec<BoxSpec>,
    #[serde(default = "default_subdivision_points")]
    pub points_per_box: usize,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    /// `grid` (all of `Λ`) or `dirac` (the single value `mu`).
    #[serde(default = "default_grid")]
    pub param_mode: ModeName,
    #[serde(default)]
    pub mu: Option<f64>,
}

/// One invariant measure on a named covering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub name: String,
    pub covering: String,
    /// `dirac`, `uniform` or `gauss`.
    pub param_mode: ModeName,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub sigma2: Option<f64>,
    #[serde(default = "default_measure_points")]
    pub points_per_box: usize,
    #[serde(default = "default_param_samples")]
    pub param_samples: usize,
    #[serde(default)]
    pub epsilon: f64,
    /// Overrides the experiment seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub write_matrix: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderSpec {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Pairs of 0-based coordinate indices.
    #[serde(default = "default_projections")]
    pub projections: Vec<[usize; 2]>,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
    #[serde(default)]
    pub colormap: Colormap,
}

impl Default for RenderSpec {
    fn default() -> Self {
        RenderSpec {
            enabled: true,
            projections: default_projections(),
            width: default_width(),
            height: default_height(),
            colormap: Colormap::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    pub system: SystemSpec,
    /// The box `Q`.
    pub domain: BoxSpec,
    /// `Λ = [lo, hi]`.
    pub lambda: [f64; 2],
    #[serde(default)]
    pub seed: u64,
    pub coverings: Vec<CoveringSpec>,
    #[serde(default)]
    pub measures: Vec<MeasureSpec>,
    #[serde(default)]
    pub render: RenderSpec,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            what: "config",
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Replaces the experiment seed and every per-measure seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        for m in &mut self.measures {
            m.seed = None;
        }
    }

    pub fn covering(&self, name: &str) -> Result<&CoveringSpec> {
        self.coverings
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::config("coverings", format!("no covering named `{name}`")))
    }

    pub fn measure(&self, name: &str) -> Result<&MeasureSpec> {
        self.measures
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::config("measures", format!("no measure named `{name}`")))
    }
}

fn check_name(name: &str, field: &str, seen: &mut BTreeSet<String>) -> Result<()> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)) {
        return Err(Error::config(field, format!("`{name}` must be non-empty and use only [A-Za-z0-9_.-]")));
    }
    if !seen.insert(name.to_string()) {
        return Err(Error::config(field, format!("duplicate name `{name}`")));
    }
    Ok(())
}

/// A validated config with its system instantiated.
#[derive(Clone, Debug)]
pub struct Experiment {
    cfg: ExperimentConfig,
    system: Arc<dyn DynamicalSystem>,
    root: HyperBox,
}

impl Experiment {
    /// Validates `cfg` field by field and builds its system from `registry`.
    pub fn new(cfg: ExperimentConfig, registry: &SystemRegistry) -> Result<Self> {
        if cfg.version != CONFIG_VERSION {
            return Err(Error::config(
                "version",
                format!("unsupported version {} (expected {CONFIG_VERSION})", cfg.version),
            ));
        }
        let system = registry.build(&cfg.system)?;
        if cfg.domain.center.len() > MAX_DIM {
            return Err(Error::config("domain", format!("at most {MAX_DIM} dimensions are supported")));
        }
        let root = cfg.domain.to_box("domain")?;
        if root.dim() != system.dim() {
            return Err(Error::config(
                "domain",
                format!("`{}` is {}-dimensional but Q has {} coordinates", system.name(), system.dim(), root.dim()),
            ));
        }
        let [lo, hi] = cfg.lambda;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::config("lambda", format!("[{lo}, {hi}] is not an interval")));
        }
        let exp = Experiment { cfg, system, root };
        exp.validate_coverings()?;
        exp.validate_measures()?;
        exp.validate_render()?;
        Ok(exp)
    }

    pub fn load(path: &Path, registry: &SystemRegistry) -> Result<Self> {
        Experiment::new(ExperimentConfig::load(path)?, registry)
    }

    fn validate_coverings(&self) -> Result<()> {
        if self.cfg.coverings.is_empty() {
            return Err(Error::config("coverings", "at least one covering is required"));
        }
        let mut seen = BTreeSet::new();
        for (i, c) in self.cfg.coverings.iter().enumerate() {
            let field = |f: &str| format!("coverings[{i}].{f}");
            check_name(&c.name, &field("name"), &mut seen)?;
            for (j, u) in c.excluded.iter().enumerate() {
                let b = u.to_box(&field(&format!("excluded[{j}]")))?;
                if b.dim() != self.root.dim() {
                    return Err(Error::config(field(&format!("excluded[{j}]")), "dimension differs from Q"));
                }
            }
            if c.points_per_box == 0 {
                return Err(Error::config(field("points_per_box"), "must be at least 1"));
            }
            if c.grid_size == 0 {
                return Err(Error::config(field("grid_size"), "must be at least 1"));
            }
            let depth = self
                .subdivision_config(c)
                .and_then(|s| s.target_depth(&self.root))
                .map_err(|e| match e {
                    Error::Config { .. } => e,
                    other => Error::config(field("depth"), other.to_string()),
                })?;
            if let Some(&s) = c.snapshots.iter().find(|&&s| s == 0 || s > depth) {
                return Err(Error::config(field("snapshots"), format!("{s} is not within 1..={depth}")));
            }
            self.covering_parameters(c)
                .map_err(|e| Error::config(field("param_mode"), e.to_string()))?;
        }
        Ok(())
    }

    fn validate_measures(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (i, m) in self.cfg.measures.iter().enumerate() {
            let field = |f: &str| format!("measures[{i}].{f}");
            check_name(&m.name, &field("name"), &mut seen)?;
            if self.cfg.covering(&m.covering).is_err() {
                return Err(Error::config(field("covering"), format!("no covering named `{}`", m.covering)));
            }
            if m.points_per_box == 0 {
                return Err(Error::config(field("points_per_box"), "must be at least 1"));
            }
            if m.param_samples == 0 {
                return Err(Error::config(field("param_samples"), "must be at least 1"));
            }
            if !(m.epsilon.is_finite() && m.epsilon >= 0.0) {
                return Err(Error::config(field("epsilon"), "must be a finite number >= 0"));
            }
            if !(m.tol.is_finite() && m.tol > 0.0) {
                return Err(Error::config(field("tol"), "must be positive"));
            }
            if m.max_iter == 0 {
                return Err(Error::config(field("max_iter"), "must be at least 1"));
            }
            self.measure_parameters(m).map_err(|e| match e {
                Error::Config { .. } => e,
                other => Error::config(field("param_mode"), other.to_string()),
            })?;
        }
        Ok(())
    }

    fn validate_render(&self) -> Result<()> {
        let r = &self.cfg.render;
        if r.width == 0 || r.height == 0 {
            return Err(Error::config("render.width", "image size must be positive"));
        }
        let n = self.root.dim();
        for (i, &[a, b]) in r.projections.iter().enumerate() {
            if a >= n || b >= n || a == b {
                return Err(Error::config(
                    format!("render.projections[{i}]"),
                    format!("axes ({a}, {b}) are not two distinct coordinates below {n}"),
                ));
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn system(&self) -> &dyn DynamicalSystem {
        self.system.as_ref()
    }

    /// The box `Q`.
    pub fn root(&self) -> &HyperBox {
        &self.root
    }

    fn lambda_model(&self, mode: ParamMode) -> Result<ParameterModel> {
        ParameterModel::new(self.cfg.lambda[0], self.cfg.lambda[1], mode)
    }

    pub fn subdivision_config(&self, c: &CoveringSpec) -> Result<SubdivisionConfig> {
        let stop = match (c.depth, c.epsilon) {
            (Some(d), None) => StopRule::Depth(d),
            (None, Some(e)) => StopRule::DiameterRatio(e),
            _ => {
                return Err(Error::config(
                    format!("coverings.{}", c.name),
                    "give exactly one of `depth` and `epsilon`",
                ))
            }
        };
        Ok(SubdivisionConfig {
            stop,
            points_per_box: c.points_per_box,
            grid_size: c.grid_size,
        })
    }

    fn covering_parameters(&self, c: &CoveringSpec) -> Result<ParameterModel> {
        match c.param_mode {
            ModeName::Grid => self.lambda_model(ParamMode::Grid),
            ModeName::Dirac => {
                let mu = c.mu.ok_or_else(|| Error::input("`dirac` needs `mu`"))?;
                self.lambda_model(ParamMode::Dirac(mu))
            }
            other => Err(Error::input(format!("coverings use `grid` or `dirac`, not `{other:?}`"))),
        }
    }

    pub fn measure_parameters(&self, m: &MeasureSpec) -> Result<ParameterModel> {
        match m.param_mode {
            ModeName::Grid => Err(Error::input("measures use `dirac`, `uniform` or `gauss`")),
            ModeName::Dirac => {
                let mu = m.mu.ok_or_else(|| Error::input("`dirac` needs `mu`"))?;
                self.lambda_model(ParamMode::Dirac(mu))
            }
            ModeName::Uniform => self.lambda_model(ParamMode::Uniform),
            ModeName::Gauss => {
                let mu = m.mu.ok_or_else(|| Error::input("`gauss` needs `mu`"))?;
                let sigma2 = m.sigma2.ok_or_else(|| Error::input("`gauss` needs `sigma2`"))?;
                self.lambda_model(ParamMode::TruncGauss { mu, sigma2 })
            }
        }
    }

    pub fn excluded(&self, c: &CoveringSpec) -> Result<Vec<HyperBox>> {
        c.excluded.iter().map(|u| u.to_box("excluded")).collect()
    }

    /// Runs the subdivision for covering `c`, calling `observe` after each step.
    pub fn subdivide<F>(&self, c: &CoveringSpec, observe: F) -> Result<SubdivisionOutcome>
    where
        F: FnMut(&StepStats, &BoxPartition) -> Result<()>,
    {
        let pm = self.covering_parameters(c)?;
        let cfg = self.subdivision_config(c)?;
        run_subdivision_with(self.root.clone(), self.excluded(c)?, self.system(), &pm, &cfg, observe)
    }

    /// Rebuilds covering `c` from a saved table.
    pub fn partition_from_table(&self, c: &CoveringSpec, table: &CoveringTable) -> Result<BoxPartition> {
        if table.boxes.is_empty() {
            return Err(Error::EmptyCovering { depth: table.depth });
        }
        table.to_partition(self.root.clone(), self.excluded(c)?)
    }

    pub fn assembly_config(&self, m: &MeasureSpec) -> AssemblyConfig {
        AssemblyConfig {
            points_per_box: m.points_per_box,
            param_samples: m.param_samples,
            epsilon: m.epsilon,
            seed: m.seed.unwrap_or(self.cfg.seed),
        }
    }

    /// Assembles the transition matrix of `m` on `p` and solves for its
    /// invariant vector.
    pub fn measure(&self, m: &MeasureSpec, p: &BoxPartition) -> Result<(TransitionMatrix, MeasureVector)> {
        if p.is_empty() {
            return Err(Error::EmptyCovering { depth: p.depth() });
        }
        let pm = self.measure_parameters(m)?;
        let mut cfg = self.assembly_config(m);
        if pm.is_degenerate() && cfg.epsilon == 0.0 {
            // every draw is identical, so extra draws only repeat the same counts
            cfg.param_samples = 1;
        }
        let matrix = assemble(p, self.system(), &pm, &cfg)?;
        let opts = PowerOptions {
            tol: m.tol,
            max_iter: m.max_iter,
            ..Default::default()
        };
        let mu = invariant_measure(&matrix, &opts)?;
        Ok((matrix, mu))
    }

    pub fn render_options(&self) -> Vec<RenderOptions> {
        let r = &self.cfg.render;
        r.projections
            .iter()
            .map(|&[a, b]| RenderOptions {
                width: r.width,
                height: r.height,
                axes: (a, b),
                colormap: r.colormap,
            })
            .collect()
    }

    /// Writes one SVG per projection as `<dir>/<stem>[_x<a>x<b>].svg`;
    /// returns the file names and rectangle counts.
    pub fn render_files(
        &self,
        dir: &Path,
        stem: &str,
        boxes: &[HyperBox],
        measure: Option<&[f64]>,
    ) -> Result<Vec<(PathBuf, usize)>> {
        let opts = self.render_options();
        let single = opts.len() == 1 && self.root.dim() == 2;
        let mut out = Vec::new();
        for o in opts {
            let name = if single {
                format!("{stem}.svg")
            } else {
                format!("{stem}_x{}x{}.svg", o.axes.0 + 1, o.axes.1 + 1)
            };
            let img = render_svg(&self.root, boxes, measure, &o)?;
            save_text(&dir.join(&name), &img.svg)?;
            out.push((PathBuf::from(name), img.rects));
        }
        Ok(out)
    }
}

/// File names in reports are relative to the output directory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageReport {
    pub path: PathBuf,
    pub rects: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoveringReport {
    pub name: String,
    pub depth: u32,
    pub leaves: usize,
    /// Leaf counts after each saved snapshot, as `(depth, leaves)`.
    pub snapshots: Vec<(u32, usize)>,
    pub vanished_at: Option<u32>,
    pub csv: PathBuf,
    pub images: Vec<ImageReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeasureReport {
    pub name: String,
    pub covering: String,
    pub boxes: usize,
    pub nonzeros: usize,
    pub samples_per_column: u32,
    /// Fraction of all samples whose image left the covering.
    pub leakage: f64,
    /// Whether hits plus leakage account for every sample in every column.
    pub counts_balanced: bool,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub period: usize,
    pub dropped: usize,
    pub csv: PathBuf,
    pub images: Vec<ImageReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub coverings: Vec<CoveringReport>,
    pub measures: Vec<MeasureReport>,
}

impl ExperimentReport {
    pub fn covering(&self, name: &str) -> Option<&CoveringReport> {
        self.coverings.iter().find(|c| c.name == name)
    }

    pub fn measure(&self, name: &str) -> Option<&MeasureReport> {
        self.measures.iter().find(|m| m.name == name)
    }
}

fn image_reports(files: Vec<(PathBuf, usize)>) -> Vec<ImageReport> {
    files.into_iter().map(|(path, rects)| ImageReport { path, rects }).collect()
}

/// Computes covering `c` and writes its CSVs (and pictures when enabled)
/// into `out_dir`.
pub fn run_covering(exp: &Experiment, c: &CoveringSpec, out_dir: &Path) -> Result<(BoxPartition, CoveringReport)> {
    let render = exp.config().render.enabled;
    let mut snapshots = Vec::new();
    let outcome = exp.subdivide(c, |step, p| {
        if c.snapshots.contains(&step.step) {
            let stem = format!("covering_{}_l{}", c.name, step.step);
            save_covering(&out_dir.join(format!("{stem}.csv")), p, None)?;
            if render {
                let boxes: Vec<HyperBox> = p.leaves().collect();
                exp.render_files(out_dir, &stem, &boxes, None)?;
            }
            snapshots.push((step.step, p.len()));
        }
        Ok(())
    })?;
    save_stats(&out_dir.join(format!("stats_{}.csv", c.name)), &outcome.stats)?;
    let stem = format!("covering_{}", c.name);
    let csv = PathBuf::from(format!("{stem}.csv"));
    save_covering(&out_dir.join(&csv), &outcome.partition, None)?;
    let images = if render {
        let boxes: Vec<HyperBox> = outcome.partition.leaves().collect();
        image_reports(exp.render_files(out_dir, &stem, &boxes, None)?)
    } else {
        Vec::new()
    };
    let report = CoveringReport {
        name: c.name.clone(),
        depth: outcome.partition.depth(),
        leaves: outcome.partition.len(),
        snapshots,
        vanished_at: outcome.vanished_at,
        csv,
        images,
    };
    Ok((outcome.partition, report))
}

/// Computes measure `m` on `p` and writes its CSV (and matrix and pictures
/// when requested) into `out_dir`.
pub fn run_measure(exp: &Experiment, m: &MeasureSpec, p: &BoxPartition, out_dir: &Path) -> Result<MeasureReport> {
    let (matrix, mu) = exp.measure(m, p)?;
    if !mu.converged {
        log::warn!("measure `{}` did not converge (residual {:e})", m.name, mu.residual);
    }
    let stem = format!("measure_{}", m.name);
    let csv = PathBuf::from(format!("{stem}.csv"));
    save_covering(&out_dir.join(&csv), p, Some(&mu.weights))?;
    if m.write_matrix {
        save_matrix(&out_dir.join(format!("matrix_{}.txt", m.name)), &matrix)?;
    }
    let images = if exp.config().render.enabled {
        let boxes: Vec<HyperBox> = p.leaves().collect();
        image_reports(exp.render_files(out_dir, &stem, &boxes, Some(&mu.weights))?)
    } else {
        Vec::new()
    };
    Ok(MeasureReport {
        name: m.name.clone(),
        covering: m.covering.clone(),
        boxes: matrix.dim(),
        nonzeros: matrix.nnz(),
        samples_per_column: matrix.samples_per_column(),
        leakage: matrix.total_leakage(),
        counts_balanced: matrix.all_columns_balanced(),
        residual: mu.residual,
        iterations: mu.iterations,
        converged: mu.converged,
        period: mu.period,
        dropped: mu.dropped.len(),
        csv,
        images,
    })
}

/// Runs every covering, then every measure, writing all artifacts and
/// `summary.json` into `out_dir`.
///
/// A measure on a covering that vanished fails with
/// [`Error::EmptyCovering`]; the covering files are still written.
pub fn run_experiment(exp: &Experiment, out_dir: &Path) -> Result<ExperimentReport> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cfg = exp.config();
    let mut partitions = Vec::new();
    let mut report = ExperimentReport {
        name: cfg.name.clone(),
        coverings: Vec::new(),
        measures: Vec::new(),
    };
    for c in &cfg.coverings {
        log::info!("covering `{}`", c.name);
        let (p, r) = run_covering(exp, c, out_dir)?;
        partitions.push(p);
        report.coverings.push(r);
    }
    for m in &cfg.measures {
        log::info!("measure `{}` on covering `{}`", m.name, m.covering);
        let idx = cfg
            .coverings
            .iter()
            .position(|c| c.name == m.covering)
            .expect("validated reference");
        report.measures.push(run_measure(exp, m, &partitions[idx], out_dir)?);
    }
    let summary = serde_json::to_string_pretty(&report)?;
    save_text(&out_dir.join("summary.json"), &(summary + "\n"))?;
    Ok(report)
}
