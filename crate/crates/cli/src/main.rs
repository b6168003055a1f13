//! Command-line runner for covering and invariant-measure experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qlattr_core::experiment::{run_covering, run_experiment, run_measure, Experiment, ExperimentConfig};
use qlattr_core::io::{load_covering, save_covering, save_text};
use qlattr_core::render::{render_svg, RenderOptions};
use qlattr_core::{BoxPartition, Error, SystemRegistry};

/// Environment variable holding the number of worker threads.
const WORKERS_ENV: &str = "QLATTR_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "qlattr", version, about = "Box coverings of parameter-uncertain attractors and their invariant measures")]
struct Cli {
    /// Worker threads (overrides QLATTR_WORKERS; default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,

    /// Override the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute coverings; prints `step,leaves_before,leaves_after`.
    Subdivide {
        #[command(flatten)]
        common: Common,
        /// Output directory, or a `.csv` file when a single covering is computed.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only this covering.
        #[arg(long)]
        name: Option<String>,
    },
    /// Compute invariant measures.
    Measure {
        #[command(flatten)]
        common: Common,
        /// Covering CSV to use instead of recomputing the covering.
        #[arg(long)]
        covering: Option<PathBuf>,
        /// Output directory, or a `.csv` file when a single measure is computed.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only this measure.
        #[arg(long)]
        name: Option<String>,
    },
    /// Draw a covering or measure CSV as SVG.
    Render {
        #[command(flatten)]
        common: Common,
        /// Covering or measure CSV.
        #[arg(long)]
        input: PathBuf,
        /// Image path (`.svg`) or output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Projection axes, e.g. `0,2`; defaults to the config's projections.
        #[arg(long, value_parser = parse_axes)]
        axes: Option<(usize, usize)>,
    },
    /// Run all coverings, measures and pictures of an experiment.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output directory (default: `out/<experiment name>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the registered systems.
    Systems,
}

fn parse_axes(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected two indices like `0,1`")?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidInput(_) | Error::Config { .. } | Error::Parse { .. } | Error::Json(_) => 2,
        Error::EmptyCovering { .. } => 3,
        Error::Io { .. } => 1,
    }
}

fn worker_count(flag: Option<usize>) -> Result<Option<usize>, Error> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(WORKERS_ENV) {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|e| {
                Error::Config {
                    field: WORKERS_ENV.into(),
                    message: format!("`{v}`: {e}"),
                }
            })?),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        return Err(Error::Config {
            field: WORKERS_ENV.into(),
            message: "must be at least 1".into(),
        });
    }
    Ok(n)
}

fn load(common: &Common, registry: &SystemRegistry) -> Result<Experiment, Error> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    Experiment::new(cfg, registry)
}

fn is_file(out: &Path, ext: &str) -> bool {
    out.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn default_dir(exp: &Experiment) -> PathBuf {
    Path::new("out").join(&exp.config().name)
}

fn subdivide(exp: &Experiment, out: Option<PathBuf>, name: Option<String>) -> Result<(), Error> {
    let cfg = exp.config();
    let selected: Vec<_> = match &name {
        Some(n) => vec![cfg.covering(n)?.clone()],
        None => cfg.coverings.clone(),
    };
    let out = out.unwrap_or_else(|| default_dir(exp));
    if is_file(&out, "csv") {
        let [c] = selected.as_slice() else {
            return Err(Error::InvalidInput(format!(
                "{} coverings selected; pick one with --name to write a single CSV",
                selected.len()
            )));
        };
        println!("step,leaves_before,leaves_after");
        let outcome = exp.subdivide(c, |s, _| {
            println!("{},{},{}", s.step, s.leaves_before, s.leaves_after);
            Ok(())
        })?;
        save_covering(&out, &outcome.partition, None)?;
        if let Some(depth) = outcome.vanished_at {
            return Err(Error::EmptyCovering { depth });
        }
        return Ok(());
    }
    for c in &selected {
        let (_, report) = run_covering(exp, c, &out)?;
        let stats = std::fs::read_to_string(out.join(format!("stats_{}.csv", c.name)))
            .map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
        print!("{stats}");
        eprintln!("covering `{}`: {} boxes at depth {} -> {}", c.name, report.leaves, report.depth, report.csv.display());
        if let Some(depth) = report.vanished_at {
            return Err(Error::EmptyCovering { depth });
        }
    }
    Ok(())
}

fn measure(exp: &Experiment, covering: Option<PathBuf>, out: Option<PathBuf>, name: Option<String>) -> Result<(), Error> {
    let cfg = exp.config();
    let selected: Vec<_> = match &name {
        Some(n) => vec![cfg.measure(n)?.clone()],
        None => cfg.measures.clone(),
    };
    if selected.is_empty() {
        return Err(Error::Config {
            field: "measures".into(),
            message: "the config defines no measures".into(),
        });
    }
    let table = covering.as_deref().map(load_covering).transpose()?;
    let partition_for = |covering_name: &str| -> Result<BoxPartition, Error> {
        let spec = cfg.covering(covering_name)?;
        match &table {
            Some(t) => exp.partition_from_table(spec, t),
            None => {
                let outcome = exp.subdivide(spec, |_, _| Ok(()))?;
                match outcome.vanished_at {
                    Some(depth) => Err(Error::EmptyCovering { depth }),
                    None => Ok(outcome.partition),
                }
            }
        }
    };
    let out = out.unwrap_or_else(|| default_dir(exp));
    println!("measure,boxes,leakage,residual,iterations,converged");
    let line = |name: &str, boxes: usize, leak: f64, res: f64, it: usize, conv: bool| {
        println!("{name},{boxes},{leak:.6e},{res:.3e},{it},{conv}");
    };
    if is_file(&out, "csv") {
        let [m] = selected.as_slice() else {
            return Err(Error::InvalidInput(format!(
                "{} measures selected; pick one with --name to write a single CSV",
                selected.len()
            )));
        };
        let p = partition_for(&m.covering)?;
        let (matrix, mu) = exp.measure(m, &p)?;
        save_covering(&out, &p, Some(&mu.weights))?;
        line(&m.name, matrix.dim(), matrix.total_leakage(), mu.residual, mu.iterations, mu.converged);
        return Ok(());
    }
    for m in &selected {
        let p = partition_for(&m.covering)?;
        let r = run_measure(exp, m, &p, &out)?;
        line(&r.name, r.boxes, r.leakage, r.residual, r.iterations, r.converged);
    }
    Ok(())
}

fn render(exp: &Experiment, input: &Path, out: Option<PathBuf>, axes: Option<(usize, usize)>) -> Result<(), Error> {
    let table = load_covering(input)?;
    let mut opts = exp.render_options();
    if let Some(axes) = axes {
        opts = vec![RenderOptions {
            axes,
            ..opts.into_iter().next().unwrap_or_default()
        }];
    }
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
    let out = out.unwrap_or_else(|| input.parent().unwrap_or(Path::new(".")).to_path_buf());
    let single_file = is_file(&out, "svg");
    if single_file && opts.len() != 1 {
        return Err(Error::InvalidInput(format!(
            "{} projections configured; pass --axes or an output directory",
            opts.len()
        )));
    }
    for o in &opts {
        let img = render_svg(exp.root(), &table.boxes, table.measure.as_deref(), o)?;
        let path = if single_file {
            out.clone()
        } else {
            out.join(format!("{stem}_x{}x{}.svg", o.axes.0 + 1, o.axes.1 + 1))
        };
        save_text(&path, &img.svg)?;
        println!("{}: {} rectangles", path.display(), img.rects);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = worker_count(cli.workers)? {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let registry = SystemRegistry::with_builtins();
    match cli.command {
        Command::Subdivide { common, out, name } => subdivide(&load(&common, &registry)?, out, name),
        Command::Measure {
            common,
            covering,
            out,
            name,
        } => measure(&load(&common, &registry)?, covering, out, name),
        Command::Render {
            common,
            input,
            out,
            axes,
        } => render(&load(&common, &registry)?, &input, out, axes),
        Command::Run { common, out } => {
            let exp = load(&common, &registry)?;
            let out = out.unwrap_or_else(|| default_dir(&exp));
            let report = run_experiment(&exp, &out)?;
            for c in &report.coverings {
                println!("covering {}: {} boxes at depth {}", c.name, c.leaves, c.depth);
            }
            for m in &report.measures {
                println!(
                    "measure {}: {} boxes, leakage {:.3e}, residual {:.3e}{}",
                    m.name,
                    m.boxes,
                    m.leakage,
                    m.residual,
                    if m.converged { "" } else { " (not converged)" }
                );
            }
            println!("wrote {}", out.join("summary.json").display());
            Ok(())
        }
        Command::Systems => {
            for name in registry.names() {
                println!("{name}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
