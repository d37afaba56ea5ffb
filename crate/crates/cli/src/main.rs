use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fockprep::circuit::{find_d0, Detector};
use fockprep::dispmat::{displacement_closed_form, displacement_recurrent, GuardReport};
use fockprep::error::{Error, Result};
use fockprep::expm::expm;
use fockprep::fock::{column_norms, CMatrix, Provenance, TruncatedOperator, C64};
use fockprep::sweep::{
    bin_reduce, read_csv, relative_improvement, run_sweep, scenario, GridRange, Reduction, SweepConfig,
};
use fockprep::tame::{
    displacement_generator, error_matrix, find_dimension_traced, tame_build, ErrorMatrixStats, TameConfig,
};
use serde::{Deserialize, Serialize};

/// Truncated Fock-space simulation of conditional state preparation.
#[derive(Parser)]
#[command(name = "fockprep", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Least working dimension d1 for which TAME is stable on d0 levels.
    FindDim(FindDim),
    /// Least d0 keeping the displaced two-mode squeezed vacuum within epsilon0.
    FindD0(FindD0),
    /// Build a truncated displacement matrix and write it as JSON.
    BuildDisp(BuildDisp),
    /// Error-matrix column statistics of a stored matrix.
    Verify(Verify),
    /// Column norms of the displacement matrix from every builder.
    Norms(Norms),
    /// Grid sweep over squeezing and displacement.
    Sweep(Sweep),
    /// Reduce stored sweep records to bin tables.
    Reduce(Reduce),
}

fn parse_complex(s: &str) -> std::result::Result<C64, String> {
    let mut parts = s.split(',');
    let re = parts.next().unwrap_or("").trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"))?;
    let im = match parts.next() {
        Some(p) => p.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"))?,
        None => 0.0,
    };
    if parts.next().is_some() {
        return Err(format!("{s:?}: expected RE or RE,IM"));
    }
    Ok(C64::new(re, im))
}

fn parse_range(s: &str) -> std::result::Result<GridRange, String> {
    let f: Vec<&str> = s.split(':').collect();
    if f.len() != 3 {
        return Err(format!("{s:?}: expected LO:HI:COUNT"));
    }
    let num = |x: &str| x.parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
    let count = f[2].parse::<usize>().map_err(|e| format!("{s:?}: {e}"))?;
    Ok(GridRange::new(num(f[0])?, num(f[1])?, count))
}

fn parse_detector(s: &str) -> std::result::Result<Detector, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
struct FindDim {
    /// Displacement as RE or RE,IM.
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    xi: C64,
    #[arg(long)]
    d0: usize,
    #[arg(long, default_value_t = 1e-13)]
    epsilon1: f64,
    /// Search depth factor: candidates stay below h * d0.
    #[arg(long, default_value_t = 10.0)]
    depth: f64,
    /// Print every comparison made.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct FindD0 {
    #[arg(long, default_value_t = 1.0)]
    gamma_star: f64,
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true, default_value = "1")]
    xi_star: C64,
    #[arg(long, default_value_t = 1e-13)]
    epsilon0: f64,
    #[arg(long, default_value_t = 200)]
    max_d0: usize,
    /// Working dimension of the TAME matrix used in the search.
    #[arg(long, default_value_t = 300)]
    d1_probe: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Tame,
    ClosedForm,
    Recurrent,
    Expm,
}

#[derive(Args)]
struct BuildDisp {
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    xi: C64,
    #[arg(long)]
    d0: usize,
    #[arg(long, value_enum, default_value = "tame")]
    method: Method,
    /// Working dimension for TAME; searched when absent.
    #[arg(long)]
    d1: Option<usize>,
    #[arg(long, default_value_t = 1e-13)]
    epsilon1: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Verify {
    /// Matrix file written by build-disp.
    #[arg(long)]
    input: PathBuf,
    /// CSV of column statistics; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Norms {
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    xi: C64,
    #[arg(long)]
    dim: usize,
    /// Working dimension for the TAME column; searched when absent.
    #[arg(long)]
    d1: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Sweep {
    /// JSON file mirroring the sweep configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// 101 x 101 grid instead of the full 1001 x 1001.
    #[arg(long)]
    desk: bool,
    #[arg(long, value_parser = parse_range)]
    gamma_range: Option<GridRange>,
    #[arg(long, value_parser = parse_range)]
    xi_range: Option<GridRange>,
    /// Transmission; repeatable.
    #[arg(long)]
    eta: Vec<f64>,
    /// fock:N, apd or cascade:M:N; repeatable.
    #[arg(long, value_parser = parse_detector)]
    detector: Vec<Detector>,
    #[arg(long)]
    d0: Option<usize>,
    #[arg(long)]
    epsilon0: Option<f64>,
    #[arg(long)]
    epsilon1: Option<f64>,
    /// Fidelity target theta; repeatable.
    #[arg(long, allow_hyphen_values = true)]
    target: Vec<f64>,
    #[arg(long)]
    bins: Option<usize>,
    /// Persisted d1 table.
    #[arg(long)]
    d1_cache: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    /// Max probability per bin of the nonlinear variance.
    M,
    /// Max probability per fidelity threshold.
    Fidelity,
    /// log10 improvement over the baseline detector per fidelity threshold.
    Improvement,
}

#[derive(Args)]
struct Reduce {
    /// Record CSV written by sweep.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    metric: Metric,
    #[arg(long)]
    eta: f64,
    /// Detectors to reduce; all present when absent.
    #[arg(long, value_parser = parse_detector)]
    detector: Vec<Detector>,
    /// Index of the fidelity target column.
    #[arg(long, default_value_t = 0)]
    target: usize,
    #[arg(long, default_value_t = fockprep::sweep::DEFAULT_BINS)]
    bins: usize,
    /// Fidelity thresholds; the default schedule when absent.
    #[arg(long)]
    tau: Vec<f64>,
    #[arg(long, value_parser = parse_detector, default_value = "apd")]
    baseline: Detector,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Matrix file exchanged between build-disp and verify.
#[derive(Serialize, Deserialize)]
struct MatrixFile {
    xi: [f64; 2],
    dim: usize,
    provenance: Provenance,
    d1: Option<usize>,
    /// Row-major `[re, im]` pairs.
    entries: Vec<[f64; 2]>,
    guard_report: Option<GuardReport>,
    error_stats: ErrorMatrixStats,
}

impl MatrixFile {
    fn matrix(&self) -> Result<TruncatedOperator> {
        if self.entries.len() != self.dim * self.dim {
            return Err(Error::Config(format!("matrix file holds {} entries for dim {}", self.entries.len(), self.dim)));
        }
        let m = CMatrix::from_shape_fn((self.dim, self.dim), |(i, j)| {
            let [re, im] = self.entries[i * self.dim + j];
            C64::new(re, im)
        });
        TruncatedOperator::new(m, self.provenance)
    }
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn tame_config(d0: usize, epsilon1: f64) -> TameConfig {
    TameConfig { epsilon1, ..TameConfig::new(d0) }
}

fn find_dim(a: FindDim) -> Result<()> {
    let config = TameConfig { h: a.depth, ..tame_config(a.d0, a.epsilon1) };
    let search = find_dimension_traced(a.xi, &config)?;
    if a.trace {
        for (q, diff) in &search.differences {
            eprintln!("q = {q}: max |M_q - M_q+1| = {diff:e}");
        }
    }
    println!("{}", search.d1);
    Ok(())
}

fn find_d0_cmd(a: FindD0) -> Result<()> {
    println!("{}", find_d0(a.gamma_star, a.xi_star, a.epsilon0, a.max_d0, a.d1_probe)?);
    Ok(())
}

fn build_matrix(xi: C64, d0: usize, method: Method, d1: Option<usize>, epsilon1: f64) -> Result<MatrixParts> {
    Ok(match method {
        Method::Tame => {
            let d1 = match d1 {
                Some(d1) => d1,
                None => find_dimension_traced(xi, &tame_config(d0, epsilon1))?.d1,
            };
            (tame_build(xi, d1, d0)?, Some(d1), None)
        }
        Method::ClosedForm => {
            let (g, report) = displacement_closed_form(xi, d0)?;
            (g, None, Some(report))
        }
        Method::Recurrent => (displacement_recurrent(xi, d0)?, None, None),
        Method::Expm => (expm(&displacement_generator(xi, d0)?)?, None, None),
    })
}

type MatrixParts = (TruncatedOperator, Option<usize>, Option<GuardReport>);

fn build_disp(a: BuildDisp) -> Result<()> {
    let (g, d1, guard_report) = build_matrix(a.xi, a.d0, a.method, a.d1, a.epsilon1)?;
    let (_, error_stats) = error_matrix(&g, a.xi)?;
    let file = MatrixFile {
        xi: [a.xi.re, a.xi.im],
        dim: g.dim(),
        provenance: g.provenance(),
        d1,
        entries: g.entries().iter().map(|z| [z.re, z.im]).collect(),
        guard_report,
        error_stats,
    };
    fs::write(&a.out, serde_json::to_string(&file)? + "\n")?;
    eprintln!("wrote {}x{} matrix to {}", file.dim, file.dim, a.out.display());
    Ok(())
}

fn verify(a: Verify) -> Result<()> {
    let file: MatrixFile = serde_json::from_str(&fs::read_to_string(&a.input)?)?;
    let g = file.matrix()?;
    let (_, stats) = error_matrix(&g, C64::new(file.xi[0], file.xi[1]))?;
    let mut w = csv::Writer::from_writer(sink(&a.out)?);
    w.write_record(["column", "mean", "std", "max"])?;
    for j in 0..g.dim() {
        w.write_record([j.to_string(), stats.mean[j].to_string(), stats.std[j].to_string(), stats.max[j].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn norms(a: Norms) -> Result<()> {
    let (closed, _) = displacement_closed_form(a.xi, a.dim)?;
    let recurrent = displacement_recurrent(a.xi, a.dim)?;
    let (tame, _, _) = build_matrix(a.xi, a.dim, Method::Tame, a.d1, 1e-13)?;
    let plain = expm(&displacement_generator(a.xi, a.dim)?)?;
    let cols: Vec<Vec<f64>> = [&closed, &recurrent, &tame, &plain].iter().map(|g| column_norms(g)).collect();
    let mut w = csv::Writer::from_writer(sink(&a.out)?);
    w.write_record(["column", "closed_form", "recurrent", "tame", "expm"])?;
    for j in 0..a.dim {
        let mut row = vec![j.to_string()];
        row.extend(cols.iter().map(|c| c[j].to_string()));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn sweep_config(a: &Sweep) -> Result<SweepConfig> {
    let mut c = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None if a.desk => SweepConfig::desk(),
        None => SweepConfig::default(),
    };
    if a.desk {
        let desk = SweepConfig::desk();
        c.gamma_range = desk.gamma_range;
        c.xi_range = desk.xi_range;
    }
    if let Some(r) = a.gamma_range {
        c.gamma_range = r;
    }
    if let Some(r) = a.xi_range {
        c.xi_range = r;
    }
    if !a.eta.is_empty() {
        c.etas = a.eta.clone();
    }
    if !a.detector.is_empty() {
        c.detectors = a.detector.clone();
    }
    if !a.target.is_empty() {
        c.targets = a.target.clone();
    }
    c.d0 = a.d0.or(c.d0);
    c.epsilon0 = a.epsilon0.unwrap_or(c.epsilon0);
    c.epsilon1 = a.epsilon1.unwrap_or(c.epsilon1);
    c.bins = a.bins.unwrap_or(c.bins);
    c.parallelism = a.jobs.unwrap_or(c.parallelism);
    c.d1_cache = a.d1_cache.clone().or(c.d1_cache);
    c.output_path = a.out.clone().or(c.output_path);
    c.validate()?;
    if c.output_path.is_none() {
        return Err(Error::Config("sweep needs an output path (--out or output_path)".into()));
    }
    Ok(c)
}

fn sweep(a: Sweep) -> Result<()> {
    let config = sweep_config(&a)?;
    let out = run_sweep(&config)?;
    eprintln!(
        "d0 = {}, {} records ({} computed, {} displacement builds) -> {}",
        out.d0,
        out.records.len(),
        out.computed,
        out.builds,
        config.output_path.as_deref().unwrap_or(Path::new("-")).display()
    );
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn reduce(a: Reduce) -> Result<()> {
    let (targets, records) = read_csv(&a.input)?;
    if matches!(a.metric, Metric::Fidelity | Metric::Improvement) && a.target >= targets.len() {
        return Err(Error::Config(format!("target index {} but the file has {} fidelity columns", a.target, targets.len())));
    }
    let taus = if a.tau.is_empty() { fockprep::sweep::default_taus() } else { a.tau.clone() };
    let mut detectors = a.detector.clone();
    if detectors.is_empty() {
        detectors = records.iter().filter(|r| r.eta == a.eta).map(|r| r.detector).collect();
        detectors.sort_by_key(|d| d.to_string());
        detectors.dedup();
    }
    let mut w = csv::Writer::from_writer(sink(&a.out)?);
    match a.metric {
        Metric::M | Metric::Fidelity => {
            let reduction = match a.metric {
                Metric::M => Reduction::NonlinearM { bins: a.bins },
                _ => Reduction::Fidelity { target: a.target, taus },
            };
            w.write_record(["detector", "lower", "upper", "max_probability"])?;
            for d in detectors {
                let recs = scenario(&records, a.eta, d);
                if recs.is_empty() {
                    return Err(Error::Config(format!("no records for {d} at eta = {}", a.eta)));
                }
                for row in bin_reduce(&recs, &reduction)? {
                    w.write_record([d.to_string(), row.lower.to_string(), row.upper.to_string(), opt(row.max_probability)])?;
                }
            }
        }
        Metric::Improvement => {
            let rows = relative_improvement(&records, a.eta, a.baseline, a.target, &taus)?;
            let mut header = vec!["tau".to_string()];
            if let Some(first) = rows.first() {
                header.extend(first.values.iter().map(|(d, _)| d.to_string()));
            }
            w.write_record(&header)?;
            for row in rows {
                let mut r = vec![row.tau.to_string()];
                r.extend(row.values.iter().map(|(_, l)| opt(*l)));
                w.write_record(r)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NoSolution { .. } => 3,
        Error::NonFinite { .. } | Error::Degenerate(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::FindDim(a) => find_dim(a),
        Command::FindD0(a) => find_d0_cmd(a),
        Command::BuildDisp(a) => build_disp(a),
        Command::Verify(a) => verify(a),
        Command::Norms(a) => norms(a),
        Command::Sweep(a) => sweep(a),
        Command::Reduce(a) => reduce(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
