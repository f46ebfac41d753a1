//! Command-line front end. Every subcommand validates all of its inputs
//! before touching the output directory, so a rejected invocation leaves no
//! files behind.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::approx::{search_certificate, verify_certificate, GoodApproxCertificate};
use crate::error::{LabError, Result};
use crate::gikn::{run_gikn, support_estimate, GiknOptions, GiknRun, PlanRecord, RunSummary, StageFailure, SupportEstimate};
use crate::measures::{distance_matrix, empirical_measure, exponent_integral, write_distance_matrix_csv, EmpiricalMeasure};
use crate::model::{SkewProductModel, Word};
use crate::orbits::{enumerate_periodic_orbits, fixed_point_near, read_spectrum_csv, PeriodicOrbit, SampleGrid};
use crate::pliss::{pliss_times, read_sequence_csv, write_selection_csv};
use crate::spectrum::{exponent_pairs_2d, exponent_spectrum, gap_curve_svg, pairs_svg, write_pairs_csv, ModelPair, DEFAULT_GAP_THRESHOLD};

pub const THREADS_ENV: &str = "CENTRAL_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "central-lab", version, about = "Central exponents of step skew products over the full shift")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Periodic-orbit exponent spectrum and gap curve.
    Spectrum(SpectrumArgs),
    /// Exponent pairs of a dominated two-coordinate model.
    Pairs2d(Pairs2dArgs),
    /// Pliss times of a sequence read from CSV.
    Pliss(PlissArgs),
    /// Search a good-approximation certificate between two periodic orbits.
    Approx(ApproxArgs),
    /// Run the concatenation construction towards a target exponent.
    Construct(ConstructArgs),
    /// Empirical measures of periodic orbits and their distance matrix.
    Measure(MeasureArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Model JSON; the built-in reference model when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write SVG plots.
    #[arg(long)]
    pub svg: bool,
    /// Recorded in manifests; every computation here is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 10)]
    pub max_period: usize,
    /// Largest gap still reported as a connected spectrum.
    #[arg(long, default_value_t = DEFAULT_GAP_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct Pairs2dArgs {
    /// Pair JSON `{first, second, log_shift}` (required).
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 8)]
    pub max_period: usize,
}

#[derive(Debug, Args)]
pub struct PlissArgs {
    #[command(flatten)]
    pub common: Common,
    /// CSV with a `value` column.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda0: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda1: f64,
}

#[derive(Debug, Args)]
pub struct ApproxArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub x_word: String,
    /// Guess for the fiber fixed point of `x_word`.
    #[arg(long)]
    pub x_fiber: f64,
    #[arg(long)]
    pub y_word: String,
    #[arg(long)]
    pub y_fiber: f64,
    #[arg(long)]
    pub gamma: f64,
    #[arg(long)]
    pub chi: f64,
}

#[derive(Debug, Args)]
pub struct ConstructArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, allow_negative_numbers = true)]
    pub target: f64,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value_t = 6)]
    pub stages: u32,
    /// Period cap of the enumeration the seeds are drawn from.
    #[arg(long, default_value_t = 10)]
    pub max_period: usize,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long, default_value_t = 32)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    #[command(flatten)]
    pub common: Common,
    /// Orbit list as written by `spectrum`; otherwise all orbits up to
    /// `--max-period`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    pub max_period: usize,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long, default_value_t = 32)]
    pub bins: usize,
}

/// Error reported on stderr as `{"error": kind, "message": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub error: String,
    pub message: String,
    #[serde(skip)]
    pub exit_code: i32,
}

impl CliError {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        Self {
            error: e.kind().to_string(),
            message: e.to_string(),
            exit_code: e.exit_code(),
        }
    }
}

impl From<StageFailure> for CliError {
    fn from(f: StageFailure) -> Self {
        Self {
            error: f.kind,
            message: format!("stage {}: {}", f.stage, f.message),
            exit_code: f.exit_code,
        }
    }
}

/// Size the global worker pool from `CENTRAL_LAB_THREADS` when set.
pub fn configure_threads() -> std::result::Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::from(LabError::Parameter(format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))))?;
    // a pool that is already built (tests calling twice) is fine
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> std::result::Result<(), CliError> {
    match cli.command {
        Command::Spectrum(a) => spectrum(a)?,
        Command::Pairs2d(a) => pairs2d(a)?,
        Command::Pliss(a) => pliss(a)?,
        Command::Approx(a) => approx(a)?,
        Command::Construct(a) => return construct(a),
        Command::Measure(a) => measure(a)?,
    }
    Ok(())
}

fn load_model(path: &Option<PathBuf>) -> Result<SkewProductModel> {
    match path {
        Some(p) => SkewProductModel::load(p),
        None => Ok(SkewProductModel::reference()),
    }
}

fn period_cap(max_period: usize, limit: usize) -> Result<usize> {
    if max_period == 0 || max_period > limit {
        return Err(LabError::Parameter(format!("max-period must be in 1..={limit}, got {max_period}")));
    }
    Ok(max_period)
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, contents).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn model_value(model: &SkewProductModel) -> serde_json::Value {
    serde_json::from_str(&model.to_json()).expect("model JSON parses")
}

#[derive(Serialize)]
struct SpectrumManifest<'a> {
    model: serde_json::Value,
    max_period: usize,
    threshold: f64,
    seed: u64,
    orbit_count: usize,
    lambda_min: f64,
    lambda_max: f64,
    window: (f64, f64),
    largest_interior_gap: f64,
    gap_location: (f64, f64),
    connected: bool,
    empty: bool,
    caveat: &'a str,
}

fn spectrum(a: SpectrumArgs) -> Result<()> {
    let model = load_model(&a.common.model)?;
    let cap = period_cap(a.max_period, 20)?;
    if !(a.threshold.is_finite() && a.threshold >= 0.0) {
        return Err(LabError::Parameter(format!("threshold must be non-negative, got {}", a.threshold)));
    }
    let report = exponent_spectrum(&model, cap)?;
    let out = &a.common.out;
    prepare_out(out)?;
    let mut orbits = csv::Writer::from_writer(Vec::new());
    for e in &report.entries {
        orbits.serialize(e)?;
    }
    write(out.join("spectrum.csv"), orbits.into_inner().map_err(|e| LabError::Io(e.to_string()))?)?;
    write(out.join("gap_curve.csv"), csv_bytes(|b| report.write_gap_curve_csv(b))?)?;
    let manifest = SpectrumManifest {
        model: model_value(&model),
        max_period: cap,
        threshold: a.threshold,
        seed: a.common.seed,
        orbit_count: report.entries.len(),
        lambda_min: report.lambda_min,
        lambda_max: report.lambda_max,
        window: report.window,
        largest_interior_gap: report.largest_interior_gap,
        gap_location: report.gap_location,
        connected: report.looks_connected(a.threshold),
        empty: report.empty,
        caveat: &report.caveat,
    };
    write(out.join("spectrum.json"), pretty(&manifest)?)?;
    if a.common.svg {
        write(out.join("gap_curve.svg"), gap_curve_svg(&report))?;
    }
    Ok(())
}

fn pairs2d(a: Pairs2dArgs) -> Result<()> {
    let path = a
        .common
        .model
        .as_ref()
        .ok_or_else(|| LabError::Parameter("pairs2d needs --model with a pair file".into()))?;
    let text = fs::read_to_string(path).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
    let pair = ModelPair::from_json(&text)?;
    let cap = period_cap(a.max_period, 16)?;
    let pairs = exponent_pairs_2d(&pair, cap)?;
    let out = &a.common.out;
    prepare_out(out)?;
    write(out.join("pairs.csv"), csv_bytes(|b| write_pairs_csv(b, &pairs))?)?;
    if a.common.svg {
        write(out.join("pairs.svg"), pairs_svg(&pairs))?;
    }
    Ok(())
}

fn pliss(a: PlissArgs) -> Result<()> {
    let file = fs::File::open(&a.input).map_err(|e| LabError::Io(format!("{}: {e}", a.input.display())))?;
    let seq = read_sequence_csv(file)?;
    let sel = pliss_times(&seq, a.lambda0, a.lambda1)?;
    prepare_out(&a.common.out)?;
    write(a.common.out.join("selection.csv"), csv_bytes(|b| write_selection_csv(b, &seq, &sel))?)?;
    Ok(())
}

fn orbit_from_args(model: &SkewProductModel, word: &str, guess: f64) -> Result<PeriodicOrbit> {
    let word: Word = word.parse()?;
    if !guess.is_finite() {
        return Err(LabError::Parameter(format!("fiber guess must be finite, got {guess}")));
    }
    let x = fixed_point_near(model, &word, guess)?;
    PeriodicOrbit::from_fixed_point(model, word, x)
}

fn approx(a: ApproxArgs) -> Result<()> {
    let model = load_model(&a.common.model)?;
    let x = orbit_from_args(&model, &a.x_word, a.x_fiber)?;
    let y = orbit_from_args(&model, &a.y_word, a.y_fiber)?;
    let cert = search_certificate(&model, &x, &y, a.gamma, a.chi)?.ok_or_else(|| LabError::NotFound {
        radius: a.gamma,
        dlambda: (x.lambda_c - y.lambda_c).abs(),
    })?;
    debug_assert!(verify_certificate(&model, &x, &y, &cert)?.valid);
    prepare_out(&a.common.out)?;
    write(a.common.out.join("certificate.json"), cert.to_json())?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct OrbitRecord {
    pub word: Option<String>,
    pub period: usize,
    pub fiber_x: f64,
    pub lambda_c: f64,
    pub index: &'static str,
}

/// Words longer than this are left out of manifests.
const MANIFEST_WORD_LIMIT: usize = 256;

impl OrbitRecord {
    fn new(o: &PeriodicOrbit) -> Self {
        Self {
            word: (o.period <= MANIFEST_WORD_LIMIT).then(|| o.word.to_string()),
            period: o.period,
            fiber_x: o.fiber_x,
            lambda_c: o.lambda_c,
            index: o.index.as_str(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct StageManifest {
    pub plan: PlanRecord,
    pub orbit: OrbitRecord,
    pub saddle_radius: f64,
    pub saddle_dense: bool,
    pub gamma: f64,
    pub chi: f64,
    pub retries: usize,
    pub density_radius: Option<f64>,
    pub certificate: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct ConstructManifest {
    pub model: serde_json::Value,
    pub target: f64,
    pub eps: f64,
    pub stages: u32,
    pub max_period: usize,
    pub seed: u64,
    pub options: GiknOptions,
    pub p0: OrbitRecord,
    pub q0: OrbitRecord,
    pub records: Vec<StageManifest>,
    pub support: SupportEstimate,
    pub summary: RunSummary,
    pub failure: Option<StageFailure>,
}

/// Seeds for a target: `q_0` is the nearest exponent beyond the target,
/// `p_0` the orbit of the same index on the near side whose exponent is
/// closest to `3s/4`.
pub fn select_seeds(model: &SkewProductModel, target: f64, max_period: usize) -> Result<(PeriodicOrbit, PeriodicOrbit)> {
    let e = enumerate_periodic_orbits(model, max_period);
    let sigma = if target >= 0.0 { 1.0 } else { -1.0 };
    let q0 = e
        .orbits
        .iter()
        .filter(|o| sigma * o.lambda_c > sigma * target)
        .min_by(|a, b| (sigma * a.lambda_c).total_cmp(&(sigma * b.lambda_c)))
        .ok_or_else(|| {
            LabError::Precondition(format!(
                "target {target} lies outside the exponent spectrum up to period {max_period}"
            ))
        })?;
    let p0 = e
        .orbits
        .iter()
        .filter(|o| o.index == q0.index && sigma * o.lambda_c < sigma * target)
        .min_by(|a, b| (a.lambda_c - 0.75 * target).abs().total_cmp(&(b.lambda_c - 0.75 * target).abs()))
        .ok_or_else(|| {
            LabError::Precondition(format!(
                "no {} orbit on the near side of target {target} up to period {max_period}",
                q0.index.as_str()
            ))
        })?;
    Ok((p0.clone(), q0.clone()))
}

/// The full construction with its support estimate, without writing files.
pub fn construct_run(
    model: &SkewProductModel,
    target: f64,
    eps: f64,
    stages: u32,
    max_period: usize,
    grid: SampleGrid,
) -> Result<(GiknRun, SupportEstimate)> {
    if !target.is_finite() {
        return Err(LabError::Parameter(format!("target must be finite, got {target}")));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(LabError::Parameter(format!("eps must be in (0, 1], got {eps}")));
    }
    if stages == 0 || stages > 16 {
        return Err(LabError::Parameter(format!("stages must be in 1..=16, got {stages}")));
    }
    period_cap(max_period, 16)?;
    let (p0, q0) = select_seeds(model, target, max_period)?;
    let opts = GiknOptions {
        grid,
        ..GiknOptions::default()
    };
    let run = run_gikn(model, target, stages, eps, &p0, &q0, &opts)?;
    let support = support_estimate(model, &run.orbits(), &grid)?;
    Ok((run, support))
}

pub fn construct_manifest(
    model: &SkewProductModel,
    run: &GiknRun,
    support: SupportEstimate,
    max_period: usize,
    seed: u64,
    grid: SampleGrid,
) -> ConstructManifest {
    let records = run
        .records
        .iter()
        .zip(run.saddles.iter().skip(1))
        .map(|(r, p)| StageManifest {
            plan: r.plan.clone(),
            orbit: OrbitRecord::new(&r.orbit),
            saddle_radius: p.radius,
            saddle_dense: p.dense,
            gamma: r.gamma,
            chi: r.chi,
            retries: r.retries,
            density_radius: r.density_radius,
            certificate: r.certificate.as_ref().map(|_| cert_name(r.plan.stage)),
        })
        .collect();
    ConstructManifest {
        model: model_value(model),
        target: run.s_target,
        eps: run.eps,
        stages: run.stages,
        max_period,
        seed,
        options: GiknOptions {
            grid,
            ..GiknOptions::default()
        },
        p0: OrbitRecord::new(&run.saddles[0].orbit),
        q0: OrbitRecord::new(&run.q0),
        records,
        support,
        summary: run.summary.clone(),
        failure: run.failure.clone(),
    }
}

pub fn cert_name(stage: u32) -> String {
    format!("cert_stage_{stage}.json")
}

fn construct(a: ConstructArgs) -> std::result::Result<(), CliError> {
    let model = load_model(&a.common.model)?;
    let grid = SampleGrid::new(a.depth, a.bins)?;
    let (run, support) = construct_run(&model, a.target, a.eps, a.stages, a.max_period, grid)?;
    let out = &a.common.out;
    prepare_out(out)?;

    let mut table = csv::Writer::from_writer(Vec::new());
    table
        .write_record(["stage", "period", "lambda", "predicted", "gamma", "chi", "radius"])
        .map_err(LabError::from)?;
    table
        .write_record(["0".into(), run.q0.period.to_string(), run.q0.lambda_c.to_string(), String::new(), String::new(), String::new(), String::new()])
        .map_err(LabError::from)?;
    for r in &run.records {
        table
            .write_record([
                r.plan.stage.to_string(),
                r.orbit.period.to_string(),
                r.orbit.lambda_c.to_string(),
                r.plan.predicted_lambda.to_string(),
                r.gamma.to_string(),
                r.chi.to_string(),
                r.density_radius.map(|d| d.to_string()).unwrap_or_default(),
            ])
            .map_err(LabError::from)?;
    }
    write(out.join("convergence.csv"), table.into_inner().map_err(|e| LabError::Io(e.to_string()))?)?;
    for r in &run.records {
        if let Some(c) = &r.certificate {
            write(out.join(cert_name(r.plan.stage)), c.to_json())?;
        }
    }
    let failure = run.failure.clone();
    let manifest = construct_manifest(&model, &run, support, a.max_period, a.common.seed, grid);
    write(out.join("manifest.json"), pretty(&manifest)?)?;
    match failure {
        Some(f) => Err(f.into()),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct IntegralRow {
    label: String,
    period: usize,
    fiber_x: f64,
    lambda_c: f64,
    integral: f64,
    error_bound: f64,
}

fn measure(a: MeasureArgs) -> Result<()> {
    let model = load_model(&a.common.model)?;
    let grid = SampleGrid::new(a.depth, a.bins)?;
    let orbits: Vec<PeriodicOrbit> = match &a.input {
        Some(path) => {
            let file = fs::File::open(path).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
            read_spectrum_csv(file)?
                .iter()
                .map(|s| s.to_orbit(&model))
                .collect::<Result<_>>()?
        }
        None => enumerate_periodic_orbits(&model, period_cap(a.max_period, 12)?).orbits,
    };
    if orbits.is_empty() {
        return Err(LabError::Parameter("no orbits to measure".into()));
    }
    let measures: Vec<EmpiricalMeasure> = orbits
        .iter()
        .map(|o| empirical_measure(&model, o, &grid))
        .collect::<Result<_>>()?;
    let integrals = measures
        .iter()
        .map(|mu| exponent_integral(&model, mu))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = orbits.iter().map(|o| format!("{}@{:.6}", o.word, o.fiber_x)).collect();
    let matrix = distance_matrix(&measures)?;

    let out = &a.common.out;
    prepare_out(out)?;
    write(out.join("distances.csv"), csv_bytes(|b| write_distance_matrix_csv(b, &labels, &matrix))?)?;
    let mut rows = csv::Writer::from_writer(Vec::new());
    for ((o, label), r) in orbits.iter().zip(&labels).zip(&integrals) {
        rows.serialize(IntegralRow {
            label: label.clone(),
            period: o.period,
            fiber_x: o.fiber_x,
            lambda_c: o.lambda_c,
            integral: r.value,
            error_bound: r.error_bound,
        })?;
    }
    write(out.join("integrals.csv"), rows.into_inner().map_err(|e| LabError::Io(e.to_string()))?)?;
    for (i, mu) in measures.iter().enumerate() {
        write(out.join(format!("measure_{i:04}.csv")), csv_bytes(|b| mu.write_csv(b))?)?;
    }
    Ok(())
}

/// Read a certificate file written by `approx` or `construct`.
pub fn load_certificate(path: &Path) -> Result<GoodApproxCertificate> {
    let text = fs::read_to_string(path).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
    GoodApproxCertificate::from_json(&text)
}
