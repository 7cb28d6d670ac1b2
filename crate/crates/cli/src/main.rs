//! `cover`: command-line entry point for the confined-walk / tilted-
//! interlacement cover-time simulator.
//!
//! Exit codes: 0 success, 1 configuration/validation error, 2 numerical or
//! simulation failure. Outputs are byte-identical for identical
//! configuration (including seed) at any `--threads` value.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cover_core::domain::{build_domain, ShapeSpec};
use cover_core::experiments::{
    self, default_z_grid, gumbel_report, late_point_report, rho_report, run_interlacement_campaign,
    run_walk_campaign, BallCampaign, ExperimentError, Source,
};
use cover_core::potential::{
    corrected_green, equilibrium_measure, exit_flux, green_function, EqMethod, TiltField,
};
use cover_core::report::{fmt_g17, write_csv_file, write_json_file, Report};

const OUT_DIR_ENV: &str = "COVER_OUTPUT_DIR";

#[derive(Parser)]
#[command(
    name = "cover",
    about = "Simulator and numerical verifier for cover times of confined walks and tilted random interlacements on lattice blow-ups of a domain",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    /// Config file with `key = value` lines; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $COVER_OUTPUT_DIR, then current directory).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker thread count (default: all cores). Outputs are identical at any value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// Blow-up factor N of the domain.
    #[arg(long = "N")]
    n: Option<i64>,
    /// Base RNG seed; replicas derive independent streams from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Replica count for Monte Carlo campaigns.
    #[arg(long)]
    replicas: Option<u64>,
    /// Tilt enlargement parameter ε of the inner set.
    #[arg(long)]
    eps: Option<f64>,
    /// Late-set parameter ρ.
    #[arg(long)]
    rho: Option<f64>,
    /// Iterative-solver relative residual tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Truncation/kill radius as a multiple of N.
    #[arg(long)]
    rout_factor: Option<f64>,
    /// Radius of the inner ball Λ (in domain units).
    #[arg(long)]
    r0: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the principal eigenpair of the killed walk on the blown-up domain.
    Eigen {
        /// Domain shape: `ball` (unit ball) or `cube` (unit cube).
        #[arg(long)]
        shape: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Continuum ball reference: α_Λ, κ_Λ forms, and level-band volumes.
    Reference {
        #[command(flatten)]
        common: Common,
    },
    /// Equilibrium measure and capacity of an explicit point set (untilted field).
    Capacity {
        /// Point set, e.g. "0,0,0;1,0,0".
        #[arg(long)]
        set: String,
        /// `linear` (truncated-box solve) or `mc` (Monte Carlo escape).
        #[arg(long)]
        method: Option<String>,
        /// Monte Carlo sample count per point.
        #[arg(long)]
        samples: Option<usize>,
        /// Output JSON file name.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Green function row G(x,·) of the untilted walk, sliced along the axes.
    Green {
        /// Source point, e.g. "0,0,0".
        #[arg(long)]
        x: Option<String>,
        /// Truncation box radius (lattice units).
        #[arg(long)]
        box_radius: Option<i64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Interlacement cover levels of Λ_N with ρ-set summaries.
    InterlaceCover {
        /// Level budget as a multiple of g(0)α⁻¹log|Λ_N|.
        #[arg(long)]
        u_cap_mult: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Confined-walk cover times of Λ_N.
    WalkCover {
        #[arg(long)]
        u_cap_mult: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Late-point spatial statistics at threshold level z.
    LatePoints {
        #[arg(long)]
        z: Option<f64>,
        /// `walk` or `interlacement`.
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        bins: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Empirical cover-level CDF against the Gumbel limit.
    Gumbel {
        #[arg(long)]
        source: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Walk-vs-interlacement vacancy sandwich at matched scales.
    Coupling {
        /// Walk horizon as a multiple of g(0)α⁻¹N^d·log|Λ_N|.
        #[arg(long)]
        t_mult: Option<f64>,
        /// Coupling exponent δ (ε_N = N^{−δ/4}).
        #[arg(long)]
        delta: Option<f64>,
        /// Number of probe sites.
        #[arg(long)]
        probes: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Deterministic eigenvector sums and level-band volumes.
    Sums {
        /// Comma-separated β list, e.g. "1,2".
        #[arg(long)]
        betas: Option<String>,
        /// Comma-separated N list (defaults to --N).
        #[arg(long)]
        n_list: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// One-dimensional segment covering by endpoint excursions.
    Segment {
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Fast end-to-end invariant suite (N = 8 scale).
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

/// Fully resolved configuration; echoed into every output.
#[derive(Debug, Clone, Serialize)]
struct RunConfig {
    dimension: usize,
    shape: String,
    lambda_shape: String,
    n: i64,
    eps: f64,
    rho: f64,
    replicas: u64,
    seed: u64,
    tol: f64,
    rout_factor: f64,
    r0: f64,
    z_grid: Vec<f64>,
    output_dir: String,
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Domain(d) => CliError::Validation(d.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<cover_core::potential::PotentialError> for CliError {
    fn from(e: cover_core::potential::PotentialError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(format!("i/o error: {e}"))
    }
}

fn parse_config_file(path: &Path) -> Result<HashMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Validation(format!(
                "config line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )));
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

struct Resolver {
    file: HashMap<String, String>,
}

impl Resolver {
    fn get<T: std::str::FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.get(key) {
            Some(s) => s.parse::<T>().map_err(|_| {
                CliError::Validation(format!("config key `{key}`: cannot parse `{s}`"))
            }),
            None => Ok(default),
        }
    }

    fn require<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<T, CliError> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.get(key) {
            Some(s) => s.parse::<T>().map_err(|_| {
                CliError::Validation(format!("config key `{key}`: cannot parse `{s}`"))
            }),
            None => {
                let flag = if key == "n" { "N".to_string() } else { key.replace('_', "-") };
                Err(CliError::Validation(format!(
                    "missing required parameter --{flag} (or config key `{key}`)\n\nUsage: pass --{flag} <value>; see `cover <subcommand> --help`"
                )))
            }
        }
    }
}

fn resolve(
    common: &Common,
    resolver: &Resolver,
    out_dir: &Path,
    _threads: Option<usize>,
    default_replicas: u64,
) -> Result<RunConfig, CliError> {
    let n: i64 = resolver.require(common.n, "n")?;
    if n < 1 {
        return Err(CliError::Validation(format!("N must be ≥ 1, got {n}")));
    }
    let r0 = resolver.get(common.r0, "r0", 0.5)?;
    let eps = resolver.get(common.eps, "eps", 0.2)?;
    let rho = resolver.get(common.rho, "rho", 0.25)?;
    if !(0.0 < rho && rho < 1.0) {
        return Err(CliError::Validation(format!("rho must be in (0,1), got {rho}")));
    }
    if !(0.0 < r0 && r0 + 2.0 * eps * 1.0 < 1.0) {
        return Err(CliError::Validation(format!(
            "need 0 < r0 and r0 + 2ε < 1 for the tilt margin (r0 = {r0}, eps = {eps})"
        )));
    }
    Ok(RunConfig {
        dimension: 3,
        shape: "ball(center=0, radius=1)".to_string(),
        lambda_shape: format!("ball(center=0, radius={r0})"),
        n,
        eps,
        rho,
        replicas: resolver.get(common.replicas, "replicas", default_replicas)?,
        seed: resolver.get(common.seed, "seed", 1)?,
        tol: resolver.get(common.tol, "tol", 1e-10)?,
        rout_factor: resolver.get(common.rout_factor, "rout_factor", 5.0)?,
        r0,
        z_grid: default_z_grid(),
        output_dir: out_dir.display().to_string(),
    })
}

fn campaign_of(cfg: &RunConfig) -> Result<BallCampaign, CliError> {
    Ok(BallCampaign::new(cfg.n, cfg.r0, cfg.eps, cfg.rout_factor, cfg.tol)?)
}

fn parse_points(s: &str) -> Result<Vec<Vec<i64>>, CliError> {
    let mut pts = Vec::new();
    for part in s.split(';') {
        let p: Result<Vec<i64>, _> = part.split(',').map(|c| c.trim().parse::<i64>()).collect();
        let p = p.map_err(|_| CliError::Validation(format!("bad point `{part}` in --set/--x")))?;
        if p.is_empty() {
            return Err(CliError::Validation("empty point in --set/--x".into()));
        }
        pts.push(p);
    }
    if pts.is_empty() {
        return Err(CliError::Validation("empty point list".into()));
    }
    let d = pts[0].len();
    if pts.iter().any(|p| p.len() != d) {
        return Err(CliError::Validation("points have mixed dimensions".into()));
    }
    Ok(pts)
}

fn config_value(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config echo")
}

fn parse_source(s: Option<String>) -> Result<Source, CliError> {
    match s.as_deref() {
        None | Some("interlacement") => Ok(Source::Interlacement),
        Some("walk") => Ok(Source::Walk),
        Some(other) => Err(CliError::Validation(format!(
            "--source must be `walk` or `interlacement`, got `{other}`"
        ))),
    }
}

fn run_campaign(
    c: &mut BallCampaign,
    source: Source,
    cfg: &RunConfig,
    u_cap: f64,
) -> Result<experiments::Campaign, CliError> {
    Ok(match source {
        Source::Interlacement => {
            run_interlacement_campaign(c, cfg.replicas, cfg.seed, u_cap, cfg.tol)?
        }
        Source::Walk => run_walk_campaign(c, cfg.replicas, cfg.seed, u_cap)?,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own exit convention is remapped: any argv problem is a
            // validation error (1), except explicit --help/--version (0)
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(t) = cli.threads {
        if rayon::ThreadPoolBuilder::new().num_threads(t).build_global().is_err() {
            eprintln!("warning: thread pool already initialized");
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => parse_config_file(p)?,
        None => HashMap::new(),
    };
    let resolver = Resolver { file };
    let out_dir: PathBuf = cli
        .out_dir
        .clone()
        .or_else(|| resolver.file.get("out_dir").map(PathBuf::from))
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    let threads = cli.threads;

    match cli.cmd {
        Cmd::Eigen { shape, common } => cmd_eigen(shape, &common, &resolver, &out_dir, threads),
        Cmd::Reference { common } => cmd_reference(&common, &resolver, &out_dir, threads),
        Cmd::Capacity { set, method, samples, out, common } => {
            cmd_capacity(&set, method, samples, out, &common, &resolver, &out_dir, threads)
        }
        Cmd::Green { x, box_radius, out, common } => {
            cmd_green(x, box_radius, out, &common, &resolver, &out_dir, threads)
        }
        Cmd::InterlaceCover { u_cap_mult, out, common } => cmd_cover(
            Source::Interlacement,
            u_cap_mult,
            out,
            &common,
            &resolver,
            &out_dir,
            threads,
        ),
        Cmd::WalkCover { u_cap_mult, out, common } => {
            cmd_cover(Source::Walk, u_cap_mult, out, &common, &resolver, &out_dir, threads)
        }
        Cmd::LatePoints { z, source, bins, common } => {
            cmd_late_points(z, source, bins, &common, &resolver, &out_dir, threads)
        }
        Cmd::Gumbel { source, common } => {
            cmd_gumbel(source, &common, &resolver, &out_dir, threads)
        }
        Cmd::Coupling { t_mult, delta, probes, common } => {
            cmd_coupling(t_mult, delta, probes, &common, &resolver, &out_dir, threads)
        }
        Cmd::Sums { betas, n_list, common } => {
            cmd_sums(betas, n_list, &common, &resolver, &out_dir, threads)
        }
        Cmd::Segment { out, common } => cmd_segment(out, &common, &resolver, &out_dir, threads),
        Cmd::Validate { common } => cmd_validate(&common, &resolver, &out_dir, threads),
    }
}

fn cmd_eigen(
    shape: Option<String>,
    common: &Common,
    resolver: &Resolver,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let cfg = resolve(common, resolver, out_dir, threads, 1)?;
    let spec = match shape.as_deref().unwrap_or("ball") {
        "ball" => ShapeSpec::unit_ball(3),
        "cube" => ShapeSpec::cube(3, -0.5, 0.5),
        other => {
            return Err(CliError::Validation(format!(
                "--shape must be `ball` or `cube`, got `{other}`"
            )))
        }
    };
    let domain = build_domain(&spec, cfg.n).map_err(|e| CliError::Validation(e.to_string()))?;
    let eig = cover_core::spectral::solve_principal_eigenpair(&domain, cfg.tol.min(1e-10), 2_000_000)
        .map_err(|e| CliError::Numerical(e.to_string()))?;

    let rows: Vec<Vec<String>> = domain
        .sites
        .iter()
        .zip(&eig.phi)
        .map(|(p, &v)| {
            let mut r: Vec<String> = p.iter().map(|c| c.to_string()).collect();
            r.push(fmt_g17(v));
            r
        })
        .collect();
    write_csv_file(&out_dir.join("eigen.csv"), &["x", "y", "z", "phi"], &rows)?;

    #[derive(Serialize)]
    struct EigenSummary {
        n: i64,
        sites: usize,
        lambda: f64,
        residual: f64,
        iterations: usize,
        rescaled_gap: f64,
    }
    let d = domain.dim() as f64;
    let payload = EigenSummary {
        n: cfg.n,
        sites: domain.len(),
        lambda: eig.lambda,
        residual: eig.residual,
        iterations: eig.iterations,
        rescaled_gap: (1.0 - eig.lambda) * 2.0 * d * (cfg.n as f64).powi(2),
    };
    write_json_file(
        &out_dir.join("eigen.json"),
        &Report { status: "ok".into(), config: config_value(&cfg), payload },
    )?;
    println!("eigen: N = {}, lambda = {:.12}, residual = {:.3e}", cfg.n, eig.lambda, eig.residual);
    Ok(())
}

fn cmd_reference(
    common: &Common,
    resolver: &Resolver,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<(), CliError> {
    // N is irrelevant for the continuum reference; allow it to be absent
    let mut common = common.clone();
    common.n = common.n.or(Some(1));
    let cfg = resolve(&common, resolver, out_dir, threads, 1)?;
    let reference = cover_core::reference_ball::BallReference::new(3, cfg.r0);
    let kappa = reference.kappa();

    #[derive(Serialize)]
    struct BandRow {
        eps: f64,
        additive: f64,
        multiplicative: f64,
    }
    #[derive(Serialize)]
    struct ReferenceSummary {
        r0: f64,
        lambda_continuum: f64,
        alpha: f64,
        kappa_surface: f64,
        kappa_literal_volume_form: f64,
        g0: f64,
        bands: Vec<BandRow>,
    }
    let alpha = reference.alpha();
    let bands = [0.1, 0.01, 1e-3]
        .iter()
        .map(|&eps| BandRow {
            eps,
            additive: reference.level_band_kappa(eps * alpha),
            multiplicative: reference.level_band_kappa_multiplicative(eps),
        })
        .collect();
    let payload = ReferenceSummary {
        r0: cfg.r0,
        lambda_continuum: reference.lambda_cont,
        alpha,
        kappa_surface: kappa.surface_integral,
        kappa_literal_volume_form: kappa.literal_volume_form,
        g0: cover_core::constants::green_origin(3),
        bands,
    };
    write_json_file(
        &out_dir.join("reference.json"),
        &Report { status: "ok".into(), config: config_value(&cfg), payload },
    )?;
    println!(
        "reference: alpha = {:.6}, kappa = {:.6}",
        alpha, kappa.surface_integral
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_capacity(
    set: &str,
    method: Option<String>,
    samples: Option<usize>,
    out: Option<PathBuf>,
    common: &Common,
    resolver: &Resolver,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let mut common = common.clone();
    common.n = common.n.or(Some(8));
    let cfg = resolve(&common, resolver, out_dir, threads, 1)?;
    let points = parse_points(set)?;
    let dim = points[0].len();
    if dim < 3 {
        return Err(CliError::Validation(format!(
            "capacity requires dimension ≥ 3, got {dim}"
        )));
    }
    let psi = TiltField::uniform(dim);
    let box_radius = (cfg.rout_factor * cfg.n as f64).ceil() as i64;
    let method = match method.as_deref().unwrap_or("linear") {
        "linear" => EqMethod::LinearSolve,
        "mc" => EqMethod::MonteCarlo { samples: samples.unwrap_or(20_000), seed: cfg.seed },
        other => {
            return Err(CliError::Validation(format!(
                "--method must be `linear` or `mc`, got `{other}`"
            )))
        }
    };
    let r_escape = 4.0 * cfg.n as f64;
    let eq = equilibrium_measure(&psi, &points, method, box_radius, r_escape, cfg.tol)?;

    #[derive(Serialize)]
    struct CapacitySummary {
        points: Vec<Vec<i64>>,
        weights: Vec<f64>,
        escape_probabilities: Vec<f64>,
        capacity: f64,
        capacity_std_err: Option<f64>,
        box_radius: i64,
        /// Truncation bias scale (|K|·(diam-scale/box)^{d−2}).
        truncation_bias_scale: f64,
    }
    let payload = CapacitySummary {
        truncation_bias_scale: points.len() as f64
            * (cfg.n as f64 / box_radius as f64).powi(dim as i32 - 2),
        points: eq.points.clone(),
        weights: eq.weights.clone(),
        escape_probabilities: eq.escape.clone(),
        capacity: eq.capacity,
        capacity_std_err: eq.capacity_std_err,
        box_radius,
    };
    let file = out.unwrap_or_else(|| PathBuf::from("capacity.json"));
    write_json_file(
        &out_dir.join(file),
        &Report { status: "ok".into(), config: config_value(&cfg), payload },
    )?;
    println!("capacity = {:.10}", eq.capacity);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_green(
    x: Option<String>,
    box_radius: Option<i64>,
    out: Option<PathBuf>,
    common: &Common,
    resolver: &Resolver,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let mut common = common.clone();
    common.n = common.n.or(Some(8));
    let cfg = resolve(&common, resolver, out_dir, threads, 1)?;
    let source = parse_points(&x.unwrap_or_else(|| "0,0,0".into()))?.remove(0);
    let dim = source.len();
    if dim < 3 {
        return Err(CliError::Validation("green requires dimension ≥ 3".into()));
    }
    let radius = box_radius.unwrap_or((cfg.rout_factor * cfg.n as f64).ceil() as i64);
    let psi = TiltField::uniform(dim);
    let gs = green_function(&psi, &source, radius, cfg.tol)?;
    let flux = exit_flux(&gs, &psi);

    let mut rows = Vec::new();
    for axis in 0..dim {
        for off in -radius..=radius {
            let mut y = source.clone();
            y[axis] += off;
            rows.push(vec![
                axis.to_string(),
                off.to_string(),
                fmt_g17(gs.g(&y)),
                fmt_g17(corrected_green(&gs, &flux, &y, dim)),
            ]);
        }
    }
    let file = out.unwrap_or_else(|| PathBuf::from("green.csv"));
    write_csv_file(&out_dir.join(file), &["axis", "offset", "g", "g_corrected"], &rows)?;
    println!(
        "green: G(x,x) = {:.10}, corrected = {:.10}, edge proxy = {:.3e}",
        gs.g(&source),
        corrected_green(&gs, &flux, &source, dim),
        gs.edge_proxy
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_cover(
    source: Source,
    u_cap_mult: Option<f64>,
    out: Option<PathBuf>,
    common: &Common,
    resolver: &Resolver,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let cfg = resolve(common, resolver, out_dir, threads, 100)?;
    let mut c = campaign_of(&cfg)?;
    let u_cap = u_cap_mult.unwrap_or(2.0) * c.first_order_u();
    let campaign = run_campaign(&mut c, source, &cfg, u_cap)?;

    let first_order = c.first_order_u();
    let mut rows = Vec::new();
    for (r, &cu) in campaign.cover_u.iter().enumerate() {
        // per-replica late-set summary at the ρ threshold
        let threshold = (1.0 - cfg.rho) * first_order;
        let late: Vec<usize> = campaign.site_u[r]
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| if v > threshold { Some(i) } else { None })
            .collect();
        let mut min_d2 = f64::INFINITY;
        for (a, &i) in late.iter().enumerate() {
            for &j in late.iter().skip(a + 1) {
                let d2: f64 = c.points[i]
                    .iter()
                    .zip(&c.points[j])
                    .map(|(&p, &q)| ((p - q) as f64).powi(2))
                    .sum();
                min_d2 = min_d2.min(d2);
            }
        }
        rows.push(vec![
            r.to_string(),
            fmt_g17(cu),
            fmt_g17(cu / first_order),
            late.len().to_string(),
            fmt_g17(min_d2.sqrt()),
        ]);
    }
    let default_name = match source {
        Source::Interlacement => "levels.csv",
        Source::Walk => "cover.csv",
    };
    let file = out.unwrap_or_else(|| PathBuf::from(default_name));
    write_csv_file(
        &out_dir.join(file),
        &["replica", "set_level", "normalized_level", "rho_count", "rho_min_dist"],
        &rows,
    )?;

    let grep = gumbel_report(&campaign, &c, &cfg.z_grid, cfg.r0);
    let rrep = rho_report(&campaign, &c, cfg.rho);
    #[derive(Serialize)]
    struct CoverSummary {
        gumbel: experiments::GumbelReport,
        rho: experiments::RhoReport,
    }
    let json_name = match source {
        Source::Interlacement => "interlace-cover.json",
        Source::Walk => "walk-cover.json",
    };
    println!(
        "{:?} cover: mean normalized level = {:.4}, KS = {:.4}",
        source, grep.mean_first_order_ratio, grep.ks_distance
    );
    write_json_file(
        &out_dir.join(json_name),
        &Report {
            status: "ok".into(),
            config: config_value(&cfg),
            payload: CoverSummary { gumbel: grep, rho: rrep },
        },
    )?;
    Ok(())
}

fn cmd_late_points(
    z: Option<f64>,
    source: Option<String>,
    bins: Option<usize>,
    common: &Common,
    resolver: &Resolver,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let cfg = resolve(common, resolver, out_dir, threads, 100)?;
    let source = parse_source(source)?;
    let z = z.unwrap_or(0.0);
    let mut c = campaign_of(&cfg)?;
    let u_cap = c.u_threshold(12.0);
    let campaign = run_campaign(&mut c, source, &cfg, u_cap)?;
    let rep = late_point_report(&campaign, &c, z, cfg.r0, bins.unwrap_or(4));

    let rows: Vec<Vec<String>> = rep
        .bin_counts
        .iter()
        .zip(&rep.void_probabilities)
        .enumerate()
        .map(|(b, (&count, &void))| {
            vec![b.to_string(), count.to_string(), fmt_g17(void)]
        })
        .collect();
    write_csv_file(&out_dir.join("late-bins.csv"), &["bin", "count", "void_probability"], &rows)?;
    println!(
        "late points: mean count = {:.4} (theory {:.4}), dispersion = {:.4}, outer shell = {:.2}",
        rep.mean_total_count, rep.expected_total, rep.dispersion_index, rep.outer_shell_fraction
    );
    let payload = serde_json::json!({
        "checks": {
            "mean_count_in_band": rep.mean_total_count >= 0.5 * rep.expected_total
                && rep.mean_total_count <= 2.0 * rep.expected_total,
            "dispersion_in_band": rep.dispersion_index >= 0.6 && rep.dispersion_index <= 1.4,
            "outer_shell_ok": rep.outer_shell_fraction >= 0.8,
        },
        "report": rep,
    });
    write_json_file(
        &out_dir.join("late-points.json"),
        &Report { status: "ok".into(), config: config_value(&cfg), payload },
    )?;
    Ok(())
}

fn cmd_gumbel(
    source: Option<String>,
    common: &Common,
    resolver: &Resolver,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let cfg = resolve(common, resolver, out_dir, threads, 300)?;
    let source = parse_source(source)?;
    let mut c = campaign_of(&cfg)?;
    let u_cap = c.u_threshold(12.0);
    let campaign = run_campaign(&mut c, source, &cfg, u_cap)?;
    let rep = gumbel_report(&campaign, &c, &cfg.z_grid, cfg.r0);

    let rows: Vec<Vec<String>> = rep
        .z_grid
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            vec![
                fmt_g17(z),
                fmt_g17(rep.empirical_cdf[i]),
                fmt_g17(rep.theory_cdf[i]),
                fmt_g17(rep.super_gumbel_empirical[i]),
                fmt_g17(rep.super_gumbel_bound[i]),
            ]
        })
        .collect();
    write_csv_file(
        &out_dir.join("gumbel.csv"),
        &["z", "empirical", "theory", "super_gumbel_empirical", "super_gumbel_bound"],
        &rows,
    )?;
    println!(
        "gumbel ({:?}): KS = {:.4}, super-gumbel ok = {}",
        source, rep.ks_distance, rep.super_gumbel_ok
    );
    let payload = serde_json::json!({
        "checks": {
            "ks_within_band": rep.ks_distance <= 0.15,
            "super_gumbel_bound_ok": rep.super_gumbel_ok,
            "mean_first_order_in_band": rep.mean_first_order_ratio >= 0.6
                && rep.mean_first_order_ratio <= 1.5,
        },
        "report": rep,
    });
    write_json_file(
        &out_dir.join("gumbel.json"),
        &Report { status: "ok".into(), config: config_value(&cfg), payload },
    )?;
    Ok(())
}

fn cmd_coupling(
    t_mult: Option<f64>,
    delta: Option<f64>,
    probes: Option<usize>,
    common: &Common,
    resolver: &Resolver,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let cfg = resolve(common, resolver, out_dir, threads, 200)?;
    let mut c = campaign_of(&cfg)?;
    let rep = experiments::coupling_check(
        &mut c,
        t_mult.unwrap_or(0.5),
        delta.unwrap_or(1.0),
        probes.unwrap_or(50),
        cfg.replicas,
        cfg.replicas,
        cfg.seed,
        cfg.tol,
    )?;
    println!(
        "coupling: sandwich holds at {:.0}% of {} probes (epsilon_N = {:.4})",
        100.0 * rep.fraction_ok,
        rep.probe_sites.len(),
        rep.epsilon_n
    );
    let payload = serde_json::json!({
        "checks": {
            "sandwich_holds_95pct": rep.fraction_ok >= 0.95,
            "monotone_ok": rep.monotone_ok,
        },
        "report": rep,
    });
    write_json_file(
        &out_dir.join("coupling.json"),
        &Report { status: "ok".into(), config: config_value(&cfg), payload },
    )?;
    Ok(())
}

fn cmd_sums(
    betas: Option<String>,
    n_list: Option<String>,
    common: &Common,
    resolver: &Resolver,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let cfg = resolve(common, resolver, out_dir, threads, 1)?;
    let betas: Vec<f64> = betas
        .unwrap_or_else(|| "1,2".into())
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Validation("bad --betas list".into()))?;
    let ns: Vec<i64> = match n_list {
        Some(s) => s
            .split(',')
            .map(|t| t.trim().parse::<i64>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::Validation("bad --n-list".into()))?,
        None => vec![cfg.n],
    };
    let campaigns: Vec<BallCampaign> = ns
        .iter()
        .map(|&n| BallCampaign::new(n, cfg.r0, cfg.eps, cfg.rout_factor, cfg.tol))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&BallCampaign> = campaigns.iter().collect();
    let rows = experiments::exp_sum_check(&refs, &betas);
    let bands = experiments::level_band_check(refs[refs.len() - 1], &[0.1, 0.01, 1e-3]);

    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                fmt_g17(r.beta),
                fmt_g17(r.value),
                fmt_g17(r.limit),
                fmt_g17(r.relative_gap),
            ]
        })
        .collect();
    write_csv_file(
        &out_dir.join("sums.csv"),
        &["n", "beta", "value", "limit", "relative_gap"],
        &csv_rows,
    )?;
    #[derive(Serialize)]
    struct SumsSummary {
        sums: Vec<experiments::SumRow>,
        level_bands: Vec<experiments::LevelBandRow>,
    }
    for r in &rows {
        println!(
            "sum: N = {}, beta = {}, value = {:.4}, limit = {:.4} (gap {:.1}%)",
            r.n,
            r.beta,
            r.value,
            r.limit,
            100.0 * r.relative_gap
        );
    }
    let kappa = refs[refs.len() - 1].kappa;
    let band_oracle_gap = bands
        .iter()
        .map(|b| (b.continuum_additive - kappa).abs() / kappa)
        .fold(f64::INFINITY, f64::min);
    let payload = serde_json::json!({
        "checks": {
            "all_within_30pct": rows.iter().all(|r| r.relative_gap <= 0.30),
            "band_oracle_within_1pct": band_oracle_gap <= 0.01,
        },
        "report": SumsSummary { sums: rows, level_bands: bands },
    });
    write_json_file(
        &out_dir.join("sums.json"),
        &Report { status: "ok".into(), config: config_value(&cfg), payload },
    )?;
    Ok(())
}

fn cmd_segment(
    out: Option<PathBuf>,
    common: &Common,
    resolver: &Resolver,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let cfg = resolve(common, resolver, out_dir, threads, 1000)?;
    let outcomes = cover_core::segment::segment_cover(cfg.n, cfg.replicas, cfg.seed);
    let rows: Vec<Vec<String>> = outcomes
        .iter()
        .map(|o| {
            vec![
                o.replica.to_string(),
                o.cover_time.to_string(),
                fmt_g17(o.ratio_n3),
                o.excursions.to_string(),
            ]
        })
        .collect();
    let file = out.unwrap_or_else(|| PathBuf::from("segment.csv"));
    write_csv_file(
        &out_dir.join(file),
        &["replica", "cover_time", "ratio_n3", "excursions"],
        &rows,
    )?;

    let ratios: Vec<f64> = outcomes.iter().map(|o| o.ratio_n3).collect();
    let excess: Vec<u64> = outcomes.iter().map(|o| o.excursions - 1).collect();
    let (chi2, p, _) = cover_core::stats::geometric_half_fit(&excess);
    #[derive(Serialize)]
    struct SegmentSummary {
        n: i64,
        replicas: u64,
        mean_ratio_n3: f64,
        std_err_ratio_n3: f64,
        geometric_chi2: f64,
        geometric_p_value: f64,
        mean_excursions: f64,
    }
    let payload = SegmentSummary {
        n: cfg.n,
        replicas: cfg.replicas,
        mean_ratio_n3: cover_core::stats::mean(&ratios),
        std_err_ratio_n3: cover_core::stats::std_err(&ratios),
        geometric_chi2: chi2,
        geometric_p_value: p,
        mean_excursions: cover_core::stats::mean(
            &outcomes.iter().map(|o| o.excursions as f64).collect::<Vec<_>>(),
        ),
    };
    println!(
        "segment: mean cover/N^3 = {:.4}, geometric fit p = {:.4}",
        payload.mean_ratio_n3, payload.geometric_p_value
    );
    write_json_file(
        &out_dir.join("segment.json"),
        &Report { status: "ok".into(), config: config_value(&cfg), payload },
    )?;
    Ok(())
}

fn cmd_validate(
    common: &Common,
    resolver: &Resolver,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let mut common = common.clone();
    common.n = common.n.or(Some(8));
    let cfg = resolve(&common, resolver, out_dir, threads, 30)?;
    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool, detail: String| {
        if ok {
            println!("PASS {name}");
        } else {
            println!("FAIL {name}: {detail}");
            failures += 1;
        }
    };

    // eigenpair: residual, positivity, normalization
    let c = campaign_of(&cfg)?;
    check(
        "eigen-residual",
        c.eig.residual <= 1e-10,
        format!("residual {:.3e}", c.eig.residual),
    );
    check("eigen-positive", c.eig.phi.iter().all(|&v| v > 0.0), "nonpositive entry".into());
    let nd = (cfg.n as f64).powi(3);
    let norm: f64 = c.eig.phi.iter().map(|v| v * v).sum();
    check(
        "eigen-normalization",
        (norm - nd).abs() / nd < 1e-12,
        format!("sum phi^2 = {norm}, expected {nd}"),
    );

    // segment closed form
    let (lam, phi) = cover_core::segment::segment_eigenpair(10);
    let mut seg_ok = true;
    for k in 0..phi.len() {
        let l = if k == 0 { 0.0 } else { phi[k - 1] };
        let r = if k + 1 == phi.len() { 0.0 } else { phi[k + 1] };
        if (0.5 * (l + r) - lam * phi[k]).abs() > 1e-12 {
            seg_ok = false;
        }
    }
    check("segment-eigen-recurrence", seg_ok, "recurrence violated".into());

    // continuum reference: band oracle near κ
    let kappa = c.reference.kappa().surface_integral;
    let band = c.reference.level_band_kappa(1e-3 * c.alpha_cont);
    check(
        "reference-band-oracle",
        (band - kappa).abs() / kappa < 0.01,
        format!("band {band}, kappa {kappa}"),
    );

    // potential identities on a small box
    let psi = TiltField::uniform(3);
    let gs = green_function(&psi, &[0, 0, 0], 16, 1e-12).map_err(CliError::from)?;
    let gs_rev = green_function(&psi, &[1, 0, 0], 16, 1e-12);
    match gs_rev {
        Ok(_) => {}
        Err(e) => return Err(e.into()),
    }
    let cap_green = psi.weight(&[0, 0, 0]) / gs.g(&[0, 0, 0]);
    let eq = equilibrium_measure(
        &psi,
        &[vec![0, 0, 0]],
        EqMethod::LinearSolve,
        16,
        0.0,
        1e-12,
    )?;
    check(
        "capacity-routes-agree",
        (cap_green - eq.capacity).abs() < 1e-10,
        format!("{cap_green} vs {}", eq.capacity),
    );

    // vacancy law quick check
    let u = 1.0 / eq.capacity;
    use rayon::prelude::*;
    let samples = 2_000usize;
    let vacant: usize = (0..samples)
        .into_par_iter()
        .map(|r| {
            let mut rng = cover_core::rngstream::replica_rng(cfg.seed, r as u64);
            let s = cover_core::interlacements::sample_trace(
                &psi,
                &[vec![0, 0, 0]],
                u,
                &eq,
                24.0,
                &mut rng,
            );
            usize::from(s.trace.is_empty())
        })
        .sum();
    let want = (-1.0f64).exp();
    let emp = vacant as f64 / samples as f64;
    let se = (want * (1.0 - want) / samples as f64).sqrt();
    check(
        "vacancy-law",
        (emp - want).abs() < 4.0 * se,
        format!("{emp} vs {want}"),
    );

    // walk determinism
    let cfg_w = cover_core::walk::WalkConfig {
        start: cover_core::walk::Start::Stationary,
        t_max: 200_000,
        seed: cfg.seed,
        replica_id: 0,
    };
    let run = |cfg_w: &cover_core::walk::WalkConfig| {
        cover_core::walk::run_cover(&c.domain, &c.kernel, &c.eig, &c.target, cfg_w)
    };
    let a = run(&cfg_w);
    let b = run(&cfg_w);
    let same = match (&a, &b) {
        (Ok(x), Ok(y)) => x.cover_time == y.cover_time && x.hit_time == y.hit_time,
        (Err(cover_core::walk::WalkError::BudgetExhausted { partial: x, .. }),
         Err(cover_core::walk::WalkError::BudgetExhausted { partial: y, .. })) => {
            x.hit_time == y.hit_time
        }
        _ => false,
    };
    check("walk-determinism", same, "replica reruns differ".into());

    if failures == 0 {
        println!("validate: all invariants passed (N = {})", cfg.n);
        Ok(())
    } else {
        Err(CliError::Numerical(format!("{failures} invariant(s) failed")))
    }
}
