//! `dmcv`: command-line front end for the dmcv-core key-rate engine.
//!
//! Subcommands: `rate`, `sweep`, `optimize`, `gm-baseline`. Run
//! parameters come from a flat `key=value` config file plus `--set`
//! overrides; results go to a CSV file (or standard output) with a
//! fixed schema, and human-readable progress goes to standard error.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use dmcv_core::rate::{RateOptions, RateReport};
use dmcv_core::search::{
    gm_baseline_grid, linspace_inclusive, optimize_two_ring, ConstellationSpec, GmReport,
    RatePoint, SweepParameter, SweepSpec,
};
use dmcv_core::Error as CoreError;

#[derive(Parser)]
#[command(name = "dmcv", version, about = "Asymptotic key rates for discrete-modulation CV-QKD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the certified key rate at a single parameter point.
    Rate(RunArgs),
    /// Sweep one parameter over a grid, streaming CSV rows.
    Sweep(RunArgs),
    /// Coordinate-descent optimization of the two-ring constellation.
    Optimize(RunArgs),
    /// Gaussian-modulation baseline, optimized over a variance grid.
    GmBaseline(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat key=value config file (UTF-8, '#' comments).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override or supply a single config entry (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Errors carrying the process exit code mandated by the interface:
/// 2 for validation problems, 3 for numerical failures.
enum CliError {
    Validation(String),
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidArgument(m) => CliError::Validation(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Every key the config file and `--set` accept; anything else is a
/// validation error so typos cannot silently skew a sweep.
const KNOWN_KEYS: &[&str] = &[
    "protocol",
    "alpha",
    "alpha1",
    "alpha2",
    "alpha_c",
    "p1",
    "alpha0",
    "distance_km",
    "loss_db_per_km",
    "xi",
    "eta",
    "v_el",
    "beta",
    "n_c",
    "epsilon",
    "fw_tol",
    "fw_max_iter",
    "sweep_parameter",
    "sweep_start",
    "sweep_stop",
    "sweep_step",
    "gm_v_start",
    "gm_v_stop",
    "gm_v_step",
    "output",
    "threads",
];

/// Parsed run configuration, before per-command validation.
#[derive(Default)]
struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    fn insert(&mut self, key: &str, value: &str, origin: &str) -> CliResult<()> {
        let key = key.trim();
        let value = value.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(validation(format!("unknown config key '{key}' ({origin})")));
        }
        if value.is_empty() {
            return Err(validation(format!("empty value for '{key}' ({origin})")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn load(args: &RunArgs) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &args.config {
            let text = fs::read_to_string(path).map_err(|e| {
                validation(format!("cannot read config {}: {e}", path.display()))
            })?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    validation(format!(
                        "config line {} is not key=value: '{line}'",
                        lineno + 1
                    ))
                })?;
                cfg.insert(k, v, "config file")?;
            }
        }
        for entry in &args.set {
            let (k, v) = entry.split_once('=').ok_or_else(|| {
                validation(format!("--set entry is not KEY=VALUE: '{entry}'"))
            })?;
            cfg.insert(k, v, "--set")?;
        }
        Ok(cfg)
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn f64(&self, key: &str) -> CliResult<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(s) => s
                .parse::<f64>()
                .map(Some)
                .map_err(|_| validation(format!("'{key}' must be a number, got '{s}'"))),
        }
    }

    fn f64_or(&self, key: &str, default: f64) -> CliResult<f64> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    fn f64_required(&self, key: &str) -> CliResult<f64> {
        self.f64(key)?
            .ok_or_else(|| validation(format!("missing required config key '{key}'")))
    }

    fn usize(&self, key: &str) -> CliResult<Option<usize>> {
        match self.get(key) {
            None => Ok(None),
            Some(s) => s
                .parse::<usize>()
                .map(Some)
                .map_err(|_| validation(format!("'{key}' must be a non-negative integer, got '{s}'"))),
        }
    }
}

/// Standard defaults for channel and detector parameters.
mod defaults {
    pub const LOSS_DB_PER_KM: f64 = 0.2;
    pub const BETA: f64 = 0.95;
    pub const XI: f64 = 0.01;
    pub const ETA: f64 = 0.552;
    pub const V_EL: f64 = 0.015;
    pub const N_C: usize = 12;
    pub const GM_V_START: f64 = 0.05;
    pub const GM_V_STOP: f64 = 20.0;
    pub const GM_V_STEP: f64 = 0.05;
}

fn build_rate_point(cfg: &RunConfig) -> CliResult<RatePoint> {
    let protocol = cfg
        .get("protocol")
        .ok_or_else(|| validation("missing required config key 'protocol'"))?;
    let spec = match protocol {
        "psk4" | "psk8" | "psk12" => {
            let points = protocol[3..].parse::<usize>().unwrap();
            let alpha = cfg.f64("alpha")?.ok_or_else(|| {
                validation(format!("protocol {protocol} requires 'alpha'"))
            })?;
            ConstellationSpec::Psk { points, alpha }
        }
        "two-ring" => ConstellationSpec::TwoRing {
            alpha1: cfg.f64_required("alpha1")?,
            alpha2: cfg.f64_required("alpha2")?,
            p1: cfg.f64_required("p1")?,
            alpha_c: cfg.f64_required("alpha_c")?,
        },
        other => {
            return Err(validation(format!(
                "unknown protocol '{other}' (expected psk4, psk8, psk12, two-ring)"
            )))
        }
    };
    let point = RatePoint {
        spec,
        alpha0: cfg.f64_or("alpha0", 0.0)?,
        distance_km: cfg.f64_required("distance_km")?,
        loss_db_per_km: cfg.f64_or("loss_db_per_km", defaults::LOSS_DB_PER_KM)?,
        xi: cfg.f64_or("xi", defaults::XI)?,
        eta: cfg.f64_or("eta", defaults::ETA)?,
        v_el: cfg.f64_or("v_el", defaults::V_EL)?,
        n_c: cfg.usize("n_c")?.unwrap_or(defaults::N_C),
        beta: cfg.f64_or("beta", defaults::BETA)?,
    };
    // surface bad physical parameters before any expensive work
    point.constellation()?;
    point.partition()?;
    point.channel()?;
    point.detector()?;
    Ok(point)
}

fn build_rate_options(cfg: &RunConfig) -> CliResult<RateOptions> {
    let mut opts = RateOptions::default();
    if let Some(eps) = cfg.f64("epsilon")? {
        if !(eps > 0.0 && eps < 1e-2) {
            return Err(validation("'epsilon' must lie in (0, 1e-2)"));
        }
        opts.eps_run = eps;
        opts.eps_cert = Some(eps);
    }
    if let Some(tol) = cfg.f64("fw_tol")? {
        if tol <= 0.0 {
            return Err(validation("'fw_tol' must be positive"));
        }
        opts.fw.gap_tol = tol;
    }
    if let Some(n) = cfg.usize("fw_max_iter")? {
        if n == 0 {
            return Err(validation("'fw_max_iter' must be at least 1"));
        }
        opts.fw.max_iter = n;
    }
    Ok(opts)
}

fn apply_thread_budget(cfg: &RunConfig) -> CliResult<()> {
    if let Some(n) = cfg.usize("threads")? {
        if n == 0 {
            return Err(validation("'threads' must be at least 1"));
        }
        // DMCV_THREADS in the environment wins over the config file
        if std::env::var_os("DMCV_THREADS").is_none() {
            std::env::set_var("DMCV_THREADS", n.to_string());
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// CSV output

const CSV_HEADER: &str = "protocol,distance_km,alpha,alpha1,alpha2,alpha_c,p1,alpha0,\
n_c,epsilon,upper_bound,lower_bound,delta_ec,p_pass,key_rate,status,wall_seconds";

/// 12 significant digits, '.' decimal separator.
fn fmt_sig(x: f64) -> String {
    format!("{x:.11e}")
}

fn sanitize_status(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

enum Sink {
    Stdout(io::Stdout),
    File(fs::File),
}

impl Sink {
    fn open(cfg: &RunConfig) -> CliResult<Self> {
        match cfg.get("output") {
            None => Ok(Sink::Stdout(io::stdout())),
            Some(path) => fs::File::create(path)
                .map(Sink::File)
                .map_err(|e| validation(format!("cannot create output {path}: {e}"))),
        }
    }

    fn writer(&mut self) -> &mut dyn Write {
        match self {
            Sink::Stdout(s) => s,
            Sink::File(f) => f,
        }
    }

    fn line(&mut self, text: &str) -> CliResult<()> {
        let w = self.writer();
        writeln!(w, "{text}")
            .and_then(|_| w.flush())
            .map_err(|e| CliError::Numerical(format!("write failed: {e}")))
    }
}

/// One CSV row. Fields that do not apply to the protocol stay empty.
fn csv_row(
    point: &RatePoint,
    report: Option<&RateReport>,
    status: &str,
    wall_seconds: f64,
) -> String {
    let (alpha, a1, a2, ac, p1) = match &point.spec {
        ConstellationSpec::Psk { alpha, .. } => {
            (Some(*alpha), None, None, None, None)
        }
        ConstellationSpec::TwoRing { alpha1, alpha2, p1, alpha_c } => {
            (None, Some(*alpha1), Some(*alpha2), Some(*alpha_c), Some(*p1))
        }
    };
    let protocol = match &point.spec {
        ConstellationSpec::Psk { points, .. } => format!("psk{points}"),
        ConstellationSpec::TwoRing { .. } => "two-ring".to_string(),
    };
    let opt = |v: Option<f64>| v.map(fmt_sig).unwrap_or_default();
    let mut row = String::new();
    let _ = write!(
        row,
        "{},{},{},{},{},{},{},{},{},",
        protocol,
        fmt_sig(point.distance_km),
        opt(alpha),
        opt(a1),
        opt(a2),
        opt(ac),
        opt(p1),
        fmt_sig(point.alpha0),
        point.n_c,
    );
    match report {
        Some(r) => {
            let _ = write!(
                row,
                "{},{},{},{},{},{},{},{}",
                fmt_sig(r.epsilon),
                fmt_sig(r.upper_bound),
                fmt_sig(r.lower_bound),
                fmt_sig(r.delta_ec),
                fmt_sig(r.p_pass),
                fmt_sig(r.key_rate),
                sanitize_status(status),
                fmt_sig(wall_seconds),
            );
        }
        None => {
            let _ = write!(
                row,
                ",,,,,,{},{}",
                sanitize_status(status),
                fmt_sig(wall_seconds)
            );
        }
    }
    row
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_rate(cfg: &RunConfig) -> CliResult<()> {
    let point = build_rate_point(cfg)?;
    let opts = build_rate_options(cfg)?;
    let mut sink = Sink::open(cfg)?;
    sink.line(CSV_HEADER)?;
    let t0 = Instant::now();
    eprintln!("dmcv rate: evaluating one point (n_c = {}) ...", point.n_c);
    let report = point.evaluate(&opts)?;
    let wall = t0.elapsed().as_secs_f64();
    eprintln!(
        "dmcv rate: key_rate = {:.6e} bits/pulse (lower {:.6e}, upper {:.6e}, p_pass {:.4}, {:.1} s)",
        report.key_rate, report.lower_bound, report.upper_bound, report.p_pass, wall
    );
    sink.line(&csv_row(&point, Some(&report), "ok", wall))
}

fn cmd_sweep(cfg: &RunConfig) -> CliResult<()> {
    let base = build_rate_point(cfg)?;
    let opts = build_rate_options(cfg)?;
    let parameter = cfg
        .get("sweep_parameter")
        .ok_or_else(|| validation("missing required config key 'sweep_parameter'"))?;
    let spec = SweepSpec {
        base,
        parameter: SweepParameter::parse(parameter)?,
        start: cfg.f64_required("sweep_start")?,
        stop: cfg.f64_required("sweep_stop")?,
        step: cfg.f64_required("sweep_step")?,
    };
    let grid = spec.grid()?;
    // resolve every grid point up front so a bad sweep fails before
    // any computation
    let points: Vec<RatePoint> = grid
        .iter()
        .map(|&v| spec.point_at(v))
        .collect::<dmcv_core::Result<_>>()?;
    let mut sink = Sink::open(cfg)?;
    sink.line(CSV_HEADER)?;
    eprintln!(
        "dmcv sweep: {} points over {} in [{}, {}] step {}",
        points.len(),
        parameter,
        spec.start,
        spec.stop,
        spec.step
    );
    let t0 = Instant::now();
    let chunk = dmcv_core::search::thread_budget()
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let mut any_ok = false;
    for (chunk_idx, block) in points.chunks(chunk).enumerate() {
        let results = dmcv_core::search::evaluate_many(block, &opts);
        for (point, res) in block.iter().zip(results) {
            let wall = t0.elapsed().as_secs_f64();
            match res {
                Ok(report) => {
                    any_ok = true;
                    eprintln!(
                        "dmcv sweep: point done, key_rate = {:.6e}",
                        report.key_rate
                    );
                    sink.line(&csv_row(point, Some(&report), "ok", wall))?;
                }
                Err(e) => {
                    eprintln!("dmcv sweep: point failed: {e}");
                    sink.line(&csv_row(point, None, &format!("error: {e}"), wall))?;
                }
            }
        }
        let done = (chunk_idx * chunk + block.len()).min(points.len());
        eprintln!("dmcv sweep: {done}/{} points written", points.len());
    }
    if !any_ok {
        return Err(CliError::Numerical("every sweep point failed".into()));
    }
    Ok(())
}

fn cmd_optimize(cfg: &RunConfig) -> CliResult<()> {
    let base = build_rate_point(cfg)?;
    if !matches!(base.spec, ConstellationSpec::TwoRing { .. }) {
        return Err(validation("'optimize' requires protocol=two-ring"));
    }
    let opts = build_rate_options(cfg)?;
    let mut sink = Sink::open(cfg)?;
    sink.line(CSV_HEADER)?;
    eprintln!("dmcv optimize: coordinate descent over (alpha1, alpha2, p1, alpha_c) ...");
    let t0 = Instant::now();
    let opt = optimize_two_ring(&base, &opts, 8)?;
    for cand in &opt.visited {
        let mut pt = base.clone();
        pt.spec = ConstellationSpec::TwoRing {
            alpha1: cand.alpha1,
            alpha2: cand.alpha2,
            p1: cand.p1,
            alpha_c: cand.alpha_c,
        };
        let wall = t0.elapsed().as_secs_f64();
        match &cand.report {
            Some(r) => sink.line(&csv_row(&pt, Some(r), "visited", wall))?,
            None => sink.line(&csv_row(&pt, None, "error: evaluation failed", wall))?,
        }
    }
    let mut best = base.clone();
    best.spec = ConstellationSpec::TwoRing {
        alpha1: opt.alpha1,
        alpha2: opt.alpha2,
        p1: opt.p1,
        alpha_c: opt.alpha_c,
    };
    let wall = t0.elapsed().as_secs_f64();
    eprintln!(
        "dmcv optimize: best (alpha1, alpha2, alpha_c, p1) = ({}, {}, {}, {:.6}) \
         with key_rate = {:.6e} after {} evaluations",
        opt.alpha1, opt.alpha2, opt.alpha_c, opt.p1, opt.report.key_rate, opt.evaluations
    );
    sink.line(&csv_row(&best, Some(&opt.report), "optimal", wall))
}

fn cmd_gm_baseline(cfg: &RunConfig) -> CliResult<()> {
    let distance_km = cfg.f64_required("distance_km")?;
    let loss = cfg.f64_or("loss_db_per_km", defaults::LOSS_DB_PER_KM)?;
    let xi = cfg.f64_or("xi", defaults::XI)?;
    let eta = cfg.f64_or("eta", defaults::ETA)?;
    let v_el = cfg.f64_or("v_el", defaults::V_EL)?;
    let beta = cfg.f64_or("beta", defaults::BETA)?;
    let channel = dmcv_core::statistics::ChannelModel::new(distance_km, loss, xi)?;
    let det = dmcv_core::fock::DetectorModel::new(eta, v_el)?;
    let v_start = cfg.f64_or("gm_v_start", defaults::GM_V_START)?;
    let v_stop = cfg.f64_or("gm_v_stop", defaults::GM_V_STOP)?;
    let v_step = cfg.f64_or("gm_v_step", defaults::GM_V_STEP)?;
    if !(v_start > 0.0 && v_stop >= v_start && v_step > 0.0) {
        return Err(validation("invalid modulation-variance grid"));
    }
    let grid = linspace_inclusive(v_start, v_stop, v_step);
    let t0 = Instant::now();
    let rep: GmReport = gm_baseline_grid(&channel, &det, beta, &grid)?;
    let wall = t0.elapsed().as_secs_f64();
    eprintln!(
        "dmcv gm-baseline: key_rate = {:.6e} bits/pulse at V_A = {:.4} \
         (I_AB = {:.6e}, Holevo = {:.6e})",
        rep.key_rate, rep.v_a, rep.mutual_information, rep.holevo_bound
    );
    let mut sink = Sink::open(cfg)?;
    sink.line(CSV_HEADER)?;
    // map onto the shared schema: available bits = beta * I_AB as the
    // bound columns, Holevo as the leakage, p_pass = 1
    let available = beta * rep.mutual_information;
    let row = format!(
        "gm,{},,,,,,{},,,{},{},{},{},{},ok,{}",
        fmt_sig(distance_km),
        fmt_sig(0.0),
        fmt_sig(available),
        fmt_sig(available),
        fmt_sig(rep.holevo_bound),
        fmt_sig(1.0),
        fmt_sig(rep.key_rate.max(0.0)),
        fmt_sig(wall),
    );
    sink.line(&row)
}

fn run() -> CliResult<()> {
    let cli = Cli::parse();
    let args = match &cli.command {
        Command::Rate(a) | Command::Sweep(a) | Command::Optimize(a) | Command::GmBaseline(a) => a,
    };
    let cfg = RunConfig::load(args)?;
    apply_thread_budget(&cfg)?;
    match &cli.command {
        Command::Rate(_) => cmd_rate(&cfg),
        Command::Sweep(_) => cmd_sweep(&cfg),
        Command::Optimize(_) => cmd_optimize(&cfg),
        Command::GmBaseline(_) => cmd_gm_baseline(&cfg),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dmcv: error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
