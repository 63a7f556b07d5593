//! The `hypoldp` command line front end.
//!
//! Exit codes: 0 on success, 1 on domain failure (no convergence, degree cap
//! reached, Monte Carlo failure), 2 on usage errors including malformed
//! system files.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::excitation::{certify_nondegenerate, directional_excitation, induction_bound, CertifyOptions};
use crate::fixtures;
use crate::linalg::Projection;
use crate::montecarlo::{
    counterexample_exact, estimate_density, ldp_verify, simulate_endpoints, Bandwidth, SimConfig,
};
use crate::ratefn::{minimize_energy, EndpointConstraint, OptimizerOptions};
use crate::roughpath::{besov_homogeneous_norm, holder_dist, BesovParams, RoughPath};
use crate::skeleton::CMPath;
use crate::vectorfields::{estimate_constants, hormander_degree, FieldError, HormanderOptions, VectorFieldSystem};
use crate::ARTIFACT_VERSION;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "HYPOLDP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "hypoldp", version, about = "Small-noise large deviations for hypoelliptic diffusions")]
struct Cli {
    /// Worker threads (capped by HYPOLDP_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Strong Hörmander degree, frame and local constants at a point.
    Brackets(BracketsArgs),
    /// Minimal-energy control for an endpoint constraint.
    Rate(RateArgs),
    /// Excitation of a control until its covariance is non-degenerate.
    Excite(ExciteArgs),
    /// Level-2 lift of a sampled path.
    Lift(LiftArgs),
    /// Endpoints or density estimates of the scaled SDE.
    Simulate(SimulateArgs),
    /// Compares eps^2 log p_hat with minus the minimal energy.
    VerifyLdp(VerifyArgs),
    /// Closed-form table for the weak-Hörmander counterexample.
    Counterexample(CounterexampleArgs),
}

#[derive(Debug, Args)]
struct SystemArg {
    /// System JSON file, or a built-in fixture name.
    #[arg(long)]
    system: String,
}

#[derive(Debug, Args)]
struct ConstraintArgs {
    /// Start point, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    from: String,
    /// Target point for full pinning.
    #[arg(long, allow_hyphen_values = true, conflicts_with_all = ["project", "target"])]
    to: Option<String>,
    /// Pinned coordinates (1-based, comma separated).
    #[arg(long, requires = "target")]
    project: Option<String>,
    /// Target of the pinned coordinates.
    #[arg(long, allow_hyphen_values = true, requires = "project")]
    target: Option<String>,
}

#[derive(Debug, Args)]
struct OptimizerArgs {
    #[arg(long, default_value_t = 64)]
    segments: usize,
    #[arg(long, default_value_t = 16)]
    restarts: usize,
    #[arg(long, default_value_t = 4)]
    excitation_restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct BracketsArgs {
    #[command(flatten)]
    system: SystemArg,
    /// Base point, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    at: String,
    #[arg(long, default_value_t = 6)]
    kmax: usize,
    #[arg(long, default_value_t = 1e-9)]
    rank_tol: f64,
    /// Also estimate r, T, M and L.
    #[arg(long)]
    constants: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RateArgs {
    #[command(flatten)]
    system: SystemArg,
    #[command(flatten)]
    constraint: ConstraintArgs,
    #[command(flatten)]
    optimizer: OptimizerArgs,
    /// Result JSON (stdout when omitted).
    #[arg(long)]
    json: Option<PathBuf>,
    /// Minimiser CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExciteArgs {
    #[command(flatten)]
    system: SystemArg,
    #[arg(long, allow_hyphen_values = true)]
    at: String,
    /// Control JSON (`{"grid": [...], "slopes": [[...]]}`); zero control on
    /// [0, 1] when omitted.
    #[arg(long)]
    control: Option<PathBuf>,
    /// Pinned coordinates (1-based) for the projected covariance.
    #[arg(long)]
    project: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LiftArgs {
    /// CSV of path samples at 2^k + 1 equally spaced times; a first column
    /// named `t` is dropped.
    #[arg(long)]
    input: PathBuf,
    /// Dyadic level of the output (coarsened or refined from the input).
    #[arg(long)]
    level: Option<u32>,
    #[arg(long, default_value_t = 0.45)]
    alpha: f64,
    #[arg(long, default_value_t = 8)]
    m: u32,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BandwidthRule {
    Scott,
    Silverman,
}

impl From<BandwidthRule> for Bandwidth {
    fn from(b: BandwidthRule) -> Self {
        match b {
            BandwidthRule::Scott => Bandwidth::Scott,
            BandwidthRule::Silverman => Bandwidth::Silverman,
        }
    }
}

#[derive(Debug, Args)]
struct SimArgs {
    /// Noise levels, comma separated.
    #[arg(long)]
    eps: String,
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    #[arg(long, default_value_t = 8)]
    level: u32,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value = "scott")]
    bandwidth: BandwidthRule,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    system: SystemArg,
    #[arg(long, allow_hyphen_values = true)]
    from: String,
    #[command(flatten)]
    sim: SimArgs,
    /// Density target; without it the endpoints are written.
    #[arg(long, allow_hyphen_values = true)]
    target: Option<String>,
    #[arg(long, requires = "target")]
    project: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    system: SystemArg,
    #[command(flatten)]
    constraint: ConstraintArgs,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, default_value_t = 64)]
    segments: usize,
    #[arg(long, default_value_t = 16)]
    restarts: usize,
    /// Also estimate Besov ball weights around the minimiser.
    #[arg(long)]
    balls: bool,
    /// Conditioning radius (default 0.1 eps).
    #[arg(long)]
    delta: Option<f64>,
    /// Besov ball radius.
    #[arg(long, default_value_t = 2.0)]
    ball_radius: f64,
    /// Table CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full report JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CounterexampleArgs {
    #[arg(long, default_value = "1,0.7,0.5,0.35")]
    eps: String,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    x2: f64,
    /// Monte Carlo paths for a comparison column (0 disables it).
    #[arg(long, default_value_t = 0)]
    mc_paths: usize,
    #[arg(long, default_value_t = 8)]
    level: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Domain(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Domain(m) => m,
        }
    }
}

fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

type CliResult<T> = Result<T, CliError>;

/// Runs the CLI on `args` (including the program name), writing artifacts
/// to `out` unless redirected to files and diagnostics to `err`. Returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let threads = effective_threads(cli.threads, std::env::var(THREADS_ENV).ok().as_deref());
    let result = match cli.command {
        Command::Brackets(a) => brackets(a, out),
        Command::Rate(a) => rate(a, threads, out),
        Command::Excite(a) => excite(a, out),
        Command::Lift(a) => lift(a, out),
        Command::Simulate(a) => simulate(a, threads, out),
        Command::VerifyLdp(a) => verify(a, threads, out),
        Command::Counterexample(a) => counterexample(a, threads, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.code()
        }
    }
}

/// The flag value capped by the environment variable; unparsable or zero
/// environment values are ignored.
fn effective_threads(flag: Option<usize>, env: Option<&str>) -> Option<usize> {
    let cap = env.and_then(|v| v.trim().parse::<usize>().ok()).filter(|&v| v > 0);
    match (flag, cap) {
        (Some(f), Some(c)) => Some(f.min(c).max(1)),
        (Some(f), None) => Some(f.max(1)),
        (None, c) => c,
    }
}

fn parse_vec(s: &str, what: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| usage(format!("--{what}: cannot parse {t:?} as a number"))))
        .collect()
}

fn parse_dims(s: &str, n: usize) -> CliResult<Projection> {
    let axes = s
        .split(',')
        .map(|t| match t.trim().parse::<usize>() {
            Ok(k) if k >= 1 && k <= n => Ok(k - 1),
            _ => Err(usage(format!("--project: {t:?} is not a coordinate in 1..={n}"))),
        })
        .collect::<CliResult<Vec<_>>>()?;
    Projection::coordinates(n, &axes).map_err(usage)
}

fn load_system(name: &str) -> CliResult<VectorFieldSystem> {
    let path = Path::new(name);
    if path.exists() {
        return VectorFieldSystem::from_json_file(path).map_err(|e| match e {
            FieldError::InvalidSystem { .. } => usage(format!("{}: {e}", path.display())),
            other => domain(other),
        });
    }
    fixtures::by_name(name).ok_or_else(|| usage(format!("system file {name:?} not found and not a fixture name")))
}

fn check_len(v: &[f64], n: usize, what: &str) -> CliResult<()> {
    if v.len() == n {
        Ok(())
    } else {
        Err(usage(format!("--{what} has {} coordinates, the system has {n}", v.len())))
    }
}

fn constraint(sys: &VectorFieldSystem, c: &ConstraintArgs) -> CliResult<EndpointConstraint> {
    let n = sys.n();
    let start = parse_vec(&c.from, "from")?;
    check_len(&start, n, "from")?;
    match (&c.to, &c.project, &c.target) {
        (Some(to), None, None) => {
            let target = parse_vec(to, "to")?;
            check_len(&target, n, "to")?;
            EndpointConstraint::point(start, target).map_err(usage)
        }
        (None, Some(dims), Some(target)) => {
            let p = parse_dims(dims, n)?;
            let target = parse_vec(target, "target")?;
            check_len(&target, p.dim(), "target")?;
            EndpointConstraint::projected(start, p, target).map_err(usage)
        }
        _ => Err(usage("give either --to or both --project and --target")),
    }
}

/// Lowercase hex SHA-256 of the canonical (key-sorted) JSON of `config`.
pub fn config_hash(config: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(config).expect("json values serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn header(seed: u64, config: &serde_json::Value) -> String {
    format!(
        "# artifact_version: {ARTIFACT_VERSION}\n# seed: {seed}\n# config_hash: {}\n",
        config_hash(config)
    )
}

fn emit(path: Option<&Path>, text: &str, out: &mut dyn Write) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| domain(format!("{}: {e}", p.display()))),
        None => out.write_all(text.as_bytes()).map_err(domain),
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("results serialize");
    s.push('\n');
    s
}

fn brackets(a: BracketsArgs, out: &mut dyn Write) -> CliResult<()> {
    let sys = load_system(&a.system.system)?;
    let x = parse_vec(&a.at, "at")?;
    check_len(&x, sys.n(), "at")?;
    let opts = HormanderOptions { kmax: a.kmax, rank_tol: a.rank_tol };
    let mut cert = hormander_degree(&sys, &x, opts).map_err(domain)?;
    if a.constants {
        cert = estimate_constants(&sys, &cert).map_err(domain)?;
    }
    let doc = json!({
        "artifact_version": ARTIFACT_VERSION,
        "degree": cert.degree,
        "frame": cert.frame.iter().map(|w| w.to_string()).collect::<Vec<_>>(),
        "certificate": cert,
    });
    emit(a.out.as_deref(), &to_json(&doc), out)
}

fn optimizer_options(o: &OptimizerArgs, threads: Option<usize>) -> OptimizerOptions {
    OptimizerOptions {
        segments: o.segments,
        random_restarts: o.restarts,
        excitation_restarts: o.excitation_restarts,
        seed: o.seed,
        threads,
        ..OptimizerOptions::default()
    }
}

fn rate(a: RateArgs, threads: Option<usize>, out: &mut dyn Write) -> CliResult<()> {
    let sys = load_system(&a.system.system)?;
    let c = constraint(&sys, &a.constraint)?;
    let opts = optimizer_options(&a.optimizer, threads);
    let result = minimize_energy(&sys, &c, &opts).map_err(domain)?;
    let config = json!({
        "command": "rate",
        "system": serde_json::from_str::<serde_json::Value>(&sys.to_json_string()).expect("valid json"),
        "constraint": c,
        "segments": opts.segments,
        "restarts": opts.random_restarts,
        "excitation_restarts": opts.excitation_restarts,
        "seed": opts.seed,
    });
    let doc = json!({
        "artifact_version": ARTIFACT_VERSION,
        "seed": opts.seed,
        "config_hash": config_hash(&config),
        "result": result,
    });
    emit(a.json.as_deref(), &to_json(&doc), out)?;
    if let Some(p) = &a.csv {
        emit(Some(p), &(header(opts.seed, &config) + &result.h_star.to_csv()), out)?;
    }
    if result.converged {
        Ok(())
    } else {
        Err(domain(format!("no start converged (best residual {:e})", result.residual)))
    }
}

fn excite(a: ExciteArgs, out: &mut dyn Write) -> CliResult<()> {
    let sys = load_system(&a.system.system)?;
    let x = parse_vec(&a.at, "at")?;
    check_len(&x, sys.n(), "at")?;
    let h = match &a.control {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize::<_, CMPath>(de)
                .map_err(|e| usage(format!("{}: at {}: {}", p.display(), e.path(), e.inner())))?
        }
        None => CMPath::zero(sys.d(), 1.0, 64),
    };
    if h.d() != sys.d() {
        return Err(usage(format!("control has {} components, the system has {}", h.d(), sys.d())));
    }
    let projection = a.project.as_deref().map(|s| parse_dims(s, sys.n())).transpose()?;
    let cert = certify_nondegenerate(&sys, &x, &h, projection.as_ref(), CertifyOptions::default()).map_err(domain)?;
    let mut bounds = Vec::new();
    if let Some(s) = &cert.schedule {
        for i in 0..sys.n() {
            let mut v = vec![0.0; sys.n()];
            v[i] = 1.0;
            let dx = directional_excitation(&sys, &cert.certificate, &v, s.tau, CertifyOptions::default().substeps)
                .map_err(domain)?;
            bounds.push(json!({"direction": v, "word": dx.word, "achieved": dx.achieved, "bound": dx.bound}));
        }
    }
    let doc = json!({
        "artifact_version": ARTIFACT_VERSION,
        "schedule": cert.schedule,
        "beta": cert.schedule.as_ref().map(|s| s.beta),
        "induction_bound": cert.schedule.as_ref().map(induction_bound),
        "directional": bounds,
        "before_eigenvalues": cert.before.eigenvalues,
        "after_eigenvalues": cert.after.eigenvalues,
        "before_min_eig": cert.before.min_eig,
        "after_min_eig": cert.after.min_eig,
        "floor": cert.floor,
        "endpoint_shift": cert.endpoint_shift,
        "distance": cert.distance,
        "attempts": cert.attempts,
        "h_beta": cert.h_beta,
    });
    emit(a.out.as_deref(), &to_json(&doc), out)
}

fn read_samples(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    let mut drop_first = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if rows.is_empty() && cells.iter().any(|c| c.parse::<f64>().is_err()) {
            drop_first = cells[0] == "t";
            continue;
        }
        let cells = if drop_first { &cells[1..] } else { &cells[..] };
        let row = cells
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| usage(format!("{}:{}: bad number {c:?}", path.display(), lineno + 1))))
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(usage(format!("{}: need at least two samples", path.display())));
    }
    Ok(rows)
}

fn lift(a: LiftArgs, out: &mut dyn Write) -> CliResult<()> {
    let params = BesovParams::new(a.alpha, a.m).map_err(usage)?;
    let samples = read_samples(&a.input)?;
    let mut w = RoughPath::lift_piecewise_linear(&samples, a.horizon).map_err(usage)?;
    if let Some(k) = a.level {
        while w.level() > k {
            w = w.coarsen().expect("level above target");
        }
        while w.level() < k {
            w = w.refine();
        }
    }
    let zero = RoughPath::zero(w.d(), w.level(), w.horizon());
    let holder = holder_dist(&w, &zero, a.alpha).map_err(domain)?;
    let d = w.d();
    let mut s = format!(
        "# artifact_version: {ARTIFACT_VERSION}\n# level: {}\n# besov_homogeneous_norm: {}\n# holder_level1: {}\n# holder_level2: {}\ns,t",
        w.level(),
        besov_homogeneous_norm(&w, &params),
        holder.level1,
        holder.level2
    );
    for i in 1..=d {
        s.push_str(&format!(",w1_{i}"));
    }
    for i in 1..=d {
        for j in 1..=d {
            s.push_str(&format!(",w2_{i}{j}"));
        }
    }
    s.push('\n');
    for k in 0..w.segments() {
        let seg = w.segment(k);
        s.push_str(&format!("{},{}", seg.s, seg.t));
        for v in seg.level1.iter().chain(&seg.level2) {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    emit(a.out.as_deref(), &s, out)
}

fn sim_config(s: &SimArgs, threads: Option<usize>) -> CliResult<SimConfig> {
    let eps = parse_vec(&s.eps, "eps")?;
    let mut cfg = SimConfig::new(eps, s.paths, s.level, s.seed);
    cfg.bandwidth = s.bandwidth.into();
    cfg.threads = threads;
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn system_json(sys: &VectorFieldSystem) -> serde_json::Value {
    serde_json::from_str(&sys.to_json_string()).expect("valid json")
}

fn simulate(a: SimulateArgs, threads: Option<usize>, out: &mut dyn Write) -> CliResult<()> {
    let sys = load_system(&a.system.system)?;
    let x0 = parse_vec(&a.from, "from")?;
    check_len(&x0, sys.n(), "from")?;
    let cfg = sim_config(&a.sim, threads)?;
    let projection = a.project.as_deref().map(|s| parse_dims(s, sys.n())).transpose()?;
    let target = a.target.as_deref().map(|t| parse_vec(t, "target")).transpose()?;
    if let Some(t) = &target {
        check_len(t, projection.as_ref().map_or(sys.n(), Projection::dim), "target")?;
    }
    let config = json!({
        "command": "simulate",
        "system": system_json(&sys),
        "from": x0,
        "target": target,
        "project": projection.as_ref().map(|p| p.basis().row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>()),
        "sim": cfg,
    });
    let mut text = header(cfg.seed, &config);
    match &target {
        Some(t) => {
            text.push_str("epsilon,p_hat,stderr,eps2_log_p,n_effective,n_samples,blowups\n");
            for &eps in &cfg.epsilons {
                let ends = simulate_endpoints(&sys, &x0, eps, &cfg).map_err(domain)?;
                let est = estimate_density(&ends, t, projection.as_ref(), cfg.bandwidth, eps).map_err(domain)?;
                text.push_str(&format!(
                    "{eps},{:e},{:e},{},{},{},{}\n",
                    est.p_hat,
                    est.stderr,
                    eps * eps * est.p_hat.ln(),
                    est.n_effective,
                    est.n_samples,
                    ends.blowups().len()
                ));
            }
        }
        None => {
            text.push_str("epsilon,path");
            for i in 1..=sys.n() {
                text.push_str(&format!(",x{i}"));
            }
            text.push('\n');
            for &eps in &cfg.epsilons {
                let ends = simulate_endpoints(&sys, &x0, eps, &cfg).map_err(domain)?;
                for (i, r) in ends.rows().enumerate() {
                    text.push_str(&format!("{eps},{}", ends.path_index(i)));
                    for v in r {
                        text.push_str(&format!(",{v}"));
                    }
                    text.push('\n');
                }
            }
        }
    }
    emit(a.out.as_deref(), &text, out)
}

fn verify(a: VerifyArgs, threads: Option<usize>, out: &mut dyn Write) -> CliResult<()> {
    let sys = load_system(&a.system.system)?;
    let c = constraint(&sys, &a.constraint)?;
    let mut cfg = sim_config(&a.sim, threads)?;
    cfg.ball_radius = a.delta;
    cfg.ball_norm_radius = a.ball_radius;
    cfg.validate().map_err(usage)?;
    let opts = OptimizerOptions {
        segments: a.segments,
        random_restarts: a.restarts,
        seed: cfg.seed,
        threads,
        ..OptimizerOptions::default()
    };
    let rate = minimize_energy(&sys, &c, &opts).map_err(domain)?;
    if !rate.converged {
        return Err(domain(format!("rate optimisation did not converge (residual {:e})", rate.residual)));
    }
    let report = ldp_verify(&sys, &c, &cfg, &rate, a.balls).map_err(domain)?;
    let config = json!({
        "command": "verify-ldp",
        "system": system_json(&sys),
        "constraint": c,
        "sim": cfg,
        "segments": a.segments,
        "restarts": a.restarts,
        "balls": a.balls,
    });
    let head = header(cfg.seed, &config);
    emit(a.out.as_deref(), &(head.clone() + &format!("# energy: {}\n", rate.energy) + &report.to_csv()), out)?;
    if let Some(p) = &a.json {
        let doc = json!({
            "artifact_version": ARTIFACT_VERSION,
            "seed": cfg.seed,
            "config_hash": config_hash(&config),
            "report": report,
        });
        emit(Some(p), &to_json(&doc), out)?;
    }
    Ok(())
}

fn counterexample(a: CounterexampleArgs, threads: Option<usize>, out: &mut dyn Write) -> CliResult<()> {
    let eps = parse_vec(&a.eps, "eps")?;
    let sys = fixtures::counterexample();
    let mc = (a.mc_paths > 0)
        .then(|| {
            let mut cfg = SimConfig::new(eps.clone(), a.mc_paths, a.level, a.seed);
            cfg.threads = threads;
            cfg.validate().map_err(usage).map(|()| cfg)
        })
        .transpose()?;
    let mut text = String::new();
    if let Some(cfg) = &mc {
        let config = json!({"command": "counterexample", "x2": a.x2, "sim": cfg});
        text.push_str(&header(cfg.seed, &config));
    } else {
        text.push_str(&format!("# artifact_version: {ARTIFACT_VERSION}\n"));
    }
    text.push_str("epsilon,x2,p,eps2_log_p,c11,c12,c22");
    if mc.is_some() {
        text.push_str(",p_hat,stderr");
    }
    text.push('\n');
    for &e in &eps {
        let v = counterexample_exact(e, a.x2).map_err(usage)?;
        let c = v.covariance;
        text.push_str(&format!("{e},{},{:e},{},{},{},{}", a.x2, v.p, v.eps2_log_p, c[0][0], c[0][1], c[1][1]));
        if let Some(cfg) = &mc {
            let ends = simulate_endpoints(&sys, &[0.0, 0.0], e, cfg).map_err(domain)?;
            let est = estimate_density(&ends, &[0.0, a.x2], None, cfg.bandwidth, e).map_err(domain)?;
            text.push_str(&format!(",{:e},{:e}", est.p_hat, est.stderr));
        }
        text.push('\n');
    }
    emit(a.out.as_deref(), &text, out)
}
