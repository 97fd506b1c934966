//! `refprior` command-line front end.
//!
//! Settings resolve as flags > JSON config file > defaults. Every run writes
//! its reports under `output_dir` together with `manifest.json`. Exit codes:
//! 0 success, 1 bad input or usage, 2 a numerical contract was violated.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    distance_power_matrix, expansion_report, in_scope, inverse_norm_exponent, log_grid, measure_tail_slopes,
    nondegeneracy_check, signed_spectrum, Branch, ExpansionReport, InverseNormReport, NondegeneracyReport, SignedSpectrum,
    TailSlopes, TolPolicy,
};
use crate::basis::RegressionBasis;
use crate::design::{read_observations, DesignSet};
use crate::error::{Error, Result};
use crate::io::fmt_num;
use crate::kernel::{Family, KernelSpec, Parametrization, SmoothnessProfile};
use crate::model::{build_model, GpModel, Precision};
use crate::posterior::{
    build_posterior_curve, map_theta, predict, prior_curve, sample_joint, PosteriorCurve, QuadratureOptions,
};
use crate::spectral::{f_matrix_check, prior_ceiling, FMatrixReport, PriorCeiling};
use crate::suite::{bound_suite, derivative_suite, identity_suite, spectral_suite, Row};

/// Slope excess over a predicted exponent that still counts as agreement.
pub const SLOPE_TOL: f64 = 0.15;

/// Fully resolved settings of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub design_path: Option<PathBuf>,
    pub obs_path: Option<PathBuf>,
    pub new_points_path: Option<PathBuf>,
    pub kernel: KernelSpec,
    pub basis: RegressionBasis,
    pub precision: Precision,
    pub theta_bounds: Option<(f64, f64)>,
    pub quadrature: QuadratureOptions,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    /// Points of the `prior` curve.
    pub grid_points: usize,
    /// Joint posterior draws written by `posterior`.
    pub draws: usize,
    /// Start of the large-θ regime for the RQ and SE bounds on `F_θ`.
    pub large_theta_threshold: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            design_path: None,
            obs_path: None,
            new_points_path: None,
            kernel: KernelSpec::matern(2.5),
            basis: RegressionBasis::Constant,
            precision: Precision::Extended,
            theta_bounds: None,
            quadrature: QuadratureOptions::default(),
            output_dir: PathBuf::from("refprior-out"),
            seed: 0,
            threads: None,
            grid_points: 200,
            draws: 0,
            large_theta_threshold: None,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "refprior", version, about = "Reference-prior analysis of isotropic Gaussian-process kriging models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Reference prior π(θ) on a log grid.
    Prior {
        #[command(flatten)]
        common: Common,
        /// Number of grid points.
        #[arg(long)]
        grid_points: Option<usize>,
    },
    /// Normalized marginal posterior of θ.
    Posterior {
        #[command(flatten)]
        common: Common,
        /// Also write this many joint (θ, β, σ²) draws.
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Posterior predictive mean and 95% interval at new points.
    Predict {
        #[command(flatten)]
        common: Common,
        /// CSV of prediction sites, one point per row.
        #[arg(long)]
        new_points: Option<PathBuf>,
    },
    /// Large-θ expansion, nondegeneracy and measured-vs-predicted exponents.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        large_theta_threshold: Option<f64>,
    },
    /// Identity, spectral and bound suites on the bundled corpus.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Run every suite (the default when no suite is named).
        #[arg(long)]
        all: bool,
        #[arg(long)]
        identities: bool,
        #[arg(long)]
        spectral: bool,
        #[arg(long)]
        bounds: bool,
    },
    /// Posterior mode of θ.
    Map {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved config as JSON and exit.
    #[arg(long)]
    dump_config: bool,
    /// Worker threads for θ-node evaluation.
    #[arg(long)]
    threads: Option<usize>,
    /// Design CSV: n rows of r coordinates.
    #[arg(long)]
    design: Option<PathBuf>,
    /// Observations CSV: one column.
    #[arg(long)]
    obs: Option<PathBuf>,
    /// Kernel family: se, rq, matern, sph, pe.
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    nu: Option<f64>,
    /// Power-exponential exponent.
    #[arg(long)]
    q: Option<f64>,
    /// Matérn parametrization: hw94 or bdos.
    #[arg(long)]
    parametrization: Option<String>,
    /// Regression basis: none, constant or linear.
    #[arg(long)]
    basis: Option<String>,
    #[arg(long)]
    theta_lo: Option<f64>,
    #[arg(long)]
    theta_hi: Option<f64>,
    /// Relative tolerance of the normalizing quadrature.
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long, short = 'o')]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// double or extended.
    #[arg(long)]
    precision: Option<String>,
    /// Proceed even when the observations fail the nondegeneracy check.
    #[arg(long)]
    force: bool,
}

fn keyword<T: for<'de> Deserialize<'de>>(what: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| Error::Input(format!("unknown {what} '{s}'")))
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Input(format!("config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(p) = &common.design {
        cfg.design_path = Some(p.clone());
    }
    if let Some(p) = &common.obs {
        cfg.obs_path = Some(p.clone());
    }
    if let Some(k) = &common.kernel {
        let family: Family = keyword("kernel", k)?;
        cfg.kernel = KernelSpec { family, q: None, nu: None, parametrization: None };
    }
    if common.nu.is_some() {
        cfg.kernel.nu = common.nu;
    }
    if common.q.is_some() {
        cfg.kernel.q = common.q;
    }
    if let Some(p) = &common.parametrization {
        cfg.kernel.parametrization = Some(keyword::<Parametrization>("parametrization", p)?);
    }
    if cfg.kernel.nu.is_none() && matches!(cfg.kernel.family, Family::Matern | Family::RationalQuadratic) {
        return Err(Error::Input(format!("kernel {:?} needs --nu", cfg.kernel.family)));
    }
    if cfg.kernel.q.is_none() && cfg.kernel.family == Family::PowerExponential {
        return Err(Error::Input("power exponential kernel needs --q".into()));
    }
    if let Some(b) = &common.basis {
        cfg.basis = keyword("basis", b)?;
    }
    if let Some(p) = &common.precision {
        cfg.precision = keyword("precision", p)?;
    }
    match (common.theta_lo, common.theta_hi) {
        (None, None) => {}
        (Some(lo), Some(hi)) => cfg.theta_bounds = Some((lo, hi)),
        _ => return Err(Error::Input("--theta-lo and --theta-hi go together".into())),
    }
    if let Some(r) = common.rtol {
        cfg.quadrature.rtol = r;
    }
    if common.force {
        cfg.quadrature.force = true;
    }
    if let Some(o) = &common.output_dir {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    cfg.kernel.validate().map_err(|e| Error::Input(e.to_string()))?;
    cfg.quadrature.bounds = cfg.theta_bounds;
    cfg.quadrature.validate()?;
    if cfg.threads == Some(0) {
        return Err(Error::Input("--threads must be positive".into()));
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    kind: &'static str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    exit_code: i32,
    error: Option<String>,
    config: &'a RunConfig,
    files: &'a [FileEntry],
}

/// Collects written files for the manifest.
struct Out {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Out {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Out { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(format!("{name}: {e}")))?;
        fs::write(self.dir.join(name), text + "\n")?;
        self.files.push(FileEntry { path: name.into(), kind: "json" });
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
        if rows.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::Numerical(format!("{name}: refusing to write NaN")));
        }
        let mut w = csv::Writer::from_path(self.dir.join(name)).map_err(|e| Error::Input(format!("{name}: {e}")))?;
        let csv_err = |e: csv::Error| Error::Input(format!("{name}: {e}"));
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(r.iter().map(|&v| fmt_num(v))).map_err(csv_err)?;
        }
        w.flush()?;
        self.files.push(FileEntry { path: name.into(), kind: "csv" });
        Ok(())
    }

    fn manifest(&mut self, command: &str, cfg: &RunConfig, outcome: &Result<()>) -> Result<()> {
        let (exit_code, error) = match outcome {
            Ok(()) => (0, None),
            Err(e) => (exit_code(e), Some(e.to_string())),
        };
        let m = Manifest {
            tool: "refprior",
            version: env!("CARGO_PKG_VERSION"),
            command,
            exit_code,
            error,
            config: cfg,
            files: &self.files,
        };
        let text = serde_json::to_string_pretty(&m).map_err(|e| Error::Numerical(e.to_string()))?;
        fs::write(self.dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() { 2 } else { 1 }
}

fn load_design(cfg: &RunConfig) -> Result<DesignSet> {
    let path = cfg.design_path.as_ref().ok_or_else(|| Error::Input("--design is required".into()))?;
    DesignSet::from_csv_path(path)
}

fn load_model(cfg: &RunConfig) -> Result<GpModel> {
    Ok(build_model(load_design(cfg)?, cfg.basis.clone(), cfg.kernel)?.with_precision(cfg.precision))
}

fn load_obs(cfg: &RunConfig, model: &GpModel) -> Result<Vec<f64>> {
    let path = cfg.obs_path.as_ref().ok_or_else(|| Error::Input("--obs is required".into()))?;
    let y = read_observations(path)?;
    if y.len() != model.n() {
        return Err(Error::Input(format!("{} observations for {} design points", y.len(), model.n())));
    }
    Ok(y)
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("REFPRIOR_LOG", "warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let (name, common) = match &cli.command {
        Command::Prior { common, .. } => ("prior", common),
        Command::Posterior { common, .. } => ("posterior", common),
        Command::Predict { common, .. } => ("predict", common),
        Command::Diagnose { common, .. } => ("diagnose", common),
        Command::Validate { common, .. } => ("validate", common),
        Command::Map { common } => ("map", common),
    };
    let mut cfg = match resolve(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("refprior: {e}");
            return exit_code(&e);
        }
    };
    match &cli.command {
        Command::Prior { grid_points: Some(g), .. } => cfg.grid_points = *g,
        Command::Posterior { draws: Some(d), .. } => cfg.draws = *d,
        Command::Predict { new_points: Some(p), .. } => cfg.new_points_path = Some(p.clone()),
        Command::Diagnose { large_theta_threshold: Some(t), .. } => cfg.large_theta_threshold = Some(*t),
        _ => {}
    }
    if common.dump_config {
        match serde_json::to_string_pretty(&cfg) {
            Ok(s) => {
                use std::io::Write;
                // a closed pipe is not an error worth reporting
                let _ = writeln!(std::io::stdout().lock(), "{s}");
                return 0;
            }
            Err(e) => {
                eprintln!("refprior: {e}");
                return 1;
            }
        }
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        builder = builder.num_threads(t);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("refprior: thread pool: {e}");
            return 1;
        }
    };
    let mut out = match Out::new(&cfg.output_dir) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("refprior: output directory {}: {e}", cfg.output_dir.display());
            return 1;
        }
    };
    let outcome = pool.install(|| match &cli.command {
        Command::Prior { .. } => cmd_prior(&cfg, &mut out),
        Command::Posterior { .. } => cmd_posterior(&cfg, &mut out),
        Command::Predict { .. } => cmd_predict(&cfg, &mut out),
        Command::Diagnose { .. } => cmd_diagnose(&cfg, &mut out),
        Command::Validate { all, identities, spectral, bounds, .. } => {
            let none = !(*identities || *spectral || *bounds);
            let all = *all || none;
            cmd_validate(&mut out, all || *identities, all || *spectral, all || *bounds)
        }
        Command::Map { .. } => cmd_map(&cfg, &mut out),
    });
    if let Err(e) = out.manifest(name, &cfg, &outcome) {
        eprintln!("refprior: writing manifest: {e}");
        return 1;
    }
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("refprior: {e}");
            exit_code(&e)
        }
    }
}

fn cmd_prior(cfg: &RunConfig, out: &mut Out) -> Result<()> {
    let model = load_model(cfg)?;
    let curve = prior_curve(&model, cfg.theta_bounds, cfg.grid_points)?;
    if curve.dropped > 0 {
        log::warn!("{} grid points beyond working precision were dropped", curve.dropped);
    }
    let rows: Vec<Vec<f64>> = curve.theta.iter().zip(&curve.log_prior).map(|(&t, &l)| vec![t, l]).collect();
    out.csv("prior_curve.csv", &["theta".into(), "log_prior".into()], &rows)?;
    out.json("prior.json", &curve)
}

/// Fits the posterior curve; a degenerate `y` also leaves its report behind.
fn fit_curve(cfg: &RunConfig, model: &GpModel, y: &[f64], out: &mut Out) -> Result<PosteriorCurve> {
    match build_posterior_curve(model, y, &cfg.quadrature) {
        Err(e @ Error::DegenerateObservation(_)) => {
            if let Ok(rep) = nondegeneracy_check(model, y) {
                eprintln!("{}", serde_json::to_string_pretty(&rep).unwrap_or_default());
                out.json("nondegeneracy.json", &rep)?;
            }
            Err(e)
        }
        other => other,
    }
}

#[derive(Serialize)]
struct PosteriorSummary<'a> {
    kernel: String,
    n: usize,
    p: usize,
    log_normalizer: f64,
    quadrature: &'a crate::posterior::QuadratureDiagnostics,
    nondegeneracy: &'a Option<NondegeneracyReport>,
}

fn cmd_posterior(cfg: &RunConfig, out: &mut Out) -> Result<()> {
    let model = load_model(cfg)?;
    let y = load_obs(cfg, &model)?;
    let curve = fit_curve(cfg, &model, &y, out)?;
    let dens = curve.density();
    let rows: Vec<Vec<f64>> = (0..curve.theta_grid.len())
        .map(|i| vec![curve.theta_grid[i], curve.log_prior[i], curve.log_lik[i], curve.log_post_unnorm[i], dens[i]])
        .collect();
    let header: Vec<String> = ["theta", "log_prior", "log_lik", "log_post", "post_density"].map(String::from).into();
    out.csv("posterior_curve.csv", &header, &rows)?;
    out.json(
        "posterior.json",
        &PosteriorSummary {
            kernel: model.kernel().label(),
            n: model.n(),
            p: model.p(),
            log_normalizer: curve.log_normalizer,
            quadrature: &curve.quadrature_diag,
            nondegeneracy: &curve.nondegeneracy,
        },
    )?;
    if cfg.draws > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let draws = sample_joint(&model, &y, &curve, cfg.draws, &mut rng)?;
        let mut header = vec!["theta".to_string(), "sigma2".to_string()];
        header.extend((0..model.p()).map(|j| format!("beta{j}")));
        let rows: Vec<Vec<f64>> = draws
            .iter()
            .map(|d| [d.theta, d.sigma2].into_iter().chain(d.beta.iter().copied()).collect())
            .collect();
        out.csv("posterior_draws.csv", &header, &rows)?;
    }
    Ok(())
}

fn cmd_predict(cfg: &RunConfig, out: &mut Out) -> Result<()> {
    let path = cfg.new_points_path.as_ref().ok_or_else(|| Error::Input("predict needs --new-points".into()))?;
    let model = load_model(cfg)?;
    let y = load_obs(cfg, &model)?;
    let sites = DesignSet::from_csv_path(path)?;
    if sites.r() != model.design().r() {
        return Err(Error::Input(format!("new points have {} coordinates, design has {}", sites.r(), model.design().r())));
    }
    let curve = fit_curve(cfg, &model, &y, out)?;
    let preds = predict(&model, &y, &curve, sites.points())?;
    let mut header: Vec<String> = (0..sites.r()).map(|j| format!("x{j}")).collect();
    header.extend(["mean", "lo95", "hi95"].map(String::from));
    let rows: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| p.x.iter().copied().chain([p.mean, p.lo95, p.hi95]).collect())
        .collect();
    out.csv("predictive.csv", &header, &rows)
}

fn cmd_map(cfg: &RunConfig, out: &mut Out) -> Result<()> {
    let model = load_model(cfg)?;
    let y = load_obs(cfg, &model)?;
    if !cfg.quadrature.force && in_scope(model.kernel()) {
        let rep = nondegeneracy_check(&model, &y)?;
        if !rep.passes {
            out.json("nondegeneracy.json", &rep)?;
            return Err(Error::DegenerateObservation(format!(
                "observations fail the nondegeneracy check (margin {:e}); rerun with --force to proceed",
                rep.margin
            )));
        }
    }
    let est = map_theta(&model, &y, cfg.theta_bounds)?;
    out.json("map.json", &est)
}

/// A measured exponent against its predicted ceiling.
#[derive(Clone, Debug, Serialize)]
pub struct ExponentCheck {
    pub quantity: String,
    pub measured: f64,
    pub predicted: f64,
    /// Fitted coefficient of `log log θ`, when that regressor is used.
    pub log_coefficient: Option<f64>,
    pub predicted_log_power: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

impl ExponentCheck {
    fn new(quantity: &str, measured: f64, predicted: f64, log_coefficient: Option<f64>, predicted_log_power: Option<f64>) -> Self {
        ExponentCheck {
            quantity: quantity.into(),
            measured,
            predicted,
            log_coefficient,
            predicted_log_power,
            tolerance: SLOPE_TOL,
            pass: measured <= predicted + SLOPE_TOL,
        }
    }
}

#[derive(Serialize)]
struct Diagnosis {
    kernel: String,
    n: usize,
    p: usize,
    r: usize,
    smoothness: Option<SmoothnessProfile>,
    /// `(d_ij^q)` for `q = 1` and `q = 2`.
    distance_spectra: Vec<(f64, SignedSpectrum)>,
    expansion: Option<ExpansionReport>,
    nondegeneracy: Option<NondegeneracyReport>,
    tail_window: (f64, f64),
    inverse_norm: Option<InverseNormReport>,
    tail_slopes: Option<TailSlopes>,
    exponents: Vec<ExponentCheck>,
    f_matrix: Vec<FMatrixReport>,
    prior_ceiling: Vec<PriorCeiling>,
    skipped: Vec<String>,
    violations: usize,
}

fn cmd_diagnose(cfg: &RunConfig, out: &mut Out) -> Result<()> {
    let model = load_model(cfg)?;
    let y = match &cfg.obs_path {
        Some(_) => Some(load_obs(cfg, &model)?),
        None => None,
    };
    let design = model.design();
    let dbar = design.median_distance();
    let window = cfg.theta_bounds.unwrap_or((1e2 * dbar, 1e4 * dbar));
    let grid = log_grid(window.0, window.1, 25);
    let mut skipped = Vec::new();
    let mut distance_spectra = Vec::new();
    for q in [1.0, 2.0] {
        distance_spectra.push((q, signed_spectrum(&distance_power_matrix(design, q)?, TolPolicy::Default)?));
    }
    let scoped = in_scope(model.kernel()) && model.m() >= 2;
    let mut exponents = Vec::new();
    let (mut expansion, mut nondegeneracy, mut inverse_norm, mut tail_slopes) = (None, None, None, None);
    if scoped {
        let exp = expansion_report(&model)?;
        match inverse_norm_exponent(&model, &grid) {
            Ok(rep) => {
                exponents.push(ExponentCheck::new("inverse_norm", rep.measured, rep.predicted, None, None));
                inverse_norm = Some(rep);
            }
            Err(Error::Input(msg)) => skipped.push(format!("inverse-norm slope: {msg}")),
            Err(e) => return Err(e),
        }
        if let Some(y) = &y {
            let nd = nondegeneracy_check(&model, y)?;
            if nd.passes {
                let log_reg = exp.branch == Branch::MaternLog;
                if log_reg && window.0 <= 1.0 {
                    skipped.push("tail slopes: the log log θ regressor needs θ > 1".into());
                } else {
                    match measure_tail_slopes(&model, y, &grid, log_reg) {
                        Ok(ts) => {
                            let lp = log_reg.then_some(exp.predicted_prior_log_power);
                            let ll = log_reg.then_some(exp.predicted_lik_log_power);
                            exponents.push(ExponentCheck::new(
                                "log_prior",
                                ts.prior.slope,
                                exp.predicted_prior_exponent,
                                ts.prior.log_coefficient,
                                lp,
                            ));
                            exponents.push(ExponentCheck::new(
                                "log_lik",
                                ts.likelihood.slope,
                                exp.predicted_lik_exponent,
                                ts.likelihood.log_coefficient,
                                ll,
                            ));
                            tail_slopes = Some(ts);
                        }
                        Err(Error::Input(msg)) => skipped.push(format!("tail slopes: {msg}")),
                        Err(e) => return Err(e),
                    }
                }
            } else {
                skipped.push("tail slopes: observations fail the nondegeneracy check".into());
            }
            nondegeneracy = Some(nd);
        }
        expansion = Some(exp);
    } else {
        skipped.push(format!("expansion and tail exponents: {} is outside the series machinery", model.kernel().label()));
    }
    let mut f_matrix = Vec::new();
    let mut ceilings = Vec::new();
    if matches!(model.kernel().family, Family::Matern | Family::RationalQuadratic | Family::SquaredExponential) {
        for theta in log_grid(1e-2 * dbar, 1e3 * dbar, 11) {
            f_matrix.push(f_matrix_check(&model, theta, cfg.large_theta_threshold)?);
            if model.m() >= 2 {
                match prior_ceiling(&model, theta, cfg.large_theta_threshold) {
                    Ok(c) => ceilings.push(c),
                    Err(e @ (Error::Numerical(_) | Error::NotPositiveDefinite { .. })) => {
                        skipped.push(format!("prior ceiling at θ = {theta:e}: {e}"))
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    let violations = exponents.iter().filter(|e| !e.pass).count()
        + f_matrix.iter().filter(|f| !f.satisfied).count()
        + ceilings.iter().filter(|c| !c.satisfied).count();
    let rep = Diagnosis {
        kernel: model.kernel().label(),
        n: model.n(),
        p: model.p(),
        r: design.r(),
        smoothness: model.kernel().smoothness_profile().ok(),
        distance_spectra,
        expansion,
        nondegeneracy,
        tail_window: window,
        inverse_norm,
        tail_slopes,
        exponents,
        f_matrix,
        prior_ceiling: ceilings,
        skipped,
        violations,
    };
    out.json("diagnosis.json", &rep)?;
    if violations > 0 {
        return Err(Error::BoundViolation(format!("{violations} predicted bound(s) violated; see diagnosis.json")));
    }
    Ok(())
}

#[derive(Serialize)]
struct Validation {
    suites: Vec<(String, usize, usize)>,
    rows: Vec<Row>,
}

fn cmd_validate(out: &mut Out, identities: bool, spectral: bool, bounds: bool) -> Result<()> {
    let mut rows = Vec::new();
    let mut suites = Vec::new();
    let mut run = |name: &str, f: fn() -> Result<Vec<Row>>| -> Result<()> {
        let r = f()?;
        let failed = r.iter().filter(|x| !x.pass).count();
        suites.push((name.to_string(), r.len(), failed));
        rows.extend(r);
        Ok(())
    };
    if identities {
        run("identities", identity_suite)?;
        run("derivatives", derivative_suite)?;
    }
    if spectral {
        run("spectral", spectral_suite)?;
    }
    if bounds {
        run("bounds", bound_suite)?;
    }
    let failed: usize = suites.iter().map(|s| s.2).sum();
    for (name, total, bad) in &suites {
        eprintln!("{name}: {} / {total} passed", total - bad);
    }
    out.json("validation.json", &Validation { suites, rows })?;
    if failed > 0 {
        return Err(Error::BoundViolation(format!("{failed} validation check(s) failed; see validation.json")));
    }
    Ok(())
}
