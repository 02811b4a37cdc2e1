//! Seeded batch experiments: generate → identify → certify → bound → check,
//! with every artifact persisted under one run directory.
//!
//! Layout of a run directory:
//!
//! ```text
//! config.json  report.json  summary.txt
//! trial_000/ trajectory.csv estimates.csv certificate.json xi.json
//!            bound.csv error_vs_bound.csv [plot.svg]
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::identifier::{run_identifier, write_snapshots_csv, IdentifierConfig, SolverFlag, SolverSettings, Snapshot};
use crate::iss::{
    asymptotic_bound, bound_rhs, build_g2, build_xi_general, check_iss, BoundRow, BoundTrajectory, ConstantsLabel,
    XiConstruction, DEFAULT_BOUND_TOL,
};
use crate::kinf::XiFunction;
use crate::loss::LossSpec;
use crate::pe::{certify_pe_with, default_scan, scan_pe, PECertificate, PeMethod, PeSettings};
use crate::signal::{generate_trajectory, ingest_trajectory, RegressorGen, SystemConfig};
use crate::svg::{error_bound_chart, ChartSeries};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const TRIAL_FILES: [&str; 6] = [
    "trajectory.csv",
    "estimates.csv",
    "certificate.json",
    "xi.json",
    "bound.csv",
    "error_vs_bound.csv",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theta0Spec {
    Fixed(Vec<f64>),
    /// Each component drawn uniformly from `[low, high)` per trial.
    Random { low: f64, high: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifierSpec {
    pub lambda: f64,
    pub psi: LossSpec,
    pub psi0: LossSpec,
    pub theta0: Theta0Spec,
    /// Defaults to [`SolverSettings::for_losses`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation_eps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PeChoice {
    Horizon {
        #[serde(rename = "T")]
        horizon: usize,
    },
    Scan {
        scan: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub identifier: IdentifierSpec,
    /// Defaults to scanning `T ∈ {n, 2n, 4n}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pe: Option<PeChoice>,
    pub trials: usize,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit_plots: bool,
}

impl ExperimentConfig {
    /// Reads a config file. A relative `Custom` regressor path is resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let RegressorGen::Custom { path: p } = &mut cfg.system.regressor {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        self.system.validate()?;
        let n = self.system.dim();
        match &self.identifier.theta0 {
            Theta0Spec::Fixed(v) if v.len() != n => {
                return Err(Error::Config(format!(
                    "theta0 has {} entries but theta_true has {n}",
                    v.len()
                )))
            }
            Theta0Spec::Random { low, high } if !(low < high && low.is_finite() && high.is_finite()) => {
                return Err(Error::Config(format!("theta0 range [{low}, {high}) is empty")))
            }
            _ => {}
        }
        match &self.pe {
            Some(PeChoice::Horizon { horizon }) if *horizon == 0 || *horizon > self.system.horizon => {
                return Err(Error::Config(format!(
                    "PE horizon T = {horizon} must lie in 1..={}",
                    self.system.horizon
                )))
            }
            Some(PeChoice::Scan { scan }) if scan.is_empty() || scan.contains(&0) => {
                return Err(Error::Config("PE scan list must hold positive horizons".into()))
            }
            _ => {}
        }
        self.identifier_config(0)?.validate()
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.system.seed.wrapping_add(trial as u64)
    }

    pub fn identifier_config(&self, trial: usize) -> Result<IdentifierConfig> {
        let n = self.system.dim();
        let seed = self.trial_seed(trial);
        let theta0 = match &self.identifier.theta0 {
            Theta0Spec::Fixed(v) => v.clone(),
            Theta0Spec::Random { low, high } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(2);
                (0..n).map(|_| rng.random_range(*low..*high)).collect()
            }
        };
        let id = &self.identifier;
        let mut cfg = IdentifierConfig::new(id.lambda, id.psi.clone(), id.psi0.clone(), theta0);
        if let Some(s) = &id.solver {
            cfg.solver = s.clone();
        }
        cfg.solver.seed = cfg.solver.seed.wrapping_add(seed);
        if let Some(eps) = id.truncation_eps {
            cfg.truncation_eps = eps;
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON serialization, with `output_dir`
    /// blanked so the same experiment hashes equal wherever it is written.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical)?;
        Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub converged: usize,
    pub max_iters: usize,
    pub stalled: usize,
    pub suboptimal: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
}

impl SolverSummary {
    fn from_snapshots(snaps: &[Snapshot]) -> Self {
        let mut s = SolverSummary::default();
        for snap in snaps.iter().skip(1) {
            match snap.flag {
                SolverFlag::Converged => s.converged += 1,
                SolverFlag::MaxIters => s.max_iters += 1,
                SolverFlag::Stalled => s.stalled += 1,
                SolverFlag::Suboptimal => s.suboptimal += 1,
            }
            s.total_iterations += snap.solver_iters;
            s.max_iterations = s.max_iterations.max(snap.solver_iters);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub method: PeMethod,
    pub is_pe: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub seed: u64,
    pub certificate: CertificateSummary,
    pub constants: ConstantsLabel,
    pub initial_error: f64,
    pub final_error: f64,
    pub worst_margin: f64,
    pub violations: usize,
    pub unexplained_violations: usize,
    /// Time indices of violations co-flagged with a non-converged solve.
    pub explained_at: Vec<usize>,
    /// `ξ⁻¹((2/(1−λ))·ψ(v̄))` for the configured noise bound `v̄`.
    pub asymptotic_bound: f64,
    pub solver: SolverSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config_hash: String,
    pub trials: Vec<TrialReport>,
    pub total_violations: usize,
    pub unexplained_violations: usize,
    pub aggregate_pass: bool,
}

impl RunReport {
    /// 0 when every trial passes, 1 on an unexplained bound violation.
    pub fn exit_code(&self) -> i32 {
        if self.aggregate_pass {
            0
        } else {
            1
        }
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("adapid {}  config {}\n", self.version, self.config_hash));
        s.push_str("trial  seed  T  gamma1  gamma2  err_0  err_N  worst_margin  violations  unexplained\n");
        for t in &self.trials {
            s.push_str(&format!(
                "{:>3}  {}  {}  {:.6e}  {:.6e}  {:.6e}  {:.6e}  {:.6e}  {}  {}{}\n",
                t.trial,
                t.seed,
                t.certificate.horizon,
                t.certificate.gamma1,
                t.certificate.gamma2,
                t.initial_error,
                t.final_error,
                t.worst_margin,
                t.violations,
                t.unexplained_violations,
                if t.constants == ConstantsLabel::EstimatedConstants {
                    "  (estimated constants)"
                } else {
                    ""
                }
            ));
            if !t.explained_at.is_empty() {
                s.push_str(&format!("     solver-flagged violations at t = {:?}\n", t.explained_at));
            }
        }
        s.push_str(&format!(
            "bound dominance: {} ({} violations, {} unexplained)\n",
            if self.aggregate_pass { "PASS" } else { "FAIL" },
            self.total_violations,
            self.unexplained_violations
        ));
        s
    }
}

/// Persisted ξ together with its pieces and the upper comparison function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XiArtifact {
    #[serde(flatten)]
    pub construction: XiConstruction,
    pub g2: XiFunction,
}

fn trial_dir(out: &Path, trial: usize) -> PathBuf {
    out.join(format!("trial_{trial:03}"))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn certify(cfg: &ExperimentConfig, regressors: &[DVector<f64>], seed: u64) -> Result<PECertificate> {
    let mut settings = PeSettings::default();
    settings.sampler.seed = seed;
    let psi = &cfg.identifier.psi;
    match &cfg.pe {
        Some(PeChoice::Horizon { horizon }) => certify_pe_with(regressors, psi, *horizon, &settings),
        Some(PeChoice::Scan { scan }) => scan_pe(regressors, psi, scan, &settings),
        None => scan_pe(regressors, psi, &default_scan(cfg.system.dim()), &settings),
    }
}

/// Runs one trial and writes its artifacts into `dir`.
pub fn run_trial(cfg: &ExperimentConfig, trial: usize, dir: &Path) -> Result<TrialReport> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let seed = cfg.trial_seed(trial);
    let mut system = cfg.system.clone();
    system.seed = seed;
    let traj = generate_trajectory(&system)?;
    traj.write_csv(&dir.join("trajectory.csv"))?;

    let cert = certify(cfg, &traj.regressors(), seed)?;
    write_file(&dir.join("certificate.json"), cert.to_json()?.as_bytes())?;
    if !cert.is_pe {
        return Err(Error::PeFailed(format!(
            "γ₁ = {:e} ≤ floor {:e} at T = {}; no bound is produced",
            cert.gamma1, cert.gamma_floor, cert.horizon
        )));
    }

    let id_cfg = cfg.identifier_config(trial)?;
    let construction = build_xi_general(&cert, &id_cfg.psi, &id_cfg.psi0, id_cfg.lambda)?;
    let g2 = build_g2(&cert, &id_cfg.psi, &id_cfg.psi0, id_cfg.lambda)?;
    let xi = construction.xi.clone();
    let constants = construction.constants;
    let artifact = XiArtifact { construction, g2 };
    write_file(&dir.join("xi.json"), serde_json::to_string_pretty(&artifact)?.as_bytes())?;

    let snaps = run_identifier(&id_cfg, &traj)?;
    write_with(&dir.join("estimates.csv"), |w| write_snapshots_csv(&snaps, w))?;

    let theta_true = DVector::from_column_slice(&system.theta_true);
    let noise = traj.noise().ok_or_else(|| Error::contract("generated trajectory lacks noise"))?;
    let bound = bound_series(&id_cfg, &snaps, &theta_true, &noise, &xi, constants)?;
    write_with(&dir.join("bound.csv"), |w| bound.write_csv(w))?;

    let rows = &bound.rows;
    Ok(TrialReport {
        trial,
        seed,
        certificate: CertificateSummary {
            horizon: cert.horizon,
            gamma1: cert.gamma1,
            gamma2: cert.gamma2,
            method: cert.method.clone(),
            is_pe: cert.is_pe,
        },
        constants,
        initial_error: rows[0].err,
        final_error: rows[rows.len() - 1].err,
        worst_margin: bound.worst_margin,
        violations: bound.violations,
        unexplained_violations: bound.unexplained_violations,
        explained_at: rows
            .iter()
            .filter(|r| r.violated && !r.solver_flag.is_clean())
            .map(|r| r.t)
            .collect(),
        asymptotic_bound: asymptotic_bound(&id_cfg.psi, id_cfg.lambda, system.noise.bound(), &xi)?,
        solver: SolverSummary::from_snapshots(&snaps),
    })
}

fn bound_series(
    id_cfg: &IdentifierConfig,
    snaps: &[Snapshot],
    theta_true: &DVector<f64>,
    noise: &[f64],
    xi: &XiFunction,
    constants: ConstantsLabel,
) -> Result<BoundTrajectory> {
    let estimates: Vec<DVector<f64>> = snaps.iter().map(|s| DVector::from_column_slice(&s.theta_hat)).collect();
    let flags: Vec<SolverFlag> = snaps.iter().map(|s| s.flag).collect();
    let eta0 = &estimates[0] - theta_true;
    let b = bound_rhs(noise, &id_cfg.psi, &id_cfg.psi0, &eta0, id_cfg.lambda)?;
    check_iss(&estimates, theta_true, &b, xi, Some(&flags), DEFAULT_BOUND_TOL, constants)
}

/// Runs every trial, writes per-trial artifacts, `config.json`,
/// `report.json`, `summary.txt` and the plot data.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("config.json"), serde_json::to_string_pretty(cfg)?.as_bytes())?;

    let mut trials = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let report = run_trial(cfg, trial, &trial_dir(out, trial)).map_err(|e| Error::Trial {
            trial,
            source: Box::new(e),
        })?;
        trials.push(report);
    }
    let total_violations = trials.iter().map(|t| t.violations).sum();
    let unexplained_violations = trials.iter().map(|t| t.unexplained_violations).sum();
    let report = RunReport {
        version: VERSION.to_string(),
        config_hash: cfg.hash()?,
        trials,
        total_violations,
        unexplained_violations,
        aggregate_pass: unexplained_violations == 0,
    };
    write_file(&out.join("report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    write_file(&out.join("summary.txt"), report.summary_text().as_bytes())?;
    emit_plot_data(out, cfg.emit_plots)?;
    Ok(report)
}

fn trial_dirs(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("trial_"))
        })
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Reads a `t,err,b,xi_inv_b,violated,solver_flag` file.
pub fn read_bound_csv(path: &Path) -> Result<Vec<BoundRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let header = rdr.headers().map_err(|e| Error::Schema(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["t", "err", "b", "xi_inv_b", "violated", "solver_flag"] {
        return Err(Error::Schema(format!("{}: unexpected header {:?}", path.display(), header)));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        let num = |c: usize| -> Result<f64> {
            rec[c].parse().map_err(|_| Error::Parse {
                row: line,
                column: c + 1,
                message: format!("not a number: {:?}", &rec[c]),
            })
        };
        rows.push(BoundRow {
            t: rec[0].parse().map_err(|_| Error::Parse {
                row: line,
                column: 1,
                message: format!("not an integer: {:?}", &rec[0]),
            })?,
            err: num(1)?,
            b: num(2)?,
            xi_inv_b: num(3)?,
            violated: match &rec[4] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Parse {
                        row: line,
                        column: 5,
                        message: format!("expected 0 or 1, got {other:?}"),
                    })
                }
            },
            solver_flag: SolverFlag::parse(&rec[5]).ok_or_else(|| Error::Parse {
                row: line,
                column: 6,
                message: format!("unknown solver flag {:?}", &rec[5]),
            })?,
        });
    }
    Ok(rows)
}

/// Reads an estimates file written by [`write_snapshots_csv`].
pub fn read_snapshots_csv(path: &Path) -> Result<Vec<Snapshot>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let width = rdr.headers().map_err(|e| Error::Schema(e.to_string()))?.len();
    if width < 5 {
        return Err(Error::Schema(format!("{}: too few columns", path.display())));
    }
    let n = width - 4;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        let bad = |c: usize| Error::Parse {
            row: line,
            column: c + 1,
            message: format!("cannot parse {:?}", &rec[c]),
        };
        let theta_hat = (1..=n).map(|c| rec[c].parse().map_err(|_| bad(c))).collect::<Result<Vec<f64>>>()?;
        out.push(Snapshot {
            t: rec[0].parse().map_err(|_| bad(0))?,
            theta_hat,
            v_opt: rec[n + 1].parse().map_err(|_| bad(n + 1))?,
            solver_iters: rec[n + 2].parse().map_err(|_| bad(n + 2))?,
            flag: SolverFlag::parse(&rec[n + 3]).ok_or_else(|| bad(n + 3))?,
        });
    }
    Ok(out)
}

/// Writes `error_vs_bound.csv` (`t,err,bound`) for every trial and, when
/// `svg` is set, `plot.svg`.
pub fn emit_plot_data(run_dir: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    let dirs = trial_dirs(run_dir)?;
    let missing = || Error::MissingInputs {
        dir: run_dir.to_path_buf(),
        expected: vec!["trial_*/bound.csv".into()],
    };
    if dirs.is_empty() {
        return Err(missing());
    }
    let mut written = Vec::new();
    for dir in dirs {
        let bound_path = dir.join("bound.csv");
        if !bound_path.is_file() {
            return Err(Error::MissingInputs {
                dir,
                expected: vec!["bound.csv".into()],
            });
        }
        let rows = read_bound_csv(&bound_path)?;
        let path = dir.join("error_vs_bound.csv");
        write_with(&path, |w| {
            writeln!(w, "t,err,bound")?;
            for r in &rows {
                writeln!(w, "{},{},{}", r.t, crate::signal::fmt_real(r.err), crate::signal::fmt_real(r.xi_inv_b))?;
            }
            Ok(())
        })?;
        written.push(path);
        if svg {
            let t: Vec<usize> = rows.iter().map(|r| r.t).collect();
            let err: Vec<f64> = rows.iter().map(|r| r.err).collect();
            let bound: Vec<f64> = rows.iter().map(|r| r.xi_inv_b).collect();
            let violated: Vec<bool> = rows.iter().map(|r| r.violated).collect();
            let title = format!(
                "{}: error vs ISS bound",
                dir.file_name().and_then(|n| n.to_str()).unwrap_or("trial")
            );
            let chart = error_bound_chart(&title, &ChartSeries { t: &t, err: &err, bound: &bound, violated: &violated });
            let path = dir.join("plot.svg");
            write_file(&path, chart.as_bytes())?;
            written.push(path);
        }
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub trials_checked: usize,
    /// Disagreements between persisted artifacts and their recomputation.
    pub mismatches: Vec<String>,
    pub violations: usize,
    pub unexplained_violations: usize,
}

impl VerifyReport {
    pub fn consistent(&self) -> bool {
        self.mismatches.is_empty()
    }

    /// 0 consistent and passing, 1 consistent with unexplained violations,
    /// 2 when the artifacts disagree with their recomputation.
    pub fn exit_code(&self) -> i32 {
        if !self.consistent() {
            2
        } else if self.unexplained_violations > 0 {
            1
        } else {
            0
        }
    }
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs()) + 1e-300
}

/// Recomputes errors, bound values and report numbers from the persisted
/// CSV and JSON files of a run directory.
pub fn verify(run_dir: &Path) -> Result<VerifyReport> {
    let required = ["config.json", "report.json"];
    let absent: Vec<String> = required
        .iter()
        .filter(|f| !run_dir.join(f).is_file())
        .map(|f| f.to_string())
        .collect();
    if !absent.is_empty() {
        return Err(Error::MissingInputs {
            dir: run_dir.to_path_buf(),
            expected: absent,
        });
    }
    let read = |p: PathBuf| fs::read_to_string(&p).map_err(|e| Error::io(p, e));
    let cfg: ExperimentConfig = serde_json::from_str(&read(run_dir.join("config.json"))?)?;
    let report: RunReport = serde_json::from_str(&read(run_dir.join("report.json"))?)?;
    let mut mismatches = Vec::new();
    if report.trials.len() != cfg.trials {
        mismatches.push(format!("report lists {} trials, config has {}", report.trials.len(), cfg.trials));
    }
    if cfg.hash()? != report.config_hash {
        mismatches.push("config hash does not match config.json".into());
    }
    let theta_true = DVector::from_column_slice(&cfg.system.theta_true);
    let mut violations = 0;
    let mut unexplained = 0;
    for tr in &report.trials {
        let dir = trial_dir(run_dir, tr.trial);
        let absent: Vec<String> = TRIAL_FILES
            .iter()
            .filter(|f| !dir.join(f).is_file())
            .map(|f| f.to_string())
            .collect();
        if !absent.is_empty() {
            return Err(Error::MissingInputs { dir, expected: absent });
        }
        let traj = ingest_trajectory(&dir.join("trajectory.csv"))?;
        let snaps = read_snapshots_csv(&dir.join("estimates.csv"))?;
        let xi: XiArtifact = serde_json::from_str(&read(dir.join("xi.json"))?)?;
        let persisted = read_bound_csv(&dir.join("bound.csv"))?;
        let id_cfg = cfg.identifier_config(tr.trial)?;
        let noise = traj
            .noise()
            .ok_or_else(|| Error::Schema(format!("{}: trajectory lacks the v column", dir.display())))?;
        if snaps.len() != noise.len() + 1 {
            mismatches.push(format!("trial {}: {} estimates for {} samples", tr.trial, snaps.len(), noise.len()));
            continue;
        }
        let bound = bound_series(&id_cfg, &snaps, &theta_true, &noise, &xi.construction.xi, xi.construction.constants)?;
        if bound.rows.len() != persisted.len() {
            mismatches.push(format!("trial {}: bound.csv has {} rows, expected {}", tr.trial, persisted.len(), bound.rows.len()));
            continue;
        }
        for (a, p) in bound.rows.iter().zip(&persisted) {
            if !(a.t == p.t
                && close(a.err, p.err)
                && close(a.b, p.b)
                && close(a.xi_inv_b, p.xi_inv_b)
                && a.violated == p.violated
                && a.solver_flag == p.solver_flag)
            {
                mismatches.push(format!("trial {}: bound.csv row t = {} disagrees with recomputation", tr.trial, p.t));
                break;
            }
        }
        let rows = &bound.rows;
        let checks = [
            ("initial_error", tr.initial_error, rows[0].err),
            ("final_error", tr.final_error, rows[rows.len() - 1].err),
            ("worst_margin", tr.worst_margin, bound.worst_margin),
            ("violations", tr.violations as f64, bound.violations as f64),
            ("unexplained_violations", tr.unexplained_violations as f64, bound.unexplained_violations as f64),
        ];
        for (name, reported, recomputed) in checks {
            if !close(reported, recomputed) {
                mismatches.push(format!("trial {}: {name} reported {reported:e}, recomputed {recomputed:e}", tr.trial));
            }
        }
        violations += bound.violations;
        unexplained += bound.unexplained_violations;
    }
    if report.unexplained_violations != unexplained || report.aggregate_pass != (unexplained == 0) {
        mismatches.push("aggregate verdict disagrees with recomputation".into());
    }
    Ok(VerifyReport {
        trials_checked: report.trials.len(),
        mismatches,
        violations,
        unexplained_violations: unexplained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::NoiseModel;

    pub(crate) fn quadratic_config(out: PathBuf, regressor: RegressorGen, noise: NoiseModel) -> ExperimentConfig {
        ExperimentConfig {
            system: SystemConfig {
                theta_true: vec![1.0, -0.5],
                regressor,
                noise,
                horizon: 60,
                seed: 11,
            },
            identifier: IdentifierSpec {
                lambda: 0.9,
                psi: LossSpec::power(2.0),
                psi0: LossSpec::scaled_sq_norm(1.0),
                theta0: Theta0Spec::Random { low: -2.0, high: 2.0 },
                solver: None,
                truncation_eps: None,
            },
            pe: Some(PeChoice::Horizon { horizon: 4 }),
            trials: 3,
            output_dir: out,
            emit_plots: true,
        }
    }

    #[test]
    fn config_json_round_trip_and_pe_forms() {
        let cfg = quadratic_config("out".into(), RegressorGen::RotatingBasis, NoiseModel::None);
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"T\":4"));
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let scan: PeChoice = serde_json::from_str(r#"{"scan":[2,4]}"#).unwrap();
        assert_eq!(scan, PeChoice::Scan { scan: vec![2, 4] });
        let fixed: Theta0Spec = serde_json::from_str(r#"{"fixed":[0.0,1.0]}"#).unwrap();
        assert_eq!(fixed, Theta0Spec::Fixed(vec![0.0, 1.0]));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = quadratic_config("out".into(), RegressorGen::RotatingBasis, NoiseModel::None);
        cfg.trials = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.trials = 1;
        cfg.identifier.theta0 = Theta0Spec::Fixed(vec![0.0]);
        assert!(cfg.validate().is_err());
        cfg.identifier.theta0 = Theta0Spec::Random { low: 1.0, high: 1.0 };
        assert!(cfg.validate().is_err());
        cfg.identifier.theta0 = Theta0Spec::Fixed(vec![0.0, 0.0]);
        cfg.pe = Some(PeChoice::Horizon { horizon: 0 });
        assert!(cfg.validate().is_err());
        cfg.pe = None;
        cfg.identifier.lambda = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn trial_seeds_and_theta0_are_deterministic() {
        let cfg = quadratic_config("out".into(), RegressorGen::RotatingBasis, NoiseModel::None);
        assert_eq!(cfg.trial_seed(2), 13);
        let a = cfg.identifier_config(1).unwrap().theta0;
        let b = cfg.identifier_config(1).unwrap().theta0;
        let c = cfg.identifier_config(2).unwrap().theta0;
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|v| (-2.0..2.0).contains(v)));
        assert_eq!(cfg.hash().unwrap().len(), 64);
    }
}
