//! Synthetic data from the linear regression model `y_t = x_tᵀθ° + v_t`,
//! and CSV interchange for trajectories.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressorGen {
    /// Independent components, uniform on `[low, high)`.
    IidUniform { low: f64, high: f64 },
    /// Cycles the standard basis `e_1, …, e_n, e_1, …`.
    RotatingBasis,
    /// Sine/cosine pairs at the given angular frequencies with seeded phases.
    SinusoidBank { frequencies: Vec<f64> },
    /// The same vector at every step.
    ConstantDirection { v: Vec<f64> },
    /// Regressors read from a CSV file with header `x_1,…,x_n`.
    Custom { path: PathBuf },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    #[default]
    None,
    /// Uniform on `[−bound, bound]`.
    UniformBounded { bound: f64 },
    /// Gaussian with standard deviation `sigma`, clipped to `[−clip, clip]`.
    GaussianClipped { sigma: f64, clip: f64 },
}

impl NoiseModel {
    /// Bound on `|v_t|` guaranteed by the model.
    pub fn bound(&self) -> f64 {
        match self {
            NoiseModel::None => 0.0,
            NoiseModel::UniformBounded { bound } => *bound,
            NoiseModel::GaussianClipped { clip, .. } => *clip,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub theta_true: Vec<f64>,
    pub regressor: RegressorGen,
    #[serde(default)]
    pub noise: NoiseModel,
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SystemConfig {
    pub fn dim(&self) -> usize {
        self.theta_true.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return Err(Error::Config("theta_true must have at least one component".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        match &self.regressor {
            RegressorGen::IidUniform { low, high } if !(low < high) => {
                return Err(Error::Config(format!("iid_uniform needs low < high, got [{low}, {high})")))
            }
            RegressorGen::SinusoidBank { frequencies } if frequencies.len() < n.div_ceil(2) => {
                return Err(Error::Config(format!(
                    "sinusoid_bank needs at least {} frequencies for n = {n}",
                    n.div_ceil(2)
                )))
            }
            RegressorGen::ConstantDirection { v } if v.len() != n => {
                return Err(Error::Config(format!(
                    "constant_direction vector has dimension {}, expected {n}",
                    v.len()
                )))
            }
            _ => {}
        }
        match self.noise {
            NoiseModel::UniformBounded { bound } if !(bound >= 0.0) => {
                Err(Error::Config(format!("noise bound must be nonnegative, got {bound}")))
            }
            NoiseModel::GaussianClipped { sigma, clip } if !(sigma > 0.0 && clip >= 0.0) => {
                Err(Error::Config("gaussian_clipped needs sigma > 0 and clip ≥ 0".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub t: usize,
    pub x: DVector<f64>,
    pub y: f64,
    /// `None` when the noise realization is unknown (ingested data).
    pub v: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub theta_true: Option<DVector<f64>>,
    pub config: Option<SystemConfig>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.x.len())
    }

    pub fn regressors(&self) -> Vec<DVector<f64>> {
        self.records.iter().map(|r| r.x.clone()).collect()
    }

    pub fn noise_known(&self) -> bool {
        self.records.iter().all(|r| r.v.is_some())
    }

    /// The noise sequence `v_1, …, v_N`, if known.
    pub fn noise(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.v).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_csv_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Header `t,x_1,…,x_n,y[,v]`; reals with 17 significant digits.
    pub fn write_csv_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let n = self.dim();
        let with_v = self.noise_known();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.push("y".into());
        if with_v {
            header.push("v".into());
        }
        writeln!(w, "{}", header.join(","))?;
        for r in &self.records {
            write!(w, "{}", r.t)?;
            for xi in r.x.iter() {
                write!(w, ",{}", fmt_real(*xi))?;
            }
            write!(w, ",{}", fmt_real(r.y))?;
            if let (true, Some(v)) = (with_v, r.v) {
                write!(w, ",{}", fmt_real(v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Decimal form with 17 significant digits; parses back to the same `f64`.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn generate_trajectory(config: &SystemConfig) -> Result<Trajectory> {
    config.validate()?;
    let n = config.dim();
    let theta = DVector::from_column_slice(&config.theta_true);
    let mut reg_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(1);

    let custom = match &config.regressor {
        RegressorGen::Custom { path } => {
            let xs = read_regressor_file(path, n)?;
            if xs.len() < config.horizon {
                return Err(Error::Schema(format!(
                    "{} holds {} regressors, horizon is {}",
                    path.display(),
                    xs.len(),
                    config.horizon
                )));
            }
            xs
        }
        _ => Vec::new(),
    };
    let phases: Vec<f64> = match &config.regressor {
        RegressorGen::SinusoidBank { frequencies } => frequencies
            .iter()
            .map(|_| reg_rng.random_range(0.0..2.0 * PI))
            .collect(),
        _ => Vec::new(),
    };
    let gaussian = match config.noise {
        NoiseModel::GaussianClipped { sigma, .. } => Some(
            Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("gaussian noise: {e}")))?,
        ),
        _ => None,
    };

    let mut records = Vec::with_capacity(config.horizon);
    for t in 1..=config.horizon {
        let x = match &config.regressor {
            RegressorGen::IidUniform { low, high } => {
                DVector::from_fn(n, |_, _| reg_rng.random_range(*low..*high))
            }
            RegressorGen::RotatingBasis => {
                let mut e = DVector::zeros(n);
                e[(t - 1) % n] = 1.0;
                e
            }
            RegressorGen::SinusoidBank { frequencies } => DVector::from_fn(n, |j, _| {
                let (w, phi) = (frequencies[j / 2], phases[j / 2]);
                let arg = w * t as f64 + phi;
                if j % 2 == 0 {
                    arg.sin()
                } else {
                    arg.cos()
                }
            }),
            RegressorGen::ConstantDirection { v } => DVector::from_column_slice(v),
            RegressorGen::Custom { .. } => custom[t - 1].clone(),
        };
        let v = match config.noise {
            NoiseModel::None => 0.0,
            NoiseModel::UniformBounded { bound } => {
                if bound == 0.0 {
                    0.0
                } else {
                    noise_rng.random_range(-bound..=bound)
                }
            }
            NoiseModel::GaussianClipped { clip, .. } => {
                let g: f64 = gaussian.as_ref().expect("gaussian noise").sample(&mut noise_rng);
                g.clamp(-clip, clip)
            }
        };
        let y = x.dot(&theta) + v;
        records.push(Record { t, x, y, v: Some(v) });
    }
    Ok(Trajectory {
        records,
        theta_true: Some(theta),
        config: Some(config.clone()),
    })
}

/// Reads a trajectory CSV with header `t,x_1,…,x_n,y[,v]`. Without a `v`
/// column the noise is recorded as unknown. The true parameter is never
/// part of the file and is left absent.
pub fn ingest_trajectory(path: &Path) -> Result<Trajectory> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_trajectory_from(file)
}

pub fn ingest_trajectory_from(reader: impl std::io::Read) -> Result<Trajectory> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let (n, with_v) = parse_header(&header)?;
    let width = header.len();

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = row.map_err(|e| Error::Schema(format!("row {line}: {e}")))?;
        if row.len() != width {
            return Err(Error::Schema(format!(
                "row {line} has {} columns, header has {width}",
                row.len()
            )));
        }
        let t: usize = row[0].parse().map_err(|_| Error::Parse {
            row: line,
            column: 1,
            message: format!("time index {:?} is not a nonnegative integer", &row[0]),
        })?;
        let cell = |c: usize| -> Result<f64> {
            row[c].parse::<f64>().map_err(|_| Error::Parse {
                row: line,
                column: c + 1,
                message: format!("{:?} is not a number", &row[c]),
            })
        };
        let x = DVector::from_iterator(n, (1..=n).map(&cell).collect::<Result<Vec<_>>>()?);
        let y = cell(n + 1)?;
        let v = if with_v { Some(cell(n + 2)?) } else { None };
        let expected = records.len() + 1;
        if t != expected {
            return Err(Error::Schema(format!(
                "row {line}: time index {t}, expected {expected} (timestamps must run 1, 2, …)"
            )));
        }
        records.push(Record { t, x, y, v });
    }
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    Ok(Trajectory {
        records,
        theta_true: None,
        config: None,
    })
}

fn parse_header(header: &[String]) -> Result<(usize, bool)> {
    let bad = || {
        Error::Schema(format!(
            "header must be t,x_1,…,x_n,y[,v]; got {}",
            header.join(",")
        ))
    };
    if header.first().map(String::as_str) != Some("t") {
        return Err(bad());
    }
    let n = header[1..]
        .iter()
        .take_while(|h| h.starts_with("x_"))
        .count();
    if n == 0 {
        return Err(bad());
    }
    for (i, h) in header[1..=n].iter().enumerate() {
        if *h != format!("x_{}", i + 1) {
            return Err(bad());
        }
    }
    match &header[n + 1..] {
        [y] if y == "y" => Ok((n, false)),
        [y, v] if y == "y" && v == "v" => Ok((n, true)),
        _ => Err(bad()),
    }
}

fn read_regressor_file(path: &Path, n: usize) -> Result<Vec<DVector<f64>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let width = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("{}: unreadable header: {e}", path.display())))?
        .len();
    if width != n {
        return Err(Error::Schema(format!(
            "{}: expected {n} regressor columns, found {width}",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Schema(format!("row {line}: {e}")))?;
        if row.len() != n {
            return Err(Error::Schema(format!(
                "row {line} has {} columns, expected {n}",
                row.len()
            )));
        }
        let mut x = DVector::zeros(n);
        for c in 0..n {
            x[c] = row[c].parse().map_err(|_| Error::Parse {
                row: line,
                column: c + 1,
                message: format!("{:?} is not a number", &row[c]),
            })?;
        }
        out.push(x);
    }
    if out.is_empty() {
        return Err(Error::NoRecords);
    }
    Ok(out)
}
