//! The CSV evidence store: one row per (spacing, station), appended
//! atomically, read back as the single source of truth.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wakeprobe_core::discovery::EvidenceRow;
use wakeprobe_core::field::GeometryEstimate;

pub const HEADER: [&str; 12] = [
    "iteration",
    "spacing",
    "x_p",
    "delta_star",
    "theta",
    "e_l2",
    "e_cos",
    "j",
    "cyl1_error_D",
    "cyl2_error_D",
    "geom_valid",
    "seed",
];

#[derive(Debug, Error)]
pub enum EvidenceError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: unexpected header {found:?}")]
    Header { path: PathBuf, found: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub iteration: u32,
    pub spacing: f64,
    pub x_p: f64,
    pub delta_star: f64,
    pub theta: f64,
    pub e_l2: f64,
    pub e_cos: f64,
    pub j: f64,
    #[serde(rename = "cyl1_error_D")]
    pub cyl1_error_d: f64,
    #[serde(rename = "cyl2_error_D")]
    pub cyl2_error_d: f64,
    pub geom_valid: bool,
    pub seed: u64,
}

impl ResultRow {
    /// Validity from the stored error columns, ignoring the `geom_valid` claim.
    pub fn recomputed_valid(&self, tolerance: f64) -> bool {
        GeometryEstimate::is_valid_at(self.cyl1_error_d, self.cyl2_error_d, tolerance)
    }

    pub fn evidence(&self, tolerance: f64) -> EvidenceRow {
        EvidenceRow {
            spacing: self.spacing,
            x_p: self.x_p,
            delta_star: self.delta_star,
            theta: self.theta,
            geom_valid: self.recomputed_valid(tolerance),
        }
    }

    fn record(&self) -> [String; 12] {
        [
            self.iteration.to_string(),
            fmt_g9(self.spacing),
            fmt_g9(self.x_p),
            fmt_g9(self.delta_star),
            fmt_g9(self.theta),
            fmt_g9(self.e_l2),
            fmt_g9(self.e_cos),
            fmt_g9(self.j),
            fmt_g9(self.cyl1_error_d),
            fmt_g9(self.cyl2_error_d),
            self.geom_valid.to_string(),
            self.seed.to_string(),
        ]
    }

    /// The row as it reads back from disk (every float rounded to 9
    /// significant digits).
    pub fn rounded(&self) -> Self {
        let r = |x: f64| fmt_g9(x).parse::<f64>().expect("formatted float parses");
        Self {
            spacing: r(self.spacing),
            x_p: r(self.x_p),
            delta_star: r(self.delta_star),
            theta: r(self.theta),
            e_l2: r(self.e_l2),
            e_cos: r(self.e_cos),
            j: r(self.j),
            cyl1_error_d: r(self.cyl1_error_d),
            cyl2_error_d: r(self.cyl2_error_d),
            ..*self
        }
    }
}

/// `printf("%.9g")`: 9 significant digits, trailing zeros dropped,
/// exponent form outside `[1e−4, 1e9)`; non-finite values print as
/// `inf`, `-inf`, `nan`.
pub fn fmt_g9(x: f64) -> String {
    fmt_g(x, 9)
}

pub fn fmt_g(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let p = digits.max(1);
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceStore {
    path: PathBuf,
}

impl EvidenceStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// All rows; a missing file reads as empty.
    pub fn read(&self) -> Result<Vec<ResultRow>, EvidenceError> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        read_rows(&self.path)
    }

    /// Rewrites the file with `rows` appended: temp file in the same
    /// directory, fsync, rename.
    pub fn append(&self, rows: &[ResultRow]) -> Result<(), EvidenceError> {
        let io_err = |source| EvidenceError::Io { path: self.path.clone(), source };
        let mut bytes = if self.path.exists() { fs::read(&self.path).map_err(io_err)? } else { Vec::new() };
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        let csv_err = |source| EvidenceError::Csv { path: self.path.clone(), source };
        if bytes.is_empty() {
            w.write_record(HEADER).map_err(csv_err)?;
        }
        for r in rows {
            w.write_record(r.record()).map_err(csv_err)?;
        }
        let tail = w.into_inner().map_err(|e| io_err(e.into_error()))?;
        bytes.extend_from_slice(&tail);
        let tmp = self.path.with_extension("csv.tmp");
        let write = || -> io::Result<()> {
            let mut f = File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &self.path)
        };
        write().map_err(io_err)
    }
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>, EvidenceError> {
    let csv_err = |source| EvidenceError::Csv { path: path.to_path_buf(), source };
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = rdr.headers().map_err(csv_err)?;
    if headers.iter().ne(HEADER) {
        return Err(EvidenceError::Header { path: path.into(), found: headers.iter().map(String::from).collect() });
    }
    rdr.deserialize().collect::<Result<Vec<ResultRow>, _>>().map_err(csv_err)
}
