//! On-disk formats: channel and scheme JSON documents, histogram CSV
//! ingest and curve CSV output.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::channel::{Channel, CostMatrix, Pmf, ProtectionScheme};
use crate::error::{LeakError, Result};
use crate::metrics::LeakageReport;
use crate::optimize::Mixture;

/// Tolerance when re-checking a stored mixture against its blended rows.
pub const MIXTURE_TOL: f64 = 1e-9;

/// A cost entry: a nonnegative number, or `"inf"` for a forbidden cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEntry(pub f64);

impl Serialize for CostEntry {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for CostEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(CostEntry(v)),
            Raw::Word(w) if matches!(w.as_str(), "inf" | "Infinity" | "infinity") => Ok(CostEntry(f64::INFINITY)),
            Raw::Word(w) => Err(de::Error::custom(format!("cost entry {w:?} is neither a number nor \"inf\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CostSpec {
    /// `per_unit * (y - x)` for `y >= x` over the labels.
    Padding { per_unit: f64 },
    /// Same shape as padding; the labels are times rather than sizes.
    Delay { per_unit: f64 },
    Matrix { rows: Vec<Vec<CostEntry>> },
}

/// Channel document. `y_labels` defaults to `x_labels` for label-derived costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelFile {
    pub x_labels: Vec<f64>,
    pub p_x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_labels: Option<Vec<f64>>,
    pub cost: CostSpec,
}

impl ChannelFile {
    pub fn to_channel(&self) -> Result<Channel> {
        if self.x_labels.len() != self.p_x.len() {
            return Err(LeakError::Dimension(format!(
                "{} labels for {} probabilities",
                self.x_labels.len(),
                self.p_x.len()
            )));
        }
        let px = Pmf::new(self.p_x.clone())?.with_labels(self.x_labels.clone())?;
        let y_labels = self.y_labels.clone();
        let (cost, y_labels) = match &self.cost {
            CostSpec::Padding { per_unit } | CostSpec::Delay { per_unit } => {
                let ys = y_labels.unwrap_or_else(|| self.x_labels.clone());
                (CostMatrix::padding(&self.x_labels, &ys, *per_unit)?, Some(ys))
            }
            CostSpec::Matrix { rows } => {
                let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|c| c.0).collect()).collect();
                (CostMatrix::from_rows(&rows)?, y_labels)
            }
        };
        let channel = Channel::new(px, cost)?;
        match y_labels {
            Some(ys) => channel.with_y_labels(ys),
            None => Ok(channel),
        }
    }

    /// Channel document with an explicit cost matrix.
    pub fn from_channel(channel: &Channel) -> Result<Self> {
        let x_labels = match channel.px().labels() {
            Some(l) => l.to_vec(),
            None => (0..channel.m()).map(|i| i as f64).collect(),
        };
        let rows = (0..channel.m()).map(|x| channel.cost().row(x).iter().map(|&c| CostEntry(c)).collect()).collect();
        Ok(ChannelFile {
            x_labels,
            p_x: channel.px().probs().to_vec(),
            y_labels: channel.y_labels().map(<[f64]>::to_vec),
            cost: CostSpec::Matrix { rows },
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        serde_json::from_str(&text).map_err(|e| LeakError::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFile {
    pub lambda: f64,
    pub p1_rows: Vec<Vec<f64>>,
    pub p2_rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, serde_json::Value>,
}

/// Scheme document. Floats are written in shortest round-trip form, so a
/// save followed by a load gives back the same bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeFile {
    pub rows: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<LeakageReport>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl SchemeFile {
    pub fn new(scheme: &ProtectionScheme, provenance: Provenance) -> Self {
        SchemeFile { rows: scheme.to_rows(), mixture: None, metrics: None, provenance }
    }

    pub fn with_mixture(mut self, mixture: &Mixture) -> Self {
        self.mixture = Some(MixtureFile {
            lambda: mixture.lambda,
            p1_rows: mixture.p1.to_rows(),
            p2_rows: mixture.p2.to_rows(),
        });
        self
    }

    pub fn with_metrics(mut self, report: LeakageReport) -> Self {
        self.metrics = Some(report);
        self
    }

    /// The stored scheme, after checking that it is row-stochastic and
    /// that any stored mixture blends back into it.
    pub fn scheme(&self) -> Result<ProtectionScheme> {
        let scheme = ProtectionScheme::from_rows(&self.rows)?;
        scheme.check_stochastic()?;
        if let Some(mix) = self.mixture()? {
            let blend = mix.blend()?;
            if blend.rows() != scheme.rows() || blend.cols() != scheme.cols() {
                return Err(LeakError::Dimension("mixture and rows differ in shape".into()));
            }
            let gap = blend
                .matrix()
                .as_slice()
                .iter()
                .zip(scheme.matrix().as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if gap > MIXTURE_TOL {
                return Err(LeakError::Violation(format!("mixture blend is {gap} away from the stored rows")));
            }
        }
        Ok(scheme)
    }

    pub fn mixture(&self) -> Result<Option<Mixture>> {
        let Some(m) = &self.mixture else {
            return Ok(None);
        };
        if !(0.0..=1.0).contains(&m.lambda) {
            return Err(LeakError::Invalid(format!("mixture weight {} is outside [0, 1]", m.lambda)));
        }
        let p1 = ProtectionScheme::from_rows(&m.p1_rows)?;
        let p2 = ProtectionScheme::from_rows(&m.p2_rows)?;
        p1.check_stochastic()?;
        p2.check_stochastic()?;
        Ok(Some(Mixture { lambda: m.lambda, p1, p2 }))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        serde_json::from_str(&text).map_err(|e| LeakError::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| LeakError::Invalid(format!("cannot read {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| LeakError::Internal(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| LeakError::Invalid(format!("cannot write {}: {e}", path.display())))
}

/// Reads a `label,count` histogram. A first line that does not parse as
/// numbers is taken as a header. Labels are sorted, duplicates summed and
/// counts normalized.
pub fn ingest_histogram<R: Read>(reader: R) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut entries: Vec<(f64, f64)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| LeakError::Invalid(format!("line {line}: {e}")))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() != 2 {
            return Err(LeakError::Invalid(format!("line {line}: expected 2 fields, found {}", record.len())));
        }
        let (label, count) = match (record[0].parse::<f64>(), record[1].parse::<f64>()) {
            (Ok(l), Ok(c)) => (l, c),
            _ if line == 1 => continue,
            _ => return Err(LeakError::Invalid(format!("line {line}: cannot parse {:?}", record.iter().collect::<Vec<_>>().join(",")))),
        };
        if !label.is_finite() {
            return Err(LeakError::Invalid(format!("line {line}: label {label} is not finite")));
        }
        if !count.is_finite() || count < 0.0 {
            return Err(LeakError::Invalid(format!("line {line}: count {count} must be a nonnegative number")));
        }
        entries.push((label, count));
    }
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut labels: Vec<f64> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    for (l, c) in entries {
        if labels.last() == Some(&l) {
            *counts.last_mut().unwrap() += c;
        } else {
            labels.push(l);
            counts.push(c);
        }
    }
    let total: f64 = counts.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(LeakError::Invalid("histogram counts are all zero".into()));
    }
    Ok((labels, counts.iter().map(|c| c / total).collect()))
}

/// One row of the curve CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub exp_leak: f64,
    pub leak_bits: f64,
    pub cost: f64,
    /// Empty when the channel has no positive baseline.
    pub percent_overhead: Option<f64>,
}

impl CurveRow {
    pub fn new(exp_leak: f64, cost: f64, baseline: Option<f64>) -> Self {
        CurveRow { exp_leak, leak_bits: exp_leak.log2(), cost, percent_overhead: percent_overhead(cost, baseline) }
    }
}

/// `100 * cost / baseline`, when the baseline is positive.
pub fn percent_overhead(cost: f64, baseline: Option<f64>) -> Option<f64> {
    baseline.filter(|b| *b > 0.0).map(|b| 100.0 * cost / b)
}

pub fn write_curve_csv(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let fail = |e: &dyn std::fmt::Display| LeakError::Invalid(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(|e| fail(&e))?;
    for row in rows {
        w.serialize(row).map_err(|e| fail(&e))?;
    }
    w.flush().map_err(|e| fail(&e))
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| LeakError::Invalid(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(|e| LeakError::Invalid(format!("{}: {e}", path.display())))).collect()
}
