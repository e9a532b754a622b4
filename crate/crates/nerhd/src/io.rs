//! CSV readers and writers for samples, populations and result tables.
//!
//! Numbers are written rounded to 15 significant digits in their shortest
//! decimal form, so a write/read cycle reproduces every value at that
//! precision.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nerhd_core::model::Violation;
use nerhd_core::predict::PredictorSet;
use nerhd_core::sim::{DesignTable, MetricsTable, ParameterSummary, Population, PopulationArea, PredictorMetrics, RmseMetrics};
use nerhd_core::uncertainty::UncertaintyEstimate;
use nerhd_core::{AreaInfo, Dataset, FitResult, Sample, UnitRecord};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: std::io::Error },
    #[error("{}, line {line}: {message}", path.display())]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("dataset failed validation:\n{}", report(.0))]
    Invalid(Vec<Violation>),
    #[error("{0}")]
    Write(String),
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;

fn report(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  {x}")).collect::<Vec<_>>().join("\n")
}

/// Formats `v` rounded to 15 significant digits.
pub fn fmt_num(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let rounded: f64 = format!("{v:.14e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|source| IoError::File { path: path.to_path_buf(), source })?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

/// Column layout of a CSV header: named columns plus numbered prefix columns
/// such as `x1, x2, ...`.
struct Header {
    names: HashMap<String, usize>,
    numbered: Vec<usize>,
}

impl Header {
    fn read<R: Read>(rdr: &mut csv::Reader<R>, path: &Path, prefix: &str) -> Result<Self> {
        let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
        let names: HashMap<String, usize> = headers.iter().enumerate().map(|(i, h)| (h.to_string(), i)).collect();
        let mut numbered = Vec::new();
        while let Some(&i) = names.get(&format!("{prefix}{}", numbered.len() + 1)) {
            numbered.push(i);
        }
        Ok(Self { names, numbered })
    }

    fn require(&self, name: &str, path: &Path) -> Result<usize> {
        self.names.get(name).copied().ok_or_else(|| IoError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("missing column `{name}`"),
        })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> IoError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    IoError::Parse { path: path.to_path_buf(), line, message: e.to_string() }
}

struct Row<'a> {
    rec: &'a csv::StringRecord,
    path: &'a Path,
}

impl Row<'_> {
    fn line(&self) -> u64 {
        self.rec.position().map(|p| p.line()).unwrap_or(0)
    }

    fn err(&self, message: String) -> IoError {
        IoError::Parse { path: self.path.to_path_buf(), line: self.line(), message }
    }

    fn text(&self, col: usize) -> Result<&str> {
        self.rec.get(col).ok_or_else(|| self.err(format!("missing field {}", col + 1)))
    }

    fn num(&self, col: usize, what: &str) -> Result<f64> {
        let s = self.text(col)?;
        s.parse().map_err(|_| self.err(format!("{what} is not a number: `{s}`")))
    }

    fn opt_num(&self, col: usize, what: &str) -> Result<Option<f64>> {
        match self.text(col)? {
            "" => Ok(None),
            _ => self.num(col, what).map(Some),
        }
    }

    fn count(&self, col: usize, what: &str) -> Result<usize> {
        let s = self.text(col)?;
        s.parse().map_err(|_| self.err(format!("{what} is not a non-negative integer: `{s}`")))
    }
}

/// Reads the unit file (`area_id, y, x1..xp`, optional `k`) and the area
/// file (`area_id, N, Xbar1..Xbarp`, optional `h`) and validates the result.
/// Missing multipliers default to 1; sample sizes are counted from the unit
/// file.
pub fn read_unit_csv(units: &Path, areas: &Path) -> Result<Dataset> {
    let mut rdr = open(units)?;
    let hdr = Header::read(&mut rdr, units, "x")?;
    let (c_id, c_y) = (hdr.require("area_id", units)?, hdr.require("y", units)?);
    let c_k = hdr.names.get("k").copied();
    let p = hdr.numbered.len();
    let mut unit_records = Vec::new();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(units, e))?;
        let row = Row { rec: &rec, path: units };
        let area_id = row.text(c_id)?.to_string();
        let y = row.num(c_y, "y")?;
        let x = hdr.numbered.iter().enumerate().map(|(j, &c)| row.num(c, &format!("x{}", j + 1))).collect::<Result<_>>()?;
        let k = match c_k {
            Some(c) => row.opt_num(c, "k")?.unwrap_or(1.0),
            None => 1.0,
        };
        *counts.entry(area_id.clone()).or_default() += 1;
        unit_records.push(UnitRecord { area_id, y, x, k });
    }

    let mut rdr = open(areas)?;
    let hdr = Header::read(&mut rdr, areas, "Xbar")?;
    let (c_id, c_n) = (hdr.require("area_id", areas)?, hdr.require("N", areas)?);
    let c_h = hdr.names.get("h").copied();
    if hdr.numbered.len() != p {
        return Err(IoError::Parse {
            path: areas.to_path_buf(),
            line: 1,
            message: format!("expected {p} population mean columns Xbar1..Xbar{p}, found {}", hdr.numbered.len()),
        });
    }
    let mut infos = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(areas, e))?;
        let row = Row { rec: &rec, path: areas };
        let area_id = row.text(c_id)?.to_string();
        let pop_size = row.count(c_n, "N")?;
        let pop_mean = hdr.numbered.iter().enumerate().map(|(j, &c)| row.num(c, &format!("Xbar{}", j + 1))).collect::<Result<_>>()?;
        let h = match c_h {
            Some(c) => row.opt_num(c, "h")?.unwrap_or(1.0),
            None => 1.0,
        };
        let sample_size = counts.get(&area_id).copied().unwrap_or(0);
        infos.push(AreaInfo { area_id, pop_size, sample_size, pop_mean, h });
    }
    let ds = Dataset::new(unit_records, infos, p);
    let violations = ds.validate();
    if violations.is_empty() {
        Ok(ds)
    } else {
        Err(IoError::Invalid(violations))
    }
}

/// Reads a population file with columns `area_id, y, x1..xp`. Areas keep
/// their order of first appearance.
pub fn read_population_csv(path: &Path) -> Result<Population> {
    let mut rdr = open(path)?;
    let hdr = Header::read(&mut rdr, path, "x")?;
    let (c_id, c_y) = (hdr.require("area_id", path)?, hdr.require("y", path)?);
    let p = hdr.numbered.len();
    let mut areas: Vec<PopulationArea> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = Row { rec: &rec, path };
        let id = row.text(c_id)?;
        let i = match slot.get(id) {
            Some(&i) => i,
            None => {
                slot.insert(id.to_string(), areas.len());
                areas.push(PopulationArea { id: id.to_string(), y: Vec::new(), x: Vec::new() });
                areas.len() - 1
            }
        };
        let y = row.num(c_y, "y")?;
        areas[i].y.push(y);
        for (j, &c) in hdr.numbered.iter().enumerate() {
            let v = row.num(c, &format!("x{}", j + 1))?;
            areas[i].x.push(v);
        }
    }
    Population::new(p, areas).map_err(|e| IoError::Parse { path: path.to_path_buf(), line: 0, message: e.to_string() })
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(w)
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| IoError::Write(e.to_string()))
}

fn put<W: Write, I, T>(w: &mut csv::Writer<W>, row: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| IoError::Write(e.to_string()))
}

const PREDICTION_COLUMNS: [&str; 11] =
    ["area_id", "direct", "eblup", "ebp", "ebp_mle", "ebp_finite", "mq", "mqcd", "b_bhf", "b_gee", "b_mle"];

/// One row per area.
pub fn write_predictions<W: Write>(out: W, set: &PredictorSet) -> Result<()> {
    let mut w = writer(out);
    put(&mut w, PREDICTION_COLUMNS)?;
    for i in 0..set.area_ids.len() {
        put(
            &mut w,
            [
                set.area_ids[i].clone(),
                fmt_num(set.direct[i]),
                fmt_num(set.eblup_bhf[i]),
                fmt_num(set.ebp[i]),
                fmt_opt(set.ebp_mle.as_ref().map(|v| v[i])),
                fmt_num(set.ebp_finite[i]),
                fmt_num(set.mq_synth[i]),
                fmt_num(set.mqcd[i]),
                fmt_num(set.b_bhf[i]),
                fmt_num(set.b_gee[i]),
                fmt_opt(set.b_mle.as_ref().map(|v| v[i])),
            ],
        )?;
    }
    finish(w)
}

fn table_rows<R: Read>(input: R, what: &str) -> Result<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let path = PathBuf::from(what);
    let mut rdr = csv::ReaderBuilder::new().from_reader(input);
    let headers = rdr.headers().map_err(|e| csv_error(&path, e))?.clone();
    let rows = rdr.records().collect::<std::result::Result<Vec<_>, _>>().map_err(|e| csv_error(&path, e))?;
    Ok((headers, rows))
}

pub fn read_predictions<R: Read>(input: R) -> Result<PredictorSet> {
    let path = Path::new("predictions");
    let (headers, rows) = table_rows(input, "predictions")?;
    if headers.iter().ne(PREDICTION_COLUMNS) {
        return Err(IoError::Parse { path: path.into(), line: 1, message: "unexpected prediction columns".into() });
    }
    let mut cols: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(rows.len()); PREDICTION_COLUMNS.len()];
    let mut ids = Vec::with_capacity(rows.len());
    for rec in &rows {
        let row = Row { rec, path };
        ids.push(row.text(0)?.to_string());
        for (c, col) in cols.iter_mut().enumerate().skip(1) {
            col.push(row.opt_num(c, PREDICTION_COLUMNS[c])?);
        }
    }
    let need = |c: usize| -> Result<Vec<f64>> {
        cols[c].iter().map(|v| v.ok_or_else(|| IoError::Parse {
            path: path.into(),
            line: 0,
            message: format!("empty `{}` value", PREDICTION_COLUMNS[c]),
        })).collect()
    };
    let maybe = |c: usize| -> Option<Vec<f64>> { cols[c].iter().copied().collect() };
    Ok(PredictorSet {
        area_ids: ids,
        direct: need(1)?,
        eblup_bhf: need(2)?,
        ebp: need(3)?,
        ebp_mle: maybe(4),
        ebp_finite: need(5)?,
        mq_synth: need(6)?,
        mqcd: need(7)?,
        b_bhf: need(8)?,
        b_gee: need(9)?,
        b_mle: maybe(10),
    })
}

/// Tidy long form: `section, name, area, metric, value`. Medians and run
/// counts leave `area` empty; per-area values carry the 1-based area index.
pub fn write_metrics<W: Write>(out: W, table: &MetricsTable) -> Result<()> {
    let mut w = writer(out);
    put(&mut w, ["section", "name", "area", "metric", "value"])?;
    let scalar = |w: &mut csv::Writer<W>, section: &str, name: &str, metric: &str, v: f64| {
        put(w, [section, name, "", metric, &fmt_num(v)])
    };
    scalar(&mut w, "run", "", "replicates", table.replicates as f64)?;
    scalar(&mut w, "run", "", "failed", table.failed as f64)?;
    for p in &table.predictors {
        scalar(&mut w, "predictor", &p.name, "median_arb", p.median_arb)?;
        scalar(&mut w, "predictor", &p.name, "median_rrmse", p.median_rrmse)?;
        if let Some(e) = p.median_eff {
            scalar(&mut w, "predictor", &p.name, "median_eff", e)?;
        }
    }
    for r in &table.rmse_estimators {
        scalar(&mut w, "rmse", &r.name, "median_rb", r.median_rb)?;
        scalar(&mut w, "rmse", &r.name, "median_rrmse", r.median_rrmse)?;
        scalar(&mut w, "rmse", &r.name, "median_coverage", r.median_coverage)?;
    }
    let per_area = |w: &mut csv::Writer<W>, section: &str, name: &str, metric: &str, v: &[f64]| -> Result<()> {
        for (i, x) in v.iter().enumerate() {
            put(w, [section, name, &(i + 1).to_string(), metric, &fmt_num(*x)])?;
        }
        Ok(())
    };
    for p in &table.predictors {
        per_area(&mut w, "predictor", &p.name, "arb", &p.arb)?;
        per_area(&mut w, "predictor", &p.name, "rrmse", &p.rrmse)?;
        per_area(&mut w, "predictor", &p.name, "rmse", &p.rmse)?;
    }
    for r in &table.rmse_estimators {
        per_area(&mut w, "rmse", &r.name, "rb", &r.rb)?;
        per_area(&mut w, "rmse", &r.name, "rrmse", &r.rrmse)?;
        per_area(&mut w, "rmse", &r.name, "coverage", &r.coverage)?;
    }
    finish(w)
}

pub fn read_metrics<R: Read>(input: R) -> Result<MetricsTable> {
    let path = Path::new("metrics");
    let (_, rows) = table_rows(input, "metrics")?;
    let mut table = MetricsTable { predictors: Vec::new(), rmse_estimators: Vec::new(), replicates: 0, failed: 0 };
    for rec in &rows {
        let row = Row { rec, path };
        let (section, name, area, metric) = (row.text(0)?, row.text(1)?, row.text(2)?, row.text(3)?);
        let v = row.num(4, "value")?;
        match section {
            "run" => match metric {
                "replicates" => table.replicates = v as usize,
                "failed" => table.failed = v as usize,
                _ => return Err(row.err(format!("unknown run metric `{metric}`"))),
            },
            "predictor" => {
                let p = match table.predictors.iter().position(|p| p.name == name) {
                    Some(i) => &mut table.predictors[i],
                    None => {
                        table.predictors.push(PredictorMetrics {
                            name: name.to_string(),
                            median_arb: f64::NAN,
                            median_rrmse: f64::NAN,
                            median_eff: None,
                            arb: Vec::new(),
                            rrmse: Vec::new(),
                            rmse: Vec::new(),
                        });
                        table.predictors.last_mut().expect("just pushed")
                    }
                };
                match (area.is_empty(), metric) {
                    (true, "median_arb") => p.median_arb = v,
                    (true, "median_rrmse") => p.median_rrmse = v,
                    (true, "median_eff") => p.median_eff = Some(v),
                    (false, "arb") => p.arb.push(v),
                    (false, "rrmse") => p.rrmse.push(v),
                    (false, "rmse") => p.rmse.push(v),
                    _ => return Err(row.err(format!("unknown predictor metric `{metric}`"))),
                }
            }
            "rmse" => {
                let r = match table.rmse_estimators.iter().position(|r| r.name == name) {
                    Some(i) => &mut table.rmse_estimators[i],
                    None => {
                        table.rmse_estimators.push(RmseMetrics {
                            name: name.to_string(),
                            median_rb: f64::NAN,
                            median_rrmse: f64::NAN,
                            median_coverage: f64::NAN,
                            rb: Vec::new(),
                            rrmse: Vec::new(),
                            coverage: Vec::new(),
                        });
                        table.rmse_estimators.last_mut().expect("just pushed")
                    }
                };
                match (area.is_empty(), metric) {
                    (true, "median_rb") => r.median_rb = v,
                    (true, "median_rrmse") => r.median_rrmse = v,
                    (true, "median_coverage") => r.median_coverage = v,
                    (false, "rb") => r.rb.push(v),
                    (false, "rrmse") => r.rrmse.push(v),
                    (false, "coverage") => r.coverage.push(v),
                    _ => return Err(row.err(format!("unknown rmse metric `{metric}`"))),
                }
            }
            _ => return Err(row.err(format!("unknown section `{section}`"))),
        }
    }
    Ok(table)
}

/// Fitted parameters, one row per area.
pub fn write_fit<W: Write>(out: W, sample: &Sample, fit: &FitResult) -> Result<()> {
    let mut w = writer(out);
    let p = sample.p();
    let mut header = vec!["area_id".to_string(), "tau".into(), "beta0".into(), "alpha0".into()];
    header.extend((1..=p).map(|j| format!("beta{j}")));
    header.extend(["sigma2_gamma".into(), "sigma2_eps".into(), "shrinkage".into()]);
    put(&mut w, &header)?;
    let b = nerhd_core::predict::fit_shrinkage(sample, fit);
    for (i, (a, pv)) in sample.areas().iter().zip(&fit.params).enumerate() {
        let mut row = vec![a.id.clone(), fmt_num(pv.tau), fmt_num(pv.beta0), fmt_num(fit.intercepts[i])];
        row.extend(pv.beta.iter().map(|v| fmt_num(*v)));
        row.extend([fmt_num(pv.sigma2_gamma), fmt_num(pv.sigma2_eps), fmt_num(b[i])]);
        put(&mut w, &row)?;
    }
    finish(w)
}

/// Point predictions with their uncertainty values and intervals.
pub fn write_uncertainty<W: Write>(out: W, ids: &[String], point: &[f64], est: &UncertaintyEstimate) -> Result<()> {
    let mut w = writer(out);
    put(&mut w, ["area_id", "ebp", "value", "lower", "upper"])?;
    for i in 0..ids.len() {
        let (lo, hi) = est.intervals.as_ref().map(|v| (Some(v[i].0), Some(v[i].1))).unwrap_or((None, None));
        put(&mut w, [ids[i].clone(), fmt_num(point[i]), fmt_num(est.values[i]), fmt_opt(lo), fmt_opt(hi)])?;
    }
    finish(w)
}

/// Design-based summaries: one row per sample size and predictor, then the
/// per-area relative biases and RRMSEs in long form.
pub fn write_design<W: Write>(out: W, tables: &[DesignTable]) -> Result<()> {
    let mut w = writer(out);
    put(&mut w, ["n", "name", "area", "metric", "value"])?;
    for t in tables {
        let n = t.sample_size.to_string();
        for p in &t.predictors {
            for (metric, v) in [
                ("median_abs_rb", p.median_abs_rb),
                ("median_rrmse", p.median_rrmse),
                ("smallest_area_rb", p.smallest_area_rb),
                ("smallest_area_rrmse", p.smallest_area_rrmse),
            ] {
                put(&mut w, [n.as_str(), &p.name, "", metric, &fmt_num(v)])?;
            }
        }
        for p in &t.predictors {
            for (i, (rb, rr)) in p.rb.iter().zip(&p.rrmse).enumerate() {
                let area = (i + 1).to_string();
                put(&mut w, [n.as_str(), &p.name, &area, "rb", &fmt_num(*rb)])?;
                put(&mut w, [n.as_str(), &p.name, &area, "rrmse", &fmt_num(*rr)])?;
            }
        }
    }
    finish(w)
}

/// Per-area parameter averages of a model-based run.
pub fn write_parameters<W: Write>(out: W, s: &ParameterSummary) -> Result<()> {
    let mut w = writer(out);
    put(&mut w, ["area", "true_slope", "gee_slope", "mle_slope", "gee_variance_ratio", "mle_variance_ratio"])?;
    for i in 0..s.true_slope.len() {
        put(
            &mut w,
            [
                (i + 1).to_string(),
                fmt_num(s.true_slope[i]),
                fmt_num(s.gee_slope[i]),
                fmt_num(s.mle_slope[i]),
                fmt_num(s.gee_variance_ratio[i]),
                fmt_num(s.mle_variance_ratio[i]),
            ],
        )?;
    }
    finish(w)
}

/// Writes a dataset as the unit and area files read by [`read_unit_csv`].
/// Multiplier columns are written only when some multiplier differs from 1.
pub fn write_dataset<U: Write, A: Write>(units: U, areas: A, ds: &Dataset) -> Result<()> {
    let with_k = ds.units.iter().any(|u| u.k != 1.0);
    let with_h = ds.areas.iter().any(|a| a.h != 1.0);
    let mut w = writer(units);
    let mut header = vec!["area_id".to_string(), "y".into()];
    header.extend((1..=ds.p).map(|j| format!("x{j}")));
    if with_k {
        header.push("k".into());
    }
    put(&mut w, &header)?;
    for u in &ds.units {
        let mut row = vec![u.area_id.clone(), fmt_num(u.y)];
        row.extend(u.x.iter().map(|v| fmt_num(*v)));
        if with_k {
            row.push(fmt_num(u.k));
        }
        put(&mut w, &row)?;
    }
    finish(w)?;

    let mut w = writer(areas);
    let mut header = vec!["area_id".to_string(), "N".into()];
    header.extend((1..=ds.p).map(|j| format!("Xbar{j}")));
    if with_h {
        header.push("h".into());
    }
    put(&mut w, &header)?;
    for a in &ds.areas {
        let mut row = vec![a.area_id.clone(), a.pop_size.to_string()];
        row.extend(a.pop_mean.iter().map(|v| fmt_num(*v)));
        if with_h {
            row.push(fmt_num(a.h));
        }
        put(&mut w, &row)?;
    }
    finish(w)
}

/// Writes a population in the layout read by [`read_population_csv`].
pub fn write_population<W: Write>(out: W, pop: &Population) -> Result<()> {
    let mut w = writer(out);
    let p = pop.p();
    let mut header = vec!["area_id".to_string(), "y".into()];
    header.extend((1..=p).map(|j| format!("x{j}")));
    put(&mut w, &header)?;
    for a in pop.areas() {
        for j in 0..a.size() {
            let mut row = vec![a.id.clone(), fmt_num(a.y[j])];
            row.extend(a.x[j * p..(j + 1) * p].iter().map(|v| fmt_num(*v)));
            put(&mut w, &row)?;
        }
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifteen_digit_rounding() {
        assert_eq!(fmt_num(0.1 + 0.2), "0.3");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333333333");
        assert_eq!(fmt_num(-2.5e-12), "-0.0000000000025");
        assert_eq!(fmt_num(f64::NAN), "NaN");
        assert_eq!(fmt_num(123456789012345678.0), "123456789012346000");
    }
}
