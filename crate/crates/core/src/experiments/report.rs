//! Raw run logs as CSV rows, and the aggregates computed from them.
//!
//! Aggregates are always computed from rows rounded to the 6 decimals that
//! the raw CSV carries, after sorting. Summarizing a written `raw_runs.csv`
//! therefore reproduces the aggregates of the original experiment exactly,
//! whatever the row order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::orchestrator::{EntityKind, RunLog};
use crate::{Error, Result};

pub const RAW_FILE: &str = "raw_runs.csv";
pub const TIME_FILE: &str = "error_over_time.csv";
pub const CDF_FILE: &str = "cdf_final.csv";
pub const DENSITY_FILE: &str = "error_vs_density.csv";

pub const RAW_HEADER: [&str; 11] = [
    "run_id",
    "slot",
    "entity_type",
    "entity_id",
    "true_x",
    "true_y",
    "true_z",
    "est_x",
    "est_y",
    "est_z",
    "error_m",
];
pub const TIME_HEADER: [&str; 4] = ["density", "slot", "mean_vehicle_err", "mean_cvt_err"];
pub const CDF_HEADER: [&str; 2] = ["density", "error_sample"];
pub const DENSITY_HEADER: [&str; 4] = ["density", "mean_vehicle_err", "mean_cvt_err", "improvement_pct"];

/// Fixed 6-decimal formatting; NaN is written as `NaN`.
pub fn fmt6(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:.6}")
    }
}

fn quantize(x: f64) -> f64 {
    fmt6(x).parse().expect("formatted floats parse back")
}

pub fn run_id(density: usize, run: usize) -> String {
    format!("d{density}_r{run}")
}

/// Inverse of [`run_id`].
pub fn parse_run_id(id: &str) -> Option<(usize, usize)> {
    let rest = id.strip_prefix('d')?;
    let (d, r) = rest.split_once("_r")?;
    Some((d.parse().ok()?, r.parse().ok()?))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RawRow {
    pub run_id: String,
    pub slot: usize,
    pub entity_type: EntityKind,
    pub entity_id: u64,
    pub true_x: f64,
    pub true_y: f64,
    pub true_z: f64,
    pub est_x: f64,
    pub est_y: f64,
    pub est_z: f64,
    pub error_m: f64,
}

impl RawRow {
    fn fields(&self) -> [String; 11] {
        [
            self.run_id.clone(),
            self.slot.to_string(),
            self.entity_type.as_str().to_string(),
            self.entity_id.to_string(),
            fmt6(self.true_x),
            fmt6(self.true_y),
            fmt6(self.true_z),
            fmt6(self.est_x),
            fmt6(self.est_y),
            fmt6(self.est_z),
            fmt6(self.error_m),
        ]
    }

    fn quantized(mut self) -> Self {
        for v in [
            &mut self.true_x,
            &mut self.true_y,
            &mut self.true_z,
            &mut self.est_x,
            &mut self.est_y,
            &mut self.est_z,
            &mut self.error_m,
        ] {
            *v = quantize(*v);
        }
        self
    }

    fn sort_key(&self) -> (usize, usize, usize, EntityKind, u64) {
        let (d, r) = parse_run_id(&self.run_id).unwrap_or((0, 0));
        (d, r, self.slot, self.entity_type, self.entity_id)
    }
}

/// Raw rows of one run, rounded to the CSV precision.
pub fn rows_from_log(density: usize, run: usize, log: &RunLog) -> Vec<RawRow> {
    let id = run_id(density, run);
    log.records
        .iter()
        .map(|r| {
            RawRow {
                run_id: id.clone(),
                slot: r.slot,
                entity_type: r.kind,
                entity_id: r.entity_id,
                true_x: r.truth.x,
                true_y: r.truth.y,
                true_z: r.truth.z,
                est_x: r.estimate.x,
                est_y: r.estimate.y,
                est_z: r.estimate.z,
                error_m: r.error,
            }
            .quantized()
        })
        .collect()
}

pub fn write_raw<W: Write>(out: W, rows: &[RawRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RAW_HEADER)?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

/// Parses a raw CSV. `source` names the input in error messages; rows are
/// counted from 1 for the header line.
pub fn read_raw<R: Read>(input: R, source: &Path) -> Result<Vec<RawRow>> {
    let parse_err = |row: usize, message: String| Error::Parse {
        path: source.to_path_buf(),
        row,
        message,
    };
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.iter().ne(RAW_HEADER.iter().copied()) {
        return Err(parse_err(
            1,
            format!("expected header {}, found {}", RAW_HEADER.join(","), headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        let row: RawRow = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, e.to_string()))?;
        if parse_run_id(&row.run_id).is_none() {
            return Err(parse_err(line, format!("malformed run_id {:?}", row.run_id)));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_raw_file(path: &Path) -> Result<Vec<RawRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_raw(std::io::BufReader::new(file), path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeRow {
    pub density: usize,
    pub slot: usize,
    pub mean_vehicle_err: f64,
    pub mean_cvt_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityRow {
    pub density: usize,
    pub mean_vehicle_err: f64,
    pub mean_cvt_err: f64,
    /// `100 · (1 − err / err_baseline)` for the vehicle error; the baseline
    /// is density 1, or the lowest density present.
    pub improvement_pct: f64,
}

/// Final-slot mean errors of a single run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFinal {
    pub run: usize,
    pub vehicle: f64,
    pub cvt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub density: usize,
    pub run: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AggregateReport {
    pub error_over_time: Vec<TimeRow>,
    /// Sorted final-slot vehicle errors per density.
    pub cdf_final: BTreeMap<usize, Vec<f64>>,
    pub error_vs_density: Vec<DensityRow>,
    pub run_finals: BTreeMap<usize, Vec<RunFinal>>,
    pub failures: Vec<RunFailure>,
    /// Densities with at least one failed run.
    pub incomplete: Vec<usize>,
}

#[derive(Default)]
struct Acc {
    vehicle: (f64, usize),
    cvt: (f64, usize),
}

impl Acc {
    fn add(&mut self, kind: EntityKind, e: f64) {
        let slot = match kind {
            EntityKind::Vehicle => &mut self.vehicle,
            EntityKind::Cvt => &mut self.cvt,
        };
        slot.0 += e;
        slot.1 += 1;
    }

    fn means(&self) -> (f64, f64) {
        let m = |(s, n): (f64, usize)| if n == 0 { f64::NAN } else { s / n as f64 };
        (m(self.vehicle), m(self.cvt))
    }
}

/// Aggregates raw rows. Row order does not matter.
pub fn summarize(rows: &[RawRow]) -> Result<AggregateReport> {
    if rows.is_empty() {
        return Err(Error::Config("no run log rows to summarize".into()));
    }
    let mut sorted: Vec<RawRow> = rows.iter().cloned().map(RawRow::quantized).collect();
    sorted.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));

    let mut per_slot: BTreeMap<(usize, usize), Acc> = BTreeMap::new();
    let mut per_run_slot: BTreeMap<(usize, usize, usize), Acc> = BTreeMap::new();
    let mut last_slot: BTreeMap<usize, usize> = BTreeMap::new();
    for row in &sorted {
        let (d, r) = parse_run_id(&row.run_id)
            .ok_or_else(|| Error::Config(format!("malformed run_id {:?}", row.run_id)))?;
        per_slot.entry((d, row.slot)).or_default().add(row.entity_type, row.error_m);
        per_run_slot
            .entry((d, r, row.slot))
            .or_default()
            .add(row.entity_type, row.error_m);
        let e = last_slot.entry(d).or_insert(0);
        *e = (*e).max(row.slot);
    }

    let error_over_time = per_slot
        .iter()
        .map(|(&(density, slot), acc)| {
            let (v, c) = acc.means();
            TimeRow {
                density,
                slot,
                mean_vehicle_err: v,
                mean_cvt_err: c,
            }
        })
        .collect();

    let mut cdf_final: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for row in &sorted {
        let (d, _) = parse_run_id(&row.run_id).expect("checked above");
        if row.entity_type == EntityKind::Vehicle && row.slot == last_slot[&d] {
            cdf_final.entry(d).or_default().push(row.error_m);
        }
    }
    for samples in cdf_final.values_mut() {
        samples.sort_by(f64::total_cmp);
    }

    let mut run_finals: BTreeMap<usize, Vec<RunFinal>> = BTreeMap::new();
    for (&(d, run, slot), acc) in &per_run_slot {
        if slot == last_slot[&d] {
            let (vehicle, cvt) = acc.means();
            run_finals.entry(d).or_default().push(RunFinal { run, vehicle, cvt });
        }
    }

    let finals: Vec<(usize, f64, f64)> = last_slot
        .iter()
        .map(|(&d, &slot)| {
            let (v, c) = per_slot[&(d, slot)].means();
            (d, v, c)
        })
        .collect();
    let baseline = finals
        .iter()
        .find(|f| f.0 == 1)
        .or(finals.first())
        .map(|f| f.1)
        .expect("at least one density");
    let error_vs_density = finals
        .into_iter()
        .map(|(density, v, c)| DensityRow {
            density,
            mean_vehicle_err: v,
            mean_cvt_err: c,
            improvement_pct: 100.0 * (1.0 - v / baseline),
        })
        .collect();

    Ok(AggregateReport {
        error_over_time,
        cdf_final,
        error_vs_density,
        run_finals,
        failures: Vec::new(),
        incomplete: Vec::new(),
    })
}

fn write_table<W: Write>(out: W, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

impl AggregateReport {
    pub fn write_error_over_time<W: Write>(&self, out: W) -> Result<()> {
        write_table(
            out,
            &TIME_HEADER,
            self.error_over_time.iter().map(|r| {
                vec![
                    r.density.to_string(),
                    r.slot.to_string(),
                    fmt6(r.mean_vehicle_err),
                    fmt6(r.mean_cvt_err),
                ]
            }),
        )
    }

    pub fn write_cdf_final<W: Write>(&self, out: W) -> Result<()> {
        write_table(
            out,
            &CDF_HEADER,
            self.cdf_final
                .iter()
                .flat_map(|(d, s)| s.iter().map(move |e| vec![d.to_string(), fmt6(*e)])),
        )
    }

    pub fn write_error_vs_density<W: Write>(&self, out: W) -> Result<()> {
        write_table(
            out,
            &DENSITY_HEADER,
            self.error_vs_density.iter().map(|r| {
                vec![
                    r.density.to_string(),
                    fmt6(r.mean_vehicle_err),
                    fmt6(r.mean_cvt_err),
                    fmt6(r.improvement_pct),
                ]
            }),
        )
    }

    /// Writes the three aggregate CSVs into `dir`; returns their paths.
    pub fn write_aggregates(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for (name, f) in [
            (TIME_FILE, Self::write_error_over_time as fn(&Self, std::fs::File) -> Result<()>),
            (CDF_FILE, Self::write_cdf_final),
            (DENSITY_FILE, Self::write_error_vs_density),
        ] {
            let path = dir.join(name);
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f(self, file)?;
            paths.push(path);
        }
        Ok(paths)
    }

    pub fn time_curve(&self, density: usize) -> Vec<&TimeRow> {
        self.error_over_time.iter().filter(|r| r.density == density).collect()
    }

    pub fn density_row(&self, density: usize) -> Option<&DensityRow> {
        self.error_vs_density.iter().find(|r| r.density == density)
    }
}

pub fn write_raw_file(path: &Path, rows: &[RawRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_raw(std::io::BufWriter::new(file), rows)
}
