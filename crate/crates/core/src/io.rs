//! CSV and JSON outputs. Floats are written as `{:.16e}` (17 significant
//! digits), which round-trips every `f64` bit-exactly. Lines end in `\n`.

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::ensemble::{sha256_hex, EnsembleMeta, EnsembleResult, EnsembleStats, Verdict};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};
use crate::trace::{EnergyTrace, TraceSample, TRACE_COLUMNS};

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| parse_err(line, format!("not a number: {s:?}")))
}

/// Non-empty lines with their 1-based numbers; a blank line is only allowed
/// at the very end.
fn lines<R: BufRead>(input: R) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    let mut blank_at = None;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line).to_string();
        if line.is_empty() {
            blank_at.get_or_insert(i + 1);
            continue;
        }
        if let Some(b) = blank_at {
            return Err(parse_err(b, "blank line inside data"));
        }
        out.push((i + 1, line));
    }
    Ok(out)
}

pub fn write_trace_csv<W: Write>(trace: &EnergyTrace, mut out: W) -> Result<()> {
    out.write_all(trace_csv_bytes(trace).as_slice())?;
    Ok(())
}

fn trace_csv_bytes(trace: &EnergyTrace) -> Vec<u8> {
    let mut s = TRACE_COLUMNS.join(",");
    s.push('\n');
    for sample in &trace.samples {
        let row: Vec<String> = sample.to_row().iter().map(|&x| fmt(x)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s.into_bytes()
}

/// Reads a trace written by [`write_trace_csv`]. Path id and excess level
/// are not stored in the file and come back as 0; `aux` stays empty.
pub fn read_trace_csv<R: BufRead>(input: R) -> Result<EnergyTrace> {
    let lines = lines(input)?;
    let Some((hl, header)) = lines.first() else {
        return Err(parse_err(1, "empty input"));
    };
    if header != &TRACE_COLUMNS.join(",") {
        return Err(parse_err(*hl, format!("unexpected header {header:?}")));
    }
    let mut samples: Vec<TraceSample> = Vec::with_capacity(lines.len() - 1);
    for (ln, line) in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != TRACE_COLUMNS.len() {
            return Err(parse_err(*ln, format!("expected {} fields, found {}", TRACE_COLUMNS.len(), fields.len())));
        }
        let mut row = [0.0; 8];
        for (r, f) in row.iter_mut().zip(&fields) {
            *r = parse_f64(f, *ln)?;
        }
        let s = TraceSample::from_row(row);
        if !s.t.is_finite() || samples.last().is_some_and(|p| !(s.t > p.t)) {
            return Err(parse_err(*ln, "times must be finite and strictly increasing"));
        }
        samples.push(s);
    }
    Ok(EnergyTrace { path_id: 0, excess_level: 0.0, samples, aux: Vec::new() })
}

/// Header `x0,…,x{n−1},u`, one row per node in flat index order.
pub fn write_field_csv<W: Write>(u: &ScalarField, mut out: W) -> Result<()> {
    out.write_all(field_csv_bytes(u).as_slice())?;
    Ok(())
}

fn field_csv_bytes(u: &ScalarField) -> Vec<u8> {
    let g = u.grid();
    let mut s: String = (0..g.dim()).map(|i| format!("x{i},")).collect();
    s.push_str("u\n");
    for (k, &v) in u.values().iter().enumerate() {
        for x in g.coords(k) {
            s.push_str(&fmt(x));
            s.push(',');
        }
        s.push_str(&fmt(v));
        s.push('\n');
    }
    s.into_bytes()
}

/// Reads a field written by [`write_field_csv`]; the grid is inferred from
/// the header and row count, and the coordinates must match it exactly.
pub fn read_field_csv<R: BufRead>(input: R) -> Result<ScalarField> {
    let lines = lines(input)?;
    let Some((hl, header)) = lines.first() else {
        return Err(parse_err(1, "empty input"));
    };
    let names: Vec<&str> = header.split(',').collect();
    let dim = names.len() - 1;
    let expected: Vec<String> = (0..dim).map(|i| format!("x{i}")).chain(["u".to_string()]).collect();
    if dim == 0 || names != expected {
        return Err(parse_err(*hl, format!("unexpected header {header:?}")));
    }
    let rows = lines.len() - 1;
    let res = (rows as f64).powf(1.0 / dim as f64).round() as usize;
    if res.checked_pow(dim as u32) != Some(rows) {
        return Err(parse_err(*hl, format!("{rows} rows do not form a {dim}-dimensional grid")));
    }
    let grid = GridSpec::new(dim, res)?;
    let mut values = Vec::with_capacity(rows);
    for (k, (ln, line)) in lines[1..].iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(parse_err(*ln, format!("expected {} fields, found {}", dim + 1, fields.len())));
        }
        for (f, x) in fields.iter().zip(grid.coords(k)) {
            if parse_f64(f, *ln)? != x {
                return Err(parse_err(*ln, "coordinates do not match the grid"));
            }
        }
        values.push(parse_f64(fields[dim], *ln)?);
    }
    ScalarField::new(grid, values)
}

/// Columns `t`, then `<name>_mean,<name>_var,<name>_se,<name>_n_valid` per
/// statistic.
pub fn write_stats_csv<W: Write>(stats: &EnsembleStats, mut out: W) -> Result<()> {
    out.write_all(stats_csv_bytes(stats).as_slice())?;
    Ok(())
}

fn stats_csv_bytes(stats: &EnsembleStats) -> Vec<u8> {
    let mut s = String::from("t");
    for c in &stats.columns {
        for suffix in ["mean", "var", "se", "n_valid"] {
            s.push_str(&format!(",{}_{suffix}", c.name));
        }
    }
    s.push('\n');
    for (i, &t) in stats.times.iter().enumerate() {
        s.push_str(&fmt(t));
        for c in &stats.columns {
            s.push_str(&format!(",{},{},{},{}", fmt(c.mean[i]), fmt(c.var[i]), fmt(c.se[i]), c.n_valid[i]));
        }
        s.push('\n');
    }
    s.into_bytes()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub config: SimConfig,
    pub verdicts: Vec<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ensemble: Option<EnsembleMeta>,
    /// Every file written next to the report, with its content hash.
    pub files: Vec<ManifestEntry>,
    /// Command-specific tables.
    #[serde(skip_serializing_if = "serde_json::Value::is_null", default)]
    pub data: serde_json::Value,
}

impl Report {
    pub fn new(command: &str, config: &SimConfig) -> Self {
        Self {
            command: command.into(),
            config: config.echo(),
            verdicts: Vec::new(),
            ensemble: None,
            files: Vec::new(),
            data: serde_json::Value::Null,
        }
    }

    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    /// Writes `bytes` to `dir/name` and records it in the manifest.
    pub fn add_file(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(dir.join(name), bytes)?;
        self.files.push(ManifestEntry { file: name.into(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("report.json"), self.to_json()?)?;
        Ok(())
    }
}

pub fn trace_file_name(path_id: u64) -> String {
    format!("trace_{path_id}.csv")
}

/// Writes `trace_<id>.csv` for every path and `stats.csv`, records them in
/// the manifest and stores the ensemble metadata. Files are written in
/// parallel, one owner per file; the manifest is in path order.
pub fn write_ensemble(report: &mut Report, result: &EnsembleResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let entries: Vec<ManifestEntry> = result
        .per_path
        .par_iter()
        .map(|p| -> Result<ManifestEntry> {
            let name = trace_file_name(p.path_id);
            let bytes = trace_csv_bytes(&p.trace);
            fs::write(dir.join(&name), &bytes)?;
            Ok(ManifestEntry { file: name, sha256: sha256_hex(&bytes) })
        })
        .collect::<Result<_>>()?;
    report.files.extend(entries);
    report.add_file(dir, "stats.csv", &stats_csv_bytes(&result.stats))?;
    report.ensemble = Some(result.meta.clone());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::AuxSample;
    use std::io::Cursor;

    fn trace() -> EnergyTrace {
        let samples = vec![
            TraceSample { t: 0.0, w: 0.0, dirichlet: 0.1, area: 1.0 + 1e-17, maxexcess: 0.0, hess_l2sq_cum: 0.0, grad_linf: 0.3, h1_dev_from_w: -0.0 },
            TraceSample { t: 0.1, w: -1.234e-300, dirichlet: f64::MIN_POSITIVE, area: 1.0 / 3.0, maxexcess: 5e-324, hess_l2sq_cum: 2.5, grad_linf: 1e300, h1_dev_from_w: 7.0 },
        ];
        EnergyTrace { path_id: 3, excess_level: 2.0, aux: vec![AuxSample::default(); 2], samples }
    }

    #[test]
    fn trace_round_trip_is_bit_exact() {
        let t = trace();
        let mut buf = Vec::new();
        write_trace_csv(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,W,dirichlet,area,maxexcess,hess_l2sq_cum,grad_linf,h1_dev_from_W\n"));
        assert!(!text.contains('\r'));
        let back = read_trace_csv(Cursor::new(buf)).unwrap();
        for (a, b) in t.samples.iter().zip(&back.samples) {
            for (x, y) in a.to_row().iter().zip(b.to_row()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn trace_reader_rejects_malformed_input() {
        let good = String::from_utf8(trace_csv_bytes(&trace())).unwrap();
        let cases = [
            String::new(),
            good.replace("t,W", "t,X"),
            good.replace("0.0000000000000000e0,", "zero,"),
            good.lines().take(2).collect::<Vec<_>>().join("\n") + "\n1,2\n",
            good.clone() + good.lines().nth(1).unwrap(),
            good.replacen('\n', "\n\n", 2),
        ];
        for c in cases {
            assert!(read_trace_csv(Cursor::new(c.clone())).is_err(), "{c:?}");
        }
    }

    #[test]
    fn field_round_trip() {
        let g = GridSpec::new(2, 8).unwrap();
        let u = ScalarField::from_fn(g, |x| (x[0] * 7.0).sin() + x[1] / 3.0);
        let mut buf = Vec::new();
        write_field_csv(&u, &mut buf).unwrap();
        assert_eq!(read_field_csv(Cursor::new(&buf)).unwrap(), u);
        let text = String::from_utf8(buf).unwrap();
        assert!(read_field_csv(Cursor::new(text.replacen("x1,u", "y,u", 1))).is_err());
        let short: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(read_field_csv(Cursor::new(short)).is_err());
    }

    #[test]
    fn stats_layout() {
        use crate::ensemble::ColumnStats;
        let stats = EnsembleStats {
            times: vec![0.0, 0.5],
            columns: vec![ColumnStats { name: "dirichlet".into(), mean: vec![1.0, 0.5], var: vec![0.0, 0.1], se: vec![0.0, 0.01], n_valid: vec![4, 4] }],
        };
        let text = String::from_utf8(stats_csv_bytes(&stats)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,dirichlet_mean,dirichlet_var,dirichlet_se,dirichlet_n_valid"));
        assert_eq!(lines.next().unwrap().split(',').next_back(), Some("4"));
    }
}
