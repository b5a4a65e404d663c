//! Long-format panel files.
//!
//! The data file is CSV with header `unit_id,time,intervention,outcome`, one
//! row per (unit, time), times running 1..=T and intervention 0 for every
//! t ≤ T₀. A sidecar `<file>.meta` holds `T=`, `T0=`, `A=` and `r=` lines.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{PanelDataset, PanelUnit};
use crate::error::{Error, Result};

pub const PANEL_HEADER: [&str; 4] = ["unit_id", "time", "intervention", "outcome"];

pub fn meta_path(csv_path: &Path) -> PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn write_panel<W: Write, M: Write>(ds: &PanelDataset, data: W, mut meta: M) -> Result<()> {
    writeln!(meta, "T={}", ds.t_total)?;
    writeln!(meta, "T0={}", ds.t_pre)?;
    writeln!(meta, "A={}", ds.num_interventions)?;
    writeln!(meta, "r={}", ds.rank)?;
    let mut w = csv::Writer::from_writer(data);
    w.write_record(PANEL_HEADER)?;
    for (id, unit) in ds.units.iter().enumerate() {
        let outcomes = unit.pre.iter().chain(unit.post.iter());
        for (t, y) in outcomes.enumerate() {
            let time = t + 1;
            let a = if time <= ds.t_pre { 0 } else { unit.intervention };
            w.write_record([id.to_string(), time.to_string(), a.to_string(), y.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn export_panel(ds: &PanelDataset, csv_path: &Path) -> Result<()> {
    let data = BufWriter::new(File::create(csv_path)?);
    let meta = BufWriter::new(File::create(meta_path(csv_path))?);
    write_panel(ds, data, meta)
}

pub fn ingest_panel(csv_path: &Path) -> Result<PanelDataset> {
    let meta = std::fs::read_to_string(meta_path(csv_path))?;
    read_panel(File::open(csv_path)?, &meta)
}

fn parse_meta(meta: &str) -> Result<(usize, usize, usize, usize)> {
    let mut fields = BTreeMap::new();
    for line in meta.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Malformed(format!("bad metadata line {line:?}")))?;
        let v: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Malformed(format!("bad metadata value in {line:?}")))?;
        fields.insert(k.trim().to_string(), v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| Error::Schema(format!("metadata lacks {k}")));
    let (t, t0, a, r) = (get("T")?, get("T0")?, get("A")?, get("r")?);
    if fields.len() != 4 {
        return Err(Error::Schema("unexpected metadata keys".into()));
    }
    if t0 == 0 || t0 >= t || a == 0 || r == 0 || r > t0 {
        return Err(Error::Schema(format!("inconsistent metadata T={t}, T0={t0}, A={a}, r={r}")));
    }
    Ok((t, t0, a, r))
}

/// Parses and validates a long-format panel. The result has no ground truth.
pub fn read_panel<R: Read>(data: R, meta: &str) -> Result<PanelDataset> {
    let (t_total, t_pre, num_interventions, rank) = parse_meta(meta)?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(data);
    if rdr.headers()?.iter().map(str::trim).ne(PANEL_HEADER) {
        return Err(Error::Schema(format!("header must be {}", PANEL_HEADER.join(","))));
    }
    // unit -> time -> (intervention, outcome)
    let mut cells: BTreeMap<usize, BTreeMap<usize, (usize, f64)>> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let field = |i: usize| -> Result<&str> {
            match rec.get(i).map(str::trim) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(Error::Malformed(format!("row {row}: missing {}", PANEL_HEADER[i]))),
            }
        };
        let int = |i: usize| -> Result<usize> {
            field(i)?
                .parse()
                .map_err(|_| Error::Malformed(format!("row {row}: bad {}", PANEL_HEADER[i])))
        };
        let (unit, time, a) = (int(0)?, int(1)?, int(2)?);
        let y: f64 = field(3)?
            .parse()
            .map_err(|_| Error::Malformed(format!("row {row}: bad outcome")))?;
        if time == 0 || time > t_total {
            return Err(Error::Schema(format!("row {row}: time {time} outside 1..={t_total}")));
        }
        if a >= num_interventions {
            return Err(Error::Schema(format!("row {row}: intervention {a} outside 0..{num_interventions}")));
        }
        if time <= t_pre && a != 0 {
            return Err(Error::Schema(format!("row {row}: pre-period row with intervention {a}")));
        }
        if cells.entry(unit).or_default().insert(time, (a, y)).is_some() {
            return Err(Error::Malformed(format!("row {row}: duplicate cell ({unit}, {time})")));
        }
    }

    let mut units = Vec::with_capacity(cells.len());
    for (expected, (id, times)) in cells.into_iter().enumerate() {
        if id != expected {
            return Err(Error::Malformed(format!("unit {expected} has no rows")));
        }
        if let Some(t) = (1..=t_total).find(|t| !times.contains_key(t)) {
            return Err(Error::Malformed(format!("missing cell (unit {id}, t = {t})")));
        }
        let intervention = times[&(t_pre + 1)].0;
        if times.range(t_pre + 1..).any(|(_, (a, _))| *a != intervention) {
            return Err(Error::Schema(format!("unit {id} switches intervention after T0")));
        }
        let pre = times.range(..=t_pre).map(|(_, (_, y))| *y).collect();
        let post = times.range(t_pre + 1..).map(|(_, (_, y))| *y).collect();
        units.push(PanelUnit { pre, intervention, post });
    }
    Ok(PanelDataset { t_total, t_pre, num_interventions, rank, units, truth: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    const META: &str = "T=4\nT0=2\nA=1\nr=1\n";

    fn control_only() -> String {
        let mut s = String::from("unit_id,time,intervention,outcome\n");
        for u in 0..2 {
            for t in 1..=4 {
                s.push_str(&format!("{u},{t},0,{}\n", (u * 4 + t) as f64 * 0.1));
            }
        }
        s
    }

    #[test]
    fn control_only_round_trip() {
        let text = control_only();
        let ds = read_panel(text.as_bytes(), META).unwrap();
        assert_eq!(ds.t_pre, 2);
        assert_eq!(ds.units.len(), 2);
        let mut data = Vec::new();
        let mut meta = Vec::new();
        write_panel(&ds, &mut data, &mut meta).unwrap();
        assert_eq!(String::from_utf8(data).unwrap(), text);
        assert_eq!(String::from_utf8(meta).unwrap(), META);
    }

    #[test]
    fn gap_is_malformed() {
        // drop (unit 1, t = 3)
        let text: String = control_only()
            .lines()
            .enumerate()
            .filter(|(i, _)| *i != 7)
            .map(|(_, l)| format!("{l}\n"))
            .collect();
        assert!(matches!(read_panel(text.as_bytes(), META), Err(Error::Malformed(_))));
    }

    #[test]
    fn empty_cell_is_malformed() {
        let text = control_only().replace("0,2,0,0.2\n", "0,2,0,\n");
        assert!(matches!(read_panel(text.as_bytes(), META), Err(Error::Malformed(_))));
    }

    #[test]
    fn inconsistent_split_is_schema_error() {
        assert!(matches!(read_panel(control_only().as_bytes(), "T=4\nT0=4\nA=1\nr=1\n"), Err(Error::Schema(_))));
        let text = control_only().replace("0,1,0,", "0,1,1,");
        assert!(matches!(read_panel(text.as_bytes(), "T=4\nT0=2\nA=2\nr=1\n"), Err(Error::Schema(_))));
    }
}
