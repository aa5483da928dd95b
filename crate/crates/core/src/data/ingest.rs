//! CSV reading and writing for reservoir series and metadata.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;

use super::{DailyRow, DataError, ReservoirRecord, Result, Role};

pub const SERIES_HEADER: [&str; 5] = ["reservoir_id", "date", "precip_mm", "temp_c", "inflow_cms"];
pub const METADATA_HEADER: [&str; 5] = ["reservoir_id", "lat", "lon", "elev_m", "role"];
/// Longest run of missing days that is still interpolated.
const MAX_GAP: i64 = 9;

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|source| DataError::Io { file: path.display().to_string(), source })?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

/// Returns the position of each expected column in the header.
fn columns(reader: &mut csv::Reader<File>, path: &Path, expected: &[&str]) -> Result<Vec<usize>> {
    let file = path.display().to_string();
    let header = reader
        .headers()
        .map_err(|e| DataError::Parse { file: file.clone(), line: 1, msg: e.to_string() })?
        .clone();
    expected
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| DataError::MissingColumn { file: file.clone(), column: name.to_string() })
        })
        .collect()
}

fn parse_f64(field: &str, column: &str, file: &str, line: u64) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| DataError::Parse {
        file: file.to_string(),
        line,
        msg: format!("column `{column}`: cannot parse `{field}` as a number"),
    })?;
    if !v.is_finite() {
        return Err(DataError::Parse {
            file: file.to_string(),
            line,
            msg: format!("column `{column}`: non-finite value `{field}`"),
        });
    }
    Ok(v)
}

struct Meta {
    id: String,
    metadata: [f64; 3],
    role: Role,
}

fn read_metadata(path: &Path) -> Result<Vec<Meta>> {
    let file = path.display().to_string();
    let mut reader = open(path)?;
    let cols = columns(&mut reader, path, &METADATA_HEADER)?;
    let mut out: Vec<Meta> = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| DataError::Parse {
            file: file.clone(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let id = row[cols[0]].to_string();
        let mut metadata = [0.0; 3];
        for k in 0..3 {
            metadata[k] = parse_f64(&row[cols[k + 1]], METADATA_HEADER[k + 1], &file, line)?;
        }
        let role = match &row[cols[4]] {
            "source" => Role::Source,
            "target" => Role::Target,
            other => {
                return Err(DataError::Parse {
                    file,
                    line,
                    msg: format!("role must be `source` or `target`, got `{other}`"),
                })
            }
        };
        if out.iter().any(|m| m.id == id) {
            return Err(DataError::Parse { file, line, msg: format!("duplicate reservoir id `{id}`") });
        }
        out.push(Meta { id, metadata, role });
    }
    Ok(out)
}

struct Observation {
    date: NaiveDate,
    row: DailyRow,
    line: u64,
}

/// Reads a series file and a metadata file into records, in metadata order.
///
/// Gaps of up to nine missing days are filled by linear interpolation;
/// longer gaps are rejected. Negative inflow is clamped to zero and counted
/// in a warning.
pub fn ingest_csv(series_path: &Path, metadata_path: &Path) -> Result<Vec<ReservoirRecord>> {
    let metas = read_metadata(metadata_path)?;
    let file = series_path.display().to_string();
    let mut reader = open(series_path)?;
    let cols = columns(&mut reader, series_path, &SERIES_HEADER)?;

    let mut by_id: HashMap<String, Vec<Observation>> = HashMap::new();
    let mut clamped = 0usize;
    for row in reader.records() {
        let row = row.map_err(|e| DataError::Parse {
            file: file.clone(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let id = &row[cols[0]];
        let date = NaiveDate::parse_from_str(&row[cols[1]], "%Y-%m-%d").map_err(|e| DataError::Parse {
            file: file.clone(),
            line,
            msg: format!("column `date`: cannot parse `{}` as an ISO-8601 date ({e})", &row[cols[1]]),
        })?;
        let precip = parse_f64(&row[cols[2]], "precip_mm", &file, line)?;
        let temp = parse_f64(&row[cols[3]], "temp_c", &file, line)?;
        let mut inflow = parse_f64(&row[cols[4]], "inflow_cms", &file, line)?;
        if inflow < 0.0 {
            inflow = 0.0;
            clamped += 1;
        }
        by_id.entry(id.to_string()).or_default().push(Observation {
            date,
            row: DailyRow { precip, temp, inflow },
            line,
        });
    }
    if clamped > 0 {
        log::warn!("{file}: clamped {clamped} negative inflow value(s) to 0");
    }
    if let Some(unknown) = by_id.keys().find(|id| !metas.iter().any(|m| &m.id == *id)) {
        return Err(DataError::Parse {
            file,
            line: 0,
            msg: format!("reservoir `{unknown}` has no metadata row"),
        });
    }

    let mut records = Vec::with_capacity(metas.len());
    for meta in metas {
        let mut obs = by_id.remove(&meta.id).ok_or_else(|| DataError::Parse {
            file: file.clone(),
            line: 0,
            msg: format!("reservoir `{}` has metadata but no series rows", meta.id),
        })?;
        obs.sort_by_key(|o| o.date);
        let mut series = vec![obs[0].row];
        for pair in obs.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            let step = (next.date - prev.date).num_days();
            if step == 0 {
                return Err(DataError::Parse {
                    file: file.clone(),
                    line: next.line,
                    msg: format!("duplicate date {} for `{}`", next.date, meta.id),
                });
            }
            let missing = step - 1;
            if missing > MAX_GAP {
                return Err(DataError::Gap { file: file.clone(), line: next.line, reservoir: meta.id.clone(), missing });
            }
            for k in 1..step {
                let w = k as f64 / step as f64;
                let lerp = |a: f64, b: f64| a + (b - a) * w;
                series.push(DailyRow {
                    precip: lerp(prev.row.precip, next.row.precip),
                    temp: lerp(prev.row.temp, next.row.temp),
                    inflow: lerp(prev.row.inflow, next.row.inflow),
                });
            }
            series.push(next.row);
        }
        records.push(ReservoirRecord {
            id: meta.id,
            metadata: meta.metadata,
            start: obs[0].date,
            series,
            role: meta.role,
        });
    }
    Ok(records)
}

/// Writes records in the same two-file layout that [`ingest_csv`] reads.
pub fn write_world_csv(records: &[ReservoirRecord], series_path: &Path, metadata_path: &Path) -> Result<()> {
    let io_err = |path: &Path| {
        let file = path.display().to_string();
        move |source| DataError::Io { file: file.clone(), source }
    };
    let mut series = std::io::BufWriter::new(File::create(series_path).map_err(io_err(series_path))?);
    let mut out = String::new();
    out.push_str(&SERIES_HEADER.join(","));
    out.push('\n');
    for r in records {
        for (i, d) in r.series.iter().enumerate() {
            out.push_str(&format!("{},{},{},{},{}\n", r.id, r.date(i).format("%Y-%m-%d"), d.precip, d.temp, d.inflow));
        }
        series.write_all(out.as_bytes()).map_err(io_err(series_path))?;
        out.clear();
    }
    series.flush().map_err(io_err(series_path))?;

    let mut meta = String::new();
    meta.push_str(&METADATA_HEADER.join(","));
    meta.push('\n');
    for r in records {
        meta.push_str(&format!(
            "{},{},{},{},{}\n",
            r.id,
            r.metadata[0],
            r.metadata[1],
            r.metadata[2],
            r.role.as_str()
        ));
    }
    std::fs::write(metadata_path, meta).map_err(io_err(metadata_path))?;
    Ok(())
}
