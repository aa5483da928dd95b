//! Per-reservoir feature standardization and global metadata scaling.

use std::ops::Range;

use super::{DataError, ReservoirRecord, Result, Role, INFLOW};
use crate::model::Entry;
use crate::tensor::rng::Rng;

/// Lower bound applied to fitted standard deviations.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl FeatureStats {
    /// Mean and population standard deviation of each feature over `span`.
    pub fn fit(record: &ReservoirRecord, span: Range<usize>) -> Result<FeatureStats> {
        let rows = record.series.get(span.clone()).unwrap_or(&[]);
        if rows.is_empty() {
            return Err(DataError::EmptyFitSpan(record.id.clone()));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for k in 0..3 {
            mean[k] = rows.iter().map(|r| r.features()[k]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r.features()[k] - mean[k]).powi(2)).sum::<f64>() / n;
            std[k] = var.sqrt().max(STD_FLOOR);
        }
        Ok(FeatureStats { mean, std })
    }

    pub fn apply(&self, features: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| (features[k] - self.mean[k]) / self.std[k])
    }
}

/// Maps a normalized inflow value back to physical units.
pub fn denormalize(stats: &FeatureStats, value: f64) -> f64 {
    value * stats.std[INFLOW] + stats.mean[INFLOW]
}

/// Everything needed to reproduce the input transform at inference time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NormStats {
    pub reservoirs: Vec<(String, FeatureStats)>,
    pub meta_min: [f64; 3],
    pub meta_max: [f64; 3],
}

impl NormStats {
    pub fn get(&self, id: &str) -> Option<&FeatureStats> {
        self.reservoirs.iter().find(|(r, _)| r == id).map(|(_, s)| s)
    }

    /// Min–max scales a raw metadata vector to the source box.
    pub fn scale_metadata(&self, raw: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| (raw[k] - self.meta_min[k]) / (self.meta_max[k] - self.meta_min[k]).max(STD_FLOOR))
    }

    pub fn to_entries(&self) -> Vec<Entry> {
        let mut out = vec![
            Entry { name: "meta.min".into(), shape: vec![3], values: self.meta_min.to_vec() },
            Entry { name: "meta.max".into(), shape: vec![3], values: self.meta_max.to_vec() },
        ];
        for (id, s) in &self.reservoirs {
            out.push(Entry { name: format!("reservoir.{id}.mean"), shape: vec![3], values: s.mean.to_vec() });
            out.push(Entry { name: format!("reservoir.{id}.std"), shape: vec![3], values: s.std.to_vec() });
        }
        out
    }

    pub fn from_entries(entries: &[Entry]) -> std::result::Result<NormStats, String> {
        let triple = |e: &Entry| -> std::result::Result<[f64; 3], String> {
            <[f64; 3]>::try_from(e.values.as_slice()).map_err(|_| format!("norm entry `{}` must have 3 values", e.name))
        };
        let mut stats = NormStats::default();
        let mut pending_mean: Option<(String, [f64; 3])> = None;
        for e in entries {
            match e.name.as_str() {
                "meta.min" => stats.meta_min = triple(e)?,
                "meta.max" => stats.meta_max = triple(e)?,
                name => {
                    let rest = name.strip_prefix("reservoir.").ok_or_else(|| format!("unknown norm entry `{name}`"))?;
                    if let Some(id) = rest.strip_suffix(".mean") {
                        pending_mean = Some((id.to_string(), triple(e)?));
                    } else if let Some(id) = rest.strip_suffix(".std") {
                        match pending_mean.take() {
                            Some((mid, mean)) if mid == id => {
                                stats.reservoirs.push((mid, FeatureStats { mean, std: triple(e)? }))
                            }
                            _ => return Err(format!("norm entry `{name}` has no preceding mean")),
                        }
                    } else {
                        return Err(format!("unknown norm entry `{name}`"));
                    }
                }
            }
        }
        if pending_mean.is_some() {
            return Err("dangling reservoir mean without std".into());
        }
        Ok(stats)
    }
}

/// A record transformed into model units.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedReservoir {
    /// Index of the originating record.
    pub record: usize,
    pub id: String,
    pub role: Role,
    pub features: Vec<[f64; 3]>,
    pub metadata: [f64; 3],
    pub stats: FeatureStats,
}

/// Min and max of the metadata over source reservoirs (all reservoirs when
/// there are no sources).
fn metadata_bounds(records: &[ReservoirRecord]) -> ([f64; 3], [f64; 3]) {
    let sources: Vec<&ReservoirRecord> = records.iter().filter(|r| r.role == Role::Source).collect();
    let pool: Vec<&ReservoirRecord> = if sources.is_empty() { records.iter().collect() } else { sources };
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for r in pool {
        for k in 0..3 {
            lo[k] = lo[k].min(r.metadata[k]);
            hi[k] = hi[k].max(r.metadata[k]);
        }
    }
    (lo, hi)
}

/// Standardizes every record whose fit range is `Some`, using statistics
/// fitted on that range only. Records with `None` are left out.
pub fn normalize(
    records: &[ReservoirRecord],
    fit_ranges: &[Option<Range<usize>>],
) -> Result<(Vec<PreparedReservoir>, NormStats)> {
    assert_eq!(records.len(), fit_ranges.len(), "one fit range per record");
    let (meta_min, meta_max) = metadata_bounds(records);
    let mut stats = NormStats { reservoirs: Vec::new(), meta_min, meta_max };
    let mut prepared = Vec::new();
    for (i, (record, range)) in records.iter().zip(fit_ranges).enumerate() {
        let Some(range) = range else { continue };
        let fs = FeatureStats::fit(record, range.clone())?;
        stats.reservoirs.push((record.id.clone(), fs));
        prepared.push(PreparedReservoir {
            record: i,
            id: record.id.clone(),
            role: record.role,
            features: record.series.iter().map(|d| fs.apply(d.features())).collect(),
            metadata: stats.scale_metadata(&record.metadata),
            stats: fs,
        });
    }
    Ok((prepared, stats))
}

/// Applies previously fitted statistics (e.g. from a checkpoint) to every
/// record selected by `include`, without refitting anything.
pub fn normalize_with(
    records: &[ReservoirRecord],
    include: &[bool],
    stats: &NormStats,
) -> Result<Vec<PreparedReservoir>> {
    let mut prepared = Vec::new();
    for (i, record) in records.iter().enumerate() {
        if !include[i] {
            continue;
        }
        let fs = *stats.get(&record.id).ok_or_else(|| {
            DataError::Config(format!("no normalization statistics for reservoir `{}`", record.id))
        })?;
        prepared.push(PreparedReservoir {
            record: i,
            id: record.id.clone(),
            role: record.role,
            features: record.series.iter().map(|d| fs.apply(d.features())).collect(),
            metadata: stats.scale_metadata(&record.metadata),
            stats: fs,
        });
    }
    Ok(prepared)
}

/// Metadata corruption probe: adds Gaussian noise of the given standard
/// deviation (normalized units) and permutes the vectors across reservoirs.
pub fn shuffle_metadata(prepared: &mut [PreparedReservoir], noise_std: f64, rng: &mut Rng) {
    let mut metas: Vec<[f64; 3]> = prepared
        .iter()
        .map(|p| std::array::from_fn(|k| p.metadata[k] + noise_std * rng.normal()))
        .collect();
    rng.shuffle(&mut metas);
    for (p, m) in prepared.iter_mut().zip(metas) {
        p.metadata = m;
    }
}
