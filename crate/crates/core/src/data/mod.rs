//! Reservoir records, synthetic world generation, CSV ingestion,
//! normalization, rolling windows and split protocols.

mod ingest;
mod norm;
mod split;
mod windows;
mod world;

use chrono::NaiveDate;
use thiserror::Error;

pub use ingest::{ingest_csv, write_world_csv, SERIES_HEADER, METADATA_HEADER};
pub use norm::{denormalize, normalize, normalize_with, shuffle_metadata, FeatureStats, NormStats, PreparedReservoir, STD_FLOOR};
pub use split::{split_protocol, SampleSets, SplitMode, SplitOptions, SplitPlan, SplitSpans, WindowRef};
pub use windows::{anchors, make_windows, WindowSample};
pub use world::{generate_world, reservoir_params, ReservoirParams, SyntheticWorldConfig};

/// Features per day, in column order.
pub const FEATURE_NAMES: [&str; 3] = ["precip_mm", "temp_c", "inflow_cms"];
pub const INFLOW: usize = 2;
/// Metadata attributes: latitude (deg), longitude (deg), elevation (m).
pub const METADATA_NAMES: [&str; 3] = ["lat", "lon", "elev_m"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}: i/o error: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: u64, msg: String },
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("{file}:{line}: gap rule violated for `{reservoir}`: {missing} missing days exceeds the 9-day limit")]
    Gap {
        file: String,
        line: u64,
        reservoir: String,
        missing: i64,
    },
    #[error("fit span for `{0}` is empty")]
    EmptyFitSpan(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Source,
    Target,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Source => "source",
            Role::Target => "target",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailyRow {
    pub precip: f64,
    pub temp: f64,
    pub inflow: f64,
}

impl DailyRow {
    pub fn features(&self) -> [f64; 3] {
        [self.precip, self.temp, self.inflow]
    }
}

/// One reservoir's consecutive daily series plus its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirRecord {
    pub id: String,
    pub metadata: [f64; 3],
    pub start: NaiveDate,
    pub series: Vec<DailyRow>,
    pub role: Role,
}

impl ReservoirRecord {
    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn date(&self, index: usize) -> NaiveDate {
        self.start + chrono::Days::new(index as u64)
    }
}
