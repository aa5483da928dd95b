//! Rolling history/horizon windows.

use std::ops::Range;

use super::{PreparedReservoir, INFLOW};

/// One sample in model units.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// `T × F`, row-major, covering days `anchor-T+1 ..= anchor`.
    pub x: Vec<f64>,
    /// Inflow on days `anchor+1 ..= anchor+H`.
    pub y: Vec<f64>,
    pub s: [f64; 3],
    pub reservoir_id: String,
    pub anchor: usize,
}

/// Anchor days whose history and horizon both fit inside `span`.
/// The count is `span.len() - window - horizon + 1` (or zero).
pub fn anchors(span: &Range<usize>, window: usize, horizon: usize) -> Range<usize> {
    if span.len() < window + horizon {
        return 0..0;
    }
    span.start + window - 1..span.end - horizon
}

pub fn make_windows(reservoir: &PreparedReservoir, span: &Range<usize>, window: usize, horizon: usize) -> Vec<WindowSample> {
    let range = anchors(span, window, horizon);
    if range.is_empty() {
        log::warn!(
            "span {:?} of `{}` is shorter than {} days; no windows",
            span,
            reservoir.id,
            window + horizon
        );
    }
    range
        .map(|a| WindowSample {
            x: reservoir.features[a + 1 - window..=a].iter().flatten().copied().collect(),
            y: reservoir.features[a + 1..=a + horizon].iter().map(|f| f[INFLOW]).collect(),
            s: reservoir.metadata,
            reservoir_id: reservoir.id.clone(),
            anchor: a,
        })
        .collect()
}
