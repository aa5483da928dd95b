//! Split, normalized and windowed data for one run.

use crate::config::{Ablation, ExperimentConfig};
use crate::data::{
    normalize, normalize_with, shuffle_metadata, split_protocol, NormStats, PreparedReservoir, ReservoirRecord,
    SampleSets, SplitPlan, WindowRef, INFLOW,
};
use crate::model::ModelDims;
use crate::tensor::rng::Rng;
use crate::tensor::Tensor;

use super::TrainError;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub plan: SplitPlan,
    pub prepared: Vec<PreparedReservoir>,
    pub norm: NormStats,
    pub sets: SampleSets,
    /// Class index of each prepared reservoir that contributes training
    /// windows; used by the hard-label domain classifier.
    pub domain_labels: Vec<Option<usize>>,
    pub num_domains: usize,
}

/// Model-ready tensors for a list of windows.
pub struct Batch {
    /// `B × T × F`
    pub x: Tensor,
    /// `B × H`
    pub y: Tensor,
    /// `B × M`
    pub s: Tensor,
    /// Prepared-reservoir index per row.
    pub reservoirs: Vec<usize>,
}

impl Dataset {
    /// Builds the run's data. With `stats` the given normalization is applied
    /// as-is (inference on a checkpoint); otherwise it is fitted on the
    /// plan's fit spans. The spatial-shuffle ablation corrupts metadata with
    /// a stream derived from `run_seed`.
    pub fn build(
        records: &[ReservoirRecord],
        cfg: &ExperimentConfig,
        run_seed: u64,
        stats: Option<&NormStats>,
    ) -> Result<Dataset, TrainError> {
        let plan = split_protocol(records, cfg.mode.split(), &cfg.split)?;
        let (mut prepared, norm) = match stats {
            None => normalize(records, &plan.fit_ranges())?,
            Some(stats) => {
                let include: Vec<bool> = plan.spans.iter().map(|s| s.fit.is_some()).collect();
                (normalize_with(records, &include, stats)?, stats.clone())
            }
        };
        if cfg.ablation == Ablation::SpatialShuffle {
            shuffle_metadata(&mut prepared, cfg.shuffle_noise, &mut Rng::derive(run_seed, "ablation.spatial_shuffle"));
        }
        let sets = SampleSets::build(&plan, &prepared, cfg.dims.window, cfg.dims.horizon);
        let mut num_domains = 0;
        let domain_labels = prepared
            .iter()
            .map(|p| {
                plan.spans[p.record].train.as_ref().map(|_| {
                    num_domains += 1;
                    num_domains - 1
                })
            })
            .collect();
        Ok(Dataset { plan, prepared, norm, sets, domain_labels, num_domains })
    }

    pub fn batch(&self, refs: &[WindowRef], dims: &ModelDims) -> Batch {
        let (t, h) = (dims.window, dims.horizon);
        let mut x = Vec::with_capacity(refs.len() * t * 3);
        let mut y = Vec::with_capacity(refs.len() * h);
        let mut s = Vec::with_capacity(refs.len() * 3);
        for r in refs {
            let p = &self.prepared[r.reservoir];
            let a = r.anchor;
            for row in &p.features[a + 1 - t..=a] {
                x.extend_from_slice(row);
            }
            y.extend(p.features[a + 1..=a + h].iter().map(|f| f[INFLOW]));
            s.extend_from_slice(&p.metadata);
        }
        let b = refs.len();
        Batch {
            x: Tensor::new(&[b, t, 3], x).expect("window shape"),
            y: Tensor::new(&[b, h], y).expect("target shape"),
            s: Tensor::new(&[b, 3], s).expect("metadata shape"),
            reservoirs: refs.iter().map(|r| r.reservoir).collect(),
        }
    }
}
