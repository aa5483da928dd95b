//! Adam, global-norm gradient clipping, and plateau learning-rate decay.

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    /// Per-parameter update counts; a parameter that received no gradient
    /// yet (e.g. the discriminator during warm-up) starts its bias
    /// correction from 1 when it first does.
    param_steps: Vec<u64>,
}

impl Adam {
    /// Zero-initialized moments shaped like `sizes` (element counts per parameter).
    pub fn new(learning_rate: f64, sizes: &[usize]) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            param_steps: vec![0; sizes.len()],
        }
    }

    pub fn for_params(learning_rate: f64, params: &[Tensor]) -> Self {
        let sizes: Vec<usize> = params.iter().map(Tensor::numel).collect();
        Self::new(learning_rate, &sizes)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update over raw buffers.
    pub fn step_raw(&mut self, params: &mut [&mut [f64]], grads: &[Option<&[f64]>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(TensorError::Dimension {
                op: "adam_step",
                lhs: vec![self.first.len()],
                rhs: vec![params.len(), grads.len()],
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let ok = p.len() == self.first[i].len() && g.map_or(true, |g| g.len() == p.len());
            if !ok {
                return Err(TensorError::Dimension {
                    op: "adam_step",
                    lhs: vec![self.first[i].len()],
                    rhs: vec![p.len(), g.map_or(0, <[f64]>::len)],
                });
            }
        }
        self.step_count += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            self.param_steps[i] += 1;
            let t = self.param_steps[i] as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }

    /// Updates every parameter from its accumulated gradient. Parameters
    /// without a gradient are left untouched.
    pub fn step(&mut self, params: &[Tensor]) -> Result<()> {
        let grads: Vec<Option<Vec<f64>>> = params.iter().map(Tensor::grad).collect();
        let mut values: Vec<_> = params.iter().map(Tensor::value_mut).collect();
        let mut slices: Vec<&mut [f64]> = values.iter_mut().map(|v| v.as_mut_slice()).collect();
        let grad_refs: Vec<Option<&[f64]>> = grads.iter().map(|g| g.as_deref()).collect();
        self.step_raw(&mut slices, &grad_refs)
    }
}

/// Scales all gradients by `max_norm / norm` when their joint L2 norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm_raw(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.iter_mut().for_each(|x| *x *= s));
    }
    norm
}

/// [`clip_global_norm_raw`] over the gradients held by `params`.
pub fn clip_global_norm(params: &[Tensor], max_norm: f64) -> f64 {
    let mut guards: Vec<_> = params.iter().map(Tensor::grad_mut).collect();
    let mut slices: Vec<&mut [f64]> = guards
        .iter_mut()
        .filter_map(|g| g.as_mut().map(|v| v.as_mut_slice()))
        .collect();
    clip_global_norm_raw(&mut slices, max_norm)
}

/// Halves (by `factor`) the learning rate when the monitored metric stops
/// improving for more than `patience` epochs.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
    best: f64,
    epochs_since_improvement: usize,
    lr: f64,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        PlateauScheduler {
            factor,
            patience,
            threshold: 1e-6,
            min_lr: 1e-6,
            best: f64::INFINITY,
            epochs_since_improvement: 0,
            lr,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Feeds one epoch's metric (lower is better). Returns the new rate when
    /// a decay happens.
    pub fn step(&mut self, metric: f64) -> Option<f64> {
        if metric < self.best - self.threshold {
            self.best = metric;
            self.epochs_since_improvement = 0;
            return None;
        }
        self.epochs_since_improvement += 1;
        if self.epochs_since_improvement > self.patience {
            self.epochs_since_improvement = 0;
            let next = (self.lr * self.factor).max(self.min_lr);
            if next < self.lr {
                self.lr = next;
                return Some(next);
            }
        }
        None
    }
}
