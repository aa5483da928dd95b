#![allow(dead_code)]

use std::path::PathBuf;

use hydrodcm::config::{parse_config, ExperimentConfig, Mode};
use hydrodcm::tensor::{no_grad, Tensor};

/// Path of a file under the workspace `configs/` directory.
pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn load_config(name: &str, overrides: &[&str]) -> ExperimentConfig {
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    parse_config(Some(&config_path(name)), &overrides).expect("config parses")
}

/// Seconds-scale config on a small world.
pub fn tiny_config(mode: Mode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_text(
        "world.num_reservoirs = 6
         world.num_target = 2
         world.days = 1100
         world.target_years = 2
         model.hidden = 8
         model.layers = 1
         model.embed = 4
         model.disc_hidden = 8
         model.film_hidden = 8
         model.head_hidden = 8
         train.epochs = 3
         train.warmup_epochs = 1
         train.samples_per_epoch = 64
         train.val_max_samples = 64
         experiment.num_runs = 2",
    )
    .expect("tiny config");
    cfg.mode = mode;
    cfg.validate().expect("tiny config is valid");
    cfg
}

pub const FD_STEP: f64 = 1e-4;

/// Fourth-order central differences of `f` with respect to every element of
/// `x`. The wider step keeps roundoff well below the tolerances used here
/// while the truncation error stays O(h^4).
pub fn numeric_grad(x: &Tensor, f: &dyn Fn() -> f64) -> Vec<f64> {
    let h = FD_STEP;
    (0..x.numel())
        .map(|i| {
            let orig = x.value()[i];
            let at = |dx: f64| {
                x.value_mut()[i] = orig + dx;
                no_grad(f)
            };
            let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
            x.value_mut()[i] = orig;
            (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
        })
        .collect()
}

/// Largest relative error between two gradients, with a small floor on
/// the denominator so exact zeros compare as equal.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
