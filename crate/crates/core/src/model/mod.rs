//! The forecasting model: recurrent encoder, pseudo-domain projector,
//! adversarial discriminator, FiLM adapter and predictive head.
//!
//! Inference only touches the encoder, the adapter and the head; the
//! projector and discriminator exist purely to shape the encoder during
//! training.

mod checkpoint;

use thiserror::Error;

use crate::data::NormStats;
use crate::tensor::rng::Rng;
use crate::tensor::{Tensor, TensorError};

pub use checkpoint::{Checkpoint, Entry, FORMAT_VERSION, MAGIC};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint is missing parameter `{0}`")]
    MissingParam(String),
    #[error("parameter `{name}` has shape {found:?} in checkpoint, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Architecture sizes. Defaults follow the reference configuration:
/// 30-day windows of 3 features, 7-day horizon, 3 metadata attributes,
/// a 2-layer LSTM of width 64, a 32-wide pseudo-domain space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub window: usize,
    pub features: usize,
    pub horizon: usize,
    pub metadata: usize,
    pub hidden: usize,
    pub layers: usize,
    pub embed: usize,
    pub disc_hidden: usize,
    pub film_hidden: usize,
    pub head_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            window: 30,
            features: 3,
            horizon: 7,
            metadata: 3,
            hidden: 64,
            layers: 2,
            embed: 32,
            disc_hidden: 32,
            film_hidden: 64,
            head_hidden: 64,
        }
    }
}

/// Training/evaluation switches threaded through a forward pass.
pub struct Pass<'a> {
    pub training: bool,
    pub dropout: f64,
    pub rng: &'a mut Rng,
}

impl<'a> Pass<'a> {
    pub fn train(dropout: f64, rng: &'a mut Rng) -> Self {
        Pass { training: true, dropout, rng }
    }

    pub fn eval(rng: &'a mut Rng) -> Self {
        Pass { training: false, dropout: 0.0, rng }
    }

    fn drop(&mut self, t: &Tensor) -> Result<Tensor> {
        Ok(t.dropout(self.dropout, self.training, self.rng)?)
    }
}

fn uniform(rng: &mut Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-bound, bound)).collect()
}

/// `x · W + b` with `W` stored as `(in × out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Weights and bias uniform in `±1/√fan_in`.
    pub fn init(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Linear {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Linear {
            weight: Tensor::param(&[fan_in, fan_out], uniform(rng, fan_in * fan_out, bound)).unwrap(),
            bias: Tensor::param(&[fan_out], uniform(rng, fan_out, bound)).unwrap(),
        }
    }

    pub fn constant(fan_in: usize, fan_out: usize, weight: f64, bias: f64) -> Linear {
        Linear {
            weight: Tensor::param(&[fan_in, fan_out], vec![weight; fan_in * fan_out]).unwrap(),
            bias: Tensor::param(&[fan_out], vec![bias; fan_out]).unwrap(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight)?.add(&self.bias)?)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// One LSTM layer; gate blocks are laid out `[input, forget, cell, output]`
/// along the last axis of the weights.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub bias: Tensor,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn init(rng: &mut Rng, input: usize, hidden: usize) -> LstmLayer {
        let bound = 1.0 / ((input + hidden) as f64).sqrt();
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        LstmLayer {
            w_input: Tensor::param(&[input, 4 * hidden], uniform(rng, input * 4 * hidden, bound)).unwrap(),
            w_hidden: Tensor::param(&[hidden, 4 * hidden], uniform(rng, hidden * 4 * hidden, bound)).unwrap(),
            bias: Tensor::param(&[4 * hidden], bias).unwrap(),
            hidden,
        }
    }

    /// Runs the layer over `inputs` (one `(batch × in)` tensor per step) and
    /// returns the hidden state at every step.
    fn run(&self, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
        let hs = self.hidden;
        let mut h: Option<Tensor> = None;
        let mut c: Option<Tensor> = None;
        let mut outputs = Vec::with_capacity(inputs.len());
        for x in inputs {
            let mut gates = x.matmul(&self.w_input)?;
            if let Some(h) = &h {
                gates = gates.add(&h.matmul(&self.w_hidden)?)?;
            }
            let gates = gates.add(&self.bias)?;
            let i = gates.slice(1, 0..hs)?.sigmoid();
            let f = gates.slice(1, hs..2 * hs)?.sigmoid();
            let g = gates.slice(1, 2 * hs..3 * hs)?.tanh();
            let o = gates.slice(1, 3 * hs..4 * hs)?.sigmoid();
            let ig = i.mul(&g)?;
            let c_next = match &c {
                Some(c) => f.mul(c)?.add(&ig)?,
                None => ig,
            };
            let h_next = o.mul(&c_next.tanh())?;
            outputs.push(h_next.clone());
            h = Some(h_next);
            c = Some(c_next);
        }
        Ok(outputs)
    }
}

#[derive(Debug, Clone)]
pub struct LstmStack {
    pub layers: Vec<LstmLayer>,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub hidden: Linear,
    pub out: Linear,
}

#[derive(Debug, Clone)]
pub struct FilmAdapter {
    pub hidden: Linear,
    pub gamma: Linear,
    pub delta: Linear,
}

#[derive(Debug, Clone)]
pub struct PredictiveHead {
    pub hidden: Linear,
    pub out: Linear,
}

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub dims: ModelDims,
    pub encoder: LstmStack,
    pub projector: Linear,
    pub discriminator: Discriminator,
    pub adapter: FilmAdapter,
    pub head: PredictiveHead,
    /// Hard-label domain classifier used only by the DANN baseline.
    pub domain_classifier: Option<Linear>,
    pub norm: NormStats,
}

impl ModelBundle {
    /// Fresh parameters. Each component draws from its own stream so that
    /// adding or removing a component never perturbs the others.
    pub fn init(dims: ModelDims, seed: u64, domain_classes: Option<usize>) -> ModelBundle {
        let mut enc_rng = Rng::derive(seed, "init.encoder");
        let layers = (0..dims.layers)
            .map(|l| {
                let input = if l == 0 { dims.features } else { dims.hidden };
                LstmLayer::init(&mut enc_rng, input, dims.hidden)
            })
            .collect();
        let mut proj_rng = Rng::derive(seed, "init.projector");
        let mut disc_rng = Rng::derive(seed, "init.discriminator");
        let mut film_rng = Rng::derive(seed, "init.adapter");
        let mut head_rng = Rng::derive(seed, "init.head");
        let mut cls_rng = Rng::derive(seed, "init.domain_classifier");
        ModelBundle {
            dims,
            encoder: LstmStack { layers },
            projector: Linear::init(&mut proj_rng, dims.metadata + dims.window * dims.features, dims.embed),
            discriminator: Discriminator {
                hidden: Linear::init(&mut disc_rng, dims.hidden, dims.disc_hidden),
                out: Linear::init(&mut disc_rng, dims.disc_hidden, dims.embed),
            },
            adapter: FilmAdapter {
                hidden: Linear::init(&mut film_rng, dims.metadata, dims.film_hidden),
                gamma: Linear::constant(dims.film_hidden, dims.hidden, 0.0, 1.0),
                delta: Linear::constant(dims.film_hidden, dims.hidden, 0.0, 0.0),
            },
            head: PredictiveHead {
                hidden: Linear::init(&mut head_rng, dims.hidden, dims.head_hidden),
                out: Linear::init(&mut head_rng, dims.head_hidden, dims.horizon),
            },
            domain_classifier: domain_classes.map(|k| Linear::init(&mut cls_rng, dims.hidden, k)),
            norm: NormStats::default(),
        }
    }

    /// Final top-layer hidden state for a `(batch × T × F)` window tensor.
    pub fn encode(&self, x: &Tensor, pass: &mut Pass<'_>) -> Result<Tensor> {
        let d = &self.dims;
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != d.window || shape[2] != d.features {
            return Err(TensorError::Dimension {
                op: "encode",
                lhs: shape.to_vec(),
                rhs: vec![0, d.window, d.features],
            }
            .into());
        }
        let batch = shape[0];
        let mut seq = Vec::with_capacity(d.window);
        for t in 0..d.window {
            seq.push(x.slice(1, t..t + 1)?.reshape(&[batch, d.features])?);
        }
        let last = self.encoder.layers.len() - 1;
        for (l, layer) in self.encoder.layers.iter().enumerate() {
            seq = layer.run(&seq)?;
            if l < last {
                seq = seq.iter().map(|h| pass.drop(h)).collect::<Result<_>>()?;
            }
        }
        Ok(seq.pop().expect("window length is positive"))
    }

    /// `v = W [s : flatten(X)] + b`.
    pub fn project_pseudo_domain(&self, s: &Tensor, x: &Tensor) -> Result<Tensor> {
        let batch = x.shape()[0];
        let flat = x.reshape(&[batch, self.dims.window * self.dims.features])?;
        self.projector.forward(&s.concat(&flat, 1)?)
    }

    /// Discriminator output behind a gradient-reversal node with coefficient `lambda`.
    pub fn discriminate(&self, h: &Tensor, lambda: f64, pass: &mut Pass<'_>) -> Result<Tensor> {
        let reversed = h.grad_reverse(lambda);
        let hidden = pass.drop(&self.discriminator.hidden.forward(&reversed)?.relu())?;
        self.discriminator.out.forward(&hidden)
    }

    /// Domain logits of the DANN baseline behind a gradient-reversal node.
    pub fn classify_domain(&self, h: &Tensor, lambda: f64) -> Result<Tensor> {
        let cls = self.domain_classifier.as_ref().ok_or_else(|| {
            ModelError::Format("model has no domain classifier".into())
        })?;
        cls.forward(&h.grad_reverse(lambda))
    }

    /// FiLM coefficients `(γ(s), δ(s))`, each `(batch × hidden)`.
    pub fn film(&self, s: &Tensor) -> Result<(Tensor, Tensor)> {
        let hidden = self.adapter.hidden.forward(s)?.relu();
        Ok((self.adapter.gamma.forward(&hidden)?, self.adapter.delta.forward(&hidden)?))
    }

    /// `γ(s) ⊙ z + δ(s)`.
    pub fn modulate(&self, z: &Tensor, s: &Tensor) -> Result<Tensor> {
        let (gamma, delta) = self.film(s)?;
        Ok(gamma.mul(z)?.add(&delta)?)
    }

    pub fn predict(&self, z: &Tensor, pass: &mut Pass<'_>) -> Result<Tensor> {
        let hidden = pass.drop(&self.head.hidden.forward(z)?.relu())?;
        self.head.out.forward(&hidden)
    }

    /// Inference path: encoder, optional adapter, head.
    pub fn forecast(&self, x: &Tensor, s: &Tensor, use_film: bool, pass: &mut Pass<'_>) -> Result<Tensor> {
        let h = self.encode(x, pass)?;
        let z = if use_film { self.modulate(&h, s)? } else { h };
        self.predict(&z, pass)
    }

    /// Every trainable tensor exactly once, in a fixed order.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.encoder.layers.iter().enumerate() {
            out.push((format!("encoder.l{l}.w_input"), layer.w_input.clone()));
            out.push((format!("encoder.l{l}.w_hidden"), layer.w_hidden.clone()));
            out.push((format!("encoder.l{l}.bias"), layer.bias.clone()));
        }
        self.projector.collect("projector", &mut out);
        self.discriminator.hidden.collect("discriminator.hidden", &mut out);
        self.discriminator.out.collect("discriminator.out", &mut out);
        self.adapter.hidden.collect("adapter.hidden", &mut out);
        self.adapter.gamma.collect("adapter.gamma", &mut out);
        self.adapter.delta.collect("adapter.delta", &mut out);
        self.head.hidden.collect("head.hidden", &mut out);
        self.head.out.collect("head.out", &mut out);
        if let Some(cls) = &self.domain_classifier {
            cls.collect("domain_classifier", &mut out);
        }
        out
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    pub fn zero_grad(&self) {
        self.parameters().iter().for_each(Tensor::zero_grad);
    }

    /// A deep copy with freshly allocated parameter tensors.
    pub fn snapshot(&self) -> ModelBundle {
        let mut copy = self.clone();
        let fresh: Vec<Tensor> = self
            .parameters()
            .iter()
            .map(|t| Tensor::param(t.shape(), t.to_vec()).unwrap())
            .collect();
        copy.replace_parameters(fresh);
        copy
    }

    fn replace_parameters(&mut self, fresh: Vec<Tensor>) {
        let mut it = fresh.into_iter();
        let mut next = || it.next().expect("parameter count is stable");
        for layer in &mut self.encoder.layers {
            layer.w_input = next();
            layer.w_hidden = next();
            layer.bias = next();
        }
        let linear = |l: &mut Linear, next: &mut dyn FnMut() -> Tensor| {
            l.weight = next();
            l.bias = next();
        };
        linear(&mut self.projector, &mut next);
        linear(&mut self.discriminator.hidden, &mut next);
        linear(&mut self.discriminator.out, &mut next);
        linear(&mut self.adapter.hidden, &mut next);
        linear(&mut self.adapter.gamma, &mut next);
        linear(&mut self.adapter.delta, &mut next);
        linear(&mut self.head.hidden, &mut next);
        linear(&mut self.head.out, &mut next);
        if let Some(cls) = &mut self.domain_classifier {
            linear(cls, &mut next);
        }
    }

    /// Copies parameter values from `other` (same architecture).
    pub fn load_values_from(&self, other: &ModelBundle) {
        for (dst, src) in self.parameters().iter().zip(other.parameters()) {
            dst.value_mut().copy_from_slice(&src.value());
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let params = self
            .named_parameters()
            .into_iter()
            .map(|(name, t)| Entry { name, shape: t.shape().to_vec(), values: t.to_vec() })
            .collect();
        Checkpoint { params, norm: self.norm.to_entries() }
    }

    /// Rebuilds a bundle from a checkpoint. The domain classifier is restored
    /// when the checkpoint carries one.
    pub fn from_checkpoint(dims: ModelDims, ckpt: &Checkpoint) -> Result<ModelBundle> {
        let classes = ckpt
            .params
            .iter()
            .find(|e| e.name == "domain_classifier.bias")
            .map(|e| e.shape[0]);
        let mut bundle = ModelBundle::init(dims, 0, classes);
        for (name, t) in bundle.named_parameters() {
            let entry = ckpt
                .params
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if entry.shape != t.shape() {
                return Err(ModelError::ShapeMismatch {
                    name,
                    found: entry.shape.clone(),
                    expected: t.shape().to_vec(),
                });
            }
            t.value_mut().copy_from_slice(&entry.values);
        }
        bundle.norm = NormStats::from_entries(&ckpt.norm).map_err(ModelError::Format)?;
        Ok(bundle)
    }
}
