//! Assembly of the full network: conv blocks (GLU or conv+ReLU), frequency
//! max-pooling, dropout, BGRU, dense head. Nothing here touches the time
//! axis, so the output frame count always equals the input frame count.

use ndarray::{s, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::GradRef;
use super::conv::{
    freq_max_pool_backward, freq_max_pool_forward, Conv2dGrads, Conv2dSame, GluCache, GluConv, GluGrads,
};
use super::gru::{Bgru, BgruCache, BgruGrads};
use super::head::{Dense, DenseGrads};
use super::{Gating, ModelConfig, NnError};

pub use super::adam::ParamRef;

#[derive(Debug, Clone)]
enum BlockLayer {
    Glu(GluConv),
    Relu(Conv2dSame),
}

#[derive(Debug, Clone)]
struct ConvBlock {
    layer: BlockLayer,
    pool: usize,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    blocks: Vec<ConvBlock>,
    bgru: Bgru,
    dense: Dense,
}

enum ActivationCache {
    Glu(GluCache),
    /// Pre-activation values; the ReLU mask is their sign.
    Relu(Array3<f64>),
}

struct BlockCache {
    input: Array3<f64>,
    activation: ActivationCache,
    pool_argmax: Array3<usize>,
    /// Inverted-dropout multipliers (0 or 1/(1-rate)); `None` in eval mode.
    dropout: Option<Array3<f64>>,
}

pub struct ModelCache {
    blocks: Vec<BlockCache>,
    rnn_input: Array2<f64>,
    bgru: BgruCache,
    bgru_out: Array2<f64>,
}

enum BlockGrads {
    Glu(GluGrads),
    Relu(Conv2dGrads),
}

pub struct ModelGrads {
    blocks: Vec<BlockGrads>,
    bgru: BgruGrads,
    dense: DenseGrads,
}

/// C x T x M -> T x (C*M), channel-major within a frame.
fn flatten_frames(map: &Array3<f64>) -> Array2<f64> {
    let (c, t_len, m) = map.dim();
    let mut out = Array2::zeros((t_len, c * m));
    for ci in 0..c {
        for t in 0..t_len {
            out.row_mut(t)
                .slice_mut(s![ci * m..(ci + 1) * m])
                .assign(&map.slice(s![ci, t, ..]));
        }
    }
    out
}

fn unflatten_frames(x: &Array2<f64>, c: usize, m: usize) -> Array3<f64> {
    let t_len = x.nrows();
    let mut out = Array3::zeros((c, t_len, m));
    for ci in 0..c {
        for t in 0..t_len {
            out.slice_mut(s![ci, t, ..])
                .assign(&x.row(t).slice(s![ci * m..(ci + 1) * m]));
        }
    }
    out
}

impl Model {
    /// Build a model with Glorot-uniform weights from a seed.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(config.blocks.len());
        let mut c_in = 1;
        for spec in &config.blocks {
            let layer = match config.gating {
                Gating::Glu => BlockLayer::Glu(GluConv::init(c_in, spec.channels, spec.kernel_t, spec.kernel_m, &mut rng)?),
                Gating::Relu => {
                    BlockLayer::Relu(Conv2dSame::init(c_in, spec.channels, spec.kernel_t, spec.kernel_m, &mut rng)?)
                }
            };
            blocks.push(ConvBlock { layer, pool: spec.pool });
            c_in = spec.channels;
        }
        let bgru = Bgru::init(config.rnn_input_width(), config.rnn_hidden, &mut rng);
        let dense = Dense::init(2 * config.rnn_hidden, config.output_width(), &mut rng);
        Ok(Model {
            config,
            blocks,
            bgru,
            dense,
        })
    }

    /// Frame-level pre-activation outputs, T x output_width. Pass a dropout
    /// RNG to run in training mode; `None` disables dropout (evaluation).
    pub fn forward(
        &self,
        features: &Array2<f64>,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Array2<f64>, ModelCache), NnError> {
        if features.ncols() != self.config.n_mels {
            return Err(NnError::ShapeMismatch(format!(
                "features have {} mel bins, model expects {}",
                features.ncols(),
                self.config.n_mels
            )));
        }
        if features.nrows() == 0 {
            return Err(NnError::ShapeMismatch("empty feature matrix".into()));
        }

        let t_len = features.nrows();
        let mut map = features
            .clone()
            .into_shape_with_order((1, t_len, features.ncols()))
            .expect("1xTxM reshape");
        let mut caches = Vec::with_capacity(self.blocks.len());

        for block in &self.blocks {
            let input = map;
            let (activated, activation) = match &block.layer {
                BlockLayer::Glu(glu) => {
                    let (y, cache) = glu.forward(&input)?;
                    (y, ActivationCache::Glu(cache))
                }
                BlockLayer::Relu(conv) => {
                    let pre = conv.forward(&input)?;
                    (pre.mapv(|v| v.max(0.0)), ActivationCache::Relu(pre))
                }
            };
            let (pooled, pool_argmax) = freq_max_pool_forward(&activated, block.pool)?;
            let (dropped, dropout) = match dropout_rng.as_deref_mut() {
                Some(rng) if self.config.dropout > 0.0 => {
                    let keep = 1.0 - self.config.dropout;
                    let mask = Array3::from_shape_fn(pooled.raw_dim(), |_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    (&pooled * &mask, Some(mask))
                }
                _ => (pooled, None),
            };
            caches.push(BlockCache {
                input,
                activation,
                pool_argmax,
                dropout,
            });
            map = dropped;
        }

        let rnn_input = flatten_frames(&map);
        let (bgru_out, bgru_cache) = self.bgru.forward(&rnn_input);
        let logits = self.dense.forward(&bgru_out)?;
        Ok((
            logits,
            ModelCache {
                blocks: caches,
                rnn_input,
                bgru: bgru_cache,
                bgru_out,
            },
        ))
    }

    /// Evaluation-mode forward pass, discarding the cache.
    pub fn logits(&self, features: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        Ok(self.forward(features, None)?.0)
    }

    /// Backpropagate a gradient on the frame-level logits through the whole
    /// network.
    pub fn backward(&self, cache: &ModelCache, d_logits: &Array2<f64>) -> Result<ModelGrads, NnError> {
        if d_logits.dim() != (cache.bgru_out.nrows(), self.config.output_width()) {
            return Err(NnError::ShapeMismatch(format!(
                "logit gradient has shape {:?}, expected ({}, {})",
                d_logits.dim(),
                cache.bgru_out.nrows(),
                self.config.output_width()
            )));
        }
        let dense_grads = self.dense.backward(&cache.bgru_out, d_logits);
        let (d_rnn_input, bgru_grads) = self.bgru.backward(&cache.rnn_input, &cache.bgru, &dense_grads.d_input);

        let last_channels = self.blocks.last().map_or(1, |b| match &b.layer {
            BlockLayer::Glu(g) => g.linear.c_out(),
            BlockLayer::Relu(c) => c.c_out(),
        });
        let mut d_map = unflatten_frames(&d_rnn_input, last_channels, self.config.pooled_mels());

        let mut block_grads = Vec::with_capacity(self.blocks.len());
        for (block, bc) in self.blocks.iter().zip(cache.blocks.iter()).rev() {
            if let Some(mask) = &bc.dropout {
                d_map = &d_map * mask;
            }
            let m_in = bc.input.dim().2;
            let d_activated = freq_max_pool_backward(&bc.pool_argmax, &d_map, m_in);
            match (&block.layer, &bc.activation) {
                (BlockLayer::Glu(glu), ActivationCache::Glu(glu_cache)) => {
                    let grads = glu.backward(&bc.input, glu_cache, &d_activated)?;
                    d_map = grads.d_input.clone();
                    block_grads.push(BlockGrads::Glu(grads));
                }
                (BlockLayer::Relu(conv), ActivationCache::Relu(pre)) => {
                    let d_pre = &d_activated * &pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    let grads = conv.backward(&bc.input, &d_pre)?;
                    d_map = grads.d_input.clone();
                    block_grads.push(BlockGrads::Relu(grads));
                }
                _ => unreachable!("cache kind always matches layer kind"),
            }
        }
        block_grads.reverse();
        Ok(ModelGrads {
            blocks: block_grads,
            bgru: bgru_grads,
            dense: dense_grads,
        })
    }

    /// Named parameter tensors in a fixed order (the checkpoint and optimizer
    /// order).
    pub fn params_mut(&mut self) -> Vec<ParamRef<'_>> {
        let mut out: Vec<ParamRef<'_>> = Vec::new();
        for (i, block) in self.blocks.iter_mut().enumerate() {
            match &mut block.layer {
                BlockLayer::Glu(glu) => {
                    out.push((format!("block{i}.linear.weight"), glu.linear.weight.as_slice_mut().unwrap()));
                    out.push((format!("block{i}.linear.bias"), glu.linear.bias.as_slice_mut().unwrap()));
                    out.push((format!("block{i}.gate.weight"), glu.gate.weight.as_slice_mut().unwrap()));
                    out.push((format!("block{i}.gate.bias"), glu.gate.bias.as_slice_mut().unwrap()));
                }
                BlockLayer::Relu(conv) => {
                    out.push((format!("block{i}.conv.weight"), conv.weight.as_slice_mut().unwrap()));
                    out.push((format!("block{i}.conv.bias"), conv.bias.as_slice_mut().unwrap()));
                }
            }
        }
        for (name, values) in self.bgru.forward_cell.param_slices_mut() {
            out.push((format!("bgru.forward.{name}"), values));
        }
        for (name, values) in self.bgru.backward_cell.param_slices_mut() {
            out.push((format!("bgru.backward.{name}"), values));
        }
        out.push(("dense.weight".to_string(), self.dense.weight.as_slice_mut().unwrap()));
        out.push(("dense.bias".to_string(), self.dense.bias.as_slice_mut().unwrap()));
        out
    }

    pub fn params(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            match &block.layer {
                BlockLayer::Glu(glu) => {
                    out.push((format!("block{i}.linear.weight"), glu.linear.weight.as_slice().unwrap()));
                    out.push((format!("block{i}.linear.bias"), glu.linear.bias.as_slice().unwrap()));
                    out.push((format!("block{i}.gate.weight"), glu.gate.weight.as_slice().unwrap()));
                    out.push((format!("block{i}.gate.bias"), glu.gate.bias.as_slice().unwrap()));
                }
                BlockLayer::Relu(conv) => {
                    out.push((format!("block{i}.conv.weight"), conv.weight.as_slice().unwrap()));
                    out.push((format!("block{i}.conv.bias"), conv.bias.as_slice().unwrap()));
                }
            }
        }
        for (name, values) in self.bgru.forward_cell.param_slices() {
            out.push((format!("bgru.forward.{name}"), values));
        }
        for (name, values) in self.bgru.backward_cell.param_slices() {
            out.push((format!("bgru.backward.{name}"), values));
        }
        out.push(("dense.weight".to_string(), self.dense.weight.as_slice().unwrap()));
        out.push(("dense.bias".to_string(), self.dense.bias.as_slice().unwrap()));
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params().iter().map(|(_, v)| v.len()).collect()
    }
}

impl ModelGrads {
    /// Gradient tensors in the same order as [`Model::params_mut`].
    pub fn flat(&self) -> Vec<GradRef<'_>> {
        let mut out: Vec<GradRef<'_>> = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            match block {
                BlockGrads::Glu(g) => {
                    out.push((format!("block{i}.linear.weight"), g.linear.d_weight.as_slice().unwrap()));
                    out.push((format!("block{i}.linear.bias"), g.linear.d_bias.as_slice().unwrap()));
                    out.push((format!("block{i}.gate.weight"), g.gate.d_weight.as_slice().unwrap()));
                    out.push((format!("block{i}.gate.bias"), g.gate.d_bias.as_slice().unwrap()));
                }
                BlockGrads::Relu(g) => {
                    out.push((format!("block{i}.conv.weight"), g.d_weight.as_slice().unwrap()));
                    out.push((format!("block{i}.conv.bias"), g.d_bias.as_slice().unwrap()));
                }
            }
        }
        for (name, values) in self.bgru.forward.grad_slices() {
            out.push((format!("bgru.forward.{name}"), values));
        }
        for (name, values) in self.bgru.backward.grad_slices() {
            out.push((format!("bgru.backward.{name}"), values));
        }
        out.push(("dense.weight".to_string(), self.dense.d_weight.as_slice().unwrap()));
        out.push(("dense.bias".to_string(), self.dense.d_bias.as_slice().unwrap()));
        out
    }

    fn flat_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (i, block) in self.blocks.iter_mut().enumerate() {
            match block {
                BlockGrads::Glu(g) => {
                    out.push((format!("block{i}.linear.weight"), g.linear.d_weight.as_slice_mut().unwrap()));
                    out.push((format!("block{i}.linear.bias"), g.linear.d_bias.as_slice_mut().unwrap()));
                    out.push((format!("block{i}.gate.weight"), g.gate.d_weight.as_slice_mut().unwrap()));
                    out.push((format!("block{i}.gate.bias"), g.gate.d_bias.as_slice_mut().unwrap()));
                }
                BlockGrads::Relu(g) => {
                    out.push((format!("block{i}.conv.weight"), g.d_weight.as_slice_mut().unwrap()));
                    out.push((format!("block{i}.conv.bias"), g.d_bias.as_slice_mut().unwrap()));
                }
            }
        }
        for (name, values) in self.bgru.forward.grad_slices_mut() {
            out.push((format!("bgru.forward.{name}"), values));
        }
        for (name, values) in self.bgru.backward.grad_slices_mut() {
            out.push((format!("bgru.backward.{name}"), values));
        }
        out.push(("dense.weight".to_string(), self.dense.d_weight.as_slice_mut().unwrap()));
        out.push(("dense.bias".to_string(), self.dense.d_bias.as_slice_mut().unwrap()));
        out
    }

    /// `self += other`, tensor by tensor.
    pub fn accumulate(&mut self, other: &ModelGrads) {
        for ((_, dst), (_, src)) in self.flat_mut().into_iter().zip(other.flat()) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, values) in self.flat_mut() {
            for v in values {
                *v *= factor;
            }
        }
    }
}
