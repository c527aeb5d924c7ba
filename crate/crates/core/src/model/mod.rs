//! The spatio-temporal auto-encoder: a per-patch convolutional encoder, a
//! stack of multi-head convolutional-attention layers that mix the 2T+1
//! positions of a cube, and a convolutional decoder.
//!
//! Batches are laid out as `[n * (2T+1), C, H, W]`: the positions of each
//! cube are consecutive images, so the encoder and decoder treat every patch
//! independently and only the attention layers look across positions.

mod attention;
mod config;
mod params;

use std::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::norm::BN_MOMENTUM;
use crate::autodiff::{BatchStats, Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

pub use attention::{head_scores, multi_head_attention};
pub use config::ModelConfig;
pub use params::{ParamId, ParamSet};

use params::uniform_kernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics normalize and feed the running estimates.
    Train,
    /// Running statistics are frozen; outputs depend only on each cube.
    Eval,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone, Copy)]
struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    running: usize,
}

#[derive(Debug, Clone)]
struct AttentionLayer {
    wq: Conv,
    wkv: Conv,
    /// One `[1, 2 * d/heads, 3, 3]` scoring conv per head.
    heads: Vec<Conv>,
    ff: Conv,
    gn_gamma: ParamId,
    gn_beta: ParamId,
}

#[derive(Debug, Clone)]
struct Layout {
    enc: [(Conv, BatchNorm); 4],
    layers: Vec<AttentionLayer>,
    pe: ParamId,
    dec_up: [(Conv, BatchNorm); 2],
    dec_out: Conv,
}

/// Running mean / variance of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T: Real> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

/// Parameters, normalization buffers and configuration of one branch.
#[derive(Debug, Clone)]
pub struct StateModel<T: Real = f32> {
    config: ModelConfig,
    params: ParamSet<T>,
    running: Vec<RunningStats<T>>,
    running_names: Vec<String>,
    layout: Layout,
}

struct Builder<'r, T: Real> {
    params: ParamSet<T>,
    running: Vec<RunningStats<T>>,
    running_names: Vec<String>,
    rng: &'r mut ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    fn conv(&mut self, name: &str, c_out: usize, c_in: usize, k: usize, stride: usize, pad: usize) -> Conv {
        let weight = uniform_kernel(self.rng, &[c_out, c_in, k, k], c_in * k * k);
        Conv {
            weight: self.params.push(format!("{name}.weight"), weight),
            bias: self.params.push(format!("{name}.bias"), Tensor::zeros(&[c_out])),
            stride,
            pad,
        }
    }

    /// Transposed conv kernels are stored `[c_in, c_out, k, k]`.
    fn deconv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Conv {
        let weight = uniform_kernel(self.rng, &[c_in, c_out, k, k], c_out * k * k);
        Conv {
            weight: self.params.push(format!("{name}.weight"), weight),
            bias: self.params.push(format!("{name}.bias"), Tensor::zeros(&[c_out])),
            stride,
            pad: 0,
        }
    }

    fn bn(&mut self, name: &str, c: usize) -> BatchNorm {
        self.running.push(RunningStats {
            mean: Tensor::zeros(&[c]),
            var: Tensor::ones(&[c]),
        });
        self.running_names.push(name.to_string());
        BatchNorm {
            gamma: self.params.push(format!("{name}.gamma"), Tensor::ones(&[c])),
            beta: self.params.push(format!("{name}.beta"), Tensor::zeros(&[c])),
            running: self.running.len() - 1,
        }
    }
}

impl<T: Real> StateModel<T> {
    /// Deterministic initialization from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            params: ParamSet::default(),
            running: Vec::new(),
            running_names: Vec::new(),
            rng: &mut rng,
        };
        let [w1, w2, w3] = config.widths;
        let d = w3;
        let dh = config.head_dim();
        let enc = [
            (b.conv("enc.b1.conv1", w1, config.in_channels, 3, 1, 1), b.bn("enc.b1.bn1", w1)),
            (b.conv("enc.b1.conv2", w1, w1, 3, 1, 1), b.bn("enc.b1.bn2", w1)),
            (b.conv("enc.b2.conv", w2, w1, 3, 1, 1), b.bn("enc.b2.bn", w2)),
            (b.conv("enc.b3.conv", w3, w2, 3, 1, 1), b.bn("enc.b3.bn", w3)),
        ];
        let pe = b.params.push("attn.pos_enc", Tensor::zeros(&[config.seq_len(), d]));
        let layers = (0..config.n_stacks)
            .map(|l| {
                let p = format!("attn.l{l}");
                AttentionLayer {
                    wq: b.conv(&format!("{p}.wq"), d, d, 3, 1, 1),
                    wkv: b.conv(&format!("{p}.wkv"), d, d, 3, 1, 1),
                    heads: (0..config.n_heads)
                        .map(|h| b.conv(&format!("{p}.head{h}"), 1, 2 * dh, 3, 1, 1))
                        .collect(),
                    ff: b.conv(&format!("{p}.ff"), d, d, 3, 1, 1),
                    gn_gamma: b.params.push(format!("{p}.gn.gamma"), Tensor::ones(&[d])),
                    gn_beta: b.params.push(format!("{p}.gn.beta"), Tensor::zeros(&[d])),
                }
            })
            .collect();
        let dec_up = [
            (b.deconv("dec.b1.deconv", w3, w2, 2, 2), b.bn("dec.b1.bn", w2)),
            (b.deconv("dec.b2.deconv", w2, w1, 2, 2), b.bn("dec.b2.bn", w1)),
        ];
        let dec_out = b.conv("dec.b3.conv", config.out_channels, w1, 3, 1, 1);
        let Builder {
            params,
            running,
            running_names,
            ..
        } = b;
        Ok(Self {
            config,
            params,
            running,
            running_names,
            layout: Layout {
                enc,
                layers,
                pe,
                dec_up,
                dec_out,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats<T>] {
        &self.running
    }

    pub fn running_names(&self) -> &[String] {
        &self.running_names
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats<T>] {
        &mut self.running
    }

    /// Parameters, then the running mean and variance of each batch norm.
    pub fn state_tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.params
            .tensors_mut()
            .iter_mut()
            .chain(self.running.iter_mut().flat_map(|r| [&mut r.mean, &mut r.var]))
    }

    pub fn positional_encoding(&self) -> &Tensor<T> {
        self.params.get(self.layout.pe)
    }

    pub fn positional_encoding_mut(&mut self) -> &mut Tensor<T> {
        self.params.get_mut(self.layout.pe)
    }

    /// Per-head attention-net kernels `[1, 2*d/heads, 3, 3]` of layer `l`.
    pub fn head_kernel_ids(&self, layer: usize) -> Vec<(ParamId, ParamId)> {
        self.layout.layers[layer]
            .heads
            .iter()
            .map(|c| (c.weight, c.bias))
            .collect()
    }

    /// Converts every tensor to another precision.
    pub fn cast<U: Real>(&self) -> StateModel<U> {
        let mut params = ParamSet::default();
        for (name, t) in self.params.iter() {
            params.push(name, t.cast());
        }
        StateModel {
            config: self.config.clone(),
            params,
            running: self
                .running
                .iter()
                .map(|r| RunningStats {
                    mean: r.mean.cast(),
                    var: r.var.cast(),
                })
                .collect(),
            running_names: self.running_names.clone(),
            layout: self.layout.clone(),
        }
    }

    /// Registers all parameters on `graph`.
    pub fn bind<'g>(&self, graph: &'g Graph<T>, mode: Mode, requires_grad: bool) -> Bound<'g, T> {
        Bound {
            vars: self
                .params
                .tensors()
                .iter()
                .map(|t| graph.leaf(t.clone(), requires_grad))
                .collect(),
            mode,
            batch_stats: RefCell::new(Vec::new()),
        }
    }

    /// Folds training-batch statistics into the running estimates
    /// (`running = (1 - momentum) * running + momentum * batch`).
    pub fn absorb_batch_stats(&mut self, stats: Vec<(usize, BatchStats<T>)>) {
        let m = T::lit(BN_MOMENTUM);
        let keep = T::one() - m;
        for (idx, s) in stats {
            let r = &mut self.running[idx];
            for (rv, &bv) in r.mean.data_mut().iter_mut().zip(&s.mean) {
                *rv = keep * *rv + m * bv;
            }
            for (rv, &bv) in r.var.data_mut().iter_mut().zip(&s.var_unbiased) {
                *rv = keep * *rv + m * bv;
            }
        }
    }

    fn conv<'g>(&self, b: &Bound<'g, T>, c: &Conv, x: Var<'g, T>) -> Result<Var<'g, T>> {
        x.conv2d(b.var(c.weight), Some(b.var(c.bias)), c.stride, c.pad)
    }

    fn deconv<'g>(&self, b: &Bound<'g, T>, c: &Conv, x: Var<'g, T>) -> Result<Var<'g, T>> {
        x.conv_transpose2d(b.var(c.weight), Some(b.var(c.bias)), c.stride, c.pad)
    }

    fn batch_norm<'g>(&self, b: &Bound<'g, T>, bn: &BatchNorm, x: Var<'g, T>) -> Result<Var<'g, T>> {
        match b.mode {
            Mode::Train => {
                let (y, stats) = x.batch_norm_train(b.var(bn.gamma), b.var(bn.beta))?;
                b.batch_stats.borrow_mut().push((bn.running, stats));
                Ok(y)
            }
            Mode::Eval => {
                let r = &self.running[bn.running];
                x.batch_norm_eval(b.var(bn.gamma), b.var(bn.beta), &r.mean, &r.var)
            }
        }
    }

    fn check_input(&self, x: &[usize]) -> Result<usize> {
        let c = &self.config;
        let s = c.seq_len();
        match *x {
            [bsz, ch, h, w] if ch == c.in_channels && h == c.height && w == c.width && bsz % s == 0 => Ok(bsz / s),
            _ => Err(shape_err(
                "state_forward",
                format!(
                    "expected [n*{s}, {}, {}, {}], got {x:?}",
                    c.in_channels, c.height, c.width
                ),
            )),
        }
    }

    /// Query, key and value maps of one layer; the positional encoding is
    /// added to the query and key copies only.
    fn query_key_value<'g>(
        &self,
        b: &Bound<'g, T>,
        l: &AttentionLayer,
        z: Var<'g, T>,
    ) -> Result<(Var<'g, T>, Var<'g, T>, Var<'g, T>)> {
        let zs = z.shape();
        let s = self.config.seq_len();
        let d = self.config.d();
        let (n, hw) = (zs[0] / s, zs[2] * zs[3]);
        let q = self.conv(b, &l.wq, z)?.leaky_relu();
        let kv = self.conv(b, &l.wkv, z)?.leaky_relu();
        let pe = b.var(self.layout.pe).reshape(&[1, s, d, 1])?;
        let q = q.reshape(&[n, s, d, hw])?.add(pe)?.reshape(&zs)?;
        let k = kv.reshape(&[n, s, d, hw])?.add(pe)?.reshape(&zs)?;
        Ok((q, k, kv))
    }

    /// Per-head attention weights `[n, s, s, h*w]` that layer `layer` would
    /// apply to input `z`.
    pub fn attention_weights<'g>(&self, b: &Bound<'g, T>, layer: usize, z: Var<'g, T>) -> Result<Vec<Var<'g, T>>> {
        let l = self.layout.layers.get(layer).ok_or_else(|| {
            Error::InvalidArgument(format!("layer {layer} of {}", self.layout.layers.len()))
        })?;
        let (q, k, _) = self.query_key_value(b, l, z)?;
        l.heads
            .iter()
            .enumerate()
            .map(|(hi, hc)| {
                head_scores(q, k, b.var(hc.weight), b.var(hc.bias), hi, l.heads.len(), self.config.seq_len())
            })
            .collect()
    }

    /// `[n*(2T+1), C, H, W] -> [n*(2T+1), d, H/4, W/4]`. Block 1 is two
    /// conv-ReLU-BN stages; blocks 2 and 3 add a 2x2 max-pool.
    pub fn encode<'g>(&self, b: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        self.check_input(&x.shape())?;
        let mut z = x;
        for (i, (conv, bn)) in self.layout.enc.iter().enumerate() {
            z = self.conv(b, conv, z)?.relu();
            z = self.batch_norm(b, bn, z)?;
            if i >= 2 {
                z = z.maxpool2d()?;
            }
        }
        Ok(z)
    }

    /// One attention-stack layer; input and output are `[n*(2T+1), d, h, w]`.
    pub fn attention_layer<'g>(&self, b: &Bound<'g, T>, layer: usize, z: Var<'g, T>) -> Result<Var<'g, T>> {
        let l = self.layout.layers.get(layer).ok_or_else(|| {
            Error::InvalidArgument(format!("layer {layer} of {}", self.layout.layers.len()))
        })?;
        let c = &self.config;
        let (h, w) = c.encoded_hw();
        let s = c.seq_len();
        let d = c.d();
        let zs = z.shape();
        if zs.len() != 4 || zs[1] != d || zs[2] != h || zs[3] != w || zs[0] % s != 0 {
            return Err(shape_err(
                "attention_layer",
                format!("expected [n*{s}, {d}, {h}, {w}], got {zs:?}"),
            ));
        }
        let (q, k, kv) = self.query_key_value(b, l, z)?;
        let heads: Vec<(Var<'g, T>, Var<'g, T>)> = l
            .heads
            .iter()
            .map(|hc| (b.var(hc.weight), b.var(hc.bias)))
            .collect();
        let mh = multi_head_attention(q, k, kv, &heads, s)?;
        let u = z.add(mh)?;
        let v = u.add(self.conv(b, &l.ff, u)?.leaky_relu())?;
        v.group_norm(b.var(l.gn_gamma), b.var(l.gn_beta), c.groups)
    }

    /// `[n*(2T+1), d, h, w] -> [n*(2T+1), C_out, H, W]`; the last conv is linear.
    pub fn decode<'g>(&self, b: &Bound<'g, T>, z: Var<'g, T>) -> Result<Var<'g, T>> {
        let c = &self.config;
        let (h, w) = c.encoded_hw();
        let zs = z.shape();
        if zs.len() != 4 || zs[1] != c.d() || zs[2] != h || zs[3] != w {
            return Err(shape_err(
                "decode",
                format!("expected [B, {}, {h}, {w}], got {zs:?}", c.d()),
            ));
        }
        let mut y = z;
        for (conv, bn) in &self.layout.dec_up {
            y = self.deconv(b, conv, y)?.relu();
            y = self.batch_norm(b, bn, y)?;
        }
        self.conv(b, &self.layout.dec_out, y)
    }

    /// Full reconstruction of a batch of cubes.
    pub fn forward<'g>(&self, b: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let mut z = self.encode(b, x)?;
        for l in 0..self.layout.layers.len() {
            z = self.attention_layer(b, l, z)?;
        }
        self.decode(b, z)
    }

    /// Eval-mode reconstruction of a batch tensor, outside any caller graph.
    pub fn reconstruct(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let g = Graph::new();
        let b = self.bind(&g, Mode::Eval, false);
        let y = self.forward(&b, g.constant(x.clone()))?;
        let out = y.value().as_ref().clone();
        Ok(out)
    }
}

/// A model's parameters registered on one graph.
pub struct Bound<'g, T: Real> {
    vars: Vec<Var<'g, T>>,
    mode: Mode,
    batch_stats: RefCell<Vec<(usize, BatchStats<T>)>>,
}

impl<'g, T: Real> Bound<'g, T> {
    pub fn var(&self, id: ParamId) -> Var<'g, T> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'g, T>] {
        &self.vars
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Batch statistics recorded by training-mode forwards, in call order.
    pub fn take_batch_stats(&self) -> Vec<(usize, BatchStats<T>)> {
        std::mem::take(&mut self.batch_stats.borrow_mut())
    }
}

/// Stacks cubes `[2T+1, C, H, W]` into a batch `[n*(2T+1), C, H, W]`.
pub fn stack_cubes<T: Real>(cubes: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let st = Tensor::stack(cubes)?;
    let s = st.shape().to_vec();
    if s.len() != 5 {
        return Err(shape_err("stack_cubes", format!("cubes must be rank 4, got {:?}", &s[1..])));
    }
    st.into_reshape(&[s[0] * s[1], s[2], s[3], s[4]])
}
