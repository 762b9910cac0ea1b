//! Forward-pass context and the layer building blocks shared by every
//! network.

use crate::autodiff::{cross_attention, ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::Rng;

use super::ModelError;

/// Batch-norm running-statistics momentum. The first training batch sets
/// the running statistics outright.
pub const BN_MOMENTUM: f32 = 0.1;

/// One forward pass: a fresh tape over read-only parameters.
///
/// In training mode batch-norm layers normalize with batch statistics and
/// queue running-average updates, which the trainer applies after the
/// optimizer step. Parameters under a frozen prefix enter the tape as
/// constants and their batch-norm layers run in inference mode.
pub struct Session<'a> {
    pub tape: Tape<f32>,
    store: &'a ParamStore<f32>,
    train: bool,
    frozen: Vec<String>,
    bn_updates: Vec<(ParamId, Vec<f32>)>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore<f32>, train: bool) -> Self {
        Session { tape: Tape::new(), store, train, frozen: Vec::new(), bn_updates: Vec::new() }
    }

    pub fn inference(store: &'a ParamStore<f32>) -> Self {
        Self::new(store, false)
    }

    pub fn with_frozen(mut self, prefix: &str) -> Self {
        self.frozen.push(prefix.to_string());
        self
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn store(&self) -> &'a ParamStore<f32> {
        self.store
    }

    fn is_frozen(&self, id: ParamId) -> bool {
        let name = &self.store.get(id).name;
        self.frozen.iter().any(|p| name.starts_with(p.as_str()))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let frozen = self.is_frozen(id);
        self.tape.param(self.store, id, frozen)
    }

    pub fn input(&mut self, t: Tensor<f32>) -> Var {
        self.tape.leaf(t, false)
    }

    /// Queued running-statistics updates, ready for
    /// [`ParamStore::apply_updates`].
    pub fn take_bn_updates(&mut self) -> Vec<(ParamId, Vec<f32>)> {
        std::mem::take(&mut self.bn_updates)
    }
}

fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore<f32>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        Self::with_std(store, name, [cin, cout, k], stride, pad, he_std(cin * k * k), rng)
    }

    /// As [`Conv2d::new`] with weight standard deviation `std`; `dims` is
    /// `[cin, cout, k]`.
    pub fn with_std(
        store: &mut ParamStore<f32>,
        name: &str,
        dims: [usize; 3],
        stride: usize,
        pad: usize,
        std: f64,
        rng: &mut Rng,
    ) -> Self {
        let [cin, cout, k] = dims;
        let weight = store.add_normal(&format!("{name}.weight"), &[cout, cin, k, k], std, rng);
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(vec![cout]));
        Conv2d { weight, bias, stride, pad }
    }

    /// 3×3, stride 1, size-preserving.
    pub fn same3(store: &mut ParamStore<f32>, name: &str, cin: usize, cout: usize, rng: &mut Rng) -> Self {
        Self::new(store, name, cin, cout, 3, 1, 1, rng)
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var, ModelError> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        Ok(s.tape.conv2d(x, w, Some(b), self.stride, self.pad)?)
    }
}

/// Stride-2, 2×2 transposed convolution: doubles spatial size.
#[derive(Clone, Debug)]
pub struct UpConv {
    weight: ParamId,
    bias: ParamId,
}

impl UpConv {
    pub fn new(store: &mut ParamStore<f32>, name: &str, cin: usize, cout: usize, rng: &mut Rng) -> Self {
        let weight = store.add_normal(&format!("{name}.weight"), &[cin, cout, 2, 2], he_std(cin), rng);
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(vec![cout]));
        UpConv { weight, bias }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var, ModelError> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        Ok(s.tape.conv_transpose2d(x, w, Some(b), 2, 0)?)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore<f32>, name: &str, fin: usize, fout: usize, rng: &mut Rng) -> Self {
        let weight = store.add_normal(&format!("{name}.weight"), &[fout, fin], (1.0 / fin as f64).sqrt(), rng);
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(vec![fout]));
        Linear { weight, bias }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var, ModelError> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        Ok(s.tape.linear(x, w, Some(b))?)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    batches: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore<f32>, name: &str, c: usize) -> Self {
        BatchNorm {
            gamma: store.add(&format!("{name}.gamma"), Tensor::full(vec![c], 1.0)),
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(vec![c])),
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(vec![c])),
            running_var: store.add_buffer(&format!("{name}.running_var"), Tensor::full(vec![c], 1.0)),
            batches: store.add_buffer(&format!("{name}.batches"), Tensor::zeros(vec![1])),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var, ModelError> {
        let (g, b) = (s.param(self.gamma), s.param(self.beta));
        let store = s.store;
        let (mean, var) = (store.value(self.running_mean).data(), store.value(self.running_var).data());
        if !s.train || s.is_frozen(self.gamma) {
            return Ok(s.tape.batch_norm_eval(x, g, b, mean, var)?);
        }
        let (y, stats) = s.tape.batch_norm_train(x, g, b)?;
        let seen = store.value(self.batches).data()[0];
        let momentum = if seen == 0.0 { 1.0 } else { BN_MOMENTUM };
        let blend = |run: &[f32], batch: &[f32]| -> Vec<f32> {
            run.iter().zip(batch).map(|(&r, &v)| (1.0 - momentum) * r + momentum * v).collect()
        };
        let updates = [
            (self.running_mean, blend(mean, &stats.mean)),
            (self.running_var, blend(var, &stats.var_unbiased)),
            (self.batches, vec![seen + 1.0]),
        ];
        s.bn_updates.extend(updates);
        Ok(y)
    }
}

/// conv 3×3 → batch-norm → relu.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    conv: Conv2d,
    bn: BatchNorm,
}

impl ConvBnRelu {
    pub fn new(store: &mut ParamStore<f32>, name: &str, cin: usize, cout: usize, rng: &mut Rng) -> Self {
        ConvBnRelu {
            conv: Conv2d::same3(store, &format!("{name}.conv"), cin, cout, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var, ModelError> {
        let y = self.conv.forward(s, x)?;
        let y = self.bn.forward(s, y)?;
        Ok(s.tape.relu(y))
    }
}

/// Spatial features attend to one conditioning token; the result is added
/// back to the features. The token is first projected to the feature width.
#[derive(Clone, Debug)]
pub struct CrossAttentionBlock {
    context: Linear,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
}

impl CrossAttentionBlock {
    pub fn new(store: &mut ParamStore<f32>, name: &str, channels: usize, d_emb: usize, rng: &mut Rng) -> Self {
        let std = (1.0 / channels as f64).sqrt();
        CrossAttentionBlock {
            context: Linear::new(store, &format!("{name}.context"), d_emb, channels, rng),
            wq: store.add_normal(&format!("{name}.wq"), &[channels, channels], std, rng),
            wk: store.add_normal(&format!("{name}.wk"), &[channels, channels], std, rng),
            wv: store.add_normal(&format!("{name}.wv"), &[channels, channels], std, rng),
        }
    }

    /// `x: [N, C, H, W]`, `emb: [N, d_emb]`.
    pub fn forward(&self, s: &mut Session, x: Var, emb: Var) -> Result<Var, ModelError> {
        let (n, c, h, w) = match *s.tape.shape(x) {
            [n, c, h, w] => (n, c, h, w),
            ref other => return Err(ModelError::Shape(format!("attention expects [N,C,H,W], got {other:?}"))),
        };
        let ctx = self.context.forward(s, emb)?;
        let ctx = s.tape.reshape(ctx, &[n, 1, c])?;
        let tokens = s.tape.to_tokens(x)?;
        let (wq, wk, wv) = (s.param(self.wq), s.param(self.wk), s.param(self.wv));
        let att = cross_attention(&mut s.tape, tokens, ctx, wq, wk, wv)?;
        let att = s.tape.from_tokens(att, h, w)?;
        Ok(s.tape.add(x, att)?)
    }
}
