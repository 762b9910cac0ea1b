use crate::autodiff::{ParamId, ParamStore, Tensor, Var};
use crate::rng::Rng;

use super::layers::{BatchNorm, Conv2d, ConvBnRelu, CrossAttentionBlock, Linear, Session, UpConv};
use super::ModelError;

pub const CLASSIFIER_WIDTHS: [usize; 4] = [16, 32, 64, 64];
pub const EMBED_DIM: usize = 64;
pub const PERCEPTION_WIDTH: usize = 16;
pub const UNET_WIDTHS: [usize; 2] = [32, 64];
pub const UNET_BOTTLENECK: usize = 128;

/// Keeps the enhancement input's logit finite at 0 and 1.
const LOGIT_CLAMP: f32 = 1e-4;
const HEAD_INIT_STD: f64 = 1e-3;
const PERCEPTION_SCALE: f32 = 255.0;

/// Four conv-bn-relu-maxpool blocks, global average pooling and a single
/// logit. Outputs the probability that the input comes from a real image.
#[derive(Clone, Debug)]
pub struct SspClassifier {
    in_channels: usize,
    blocks: Vec<ConvBnRelu>,
    head: Linear,
}

impl SspClassifier {
    pub fn new(store: &mut ParamStore<f32>, prefix: &str, in_channels: usize, rng: &mut Rng) -> Self {
        let mut blocks = Vec::new();
        let mut cin = in_channels;
        for (i, &w) in CLASSIFIER_WIDTHS.iter().enumerate() {
            blocks.push(ConvBnRelu::new(store, &format!("{prefix}.block{i}"), cin, w, rng));
            cin = w;
        }
        let head = Linear::new(store, &format!("{prefix}.head"), cin, 1, rng);
        SspClassifier { in_channels, blocks, head }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// `x: [N, in_channels, H, W]` with `H` and `W` divisible by 16; returns
    /// `[N, 1]` probabilities.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var, ModelError> {
        match *s.tape.shape(x) {
            [_, c, h, w] if c == self.in_channels && h % 16 == 0 && w % 16 == 0 && h > 0 && w > 0 => {}
            ref other => {
                return Err(ModelError::Shape(format!(
                    "classifier expects [N,{},16a,16b], got {other:?}",
                    self.in_channels
                )))
            }
        }
        let mut y = x;
        for b in &self.blocks {
            y = b.forward(s, y)?;
            y = s.tape.max_pool2(y)?;
        }
        let pooled = s.tape.global_avg_pool(y)?;
        let logit = self.head.forward(s, pooled)?;
        Ok(s.tape.sigmoid(logit))
    }
}

/// conv → batch-norm → relu → global pool → linear, with a per-component
/// sigmoid. Components are (blurry, compressed, intact).
#[derive(Clone, Debug)]
pub struct PerceptionModule {
    conv: Conv2d,
    bn: BatchNorm,
    fc: Linear,
}

impl PerceptionModule {
    pub fn new(store: &mut ParamStore<f32>, prefix: &str, rng: &mut Rng) -> Self {
        PerceptionModule {
            conv: Conv2d::same3(store, &format!("{prefix}.conv"), 3, PERCEPTION_WIDTH, rng),
            bn: BatchNorm::new(store, &format!("{prefix}.bn"), PERCEPTION_WIDTH),
            fc: Linear::new(store, &format!("{prefix}.fc"), PERCEPTION_WIDTH, 3, rng),
        }
    }

    /// `x: [N, 3, M, M]` → `[N, 3]`, each component in (0, 1). `x` is data:
    /// no gradient reaches it. Each plane is centered on its mean and
    /// expressed in 8-bit levels before the convolution.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var, ModelError> {
        let shape = s.tape.shape(x).to_vec();
        let plane = shape[2..].iter().product::<usize>().max(1);
        let mut centered = s.tape.value(x).data().to_vec();
        for c in centered.chunks_mut(plane) {
            let mean = c.iter().sum::<f32>() / plane as f32;
            c.iter_mut().for_each(|v| *v = (*v - mean) * PERCEPTION_SCALE);
        }
        let x = s.input(Tensor::new(shape, centered)?);
        let y = self.conv.forward(s, x)?;
        let y = self.bn.forward(s, y)?;
        let y = s.tape.relu(y);
        let y = s.tape.global_avg_pool(y)?;
        let y = self.fc.forward(s, y)?;
        Ok(s.tape.sigmoid(y))
    }
}

/// Learnable embeddings for the deblur, decompress and reconstruct tasks.
#[derive(Clone, Debug)]
pub struct TaskEmbeddings {
    blu: ParamId,
    com: ParamId,
    rec: ParamId,
}

impl TaskEmbeddings {
    pub fn new(store: &mut ParamStore<f32>, prefix: &str, rng: &mut Rng) -> Self {
        TaskEmbeddings {
            blu: store.add_normal(&format!("{prefix}.blu"), &[1, EMBED_DIM], 1.0, rng),
            com: store.add_normal(&format!("{prefix}.com"), &[1, EMBED_DIM], 1.0, rng),
            rec: store.add_normal(&format!("{prefix}.rec"), &[1, EMBED_DIM], 1.0, rng),
        }
    }

    /// `[3, EMBED_DIM]` rows (blu, com, rec).
    pub fn table(&self, s: &mut Session) -> Result<Var, ModelError> {
        let rows = [s.param(self.blu), s.param(self.com), s.param(self.rec)];
        Ok(s.tape.concat(&rows, 0)?)
    }

    /// `w_bar: [N, 3]` → `[N, EMBED_DIM]`, the weighted sum of the embeddings.
    pub fn fuse(&self, s: &mut Session, w_bar: Var) -> Result<Var, ModelError> {
        let table = self.table(s)?;
        Ok(s.tape.matmul(w_bar, table)?)
    }
}

/// Two-level U-Net with a cross-attention conditioning site after each
/// encoder and decoder block.
///
/// The output is `sigmoid(logit(x) + head(features))`: an identity map when
/// the head outputs zero, always inside (0, 1).
#[derive(Clone, Debug)]
pub struct EnhancementUnet {
    enc: [(ConvBnRelu, ConvBnRelu, CrossAttentionBlock); 2],
    mid: (ConvBnRelu, ConvBnRelu),
    up: [UpConv; 2],
    dec: [(ConvBnRelu, ConvBnRelu, CrossAttentionBlock); 2],
    head: Conv2d,
}

impl EnhancementUnet {
    pub fn new(store: &mut ParamStore<f32>, prefix: &str, rng: &mut Rng) -> Self {
        let [w1, w2] = UNET_WIDTHS;
        let wb = UNET_BOTTLENECK;
        let mut block = |name: &str, cin: usize, cout: usize, rng: &mut Rng| {
            (
                ConvBnRelu::new(store, &format!("{prefix}.{name}.a"), cin, cout, rng),
                ConvBnRelu::new(store, &format!("{prefix}.{name}.b"), cout, cout, rng),
                CrossAttentionBlock::new(store, &format!("{prefix}.{name}.attn"), cout, EMBED_DIM, rng),
            )
        };
        let enc = [block("enc0", 3, w1, rng), block("enc1", w1, w2, rng)];
        let dec = [block("dec1", 2 * w2, w2, rng), block("dec0", 2 * w1, w1, rng)];
        let mid = (
            ConvBnRelu::new(store, &format!("{prefix}.mid.a"), w2, wb, rng),
            ConvBnRelu::new(store, &format!("{prefix}.mid.b"), wb, wb, rng),
        );
        let up = [UpConv::new(store, &format!("{prefix}.up1"), wb, w2, rng), UpConv::new(store, &format!("{prefix}.up0"), w2, w1, rng)];
        let head = Conv2d::with_std(store, &format!("{prefix}.head"), [w1, 3, 1], 1, 0, HEAD_INIT_STD, rng);
        EnhancementUnet { enc, mid, up, dec, head }
    }

    /// `x: [N, 3, M, M]` with `M` divisible by 4, `emb: [N, EMBED_DIM]`.
    pub fn forward(&self, s: &mut Session, x: Var, emb: Var) -> Result<Var, ModelError> {
        let shape = s.tape.shape(x).to_vec();
        match shape.as_slice() {
            [_, 3, h, w] if h % 4 == 0 && w % 4 == 0 && *h > 0 && *w > 0 => {}
            other => return Err(ModelError::Shape(format!("enhancement expects [N,3,4a,4b], got {other:?}"))),
        }
        let mut skips = Vec::with_capacity(2);
        let mut y = x;
        for (a, b, attn) in &self.enc {
            y = a.forward(s, y)?;
            y = b.forward(s, y)?;
            y = attn.forward(s, y, emb)?;
            skips.push(y);
            y = s.tape.max_pool2(y)?;
        }
        y = self.mid.0.forward(s, y)?;
        y = self.mid.1.forward(s, y)?;
        for ((up, (a, b, attn)), skip) in self.up.iter().zip(&self.dec).zip(skips.into_iter().rev()) {
            y = up.forward(s, y)?;
            y = s.tape.concat(&[y, skip], 1)?;
            y = a.forward(s, y)?;
            y = b.forward(s, y)?;
            y = attn.forward(s, y, emb)?;
        }
        let delta = self.head.forward(s, y)?;
        let logit = s.tape.value(x).data().iter().map(|&v| {
            let v = v.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
            (v / (1.0 - v)).ln()
        });
        let logit = s.input(Tensor::new(shape, logit.collect())?);
        let z = s.tape.add(delta, logit)?;
        Ok(s.tape.sigmoid(z))
    }
}
