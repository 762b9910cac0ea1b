use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor, Var};
use crate::image::{resize_bilinear, Image};
use crate::patch::{crop_patches, select_ranked, Patch, SelectMode};
use crate::rng::{derive_seed, rng};
use crate::srm::extract_fingerprint;

use super::layers::Session;
use super::nets::{EnhancementUnet, PerceptionModule, SspClassifier, TaskEmbeddings};
use super::ModelError;

pub const SSP_PREFIX: &str = "ssp.";
/// Classifier inputs are expressed in 8-bit levels.
pub const INPUT_SCALE: f32 = 255.0;
pub const FRONT_PREFIX: &str = "essp.";

/// Everything that decides which pixels reach the classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Side the image is resized to, and the patch is upsampled back to.
    pub image_size: usize,
    pub patch_size: usize,
    pub crops: usize,
    pub select: SelectMode,
    /// Patches stacked along channels; the classifier takes `3 * top_k`.
    pub top_k: usize,
    /// `false` feeds the raw upsampled patch instead of its residuals.
    pub use_srm: bool,
    /// Crop seed used when scoring.
    pub crop_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            image_size: 256,
            patch_size: 32,
            crops: 64,
            select: SelectMode::Simplest,
            top_k: 1,
            use_srm: true,
            crop_seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.image_size == 0 || !self.image_size.is_multiple_of(16) {
            return fail(format!("image size {} must be a positive multiple of 16", self.image_size));
        }
        if self.patch_size < 4 || !self.patch_size.is_multiple_of(4) || self.patch_size > self.image_size {
            return fail(format!("patch size {} must be a multiple of 4 in [4, image size]", self.patch_size));
        }
        if self.top_k == 0 || self.crops < self.top_k {
            return fail(format!("need 1 <= top_k ({}) <= crops ({})", self.top_k, self.crops));
        }
        Ok(())
    }

    pub fn classifier_channels(&self) -> usize {
        3 * self.top_k
    }
}

/// Which front end scores an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Ssp,
    Essp,
}

/// Architecture choices that must be known before parameters are created.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub pipeline: PipelineConfig,
    /// Present once an enhancement front end has been attached.
    pub front: Option<FrontSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontSpec {
    /// `false` replaces the fused embedding by the reconstruction embedding.
    pub use_perception: bool,
}

/// Three-channel copy at the pipeline's working resolution.
pub fn prepare_image(img: &Image, size: usize) -> Result<Image, ModelError> {
    let rgb = match img.channels() {
        3 => img.clone(),
        _ => {
            let data = img.data().iter().flat_map(|&v| [v, v, v]).collect();
            Image::new(img.height(), img.width(), 3, data)?
        }
    };
    if rgb.height() == size && rgb.width() == size {
        Ok(rgb)
    } else {
        Ok(resize_bilinear(&rgb, size, size)?)
    }
}

/// Crops candidates from an image already at working resolution and keeps
/// the `top_k` best under the selection mode.
pub fn choose_patches(prepared: &Image, cfg: &PipelineConfig, crop_seed: u64) -> Result<Vec<Patch>, ModelError> {
    let candidates = crop_patches(prepared, cfg.patch_size, cfg.crops, crop_seed)?;
    Ok(select_ranked(&candidates, cfg.select, cfg.top_k)?)
}

/// Classifier input for one image: each patch upsampled to the working size
/// and, unless disabled, replaced by its residual planes, in units of
/// [`INPUT_SCALE`]. Channel-major, `3k × S × S`.
pub fn classifier_input(patches: &[Patch], cfg: &PipelineConfig) -> Result<Vec<f32>, ModelError> {
    let s = cfg.image_size;
    let mut out = Vec::with_capacity(3 * patches.len() * s * s);
    for p in patches {
        let up = crate::patch::upsample_patch(p, s, s)?;
        if cfg.use_srm {
            out.extend(extract_fingerprint(&up).data().iter().map(|v| v * INPUT_SCALE));
        } else {
            out.extend(up.to_planar().into_iter().map(|v| v * INPUT_SCALE));
        }
    }
    Ok(out)
}

/// `[N, 3, M, M]` tensor of equally sized three-channel patches.
pub fn patch_tensor(patches: &[Patch]) -> Result<Tensor<f32>, ModelError> {
    let first = patches.first().ok_or(crate::patch::PatchError::EmptyInput)?;
    let m = first.size();
    let mut data = Vec::with_capacity(patches.len() * 3 * m * m);
    for p in patches {
        if p.size() != m || p.channels() != 3 {
            return Err(ModelError::Shape(format!("patch {}x{}x{} in a batch of {m}x{m}x3", p.size(), p.size(), p.channels())));
        }
        data.extend(p.pixels().to_planar());
    }
    Ok(Tensor::new(vec![patches.len(), 3, m, m], data)?)
}

/// Inverse of [`patch_tensor`], keeping each template's origin.
pub fn tensor_patches(t: &Tensor<f32>, templates: &[Patch]) -> Result<Vec<Patch>, ModelError> {
    let &[n, 3, m, _] = t.shape() else {
        return Err(ModelError::Shape(format!("expected [N,3,M,M], got {:?}", t.shape())));
    };
    if n != templates.len() {
        return Err(ModelError::Shape(format!("{n} patches for {} templates", templates.len())));
    }
    let mut out = Vec::with_capacity(n);
    for (i, tpl) in templates.iter().enumerate() {
        let planar: Vec<f32> = t.data()[i * 3 * m * m..(i + 1) * 3 * m * m].iter().map(|v| v.clamp(0.0, 1.0)).collect();
        out.push(tpl.with_pixels(Image::from_planar(m, m, 3, &planar)?)?);
    }
    Ok(out)
}

/// Perception, task embeddings and enhancement network.
#[derive(Clone, Debug)]
pub struct EnhancementFront {
    pub perception: PerceptionModule,
    pub embeddings: TaskEmbeddings,
    pub unet: EnhancementUnet,
    pub use_perception: bool,
}

/// Tape values of one front-end pass.
pub struct FrontPass {
    /// Per-component perception output, absent without perception.
    pub w_prime: Option<Var>,
    pub h_fus: Var,
    pub enhanced: Var,
}

impl EnhancementFront {
    pub fn new(store: &mut ParamStore<f32>, spec: FrontSpec, seed: u64) -> Self {
        let mut r = rng(derive_seed(seed, &[INIT_STREAM, 1]));
        EnhancementFront {
            perception: PerceptionModule::new(store, "essp.perception", &mut r),
            embeddings: TaskEmbeddings::new(store, "essp.embed", &mut r),
            unet: EnhancementUnet::new(store, "essp.unet", &mut r),
            use_perception: spec.use_perception,
        }
    }

    /// `x: [N, 3, M, M]` patches.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<FrontPass, ModelError> {
        let n = s.tape.shape(x)[0];
        let (w_prime, h_fus) = if self.use_perception {
            let w = self.perception.forward(s, x)?;
            let w_bar = s.tape.l1_normalize(w);
            (Some(w), self.embeddings.fuse(s, w_bar)?)
        } else {
            let rec = s.input(Tensor::new(vec![n, 3], [0.0, 0.0, 1.0].repeat(n))?);
            (None, self.embeddings.fuse(s, rec)?)
        };
        let enhanced = self.unet.forward(s, x, h_fus)?;
        Ok(FrontPass { w_prime, h_fus, enhanced })
    }
}

const INIT_STREAM: u64 = 0x1217;

/// Classifier plus optional enhancement front end over one parameter store.
#[derive(Clone, Debug)]
pub struct Detector {
    pub config: PipelineConfig,
    pub store: ParamStore<f32>,
    pub classifier: SspClassifier,
    pub front: Option<EnhancementFront>,
}

impl Detector {
    /// Freshly initialized detector; initialization is a function of `seed`.
    pub fn new(spec: &DetectorSpec, seed: u64) -> Result<Self, ModelError> {
        spec.pipeline.validate()?;
        let mut store = ParamStore::new();
        let mut r = rng(derive_seed(seed, &[INIT_STREAM, 0]));
        let classifier = SspClassifier::new(&mut store, "ssp", spec.pipeline.classifier_channels(), &mut r);
        let mut d = Detector { config: spec.pipeline.clone(), store, classifier, front: None };
        if let Some(f) = spec.front {
            d.attach_front(f, seed);
        }
        Ok(d)
    }

    pub fn spec(&self) -> DetectorSpec {
        DetectorSpec {
            pipeline: self.config.clone(),
            front: self.front.as_ref().map(|f| FrontSpec { use_perception: f.use_perception }),
        }
    }

    /// Adds (or re-initializes) the enhancement front end.
    pub fn attach_front(&mut self, spec: FrontSpec, seed: u64) {
        self.front = Some(EnhancementFront::new(&mut self.store, spec, seed));
    }

    pub fn front(&self) -> Result<&EnhancementFront, ModelError> {
        self.front.as_ref().ok_or(ModelError::MissingFront)
    }

    /// Classifier probabilities `[N, 1]` for `n` stacked classifier inputs.
    pub fn classify(&self, s: &mut Session, inputs: Vec<f32>, n: usize) -> Result<Var, ModelError> {
        let sz = self.config.image_size;
        let x = s.input(Tensor::new(vec![n, self.config.classifier_channels(), sz, sz], inputs)?);
        self.classifier.forward(s, x)
    }

    /// Patches that reach the classifier for `img` under the scoring seed.
    pub fn select(&self, img: &Image) -> Result<Vec<Patch>, ModelError> {
        let prepared = prepare_image(img, self.config.image_size)?;
        choose_patches(&prepared, &self.config, self.config.crop_seed)
    }

    pub fn score_patches(&self, patches: &[Patch]) -> Result<f32, ModelError> {
        let mut s = Session::inference(&self.store);
        let input = classifier_input(patches, &self.config)?;
        let p = self.classify(&mut s, input, 1)?;
        Ok(s.tape.value(p).data()[0])
    }

    /// Restores patches with the front end; returns them with the
    /// perception output, if any.
    pub fn enhance(&self, patches: &[Patch]) -> Result<(Vec<Patch>, Option<Vec<[f32; 3]>>), ModelError> {
        let front = self.front()?;
        let mut s = Session::inference(&self.store);
        let x = s.input(patch_tensor(patches)?);
        let pass = front.forward(&mut s, x)?;
        let restored = tensor_patches(s.tape.value(pass.enhanced), patches)?;
        let w = pass.w_prime.map(|w| s.tape.value(w).data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect());
        Ok((restored, w))
    }

    /// Probability that `img` is real, from its selected patch(es).
    pub fn ssp_forward(&self, img: &Image) -> Result<f32, ModelError> {
        self.score_patches(&self.select(img)?)
    }

    /// As [`Detector::ssp_forward`], with the selected patches restored by
    /// the front end before upsampling.
    pub fn essp_forward(&self, img: &Image) -> Result<f32, ModelError> {
        let (restored, _) = self.enhance(&self.select(img)?)?;
        self.score_patches(&restored)
    }

    pub fn score(&self, img: &Image, mode: ScoreMode) -> Result<f32, ModelError> {
        match mode {
            ScoreMode::Ssp => self.ssp_forward(img),
            ScoreMode::Essp => self.essp_forward(img),
        }
    }
}
