//! The translation/segmentation backbone: two residual generators, two
//! patch discriminators, a feature discriminator, and a segmentor that
//! shares the target generator's encoder.
//!
//! Generators predict a residual: the output is `clamp(x + delta, -1, 1)`,
//! so a zero-initialized final kernel makes the generator an exact
//! identity at the start of training. All adversarial losses are
//! least-squares on raw score maps with real labelled 1 and fake 0.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inspector::{Inspector, InspectorConfig};
use crate::nn::layers::{conv, instance_norm, Layer, Sequential, Tape};
use crate::nn::{Feat, Float, ParamStore};
use crate::rng::{streams, StreamRng};

/// Trade-off weights of the overall objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_cyc: f64,
    pub lambda_seg: f64,
    pub lambda_adv: f64,
    pub lambda_i: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_cyc: 10.0,
            lambda_seg: 0.1,
            lambda_adv: 0.1,
            lambda_i: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_cyc, self.lambda_seg, self.lambda_adv, self.lambda_i];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Architecture scale. The component topology is fixed; these knobs only
/// size it for desk-scale runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelCfg {
    pub image_side: usize,
    pub class_count: u8,
    pub gen_base: usize,
    pub gen_res_blocks: usize,
    /// Zero-init the generators' final kernels (identity at start).
    pub gen_zero_init_head: bool,
    pub disc_base: usize,
    pub disc_layers: usize,
    pub seg_head_ch: usize,
    pub inspector_base: usize,
    pub inspector_depth: usize,
}

impl Default for ModelCfg {
    fn default() -> Self {
        ModelCfg {
            image_side: 128,
            class_count: 3,
            gen_base: 12,
            gen_res_blocks: 3,
            gen_zero_init_head: true,
            disc_base: 12,
            disc_layers: 3,
            seg_head_ch: 16,
            inspector_base: 12,
            inspector_depth: 4,
        }
    }
}

impl ModelCfg {
    pub fn validate(&self) -> Result<()> {
        if self.image_side == 0 || self.image_side % 4 != 0 {
            return Err(Error::config("image_side must be a positive multiple of 4"));
        }
        if self.class_count < 2 {
            return Err(Error::config("class_count must be at least 2"));
        }
        if self.gen_base == 0
            || self.disc_base == 0
            || self.seg_head_ch == 0
            || self.inspector_base == 0
            || self.disc_layers == 0
            || self.inspector_depth == 0
        {
            return Err(Error::config("model channel/layer counts must be positive"));
        }
        Ok(())
    }

    /// Channels of the generator encoder output (two stride-2 stages).
    pub fn enc_channels(&self) -> usize {
        self.gen_base * 4
    }
}

/// A network architecture bound to its parameter store.
pub struct Net<F: Float> {
    pub arch: Sequential,
    pub store: ParamStore<F>,
}

impl<F: Float> Net<F> {
    pub fn forward(&self, x: Feat<F>) -> Feat<F> {
        self.arch.forward(&self.store, x)
    }

    pub fn forward_t(&self, x: Feat<F>) -> (Feat<F>, Tape<F>) {
        self.arch.forward_t(&self.store, x)
    }

    pub fn backward(&mut self, tape: &Tape<F>, gout: Feat<F>, accum: bool) -> Feat<F> {
        self.arch.backward(&mut self.store, tape, gout, accum)
    }

    pub fn backward_params_only(&mut self, tape: &Tape<F>, gout: Feat<F>, accum: bool) {
        self.arch
            .backward_params_only(&mut self.store, tape, gout, accum)
    }
}

fn img_to_feat<F: Float>(x: &Array2<F>) -> Feat<F> {
    let (h, w) = x.dim();
    x.to_owned().into_shape_with_order((1, h, w)).unwrap()
}

fn feat_to_img<F: Float>(x: Feat<F>) -> Array2<F> {
    let (_, h, w) = x.dim();
    x.into_shape_with_order((h, w)).unwrap()
}

/// Residual translation generator.
pub struct Generator<F: Float> {
    pub encoder: Net<F>,
    pub decoder: Net<F>,
}

pub struct GenTape<F: Float> {
    enc: Tape<F>,
    dec: Tape<F>,
    /// Pre-clamp output, for the hard-tanh backward mask.
    pre: Feat<F>,
}

impl<F: Float> Generator<F> {
    pub fn translate(&self, x: &Array2<F>) -> Array2<F> {
        self.translate_t(x).0
    }

    pub fn translate_t(&self, x: &Array2<F>) -> (Array2<F>, GenTape<F>) {
        let x3 = img_to_feat(x);
        let (feats, enc) = self.encoder.forward_t(x3.clone());
        let (delta, dec) = self.decoder.forward_t(feats);
        let pre = x3 + &delta;
        let one = F::one();
        let out = pre.mapv(|v| v.max(-one).min(one));
        (feat_to_img(out), GenTape { enc, dec, pre })
    }

    /// Backward through decoder, encoder, and the residual skip. Returns
    /// the gradient with respect to the input image.
    pub fn backward(&mut self, tape: &GenTape<F>, gout: &Array2<F>, accum: bool) -> Array2<F> {
        let one = F::one();
        let mut g_pre = img_to_feat(gout);
        g_pre.zip_mut_with(&tape.pre, |g, &p| {
            if p.abs() >= one {
                *g = F::zero();
            }
        });
        let g_feats = self.decoder.backward(&tape.dec, g_pre.clone(), accum);
        let g_enc = self.encoder.backward(&tape.enc, g_feats, accum);
        feat_to_img(g_enc + &g_pre)
    }

    /// Backward when the caller discards the input gradient.
    pub fn backward_params_only(&mut self, tape: &GenTape<F>, gout: &Array2<F>, accum: bool) {
        let one = F::one();
        let mut g_pre = img_to_feat(gout);
        g_pre.zip_mut_with(&tape.pre, |g, &p| {
            if p.abs() >= one {
                *g = F::zero();
            }
        });
        let g_feats = self.decoder.backward(&tape.dec, g_pre, accum);
        self.encoder.backward_params_only(&tape.enc, g_feats, accum);
    }

    pub fn zero_grads(&mut self) {
        self.encoder.store.zero_grads();
        self.decoder.store.zero_grads();
    }
}

/// Translation direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    S2T,
    T2S,
}

/// Which image discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscKind {
    DS,
    DT,
}

fn build_generator<F: Float>(
    cfg: &ModelCfg,
    name: &str,
    rng: &mut StreamRng,
) -> Generator<F> {
    let b = cfg.gen_base;
    let mut enc_store = ParamStore::new(format!("{name}.enc"));
    let mut enc_layers = vec![
        conv(&mut enc_store, rng, "stem", 1, b, 3, 1, 1, 1.0),
        instance_norm(&mut enc_store, "stem_norm", b),
        Layer::Relu,
        conv(&mut enc_store, rng, "down0", b, 2 * b, 3, 2, 1, 1.0),
        instance_norm(&mut enc_store, "down0_norm", 2 * b),
        Layer::Relu,
        conv(&mut enc_store, rng, "down1", 2 * b, 4 * b, 3, 2, 1, 1.0),
        instance_norm(&mut enc_store, "down1_norm", 4 * b),
        Layer::Relu,
    ];
    for i in 0..cfg.gen_res_blocks {
        let inner = Sequential::new(vec![
            conv(&mut enc_store, rng, &format!("res{i}.c0"), 4 * b, 4 * b, 3, 1, 1, 1.0),
            instance_norm(&mut enc_store, &format!("res{i}.n0"), 4 * b),
            Layer::Relu,
            conv(&mut enc_store, rng, &format!("res{i}.c1"), 4 * b, 4 * b, 3, 1, 1, 1.0),
            instance_norm(&mut enc_store, &format!("res{i}.n1"), 4 * b),
        ]);
        enc_layers.push(Layer::Residual(inner));
    }
    let encoder = Net {
        arch: Sequential::new(enc_layers),
        store: enc_store,
    };

    let mut dec_store = ParamStore::new(format!("{name}.dec"));
    let head_gain = if cfg.gen_zero_init_head { 0.0 } else { 1.0 };
    let dec_layers = vec![
        Layer::Upsample { factor: 2 },
        conv(&mut dec_store, rng, "up0", 4 * b, 2 * b, 3, 1, 1, 1.0),
        instance_norm(&mut dec_store, "up0_norm", 2 * b),
        Layer::Relu,
        Layer::Upsample { factor: 2 },
        conv(&mut dec_store, rng, "up1", 2 * b, b, 3, 1, 1, 1.0),
        instance_norm(&mut dec_store, "up1_norm", b),
        Layer::Relu,
        conv(&mut dec_store, rng, "head", b, 1, 3, 1, 1, head_gain),
    ];
    let decoder = Net {
        arch: Sequential::new(dec_layers),
        store: dec_store,
    };
    Generator { encoder, decoder }
}

fn build_discriminator<F: Float>(cfg: &ModelCfg, name: &str, rng: &mut StreamRng) -> Net<F> {
    let b = cfg.disc_base;
    let mut store = ParamStore::new(name);
    let mut layers = Vec::new();
    let mut in_ch = 1;
    for i in 0..cfg.disc_layers {
        let out_ch = b << i.min(3);
        layers.push(conv(&mut store, rng, &format!("c{i}"), in_ch, out_ch, 4, 2, 1, 1.0));
        if i > 0 {
            layers.push(instance_norm(&mut store, &format!("n{i}"), out_ch));
        }
        layers.push(Layer::LeakyRelu { slope: 0.2 });
        in_ch = out_ch;
    }
    layers.push(conv(&mut store, rng, "score", in_ch, 1, 4, 1, 1, 1.0));
    Net {
        arch: Sequential::new(layers),
        store,
    }
}

fn build_feature_disc<F: Float>(cfg: &ModelCfg, rng: &mut StreamRng) -> Net<F> {
    let c = cfg.enc_channels();
    let mut store = ParamStore::new("d_f");
    let layers = vec![
        conv(&mut store, rng, "c0", c, c, 3, 2, 1, 1.0),
        Layer::LeakyRelu { slope: 0.2 },
        conv(&mut store, rng, "c1", c, c, 3, 2, 1, 1.0),
        Layer::LeakyRelu { slope: 0.2 },
        conv(&mut store, rng, "score", c, 1, 1, 1, 0, 1.0),
    ];
    Net {
        arch: Sequential::new(layers),
        store,
    }
}

fn build_seg_head<F: Float>(cfg: &ModelCfg, rng: &mut StreamRng) -> Net<F> {
    let c = cfg.enc_channels();
    let h = cfg.seg_head_ch;
    let mut store = ParamStore::new("seg_head");
    let layers = vec![
        conv(&mut store, rng, "c0", c, h, 3, 1, 1, 1.0),
        instance_norm(&mut store, "n0", h),
        Layer::Relu,
        Layer::Upsample { factor: 2 },
        conv(&mut store, rng, "c1", h, h, 3, 1, 1, 1.0),
        instance_norm(&mut store, "n1", h),
        Layer::Relu,
        Layer::Upsample { factor: 2 },
        conv(&mut store, rng, "c2", h, h, 3, 1, 1, 1.0),
        instance_norm(&mut store, "n2", h),
        Layer::Relu,
        conv(&mut store, rng, "logits", h, cfg.class_count as usize, 1, 1, 0, 1.0),
    ];
    Net {
        arch: Sequential::new(layers),
        store,
    }
}

/// Image-classifier-shaped domain scorer for the baseline protocols:
/// stride-2 conv stack ending in a single-channel map that the caller
/// average-pools to one logit.
fn build_global_classifier<F: Float>(cfg: &ModelCfg, rng: &mut StreamRng) -> Net<F> {
    let b = cfg.inspector_base;
    let mut store = ParamStore::new("baseline_inspector");
    let mut layers = Vec::new();
    let mut in_ch = 1;
    for i in 0..4 {
        let out_ch = b << i.min(3);
        layers.push(conv(&mut store, rng, &format!("c{i}"), in_ch, out_ch, 3, 2, 1, 1.0));
        layers.push(Layer::LeakyRelu { slope: 0.2 });
        in_ch = out_ch;
    }
    layers.push(conv(&mut store, rng, "score", in_ch, 1, 1, 1, 0, 1.0));
    Net {
        arch: Sequential::new(layers),
        store,
    }
}

pub struct InspectorNet<F: Float> {
    pub arch: Inspector,
    pub store: ParamStore<F>,
}

/// All networks of one run. The segmentor is the `g_t2s` encoder plus
/// `seg_head`: there is no separate copy of the encoder parameters, so
/// weight sharing holds by construction.
pub struct ModelBundle<F: Float> {
    pub cfg: ModelCfg,
    pub g_s2t: Generator<F>,
    pub g_t2s: Generator<F>,
    pub d_s: Option<Net<F>>,
    pub d_t: Option<Net<F>>,
    pub d_f: Option<Net<F>>,
    pub seg_head: Net<F>,
    pub inspector: Option<InspectorNet<F>>,
    /// Global-score domain classifier used by the mixup/cutmix baselines.
    pub baseline_inspector: Option<Net<F>>,
}

/// Which optional parts of the bundle to construct.
#[derive(Debug, Clone, Copy)]
pub struct BundleOptions {
    pub with_image_discs: bool,
    pub with_inspector: bool,
    pub with_feature_disc: bool,
    pub with_baseline_inspector: bool,
    /// Mask/inspector grid side.
    pub k: usize,
}

impl Default for BundleOptions {
    fn default() -> Self {
        BundleOptions {
            with_image_discs: true,
            with_inspector: true,
            with_feature_disc: true,
            with_baseline_inspector: false,
            k: 8,
        }
    }
}

impl<F: Float> ModelBundle<F> {
    pub fn build(cfg: &ModelCfg, opts: &BundleOptions, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let g_s2t = build_generator(cfg, "g_s2t", &mut StreamRng::new(seed, streams::INIT_G_S2T));
        let g_t2s = build_generator(cfg, "g_t2s", &mut StreamRng::new(seed, streams::INIT_G_T2S));
        let (d_s, d_t) = if opts.with_image_discs {
            (
                Some(build_discriminator(
                    cfg,
                    "d_s",
                    &mut StreamRng::new(seed, streams::INIT_D_S),
                )),
                Some(build_discriminator(
                    cfg,
                    "d_t",
                    &mut StreamRng::new(seed, streams::INIT_D_T),
                )),
            )
        } else {
            (None, None)
        };
        let d_f = opts
            .with_feature_disc
            .then(|| build_feature_disc(cfg, &mut StreamRng::new(seed, streams::INIT_D_F)));
        let seg_head = build_seg_head(cfg, &mut StreamRng::new(seed, streams::INIT_SEG_HEAD));
        let baseline_inspector = opts.with_baseline_inspector.then(|| {
            build_global_classifier(cfg, &mut StreamRng::new(seed, streams::INIT_INSPECTOR))
        });
        let inspector = if opts.with_inspector {
            let icfg = InspectorConfig {
                k: opts.k,
                image_side: cfg.image_side,
                base_channels: cfg.inspector_base,
                depth: cfg.inspector_depth,
            };
            let mut store = ParamStore::new("inspector");
            let arch = Inspector::build(
                icfg,
                &mut store,
                &mut StreamRng::new(seed, streams::INIT_INSPECTOR),
                false,
            )?;
            Some(InspectorNet { arch, store })
        } else {
            None
        };
        Ok(ModelBundle {
            cfg: *cfg,
            g_s2t,
            g_t2s,
            d_s,
            d_t,
            d_f,
            seg_head,
            inspector,
            baseline_inspector,
        })
    }

    /// Image translation in either direction.
    pub fn translate(&self, image: &Array2<F>, direction: Direction) -> Result<Array2<F>> {
        self.check_image(image)?;
        let gen = match direction {
            Direction::S2T => &self.g_s2t,
            Direction::T2S => &self.g_t2s,
        };
        Ok(gen.translate(image))
    }

    /// Patch score map of an image discriminator.
    pub fn discriminate(&self, image: &Array2<F>, which: DiscKind) -> Result<Feat<F>> {
        self.check_image(image)?;
        let net = match which {
            DiscKind::DS => self.d_s.as_ref(),
            DiscKind::DT => self.d_t.as_ref(),
        };
        let net = net.ok_or_else(|| {
            Error::config("image discriminator not constructed in this configuration")
        })?;
        Ok(net.forward(img_to_feat(image)))
    }

    /// Per-class probability map from the segmentor (shared encoder plus
    /// convolutional head, softmax over classes).
    pub fn segment(&self, image: &Array2<F>) -> Result<Feat<F>> {
        self.check_image(image)?;
        let feats = self.g_t2s.encoder.forward(img_to_feat(image));
        let logits = self.seg_head.forward(feats);
        Ok(softmax_channels(&logits))
    }

    /// Argmax class map.
    pub fn predict_classes(&self, image: &Array2<F>) -> Result<Array2<u8>> {
        let probs = self.segment(image)?;
        let (c, h, w) = probs.dim();
        Ok(Array2::from_shape_fn((h, w), |(y, x)| {
            let mut best = 0usize;
            for ci in 1..c {
                if probs[(ci, y, x)] > probs[(best, y, x)] {
                    best = ci;
                }
            }
            best as u8
        }))
    }

    fn check_image(&self, image: &Array2<F>) -> Result<()> {
        let s = self.cfg.image_side;
        if image.dim() != (s, s) {
            return Err(Error::dimension(format!(
                "image is {:?}, model expects {s}x{s}",
                image.dim()
            )));
        }
        Ok(())
    }

    /// Stores in a stable order, for checkpointing and hashing.
    pub fn stores(&self) -> Vec<&ParamStore<F>> {
        let mut v = vec![
            &self.g_s2t.encoder.store,
            &self.g_s2t.decoder.store,
            &self.g_t2s.encoder.store,
            &self.g_t2s.decoder.store,
        ];
        if let Some(d) = &self.d_s {
            v.push(&d.store);
        }
        if let Some(d) = &self.d_t {
            v.push(&d.store);
        }
        if let Some(d) = &self.d_f {
            v.push(&d.store);
        }
        v.push(&self.seg_head.store);
        if let Some(i) = &self.inspector {
            v.push(&i.store);
        }
        if let Some(b) = &self.baseline_inspector {
            v.push(&b.store);
        }
        v
    }

    pub fn stores_mut(&mut self) -> Vec<&mut ParamStore<F>> {
        let mut v = vec![
            &mut self.g_s2t.encoder.store,
            &mut self.g_s2t.decoder.store,
            &mut self.g_t2s.encoder.store,
            &mut self.g_t2s.decoder.store,
        ];
        if let Some(d) = &mut self.d_s {
            v.push(&mut d.store);
        }
        if let Some(d) = &mut self.d_t {
            v.push(&mut d.store);
        }
        if let Some(d) = &mut self.d_f {
            v.push(&mut d.store);
        }
        v.push(&mut self.seg_head.store);
        if let Some(i) = &mut self.inspector {
            v.push(&mut i.store);
        }
        if let Some(b) = &mut self.baseline_inspector {
            v.push(&mut b.store);
        }
        v
    }
}

/// Softmax over the channel axis, numerically stable.
pub fn softmax_channels<F: Float>(logits: &Feat<F>) -> Feat<F> {
    let (c, h, w) = logits.dim();
    let mut out = Array3::<F>::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            let mut m = logits[(0, y, x)];
            for ci in 1..c {
                m = m.max(logits[(ci, y, x)]);
            }
            let mut s = F::zero();
            for ci in 0..c {
                let e = (logits[(ci, y, x)] - m).exp();
                out[(ci, y, x)] = e;
                s += e;
            }
            for ci in 0..c {
                out[(ci, y, x)] = out[(ci, y, x)] / s;
            }
        }
    }
    out
}

/// Least-squares adversarial loss against a constant target. Returns the
/// mean squared error and its gradient on the score map.
pub fn lsgan_loss<F: Float>(scores: &Feat<F>, target: f64) -> (f64, Feat<F>) {
    let t = F::from_f64(target);
    let n = F::from_f64(scores.len() as f64);
    let two = F::from_f64(2.0);
    let mut value = F::zero();
    let grad = scores.mapv(|s| {
        let d = s - t;
        value += d * d / n;
        two * d / n
    });
    (value.as_f64(), grad)
}

/// Both round-trip reconstruction errors, summed. Returns the loss and
/// the gradients on the two reconstructions.
pub fn cycle_loss<F: Float>(
    rec_s: &Array2<F>,
    src: &Array2<F>,
    rec_t: &Array2<F>,
    tgt: &Array2<F>,
) -> Result<(f64, Array2<F>, Array2<F>)> {
    if rec_s.dim() != src.dim() || rec_t.dim() != tgt.dim() {
        return Err(Error::dimension("cycle loss shape mismatch".to_string()));
    }
    let dir = |rec: &Array2<F>, orig: &Array2<F>| {
        let n = F::from_f64(rec.len() as f64);
        let mut acc = F::zero();
        let grad = Array2::from_shape_fn(rec.dim(), |idx| {
            let d = rec[idx] - orig[idx];
            acc += d.abs() / n;
            if d > F::zero() {
                F::one() / n
            } else if d < F::zero() {
                -F::one() / n
            } else {
                F::zero()
            }
        });
        (acc.as_f64(), grad)
    };
    let (ls, gs) = dir(rec_s, src);
    let (lt, gt) = dir(rec_t, tgt);
    Ok((ls + lt, gs, gt))
}

/// Segmentation loss value with its two components.
#[derive(Debug, Clone, Copy)]
pub struct SegLoss {
    pub value: f64,
    pub cross_entropy: f64,
    pub soft_dice: f64,
}

/// Pixel-wise cross-entropy plus (1 - mean soft Dice), equally weighted.
/// Returns the loss and its gradient on the logits.
pub fn seg_loss<F: Float>(logits: &Feat<F>, y: &Array2<u8>) -> Result<(SegLoss, Feat<F>)> {
    let (c, h, w) = logits.dim();
    if y.dim() != (h, w) {
        return Err(Error::dimension(format!(
            "label map {:?} vs logits spatial {:?}",
            y.dim(),
            (h, w)
        )));
    }
    if let Some(&bad) = y.iter().find(|&&v| v as usize >= c) {
        return Err(Error::validation(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let probs = softmax_channels(logits);
    let n_pix = F::from_f64((h * w) as f64);
    let eps = 1e-6;

    // Cross-entropy and its gradient (softmax - one-hot) / n.
    let mut ce = F::zero();
    let mut d_logits = Array3::<F>::zeros((c, h, w));
    for yy in 0..h {
        for xx in 0..w {
            let cls = y[(yy, xx)] as usize;
            let p = probs[(cls, yy, xx)].max(F::from_f64(1e-30));
            ce += -(p.ln()) / n_pix;
            for ci in 0..c {
                let indicator = if ci == cls { F::one() } else { F::zero() };
                d_logits[(ci, yy, xx)] = (probs[(ci, yy, xx)] - indicator) / n_pix;
            }
        }
    }

    // Soft Dice per class over probabilities.
    let mut dice_mean = 0.0f64;
    let mut q = Array3::<F>::zeros((c, h, w)); // dL/dprobs for the dice term
    for ci in 0..c {
        let mut num = eps;
        let mut den = eps;
        for yy in 0..h {
            for xx in 0..w {
                let p = probs[(ci, yy, xx)].as_f64();
                let g = f64::from(y[(yy, xx)] as usize == ci);
                num += 2.0 * p * g;
                den += p + g;
            }
        }
        dice_mean += num / den / c as f64;
        // d(1 - mean dice)/dp = -(2g*den - num) / den^2 / C
        for yy in 0..h {
            for xx in 0..w {
                let g = f64::from(y[(yy, xx)] as usize == ci);
                let dd = -(2.0 * g * den - num) / (den * den) / c as f64;
                q[(ci, yy, xx)] = F::from_f64(dd);
            }
        }
    }
    // Chain dice gradient through the softmax.
    for yy in 0..h {
        for xx in 0..w {
            let mut dot = F::zero();
            for ci in 0..c {
                dot += q[(ci, yy, xx)] * probs[(ci, yy, xx)];
            }
            for ci in 0..c {
                let add = probs[(ci, yy, xx)] * (q[(ci, yy, xx)] - dot);
                d_logits[(ci, yy, xx)] += add;
            }
        }
    }

    let loss = SegLoss {
        value: ce.as_f64() + (1.0 - dice_mean),
        cross_entropy: ce.as_f64(),
        soft_dice: dice_mean,
    };
    Ok((loss, d_logits))
}

/// Generator-side feature alignment loss: push the discriminator's scores
/// on these encoder features toward "reference stream" (1). Returns the
/// loss and its gradient on the features. The discriminator itself stays
/// frozen (no parameter gradients accumulate).
pub fn feature_adv_loss<F: Float>(d_f: &mut Net<F>, feats: &Feat<F>) -> (f64, Feat<F>) {
    let (scores, tape) = d_f.forward_t(feats.clone());
    let (value, d_scores) = lsgan_loss(&scores, 1.0);
    let g = d_f.backward(&tape, d_scores, false);
    (value, g)
}

/// The scalar sub-losses of the overall objective.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub l_adv_t: f64,
    pub l_adv_s: f64,
    pub l_cyc: f64,
    pub l_seg: f64,
    pub l_feat: f64,
}

/// `L = L_adv_T + L_adv_S + lambda_cyc*L_cyc + lambda_seg*L_seg +
/// lambda_adv*L_feat`.
pub fn total_objective(c: &LossComponents, w: &LossWeights) -> f64 {
    c.l_adv_t
        + c.l_adv_s
        + w.lambda_cyc * c.l_cyc
        + w.lambda_seg * c.l_seg
        + w.lambda_adv * c.l_feat
}

/// One iteration's raw inputs for the composite objective.
pub struct Eq1Batch<'a, F> {
    pub src: &'a Array2<F>,
    pub y_src: &'a Array2<u8>,
    pub tgt: &'a Array2<F>,
}

/// Forward-only evaluation of the composite objective (adversarial terms
/// in discriminator form: real scored against 1, fake against 0).
pub fn eq1_forward<F: Float>(
    bundle: &ModelBundle<F>,
    batch: &Eq1Batch<'_, F>,
) -> Result<LossComponents> {
    let d_s = bundle
        .d_s
        .as_ref()
        .ok_or_else(|| Error::config("composite objective needs D_S"))?;
    let d_t = bundle
        .d_t
        .as_ref()
        .ok_or_else(|| Error::config("composite objective needs D_T"))?;
    let fake_t = bundle.g_s2t.translate(batch.src);
    let fake_s = bundle.g_t2s.translate(batch.tgt);
    let rec_s = bundle.g_t2s.translate(&fake_t);
    let rec_t = bundle.g_s2t.translate(&fake_s);
    let l_adv_t = lsgan_loss(&d_t.forward(img_to_feat(&fake_t)), 0.0).0
        + lsgan_loss(&d_t.forward(img_to_feat(batch.tgt)), 1.0).0;
    let l_adv_s = lsgan_loss(&d_s.forward(img_to_feat(&fake_s)), 0.0).0
        + lsgan_loss(&d_s.forward(img_to_feat(batch.src)), 1.0).0;
    let (l_cyc, _, _) = cycle_loss(&rec_s, batch.src, &rec_t, batch.tgt)?;
    let feats_fake = bundle.g_t2s.encoder.forward(img_to_feat(&fake_t));
    let logits = bundle.seg_head.forward(feats_fake.clone());
    let (l_seg, _) = seg_loss(&logits, batch.y_src)?;
    let l_seg = l_seg.value;
    let d_f = bundle
        .d_f
        .as_ref()
        .ok_or_else(|| Error::config("composite objective needs D_f"))?;
    let feats_tgt = bundle.g_t2s.encoder.forward(img_to_feat(batch.tgt));
    let l_feat = lsgan_loss(&d_f.forward(feats_fake), 1.0).0
        + lsgan_loss(&d_f.forward(feats_tgt), 0.0).0;
    Ok(LossComponents {
        l_adv_t,
        l_adv_s,
        l_cyc,
        l_seg,
        l_feat,
    })
}

/// Backpropagate the composite objective through every network,
/// accumulating parameter gradients in all stores. This is the full
/// computation-graph derivative of [`eq1_forward`]'s scalar; the training
/// loop applies different per-network objectives, but the backward
/// machinery is shared and this composite is what gradient checks verify.
pub fn eq1_backward<F: Float>(
    bundle: &mut ModelBundle<F>,
    batch: &Eq1Batch<'_, F>,
    w: &LossWeights,
) -> Result<LossComponents> {
    if bundle.d_s.is_none() || bundle.d_t.is_none() || bundle.d_f.is_none() {
        return Err(Error::config("composite objective needs D_S, D_T, and D_f"));
    }
    let lam_cyc = F::from_f64(w.lambda_cyc);
    let lam_seg = F::from_f64(w.lambda_seg);
    let lam_adv = F::from_f64(w.lambda_adv);

    // Forward passes with tapes.
    let (fake_t, tp_s2t) = bundle.g_s2t.translate_t(batch.src);
    let (fake_s, tp_t2s) = bundle.g_t2s.translate_t(batch.tgt);
    let (rec_s, tp_rec_s) = bundle.g_t2s.translate_t(&fake_t);
    let (rec_t, tp_rec_t) = bundle.g_s2t.translate_t(&fake_s);

    let d_t_net = bundle.d_t.as_mut().unwrap();
    let (dt_fake, tp_dt_f) = d_t_net.forward_t(img_to_feat(&fake_t));
    let (dt_real, tp_dt_r) = d_t_net.forward_t(img_to_feat(batch.tgt));
    let (l_dt_f, g_dt_f) = lsgan_loss(&dt_fake, 0.0);
    let (l_dt_r, g_dt_r) = lsgan_loss(&dt_real, 1.0);
    let g_fake_t_adv = d_t_net.backward(&tp_dt_f, g_dt_f, true);
    d_t_net.backward(&tp_dt_r, g_dt_r, true);

    let d_s_net = bundle.d_s.as_mut().unwrap();
    let (ds_fake, tp_ds_f) = d_s_net.forward_t(img_to_feat(&fake_s));
    let (ds_real, tp_ds_r) = d_s_net.forward_t(img_to_feat(batch.src));
    let (l_ds_f, g_ds_f) = lsgan_loss(&ds_fake, 0.0);
    let (l_ds_r, g_ds_r) = lsgan_loss(&ds_real, 1.0);
    let g_fake_s_adv = d_s_net.backward(&tp_ds_f, g_ds_f, true);
    d_s_net.backward(&tp_ds_r, g_ds_r, true);

    let (l_cyc, d_rec_s, d_rec_t) = cycle_loss(&rec_s, batch.src, &rec_t, batch.tgt)?;

    // Segmentation and feature alignment share the encoder pass on fake_t.
    let (feats_fake, tp_enc_f) = bundle.g_t2s.encoder.forward_t(img_to_feat(&fake_t));
    let (logits, tp_head) = bundle.seg_head.forward_t(feats_fake.clone());
    let (l_seg, d_logits) = seg_loss(&logits, batch.y_src)?;
    let l_seg = l_seg.value;
    let d_f_net = bundle.d_f.as_mut().unwrap();
    let (df_fake, tp_df_f) = d_f_net.forward_t(feats_fake);
    let (l_df_f, g_df_f) = lsgan_loss(&df_fake, 1.0);
    let (feats_tgt, tp_enc_t) = bundle.g_t2s.encoder.forward_t(img_to_feat(batch.tgt));
    let (df_tgt, tp_df_t) = bundle.d_f.as_mut().unwrap().forward_t(feats_tgt);
    let (l_df_t, g_df_t) = lsgan_loss(&df_tgt, 0.0);

    // Backward: collect every gradient contribution on fake_t.
    let mut g_feats_fake = bundle
        .seg_head
        .backward(&tp_head, d_logits.mapv(|v| v * lam_seg), true);
    g_feats_fake += &bundle
        .d_f
        .as_mut()
        .unwrap()
        .backward(&tp_df_f, g_df_f.mapv(|v| v * lam_adv), true);
    let g_fake_t_seg = bundle.g_t2s.encoder.backward(&tp_enc_f, g_feats_fake, true);

    let g_fake_t_cyc = bundle
        .g_t2s
        .backward(&tp_rec_s, &d_rec_s.mapv(|v| v * lam_cyc), true);
    let mut g_fake_t = feat_to_img(g_fake_t_adv + &g_fake_t_seg);
    g_fake_t += &g_fake_t_cyc;
    bundle.g_s2t.backward(&tp_s2t, &g_fake_t, true);

    let g_fake_s_cyc = bundle
        .g_s2t
        .backward(&tp_rec_t, &d_rec_t.mapv(|v| v * lam_cyc), true);
    let mut g_fake_s = feat_to_img(g_fake_s_adv);
    g_fake_s += &g_fake_s_cyc;
    bundle.g_t2s.backward(&tp_t2s, &g_fake_s, true);

    // Target-stream feature alignment into the shared encoder.
    let g_feats_tgt = bundle
        .d_f
        .as_mut()
        .unwrap()
        .backward(&tp_df_t, g_df_t.mapv(|v| v * lam_adv), true);
    bundle.g_t2s.encoder.backward(&tp_enc_t, g_feats_tgt, true);

    Ok(LossComponents {
        l_adv_t: l_dt_f + l_dt_r,
        l_adv_s: l_ds_f + l_ds_r,
        l_cyc,
        l_seg,
        l_feat: l_df_f + l_df_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check::{relative_error};
    use crate::nn::AdamCfg;
    use ndarray::Array2;

    fn tiny_cfg() -> ModelCfg {
        ModelCfg {
            image_side: 16,
            class_count: 3,
            gen_base: 2,
            gen_res_blocks: 1,
            gen_zero_init_head: true,
            disc_base: 2,
            disc_layers: 2,
            seg_head_ch: 4,
            inspector_base: 2,
            inspector_depth: 2,
        }
    }

    fn opts() -> BundleOptions {
        BundleOptions {
            k: 4,
            ..BundleOptions::default()
        }
    }

    fn rand_image(side: usize, rng: &mut StreamRng) -> Array2<f64> {
        Array2::from_shape_simple_fn((side, side), || rng.uniform_in(-0.9, 0.9))
    }

    #[test]
    fn identity_initialized_generator_is_identity() {
        let bundle = ModelBundle::<f64>::build(&tiny_cfg(), &opts(), 3).unwrap();
        let mut rng = StreamRng::new(9, 100);
        let x = rand_image(16, &mut rng);
        let y = bundle.translate(&x, Direction::S2T).unwrap();
        let max_err = x
            .iter()
            .zip(y.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-6, "max deviation {max_err}");
    }

    #[test]
    fn translate_is_deterministic_and_in_range() {
        let cfg = ModelCfg {
            gen_zero_init_head: false,
            ..tiny_cfg()
        };
        let bundle = ModelBundle::<f32>::build(&cfg, &opts(), 4).unwrap();
        let mut rng = StreamRng::new(10, 101);
        let x = Array2::from_shape_simple_fn((16, 16), || rng.uniform_in(-1.0, 1.0) as f32);
        let a = bundle.translate(&x, Direction::T2S).unwrap();
        let b = bundle.translate(&x, Direction::T2S).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert!(a.iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn zeroed_discriminator_head_scores_zero() {
        let mut bundle = ModelBundle::<f64>::build(&tiny_cfg(), &opts(), 5).unwrap();
        let d_s = bundle.d_s.as_mut().unwrap();
        let shape = d_s.store.value_mut_by_name("score.w");
        shape.fill(0.0);
        let mut rng = StreamRng::new(11, 102);
        let x = rand_image(16, &mut rng);
        let scores = bundle.discriminate(&x, DiscKind::DS).unwrap();
        assert!(scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn lsgan_single_score_example() {
        // A single score of 0 against real target 1 costs exactly 1.
        let scores = Array3::from_elem((1, 1, 1), 0.0f64);
        let (v, g) = lsgan_loss(&scores, 1.0);
        assert_eq!(v, 1.0);
        assert_eq!(g[(0, 0, 0)], -2.0);
    }

    #[test]
    fn model0_has_no_image_discriminators() {
        let o = BundleOptions {
            with_image_discs: false,
            ..opts()
        };
        let bundle = ModelBundle::<f64>::build(&tiny_cfg(), &o, 6).unwrap();
        assert!(bundle.d_s.is_none() && bundle.d_t.is_none());
        let mut rng = StreamRng::new(12, 103);
        let x = rand_image(16, &mut rng);
        assert!(matches!(
            bundle.discriminate(&x, DiscKind::DT),
            Err(Error::Config(_))
        ));
        let names: Vec<&str> = bundle.stores().iter().map(|s| s.name.as_str()).collect();
        assert!(!names.contains(&"d_s") && !names.contains(&"d_t"));
    }

    #[test]
    fn segment_probabilities_normalize() {
        let cfg = tiny_cfg();
        let bundle = ModelBundle::<f64>::build(&cfg, &opts(), 7).unwrap();
        let mut rng = StreamRng::new(13, 104);
        let x = rand_image(16, &mut rng);
        let probs = bundle.segment(&x).unwrap();
        let (c, h, w) = probs.dim();
        assert_eq!(c, cfg.class_count as usize);
        for y in 0..h {
            for xx in 0..w {
                let s: f64 = (0..c).map(|ci| probs[(ci, y, xx)]).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn uniform_head_gives_uniform_distribution() {
        let mut bundle = ModelBundle::<f64>::build(&tiny_cfg(), &opts(), 8).unwrap();
        bundle.seg_head.store.value_mut_by_name("logits.w").fill(0.0);
        bundle.seg_head.store.value_mut_by_name("logits.b").fill(0.0);
        let mut rng = StreamRng::new(14, 105);
        let x = rand_image(16, &mut rng);
        let probs = bundle.segment(&x).unwrap();
        assert!(probs.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn seg_loss_closed_forms() {
        // Perfect one-hot: saturated logits on the true class.
        let y = Array2::from_shape_fn((8, 8), |(r, _)| (r % 2) as u8);
        let mut logits = Array3::<f64>::from_elem((2, 8, 8), -20.0);
        for r in 0..8 {
            for c in 0..8 {
                logits[(y[(r, c)] as usize, r, c)] = 20.0;
            }
        }
        let (l, _) = seg_loss(&logits, &y).unwrap();
        assert!(l.value < 1e-5, "{}", l.value);

        // Uniform prediction over 2 classes: cross-entropy term is ln 2.
        let logits = Array3::<f64>::zeros((2, 8, 8));
        let (l, _) = seg_loss(&logits, &y).unwrap();
        assert!((l.cross_entropy - std::f64::consts::LN_2).abs() < 1e-9);

        // Permuting pixels leaves the loss unchanged.
        let mut rng = StreamRng::new(15, 106);
        let logits = Array3::from_shape_simple_fn((3, 4, 4), || rng.uniform_in(-2.0, 2.0));
        let y = Array2::from_shape_simple_fn((4, 4), || rng.below(3) as u8);
        let (l0, _) = seg_loss(&logits, &y).unwrap();
        // Transpose is a permutation of pixel order.
        let logits_p = Array3::from_shape_fn((3, 4, 4), |(c, a, b)| logits[(c, b, a)]);
        let y_p = Array2::from_shape_fn((4, 4), |(a, b)| y[(b, a)]);
        let (l1, _) = seg_loss(&logits_p, &y_p).unwrap();
        assert!((l0.value - l1.value).abs() < 1e-12);
    }

    #[test]
    fn seg_loss_rejects_out_of_range_class() {
        let logits = Array3::<f64>::zeros((2, 4, 4));
        let y = Array2::from_elem((4, 4), 5u8);
        assert!(seg_loss(&logits, &y).is_err());
    }

    #[test]
    fn cycle_loss_examples() {
        let mut rng = StreamRng::new(16, 107);
        let src = rand_image(8, &mut rng);
        let tgt = rand_image(8, &mut rng);
        let (l, _, _) = cycle_loss(&src, &src, &tgt, &tgt).unwrap();
        assert_eq!(l, 0.0);

        // Off by a constant 0.5: each direction contributes exactly 0.5.
        let rec_s = src.mapv(|v| v + 0.5);
        let (l, _, _) = cycle_loss(&rec_s, &src, &tgt, &tgt).unwrap();
        assert!((l - 0.5).abs() < 1e-12);

        // Swapping the two directions' arguments leaves the sum unchanged.
        let rec_t = tgt.mapv(|v| v - 0.25);
        let (a, _, _) = cycle_loss(&rec_s, &src, &rec_t, &tgt).unwrap();
        let (b, _, _) = cycle_loss(&rec_t, &tgt, &rec_s, &src).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn feature_adv_loss_examples() {
        let cfg = tiny_cfg();
        let mut bundle = ModelBundle::<f64>::build(&cfg, &opts(), 17).unwrap();
        let mut rng = StreamRng::new(17, 108);
        let feats = Array3::from_shape_simple_fn((cfg.enc_channels(), 4, 4), || {
            rng.uniform_in(-1.0, 1.0)
        });
        // Zero the score kernel, bias 1: every score sits at the target.
        let d_f = bundle.d_f.as_mut().unwrap();
        d_f.store.value_mut_by_name("score.w").fill(0.0);
        d_f.store.value_mut_by_name("score.b").fill(1.0);
        let (v, _) = feature_adv_loss(d_f, &feats);
        assert_eq!(v, 0.0);
        // Bias 0: every score is 0 against target 1.
        d_f.store.value_mut_by_name("score.b").fill(0.0);
        let (v, _) = feature_adv_loss(d_f, &feats);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn total_objective_arithmetic() {
        let w = LossWeights::default();
        let zero = LossComponents::default();
        assert_eq!(total_objective(&zero, &w), 0.0);
        let unit = LossComponents {
            l_adv_t: 1.0,
            l_adv_s: 1.0,
            l_cyc: 1.0,
            l_seg: 1.0,
            l_feat: 1.0,
        };
        assert_eq!(total_objective(&unit, &w), 12.2);
    }

    #[test]
    fn cycle_training_reduces_round_trip_error() {
        // Random (non-identity) generators; a short cycle-only loop must
        // shrink the round-trip error below its starting value.
        let cfg = ModelCfg {
            gen_zero_init_head: false,
            ..tiny_cfg()
        };
        let mut bundle = ModelBundle::<f64>::build(&cfg, &opts(), 18).unwrap();
        let mut rng = StreamRng::new(18, 109);
        let imgs: Vec<(Array2<f64>, Array2<f64>)> = (0..4)
            .map(|_| (rand_image(16, &mut rng), rand_image(16, &mut rng)))
            .collect();
        let round_trip_err = |b: &ModelBundle<f64>| -> f64 {
            imgs.iter()
                .map(|(s, t)| {
                    let rec_s = b.translate(&b.translate(s, Direction::S2T).unwrap(), Direction::T2S).unwrap();
                    let rec_t = b.translate(&b.translate(t, Direction::T2S).unwrap(), Direction::S2T).unwrap();
                    let es: f64 = rec_s.iter().zip(s.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / s.len() as f64;
                    let et: f64 = rec_t.iter().zip(t.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / t.len() as f64;
                    es + et
                })
                .sum::<f64>()
                / imgs.len() as f64
        };
        let before = round_trip_err(&bundle);
        let adam = AdamCfg::new(2e-3);
        for it in 0..150 {
            let (src, tgt) = &imgs[it % imgs.len()];
            bundle.g_s2t.zero_grads();
            bundle.g_t2s.zero_grads();
            let (fake_t, tp1) = bundle.g_s2t.translate_t(src);
            let (fake_s, tp2) = bundle.g_t2s.translate_t(tgt);
            let (rec_s, tp3) = bundle.g_t2s.translate_t(&fake_t);
            let (rec_t, tp4) = bundle.g_s2t.translate_t(&fake_s);
            let (_, d_rec_s, d_rec_t) = cycle_loss(&rec_s, src, &rec_t, tgt).unwrap();
            let g_fake_t = bundle.g_t2s.backward(&tp3, &d_rec_s, true);
            bundle.g_s2t.backward(&tp1, &g_fake_t, true);
            let g_fake_s = bundle.g_s2t.backward(&tp4, &d_rec_t, true);
            bundle.g_t2s.backward(&tp2, &g_fake_s, true);
            bundle.g_s2t.encoder.store.adam_step(&adam);
            bundle.g_s2t.decoder.store.adam_step(&adam);
            bundle.g_t2s.encoder.store.adam_step(&adam);
            bundle.g_t2s.decoder.store.adam_step(&adam);
        }
        let after = round_trip_err(&bundle);
        assert!(
            after < before,
            "round-trip error did not improve: {before} -> {after}"
        );
    }

    #[test]
    fn eq1_gradients_match_finite_differences_subset() {
        // Spot check over a subset of every store's parameters; the
        // acceptance suite runs the exhaustive version.
        let cfg = ModelCfg {
            gen_zero_init_head: false,
            ..tiny_cfg()
        };
        let mut bundle = ModelBundle::<f64>::build(&cfg, &opts(), 19).unwrap();
        let mut rng = StreamRng::new(19, 110);
        let src = Array2::from_shape_simple_fn((16, 16), || rng.uniform_in(-0.5, 0.5));
        let tgt = Array2::from_shape_simple_fn((16, 16), || rng.uniform_in(-0.5, 0.5));
        let y_src = Array2::from_shape_fn((16, 16), |(r, _)| (r / 6) as u8);
        let w = LossWeights::default();

        for store in bundle.stores_mut() {
            store.zero_grads();
        }
        let batch = Eq1Batch {
            src: &src,
            y_src: &y_src,
            tgt: &tgt,
        };
        eq1_backward(&mut bundle, &batch, &w).unwrap();

        let n_stores = bundle.stores().len();
        for si in 0..n_stores {
            let analytic = bundle.stores()[si].flatten_grads();
            let n = analytic.len();
            let step = (n / 24).max(1);
            let idx: Vec<usize> = (0..n).step_by(step).collect();
            let mut numeric = Vec::with_capacity(idx.len());
            for &i in &idx {
                let orig = bundle.stores()[si].get_flat(i);
                let eps = 1e-6;
                bundle.stores_mut()[si].set_flat(i, orig + eps);
                let lp = total_objective(&eq1_forward(&bundle, &batch).unwrap(), &w);
                bundle.stores_mut()[si].set_flat(i, orig - eps);
                let lm = total_objective(&eq1_forward(&bundle, &batch).unwrap(), &w);
                bundle.stores_mut()[si].set_flat(i, orig);
                numeric.push((lp - lm) / (2.0 * eps));
            }
            let picked: Vec<f64> = idx.iter().map(|&i| analytic[i]).collect();
            let err = relative_error(&picked, &numeric);
            let name = &bundle.stores()[si].name;
            assert!(err < 1e-5, "store {name}: relative error {err}");
        }
    }
}
