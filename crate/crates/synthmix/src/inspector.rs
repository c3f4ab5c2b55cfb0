//! The mixup inspector: per-patch domain classification over a k×k grid
//! with an auxiliary global branch.
//!
//! The trunk is a stack of stride-2 stages down to a bottleneck; a small
//! decoder head resizes the bottleneck to the k×k logit map, and the
//! auxiliary branch applies one 4×4 convolution followed by global average
//! pooling to produce a single logit supervised by the mask mean.
//!
//! No normalization layers: per-instance statistics would couple every
//! patch logit to every pixel, and patch decisions must stay local to a
//! bounded receptive field.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{conv, Layer, Sequential, Tape};
use crate::nn::{Float, ParamStore};
use crate::rng::StreamRng;

/// Logits are clamped to this magnitude before the cross-entropy.
pub const LOGIT_CLAMP: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InspectorConfig {
    /// Output grid side; matches the mask grid.
    pub k: usize,
    pub image_side: usize,
    #[serde(default = "default_base")]
    pub base_channels: usize,
    /// Number of stride-2 trunk stages.
    #[serde(default = "default_depth")]
    pub depth: usize,
}

fn default_base() -> usize {
    12
}

fn default_depth() -> usize {
    4
}

impl InspectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.image_side == 0 || self.base_channels == 0 || self.depth == 0 {
            return Err(Error::config("inspector config fields must be positive"));
        }
        if self.image_side % self.k != 0 {
            return Err(Error::config(format!(
                "image_side {} must be divisible by k {}",
                self.image_side, self.k
            )));
        }
        let bottleneck = self.bottleneck_side()?;
        if bottleneck < 4 {
            return Err(Error::config(format!(
                "bottleneck side {bottleneck} too small for the 4x4 auxiliary conv",
            )));
        }
        let ratio_ok = (bottleneck % self.k == 0 && (bottleneck / self.k).is_power_of_two())
            || (self.k % bottleneck == 0 && (self.k / bottleneck).is_power_of_two());
        if !ratio_ok {
            return Err(Error::config(format!(
                "bottleneck side {bottleneck} and k {} must differ by a power of two",
                self.k
            )));
        }
        Ok(())
    }

    pub fn bottleneck_side(&self) -> Result<usize> {
        let div = 1usize << self.depth;
        if self.image_side % div != 0 {
            return Err(Error::config(format!(
                "image_side {} not divisible by 2^depth {}",
                self.image_side, div
            )));
        }
        Ok(self.image_side / div)
    }

    fn stage_channels(&self, i: usize) -> usize {
        self.base_channels << i.min(3)
    }

    fn bottleneck_channels(&self) -> usize {
        self.stage_channels(self.depth.saturating_sub(1))
    }
}

/// Patch logit map plus the auxiliary global logit (both pre-sigmoid,
/// 1 = target domain).
#[derive(Debug, Clone)]
pub struct InspectorOutput<F> {
    pub patch_logits: Array2<F>,
    pub global_logit: F,
}

pub struct Inspector {
    pub cfg: InspectorConfig,
    trunk: Sequential,
    patch_head: Sequential,
    aux_head: Sequential,
    aux_pool_hw: (usize, usize),
}

pub struct InspectorTape<F: Float> {
    trunk: Tape<F>,
    patch: Tape<F>,
    aux: Tape<F>,
}

impl Inspector {
    /// Build the inspector and register its parameters in `store`.
    /// `zero_init_heads` zeroes both heads' final kernels, giving logits
    /// of exactly zero everywhere at initialization.
    pub fn build<F: Float>(
        cfg: InspectorConfig,
        store: &mut ParamStore<F>,
        rng: &mut StreamRng,
        zero_init_heads: bool,
    ) -> Result<Inspector> {
        cfg.validate()?;
        let mut trunk_layers = Vec::new();
        let mut in_ch = 1;
        for i in 0..cfg.depth {
            let out_ch = cfg.stage_channels(i);
            trunk_layers.push(conv(
                store,
                rng,
                &format!("trunk.s{i}"),
                in_ch,
                out_ch,
                3,
                2,
                1,
                1.0,
            ));
            trunk_layers.push(Layer::LeakyRelu { slope: 0.2 });
            in_ch = out_ch;
        }
        trunk_layers.push(conv(store, rng, "trunk.bottleneck", in_ch, in_ch, 3, 1, 1, 1.0));
        trunk_layers.push(Layer::LeakyRelu { slope: 0.2 });
        let trunk = Sequential::new(trunk_layers);

        let bottleneck = cfg.bottleneck_side()?;
        let ch = cfg.bottleneck_channels();
        let mut head_layers = vec![
            conv(store, rng, "head.c0", ch, ch, 3, 1, 1, 1.0),
            Layer::LeakyRelu { slope: 0.2 },
        ];
        if bottleneck > cfg.k {
            let mut side = bottleneck;
            let mut i = 0;
            while side > cfg.k {
                head_layers.push(conv(
                    store,
                    rng,
                    &format!("head.down{i}"),
                    ch,
                    ch,
                    3,
                    2,
                    1,
                    1.0,
                ));
                head_layers.push(Layer::LeakyRelu { slope: 0.2 });
                side /= 2;
                i += 1;
            }
        } else if bottleneck < cfg.k {
            let mut side = bottleneck;
            let mut i = 0;
            while side < cfg.k {
                head_layers.push(Layer::Upsample { factor: 2 });
                head_layers.push(conv(
                    store,
                    rng,
                    &format!("head.up{i}"),
                    ch,
                    ch,
                    3,
                    1,
                    1,
                    1.0,
                ));
                head_layers.push(Layer::LeakyRelu { slope: 0.2 });
                side *= 2;
                i += 1;
            }
        }
        head_layers.push(conv(
            store,
            rng,
            "head.logits",
            ch,
            1,
            1,
            1,
            0,
            if zero_init_heads { 0.0 } else { 1.0 },
        ));
        let patch_head = Sequential::new(head_layers);

        let aux_head = Sequential::new(vec![conv(
            store,
            rng,
            "aux.c",
            ch,
            1,
            4,
            1,
            0,
            if zero_init_heads { 0.0 } else { 1.0 },
        )]);
        let aux_pool_hw = (bottleneck - 3, bottleneck - 3);

        Ok(Inspector {
            cfg,
            trunk,
            patch_head,
            aux_head,
            aux_pool_hw,
        })
    }

    /// Deterministic forward pass.
    pub fn inspect<F: Float>(
        &self,
        store: &ParamStore<F>,
        image: &Array2<F>,
    ) -> Result<InspectorOutput<F>> {
        Ok(self.inspect_t(store, image)?.0)
    }

    pub fn inspect_t<F: Float>(
        &self,
        store: &ParamStore<F>,
        image: &Array2<F>,
    ) -> Result<(InspectorOutput<F>, InspectorTape<F>)> {
        let side = self.cfg.image_side;
        if image.dim() != (side, side) {
            return Err(Error::dimension(format!(
                "inspector input is {:?}, expected {side}x{side}",
                image.dim()
            )));
        }
        let x = image
            .to_owned()
            .into_shape_with_order((1, side, side))
            .unwrap();
        let (feats, trunk_tape) = self.trunk.forward_t(store, x);
        let (patch_map, patch_tape) = self.patch_head.forward_t(store, feats.clone());
        debug_assert_eq!(patch_map.dim(), (1, self.cfg.k, self.cfg.k));
        let patch_logits = patch_map
            .index_axis(Axis(0), 0)
            .to_owned();
        let (aux_map, aux_tape) = self.aux_head.forward_t(store, feats);
        let n = F::from_f64(aux_map.len() as f64);
        let global_logit = aux_map.iter().copied().sum::<F>() / n;
        Ok((
            InspectorOutput {
                patch_logits,
                global_logit,
            },
            InspectorTape {
                trunk: trunk_tape,
                patch: patch_tape,
                aux: aux_tape,
            },
        ))
    }

    /// Backpropagate gradients on the two outputs; returns the input
    /// gradient as an image-shaped array.
    pub fn backward<F: Float>(
        &self,
        store: &mut ParamStore<F>,
        tape: &InspectorTape<F>,
        d_patch: &Array2<F>,
        d_global: F,
        accum: bool,
    ) -> Array2<F> {
        let g_feats = self.head_backward(store, tape, d_patch, d_global, accum);
        let gx = self.trunk.backward(store, &tape.trunk, g_feats, accum);
        let side = self.cfg.image_side;
        gx.into_shape_with_order((side, side)).unwrap()
    }

    /// Backward when the input gradient is not needed.
    pub fn backward_params_only<F: Float>(
        &self,
        store: &mut ParamStore<F>,
        tape: &InspectorTape<F>,
        d_patch: &Array2<F>,
        d_global: F,
    ) {
        let g_feats = self.head_backward(store, tape, d_patch, d_global, true);
        self.trunk
            .backward_params_only(store, &tape.trunk, g_feats, true);
    }

    fn head_backward<F: Float>(
        &self,
        store: &mut ParamStore<F>,
        tape: &InspectorTape<F>,
        d_patch: &Array2<F>,
        d_global: F,
        accum: bool,
    ) -> crate::nn::Feat<F> {
        let k = self.cfg.k;
        let g_patch = d_patch
            .to_owned()
            .into_shape_with_order((1, k, k))
            .unwrap();
        let mut g_feats = self.patch_head.backward(store, &tape.patch, g_patch, accum);
        let (ah, aw) = self.aux_pool_hw;
        let share = d_global / F::from_f64((ah * aw) as f64);
        let g_aux = Array3::from_elem((1, ah, aw), share);
        g_feats += &self.aux_head.backward(store, &tape.aux, g_aux, accum);
        g_feats
    }

    /// Per-patch decisions at threshold 0.5 (logit sign).
    pub fn decisions<F: Float>(out: &InspectorOutput<F>) -> Array2<u8> {
        out.patch_logits.mapv(|z| u8::from(z > F::zero()))
    }
}

/// Numerically stable binary cross-entropy on a clamped logit.
/// Returns (loss, dloss/dlogit).
pub fn bce_with_logit<F: Float>(logit: F, target: F) -> (F, F) {
    let clamp = F::from_f64(LOGIT_CLAMP);
    let inside = logit.abs() < clamp;
    let z = logit.max(-clamp).min(clamp);
    // max(z,0) - z*t + ln(1+exp(-|z|))
    let loss = z.max(F::zero()) - z * target + (F::one() + (-z.abs()).exp()).ln();
    let sigma = F::one() / (F::one() + (-z).exp());
    let grad = if inside { sigma - target } else { F::zero() };
    (loss, grad)
}

/// Classification loss for the inspector: mean per-patch BCE plus the BCE
/// of the global logit against the mask mean, summed with equal weight.
/// Returns the loss and the gradients on both logit outputs.
pub struct ClsLoss<F> {
    pub value: F,
    pub d_patch: Array2<F>,
    pub d_global: F,
}

pub fn inspector_loss<F: Float>(
    out: &InspectorOutput<F>,
    patch_targets: &Array2<u8>,
    global_target: f64,
) -> Result<ClsLoss<F>> {
    if patch_targets.dim() != out.patch_logits.dim() {
        return Err(Error::dimension(format!(
            "patch target shape {:?} vs logits {:?}",
            patch_targets.dim(),
            out.patch_logits.dim()
        )));
    }
    if patch_targets.iter().any(|&t| t > 1) {
        return Err(Error::validation("patch targets must be binary"));
    }
    if !(0.0..=1.0).contains(&global_target) {
        return Err(Error::validation("global target must lie in [0, 1]"));
    }
    let n = F::from_f64(patch_targets.len() as f64);
    let mut total = F::zero();
    let mut d_patch = Array2::<F>::zeros(out.patch_logits.dim());
    for ((&z, &t), d) in out
        .patch_logits
        .iter()
        .zip(patch_targets.iter())
        .zip(d_patch.iter_mut())
    {
        let (l, g) = bce_with_logit(z, F::from_f64(t as f64));
        total += l / n;
        *d = g / n;
    }
    let (gl, gg) = bce_with_logit(out.global_logit, F::from_f64(global_target));
    Ok(ClsLoss {
        value: total + gl,
        d_patch,
        d_global: gg,
    })
}

/// Least-squares adversarial loss on the aligned mixes, for the
/// generators. Synthetic patches sit in mask-one cells of an s-mix (the
/// translation should pass as target, label 1) and in mask-zero cells of
/// a t-mix (the translation should pass as source, label 0); real-content
/// patches are excluded since no generator parameter influences them.
/// Each term is the mean over that sample's synthetic patches of the
/// squared distance between the patch score (sigmoid of the logit, so a
/// probability in [0, 1]) and its adversarial target; an empty synthetic
/// set contributes zero. Scoring probabilities rather than raw logits
/// keeps this term commensurate with the other generator losses even
/// when the inspector's cross-entropy training saturates its logits.
pub struct MixAdvLoss<F> {
    pub value: F,
    pub d_patch_s: Array2<F>,
    pub d_patch_t: Array2<F>,
}

pub fn generator_mix_adv_loss<F: Float>(
    out_s_mix: &InspectorOutput<F>,
    out_t_mix: &InspectorOutput<F>,
    mask_grid_s: &Array2<u8>,
    mask_grid_t: &Array2<u8>,
) -> Result<MixAdvLoss<F>> {
    if mask_grid_s.dim() != out_s_mix.patch_logits.dim()
        || mask_grid_t.dim() != out_t_mix.patch_logits.dim()
    {
        return Err(Error::dimension(
            "mask grid and inspector output grids differ".to_string(),
        ));
    }
    let term = |out: &InspectorOutput<F>,
                grid: &Array2<u8>,
                synthetic_cell: u8,
                target: F|
     -> (F, Array2<F>) {
        let count = grid.iter().filter(|&&c| c == synthetic_cell).count();
        let mut d = Array2::<F>::zeros(out.patch_logits.dim());
        if count == 0 {
            return (F::zero(), d);
        }
        let n = F::from_f64(count as f64);
        let two = F::from_f64(2.0);
        let one = F::one();
        let mut acc = F::zero();
        for ((&z, &c), dv) in out.patch_logits.iter().zip(grid.iter()).zip(d.iter_mut()) {
            if c == synthetic_cell {
                let score = one / (one + (-z).exp());
                let diff = score - target;
                acc += diff * diff / n;
                *dv = two * diff * score * (one - score) / n;
            }
        }
        (acc, d)
    };
    let (ls, ds) = term(out_s_mix, mask_grid_s, 1, F::one());
    let (lt, dt) = term(out_t_mix, mask_grid_t, 0, F::zero());
    Ok(MixAdvLoss {
        value: ls + lt,
        d_patch_s: ds,
        d_patch_t: dt,
    })
}

/// The combined objective `lambda_i * L_mix_adv + lambda_i * L_cls`.
pub fn synthmix_objective(l_mix_adv: f64, l_cls: f64, lambda_i: f64) -> f64 {
    lambda_i * l_mix_adv + lambda_i * l_cls
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check::{finite_diff_param_grad, relative_error};
    use crate::rng::streams;

    fn tiny_cfg() -> InspectorConfig {
        InspectorConfig {
            k: 4,
            image_side: 16,
            base_channels: 2,
            depth: 2,
        }
    }

    fn rand_image(side: usize, rng: &mut StreamRng) -> Array2<f64> {
        Array2::from_shape_simple_fn((side, side), || rng.uniform_in(-0.9, 0.9))
    }

    #[test]
    fn zero_init_heads_give_zero_logits() {
        let mut rng = StreamRng::new(1, streams::INIT_INSPECTOR);
        let mut store = ParamStore::<f64>::new("inspector");
        let insp = Inspector::build(tiny_cfg(), &mut store, &mut rng, true).unwrap();
        let img = rand_image(16, &mut rng);
        let out = insp.inspect(&store, &img).unwrap();
        assert!(out.patch_logits.iter().all(|&z| z == 0.0));
        assert_eq!(out.global_logit, 0.0);
        // sigmoid(0) = 0.5 everywhere.
        let (l, _) = bce_with_logit(0.0f64, 1.0);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn inspect_is_deterministic() {
        let mut rng = StreamRng::new(2, streams::INIT_INSPECTOR);
        let mut store = ParamStore::<f64>::new("inspector");
        let insp = Inspector::build(tiny_cfg(), &mut store, &mut rng, false).unwrap();
        let img = rand_image(16, &mut rng);
        let a = insp.inspect(&store, &img).unwrap();
        let b = insp.inspect(&store, &img).unwrap();
        assert_eq!(a.patch_logits, b.patch_logits);
        assert_eq!(a.global_logit, b.global_logit);
    }

    #[test]
    fn inspect_rejects_wrong_shape() {
        let mut rng = StreamRng::new(3, streams::INIT_INSPECTOR);
        let mut store = ParamStore::<f64>::new("inspector");
        let insp = Inspector::build(tiny_cfg(), &mut store, &mut rng, false).unwrap();
        let img = rand_image(8, &mut rng);
        assert!(insp.inspect(&store, &img).is_err());
    }

    #[test]
    fn cls_loss_closed_forms() {
        let k = 4;
        let out = InspectorOutput {
            patch_logits: Array2::<f64>::zeros((k, k)),
            global_logit: 0.0,
        };
        let targets = Array2::from_elem((k, k), 1u8);
        let loss = inspector_loss(&out, &targets, 1.0).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((loss.value - 2.0 * ln2).abs() < 1e-12, "{}", loss.value);

        // Saturated logits matching the targets: loss below 1e-5.
        let saturated = InspectorOutput {
            patch_logits: Array2::from_elem((k, k), 20.0),
            global_logit: 20.0,
        };
        let loss = inspector_loss(&saturated, &targets, 1.0).unwrap();
        assert!(loss.value < 1e-5, "{}", loss.value);

        // Label symmetry: all-zero targets with negated logits give the
        // same loss as all-one targets with positive logits.
        let pos = InspectorOutput {
            patch_logits: Array2::from_elem((k, k), 1.3f64),
            global_logit: 0.4,
        };
        let neg = InspectorOutput {
            patch_logits: Array2::from_elem((k, k), -1.3f64),
            global_logit: -0.4,
        };
        let l1 = inspector_loss(&pos, &Array2::from_elem((k, k), 1u8), 1.0).unwrap();
        let l0 = inspector_loss(&neg, &Array2::from_elem((k, k), 0u8), 0.0).unwrap();
        assert!((l1.value - l0.value).abs() < 1e-12);
    }

    #[test]
    fn cls_loss_rejects_bad_targets() {
        let out = InspectorOutput {
            patch_logits: Array2::<f64>::zeros((2, 2)),
            global_logit: 0.0,
        };
        assert!(inspector_loss(&out, &Array2::from_elem((2, 2), 2u8), 0.5).is_err());
        assert!(inspector_loss(&out, &Array2::from_elem((2, 2), 1u8), 1.5).is_err());
    }

    #[test]
    fn mix_adv_loss_examples() {
        let k = 2;
        // Fooled inspector: every synthetic patch scored exactly at its
        // adversarial target. Logits of +-1000 saturate the sigmoid to an
        // exact 1.0/0.0 in f64.
        let grid_s = Array2::from_elem((k, k), 1u8);
        let grid_t = Array2::from_elem((k, k), 0u8);
        let out_s = InspectorOutput {
            patch_logits: Array2::from_elem((k, k), 1000.0f64),
            global_logit: 0.0,
        };
        let out_t = InspectorOutput {
            patch_logits: Array2::from_elem((k, k), -1000.0f64),
            global_logit: 0.0,
        };
        let l = generator_mix_adv_loss(&out_s, &out_t, &grid_s, &grid_t).unwrap();
        assert_eq!(l.value, 0.0);

        // No synthetic pixels in the s-mix: that term contributes nothing.
        let grid_s_empty = Array2::from_elem((k, k), 0u8);
        let l = generator_mix_adv_loss(&out_s, &out_t, &grid_s_empty, &grid_t).unwrap();
        assert_eq!(l.value, 0.0);

        // Single synthetic patch scored 0 against target 1: (0-1)^2 = 1.
        let mut grid_one = Array2::from_elem((k, k), 0u8);
        grid_one[(0, 0)] = 1;
        let out_zero = InspectorOutput {
            patch_logits: Array2::from_elem((k, k), -1000.0f64),
            global_logit: 0.0,
        };
        let grid_t_none = Array2::from_elem((k, k), 1u8);
        let l =
            generator_mix_adv_loss(&out_zero, &out_t, &grid_one, &grid_t_none).unwrap();
        assert_eq!(l.value, 1.0);
    }

    #[test]
    fn synthmix_objective_arithmetic() {
        assert_eq!(synthmix_objective(0.0, 0.0, 0.1), 0.0);
        assert_eq!(synthmix_objective(1.0, 1.0, 0.1), 0.2);
        let base = synthmix_objective(0.7, 1.9, 0.1);
        let doubled = synthmix_objective(0.7, 1.9, 0.2);
        assert!((doubled - 2.0 * base).abs() < 1e-15);
    }

    #[test]
    fn cls_loss_gradient_matches_finite_differences() {
        let mut rng = StreamRng::new(40, streams::INIT_INSPECTOR);
        let mut store = ParamStore::<f64>::new("inspector");
        let insp = Inspector::build(tiny_cfg(), &mut store, &mut rng, false).unwrap();
        let img = rand_image(16, &mut rng);
        let targets =
            Array2::from_shape_simple_fn((4, 4), || u8::from(rng.bernoulli(0.5)));
        let global_target = 0.4375;

        store.zero_grads();
        let (out, tape) = insp.inspect_t(&store, &img).unwrap();
        let loss = inspector_loss(&out, &targets, global_target).unwrap();
        insp.backward(&mut store, &tape, &loss.d_patch, loss.d_global, true);
        let analytic = store.flatten_grads();

        let numeric = finite_diff_param_grad(&mut store, 1e-4, |s| {
            let out = insp.inspect(s, &img).unwrap();
            inspector_loss(&out, &targets, global_target).unwrap().value
        });
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn mix_adv_gradient_matches_finite_differences() {
        let mut rng = StreamRng::new(41, streams::INIT_INSPECTOR);
        let mut store = ParamStore::<f64>::new("inspector");
        let insp = Inspector::build(tiny_cfg(), &mut store, &mut rng, false).unwrap();
        let img_s = rand_image(16, &mut rng);
        let img_t = rand_image(16, &mut rng);
        let grid_s = Array2::from_shape_simple_fn((4, 4), || u8::from(rng.bernoulli(0.5)));
        let grid_t = Array2::from_shape_simple_fn((4, 4), || u8::from(rng.bernoulli(0.5)));

        store.zero_grads();
        let (out_s, tape_s) = insp.inspect_t(&store, &img_s).unwrap();
        let (out_t, tape_t) = insp.inspect_t(&store, &img_t).unwrap();
        let loss = generator_mix_adv_loss(&out_s, &out_t, &grid_s, &grid_t).unwrap();
        insp.backward(&mut store, &tape_s, &loss.d_patch_s, 0.0, true);
        insp.backward(&mut store, &tape_t, &loss.d_patch_t, 0.0, true);
        let analytic = store.flatten_grads();

        let numeric = finite_diff_param_grad(&mut store, 1e-4, |s| {
            let out_s = insp.inspect(s, &img_s).unwrap();
            let out_t = insp.inspect(s, &img_t).unwrap();
            generator_mix_adv_loss(&out_s, &out_t, &grid_s, &grid_t)
                .unwrap()
                .value
        });
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn patch_logits_respond_locally() {
        // Overwriting one patch must move nearby logits and leave the far
        // corner untouched (bounded receptive field).
        let cfg = InspectorConfig {
            k: 8,
            image_side: 256,
            base_channels: 4,
            depth: 4,
        };
        let mut rng = StreamRng::new(42, streams::INIT_INSPECTOR);
        let mut store = ParamStore::<f64>::new("inspector");
        let insp = Inspector::build(cfg, &mut store, &mut rng, false).unwrap();
        let img = rand_image(256, &mut rng);
        let base = insp.inspect(&store, &img).unwrap();
        let mut poked = img.clone();
        for y in 0..32 {
            for x in 0..32 {
                poked[(y, x)] = 0.9;
            }
        }
        let out = insp.inspect(&store, &poked).unwrap();
        let delta = &out.patch_logits - &base.patch_logits;
        assert!(
            delta[(0, 0)].abs() > 1e-9,
            "patch under the edit did not move"
        );
        assert_eq!(
            delta[(7, 7)], 0.0,
            "far corner moved; receptive field is not bounded"
        );
    }

    #[test]
    fn config_validation() {
        assert!(InspectorConfig {
            k: 5,
            image_side: 16,
            base_channels: 2,
            depth: 2,
        }
        .validate()
        .is_err());
        assert!(InspectorConfig {
            k: 4,
            image_side: 16,
            base_channels: 2,
            depth: 3, // bottleneck 2 < 4
        }
        .validate()
        .is_err());
        assert!(tiny_cfg().validate().is_ok());
    }
}
