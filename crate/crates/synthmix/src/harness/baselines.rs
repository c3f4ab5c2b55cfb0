//! Comparison mix-up protocols: global convex blending and rectangular
//! patch swapping, judged by an image-classifier-shaped domain scorer
//! with a single pooled output supervised by the mixing fraction.

use ndarray::Array2;
use statrs::distribution::{Beta, ContinuousCDF};

use super::{MixupBaseline, RunConfig};
use crate::error::{Error, Result};
use crate::gan::Net;
use crate::inspector::bce_with_logit;
use crate::rng::StreamRng;

/// Shape parameter of the Beta distribution the blend coefficient is
/// drawn from.
pub const MIXUP_BETA_ALPHA: f64 = 0.4;

/// One baseline-mixed image with the facts the losses need: the fraction
/// of target-appearance content, and the per-pixel derivative of the
/// image with respect to its synthetic constituent.
#[derive(Debug, Clone)]
pub struct BaselineMix<F> {
    pub image: Array2<F>,
    pub lambda_target: f64,
    pub d_synth: Array2<F>,
}

/// Global convex blend `lambda*x_t + (1-lambda)*x_s`. `synth_weight` says
/// which side is the generator product (the derivative weight).
fn blend(
    x_t: &Array2<f32>,
    x_s: &Array2<f32>,
    lambda: f64,
    synth_weight: f64,
) -> BaselineMix<f32> {
    let l = lambda as f32;
    let image = Array2::from_shape_fn(x_t.dim(), |idx| l * x_t[idx] + (1.0 - l) * x_s[idx]);
    BaselineMix {
        image,
        lambda_target: lambda,
        d_synth: Array2::from_elem(x_t.dim(), synth_weight as f32),
    }
}

/// Rectangular patch swap: the rectangle takes pixels from `x_t`.
/// `synth_in_rect` marks whether the synthetic constituent sits inside
/// the rectangle or outside it.
fn cutmix(
    x_t: &Array2<f32>,
    x_s: &Array2<f32>,
    lambda: f64,
    rng: &mut StreamRng,
    synth_in_rect: bool,
) -> BaselineMix<f32> {
    let (h, w) = x_t.dim();
    let rh = ((h as f64 * lambda.sqrt()).round() as usize).clamp(1, h);
    let rw = ((w as f64 * lambda.sqrt()).round() as usize).clamp(1, w);
    let y0 = rng.below(h - rh + 1);
    let x0 = rng.below(w - rw + 1);
    let mut image = x_s.clone();
    for y in y0..y0 + rh {
        for x in x0..x0 + rw {
            image[(y, x)] = x_t[(y, x)];
        }
    }
    let area = (rh * rw) as f64 / (h * w) as f64;
    let d_synth = Array2::from_shape_fn((h, w), |(y, x)| {
        let in_rect = (y0..y0 + rh).contains(&y) && (x0..x0 + rw).contains(&x);
        if in_rect == synth_in_rect {
            1.0f32
        } else {
            0.0
        }
    });
    BaselineMix {
        image,
        lambda_target: area,
        d_synth,
    }
}

fn draw_lambda(kind: MixupBaseline, config: &RunConfig, rng: &mut StreamRng) -> f64 {
    match kind {
        MixupBaseline::GlobalMixup => {
            let u = rng.uniform().clamp(1e-6, 1.0 - 1e-6);
            Beta::new(MIXUP_BETA_ALPHA, MIXUP_BETA_ALPHA)
                .expect("valid beta")
                .inverse_cdf(u)
        }
        MixupBaseline::Cutmix => {
            let (lo, hi) = config.lambda_range.unwrap_or((0.3, 0.7));
            rng.uniform_in(lo, hi)
        }
        MixupBaseline::None => unreachable!("no baseline configured"),
    }
}

/// The three mixed inputs of one baseline iteration: the real unaligned
/// mix (classifier training) and the two aligned mixes carrying
/// generator gradients.
pub fn compose_for_iteration(
    config: &RunConfig,
    src: &Array2<f32>,
    tgt: &Array2<f32>,
    fake_t: &Array2<f32>,
    fake_s: &Array2<f32>,
    rng: &mut StreamRng,
) -> Result<(BaselineMix<f32>, BaselineMix<f32>, BaselineMix<f32>)> {
    let kind = config.ablation.mixup_baseline;
    if kind == MixupBaseline::None {
        return Err(Error::config("no mixup baseline configured"));
    }
    let make = |x_t: &Array2<f32>,
                x_s: &Array2<f32>,
                synth_is_target_side: Option<bool>,
                rng: &mut StreamRng| {
        let lambda = draw_lambda(kind, config, rng);
        match kind {
            MixupBaseline::GlobalMixup => {
                let synth_weight = match synth_is_target_side {
                    Some(true) => lambda,
                    Some(false) => 1.0 - lambda,
                    None => 0.0,
                };
                blend(x_t, x_s, lambda, synth_weight)
            }
            MixupBaseline::Cutmix => {
                let mut m = cutmix(x_t, x_s, lambda, rng, synth_is_target_side == Some(true));
                if synth_is_target_side.is_none() {
                    m.d_synth.fill(0.0);
                }
                m
            }
            MixupBaseline::None => unreachable!(),
        }
    };
    // Unaligned: real target against real source, trains the classifier.
    let unaligned = make(tgt, src, None, rng);
    // Aligned mixes: the translation is the target-appearance side of the
    // s-mix and the source-appearance side of the t-mix.
    let s_mix = make(fake_t, src, Some(true), rng);
    let t_mix = make(tgt, fake_s, Some(false), rng);
    Ok((unaligned, s_mix, t_mix))
}

/// Pooled logit of the global classifier.
fn global_logit_t(
    net: &Net<f32>,
    img: &Array2<f32>,
) -> (f64, crate::nn::layers::Tape<f32>, (usize, usize, usize)) {
    let (h, w) = img.dim();
    let x = img.to_owned().into_shape_with_order((1, h, w)).unwrap();
    let (map, tape) = net.forward_t(x);
    let dims = map.dim();
    let logit = map.iter().map(|&v| v as f64).sum::<f64>() / map.len() as f64;
    (logit, tape, dims)
}

/// One classifier training contribution: BCE of the pooled logit against
/// the mixing-fraction target, gradients scaled by `scale` and
/// accumulated into the net.
pub fn global_cls_step(
    net: &mut Net<f32>,
    img: &Array2<f32>,
    target: f64,
    scale: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::validation("global target must lie in [0, 1]"));
    }
    let (logit, tape, dims) = global_logit_t(net, img);
    let (loss, dlogit) = bce_with_logit(logit, target);
    let n = dims.0 * dims.1 * dims.2;
    let share = (dlogit * scale / n as f64) as f32;
    let g = ndarray::Array3::from_elem(dims, share);
    net.backward(&tape, g, true);
    Ok(loss)
}

/// Generator-side least-squares loss of the pooled logit against the
/// mixing fraction; returns the input-image gradient (classifier frozen).
pub fn global_adv_loss(
    net: &mut Net<f32>,
    img: &Array2<f32>,
    target: f64,
) -> Result<(f64, Array2<f32>)> {
    let (logit, tape, dims) = global_logit_t(net, img);
    let diff = logit - target;
    let loss = diff * diff;
    let n = dims.0 * dims.1 * dims.2;
    let share = (2.0 * diff / n as f64) as f32;
    let g = ndarray::Array3::from_elem(dims, share);
    let gx = net.backward(&tape, g, false);
    let (_, hh, ww) = gx.dim();
    Ok((loss, gx.into_shape_with_order((hh, ww)).unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(side: usize) -> (Array2<f32>, Array2<f32>) {
        let mut rng = StreamRng::new(30, 130);
        let a = Array2::from_shape_simple_fn((side, side), || rng.uniform_in(-1.0, 1.0) as f32);
        let b = Array2::from_shape_simple_fn((side, side), || rng.uniform_in(-1.0, 1.0) as f32);
        (a, b)
    }

    #[test]
    fn blend_is_convex_and_weighted() {
        let (t, s) = images(8);
        let m = blend(&t, &s, 0.25, 0.25);
        for ((o, &a), &b) in m.image.iter().zip(t.iter()).zip(s.iter()) {
            assert!((o - (0.25 * a + 0.75 * b)).abs() < 1e-6);
        }
        assert_eq!(m.lambda_target, 0.25);
    }

    #[test]
    fn cutmix_swaps_exactly_one_rectangle() {
        let (t, s) = images(16);
        let mut rng = StreamRng::new(31, 131);
        let m = cutmix(&t, &s, 0.5, &mut rng, true);
        let mut from_t = 0usize;
        let mut from_s = 0usize;
        for ((o, &a), &b) in m.image.iter().zip(t.iter()).zip(s.iter()) {
            if *o == a {
                from_t += 1;
            } else {
                assert_eq!(*o, b);
                from_s += 1;
            }
        }
        assert!(from_t > 0 && from_s > 0);
        let area = from_t as f64 / (from_t + from_s) as f64;
        assert!((area - m.lambda_target).abs() < 1e-9);
        // Derivative mask matches the rectangle.
        assert_eq!(
            m.d_synth.iter().filter(|&&v| v == 1.0).count(),
            from_t
        );
    }

    #[test]
    fn mixup_lambda_stays_in_unit_interval() {
        let cfg_json = r#"{
            "version": 1, "dataset": "/tmp/x", "iterations": 1,
            "eval_interval": 1,
            "ablation": {"mixup_baseline": "global_mixup", "disable_synthmix": true}
        }"#;
        let config = RunConfig::from_json(cfg_json).unwrap();
        let mut rng = StreamRng::new(32, 132);
        for _ in 0..200 {
            let l = draw_lambda(MixupBaseline::GlobalMixup, &config, &mut rng);
            assert!((0.0..=1.0).contains(&l));
        }
    }
}
