//! Composition of the five per-iteration input kinds.
//!
//! Given a source image, a target image, and their cross-domain
//! translations, one iteration produces: the unmixed source, the unmixed
//! target, an unaligned mix of the two real images, and the two aligned
//! mixes (real source with its synthetic-target translation, real target
//! with its synthetic-source translation). The first three train the
//! inspector; the aligned mixes carry adversarial gradients back to the
//! generators and are never used to train the inspector.
//!
//! The binary mask selects whole pixels, so every output pixel is
//! bit-equal to the corresponding pixel of exactly one input image. The
//! mask-one cells always hold the target-appearance member of the pair:
//! the real target in unaligned and t-mix images, the synthetic target in
//! s-mix images. A patch label of 1 therefore always reads "this patch
//! should pass as target domain".

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::maskgen::{generate_grid, upsample, MaskGrid, MixMaskSpec, PixelMask};
use crate::rng::StreamRng;

/// Which domain a sample's appearance belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
    /// Generator output `G_{S->T}(source)`.
    SynthTarget,
    /// Generator output `G_{T->S}(target)`.
    SynthSource,
}

/// Whether a sample's segmentation label may feed a training loss.
/// Target-domain ground truth exists only for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelPolicy {
    TrainUsable,
    EvalOnly,
}

/// One image with optional segmentation label.
#[derive(Debug, Clone)]
pub struct Sample<F> {
    pub image: Array2<F>,
    seg_label: Option<Array2<u8>>,
    pub domain: Domain,
    pub label_policy: LabelPolicy,
}

impl<F> Sample<F> {
    pub fn unlabelled(image: Array2<F>, domain: Domain) -> Self {
        Sample {
            image,
            seg_label: None,
            domain,
            label_policy: LabelPolicy::TrainUsable,
        }
    }

    pub fn labelled(
        image: Array2<F>,
        seg_label: Array2<u8>,
        domain: Domain,
        label_policy: LabelPolicy,
    ) -> Self {
        Sample {
            image,
            seg_label: Some(seg_label),
            domain,
            label_policy,
        }
    }

    /// Label for use inside a training loss. Refused for eval-only samples
    /// regardless of whether the label is physically present.
    pub fn label_for_training(&self) -> Result<Option<&Array2<u8>>> {
        match (self.label_policy, &self.seg_label) {
            (LabelPolicy::EvalOnly, Some(_)) => Err(Error::validation(
                "segmentation label is eval-only and may not reach a training loss",
            )),
            (_, label) => Ok(label.as_ref()),
        }
    }

    /// Label for evaluation; no policy restriction.
    pub fn label_for_eval(&self) -> Option<&Array2<u8>> {
        self.seg_label.as_ref()
    }

    pub fn has_label(&self) -> bool {
        self.seg_label.is_some()
    }
}

/// The five input kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixKind {
    Src,
    Tgt,
    UnalignedMix,
    SMix,
    TMix,
}

impl std::fmt::Display for MixKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MixKind::Src => "src",
            MixKind::Tgt => "tgt",
            MixKind::UnalignedMix => "unaligned_mix",
            MixKind::SMix => "s_mix",
            MixKind::TMix => "t_mix",
        };
        f.write_str(s)
    }
}

/// A composed input with its per-patch domain labels (1 = target-domain
/// content), the mixed segmentation label when both constituents carry
/// one, and the pixel mask it was built from (absent for unmixed kinds).
#[derive(Debug, Clone)]
pub struct MixedSample<F> {
    pub image: Array2<F>,
    pub patch_domain_labels: Array2<u8>,
    pub seg_label: Option<Array2<u8>>,
    pub kind: MixKind,
    pub mask: Option<PixelMask>,
}

/// One iteration's worth of inputs, partitioned by consumer.
#[derive(Debug, Clone)]
pub struct MixedBatch<F> {
    /// Kinds {src, tgt, unaligned_mix}: train the inspector.
    pub inspector_inputs: Vec<MixedSample<F>>,
    /// Kinds {s_mix, t_mix}: adversarial gradients for the generators.
    pub generator_inputs: Vec<MixedSample<F>>,
}

fn check_shape<T>(mask: &PixelMask, img: &Array2<T>, name: &str) -> Result<()> {
    if img.dim() != (mask.side(), mask.side()) {
        return Err(Error::dimension(format!(
            "{name} has shape {:?}, mask is {}x{}",
            img.dim(),
            mask.side(),
            mask.side()
        )));
    }
    Ok(())
}

/// Per-pixel selection `M*x_T + (1-M)*x_S`: mask-one pixels come from
/// `x_t`, mask-zero pixels from `x_s`.
pub fn mix_images<F: Copy>(
    mask: &PixelMask,
    x_t: &Array2<F>,
    x_s: &Array2<F>,
) -> Result<Array2<F>> {
    check_shape(mask, x_t, "x_t")?;
    check_shape(mask, x_s, "x_s")?;
    let mut out = x_s.clone();
    for ((o, &m), &t) in out.iter_mut().zip(mask.values().iter()).zip(x_t.iter()) {
        if m == 1 {
            *o = t;
        }
    }
    Ok(out)
}

/// Per-pixel selection on integer label maps. With a binary mask the
/// mixed label is a selection, never an average of class indices.
pub fn mix_seg_labels(
    mask: &PixelMask,
    y_t: &Array2<u8>,
    y_s: &Array2<u8>,
) -> Result<Array2<u8>> {
    mix_images(mask, y_t, y_s)
}

/// Labels for the five kinds share one convention: cell value 1 means the
/// patch holds target-appearance content.
fn constant_labels(k: usize, value: u8) -> Array2<u8> {
    Array2::from_elem((k, k), value)
}

/// Build the five kinds for one iteration. `src2tgt`/`tgt2src` must be the
/// translations of this iteration's `src`/`tgt` (content alignment), which
/// is what lets the mixed segmentation label collapse to the real one.
pub fn compose_iteration<F: Copy>(
    src: &Sample<F>,
    tgt: &Sample<F>,
    src2tgt: &Sample<F>,
    tgt2src: &Sample<F>,
    spec: &MixMaskSpec,
    rng: &mut StreamRng,
) -> Result<MixedBatch<F>> {
    spec.validate()?;
    if src.domain != Domain::Source || tgt.domain != Domain::Target {
        return Err(Error::protocol("src/tgt samples carry the wrong domain tag"));
    }
    if src2tgt.domain != Domain::SynthTarget {
        return Err(Error::protocol(
            "missing synthetic target input: src2tgt must be a G_{S->T} output",
        ));
    }
    if tgt2src.domain != Domain::SynthSource {
        return Err(Error::protocol(
            "missing synthetic source input: tgt2src must be a G_{T->S} output",
        ));
    }
    let side = spec.image_side;
    for (img, name) in [
        (&src.image, "src"),
        (&tgt.image, "tgt"),
        (&src2tgt.image, "src2tgt"),
        (&tgt2src.image, "tgt2src"),
    ] {
        if img.dim() != (side, side) {
            return Err(Error::dimension(format!(
                "{name} has shape {:?}, expected {side}x{side}",
                img.dim()
            )));
        }
    }

    let draw_mask = |rng: &mut StreamRng| -> Result<(MaskGrid, PixelMask)> {
        let grid = generate_grid(spec, rng)?;
        let mask = upsample(&grid, side)?;
        Ok((grid, mask))
    };
    let (grid_u, mask_u) = draw_mask(rng)?;
    let (grid_s, mask_s) = draw_mask(rng)?;
    let (grid_t, mask_t) = draw_mask(rng)?;

    let src_label = src.label_for_training()?.cloned();
    let tgt_label = tgt.label_for_training()?.cloned();

    let src_sample = MixedSample {
        image: src.image.clone(),
        patch_domain_labels: constant_labels(spec.k, 0),
        seg_label: src_label.clone(),
        kind: MixKind::Src,
        mask: None,
    };
    let tgt_sample = MixedSample {
        image: tgt.image.clone(),
        patch_domain_labels: constant_labels(spec.k, 1),
        seg_label: tgt_label.clone(),
        kind: MixKind::Tgt,
        mask: None,
    };

    // Unaligned: real target content in mask-one cells, real source in
    // mask-zero cells. Different anatomy on the two sides.
    let unaligned = MixedSample {
        image: mix_images(&mask_u, &tgt.image, &src.image)?,
        patch_domain_labels: grid_u.cells().clone(),
        seg_label: match (&tgt_label, &src_label) {
            (Some(yt), Some(ys)) => Some(mix_seg_labels(&mask_u, yt, ys)?),
            _ => None,
        },
        kind: MixKind::UnalignedMix,
        mask: Some(mask_u),
    };

    // Aligned s-mix: synthetic target in mask-one cells, real source in
    // mask-zero cells. The translation inherits the source label.
    let s2t_label = src2tgt.label_for_training()?.cloned().or(src_label.clone());
    let s_mix = MixedSample {
        image: mix_images(&mask_s, &src2tgt.image, &src.image)?,
        patch_domain_labels: grid_s.cells().clone(),
        seg_label: match (&s2t_label, &src_label) {
            (Some(yt), Some(ys)) => Some(mix_seg_labels(&mask_s, yt, ys)?),
            _ => None,
        },
        kind: MixKind::SMix,
        mask: Some(mask_s),
    };

    // Aligned t-mix: real target in mask-one cells, synthetic source in
    // mask-zero cells.
    let t2s_label = tgt2src.label_for_training()?.cloned().or(tgt_label.clone());
    let t_mix = MixedSample {
        image: mix_images(&mask_t, &tgt.image, &tgt2src.image)?,
        patch_domain_labels: grid_t.cells().clone(),
        seg_label: match (&tgt_label, &t2s_label) {
            (Some(yt), Some(ys)) => Some(mix_seg_labels(&mask_t, yt, ys)?),
            _ => None,
        },
        kind: MixKind::TMix,
        mask: Some(mask_t),
    };

    Ok(MixedBatch {
        inspector_inputs: vec![src_sample, tgt_sample, unaligned],
        generator_inputs: vec![s_mix, t_mix],
    })
}
