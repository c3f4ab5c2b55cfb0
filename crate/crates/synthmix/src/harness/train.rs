//! The alternating training loop.
//!
//! Per iteration: generators step on adversarial + cycle (+ masked mix
//! adversarial) losses; image and feature discriminators step on their
//! real/fake pairs; the inspector steps on the three authentic-content
//! kinds; finally the segmentor (shared encoder + head) steps on the
//! translated source image with its source label plus the feature
//! alignment term. Every random draw comes from a counter-based stream,
//! so two runs with one config are identical.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;

use super::baselines::{self, BaselineMix};
use super::evaluate::{evaluate_bundle, write_report};
use super::{EvalPoint, IterLog, MixupBaseline, ProtocolRecord, RunConfig, RunLog};
use crate::checkpoint::save_checkpoint;
use crate::dataio::{load_manifest, load_split, DomainTag, Split};
use crate::error::{Error, Result};
use crate::gan::{
    cycle_loss, feature_adv_loss, lsgan_loss, seg_loss, total_objective, BundleOptions,
    LossComponents, ModelBundle,
};
use crate::inspector::{generator_mix_adv_loss, inspector_loss};
use crate::maskgen::mask_mean;
use crate::metrics::EvalReport;
use crate::mixer::{compose_iteration, Domain, MixKind, MixedBatch, Sample};
use crate::nn::AdamCfg;
use crate::rng::{streams, StreamRng};

/// What a finished run hands back.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub final_checkpoint: PathBuf,
    pub runlog_path: PathBuf,
    pub final_report: EvalReport,
}

/// Bundle construction flags implied by a run config.
pub fn bundle_options(config: &RunConfig) -> BundleOptions {
    let a = &config.ablation;
    BundleOptions {
        with_image_discs: !a.disable_d_s_d_t && !a.source_only,
        with_inspector: !a.disable_synthmix
            && !a.source_only
            && a.mixup_baseline == MixupBaseline::None,
        with_feature_disc: !a.source_only,
        with_baseline_inspector: a.mixup_baseline != MixupBaseline::None && !a.source_only,
        k: config.effective_k(),
    }
}

pub struct Trainer {
    pub config: RunConfig,
    pub bundle: ModelBundle<f32>,
    src_train: Vec<(String, Sample<f32>)>,
    tgt_train: Vec<(String, Sample<f32>)>,
    tgt_test: Vec<(String, Sample<f32>)>,
    adam_gan: AdamCfg,
    adam_seg: AdamCfg,
    config_json: serde_json::Value,
    config_hash: String,
}

impl Trainer {
    pub fn new(config: &RunConfig) -> Result<Trainer> {
        config.validate()?;
        let manifest = load_manifest(&config.dataset)?;
        if manifest.spec.image_side != config.model.image_side {
            return Err(Error::config(format!(
                "dataset image_side {} differs from model image_side {}",
                manifest.spec.image_side, config.model.image_side
            )));
        }
        if manifest.spec.class_count != config.model.class_count {
            return Err(Error::config(format!(
                "dataset class_count {} differs from model class_count {}",
                manifest.spec.class_count, config.model.class_count
            )));
        }
        let src_train = load_split(&config.dataset, &manifest, DomainTag::Source, Split::Train)?;
        let tgt_train = load_split(&config.dataset, &manifest, DomainTag::Target, Split::Train)?;
        let tgt_test = load_split(&config.dataset, &manifest, DomainTag::Target, Split::Test)?;
        if src_train.is_empty() || tgt_train.is_empty() || tgt_test.is_empty() {
            return Err(Error::data("dataset has an empty split".to_string()));
        }
        let bundle = ModelBundle::build(&config.model, &bundle_options(config), config.seed)?;
        Ok(Trainer {
            adam_gan: AdamCfg::new(config.optim.lr_gan),
            adam_seg: AdamCfg {
                beta1: 0.9,
                ..AdamCfg::new(config.optim.lr_seg)
            },
            config_json: serde_json::to_value(config).expect("config serializes"),
            config_hash: config.hash(),
            config: config.clone(),
            bundle,
            src_train,
            tgt_train,
            tgt_test,
        })
    }

    fn lambda_for(&self, iteration: u64) -> f64 {
        match self.config.lambda_range {
            Some((lo, hi)) => {
                StreamRng::at(self.config.seed, streams::LAMBDA, iteration).uniform_in(lo, hi)
            }
            None => self.config.mask.lambda_ratio,
        }
    }

    fn sample_indices(&self, iteration: u64) -> (usize, usize) {
        let mut rng = StreamRng::at(self.config.seed, streams::DATA_SAMPLING, iteration);
        (
            rng.below(self.src_train.len()),
            rng.below(self.tgt_train.len()),
        )
    }

    /// One full alternating step. Returns the iteration's loss terms and,
    /// when instrumentation is on, the protocol record.
    pub fn step(&mut self, iteration: u64) -> Result<(IterLog, Option<ProtocolRecord>)> {
        if self.config.ablation.source_only {
            return self.step_source_only(iteration);
        }
        let (si, ti) = self.sample_indices(iteration);
        let src = self.src_train[si].1.clone();
        let tgt = self.tgt_train[ti].1.clone();
        let mut log = IterLog {
            iteration,
            ..IterLog::default()
        };
        let w = self.config.loss_weights;

        // Translations, with tapes for the generator step.
        let (fake_t, tp_s2t) = self.bundle.g_s2t.translate_t(&src.image);
        let (fake_s, tp_t2s) = self.bundle.g_t2s.translate_t(&tgt.image);

        // Mixed-input batch for this iteration.
        let mut mask_spec = self.config.effective_mask();
        mask_spec.lambda_ratio = self.lambda_for(iteration);
        let batch: Option<MixedBatch<f32>> = if self.bundle.inspector.is_some() {
            let src_label = src.label_for_training()?.cloned();
            let s2t_sample = match &src_label {
                Some(y) => Sample::labelled(
                    fake_t.clone(),
                    y.clone(),
                    Domain::SynthTarget,
                    crate::mixer::LabelPolicy::TrainUsable,
                ),
                None => Sample::unlabelled(fake_t.clone(), Domain::SynthTarget),
            };
            let t2s_sample = Sample::unlabelled(fake_s.clone(), Domain::SynthSource);
            Some(compose_iteration(
                &src,
                &tgt,
                &s2t_sample,
                &t2s_sample,
                &mask_spec,
                &mut mask_spec.rng_for_draw(iteration),
            )?)
        } else {
            None
        };
        let baseline: Option<(BaselineMix<f32>, BaselineMix<f32>, BaselineMix<f32>)> =
            if self.bundle.baseline_inspector.is_some() {
                let mut rng = StreamRng::at(self.config.seed, streams::BASELINE_MIX, iteration);
                Some(baselines::compose_for_iteration(
                    &self.config,
                    &src.image,
                    &tgt.image,
                    &fake_t,
                    &fake_s,
                    &mut rng,
                )?)
            } else {
                None
            };

        // ---- Generator step -------------------------------------------
        self.bundle.g_s2t.zero_grads();
        self.bundle.g_t2s.zero_grads();

        let (rec_s, tp_rec_s) = self.bundle.g_t2s.translate_t(&fake_t);
        let (rec_t, tp_rec_t) = self.bundle.g_s2t.translate_t(&fake_s);
        let (l_cyc, d_rec_s, d_rec_t) = cycle_loss(&rec_s, &src.image, &rec_t, &tgt.image)?;
        log.l_cyc = l_cyc;

        let mut g_fake_t = Array2::<f32>::zeros(fake_t.dim());
        let mut g_fake_s = Array2::<f32>::zeros(fake_s.dim());

        if self.bundle.d_t.is_some() {
            let d_t = self.bundle.d_t.as_mut().unwrap();
            let (scores, tp) = d_t.forward_t(to_feat(&fake_t));
            let (l, d) = lsgan_loss(&scores, 1.0);
            g_fake_t += &from_feat(d_t.backward(&tp, d, false));
            log.l_gen_adv += l;
            let d_s = self.bundle.d_s.as_mut().unwrap();
            let (scores, tp) = d_s.forward_t(to_feat(&fake_s));
            let (l, d) = lsgan_loss(&scores, 1.0);
            g_fake_s += &from_feat(d_s.backward(&tp, d, false));
            log.l_gen_adv += l;
        }

        let mut gen_adv_kinds = Vec::new();
        if let (Some(batch), Some(insp)) = (&batch, &mut self.bundle.inspector) {
            let s_mix = &batch.generator_inputs[0];
            let t_mix = &batch.generator_inputs[1];
            debug_assert_eq!(s_mix.kind, MixKind::SMix);
            debug_assert_eq!(t_mix.kind, MixKind::TMix);
            let (out_s, itp_s) = insp.arch.inspect_t(&insp.store, &s_mix.image)?;
            let (out_t, itp_t) = insp.arch.inspect_t(&insp.store, &t_mix.image)?;
            let mix = generator_mix_adv_loss(
                &out_s,
                &out_t,
                &s_mix.patch_domain_labels,
                &t_mix.patch_domain_labels,
            )?;
            log.l_mix_adv = mix.value as f64;
            let lam_i = w.lambda_i as f32;
            let g_s_img = insp.arch.backward(
                &mut insp.store,
                &itp_s,
                &mix.d_patch_s.mapv(|v| v * lam_i),
                0.0,
                false,
            );
            let g_t_img = insp.arch.backward(
                &mut insp.store,
                &itp_t,
                &mix.d_patch_t.mapv(|v| v * lam_i),
                0.0,
                false,
            );
            // d s_mix / d fake_t = M; d t_mix / d fake_s = 1 - M.
            let mask_s = s_mix.mask.as_ref().unwrap().values();
            let mask_t = t_mix.mask.as_ref().unwrap().values();
            for ((g, &m), &gi) in g_fake_t.iter_mut().zip(mask_s.iter()).zip(g_s_img.iter()) {
                if m == 1 {
                    *g += gi;
                }
            }
            for ((g, &m), &gi) in g_fake_s.iter_mut().zip(mask_t.iter()).zip(g_t_img.iter()) {
                if m == 0 {
                    *g += gi;
                }
            }
            gen_adv_kinds.push(MixKind::SMix);
            gen_adv_kinds.push(MixKind::TMix);
        }
        if let Some((_, s_mix_b, t_mix_b)) = &baseline {
            let insp = self.bundle.baseline_inspector.as_mut().unwrap();
            let lam_i = w.lambda_i as f32;
            let (l_s, g_img_s) =
                baselines::global_adv_loss(insp, &s_mix_b.image, s_mix_b.lambda_target)?;
            let (l_t, g_img_t) =
                baselines::global_adv_loss(insp, &t_mix_b.image, t_mix_b.lambda_target)?;
            log.l_mix_adv = l_s + l_t;
            for ((g, &wgt), &gi) in g_fake_t
                .iter_mut()
                .zip(s_mix_b.d_synth.iter())
                .zip(g_img_s.iter())
            {
                *g += gi * wgt * lam_i;
            }
            for ((g, &wgt), &gi) in g_fake_s
                .iter_mut()
                .zip(t_mix_b.d_synth.iter())
                .zip(g_img_t.iter())
            {
                *g += gi * wgt * lam_i;
            }
            gen_adv_kinds.push(MixKind::SMix);
            gen_adv_kinds.push(MixKind::TMix);
        }

        let lam_cyc = w.lambda_cyc as f32;
        g_fake_t += &self
            .bundle
            .g_t2s
            .backward(&tp_rec_s, &d_rec_s.mapv(|v| v * lam_cyc), true);
        g_fake_s += &self
            .bundle
            .g_s2t
            .backward(&tp_rec_t, &d_rec_t.mapv(|v| v * lam_cyc), true);
        self.bundle.g_s2t.backward_params_only(&tp_s2t, &g_fake_t, true);
        self.bundle.g_t2s.backward_params_only(&tp_t2s, &g_fake_s, true);
        self.bundle.g_s2t.encoder.store.adam_step(&self.adam_gan);
        self.bundle.g_s2t.decoder.store.adam_step(&self.adam_gan);
        self.bundle.g_t2s.encoder.store.adam_step(&self.adam_gan);
        self.bundle.g_t2s.decoder.store.adam_step(&self.adam_gan);

        // ---- Discriminator steps (translations now constants) ----------
        if self.bundle.d_t.is_some() {
            let d_t = self.bundle.d_t.as_mut().unwrap();
            d_t.store.zero_grads();
            let (s_real, tp) = d_t.forward_t(to_feat(&tgt.image));
            let (lr, dr) = lsgan_loss(&s_real, 1.0);
            d_t.backward_params_only(&tp, dr, true);
            let (s_fake, tp) = d_t.forward_t(to_feat(&fake_t));
            let (lf, df) = lsgan_loss(&s_fake, 0.0);
            d_t.backward_params_only(&tp, df, true);
            d_t.store.adam_step(&self.adam_gan);
            log.l_d_t = lr + lf;

            let d_s = self.bundle.d_s.as_mut().unwrap();
            d_s.store.zero_grads();
            let (s_real, tp) = d_s.forward_t(to_feat(&src.image));
            let (lr, dr) = lsgan_loss(&s_real, 1.0);
            d_s.backward_params_only(&tp, dr, true);
            let (s_fake, tp) = d_s.forward_t(to_feat(&fake_s));
            let (lf, df) = lsgan_loss(&s_fake, 0.0);
            d_s.backward_params_only(&tp, df, true);
            d_s.store.adam_step(&self.adam_gan);
            log.l_d_s = lr + lf;
        }

        if self.bundle.d_f.is_some() {
            let feats_fake = self.bundle.g_t2s.encoder.forward(to_feat(&fake_t));
            let feats_tgt = self.bundle.g_t2s.encoder.forward(to_feat(&tgt.image));
            let d_f = self.bundle.d_f.as_mut().unwrap();
            d_f.store.zero_grads();
            let (s_ref, tp) = d_f.forward_t(feats_fake);
            let (lr, dr) = lsgan_loss(&s_ref, 1.0);
            d_f.backward_params_only(&tp, dr, true);
            let (s_tgt, tp) = d_f.forward_t(feats_tgt);
            let (lt, dt) = lsgan_loss(&s_tgt, 0.0);
            d_f.backward_params_only(&tp, dt, true);
            d_f.store.adam_step(&self.adam_gan);
            log.l_d_f = lr + lt;
        }

        // ---- Inspector step --------------------------------------------
        let mut inspector_kinds = Vec::new();
        if let (Some(batch), Some(insp)) = (&batch, &mut self.bundle.inspector) {
            insp.store.zero_grads();
            let n = batch.inspector_inputs.len() as f32;
            for mixed in &batch.inspector_inputs {
                let (out, tp) = insp.arch.inspect_t(&insp.store, &mixed.image)?;
                let global_target = patch_label_mean(&mixed.patch_domain_labels);
                if let Some(m) = &mixed.mask {
                    debug_assert!((mask_mean(m) - global_target).abs() < 1e-12);
                }
                let cls = inspector_loss(&out, &mixed.patch_domain_labels, global_target)?;
                insp.arch.backward_params_only(
                    &mut insp.store,
                    &tp,
                    &cls.d_patch.mapv(|v| v / n),
                    cls.d_global / n,
                );
                log.l_cls += cls.value as f64 / n as f64;
                inspector_kinds.push(mixed.kind);
            }
            insp.store.adam_step(&self.adam_gan);
        }
        if let Some((unaligned_b, _, _)) = &baseline {
            let insp = self.bundle.baseline_inspector.as_mut().unwrap();
            insp.store.zero_grads();
            let terms: [(&Array2<f32>, f64, MixKind); 3] = [
                (&src.image, 0.0, MixKind::Src),
                (&tgt.image, 1.0, MixKind::Tgt),
                (&unaligned_b.image, unaligned_b.lambda_target, MixKind::UnalignedMix),
            ];
            for (img, target, kind) in terms {
                let l = baselines::global_cls_step(insp, img, target, 1.0 / 3.0)?;
                log.l_cls += l / 3.0;
                inspector_kinds.push(kind);
            }
            insp.store.adam_step(&self.adam_gan);
        }

        // ---- Segmentor step (shared encoder + head) ---------------------
        let y_src = src
            .label_for_training()?
            .ok_or_else(|| Error::data("source training sample has no label".to_string()))?;
        self.bundle.g_t2s.encoder.store.zero_grads();
        self.bundle.seg_head.store.zero_grads();
        let (feats, tpe) = self.bundle.g_t2s.encoder.forward_t(to_feat(&fake_t));
        let (logits, tph) = self.bundle.seg_head.forward_t(feats);
        let (l_seg, d_logits) = seg_loss(&logits, y_src)?;
        log.l_seg = l_seg.value;
        let lam_seg = w.lambda_seg as f32;
        let g_feats = self
            .bundle
            .seg_head
            .backward(&tph, d_logits.mapv(|v| v * lam_seg), true);
        self.bundle
            .g_t2s
            .encoder
            .backward_params_only(&tpe, g_feats, true);
        if self.bundle.d_f.is_some() {
            let (feats_tgt, tpe2) = self.bundle.g_t2s.encoder.forward_t(to_feat(&tgt.image));
            let (l_feat_gen, g_feats_tgt) =
                feature_adv_loss(self.bundle.d_f.as_mut().unwrap(), &feats_tgt);
            log.l_feat_gen = l_feat_gen;
            let lam_adv = w.lambda_adv as f32;
            self.bundle
                .g_t2s
                .encoder
                .backward_params_only(&tpe2, g_feats_tgt.mapv(|v| v * lam_adv), true);
        }
        self.bundle.g_t2s.encoder.store.adam_step(&self.adam_gan);
        self.bundle.seg_head.store.adam_step(&self.adam_seg);

        log.total = total_objective(
            &LossComponents {
                l_adv_t: log.l_d_t,
                l_adv_s: log.l_d_s,
                l_cyc: log.l_cyc,
                l_seg: log.l_seg,
                l_feat: log.l_d_f,
            },
            &w,
        ) + crate::inspector::synthmix_objective(log.l_mix_adv, log.l_cls, w.lambda_i);

        let protocol = self.config.record_protocol.then(|| ProtocolRecord {
            iteration,
            inspector_kinds,
            generator_adv_kinds: gen_adv_kinds,
        });
        Ok((log, protocol))
    }

    /// No-adaptation baseline: the segmentor trains directly on labelled
    /// source images.
    fn step_source_only(&mut self, iteration: u64) -> Result<(IterLog, Option<ProtocolRecord>)> {
        let (si, _) = self.sample_indices(iteration);
        let src = self.src_train[si].1.clone();
        let y_src = src
            .label_for_training()?
            .ok_or_else(|| Error::data("source training sample has no label".to_string()))?;
        self.bundle.g_t2s.encoder.store.zero_grads();
        self.bundle.seg_head.store.zero_grads();
        let (feats, tpe) = self.bundle.g_t2s.encoder.forward_t(to_feat(&src.image));
        let (logits, tph) = self.bundle.seg_head.forward_t(feats);
        let (l_seg, d_logits) = seg_loss(&logits, y_src)?;
        let g_feats = self.bundle.seg_head.backward(&tph, d_logits, true);
        self.bundle
            .g_t2s
            .encoder
            .backward_params_only(&tpe, g_feats, true);
        self.bundle.g_t2s.encoder.store.adam_step(&self.adam_seg);
        self.bundle.seg_head.store.adam_step(&self.adam_seg);
        let log = IterLog {
            iteration,
            l_seg: l_seg.value,
            total: l_seg.value,
            ..IterLog::default()
        };
        Ok((log, None))
    }

    pub fn evaluate_test(&self) -> Result<EvalReport> {
        evaluate_bundle(&self.bundle, &self.tgt_test, self.config.model.class_count)
    }

    /// A couple of qualitative test cases for the plot command: input,
    /// its cross-domain translation, the prediction, and ground truth.
    fn dump_panels(&self, dir: &Path, iteration: u64) -> Result<()> {
        let panel_dir = dir.join("panels").join(format!("iter{iteration:07}"));
        fs::create_dir_all(&panel_dir).map_err(|e| Error::io(&panel_dir, e))?;
        for (j, (id, sample)) in self.tgt_test.iter().take(2).enumerate() {
            let translation = self
                .bundle
                .translate(&sample.image, crate::gan::Direction::T2S)?;
            let pred = self.bundle.predict_classes(&sample.image)?;
            let gt = sample
                .label_for_eval()
                .ok_or_else(|| Error::data(format!("test case {id} lacks ground truth")))?;
            let base = panel_dir.join(format!("case{j}"));
            write_f32(&base.with_extension("input.f32"), &sample.image)?;
            write_f32(&base.with_extension("translation.f32"), &translation)?;
            write_u8(&base.with_extension("prediction.u8"), &pred)?;
            write_u8(&base.with_extension("gt.u8"), gt)?;
        }
        Ok(())
    }
}

fn to_feat(img: &Array2<f32>) -> ndarray::Array3<f32> {
    let (h, w) = img.dim();
    img.to_owned().into_shape_with_order((1, h, w)).unwrap()
}

fn from_feat(f: ndarray::Array3<f32>) -> Array2<f32> {
    let (_, h, w) = f.dim();
    f.into_shape_with_order((h, w)).unwrap()
}

fn patch_label_mean(labels: &Array2<u8>) -> f64 {
    labels.iter().map(|&v| v as usize).sum::<usize>() as f64 / labels.len() as f64
}

fn write_f32(path: &Path, img: &Array2<f32>) -> Result<()> {
    fs::write(path, crate::dataio::image_bytes(img)).map_err(|e| Error::io(path, e))
}

fn write_u8(path: &Path, img: &Array2<u8>) -> Result<()> {
    let bytes: Vec<u8> = img.iter().copied().collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Run a full training job, writing checkpoints, panels, the run log,
/// and the final evaluation report under `out_dir`.
pub fn train(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let t0 = Instant::now();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut trainer = Trainer::new(config)?;
    let mut runlog = RunLog {
        config_hash: trainer.config_hash.clone(),
        iters: Vec::new(),
        evals: Vec::new(),
        wall_seconds: 0.0,
        protocol: config.record_protocol.then(Vec::new),
    };
    let mut kept_checkpoints: Vec<PathBuf> = Vec::new();

    for iteration in 0..config.iterations {
        let (log, protocol) = trainer.step(iteration)?;
        let terms = [
            log.l_gen_adv,
            log.l_cyc,
            log.l_mix_adv,
            log.l_cls,
            log.l_d_s,
            log.l_d_t,
            log.l_d_f,
            log.l_seg,
            log.l_feat_gen,
        ];
        if let Some(bad) = bad_term(&terms) {
            let diag = out_dir.join(format!("diagnostic_iter{iteration:07}.smx"));
            save_checkpoint(
                &diag,
                &trainer.bundle,
                iteration,
                &trainer.config_hash,
                &trainer.config_json,
            )?;
            runlog.wall_seconds = t0.elapsed().as_secs_f64();
            runlog.save(&out_dir.join("runlog.json"))?;
            return Err(Error::Divergence {
                iteration,
                term: bad.to_string(),
            });
        }
        runlog.iters.push(log);
        if let (Some(records), Some(p)) = (&mut runlog.protocol, protocol) {
            records.push(p);
        }

        let done = iteration + 1;
        if done % config.eval_interval == 0 && done < config.iterations {
            let report = trainer.evaluate_test()?;
            runlog.evals.push(EvalPoint {
                iteration: done,
                report,
            });
            trainer.dump_panels(out_dir, done)?;
            let path = out_dir.join(format!("ckpt_iter{done:07}.smx"));
            save_checkpoint(
                &path,
                &trainer.bundle,
                done,
                &trainer.config_hash,
                &trainer.config_json,
            )?;
            kept_checkpoints.push(path);
            while kept_checkpoints.len() > config.checkpoint_keep {
                let old = kept_checkpoints.remove(0);
                let _ = fs::remove_file(old);
            }
        }
    }

    let final_report = trainer.evaluate_test()?;
    runlog.evals.push(EvalPoint {
        iteration: config.iterations,
        report: final_report.clone(),
    });
    trainer.dump_panels(out_dir, config.iterations)?;
    let final_checkpoint = out_dir.join("final.smx");
    save_checkpoint(
        &final_checkpoint,
        &trainer.bundle,
        config.iterations,
        &trainer.config_hash,
        &trainer.config_json,
    )?;
    runlog.wall_seconds = t0.elapsed().as_secs_f64();
    let runlog_path = out_dir.join("runlog.json");
    runlog.save(&runlog_path)?;
    write_report(&final_report, &out_dir.join("report.json"))?;
    Ok(RunOutcome {
        final_checkpoint,
        runlog_path,
        final_report,
    })
}

fn bad_term(terms: &[f64]) -> Option<&'static str> {
    const NAMES: [&str; 9] = [
        "l_gen_adv",
        "l_cyc",
        "l_mix_adv",
        "l_cls",
        "l_d_s",
        "l_d_t",
        "l_d_f",
        "l_seg",
        "l_feat_gen",
    ];
    terms
        .iter()
        .zip(NAMES.iter())
        .find(|(v, _)| !v.is_finite())
        .map(|(_, n)| *n)
}
