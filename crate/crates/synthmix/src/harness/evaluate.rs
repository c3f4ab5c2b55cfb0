//! Checkpoint/bundle evaluation against a dataset split.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::train::bundle_options;
use super::RunConfig;
use crate::checkpoint::load_checkpoint_into;
use crate::dataio::{load_manifest, load_split, DomainTag, Split};
use crate::error::{Error, Result};
use crate::gan::ModelBundle;
use crate::metrics::{score_case, EvalReport};
use crate::mixer::Sample;

/// Score a list of (prediction, ground truth) pairs. The segmentor is
/// injectable here, which is what lets tests drive a perfect oracle
/// through the same aggregation path.
pub fn evaluate_predictions(
    items: &[(String, Array2<u8>, Array2<u8>)],
    class_count: u8,
) -> Result<EvalReport> {
    let mut cases = Vec::with_capacity(items.len());
    for (id, pred, gt) in items {
        cases.push(score_case(id, pred, gt, class_count, (1.0, 1.0))?);
    }
    Ok(EvalReport::from_cases(cases))
}

/// Run the bundle's segmentor over labelled cases and aggregate.
pub fn evaluate_bundle(
    bundle: &ModelBundle<f32>,
    cases: &[(String, Sample<f32>)],
    class_count: u8,
) -> Result<EvalReport> {
    let mut items = Vec::with_capacity(cases.len());
    for (id, sample) in cases {
        let gt = sample
            .label_for_eval()
            .ok_or_else(|| Error::data(format!("case {id} has no ground truth")))?;
        let pred = bundle.predict_classes(&sample.image)?;
        items.push((id.clone(), pred, gt.clone()));
    }
    evaluate_predictions(&items, class_count)
}

/// Rebuild the model from the config embedded in a checkpoint, load its
/// parameters, and evaluate the requested split.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    dataset_dir: &Path,
    split: Split,
) -> Result<EvalReport> {
    let manifest = crate::checkpoint::read_checkpoint_manifest(checkpoint)?;
    let config: RunConfig = serde_json::from_value(manifest.config.clone())
        .map_err(|e| Error::data(format!("checkpoint config parse: {e}")))?;
    let data_manifest = load_manifest(dataset_dir)?;
    if data_manifest.spec.image_side != config.model.image_side {
        return Err(Error::config(format!(
            "checkpoint expects {}px images, dataset holds {}px",
            config.model.image_side, data_manifest.spec.image_side
        )));
    }
    let mut bundle = ModelBundle::build(&config.model, &bundle_options(&config), config.seed)?;
    load_checkpoint_into(checkpoint, &mut bundle)?;
    let cases = load_split(dataset_dir, &data_manifest, DomainTag::Target, split)?;
    if cases.is_empty() {
        return Err(Error::data("requested split is empty".to_string()));
    }
    evaluate_bundle(&bundle, &cases, config.model.class_count)
}

/// Write a report as JSON plus a per-case CSV next to it.
pub fn write_report(report: &EvalReport, json_path: &Path) -> Result<()> {
    if let Some(dir) = json_path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(json_path, json).map_err(|e| Error::io(json_path, e))?;
    let csv_path = json_path.with_extension("csv");
    fs::write(&csv_path, report.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    #[test]
    fn perfect_oracle_scores_dice_one_assd_zero() {
        let mut rng = StreamRng::new(21, 120);
        let mut items = Vec::new();
        for i in 0..5 {
            let gt = Array2::from_shape_fn((32, 32), |(y, x)| {
                let dy = y as f64 - 16.0;
                let dx = x as f64 - 16.0;
                if dy * dy + dx * dx < 36.0 {
                    2u8
                } else if dy * dy + dx * dx < 100.0 {
                    1
                } else {
                    0
                }
            });
            let _ = rng.next_u64();
            items.push((format!("case{i}"), gt.clone(), gt));
        }
        let report = evaluate_predictions(&items, 3).unwrap();
        assert_eq!(report.dice_avg, 1.0);
        assert_eq!(report.assd_avg, 0.0);
        assert_eq!(report.n_cases, 5);
        for case in &report.per_case {
            assert!(case.dice.values().all(|&d| d == 1.0));
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let mut rng = StreamRng::new(22, 121);
        let items: Vec<(String, Array2<u8>, Array2<u8>)> = (0..3)
            .map(|i| {
                let pred =
                    Array2::from_shape_simple_fn((16, 16), || rng.below(3) as u8);
                let gt = Array2::from_shape_simple_fn((16, 16), || rng.below(3) as u8);
                (format!("c{i}"), pred, gt)
            })
            .collect();
        let a = evaluate_predictions(&items, 3).unwrap();
        let b = evaluate_predictions(&items, 3).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}
