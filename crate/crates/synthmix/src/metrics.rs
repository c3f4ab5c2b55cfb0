//! Segmentation evaluation: Dice overlap, average symmetric surface
//! distance, aggregation across cases, and the paired t-test.
//!
//! Conventions the underlying definitions leave open are fixed here:
//! Dice of two empty masks is 1.0; ASSD of an empty mask is undefined and
//! excluded from averages (callers receive a dedicated error); surfaces
//! are border pixels under 4-connectivity with out-of-image treated as
//! background; distances are exact Euclidean with per-axis spacing.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Dice coefficient `2|A∩B| / (|A|+|B|)`. Both-empty returns 1.0.
pub fn dice(pred: &Array2<bool>, gt: &Array2<bool>) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(Error::dimension(format!(
            "dice shapes differ: {:?} vs {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let mut a = 0usize;
    let mut b = 0usize;
    let mut inter = 0usize;
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        a += p as usize;
        b += g as usize;
        inter += (p && g) as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

/// Border pixels of a binary mask under 4-connectivity; pixels outside the
/// image count as background, so mask pixels on the image edge are surface.
pub fn surface_points(mask: &Array2<bool>) -> Vec<(usize, usize)> {
    let (h, w) = mask.dim();
    let mut pts = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask[(y, x)] {
                continue;
            }
            let boundary = y == 0
                || x == 0
                || y == h - 1
                || x == w - 1
                || !mask[(y - 1, x)]
                || !mask[(y + 1, x)]
                || !mask[(y, x - 1)]
                || !mask[(y, x + 1)];
            if boundary {
                pts.push((y, x));
            }
        }
    }
    pts
}

/// One pass of the lower-envelope-of-parabolas distance transform
/// (Felzenszwalb-Huttenlocher). `f` holds squared distances; `step` is the
/// squared spacing along this axis; intersections are tracked in index
/// units, which the weighting cancels out of consistently. Infinite
/// entries (no site yet) never join the envelope.
fn dt_1d(f: &[f64], step: f64, out: &mut [f64]) {
    let n = f.len();
    let first = match f.iter().position(|v| v.is_finite()) {
        Some(i) => i,
        None => {
            out[..n].fill(f64::INFINITY);
            return;
        }
    };
    let mut v = vec![0usize; n];
    let mut z = vec![f64::INFINITY; n + 1];
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    let mut k = 0usize;
    let height = |q: usize| f[q] + step * q as f64 * q as f64;
    for q in (first + 1)..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = (height(q) - height(p)) / (2.0 * step * (q - p) as f64);
            if s <= z[k] {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        out[q] = step * d * d + f[v[k]];
    }
}

/// Exact anisotropic squared Euclidean distance transform: for every pixel,
/// the squared distance to the nearest `true` pixel. All-false input gives
/// +inf everywhere.
pub fn squared_distance_transform(
    sites: &Array2<bool>,
    spacing: (f64, f64),
) -> Array2<f64> {
    let (h, w) = sites.dim();
    let (sy, sx) = spacing;
    let mut d = Array2::from_elem((h, w), f64::INFINITY);
    for ((y, x), &s) in sites.indexed_iter() {
        if s {
            d[(y, x)] = 0.0;
        }
    }
    // Rows first (x axis), then columns (y axis).
    let mut buf_in = vec![0.0f64; w.max(h)];
    let mut buf_out = vec![0.0f64; w.max(h)];
    for y in 0..h {
        for x in 0..w {
            buf_in[x] = d[(y, x)];
        }
        dt_1d(&buf_in[..w], sx * sx, &mut buf_out[..w]);
        for x in 0..w {
            d[(y, x)] = buf_out[x];
        }
    }
    for x in 0..w {
        for y in 0..h {
            buf_in[y] = d[(y, x)];
        }
        dt_1d(&buf_in[..h], sy * sy, &mut buf_out[..h]);
        for y in 0..h {
            d[(y, x)] = buf_out[y];
        }
    }
    d
}

/// Average symmetric surface distance: the mean over both directions of
/// the average nearest-surface-point distance, `(d(A→B) + d(B→A)) / 2`.
/// Either mask empty is undefined and reported as a data error.
pub fn assd(pred: &Array2<bool>, gt: &Array2<bool>, spacing: (f64, f64)) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(Error::dimension(format!(
            "assd shapes differ: {:?} vs {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    if spacing.0 <= 0.0 || spacing.1 <= 0.0 {
        return Err(Error::validation("spacing must be positive"));
    }
    let surf_a = surface_points(pred);
    let surf_b = surface_points(gt);
    if surf_a.is_empty() || surf_b.is_empty() {
        return Err(Error::data(
            "assd undefined: empty mask has no surface".to_string(),
        ));
    }
    let (h, w) = pred.dim();
    let mut sites_a = Array2::from_elem((h, w), false);
    for &(y, x) in &surf_a {
        sites_a[(y, x)] = true;
    }
    let mut sites_b = Array2::from_elem((h, w), false);
    for &(y, x) in &surf_b {
        sites_b[(y, x)] = true;
    }
    let dt_b = squared_distance_transform(&sites_b, spacing);
    let dt_a = squared_distance_transform(&sites_a, spacing);
    let mean_ab =
        surf_a.iter().map(|&p| dt_b[p].sqrt()).sum::<f64>() / surf_a.len() as f64;
    let mean_ba =
        surf_b.iter().map(|&p| dt_a[p].sqrt()).sum::<f64>() / surf_b.len() as f64;
    Ok(0.5 * (mean_ab + mean_ba))
}

/// Result of a paired two-tailed t-test. A degenerate case (all paired
/// differences identical) is flagged as a tie with undefined t and p.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub dof: usize,
    pub n: usize,
    pub mean_diff: f64,
    pub tie: bool,
}

/// Paired two-tailed t-test of `scores_a` against `scores_b`.
pub fn two_tailed_t_test(scores_a: &[f64], scores_b: &[f64]) -> Result<TTestResult> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::dimension(format!(
            "paired test needs equal lengths, got {} and {}",
            scores_a.len(),
            scores_b.len()
        )));
    }
    let n = scores_a.len();
    if n < 2 {
        return Err(Error::validation("paired t-test needs n >= 2"));
    }
    let diffs: Vec<f64> = scores_a.iter().zip(scores_b).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    if var == 0.0 {
        return Ok(TTestResult {
            t: None,
            p: None,
            dof: n - 1,
            n,
            mean_diff: mean,
            tie: true,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::validation(format!("t distribution: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TTestResult {
        t: Some(t),
        p: Some(p),
        dof: n - 1,
        n,
        mean_diff: mean,
        tie: false,
    })
}

/// Upper quantile of the chi-squared distribution, for the mask statistics
/// sanity test.
pub fn chi_squared_critical(dof: f64, alpha: f64) -> Result<f64> {
    use statrs::distribution::ChiSquared;
    let dist =
        ChiSquared::new(dof).map_err(|e| Error::validation(format!("chi-squared: {e}")))?;
    Ok(dist.inverse_cdf(1.0 - alpha))
}

/// Scores for one evaluated case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseScores {
    pub case_id: String,
    /// Per foreground class Dice.
    pub dice: BTreeMap<u8, f64>,
    /// Per foreground class ASSD; absent where undefined (empty mask).
    pub assd: BTreeMap<u8, Option<f64>>,
}

impl CaseScores {
    /// Mean Dice over this case's classes.
    pub fn mean_dice(&self) -> f64 {
        if self.dice.is_empty() {
            return 0.0;
        }
        self.dice.values().sum::<f64>() / self.dice.len() as f64
    }
}

/// Aggregated evaluation over a split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_dice: BTreeMap<u8, f64>,
    pub per_class_assd: BTreeMap<u8, f64>,
    pub dice_avg: f64,
    pub assd_avg: f64,
    pub n_cases: usize,
    /// Count of (case, class) pairs whose ASSD was undefined and excluded.
    pub assd_undefined: usize,
    pub per_case: Vec<CaseScores>,
}

impl EvalReport {
    /// Aggregate per-case scores. Per-class values are means over cases;
    /// the averages are arithmetic means of the per-class entries.
    pub fn from_cases(cases: Vec<CaseScores>) -> EvalReport {
        let mut dice_sums: BTreeMap<u8, (f64, usize)> = BTreeMap::new();
        let mut assd_sums: BTreeMap<u8, (f64, usize)> = BTreeMap::new();
        let mut undefined = 0usize;
        for case in &cases {
            for (&c, &d) in &case.dice {
                let e = dice_sums.entry(c).or_insert((0.0, 0));
                e.0 += d;
                e.1 += 1;
            }
            for (&c, a) in &case.assd {
                match a {
                    Some(v) => {
                        let e = assd_sums.entry(c).or_insert((0.0, 0));
                        e.0 += v;
                        e.1 += 1;
                    }
                    None => undefined += 1,
                }
            }
        }
        let per_class_dice: BTreeMap<u8, f64> = dice_sums
            .into_iter()
            .map(|(c, (s, n))| (c, s / n as f64))
            .collect();
        let per_class_assd: BTreeMap<u8, f64> = assd_sums
            .into_iter()
            .filter(|(_, (_, n))| *n > 0)
            .map(|(c, (s, n))| (c, s / n as f64))
            .collect();
        let dice_avg = if per_class_dice.is_empty() {
            0.0
        } else {
            per_class_dice.values().sum::<f64>() / per_class_dice.len() as f64
        };
        let assd_avg = if per_class_assd.is_empty() {
            f64::NAN
        } else {
            per_class_assd.values().sum::<f64>() / per_class_assd.len() as f64
        };
        EvalReport {
            per_class_dice,
            per_class_assd,
            dice_avg,
            assd_avg,
            n_cases: cases.len(),
            assd_undefined: undefined,
            per_case: cases,
        }
    }

    /// Per-case table as CSV.
    pub fn to_csv(&self) -> String {
        let classes: Vec<u8> = self.per_class_dice.keys().copied().collect();
        let mut out = String::from("case_id");
        for c in &classes {
            out.push_str(&format!(",dice_{c}"));
        }
        for c in &classes {
            out.push_str(&format!(",assd_{c}"));
        }
        out.push('\n');
        for case in &self.per_case {
            out.push_str(&case.case_id);
            for c in &classes {
                match case.dice.get(c) {
                    Some(v) => out.push_str(&format!(",{v:.6}")),
                    None => out.push(','),
                }
            }
            for c in &classes {
                match case.assd.get(c) {
                    Some(Some(v)) => out.push_str(&format!(",{v:.6}")),
                    _ => out.push_str(",undefined"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Score one case: binarize per foreground class and compute both metrics.
pub fn score_case(
    case_id: &str,
    pred: &Array2<u8>,
    gt: &Array2<u8>,
    class_count: u8,
    spacing: (f64, f64),
) -> Result<CaseScores> {
    if pred.dim() != gt.dim() {
        return Err(Error::dimension(format!(
            "prediction shape {:?} differs from ground truth {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let mut dice_map = BTreeMap::new();
    let mut assd_map = BTreeMap::new();
    for class in 1..class_count {
        let p = pred.mapv(|v| v == class);
        let g = gt.mapv(|v| v == class);
        dice_map.insert(class, dice(&p, &g)?);
        let a = match assd(&p, &g, spacing) {
            Ok(v) => Some(v),
            Err(Error::Data(_)) => None,
            Err(e) => return Err(e),
        };
        assd_map.insert(class, a);
    }
    Ok(CaseScores {
        case_id: case_id.to_string(),
        dice: dice_map,
        assd: assd_map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    fn mask_from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Array2<bool> {
        Array2::from_shape_fn((h, w), |(y, x)| f(y, x))
    }

    // Independent O(N^2) oracle: pairwise nearest surface distances with
    // its own border extraction.
    fn brute_force_assd(a: &Array2<bool>, b: &Array2<bool>, spacing: (f64, f64)) -> Option<f64> {
        fn border(m: &Array2<bool>) -> Vec<(f64, f64)> {
            let (h, w) = m.dim();
            let mut out = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    if !m[(y, x)] {
                        continue;
                    }
                    let neighbours = [
                        (y as isize - 1, x as isize),
                        (y as isize + 1, x as isize),
                        (y as isize, x as isize - 1),
                        (y as isize, x as isize + 1),
                    ];
                    let edge = neighbours.iter().any(|&(ny, nx)| {
                        ny < 0
                            || nx < 0
                            || ny >= h as isize
                            || nx >= w as isize
                            || !m[(ny as usize, nx as usize)]
                    });
                    if edge {
                        out.push((y as f64, x as f64));
                    }
                }
            }
            out
        }
        let sa = border(a);
        let sb = border(b);
        if sa.is_empty() || sb.is_empty() {
            return None;
        }
        let dir = |from: &[(f64, f64)], to: &[(f64, f64)]| {
            from.iter()
                .map(|&(y, x)| {
                    to.iter()
                        .map(|&(ty, tx)| {
                            let dy = (y - ty) * spacing.0;
                            let dx = (x - tx) * spacing.1;
                            (dy * dy + dx * dx).sqrt()
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
                / from.len() as f64
        };
        Some(0.5 * (dir(&sa, &sb) + dir(&sb, &sa)))
    }

    #[test]
    fn dice_identical_and_disjoint() {
        let a = mask_from_fn(8, 8, |y, _| y < 4);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = mask_from_fn(8, 8, |y, _| y >= 4);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn dice_half_overlap() {
        // |A| = |B| = 100, |A∩B| = 50 by direct set counts.
        let a = mask_from_fn(20, 10, |y, _| y < 10);
        let b = mask_from_fn(20, 10, |y, _| (5..15).contains(&y));
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn dice_both_empty_is_one() {
        let a = Array2::from_elem((4, 4), false);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn dice_is_symmetric() {
        let mut rng = StreamRng::new(5, 70);
        for _ in 0..50 {
            let a = mask_from_fn(16, 16, |_, _| rng.bernoulli(0.4));
            let b = mask_from_fn(16, 16, |_, _| rng.bernoulli(0.4));
            assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
        }
    }

    #[test]
    fn assd_identical_masks_is_zero() {
        let a = mask_from_fn(16, 16, |y, x| (4..10).contains(&y) && (5..12).contains(&x));
        assert_eq!(assd(&a, &a, (1.0, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn assd_single_pixels_three_apart() {
        let mut a = Array2::from_elem((8, 8), false);
        let mut b = Array2::from_elem((8, 8), false);
        a[(2, 1)] = true;
        b[(2, 4)] = true;
        assert!((assd(&a, &b, (1.0, 1.0)).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn assd_empty_mask_is_undefined() {
        let a = Array2::from_elem((8, 8), false);
        let mut b = Array2::from_elem((8, 8), false);
        b[(3, 3)] = true;
        assert!(matches!(assd(&a, &b, (1.0, 1.0)), Err(Error::Data(_))));
    }

    #[test]
    fn assd_matches_brute_force_on_random_masks() {
        let mut rng = StreamRng::new(11, 71);
        for trial in 0..60 {
            let h = 4 + rng.below(29);
            let w = 4 + rng.below(29);
            let p = 0.2 + 0.5 * rng.uniform();
            let a = mask_from_fn(h, w, |_, _| rng.bernoulli(p));
            let b = mask_from_fn(h, w, |_, _| rng.bernoulli(p));
            let spacing = if trial % 3 == 0 { (1.5, 0.75) } else { (1.0, 1.0) };
            match (assd(&a, &b, spacing), brute_force_assd(&a, &b, spacing)) {
                (Ok(fast), Some(brute)) => {
                    assert!(
                        (fast - brute).abs() < 1e-9,
                        "trial {trial}: fast {fast} vs brute {brute}"
                    );
                }
                (Err(Error::Data(_)), None) => {}
                (f, b) => panic!("trial {trial}: mismatch {f:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn assd_translation_invariant() {
        let base = mask_from_fn(24, 24, |y, x| (3..8).contains(&y) && (4..9).contains(&x));
        let other = mask_from_fn(24, 24, |y, x| (5..11).contains(&y) && (6..10).contains(&x));
        let d0 = assd(&base, &other, (1.0, 1.0)).unwrap();
        let shift =
            |m: &Array2<bool>| mask_from_fn(24, 24, |y, x| y >= 6 && x >= 6 && m[(y - 6, x - 6)]);
        let d1 = assd(&shift(&base), &shift(&other), (1.0, 1.0)).unwrap();
        assert!((d0 - d1).abs() < 1e-12);
    }

    #[test]
    fn assd_is_symmetric() {
        let mut rng = StreamRng::new(13, 72);
        let a = mask_from_fn(20, 20, |_, _| rng.bernoulli(0.3));
        let b = mask_from_fn(20, 20, |_, _| rng.bernoulli(0.3));
        let ab = assd(&a, &b, (1.0, 1.0)).unwrap();
        let ba = assd(&b, &a, (1.0, 1.0)).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn t_test_tie_is_flagged() {
        let a = [0.5, 0.6, 0.7];
        let r = two_tailed_t_test(&a, &a).unwrap();
        assert!(r.tie);
        assert!(r.t.is_none() && r.p.is_none());
    }

    #[test]
    fn t_test_large_shift_is_significant() {
        let mut rng = StreamRng::new(17, 73);
        let b: Vec<f64> = (0..10).map(|_| 0.5 + 0.001 * rng.normal()).collect();
        let a: Vec<f64> = b.iter().map(|v| v + 0.3).collect();
        let r = two_tailed_t_test(&a, &b).unwrap();
        assert!(r.p.unwrap() < 0.01, "p = {:?}", r.p);
    }

    #[test]
    fn t_test_swap_negates_t_keeps_p() {
        let a = [0.9, 0.8, 0.85, 0.95, 0.7];
        let b = [0.6, 0.65, 0.5, 0.7, 0.55];
        let ab = two_tailed_t_test(&a, &b).unwrap();
        let ba = two_tailed_t_test(&b, &a).unwrap();
        assert!((ab.t.unwrap() + ba.t.unwrap()).abs() < 1e-12);
        assert!((ab.p.unwrap() - ba.p.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn t_test_rejects_bad_input() {
        assert!(two_tailed_t_test(&[1.0], &[1.0]).is_err());
        assert!(two_tailed_t_test(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn report_averages_are_class_means() {
        let case = |id: &str, d1: f64, d2: f64| CaseScores {
            case_id: id.to_string(),
            dice: BTreeMap::from([(1u8, d1), (2u8, d2)]),
            assd: BTreeMap::from([(1u8, Some(1.0)), (2u8, None)]),
        };
        let report = EvalReport::from_cases(vec![case("a", 0.8, 0.6), case("b", 0.9, 0.7)]);
        assert!((report.per_class_dice[&1] - 0.85).abs() < 1e-12);
        assert!((report.per_class_dice[&2] - 0.65).abs() < 1e-12);
        assert!((report.dice_avg - 0.75).abs() < 1e-12);
        assert_eq!(report.assd_undefined, 2);
        assert_eq!(report.n_cases, 2);
        let csv = report.to_csv();
        assert!(csv.starts_with("case_id,dice_1,dice_2,assd_1,assd_2"));
        assert!(csv.contains("undefined"));
    }
}
