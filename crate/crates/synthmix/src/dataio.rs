//! Synthetic cross-modality benchmark: paired anatomy rendered in two
//! appearance models, persisted bit-exactly.
//!
//! Each underlying case is an anatomy (two deformed-ellipse organs over
//! background) that can be rendered in the source appearance (bright
//! organs on dark background, smooth) or the target appearance
//! (inverted intensities, gamma, fine multiplicative texture). Train
//! splits draw disjoint case ranges per domain, so training is
//! effectively unpaired; test cases are rendered in both modalities.
//! Target ground truth is written for the test split only, and loaded
//! samples carry an eval-only label policy.
//!
//! On disk: raw little-endian f32 images (`.f32`), raw u8 labels
//! (`.u8`), one JSON sidecar per array declaring shape/dtype/range, and
//! a manifest with SHA-256 checksums.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mixer::{Domain, LabelPolicy, Sample};
use crate::rng::{streams, StreamRng};

/// Parameters of the synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyDatasetSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub image_side: usize,
    pub class_count: u8,
    /// Invert intensities in the target modality.
    pub invert: bool,
    /// Gamma applied to normalized target intensities.
    pub gamma: f64,
    pub noise_sigma: f64,
    /// Cycles per pixel of the target's multiplicative texture.
    pub texture_freq: f64,
    /// Texture amplitude in the target modality.
    pub texture_amp: f64,
    pub seed: u64,
}

impl Default for ToyDatasetSpec {
    fn default() -> Self {
        ToyDatasetSpec {
            n_train: 40,
            n_test: 16,
            image_side: 128,
            class_count: 3,
            invert: true,
            gamma: 1.4,
            noise_sigma: 0.03,
            texture_freq: 0.25,
            texture_amp: 0.18,
            seed: 0,
        }
    }
}

impl ToyDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::config("dataset needs positive train/test counts"));
        }
        if self.image_side < 32 {
            return Err(Error::config("image_side must be at least 32"));
        }
        if self.class_count < 2 {
            return Err(Error::config("class_count must be at least 2"));
        }
        if self.gamma <= 0.0 || self.noise_sigma < 0.0 || self.texture_amp < 0.0 {
            return Err(Error::config("invalid modality transform parameters"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Source,
    Target,
}

impl DomainTag {
    pub fn dir_name(self) -> &'static str {
        match self {
            DomainTag::Source => "source",
            DomainTag::Target => "target",
        }
    }
}

/// One sample's manifest record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub domain: DomainTag,
    pub split: Split,
    pub image: String,
    pub label: Option<String>,
    pub image_sha256: String,
    pub label_sha256: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub spec: ToyDatasetSpec,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn ids(&self, domain: DomainTag, split: Split) -> Vec<&SampleRecord> {
        self.records
            .iter()
            .filter(|r| r.domain == domain && r.split == split)
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    shape: Vec<usize>,
    dtype: String,
    range: Option<[f64; 2]>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Serialize an f32 image as raw little-endian bytes.
pub fn image_bytes(img: &Array2<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.len() * 4);
    for &v in img.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn image_from_bytes(bytes: &[u8], side: usize) -> Result<Array2<f32>> {
    if bytes.len() != side * side * 4 {
        return Err(Error::data(format!(
            "image byte length {} does not match side {side}",
            bytes.len()
        )));
    }
    let vals: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Array2::from_shape_vec((side, side), vals)
        .map_err(|e| Error::data(format!("image shape: {e}")))
}

/// The anatomy of one case: a label map shared by both modalities.
fn case_labels(spec: &ToyDatasetSpec, case: u64) -> Array2<u8> {
    let side = spec.image_side;
    let mut rng = StreamRng::at(spec.seed, streams::DATASET_CASE, case);
    let s = side as f64;

    // Organ 1: large deformed ellipse near centre-left.
    let c1y = s * rng.uniform_in(0.40, 0.60);
    let c1x = s * rng.uniform_in(0.32, 0.48);
    let r1y = s * rng.uniform_in(0.16, 0.24);
    let r1x = s * rng.uniform_in(0.13, 0.21);
    let rot1 = rng.uniform_in(0.0, std::f64::consts::PI);
    let w1a = rng.uniform_in(0.0, 0.12);
    let p1a = rng.uniform_in(0.0, std::f64::consts::TAU);
    let w1b = rng.uniform_in(0.0, 0.08);
    let p1b = rng.uniform_in(0.0, std::f64::consts::TAU);

    // Organ 2: smaller ellipse to the right.
    let c2y = s * rng.uniform_in(0.35, 0.65);
    let c2x = s * rng.uniform_in(0.62, 0.78);
    let r2y = s * rng.uniform_in(0.08, 0.13);
    let r2x = s * rng.uniform_in(0.06, 0.11);
    let rot2 = rng.uniform_in(0.0, std::f64::consts::PI);
    let w2a = rng.uniform_in(0.0, 0.15);
    let p2a = rng.uniform_in(0.0, std::f64::consts::TAU);

    let inside = |y: f64,
                  x: f64,
                  cy: f64,
                  cx: f64,
                  ry: f64,
                  rx: f64,
                  rot: f64,
                  wa: f64,
                  pa: f64,
                  wb: f64,
                  pb: f64| {
        let dy = y - cy;
        let dx = x - cx;
        let u = dy * rot.cos() + dx * rot.sin();
        let v = -dy * rot.sin() + dx * rot.cos();
        let theta = v.atan2(u);
        let deform = 1.0 + wa * (3.0 * theta + pa).sin() + wb * (5.0 * theta + pb).sin();
        (u / (ry * deform)).powi(2) + (v / (rx * deform)).powi(2) <= 1.0
    };

    Array2::from_shape_fn((side, side), |(yy, xx)| {
        let (y, x) = (yy as f64 + 0.5, xx as f64 + 0.5);
        if spec.class_count > 2
            && inside(y, x, c2y, c2x, r2y, r2x, rot2, w2a, p2a, 0.0, 0.0)
        {
            2
        } else if inside(y, x, c1y, c1x, r1y, r1x, rot1, w1a, p1a, w1b, p1b) {
            1
        } else {
            0
        }
    })
}

/// Render one case in one modality. Pure function of (spec, case, domain).
fn render_case(spec: &ToyDatasetSpec, case: u64, domain: DomainTag) -> (Array2<f32>, Array2<u8>) {
    let labels = case_labels(spec, case);
    let side = spec.image_side;
    let domain_stream = match domain {
        DomainTag::Source => 1,
        DomainTag::Target => 2,
    };
    let mut rng = StreamRng::at(spec.seed, streams::DATASET_CASE, case).substream(domain_stream);

    // Base tissue intensities in [0, 1].
    let base = |c: u8| -> f64 {
        match c {
            0 => 0.22,
            1 => 0.58,
            2 => 0.85,
            _ => 0.5,
        }
    };
    // Smooth per-case bias field.
    let bphase_y = rng.uniform_in(0.0, std::f64::consts::TAU);
    let bphase_x = rng.uniform_in(0.0, std::f64::consts::TAU);
    let bias_amp = rng.uniform_in(0.02, 0.06);
    // Target texture phases.
    let tphase_y = rng.uniform_in(0.0, std::f64::consts::TAU);
    let tphase_x = rng.uniform_in(0.0, std::f64::consts::TAU);
    let brightness = rng.uniform_in(-0.04, 0.04);

    let img = Array2::from_shape_fn((side, side), |(yy, xx)| {
        let y = yy as f64;
        let x = xx as f64;
        let mut v = base(labels[(yy, xx)]);
        v += bias_amp
            * ((y / side as f64 * std::f64::consts::TAU + bphase_y).sin()
                + (x / side as f64 * std::f64::consts::TAU + bphase_x).cos())
            / 2.0;
        v += brightness;
        match domain {
            DomainTag::Source => {}
            DomainTag::Target => {
                if spec.invert {
                    v = 1.0 - v;
                }
                v = v.clamp(0.0, 1.0).powf(spec.gamma);
                let texture = 1.0
                    + spec.texture_amp
                        * (std::f64::consts::TAU * spec.texture_freq * y + tphase_y).sin()
                        * (std::f64::consts::TAU * spec.texture_freq * x + tphase_x).sin();
                v *= texture;
            }
        }
        v += spec.noise_sigma * rng.normal();
        // Map [0,1] to [-1,1] with headroom against the clamp.
        ((v * 2.0 - 1.0).clamp(-0.97, 0.97)) as f32
    });
    (img, labels)
}

/// Generate the dataset on disk. Same spec, same bytes.
pub fn generate_toy_dataset(spec: &ToyDatasetSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    for domain in [DomainTag::Source, DomainTag::Target] {
        for split in [Split::Train, Split::Test] {
            let dir = out_dir.join(domain.dir_name()).join(split.dir_name());
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
    }

    // Case ranges: disjoint anatomy between the two training splits;
    // test cases rendered in both modalities.
    let n = spec.n_train as u64;
    let mut records = Vec::new();
    let mut emit = |case: u64, domain: DomainTag, split: Split| -> Result<()> {
        let (img, labels) = render_case(spec, case, domain);
        let id = format!("{}_{}_case{:04}", domain.dir_name(), split.dir_name(), case);
        let rel_dir = PathBuf::from(domain.dir_name()).join(split.dir_name());
        let img_rel = rel_dir.join(format!("case{case:04}_img.f32"));
        let img_bytes = image_bytes(&img);
        write_file(&out_dir.join(&img_rel), &img_bytes)?;
        let sidecar = Sidecar {
            shape: vec![spec.image_side, spec.image_side],
            dtype: "f32".to_string(),
            range: Some([-1.0, 1.0]),
        };
        let sidecar_rel = rel_dir.join(format!("case{case:04}_img.json"));
        write_file(
            &out_dir.join(&sidecar_rel),
            serde_json::to_string_pretty(&sidecar).unwrap().as_bytes(),
        )?;

        // Target training labels are withheld entirely.
        let with_label = !(domain == DomainTag::Target && split == Split::Train);
        let (label_rel, label_sha) = if with_label {
            let lab_rel = rel_dir.join(format!("case{case:04}_lab.u8"));
            let lab_bytes: Vec<u8> = labels.iter().copied().collect();
            write_file(&out_dir.join(&lab_rel), &lab_bytes)?;
            let lab_sidecar = Sidecar {
                shape: vec![spec.image_side, spec.image_side],
                dtype: "u8".to_string(),
                range: None,
            };
            let lab_sidecar_rel = rel_dir.join(format!("case{case:04}_lab.json"));
            write_file(
                &out_dir.join(&lab_sidecar_rel),
                serde_json::to_string_pretty(&lab_sidecar).unwrap().as_bytes(),
            )?;
            (
                Some(lab_rel.to_string_lossy().into_owned()),
                Some(sha256_hex(&lab_bytes)),
            )
        } else {
            (None, None)
        };

        records.push(SampleRecord {
            id,
            domain,
            split,
            image: img_rel.to_string_lossy().into_owned(),
            label: label_rel,
            image_sha256: sha256_hex(&img_bytes),
            label_sha256: label_sha,
        });
        Ok(())
    };

    for case in 0..n {
        emit(case, DomainTag::Source, Split::Train)?;
    }
    for case in n..2 * n {
        emit(case, DomainTag::Target, Split::Train)?;
    }
    for case in 2 * n..2 * n + spec.n_test as u64 {
        emit(case, DomainTag::Source, Split::Test)?;
        emit(case, DomainTag::Target, Split::Test)?;
    }

    let manifest = DatasetManifest {
        version: 1,
        spec: spec.clone(),
        records,
    };
    let manifest_path = out_dir.join("manifest.json");
    write_file(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).unwrap().as_bytes(),
    )?;
    Ok(manifest)
}

/// Load and parse a manifest.
pub fn load_manifest(dataset_dir: &Path) -> Result<DatasetManifest> {
    let path = dataset_dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("manifest parse: {e}")))
}

/// Load one sample by id, verifying checksums. Target-domain labels come
/// back flagged eval-only.
pub fn load_sample(
    dataset_dir: &Path,
    manifest: &DatasetManifest,
    id: &str,
) -> Result<Sample<f32>> {
    let rec = manifest
        .records
        .iter()
        .find(|r| r.id == id)
        .ok_or_else(|| Error::data(format!("unknown sample id {id}")))?;
    load_record(dataset_dir, manifest, rec)
}

pub fn load_record(
    dataset_dir: &Path,
    manifest: &DatasetManifest,
    rec: &SampleRecord,
) -> Result<Sample<f32>> {
    let img_path = dataset_dir.join(&rec.image);
    let bytes = fs::read(&img_path).map_err(|e| Error::io(&img_path, e))?;
    let actual = sha256_hex(&bytes);
    if actual != rec.image_sha256 {
        return Err(Error::Corruption {
            path: img_path,
            expected: rec.image_sha256.clone(),
            actual,
        });
    }
    let image = image_from_bytes(&bytes, manifest.spec.image_side)?;
    let domain = match rec.domain {
        DomainTag::Source => Domain::Source,
        DomainTag::Target => Domain::Target,
    };
    let policy = match rec.domain {
        DomainTag::Source => LabelPolicy::TrainUsable,
        DomainTag::Target => LabelPolicy::EvalOnly,
    };
    match &rec.label {
        Some(rel) => {
            let lab_path = dataset_dir.join(rel);
            let lab_bytes = fs::read(&lab_path).map_err(|e| Error::io(&lab_path, e))?;
            let actual = sha256_hex(&lab_bytes);
            let expected = rec.label_sha256.clone().unwrap_or_default();
            if actual != expected {
                return Err(Error::Corruption {
                    path: lab_path,
                    expected,
                    actual,
                });
            }
            let side = manifest.spec.image_side;
            if lab_bytes.len() != side * side {
                return Err(Error::data(format!(
                    "label byte length {} does not match side {side}",
                    lab_bytes.len()
                )));
            }
            let labels = Array2::from_shape_vec((side, side), lab_bytes)
                .map_err(|e| Error::data(format!("label shape: {e}")))?;
            if labels.iter().any(|&c| c >= manifest.spec.class_count) {
                return Err(Error::data(format!(
                    "label map of {} contains classes outside 0..{}",
                    rec.id, manifest.spec.class_count
                )));
            }
            Ok(Sample::labelled(image, labels, domain, policy))
        }
        None => Ok(Sample::unlabelled(image, domain)),
    }
}

/// Load a whole split into memory.
pub fn load_split(
    dataset_dir: &Path,
    manifest: &DatasetManifest,
    domain: DomainTag,
    split: Split,
) -> Result<Vec<(String, Sample<f32>)>> {
    manifest
        .ids(domain, split)
        .into_iter()
        .map(|rec| load_record(dataset_dir, manifest, rec).map(|s| (rec.id.clone(), s)))
        .collect()
}
