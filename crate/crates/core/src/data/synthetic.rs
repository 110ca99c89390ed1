//! Seeded synthetic study generator.
//!
//! Each subject draws a label, then for each modality an independent coin
//! decides whether that modality carries the class signal for this subject,
//! so combining modalities recovers subjects any single one misses.
//! Images are built in template space (a shared cardiac-like blob, nuisance
//! blobs with per-subject weights, an optional class pattern, voxel noise)
//! and then moved into scanner space by a small random affine whose
//! landmark images are reported with jitter. Corrupted subjects get large
//! landmark jitter, high uncertainty scores, and a strong class pattern whose
//! sign ignores the label.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::load::tensor_path;
use super::tensor_file::tensor_bytes;
use super::DataError;
use crate::modality::Modality;
use crate::preprocess::{warp_stack, AffineTransform, Point};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_subjects: usize,
    /// `(H, W, T)`.
    pub dims: [usize; 3],
    pub prevalence: f64,
    pub corrupted_fraction: f64,
    /// Probability that a modality carries the class signal for a subject.
    pub imaging_coverage: f64,
    pub tabular_coverage: f64,
    pub image_signal: f64,
    pub image_noise: f64,
    pub nuisance_scale: f64,
    pub informative_tabular: usize,
    pub noise_tabular: usize,
    /// Extra noise columns with 8-20% missing cells.
    pub high_missing_tabular: usize,
    pub tabular_signal: f64,
    pub tabular_noise: f64,
    /// Fraction of missing cells in a few otherwise kept columns.
    pub low_missing_fraction: f64,
    pub landmark_jitter: f64,
    pub corrupted_jitter: f64,
    /// Class-pattern amplitude in corrupted scans.
    pub corrupted_signal: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 7,
            n_subjects: 400,
            dims: [32, 32, 8],
            prevalence: 0.4,
            corrupted_fraction: 0.2,
            imaging_coverage: 0.35,
            tabular_coverage: 0.35,
            image_signal: 3.0,
            image_noise: 1.0,
            nuisance_scale: 2.0,
            informative_tabular: 5,
            noise_tabular: 44,
            high_missing_tabular: 9,
            tabular_signal: 2.5,
            tabular_noise: 1.0,
            low_missing_fraction: 0.02,
            landmark_jitter: 0.3,
            corrupted_jitter: 4.0,
            corrupted_signal: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSummary {
    pub subject_ids: Vec<String>,
    pub labels: Vec<u8>,
    pub corrupted: Vec<bool>,
    /// Column names of the informative tabular features.
    pub informative_columns: Vec<String>,
    pub feature_names: Vec<String>,
}

/// Template landmark positions as fractions of `(W, H)`.
fn template_fractions(m: Modality) -> [Point; 3] {
    match m {
        Modality::ShortAxis => [[0.28, 0.34], [0.72, 0.31], [0.47, 0.75]],
        _ => [[0.5, 0.19], [0.25, 0.69], [0.75, 0.66]],
    }
}

pub fn template_points(m: Modality, dims: [usize; 3]) -> [Point; 3] {
    let (h, w) = (dims[0] as f64, dims[1] as f64);
    template_fractions(m).map(|[fx, fy]| [fx * (w - 1.0), fy * (h - 1.0)])
}

struct Blob {
    x: f64,
    y: f64,
    sigma: f64,
    /// Temporal phase offset.
    phase: f64,
}

impl Blob {
    fn value(&self, i: usize, j: usize, k: usize, frames: usize) -> f64 {
        let dx = j as f64 - self.x;
        let dy = i as f64 - self.y;
        let spatial = (-(dx * dx + dy * dy) / (2.0 * self.sigma * self.sigma)).exp();
        let temporal = 0.5 * (1.0 + (2.0 * PI * k as f64 / frames as f64 + self.phase).cos());
        spatial * temporal
    }
}

struct ModalityModel {
    anatomy: Blob,
    class_pattern: Blob,
    nuisance: Vec<Blob>,
}

fn modality_model(rng: &mut ChaCha8Rng, m: Modality, dims: [usize; 3]) -> ModalityModel {
    let (h, w) = ((dims[0] - 1) as f64, (dims[1] - 1) as f64);
    let scale = dims[0].min(dims[1]) as f64 / 32.0;
    let (cx, cy) = if m == Modality::ShortAxis { (0.5, 0.5) } else { (0.5, 0.45) };
    let anatomy = Blob { x: cx * w, y: cy * h, sigma: 6.0 * scale, phase: 0.0 };
    let (px, py) = if m == Modality::ShortAxis { (0.38, 0.55) } else { (0.6, 0.4) };
    let class_pattern = Blob { x: px * w, y: py * h, sigma: 3.0 * scale, phase: PI / 3.0 };
    // Nuisance blobs keep clear of the class pattern.
    let mut nuisance = Vec::new();
    while nuisance.len() < 4 {
        let b = Blob {
            x: rng.random_range(0.2..0.8) * w,
            y: rng.random_range(0.2..0.8) * h,
            sigma: rng.random_range(2.5..5.0) * scale,
            phase: rng.random_range(0.0..2.0 * PI),
        };
        if (b.x - class_pattern.x).hypot(b.y - class_pattern.y) >= 2.0 * (b.sigma + class_pattern.sigma) {
            nuisance.push(b);
        }
    }
    ModalityModel { anatomy, class_pattern, nuisance }
}

/// Random template-to-scanner map: rotation and scale about the frame centre
/// plus a shift.
fn random_pose(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> AffineTransform {
    let theta: f64 = rng.random_range(-0.08..0.08);
    let s: f64 = rng.random_range(0.95..1.05);
    let (cx, cy) = ((dims[1] - 1) as f64 / 2.0, (dims[0] - 1) as f64 / 2.0);
    let m = [[s * theta.cos(), -s * theta.sin()], [s * theta.sin(), s * theta.cos()]];
    let shift = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
    let translation = [
        cx - m[0][0] * cx - m[0][1] * cy + shift[0],
        cy - m[1][0] * cx - m[1][1] * cy + shift[1],
    ];
    AffineTransform { matrix: m, translation }
}

/// Labels and tabular matrix with `informative` label-shifted columns
/// followed by `noise` pure-noise columns. `coverage` is the chance a
/// subject's informative columns carry the shift.
pub fn synthetic_tabular(
    seed: u64,
    n: usize,
    informative: usize,
    noise: usize,
    signal: f64,
    noise_scale: f64,
    coverage: f64,
) -> (Array2<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
    let covered: Vec<bool> = (0..n).map(|_| rng.random_bool(coverage)).collect();
    let x = tabular_block(&mut rng, &labels, &covered, informative, noise, signal, noise_scale);
    (x, labels)
}

fn tabular_block(
    rng: &mut ChaCha8Rng,
    labels: &[u8],
    covered: &[bool],
    informative: usize,
    noise: usize,
    signal: f64,
    noise_scale: f64,
) -> Array2<f64> {
    let d = informative + noise;
    // Mixed units: every column gets its own offset and scale.
    let offsets: Vec<f64> = (0..d).map(|_| rng.random_range(-50.0..150.0)).collect();
    let scales: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..20.0)).collect();
    let mut x = Array2::zeros((labels.len(), d));
    for (i, (&y, &cov)) in labels.iter().zip(covered).enumerate() {
        let sign = if y == 1 { 1.0 } else { -1.0 };
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            let shift = if j < informative && cov { sign * signal } else { 0.0 };
            x[[i, j]] = offsets[j] + scales[j] * (shift + noise_scale * z);
        }
    }
    x
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

/// Writes a complete study directory and returns the ground truth.
pub fn generate_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<SyntheticSummary, DataError> {
    if spec.n_subjects < 2 || spec.dims.contains(&0) {
        return Err(DataError::Invalid("need at least 2 subjects and positive dims".into()));
    }
    fs::create_dir_all(dir.join("tensors")).map_err(io_err(dir))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dims = spec.dims;
    let n = spec.n_subjects;
    let models: Vec<ModalityModel> = Modality::IMAGING.iter().map(|&m| modality_model(&mut rng, m, dims)).collect();

    let ids: Vec<String> = (0..n).map(|i| format!("S{i:04}")).collect();
    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(spec.prevalence))).collect();
    let corrupted: Vec<bool> = (0..n).map(|_| rng.random_bool(spec.corrupted_fraction)).collect();
    let tab_cover: Vec<bool> = (0..n).map(|_| rng.random_bool(spec.tabular_coverage)).collect();

    let mut landmark_csv = String::from("subject_id,modality,landmark_id,x,y,uncertainty\n");
    let voxel = Normal::new(0.0, spec.image_noise.max(0.0)).map_err(|e| DataError::Invalid(e.to_string()))?;
    for i in 0..n {
        let sign = if labels[i] == 1 { 1.0 } else { -1.0 };
        for (mi, &m) in Modality::IMAGING.iter().enumerate() {
            let model = &models[mi];
            let covered = rng.random_bool(spec.imaging_coverage);
            let class_weight = if corrupted[i] {
                // Strong pattern whose sign ignores the label.
                spec.corrupted_signal * if rng.random_bool(0.5) { 1.0 } else { -1.0 }
            } else if covered {
                spec.image_signal * sign
            } else {
                0.0
            };
            let weights: Vec<f64> = model.nuisance.iter().map(|_| spec.nuisance_scale * rng.sample::<f64, _>(StandardNormal)).collect();
            let anatomy_gain: f64 = 4.0 + 0.5 * rng.sample::<f64, _>(StandardNormal);
            let mut template = Tensor3::from_fn(dims, |a, b, c| {
                let mut v = anatomy_gain * model.anatomy.value(a, b, c, dims[2]);
                v += class_weight * model.class_pattern.value(a, b, c, dims[2]);
                for (blob, w) in model.nuisance.iter().zip(&weights) {
                    v += w * blob.value(a, b, c, dims[2]);
                }
                v
            })?;
            let pose = random_pose(&mut rng, dims);
            let to_template = pose.inverse().expect("pose is invertible");
            template = warp_stack(&template, &to_template);
            let noisy: Vec<f64> = template.data().iter().map(|v| v + voxel.sample(&mut rng)).collect();
            let scan = Tensor3::new(dims, noisy)?;
            let path = tensor_path(dir, &ids[i], m);
            fs::write(&path, tensor_bytes(&scan)).map_err(io_err(&path))?;

            let jitter = if corrupted[i] { spec.corrupted_jitter } else { spec.landmark_jitter };
            for (l, p) in template_points(m, dims).iter().enumerate() {
                let q = pose.apply(*p);
                let x = q[0] + jitter * rng.sample::<f64, _>(StandardNormal);
                let y = q[1] + jitter * rng.sample::<f64, _>(StandardNormal);
                let u: f64 = if corrupted[i] { rng.random_range(0.7..2.5) } else { rng.random_range(0.05..0.8) };
                landmark_csv += &format!("{},{},{l},{x:.4},{y:.4},{u:.5}\n", ids[i], m.as_str());
            }
        }
    }
    let lm_path = dir.join("landmarks.csv");
    fs::write(&lm_path, landmark_csv).map_err(io_err(&lm_path))?;

    // Tabular block: informative and noise columns shuffled into positional
    // names, then high-missing extras.
    let base = tabular_block(
        &mut rng,
        &labels,
        &tab_cover,
        spec.informative_tabular,
        spec.noise_tabular,
        spec.tabular_signal,
        spec.tabular_noise,
    );
    let d_base = spec.informative_tabular + spec.noise_tabular;
    let d = d_base + spec.high_missing_tabular;
    let mut positions: Vec<usize> = (0..d).collect();
    use rand::seq::SliceRandom;
    positions.shuffle(&mut rng);
    let feature_names: Vec<String> = (0..d).map(|j| format!("ehr_{j:02}")).collect();
    // Column source `s` is written at position `positions[s]`.
    let mut table = vec![vec![String::new(); d]; n];
    let missing_rates: Vec<f64> = (0..spec.high_missing_tabular).map(|_| rng.random_range(0.08..0.2)).collect();
    let low_missing: Vec<usize> = (0..3.min(d_base)).collect();
    for i in 0..n {
        for s in 0..d {
            let value = if s < d_base {
                let z = base[[i, s]];
                // Sources 0..3 are informative or noise depending on counts; a
                // small fraction of their cells go missing.
                if low_missing.contains(&s) && rng.random_bool(spec.low_missing_fraction) {
                    None
                } else {
                    Some(z)
                }
            } else {
                let z = rng.random_range(0.0..100.0);
                if rng.random_bool(missing_rates[s - d_base]) { None } else { Some(z) }
            };
            table[i][positions[s]] = value.map_or_else(String::new, |v| format!("{v:.6}"));
        }
    }
    let ehr_path = dir.join("ehr.csv");
    let mut ehr = fs::File::create(&ehr_path).map_err(io_err(&ehr_path))?;
    let mut text = String::from("subject_id");
    for name in &feature_names {
        text += ",";
        text += name;
    }
    text += "\n";
    for i in 0..n {
        text += &ids[i];
        for cell in &table[i] {
            text += ",";
            text += cell;
        }
        text += "\n";
    }
    ehr.write_all(text.as_bytes()).map_err(io_err(&ehr_path))?;

    let mut labels_csv = String::from("subject_id,pawp_mmhg,screening_order\n");
    for i in 0..n {
        let pawp: f64 = if labels[i] == 1 { rng.random_range(15.5..35.0) } else { rng.random_range(4.0..15.0) };
        labels_csv += &format!("{},{pawp:.1},{i}\n", ids[i]);
    }
    let labels_path = dir.join("labels.csv");
    fs::write(&labels_path, labels_csv).map_err(io_err(&labels_path))?;

    let informative_columns = (0..spec.informative_tabular).map(|s| feature_names[positions[s]].clone()).collect();
    Ok(SyntheticSummary { subject_ids: ids, labels, corrupted, informative_columns, feature_names })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_study, LoadOptions};

    fn small() -> SyntheticSpec {
        SyntheticSpec { n_subjects: 12, dims: [12, 12, 4], ..Default::default() }
    }

    fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        for sub in ["", "tensors"] {
            let mut entries: Vec<_> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
            entries.sort();
            for p in entries {
                if p.is_file() {
                    out.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
                }
            }
        }
        out
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_synthetic(&small(), a.path()).unwrap();
        generate_synthetic(&small(), b.path()).unwrap();
        assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
        let c = tempfile::tempdir().unwrap();
        generate_synthetic(&SyntheticSpec { seed: 8, ..small() }, c.path()).unwrap();
        assert_ne!(dir_bytes(a.path()), dir_bytes(c.path()));
    }

    #[test]
    fn generated_study_loads_completely() {
        let dir = tempfile::tempdir().unwrap();
        let summary = generate_synthetic(&small(), dir.path()).unwrap();
        let (table, report) = load_study(dir.path(), &LoadOptions::default()).unwrap();
        assert_eq!(table.len(), 12);
        assert!(report.excluded.is_empty());
        assert_eq!(table.feature_names.len(), 58);
        assert_eq!(summary.informative_columns.len(), 5);
        let idx: Vec<usize> = (0..12).collect();
        assert_eq!(table.labels_of(&idx), summary.labels);
        assert_eq!(table.subjects[0].tensors[&Modality::ShortAxis].dims(), [12, 12, 4]);
    }

    #[test]
    fn noiseless_single_feature_is_separable() {
        let (x, labels) = synthetic_tabular(3, 50, 1, 0, 1.0, 0.0, 1.0);
        let pos: Vec<f64> = (0..50).filter(|&i| labels[i] == 1).map(|i| x[[i, 0]]).collect();
        let neg: Vec<f64> = (0..50).filter(|&i| labels[i] == 0).map(|i| x[[i, 0]]).collect();
        let lo = pos.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo > hi);
    }
}
