//! Landmark-driven affine registration of cine stacks.

use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::modality::Modality;
use crate::tensor::Tensor3;

/// An `(x, y)` pixel coordinate; `x` runs along the width (second tensor
/// mode) and `y` along the height (first tensor mode).
pub type Point = [f64; 2];

/// Three predicted landmarks of one scan, with their uncertainty scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub subject_id: String,
    pub modality: Modality,
    pub points: [Point; 3],
    pub uncertainties: [f64; 3],
}

impl LandmarkSet {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if !self.modality.is_imaging() {
            return Err(PreprocessError::NotImaging(self.modality));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PreprocessError::NonFinite(self.subject_id.clone()));
        }
        if self.uncertainties.iter().any(|u| !u.is_finite() || *u < 0.0) {
            return Err(PreprocessError::BadUncertainty(self.subject_id.clone()));
        }
        check_non_collinear(&self.points)
    }
}

/// A 2-D affine map `p -> matrix * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub matrix: [[f64; 2]; 2],
    pub translation: [f64; 2],
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform =
        AffineTransform { matrix: [[1.0, 0.0], [0.0, 1.0]], translation: [0.0, 0.0] };

    pub fn translation(dx: f64, dy: f64) -> Self {
        AffineTransform { translation: [dx, dy], ..Self::IDENTITY }
    }

    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        let m = &self.matrix;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + self.translation[0],
            m[1][0] * p[0] + m[1][1] * p[1] + self.translation[1],
        ]
    }

    pub fn determinant(&self) -> f64 {
        self.matrix[0][0] * self.matrix[1][1] - self.matrix[0][1] * self.matrix[1][0]
    }

    pub fn inverse(&self) -> Option<AffineTransform> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let m = &self.matrix;
        let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
        let t = self.translation;
        let translation = [
            -(inv[0][0] * t[0] + inv[0][1] * t[1]),
            -(inv[1][0] * t[0] + inv[1][1] * t[1]),
        ];
        Some(AffineTransform { matrix: inv, translation })
    }
}

fn check_non_collinear(points: &[Point; 3]) -> Result<(), PreprocessError> {
    let d1 = [points[1][0] - points[0][0], points[1][1] - points[0][1]];
    let d2 = [points[2][0] - points[0][0], points[2][1] - points[0][1]];
    let cross = d1[0] * d2[1] - d1[1] * d2[0];
    let scale = (d1[0].hypot(d1[1])).max(d2[0].hypot(d2[1]));
    if scale == 0.0 || cross.abs() <= 1e-10 * scale * scale {
        return Err(PreprocessError::Collinear);
    }
    Ok(())
}

/// The unique affine map sending `from[i]` to `to[i]` for i = 0..3.
pub fn solve_affine(from: &[Point; 3], to: &[Point; 3]) -> Result<AffineTransform, PreprocessError> {
    check_non_collinear(from)?;
    check_non_collinear(to)?;
    // Work in differences relative to the first point: A * D = E.
    let d = [
        [from[1][0] - from[0][0], from[2][0] - from[0][0]],
        [from[1][1] - from[0][1], from[2][1] - from[0][1]],
    ];
    let e = [
        [to[1][0] - to[0][0], to[2][0] - to[0][0]],
        [to[1][1] - to[0][1], to[2][1] - to[0][1]],
    ];
    let det = d[0][0] * d[1][1] - d[0][1] * d[1][0];
    let d_inv = [[d[1][1] / det, -d[0][1] / det], [-d[1][0] / det, d[0][0] / det]];
    let mut matrix = [[0.0; 2]; 2];
    for (r, row) in matrix.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = e[r][0] * d_inv[0][c] + e[r][1] * d_inv[1][c];
        }
    }
    let translation = [
        to[0][0] - (matrix[0][0] * from[0][0] + matrix[0][1] * from[0][1]),
        to[0][1] - (matrix[1][0] * from[0][0] + matrix[1][1] * from[0][1]),
    ];
    Ok(AffineTransform { matrix, translation })
}

/// Registration transform for one scan.
///
/// The result maps template-frame coordinates to the scan's own coordinates,
/// which is the sampling map [`warp_stack`] expects. Its inverse carries the
/// scan's landmarks onto the template.
pub fn affine_from_landmarks(
    src: &LandmarkSet,
    template: &[Point; 3],
) -> Result<AffineTransform, PreprocessError> {
    src.validate()?;
    solve_affine(template, &src.points)
}

/// Per-landmark mean configuration of a set of scans of one modality.
pub fn build_template(all: &[LandmarkSet]) -> Result<[Point; 3], PreprocessError> {
    let first = all.first().ok_or(PreprocessError::EmptyTemplate)?;
    let mut acc = [[0.0; 2]; 3];
    for set in all {
        if set.modality != first.modality {
            return Err(PreprocessError::MixedModalities(first.modality, set.modality));
        }
        for (a, p) in acc.iter_mut().zip(&set.points) {
            a[0] += p[0];
            a[1] += p[1];
        }
    }
    let n = all.len() as f64;
    for a in acc.iter_mut() {
        a[0] /= n;
        a[1] /= n;
    }
    Ok(acc)
}

const EDGE_TOLERANCE: f64 = 1e-9;

/// Resamples every frame of an `(H, W, T)` stack through `sampling`, which
/// maps output coordinates to source coordinates. Bilinear interpolation;
/// samples falling outside the source frame are 0.
pub fn warp_stack(t: &Tensor3, sampling: &AffineTransform) -> Tensor3 {
    let [h, w, frames] = t.dims();
    let mut out = vec![0.0; t.len()];
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    for i in 0..h {
        for j in 0..w {
            let [mut sx, mut sy] = sampling.apply([j as f64, i as f64]);
            if sx < -EDGE_TOLERANCE
                || sy < -EDGE_TOLERANCE
                || sx > max_x + EDGE_TOLERANCE
                || sy > max_y + EDGE_TOLERANCE
            {
                continue;
            }
            sx = sx.clamp(0.0, max_x);
            sy = sy.clamp(0.0, max_y);
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let base = t.offset(i, j, 0);
            for k in 0..frames {
                let v00 = t.get(y0, x0, k);
                let v01 = t.get(y0, x1, k);
                let v10 = t.get(y1, x0, k);
                let v11 = t.get(y1, x1, k);
                out[base + k] =
                    (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
            }
        }
    }
    Tensor3::new(t.dims(), out).expect("warp preserves shape and finiteness")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(points: [Point; 3]) -> LandmarkSet {
        LandmarkSet {
            subject_id: "s".into(),
            modality: Modality::ShortAxis,
            points,
            uncertainties: [0.1; 3],
        }
    }

    const TEMPLATE: [Point; 3] = [[10.0, 12.0], [20.0, 11.0], [14.0, 25.0]];

    /// Independent route: solve the full 6x6 system by Gaussian elimination.
    fn solve_6x6(from: &[Point; 3], to: &[Point; 3]) -> [f64; 6] {
        let mut a = [[0.0f64; 7]; 6];
        for (n, (p, q)) in from.iter().zip(to).enumerate() {
            a[2 * n] = [p[0], p[1], 0.0, 0.0, 1.0, 0.0, q[0]];
            a[2 * n + 1] = [0.0, 0.0, p[0], p[1], 0.0, 1.0, q[1]];
        }
        for col in 0..6 {
            let piv = (col..6).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
            a.swap(col, piv);
            for r in 0..6 {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..7 {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        std::array::from_fn(|i| a[i][6] / a[i][i])
    }

    #[test]
    fn identical_points_give_identity() {
        let t = affine_from_landmarks(&set(TEMPLATE), &TEMPLATE).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let target = if r == c { 1.0 } else { 0.0 };
                assert!((t.matrix[r][c] - target).abs() < 1e-12);
            }
            assert!(t.translation[r].abs() < 1e-12);
        }
    }

    #[test]
    fn pure_translation() {
        let shifted = TEMPLATE.map(|p| [p[0] + 5.0, p[1] - 3.0]);
        let t = affine_from_landmarks(&set(shifted), &TEMPLATE).unwrap();
        assert!((t.matrix[0][0] - 1.0).abs() < 1e-12 && t.matrix[0][1].abs() < 1e-12);
        assert!((t.translation[0] - 5.0).abs() < 1e-12);
        assert!((t.translation[1] + 3.0).abs() < 1e-12);
        // The inverse carries the scan's landmarks onto the template.
        let inv = t.inverse().unwrap();
        for (s, p) in shifted.iter().zip(&TEMPLATE) {
            let q = inv.apply(*s);
            assert!((q[0] - p[0]).abs() < 1e-9 && (q[1] - p[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn random_triples_match_linear_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let mut pts = || -> [Point; 3] {
                std::array::from_fn(|_| [rng.random_range(0.0..64.0), rng.random_range(0.0..64.0)])
            };
            let (from, to) = (pts(), pts());
            let Ok(t) = solve_affine(&from, &to) else { continue };
            let oracle = solve_6x6(&from, &to);
            let flat = [t.matrix[0][0], t.matrix[0][1], t.matrix[1][0], t.matrix[1][1], t.translation[0], t.translation[1]];
            for (a, b) in flat.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()));
            }
            for (p, q) in from.iter().zip(&to) {
                let m = t.apply(*p);
                assert!((m[0] - q[0]).abs() < 1e-9 && (m[1] - q[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn collinear_rejected() {
        let line = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(matches!(affine_from_landmarks(&set(line), &TEMPLATE), Err(PreprocessError::Collinear)));
        assert!(matches!(affine_from_landmarks(&set(TEMPLATE), &line), Err(PreprocessError::Collinear)));
    }

    #[test]
    fn template_means() {
        assert_eq!(build_template(&[set(TEMPLATE)]).unwrap(), TEMPLATE);
        let shifted = TEMPLATE.map(|p| [p[0] + 2.0, p[1] + 2.0]);
        let mid = build_template(&[set(TEMPLATE), set(shifted)]).unwrap();
        for (m, p) in mid.iter().zip(&TEMPLATE) {
            assert_eq!(*m, [p[0] + 1.0, p[1] + 1.0]);
        }
        assert!(matches!(build_template(&[]), Err(PreprocessError::EmptyTemplate)));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sets: Vec<_> = (0..37)
            .map(|_| set(std::array::from_fn(|_| [rng.random_range(0.0..50.0), rng.random_range(0.0..50.0)])))
            .collect();
        let tpl = build_template(&sets).unwrap();
        for l in 0..3 {
            for c in 0..2 {
                let mut naive = 0.0;
                for s in &sets {
                    naive += s.points[l][c];
                }
                naive /= sets.len() as f64;
                assert!((naive - tpl[l][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn template_rejects_mixed_modalities() {
        let mut other = set(TEMPLATE);
        other.modality = Modality::FourChamber;
        assert!(matches!(
            build_template(&[set(TEMPLATE), other]),
            Err(PreprocessError::MixedModalities(..))
        ));
    }

    #[test]
    fn identity_warp_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = Tensor3::from_fn([7, 9, 3], |_, _, _| rng.random_range(-5.0..5.0)).unwrap();
        assert_eq!(warp_stack(&t, &AffineTransform::IDENTITY), t);
    }

    #[test]
    fn integer_translation_of_constant_field() {
        let t = Tensor3::new([5, 6, 2], vec![3.0; 60]).unwrap();
        let out = warp_stack(&t, &AffineTransform::translation(1.0, 0.0));
        for i in 0..5 {
            for j in 0..6 {
                for k in 0..2 {
                    let expect = if j == 5 { 0.0 } else { 3.0 };
                    assert_eq!(out.get(i, j, k), expect);
                }
            }
        }
    }

    #[test]
    fn half_step_on_linear_ramp() {
        let t = Tensor3::from_fn([4, 8, 2], |_, j, k| 2.0 * j as f64 + k as f64).unwrap();
        let out = warp_stack(&t, &AffineTransform::translation(0.5, 0.0));
        for i in 0..4 {
            for j in 0..7 {
                for k in 0..2 {
                    let expect = 2.0 * (j as f64 + 0.5) + k as f64;
                    assert!((out.get(i, j, k) - expect).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn registration_aligns_landmark_intensities() {
        // Bright pixels at the scan's landmarks land on the template landmarks.
        let template: [Point; 3] = [[8.0, 8.0], [20.0, 9.0], [12.0, 22.0]];
        let a = AffineTransform { matrix: [[1.1, 0.1], [-0.05, 0.95]], translation: [1.5, -2.0] };
        let src_pts = template.map(|p| a.apply(p));
        let field = |x: f64, y: f64| 0.3 * x - 0.2 * y + 1.0;
        let scan = Tensor3::from_fn([32, 32, 1], |i, j, _| field(j as f64, i as f64)).unwrap();
        let t = affine_from_landmarks(&set(src_pts), &template).unwrap();
        for (p, s) in template.iter().zip(&src_pts) {
            let m = t.apply(*p);
            assert!((m[0] - s[0]).abs() < 1e-9 && (m[1] - s[1]).abs() < 1e-9);
        }
        let out = warp_stack(&scan, &t);
        // Template landmarks are integer pixels; the field is linear, so bilinear sampling is exact.
        for (p, s) in template.iter().zip(&src_pts) {
            let v = out.get(p[1] as usize, p[0] as usize, 0);
            assert!((v - field(s[0], s[1])).abs() < 1e-9);
        }
    }
}
