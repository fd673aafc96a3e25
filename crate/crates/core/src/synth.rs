//! Analytic spines with closed-form derivatives, their curve maps, synthetic
//! trunk images and the on-disk dataset layout.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cobb::{cobb_from_tangents, grade, sign_change_roots, CobbResult, SeverityLevel};
use crate::curve::{unit_tangent, View};
use crate::error::{Error, Result};
use crate::imageio::{read_netpbm, write_atomic, write_pgm, write_ppm};
use crate::tensor::{Shape, Tensor};

/// Bound on `|x(z)|` and `|y(z)|` that keeps the curve inside the image.
pub const MAX_DEVIATION: f64 = 0.4;
/// Grid for the oracle's inflection scan.
pub const ORACLE_GRID: usize = 4096;
/// Grid used to check the deviation bound.
const BOUND_GRID: usize = 4096;

/// One coronal term `A sin(2 pi k z + phi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpineTerm {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

/// `x(z) = sum A_i sin(2 pi k_i z + phi_i)` and a sagittal polynomial `y(z)`
/// on `z` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticSpine {
    pub terms: Vec<SpineTerm>,
    /// Ascending powers of `z`.
    pub sagittal: Vec<f64>,
    pub seed: Option<u64>,
}

fn poly_eval(c: &[f64], z: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * z + a)
}

fn poly_deriv(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(i, &a)| i as f64 * a).collect()
}

impl AnalyticSpine {
    pub fn new(terms: Vec<SpineTerm>, sagittal: Vec<f64>) -> Result<Self> {
        let spine = AnalyticSpine {
            terms,
            sagittal,
            seed: None,
        };
        spine.validate()?;
        Ok(spine)
    }

    /// `x(z) = A sin(2 pi k z + phi)` with a flat sagittal profile.
    pub fn single(amplitude: f64, frequency: f64, phase: f64) -> Result<Self> {
        Self::new(
            vec![SpineTerm {
                amplitude,
                frequency,
                phase,
            }],
            vec![0.0],
        )
    }

    pub fn straight() -> Self {
        Self::single(0.0, 1.0, 0.0).expect("zero amplitude is in bounds")
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::InvalidArgument("a spine needs at least one coronal term".into()));
        }
        let finite = self
            .terms
            .iter()
            .all(|t| t.amplitude.is_finite() && t.frequency.is_finite() && t.phase.is_finite())
            && self.sagittal.iter().all(|c| c.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("spine parameters must be finite".into()));
        }
        let (mx, my) = self.max_deviation();
        if mx > MAX_DEVIATION || my > MAX_DEVIATION {
            return Err(Error::InvalidArgument(format!(
                "spine leaves the image: max |x| = {mx:.4}, max |y| = {my:.4}, bound {MAX_DEVIATION}"
            )));
        }
        Ok(())
    }

    fn max_deviation(&self) -> (f64, f64) {
        (0..=BOUND_GRID).fold((0.0f64, 0.0f64), |(mx, my), i| {
            let z = i as f64 / BOUND_GRID as f64;
            (mx.max(self.x(z).abs()), my.max(self.y(z).abs()))
        })
    }

    pub fn x(&self, z: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.amplitude * (2.0 * PI * t.frequency * z + t.phase).sin())
            .sum()
    }

    pub fn dx(&self, z: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let w = 2.0 * PI * t.frequency;
                t.amplitude * w * (w * z + t.phase).cos()
            })
            .sum()
    }

    pub fn ddx(&self, z: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let w = 2.0 * PI * t.frequency;
                -t.amplitude * w * w * (w * z + t.phase).sin()
            })
            .sum()
    }

    pub fn y(&self, z: f64) -> f64 {
        poly_eval(&self.sagittal, z)
    }

    pub fn dy(&self, z: f64) -> f64 {
        poly_eval(&poly_deriv(&self.sagittal), z)
    }

    pub fn ddy(&self, z: f64) -> f64 {
        poly_eval(&poly_deriv(&poly_deriv(&self.sagittal)), z)
    }

    /// Deviation seen by `view`.
    pub fn project(&self, view: View, z: f64) -> f64 {
        match view {
            View::Pa => self.x(z),
            View::Lat => self.y(z),
        }
    }

    /// Copy with every amplitude and sagittal coefficient multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.amplitude *= s;
        }
        for c in &mut out.sagittal {
            *c *= s;
        }
        out.validate()?;
        Ok(out)
    }
}

/// Target bands for the analytic 3D Cobb angle, each kept at least one
/// degree away from the grade thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeverityBand {
    Mild,
    Moderate,
    Severe,
}

impl SeverityBand {
    pub const ALL: [SeverityBand; 3] = [SeverityBand::Mild, SeverityBand::Moderate, SeverityBand::Severe];

    pub fn range_deg(self) -> (f64, f64) {
        match self {
            SeverityBand::Mild => (5.0, 15.0),
            SeverityBand::Moderate => (25.0, 35.0),
            SeverityBand::Severe => (45.0, 60.0),
        }
    }

    pub fn level(self) -> SeverityLevel {
        match self {
            SeverityBand::Mild => SeverityLevel::NormalMild,
            SeverityBand::Moderate => SeverityLevel::Moderate,
            SeverityBand::Severe => SeverityLevel::Severe,
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "mild" | "normal-mild" | "normal_mild" => Some(SeverityBand::Mild),
            "moderate" => Some(SeverityBand::Moderate),
            "severe" => Some(SeverityBand::Severe),
            _ => None,
        }
    }
}

/// Random spine with one or two coronal terms and a quadratic sagittal
/// profile centred on the image midline.
pub fn make_spine(seed: u64) -> AnalyticSpine {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        if let Ok(mut s) = draw_spine(&mut rng, &[0.5, 1.0, 1.5], 2, 0.12) {
            s.seed = Some(seed);
            return s;
        }
    }
}

/// Random spine whose analytic 3D Cobb angle falls inside `band`.
///
/// Presets draw a single coronal term with `k` in `{0.5, 1}` and peak
/// curvature `A (2 pi k)^2` at most [`PRESET_MAX_CURVATURE`]. Degree-6 fits
/// track these shapes, end slopes included, closely enough for the pipeline
/// to agree with the oracle.
pub fn make_preset(seed: u64, band: SeverityBand) -> AnalyticSpine {
    let (lo, hi) = band.range_deg();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ band_salt(band));
    loop {
        let Ok(mut s) = draw_spine(&mut rng, &PRESET_FREQUENCIES, 1, 0.3) else {
            continue;
        };
        if peak_curvature(&s) > PRESET_MAX_CURVATURE {
            continue;
        }
        let angle = analytic_cobb(&s);
        if angle >= lo && angle <= hi {
            s.seed = Some(seed);
            return s;
        }
    }
}

pub const PRESET_FREQUENCIES: [f64; 2] = [0.5, 1.0];
pub const PRESET_MAX_CURVATURE: f64 = 2.5;

/// Upper bound on `|x''(z)|`: `sum A_i (2 pi k_i)^2`.
pub fn peak_curvature(spine: &AnalyticSpine) -> f64 {
    spine
        .terms
        .iter()
        .map(|t| t.amplitude.abs() * (2.0 * PI * t.frequency).powi(2))
        .sum()
}

fn band_salt(band: SeverityBand) -> u64 {
    match band {
        SeverityBand::Mild => 0x6d69_6c64,
        SeverityBand::Moderate => 0x6d6f_6465,
        SeverityBand::Severe => 0x7365_7665,
    }
}

fn draw_spine(rng: &mut ChaCha8Rng, frequencies: &[f64], max_terms: usize, max_amplitude: f64) -> Result<AnalyticSpine> {
    let n = rng.random_range(1..=max_terms);
    let terms = (0..n)
        .map(|_| SpineTerm {
            amplitude: rng.random_range(0.005..max_amplitude),
            frequency: frequencies[rng.random_range(0..frequencies.len())],
            phase: rng.random_range(0.0..2.0 * PI),
        })
        .collect();
    let b = rng.random_range(-0.1..0.1);
    let c = rng.random_range(-0.1..0.1);
    // Zero at mid-height so the sagittal curve is centred.
    let a = -(b * 0.5 + c * 0.25);
    AnalyticSpine::new(terms, vec![a, b, c])
}

/// Oracle 3D Cobb angle with its landmarks, from exact derivatives.
pub fn analytic_cobb_result(spine: &AnalyticSpine) -> CobbResult {
    let mut zs = vec![0.0];
    zs.extend(sign_change_roots(|z| spine.ddx(z), 0.0, 1.0, ORACLE_GRID));
    zs.push(1.0);
    let ts: Vec<Vec<f64>> = zs
        .iter()
        .map(|&z| unit_tangent(spine.dx(z), spine.dy(z)).to_vec())
        .collect();
    cobb_from_tangents(zs, &ts).expect("angles from arccos are non-negative")
}

pub fn analytic_cobb(spine: &AnalyticSpine) -> f64 {
    analytic_cobb_result(spine).max_angle_deg
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Gaussian cross-section with sigma = thickness / 2.
    Gaussian,
    /// `round(thickness)` pixels at full intensity, no anti-aliasing.
    Hard,
}

/// Curve map `(1, h, w, 1)` for one view. The stripe in row `r` is centred
/// on column `(0.5 + d(z)) (w - 1)` with `z = r / (h - 1)`.
pub fn rasterize(spine: &AnalyticSpine, view: View, h: usize, w: usize, thickness: f64, profile: Profile) -> Result<Tensor> {
    if h < 16 || w < 16 {
        return Err(Error::InvalidArgument(format!("curve maps need H, W >= 16, got {h}x{w}")));
    }
    if !(thickness >= 1.0) {
        return Err(Error::InvalidArgument(format!("thickness {thickness} < 1")));
    }
    let mut data = vec![0.0; h * w];
    for (r, row) in data.chunks_exact_mut(w).enumerate() {
        let z = r as f64 / (h - 1) as f64;
        let c = (0.5 + spine.project(view, z)) * (w - 1) as f64;
        match profile {
            Profile::Gaussian => {
                let sigma = thickness / 2.0;
                for (j, v) in row.iter_mut().enumerate() {
                    let d = j as f64 - c;
                    *v = (-d * d / (2.0 * sigma * sigma)).exp();
                }
            }
            Profile::Hard => {
                let width = thickness.round().max(1.0) as i64;
                let start = (c - (width - 1) as f64 / 2.0).round() as i64;
                for j in start..start + width {
                    if (0..w as i64).contains(&j) {
                        row[j as usize] = 1.0;
                    }
                }
            }
        }
    }
    Tensor::new(Shape::hwc(h, w, 1), data)
}

/// Pseudo trunk photograph `(1, h, w, 3)`: a shaded torso whose midline
/// follows the projected spine, with a darker furrow along the spine itself
/// and seeded low-amplitude noise.
pub fn make_trunk_image(spine: &AnalyticSpine, view: View, h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skin = [0.86, 0.66, 0.55];
    let background = [0.10, 0.11, 0.14];
    let wf = (w.max(2) - 1) as f64;
    let furrow_sigma = (w as f64 / 40.0).max(0.8);
    let mut data = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        let z = r as f64 / (h.max(2) - 1) as f64;
        let d = spine.project(view, z);
        let spine_col = (0.5 + d) * wf;
        let torso_col = (0.5 + 0.6 * d) * wf;
        let half = wf * (0.36 - 0.06 * (PI * z).sin());
        for j in 0..w {
            let off = (j as f64 - torso_col) / half;
            let body = 1.0 / (1.0 + (12.0 * (off.abs() - 1.0)).exp());
            let shade = 0.75 + 0.25 * (1.0 - off * off).max(0.0).sqrt();
            let ds = (j as f64 - spine_col) / furrow_sigma;
            let furrow = 1.0 - 0.45 * (-0.5 * ds * ds).exp();
            for k in 0..3 {
                let fg = skin[k] * shade * furrow;
                let v = background[k] + body * (fg - background[k]) + rng.random_range(-0.02..0.02);
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Tensor::new(Shape::hwc(h, w, 3), data).expect("sized above")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub height: usize,
    pub width: usize,
    pub thickness: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            height: 320,
            width: 160,
            thickness: 5.0,
        }
    }
}

/// Contents of `truth.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseTruth {
    pub case: usize,
    pub seed: u64,
    pub band: Option<SeverityBand>,
    pub spine: AnalyticSpine,
    pub analytic_angle_deg: f64,
    pub grade: SeverityLevel,
    pub landmarks_z: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub thickness: f64,
}

pub const CASE_FILES: [&str; 5] = ["pa.pgm", "lat.pgm", "pa_rgb.ppm", "lat_rgb.ppm", "truth.json"];

pub fn case_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("case_{index:04}"))
}

/// Per-case seeds derived from the dataset seed.
pub fn case_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}

/// Band for case `index`: the fixed band, or the three bands in rotation.
pub fn case_band(band: Option<SeverityBand>, index: usize) -> SeverityBand {
    band.unwrap_or(SeverityBand::ALL[index % 3])
}

pub fn write_case(root: &Path, index: usize, seed: u64, band: SeverityBand, config: &DatasetConfig) -> Result<CaseTruth> {
    let spine = make_preset(seed, band);
    let dir = case_dir(root, index);
    fs::create_dir_all(&dir)?;
    let (h, w) = (config.height, config.width);
    for view in [View::Pa, View::Lat] {
        let stem = view.name().to_ascii_lowercase();
        let map = rasterize(&spine, view, h, w, config.thickness, Profile::Gaussian)?;
        write_pgm(&dir.join(format!("{stem}.pgm")), &map)?;
        let image_seed = seed.wrapping_add(if view == View::Pa { 1 } else { 2 });
        let rgb = make_trunk_image(&spine, view, h, w, image_seed);
        write_ppm(&dir.join(format!("{stem}_rgb.ppm")), &rgb)?;
    }
    let result = analytic_cobb_result(&spine);
    let truth = CaseTruth {
        case: index,
        seed,
        band: Some(band),
        grade: grade(result.max_angle_deg)?,
        analytic_angle_deg: result.max_angle_deg,
        landmarks_z: result.landmarks_z,
        spine,
        height: h,
        width: w,
        thickness: config.thickness,
    };
    write_atomic(&dir.join("truth.json"), &serde_json::to_vec_pretty(&truth)?)?;
    Ok(truth)
}

/// Write `n` cases under `root`.
pub fn write_dataset(
    root: &Path,
    n: usize,
    seed: u64,
    band: Option<SeverityBand>,
    config: &DatasetConfig,
) -> Result<Vec<CaseTruth>> {
    case_seeds(seed, n)
        .into_iter()
        .enumerate()
        .map(|(i, s)| write_case(root, i, s, case_band(band, i), config))
        .collect()
}

/// Sorted `case_*` directories under `root`.
pub fn list_cases(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("case_"))
        })
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn read_truth(case: &Path) -> Result<CaseTruth> {
    Ok(serde_json::from_slice(&fs::read(case.join("truth.json"))?)?)
}

/// `(rgb, map)` of one view from a case directory.
pub fn read_view(case: &Path, view: View) -> Result<(Tensor, Tensor)> {
    let stem = view.name().to_ascii_lowercase();
    let rgb = read_netpbm(&case.join(format!("{stem}_rgb.ppm")))?;
    let map = read_netpbm(&case.join(format!("{stem}.pgm")))?;
    Ok((rgb, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn straight_spine_is_a_vertical_stripe() {
        let s = AnalyticSpine::straight();
        assert_eq!(analytic_cobb(&s), 0.0);
        let m = rasterize(&s, View::Pa, 32, 17, 3.0, Profile::Gaussian).unwrap();
        for r in 0..32 {
            assert_eq!(m.get(0, r, 8, 0), 1.0);
        }
    }

    #[test]
    fn single_term_is_direct() {
        let s = AnalyticSpine::single(0.05, 1.0, 0.0).unwrap();
        for z in [0.0, 0.1, 0.37, 0.8] {
            assert_abs_diff_eq!(s.x(z), 0.05 * (2.0 * PI * z).sin(), epsilon = 1e-15);
        }
    }

    #[test]
    fn single_arc_oracle_matches_closed_form() {
        let s = AnalyticSpine::single(0.05, 1.0, 0.0).unwrap();
        let expect = 2.0 * (2.0 * PI * 0.05f64).atan().to_degrees();
        assert_abs_diff_eq!(analytic_cobb(&s), expect, epsilon = 1e-9);
        assert_abs_diff_eq!(expect, 34.88, epsilon = 0.005);
        let r = analytic_cobb_result(&s);
        assert_eq!(r.landmarks_z.len(), 3);
        assert_abs_diff_eq!(r.landmarks_z[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn doubling_amplitude_increases_the_angle() {
        for a in [0.005, 0.01, 0.03, 0.06, 0.09, 0.15] {
            let s = AnalyticSpine::single(a, 1.0, 0.0).unwrap();
            assert!(analytic_cobb(&s.scaled(2.0).unwrap()) > analytic_cobb(&s));
        }
    }

    #[test]
    fn bound_violation_is_rejected() {
        assert!(AnalyticSpine::single(0.45, 1.0, 0.0).is_err());
        assert!(AnalyticSpine::new(vec![], vec![0.0]).is_err());
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        assert_eq!(make_spine(11), make_spine(11));
        assert_eq!(make_preset(3, SeverityBand::Moderate), make_preset(3, SeverityBand::Moderate));
        for band in SeverityBand::ALL {
            let (lo, hi) = band.range_deg();
            let a = analytic_cobb(&make_preset(5, band));
            assert!(a >= lo && a <= hi, "{band:?}: {a}");
        }
    }

    #[test]
    fn hard_thickness_one_has_one_pixel_per_row() {
        let s = AnalyticSpine::single(0.1, 0.5, 0.3).unwrap();
        let m = rasterize(&s, View::Pa, 40, 20, 1.0, Profile::Hard).unwrap();
        for row in m.data().chunks(20) {
            assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 1);
        }
    }

    #[test]
    fn gaussian_rows_peak_above_half() {
        let s = make_spine(2);
        for t in [1.0, 3.0, 5.0] {
            let m = rasterize(&s, View::Lat, 64, 32, t, Profile::Gaussian).unwrap();
            for row in m.data().chunks(32) {
                let max = row.iter().copied().fold(0.0, f64::max);
                assert!(max > 0.5 && max <= 1.0);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn trunk_images_are_deterministic_and_displace() {
        let s = AnalyticSpine::single(0.05, 1.0, 0.0).unwrap();
        let a = make_trunk_image(&s, View::Pa, 64, 32, 9);
        assert_eq!(a.shape(), Shape::hwc(64, 32, 3));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a, make_trunk_image(&s, View::Pa, 64, 32, 9));
        let t = AnalyticSpine::single(0.15, 1.0, 0.0).unwrap();
        assert!(make_trunk_image(&t, View::Pa, 64, 32, 9).max_abs_diff(&a) > 0.0);
    }
}
