//! Inflection landmarks, the 3D Cobb angle and severity grading.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::curve::{unit_tangent, Curve3D, PolyCurve};
use crate::error::{Error, Result};

pub const MILD_LIMIT_DEG: f64 = 20.0;
pub const MODERATE_LIMIT_DEG: f64 = 40.0;
/// Grid used to bracket sign changes of the fitted second derivative.
pub const INFLECTION_GRID: usize = 1024;
/// Angles this close to a grade threshold are flagged as boundary cases.
pub const BOUNDARY_TOLERANCE_DEG: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SeverityLevel {
    #[serde(rename = "normal-mild")]
    NormalMild,
    #[serde(rename = "moderate")]
    Moderate,
    #[serde(rename = "severe")]
    Severe,
}

impl SeverityLevel {
    pub const ALL: [SeverityLevel; 3] = [SeverityLevel::NormalMild, SeverityLevel::Moderate, SeverityLevel::Severe];

    pub fn name(self) -> &'static str {
        match self {
            SeverityLevel::NormalMild => "normal-mild",
            SeverityLevel::Moderate => "moderate",
            SeverityLevel::Severe => "severe",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SeverityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `[0, 20)` normal-mild, `[20, 40]` moderate, above 40 severe.
pub fn grade(angle_deg: f64) -> Result<SeverityLevel> {
    if angle_deg.is_nan() {
        return Err(Error::InvalidArgument("angle is NaN".into()));
    }
    if angle_deg < 0.0 {
        return Err(Error::NegativeAngle(angle_deg));
    }
    Ok(if angle_deg < MILD_LIMIT_DEG {
        SeverityLevel::NormalMild
    } else if angle_deg <= MODERATE_LIMIT_DEG {
        SeverityLevel::Moderate
    } else {
        SeverityLevel::Severe
    })
}

pub fn is_boundary_case(angle_deg: f64) -> bool {
    [MILD_LIMIT_DEG, MODERATE_LIMIT_DEG]
        .iter()
        .any(|t| (angle_deg - t).abs() <= BOUNDARY_TOLERANCE_DEG)
}

/// Sign changes of `f` on `[lo, hi]`, bracketed on an `n`-interval grid and
/// refined by bisection. Only roots strictly inside the interval are kept.
pub fn sign_change_roots(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let at = |i: usize| lo + (hi - lo) * i as f64 / n as f64;
    let values: Vec<f64> = (0..=n).map(|i| f(at(i))).collect();
    let mut roots = Vec::new();
    let mut i = 0;
    while i < n {
        let (a, b) = (values[i], values[i + 1]);
        if a == 0.0 {
            // A grid point landed on the root; count it only on a real crossing.
            if i > 0 && values[i - 1] * b < 0.0 {
                roots.push(at(i));
            }
        } else if a * b < 0.0 {
            let (mut l, mut r, mut fl) = (at(i), at(i + 1), a);
            for _ in 0..200 {
                let m = 0.5 * (l + r);
                if m <= l || m >= r {
                    break;
                }
                let fm = f(m);
                if fm == 0.0 {
                    l = m;
                    r = m;
                    break;
                }
                if fl * fm < 0.0 {
                    r = m;
                } else {
                    l = m;
                    fl = fm;
                }
            }
            roots.push(0.5 * (l + r));
        }
        i += 1;
    }
    roots.retain(|&z| z > lo && z < hi);
    roots
}

/// Interior inflections of a fitted curve: roots of its second derivative
/// where the sign actually changes.
pub fn inflection_points(poly: &PolyCurve) -> Vec<f64> {
    if poly.degree < 3 {
        return Vec::new();
    }
    let dd = poly.second_derivative_coefficients();
    let f = |z: f64| dd.iter().rev().fold(0.0, |acc, &a| acc * z + a);
    sign_change_roots(f, poly.z_range[0], poly.z_range[1], INFLECTION_GRID)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CobbResult {
    pub landmarks_z: Vec<f64>,
    pub segment_angles_deg: Vec<f64>,
    pub max_angle_deg: f64,
    pub severity: SeverityLevel,
    pub boundary_case: bool,
}

/// Angle in degrees between two unit vectors, `arccos(a . b)`.
///
/// Evaluated as `2 atan2(|a - b|, |a + b|)`, which equals the clamped arccos
/// for unit vectors but keeps full precision near 0 and 180 degrees.
pub fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let norm = |s: f64| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x + s * y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    (2.0 * norm(-1.0).atan2(norm(1.0))).to_degrees()
}

/// Endpoints plus the sorted interior landmarks, with duplicates removed.
fn landmark_set(range: [f64; 2], interior: &[f64]) -> Result<Vec<f64>> {
    let slack = 1e-12 * (range[1] - range[0]).abs().max(1.0);
    if let Some(z) = interior
        .iter()
        .find(|&&z| !(z >= range[0] - slack && z <= range[1] + slack))
    {
        return Err(Error::InvalidArgument(format!(
            "landmark {z} outside curve range [{}, {}]",
            range[0], range[1]
        )));
    }
    let mut inner: Vec<f64> = interior
        .iter()
        .copied()
        .filter(|&z| z > range[0] && z < range[1])
        .collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    let mut all = Vec::with_capacity(inner.len() + 2);
    all.push(range[0]);
    all.extend(inner);
    all.push(range[1]);
    Ok(all)
}

/// Assemble a result from landmarks and their unit tangents.
pub fn cobb_from_tangents(landmarks_z: Vec<f64>, tangents: &[Vec<f64>]) -> Result<CobbResult> {
    let segment_angles_deg: Vec<f64> = tangents.windows(2).map(|p| angle_between(&p[0], &p[1])).collect();
    let max_angle_deg = segment_angles_deg.iter().copied().fold(0.0, f64::max);
    Ok(CobbResult {
        landmarks_z,
        segment_angles_deg,
        max_angle_deg,
        severity: grade(max_angle_deg)?,
        boundary_case: is_boundary_case(max_angle_deg),
    })
}

/// Dihedral angles between the planes normal to the curve at adjacent
/// landmarks. The curve endpoints are always included.
pub fn cobb3d(curve: &Curve3D, landmarks: &[f64]) -> Result<CobbResult> {
    let zs = landmark_set(curve.z_range(), landmarks)?;
    let ts: Vec<Vec<f64>> = zs.iter().map(|&z| curve.tangent_at(z).to_vec()).collect();
    cobb_from_tangents(zs, &ts)
}

/// Landmarks from PA inflections, optionally joined by LAT inflections.
pub fn landmarks(curve: &Curve3D, include_sagittal: bool) -> Vec<f64> {
    let [lo, hi] = curve.z_range();
    let clip = |p: &PolyCurve| {
        let mut p = p.clone();
        p.z_range = [lo, hi];
        inflection_points(&p)
    };
    let mut zs = clip(&curve.pa);
    if include_sagittal {
        zs.extend(clip(&curve.lat));
        zs.sort_by(f64::total_cmp);
    }
    zs
}

/// Coronal-only baseline: same landmarks, tangents `(dx/dz, 1)` in the PA plane.
pub fn cobb2d(pa: &PolyCurve, z_range: [f64; 2]) -> Result<CobbResult> {
    let mut p = pa.clone();
    p.z_range = z_range;
    let zs = landmark_set(z_range, &inflection_points(&p))?;
    let ts: Vec<Vec<f64>> = zs
        .iter()
        .map(|&z| {
            let t = unit_tangent(pa.derivative(z), 0.0);
            vec![t[0], t[2]]
        })
        .collect();
    cobb_from_tangents(zs, &ts)
}
