//! Curve extraction from maps, polynomial smoothing and biplanar fusion.
//!
//! Coordinates are normalized: a map row `r` sits at `z = r / (H - 1)` and a
//! column `j` at `u = j / (W - 1)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_DEGREE: usize = 6;
pub const DEFAULT_SAMPLES: usize = 256;
pub const MIN_OVERLAP: f64 = 0.25;
pub const MIN_SAMPLES_3D: usize = 16;
/// Intensity below which a pixel ends the centroid window around a row peak.
pub const WINDOW_FLOOR: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum View {
    #[serde(rename = "PA")]
    Pa,
    #[serde(rename = "LAT")]
    Lat,
}

impl View {
    pub fn name(self) -> &'static str {
        match self {
            View::Pa => "PA",
            View::Lat => "LAT",
        }
    }
}

impl std::fmt::Display for View {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `(z, u)` samples of one projected curve, `z` strictly increasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve2D {
    pub view: View,
    pub samples: Vec<[f64; 2]>,
}

impl Curve2D {
    pub fn new(view: View, samples: Vec<[f64; 2]>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a curve needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if samples.windows(2).any(|p| !(p[1][0] > p[0][0])) {
            return Err(Error::InvalidArgument("curve z must be strictly increasing".into()));
        }
        if samples.iter().any(|s| !(0.0..=1.0).contains(&s[1]) || !s[0].is_finite()) {
            return Err(Error::InvalidArgument("curve u must lie in [0, 1]".into()));
        }
        Ok(Curve2D { view, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Polynomial `u(z) = sum c_i z^i` with its fit diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyCurve {
    /// Ascending powers of `z`.
    pub coefficients: Vec<f64>,
    pub degree: usize,
    pub residual_rms: f64,
    pub z_range: [f64; 2],
}

fn horner(c: &[f64], z: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * z + a)
}

fn derivative(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(i, &a)| i as f64 * a).collect()
}

impl PolyCurve {
    /// An exact polynomial, e.g. for oracles.
    pub fn from_coefficients(coefficients: Vec<f64>, z_range: [f64; 2]) -> Result<Self> {
        if coefficients.len() < 2 {
            return Err(Error::InvalidArgument("polynomial degree must be >= 1".into()));
        }
        if !(z_range[0] < z_range[1]) {
            return Err(Error::InvalidArgument(format!("empty z range {z_range:?}")));
        }
        Ok(PolyCurve {
            degree: coefficients.len() - 1,
            coefficients,
            residual_rms: 0.0,
            z_range,
        })
    }

    pub fn eval(&self, z: f64) -> f64 {
        horner(&self.coefficients, z)
    }

    pub fn derivative(&self, z: f64) -> f64 {
        horner(&derivative(&self.coefficients), z)
    }

    pub fn second_derivative(&self, z: f64) -> f64 {
        horner(&derivative(&derivative(&self.coefficients)), z)
    }

    pub fn second_derivative_coefficients(&self) -> Vec<f64> {
        derivative(&derivative(&self.coefficients))
    }
}

/// Per-row intensity-weighted centroid of a `(1, H, W, 1)` curve map.
///
/// Rows whose peak does not exceed `threshold` are skipped. The centroid is
/// taken over the contiguous run around the peak whose values exceed
/// [`WINDOW_FLOOR`], so faint background elsewhere in the row cannot pull it.
pub fn extract_curve(map: &Tensor, threshold: f64, view: View) -> Result<Curve2D> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
    }
    let s = map.shape();
    if s.n != 1 || s.c != 1 || s.h < 2 || s.w < 2 {
        return Err(Error::shape("extract_curve", format!("expected (1, H, W, 1) map, got {s}")));
    }
    let floor = WINDOW_FLOOR.min(threshold);
    let mut samples = Vec::with_capacity(s.h);
    for (r, row) in map.data().chunks_exact(s.w).enumerate() {
        let (peak, &max) = row
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |best, (j, v)| if *v > *best.1 { (j, v) } else { best });
        if !(max > threshold) {
            continue;
        }
        let mut lo = peak;
        while lo > 0 && row[lo - 1] > floor {
            lo -= 1;
        }
        let mut hi = peak;
        while hi + 1 < s.w && row[hi + 1] > floor {
            hi += 1;
        }
        let (mut mass, mut moment) = (0.0, 0.0);
        for (j, &v) in row.iter().enumerate().take(hi + 1).skip(lo) {
            mass += v;
            moment += v * j as f64;
        }
        samples.push([r as f64 / (s.h - 1) as f64, moment / mass / (s.w - 1) as f64]);
    }
    if samples.is_empty() {
        return Err(Error::EmptyCurve { threshold });
    }
    Curve2D::new(view, samples)
}

/// Least-squares polynomial of `u` over `z`.
///
/// The system is solved by SVD in the shifted variable `t = 2z - 1`, which
/// keeps the Vandermonde matrix well conditioned, and the coefficients are
/// then expanded back to powers of `z`.
pub fn fit_curve(curve: &Curve2D, degree: usize) -> Result<PolyCurve> {
    let m = curve.samples.len();
    if degree == 0 {
        return Err(Error::InvalidArgument("polynomial degree must be >= 1".into()));
    }
    if m <= degree {
        return Err(Error::Underdetermined { samples: m, degree });
    }
    let a = DMatrix::from_fn(m, degree + 1, |i, p| (2.0 * curve.samples[i][0] - 1.0).powi(p as i32));
    let b = DVector::from_iterator(m, curve.samples.iter().map(|s| s[1]));
    let svd = a.svd(true, true);
    let ct = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::InvalidArgument(format!("least squares failed: {e}")))?;

    // Expand sum c_p (2z - 1)^p into powers of z.
    let mut coefficients = vec![0.0; degree + 1];
    let mut power = vec![1.0];
    for &cp in ct.iter() {
        for (i, &v) in power.iter().enumerate() {
            coefficients[i] += cp * v;
        }
        let mut next = vec![0.0; power.len() + 1];
        for (i, &v) in power.iter().enumerate() {
            next[i] -= v;
            next[i + 1] += 2.0 * v;
        }
        power = next;
    }

    let sq: f64 = curve
        .samples
        .iter()
        .map(|s| (horner(&coefficients, s[0]) - s[1]).powi(2))
        .sum();
    Ok(PolyCurve {
        coefficients,
        degree,
        residual_rms: (sq / m as f64).sqrt(),
        z_range: [curve.samples[0][0], curve.samples[m - 1][0]],
    })
}

/// Resampled 3D curve `(x, y, z)` with `x` from the PA fit and `y` from the
/// LAT fit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Curve3D {
    pub points: Vec<[f64; 3]>,
    pub degree: usize,
    #[serde(skip)]
    pub pa: PolyCurve,
    #[serde(skip)]
    pub lat: PolyCurve,
}

impl Curve3D {
    pub fn z_range(&self) -> [f64; 2] {
        [self.points[0][2], self.points[self.points.len() - 1][2]]
    }

    pub fn tangent_at(&self, z: f64) -> [f64; 3] {
        unit_tangent(self.pa.derivative(z), self.lat.derivative(z))
    }
}

pub(crate) fn unit_tangent(dx: f64, dy: f64) -> [f64; 3] {
    let n = (dx * dx + dy * dy + 1.0).sqrt();
    [dx / n, dy / n, 1.0 / n]
}

/// Fuse the two views on their shared z-range, sampled at `n` uniform heights.
pub fn reconstruct3d(pa: &PolyCurve, lat: &PolyCurve, n: usize) -> Result<Curve3D> {
    if n < MIN_SAMPLES_3D {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SAMPLES_3D} resample points, got {n}"
        )));
    }
    let lo = pa.z_range[0].max(lat.z_range[0]);
    let hi = pa.z_range[1].min(lat.z_range[1]);
    let overlap = hi - lo;
    if !(overlap >= MIN_OVERLAP) {
        return Err(Error::InsufficientOverlap {
            overlap: overlap.max(0.0),
            required: MIN_OVERLAP,
        });
    }
    let step = overlap / (n - 1) as f64;
    let points = (0..n)
        .map(|i| {
            let z = if i + 1 == n { hi } else { lo + step * i as f64 };
            [pa.eval(z), lat.eval(z), z]
        })
        .collect();
    Ok(Curve3D {
        points,
        degree: pa.degree.max(lat.degree),
        pa: pa.clone(),
        lat: lat.clone(),
    })
}

/// Unit tangent `normalize(dx/dz, dy/dz, 1)` at every sample.
pub fn tangents(curve: &Curve3D) -> Vec<[f64; 3]> {
    curve.points.iter().map(|p| curve.tangent_at(p[2])).collect()
}
