//! Map-to-angle geometry shared by the CLI, the FFI layer and the tests.

use serde::{Deserialize, Serialize};

use crate::cobb::{cobb2d, cobb3d, landmarks, CobbResult};
use crate::curve::{extract_curve, fit_curve, reconstruct3d, Curve3D, PolyCurve, View};
use crate::curve::{DEFAULT_DEGREE, DEFAULT_SAMPLES, DEFAULT_THRESHOLD};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryOptions {
    pub threshold: f64,
    pub degree: usize,
    pub samples: usize,
    /// Add sagittal inflections to the landmark set.
    pub include_sagittal: bool,
}

impl Default for GeometryOptions {
    fn default() -> Self {
        GeometryOptions {
            threshold: DEFAULT_THRESHOLD,
            degree: DEFAULT_DEGREE,
            samples: DEFAULT_SAMPLES,
            include_sagittal: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeometryReport {
    pub pa: PolyCurve,
    pub lat: PolyCurve,
    pub curve: Curve3D,
    pub cobb3d: CobbResult,
    /// Coronal-only baseline on the same z-range.
    pub cobb2d: CobbResult,
}

/// Extract, fit and fuse two curve maps, then measure the 3D Cobb angle.
pub fn assess_maps(pa_map: &Tensor, lat_map: &Tensor, options: &GeometryOptions) -> Result<GeometryReport> {
    let pa = fit_curve(&extract_curve(pa_map, options.threshold, View::Pa)?, options.degree)?;
    let lat = fit_curve(&extract_curve(lat_map, options.threshold, View::Lat)?, options.degree)?;
    let curve = reconstruct3d(&pa, &lat, options.samples)?;
    let cobb3d = cobb3d(&curve, &landmarks(&curve, options.include_sagittal))?;
    let cobb2d = cobb2d(&pa, curve.z_range())?;
    Ok(GeometryReport {
        pa,
        lat,
        curve,
        cobb3d,
        cobb2d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cobb::SeverityLevel;
    use crate::error::Error;
    use crate::tensor::Shape;

    fn stripe(h: usize, w: usize, col: usize) -> Tensor {
        Tensor::from_fn(Shape::hwc(h, w, 1), |_, _, j, _| if j == col { 1.0 } else { 0.0 })
    }

    #[test]
    fn straight_maps_have_zero_angle() {
        let report = assess_maps(&stripe(64, 32, 10), &stripe(64, 32, 20), &GeometryOptions::default()).unwrap();
        assert!(report.cobb3d.max_angle_deg < 1e-6);
        assert!(report.cobb2d.max_angle_deg < 1e-6);
        assert_eq!(report.cobb3d.severity, SeverityLevel::NormalMild);
        assert_eq!(report.curve.points.len(), GeometryOptions::default().samples);
    }

    #[test]
    fn empty_map_is_reported() {
        let blank = Tensor::zeros(Shape::hwc(64, 32, 1));
        let err = assess_maps(&blank, &stripe(64, 32, 5), &GeometryOptions::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyCurve { .. }));
    }
}
