use proptest::prelude::*;
use spine3d::cobb::{cobb3d, grade, landmarks, SeverityLevel};
use spine3d::curve::{extract_curve, fit_curve, reconstruct3d, tangents, Curve2D, PolyCurve, View};
use spine3d::pipeline::{assess_maps, GeometryOptions};
use spine3d::synth::{analytic_cobb, make_preset, make_spine, rasterize, AnalyticSpine, Profile, SeverityBand};

fn exact_fit(spine: &AnalyticSpine, view: View, degree: usize) -> PolyCurve {
    let n = 400;
    let samples = (0..n)
        .map(|i| {
            let z = i as f64 / (n - 1) as f64;
            [z, 0.5 + spine.project(view, z)]
        })
        .collect();
    fit_curve(&Curve2D::new(view, samples).unwrap(), degree).unwrap()
}

fn rotate_polys(pa: &PolyCurve, lat: &PolyCurve, theta: f64) -> (PolyCurve, PolyCurve) {
    let n = pa.coefficients.len().max(lat.coefficients.len());
    let coef = |p: &PolyCurve, i: usize| p.coefficients.get(i).copied().unwrap_or(0.0);
    let (s, c) = theta.sin_cos();
    let x: Vec<f64> = (0..n).map(|i| c * coef(pa, i) - s * coef(lat, i)).collect();
    let y: Vec<f64> = (0..n).map(|i| s * coef(pa, i) + c * coef(lat, i)).collect();
    (
        PolyCurve::from_coefficients(x, pa.z_range).unwrap(),
        PolyCurve::from_coefficients(y, lat.z_range).unwrap(),
    )
}

#[test]
fn straight_spine_through_pipeline() {
    let spine = AnalyticSpine::straight();
    let pa = rasterize(&spine, View::Pa, 320, 160, 5.0, Profile::Gaussian).unwrap();
    let lat = rasterize(&spine, View::Lat, 320, 160, 5.0, Profile::Gaussian).unwrap();
    let report = assess_maps(&pa, &lat, &GeometryOptions::default()).unwrap();
    assert!(report.cobb3d.max_angle_deg < 1e-6, "{}", report.cobb3d.max_angle_deg);
    assert_eq!(report.cobb3d.severity, SeverityLevel::NormalMild);
}

#[test]
fn exact_polynomials_agree_with_the_oracle() {
    let mut worst: f64 = 0.0;
    for seed in 0..40u64 {
        let band = SeverityBand::ALL[seed as usize % 3];
        let spine = make_preset(seed, band);
        let pa = exact_fit(&spine, View::Pa, 6);
        let lat = exact_fit(&spine, View::Lat, 6);
        let curve = reconstruct3d(&pa, &lat, 256).unwrap();
        let got = cobb3d(&curve, &landmarks(&curve, false)).unwrap().max_angle_deg;
        worst = worst.max((got - analytic_cobb(&spine)).abs());
    }
    assert!(worst < 0.5, "worst exact-fit error {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn grade_is_monotone(a in 0.0f64..120.0, b in 0.0f64..120.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(grade(lo).unwrap() <= grade(hi).unwrap());
    }

    #[test]
    fn cobb_is_invariant_under_rotation_about_z(seed in any::<u64>(), theta in -3.2f64..3.2) {
        let spine = make_spine(seed);
        let pa = exact_fit(&spine, View::Pa, 6);
        let lat = exact_fit(&spine, View::Lat, 6);
        let curve = reconstruct3d(&pa, &lat, 128).unwrap();
        let marks = landmarks(&curve, false);
        let base = cobb3d(&curve, &marks).unwrap();
        let (rx, ry) = rotate_polys(&pa, &lat, theta);
        let turned = cobb3d(&reconstruct3d(&rx, &ry, 128).unwrap(), &marks).unwrap();
        for (a, b) in base.segment_angles_deg.iter().zip(&turned.segment_angles_deg) {
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn tangents_are_unit_and_upward(seed in any::<u64>(), n in 16usize..300) {
        let spine = make_spine(seed);
        let curve = reconstruct3d(&exact_fit(&spine, View::Pa, 6), &exact_fit(&spine, View::Lat, 6), n).unwrap();
        let zs: Vec<f64> = curve.points.iter().map(|p| p[2]).collect();
        let step = (zs[n - 1] - zs[0]) / (n - 1) as f64;
        for (i, w) in zs.windows(2).enumerate() {
            prop_assert!(w[1] > w[0]);
            prop_assert!((w[1] - w[0] - step).abs() < 1e-12, "interval {} is {}", i, w[1] - w[0]);
        }
        for t in tangents(&curve) {
            let norm = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-9);
            prop_assert!(t[2] > 0.0);
        }
    }

    #[test]
    fn fit_residual_does_not_grow_with_degree(seed in any::<u64>()) {
        let spine = make_spine(seed);
        let map = rasterize(&spine, View::Pa, 160, 80, 4.0, Profile::Gaussian).unwrap();
        let c = extract_curve(&map, 0.5, View::Pa).unwrap();
        let mut last = f64::INFINITY;
        for degree in 1..=8 {
            let r = fit_curve(&c, degree).unwrap().residual_rms;
            prop_assert!(r <= last + 1e-12, "degree {}: {} > {}", degree, r, last);
            last = r;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rasterize_extract_round_trip(seed in any::<u64>()) {
        let (h, w) = (320, 160);
        let spine = make_spine(seed);
        for view in [View::Pa, View::Lat] {
            let map = rasterize(&spine, view, h, w, 5.0, Profile::Gaussian).unwrap();
            prop_assert!(map.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            for r in 0..h {
                let row = &map.data()[r * w..(r + 1) * w];
                prop_assert!(row.iter().cloned().fold(0.0, f64::max) > 0.5);
            }
            let curve = extract_curve(&map, 0.5, view).unwrap();
            prop_assert_eq!(curve.len(), h);
            for s in &curve.samples {
                let truth = 0.5 + spine.project(view, s[0]);
                let err_px = (s[1] - truth).abs() * (w - 1) as f64;
                prop_assert!(err_px < 0.5, "row z={} off by {} px", s[0], err_px);
            }
        }
    }
}
