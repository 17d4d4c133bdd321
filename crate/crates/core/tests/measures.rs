use proptest::prelude::*;
use sinkflow::measures::{
    cdf_values, discretize, kl_divergence, pushforward_monotone, quantile, sample, second_moment,
};
use sinkflow::{DensitySpec, Error, GaussianMeasure, Grid, GridDensity};
use statrs::distribution::{ContinuousCDF, Normal};

fn normal(m: f64, v: f64, g: &Grid) -> GridDensity {
    discretize(&DensitySpec::gaussian(m, v).unwrap(), g).unwrap()
}

fn std_grid() -> Grid {
    Grid::symmetric(8.0, 512).unwrap()
}

#[test]
fn discretized_normal_has_unit_mass() {
    let g = std_grid();
    let d = normal(0.0, 1.0, &g);
    assert!((d.mass() - 1.0).abs() <= 1e-10);
    assert!(d.min_value() > 0.0);
}

#[test]
fn narrow_domain_is_a_truncation_error() {
    // Φ(1) - Φ(-1) from an independent CDF; far below 1 - 1e-8.
    let n = Normal::new(0.0, 1.0).unwrap();
    let inside = n.cdf(1.0) - n.cdf(-1.0);
    assert!((inside - 0.6827).abs() < 1e-4);
    let g = Grid::new(-1.0, 1.0, 128).unwrap();
    match discretize(&DensitySpec::gaussian(0.0, 1.0).unwrap(), &g) {
        Err(Error::Truncation { outside, .. }) => assert!((outside - (1.0 - inside)).abs() < 1e-3),
        other => panic!("expected truncation, got {other:?}"),
    }
}

#[test]
fn uniform_density_is_flat() {
    let g = Grid::new(0.0, 1.0, 64).unwrap();
    let d = discretize(&DensitySpec::uniform(0.0, 1.0).unwrap(), &g).unwrap();
    for v in d.values() {
        assert!((v - 1.0).abs() < 1e-12);
    }
    let c = cdf_values(&d);
    for (x, c) in g.nodes().iter().zip(&c) {
        assert!((x - c).abs() < 1e-12);
    }
    assert!((quantile(&d, 0.25).unwrap() - 0.25).abs() <= g.spacing());
    assert!((second_moment(&d) - 1.0 / 3.0).abs() < 1e-4);
}

#[test]
fn normal_cdf_and_quantiles() {
    let g = std_grid();
    let d = normal(0.0, 1.0, &g);
    let c = cdf_values(&d);
    assert_eq!(c[0], 0.0);
    assert_eq!(*c.last().unwrap(), 1.0);
    assert!((d.cdf(0.0) - 0.5).abs() < 1e-6);
    assert!(quantile(&d, 0.5).unwrap().abs() <= g.spacing());
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.8413);
    assert!((quantile(&d, 0.8413).unwrap() - z).abs() < 0.01);
    assert!((z - 1.0).abs() < 0.01);
    assert!(matches!(quantile(&d, 1.5), Err(Error::Domain(_))));
    assert!(matches!(quantile(&d, -0.1), Err(Error::Domain(_))));
}

#[test]
fn cdf_matches_independent_normal_cdf() {
    let g = std_grid();
    let d = normal(0.3, 1.7, &g);
    let n = Normal::new(0.3, 1.7f64.sqrt()).unwrap();
    for x in [-3.0, -1.0, 0.0, 0.77, 2.5] {
        assert!((d.cdf(x) - n.cdf(x)).abs() < 1e-4, "x = {x}");
    }
}

#[test]
fn kl_examples() {
    let g = std_grid();
    let p = normal(0.0, 1.0, &g);
    assert!(kl_divergence(&p, &p).unwrap().abs() <= 1e-12);
    let a = normal(0.5, 1.0, &g);
    assert!((kl_divergence(&a, &p).unwrap() - 0.125).abs() < 1e-4);
    let eta: f64 = 0.5;
    let s = normal(0.0, eta * eta, &g);
    let want = 0.5 * (eta * eta - 1.0 - 2.0 * eta.ln());
    assert!((want - 0.31815).abs() < 1e-5);
    assert!((kl_divergence(&s, &p).unwrap() - want).abs() < 1e-4);
    let other = Grid::symmetric(8.0, 256).unwrap();
    assert!(matches!(
        kl_divergence(&p, &normal(0.0, 1.0, &other)),
        Err(Error::GridMismatch(_))
    ));
}

#[test]
fn gaussian_kl_closed_form_matches_quadrature() {
    let g = std_grid();
    let a = GaussianMeasure::new(0.4, 0.7).unwrap();
    let b = GaussianMeasure::new(-0.2, 1.3).unwrap();
    let q = kl_divergence(&normal(0.4, 0.7, &g), &normal(-0.2, 1.3, &g)).unwrap();
    assert!((a.kl(&b) - q).abs() < 1e-6);
}

#[test]
fn pushforward_examples() {
    let g = std_grid();
    let d = normal(0.0, 1.0, &g);
    let x = g.nodes();
    let same = pushforward_monotone(&d, &x, &g).unwrap();
    for (a, b) in same.values().iter().zip(d.values()) {
        assert!((a - b).abs() <= 1e-12);
    }
    let shifted: Vec<f64> = x.iter().map(|x| x + 0.5).collect();
    let p = pushforward_monotone(&d, &shifted, &g).unwrap();
    let want = GaussianMeasure::new(0.5, 1.0).unwrap();
    for (j, y) in g.nodes().iter().enumerate() {
        assert!((p.values()[j] - want.pdf(*y)).abs() < 1e-6, "y = {y}");
    }
    let wide = Grid::symmetric(16.0, 1024).unwrap();
    let doubled: Vec<f64> = x.iter().map(|x| 2.0 * x).collect();
    let p = pushforward_monotone(&d, &doubled, &wide).unwrap();
    let want = GaussianMeasure::new(0.0, 4.0).unwrap();
    for (j, y) in wide.nodes().iter().enumerate() {
        assert!((p.values()[j] - want.pdf(*y)).abs() < 1e-5, "y = {y}");
    }
}

#[test]
fn pushforward_rejects_bad_maps() {
    let g = std_grid();
    let d = normal(0.0, 1.0, &g);
    let mut x = g.nodes();
    x.swap(10, 11);
    assert!(matches!(pushforward_monotone(&d, &x, &g), Err(Error::NonMonotoneMap { .. })));
    let far: Vec<f64> = g.nodes().iter().map(|x| x + 6.0).collect();
    assert!(matches!(pushforward_monotone(&d, &far, &g), Err(Error::Truncation { .. })));
}

#[test]
fn sampling_examples() {
    let g = std_grid();
    let d = normal(0.0, 1.0, &g);
    let s = sample(&d, 100_000, 7);
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    assert!(mean.abs() < 3.0 / (1e5f64).sqrt());
    assert_eq!(s, sample(&d, 100_000, 7));

    let ug = Grid::new(0.0, 1.0, 64).unwrap();
    let u = discretize(&DensitySpec::uniform(0.0, 1.0).unwrap(), &ug).unwrap();
    let s = sample(&u, 100_000, 11);
    let m = s.iter().sum::<f64>() / s.len() as f64;
    let var = s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (s.len() as f64 - 1.0);
    // Var of (X - m)^2 for a uniform is 1/80 - 1/144.
    let se = ((1.0 / 80.0 - 1.0 / 144.0) / 1e5f64).sqrt();
    assert!((var - 1.0 / 12.0).abs() < 3.0 * se);
}

#[test]
fn second_moment_examples() {
    let g = std_grid();
    assert!((second_moment(&normal(0.0, 1.0, &g)) - 1.0).abs() < 1e-4);
    assert!((second_moment(&normal(0.5, 1.0, &g)) - 1.25).abs() < 1e-4);
}

#[test]
fn csv_header_and_rows() {
    let g = Grid::new(0.0, 1.0, 16).unwrap();
    let d = GridDensity::normalized(g, vec![1.0; 16]).unwrap();
    let mut buf = Vec::new();
    d.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,density"));
    assert_eq!(lines.count(), 16);
}

fn gaussian_params() -> impl Strategy<Value = (f64, f64)> {
    (-1.0f64..1.0, 0.3f64..1.2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn valid_densities_are_normalized_and_positive((m, v) in gaussian_params()) {
        let d = normal(m, v, &std_grid());
        prop_assert!((d.mass() - 1.0).abs() <= 1e-10);
        prop_assert!(d.min_value() > 0.0);
    }

    #[test]
    fn quantile_round_trip((m, v) in gaussian_params()) {
        let g = std_grid();
        let d = normal(m, v, &g);
        let tol = 2.0 * g.spacing() * d.max_value();
        for k in 1..100 {
            let p = k as f64 / 100.0;
            let q = d.quantile(p).unwrap();
            prop_assert!((d.cdf(q) - p).abs() <= tol);
        }
    }

    #[test]
    fn quantiles_are_monotone((m, v) in gaussian_params()) {
        let d = normal(m, v, &std_grid());
        let ps: Vec<f64> = (0..=200).map(|k| k as f64 / 200.0).collect();
        let q = d.quantiles(&ps).unwrap();
        prop_assert!(q.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn pushforward_round_trip(a in 0.6f64..1.6, b in -0.5f64..0.5, c in 0.0f64..0.08) {
        // T(x) = a x + b + c sin(x) is smooth and strictly increasing.
        let g = Grid::symmetric(6.0, 512).unwrap();
        let d = normal(0.0, 0.6, &g);
        let t = |x: f64| a * x + b + c * x.sin();
        let tv: Vec<f64> = g.nodes().iter().map(|&x| t(x)).collect();
        let image = Grid::new(tv[0], tv[511], 512).unwrap();
        let p = pushforward_monotone(&d, &tv, &image).unwrap();
        // Inverse map on the image grid by bisection.
        let inv: Vec<f64> = image.nodes().iter().map(|&y| {
            let (mut lo, mut hi) = (-6.0, 6.0);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if t(mid) < y { lo = mid } else { hi = mid }
            }
            0.5 * (lo + hi)
        }).collect();
        let back = pushforward_monotone(&p, &inv, &g).unwrap();
        for (x, y) in back.values().iter().zip(d.values()) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn gibbs_inequality((m1, v1) in gaussian_params(), (m2, v2) in gaussian_params()) {
        let g = std_grid();
        prop_assert!(kl_divergence(&normal(m1, v1, &g), &normal(m2, v2, &g)).unwrap() >= -1e-9);
    }
}
