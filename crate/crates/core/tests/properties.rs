use proptest::prelude::*;

use mutsel::certificates::{c_constant, moment_inequalities};
use mutsel::config::RunConfig;
use mutsel::grid::normal_pdf;
use mutsel::selection::{exponent_g, mean_mortality, mortality};
use mutsel::waveframe::to_moving_frame;
use mutsel::{run, ConvolutionMethod, Convolver, DensityField, Grid, MutationKernel};

fn grid() -> Grid {
    Grid::new(-10.0, 10.0, 2048).unwrap()
}

fn mixture(w: f64, mu1: f64, v1: f64, mu2: f64, v2: f64) -> DensityField {
    DensityField::from_fn(grid(), |x| {
        w * normal_pdf(x, mu1, v1) + (1.0 - w) * normal_pdf(x, mu2, v2)
    })
    .unwrap()
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n)
        .map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    h / 3.0 * (f(a) + f(b) + inner)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn integration_is_linear(
        a in -3.0..3.0f64, b in -3.0..3.0f64,
        mu1 in -2.0..2.0f64, mu2 in -2.0..2.0f64,
        v1 in 0.05..1.0f64, v2 in 0.05..1.0f64,
    ) {
        let g = grid();
        let f = g.sample(|x| normal_pdf(x, mu1, v1));
        let h = g.sample(|x| x * x * normal_pdf(x, mu2, v2));
        let comb: Vec<f64> = f.iter().zip(&h).map(|(p, q)| a * p + b * q).collect();
        let i = |v: &[f64]| mutsel::grid::quadrature_moment(&g, v, 0);
        let lhs = i(&comb);
        let rhs = a * i(&f) + b * i(&h);
        prop_assert!((lhs - rhs).abs() <= 1e-14 * (1.0 + lhs.abs()));
    }

    #[test]
    fn even_moments_bounded_by_mass_plus_next(
        w in 0.05..0.95f64, mu1 in -3.0..3.0f64, mu2 in -3.0..3.0f64,
        v1 in 0.01..1.0f64, v2 in 0.01..1.0f64,
    ) {
        let f = mixture(w, mu1, v1, mu2, v2);
        let mass = f.integrate();
        prop_assert_eq!(f.moment(0).unwrap(), mass);
        for n in [0u32, 2, 4, 6] {
            prop_assert!(f.moment(n).unwrap().abs() <= mass + f.moment(n + 2).unwrap());
        }
        prop_assert!(moment_inequalities(f.moments4()).iter().all(|r| r.pass));
    }

    #[test]
    fn exponent_is_additive(x in -6.0..6.0f64, s in 0.0..3.0f64, d1 in 0.0..2.0f64,
                            d2 in 0.0..2.0f64, c in -2.0..2.0f64) {
        let (t, r) = (s + d1, s + d1 + d2);
        let lhs = exponent_g(x, s, t, c).unwrap() + exponent_g(x, t, r, c).unwrap();
        let rhs = exponent_g(x, s, r, c).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn exponent_matches_quadrature(x in -6.0..6.0f64, s in 0.0..3.0f64, len in 0.0..2.0f64,
                                   c in -2.0..2.0f64) {
        let t = s + len;
        // Simpson is exact on the quadratic integrand up to rounding
        let numeric = simpson(|tau| mortality(x, tau, c), s, t, 1000);
        let exact = exponent_g(x, s, t, c).unwrap();
        prop_assert!((numeric - exact).abs() <= 1e-10 * (1.0 + exact.abs()));
    }

    #[test]
    fn mean_mortality_dominates_mass(
        w in 0.05..0.95f64, mu1 in -3.0..3.0f64, mu2 in -3.0..3.0f64,
        v1 in 0.01..1.0f64, v2 in 0.01..1.0f64, t in 0.0..5.0f64, c in -1.0..1.0f64,
    ) {
        let f = mixture(w, mu1, v1, mu2, v2);
        let m = f.moments4();
        let dbar = mean_mortality(&f, t, c);
        prop_assert!(dbar >= m[0]);
        let closed = m[0] + m[2] - 2.0 * c * t * m[1] + c * c * t * t * m[0];
        prop_assert!((dbar - closed).abs() <= 1e-10 * closed);
    }

    #[test]
    fn convolution_bounds_and_moments(
        mu in -2.0..2.0f64, var in 0.05..1.0f64, m in -0.5..0.5f64, sigma in 0.03..0.5f64,
    ) {
        let g = grid();
        let kernel = MutationKernel::new(m, sigma).unwrap();
        let phi = DensityField::from_fn(g, |x| normal_pdf(x, mu, var)).unwrap();
        let out = Convolver::new(kernel, g, ConvolutionMethod::Spectral)
            .unwrap()
            .convolve(&phi)
            .unwrap();
        let young = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * sigma);
        prop_assert!(out.values().iter().all(|v| *v <= young * (1.0 + 1e-12)));
        prop_assert!((out.integrate() - phi.integrate()).abs() <= 1e-9);
        let (pm, fm, om) = (phi.moments4(), kernel.moments(), out.moments4());
        prop_assert!((om[1] - (fm[1] + pm[1])).abs() <= 1e-8);
        prop_assert!((om[2] - (fm[2] + 2.0 * fm[1] * pm[1] + pm[2])).abs() <= 1e-7);
    }

    #[test]
    fn frame_moments_follow_binomial_expansion(
        mu in -1.0..1.0f64, var in 0.02..0.3f64, c in 0.0..0.5f64, t in 0.0..4.0f64,
    ) {
        let g = Grid::new(-8.0, 12.0, 4096).unwrap();
        let f = DensityField::from_fn(g, |x| normal_pdf(x, mu + c * t, var)).unwrap();
        let frame = to_moving_frame(&f, t, c).unwrap();
        prop_assert!((frame.integrate() - f.integrate()).abs() <= 1e-8);
        let raw = f.moments4();
        let shifted = frame.moments4();
        let s = c * t;
        let binom = [
            1.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 3.0, 3.0, 1.0, 1.0, 4.0, 6.0, 4.0, 1.0,
        ];
        let mut offset = 0;
        for (n, got) in shifted.iter().enumerate() {
            let expected: f64 = (0..=n)
                .map(|k| binom[offset + k] * raw[k] * (-s).powi((n - k) as i32))
                .sum();
            offset += n + 1;
            prop_assert!((got - expected).abs() <= 1e-6, "n = {n}");
        }
    }
}

#[test]
fn c_constant_matches_reciprocal_integrand() {
    for (t, r, c) in [
        (1.0, 1.0, 1.0),
        (5.0, 0.1349, 0.1),
        (2.5, 0.7, -0.3),
        (0.0, 2.0, 4.0),
    ] {
        let reciprocal =
            (-t - c * c * t * t * t / 3.0f64).exp() * (-r * r * t - c * r * t * t).exp();
        assert!((c_constant(t, r, c) * reciprocal - 2.0).abs() < 1e-12 * 2.0);
    }
}

#[test]
fn direct_and_spectral_agree_on_wide_grid() {
    let g = Grid::new(-12.0, 12.0, 4096).unwrap();
    let kernel = MutationKernel::new(-0.2, 0.1).unwrap();
    let v = g.sample(|x| normal_pdf(x, 1.0, 0.3) + 0.5 * normal_pdf(x, -2.0, 0.05));
    let a = Convolver::new(kernel, g, ConvolutionMethod::Direct)
        .unwrap()
        .apply(&v);
    let b = Convolver::new(kernel, g, ConvolutionMethod::Spectral)
        .unwrap()
        .apply(&v);
    let sup = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(sup < 1e-10, "{sup}");
}

fn baseline(extra: &str) -> RunConfig {
    RunConfig::parse(&format!(
        "u = 0.1\nc = 0.1\nm = 0\nsigma = 0.05\nx_min = -8\nx_max = 9\n\
         n_points = 2048\nphi0 = gaussian(0, 0.04)\n{extra}"
    ))
    .unwrap()
}

#[test]
fn baseline_step_invariants() {
    let cfg = baseline("t_final = 1\nsnapshot_stride = 250\n");
    let phi0 = cfg.initial_density().unwrap();
    let traj = run(&cfg.params, &cfg.step, &phi0, &cfg.options).unwrap();

    assert!(traj.stats.max_picard_iters <= 5, "{:?}", traj.stats);
    assert_eq!(traj.stats.rejected_steps, 0);
    let per_step = traj
        .rows
        .windows(2)
        .map(|w| (w[1].mass - w[0].mass).abs())
        .fold(0.0, f64::max);
    assert!(per_step <= 1e-9, "{per_step:e}");
    assert!(traj.rows.iter().all(|r| r.dbar >= r.mass));

    // recorded d̄ is the population average of the recorded state
    assert_eq!(traj.snapshots.len(), 5);
    for snap in &traj.snapshots {
        let row = &traj.rows[snap.step];
        assert_eq!(row.t, snap.t);
        let recomputed = mean_mortality(&snap.field, snap.t, cfg.params.c());
        assert!((recomputed - row.dbar).abs() <= 1e-10, "t = {}", snap.t);
    }
}

#[test]
fn direct_and_spectral_runs_agree() {
    let spectral = baseline("t_final = 0.2\n");
    let mut direct = spectral.clone();
    direct.options.convolution = ConvolutionMethod::Direct;
    let phi0 = spectral.initial_density().unwrap();
    let a = run(&spectral.params, &spectral.step, &phi0, &spectral.options).unwrap();
    let b = run(&direct.params, &direct.step, &phi0, &direct.options).unwrap();
    assert!(a.final_state.sup_distance(&b.final_state) < 1e-10);
}

#[test]
fn large_speed_leaves_population_behind() {
    // the population cannot follow an optimum that outruns mutation; the run
    // stays well posed and the lag keeps growing
    let cfg = RunConfig::parse(
        "u = 0.1\nc = 5\nsigma = 0.02\nt_final = 1\nn_points = 4096\ndt = 2.5e-4\nsnapshot_stride = 1000\n",
    )
    .unwrap();
    let phi0 = cfg.initial_density().unwrap();
    let traj = run(&cfg.params, &cfg.step, &phi0, &cfg.options).unwrap();
    let report = mutsel::waveframe::wave_convergence(&traj.snapshots, 5.0, 1e-6).unwrap();
    assert!(!report.converged());
    let lags: Vec<f64> = report.points.iter().map(|p| p.lag).collect();
    assert!(lags.windows(2).all(|w| w[1] > w[0]), "{lags:?}");
}
