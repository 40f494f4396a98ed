use scalar_measures::covariance::{
    covariance_by_quadrature, covariance_distance, lyapunov_covariance, NoiseSpec, QuadratureRule,
};
use scalar_measures::flows::{Flow, ShearProfile};
use scalar_measures::fourier::{coefficient_index, FourierField, ModeIndex, Parity, SobolevExponent};
use scalar_measures::operators::generator;
use scalar_measures::sim::{
    covariance_standard_error, empirical_covariance, simulate, Scheme, SimConfig, TrajectoryStats,
};

fn mode(k1: i32, k2: i32) -> ModeIndex {
    ModeIndex::new(k1, k2).unwrap()
}

fn shear() -> Flow {
    Flow::shear(ShearProfile::sin_y()).unwrap()
}

/// Forcing on `(1,0)` cos with amplitude 1 and `(1,1)` sin with amplitude 0.5.
fn two_mode_noise(n: usize) -> NoiseSpec {
    NoiseSpec::from_entries(n, &[(mode(1, 0), Parity::Cos, 1.0), (mode(1, 1), Parity::Sin, 0.5)]).unwrap()
}

fn run(
    flow: Flow,
    nu: f64,
    noise: NoiseSpec,
    scheme: Scheme,
    dt: f64,
    horizon: f64,
    burn_in: f64,
    members: usize,
) -> TrajectoryStats {
    let n = noise.truncation();
    let mut config = SimConfig::new(flow, nu, noise, scheme, dt, horizon, members, 99);
    config.burn_in = Some(burn_in);
    simulate(&config, &FourierField::zeros(n)).unwrap()
}

fn variance(stats: &TrajectoryStats, idx: usize) -> f64 {
    empirical_covariance(stats).unwrap().matrix()[(idx, idx)]
}

#[test]
fn rest_flow_matches_ou_variance() {
    // dX = −ν|k|²X dt + √ν ψ dW has stationary variance ψ²/(2|k|²)
    let nu = 0.5;
    let stats = run(Flow::rest(), nu, two_mode_noise(2), Scheme::ExactGaussian, 0.5, 2010.0, 10.0, 64);
    let se = covariance_standard_error(&stats).unwrap();
    for (m, p, psi) in [(mode(1, 0), Parity::Cos, 1.0), (mode(1, 1), Parity::Sin, 0.5)] {
        let exact = psi * psi / (2.0 * m.norm_sq() as f64);
        let i = coefficient_index(2, m, p);
        let got = variance(&stats, i);
        assert!((got - exact).abs() <= 3.0 * se[(i, i)], "{m:?}: {got} vs {exact} (se {})", se[(i, i)]);
        assert!((got - exact).abs() / exact < 0.03, "{m:?}: {got} vs {exact}");
    }
}

#[test]
fn semi_implicit_em_has_its_discrete_stationary_variance() {
    // X⁺ = (X + √(ν dt) ψ ξ)/(1 + ν|k|² dt) is stationary at
    // ν dt ψ² / ((1 + ν|k|² dt)² − 1), which tends to ψ²/(2|k|²)
    let nu = 0.5;
    let m = mode(1, 1);
    let exact = 0.25 / 4.0;
    let mut errors = Vec::new();
    for dt in [0.4, 0.1] {
        let stats = run(Flow::rest(), nu, two_mode_noise(2), Scheme::SemiImplicitEM, dt, 1010.0, 10.0, 64);
        let got = variance(&stats, coefficient_index(2, m, Parity::Sin));
        let lambda = nu * m.norm_sq() as f64;
        let discrete = nu * dt * 0.25 / ((1.0 + lambda * dt).powi(2) - 1.0);
        assert!((got - discrete).abs() / discrete < 0.03, "dt={dt}: {got} vs {discrete}");
        errors.push((discrete - exact).abs());
    }
    assert!(errors[1] < errors[0]);
}

#[test]
fn stationary_marginals_are_gaussian() {
    let stats = run(shear(), 0.5, two_mode_noise(3), Scheme::ExactGaussian, 0.2, 1010.0, 10.0, 128);
    assert!(stats.sample_count() >= 100_000);
    let q = empirical_covariance(&stats).unwrap();
    let top = q.operator_norm();
    let mut checked = 0;
    for i in 0..q.matrix().nrows() {
        if q.matrix()[(i, i)] < 1e-3 * top {
            continue;
        }
        let (skew, kurt) = stats.moments.shape(i).unwrap();
        assert!(skew.abs() < 0.1, "coefficient {i}: skewness {skew}");
        assert!(kurt.abs() < 0.2, "coefficient {i}: excess kurtosis {kurt}");
        checked += 1;
    }
    assert!(checked >= 2);
}

#[test]
fn schemes_agree_as_dt_shrinks() {
    let nu = 0.5;
    let noise = two_mode_noise(3);
    let exact = lyapunov_covariance(&generator(&shear(), nu, 3, SobolevExponent::H1).unwrap(), &noise).unwrap();
    let reference = run(shear(), nu, noise.clone(), Scheme::ExactGaussian, 0.1, 1010.0, 10.0, 64);
    let reference = empirical_covariance(&reference).unwrap();
    let mut gaps = Vec::new();
    for dt in [0.1, 0.05, 0.025] {
        let em = run(shear(), nu, noise.clone(), Scheme::SemiImplicitEM, dt, 1010.0, 10.0, 64);
        gaps.push(covariance_distance(&empirical_covariance(&em).unwrap(), &exact).unwrap() / exact.matrix().norm());
    }
    let sampling = covariance_distance(&reference, &exact).unwrap() / exact.matrix().norm();
    assert!(sampling < 0.05, "exact scheme off by {sampling}");
    assert!(gaps[2] < 0.05 + sampling, "{gaps:?}");
    assert!(gaps[2] < gaps[0], "{gaps:?}");
}

#[test]
fn stationary_dissipation_balances_forcing() {
    // ν E‖f‖²_{H¹} = ‖Ψ‖²/2 at stationarity
    let noise = two_mode_noise(4);
    let half = noise.intensity() / 2.0;
    let stats = run(shear(), 0.2, noise, Scheme::ExactGaussian, 0.25, 530.0, 30.0, 32);
    let level = stats.stationary_dissipation().unwrap();
    assert!((level.value - half).abs() / half < 0.05, "{} vs {half}", level.value);
}

#[test]
fn large_excursions_are_rare() {
    let stats = run(shear(), 0.2, two_mode_noise(3), Scheme::ExactGaussian, 0.25, 300.0, 30.0, 32);
    assert!(stats.exceedance_fraction() < 0.01);
}

#[test]
fn ensemble_is_independent_of_thread_count() {
    let go = || run(shear(), 0.5, two_mode_noise(2), Scheme::SemiImplicitEM, 0.1, 30.0, 10.0, 40);
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(go);
    let parallel = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(go);
    assert_eq!(serial.to_csv(), parallel.to_csv());
    assert_eq!(serial.covariance, parallel.covariance);
}

#[test]
fn lyapunov_and_quadrature_agree_per_flow_family() {
    let nu = 0.5;
    let noise = NoiseSpec::from_entries(6, &[(mode(0, 1), Parity::Cos, 1.0), (mode(1, 1), Parity::Cos, 1.0)]).unwrap();
    let psi =
        FourierField::from_entries(2, &[(mode(1, 1), Parity::Cos, -0.5), (mode(1, -1), Parity::Cos, 0.5)]).unwrap();
    for flow in [shear(), Flow::default_cellular(), Flow::custom(psi).unwrap(), Flow::rest()] {
        let a = generator(&flow, nu, 6, SobolevExponent::H1).unwrap();
        let lyap = lyapunov_covariance(&a, &noise).unwrap();
        let quad = covariance_by_quadrature(&a, &noise, 40.0 / nu, 0.01 / nu, QuadratureRule::Simpson).unwrap();
        let rel = covariance_distance(&lyap, &quad.covariance).unwrap() / lyap.matrix().norm();
        assert!(rel <= 1e-6, "{:?}: {rel}", flow.kind());
    }
}
