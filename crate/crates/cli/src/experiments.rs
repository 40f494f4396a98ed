//! Experiment drivers. Each returns its result files as `(name, contents)`.

use scalar_measures::covariance::{
    block_operator_norm, covariance_distance, dominant_streamline_residual, h1_trace, lyapunov_covariance,
    shear_limit_covariance, CovarianceOperator, NoiseSpec,
};
use scalar_measures::flows::FlowKind;
use scalar_measures::fourier::FourierField;
use scalar_measures::operators::{advection_matrix, generator, semigroup_norm};
use scalar_measures::sim::{covariance_standard_error, empirical_covariance, simulate, SimConfig};
use scalar_measures::spectral::{
    dissipation_floor, h1_growth_average, low_mode_time_average, shear_e_projection, spectrum, streamline_projection,
};
use scalar_measures::{format_f64, Result};

use crate::config::{Experiment, ExperimentSpec};

pub type Files = Vec<(String, String)>;

pub fn run(spec: &ExperimentSpec) -> Result<Files> {
    match spec.experiment {
        Experiment::CovarianceLadder => covariance_ladder(spec),
        Experiment::Simulate => run_simulation(spec),
        Experiment::Spectrum => run_spectrum(spec),
        Experiment::Growth => growth(spec),
        Experiment::DissipationProbe => dissipation_probe(spec),
        Experiment::CellularSupport => cellular_support(spec),
    }
}

fn noise(spec: &ExperimentSpec) -> &NoiseSpec {
    spec.noise.as_ref().expect("validated noise")
}

fn stationary(spec: &ExperimentSpec, nu: f64) -> Result<CovarianceOperator> {
    lyapunov_covariance(&generator(&spec.flow, nu, spec.n, spec.sobolev)?, noise(spec))
}

fn covariance_ladder(spec: &ExperimentSpec) -> Result<Files> {
    let limit = (spec.flow.kind() == FlowKind::Shear).then(|| shear_limit_covariance(noise(spec)));
    let mut files = Vec::new();
    let mut summary = String::from("nu,h1_trace,offblock_norm,dist_to_Q0\n");
    for (i, &nu) in spec.nus.iter().enumerate() {
        let q = stationary(spec, nu)?;
        let offblock = block_operator_norm(&q, |m, _| m.k1 != 0);
        let dist = match &limit {
            Some(q0) => format_f64(covariance_distance(&q, q0)?),
            None => String::new(),
        };
        summary.push_str(&format!("{},{},{},{dist}\n", format_f64(nu), format_f64(h1_trace(&q)), format_f64(offblock)));
        files.push((format!("covariance_{i}.txt"), q.to_text()));
        files.push((format!("covariance_{i}_eigen.csv"), q.eigen_summary_csv()));
    }
    if let Some(q0) = limit {
        files.push(("covariance_limit.txt".into(), q0.to_text()));
    }
    files.push(("summary.csv".into(), summary));
    Ok(files)
}

fn run_simulation(spec: &ExperimentSpec) -> Result<Files> {
    let p = spec.simulate.as_ref().expect("validated simulate section");
    let mut config = SimConfig::new(
        spec.flow.clone(),
        spec.nus[0],
        noise(spec).clone(),
        p.scheme,
        p.dt,
        p.horizon,
        p.members,
        spec.seed,
    );
    config.burn_in = p.burn_in;
    config.sample_stride = p.sample_stride;
    config.record_stride = p.record_stride;
    config.sobolev = spec.sobolev;
    let stats = simulate(&config, &p.initial)?;
    let empirical = empirical_covariance(&stats)?;
    let se = covariance_standard_error(&stats)?;
    let mut summary = String::from("quantity,value,standard_error\n");
    let dissipation = stats.stationary_dissipation()?;
    summary.push_str(&format!(
        "nu_h1_time_average,{},{}\n",
        format_f64(dissipation.value),
        format_f64(dissipation.standard_error)
    ));
    summary.push_str(&format!("half_noise_intensity,{},0\n", format_f64(noise(spec).intensity() / 2.0)));
    summary.push_str(&format!("samples,{},0\n", stats.sample_count()));
    summary.push_str(&format!("exceedance_fraction,{},0\n", format_f64(stats.exceedance_fraction())));
    summary.push_str(&format!("max_covariance_standard_error,{},0\n", format_f64(se.max())));
    if spec.nus[0] > 0.0 {
        if let Ok(exact) = stationary(spec, spec.nus[0]) {
            let rel = (empirical.matrix() - exact.matrix()).norm() / exact.matrix().norm();
            summary.push_str(&format!("relative_distance_to_lyapunov,{},0\n", format_f64(rel)));
        }
    }
    Ok(vec![
        ("stats.csv".into(), stats.to_csv()),
        ("covariance.txt".into(), empirical.to_text()),
        ("covariance_eigen.csv".into(), empirical.eigen_summary_csv()),
        ("summary.csv".into(), summary),
        ("simulation_manifest.txt".into(), config.manifest()),
    ])
}

fn run_spectrum(spec: &ExperimentSpec) -> Result<Files> {
    let report = spectrum(&advection_matrix(&spec.flow, spec.n)?)?;
    let summary = format!(
        "quantity,value\nkernel_dim,{}\nmax_real_part,{}\nmax_residual,{}\northonormality_defect,{}\n",
        report.kernel_dim,
        format_f64(report.max_real_part),
        format_f64(report.max_residual),
        format_f64(report.orthonormality_defect())
    );
    Ok(vec![("spectrum.csv".into(), report.to_csv()), ("summary.csv".into(), summary)])
}

fn invariant_part(spec: &ExperimentSpec, f: &FourierField) -> Result<FourierField> {
    match spec.flow.kind() {
        FlowKind::Shear => Ok(shear_e_projection(f)),
        FlowKind::Rest => Ok(f.clone()),
        FlowKind::Cellular | FlowKind::Custom => Ok(streamline_projection(&spec.flow, f, spec.bins, spec.grid)?.field),
    }
}

fn growth(spec: &ExperimentSpec) -> Result<Files> {
    let p = spec.growth.as_ref().expect("validated growth section");
    let f0 =
        if p.remove_invariant_part { p.initial.sub(&invariant_part(spec, &p.initial)?)? } else { p.initial.clone() };
    let curve = h1_growth_average(&spec.flow, &f0, &p.times, p.method, p.quadrature_steps)?;
    let mut csv = String::from("T,G,G_over_initial\n");
    for ((t, g), r) in curve.times.iter().zip(&curve.values).zip(curve.normalized()) {
        csv.push_str(&format!("{},{},{}\n", format_f64(*t), format_f64(*g), format_f64(r)));
    }
    let mut files = vec![("growth.csv".to_string(), csv)];
    if let Some((cut, horizons)) = &p.low_mode {
        let mut low = String::from("T,low_mode_average\n");
        for &t in horizons {
            let value = low_mode_time_average(&spec.flow, &p.initial, *cut, t, p.quadrature_steps)?;
            low.push_str(&format!("{},{}\n", format_f64(t), format_f64(value)));
        }
        files.push(("low_mode.csv".into(), low));
    }
    Ok(files)
}

fn dissipation_probe(spec: &ExperimentSpec) -> Result<Files> {
    let mut csv =
        String::from(if spec.delta.is_some() { "nu,semigroup_norm,below_delta\n" } else { "nu,semigroup_norm\n" });
    for &nu in &spec.nus {
        let a = generator(&spec.flow, nu, spec.n, spec.sobolev)?;
        let norm = semigroup_norm(&a, spec.tau / nu)?;
        match spec.delta {
            Some(d) => csv.push_str(&format!("{},{},{}\n", format_f64(nu), format_f64(norm), norm < d)),
            None => csv.push_str(&format!("{},{}\n", format_f64(nu), format_f64(norm))),
        }
    }
    let floor = dissipation_floor(&advection_matrix(&spec.flow, spec.n)?, spec.sobolev, spec.tau)?;
    let summary = format!("quantity,value\ntau,{}\ntruncation_floor,{}\n", format_f64(spec.tau), format_f64(floor));
    Ok(vec![("probe.csv".into(), csv), ("summary.csv".into(), summary)])
}

fn cellular_support(spec: &ExperimentSpec) -> Result<Files> {
    let mut csv = String::from("nu,operator_norm,streamline_residual\n");
    let mut files = Vec::new();
    for (i, &nu) in spec.nus.iter().enumerate() {
        let q = stationary(spec, nu)?;
        let residual = dominant_streamline_residual(&q, &spec.flow, spec.bins, spec.grid)?;
        csv.push_str(&format!("{},{},{}\n", format_f64(nu), format_f64(q.operator_norm()), format_f64(residual)));
        files.push((format!("covariance_{i}_eigen.csv"), q.eigen_summary_csv()));
    }
    files.push(("support.csv".into(), csv));
    Ok(files)
}
