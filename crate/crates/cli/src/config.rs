//! Experiment configuration (TOML) and its validation.

use std::f64::consts::{PI, SQRT_2};
use std::path::PathBuf;

use serde::Deserialize;

use scalar_measures::covariance::{NoiseSpec, DEFAULT_NU_LADDER};
use scalar_measures::flows::{Flow, ShearProfile};
use scalar_measures::fourier::{basis, dimension, parse_record, FourierField, LowModeCut, Parity, SobolevExponent};
use scalar_measures::linalg::DENSE_CAP;
use scalar_measures::sim::Scheme;
use scalar_measures::spectral::{
    default_streamline_grid, GrowthMethod, DEFAULT_QUADRATURE_STEPS, DEFAULT_STREAMLINE_BINS,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    CovarianceLadder,
    Simulate,
    Spectrum,
    Growth,
    DissipationProbe,
    CellularSupport,
}

impl Experiment {
    pub const ALL: [&'static str; 6] =
        ["covariance-ladder", "simulate", "spectrum", "growth", "dissipation-probe", "cellular-support"];

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "covariance-ladder" => Experiment::CovarianceLadder,
            "simulate" => Experiment::Simulate,
            "spectrum" => Experiment::Spectrum,
            "growth" => Experiment::Growth,
            "dissipation-probe" => Experiment::DissipationProbe,
            "cellular-support" => Experiment::CellularSupport,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::CovarianceLadder => "covariance-ladder",
            Experiment::Simulate => "simulate",
            Experiment::Spectrum => "spectrum",
            Experiment::Growth => "growth",
            Experiment::DissipationProbe => "dissipation-probe",
            Experiment::CellularSupport => "cellular-support",
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    experiment: Option<String>,
    #[serde(rename = "N")]
    n: Option<i64>,
    output: Option<PathBuf>,
    nu: Option<f64>,
    nu_ladder: Option<Vec<f64>>,
    sobolev: Option<f64>,
    seed: Option<u64>,
    flow: Option<RawFlow>,
    noise: Option<RawNoise>,
    simulate: Option<RawSimulate>,
    growth: Option<RawGrowth>,
    probe: Option<RawProbe>,
    support: Option<RawSupport>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFlow {
    kind: Option<String>,
    records: Option<String>,
    normalization: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    records: Option<String>,
    isotropic_radius_sq: Option<i64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulate {
    scheme: Option<String>,
    dt: Option<f64>,
    horizon: Option<f64>,
    burn_in: Option<f64>,
    members: Option<usize>,
    sample_stride: Option<usize>,
    record_stride: Option<usize>,
    initial: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrowth {
    initial: Option<String>,
    times: Option<Vec<f64>>,
    method: Option<String>,
    quadrature_steps: Option<usize>,
    remove_invariant_part: Option<bool>,
    low_mode_radius_sq: Option<i64>,
    low_mode_horizons: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProbe {
    tau: Option<f64>,
    delta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSupport {
    bins: Option<usize>,
    grid: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SimulateParams {
    pub scheme: Scheme,
    pub dt: f64,
    pub horizon: f64,
    pub burn_in: Option<f64>,
    pub members: usize,
    pub sample_stride: usize,
    pub record_stride: Option<usize>,
    pub initial: FourierField,
}

#[derive(Clone, Debug)]
pub struct GrowthParams {
    pub initial: FourierField,
    pub times: Vec<f64>,
    pub method: GrowthMethod,
    pub quadrature_steps: usize,
    pub remove_invariant_part: bool,
    pub low_mode: Option<(LowModeCut, Vec<f64>)>,
}

/// A validated experiment.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    pub n: usize,
    pub output: Option<PathBuf>,
    pub flow: Flow,
    pub nus: Vec<f64>,
    pub sobolev: SobolevExponent,
    pub seed: u64,
    pub noise: Option<NoiseSpec>,
    pub simulate: Option<SimulateParams>,
    pub growth: Option<GrowthParams>,
    pub tau: f64,
    pub delta: Option<f64>,
    pub bins: usize,
    pub grid: usize,
}

/// Every violated field, plus non-fatal warnings.
#[derive(Debug, Default)]
pub struct Report {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl Report {
    fn error(&mut self, field: &str, reason: impl std::fmt::Display) {
        self.errors.push(format!("{field}: {reason}"));
    }
}

pub fn parse(text: &str) -> Result<RawConfig, Report> {
    toml::from_str(text).map_err(|e| {
        let mut report = Report::default();
        report.error("config", e.message().trim());
        report
    })
}

/// Plain amplitudes multiply `cos(k·x)` / `sin(k·x)`; orthonormal ones
/// multiply the L²-normalized basis functions.
fn parse_field(n: usize, text: &str, plain: bool) -> Result<FourierField, String> {
    let entries = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| parse_record(l).map(|(m, p, a)| (m, p, if plain { a * PI * SQRT_2 } else { a })))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    FourierField::from_entries(n, &entries).map_err(|e| e.to_string())
}

fn build_flow(raw: Option<&RawFlow>, report: &mut Report) -> Option<Flow> {
    let Some(raw) = raw else {
        report.error("flow", "missing section");
        return None;
    };
    let plain = match raw.normalization.as_deref().unwrap_or("plain") {
        "plain" => true,
        "orthonormal" => false,
        other => {
            report.error("flow.normalization", format!("expected `plain` or `orthonormal`, got `{other}`"));
            return None;
        }
    };
    let kind = raw.kind.as_deref().unwrap_or("");
    let records = raw.records.as_deref();
    let profile_or_stream = |report: &mut Report| -> Option<FourierField> {
        let Some(text) = records else {
            report.error("flow.records", format!("required for kind `{kind}`"));
            return None;
        };
        // the flow's own truncation: wide enough for any record
        let width = text
            .lines()
            .filter_map(|l| parse_record(l.trim()).ok())
            .map(|(m, _, _)| m.sup_norm() as usize)
            .max()
            .unwrap_or(1);
        match parse_field(width.max(1), text, plain) {
            Ok(f) => Some(f),
            Err(e) => {
                report.error("flow.records", e);
                None
            }
        }
    };
    let built = match kind {
        "shear" => {
            let field = profile_or_stream(report)?;
            let m = field.truncation();
            let mut terms = Vec::new();
            for j in 1..=m as i32 {
                let mode = scalar_measures::fourier::ModeIndex::new(0, j).expect("nonzero");
                let scale = SQRT_2 / (2.0 * PI);
                terms.push((
                    j as usize,
                    field.coefficient(mode, Parity::Cos) * scale,
                    field.coefficient(mode, Parity::Sin) * scale,
                ));
            }
            if basis(m).iter().zip(field.coeffs().iter()).any(|((k, _), a)| k.k1 != 0 && *a != 0.0) {
                report.error("flow.records", "a shear profile u(y) may only use modes (0, j)");
                return None;
            }
            ShearProfile::from_terms(&terms).and_then(Flow::shear)
        }
        "cellular" => match records {
            None => Ok(Flow::default_cellular()),
            Some(_) => Flow::cellular(profile_or_stream(report)?),
        },
        "custom" => Flow::custom(profile_or_stream(report)?),
        "rest" => Ok(Flow::rest()),
        "" => {
            report.error("flow.kind", "missing (one of shear, cellular, custom, rest)");
            return None;
        }
        other => {
            report.error("flow.kind", format!("unknown kind `{other}` (one of shear, cellular, custom, rest)"));
            return None;
        }
    };
    match built {
        Ok(flow) => Some(flow),
        Err(e) => {
            report.error("flow", e);
            None
        }
    }
}

fn build_noise(n: usize, raw: Option<&RawNoise>, report: &mut Report) -> Option<NoiseSpec> {
    let Some(raw) = raw else {
        report.error("noise", "missing section");
        return None;
    };
    match (&raw.records, raw.isotropic_radius_sq) {
        (Some(_), Some(_)) => {
            report.error("noise", "give either `records` or `isotropic_radius_sq`, not both");
            None
        }
        (None, None) => {
            report.error("noise", "needs `records` or `isotropic_radius_sq`");
            None
        }
        (None, Some(r2)) if r2 < 1 => {
            report.error("noise.isotropic_radius_sq", "must be at least 1");
            None
        }
        (None, Some(r2)) => Some(NoiseSpec::isotropic(n, r2)),
        (Some(text), None) => match parse_field(n, text, false)
            .and_then(|f| NoiseSpec::new(n, f.into_vector().abs()).map_err(|e| e.to_string()))
        {
            Ok(noise) => Some(noise),
            Err(e) => {
                report.error("noise.records", e);
                None
            }
        },
    }
}

fn positive(report: &mut Report, field: &str, value: Option<f64>) -> Option<f64> {
    match value {
        None => {
            report.error(field, "missing");
            None
        }
        Some(v) if !(v > 0.0 && v.is_finite()) => {
            report.error(field, format!("must be positive, got {v}"));
            None
        }
        Some(v) => Some(v),
    }
}

/// Resolves the ν value(s) an experiment needs.
fn nus_for(raw: &RawConfig, experiment: Experiment, report: &mut Report) -> Vec<f64> {
    let ladder_based =
        matches!(experiment, Experiment::CovarianceLadder | Experiment::DissipationProbe | Experiment::CellularSupport);
    let nus = if ladder_based {
        raw.nu_ladder.clone().or(raw.nu.map(|v| vec![v])).unwrap_or_else(|| DEFAULT_NU_LADDER.to_vec())
    } else if experiment == Experiment::Simulate {
        match raw.nu {
            Some(v) => vec![v],
            None => {
                report.error("nu", "missing");
                return Vec::new();
            }
        }
    } else {
        Vec::new()
    };
    if nus.is_empty() && ladder_based {
        report.error("nu_ladder", "must not be empty");
    }
    for &nu in &nus {
        if !(nu.is_finite() && nu >= 0.0) {
            report.error(
                if ladder_based { "nu_ladder" } else { "nu" },
                format!("diffusivity must be nonnegative, got {nu}"),
            );
        } else if nu == 0.0 && experiment != Experiment::Simulate {
            report.error(
                if ladder_based { "nu_ladder" } else { "nu" },
                "ν = 0 has no stationary covariance and no viscous semigroup decay",
            );
        }
    }
    nus
}

pub fn validate(raw: &RawConfig) -> (Option<ExperimentSpec>, Report) {
    let mut report = Report::default();
    let experiment = match raw.experiment.as_deref() {
        None => {
            report.error("experiment", format!("missing (one of {})", Experiment::ALL.join(", ")));
            None
        }
        Some(s) => {
            let e = Experiment::parse(s);
            if e.is_none() {
                report.error("experiment", format!("unknown experiment `{s}` (one of {})", Experiment::ALL.join(", ")));
            }
            e
        }
    };
    let n = match raw.n {
        None => {
            report.error("N", "missing");
            None
        }
        Some(n) if n < 1 => {
            report.error("N", format!("truncation must be at least 1, got {n}"));
            None
        }
        Some(n) => Some(n as usize),
    };
    let sobolev = match SobolevExponent::new(raw.sobolev.unwrap_or(1.0)) {
        Ok(s) if s.value() > 0.0 => Some(s),
        _ => {
            report.error("sobolev", "must be positive and finite");
            None
        }
    };
    let flow = build_flow(raw.flow.as_ref(), &mut report);
    let (Some(experiment), Some(n)) = (experiment, n) else {
        return (None, report);
    };
    if let Some(flow) = &flow {
        if flow.max_wavenumber() > 2 * n {
            report.error("N", format!("flow wavenumber {} exceeds 2N = {}", flow.max_wavenumber(), 2 * n));
        }
    }
    let nus = nus_for(raw, experiment, &mut report);
    let needs_noise =
        matches!(experiment, Experiment::CovarianceLadder | Experiment::Simulate | Experiment::CellularSupport);
    let noise = if needs_noise { build_noise(n, raw.noise.as_ref(), &mut report) } else { None };

    let mut simulate = None;
    if experiment == Experiment::Simulate {
        let s = raw.simulate.as_ref();
        if s.is_none() {
            report.error("simulate", "missing section");
        }
        let s = s.cloned().unwrap_or_default();
        let scheme = match s.scheme.as_deref().unwrap_or("exact-gaussian").parse::<Scheme>() {
            Ok(v) => Some(v),
            Err(_) => {
                report.error("simulate.scheme", "expected `semi-implicit-em` or `exact-gaussian`");
                None
            }
        };
        let dt = positive(&mut report, "simulate.dt", s.dt);
        let horizon = positive(&mut report, "simulate.horizon", s.horizon);
        let members = s.members.unwrap_or(1);
        if members == 0 {
            report.error("simulate.members", "must be at least 1");
        }
        if s.sample_stride == Some(0) || s.record_stride == Some(0) {
            report.error("simulate", "strides must be positive");
        }
        if let (Some(h), Some(tb)) = (horizon, s.burn_in) {
            if !(tb >= 0.0 && tb < h) {
                report.error("simulate.burn_in", format!("need 0 ≤ burn_in < horizon, got {tb}"));
            }
        }
        if let (Some(h), None, Some(&nu)) = (horizon, s.burn_in, nus.first()) {
            if nu > 0.0 && 5.0 / nu >= h {
                report
                    .error("simulate.horizon", format!("default burn-in 5/ν = {} is not below the horizon", 5.0 / nu));
            }
        }
        let initial = match &s.initial {
            None => Some(FourierField::zeros(n)),
            Some(text) => parse_field(n, text, false).map_err(|e| report.error("simulate.initial", e)).ok(),
        };
        if let (Some(scheme), Some(dt), Some(horizon), Some(initial)) = (scheme, dt, horizon, initial) {
            simulate = Some(SimulateParams {
                scheme,
                dt,
                horizon,
                burn_in: s.burn_in,
                members,
                sample_stride: s.sample_stride.unwrap_or(1),
                record_stride: s.record_stride,
                initial,
            });
        }
    }

    let mut growth = None;
    if experiment == Experiment::Growth {
        let g = raw.growth.as_ref();
        if g.is_none() {
            report.error("growth", "missing section");
        }
        let initial = match g.and_then(|g| g.initial.as_deref()) {
            None => {
                report.error("growth.initial", "missing");
                None
            }
            Some(text) => match parse_field(n, text, false) {
                Ok(f) if f.is_zero() => {
                    report.error("growth.initial", "initial datum must be nonzero");
                    None
                }
                Ok(f) => Some(f),
                Err(e) => {
                    report.error("growth.initial", e);
                    None
                }
            },
        };
        let times = g.and_then(|g| g.times.clone()).unwrap_or_default();
        if times.is_empty() || times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            report.error("growth.times", "need a nonempty list of positive horizons");
        }
        let default_method =
            if flow.as_ref().is_some_and(|f| f.profile().is_some()) { "shear-exact" } else { "truncated-exponential" };
        let method = match g.and_then(|g| g.method.as_deref()).unwrap_or(default_method) {
            "shear-exact" => {
                if flow.as_ref().is_some_and(|f| f.profile().is_none()) {
                    report.error("growth.method", "shear-exact needs a shear flow");
                }
                Some(GrowthMethod::ShearExact)
            }
            "truncated-exponential" => Some(GrowthMethod::TruncatedExponential),
            other => {
                report.error("growth.method", format!("unknown method `{other}`"));
                None
            }
        };
        let steps = g.and_then(|g| g.quadrature_steps).unwrap_or(DEFAULT_QUADRATURE_STEPS);
        if steps == 0 {
            report.error("growth.quadrature_steps", "must be positive");
        }
        let low_mode = match g.and_then(|g| g.low_mode_radius_sq) {
            None => None,
            Some(r2) if r2 < 1 => {
                report.error("growth.low_mode_radius_sq", "must be at least 1");
                None
            }
            Some(r2) => {
                let horizons = g.and_then(|g| g.low_mode_horizons.clone()).unwrap_or_else(|| times.clone());
                if horizons.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                    report.error("growth.low_mode_horizons", "horizons must be positive");
                }
                Some((LowModeCut::Radius(r2), horizons))
            }
        };
        if low_mode.is_some() && flow.as_ref().is_some_and(|f| f.kind() == scalar_measures::flows::FlowKind::Rest) {
            report.error("growth.low_mode_radius_sq", "no invariant-part split for a fluid at rest");
        }
        if let (Some(initial), Some(method)) = (initial, method) {
            growth = Some(GrowthParams {
                initial,
                times,
                method,
                quadrature_steps: steps,
                remove_invariant_part: g.and_then(|g| g.remove_invariant_part).unwrap_or(false),
                low_mode,
            });
        }
    }

    let tau = raw.probe.as_ref().and_then(|p| p.tau).unwrap_or(1.0);
    if experiment == Experiment::DissipationProbe && !(tau > 0.0 && tau.is_finite()) {
        report.error("probe.tau", "must be positive");
    }
    let delta = raw.probe.as_ref().and_then(|p| p.delta);
    if let Some(d) = delta {
        if !(d > 0.0 && d < 1.0) {
            report.error("probe.delta", "must lie in (0, 1)");
        }
    }
    let bins = raw.support.as_ref().and_then(|s| s.bins).unwrap_or(DEFAULT_STREAMLINE_BINS);
    let grid = raw.support.as_ref().and_then(|s| s.grid).unwrap_or_else(|| default_streamline_grid(n));
    if experiment == Experiment::CellularSupport {
        if bins < 2 {
            report.error("support.bins", "need at least two bins");
        }
        if grid < 4 * n {
            report.error("support.grid", format!("grid {grid} is below 4N = {}", 4 * n));
        }
        if flow.as_ref().is_some_and(|f| f.streamfunction().is_none()) {
            report.error("flow.kind", "cellular-support needs a streamfunction flow (cellular or custom)");
        }
    }

    let dim = dimension(n);
    if dim > DENSE_CAP {
        report.warnings.push(format!(
            "dimension {dim} exceeds the {DENSE_CAP} cap for dense solves; invariant blocks above the cap use Krylov actions or are rejected"
        ));
    }
    let spec = match (flow, sobolev, report.errors.is_empty()) {
        (Some(flow), Some(sobolev), true) => Some(ExperimentSpec {
            experiment,
            n,
            output: raw.output.clone(),
            flow,
            nus,
            sobolev,
            seed: raw.seed.unwrap_or(0),
            noise,
            simulate,
            growth,
            tau,
            delta,
            bins,
            grid,
        }),
        _ => None,
    };
    (spec, report)
}

/// Rough cost class from the largest dense block.
pub fn runtime_class(dim: usize) -> &'static str {
    match dim {
        0..=1_200 => "seconds",
        1_201..=3_000 => "minutes",
        _ => "tens of minutes",
    }
}

/// Bytes for a handful of dense `dim × dim` matrices.
pub fn memory_estimate(dim: usize) -> u64 {
    4 * (dim as u64) * (dim as u64) * 8
}
