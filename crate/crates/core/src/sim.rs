//! Monte Carlo integration of `df = (−Bf + νDf) dt + √ν Ψ dW` on the
//! truncated basis, with ensemble statistics and the energy balance
//! `E‖f(t)‖² + 2ν E∫_τ^t ‖f‖²_{H^s} ds = E‖f(τ)‖² + ν‖Ψ‖²(t−τ)`.
//!
//! Members draw from ChaCha8 with the run seed and one stream per member, and
//! are grouped into a fixed number of contiguous batches that are merged in
//! order, so results do not depend on the worker count.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::covariance::{CovarianceOperator, NoiseSpec, Provenance};
use crate::error::{invalid, Error, Result};
use crate::flows::Flow;
use crate::format_f64;
use crate::fourier::{basis, FourierField, SobolevExponent};
use crate::linalg::{self, DENSE_CAP};
use crate::operators::{advection_matrix, generator, Propagator};

pub const RNG_ALGORITHM: &str = "ChaCha8 (seed = run seed, stream = member index)";

/// Blow-up threshold relative to the initial bound.
pub const INSTABILITY_FACTOR: f64 = 1e6;

/// Upper bound on the number of member batches.
pub const MAX_BATCHES: usize = 16;

/// Tolerance of the increment covariance `Σ_dt`.
pub const INCREMENT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// `(I − dt νD) f⁺ = f − dt Bf + √(ν dt) Ψξ`.
    SemiImplicitEM,
    /// `f⁺ = e^{dt A} f + η`, `η ~ N(0, Σ_dt)`.
    ExactGaussian,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::SemiImplicitEM => "semi-implicit-em",
            Scheme::ExactGaussian => "exact-gaussian",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semi-implicit-em" => Ok(Scheme::SemiImplicitEM),
            "exact-gaussian" => Ok(Scheme::ExactGaussian),
            other => Err(Error::Parse(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub flow: Flow,
    pub nu: f64,
    pub noise: NoiseSpec,
    pub scheme: Scheme,
    pub dt: f64,
    pub horizon: f64,
    /// Defaults to `5/(νλ₁)` (zero when `ν = 0`).
    pub burn_in: Option<f64>,
    pub members: usize,
    pub seed: u64,
    /// Steps between covariance samples after burn-in.
    pub sample_stride: usize,
    /// Steps between recorded points of the time series; defaults to about 500 records.
    pub record_stride: Option<usize>,
    pub sobolev: SobolevExponent,
}

impl SimConfig {
    pub fn new(
        flow: Flow,
        nu: f64,
        noise: NoiseSpec,
        scheme: Scheme,
        dt: f64,
        horizon: f64,
        members: usize,
        seed: u64,
    ) -> Self {
        SimConfig {
            flow,
            nu,
            noise,
            scheme,
            dt,
            horizon,
            burn_in: None,
            members,
            seed,
            sample_stride: 1,
            record_stride: None,
            sobolev: SobolevExponent::H1,
        }
    }

    pub fn truncation(&self) -> usize {
        self.noise.truncation()
    }

    pub fn burn_in(&self) -> f64 {
        self.burn_in.unwrap_or(if self.nu > 0.0 { 5.0 / self.nu } else { 0.0 })
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt - 1e-9).ceil() as usize
    }

    pub fn record_stride(&self) -> usize {
        self.record_stride.unwrap_or_else(|| self.steps().div_ceil(500).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", "step must be positive"));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(invalid("nu", "diffusivity must be nonnegative"));
        }
        let tb = self.burn_in();
        if !(tb >= 0.0 && self.horizon > tb) {
            return Err(invalid("horizon", format!("need T > T_b ≥ 0, got T = {}, T_b = {tb}", self.horizon)));
        }
        if self.members == 0 {
            return Err(invalid("members", "ensemble size must be at least 1"));
        }
        if self.sample_stride == 0 || self.record_stride == Some(0) {
            return Err(invalid("stride", "strides must be positive"));
        }
        Ok(())
    }

    /// Key-value manifest sufficient to re-run the simulation.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("code_version = {}\n", env!("CARGO_PKG_VERSION")));
        out.push_str(&format!("flow = {}\n", self.flow.kind().as_str()));
        out.push_str(&format!("N = {}\n", self.truncation()));
        out.push_str(&format!("nu = {}\n", format_f64(self.nu)));
        out.push_str(&format!("sobolev = {}\n", format_f64(self.sobolev.value())));
        out.push_str(&format!("scheme = {}\n", self.scheme.as_str()));
        out.push_str(&format!("dt = {}\n", format_f64(self.dt)));
        out.push_str(&format!("horizon = {}\n", format_f64(self.horizon)));
        out.push_str(&format!("burn_in = {}\n", format_f64(self.burn_in())));
        out.push_str(&format!("members = {}\n", self.members));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("sample_stride = {}\n", self.sample_stride));
        out.push_str(&format!("record_stride = {}\n", self.record_stride()));
        out.push_str(&format!("rng = {RNG_ALGORITHM}\n"));
        out.push_str(&format!("noise_intensity = {}\n", format_f64(self.noise.intensity())));
        out
    }
}

/// Running count, mean and co-moment matrix, merged pairwise.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceAccumulator {
    count: usize,
    mean: DVector<f64>,
    comoment: DMatrix<f64>,
}

impl CovarianceAccumulator {
    pub fn new(dim: usize) -> Self {
        Self { count: 0, mean: DVector::zeros(dim), comoment: DMatrix::zeros(dim, dim) }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn push(&mut self, x: &DVector<f64>) {
        self.count += 1;
        let delta = x - &self.mean;
        self.mean += &delta / self.count as f64;
        let delta2 = x - &self.mean;
        self.comoment.ger(1.0, &delta, &delta2, 1.0);
    }

    pub fn merge(&mut self, other: &CovarianceAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        self.comoment += &other.comoment;
        self.comoment.ger(na * nb / n, &delta, &delta, 1.0);
        self.mean += delta * (nb / n);
        self.count += other.count;
    }

    /// Unbiased sample covariance, symmetrized.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        if self.count < 2 {
            return None;
        }
        let c = &self.comoment / (self.count - 1) as f64;
        Some((&c + c.transpose()) * 0.5)
    }
}

/// Per-coefficient raw power sums for skewness and kurtosis.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentAccumulator {
    count: usize,
    sums: Vec<[f64; 4]>,
}

impl MomentAccumulator {
    fn new(dim: usize) -> Self {
        Self { count: 0, sums: vec![[0.0; 4]; dim] }
    }

    fn push(&mut self, x: &DVector<f64>) {
        self.count += 1;
        for (s, &v) in self.sums.iter_mut().zip(x.iter()) {
            let v2 = v * v;
            s[0] += v;
            s[1] += v2;
            s[2] += v2 * v;
            s[3] += v2 * v2;
        }
    }

    fn merge(&mut self, other: &MomentAccumulator) {
        self.count += other.count;
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            for i in 0..4 {
                a[i] += b[i];
            }
        }
    }

    /// `(skewness, excess kurtosis)` of coefficient `i`.
    pub fn shape(&self, i: usize) -> Option<(f64, f64)> {
        if self.count < 4 {
            return None;
        }
        let n = self.count as f64;
        let [s1, s2, s3, s4] = self.sums[i];
        let m = s1 / n;
        let c2 = s2 / n - m * m;
        if c2 <= 0.0 {
            return None;
        }
        let c3 = s3 / n - 3.0 * m * s2 / n + 2.0 * m.powi(3);
        let c4 = s4 / n - 4.0 * m * s3 / n + 6.0 * m * m * s2 / n - 3.0 * m.powi(4);
        Some((c3 / c2.powf(1.5), c4 / (c2 * c2) - 3.0))
    }
}

/// Mean and standard error of a Monte Carlo estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub standard_error: f64,
}

#[derive(Clone, Debug)]
pub struct TrajectoryStats {
    pub n: usize,
    pub nu: f64,
    pub noise_intensity: f64,
    pub scheme: Scheme,
    pub dt: f64,
    pub burn_in: f64,
    pub members: usize,
    pub record_times: Vec<f64>,
    /// `E‖f‖²_{L²}` at each record.
    pub mean_l2: Vec<f64>,
    /// `E‖f‖²_{H^s}` at each record.
    pub mean_h1: Vec<f64>,
    /// Energy-balance residual on `[0, t]` at each record.
    pub residual: Vec<f64>,
    /// Per-member `‖f‖²_{L²}` (rows: members, columns: records).
    member_l2: DMatrix<f64>,
    /// Per-member cumulative trapezoid of `‖f‖²_{H^s}` from `t = 0`.
    member_dissipation: DMatrix<f64>,
    pub covariance: CovarianceAccumulator,
    /// One accumulator per member batch, for batch-means error bars.
    pub batch_covariances: Vec<CovarianceAccumulator>,
    pub moments: MomentAccumulator,
    /// Samples with `‖f‖² > 5‖Ψ‖²/(νλ₁)`.
    pub exceedances: usize,
}

impl TrajectoryStats {
    /// CSV `t,mean_l2_sq,mean_h1_sq,residual`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,mean_l2_sq,mean_h1_sq,residual\n");
        for i in 0..self.record_times.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                format_f64(self.record_times[i]),
                format_f64(self.mean_l2[i]),
                format_f64(self.mean_h1[i]),
                format_f64(self.residual[i])
            ));
        }
        out
    }

    pub fn sample_count(&self) -> usize {
        self.covariance.count()
    }

    /// Fraction of covariance samples with `‖f‖² > 5‖Ψ‖²/(νλ₁)`.
    pub fn exceedance_fraction(&self) -> f64 {
        self.exceedances as f64 / self.sample_count().max(1) as f64
    }

    fn record_index(&self, t: f64) -> Result<usize> {
        let scale = self.record_times.last().copied().unwrap_or(1.0).max(1.0);
        self.record_times
            .iter()
            .position(|r| (r - t).abs() <= 1e-9 * scale)
            .ok_or_else(|| invalid("t", format!("time {t} is not a recorded sample time")))
    }

    /// Time average of `E‖f‖²_{H^s}` over records at or after burn-in, with a
    /// standard error from per-member averages.
    pub fn stationary_dissipation(&self) -> Result<Estimate> {
        let first = self
            .record_times
            .iter()
            .position(|t| *t >= self.burn_in - 1e-9)
            .ok_or_else(|| invalid("burn_in", "no records after burn-in"))?;
        let last = self.record_times.len() - 1;
        if last <= first {
            return Err(invalid("horizon", "need at least two records after burn-in"));
        }
        let span = self.record_times[last] - self.record_times[first];
        let per_member: Vec<f64> = (0..self.members)
            .map(|m| (self.member_dissipation[(m, last)] - self.member_dissipation[(m, first)]) / span)
            .collect();
        Ok(mean_and_error(&per_member))
    }

    pub fn times(&self) -> &[f64] {
        &self.record_times
    }
}

fn mean_and_error(values: &[f64]) -> Estimate {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let se = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
    } else {
        f64::NAN
    };
    Estimate { value: mean, standard_error: se }
}

/// Left side minus right side of the energy balance on `[τ, t]`; both times
/// must be record times.
pub fn energy_balance_residual(stats: &TrajectoryStats, tau: f64, t: f64) -> Result<Estimate> {
    if !(tau < t) {
        return Err(invalid("tau", "need τ < t"));
    }
    let (i, j) = (stats.record_index(tau)?, stats.record_index(t)?);
    let forcing = stats.nu * stats.noise_intensity * (stats.record_times[j] - stats.record_times[i]);
    let per_member: Vec<f64> = (0..stats.members)
        .map(|m| {
            stats.member_l2[(m, j)]
                + 2.0 * stats.nu * (stats.member_dissipation[(m, j)] - stats.member_dissipation[(m, i)])
                - stats.member_l2[(m, i)]
                - forcing
        })
        .collect();
    Ok(mean_and_error(&per_member))
}

/// Unbiased sample covariance of all post-burn-in samples.
pub fn empirical_covariance(stats: &TrajectoryStats) -> Result<CovarianceOperator> {
    let matrix =
        stats.covariance.covariance().ok_or_else(|| invalid("samples", "need at least two post-burn-in samples"))?;
    CovarianceOperator::new(stats.n, matrix, Provenance::Empirical { samples: stats.sample_count() })
}

/// Entrywise batch-means standard error of the empirical covariance.
pub fn covariance_standard_error(stats: &TrajectoryStats) -> Result<DMatrix<f64>> {
    let batches: Vec<DMatrix<f64>> = stats.batch_covariances.iter().filter_map(|b| b.covariance()).collect();
    if batches.len() < 2 {
        return Err(invalid("members", "need at least two member batches for error bars"));
    }
    let k = batches.len() as f64;
    let dim = batches[0].nrows();
    let mean = batches.iter().fold(DMatrix::zeros(dim, dim), |acc, b| acc + b) / k;
    let var = batches.iter().fold(DMatrix::zeros(dim, dim), |acc: DMatrix<f64>, b| acc + (b - &mean).map(|v| v * v));
    Ok(var.map(|v| (v / (k - 1.0) / k).sqrt()))
}

enum Stepper {
    SemiImplicit {
        rows: Vec<Vec<(usize, f64)>>,
        denominators: DVector<f64>,
        amplitudes: Vec<(usize, f64)>,
        dt: f64,
        nu: f64,
    },
    Exact {
        propagator: Propagator,
        factor: DMatrix<f64>,
    },
}

impl Stepper {
    fn build(config: &SimConfig) -> Result<Stepper> {
        let n = config.truncation();
        match config.scheme {
            Scheme::SemiImplicitEM => {
                let b = advection_matrix(&config.flow, n)?;
                let dim = b.dim();
                let m = b.matrix();
                let rows = (0..dim)
                    .map(|i| (0..dim).filter(|&j| m[(i, j)] != 0.0).map(|j| (j, m[(i, j)])).collect())
                    .collect();
                let s = config.sobolev.value();
                let denominators = DVector::from_iterator(
                    dim,
                    basis(n).iter().map(|(k, _)| 1.0 + config.dt * config.nu * (k.norm_sq() as f64).powf(s)),
                );
                let amplitudes =
                    config.noise.support().into_iter().map(|i| (i, config.noise.amplitudes()[i])).collect();
                Ok(Stepper::SemiImplicit { rows, denominators, amplitudes, dt: config.dt, nu: config.nu })
            }
            Scheme::ExactGaussian => {
                let a = generator(&config.flow, config.nu, n, config.sobolev)?;
                let largest = a.components().iter().map(Vec::len).max().unwrap_or(0);
                if largest > DENSE_CAP {
                    return Err(invalid(
                        "scheme",
                        format!("exact stepping needs dense exp(A dt); block of size {largest} exceeds {DENSE_CAP}"),
                    ));
                }
                let propagator = Propagator::new(&a, config.dt)?;
                let sigma = increment_covariance(&a, &config.noise, config.dt)?;
                Ok(Stepper::Exact { propagator, factor: psd_factor(&sigma) })
            }
        }
    }

    fn step(&self, f: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
        match self {
            Stepper::SemiImplicit { rows, denominators, amplitudes, dt, nu } => {
                let mut next = f.clone();
                for (i, row) in rows.iter().enumerate() {
                    let bf: f64 = row.iter().map(|(j, v)| v * f[*j]).sum();
                    next[i] -= dt * bf;
                }
                let scale = (nu * dt).sqrt();
                for &(i, psi) in amplitudes {
                    let xi: f64 = rng.sample(StandardNormal);
                    next[i] += scale * psi * xi;
                }
                next.component_div_assign(denominators);
                next
            }
            Stepper::Exact { propagator, factor } => {
                let mut next = propagator.apply_vector(f);
                if factor.ncols() > 0 {
                    let xi = DVector::from_fn(factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
                    next.gemv(1.0, factor, &xi, 1.0);
                }
                next
            }
        }
    }
}

/// `Σ_dt = ν ∫₀^dt e^{sA} ΨΨᵀ e^{sAᵀ} ds` by composite Simpson with interval
/// doubling until successive estimates agree to [`INCREMENT_TOL`].
pub fn increment_covariance(a: &crate::operators::OperatorMatrix, noise: &NoiseSpec, dt: f64) -> Result<DMatrix<f64>> {
    let nu = a.nu().unwrap_or(0.0);
    let dim = a.dim();
    let support = noise.support();
    if nu == 0.0 || support.is_empty() {
        return Ok(DMatrix::zeros(dim, dim));
    }
    let mut psi = DMatrix::zeros(dim, support.len());
    for (c, &i) in support.iter().enumerate() {
        psi[(i, c)] = noise.amplitudes()[i];
    }
    let simpson = |intervals: usize| -> Result<DMatrix<f64>> {
        let h = dt / intervals as f64;
        let propagator = Propagator::new(a, h)?;
        let mut g = psi.clone();
        let mut sum = DMatrix::zeros(dim, dim);
        for j in 0..=intervals {
            let w = if j == 0 || j == intervals {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            sum.gemm(w, &g, &g.transpose(), 1.0);
            if j < intervals {
                g = propagator.apply_columns(&g);
            }
        }
        Ok(sum * (nu * h / 3.0))
    };
    let mut intervals = 2;
    let mut previous = simpson(intervals)?;
    loop {
        intervals *= 2;
        let current = simpson(intervals)?;
        let change = (&current - &previous).abs().max();
        let scale = current.abs().max();
        if change <= INCREMENT_TOL * scale || intervals >= 4096 {
            if change > INCREMENT_TOL * scale {
                return Err(Error::Solver {
                    what: "increment covariance quadrature did not converge".into(),
                    residual: change,
                });
            }
            return Ok((&current + current.transpose()) * 0.5);
        }
        previous = current;
    }
}

/// `L` with `L Lᵀ = Σ`, from the symmetric eigendecomposition with negative
/// rounding-level eigenvalues clipped; columns of negligible weight dropped.
fn psd_factor(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = sigma.nrows();
    let comps = linalg::components(sigma);
    let mut columns: Vec<DVector<f64>> = Vec::new();
    let top = sigma.abs().max();
    for idx in comps {
        let block = linalg::submatrix(sigma, &idx);
        let eig = block.symmetric_eigen();
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda > 1e-15 * top {
                let mut col = DVector::zeros(dim);
                let v = eig.eigenvectors.column(k);
                for (i, &g) in idx.iter().enumerate() {
                    col[g] = v[i] * lambda.sqrt();
                }
                columns.push(col);
            }
        }
    }
    if columns.is_empty() {
        DMatrix::zeros(dim, 0)
    } else {
        DMatrix::from_columns(&columns)
    }
}

struct MemberRun {
    l2: Vec<f64>,
    h1: Vec<f64>,
    dissipation: Vec<f64>,
}

struct BatchRun {
    members: Vec<MemberRun>,
    covariance: CovarianceAccumulator,
    moments: MomentAccumulator,
    exceedances: usize,
}

/// Runs the ensemble from `f0` and collects statistics.
pub fn simulate(config: &SimConfig, f0: &FourierField) -> Result<TrajectoryStats> {
    config.validate()?;
    let n = config.truncation();
    if f0.truncation() != n {
        return Err(Error::TruncationMismatch { expected: n, found: f0.truncation() });
    }
    let stepper = Stepper::build(config)?;
    let dim = f0.dim();
    let steps = config.steps();
    let stride = config.record_stride();
    let burn_steps = (config.burn_in() / config.dt - 1e-9).ceil() as usize;
    let s = config.sobolev;
    let weights: DVector<f64> =
        DVector::from_iterator(dim, basis(n).iter().map(|(k, _)| (k.norm_sq() as f64).powf(s.value())));
    let bound = f0
        .l2_norm()
        .max(if config.nu > 0.0 { (config.noise.intensity() / (2.0 * config.nu)).sqrt() } else { 0.0 })
        .max(f64::MIN_POSITIVE);
    let threshold = if config.nu > 0.0 { 5.0 * config.noise.intensity() / config.nu } else { f64::INFINITY };

    let batch_count = config.members.min(MAX_BATCHES);
    let ranges: Vec<(usize, usize)> =
        (0..batch_count).map(|b| (b * config.members / batch_count, (b + 1) * config.members / batch_count)).collect();

    let run_member = |member: usize,
                      cov: &mut CovarianceAccumulator,
                      moments: &mut MomentAccumulator,
                      exceed: &mut usize|
     -> Result<MemberRun> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(member as u64);
        let mut f = f0.coeffs().clone();
        let energy = |f: &DVector<f64>| -> (f64, f64) {
            let l2 = f.norm_squared();
            let h = f.iter().zip(weights.iter()).map(|(c, w)| w * c * c).sum();
            (l2, h)
        };
        let (mut l2, mut h1) = energy(&f);
        let mut integral = 0.0;
        let mut run = MemberRun { l2: vec![l2], h1: vec![h1], dissipation: vec![0.0] };
        for step in 1..=steps {
            f = stepper.step(&f, &mut rng);
            let norm = f.norm();
            if !(norm <= INSTABILITY_FACTOR * bound) {
                return Err(Error::Unstable { member, step, norm, bound: INSTABILITY_FACTOR * bound });
            }
            let (nl2, nh1) = energy(&f);
            integral += 0.5 * config.dt * (h1 + nh1);
            l2 = nl2;
            h1 = nh1;
            if step % stride == 0 {
                run.l2.push(l2);
                run.h1.push(h1);
                run.dissipation.push(integral);
            }
            if step >= burn_steps && (step - burn_steps).is_multiple_of(config.sample_stride) {
                cov.push(&f);
                moments.push(&f);
                if l2 > threshold {
                    *exceed += 1;
                }
            }
        }
        Ok(run)
    };

    let batches: Vec<BatchRun> = ranges
        .par_iter()
        .map(|&(lo, hi)| {
            let mut covariance = CovarianceAccumulator::new(dim);
            let mut moments = MomentAccumulator::new(dim);
            let mut exceedances = 0;
            let members = (lo..hi)
                .map(|m| run_member(m, &mut covariance, &mut moments, &mut exceedances))
                .collect::<Result<Vec<_>>>()?;
            Ok(BatchRun { members, covariance, moments, exceedances })
        })
        .collect::<Result<_>>()?;

    let records = steps / stride + 1;
    let record_times: Vec<f64> = (0..records).map(|r| (r * stride) as f64 * config.dt).collect();
    let mut member_l2 = DMatrix::zeros(config.members, records);
    let mut member_h1 = DMatrix::zeros(config.members, records);
    let mut member_dissipation = DMatrix::zeros(config.members, records);
    let mut covariance = CovarianceAccumulator::new(dim);
    let mut moments = MomentAccumulator::new(dim);
    let mut exceedances = 0;
    let mut batch_covariances = Vec::with_capacity(batches.len());
    let mut row = 0;
    for batch in batches {
        for run in &batch.members {
            for r in 0..records {
                member_l2[(row, r)] = run.l2[r];
                member_h1[(row, r)] = run.h1[r];
                member_dissipation[(row, r)] = run.dissipation[r];
            }
            row += 1;
        }
        covariance.merge(&batch.covariance);
        moments.merge(&batch.moments);
        exceedances += batch.exceedances;
        batch_covariances.push(batch.covariance);
    }
    let m = config.members as f64;
    let mean_l2: Vec<f64> = (0..records).map(|r| member_l2.column(r).sum() / m).collect();
    let mean_h1: Vec<f64> = (0..records).map(|r| member_h1.column(r).sum() / m).collect();
    let intensity = config.noise.intensity();
    let residual: Vec<f64> = (0..records)
        .map(|r| {
            mean_l2[r] + 2.0 * config.nu * member_dissipation.column(r).sum() / m
                - mean_l2[0]
                - config.nu * intensity * record_times[r]
        })
        .collect();

    Ok(TrajectoryStats {
        n,
        nu: config.nu,
        noise_intensity: intensity,
        scheme: config.scheme,
        dt: config.dt,
        burn_in: config.burn_in(),
        members: config.members,
        record_times,
        mean_l2,
        mean_h1,
        residual,
        member_l2,
        member_dissipation,
        covariance,
        batch_covariances,
        moments,
        exceedances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::lyapunov_covariance;
    use crate::flows::ShearProfile;
    use crate::fourier::{coefficient_index, ModeIndex, Parity};
    use crate::operators::heat_generator;
    use approx::assert_relative_eq;

    fn mode(k1: i32, k2: i32) -> ModeIndex {
        ModeIndex::new(k1, k2).unwrap()
    }

    fn cos_y(n: usize) -> NoiseSpec {
        NoiseSpec::from_entries(n, &[(mode(0, 1), Parity::Cos, 1.0)]).unwrap()
    }

    #[test]
    fn accumulator_merge_matches_single_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<DVector<f64>> = (0..50).map(|_| DVector::from_fn(3, |_, _| rng.random::<f64>())).collect();
        let mut whole = CovarianceAccumulator::new(3);
        xs.iter().for_each(|x| whole.push(x));
        let (mut a, mut b) = (CovarianceAccumulator::new(3), CovarianceAccumulator::new(3));
        xs[..17].iter().for_each(|x| a.push(x));
        xs[17..].iter().for_each(|x| b.push(x));
        a.merge(&b);
        assert_eq!(a.count(), 50);
        assert!((a.covariance().unwrap() - whole.covariance().unwrap()).abs().max() < 1e-14);
    }

    #[test]
    fn increment_covariance_matches_scalar_ou() {
        let nu = 0.5;
        let dt = 0.1;
        let a = heat_generator(nu, 2, SobolevExponent::H1).unwrap();
        let sigma = increment_covariance(&a, &cos_y(2), dt).unwrap();
        let i = coefficient_index(2, mode(0, 1), Parity::Cos);
        assert_relative_eq!(sigma[(i, i)], 0.5 * (1.0 - (-2.0 * nu * dt).exp()), max_relative = 1e-12);
    }

    #[test]
    fn noiseless_em_contracts() {
        let n = 4;
        let flow = Flow::default_cellular();
        let mut config = SimConfig::new(flow, 0.1, NoiseSpec::zero(n), Scheme::SemiImplicitEM, 0.01, 2.0, 1, 3);
        config.burn_in = Some(1.0);
        config.record_stride = Some(1);
        let f0 =
            FourierField::from_entries(n, &[(mode(1, 0), Parity::Cos, 1.0), (mode(2, 1), Parity::Sin, 0.5)]).unwrap();
        let stats = simulate(&config, &f0).unwrap();
        for w in stats.mean_l2.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn seeds_reproduce_bit_for_bit() {
        let n = 3;
        let flow = Flow::default_cellular();
        for scheme in [Scheme::SemiImplicitEM, Scheme::ExactGaussian] {
            let mut config = SimConfig::new(flow.clone(), 0.5, cos_y(n), scheme, 0.05, 12.0, 5, 42);
            config.burn_in = Some(2.0);
            let a = simulate(&config, &FourierField::zeros(n)).unwrap();
            let b = simulate(&config, &FourierField::zeros(n)).unwrap();
            assert_eq!(a.to_csv(), b.to_csv());
            assert_eq!(a.covariance, b.covariance);
        }
    }

    #[test]
    fn zero_noise_zero_start_is_constant() {
        let n = 3;
        let config = SimConfig::new(Flow::rest(), 1.0, NoiseSpec::zero(n), Scheme::ExactGaussian, 0.1, 8.0, 3, 1);
        let stats = simulate(&config, &FourierField::zeros(n)).unwrap();
        let q = empirical_covariance(&stats).unwrap();
        assert!(q.matrix().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn heat_em_residual_converges() {
        let n = 2;
        let f0 = FourierField::from_entries(n, &[(mode(0, 1), Parity::Cos, 1.0)]).unwrap();
        let flow = Flow::rest();
        let residual = |dt: f64| {
            let mut config =
                SimConfig::new(flow.clone(), 1.0, NoiseSpec::zero(n), Scheme::SemiImplicitEM, dt, 1.0, 1, 0);
            config.burn_in = Some(0.0);
            let stats = simulate(&config, &f0).unwrap();
            energy_balance_residual(&stats, 0.0, 1.0).unwrap().value.abs()
        };
        let (r1, r2) = (residual(0.01), residual(0.005));
        assert!(r1 > 0.0);
        assert!((r1 / r2).log2() >= 0.9);
    }

    #[test]
    fn exact_scheme_matches_lyapunov_on_small_system() {
        let n = 2;
        let nu = 1.0;
        let flow = Flow::shear(ShearProfile::sin_y()).unwrap();
        let noise = NoiseSpec::isotropic(n, 1);
        let mut config = SimConfig::new(flow.clone(), nu, noise.clone(), Scheme::ExactGaussian, 0.5, 2000.0, 16, 9);
        config.burn_in = Some(5.0);
        let stats = simulate(&config, &FourierField::zeros(n)).unwrap();
        let q = empirical_covariance(&stats).unwrap();
        let exact = lyapunov_covariance(&generator(&flow, nu, n, SobolevExponent::H1).unwrap(), &noise).unwrap();
        let se = covariance_standard_error(&stats).unwrap();
        let diff = (q.matrix() - exact.matrix()).norm();
        assert!(diff <= 5.0 * se.norm().max(1e-3), "{diff} vs {}", se.norm());
    }

    #[test]
    fn misaligned_times_rejected() {
        let n = 2;
        let mut config = SimConfig::new(Flow::rest(), 1.0, cos_y(n), Scheme::ExactGaussian, 0.1, 10.0, 2, 0);
        config.record_stride = Some(10);
        let stats = simulate(&config, &FourierField::zeros(n)).unwrap();
        assert!(energy_balance_residual(&stats, 0.55, 3.0).is_err());
        assert!(energy_balance_residual(&stats, 5.0, 6.0).is_ok());
        assert!(energy_balance_residual(&stats, 6.0, 5.0).is_err());
    }
}
