//! Spectral diagnostics of the transport operator `L = i u·∇`.
//!
//! Covers the eigendecomposition of the truncated advection matrix, the
//! flow-specific projections onto the span `E` of H¹ eigenfunctions
//! (x-averages for shear flows, streamline averages for cellular flows),
//! time-averaged H¹ growth along inviscid trajectories, and low-mode time
//! averages of the part of `f₀` orthogonal to `E`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use petgraph::unionfind::UnionFind;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};
use crate::flows::{Flow, FlowKind, ShearProfile};
use crate::fourier::{representatives, FourierField, LowModeCut};
use crate::linalg;
use crate::operators::{generator, OperatorKind, OperatorMatrix, Propagator};
use crate::{format_f64, fourier::SobolevExponent};

/// Eigenfrequencies below this magnitude (relative to `max(1, ‖B‖_max)`)
/// count towards the kernel.
pub const KERNEL_TOL: f64 = 1e-9;

/// Eigendecomposition `B v = iλ v` of a skew-symmetric advection matrix.
#[derive(Clone, Debug)]
pub struct SpectrumReport {
    pub n: usize,
    /// Real frequencies `λ`, ascending.
    pub frequencies: Vec<f64>,
    /// Orthonormal eigenvectors, column `j` for `frequencies[j]`.
    pub eigenvectors: DMatrix<Complex64>,
    pub kernel_dim: usize,
    /// `max_j |Re(v_jᴴ B v_j)|`: the real part of the Rayleigh quotients.
    pub max_real_part: f64,
    /// `max_j ‖B v_j − iλ_j v_j‖`.
    pub max_residual: f64,
}

impl SpectrumReport {
    /// CSV with columns `index,lambda`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,lambda\n");
        for (i, l) in self.frequencies.iter().enumerate() {
            out.push_str(&format!("{i},{}\n", format_f64(*l)));
        }
        out
    }

    /// `max |v_iᴴ v_j − δ_ij|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.eigenvectors.adjoint() * &self.eigenvectors;
        let n = gram.nrows();
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for i in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - Complex64::new(target, 0.0)).norm());
            }
        }
        worst
    }
}

/// Full eigendecomposition of the advection matrix via the Hermitian matrix
/// `−iB`, computed on each invariant block.
pub fn spectrum(b: &OperatorMatrix) -> Result<SpectrumReport> {
    if b.kind() != OperatorKind::Advection {
        return Err(Error::WrongOperatorKind { expected: "advection", found: b.kind().as_str() });
    }
    let m = b.matrix();
    let dim = m.nrows();
    let scale = m.abs().max().max(1.0);
    let blocks: Vec<(Vec<usize>, Vec<f64>, DMatrix<Complex64>)> = b
        .components()
        .into_par_iter()
        .map(|idx| {
            let block = linalg::submatrix(m, &idx);
            let h = block.map(|v| Complex64::new(0.0, -v));
            let eig = SymmetricEigen::new(h);
            (idx, eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
        })
        .collect();
    let mut entries: Vec<(f64, usize, usize)> = Vec::with_capacity(dim);
    for (bi, (_, vals, _)) in blocks.iter().enumerate() {
        for (k, &l) in vals.iter().enumerate() {
            entries.push((l, bi, k));
        }
    }
    entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut vectors = DMatrix::<Complex64>::zeros(dim, dim);
    let mut max_real_part: f64 = 0.0;
    let mut max_residual: f64 = 0.0;
    for (col, &(l, bi, k)) in entries.iter().enumerate() {
        let (idx, _, vecs) = &blocks[bi];
        let v = vecs.column(k);
        let block = linalg::submatrix(m, idx).map(|x| Complex64::new(x, 0.0));
        let bv = &block * v;
        let rayleigh = v.dotc(&bv);
        max_real_part = max_real_part.max(rayleigh.re.abs());
        max_residual = max_residual.max((bv - v * Complex64::new(0.0, l)).norm());
        for (i, &g) in idx.iter().enumerate() {
            vectors[(g, col)] = v[i];
        }
    }
    let frequencies: Vec<f64> = entries.iter().map(|e| e.0).collect();
    let kernel_dim = frequencies.iter().filter(|l| l.abs() <= KERNEL_TOL * scale).count();
    Ok(SpectrumReport {
        n: b.truncation(),
        frequencies,
        eigenvectors: vectors,
        kernel_dim,
        max_real_part,
        max_residual,
    })
}

/// Limit of `‖S_ν(τ/ν)‖` as `ν → 0` at fixed truncation.
///
/// For small `ν` the semigroup at time `τ/ν` acts on each eigenspace `V_λ` of
/// `B` as `exp(τ P_λ D P_λ)`, so the limit is `max_λ exp(−τ μ_λ)` with `μ_λ`
/// the smallest eigenvalue of `−D` compressed to `V_λ`. Eigenvalues closer
/// than `KERNEL_TOL` (relative) are treated as one eigenspace.
pub fn dissipation_floor(b: &OperatorMatrix, s: SobolevExponent, tau: f64) -> Result<f64> {
    if b.kind() != OperatorKind::Advection {
        return Err(Error::WrongOperatorKind { expected: "advection", found: b.kind().as_str() });
    }
    if !(tau >= 0.0) {
        return Err(invalid("tau", "must be nonnegative"));
    }
    let m = b.matrix();
    let weights: Vec<f64> =
        crate::fourier::basis(b.truncation()).iter().map(|(k, _)| (k.norm_sq() as f64).powf(s.value())).collect();
    let scale = m.abs().max().max(1.0);
    let smallest = b
        .components()
        .into_par_iter()
        .map(|idx| {
            let block = linalg::submatrix(m, &idx);
            let eig = SymmetricEigen::new(block.map(|v| Complex64::new(0.0, -v)));
            let mut order: Vec<usize> = (0..idx.len()).collect();
            order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
            let mut worst = f64::INFINITY;
            let mut start = 0;
            while start < order.len() {
                let mut end = start + 1;
                while end < order.len()
                    && eig.eigenvalues[order[end]] - eig.eigenvalues[order[end - 1]] <= KERNEL_TOL * scale
                {
                    end += 1;
                }
                let cluster = &order[start..end];
                let c = cluster.len();
                let compressed = DMatrix::from_fn(c, c, |p, q| {
                    let (vp, vq) = (eig.eigenvectors.column(cluster[p]), eig.eigenvectors.column(cluster[q]));
                    (0..idx.len()).map(|i| vp[i].conj() * vq[i] * weights[idx[i]]).sum::<Complex64>()
                });
                let mu = SymmetricEigen::new(compressed).eigenvalues.min();
                worst = worst.min(mu);
                start = end;
            }
            worst
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok((-tau * smallest).exp())
}

/// `Π_e` for shear flows: the x-average, which keeps exactly the `k1 = 0`
/// coefficients.
pub fn shear_e_projection(f: &FourierField) -> FourierField {
    let mut out = f.clone();
    for (r, m) in representatives(f.truncation()).iter().enumerate() {
        if m.k1 != 0 {
            out.coeffs_mut()[2 * r] = 0.0;
            out.coeffs_mut()[2 * r + 1] = 0.0;
        }
    }
    out
}

/// Result of a streamline average.
#[derive(Clone, Debug)]
pub struct StreamlineProjection {
    pub field: FourierField,
    /// `‖P(Pf) − Pf‖ / ‖Pf‖` (zero when `Pf = 0`).
    pub idempotence_defect: f64,
}

/// Conditional average of `f` on streamlines: grid points are sorted by `ψ`
/// into `bins` equal-count bins (tied values share a bin), each bin is split
/// by the connected sign regions of `ψ`, `f` is replaced by its mean over each piece and the result is projected
/// back to the truncation of `f`.
pub fn streamline_projection(flow: &Flow, f: &FourierField, bins: usize, grid: usize) -> Result<StreamlineProjection> {
    let binning = StreamlineBinning::new(flow, f.truncation(), bins, grid)?;
    let field = binning.project(f)?;
    let again = binning.project(&field)?;
    let norm = field.l2_norm();
    let idempotence_defect = if norm == 0.0 { 0.0 } else { again.sub(&field)?.l2_norm() / norm };
    Ok(StreamlineProjection { field, idempotence_defect })
}

/// Reusable level-set binning of a streamfunction on a grid.
pub struct StreamlineBinning {
    n: usize,
    grid: usize,
    /// bin label per grid point (row-major)
    labels: Vec<usize>,
    counts: Vec<usize>,
}

impl StreamlineBinning {
    pub fn new(flow: &Flow, n: usize, bins: usize, grid: usize) -> Result<Self> {
        if bins < 2 {
            return Err(invalid("bins", "need at least two bins"));
        }
        let psi = match flow.kind() {
            FlowKind::Shear => {
                return Err(invalid(
                    "flow",
                    "streamline averages need a streamfunction; use the x-average for shear flows",
                ))
            }
            FlowKind::Rest => return Err(invalid("flow", "a fluid at rest has no streamlines")),
            FlowKind::Cellular | FlowKind::Custom => flow.streamfunction().expect("streamfunction flow"),
        };
        if grid < 4 * n {
            return Err(Error::GridTooSmall { grid, required: 4 * n });
        }
        let values = psi.sample_grid(grid)?;
        let points = grid * grid;
        // snap to a fine lattice so symmetric points share a value; level
        // sets are never split between bins
        let quantum = 1e-12 * values.amax().max(f64::MIN_POSITIVE);
        let level: Vec<i64> = (0..points).map(|p| (values[(p / grid, p % grid)] / quantum).round() as i64).collect();
        let mut order: Vec<usize> = (0..points).collect();
        order.sort_by_key(|&p| (level[p], p));
        let mut bin_of = vec![0; points];
        let mut start = 0;
        for (rank, &p) in order.iter().enumerate() {
            if level[p] != level[order[start]] {
                start = rank;
            }
            bin_of[p] = start * bins / points;
        }
        // a level set may have one component per cell; split each bin by the
        // connected sign regions of ψ, which stay fat where bins get thin
        let sign: Vec<i64> = level.iter().map(|l| l.signum()).collect();
        let mut cells = UnionFind::<usize>::new(points);
        for i in 0..grid {
            for j in 0..grid {
                let p = i * grid + j;
                for q in [((i + 1) % grid) * grid + j, i * grid + (j + 1) % grid] {
                    if sign[p] == sign[q] && sign[p] != 0 {
                        cells.union(p, q);
                    }
                }
            }
        }
        let roots = cells.into_labeling();
        let mut ids = std::collections::HashMap::new();
        let mut labels = vec![0; points];
        let mut counts = Vec::new();
        for p in 0..points {
            // the zero set is grouped per bin
            let cell = if sign[p] == 0 { usize::MAX } else { roots[p] };
            let next = ids.len();
            let id = *ids.entry((bin_of[p], cell)).or_insert(next);
            if id == counts.len() {
                counts.push(0);
            }
            labels[p] = id;
            counts[id] += 1;
        }
        Ok(Self { n, grid, labels, counts })
    }

    pub fn project(&self, f: &FourierField) -> Result<FourierField> {
        if f.truncation() != self.n {
            return Err(Error::TruncationMismatch { expected: self.n, found: f.truncation() });
        }
        if f.is_zero() {
            return Ok(f.clone());
        }
        let values = f.sample_grid(self.grid)?;
        let mut sums = vec![0.0; self.counts.len()];
        for (p, &bin) in self.labels.iter().enumerate() {
            sums[bin] += values[(p / self.grid, p % self.grid)];
        }
        let means: Vec<f64> =
            sums.iter().zip(&self.counts).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect();
        let averaged = DMatrix::from_fn(self.grid, self.grid, |i, j| means[self.labels[i * self.grid + j]]);
        FourierField::from_grid(&averaged, self.n)
    }
}

/// Evolution method for inviscid trajectories.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GrowthMethod {
    /// `exp(tA)` of the truncated inviscid generator at the truncation of `f₀`.
    TruncatedExponential,
    /// Characteristic solution `f₀(x − u(y)t, y)` on a y-grid (shear flows).
    ShearExact,
}

impl GrowthMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            GrowthMethod::TruncatedExponential => "truncated-exponential",
            GrowthMethod::ShearExact => "shear-exact",
        }
    }
}

/// `G(T) = (1/T) ∫₀^T ‖S(t)f₀‖²_{H¹} dt` sampled at several horizons.
#[derive(Clone, Debug)]
pub struct GrowthCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Trapezoidal step used for each horizon.
    pub steps: Vec<f64>,
    pub method: GrowthMethod,
    pub flow: FlowKind,
    pub initial_h1_sq: f64,
}

impl GrowthCurve {
    /// `G(T) / ‖f₀‖²_{H¹}`.
    pub fn normalized(&self) -> Vec<f64> {
        self.values.iter().map(|g| g / self.initial_h1_sq).collect()
    }

    /// CSV with columns `T,G`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("T,G\n");
        for (t, g) in self.times.iter().zip(&self.values) {
            out.push_str(&format!("{},{}\n", format_f64(*t), format_f64(*g)));
        }
        out
    }
}

/// Default number of trapezoidal intervals per horizon.
pub const DEFAULT_QUADRATURE_STEPS: usize = 1000;

/// Time-averaged H¹ norm along the inviscid evolution of `f₀`, with
/// `quadrature_steps` trapezoidal intervals per horizon.
pub fn h1_growth_average(
    flow: &Flow,
    f0: &FourierField,
    times: &[f64],
    method: GrowthMethod,
    quadrature_steps: usize,
) -> Result<GrowthCurve> {
    if f0.is_zero() {
        return Err(invalid("f0", "initial datum must be nonzero"));
    }
    if quadrature_steps == 0 {
        return Err(invalid("quadrature_steps", "must be positive"));
    }
    if times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(invalid("T", "horizons must be positive and finite"));
    }
    let evolver = InviscidEvolver::new(flow, f0, method)?;
    let results: Vec<(f64, f64)> = times
        .par_iter()
        .map(|&t_max| {
            let h = t_max / quadrature_steps as f64;
            let samples = evolver.trajectory(h, quadrature_steps, t_max, Observable::H1NormSq)?;
            Ok((trapezoid(&samples, h) / t_max, h))
        })
        .collect::<Result<_>>()?;
    Ok(GrowthCurve {
        times: times.to_vec(),
        values: results.iter().map(|r| r.0).collect(),
        steps: results.iter().map(|r| r.1).collect(),
        method,
        flow: flow.kind(),
        initial_h1_sq: f0.h1_norm_sq(),
    })
}

/// `(1/T) ∫₀^T ‖P_{≤M} S(t)(I − Π_e) f₀‖²_{L²} dt`, with `Π_e` the x-average
/// for shear flows (evolved exactly) and the streamline average for other
/// flows (evolved by the truncated exponential).
pub fn low_mode_time_average(
    flow: &Flow,
    f0: &FourierField,
    cut: LowModeCut,
    horizon: f64,
    quadrature_steps: usize,
) -> Result<f64> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("T", "horizon must be positive and finite"));
    }
    if quadrature_steps == 0 {
        return Err(invalid("quadrature_steps", "must be positive"));
    }
    let (orthogonal, method) = match flow.kind() {
        FlowKind::Shear => (f0.sub(&shear_e_projection(f0))?, GrowthMethod::ShearExact),
        FlowKind::Rest => return Err(invalid("flow", "every mode is invariant for a fluid at rest")),
        FlowKind::Cellular | FlowKind::Custom => {
            let grid = default_streamline_grid(f0.truncation());
            let proj = streamline_projection(flow, f0, DEFAULT_STREAMLINE_BINS, grid)?;
            (f0.sub(&proj.field)?, GrowthMethod::TruncatedExponential)
        }
    };
    if orthogonal.is_zero() {
        return Ok(0.0);
    }
    let evolver = InviscidEvolver::new(flow, &orthogonal, method)?;
    let h = horizon / quadrature_steps as f64;
    let samples = evolver.trajectory(h, quadrature_steps, horizon, Observable::LowModeL2Sq(cut))?;
    Ok(trapezoid(&samples, h) / horizon)
}

pub const DEFAULT_STREAMLINE_BINS: usize = 64;

/// Grid used for streamline averages at truncation `n`.
pub fn default_streamline_grid(n: usize) -> usize {
    (4 * n).max(256).next_power_of_two()
}

struct InviscidEvolver<'a> {
    f0: &'a FourierField,
    kind: EvolverKind<'a>,
}

enum EvolverKind<'a> {
    Truncated(OperatorMatrix),
    Shear(&'a ShearProfile),
}

/// Quantities tracked along an inviscid trajectory.
#[derive(Clone, Copy)]
enum Observable {
    H1NormSq,
    LowModeL2Sq(LowModeCut),
}

impl Observable {
    fn of(&self, f: &FourierField) -> f64 {
        match self {
            Observable::H1NormSq => f.h1_norm_sq(),
            Observable::LowModeL2Sq(cut) => f.project(*cut).l2_norm().powi(2),
        }
    }
}

impl<'a> InviscidEvolver<'a> {
    fn new(flow: &'a Flow, f0: &'a FourierField, method: GrowthMethod) -> Result<Self> {
        let kind = match method {
            GrowthMethod::TruncatedExponential => {
                EvolverKind::Truncated(generator(flow, 0.0, f0.truncation(), SobolevExponent::H1)?)
            }
            GrowthMethod::ShearExact => match flow.profile() {
                Some(p) => EvolverKind::Shear(p),
                None => return Err(invalid("method", "shear-exact evolution needs a shear flow")),
            },
        };
        Ok(Self { f0, kind })
    }

    /// `observable(S(jh) f₀)` for `j = 0..=steps`.
    fn trajectory(&self, h: f64, steps: usize, t_max: f64, observable: Observable) -> Result<Vec<f64>> {
        match &self.kind {
            EvolverKind::Truncated(a) => {
                let step = Propagator::new(a, h)?;
                let mut v: DVector<f64> = self.f0.coeffs().clone();
                let mut out = Vec::with_capacity(steps + 1);
                out.push(observable.of(self.f0));
                for _ in 0..steps {
                    v = step.apply_vector(&v);
                    out.push(observable.of(&FourierField::from_vector(self.f0.truncation(), v.clone())?));
                }
                Ok(out)
            }
            EvolverKind::Shear(profile) => {
                let y_grid = shear_y_grid(profile, self.f0, t_max);
                let evolver = ShearEvolution::new(profile, self.f0, y_grid)?;
                let low_truncation = match observable {
                    Observable::LowModeL2Sq(cut) => Some(cut_extent(cut).min(evolver.n_out)),
                    Observable::H1NormSq => None,
                };
                (0..=steps)
                    .into_par_iter()
                    .map(|j| {
                        let rows = evolver.rows(j as f64 * h);
                        Ok(match low_truncation {
                            None => evolver.h1_norm_sq(&rows),
                            Some(m) => observable.of(&evolver.field(&rows, m)?),
                        })
                    })
                    .collect()
            }
        }
    }
}

/// Largest `|k|_∞` a cut can keep.
fn cut_extent(cut: LowModeCut) -> usize {
    match cut {
        LowModeCut::Square(m) => m,
        LowModeCut::Radius(r2) => (r2.max(0) as f64).sqrt().floor() as usize,
        // the j-th Laplacian eigenvalue never exceeds j
        LowModeCut::EigenCount(j) => (j as f64).sqrt().ceil() as usize,
    }
    .max(1)
}

fn trapezoid(samples: &[f64], h: f64) -> f64 {
    match samples.len() {
        0 | 1 => 0.0,
        len => h * (samples[1..len - 1].iter().sum::<f64>() + 0.5 * (samples[0] + samples[len - 1])),
    }
}

/// y-grid resolving `e^{−i k1 u(y) t}` for all `t ≤ t_max`.
pub fn shear_y_grid(profile: &ShearProfile, f0: &FourierField, t_max: f64) -> usize {
    let n = f0.truncation();
    let k1_max = representatives(n)
        .iter()
        .enumerate()
        .filter(|(r, _)| f0.coeffs()[2 * r] != 0.0 || f0.coeffs()[2 * r + 1] != 0.0)
        .map(|(_, m)| m.k1)
        .max()
        .unwrap_or(0);
    let slope: f64 = profile
        .cos_coefficients()
        .iter()
        .zip(profile.sin_coefficients())
        .enumerate()
        .map(|(i, (a, b))| (i + 1) as f64 * (a.abs() + b.abs()))
        .sum();
    let spread = f64::from(k1_max) * slope * t_max.abs();
    let band = n as f64 + spread + 10.0 * spread.cbrt() + 16.0;
    ((4.0 * band).ceil() as usize).max(8 * n).next_power_of_two()
}

/// Exact inviscid shear evolution `f₀(x − u(y)t, y)`, multiplying each
/// x-harmonic of `f₀` by `e^{−i k1 u(y) t}` on a y-grid. The result has
/// truncation `y_grid/2 − 1`.
pub fn shear_exact_evolution(profile: &ShearProfile, f0: &FourierField, t: f64, y_grid: usize) -> Result<FourierField> {
    let evolver = ShearEvolution::new(profile, f0, y_grid)?;
    evolver.field(&evolver.rows(t), evolver.n_out)
}

struct ShearEvolution {
    n: usize,
    n_out: usize,
    y_grid: usize,
    /// y-profiles `g_{k1}(y_j)` for `k1 = 1..=n`
    profiles: Vec<Vec<Complex64>>,
    /// `u(y_j)`
    velocity: Vec<f64>,
    lattice: Vec<Complex64>,
}

impl ShearEvolution {
    fn new(profile: &ShearProfile, f0: &FourierField, y_grid: usize) -> Result<Self> {
        let n = f0.truncation();
        if y_grid < 8 * n.max(1) {
            return Err(Error::GridTooSmall { grid: y_grid, required: 8 * n.max(1) });
        }
        let side = 2 * n + 1;
        let n_i = n as i32;
        let lattice = f0.to_complex_lattice();
        let ifft = FftPlanner::<f64>::new().plan_fft_inverse(y_grid);
        let profiles = (1..=n_i)
            .map(|k1| {
                let mut g = vec![Complex64::new(0.0, 0.0); y_grid];
                for k2 in -n_i..=n_i {
                    g[k2.rem_euclid(y_grid as i32) as usize] =
                        lattice[((k1 + n_i) as usize) * side + (k2 + n_i) as usize];
                }
                ifft.process(&mut g);
                g
            })
            .collect();
        let velocity = (0..y_grid).map(|j| profile.value(2.0 * PI * j as f64 / y_grid as f64)).collect();
        Ok(Self { n, n_out: y_grid / 2 - 1, y_grid, profiles, velocity, lattice })
    }

    /// Complex coefficients of each harmonic `k1 = 1..=n` at time `t`, indexed
    /// by FFT position of `k2`. Harmonics absent from `f₀` stay empty.
    fn rows(&self, t: f64) -> Vec<Vec<Complex64>> {
        let fft = FftPlanner::<f64>::new().plan_fft_forward(self.y_grid);
        let scale = 1.0 / self.y_grid as f64;
        self.profiles
            .iter()
            .enumerate()
            .map(|(i, g)| {
                if g.iter().all(|c| c.norm_sqr() == 0.0) {
                    return Vec::new();
                }
                let k1 = (i + 1) as f64;
                let mut h: Vec<Complex64> =
                    g.iter().zip(&self.velocity).map(|(v, u)| v * Complex64::from_polar(scale, -k1 * u * t)).collect();
                fft.process(&mut h);
                h
            })
            .collect()
    }

    fn coefficient(&self, rows: &[Vec<Complex64>], k1: i32, k2: i32) -> Complex64 {
        let row = &rows[(k1 - 1) as usize];
        if row.is_empty() {
            Complex64::new(0.0, 0.0)
        } else {
            row[k2.rem_euclid(self.y_grid as i32) as usize]
        }
    }

    /// `‖S(t)f₀‖²_{H¹}` over `|k2| ≤ n_out`, without forming the field.
    fn h1_norm_sq(&self, rows: &[Vec<Complex64>]) -> f64 {
        let n_i = self.n as i32;
        let side_in = 2 * self.n + 1;
        let mut total = 0.0;
        for k2 in -n_i..=n_i {
            if k2 != 0 {
                let c = self.lattice[self.n * side_in + (k2 + n_i) as usize];
                total += f64::from(k2 * k2) * c.norm_sqr();
            }
        }
        let out_i = self.n_out as i32;
        for k1 in 1..=n_i {
            if rows[(k1 - 1) as usize].is_empty() {
                continue;
            }
            for k2 in -out_i..=out_i {
                let w = f64::from(k1 * k1 + k2 * k2);
                // the conjugate harmonic −k1 contributes equally
                total += 2.0 * w * self.coefficient(rows, k1, k2).norm_sqr();
            }
        }
        total
    }

    /// The evolved field restricted to truncation `m ≤ n_out`.
    fn field(&self, rows: &[Vec<Complex64>], m: usize) -> Result<FourierField> {
        let n_i = self.n as i32;
        let m_i = m as i32;
        let side_in = 2 * self.n + 1;
        let side = 2 * m + 1;
        let mut out = vec![Complex64::new(0.0, 0.0); side * side];
        let at_out = |k1: i32, k2: i32| ((k1 + m_i) as usize) * side + (k2 + m_i) as usize;
        for k2 in -n_i.min(m_i)..=n_i.min(m_i) {
            if k2 != 0 {
                out[at_out(0, k2)] = self.lattice[self.n * side_in + (k2 + n_i) as usize];
            }
        }
        for k1 in 1..=n_i.min(m_i) {
            for k2 in -m_i..=m_i {
                let c = self.coefficient(rows, k1, k2);
                out[at_out(k1, k2)] = c;
                out[at_out(-k1, -k2)] = c.conj();
            }
        }
        FourierField::from_complex_lattice(m, &out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::sin_x_sin_y;
    use crate::fourier::{ModeIndex, Parity};
    use crate::operators::advection_matrix;
    use approx::assert_relative_eq;

    fn mode(k1: i32, k2: i32) -> ModeIndex {
        ModeIndex::new(k1, k2).unwrap()
    }

    fn shear() -> Flow {
        Flow::shear(ShearProfile::sin_y()).unwrap()
    }

    #[test]
    fn shear_kernel_contains_x_independent_modes() {
        let report = spectrum(&advection_matrix(&shear(), 8).unwrap()).unwrap();
        assert!(report.kernel_dim >= 16);
        assert!(report.max_real_part < 1e-10);
        assert!(report.orthonormality_defect() < 1e-10);
    }

    #[test]
    fn frequencies_come_in_pairs() {
        let report = spectrum(&advection_matrix(&Flow::default_cellular(), 5).unwrap()).unwrap();
        let f = &report.frequencies;
        let len = f.len();
        for i in 0..len {
            assert_relative_eq!(f[i], -f[len - 1 - i], epsilon = 1e-10);
        }
        assert!(report.max_residual < 1e-10);
        assert!(report.to_csv().starts_with("index,lambda\n0,"));
    }

    #[test]
    fn spectrum_rejects_generators() {
        let a = generator(&shear(), 0.1, 3, SobolevExponent::H1).unwrap();
        assert!(matches!(spectrum(&a), Err(Error::WrongOperatorKind { .. })));
    }

    #[test]
    fn shear_projection_examples() {
        let f = FourierField::from_entries(4, &[(mode(0, 2), Parity::Cos, 1.0)]).unwrap();
        assert_eq!(shear_e_projection(&f), f);
        let g = FourierField::from_entries(4, &[(mode(3, 1), Parity::Sin, 1.0)]).unwrap();
        assert!(shear_e_projection(&g).is_zero());
    }

    #[test]
    fn streamline_projection_fixes_functions_of_psi() {
        let flow = Flow::default_cellular();
        let psi = sin_x_sin_y().resize(4);
        let p = streamline_projection(&flow, &psi, 64, 256).unwrap();
        let dev = p.field.sub(&psi).unwrap().l2_norm() / psi.l2_norm();
        assert!(dev <= 0.05, "{dev}");
        assert!(p.idempotence_defect < 0.05);
        assert!(streamline_projection(&flow, &FourierField::zeros(4), 64, 256).unwrap().field.is_zero());
        assert!(streamline_projection(&flow, &psi, 1, 256).is_err());
        assert!(streamline_projection(&shear(), &psi, 8, 256).is_err());
    }

    #[test]
    fn streamline_projection_kills_antisymmetric_fields() {
        // cos x changes sign under (x, y) → (x + π, y + π), which preserves ψ
        let flow = Flow::default_cellular();
        let f = FourierField::from_entries(4, &[(mode(1, 0), Parity::Cos, 1.0)]).unwrap();
        let p = streamline_projection(&flow, &f, 64, 256).unwrap();
        assert!(p.field.l2_norm() < 1e-2, "{}", p.field.l2_norm());
    }

    #[test]
    fn shear_evolution_examples() {
        let profile = ShearProfile::sin_y();
        let f0 =
            FourierField::from_entries(2, &[(mode(1, 0), Parity::Cos, 1.0), (mode(0, 1), Parity::Sin, 0.5)]).unwrap();
        let at0 = shear_exact_evolution(&profile, &f0, 0.0, 64).unwrap();
        assert_relative_eq!(at0.resize(2).coeffs(), f0.coeffs(), epsilon = 1e-14);
        let at2 = shear_exact_evolution(&profile, &f0, 2.0, 64).unwrap();
        assert_eq!(at2.coefficient(mode(0, 1), Parity::Sin), 0.5);
        assert_relative_eq!(at2.l2_norm(), f0.l2_norm(), epsilon = 1e-12);
        let cos_x = FourierField::from_entries(1, &[(mode(1, 0), Parity::Cos, 1.0)]).unwrap();
        let h1 = shear_exact_evolution(&profile, &cos_x, 2.0, 64).unwrap().h1_norm_sq();
        assert_relative_eq!(h1, 3.0, epsilon = 1e-12);
        assert!(shear_exact_evolution(&profile, &cos_x, 1.0, 4).is_err());
    }

    #[test]
    fn kernel_mode_has_flat_growth() {
        let f0 = FourierField::from_entries(3, &[(mode(0, 2), Parity::Cos, 1.0)]).unwrap();
        for method in [GrowthMethod::ShearExact, GrowthMethod::TruncatedExponential] {
            let curve = h1_growth_average(&shear(), &f0, &[1.0, 5.0], method, 100).unwrap();
            for g in &curve.values {
                assert_relative_eq!(*g, 4.0, epsilon = 1e-10);
            }
        }
        assert!(h1_growth_average(&shear(), &FourierField::zeros(3), &[1.0], GrowthMethod::ShearExact, 10).is_err());
        assert!(h1_growth_average(&Flow::default_cellular(), &f0, &[1.0], GrowthMethod::ShearExact, 10).is_err());
    }

    #[test]
    fn low_mode_average_vanishes_on_e() {
        let f0 = FourierField::from_entries(3, &[(mode(0, 1), Parity::Cos, 1.0)]).unwrap();
        assert_eq!(low_mode_time_average(&shear(), &f0, LowModeCut::Radius(4), 10.0, 100).unwrap(), 0.0);
    }

    #[test]
    fn trapezoid_integrates_lines_exactly() {
        let samples: Vec<f64> = (0..=10).map(|i| 2.0 * i as f64 * 0.1 + 1.0).collect();
        assert_relative_eq!(trapezoid(&samples, 0.1), 2.0, epsilon = 1e-14);
    }
}
