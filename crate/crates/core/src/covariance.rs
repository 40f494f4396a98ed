//! Stationary covariances of the truncated stochastic system
//! `df = A f dt + √ν Ψ dW` with `A = −B + νD`.
//!
//! `Q_ν` solves `A Q + Q Aᵀ + ν ΨΨᵀ = 0`, equivalently
//! `Q_ν = ν ∫₀^∞ e^{tA} ΨΨᵀ e^{tAᵀ} dt`. Noise acts independently on every
//! real coefficient, so `Ψ` is diagonal and `ΨΨᵀ = diag(ψ²)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::flows::Flow;
use crate::format_f64;
use crate::fourier::{basis, dimension, FourierField, ModeIndex, Parity};
use crate::linalg;
use crate::operators::{OperatorKind, OperatorMatrix, Propagator};
use crate::spectral::StreamlineBinning;

/// Default geometric ν-ladder for vanishing-diffusivity trend runs.
pub const DEFAULT_NU_LADDER: [f64; 5] = [0.2, 0.1, 0.05, 0.025, 0.0125];

/// Relative residual accepted from the Lyapunov solver.
pub const LYAPUNOV_RESIDUAL_TOL: f64 = 1e-10;

/// Per-coefficient forcing amplitudes `ψ` on the canonical ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    n: usize,
    amplitudes: DVector<f64>,
}

impl NoiseSpec {
    pub fn new(n: usize, amplitudes: DVector<f64>) -> Result<Self> {
        if amplitudes.len() != dimension(n) {
            return Err(Error::DimensionMismatch { expected: dimension(n), found: amplitudes.len() });
        }
        if amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(invalid("psi", "forcing amplitudes must be finite"));
        }
        Ok(Self { n, amplitudes })
    }

    pub fn zero(n: usize) -> Self {
        Self { n, amplitudes: DVector::zeros(dimension(n)) }
    }

    /// Amplitudes given per `(mode, parity)`, as for [`FourierField::from_entries`].
    pub fn from_entries(n: usize, entries: &[(ModeIndex, Parity, f64)]) -> Result<Self> {
        let f = FourierField::from_entries(n, entries)?;
        // the sign folding of sine entries is irrelevant for amplitudes
        Self::new(n, f.into_vector().abs())
    }

    /// Unit amplitude on every coefficient with `|k|² ≤ r2`.
    pub fn isotropic(n: usize, r2: i64) -> Self {
        let amplitudes = basis(n).iter().map(|(m, _)| if m.norm_sq() <= r2 { 1.0 } else { 0.0 }).collect::<Vec<_>>();
        Self { n, amplitudes: DVector::from_vec(amplitudes) }
    }

    pub fn truncation(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &DVector<f64> {
        &self.amplitudes
    }

    /// `‖Ψ‖² = Σ ψ²`.
    pub fn intensity(&self) -> f64 {
        self.amplitudes.norm_squared()
    }

    /// Indices of forced coefficients.
    pub fn support(&self) -> Vec<usize> {
        (0..self.amplitudes.len()).filter(|&i| self.amplitudes[i] != 0.0).collect()
    }

    /// `ΨΨᵀ = diag(ψ²)`.
    pub fn outer(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.amplitudes.map(|a| a * a))
    }

    /// Re-expresses the noise at another truncation (dropping modes outside it).
    pub fn resize(&self, n: usize) -> NoiseSpec {
        let f = FourierField::from_vector(self.n, self.amplitudes.clone()).expect("consistent length");
        NoiseSpec { n, amplitudes: f.resize(n).into_vector() }
    }

    /// Flat records, same layout as field serialization.
    pub fn to_records(&self) -> String {
        FourierField::from_vector(self.n, self.amplitudes.clone()).expect("consistent length").to_records()
    }

    pub fn from_records(text: &str) -> Result<NoiseSpec> {
        let f = FourierField::from_records(text)?;
        let n = f.truncation();
        NoiseSpec::new(n, f.into_vector().abs())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Lyapunov { nu: f64, residual: f64 },
    Quadrature { nu: f64, horizon: f64, step: f64 },
    ShearLimit,
    Empirical { samples: usize },
}

impl Provenance {
    fn describe(&self) -> String {
        match self {
            Provenance::Lyapunov { nu, residual } => {
                format!("lyapunov nu={} residual={}", format_f64(*nu), format_f64(*residual))
            }
            Provenance::Quadrature { nu, horizon, step } => {
                format!("quadrature nu={} T={} h={}", format_f64(*nu), format_f64(*horizon), format_f64(*step))
            }
            Provenance::ShearLimit => "shear-limit".into(),
            Provenance::Empirical { samples } => format!("empirical samples={samples}"),
        }
    }

    fn parse(text: &str) -> Result<Provenance> {
        let mut parts = text.split_whitespace();
        let tag = parts.next().unwrap_or_default();
        let mut fields = std::collections::HashMap::new();
        for p in parts {
            let (k, v) = p.split_once('=').ok_or_else(|| Error::Parse(format!("bad provenance field `{p}`")))?;
            fields.insert(k, v);
        }
        let num = |k: &str| -> Result<f64> {
            fields
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse(format!("provenance `{tag}` lacks `{k}`")))
        };
        match tag {
            "lyapunov" => Ok(Provenance::Lyapunov { nu: num("nu")?, residual: num("residual")? }),
            "quadrature" => Ok(Provenance::Quadrature { nu: num("nu")?, horizon: num("T")?, step: num("h")? }),
            "shear-limit" => Ok(Provenance::ShearLimit),
            "empirical" => Ok(Provenance::Empirical { samples: num("samples")? as usize }),
            other => Err(Error::Parse(format!("unknown provenance `{other}`"))),
        }
    }
}

/// Symmetric positive semidefinite covariance on the truncated basis.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceOperator {
    n: usize,
    matrix: DMatrix<f64>,
    provenance: Provenance,
}

impl CovarianceOperator {
    pub fn new(n: usize, matrix: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        if matrix.nrows() != dimension(n) || matrix.ncols() != dimension(n) {
            return Err(Error::DimensionMismatch { expected: dimension(n), found: matrix.nrows() });
        }
        Ok(Self { n, matrix, provenance })
    }

    pub fn truncation(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::symmetric_eigenvalues(&self.matrix)
    }

    pub fn operator_norm(&self) -> f64 {
        linalg::symmetric_norm(&self.matrix)
    }

    /// `max |Q − Qᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).abs().max()
    }

    /// Dense text export: header lines, then one row per line.
    pub fn to_text(&self) -> String {
        let dim = self.matrix.nrows();
        let mut out = format!("# covariance\nN {}\nprovenance {}\ndim {dim}\n", self.n, self.provenance.describe());
        for i in 0..dim {
            let row: Vec<String> = (0..dim).map(|j| format_f64(self.matrix[(i, j)])).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<CovarianceOperator> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let mut header = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| Error::Parse(format!("missing `{key}` line")))?;
            line.strip_prefix(key)
                .map(|v| v.trim().to_string())
                .ok_or_else(|| Error::Parse(format!("expected `{key}`, got `{line}`")))
        };
        let n: usize = header("N ")?.parse().map_err(|_| Error::Parse("bad N".into()))?;
        let provenance = Provenance::parse(&header("provenance ")?)?;
        let dim: usize = header("dim ")?.parse().map_err(|_| Error::Parse("bad dim".into()))?;
        let mut values = Vec::with_capacity(dim * dim);
        for line in lines {
            for v in line.split_whitespace() {
                values.push(v.parse::<f64>().map_err(|_| Error::Parse(format!("bad entry `{v}`")))?);
            }
        }
        if values.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, found: values.len() });
        }
        CovarianceOperator::new(n, DMatrix::from_row_slice(dim, dim, &values), provenance)
    }

    /// CSV `index,eigenvalue`, ascending.
    pub fn eigen_summary_csv(&self) -> String {
        let mut out = String::from("index,eigenvalue\n");
        for (i, l) in self.eigenvalues().iter().enumerate() {
            out.push_str(&format!("{i},{}\n", format_f64(*l)));
        }
        out
    }
}

fn diffusivity(a: &OperatorMatrix) -> Result<f64> {
    if a.kind() != OperatorKind::Generator {
        return Err(Error::WrongOperatorKind { expected: "generator", found: a.kind().as_str() });
    }
    match a.nu() {
        Some(nu) if nu > 0.0 => Ok(nu),
        _ => Err(invalid("nu", "no stationary covariance without dissipation (ν = 0)")),
    }
}

fn check_noise(a: &OperatorMatrix, noise: &NoiseSpec) -> Result<()> {
    if noise.truncation() != a.truncation() {
        return Err(Error::TruncationMismatch { expected: a.truncation(), found: noise.truncation() });
    }
    Ok(())
}

/// Exact stationary covariance from `A Q + Q Aᵀ + ν ΨΨᵀ = 0`, solved by
/// Bartels–Stewart on each invariant block of `A`.
pub fn lyapunov_covariance(a: &OperatorMatrix, noise: &NoiseSpec) -> Result<CovarianceOperator> {
    let nu = diffusivity(a)?;
    check_noise(a, noise)?;
    let dim = a.dim();
    let psi2 = noise.amplitudes().map(|p| p * p);
    let am = a.matrix();
    let solved: Vec<(Vec<usize>, DMatrix<f64>, f64)> = a
        .components()
        .into_par_iter()
        .filter(|idx| idx.iter().any(|&i| psi2[i] != 0.0))
        .map(|idx| {
            let block = linalg::submatrix(am, &idx);
            let rhs = DMatrix::from_diagonal(&DVector::from_fn(idx.len(), |i, _| -nu * psi2[idx[i]]));
            let q = linalg::solve_lyapunov(&block, &rhs)?;
            let res = (&block * &q + &q * block.transpose() - &rhs).norm_squared();
            Ok((idx, q, res))
        })
        .collect::<Result<_>>()?;
    let mut matrix = DMatrix::zeros(dim, dim);
    let mut residual_sq = 0.0;
    for (idx, q, res) in &solved {
        linalg::scatter_block(&mut matrix, idx, q);
        residual_sq += res;
    }
    let residual = residual_sq.sqrt();
    let bound = LYAPUNOV_RESIDUAL_TOL * (am.norm() * matrix.norm() + nu * noise.intensity());
    if residual > bound {
        return Err(Error::Solver { what: format!("Lyapunov residual exceeds {bound:e}"), residual });
    }
    CovarianceOperator::new(a.truncation(), matrix, Provenance::Lyapunov { nu, residual })
}

/// Newton–Cotes rule for the time quadrature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuadratureRule {
    Trapezoid,
    /// Composite Simpson; needs an even number of steps.
    Simpson,
}

#[derive(Clone, Debug)]
pub struct QuadratureCovariance {
    pub covariance: CovarianceOperator,
    /// Bound on the neglected tail `ν ∫_T^∞`: `e^{−2νλ₁T} ‖Ψ‖² / (2λ₁)`.
    pub tail_estimate: f64,
}

/// `ν Σ_j w_j e^{t_j A} ΨΨᵀ e^{t_j Aᵀ}` on `t_j = j h ∈ [0, T]`.
pub fn covariance_by_quadrature(
    a: &OperatorMatrix,
    noise: &NoiseSpec,
    horizon: f64,
    step: f64,
    rule: QuadratureRule,
) -> Result<QuadratureCovariance> {
    let nu = diffusivity(a)?;
    check_noise(a, noise)?;
    if !(step > 0.0 && horizon > 0.0) {
        return Err(invalid("h", "horizon and step must be positive"));
    }
    let ratio = horizon / step;
    let steps = ratio.round() as usize;
    if (ratio - steps as f64).abs() > 1e-9 * ratio.max(1.0) || steps == 0 {
        return Err(invalid("h", format!("T/h = {ratio} is not an integer")));
    }
    if rule == QuadratureRule::Simpson && steps % 2 == 1 {
        return Err(invalid("h", "Simpson's rule needs an even number of steps"));
    }
    let dim = a.dim();
    let support = noise.support();
    let mut columns = DMatrix::zeros(dim, support.len());
    for (c, &i) in support.iter().enumerate() {
        columns[(i, c)] = noise.amplitudes()[i];
    }
    let propagator = Propagator::new(a, step)?;
    let mut sum = DMatrix::<f64>::zeros(dim, dim);
    for j in 0..=steps {
        let w = match rule {
            QuadratureRule::Trapezoid => {
                if j == 0 || j == steps {
                    0.5
                } else {
                    1.0
                }
            }
            QuadratureRule::Simpson => {
                if j == 0 || j == steps {
                    1.0 / 3.0
                } else if j % 2 == 1 {
                    4.0 / 3.0
                } else {
                    2.0 / 3.0
                }
            }
        };
        sum.gemm(w, &columns, &columns.transpose(), 1.0);
        if j < steps {
            columns = propagator.apply_columns(&columns);
        }
    }
    sum *= nu * step;
    let sym = (&sum + sum.transpose()) * 0.5;
    // λ₁ = 1 on T²
    let tail_estimate = (-2.0 * nu * horizon).exp() * noise.intensity() / 2.0;
    Ok(QuadratureCovariance {
        covariance: CovarianceOperator::new(a.truncation(), sym, Provenance::Quadrature { nu, horizon, step })?,
        tail_estimate,
    })
}

/// Vanishing-diffusivity limit for non-degenerate shear flows: diagonal with
/// `ψ²/(2j²)` on the coefficients of `(0, j)`, zero elsewhere.
pub fn shear_limit_covariance(noise: &NoiseSpec) -> CovarianceOperator {
    let n = noise.truncation();
    let diag: Vec<f64> = basis(n)
        .iter()
        .zip(noise.amplitudes().iter())
        .map(|((m, _), &psi)| if m.k1 == 0 { psi * psi / (2.0 * m.norm_sq() as f64) } else { 0.0 })
        .collect();
    CovarianceOperator {
        n,
        matrix: DMatrix::from_diagonal(&DVector::from_vec(diag)),
        provenance: Provenance::ShearLimit,
    }
}

/// `tr(ΛQ)` with `Λ = diag(|k|²)`: the stationary mean of `‖f‖²_{H¹}`.
pub fn h1_trace(q: &CovarianceOperator) -> f64 {
    basis(q.n).iter().enumerate().map(|(i, (m, _))| m.norm_sq() as f64 * q.matrix[(i, i)]).sum()
}

/// Spectral norm of the principal submatrix on coefficients accepted by
/// `selector`.
pub fn block_operator_norm(q: &CovarianceOperator, selector: impl Fn(ModeIndex, Parity) -> bool) -> f64 {
    let idx: Vec<usize> =
        basis(q.n).into_iter().enumerate().filter(|(_, (m, p))| selector(*m, *p)).map(|(i, _)| i).collect();
    linalg::symmetric_norm(&linalg::submatrix(&q.matrix, &idx))
}

/// Operator norm `‖Q1 − Q2‖_{L²→L²}`.
pub fn covariance_distance(q1: &CovarianceOperator, q2: &CovarianceOperator) -> Result<f64> {
    if q1.n != q2.n {
        return Err(Error::DimensionMismatch { expected: q1.matrix.nrows(), found: q2.matrix.nrows() });
    }
    Ok(linalg::symmetric_norm(&(&q1.matrix - &q2.matrix)))
}

/// Largest `‖v − Pv‖/‖v‖` over the top eigenspace of `Q` (eigenvalues within
/// a relative 1e-8 of the largest), with `P` the streamline average.
pub fn dominant_streamline_residual(q: &CovarianceOperator, flow: &Flow, bins: usize, grid: usize) -> Result<f64> {
    let binning = StreamlineBinning::new(flow, q.n, bins, grid)?;
    let eig = q.matrix.clone().symmetric_eigen();
    let top = eig.eigenvalues.max();
    let mut worst: f64 = 0.0;
    for k in 0..eig.eigenvalues.len() {
        if eig.eigenvalues[k] < top * (1.0 - 1e-8) {
            continue;
        }
        let v = FourierField::from_vector(q.n, eig.eigenvectors.column(k).into_owned())?;
        worst = worst.max(v.sub(&binning.project(&v)?)?.l2_norm() / v.l2_norm());
    }
    Ok(worst)
}

/// Least-squares fit `value ≈ c ν^p` on log–log axes; returns `(p, c)`.
/// Points with nonpositive values are skipped.
pub fn power_law_fit(nus: &[f64], values: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> =
        nus.iter().zip(values).filter(|(n, v)| **n > 0.0 && **v > 0.0).map(|(n, v)| (n.ln(), v.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, (my - slope * mx).exp()))
}
