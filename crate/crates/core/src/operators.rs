//! Galerkin matrices of advection, (fractional) dissipation and the viscous
//! generator on the canonical real basis, and the semigroups they generate.
//!
//! Sign conventions: `B` is the matrix of `u·∇`, so inviscid transport reads
//! `ḟ = −Bf`; `D` is the matrix of `−(−Δ)^s`; the generator is `A = −B + νD`.

use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::flows::Flow;
use crate::format_f64;
use crate::fourier::{
    basis, coefficient_index, dimension, lattice_offset, representatives, FourierField, ModeIndex, Parity,
    SobolevExponent,
};
use crate::linalg::{self, DENSE_CAP};

/// Relative tolerance of Krylov exponential actions.
pub const KRYLOV_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    Advection,
    Dissipation,
    Generator,
}

impl OperatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OperatorKind::Advection => "advection",
            OperatorKind::Dissipation => "dissipation",
            OperatorKind::Generator => "generator",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    n: usize,
    kind: OperatorKind,
    matrix: DMatrix<f64>,
    nu: Option<f64>,
    s: SobolevExponent,
}

impl OperatorMatrix {
    pub fn truncation(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Diffusivity of a generator.
    pub fn nu(&self) -> Option<f64> {
        self.nu
    }

    pub fn sobolev_order(&self) -> SobolevExponent {
        self.s
    }

    /// Whether the generated semigroup is strictly dissipative, which forbids
    /// negative times.
    pub fn is_dissipative(&self) -> bool {
        match self.kind {
            OperatorKind::Advection => false,
            OperatorKind::Dissipation => true,
            OperatorKind::Generator => self.nu.is_some_and(|nu| nu > 0.0),
        }
    }

    /// Invariant coordinate blocks: connected components of the coupling graph.
    pub fn components(&self) -> Vec<Vec<usize>> {
        linalg::components(&self.matrix)
    }

    pub fn apply(&self, f: &FourierField) -> Result<FourierField> {
        self.check_field(f)?;
        FourierField::from_vector(self.n, &self.matrix * f.coeffs())
    }

    fn check_field(&self, f: &FourierField) -> Result<()> {
        if f.truncation() != self.n {
            return Err(Error::TruncationMismatch { expected: self.n, found: f.truncation() });
        }
        Ok(())
    }

    /// Nonzero entries as `row col value` lines after a header.
    pub fn to_triplets(&self) -> String {
        let mut out = format!("# {} N={} dim={}\n", self.kind.as_str(), self.n, self.dim());
        for j in 0..self.dim() {
            for i in 0..self.dim() {
                let v = self.matrix[(i, j)];
                if v != 0.0 {
                    out.push_str(&format!("{i} {j} {}\n", format_f64(v)));
                }
            }
        }
        out
    }
}

/// `B[l, m] = ⟨basis_l, u·∇ basis_m⟩` by exact convolution of the finite
/// velocity series; modes pushed outside the truncation are dropped.
pub fn advection_matrix(flow: &Flow, n: usize) -> Result<OperatorMatrix> {
    if flow.max_wavenumber() > 2 * n {
        return Err(invalid("N", format!("velocity wavenumber {} exceeds 2N = {}", flow.max_wavenumber(), 2 * n)));
    }
    let dim = dimension(n);
    let side = 2 * n + 1;
    let velocity = flow.velocity_coefficients();
    let n_i = n as i32;
    let inv_sqrt2 = 1.0 / SQRT_2;
    let i_unit = Complex64::new(0.0, 1.0);
    let mut matrix = DMatrix::<f64>::zeros(dim, dim);
    let mut buffer = vec![Complex64::new(0.0, 0.0); side * side];
    let mut touched: Vec<ModeIndex> = Vec::new();
    for (col, (mode, parity)) in basis(n).into_iter().enumerate() {
        let g = match parity {
            Parity::Cos => Complex64::new(inv_sqrt2, 0.0),
            Parity::Sin => Complex64::new(0.0, -inv_sqrt2),
        };
        for (q, gq) in [(mode, g), (mode.neg(), g.conj())] {
            for v in velocity {
                let target = ModeIndex { k1: q.k1 + v.mode.k1, k2: q.k2 + v.mode.k2 };
                if target.k1.abs() > n_i || target.k2.abs() > n_i || (target.k1 == 0 && target.k2 == 0) {
                    continue;
                }
                let q_dot_u = v.amplitude[0] * f64::from(q.k1) + v.amplitude[1] * f64::from(q.k2);
                buffer[lattice_offset(n, target)] += i_unit * q_dot_u * gq;
                touched.push(target);
            }
        }
        for target in touched.drain(..) {
            let off = lattice_offset(n, target);
            let c = std::mem::take(&mut buffer[off]);
            if target.is_representative() && c != Complex64::new(0.0, 0.0) {
                let row = coefficient_index(n, target, Parity::Cos);
                matrix[(row, col)] = SQRT_2 * c.re;
                matrix[(row + 1, col)] = -SQRT_2 * c.im;
            }
        }
    }
    Ok(OperatorMatrix { n, kind: OperatorKind::Advection, matrix, nu: None, s: SobolevExponent::H1 })
}

/// Diagonal matrix with entry `−|k|^{2s}` per coefficient.
pub fn dissipation_matrix(n: usize, s: SobolevExponent) -> Result<OperatorMatrix> {
    if s.value() <= 0.0 {
        return Err(invalid("s", "dissipation order must be positive"));
    }
    let diag: Vec<f64> = representatives(n)
        .iter()
        .flat_map(|m| {
            let v = -(m.norm_sq() as f64).powf(s.value());
            [v, v]
        })
        .collect();
    Ok(OperatorMatrix {
        n,
        kind: OperatorKind::Dissipation,
        matrix: DMatrix::from_diagonal(&DVector::from_vec(diag)),
        nu: None,
        s,
    })
}

/// `A = −B + νD`; `ν = 0` gives the inviscid transport generator.
pub fn generator(flow: &Flow, nu: f64, n: usize, s: SobolevExponent) -> Result<OperatorMatrix> {
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(invalid("nu", format!("diffusivity must be finite and nonnegative, got {nu}")));
    }
    let b = advection_matrix(flow, n)?;
    let d = dissipation_matrix(n, s)?;
    let matrix = -b.matrix + d.matrix * nu;
    Ok(OperatorMatrix { n, kind: OperatorKind::Generator, matrix, nu: Some(nu), s })
}

/// Generator of pure (fractional) diffusion, `A = νD`.
pub fn heat_generator(nu: f64, n: usize, s: SobolevExponent) -> Result<OperatorMatrix> {
    let d = dissipation_matrix(n, s)?;
    Ok(OperatorMatrix { n, kind: OperatorKind::Generator, matrix: d.matrix * nu, nu: Some(nu), s })
}

enum PropagatorBlock {
    Dense { idx: Vec<usize>, exp: DMatrix<f64> },
    Krylov { idx: Vec<usize>, generator: DMatrix<f64>, t: f64 },
}

/// `exp(tA)` factored over the invariant blocks of `A`.
pub struct Propagator {
    n: usize,
    dim: usize,
    blocks: Vec<PropagatorBlock>,
}

impl Propagator {
    pub fn new(a: &OperatorMatrix, t: f64) -> Result<Propagator> {
        if !t.is_finite() {
            return Err(invalid("t", "time must be finite"));
        }
        if t < 0.0 && a.is_dissipative() {
            return Err(invalid("t", "negative time is only defined for the inviscid group"));
        }
        let blocks = a
            .components()
            .into_par_iter()
            .map(|idx| {
                let block = linalg::submatrix(&a.matrix, &idx);
                if idx.len() > DENSE_CAP {
                    PropagatorBlock::Krylov { idx, generator: block, t }
                } else {
                    PropagatorBlock::Dense { exp: linalg::expm(&(block * t)), idx }
                }
            })
            .collect();
        Ok(Propagator { n: a.n, dim: a.dim(), blocks })
    }

    pub fn apply_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for block in &self.blocks {
            let (idx, result) = match block {
                PropagatorBlock::Dense { idx, exp } => {
                    let local = DVector::from_fn(idx.len(), |i, _| v[idx[i]]);
                    (idx, exp * local)
                }
                PropagatorBlock::Krylov { idx, generator, t } => {
                    let local = DVector::from_fn(idx.len(), |i, _| v[idx[i]]);
                    (idx, linalg::expm_multiply(generator, *t, &local, KRYLOV_TOL))
                }
            };
            for (i, &g) in idx.iter().enumerate() {
                out[g] = result[i];
            }
        }
        out
    }

    pub fn apply(&self, f: &FourierField) -> Result<FourierField> {
        if f.truncation() != self.n {
            return Err(Error::TruncationMismatch { expected: self.n, found: f.truncation() });
        }
        FourierField::from_vector(self.n, self.apply_vector(f.coeffs()))
    }

    /// Applies the propagator to every column of `m`.
    pub fn apply_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for j in 0..m.ncols() {
            out.set_column(j, &self.apply_vector(&m.column(j).into_owned()));
        }
        out
    }

    /// `‖exp(tA)‖_{L²→L²}`, the largest singular value over all blocks.
    pub fn norm(&self) -> f64 {
        self.blocks
            .par_iter()
            .map(|block| match block {
                PropagatorBlock::Dense { exp, .. } => linalg::spectral_norm(exp),
                PropagatorBlock::Krylov { generator, t, .. } => {
                    let gt = generator.transpose();
                    let n = generator.nrows();
                    linalg::lanczos_max_eigenvalue(
                        |v| {
                            let forward = linalg::expm_multiply(generator, *t, v, KRYLOV_TOL);
                            linalg::expm_multiply(&gt, *t, &forward, KRYLOV_TOL)
                        },
                        n,
                        1e-10,
                    )
                    .max(0.0)
                    .sqrt()
                }
            })
            .reduce(|| 0.0, f64::max)
    }

    /// The full dense matrix `exp(tA)`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        self.apply_columns(&DMatrix::identity(self.dim, self.dim))
    }
}

/// `exp(tA) f`.
pub fn semigroup_apply(a: &OperatorMatrix, t: f64, f: &FourierField) -> Result<FourierField> {
    a.check_field(f)?;
    Propagator::new(a, t)?.apply(f)
}

/// `‖exp(tA)‖_{L²→L²}` for `t ≥ 0`.
pub fn semigroup_norm(a: &OperatorMatrix, t: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(invalid("t", "semigroup norm requires t ≥ 0"));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    Ok(Propagator::new(a, t)?.norm())
}

/// Applies `exp(tA)` for a batch of `(t, f)` pairs in parallel.
pub fn semigroup_apply_batch(a: &OperatorMatrix, jobs: &[(f64, FourierField)]) -> Result<Vec<FourierField>> {
    jobs.par_iter().map(|(t, f)| semigroup_apply(a, *t, f)).collect()
}
