//! Divergence-free velocity fields built from finite trigonometric series.
//!
//! Velocities are stored as plain Fourier coefficients `û_k ∈ ℂ²`, so that
//! `u(x) = Σ_k û_k e^{ik·x}`. Shear flows are `(u(y), 0)`; cellular and custom
//! flows are `∇⊥ψ = (−∂_yψ, ∂_xψ)` for a streamfunction given as a
//! [`FourierField`].

use std::f64::consts::{PI, SQRT_2};

use rustfft::num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::fourier::{representatives, FourierField, ModeIndex, Parity};

/// Points used to count the zeros of `u′` for shear profiles.
pub const ZERO_COUNT_SAMPLES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowKind {
    Shear,
    Cellular,
    Custom,
    /// `u = 0`.
    Rest,
}

impl FlowKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FlowKind::Shear => "shear",
            FlowKind::Cellular => "cellular",
            FlowKind::Custom => "custom",
            FlowKind::Rest => "rest",
        }
    }
}

/// `u(y) = Σ_{j=1}^{M} (α_j cos(jy) + β_j sin(jy))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShearProfile {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl ShearProfile {
    /// `cos[j-1] = α_j`, `sin[j-1] = β_j`; the shorter list is zero-padded.
    pub fn new(mut cos: Vec<f64>, mut sin: Vec<f64>) -> Self {
        let len = cos.len().max(sin.len());
        cos.resize(len, 0.0);
        sin.resize(len, 0.0);
        Self { cos, sin }
    }

    /// Builds a profile from `(j, α_j, β_j)` terms.
    pub fn from_terms(terms: &[(usize, f64, f64)]) -> Result<Self> {
        let max_j = terms.iter().map(|t| t.0).max().unwrap_or(0);
        let mut cos = vec![0.0; max_j];
        let mut sin = vec![0.0; max_j];
        for &(j, a, b) in terms {
            if j == 0 {
                return Err(invalid("profile", "shear harmonics start at j = 1"));
            }
            cos[j - 1] += a;
            sin[j - 1] += b;
        }
        Ok(Self { cos, sin })
    }

    /// `u(y) = sin y`.
    pub fn sin_y() -> Self {
        Self::new(vec![0.0], vec![1.0])
    }

    pub fn cos_coefficients(&self) -> &[f64] {
        &self.cos
    }

    pub fn sin_coefficients(&self) -> &[f64] {
        &self.sin
    }

    pub fn is_zero(&self) -> bool {
        self.cos.iter().chain(&self.sin).all(|&c| c == 0.0)
    }

    /// Highest harmonic with a nonzero coefficient.
    pub fn max_wavenumber(&self) -> usize {
        (0..self.cos.len()).rev().find(|&i| self.cos[i] != 0.0 || self.sin[i] != 0.0).map_or(0, |i| i + 1)
    }

    pub fn value(&self, y: f64) -> f64 {
        self.terms().map(|(j, a, b)| a * (j * y).cos() + b * (j * y).sin()).sum()
    }

    pub fn derivative(&self, y: f64) -> f64 {
        self.terms().map(|(j, a, b)| j * (b * (j * y).cos() - a * (j * y).sin())).sum()
    }

    fn terms(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.cos.iter().zip(&self.sin).enumerate().map(|(i, (&a, &b))| ((i + 1) as f64, a, b))
    }

    /// Zeros of `u′` on `[0, 2π)` found from sign changes on a periodic grid.
    pub fn derivative_zero_count(&self, samples: usize) -> usize {
        let d: Vec<f64> = (0..samples).map(|i| self.derivative(2.0 * PI * i as f64 / samples as f64)).collect();
        (0..samples)
            .filter(|&i| {
                let (a, b) = (d[i], d[(i + 1) % samples]);
                a == 0.0 || a * b < 0.0
            })
            .count()
    }
}

/// One Fourier mode of the velocity: `û_k` for both components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocityMode {
    pub mode: ModeIndex,
    pub amplitude: [Complex64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    kind: FlowKind,
    profile: Option<ShearProfile>,
    stream: Option<FourierField>,
    velocity: Vec<VelocityMode>,
    lipschitz: f64,
    max_wavenumber: usize,
    derivative_zeros: Option<usize>,
}

impl Flow {
    /// Shear flow `u(x, y) = (u(y), 0)`.
    pub fn shear(profile: ShearProfile) -> Result<Flow> {
        if profile.is_zero() {
            return Err(invalid("profile", "shear profile is identically zero"));
        }
        let mut velocity = Vec::new();
        for (i, (&a, &b)) in profile.cos.iter().zip(&profile.sin).enumerate() {
            if a == 0.0 && b == 0.0 {
                continue;
            }
            let j = (i + 1) as i32;
            let zero = Complex64::new(0.0, 0.0);
            let plus = Complex64::new(a, -b) / 2.0;
            velocity.push(VelocityMode { mode: ModeIndex { k1: 0, k2: j }, amplitude: [plus, zero] });
            velocity.push(VelocityMode { mode: ModeIndex { k1: 0, k2: -j }, amplitude: [plus.conj(), zero] });
        }
        velocity.sort_by_key(|v| v.mode);
        let zeros = profile.derivative_zero_count(ZERO_COUNT_SAMPLES);
        Ok(Flow {
            kind: FlowKind::Shear,
            lipschitz: lipschitz_of(&velocity),
            max_wavenumber: profile.max_wavenumber(),
            profile: Some(profile),
            stream: None,
            velocity,
            derivative_zeros: Some(zeros),
        })
    }

    /// Cellular flow `u = ∇⊥ψ`.
    pub fn cellular(psi: FourierField) -> Result<Flow> {
        Self::from_streamfunction(FlowKind::Cellular, psi)
    }

    /// Arbitrary trigonometric-polynomial streamfunction; structural hypotheses
    /// are the caller's to assert.
    pub fn custom(psi: FourierField) -> Result<Flow> {
        Self::from_streamfunction(FlowKind::Custom, psi)
    }

    /// The fluid at rest; the generator reduces to the heat operator.
    pub fn rest() -> Flow {
        Flow {
            kind: FlowKind::Rest,
            profile: None,
            stream: None,
            velocity: Vec::new(),
            lipschitz: 0.0,
            max_wavenumber: 0,
            derivative_zeros: None,
        }
    }

    /// The cellular flow of `ψ = sin x sin y`.
    pub fn default_cellular() -> Flow {
        Self::cellular(sin_x_sin_y()).expect("nonzero streamfunction")
    }

    fn from_streamfunction(kind: FlowKind, psi: FourierField) -> Result<Flow> {
        if psi.is_zero() {
            return Err(invalid("psi", "streamfunction is identically zero"));
        }
        let n = psi.truncation();
        let lattice = psi.to_complex_lattice();
        let mut velocity = Vec::new();
        for rep in representatives(n) {
            for mode in [rep, rep.neg()] {
                // plain coefficient of ψ(x) = Σ p_k e^{ik·x}
                let p = lattice[crate::fourier::lattice_offset(n, mode)] / (2.0 * PI);
                if p.norm_sqr() == 0.0 {
                    continue;
                }
                let i = Complex64::new(0.0, 1.0);
                let ux = -i * f64::from(mode.k2) * p;
                let uy = i * f64::from(mode.k1) * p;
                velocity.push(VelocityMode { mode, amplitude: [ux, uy] });
            }
        }
        velocity.sort_by_key(|v| v.mode);
        let max_wavenumber = velocity.iter().map(|v| v.mode.sup_norm() as usize).max().unwrap_or(0);
        Ok(Flow {
            kind,
            lipschitz: lipschitz_of(&velocity),
            max_wavenumber,
            profile: None,
            stream: Some(psi),
            velocity,
            derivative_zeros: None,
        })
    }

    pub fn kind(&self) -> FlowKind {
        self.kind
    }

    pub fn profile(&self) -> Option<&ShearProfile> {
        self.profile.as_ref()
    }

    pub fn streamfunction(&self) -> Option<&FourierField> {
        self.stream.as_ref()
    }

    /// Exact finite Fourier expansion of both velocity components.
    pub fn velocity_coefficients(&self) -> &[VelocityMode] {
        &self.velocity
    }

    /// `Σ_k |k| |û_k|`, an upper bound for `‖u‖_Lip`.
    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz
    }

    /// Largest `|k|_∞` in the velocity support.
    pub fn max_wavenumber(&self) -> usize {
        self.max_wavenumber
    }

    /// Number of zeros of `u′` (shear flows only).
    pub fn derivative_zero_count(&self) -> Option<usize> {
        self.derivative_zeros
    }

    /// Shear profiles are nonzero trigonometric polynomials, so `u′` always has
    /// finitely many zeros. Cellular non-degeneracy is not checked.
    pub fn is_nondegenerate_shear(&self) -> bool {
        self.kind == FlowKind::Shear && self.derivative_zeros.is_some()
    }

    pub fn velocity_at(&self, x: f64, y: f64) -> [f64; 2] {
        let mut u = [0.0; 2];
        for v in &self.velocity {
            let phase = Complex64::from_polar(1.0, f64::from(v.mode.k1) * x + f64::from(v.mode.k2) * y);
            u[0] += (v.amplitude[0] * phase).re;
            u[1] += (v.amplitude[1] * phase).re;
        }
        u
    }

    /// `ψ(x, y)` for flows defined by a streamfunction.
    pub fn stream_at(&self, x: f64, y: f64) -> Option<f64> {
        self.stream.as_ref().map(|psi| psi.evaluate(x, y))
    }

    /// Fourier coefficients of `∇·u`, computed as `i k·û_k`.
    pub fn divergence_coefficients(&self) -> Vec<(ModeIndex, Complex64)> {
        let i = Complex64::new(0.0, 1.0);
        self.velocity
            .iter()
            .map(|v| (v.mode, i * (v.amplitude[0] * f64::from(v.mode.k1) + v.amplitude[1] * f64::from(v.mode.k2))))
            .collect()
    }
}

fn lipschitz_of(velocity: &[VelocityMode]) -> f64 {
    velocity
        .iter()
        .map(|v| (v.mode.norm_sq() as f64).sqrt() * (v.amplitude[0].norm_sqr() + v.amplitude[1].norm_sqr()).sqrt())
        .sum()
}

/// `ψ = sin x sin y = ½cos(x−y) − ½cos(x+y)` on the orthonormal basis.
pub fn sin_x_sin_y() -> FourierField {
    // cos(k·x) = √2 π c_k
    let amp = PI / SQRT_2;
    FourierField::from_entries(
        1,
        &[(ModeIndex { k1: 1, k2: -1 }, Parity::Cos, amp), (ModeIndex { k1: 1, k2: 1 }, Parity::Cos, -amp)],
    )
    .expect("modes inside truncation")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sin_y_shear_support_and_lipschitz() {
        let flow = Flow::shear(ShearProfile::sin_y()).unwrap();
        let v = flow.velocity_coefficients();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].mode, ModeIndex { k1: 0, k2: -1 });
        assert_eq!(v[0].amplitude[0], Complex64::new(0.0, 0.5));
        assert_eq!(v[1].mode, ModeIndex { k1: 0, k2: 1 });
        assert_eq!(v[1].amplitude[0], Complex64::new(0.0, -0.5));
        assert!(v.iter().all(|m| m.amplitude[1] == Complex64::new(0.0, 0.0)));
        assert_eq!(flow.lipschitz_bound(), 1.0);
        assert_eq!(flow.max_wavenumber(), 1);
        assert_eq!(flow.derivative_zero_count(), Some(2));
        assert!(flow.is_nondegenerate_shear());
    }

    #[test]
    fn two_harmonic_shear_has_finitely_many_critical_points() {
        let profile = ShearProfile::new(vec![1.0, 1.0], vec![]);
        let flow = Flow::shear(profile.clone()).unwrap();
        // u′ = −sin y − 2 sin 2y = −sin y (1 + 4 cos y): zeros at 0, π, ±arccos(−1/4)
        let zeros = flow.derivative_zero_count().unwrap();
        assert_eq!(zeros, 4);
        assert_relative_eq!(profile.value(0.3), 0.3f64.cos() + 0.6f64.cos());
    }

    #[test]
    fn zero_profile_and_stream_rejected() {
        assert!(Flow::shear(ShearProfile::new(vec![0.0], vec![0.0])).is_err());
        assert!(Flow::cellular(FourierField::zeros(2)).is_err());
    }

    #[test]
    fn cellular_velocity_matches_rotated_gradient() {
        let flow = Flow::default_cellular();
        assert_eq!(flow.velocity_coefficients().len(), 4);
        for &(x, y) in &[(0.3, 1.1), (2.0, -0.7), (5.5, 4.4)] {
            let u = flow.velocity_at(x, y);
            assert_relative_eq!(u[0], -x.sin() * y.cos(), epsilon = 1e-14);
            assert_relative_eq!(u[1], x.cos() * y.sin(), epsilon = 1e-14);
            assert_relative_eq!(flow.stream_at(x, y).unwrap(), x.sin() * y.sin(), epsilon = 1e-14);
        }
        assert!(flow.divergence_coefficients().iter().all(|(_, d)| d.norm() == 0.0));
    }

    #[test]
    fn cellular_fixed_point_at_cell_centre() {
        let flow = Flow::default_cellular();
        let m = 200;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..m {
            for j in 0..m {
                let (x, y) = (PI * i as f64 / m as f64 * 0.5 + PI / 4.0, PI * j as f64 / m as f64 * 0.5 + PI / 4.0);
                let u = flow.velocity_at(x, y);
                let speed = u[0].hypot(u[1]);
                if speed < best.0 {
                    best = (speed, x, y);
                }
            }
        }
        assert!(best.0 < 1e-12);
        assert_relative_eq!(best.1, PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(best.2, PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn mean_mode_never_present() {
        let flow = Flow::shear(ShearProfile::new(vec![0.5, 0.0, 2.0], vec![1.0])).unwrap();
        assert!(flow.velocity_coefficients().iter().all(|v| v.mode.k1 != 0 || v.mode.k2 != 0));
        // shear: x-independent, no y-component
        assert!(flow.velocity_coefficients().iter().all(|v| v.mode.k1 == 0));
        for &(x, y) in &[(0.1, 0.2), (3.0, 0.2)] {
            let u = flow.velocity_at(x, y);
            assert_relative_eq!(u[0], flow.profile().unwrap().value(y), epsilon = 1e-14);
            assert_eq!(u[1], 0.0);
        }
    }
}
