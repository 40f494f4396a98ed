//! Truncated real Fourier representation of mean-zero scalar fields on the
//! torus T² = [0, 2π]².
//!
//! A field of truncation `N` stores one cosine and one sine amplitude per
//! half-lattice representative `k` with `|k1|, |k2| ≤ N`. The representatives
//! are the lexicographically positive modes (`k1 > 0`, or `k1 = 0, k2 > 0`),
//! and the basis functions
//!
//! ```text
//! c_k(x) = √2/(2π) cos(k·x),   s_k(x) = √2/(2π) sin(k·x)
//! ```
//!
//! are orthonormal in L²(T²), so squared norms are plain coefficient sums.
//!
//! Canonical ordering: representatives are enumerated with `k1` ascending and
//! then `k2` ascending (`(0,1), …, (0,N), (1,-N), …, (1,N), …, (N,N)`), and
//! coefficient `2·r` is the cosine, `2·r + 1` the sine of representative `r`.
//! The vector length is `(2N+1)² − 1`.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};
use crate::format_f64;

/// Integer wavenumber `(k1, k2)` on the torus lattice, never `(0,0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModeIndex {
    pub k1: i32,
    pub k2: i32,
}

impl ModeIndex {
    pub fn new(k1: i32, k2: i32) -> Result<Self> {
        if k1 == 0 && k2 == 0 {
            return Err(Error::ZeroMode);
        }
        Ok(Self { k1, k2 })
    }

    /// `|k|²`, the Laplacian eigenvalue of the mode.
    pub fn norm_sq(&self) -> i64 {
        let (a, b) = (i64::from(self.k1), i64::from(self.k2));
        a * a + b * b
    }

    pub fn sup_norm(&self) -> u32 {
        self.k1.unsigned_abs().max(self.k2.unsigned_abs())
    }

    /// True for lexicographically positive modes.
    pub fn is_representative(&self) -> bool {
        self.k1 > 0 || (self.k1 == 0 && self.k2 > 0)
    }

    /// The representative of `±k`, and whether `k` had to be negated.
    pub fn representative(&self) -> (ModeIndex, bool) {
        if self.is_representative() {
            (*self, false)
        } else {
            (ModeIndex { k1: -self.k1, k2: -self.k2 }, true)
        }
    }

    pub fn neg(&self) -> ModeIndex {
        ModeIndex { k1: -self.k1, k2: -self.k2 }
    }
}

impl fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.k1, self.k2)
    }
}

/// Cosine or sine member of a real basis pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Parity {
    Cos,
    Sin,
}

impl Parity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Parity::Cos => "cos",
            Parity::Sin => "sin",
        }
    }

    fn offset(&self) -> usize {
        match self {
            Parity::Cos => 0,
            Parity::Sin => 1,
        }
    }
}

impl FromStr for Parity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cos" | "c" => Ok(Parity::Cos),
            "sin" | "s" => Ok(Parity::Sin),
            other => Err(Error::Parse(format!("unknown parity `{other}`"))),
        }
    }
}

/// Order `s` of the Sobolev norm `‖(−Δ)^{s/2} f‖_{L²}`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct SobolevExponent(f64);

impl SobolevExponent {
    pub const L2: SobolevExponent = SobolevExponent(0.0);
    pub const H1: SobolevExponent = SobolevExponent(1.0);

    pub fn new(s: f64) -> Result<Self> {
        if !s.is_finite() {
            return Err(invalid("s", "Sobolev exponent must be finite"));
        }
        Ok(Self(s))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

impl Default for SobolevExponent {
    fn default() -> Self {
        Self::H1
    }
}

/// Number of real coefficients at truncation `n`.
pub fn dimension(n: usize) -> usize {
    (2 * n + 1) * (2 * n + 1) - 1
}

/// Number of half-lattice representatives at truncation `n`.
pub fn representative_count(n: usize) -> usize {
    dimension(n) / 2
}

/// Position of a representative mode in the canonical enumeration.
fn representative_position(n: usize, mode: ModeIndex) -> usize {
    debug_assert!(mode.is_representative());
    let n_i = n as i32;
    if mode.k1 == 0 {
        (mode.k2 - 1) as usize
    } else {
        n + ((mode.k1 - 1) * (2 * n_i + 1) + (mode.k2 + n_i)) as usize
    }
}

/// Canonical coefficient index of `(mode, parity)`; `mode` must be a representative
/// inside the truncation.
pub fn coefficient_index(n: usize, mode: ModeIndex, parity: Parity) -> usize {
    2 * representative_position(n, mode) + parity.offset()
}

/// Half-lattice representatives at truncation `n`, in canonical order.
pub fn representatives(n: usize) -> Vec<ModeIndex> {
    let n_i = n as i32;
    let mut out = Vec::with_capacity(representative_count(n));
    for k2 in 1..=n_i {
        out.push(ModeIndex { k1: 0, k2 });
    }
    for k1 in 1..=n_i {
        for k2 in -n_i..=n_i {
            out.push(ModeIndex { k1, k2 });
        }
    }
    out
}

/// `(mode, parity)` of every coefficient, in canonical order.
pub fn basis(n: usize) -> Vec<(ModeIndex, Parity)> {
    representatives(n).into_iter().flat_map(|m| [(m, Parity::Cos), (m, Parity::Sin)]).collect()
}

/// Laplacian eigenvalues `|k|²` of every coefficient, sorted ascending with
/// ties broken on `(|k1|, |k2|, k1, k2, parity)`. Returns `(|k|², index)` pairs.
pub fn laplacian_enumeration(n: usize) -> Vec<(i64, usize)> {
    let mut entries: Vec<_> = basis(n)
        .into_iter()
        .enumerate()
        .map(|(idx, (m, p))| ((m.norm_sq(), m.k1.abs(), m.k2.abs(), m.k1, m.k2, p), idx))
        .collect();
    entries.sort();
    entries.into_iter().map(|(key, idx)| (key.0, idx)).collect()
}

/// Which low modes a projection `P_{≤·}` retains.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LowModeCut {
    /// `|k1|, |k2| ≤ M`.
    Square(usize),
    /// `|k|² ≤ λ_j`, with `λ_j` the j-th eigenvalue (1-based) of the enumeration.
    EigenCount(usize),
    /// `|k|² ≤ r2`; the argument is the squared radius.
    Radius(i64),
}

impl LowModeCut {
    fn keeps(&self, mode: ModeIndex, eigen_threshold: Option<i64>) -> bool {
        match *self {
            LowModeCut::Square(m) => mode.sup_norm() as usize <= m,
            LowModeCut::EigenCount(_) => mode.norm_sq() <= eigen_threshold.unwrap_or(0),
            LowModeCut::Radius(r2) => mode.norm_sq() <= r2,
        }
    }
}

/// Mean-zero real scalar field on T², stored as coefficients on the
/// orthonormal real trigonometric basis.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierField {
    n: usize,
    coeffs: DVector<f64>,
}

impl FourierField {
    pub fn zeros(n: usize) -> Self {
        Self { n, coeffs: DVector::zeros(dimension(n)) }
    }

    /// Builds a field from `(mode, parity, amplitude)` entries; all other
    /// coefficients are zero. Non-representative modes are folded onto their
    /// representative (`cos(−k·x) = cos(k·x)`, `sin(−k·x) = −sin(k·x)`).
    pub fn from_entries(n: usize, entries: &[(ModeIndex, Parity, f64)]) -> Result<Self> {
        let mut field = Self::zeros(n);
        let mut seen = vec![false; dimension(n)];
        for &(mode, parity, amp) in entries {
            if mode.k1 == 0 && mode.k2 == 0 {
                return Err(Error::ZeroMode);
            }
            if mode.sup_norm() as usize > n {
                return Err(Error::OutsideTruncation { k1: mode.k1, k2: mode.k2, n });
            }
            let (rep, flipped) = mode.representative();
            let idx = coefficient_index(n, rep, parity);
            if seen[idx] {
                return Err(Error::DuplicateEntry { k1: mode.k1, k2: mode.k2, parity: parity.as_str() });
            }
            seen[idx] = true;
            let sign = if flipped && parity == Parity::Sin { -1.0 } else { 1.0 };
            field.coeffs[idx] = sign * amp;
        }
        Ok(field)
    }

    pub fn from_vector(n: usize, coeffs: DVector<f64>) -> Result<Self> {
        if coeffs.len() != dimension(n) {
            return Err(Error::DimensionMismatch { expected: dimension(n), found: coeffs.len() });
        }
        Ok(Self { n, coeffs })
    }

    /// Unit basis function at canonical index `idx`.
    pub fn unit(n: usize, idx: usize) -> Self {
        let mut f = Self::zeros(n);
        f.coeffs[idx] = 1.0;
        f
    }

    pub fn truncation(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut DVector<f64> {
        &mut self.coeffs
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.coeffs
    }

    /// Coefficient of `(mode, parity)`, folding `mode` onto its representative.
    pub fn coefficient(&self, mode: ModeIndex, parity: Parity) -> f64 {
        if mode.sup_norm() as usize > self.n || (mode.k1 == 0 && mode.k2 == 0) {
            return 0.0;
        }
        let (rep, flipped) = mode.representative();
        let v = self.coeffs[coefficient_index(self.n, rep, parity)];
        if flipped && parity == Parity::Sin {
            -v
        } else {
            v
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn dot(&self, other: &FourierField) -> Result<f64> {
        self.check_same(other)?;
        Ok(self.coeffs.dot(&other.coeffs))
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.norm()
    }

    /// `‖(−Δ)^{s/2} f‖_{L²} = (Σ |k|^{2s}(a_k² + b_k²))^{1/2}`.
    pub fn sobolev_norm(&self, s: SobolevExponent) -> f64 {
        self.sobolev_norm_sq(s).sqrt()
    }

    pub fn sobolev_norm_sq(&self, s: SobolevExponent) -> f64 {
        let s = s.value();
        representatives(self.n)
            .iter()
            .enumerate()
            .map(|(r, m)| {
                let w = if s == 0.0 { 1.0 } else { (m.norm_sq() as f64).powf(s) };
                w * (self.coeffs[2 * r].powi(2) + self.coeffs[2 * r + 1].powi(2))
            })
            .sum()
    }

    pub fn h1_norm_sq(&self) -> f64 {
        representatives(self.n)
            .iter()
            .enumerate()
            .map(|(r, m)| m.norm_sq() as f64 * (self.coeffs[2 * r].powi(2) + self.coeffs[2 * r + 1].powi(2)))
            .sum()
    }

    /// `P_{≤M}` with square wavenumber truncation `|k|_∞ ≤ M`.
    pub fn project_low(&self, m: usize) -> Result<FourierField> {
        if m > self.n {
            return Err(invalid("M", format!("projection order {m} exceeds truncation {}", self.n)));
        }
        Ok(self.project(LowModeCut::Square(m)))
    }

    pub fn project(&self, cut: LowModeCut) -> FourierField {
        let threshold = match cut {
            LowModeCut::EigenCount(j) => {
                let enumeration = laplacian_enumeration(self.n);
                if j == 0 {
                    Some(0)
                } else {
                    Some(enumeration[(j - 1).min(enumeration.len() - 1)].0)
                }
            }
            _ => None,
        };
        let mut out = self.clone();
        for (r, m) in representatives(self.n).iter().enumerate() {
            if !cut.keeps(*m, threshold) {
                out.coeffs[2 * r] = 0.0;
                out.coeffs[2 * r + 1] = 0.0;
            }
        }
        out
    }

    /// Embeds into (or truncates to) truncation `n`.
    pub fn resize(&self, n: usize) -> FourierField {
        let mut out = FourierField::zeros(n);
        for (r, m) in representatives(self.n).iter().enumerate() {
            if m.sup_norm() as usize <= n {
                let idx = coefficient_index(n, *m, Parity::Cos);
                out.coeffs[idx] = self.coeffs[2 * r];
                out.coeffs[idx + 1] = self.coeffs[2 * r + 1];
            }
        }
        out
    }

    /// Complex coefficients `ĉ_k` on the full `(2N+1)²` lattice for the
    /// orthonormal basis `e_k = e^{ik·x}/(2π)`; entry `(k1+N)(2N+1) + (k2+N)`.
    pub fn to_complex_lattice(&self) -> Vec<Complex64> {
        let side = 2 * self.n + 1;
        let mut out = vec![Complex64::new(0.0, 0.0); side * side];
        for (r, m) in representatives(self.n).iter().enumerate() {
            let (a, b) = (self.coeffs[2 * r], self.coeffs[2 * r + 1]);
            let c = Complex64::new(a, -b) / SQRT_2;
            out[lattice_offset(self.n, *m)] = c;
            out[lattice_offset(self.n, m.neg())] = c.conj();
        }
        out
    }

    /// Inverse of [`to_complex_lattice`](Self::to_complex_lattice); reads the
    /// representative half of the lattice only.
    pub fn from_complex_lattice(n: usize, lattice: &[Complex64]) -> Result<FourierField> {
        let side = 2 * n + 1;
        if lattice.len() != side * side {
            return Err(Error::DimensionMismatch { expected: side * side, found: lattice.len() });
        }
        let mut out = FourierField::zeros(n);
        for (r, m) in representatives(n).iter().enumerate() {
            let c = lattice[lattice_offset(n, *m)];
            out.coeffs[2 * r] = SQRT_2 * c.re;
            out.coeffs[2 * r + 1] = -SQRT_2 * c.im;
        }
        Ok(out)
    }

    /// Point value at `(x, y)`.
    pub fn evaluate(&self, x: f64, y: f64) -> f64 {
        let scale = SQRT_2 / (2.0 * PI);
        representatives(self.n)
            .iter()
            .enumerate()
            .map(|(r, m)| {
                let phase = f64::from(m.k1) * x + f64::from(m.k2) * y;
                self.coeffs[2 * r] * phase.cos() + self.coeffs[2 * r + 1] * phase.sin()
            })
            .sum::<f64>()
            * scale
    }

    /// Values on the uniform grid `(2πi/M, 2πj/M)`; entry `(i, j)` is the
    /// value at `x = 2πi/M`, `y = 2πj/M`.
    pub fn sample_grid(&self, m: usize) -> Result<DMatrix<f64>> {
        let required = 2 * self.n + 2;
        if m < required {
            return Err(Error::GridTooSmall { grid: m, required });
        }
        let n_i = self.n as i32;
        let side = 2 * self.n + 1;
        let lattice = self.to_complex_lattice();
        let mut data = vec![Complex64::new(0.0, 0.0); m * m];
        for k1 in -n_i..=n_i {
            for k2 in -n_i..=n_i {
                let c = lattice[((k1 + n_i) as usize) * side + (k2 + n_i) as usize];
                let i = k1.rem_euclid(m as i32) as usize;
                let j = k2.rem_euclid(m as i32) as usize;
                data[i * m + j] = c;
            }
        }
        fft2(&mut data, m, true);
        let scale = 1.0 / (2.0 * PI);
        Ok(DMatrix::from_fn(m, m, |i, j| data[i * m + j].re * scale))
    }

    /// Projects grid values (layout of [`sample_grid`](Self::sample_grid)) onto
    /// truncation `n` by discrete Fourier quadrature.
    pub fn from_grid(values: &DMatrix<f64>, n: usize) -> Result<FourierField> {
        let m = values.nrows();
        if values.ncols() != m {
            return Err(invalid("grid", "grid must be square"));
        }
        let required = 2 * n + 2;
        if m < required {
            return Err(Error::GridTooSmall { grid: m, required });
        }
        let mut data: Vec<Complex64> = (0..m * m).map(|p| Complex64::new(values[(p / m, p % m)], 0.0)).collect();
        fft2(&mut data, m, false);
        let scale = 2.0 * PI / (m * m) as f64;
        let n_i = n as i32;
        let side = 2 * n + 1;
        let mut lattice = vec![Complex64::new(0.0, 0.0); side * side];
        for k1 in -n_i..=n_i {
            for k2 in -n_i..=n_i {
                let i = k1.rem_euclid(m as i32) as usize;
                let j = k2.rem_euclid(m as i32) as usize;
                lattice[((k1 + n_i) as usize) * side + (k2 + n_i) as usize] = data[i * m + j] * scale;
            }
        }
        FourierField::from_complex_lattice(n, &lattice)
    }

    /// Flat text records: a `N <n>` header, then one `k1 k2 parity amplitude`
    /// line per coefficient in canonical order.
    pub fn to_records(&self) -> String {
        let mut out = format!("N {}\n", self.n);
        for (idx, (m, p)) in basis(self.n).into_iter().enumerate() {
            out.push_str(&format!("{} {} {} {}\n", m.k1, m.k2, p.as_str(), format_f64(self.coeffs[idx])));
        }
        out
    }

    /// Parses [`to_records`](Self::to_records) output. Records may be sparse
    /// and in any order; blank lines and `#` comments are skipped.
    pub fn from_records(text: &str) -> Result<FourierField> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Parse("missing `N` header".into()))?;
        let n = parse_header(header)?;
        let entries = lines.map(parse_record).collect::<Result<Vec<_>>>()?;
        FourierField::from_entries(n, &entries)
    }

    fn check_same(&self, other: &FourierField) -> Result<()> {
        if self.n != other.n {
            return Err(Error::TruncationMismatch { expected: self.n, found: other.n });
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> FourierField {
        FourierField { n: self.n, coeffs: &self.coeffs * factor }
    }

    pub fn add(&self, other: &FourierField) -> Result<FourierField> {
        self.check_same(other)?;
        Ok(FourierField { n: self.n, coeffs: &self.coeffs + &other.coeffs })
    }

    pub fn sub(&self, other: &FourierField) -> Result<FourierField> {
        self.check_same(other)?;
        Ok(FourierField { n: self.n, coeffs: &self.coeffs - &other.coeffs })
    }
}

pub(crate) fn lattice_offset(n: usize, mode: ModeIndex) -> usize {
    let n_i = n as i32;
    ((mode.k1 + n_i) as usize) * (2 * n + 1) + (mode.k2 + n_i) as usize
}

fn parse_header(line: &str) -> Result<usize> {
    let mut parts = line.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some("N"), Some(v), None) => v.parse().map_err(|_| Error::Parse(format!("bad truncation in header `{line}`"))),
        _ => Err(Error::Parse(format!("expected `N <truncation>` header, got `{line}`"))),
    }
}

/// Parses one `k1 k2 parity amplitude` record.
pub fn parse_record(line: &str) -> Result<(ModeIndex, Parity, f64)> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 4 {
        return Err(Error::Parse(format!("expected `k1 k2 parity amplitude`, got `{line}`")));
    }
    let bad = |what: &str| Error::Parse(format!("bad {what} in record `{line}`"));
    let k1: i32 = parts[0].parse().map_err(|_| bad("k1"))?;
    let k2: i32 = parts[1].parse().map_err(|_| bad("k2"))?;
    let parity: Parity = parts[2].parse()?;
    let amp: f64 = parts[3].parse().map_err(|_| bad("amplitude"))?;
    Ok((ModeIndex::new(k1, k2)?, parity, amp))
}

/// In-place 2-D FFT of a row-major `m × m` array (unnormalized).
fn fft2(data: &mut [Complex64], m: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse { planner.plan_fft_inverse(m) } else { planner.plan_fft_forward(m) };
    for row in data.chunks_mut(m) {
        fft.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); m];
    for j in 0..m {
        for i in 0..m {
            column[i] = data[i * m + j];
        }
        fft.process(&mut column);
        for i in 0..m {
            data[i * m + j] = column[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mode(k1: i32, k2: i32) -> ModeIndex {
        ModeIndex::new(k1, k2).unwrap()
    }

    #[test]
    fn canonical_ordering_is_dense() {
        for n in 1..6 {
            let reps = representatives(n);
            assert_eq!(reps.len() * 2, dimension(n));
            for (r, m) in reps.iter().enumerate() {
                assert_eq!(coefficient_index(n, *m, Parity::Cos), 2 * r);
                assert_eq!(coefficient_index(n, *m, Parity::Sin), 2 * r + 1);
            }
        }
    }

    #[test]
    fn make_field_examples() {
        let f = FourierField::from_entries(4, &[(mode(0, 1), Parity::Cos, 1.0)]).unwrap();
        assert_eq!(f.l2_norm(), 1.0);
        assert_eq!(FourierField::from_entries(4, &[]).unwrap().l2_norm(), 0.0);
        assert_eq!(ModeIndex::new(0, 0), Err(Error::ZeroMode));
        assert!(matches!(
            FourierField::from_entries(4, &[(mode(5, 0), Parity::Cos, 1.0)]),
            Err(Error::OutsideTruncation { .. })
        ));
        assert!(matches!(
            FourierField::from_entries(4, &[(mode(0, 1), Parity::Sin, 1.0), (mode(0, -1), Parity::Sin, 1.0)]),
            Err(Error::DuplicateEntry { .. })
        ));
    }

    #[test]
    fn negative_modes_fold_onto_representatives() {
        let f =
            FourierField::from_entries(2, &[(mode(0, -1), Parity::Sin, 1.0), (mode(-1, 1), Parity::Cos, 2.0)]).unwrap();
        assert_eq!(f.coefficient(mode(0, 1), Parity::Sin), -1.0);
        assert_eq!(f.coefficient(mode(1, -1), Parity::Cos), 2.0);
        assert_relative_eq!(
            f.evaluate(0.3, 0.7),
            -(0.7f64).sin() * SQRT_2 / (2.0 * PI) + 2.0 * (0.4f64).cos() * SQRT_2 / (2.0 * PI),
            epsilon = 1e-14
        );
    }

    #[test]
    fn sobolev_norm_examples() {
        let f = |k1, k2| FourierField::from_entries(4, &[(mode(k1, k2), Parity::Cos, 1.0)]).unwrap();
        assert_relative_eq!(f(0, 1).sobolev_norm(SobolevExponent::H1), 1.0);
        assert_relative_eq!(f(1, 1).sobolev_norm(SobolevExponent::H1), 2f64.sqrt());
        assert_relative_eq!(f(0, 2).sobolev_norm(SobolevExponent::new(0.5).unwrap()), 2f64.sqrt());
    }

    #[test]
    fn project_low_examples() {
        let f =
            FourierField::from_entries(4, &[(mode(0, 3), Parity::Cos, 1.0), (mode(1, 0), Parity::Sin, 2.0)]).unwrap();
        assert_eq!(f.project_low(4).unwrap(), f);
        let low = FourierField::from_entries(4, &[(mode(0, 3), Parity::Cos, 1.0)]).unwrap();
        assert!(low.project(LowModeCut::Radius(1)).is_zero());
        assert!(f.project_low(5).is_err());
    }

    #[test]
    fn eigen_count_cut_keeps_ties() {
        // λ_1..λ_4 are the four |k|² = 1 coefficients; λ_5 is the first |k|² = 2.
        let f = FourierField::from_entries(
            3,
            &[(mode(1, 0), Parity::Cos, 1.0), (mode(1, 1), Parity::Sin, 1.0), (mode(1, -1), Parity::Cos, 1.0)],
        )
        .unwrap();
        let p4 = f.project(LowModeCut::EigenCount(4));
        assert_eq!(p4.l2_norm(), 1.0);
        let p5 = f.project(LowModeCut::EigenCount(5));
        assert_relative_eq!(p5.l2_norm(), 3f64.sqrt());
        let enumeration = laplacian_enumeration(3);
        assert!(enumeration.windows(2).all(|w| w[0].0 <= w[1].0));
    }

    #[test]
    fn grid_sampling_examples() {
        let zero = FourierField::zeros(3).sample_grid(8).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let cos_y = FourierField::from_entries(3, &[(mode(0, 1), Parity::Cos, 1.0)]).unwrap();
        let grid = cos_y.sample_grid(8).unwrap();
        assert_relative_eq!(grid[(0, 0)], SQRT_2 / (2.0 * PI), epsilon = 1e-15);
        assert!(matches!(cos_y.sample_grid(7), Err(Error::GridTooSmall { .. })));
    }

    #[test]
    fn grid_layout_matches_pointwise_evaluation() {
        let f = FourierField::from_entries(
            2,
            &[(mode(1, 0), Parity::Cos, 0.5), (mode(1, 2), Parity::Sin, -1.5), (mode(0, 2), Parity::Sin, 0.25)],
        )
        .unwrap();
        let m = 8;
        let grid = f.sample_grid(m).unwrap();
        for i in 0..m {
            for j in 0..m {
                let (x, y) = (2.0 * PI * i as f64 / m as f64, 2.0 * PI * j as f64 / m as f64);
                assert_relative_eq!(grid[(i, j)], f.evaluate(x, y), epsilon = 1e-13);
            }
        }
        assert_relative_eq!(FourierField::from_grid(&grid, 2).unwrap().coeffs(), f.coeffs(), epsilon = 1e-13);
    }

    #[test]
    fn records_round_trip_exactly() {
        let f =
            FourierField::from_entries(2, &[(mode(1, -2), Parity::Sin, 0.1 + 0.2), (mode(0, 1), Parity::Cos, -1e-300)])
                .unwrap();
        let text = f.to_records();
        assert!(text.starts_with("N 2\n"));
        assert_eq!(FourierField::from_records(&text).unwrap(), f);
        assert!(FourierField::from_records("N 2\n0 0 cos 1.0\n").is_err());
        assert!(FourierField::from_records("0 1 cos 1.0\n").is_err());
    }

    #[test]
    fn complex_lattice_round_trip() {
        let f =
            FourierField::from_entries(2, &[(mode(2, -1), Parity::Sin, 0.3), (mode(0, 2), Parity::Cos, 1.1)]).unwrap();
        let lattice = f.to_complex_lattice();
        assert_eq!(FourierField::from_complex_lattice(2, &lattice).unwrap(), f);
        let parseval: f64 = lattice.iter().map(|c| c.norm_sqr()).sum();
        assert_relative_eq!(parseval, f.l2_norm().powi(2), epsilon = 1e-14);
    }
}
