//! Dense linear-algebra kernels: block splitting, matrix exponentials,
//! Krylov `exp(tA)v`, the Bartels–Stewart Lyapunov solver and extremal
//! singular values.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use petgraph::unionfind::UnionFind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Largest block handled with dense exponentials and Schur solves.
pub const DENSE_CAP: usize = 4000;

/// Connected components of the nonzero pattern of `m` (treated as an
/// undirected graph). Indices inside a component are ascending; components are
/// ordered by their smallest index.
pub fn components(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut uf = UnionFind::<usize>::new(n);
    for j in 0..n {
        for i in 0..n {
            if i != j && m[(i, j)] != 0.0 {
                uf.union(i, j);
            }
        }
    }
    let labels = uf.into_labeling();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for (i, &root) in labels.iter().enumerate() {
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(i);
    }
    groups
}

pub fn submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

pub fn scatter_block(dst: &mut DMatrix<f64>, idx: &[usize], block: &DMatrix<f64>) {
    for (bj, &j) in idx.iter().enumerate() {
        for (bi, &i) in idx.iter().enumerate() {
            dst[(i, j)] = block[(bi, bj)];
        }
    }
}

/// Dense matrix exponential (scaling and squaring with Padé approximants).
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return a.clone();
    }
    a.exp()
}

/// `exp(tA)v` by Arnoldi projection with adaptive sub-stepping, to relative
/// tolerance `tol`.
pub fn expm_multiply(a: &DMatrix<f64>, t: f64, v: &DVector<f64>, tol: f64) -> DVector<f64> {
    let n = a.nrows();
    let beta0 = v.norm();
    if n == 0 || beta0 == 0.0 || t == 0.0 {
        return v.clone();
    }
    let m_max = n.min(30);
    let anorm = a.abs().row_sum().max().max(f64::MIN_POSITIVE);
    let t_abs = t.abs();
    let sign = t.signum();
    let mut w = v.clone();
    let mut t_now = 0.0;
    let mut tau = t_abs.min(2.0 / anorm).max(t_abs / 1e6);
    while t_now < t_abs {
        let beta = w.norm();
        if beta == 0.0 {
            break;
        }
        let mut basis: Vec<DVector<f64>> = vec![&w / beta];
        let mut h = DMatrix::<f64>::zeros(m_max + 1, m_max);
        let mut m = m_max;
        let mut breakdown = false;
        for j in 0..m_max {
            let mut p = a * &basis[j];
            for _ in 0..2 {
                for (i, q) in basis.iter().enumerate() {
                    let c = q.dot(&p);
                    h[(i, j)] += c;
                    p.axpy(-c, q, 1.0);
                }
            }
            let s = p.norm();
            h[(j + 1, j)] = s;
            if s <= 1e-13 * anorm {
                m = j + 1;
                breakdown = true;
                break;
            }
            basis.push(p / s);
        }
        let h_last = if breakdown { 0.0 } else { h[(m, m - 1)] };
        let hm = h.view((0, 0), (m, m)).into_owned();
        loop {
            let step = tau.min(t_abs - t_now);
            let f = expm(&(&hm * (sign * step)));
            let err = beta * h_last * f[(m - 1, 0)].abs();
            if breakdown || err <= tol * beta * (step / t_abs).max(1e-3) || step <= t_abs * 1e-12 {
                let mut next = DVector::zeros(n);
                for (i, q) in basis.iter().take(m).enumerate() {
                    next.axpy(beta * f[(i, 0)], q, 1.0);
                }
                w = next;
                t_now += step;
                if err < 0.1 * tol * beta * (step / t_abs) {
                    tau = step * 2.0;
                } else {
                    tau = step;
                }
                break;
            }
            tau = step * 0.5;
        }
    }
    w
}

/// Solves `A X + X Aᵀ = C` by Bartels–Stewart on the real Schur form of `A`.
/// Returns the symmetrized solution when `C` is symmetric.
pub fn solve_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || c.nrows() != n || c.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: c.nrows() });
    }
    if n == 0 {
        return Ok(c.clone());
    }
    let (u, t) = Schur::new(a.clone()).unpack();
    let f = u.transpose() * c * &u;
    let y = solve_quasi_triangular_lyapunov(&t, &f)?;
    let x = &u * y * u.transpose();
    Ok((&x + x.transpose()) * 0.5)
}

/// Diagonal blocks of a quasi-upper-triangular matrix as `(start, len)`.
fn schur_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        let mut len = 1;
        while i + len < n && t[(i + len, i + len - 1)] != 0.0 {
            len += 1;
        }
        blocks.push((i, len));
        i += len;
    }
    blocks
}

/// Solves `T Y + Y Tᵀ = F` for quasi-upper-triangular `T`.
fn solve_quasi_triangular_lyapunov(t: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = t.nrows();
    let blocks = schur_blocks(t);
    let mut y = DMatrix::<f64>::zeros(n, n);
    for &(r0, ri) in blocks.iter().rev() {
        let r1 = r0 + ri;
        // rows of F − T[I, >I]·Y[>I, :]
        let mut rows = f.rows(r0, ri).into_owned();
        if r1 < n {
            rows -= t.view((r0, r1), (ri, n - r1)) * y.rows(r1, n - r1);
        }
        for &(c0, cj) in blocks.iter().rev() {
            let c1 = c0 + cj;
            let mut rhs = rows.view((0, c0), (ri, cj)).into_owned();
            if c1 < n {
                rhs -= y.view((r0, c1), (ri, n - c1)) * t.view((c0, c1), (cj, n - c1)).transpose();
            }
            let tii = t.view((r0, r0), (ri, ri));
            let tjj = t.view((c0, c0), (cj, cj));
            let block = solve_small_sylvester(&tii.into_owned(), &tjj.into_owned(), &rhs)?;
            y.view_mut((r0, c0), (ri, cj)).copy_from(&block);
        }
    }
    Ok(y)
}

/// Solves `P Y + Y Rᵀ = S` for small `P` (p×p) and `R` (q×q) via the
/// Kronecker form `(I⊗P + R⊗I) vec(Y) = vec(S)`.
fn solve_small_sylvester(p: &DMatrix<f64>, r: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (pd, qd) = (p.nrows(), r.nrows());
    if pd == 1 && qd == 1 {
        let d = p[(0, 0)] + r[(0, 0)];
        if d == 0.0 {
            return Err(Error::Solver {
                what: "singular Lyapunov operator (λ_i + λ_j = 0)".into(),
                residual: f64::INFINITY,
            });
        }
        return Ok(DMatrix::from_element(1, 1, s[(0, 0)] / d));
    }
    let size = pd * qd;
    let mut k = DMatrix::<f64>::zeros(size, size);
    // vec index of Y[a, b] is b*pd + a
    for b in 0..qd {
        for a in 0..pd {
            let row = b * pd + a;
            for a2 in 0..pd {
                k[(row, b * pd + a2)] += p[(a, a2)];
            }
            for b2 in 0..qd {
                k[(row, b2 * pd + a)] += r[(b, b2)];
            }
        }
    }
    let rhs = DVector::from_iterator(size, s.iter().copied());
    let sol = k.full_piv_lu().solve(&rhs).ok_or_else(|| Error::Solver {
        what: "singular Lyapunov operator on a Schur block".into(),
        residual: f64::INFINITY,
    })?;
    Ok(DMatrix::from_iterator(pd, qd, sol.iter().copied()))
}

/// Eigenvalues of a symmetric matrix, computed block by block on the
/// connected components of its nonzero pattern, in ascending order.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows());
    for comp in components(m) {
        let block = submatrix(m, &comp);
        if comp.len() == 1 {
            out.push(block[(0, 0)]);
        } else {
            out.extend(SymmetricEigen::new(block).eigenvalues.iter().copied());
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Spectral norm of a symmetric matrix.
pub fn symmetric_norm(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).into_iter().fold(0.0, |acc, l| acc.max(l.abs()))
}

/// Largest eigenvalue of a symmetric positive semidefinite operator by Lanczos
/// with full reorthogonalization, to relative tolerance `tol`.
pub fn lanczos_max_eigenvalue(apply: impl Fn(&DVector<f64>) -> DVector<f64>, n: usize, tol: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut q = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    q /= q.norm();
    let mut basis: Vec<DVector<f64>> = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut previous = f64::NAN;
    let max_iter = n.min(400);
    for j in 0..max_iter {
        let mut w = apply(&basis[j]);
        let a = basis[j].dot(&w);
        alpha.push(a);
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
        }
        let b = w.norm();
        let k = alpha.len();
        let tri = DMatrix::from_fn(k, k, |r, c| {
            if r == c {
                alpha[r]
            } else if r + 1 == c {
                beta[r]
            } else if c + 1 == r {
                beta[c]
            } else {
                0.0
            }
        });
        let top = SymmetricEigen::new(tri).eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = top.abs().max(f64::MIN_POSITIVE);
        if b <= 1e-14 * scale || (previous - top).abs() <= tol * scale * 1e-2 || j + 1 == max_iter {
            return top;
        }
        previous = top;
        beta.push(b);
        basis.push(w / b);
    }
    previous
}

/// Largest singular value of a dense matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let n = m.ncols();
    if n == 0 {
        return 0.0;
    }
    if n <= 200 {
        return m.clone().svd(false, false).singular_values.max();
    }
    let mt = m.transpose();
    lanczos_max_eigenvalue(|v| &mt * (m * v), n, 1e-12).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn test_matrix(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng))
    }

    fn stable(n: usize, seed: u64) -> DMatrix<f64> {
        let m = test_matrix(n, seed);
        let skew = (&m - m.transpose()) * 2.0;
        skew - DMatrix::identity(n, n) * 0.5 - DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| i as f64))
    }

    #[test]
    fn lyapunov_residual_small() {
        for (n, seed) in [(1, 1), (2, 2), (7, 3), (40, 4)] {
            let a = stable(n, seed);
            let g = test_matrix(n, seed + 100);
            let c = -(&g * g.transpose());
            let x = solve_lyapunov(&a, &c).unwrap();
            let res = (&a * &x + &x * a.transpose() - &c).norm();
            assert!(res <= 1e-11 * (a.norm() * x.norm() + c.norm()), "n={n} residual {res}");
            assert!(symmetric_eigenvalues(&x)[0] > -1e-10 * x.norm());
        }
    }

    #[test]
    fn lyapunov_scalar_case() {
        let a = DMatrix::from_element(1, 1, -2.0);
        let c = DMatrix::from_element(1, 1, -1.0);
        assert_eq!(solve_lyapunov(&a, &c).unwrap()[(0, 0)], 0.25);
    }

    #[test]
    fn krylov_matches_dense_exponential() {
        let a = stable(60, 9) * 0.3;
        let v = DVector::from_fn(60, |i, _| (i as f64 * 0.37).sin());
        for t in [0.1, 1.0, 7.5, -0.4] {
            let dense = expm(&(&a * t)) * &v;
            let krylov = expm_multiply(&a, t, &v, 1e-12);
            assert_relative_eq!(dense, krylov, epsilon = 1e-9 * v.norm());
        }
    }

    #[test]
    fn components_split_block_diagonal() {
        let mut m = DMatrix::zeros(5, 5);
        m[(0, 3)] = 1.0;
        m[(4, 1)] = 2.0;
        m[(2, 2)] = 5.0;
        assert_eq!(components(&m), vec![vec![0, 3], vec![1, 4], vec![2]]);
    }

    #[test]
    fn lanczos_norm_matches_svd() {
        let m = test_matrix(250, 5);
        let svd = m.clone().svd(false, false).singular_values.max();
        assert_relative_eq!(spectral_norm(&m), svd, max_relative = 1e-9);
    }
}
