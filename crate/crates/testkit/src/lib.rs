//! Seeded generators of random state-space data for property tests.
//!
//! Generators return raw `(A, B, C, D)` matrices so this crate does not
//! depend on the library under test.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Matrices = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn uniform_vector(rng: &mut impl Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.gen_range(-1.0..1.0))
}

/// Random Hurwitz realization: a uniform matrix shifted left of its spectral abscissa.
pub fn stable(rng: &mut impl Rng, states: usize, ports: usize) -> Matrices {
    let mut a = uniform_matrix(rng, states, states) * 2.0;
    let abscissa = a
        .complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let margin = rng.gen_range(0.1..1.0);
    for i in 0..states {
        a[(i, i)] -= abscissa + margin;
    }
    let b = uniform_matrix(rng, states, ports);
    let c = uniform_matrix(rng, ports, states);
    let d = uniform_matrix(rng, ports, ports) * 0.5;
    (a, b, c, d)
}

/// Random strictly passive port-Hamiltonian system
/// `A = (J - R)Q`, `C = BᵀQ`, `D = S + K` with `Q, R, S` positive definite and `J, K` skew.
pub fn passive(rng: &mut impl Rng, states: usize, ports: usize) -> Matrices {
    let spd = |rng: &mut ChaCha8Rng, n: usize, floor: f64| {
        let l = uniform_matrix(rng, n, n);
        &l * l.transpose() + DMatrix::identity(n, n) * floor
    };
    let skew = |rng: &mut ChaCha8Rng, n: usize| {
        let m = uniform_matrix(rng, n, n);
        &m - m.transpose()
    };
    let mut local = ChaCha8Rng::seed_from_u64(rng.gen());
    let q = spd(&mut local, states, 0.2);
    let r = spd(&mut local, states, 0.2);
    let j = skew(&mut local, states);
    let a = (j - r) * &q;
    let b = uniform_matrix(&mut local, states, ports);
    let c = b.transpose() * &q;
    let d = spd(&mut local, ports, 0.1) * 0.5 + skew(&mut local, ports) * 0.5;
    (a, b, c, d)
}

/// Random orthogonal matrix from the QR factorization of a uniform matrix.
pub fn orthogonal(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    uniform_matrix(rng, n, n).qr().q()
}

/// Realization of the derivative map `u̇ ↦ ẏ` with the input carried as a
/// state: `d/dt (x, u) = (Ax + Bu, v)`, `ẏ = CAx + CBu + Dv`. Its transfer
/// function equals the original one at every `s ≠ 0`.
pub fn derivative_realization((a, b, c, d): &Matrices) -> Matrices {
    let (n, m) = (a.nrows(), b.ncols());
    let mut ad = DMatrix::zeros(n + m, n + m);
    ad.view_mut((0, 0), (n, n)).copy_from(a);
    ad.view_mut((0, n), (n, m)).copy_from(b);
    let mut bd = DMatrix::zeros(n + m, m);
    bd.view_mut((n, 0), (m, m)).fill_with_identity();
    let mut cd = DMatrix::zeros(c.nrows(), n + m);
    cd.view_mut((0, 0), (c.nrows(), n)).copy_from(&(c * a));
    cd.view_mut((0, n), (c.nrows(), m)).copy_from(&(c * b));
    (ad, bd, cd, d.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_realization_shapes() {
        let mut r = rng(3);
        let sys = stable(&mut r, 3, 2);
        let (a, b, c, d) = derivative_realization(&sys);
        assert_eq!((a.shape(), b.shape(), c.shape(), d.shape()), ((5, 5), (5, 2), (2, 5), (2, 2)));
        assert!(a.rows(3, 2).iter().all(|&v| v == 0.0));
    }
}
