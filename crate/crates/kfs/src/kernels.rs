//! Exponential-mixture kernels over weighted l1/l2 distances.
//!
//! A kernel here is `k(x, x') = h(sum_l beta_l |x_l - x'_l|^q)` with
//! `h(u) = sum_i w_i exp(-t_i u)` for a finite list of positive atoms
//! `(t_i, w_i)`. Laplace and Gaussian are the single-atom cases with
//! q = 1 and q = 2. Functions of this completely monotone form are
//! exactly the ones that make the weighted-distance construction a
//! positive definite kernel in every dimension.

use crate::error::{KfsError, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Row-tile width for blocked distance and Gram assembly.
pub const DEFAULT_TILE: usize = 64;

/// Which lq geometry and which exponential mixture the kernel uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    q: u8,
    atoms: Vec<(f64, f64)>,
}

impl KernelSpec {
    /// Builds a kernel from an exponent q in {1, 2} and nonempty list of
    /// (scale, weight) atoms, all strictly positive.
    pub fn new(q: u8, atoms: Vec<(f64, f64)>) -> Result<Self> {
        if q != 1 && q != 2 {
            return Err(KfsError::invalid(format!("q must be 1 or 2, got {q}")));
        }
        if atoms.is_empty() {
            return Err(KfsError::invalid("kernel mixture needs at least one atom"));
        }
        for &(t, w) in &atoms {
            if !(t > 0.0) || !t.is_finite() {
                return Err(KfsError::invalid(format!(
                    "atom scale must be positive, got {t}"
                )));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(KfsError::invalid(format!(
                    "atom weight must be positive, got {w}"
                )));
            }
        }
        Ok(KernelSpec { q, atoms })
    }

    /// exp(-||x - x'||_1), the single-atom q = 1 kernel.
    pub fn laplace() -> Self {
        KernelSpec {
            q: 1,
            atoms: vec![(1.0, 1.0)],
        }
    }

    /// exp(-||x - x'||_2^2), the single-atom q = 2 kernel.
    pub fn gaussian() -> Self {
        KernelSpec {
            q: 2,
            atoms: vec![(1.0, 1.0)],
        }
    }

    pub fn q(&self) -> u8 {
        self.q
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// h(0) = sum of mixture weights; also every Gram diagonal entry.
    pub fn h0(&self) -> f64 {
        self.atoms.iter().map(|&(_, w)| w).sum()
    }

    /// h'(0) = -sum of weight * scale; the steepest value of h'.
    pub fn h_prime0(&self) -> f64 {
        -self.atoms.iter().map(|&(t, w)| w * t).sum::<f64>()
    }

    /// Evaluates h(u) = sum_i w_i exp(-t_i u) for u >= 0.
    pub fn h(&self, u: f64) -> Result<f64> {
        if !(u >= 0.0) {
            return Err(KfsError::domain(format!("h is defined on u >= 0, got {u}")));
        }
        Ok(self.h_at(u))
    }

    /// Evaluates h'(u) = -sum_i w_i t_i exp(-t_i u) for u >= 0.
    pub fn h_prime(&self, u: f64) -> Result<f64> {
        if !(u >= 0.0) {
            return Err(KfsError::domain(format!(
                "h' is defined on u >= 0, got {u}"
            )));
        }
        Ok(self.h_prime_at(u))
    }

    #[inline]
    pub(crate) fn h_at(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for &(t, w) in &self.atoms {
            acc += w * (-t * u).exp();
        }
        acc
    }

    #[inline]
    pub(crate) fn h_prime_at(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for &(t, w) in &self.atoms {
            acc -= w * t * (-t * u).exp();
        }
        acc
    }
}

#[inline]
fn abs_q(d: f64, q: u8) -> f64 {
    if q == 1 {
        d.abs()
    } else {
        d * d
    }
}

/// Weighted distance sum_l beta_l |x_l - x'_l|^q between two points.
pub fn weighted_dist(q: u8, beta: &[f64], x: &[f64], y: &[f64]) -> Result<f64> {
    if q != 1 && q != 2 {
        return Err(KfsError::invalid(format!("q must be 1 or 2, got {q}")));
    }
    if x.len() != y.len() || x.len() != beta.len() {
        return Err(KfsError::dims(format!(
            "weighted_dist: |x| = {}, |x'| = {}, |beta| = {}",
            x.len(),
            y.len(),
            beta.len()
        )));
    }
    let mut acc = 0.0;
    for l in 0..x.len() {
        acc += beta[l] * abs_q(x[l] - y[l], q);
    }
    Ok(acc)
}

/// Column-major copy of a row-major n x p matrix. The distance kernels
/// stream coordinate columns, so experiments build this once per dataset.
#[derive(Debug, Clone)]
pub struct ColMajor {
    data: Vec<f64>,
    n: usize,
    p: usize,
}

impl ColMajor {
    pub fn from_row_major(x: &[f64], n: usize, p: usize) -> Self {
        assert_eq!(x.len(), n * p);
        let mut data = vec![0.0; n * p];
        for i in 0..n {
            for l in 0..p {
                data[l * n + i] = x[i * p + l];
            }
        }
        ColMajor { data, n, p }
    }

    #[inline]
    pub fn column(&self, l: usize) -> &[f64] {
        &self.data[l * self.n..(l + 1) * self.n]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }
}

/// Nonzero (index, weight) pairs of a weight vector, ascending by index.
pub(crate) fn support_pairs(beta: &[f64]) -> Vec<(usize, f64)> {
    beta.iter()
        .enumerate()
        .filter(|(_, &b)| b != 0.0)
        .map(|(l, &b)| (l, b))
        .collect()
}

/// Full n x n matrix of weighted distances between rows of x.
///
/// Row tiles are filled by independent workers and the strict lower
/// triangle is mirrored afterwards, so output is identical for every
/// thread count.
pub fn distance_matrix(q: u8, xcols: &ColMajor, beta: &[f64], tile: usize) -> Result<Vec<f64>> {
    if q != 1 && q != 2 {
        return Err(KfsError::invalid(format!("q must be 1 or 2, got {q}")));
    }
    if beta.len() != xcols.p() {
        return Err(KfsError::dims(format!(
            "distance_matrix: |beta| = {} but data has p = {}",
            beta.len(),
            xcols.p()
        )));
    }
    let n = xcols.n();
    let tile = tile.max(1);
    let support = support_pairs(beta);
    let mut d = vec![0.0; n * n];

    d.par_chunks_mut(tile * n)
        .enumerate()
        .for_each(|(chunk_idx, rows)| {
            let i0 = chunk_idx * tile;
            for (local, row) in rows.chunks_mut(n).enumerate() {
                let i = i0 + local;
                // upper triangle including the (zero) diagonal
                let upper = &mut row[i..];
                upper.fill(0.0);
                for &(l, b) in &support {
                    let col = xcols.column(l);
                    let xi = col[i];
                    for (slot, &xj) in upper.iter_mut().zip(&col[i..]) {
                        *slot += b * abs_q(xi - xj, q);
                    }
                }
            }
        });

    // mirror the strict lower triangle
    for i in 1..n {
        for j in 0..i {
            d[i * n + j] = d[j * n + i];
        }
    }
    Ok(d)
}

/// Applies h entrywise to a distance matrix.
pub fn gram_from_distances(spec: &KernelSpec, d: &[f64]) -> Vec<f64> {
    let mut k = vec![0.0; d.len()];
    for (ki, &di) in k.iter_mut().zip(d) {
        *ki = spec.h_at(di);
    }
    k
}

/// Gram matrix K_ij = h(sum_l beta_l |X_il - X_jl|^q) as a dense
/// row-major n x n buffer.
pub fn gram_matrix(spec: &KernelSpec, xcols: &ColMajor, beta: &[f64]) -> Result<Vec<f64>> {
    let d = distance_matrix(spec.q(), xcols, beta, DEFAULT_TILE)?;
    Ok(gram_from_distances(spec, &d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn jacobi_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
        // cyclic Jacobi sweep; plenty for the n <= 32 oracle uses here
        let mut m = a.to_vec();
        for _ in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += m[i * n + j] * m[i * n + j];
                }
            }
            if off.sqrt() < 1e-14 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m[p * n + q];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let app = m[p * n + p];
                    let aqq = m[q * n + q];
                    let theta = 0.5 * (aqq - app) / apq;
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = m[k * n + p];
                        let akq = m[k * n + q];
                        m[k * n + p] = c * akp - s * akq;
                        m[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = m[p * n + k];
                        let aqk = m[q * n + k];
                        m[p * n + k] = c * apk - s * aqk;
                        m[q * n + k] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| m[i * n + i]).collect()
    }

    #[test]
    fn laplace_h_values() {
        let k = KernelSpec::laplace();
        assert_eq!(k.h(0.0).unwrap(), 1.0);
        assert!((k.h(1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(k.h_prime(0.0).unwrap(), -1.0);
        assert!((k.h_prime(1.0).unwrap() + (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn two_atom_h_value() {
        let k = KernelSpec::new(1, vec![(1.0, 0.5), (2.0, 0.5)]).unwrap();
        let expect = 0.5 * (-0.3f64).exp() + 0.5 * (-0.6f64).exp();
        assert!((k.h(0.3).unwrap() - expect).abs() < 1e-15);
        assert!((k.h0() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn h_rejects_negative_input() {
        let k = KernelSpec::laplace();
        assert!(k.h(-0.1).is_err());
        assert!(k.h_prime(-0.1).is_err());
    }

    #[test]
    fn bad_specs_rejected() {
        assert!(KernelSpec::new(3, vec![(1.0, 1.0)]).is_err());
        assert!(KernelSpec::new(1, vec![]).is_err());
        assert!(KernelSpec::new(1, vec![(0.0, 1.0)]).is_err());
        assert!(KernelSpec::new(2, vec![(1.0, -1.0)]).is_err());
    }

    #[test]
    fn h_prime_matches_central_difference() {
        let specs = [
            KernelSpec::laplace(),
            KernelSpec::gaussian(),
            KernelSpec::new(1, vec![(0.7, 0.3), (2.5, 1.1)]).unwrap(),
        ];
        let eps = 1e-5;
        for k in &specs {
            let u = 0.7;
            let fd = (k.h(u + eps).unwrap() - k.h(u - eps).unwrap()) / (2.0 * eps);
            assert!(
                (fd - k.h_prime(u).unwrap()).abs() < 1e-8,
                "finite difference {fd} vs h' {}",
                k.h_prime(u).unwrap()
            );
        }
    }

    #[test]
    fn h_completely_monotone_on_grid() {
        // h >= 0, h' <= 0, and nonnegative second differences at random u
        let k = KernelSpec::new(1, vec![(0.5, 0.4), (1.5, 0.6), (3.0, 0.2)]).unwrap();
        let mut rng = crate::rng::stream_rng(11, 99);
        let du = 1e-3;
        for _ in 0..100 {
            let u: f64 = rng.gen_range(0.0..5.0);
            let h0 = k.h(u).unwrap();
            assert!(h0 > 0.0);
            assert!(k.h_prime(u).unwrap() <= 0.0);
            let second = k.h(u + 2.0 * du).unwrap() - 2.0 * k.h(u + du).unwrap() + h0;
            assert!(second >= -1e-10, "second difference {second} at u = {u}");
        }
    }

    #[test]
    fn weighted_dist_hand_cases() {
        assert_eq!(
            weighted_dist(1, &[1.0, 1.0], &[0.0, 0.0], &[1.0, 2.0]).unwrap(),
            3.0
        );
        assert_eq!(
            weighted_dist(1, &[0.0, 0.0], &[0.4, -2.0], &[1.0, 2.0]).unwrap(),
            0.0
        );
        let d = weighted_dist(2, &[0.5, 2.0], &[1.0, 1.0], &[0.0, 3.0]).unwrap();
        assert!((d - 8.5).abs() < 1e-15);
    }

    #[test]
    fn weighted_dist_dimension_mismatch() {
        assert!(weighted_dist(1, &[1.0], &[0.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(weighted_dist(1, &[1.0, 1.0], &[0.0], &[1.0, 2.0]).is_err());
        assert!(weighted_dist(3, &[1.0], &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn gram_zero_beta_is_constant() {
        let spec = KernelSpec::new(1, vec![(1.0, 0.8), (2.0, 0.4)]).unwrap();
        let x = [0.0, 1.0, -2.0, 3.0, 0.5, 0.25];
        let cols = ColMajor::from_row_major(&x, 3, 2);
        let k = gram_matrix(&spec, &cols, &[0.0, 0.0]).unwrap();
        for &v in &k {
            assert!((v - spec.h0()).abs() < 1e-15);
        }
    }

    #[test]
    fn gram_two_points_laplace() {
        let spec = KernelSpec::laplace();
        let cols = ColMajor::from_row_major(&[0.0, 1.0], 2, 1);
        let k = gram_matrix(&spec, &cols, &[1.0]).unwrap();
        let e = (-1.0f64).exp();
        assert_eq!(k[0], 1.0);
        assert_eq!(k[3], 1.0);
        assert!((k[1] - e).abs() < 1e-15 && (k[2] - e).abs() < 1e-15);
    }

    #[test]
    fn gram_is_positive_semidefinite() {
        let mut rng = crate::rng::stream_rng(3, 17);
        for (spec, p) in [(KernelSpec::laplace(), 4usize), (KernelSpec::gaussian(), 4)] {
            let n = 20;
            let x: Vec<f64> = (0..n * p).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let beta: Vec<f64> = (0..p).map(|_| rng.gen_range(0.0..1.5)).collect();
            let cols = ColMajor::from_row_major(&x, n, p);
            let k = gram_matrix(&spec, &cols, &beta).unwrap();
            let eigs = jacobi_eigenvalues(&k, n);
            let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(
                min >= -1e-10 * spec.h0(),
                "min eigenvalue {min} for q = {}",
                spec.q()
            );
        }
    }

    #[test]
    fn gram_exchangeable_under_permutation() {
        let spec = KernelSpec::gaussian();
        let n = 7;
        let p = 3;
        let mut rng = crate::rng::stream_rng(5, 21);
        let x: Vec<f64> = (0..n * p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let beta = vec![0.3, 1.1, 0.0];
        let perm: Vec<usize> = vec![4, 2, 6, 0, 5, 1, 3];
        let xp: Vec<f64> = perm
            .iter()
            .flat_map(|&i| x[i * p..(i + 1) * p].to_vec())
            .collect();
        let k = gram_matrix(&spec, &ColMajor::from_row_major(&x, n, p), &beta).unwrap();
        let kp = gram_matrix(&spec, &ColMajor::from_row_major(&xp, n, p), &beta).unwrap();
        for a in 0..n {
            for b in 0..n {
                assert_eq!(kp[a * n + b], k[perm[a] * n + perm[b]]);
            }
        }
    }

    #[test]
    fn offdiagonal_entries_decrease_in_beta_for_q1() {
        let spec = KernelSpec::laplace();
        let n = 6;
        let p = 3;
        let mut rng = crate::rng::stream_rng(9, 4);
        let x: Vec<f64> = (0..n * p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cols = ColMajor::from_row_major(&x, n, p);
        let beta = vec![0.2, 0.5, 0.9];
        let k0 = gram_matrix(&spec, &cols, &beta).unwrap();
        for l in 0..p {
            let mut bumped = beta.clone();
            bumped[l] += 0.4;
            let k1 = gram_matrix(&spec, &cols, &bumped).unwrap();
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        assert!(k1[i * n + j] <= k0[i * n + j] + 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn distance_matrix_matches_weighted_dist_and_tiles_agree() {
        let n = 23;
        let p = 5;
        let mut rng = crate::rng::stream_rng(2, 8);
        let x: Vec<f64> = (0..n * p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let beta: Vec<f64> = (0..p)
            .map(|l| {
                if l % 2 == 0 {
                    rng.gen_range(0.0..2.0)
                } else {
                    0.0
                }
            })
            .collect();
        let cols = ColMajor::from_row_major(&x, n, p);
        let d64 = distance_matrix(1, &cols, &beta, 64).unwrap();
        let d3 = distance_matrix(1, &cols, &beta, 3).unwrap();
        assert_eq!(d64, d3);
        for i in 0..n {
            for j in 0..n {
                let w = weighted_dist(1, &beta, &x[i * p..(i + 1) * p], &x[j * p..(j + 1) * p])
                    .unwrap();
                assert!((d64[i * n + j] - w).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn h_is_positive_and_nonincreasing(
            t in 0.05f64..5.0,
            w in 0.05f64..5.0,
            u1 in 0.0f64..10.0,
            du in 0.0f64..5.0,
        ) {
            let k = KernelSpec::new(1, vec![(t, w), (2.0 * t, 0.5 * w)]).unwrap();
            let a = k.h(u1).unwrap();
            let b = k.h(u1 + du).unwrap();
            prop_assert!(a > 0.0);
            prop_assert!(b <= a + 1e-15);
            prop_assert!(k.h_prime(u1).unwrap() <= 0.0);
            prop_assert!(k.h_prime(u1).unwrap().abs() <= k.h_prime(0.0).unwrap().abs() + 1e-15);
        }

        #[test]
        fn weighted_dist_symmetric_nonnegative(
            xs in proptest::collection::vec(-3.0f64..3.0, 4),
            ys in proptest::collection::vec(-3.0f64..3.0, 4),
            bs in proptest::collection::vec(0.0f64..2.0, 4),
        ) {
            for q in [1u8, 2] {
                let dxy = weighted_dist(q, &bs, &xs, &ys).unwrap();
                let dyx = weighted_dist(q, &bs, &ys, &xs).unwrap();
                prop_assert!(dxy >= 0.0);
                prop_assert_eq!(dxy, dyx);
                prop_assert_eq!(weighted_dist(q, &bs, &xs, &xs).unwrap(), 0.0);
            }
        }
    }
}
