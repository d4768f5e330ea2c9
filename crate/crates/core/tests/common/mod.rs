//! Shared test-only helpers: an independent symmetric eigensolver (Householder
//! tridiagonalization + implicit-shift QL, a different algorithm from the
//! Jacobi solver in the library) and a brute-force Frechet distance built on
//! it. These exist so the library implementation can be checked against a
//! separately coded route.

#![allow(dead_code)]

use vata_core::metrics::GaussianStats;
use vata_core::numerics::DenseMatrix;

/// Symmetric eigenvalues via Householder reduction to tridiagonal form
/// followed by QL iteration with implicit shifts (classic tred2/tql2,
/// eigenvalues only).
pub fn eigenvalues_tql(a: &DenseMatrix) -> Vec<f64> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let mut z: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];

    // Householder reduction (tred2, without accumulating transforms).
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let scale: f64 = z[i][..=l].iter().map(|v| v.abs()).sum();
            if scale == 0.0 {
                e[i] = z[i][l];
            } else {
                for j in 0..=l {
                    z[i][j] /= scale;
                    h += z[i][j] * z[i][j];
                }
                let mut f = z[i][l];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                z[i][l] = f - g;
                f = 0.0;
                for j in 0..=l {
                    let g2 = {
                        let mut acc = 0.0;
                        for k in 0..=j {
                            acc += z[j][k] * z[i][k];
                        }
                        for k in (j + 1)..=l {
                            acc += z[k][j] * z[i][k];
                        }
                        acc
                    };
                    e[j] = g2 / h;
                    f += e[j] * z[i][j];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let fj = z[i][j];
                    let gj = e[j] - hh * fj;
                    e[j] = gj;
                    for k in 0..=j {
                        z[j][k] -= fj * e[k] + gj * z[i][k];
                    }
                }
            }
        } else {
            e[i] = z[i][l];
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for i in 0..n {
        d[i] = z[i][i];
    }

    // QL with implicit shifts (tql2, eigenvalues only).
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter < 100, "QL failed to converge");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            let sign_r = if g >= 0.0 { r.abs() } else { -r.abs() };
            g = d[m] - d[l] + e[l] / (g + sign_r);
            let (mut s, mut c) = (1.0, 1.0);
            let mut p = 0.0;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if r == 0.0 && m > l {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d
}

/// Brute-force Frechet distance: |mu1 - mu2|^2 + tr S1 + tr S2
/// - 2 sum_i sqrt(eig_i(S1^1/2 S2 S1^1/2)), with the inner square root also
/// taken through the independent eigensolver.
pub fn frechet_distance_oracle(g1: &GaussianStats, g2: &GaussianStats) -> f64 {
    let n = g1.mean.len();
    let mut mean_term = 0.0;
    for (a, b) in g1.mean.iter().zip(g2.mean.iter()) {
        mean_term += (a - b) * (a - b);
    }
    // Inner square root via the Denman-Beavers iteration: no
    // eigendecomposition at all on this leg.
    let s1_sqrt = spd_sqrt_newton(g1.cov.matrix());
    let inner = s1_sqrt.matmul(g2.cov.matrix()).matmul(&s1_sqrt);
    // Symmetrize before the eigen solve.
    let sym = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (inner.get(i, j) + inner.get(j, i)));
    let eig = eigenvalues_tql(&sym);
    let cross: f64 = eig.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let tr1: f64 = (0..n).map(|i| g1.cov.matrix().get(i, i)).sum();
    let tr2: f64 = (0..n).map(|i| g2.cov.matrix().get(i, i)).sum();
    (mean_term + tr1 + tr2 - 2.0 * cross).max(0.0)
}

/// SPD square root via the Denman-Beavers Newton iteration; independent of
/// both the library's Jacobi solver and the QL solver above.
pub fn spd_sqrt_newton(m: &DenseMatrix) -> DenseMatrix {
    let n = m.rows();
    let mut y = m.clone();
    let mut z = DenseMatrix::identity(n);
    for _ in 0..100 {
        let y_inv = invert(&y);
        let z_inv = invert(&z);
        let mut y_next = DenseMatrix::zeros(n, n);
        let mut z_next = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                y_next.set(i, j, 0.5 * (y.get(i, j) + z_inv.get(i, j)));
                z_next.set(i, j, 0.5 * (z.get(i, j) + y_inv.get(i, j)));
            }
        }
        let mut delta = 0.0;
        for i in 0..n {
            for j in 0..n {
                delta += (y_next.get(i, j) - y.get(i, j)).abs();
            }
        }
        y = y_next;
        z = z_next;
        if delta < 1e-14 {
            break;
        }
    }
    y
}

/// Gauss-Jordan inverse with partial pivoting (test-only sizes).
pub fn invert(m: &DenseMatrix) -> DenseMatrix {
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = m.row(i).to_vec();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r1, &r2| a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        assert!(p.abs() > 1e-300, "singular matrix in test inverse");
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = a[row][col];
            if factor == 0.0 {
                continue;
            }
            for k in 0..2 * n {
                a[row][k] -= factor * a[col][k];
            }
        }
    }
    DenseMatrix::from_fn(n, n, |i, j| a[i][n + j])
}
