//! Gauss-Legendre rules and the Legendre integration matrix.

/// Legendre polynomials `P_0..=P_n` at `x`.
fn legendre_all(n: usize, x: f64) -> Vec<f64> {
    let mut p = vec![0.0; n + 1];
    p[0] = 1.0;
    if n >= 1 {
        p[1] = x;
    }
    for k in 2..=n {
        let kf = k as f64;
        p[k] = ((2.0 * kf - 1.0) * x * p[k - 1] - (kf - 1.0) * p[k - 2]) / kf;
    }
    p
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`,
/// nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            let p = legendre_all(n, z);
            let pn = p[n];
            let pn1 = if n >= 1 { p[n - 1] } else { 0.0 };
            let dp = nf * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let p = legendre_all(n, z);
        let dp = if n == 1 {
            1.0
        } else {
            nf * (z * p[n] - p[n - 1]) / (z * z - 1.0)
        };
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Matrix `Q` with `Q[i][j] = ∫_{-1}^{x_i} ℓ_j(s) ds`, where `ℓ_j` are the
/// Lagrange polynomials of the Gauss-Legendre nodes `x`. Row-major.
pub fn integration_matrix(x: &[f64], w: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut q = vec![0.0; n * n];
    // ℓ_j = Σ_p c_{pj} P_p with c_{pj} = (2p+1)/2 w_j P_p(x_j)
    let pj: Vec<Vec<f64>> = x.iter().map(|&xj| legendre_all(n, xj)).collect();
    for (i, &xi) in x.iter().enumerate() {
        let pi = legendre_all(n, xi);
        // ∫_{-1}^{x} P_p = (P_{p+1} - P_{p-1})/(2p+1), and x+1 for p = 0
        let ip: Vec<f64> = (0..n)
            .map(|p| {
                if p == 0 {
                    xi + 1.0
                } else {
                    (pi[p + 1] - pi[p - 1]) / (2 * p + 1) as f64
                }
            })
            .collect();
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..n {
                s += (2 * p + 1) as f64 / 2.0 * w[j] * pj[j][p] * ip[p];
            }
            q[i * n + j] = s;
        }
    }
    q
}

/// Values at `xs` of the polynomial interpolating `f` at the nodes `x`
/// (Gauss-Legendre, weights `w`), integrated from -1.
pub fn integrate_interpolant_at(x: &[f64], w: &[f64], f: &[f64], xs: f64) -> f64 {
    let n = x.len();
    let mut coef = vec![0.0; n];
    for (j, &xj) in x.iter().enumerate() {
        let p = legendre_all(n, xj);
        for (c, pp) in coef.iter_mut().zip(&p) {
            *c += w[j] * f[j] * pp;
        }
    }
    let p = legendre_all(n, xs);
    (0..n)
        .map(|k| {
            let ck = coef[k] * (2 * k + 1) as f64 / 2.0;
            let ik = if k == 0 {
                xs + 1.0
            } else {
                (p[k + 1] - p[k - 1]) / (2 * k + 1) as f64
            };
            ck * ik
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        for n in [1usize, 2, 5, 16, 33] {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            let deg = 2 * n - 1;
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
            assert!((got - exact).abs() < 1e-13, "n={n}");
            let even = 2 * n - 2;
            let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(even as i32)).sum();
            assert!((got - 2.0 / (even as f64 + 1.0)).abs() < 1e-13, "n={n}");
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn integration_matrix_integrates_cubic() {
        let (x, w) = gauss_legendre(6);
        let q = integration_matrix(&x, &w);
        let f: Vec<f64> = x.iter().map(|x| 3.0 * x * x - 1.0).collect();
        for i in 0..6 {
            let got: f64 = (0..6).map(|j| q[i * 6 + j] * f[j]).sum();
            let exact = x[i].powi(3) - x[i];
            assert!((got - exact).abs() < 1e-13);
        }
        assert!((integrate_interpolant_at(&x, &w, &f, 0.3) - (0.027 - 0.3)).abs() < 1e-13);
    }
}
