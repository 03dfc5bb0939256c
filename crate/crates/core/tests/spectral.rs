use std::f64::consts::PI;

use fracpe::spectral::*;
use proptest::prelude::*;

fn basis(m: usize, k: usize) -> SpectralBasis<f64> {
    build_basis(Domain::default(), Truncation::new(m, k).unwrap()).unwrap()
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

#[test]
fn gram_matrices_are_identity_up_to_8_4() {
    for (m, k) in [(2, 1), (4, 2), (8, 4)] {
        let b = basis(m, k);
        let nv = b.n_velocity();
        let fields: Vec<_> = (0..nv)
            .map(|i| b.velocity_to_physical(&VelocityCoeffs(unit(nv, i))).unwrap())
            .collect();
        for i in 0..nv {
            for j in i..nv {
                let g = b.inner(&fields[i].u1, &fields[j].u1) + b.inner(&fields[i].u2, &fields[j].u2);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-10, "velocity ({m},{k}) [{i},{j}] = {g}");
            }
        }
        let nt = b.n_temp();
        let temps: Vec<_> = (0..nt)
            .map(|i| b.temp_to_physical(&TempCoeffs(unit(nt, i))).unwrap())
            .collect();
        for i in 0..nt {
            for j in i..nt {
                let g = b.inner(&temps[i].0, &temps[j].0);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-10, "temperature ({m},{k}) [{i},{j}] = {g}");
            }
        }
    }
}

#[test]
fn single_mode_synthesis_matches_analytic_eigenfunction() {
    let b = basis(4, 2);
    let g = &b.grid;
    for i in [0, 7, 40, 95] {
        let f = b
            .velocity_to_physical(&VelocityCoeffs(unit(b.n_velocity(), i)))
            .unwrap();
        for ix in 0..g.nx {
            for iy in 0..g.ny {
                for iz in 0..g.nz {
                    let p = g.index(ix, iy, iz);
                    let e = b.velocity_mode_at(i, g.x[ix], g.y[iy], g.z[iz]);
                    assert!((f.u1[p] - e[0]).abs() < 1e-13 && (f.u2[p] - e[1]).abs() < 1e-13);
                }
            }
        }
    }
    for i in [0, 11, 74] {
        let f = b.temp_to_physical(&TempCoeffs(unit(b.n_temp(), i))).unwrap();
        for ix in 0..g.nx {
            for iz in 0..g.nz {
                let p = g.index(ix, 2, iz);
                let (e, _) = b.temp_mode_at(i, g.x[ix], g.y[2], g.z[iz]);
                assert!((f.0[p] - e).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn projection_of_each_mode_is_a_unit_vector() {
    let b = basis(4, 2);
    let nv = b.n_velocity();
    for i in 0..nv {
        let f = b.velocity_to_physical(&VelocityCoeffs(unit(nv, i))).unwrap();
        let c = b.velocity_from_physical(&f).unwrap();
        for (j, v) in c.0.iter().enumerate() {
            assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
        }
    }
    let nt = b.n_temp();
    for i in 0..nt {
        let f = b.temp_to_physical(&TempCoeffs(unit(nt, i))).unwrap();
        let c = b.temp_from_physical(&f).unwrap();
        for (j, v) in c.0.iter().enumerate() {
            assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
        }
    }
}

#[test]
fn zero_coefficients_give_zero_fields() {
    let b = basis(3, 2);
    let f = b
        .velocity_to_physical(&VelocityCoeffs(vec![0.0; b.n_velocity()]))
        .unwrap();
    assert!(f.u1.iter().chain(&f.u2).all(|v| *v == 0.0));
    let t = b.temp_to_physical(&TempCoeffs(vec![0.0; b.n_temp()])).unwrap();
    assert!(t.0.iter().all(|v| *v == 0.0));
}

#[test]
fn barotropic_modes_are_divergence_free_on_a_16_grid() {
    let b = SpectralBasis::<f64>::with_grid(Domain::default(), Truncation::new(4, 2).unwrap(), 16, 16, 24).unwrap();
    let nv = b.n_velocity();
    for (i, mode) in b.velocity.iter().enumerate() {
        if mode.family != VelocityFamily::BarotropicStreamfunction {
            continue;
        }
        let f = b.velocity_fields(&unit(nv, i)).unwrap();
        assert!(f.div.iter().all(|v| v.abs() < 1e-13), "mode {i}");
    }
}

#[test]
fn depth_integrated_divergence_vanishes_for_any_velocity() {
    let b = basis(4, 2);
    let c: Vec<f64> = (0..b.n_velocity())
        .map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0)
        .collect();
    let f = b.velocity_fields(&c).unwrap();
    let col = b.depth_integral(&f.div).unwrap();
    assert!(col.iter().all(|v| v.abs() < 1e-12));
    // w vanishes at the surface as a consequence
    let g = &b.grid;
    let wtop: f64 = (0..g.nx * g.ny)
        .map(|h| {
            b.vertical_antiderivative_at(&f.div[h * g.nz..(h + 1) * g.nz], 0.0)
                .unwrap()
                .abs()
        })
        .fold(0.0, f64::max);
    assert!(wtop < 1e-12);
}

#[test]
fn boundary_conditions_hold_for_every_mode() {
    let b = basis(4, 2);
    let d = b.domain;
    let alpha = d.alpha_robin;
    let pts = [0.0, 0.37, 1.1, 2.5, PI];
    for i in 0..b.n_velocity() {
        for &x in &pts {
            for &y in &pts {
                for z in [0.0, -1.0] {
                    let dz = b.velocity_mode_dz_at(i, x, y, z);
                    assert!(dz[0].abs() < 1e-12 && dz[1].abs() < 1e-12);
                }
                let zz = -0.3;
                // u·n on the lateral walls
                if x == 0.0 || x == PI {
                    assert!(b.velocity_mode_at(i, x, y, zz)[0].abs() < 1e-12);
                }
                if y == 0.0 || y == PI {
                    assert!(b.velocity_mode_at(i, x, y, zz)[1].abs() < 1e-12);
                }
            }
        }
    }
    for i in 0..b.n_temp() {
        for &x in &pts {
            for &y in &pts {
                let (t0, dz0) = b.temp_mode_at(i, x, y, 0.0);
                assert!((dz0 + alpha * t0).abs() < 1e-12, "Robin mode {i}");
                let (_, dzb) = b.temp_mode_at(i, x, y, -1.0);
                assert!(dzb.abs() < 1e-12);
            }
        }
    }
}

#[test]
fn eigen_relation_by_finite_differences() {
    let b = basis(3, 2);
    let h = 1e-3;
    let lap = |f: &dyn Fn(f64, f64, f64) -> f64, x: f64, y: f64, z: f64| {
        let c = f(x, y, z);
        (f(x + h, y, z) + f(x - h, y, z) + f(x, y + h, z) + f(x, y - h, z) + f(x, y, z + h) + f(x, y, z - h) - 6.0 * c)
            / (h * h)
    };
    let (x, y, z) = (0.7, 1.9, -0.45);
    for i in 0..b.n_velocity() {
        let g = b.velocity[i].gamma;
        for comp in 0..2 {
            let f = |x, y, z| b.velocity_mode_at(i, x, y, z)[comp];
            let l = -lap(&f, x, y, z);
            assert!((l - g * f(x, y, z)).abs() < 1e-4 * (1.0 + g), "velocity mode {i}");
        }
    }
    for i in 0..b.n_temp() {
        let g = b.temperature[i].gamma;
        let f = |x, y, z| b.temp_mode_at(i, x, y, z).0;
        let l = -lap(&f, x, y, z);
        assert!((l - g * f(x, y, z)).abs() < 1e-4 * (1.0 + g), "temperature mode {i}");
    }
}

#[test]
fn robin_roots_are_bracketed_and_accurate() {
    for alpha in [0.2, 1.0, 5.0] {
        let r = robin_roots(alpha, 8).unwrap();
        for (k, &mu) in r.iter().enumerate() {
            let lo = k as f64 * PI;
            assert!(mu > lo && mu < lo + PI / 2.0);
            assert!(
                (mu * mu.tan() - alpha).abs() < 1e-12 * (1.0 + alpha),
                "alpha={alpha} k={k}"
            );
        }
    }
}

#[test]
fn robin_root_asymptotics_near_zero() {
    let alpha = 1e-6;
    let r = robin_roots(alpha, 2).unwrap();
    // μ₁ ≈ π + α/π
    assert!((r[1] - (PI + alpha / PI)).abs() < 1e-10);
}

#[test]
fn eigenvalues_are_sorted() {
    let b = basis(5, 3);
    assert!(b.velocity.windows(2).all(|w| w[0].gamma <= w[1].gamma));
    assert!(b.temperature.windows(2).all(|w| w[0].gamma <= w[1].gamma));
    assert!(b.velocity.iter().all(|m| m.gamma > 0.0));
}

#[test]
fn vertical_antiderivative_examples() {
    let b = basis(2, 2);
    let g = &b.grid;
    let n = g.len();
    let cos1: Vec<f64> = (0..n).map(|p| (PI * g.z[p % g.nz]).cos()).collect();
    let got = b.vertical_antiderivative(&cos1).unwrap();
    for (p, v) in got.iter().enumerate() {
        let z = g.z[p % g.nz];
        assert!((v - (PI * z).sin() / PI).abs() < 1e-13);
    }
    let ones = vec![1.0; n];
    let got = b.vertical_antiderivative(&ones).unwrap();
    for (p, v) in got.iter().enumerate() {
        assert!((v - (g.z[p % g.nz] + 1.0)).abs() < 1e-13);
    }
    let col: Vec<f64> = g.z.iter().map(|z| (PI * z).cos()).collect();
    assert!((b.vertical_antiderivative_at(&col, -0.25).unwrap() - (-0.25 * PI).sin() / PI).abs() < 1e-13);
}

#[test]
fn baroclinic_divergence_integrates_to_zero_over_depth() {
    let b = basis(3, 2);
    let nv = b.n_velocity();
    for (i, mode) in b.velocity.iter().enumerate() {
        if mode.family == VelocityFamily::BarotropicStreamfunction {
            continue;
        }
        let f = b.velocity_fields(&unit(nv, i)).unwrap();
        let anti = b.vertical_antiderivative(&f.div).unwrap();
        let g = &b.grid;
        for h in 0..g.nx * g.ny {
            let col = &f.div[h * g.nz..(h + 1) * g.nz];
            assert!(b.vertical_antiderivative_at(col, 0.0).unwrap().abs() < 1e-12);
        }
        // w from the fields agrees with the quadrature antiderivative
        for (a, w) in anti.iter().zip(&f.w) {
            assert!((a + w).abs() < 1e-12);
        }
    }
}

#[test]
fn triple_products_are_projected_exactly() {
    // Projection of (u·∇)θ-type products on the dealiased grid agrees with a
    // much finer grid.
    let dom = Domain::default();
    let tr = Truncation::new(3, 2).unwrap();
    let coarse = build_basis::<f64>(dom, tr).unwrap();
    let fine = SpectralBasis::<f64>::with_grid(dom, tr, 24, 24, 48).unwrap();
    let uc: Vec<f64> = (0..coarse.n_velocity())
        .map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3)
        .collect();
    let tc: Vec<f64> = (0..coarse.n_temp()).map(|i| ((i * 3 % 7) as f64 - 3.0) * 0.2).collect();
    let project = |b: &SpectralBasis<f64>| {
        let u = b.velocity_fields(&uc).unwrap();
        let t = b.temp_fields(&tc).unwrap();
        let adv: Vec<f64> = (0..b.grid.len())
            .map(|p| u.u1[p] * t.dx[p] + u.u2[p] * t.dy[p] + u.w[p] * t.dz[p])
            .collect();
        let nl1: Vec<f64> = (0..b.grid.len())
            .map(|p| u.u1[p] * u.dx_u1[p] + u.u2[p] * u.dy_u1[p] + u.w[p] * u.dz_u1[p])
            .collect();
        let nl2: Vec<f64> = (0..b.grid.len())
            .map(|p| u.u1[p] * u.dx_u2[p] + u.u2[p] * u.dy_u2[p] + u.w[p] * u.dz_u2[p])
            .collect();
        (
            b.temp_from_physical(&ScalarField(adv)).unwrap().0,
            b.velocity_from_physical(&VectorField { u1: nl1, u2: nl2 }).unwrap().0,
        )
    };
    let (ta, va) = project(&coarse);
    let (tb, vb) = project(&fine);
    for (a, b) in ta.iter().zip(&tb).chain(va.iter().zip(&vb)) {
        assert!((a - b).abs() < 1e-11, "{a} vs {b}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn round_trip_and_parseval(seed in 0u64..1000) {
        let b = basis(4, 2);
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0 };
        let vc: Vec<f64> = (0..b.n_velocity()).map(|_| next()).collect();
        let tc: Vec<f64> = (0..b.n_temp()).map(|_| next()).collect();
        let vf = b.velocity_to_physical(&VelocityCoeffs(vc.clone())).unwrap();
        let back = b.velocity_from_physical(&vf).unwrap();
        for (a, c) in vc.iter().zip(&back.0) {
            prop_assert!((a - c).abs() < 1e-10);
        }
        let energy = b.inner(&vf.u1, &vf.u1) + b.inner(&vf.u2, &vf.u2);
        let coef: f64 = vc.iter().map(|c| c * c).sum();
        prop_assert!((energy - coef).abs() < 1e-10 * coef.max(1.0));
        let tf = b.temp_to_physical(&TempCoeffs(tc.clone())).unwrap();
        let tb = b.temp_from_physical(&tf).unwrap();
        for (a, c) in tc.iter().zip(&tb.0) {
            prop_assert!((a - c).abs() < 1e-10);
        }
        let te = b.inner(&tf.0, &tf.0);
        let tcn: f64 = tc.iter().map(|c| c * c).sum();
        prop_assert!((te - tcn).abs() < 1e-10 * tcn.max(1.0));
    }
}
