use fracpe::error::Error;
use fracpe::noise::NoiseSpec;
use fracpe::pesolver::*;
use fracpe::spectral::{build_basis, Domain, SpectralBasis, TempCoeffs, Truncation, VectorField, VelocityFamily};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn basis(m: usize, k: usize) -> SpectralBasis<f64> {
    build_basis(Domain::default(), Truncation::new(m, k).unwrap()).unwrap()
}

/// Random state whose coefficient `i` has size `amp / (1 + γ_i)`.
fn random_state(b: &SpectralBasis<f64>, amp: f64, seed: u64) -> SpectralState<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = SpectralState::zeros(b, 0.0);
    for (c, m) in s.u.iter_mut().zip(&b.velocity) {
        *c = amp * rng.random_range(-1.0..1.0) / (1.0 + m.gamma);
    }
    for (c, m) in s.theta.iter_mut().zip(&b.temperature) {
        *c = amp * rng.random_range(-1.0..1.0) / (1.0 + m.gamma);
    }
    s
}

fn noise_spec() -> NoiseSpec<f64> {
    NoiseSpec::new(0.75, 1.0, 10.0, 0.35).unwrap()
}

#[test]
fn w_vanishes_for_barotropic_flow() {
    let b = basis(4, 2);
    let mut u = vec![0.0; b.n_velocity()];
    for (i, m) in b.velocity.iter().enumerate() {
        if m.family == VelocityFamily::BarotropicStreamfunction {
            u[i] = (i as f64 + 1.0).sin();
        }
    }
    let w = compute_w(&b, &u).unwrap();
    assert!(w.0.iter().all(|v| v.abs() < 1e-12));
    let z = compute_w(&b, &vec![0.0; b.n_velocity()]).unwrap();
    assert!(z.0.iter().all(|&v| v == 0.0));
}

#[test]
fn w_of_single_baroclinic_mode_matches_closed_form() {
    let b = basis(3, 2);
    let i = b
        .velocity
        .iter()
        .position(|m| m.family == VelocityFamily::BaroclinicX && (m.m, m.n, m.k) == (1, 0, 1))
        .unwrap();
    let mut u = vec![0.0; b.n_velocity()];
    u[i] = 1.0;
    let w = compute_w(&b, &u).unwrap();
    let s = b.velocity[i].scale;
    let g = &b.grid;
    let pi = std::f64::consts::PI;
    for ix in 0..g.nx {
        for iy in 0..g.ny {
            for iz in 0..g.nz {
                // u1 = s sin x cos πz, ∇·u = s cos x cos πz
                let want = -s * g.x[ix].cos() * (pi * g.z[iz]).sin() / pi;
                assert!((w.0[g.index(ix, iy, iz)] - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn barotropic_split_is_orthogonal_with_zero_mean_remainder() {
    let b = basis(4, 2);
    let s = random_state(&b, 3.0, 1);
    let (bar, tilde) = barotropic_split(&b, &s.u).unwrap();
    let n2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    assert!((n2(&s.u) - n2(&bar) - n2(&tilde)).abs() < 1e-12);
    let tf = b
        .velocity_to_physical(&fracpe::spectral::VelocityCoeffs(tilde))
        .unwrap();
    for m in b
        .depth_integral(&tf.u1)
        .unwrap()
        .into_iter()
        .chain(b.depth_integral(&tf.u2).unwrap())
    {
        assert!(m.abs() < 1e-12);
    }
    let mut only_k1 = vec![0.0; b.n_velocity()];
    for (i, m) in b.velocity.iter().enumerate() {
        if m.k == 1 {
            only_k1[i] = 1.0;
        }
    }
    let (bar1, _) = barotropic_split(&b, &only_k1).unwrap();
    assert!(bar1.iter().all(|&v| v == 0.0));
}

#[test]
fn transport_is_energy_neutral() {
    let b = basis(4, 2);
    let solver = Solver::new(&b, Params::default()).unwrap();
    for seed in 0..5 {
        let s = random_state(&b, 5.0, seed);
        let (du, dt) = solver.advection(&s.u, &s.theta).unwrap();
        let eu: f64 = du.iter().zip(&s.u).map(|(a, b)| a * b).sum();
        let et: f64 = dt.iter().zip(&s.theta).map(|(a, b)| a * b).sum();
        assert!(eu.abs() < 1e-8, "velocity pairing {eu}");
        assert!(et.abs() < 1e-8, "temperature pairing {et}");
    }
}

#[test]
fn surface_pressure_gradient_projects_to_zero() {
    let b = basis(4, 2);
    let g = &b.grid;
    let (lx, ly) = (b.domain.lx, b.domain.ly);
    let pi = std::f64::consts::PI;
    let mut px = vec![0.0; g.len()];
    let mut py = vec![0.0; g.len()];
    // p_s = Σ a_mn cos(m πx/Lx) cos(n πy/Ly)
    for ix in 0..g.nx {
        for iy in 0..g.ny {
            for iz in 0..g.nz {
                let p = g.index(ix, iy, iz);
                for m in 0..=4usize {
                    for n in 0..=4usize {
                        let a = 1.0 / (1.0 + (m + 2 * n) as f64);
                        let (kx, ky) = (m as f64 * pi / lx, n as f64 * pi / ly);
                        px[p] -= a * kx * (kx * g.x[ix]).sin() * (ky * g.y[iy]).cos();
                        py[p] -= a * ky * (kx * g.x[ix]).cos() * (ky * g.y[iy]).sin();
                    }
                }
            }
        }
    }
    let c = b.velocity_from_physical(&VectorField { u1: px, u2: py }).unwrap();
    assert!(c.0.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn pressure_matrix_matches_closed_form() {
    let b = basis(3, 2);
    let p = pressure_matrix(&b).unwrap();
    let pi = std::f64::consts::PI;
    for (i, vm) in b.velocity.iter().enumerate() {
        for (j, tm) in b.temperature.iter().enumerate() {
            let got = p.get(i, j);
            let matches = vm.family == VelocityFamily::BaroclinicX && (vm.m, vm.n) == (tm.m, tm.n)
                || vm.family == VelocityFamily::BaroclinicY && (vm.m, vm.n) == (tm.m, tm.n);
            if !matches {
                assert!(got.abs() < 1e-12, "({i},{j}) {got}");
                continue;
            }
            // ∫_{-1}^0 sin(μ(z+1)) cos(kπz) dz / μ
            let (mu, k) = (tm.mu, vm.k as f64);
            let (a, c) = (mu + k * pi, mu - k * pi);
            let zint = (-1f64).powi(vm.k as i32) * 0.5 * ((1.0 - a.cos()) / a + (1.0 - c.cos()) / c) / mu;
            let (kh, along, across) = match vm.family {
                VelocityFamily::BaroclinicX => (vm.m as f64, vm.m, vm.n),
                _ => (vm.n as f64, vm.n, vm.m),
            };
            let h_along = if along == 0 { pi } else { pi / 2.0 };
            let h_across = if across == 0 { pi } else { pi / 2.0 };
            let want = -kh * tm.scale * vm.scale * h_along * h_across * zint / tm.norm_const.sqrt();
            assert!(
                (got - want).abs() < 1e-11 * (1.0 + want.abs()),
                "({i},{j}) {got} vs {want}"
            );
        }
    }
}

#[test]
fn coriolis_matrix_matches_brute_force_quadrature() {
    let b = basis(2, 1);
    let (f0, beta) = (0.8, 0.3);
    let c = coriolis_matrix(&b, f0, beta);
    // composite Simpson in x and y, exact vertical integral
    let n = 400;
    let (lx, ly) = (b.domain.lx, b.domain.ly);
    let simpson = |i: usize| {
        if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };
    for i in 0..b.n_velocity() {
        for j in 0..b.n_velocity() {
            let (ki, kj) = (b.velocity[i].k, b.velocity[j].k);
            if ki != kj {
                assert_eq!(c.get(i, j), 0.0);
                continue;
            }
            let zfac = if ki == 0 { 1.0 } else { 0.5 };
            let mut acc = 0.0;
            for ix in 0..=n {
                let x = lx * ix as f64 / n as f64;
                for iy in 0..=n {
                    let y = ly * iy as f64 / n as f64;
                    let ei = b.velocity_mode_at(i, x, y, 0.0);
                    let ej = b.velocity_mode_at(j, x, y, 0.0);
                    acc += simpson(ix) * simpson(iy) * f0 * (beta + y) * (-ej[1] * ei[0] + ej[0] * ei[1]);
                }
            }
            let want = acc * (lx / n as f64 / 3.0) * (ly / n as f64 / 3.0) * zfac;
            assert!((c.get(i, j) - want).abs() < 1e-8, "({i},{j}) {} vs {want}", c.get(i, j));
        }
    }
}

#[test]
fn linear_steps_are_exact_exponentials() {
    let b = basis(3, 2);
    let mut solver = Solver::new(
        &b,
        Params {
            terms: Terms::linear(),
            ..Params::default()
        },
    )
    .unwrap();
    let mut s = SpectralState::zeros(&b, 0.0);
    s.u[7] = 1.3;
    s.theta[4] = -0.6;
    let dt = 0.01;
    let end = solver.integrate(s, dt, 1000, None, |_| Ok(())).unwrap();
    let t = 10.0;
    let want_u = 1.3 * (-b.velocity[7].gamma * t).exp();
    let want_t = -0.6 * (-b.temperature[4].gamma * t).exp();
    assert!(((end.u[7] - want_u) / want_u).abs() < 1e-12);
    assert!(((end.theta[4] - want_t) / want_t).abs() < 1e-12);
    assert!(end.u.iter().enumerate().all(|(i, &v)| i == 7 || v == 0.0));
}

#[test]
fn nonlinear_self_convergence_is_second_order() {
    let b = basis(3, 1);
    let noise =
        NoiseRealization::generate(&noise_spec().with_amplitude(5.0).unwrap(), &b, 3, 0.0, 1.0, 1.0 / 16.0).unwrap();
    let s0 = random_state(&b, 4.0, 9);
    let run = |dt: f64, every: usize| -> Vec<Vec<f64>> {
        let mut solver = Solver::new(&b, Params::default()).unwrap();
        let mut out = Vec::new();
        let mut k = 0;
        solver
            .integrate(s0.clone(), dt, (1.0 / dt).round() as usize, Some(&noise), |s| {
                k += 1;
                if k % every == 0 {
                    out.push(s.u.iter().chain(&s.theta).copied().collect());
                }
                Ok(())
            })
            .unwrap();
        out
    };
    let y1 = run(1.0 / 16.0, 1);
    let y2 = run(1.0 / 32.0, 2);
    let y3 = run(1.0 / 64.0, 4);
    let maxdiff = |a: &[Vec<f64>], c: &[Vec<f64>]| {
        a.iter()
            .zip(c)
            .flat_map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    };
    let order = (maxdiff(&y1, &y2) / maxdiff(&y2, &y3)).log2();
    assert!(order >= 1.8, "observed order {order}");
}

#[test]
fn unforced_energy_strictly_decreases() {
    let b = basis(4, 2);
    let params = Params {
        f0: 0.0,
        ..Params::default()
    };
    let gmin = b
        .velocity_gammas()
        .into_iter()
        .chain(b.temp_gammas())
        .fold(f64::INFINITY, f64::min);
    let dt = 0.02;
    for seed in 0..5 {
        let mut solver = Solver::new(&b, params.clone()).unwrap();
        let mut prev = random_state(&b, 0.1, seed);
        for _ in 0..100 {
            let next = solver.step(&prev, dt, None).unwrap();
            let (e0, e1) = (prev.l2_sq(), next.l2_sq());
            assert!(e1 < e0);
            assert!(e0 - e1 >= 2.0 * dt * 0.9 * gmin * e0 * (1.0 - gmin * dt));
            prev = next;
        }
    }
}

#[test]
fn temperature_norm_dual_paths_agree() {
    let b = basis(3, 2);
    let mut unit = vec![0.0; b.n_temp()];
    unit[6] = 1.0;
    let st = SpectralState {
        t: 0.0,
        u: vec![0.0; b.n_velocity()],
        theta: unit.clone(),
    };
    let r = norms(&b, &st).unwrap();
    assert!((r.th_h1.powi(2) - b.temperature[6].gamma).abs() < 1e-12);
    let one = b
        .temp_from_physical(&fracpe::spectral::ScalarField(vec![1.0; b.grid.len()]))
        .unwrap()
        .0;
    let spectral: f64 = one.iter().zip(&b.temperature).map(|(c, m)| m.gamma * c * c).sum();
    let quad = temp_h1_sq_quadrature(&b, &one).unwrap();
    assert!((spectral - quad).abs() < 1e-8, "{spectral} vs {quad}");
    let _ = TempCoeffs(one);
}

#[test]
fn cfl_violation_is_rejected_with_a_suggestion() {
    let b = basis(3, 1);
    let mut solver = Solver::new(&b, Params::default()).unwrap();
    let s = random_state(&b, 200.0, 2);
    match solver.step(&s, 0.5, None) {
        Err(Error::StepRejected {
            cfl,
            limit,
            suggested_dt,
        }) => {
            assert!(cfl > limit);
            assert!(suggested_dt < 0.5);
            let cfl2 = solver
                .cfl_number(&s.u, &vec![0.0; b.n_velocity()], suggested_dt)
                .unwrap();
            assert!(cfl2 <= limit);
        }
        other => panic!("expected rejection, got {other:?}"),
    }
}

#[test]
fn split_runs_match_unbroken_runs_bitwise() {
    let b = basis(3, 1);
    let noise = NoiseRealization::generate(&noise_spec(), &b, 5, -1.0, 1.0, 0.02).unwrap();
    let s0 = SpectralState {
        t: -1.0,
        ..random_state(&b, 2.0, 4)
    };
    let mut solver = Solver::new(&b, Params::default()).unwrap();
    let whole = solver.advance_to(s0.clone(), 1.0, 0.02, Some(&noise)).unwrap();
    let half = solver.advance_to(s0, 0.0, 0.02, Some(&noise)).unwrap();
    let mut buf = Vec::new();
    half.write_snapshot(&mut buf).unwrap();
    let restored = SpectralState::read_snapshot(&buf[..], &b).unwrap();
    assert_eq!(restored, half);
    let rest = solver.advance_to(restored, 1.0, 0.02, Some(&noise)).unwrap();
    assert_eq!(rest, whole);
}

#[test]
fn noisy_trajectories_stay_finite() {
    let b = basis(4, 2);
    let spec = noise_spec();
    let mut q = vec![0.0; b.n_temp()];
    q[0] = 1.0;
    for seed in 0..4 {
        let noise = NoiseRealization::generate(&spec, &b, seed, 0.0, 20.0, 0.02).unwrap();
        let mut solver = Solver::new(
            &b,
            Params {
                q_coeffs: q.clone(),
                ..Params::default()
            },
        )
        .unwrap();
        let mut s0 = random_state(&b, 1.0, seed);
        let r = s0.v_norm(&b);
        for c in s0.u.iter_mut().chain(s0.theta.iter_mut()) {
            *c *= 10.0 / r;
        }
        let end = solver.advance_to(s0, 20.0, 0.02, Some(&noise)).unwrap();
        assert!(end.is_finite());
        assert!(end.v_norm(&b) < 10.0);
    }
}

#[test]
fn recover_physical_is_a_coefficient_sum() {
    let b = basis(2, 1);
    let s = random_state(&b, 1.0, 3);
    let z1: Vec<f64> = (0..b.n_velocity()).map(|i| i as f64).collect();
    let z2: Vec<f64> = (0..b.n_temp()).map(|i| -(i as f64)).collect();
    let (v, t) = recover_physical(&b, &s, &vec![0.0; b.n_velocity()], &vec![0.0; b.n_temp()]).unwrap();
    assert_eq!((v, t), (s.u.clone(), s.theta.clone()));
    let zero = SpectralState::zeros(&b, 0.0);
    let (v, t) = recover_physical(&b, &zero, &z1, &z2).unwrap();
    assert_eq!((v, t), (z1.clone(), z2.clone()));
    assert!(recover_physical(&b, &s, &z1[1..], &z2).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn l4_dominates_scaled_l2(seed in 0u64..10_000) {
        let b = basis(3, 2);
        let s = random_state(&b, 3.0, seed);
        let r = norms(&b, &s).unwrap();
        let (_, tilde) = barotropic_split(&b, &s.u).unwrap();
        let l2 = tilde.iter().map(|c| c * c).sum::<f64>().sqrt();
        let vol = b.domain.lx * b.domain.ly;
        prop_assert!(r.u_tilde_l4 >= l2 / vol.powf(0.25) * (1.0 - 1e-12));
        prop_assert!(r.u_h1 >= b.velocity[0].gamma.sqrt() * r.u_l2 * (1.0 - 1e-12));
        prop_assert!(r.th_h1 >= b.temperature[0].gamma.sqrt() * r.th_l2 * (1.0 - 1e-12));
    }

    #[test]
    fn depth_integrated_divergence_vanishes(seed in 0u64..10_000) {
        let b = basis(3, 2);
        let s = random_state(&b, 10.0, seed);
        let vf = b.velocity_fields(&s.u).unwrap();
        for d in b.depth_integral(&vf.div).unwrap() {
            prop_assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn temperature_transport_is_neutral(seed in 0u64..10_000) {
        let b = basis(3, 1);
        let solver = Solver::new(&b, Params::default()).unwrap();
        let s = random_state(&b, 3.0, seed);
        let (_, dt) = solver.advection(&s.u, &s.theta).unwrap();
        let e: f64 = dt.iter().zip(&s.theta).map(|(a, b)| a * b).sum();
        prop_assert!(e.abs() < 1e-8);
    }
}
