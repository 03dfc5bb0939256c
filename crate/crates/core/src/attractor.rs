//! Pullback experiments at finite truncation: convergence of pullback
//! images, absorbing-ball estimates, the Lipschitz contraction diagnostic
//! and the Hausdorff semidistance.
//!
//! One noise seed stands for one `ω`. All trajectories of an experiment
//! read the same [`NoiseRealization`], and shifting the start time is an
//! index shift on its grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::noise::Verdict;
use crate::pesolver::{NoiseRealization, NoiseSample, Params, Solver, SpectralState};
use crate::scalar::Real;
use crate::spectral::SpectralBasis;

/// Slack on the monotone decrease of pullback diameters.
pub const PULLBACK_SLACK: f64 = 1.05;
/// Final pullback diameter must be below this fraction of `ρ`.
pub const PULLBACK_TOLERANCE: f64 = 1e-3;
/// The reported absorbing ball is this multiple of the trailing supremum.
pub const ABSORB_MARGIN: f64 = 2.0;
/// Allowed relative spread of `c*` across perturbation scales.
pub const LIPSCHITZ_SPREAD: f64 = 0.2;

/// `count` states with `‖(u, θ)‖₁ = rho`, coefficient `i` drawn uniformly
/// and damped by `1 / (1 + γ_i)` before normalization.
pub fn initial_states<T: Real>(
    basis: &SpectralBasis<T>,
    rho: T,
    count: usize,
    seed: u64,
    t: T,
) -> Vec<SpectralState<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut s = SpectralState::zeros(basis, t);
            for (c, m) in s.u.iter_mut().zip(&basis.velocity) {
                *c = T::lit(rng.random_range(-1.0..1.0)) / (T::one() + m.gamma);
            }
            for (c, m) in s.theta.iter_mut().zip(&basis.temperature) {
                *c = T::lit(rng.random_range(-1.0..1.0)) / (T::one() + m.gamma);
            }
            let r = s.v_norm(basis);
            if r > T::zero() {
                for c in s.u.iter_mut().chain(s.theta.iter_mut()) {
                    *c *= rho / r;
                }
            }
            s
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PullbackConfig<T> {
    /// Strictly decreasing start times, all below `eval_time`.
    pub start_times: Vec<T>,
    pub eval_time: T,
    pub rho: T,
    pub n_states: usize,
    pub state_seed: u64,
    pub dt: T,
}

impl<T: Real> PullbackConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.start_times.is_empty() {
            return invalid("no start times");
        }
        if self.start_times.windows(2).any(|w| !(w[1] < w[0])) {
            return invalid("start times must be strictly decreasing");
        }
        if self.start_times.iter().any(|&s| !(s < self.eval_time)) {
            return invalid("start times must precede the evaluation time");
        }
        if !(self.rho > T::zero()) {
            return invalid(format!("rho must be positive, got {}", self.rho));
        }
        if self.n_states == 0 {
            return invalid("need at least one initial state");
        }
        if !(self.dt > T::zero()) {
            return invalid("time step must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PullbackRow {
    pub s_start: f64,
    /// Largest V-distance between time-`eval_time` images.
    pub diameter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PullbackReport {
    pub rho: f64,
    pub rows: Vec<PullbackRow>,
    pub verdict: Verdict,
}

/// Largest pairwise V-distance in a set of states.
pub fn v_diameter<T: Real>(basis: &SpectralBasis<T>, states: &[SpectralState<T>]) -> T {
    let mut d = T::zero();
    for i in 0..states.len() {
        for j in i + 1..states.len() {
            d = d.max(states[i].v_distance(&states[j], basis));
        }
    }
    d
}

fn abort(e: Error, s: f64, seed: u64) -> Error {
    match e {
        Error::Diverged { t } => {
            Error::ExperimentAborted(format!("trajectory from s = {s} (seed {seed}) diverged at t = {t}"))
        }
        Error::StepRejected { cfl, suggested_dt, .. } => Error::ExperimentAborted(format!(
            "trajectory from s = {s} (seed {seed}) violated the CFL limit ({cfl:.3}); try dt <= {suggested_dt:.3e}"
        )),
        other => other,
    }
}

/// Evolve every initial state from each start time to `eval_time` under
/// one noise path and report the diameters of the images.
pub fn pullback_experiment<T: Real>(
    basis: &SpectralBasis<T>,
    params: &Params<T>,
    noise: Option<&NoiseRealization<T>>,
    noise_seed: u64,
    cfg: &PullbackConfig<T>,
) -> Result<PullbackReport> {
    cfg.validate()?;
    let earliest = *cfg.start_times.last().expect("validated non-empty");
    if let Some(n) = noise {
        if n.t_start() > earliest + cfg.dt * T::lit(1e-6) || n.t_end() < cfg.eval_time - cfg.dt * T::lit(1e-6) {
            return invalid("noise path does not cover the pullback window");
        }
    }
    let template = Solver::new(basis, params.clone())?;
    let cells: Vec<(usize, usize)> = (0..cfg.start_times.len())
        .flat_map(|a| (0..cfg.n_states).map(move |b| (a, b)))
        .collect();
    let images: Vec<SpectralState<T>> = cells
        .par_iter()
        .map(|&(a, b)| {
            let s = cfg.start_times[a];
            let init = initial_states(basis, cfg.rho, cfg.n_states, cfg.state_seed, s).swap_remove(b);
            let mut solver = template.clone();
            solver
                .advance_to(init, cfg.eval_time, cfg.dt, noise)
                .map_err(|e| abort(e, s.f64(), noise_seed))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<PullbackRow> = cfg
        .start_times
        .iter()
        .enumerate()
        .map(|(a, &s)| PullbackRow {
            s_start: s.f64(),
            diameter: v_diameter(basis, &images[a * cfg.n_states..(a + 1) * cfg.n_states]).f64(),
        })
        .collect();
    let rho = cfg.rho.f64();
    let monotone = rows.windows(2).all(|w| w[1].diameter <= PULLBACK_SLACK * w[0].diameter);
    let converged = rows.last().is_some_and(|r| r.diameter < PULLBACK_TOLERANCE * rho);
    Ok(PullbackReport {
        rho,
        rows,
        verdict: Verdict::from_bool(monotone && converged),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbsorbRow {
    pub rho: f64,
    /// Supremum of `‖(u, θ)‖₁` over the trailing window.
    pub trailing_sup: f64,
    /// First time after which the trajectory stays in the reported ball.
    pub entry_time: Option<f64>,
    pub absorbed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbsorbReport {
    pub rows: Vec<AbsorbRow>,
    /// Largest trailing supremum over the tested radii.
    pub r_estimate: f64,
    pub ball_radius: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbsorbConfig<T> {
    pub radii: Vec<T>,
    pub t_start: T,
    pub t_end: T,
    pub window: T,
    pub dt: T,
    pub state_seed: u64,
    /// Ball to test; `ABSORB_MARGIN` times the estimate when `None`.
    pub ball_radius: Option<T>,
}

/// Entry times into an absorbing ball for initial data of each radius.
///
/// A trajectory counts as absorbed when it stays inside the ball for at
/// least one full window before `t_end`; otherwise the row is reported as
/// not absorbed.
pub fn absorbing_radius<T: Real>(
    basis: &SpectralBasis<T>,
    params: &Params<T>,
    noise: Option<&NoiseRealization<T>>,
    cfg: &AbsorbConfig<T>,
) -> Result<AbsorbReport> {
    if cfg.radii.is_empty() || cfg.radii.iter().any(|&r| !(r >= T::zero())) {
        return invalid("radii must be non-negative and non-empty");
    }
    if !(cfg.window > T::zero()) || !(cfg.t_end - cfg.t_start > cfg.window) {
        return invalid("horizon must exceed the trailing window");
    }
    let template = Solver::new(basis, params.clone())?;
    let steps = ((cfg.t_end - cfg.t_start) / cfg.dt).round().to_usize().unwrap_or(0);
    let series: Vec<Vec<(f64, f64)>> = cfg
        .radii
        .par_iter()
        .map(|&rho| {
            let init = initial_states(basis, rho, 1, cfg.state_seed, cfg.t_start).swap_remove(0);
            let mut solver = template.clone();
            let mut out = vec![(cfg.t_start.f64(), init.v_norm(basis).f64())];
            let mut s = init;
            for k in 0..steps {
                s = solver
                    .step(&s, cfg.dt, noise)
                    .map_err(|e| abort(e, cfg.t_start.f64(), cfg.state_seed))?;
                s.t = cfg.t_start + cfg.dt * T::from_usize_lossy(k + 1);
                out.push((s.t.f64(), s.v_norm(basis).f64()));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let (t_end, window) = (cfg.t_end.f64(), cfg.window.f64());
    let sups: Vec<f64> = series
        .iter()
        .map(|s| {
            s.iter()
                .filter(|p| p.0 >= t_end - window - 1e-9)
                .map(|p| p.1)
                .fold(0.0, f64::max)
        })
        .collect();
    let r_est = sups.iter().copied().fold(0.0, f64::max);
    let ball = cfg.ball_radius.map_or(ABSORB_MARGIN * r_est, |r| r.f64());
    let rows: Vec<AbsorbRow> = cfg
        .radii
        .iter()
        .zip(&series)
        .zip(&sups)
        .map(|((&rho, s), &sup)| {
            let last_out = s.iter().rposition(|p| p.1 > ball);
            let entry = match last_out {
                None => Some(s[0].0),
                Some(i) if i + 1 < s.len() => Some(s[i + 1].0),
                Some(_) => None,
            };
            let absorbed = entry.is_some_and(|e| e <= t_end - window + 1e-9);
            AbsorbRow {
                rho: rho.f64(),
                trailing_sup: sup,
                entry_time: entry,
                absorbed,
            }
        })
        .collect();
    let ok = rows.iter().all(|r| r.absorbed);
    Ok(AbsorbReport {
        rows,
        r_estimate: r_est,
        ball_radius: ball,
        verdict: Verdict::from_bool(ok),
    })
}

fn h1_sq<T: Real>(c: &[T], g: &[T]) -> T {
    c.iter().zip(g).map(|(&v, &w)| w * v * v).sum()
}

fn h2_sq<T: Real>(c: &[T], g: &[T]) -> T {
    c.iter().zip(g).map(|(&v, &w)| w * w * v * v).sum()
}

/// Growth rate `ξ(t)` of the difference energy, built from the norms of
/// trajectories `a` and `b` and of the noise. `‖·‖₂` is the spectral
/// proxy `(Σ γ² c²)^{1/2}`.
pub fn contraction_xi<T: Real>(
    basis: &SpectralBasis<T>,
    a: &SpectralState<T>,
    b: &SpectralState<T>,
    noise: &NoiseSample<T>,
) -> T {
    let gv = basis.velocity_gammas();
    let gt = basis.temp_gammas();
    let (ua1, ua2) = (h1_sq(&a.u, &gv), h2_sq(&a.u, &gv));
    let (ub1, ub2) = (h1_sq(&b.u, &gv), h2_sq(&b.u, &gv));
    let (z1, z2) = (h1_sq(&noise.z1, &gv), h2_sq(&noise.z1, &gv));
    let tb2 = h2_sq(&b.theta, &gt);
    let tz: Vec<T> = b.theta.iter().zip(&noise.z2).map(|(&x, &y)| x + y).collect();
    let (tz1, tz2) = (h1_sq(&tz, &gt), h2_sq(&tz, &gt));
    (ua1.sqrt() + z1.sqrt()) * (ua2.sqrt() + z2.sqrt())
        + (ua1 + z1) * (ua2 + z2)
        + (ub1 + z1) * (ub2 + z2)
        + (ub2 + z2)
        + tb2
        + tz1 * tz2
        + T::one()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub times: Vec<f64>,
    pub eta: Vec<f64>,
    pub xi: Vec<f64>,
    /// `sup_t [log η(t) - log η(0)] / ∫_0^t ξ`.
    pub c_star: f64,
}

/// Evolve `a` and `b` under one noise path and record `η = ‖Δu‖₁² + ‖Δθ‖₁²`
/// and `ξ` on every step.
pub fn contraction_diagnostic<T: Real>(
    basis: &SpectralBasis<T>,
    params: &Params<T>,
    noise: Option<&NoiseRealization<T>>,
    a: SpectralState<T>,
    b: SpectralState<T>,
    horizon: T,
    dt: T,
) -> Result<ContractionReport> {
    a.check(basis)?;
    b.check(basis)?;
    let eta_of = |x: &SpectralState<T>, y: &SpectralState<T>| x.v_distance(y, basis).powi(2);
    let eta0 = eta_of(&a, &b);
    if !(eta0 > T::zero()) {
        return invalid("identical initial states: the contraction diagnostic needs eta(0) > 0");
    }
    let mut solver = Solver::new(basis, params.clone())?;
    let mut solver_b = solver.clone();
    let steps = (horizon / dt).round().to_usize().unwrap_or(0);
    let t0 = a.t;
    let (mut sa, mut sb) = (a, b);
    let xi0 = contraction_xi(basis, &sa, &sb, &NoiseSample::at(noise, basis, t0)?);
    let mut times = vec![t0.f64()];
    let mut eta = vec![eta0.f64()];
    let mut xi = vec![xi0.f64()];
    let mut integral = 0.0;
    let mut c_star = f64::NEG_INFINITY;
    for k in 0..steps {
        let t = t0 + dt * T::from_usize_lossy(k + 1);
        sa = solver.step(&sa, dt, noise)?;
        sb = solver_b.step(&sb, dt, noise)?;
        sa.t = t;
        sb.t = t;
        let e = eta_of(&sa, &sb).f64();
        let x = contraction_xi(basis, &sa, &sb, &NoiseSample::at(noise, basis, t)?).f64();
        integral += 0.5 * dt.f64() * (x + xi.last().copied().unwrap_or(x));
        if e > 0.0 {
            c_star = c_star.max((e.ln() - eta0.f64().ln()) / integral);
        }
        times.push(t.f64());
        eta.push(e);
        xi.push(x);
    }
    Ok(ContractionReport { times, eta, xi, c_star })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzRow {
    pub scale: f64,
    pub c_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub rows: Vec<LipschitzRow>,
    pub verdict: Verdict,
}

/// `c*` for perturbations `base + scale · direction` of `base`; PASS iff
/// every `c*` lies within 20% of the value at the smallest scale.
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_scaling<T: Real>(
    basis: &SpectralBasis<T>,
    params: &Params<T>,
    noise: Option<&NoiseRealization<T>>,
    base: &SpectralState<T>,
    direction: &SpectralState<T>,
    scales: &[T],
    horizon: T,
    dt: T,
) -> Result<LipschitzReport> {
    if scales.is_empty() {
        return invalid("no perturbation scales");
    }
    let rows: Vec<LipschitzRow> = scales
        .par_iter()
        .map(|&sc| {
            let mut b = base.clone();
            for (x, &d) in b.u.iter_mut().zip(&direction.u) {
                *x += sc * d;
            }
            for (x, &d) in b.theta.iter_mut().zip(&direction.theta) {
                *x += sc * d;
            }
            let r = contraction_diagnostic(basis, params, noise, base.clone(), b, horizon, dt)?;
            Ok(LipschitzRow {
                scale: sc.f64(),
                c_star: r.c_star,
            })
        })
        .collect::<Result<_>>()?;
    let reference = rows
        .iter()
        .min_by(|a, b| a.scale.partial_cmp(&b.scale).unwrap_or(std::cmp::Ordering::Equal))
        .map(|r| r.c_star)
        .unwrap_or(f64::NAN);
    let tol = LIPSCHITZ_SPREAD * reference.abs();
    let ok = reference.is_finite() && rows.iter().all(|r| (r.c_star - reference).abs() <= tol);
    Ok(LipschitzReport {
        rows,
        verdict: Verdict::from_bool(ok),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemiDistanceReport {
    pub distance: f64,
    /// Index into `A` attaining the supremum and its nearest point in `B`.
    pub witness: (usize, usize),
}

/// `d(A, B) = sup_{x ∈ A} inf_{y ∈ B} ‖x - y‖₁` by exhaustive search.
pub fn semidistance<T: Real>(
    basis: &SpectralBasis<T>,
    a: &[SpectralState<T>],
    b: &[SpectralState<T>],
) -> Result<SemiDistanceReport> {
    if a.is_empty() || b.is_empty() {
        return invalid("semidistance needs two nonempty sets");
    }
    let mut best = (T::neg_infinity(), (0, 0));
    for (i, x) in a.iter().enumerate() {
        let mut near = (T::infinity(), 0);
        for (j, y) in b.iter().enumerate() {
            let d = x.v_distance(y, basis);
            if d < near.0 {
                near = (d, j);
            }
        }
        if near.0 > best.0 {
            best = (near.0, (i, near.1));
        }
    }
    Ok(SemiDistanceReport {
        distance: best.0.f64(),
        witness: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_basis, Domain, Truncation};

    #[test]
    fn semidistance_examples() {
        let b = build_basis::<f64>(Domain::default(), Truncation::new(2, 1).unwrap()).unwrap();
        let s = initial_states(&b, 1.0, 4, 1, 0.0);
        assert_eq!(semidistance(&b, &s[..2], &s).unwrap().distance, 0.0);
        let d = semidistance(&b, &s[..1], &s[1..2]).unwrap();
        assert!((d.distance - s[0].v_distance(&s[1], &b)).abs() < 1e-15);
        assert!(semidistance(&b, &s[..0], &s).is_err());
    }

    #[test]
    fn initial_states_have_requested_norm() {
        let b = build_basis::<f64>(Domain::default(), Truncation::new(2, 1).unwrap()).unwrap();
        for s in initial_states(&b, 3.5, 3, 9, -2.0) {
            assert!((s.v_norm(&b) - 3.5).abs() < 1e-12);
            assert_eq!(s.t, -2.0);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = PullbackConfig {
            start_times: vec![-1.0, -2.0],
            eval_time: 0.0,
            rho: 1.0,
            n_states: 2,
            state_seed: 0,
            dt: 0.1,
        };
        assert!(c.validate().is_ok());
        c.start_times = vec![-2.0, -1.0];
        assert!(c.validate().is_err());
        c.start_times = vec![-1.0];
        c.rho = 0.0;
        assert!(c.validate().is_err());
    }
}
