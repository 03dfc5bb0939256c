//! Galerkin integration of the transformed primitive equations for
//! `u = v - Z₁` and `θ = T - Z₂`.
//!
//! Velocity and temperature are carried as coefficients in the eigenbases
//! of [`crate::spectral`], so diffusion is diagonal with unit viscosity.
//! Advection is evaluated on the dealiased collocation grid and projected
//! back. Coriolis and the hydrostatic pressure gradient are linear and
//! precomputed as dense Galerkin matrices. The surface pressure gradient
//! is orthogonal to the velocity span and never formed.
//!
//! Time stepping is the second-order exponential Runge-Kutta scheme of Cox
//! and Matthews: diffusion is integrated exactly per mode, the remaining
//! terms enter through `φ₁` and `φ₂` weights.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::io::{read_matrix, write_matrix};
use crate::linalg::Mat;
use crate::noise::{stationary_convolution, ConvolutionPath, NoiseField, NoiseSpec};
use crate::quadrature::gauss_legendre;
use crate::scalar::Real;
use crate::spectral::{ScalarField, SpectralBasis, VectorField, VelocityFamily};

/// Advective CFL limit enforced by [`Solver::step`].
pub const CFL_LIMIT: f64 = 0.5;

/// Which non-diffusive terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Terms {
    pub advection: bool,
    pub coriolis: bool,
    pub pressure: bool,
}

impl Default for Terms {
    fn default() -> Self {
        Self {
            advection: true,
            coriolis: true,
            pressure: true,
        }
    }
}

impl Terms {
    /// Diffusion and forcing only.
    pub fn linear() -> Self {
        Self {
            advection: false,
            coriolis: false,
            pressure: false,
        }
    }
}

/// Physical parameters. Viscosity and diffusivity are fixed to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub f0: T,
    /// Offset in the Coriolis parameter `f = f₀ (β + y)`.
    pub beta_coriolis: T,
    /// Heat source in the temperature basis; empty means zero.
    pub q_coeffs: Vec<T>,
    pub terms: Terms,
}

impl<T: Real> Default for Params<T> {
    fn default() -> Self {
        Self {
            f0: T::one(),
            beta_coriolis: T::zero(),
            q_coeffs: Vec::new(),
            terms: Terms::default(),
        }
    }
}

impl<T: Real> Params<T> {
    fn validate(&self, basis: &SpectralBasis<T>) -> Result<()> {
        if !self.f0.is_finite() || !self.beta_coriolis.is_finite() {
            return invalid("Coriolis parameters must be finite");
        }
        if !self.q_coeffs.is_empty() && self.q_coeffs.len() != basis.n_temp() {
            return Err(Error::BasisMismatch(format!(
                "heat source has {} coefficients, basis has {} temperature modes",
                self.q_coeffs.len(),
                basis.n_temp()
            )));
        }
        if self.q_coeffs.iter().any(|q| !q.is_finite()) {
            return invalid("heat source coefficients must be finite");
        }
        Ok(())
    }
}

/// Evolved coefficients `(u, θ)` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState<T> {
    pub t: T,
    pub u: Vec<T>,
    pub theta: Vec<T>,
}

impl<T: Real> SpectralState<T> {
    pub fn zeros(basis: &SpectralBasis<T>, t: T) -> Self {
        Self {
            t,
            u: vec![T::zero(); basis.n_velocity()],
            theta: vec![T::zero(); basis.n_temp()],
        }
    }

    pub fn check(&self, basis: &SpectralBasis<T>) -> Result<()> {
        if self.u.len() != basis.n_velocity() || self.theta.len() != basis.n_temp() {
            return Err(Error::BasisMismatch(format!(
                "state has ({}, {}) coefficients, basis has ({}, {})",
                self.u.len(),
                self.theta.len(),
                basis.n_velocity(),
                basis.n_temp()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.theta).all(|v| v.is_finite())
    }

    /// `‖u‖₁² + ‖θ‖₁²` in the diagonal form.
    pub fn v_norm_sq(&self, basis: &SpectralBasis<T>) -> T {
        weighted_sq(&self.u, basis.velocity.iter().map(|m| m.gamma))
            + weighted_sq(&self.theta, basis.temperature.iter().map(|m| m.gamma))
    }

    pub fn v_norm(&self, basis: &SpectralBasis<T>) -> T {
        self.v_norm_sq(basis).sqrt()
    }

    /// `|u|₂² + |θ|₂²`.
    pub fn l2_sq(&self) -> T {
        self.u.iter().chain(&self.theta).map(|&v| v * v).sum()
    }

    /// V-distance `(‖Δu‖₁² + ‖Δθ‖₁²)^{1/2}`.
    pub fn v_distance(&self, other: &Self, basis: &SpectralBasis<T>) -> T {
        let du: Vec<T> = self.u.iter().zip(&other.u).map(|(&a, &b)| a - b).collect();
        let dt: Vec<T> = self.theta.iter().zip(&other.theta).map(|(&a, &b)| a - b).collect();
        (weighted_sq(&du, basis.velocity.iter().map(|m| m.gamma))
            + weighted_sq(&dt, basis.temperature.iter().map(|m| m.gamma)))
        .sqrt()
    }

    /// Snapshot in the binary matrix layout: one row `[t, u..., θ...]`.
    pub fn write_snapshot<W: Write>(&self, w: W) -> Result<()> {
        let mut row = Vec::with_capacity(1 + self.u.len() + self.theta.len());
        row.push(self.t.f64());
        row.extend(self.u.iter().chain(&self.theta).map(|v| v.f64()));
        write_matrix(w, 1, row.len(), &row)
    }

    pub fn read_snapshot<R: Read>(r: R, basis: &SpectralBasis<T>) -> Result<Self> {
        let (rows, cols, data) = read_matrix(r)?;
        let (nv, nt) = (basis.n_velocity(), basis.n_temp());
        if rows != 1 || cols != 1 + nv + nt {
            return Err(Error::BasisMismatch(format!(
                "snapshot is {rows}x{cols}, expected 1x{}",
                1 + nv + nt
            )));
        }
        Ok(Self {
            t: T::lit(data[0]),
            u: data[1..1 + nv].iter().map(|&v| T::lit(v)).collect(),
            theta: data[1 + nv..].iter().map(|&v| T::lit(v)).collect(),
        })
    }
}

fn weighted_sq<T: Real>(c: &[T], w: impl Iterator<Item = T>) -> T {
    c.iter().zip(w).map(|(&v, g)| g * v * v).sum()
}

/// The two noise paths driving a run and the shift `β` of their forcing.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization<T> {
    pub velocity: ConvolutionPath<T>,
    pub temperature: ConvolutionPath<T>,
    pub beta_shift: T,
}

impl<T: Real> NoiseRealization<T> {
    /// Stationary `Z₁`, `Z₂` on `[t_start, t_end]` for one seed.
    pub fn generate(
        spec: &NoiseSpec<T>,
        basis: &SpectralBasis<T>,
        seed: u64,
        t_start: T,
        t_end: T,
        dt: T,
    ) -> Result<Self> {
        Ok(Self {
            velocity: stationary_convolution(spec, basis, NoiseField::Velocity, seed, t_start, t_end, dt)?,
            temperature: stationary_convolution(spec, basis, NoiseField::Temperature, seed, t_start, t_end, dt)?,
            beta_shift: spec.beta_shift,
        })
    }

    pub fn t_start(&self) -> T {
        self.velocity.t0.max(self.temperature.t0)
    }

    pub fn t_end(&self) -> T {
        self.velocity.t_end().min(self.temperature.t_end())
    }
}

/// Noise coefficients `Z₁(t)`, `Z₂(t)` handed to the right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSample<T> {
    pub z1: Vec<T>,
    pub z2: Vec<T>,
    pub beta_shift: T,
}

impl<T: Real> NoiseSample<T> {
    pub fn zero(basis: &SpectralBasis<T>) -> Self {
        Self {
            z1: vec![T::zero(); basis.n_velocity()],
            z2: vec![T::zero(); basis.n_temp()],
            beta_shift: T::zero(),
        }
    }

    pub fn at(noise: Option<&NoiseRealization<T>>, basis: &SpectralBasis<T>, t: T) -> Result<Self> {
        match noise {
            None => Ok(Self::zero(basis)),
            Some(n) => {
                let s = Self {
                    z1: n.velocity.coeffs_at(t)?,
                    z2: n.temperature.coeffs_at(t)?,
                    beta_shift: n.beta_shift,
                };
                if s.z1.len() != basis.n_velocity() || s.z2.len() != basis.n_temp() {
                    return Err(Error::BasisMismatch("noise paths were built on another basis".into()));
                }
                Ok(s)
            }
        }
    }
}

/// One row of trajectory diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub t: f64,
    pub u_l2: f64,
    pub u_h1: f64,
    pub u_tilde_l4: f64,
    pub grad_ubar_l2: f64,
    pub uz_l2: f64,
    pub th_l2: f64,
    pub th_l4: f64,
    pub th_h1: f64,
}

/// Separable factor of one velocity component: `coef · X(m x) · Y(n y) · cos(kπz)`,
/// with `X = sin` for `u1` and `cos` for `u2`, `Y` the other way round.
fn component_coefs<T: Real>(basis: &SpectralBasis<T>, i: usize) -> [T; 2] {
    let mode = &basis.velocity[i];
    let d = &basis.domain;
    match mode.family {
        VelocityFamily::BarotropicStreamfunction => [mode.scale * d.ky(mode.n), -mode.scale * d.kx(mode.m)],
        VelocityFamily::BaroclinicX => [mode.scale, T::zero()],
        VelocityFamily::BaroclinicY => [T::zero(), mode.scale],
    }
}

/// `∫_0^L w(s) a(k_a s) b(k_b s) ds` for every pair of wavenumber indices,
/// where `a`, `b` are sin or cos, by Gauss-Legendre quadrature.
fn product_table(len: f64, kmax: usize, a_sin: bool, b_sin: bool, weight: &dyn Fn(f64) -> f64) -> Vec<Vec<f64>> {
    let (x, w) = gauss_legendre(2 * kmax + 24);
    let k = std::f64::consts::PI / len;
    let f = |s: bool, v: f64| if s { v.sin() } else { v.cos() };
    (0..=kmax)
        .map(|a| {
            (0..=kmax)
                .map(|b| {
                    x.iter()
                        .zip(&w)
                        .map(|(&xi, &wi)| {
                            let s = 0.5 * len * (xi + 1.0);
                            0.5 * len * wi * weight(s) * f(a_sin, k * a as f64 * s) * f(b_sin, k * b as f64 * s)
                        })
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// Galerkin matrix `C[i][j] = ⟨f(y) e_j^⊥, e_i⟩` with `f = f₀(β + y)` and
/// `v^⊥ = (-v₂, v₁)`, from exact one-dimensional integrals.
pub fn coriolis_matrix<T: Real>(basis: &SpectralBasis<T>, f0: T, beta: T) -> Mat<T> {
    let n = basis.n_velocity();
    let mm = basis.truncation.m;
    let (lx, ly) = (basis.domain.lx.f64(), basis.domain.ly.f64());
    let b = beta.f64();
    let one = |_: f64| 1.0;
    let fy = |y: f64| b + y;
    // x: ∫ cos(m_j) sin(m_i) and ∫ sin(m_j) cos(m_i)
    let x_cs = product_table(lx, mm, false, true, &one);
    let x_sc = product_table(lx, mm, true, false, &one);
    let y_sc = product_table(ly, mm, true, false, &fy);
    let y_cs = product_table(ly, mm, false, true, &fy);
    let coefs: Vec<[f64; 2]> = (0..n).map(|i| component_coefs(basis, i).map(|c| c.f64())).collect();
    let f0 = f0.f64();
    Mat::from_fn(n, n, |i, j| {
        let (ei, ej) = (&basis.velocity[i], &basis.velocity[j]);
        if ei.k != ej.k {
            return T::zero();
        }
        let iz = if ei.k == 0 { 1.0 } else { 0.5 };
        // -e_j2 e_i1 + e_j1 e_i2
        let a = -coefs[j][1] * coefs[i][0] * x_cs[ej.m][ei.m] * y_sc[ej.n][ei.n];
        let c = coefs[j][0] * coefs[i][1] * x_sc[ej.m][ei.m] * y_cs[ej.n][ei.n];
        T::lit(f0 * iz * (a + c))
    })
}

/// Galerkin matrix of `θ ↦ P ∫_{-1}^z ∇θ dz'` onto the velocity basis.
///
/// Projections onto streamfunction modes vanish by integration by parts
/// and are set to zero.
pub fn pressure_matrix<T: Real>(basis: &SpectralBasis<T>) -> Result<Mat<T>> {
    let (nv, nt) = (basis.n_velocity(), basis.n_temp());
    let mut p = Mat::zeros(nv, nt);
    let mut unit = vec![T::zero(); nt];
    for j in 0..nt {
        unit[j] = T::one();
        let col = hydrostatic_projection(basis, &unit)?;
        unit[j] = T::zero();
        for (i, &v) in col.iter().enumerate() {
            if basis.velocity[i].family != VelocityFamily::BarotropicStreamfunction {
                p.set(i, j, v);
            }
        }
    }
    Ok(p)
}

/// Pseudo-spectral projection of `∫_{-1}^z ∇θ dz'` onto the velocity basis.
pub fn hydrostatic_projection<T: Real>(basis: &SpectralBasis<T>, theta: &[T]) -> Result<Vec<T>> {
    let tf = basis.temp_fields(theta)?;
    let gx = basis.vertical_antiderivative(&tf.dx)?;
    let gy = basis.vertical_antiderivative(&tf.dy)?;
    Ok(basis.velocity_from_physical(&VectorField { u1: gx, u2: gy })?.0)
}

/// `w = -∫_{-1}^z ∇·u dz'` on the collocation grid.
pub fn compute_w<T: Real>(basis: &SpectralBasis<T>, u: &[T]) -> Result<ScalarField<T>> {
    let vf = basis.velocity_fields(u)?;
    let negdiv: Vec<T> = vf.div.iter().map(|&v| -v).collect();
    Ok(ScalarField(basis.vertical_antiderivative(&negdiv)?))
}

/// Barotropic part `ū` (streamfunction modes) and baroclinic remainder `ũ`.
pub fn barotropic_split<T: Real>(basis: &SpectralBasis<T>, u: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    if u.len() != basis.n_velocity() {
        return Err(Error::BasisMismatch("velocity coefficient count".into()));
    }
    let mut bar = u.to_vec();
    let mut tilde = u.to_vec();
    for (i, m) in basis.velocity.iter().enumerate() {
        if m.family == VelocityFamily::BarotropicStreamfunction {
            tilde[i] = T::zero();
        } else {
            bar[i] = T::zero();
        }
    }
    Ok((bar, tilde))
}

/// `(v, T) = (u + Z₁, θ + Z₂)`; the noise coefficients already carry the
/// `λ^{1/2}` weights.
pub fn recover_physical<T: Real>(
    basis: &SpectralBasis<T>,
    state: &SpectralState<T>,
    z1: &[T],
    z2: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    state.check(basis)?;
    if z1.len() != state.u.len() || z2.len() != state.theta.len() {
        return Err(Error::BasisMismatch("noise coefficients do not match the state".into()));
    }
    Ok((
        state.u.iter().zip(z1).map(|(&a, &b)| a + b).collect(),
        state.theta.iter().zip(z2).map(|(&a, &b)| a + b).collect(),
    ))
}

/// `(∫|f|⁴)^{1/4}` of a horizontal vector field sampled on the grid.
fn vector_l4<T: Real>(basis: &SpectralBasis<T>, f: &VectorField<T>) -> T {
    let mag: Vec<T> = f.u1.iter().zip(&f.u2).map(|(&a, &b)| (a * a + b * b).sqrt()).collect();
    basis.integrate_abs_pow(&mag, 4).powf(T::lit(0.25))
}

/// Energy functionals of the evolved state.
pub fn norms<T: Real>(basis: &SpectralBasis<T>, state: &SpectralState<T>) -> Result<EnergyReport> {
    state.check(basis)?;
    let mut u2 = T::zero();
    let mut uh1 = T::zero();
    let mut bar_h1 = T::zero();
    let mut uz = T::zero();
    for (m, &c) in basis.velocity.iter().zip(&state.u) {
        u2 += c * c;
        uh1 += m.gamma * c * c;
        if m.family == VelocityFamily::BarotropicStreamfunction {
            bar_h1 += m.gamma * c * c;
        } else {
            uz += basis.domain.kz(m.k).powi(2) * c * c;
        }
    }
    let th2: T = state.theta.iter().map(|&c| c * c).sum();
    let th1 = weighted_sq(&state.theta, basis.temperature.iter().map(|m| m.gamma));
    let (_, tilde) = barotropic_split(basis, &state.u)?;
    let tf = basis.velocity_to_physical(&crate::spectral::VelocityCoeffs(tilde))?;
    let tt = basis.temp_to_physical(&crate::spectral::TempCoeffs(state.theta.clone()))?;
    Ok(EnergyReport {
        t: state.t.f64(),
        u_l2: u2.sqrt().f64(),
        u_h1: uh1.sqrt().f64(),
        u_tilde_l4: vector_l4(basis, &tf).f64(),
        grad_ubar_l2: bar_h1.sqrt().f64(),
        uz_l2: uz.sqrt().f64(),
        th_l2: th2.sqrt().f64(),
        th_l4: basis.integrate_abs_pow(&tt.0, 4).powf(T::lit(0.25)).f64(),
        th_h1: th1.sqrt().f64(),
    })
}

/// `‖θ‖₁² = ∫ |∇θ|² + θ_z² + α ∫_{z=0} θ²` by quadrature, the surface term
/// from pointwise evaluation on the horizontal grid.
pub fn temp_h1_sq_quadrature<T: Real>(basis: &SpectralBasis<T>, theta: &[T]) -> Result<T> {
    let tf = basis.temp_fields(theta)?;
    let bulk = basis.inner(&tf.dx, &tf.dx) + basis.inner(&tf.dy, &tf.dy) + basis.inner(&tf.dz, &tf.dz);
    let g = &basis.grid;
    let mut surf = T::zero();
    for &x in &g.x {
        for &y in &g.y {
            let v: T = theta
                .iter()
                .enumerate()
                .map(|(i, &c)| c * basis.temp_mode_at(i, x, y, T::zero()).0)
                .sum();
            surf += v * v;
        }
    }
    Ok(bulk + basis.domain.alpha_robin * surf * g.wx * g.wy)
}

/// `φ₁(z) = (e^z - 1)/z` and `φ₂(z) = (e^z - 1 - z)/z²` for `z <= 0`.
pub fn phi_functions<T: Real>(z: T) -> (T, T) {
    if z.abs() < T::lit(1e-3) {
        let z2 = z * z;
        let p1 = T::one() + z / T::lit(2.0) + z2 / T::lit(6.0) + z2 * z / T::lit(24.0) + z2 * z2 / T::lit(120.0);
        let p2 = T::lit(0.5) + z / T::lit(6.0) + z2 / T::lit(24.0) + z2 * z / T::lit(120.0) + z2 * z2 / T::lit(720.0);
        (p1, p2)
    } else {
        let em1 = z.exp_m1();
        (em1 / z, (em1 - z) / (z * z))
    }
}

/// Per-mode exponential weights for one step length.
#[derive(Debug, Clone)]
struct EtdWeights<T> {
    dt: T,
    e: Vec<T>,
    p1: Vec<T>,
    p2: Vec<T>,
}

impl<T: Real> EtdWeights<T> {
    fn new(gammas: &[T], dt: T) -> Self {
        let mut e = Vec::with_capacity(gammas.len());
        let mut p1 = Vec::with_capacity(gammas.len());
        let mut p2 = Vec::with_capacity(gammas.len());
        for &g in gammas {
            let z = -g * dt;
            let (a, b) = phi_functions(z);
            e.push(z.exp());
            p1.push(dt * a);
            p2.push(dt * b);
        }
        Self { dt, e, p1, p2 }
    }
}

/// Right-hand side and stepper for one basis and parameter set.
#[derive(Debug, Clone)]
pub struct Solver<'a, T> {
    pub basis: &'a SpectralBasis<T>,
    pub params: Params<T>,
    coriolis: Mat<T>,
    pressure: Mat<T>,
    gammas: Vec<T>,
    n_vel: usize,
    weights: Option<EtdWeights<T>>,
}

impl<'a, T: Real> Solver<'a, T> {
    pub fn new(basis: &'a SpectralBasis<T>, params: Params<T>) -> Result<Self> {
        params.validate(basis)?;
        let coriolis = coriolis_matrix(basis, params.f0, params.beta_coriolis);
        let pressure = pressure_matrix(basis)?;
        let mut gammas = basis.velocity_gammas();
        gammas.extend(basis.temp_gammas());
        Ok(Self {
            basis,
            params,
            coriolis,
            pressure,
            gammas,
            n_vel: basis.n_velocity(),
            weights: None,
        })
    }

    pub fn coriolis(&self) -> &Mat<T> {
        &self.coriolis
    }

    pub fn pressure(&self) -> &Mat<T> {
        &self.pressure
    }

    /// Advection of the full fields, projected: returns
    /// `(-P[(v·∇)v + w ∂_z v], -P[(v·∇)T + w ∂_z T])` with `v = u + Z₁`, `T = θ + Z₂`.
    pub fn advection(&self, v: &[T], temp: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let b = self.basis;
        let vf = b.velocity_fields(v)?;
        let tf = b.temp_fields(temp)?;
        let n = vf.u1.len();
        let mut a1 = Vec::with_capacity(n);
        let mut a2 = Vec::with_capacity(n);
        let mut at = Vec::with_capacity(n);
        for p in 0..n {
            let (x, y, w) = (vf.u1[p], vf.u2[p], vf.w[p]);
            a1.push(-(x * vf.dx_u1[p] + y * vf.dy_u1[p] + w * vf.dz_u1[p]));
            a2.push(-(x * vf.dx_u2[p] + y * vf.dy_u2[p] + w * vf.dz_u2[p]));
            at.push(-(x * tf.dx[p] + y * tf.dy[p] + w * tf.dz[p]));
        }
        let du = b.velocity_from_physical(&VectorField { u1: a1, u2: a2 })?.0;
        let dt = b.temp_from_physical(&ScalarField(at))?.0;
        Ok((du, dt))
    }

    /// All terms except diffusion, concatenated `[u..., θ...]`.
    fn forcing(&self, y: &[T], noise: &NoiseSample<T>) -> Result<Vec<T>> {
        let nv = self.n_vel;
        let (u, th) = y.split_at(nv);
        let v: Vec<T> = u.iter().zip(&noise.z1).map(|(&a, &b)| a + b).collect();
        let temp: Vec<T> = th.iter().zip(&noise.z2).map(|(&a, &b)| a + b).collect();
        let mut out: Vec<T> = noise
            .z1
            .iter()
            .chain(&noise.z2)
            .map(|&z| noise.beta_shift * z)
            .collect();
        let terms = self.params.terms;
        if terms.advection {
            let (du, dt) = self.advection(&v, &temp)?;
            for (o, d) in out.iter_mut().zip(du.into_iter().chain(dt)) {
                *o += d;
            }
        }
        if terms.coriolis {
            let c = self.coriolis.matvec(&v);
            for (o, d) in out[..nv].iter_mut().zip(c) {
                *o -= d;
            }
        }
        if terms.pressure {
            let p = self.pressure.matvec(&temp);
            for (o, d) in out[..nv].iter_mut().zip(p) {
                *o += d;
            }
        }
        for (o, &q) in out[nv..].iter_mut().zip(&self.params.q_coeffs) {
            *o += q;
        }
        Ok(out)
    }

    /// Full time derivative `(du/dt, dθ/dt)` including diffusion.
    pub fn tendency(&self, state: &SpectralState<T>, noise: &NoiseSample<T>) -> Result<(Vec<T>, Vec<T>)> {
        state.check(self.basis)?;
        self.check_noise(noise)?;
        let y: Vec<T> = state.u.iter().chain(&state.theta).copied().collect();
        let mut f = self.forcing(&y, noise)?;
        for ((o, &g), &c) in f.iter_mut().zip(&self.gammas).zip(&y) {
            *o -= g * c;
        }
        let th = f.split_off(self.n_vel);
        Ok((f, th))
    }

    fn check_noise(&self, noise: &NoiseSample<T>) -> Result<()> {
        if noise.z1.len() != self.n_vel || noise.z2.len() != self.basis.n_temp() {
            return Err(Error::BasisMismatch("noise sample does not match the basis".into()));
        }
        Ok(())
    }

    /// Advective CFL number `dt (max|v_h| / min(Δx, Δy) + max|w| (K + 1))`
    /// of the full velocity `u + Z₁`.
    pub fn cfl_number(&self, u: &[T], z1: &[T], dt: T) -> Result<T> {
        let b = self.basis;
        let v: Vec<T> = u.iter().zip(z1).map(|(&a, &c)| a + c).collect();
        let vf = b.velocity_fields(&v)?;
        let vh = vf
            .u1
            .iter()
            .zip(&vf.u2)
            .map(|(&a, &c)| (a * a + c * c).sqrt())
            .fold(T::zero(), T::max);
        let wmax = vf.w.iter().map(|w| w.abs()).fold(T::zero(), T::max);
        let g = &b.grid;
        let dx = (b.domain.lx / T::from_usize_lossy(g.nx)).min(b.domain.ly / T::from_usize_lossy(g.ny));
        let kz = T::from_usize_lossy(b.truncation.k + 1);
        Ok(dt * (vh / dx + wmax * kz))
    }

    /// Advance one step of length `dt`.
    pub fn step(
        &mut self,
        state: &SpectralState<T>,
        dt: T,
        noise: Option<&NoiseRealization<T>>,
    ) -> Result<SpectralState<T>> {
        state.check(self.basis)?;
        if !(dt > T::zero()) {
            return invalid(format!("time step must be positive, got {dt}"));
        }
        let n0 = NoiseSample::at(noise, self.basis, state.t)?;
        let t1 = state.t + dt;
        let n1 = NoiseSample::at(noise, self.basis, t1)?;
        if self.params.terms.advection {
            let cfl = self.cfl_number(&state.u, &n0.z1, dt)?;
            if cfl > T::lit(CFL_LIMIT) {
                return Err(Error::StepRejected {
                    cfl: cfl.f64(),
                    limit: CFL_LIMIT,
                    suggested_dt: 0.9 * CFL_LIMIT * dt.f64() / cfl.f64(),
                });
            }
        }
        if self.weights.as_ref().is_none_or(|w| w.dt != dt) {
            self.weights = Some(EtdWeights::new(&self.gammas, dt));
        }
        let y: Vec<T> = state.u.iter().chain(&state.theta).copied().collect();
        let f0 = self.forcing(&y, &n0)?;
        let w = self.weights.as_ref().expect("weights set above");
        let a: Vec<T> = (0..y.len()).map(|i| w.e[i] * y[i] + w.p1[i] * f0[i]).collect();
        let f1 = self.forcing(&a, &n1)?;
        let w = self.weights.as_ref().expect("weights set above");
        let mut next: Vec<T> = (0..y.len()).map(|i| a[i] + w.p2[i] * (f1[i] - f0[i])).collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { t: t1.f64() });
        }
        let theta = next.split_off(self.n_vel);
        Ok(SpectralState { t: t1, u: next, theta })
    }

    /// Take `n` steps of length `dt`, calling `observe` after each.
    pub fn integrate(
        &mut self,
        mut state: SpectralState<T>,
        dt: T,
        n: usize,
        noise: Option<&NoiseRealization<T>>,
        mut observe: impl FnMut(&SpectralState<T>) -> Result<()>,
    ) -> Result<SpectralState<T>> {
        for _ in 0..n {
            state = self.step(&state, dt, noise)?;
            observe(&state)?;
        }
        Ok(state)
    }

    /// Advance from `state.t` to `t_end` with steps of `dt` on the grid
    /// `state.t + k dt`; `t_end - state.t` must be a multiple of `dt`.
    pub fn advance_to(
        &mut self,
        state: SpectralState<T>,
        t_end: T,
        dt: T,
        noise: Option<&NoiseRealization<T>>,
    ) -> Result<SpectralState<T>> {
        let r = (t_end - state.t) / dt;
        let n = r.round();
        if (r - n).abs() > T::lit(1e-6) || n < T::zero() {
            return invalid(format!(
                "interval [{}, {t_end}] is not a whole number of steps of {dt}",
                state.t
            ));
        }
        let n = n.to_usize().unwrap_or(0);
        let t0 = state.t;
        let mut s = state;
        for k in 0..n {
            s = self.step(&s, dt, noise)?;
            // pin the clock to the grid so repeated runs see identical times
            s.t = t0 + dt * T::from_usize_lossy(k + 1);
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_basis, Domain, Truncation};

    fn basis() -> SpectralBasis<f64> {
        build_basis(Domain::default(), Truncation::new(3, 2).unwrap()).unwrap()
    }

    #[test]
    fn zero_state_has_zero_tendency() {
        let b = basis();
        let s = Solver::new(&b, Params::default()).unwrap();
        let (du, dt) = s
            .tendency(&SpectralState::zeros(&b, 0.0), &NoiseSample::zero(&b))
            .unwrap();
        assert!(du.iter().chain(&dt).all(|&v| v == 0.0));
    }

    #[test]
    fn linear_tendency_is_eigen_relation() {
        let b = basis();
        let s = Solver::new(
            &b,
            Params {
                terms: Terms::linear(),
                ..Params::default()
            },
        )
        .unwrap();
        let mut st = SpectralState::zeros(&b, 0.0);
        st.u[5] = 0.7;
        let (du, dt) = s.tendency(&st, &NoiseSample::zero(&b)).unwrap();
        for (i, &v) in du.iter().enumerate() {
            let want = if i == 5 { -b.velocity[5].gamma * 0.7 } else { 0.0 };
            assert!((v - want).abs() < 1e-14);
        }
        assert!(dt.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn phi_functions_are_continuous_across_the_series_switch() {
        for &z in &[-1e-3f64, -1.0001e-3, -0.999e-3] {
            let (a, b) = phi_functions(z);
            assert!((a - z.exp_m1() / z).abs() < 1e-12);
            assert!((b - (z.exp_m1() - z) / (z * z)).abs() < 1e-9);
        }
        assert_eq!(phi_functions(0.0f64), (1.0, 0.5));
    }

    #[test]
    fn coriolis_matrix_is_skew() {
        let b = basis();
        let c = coriolis_matrix(&b, 1.3, 0.4);
        for i in 0..c.rows {
            for j in 0..c.cols {
                assert!((c.get(i, j) + c.get(j, i)).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn pressure_matrix_kills_barotropic_rows() {
        let b = basis();
        let raw: Vec<f64> =
            hydrostatic_projection(&b, &(0..b.n_temp()).map(|i| (i as f64 * 0.3).sin()).collect::<Vec<_>>()).unwrap();
        for (i, m) in b.velocity.iter().enumerate() {
            if m.family == VelocityFamily::BarotropicStreamfunction {
                assert!(raw[i].abs() < 1e-12, "mode {i}: {}", raw[i]);
            }
        }
    }
}
