//! Eigenbases of the velocity and temperature operators on the box
//! `[0, Lx] × [0, Ly] × (-1, 0)` and the transforms to a collocation grid.
//!
//! Velocity modes carry free-slip lateral conditions and `∂_z u = 0` at top
//! and bottom. The depth-independent sector contains only streamfunction
//! modes, so every velocity in the span has zero depth-integrated
//! divergence. Temperature modes carry the Robin condition
//! `∂_z θ + α θ = 0` at the surface and `∂_z θ = 0` at the bottom.
//!
//! The collocation grid uses midpoints horizontally (with at least 3/2 the
//! modal resolution, so triple products of basis functions are integrated
//! exactly) and Gauss-Legendre nodes vertically.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{contract3, Mat};
use crate::quadrature::{gauss_legendre, integrate_interpolant_at, integration_matrix};
use crate::scalar::Real;

/// Physical box. The depth is fixed to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain<T> {
    pub lx: T,
    pub ly: T,
    pub h: T,
    pub alpha_robin: T,
}

impl<T: Real> Default for Domain<T> {
    fn default() -> Self {
        Self {
            lx: T::PI(),
            ly: T::PI(),
            h: T::one(),
            alpha_robin: T::one(),
        }
    }
}

impl<T: Real> Domain<T> {
    pub fn new(lx: T, ly: T, alpha_robin: T) -> Result<Self> {
        if !(lx > T::zero() && ly > T::zero()) || !lx.is_finite() || !ly.is_finite() {
            return invalid(format!("box lengths must be positive, got ({lx}, {ly})"));
        }
        if !(alpha_robin > T::zero()) || !alpha_robin.is_finite() {
            return invalid(format!("Robin coefficient must be positive, got {alpha_robin}"));
        }
        Ok(Self {
            lx,
            ly,
            h: T::one(),
            alpha_robin,
        })
    }

    /// Attractor runs need `α > 1/8`.
    pub fn require_attractor_alpha(&self) -> Result<()> {
        if self.alpha_robin > T::lit(0.125) {
            Ok(())
        } else {
            invalid(format!(
                "attractor runs need alpha_robin > 1/8, got {}",
                self.alpha_robin
            ))
        }
    }

    #[inline]
    pub fn kx(&self, m: usize) -> T {
        T::from_usize_lossy(m) * T::PI() / self.lx
    }
    #[inline]
    pub fn ky(&self, n: usize) -> T {
        T::from_usize_lossy(n) * T::PI() / self.ly
    }
    #[inline]
    pub fn kz(&self, k: usize) -> T {
        T::from_usize_lossy(k) * T::PI()
    }
}

/// Horizontal cutoff `m` (wavenumbers `0..=m`) and vertical cutoff `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub m: usize,
    pub k: usize,
}

impl Truncation {
    pub fn new(m: usize, k: usize) -> Result<Self> {
        if m < 1 || k < 1 {
            return invalid(format!("truncation must be at least (1, 1), got ({m}, {k})"));
        }
        Ok(Self { m, k })
    }

    pub fn velocity_count(&self) -> usize {
        self.m * self.m + 2 * self.m * (self.m + 1) * self.k
    }

    pub fn temp_count(&self) -> usize {
        (self.m + 1) * (self.m + 1) * (self.k + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VelocityFamily {
    BarotropicStreamfunction,
    BaroclinicX,
    BaroclinicY,
}

impl VelocityFamily {
    fn rank(self) -> u8 {
        match self {
            Self::BarotropicStreamfunction => 0,
            Self::BaroclinicX => 1,
            Self::BaroclinicY => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityMode<T> {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub family: VelocityFamily,
    pub gamma: T,
    /// Amplitude that makes the mode unit in L².
    pub scale: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TempMode<T> {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub mu: T,
    pub gamma: T,
    pub norm_const: T,
    /// Horizontal amplitude; the vertical factor is divided by `√norm_const`.
    pub scale: T,
}

/// Roots `μ_0 < μ_1 < ...` of `μ tan μ = α`, the `k`-th in `(kπ, kπ + π/2)`.
pub fn robin_roots<T: Real>(alpha: T, count: usize) -> Result<Vec<T>> {
    if !(alpha > T::zero()) || !alpha.is_finite() {
        return invalid(format!("Robin coefficient must be positive, got {alpha}"));
    }
    if count == 0 {
        return invalid("need at least one root");
    }
    let a = alpha.f64();
    let pi = std::f64::consts::PI;
    Ok((0..count)
        .map(|k| {
            // g(μ) = μ sin μ - α cos μ changes sign on the bracket.
            let g = |mu: f64| mu * mu.sin() - a * mu.cos();
            let mut lo = k as f64 * pi;
            let mut hi = lo + 0.5 * pi;
            let glo = g(lo);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if (g(mid) > 0.0) == (glo > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            T::lit(0.5 * (lo + hi))
        })
        .collect())
}

/// Coefficients of a velocity field in the velocity basis.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityCoeffs<T>(pub Vec<T>);

/// Coefficients of a temperature field in the temperature basis.
#[derive(Debug, Clone, PartialEq)]
pub struct TempCoeffs<T>(pub Vec<T>);

/// Horizontal velocity sampled on the collocation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField<T> {
    pub u1: Vec<T>,
    pub u2: Vec<T>,
}

/// Scalar field sampled on the collocation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<T>(pub Vec<T>);

/// A velocity field with the derived quantities the nonlinear terms need.
#[derive(Debug, Clone)]
pub struct VelocityFields<T> {
    pub u1: Vec<T>,
    pub u2: Vec<T>,
    pub dx_u1: Vec<T>,
    pub dy_u1: Vec<T>,
    pub dz_u1: Vec<T>,
    pub dx_u2: Vec<T>,
    pub dy_u2: Vec<T>,
    pub dz_u2: Vec<T>,
    pub div: Vec<T>,
    /// `w = -∫_{-1}^z ∇·u dz'`.
    pub w: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct TempFields<T> {
    pub t: Vec<T>,
    pub dx: Vec<T>,
    pub dy: Vec<T>,
    pub dz: Vec<T>,
}

/// Tensor collocation grid, indexed `(ix * ny + iy) * nz + iz`.
#[derive(Debug, Clone)]
pub struct Collocation<T> {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub z: Vec<T>,
    pub wx: T,
    pub wy: T,
    pub wz: Vec<T>,
    z_ref: Vec<f64>,
    w_ref: Vec<f64>,
    integ: Mat<T>,
    sx: Mat<T>,
    cx: Mat<T>,
    sy: Mat<T>,
    cy: Mat<T>,
    cz: Mat<T>,
    dcz: Mat<T>,
    iz: Mat<T>,
    pz: Mat<T>,
    dpz: Mat<T>,
    sx_w: Mat<T>,
    cx_w: Mat<T>,
    sy_w: Mat<T>,
    cy_w: Mat<T>,
    cz_w: Mat<T>,
    pz_w: Mat<T>,
}

impl<T: Real> Collocation<T> {
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.ny + iy) * self.nz + iz
    }
    /// Quadrature weight of grid point `(ix, iy, iz)`.
    #[inline]
    pub fn weight(&self, iz: usize) -> T {
        self.wx * self.wy * self.wz[iz]
    }
}

/// Smallest horizontal grid that integrates triple products exactly.
pub fn min_horizontal_points(m: usize) -> usize {
    3 * m / 2 + 1
}

/// Default vertical Gauss-Legendre node count for vertical cutoff `k`.
pub fn default_vertical_points(k: usize) -> usize {
    ((3 * k + 2) as f64 * std::f64::consts::FRAC_PI_2).ceil() as usize + 10
}

/// The truncated velocity and temperature bases with their transforms.
#[derive(Debug, Clone)]
pub struct SpectralBasis<T> {
    pub domain: Domain<T>,
    pub truncation: Truncation,
    pub velocity: Vec<VelocityMode<T>>,
    pub temperature: Vec<TempMode<T>>,
    pub grid: Collocation<T>,
    mus: Vec<T>,
    norm_consts: Vec<T>,
}

fn cmp_t<T: Real>(a: T, b: T) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

pub fn build_basis<T: Real>(domain: Domain<T>, truncation: Truncation) -> Result<SpectralBasis<T>> {
    let Truncation { m: mm, k: kk } = Truncation::new(truncation.m, truncation.k)?;
    let nh = min_horizontal_points(mm);
    SpectralBasis::with_grid(domain, truncation, nh, nh, default_vertical_points(kk))
}

impl<T: Real> SpectralBasis<T> {
    /// Basis on a caller-chosen collocation grid. Grids coarser than the
    /// dealiasing minimum are rejected.
    pub fn with_grid(domain: Domain<T>, truncation: Truncation, nx: usize, ny: usize, nz: usize) -> Result<Self> {
        let Truncation { m: mm, k: kk } = Truncation::new(truncation.m, truncation.k)?;
        let nh = min_horizontal_points(mm);
        if nx < nh || ny < nh || nz < kk + 2 {
            return invalid(format!(
                "grid ({nx}, {ny}, {nz}) is below the minimum ({nh}, {nh}, {}) for truncation ({mm}, {kk})",
                kk + 2
            ));
        }
        let d = domain;
        let two = T::lit(2.0);
        let mus = robin_roots(d.alpha_robin, kk + 1)?;
        let norm_consts: Vec<T> = mus
            .iter()
            .map(|&mu| T::lit(0.5) + (two * mu).sin() / (T::lit(4.0) * mu))
            .collect();
        let eps = |j: usize| if j == 0 { T::one() } else { T::lit(0.5) };
        let area = d.lx * d.ly;

        let mut velocity = Vec::with_capacity(truncation.velocity_count());
        for m in 1..=mm {
            for n in 1..=mm {
                let kh2 = d.kx(m).powi(2) + d.ky(n).powi(2);
                velocity.push(VelocityMode {
                    m,
                    n,
                    k: 0,
                    family: VelocityFamily::BarotropicStreamfunction,
                    gamma: kh2,
                    scale: two / (kh2 * area).sqrt(),
                });
            }
        }
        for k in 1..=kk {
            let kz2 = d.kz(k).powi(2);
            for m in 0..=mm {
                for n in 0..=mm {
                    let gamma = d.kx(m).powi(2) + d.ky(n).powi(2) + kz2;
                    if m >= 1 {
                        velocity.push(VelocityMode {
                            m,
                            n,
                            k,
                            family: VelocityFamily::BaroclinicX,
                            gamma,
                            scale: two / (area * eps(n)).sqrt(),
                        });
                    }
                    if n >= 1 {
                        velocity.push(VelocityMode {
                            m,
                            n,
                            k,
                            family: VelocityFamily::BaroclinicY,
                            gamma,
                            scale: two / (area * eps(m)).sqrt(),
                        });
                    }
                }
            }
        }
        velocity.sort_by(|a, b| {
            cmp_t(a.gamma, b.gamma)
                .then(a.family.rank().cmp(&b.family.rank()))
                .then((a.m, a.n, a.k).cmp(&(b.m, b.n, b.k)))
        });

        let mut temperature = Vec::with_capacity(truncation.temp_count());
        for (k, (&mu, &nc)) in mus.iter().zip(&norm_consts).enumerate() {
            for m in 0..=mm {
                for n in 0..=mm {
                    temperature.push(TempMode {
                        m,
                        n,
                        k,
                        mu,
                        gamma: d.kx(m).powi(2) + d.ky(n).powi(2) + mu * mu,
                        norm_const: nc,
                        scale: T::one() / (area * eps(m) * eps(n)).sqrt(),
                    });
                }
            }
        }
        temperature.sort_by(|a, b| cmp_t(a.gamma, b.gamma).then((a.m, a.n, a.k).cmp(&(b.m, b.n, b.k))));

        let grid = Self::collocation(&d, mm, kk, nx, ny, nz, &mus, &norm_consts);
        Ok(Self {
            domain: d,
            truncation: Truncation { m: mm, k: kk },
            velocity,
            temperature,
            grid,
            mus,
            norm_consts,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn collocation(
        d: &Domain<T>,
        mm: usize,
        kk: usize,
        nx: usize,
        ny: usize,
        nz: usize,
        mus: &[T],
        ncs: &[T],
    ) -> Collocation<T> {
        let half = T::lit(0.5);
        let x: Vec<T> = (0..nx)
            .map(|i| (T::from_usize_lossy(i) + half) * d.lx / T::from_usize_lossy(nx))
            .collect();
        let y: Vec<T> = (0..ny)
            .map(|i| (T::from_usize_lossy(i) + half) * d.ly / T::from_usize_lossy(ny))
            .collect();
        let (xi, wi) = gauss_legendre(nz);
        let z: Vec<T> = xi.iter().map(|&s| T::lit(0.5 * (s - 1.0))).collect();
        let wz: Vec<T> = wi.iter().map(|&w| T::lit(0.5 * w)).collect();
        let q = integration_matrix(&xi, &wi);
        let integ = Mat::from_fn(nz, nz, |i, j| T::lit(0.5 * q[i * nz + j]));
        let wx = d.lx / T::from_usize_lossy(nx);
        let wy = d.ly / T::from_usize_lossy(ny);

        let sx = Mat::from_fn(nx, mm + 1, |i, m| (d.kx(m) * x[i]).sin());
        let cx = Mat::from_fn(nx, mm + 1, |i, m| (d.kx(m) * x[i]).cos());
        let sy = Mat::from_fn(ny, mm + 1, |i, n| (d.ky(n) * y[i]).sin());
        let cy = Mat::from_fn(ny, mm + 1, |i, n| (d.ky(n) * y[i]).cos());
        let cz = Mat::from_fn(nz, kk + 1, |i, k| (d.kz(k) * z[i]).cos());
        let dcz = Mat::from_fn(nz, kk + 1, |i, k| -d.kz(k) * (d.kz(k) * z[i]).sin());
        let iz = Mat::from_fn(nz, kk + 1, |i, k| {
            if k == 0 {
                z[i] + T::one()
            } else {
                (d.kz(k) * z[i]).sin() / d.kz(k)
            }
        });
        let one = T::one();
        let pz = Mat::from_fn(nz, kk + 1, |i, k| (mus[k] * (z[i] + one)).cos() / ncs[k].sqrt());
        let dpz = Mat::from_fn(nz, kk + 1, |i, k| {
            -mus[k] * (mus[k] * (z[i] + one)).sin() / ncs[k].sqrt()
        });

        let weighted = |m: &Mat<T>, w: &dyn Fn(usize) -> T| Mat::from_fn(m.cols, m.rows, |a, i| m.get(i, a) * w(i));
        let sx_w = weighted(&sx, &|_| wx);
        let cx_w = weighted(&cx, &|_| wx);
        let sy_w = weighted(&sy, &|_| wy);
        let cy_w = weighted(&cy, &|_| wy);
        let cz_w = weighted(&cz, &|i| wz[i]);
        let pz_w = weighted(&pz, &|i| wz[i]);
        Collocation {
            nx,
            ny,
            nz,
            x,
            y,
            z,
            wx,
            wy,
            wz,
            z_ref: xi,
            w_ref: wi,
            integ,
            sx,
            cx,
            sy,
            cy,
            cz,
            dcz,
            iz,
            pz,
            dpz,
            sx_w,
            cx_w,
            sy_w,
            cy_w,
            cz_w,
            pz_w,
        }
    }

    pub fn n_velocity(&self) -> usize {
        self.velocity.len()
    }
    pub fn n_temp(&self) -> usize {
        self.temperature.len()
    }
    pub fn robin_mus(&self) -> &[T] {
        &self.mus
    }
    pub fn velocity_gammas(&self) -> Vec<T> {
        self.velocity.iter().map(|m| m.gamma).collect()
    }
    pub fn temp_gammas(&self) -> Vec<T> {
        self.temperature.iter().map(|m| m.gamma).collect()
    }

    #[inline]
    fn aidx(&self, m: usize, n: usize, k: usize) -> usize {
        let mm = self.truncation.m + 1;
        (m * mm + n) * (self.truncation.k + 1) + k
    }

    fn tensor_len(&self) -> usize {
        let mm = self.truncation.m + 1;
        mm * mm * (self.truncation.k + 1)
    }

    fn check_len(&self, got: usize, want: usize, what: &str) -> Result<()> {
        if got != want {
            return Err(Error::InvalidInput(format!(
                "{what}: expected {want} values, got {got}"
            )));
        }
        Ok(())
    }

    /// Split velocity coefficients into the amplitude tensors of the `u1`
    /// (sin-cos-cos) and `u2` (cos-sin-cos) components.
    fn velocity_tensors(&self, c: &[T]) -> (Vec<T>, Vec<T>) {
        let mut a1 = vec![T::zero(); self.tensor_len()];
        let mut a2 = vec![T::zero(); self.tensor_len()];
        for (mode, &ci) in self.velocity.iter().zip(c) {
            let idx = self.aidx(mode.m, mode.n, mode.k);
            let amp = ci * mode.scale;
            match mode.family {
                VelocityFamily::BarotropicStreamfunction => {
                    a1[idx] += amp * self.domain.ky(mode.n);
                    a2[idx] -= amp * self.domain.kx(mode.m);
                }
                VelocityFamily::BaroclinicX => a1[idx] += amp,
                VelocityFamily::BaroclinicY => a2[idx] += amp,
            }
        }
        (a1, a2)
    }

    fn scaled(&self, a: &[T], f: impl Fn(usize, usize) -> T) -> Vec<T> {
        let mm = self.truncation.m + 1;
        let kk = self.truncation.k + 1;
        a.iter()
            .enumerate()
            .map(|(i, &v)| {
                let m = i / (mm * kk);
                let n = (i / kk) % mm;
                v * f(m, n)
            })
            .collect()
    }

    pub fn velocity_to_physical(&self, c: &VelocityCoeffs<T>) -> Result<VectorField<T>> {
        self.check_len(c.0.len(), self.n_velocity(), "velocity coefficients")?;
        let g = &self.grid;
        let (a1, a2) = self.velocity_tensors(&c.0);
        Ok(VectorField {
            u1: contract3(&a1, &g.sx, &g.cy, &g.cz),
            u2: contract3(&a2, &g.cx, &g.sy, &g.cz),
        })
    }

    /// Velocity, its gradient, divergence and the diagnosed vertical velocity.
    pub fn velocity_fields(&self, c: &[T]) -> Result<VelocityFields<T>> {
        self.check_len(c.len(), self.n_velocity(), "velocity coefficients")?;
        let g = &self.grid;
        let d = &self.domain;
        let (a1, a2) = self.velocity_tensors(c);
        let a1_m = self.scaled(&a1, |m, _| d.kx(m));
        let a1_n = self.scaled(&a1, |_, n| -d.ky(n));
        let a2_m = self.scaled(&a2, |m, _| -d.kx(m));
        let a2_n = self.scaled(&a2, |_, n| d.ky(n));
        let div_c: Vec<T> = a1_m.iter().zip(&a2_n).map(|(&p, &q)| p + q).collect();
        let w_neg = contract3(&div_c, &g.cx, &g.cy, &g.iz);
        Ok(VelocityFields {
            u1: contract3(&a1, &g.sx, &g.cy, &g.cz),
            u2: contract3(&a2, &g.cx, &g.sy, &g.cz),
            dx_u1: contract3(&a1_m, &g.cx, &g.cy, &g.cz),
            dy_u1: contract3(&a1_n, &g.sx, &g.sy, &g.cz),
            dz_u1: contract3(&a1, &g.sx, &g.cy, &g.dcz),
            dx_u2: contract3(&a2_m, &g.sx, &g.sy, &g.cz),
            dy_u2: contract3(&a2_n, &g.cx, &g.cy, &g.cz),
            dz_u2: contract3(&a2, &g.cx, &g.sy, &g.dcz),
            div: contract3(&div_c, &g.cx, &g.cy, &g.cz),
            w: w_neg.into_iter().map(|v| -v).collect(),
        })
    }

    /// L² projection of a sampled horizontal vector field onto the velocity
    /// basis.
    pub fn velocity_from_physical(&self, f: &VectorField<T>) -> Result<VelocityCoeffs<T>> {
        let g = &self.grid;
        self.check_len(f.u1.len(), g.len(), "u1 samples")?;
        self.check_len(f.u2.len(), g.len(), "u2 samples")?;
        let b1 = contract3(&f.u1, &g.sx_w, &g.cy_w, &g.cz_w);
        let b2 = contract3(&f.u2, &g.cx_w, &g.sy_w, &g.cz_w);
        Ok(VelocityCoeffs(self.velocity_from_tensors(&b1, &b2)))
    }

    fn velocity_from_tensors(&self, b1: &[T], b2: &[T]) -> Vec<T> {
        self.velocity
            .iter()
            .map(|mode| {
                let idx = self.aidx(mode.m, mode.n, mode.k);
                mode.scale
                    * match mode.family {
                        VelocityFamily::BarotropicStreamfunction => {
                            self.domain.ky(mode.n) * b1[idx] - self.domain.kx(mode.m) * b2[idx]
                        }
                        VelocityFamily::BaroclinicX => b1[idx],
                        VelocityFamily::BaroclinicY => b2[idx],
                    }
            })
            .collect()
    }

    fn temp_tensor(&self, c: &[T]) -> Vec<T> {
        let mut a = vec![T::zero(); self.tensor_len()];
        for (mode, &ci) in self.temperature.iter().zip(c) {
            a[self.aidx(mode.m, mode.n, mode.k)] += ci * mode.scale;
        }
        a
    }

    pub fn temp_to_physical(&self, c: &TempCoeffs<T>) -> Result<ScalarField<T>> {
        self.check_len(c.0.len(), self.n_temp(), "temperature coefficients")?;
        let g = &self.grid;
        Ok(ScalarField(contract3(&self.temp_tensor(&c.0), &g.cx, &g.cy, &g.pz)))
    }

    pub fn temp_fields(&self, c: &[T]) -> Result<TempFields<T>> {
        self.check_len(c.len(), self.n_temp(), "temperature coefficients")?;
        let g = &self.grid;
        let d = &self.domain;
        let a = self.temp_tensor(c);
        let a_m = self.scaled(&a, |m, _| -d.kx(m));
        let a_n = self.scaled(&a, |_, n| -d.ky(n));
        Ok(TempFields {
            t: contract3(&a, &g.cx, &g.cy, &g.pz),
            dx: contract3(&a_m, &g.sx, &g.cy, &g.pz),
            dy: contract3(&a_n, &g.cx, &g.sy, &g.pz),
            dz: contract3(&a, &g.cx, &g.cy, &g.dpz),
        })
    }

    pub fn temp_from_physical(&self, f: &ScalarField<T>) -> Result<TempCoeffs<T>> {
        let g = &self.grid;
        self.check_len(f.0.len(), g.len(), "temperature samples")?;
        let b = contract3(&f.0, &g.cx_w, &g.cy_w, &g.pz_w);
        Ok(TempCoeffs(
            self.temperature
                .iter()
                .map(|mode| mode.scale * b[self.aidx(mode.m, mode.n, mode.k)])
                .collect(),
        ))
    }

    /// `z ↦ ∫_{-1}^z f dz'` at the vertical nodes of every column, by exact
    /// integration of the polynomial interpolant through the nodes.
    pub fn vertical_antiderivative(&self, f: &[T]) -> Result<Vec<T>> {
        let g = &self.grid;
        self.check_len(f.len(), g.len(), "field samples")?;
        let mut out = Vec::with_capacity(f.len());
        for col in f.chunks_exact(g.nz) {
            out.extend(g.integ.matvec(col));
        }
        Ok(out)
    }

    /// `∫_{-1}^z` of one sampled column, evaluated at an arbitrary `z`.
    pub fn vertical_antiderivative_at(&self, column: &[T], z: T) -> Result<T> {
        let g = &self.grid;
        self.check_len(column.len(), g.nz, "column samples")?;
        if z < -T::one() || z > T::zero() {
            return invalid(format!("z = {z} outside [-1, 0]"));
        }
        let col: Vec<f64> = column.iter().map(|v| v.f64()).collect();
        Ok(T::lit(
            0.5 * integrate_interpolant_at(&g.z_ref, &g.w_ref, &col, 2.0 * z.f64() + 1.0),
        ))
    }

    /// `∫_{-1}^0 f dz` on each horizontal grid point, indexed `ix * ny + iy`.
    pub fn depth_integral(&self, f: &[T]) -> Result<Vec<T>> {
        let g = &self.grid;
        self.check_len(f.len(), g.len(), "field samples")?;
        Ok(f.chunks_exact(g.nz)
            .map(|col| col.iter().zip(&g.wz).map(|(&v, &w)| v * w).sum())
            .collect())
    }

    /// Quadrature `∫ f g` over the box.
    pub fn inner(&self, f: &[T], g: &[T]) -> T {
        let grid = &self.grid;
        let mut s = T::zero();
        for (i, (a, b)) in f.iter().zip(g).enumerate() {
            s += *a * *b * grid.wz[i % grid.nz];
        }
        s * grid.wx * grid.wy
    }

    /// Quadrature `∫ |f|^p` over the box.
    pub fn integrate_abs_pow(&self, f: &[T], p: i32) -> T {
        let grid = &self.grid;
        let mut s = T::zero();
        for (i, a) in f.iter().enumerate() {
            s += a.abs().powi(p) * grid.wz[i % grid.nz];
        }
        s * grid.wx * grid.wy
    }

    /// Velocity mode `i` evaluated at a point.
    pub fn velocity_mode_at(&self, i: usize, x: T, y: T, z: T) -> [T; 2] {
        self.velocity_mode_eval(i, x, y, z, false)
    }

    /// `∂_z` of velocity mode `i` at a point.
    pub fn velocity_mode_dz_at(&self, i: usize, x: T, y: T, z: T) -> [T; 2] {
        self.velocity_mode_eval(i, x, y, z, true)
    }

    fn velocity_mode_eval(&self, i: usize, x: T, y: T, z: T, dz: bool) -> [T; 2] {
        let mode = &self.velocity[i];
        let d = &self.domain;
        let (kx, ky, kz) = (d.kx(mode.m), d.ky(mode.n), d.kz(mode.k));
        let (sx, cx) = (kx * x).sin_cos();
        let (sy, cy) = (ky * y).sin_cos();
        let vz = if dz { -kz * (kz * z).sin() } else { (kz * z).cos() };
        let c = mode.scale;
        match mode.family {
            VelocityFamily::BarotropicStreamfunction => [c * ky * sx * cy * vz, -c * kx * cx * sy * vz],
            VelocityFamily::BaroclinicX => [c * sx * cy * vz, T::zero()],
            VelocityFamily::BaroclinicY => [T::zero(), c * cx * sy * vz],
        }
    }

    /// Temperature mode `i` and its `∂_z` at a point.
    pub fn temp_mode_at(&self, i: usize, x: T, y: T, z: T) -> (T, T) {
        let mode = &self.temperature[i];
        let d = &self.domain;
        let h = mode.scale * (d.kx(mode.m) * x).cos() * (d.ky(mode.n) * y).cos() / mode.norm_const.sqrt();
        let arg = mode.mu * (z + T::one());
        (h * arg.cos(), -h * mode.mu * arg.sin())
    }

    pub fn manifest(&self) -> BasisManifest {
        BasisManifest {
            domain: DomainManifest {
                lx: self.domain.lx.f64(),
                ly: self.domain.ly.f64(),
                h: self.domain.h.f64(),
                alpha_robin: self.domain.alpha_robin.f64(),
            },
            truncation: self.truncation,
            grid: [self.grid.nx, self.grid.ny, self.grid.nz],
            velocity: self
                .velocity
                .iter()
                .enumerate()
                .map(|(index, m)| VelocityEntry {
                    index,
                    family: m.family,
                    m: m.m,
                    n: m.n,
                    k: m.k,
                    gamma: m.gamma.f64(),
                })
                .collect(),
            temperature: self
                .temperature
                .iter()
                .enumerate()
                .map(|(index, m)| TempEntry {
                    index,
                    m: m.m,
                    n: m.n,
                    k: m.k,
                    gamma: m.gamma.f64(),
                    mu: m.mu.f64(),
                    norm_const: m.norm_const.f64(),
                })
                .collect(),
        }
    }

    pub fn write_manifest<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, &self.manifest())?;
        writeln!(w)?;
        Ok(())
    }

    /// Vertical normalization constants per Robin root index.
    pub fn norm_consts(&self) -> &[T] {
        &self.norm_consts
    }
}

/// JSON description of a basis, one entry per mode in coefficient order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisManifest {
    pub domain: DomainManifest,
    pub truncation: Truncation,
    pub grid: [usize; 3],
    pub velocity: Vec<VelocityEntry>,
    pub temperature: Vec<TempEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainManifest {
    pub lx: f64,
    pub ly: f64,
    pub h: f64,
    pub alpha_robin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityEntry {
    pub index: usize,
    pub family: VelocityFamily,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TempEntry {
    pub index: usize,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub gamma: f64,
    pub mu: f64,
    pub norm_const: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(m: usize, k: usize) -> SpectralBasis<f64> {
        build_basis(Domain::default(), Truncation::new(m, k).unwrap()).unwrap()
    }

    #[test]
    fn robin_root_examples() {
        let r = robin_roots(1.0f64, 3).unwrap();
        assert!((r[0] - 0.86033).abs() < 1e-5);
        assert!((r[0] * r[0] - 0.74017).abs() < 1e-5);
        let small = robin_roots(1e-6f64, 2).unwrap();
        assert!((small[1] - std::f64::consts::PI).abs() < 2e-6 / std::f64::consts::PI);
        assert!(small[1] > std::f64::consts::PI);
    }

    #[test]
    fn mode_counts_match_truncation() {
        let b = basis(4, 2);
        assert_eq!(b.n_velocity(), 96);
        assert_eq!(b.n_temp(), 75);
        let b = basis(6, 3);
        assert_eq!(b.n_velocity(), 288);
        assert_eq!(b.n_temp(), 196);
    }

    #[test]
    fn eigenvalue_examples() {
        let b = basis(2, 1);
        let v = b.velocity.iter().find(|m| (m.m, m.n, m.k) == (1, 1, 1)).unwrap();
        assert!((v.gamma - (2.0 + std::f64::consts::PI.powi(2))).abs() < 1e-12);
        assert!((v.gamma - 11.8696).abs() < 1e-4);
        assert_eq!(b.temperature[0].m + b.temperature[0].n + b.temperature[0].k, 0);
        assert!((b.temperature[0].gamma - 0.74017).abs() < 1e-5);
    }

    #[test]
    fn wrong_lengths_are_invalid_input() {
        let b = basis(2, 1);
        assert!(b.velocity_to_physical(&VelocityCoeffs(vec![0.0; 3])).is_err());
        assert!(b.temp_from_physical(&ScalarField(vec![0.0; 5])).is_err());
        assert!(SpectralBasis::<f64>::with_grid(Domain::default(), Truncation { m: 4, k: 2 }, 4, 7, 10).is_err());
    }

    #[test]
    fn manifest_lists_every_mode() {
        let b = basis(2, 1);
        let m = b.manifest();
        assert_eq!(m.velocity.len(), b.n_velocity());
        assert_eq!(m.temperature.len(), b.n_temp());
        let mut buf = Vec::new();
        b.write_manifest(&mut buf).unwrap();
        let back: BasisManifest = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back, m);
        assert!(String::from_utf8(buf).unwrap().contains("barotropic-streamfunction"));
    }
}
