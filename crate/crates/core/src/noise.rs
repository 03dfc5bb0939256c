//! Truncated fractional noise and the shifted Ornstein-Uhlenbeck
//! convolutions `Z = ∫ e^{-(t-s)(A+β)} dW^H(s)`.
//!
//! Mode `i` of a field carries the scalar process `z_i` driven by its own
//! fBm `B_i`; the field coefficient is `amplitude · λ_i^{1/2} · z_i` with
//! `λ_i = (1 + γ_i)^{-p}`. Each step of the per-mode recursion integrates
//! the exponential kernel exactly against the piecewise-linear interpolant
//! of `B_i`:
//!
//! `z(t+dt) = e^{-x} z(t) + (B(t+dt) - B(t)) (1 - e^{-x}) / x`, `x = (γ_i + β) dt`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fbm::{FbmGenerator, HurstIndex};
use crate::fraccalc::FracOrder;
use crate::io::{write_matrix, write_ndjson};
use crate::rng::{derive_seed, Half};
use crate::scalar::{gamma, Real};
use crate::spectral::SpectralBasis;

/// Default eigenvalue decay exponent.
pub const DEFAULT_DECAY_P: f64 = 10.0;
/// Burn-in is this many e-folding times of the slowest noisy mode.
pub const BURN_IN_EFOLDS: f64 = 10.0;
/// Steps with `(γ+β) dt` above this are counted as degenerate.
pub const DEGENERATE_RATE: f64 = 50.0;
/// Trace-condition verdict threshold on tail / partial sum.
pub const TRACE_TAIL_FRACTION: f64 = 0.01;

/// Which field a noise stream drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseField {
    Velocity,
    Temperature,
}

impl NoiseField {
    /// fBm stream id of mode `i`.
    pub fn stream(self, i: usize) -> u64 {
        match self {
            NoiseField::Velocity => i as u64,
            NoiseField::Temperature => (1u64 << 32) + i as u64,
        }
    }

    pub fn gammas<T: Real>(self, basis: &SpectralBasis<T>) -> Vec<T> {
        match self {
            NoiseField::Velocity => basis.velocity_gammas(),
            NoiseField::Temperature => basis.temp_gammas(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec<T> {
    pub hurst: HurstIndex<T>,
    pub beta_shift: T,
    pub decay_p: T,
    pub alpha_frac: FracOrder<T>,
    /// Multiplier on every noise coefficient.
    pub amplitude: T,
    /// Number of leading modes per field that carry noise; all when `None`.
    pub modes: Option<usize>,
    /// Admits `H = 1/2` for classical Ornstein-Uhlenbeck oracles. The
    /// fractional-order window is not enforced in this mode.
    pub generator_test_mode: bool,
}

impl<T: Real> NoiseSpec<T> {
    /// Requires `H > 1/2`, `1 - H < alpha < 1/2`, `β >= 0`, `p >= 0`.
    pub fn new(h: T, beta_shift: T, decay_p: T, alpha: T) -> Result<Self> {
        let hurst = HurstIndex::new(h)?;
        hurst.require_pathwise()?;
        let alpha_frac = FracOrder::with_window(alpha, T::one() - h, T::lit(0.5))?;
        Self::checked(hurst, beta_shift, decay_p, alpha_frac, false)
    }

    /// Spec for generator tests; any `H` in `(0, 1)` including `1/2`.
    pub fn generator_test(h: T, beta_shift: T, decay_p: T) -> Result<Self> {
        let hurst = HurstIndex::new(h)?;
        Self::checked(hurst, beta_shift, decay_p, FracOrder::new(T::lit(0.25))?, true)
    }

    fn checked(hurst: HurstIndex<T>, beta_shift: T, decay_p: T, alpha_frac: FracOrder<T>, test: bool) -> Result<Self> {
        if !(beta_shift >= T::zero()) || !beta_shift.is_finite() {
            return invalid(format!("beta_shift must be >= 0, got {beta_shift}"));
        }
        if !(decay_p >= T::zero()) || !decay_p.is_finite() {
            return invalid(format!("decay_p must be >= 0, got {decay_p}"));
        }
        Ok(Self {
            hurst,
            beta_shift,
            decay_p,
            alpha_frac,
            amplitude: T::one(),
            modes: None,
            generator_test_mode: test,
        })
    }

    pub fn with_amplitude(mut self, amplitude: T) -> Result<Self> {
        if !(amplitude >= T::zero()) || !amplitude.is_finite() {
            return invalid(format!("amplitude must be >= 0, got {amplitude}"));
        }
        self.amplitude = amplitude;
        Ok(self)
    }

    pub fn with_modes(mut self, modes: usize) -> Self {
        self.modes = Some(modes);
        self
    }

    pub fn with_beta(mut self, beta: T) -> Result<Self> {
        if !(beta >= T::zero()) {
            return invalid(format!("beta_shift must be >= 0, got {beta}"));
        }
        self.beta_shift = beta;
        Ok(self)
    }

    /// Number of noisy modes out of `total`.
    pub fn noisy_modes(&self, total: usize) -> usize {
        self.modes.map_or(total, |m| m.min(total))
    }

    /// `λ_i = (1 + γ_i)^{-p}` on the noisy modes, zero beyond.
    pub fn lambdas(&self, gammas: &[T]) -> Vec<T> {
        let n = self.noisy_modes(gammas.len());
        gammas
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                if i < n {
                    (T::one() + g).powf(-self.decay_p)
                } else {
                    T::zero()
                }
            })
            .collect()
    }

    /// `10 / (γ_min + β)` over the noisy modes.
    pub fn burn_in_length(&self, gammas: &[T]) -> T {
        let n = self.noisy_modes(gammas.len()).max(1);
        let gmin = gammas[..n.min(gammas.len())]
            .iter()
            .copied()
            .fold(T::infinity(), T::min);
        T::lit(BURN_IN_EFOLDS) / (gmin + self.beta_shift)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Summability check for `Σ λ_i^{1/2} γ_i^{5/2}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceReport {
    pub n_terms: usize,
    pub decay_p: f64,
    pub partial_sum: f64,
    /// Integral-test bound on the omitted tail; infinite when the series
    /// diverges under the fitted growth law.
    pub tail_bound: f64,
    /// Constant `c` of the lower growth fit `γ_i >= c i^{2/3}`.
    pub growth_constant: f64,
    pub tail_fraction: f64,
    pub verdict: Verdict,
    pub note: Option<String>,
}

/// Partial sum of `λ_i^{1/2} γ_i^{5/2}` over the sorted spectrum plus an
/// integral-test bound on the tail.
///
/// The tail uses `λ^{1/2} γ^{5/2} <= γ^{(5-p)/2}` and the lower fit
/// `γ_i >= c i^{2/3}` (the 3D Weyl growth), with `c` the smallest ratio
/// realized by the retained spectrum. The bound is finite only for `p > 8`.
pub fn check_trace_conditions<T: Real>(spec: &NoiseSpec<T>, gammas: &[T]) -> Result<TraceReport> {
    if gammas.is_empty() {
        return invalid("empty spectrum");
    }
    let mut g: Vec<f64> = gammas.iter().map(|v| v.f64()).collect();
    g.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let p = spec.decay_p.f64();
    let n = g.len();
    let partial: f64 = g.iter().map(|&x| (1.0 + x).powf(-p / 2.0) * x.powf(2.5)).sum();
    let c = g
        .iter()
        .enumerate()
        .map(|(i, &x)| x / ((i + 1) as f64).powf(2.0 / 3.0))
        .fold(f64::INFINITY, f64::min);
    if n == 1 {
        return Ok(TraceReport {
            n_terms: 1,
            decay_p: p,
            partial_sum: partial,
            tail_bound: 0.0,
            growth_constant: c,
            tail_fraction: 0.0,
            verdict: Verdict::Pass,
            note: Some("single term: tail estimate dominated by extrapolation uncertainty".into()),
        });
    }
    let q = (5.0 - p) / 2.0;
    let e = 2.0 * q / 3.0;
    let tail = if p > 8.0 {
        c.powf(q) * (n as f64).powf(e + 1.0) / -(e + 1.0)
    } else {
        f64::INFINITY
    };
    let frac = tail / partial;
    let ok = frac < TRACE_TAIL_FRACTION;
    let note = (!tail.is_finite()).then(|| format!("series diverges under gamma ~ i^(2/3) for decay_p = {p} <= 8"));
    Ok(TraceReport {
        n_terms: n,
        decay_p: p,
        partial_sum: partial,
        tail_bound: tail,
        growth_constant: c,
        tail_fraction: frac,
        verdict: Verdict::from_bool(ok),
        note,
    })
}

/// One fBm per noisy mode on a shared grid `t0 + i*dt`, `i < n`.
///
/// Samples at negative times come from the backward half of each stream,
/// so the bundle is a two-sided fBm with `B(0) = 0` whenever the grid
/// straddles the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct FbmBundle<T> {
    pub field: NoiseField,
    pub hurst: HurstIndex<T>,
    pub t0: T,
    pub dt: T,
    pub n: usize,
    pub seed: u64,
    pub paths: Vec<Vec<T>>,
}

impl<T: Real> FbmBundle<T> {
    pub fn generate(
        hurst: HurstIndex<T>,
        field: NoiseField,
        n_modes: usize,
        t0: T,
        dt: T,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        if n < 2 {
            return invalid("noise grid needs at least two points");
        }
        let i0 = -t0 / dt;
        let i0r = i0.round();
        if (i0 - i0r).abs() > T::lit(1e-6) {
            return invalid(format!("grid origin {t0} is not a multiple of dt = {dt}"));
        }
        // offset of t = 0 relative to the first grid point (may be negative)
        let zero_at = i0r
            .to_i64()
            .ok_or_else(|| Error::InvalidInput("grid origin out of range".into()))?;
        let last = zero_at - (n as i64 - 1); // index of the last point relative to zero, negated
        let n_back = if zero_at > 0 { zero_at as usize + 1 } else { 0 };
        let n_fwd = if last < 0 { (-last) as usize + 1 } else { 0 };
        let back_gen = if n_back >= 2 {
            Some(FbmGenerator::new(hurst, dt, n_back)?)
        } else {
            None
        };
        let fwd_gen = if n_fwd >= 2 {
            Some(FbmGenerator::new(hurst, dt, n_fwd)?)
        } else {
            None
        };
        let paths = (0..n_modes)
            .into_par_iter()
            .map(|i| {
                let stream = field.stream(i);
                let back = back_gen.as_ref().map(|g| g.sample_values(seed, stream, Half::Back));
                let fwd = fwd_gen.as_ref().map(|g| g.sample_values(seed, stream, Half::Forward));
                (0..n)
                    .map(|j| {
                        let rel = j as i64 - zero_at;
                        match rel.cmp(&0) {
                            std::cmp::Ordering::Less => back.as_ref().expect("backward half")[(-rel) as usize],
                            std::cmp::Ordering::Equal => T::zero(),
                            std::cmp::Ordering::Greater => fwd.as_ref().expect("forward half")[rel as usize],
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            field,
            hurst,
            t0,
            dt,
            n,
            seed,
            paths,
        })
    }

    pub fn time(&self, i: usize) -> T {
        self.t0 + self.dt * T::from_usize_lossy(i)
    }
}

/// Initial condition of [`simulate_convolution`].
#[derive(Debug, Clone, PartialEq)]
pub enum ZInit<T> {
    /// Start from these per-mode values at the first grid time.
    Values(Vec<T>),
    /// Start from zero at the first grid time and keep only times `>= keep_from`.
    BurnIn { keep_from: T },
}

/// Per-mode coefficient series on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionPath<T> {
    pub field: NoiseField,
    pub t0: T,
    pub dt: T,
    pub n_times: usize,
    pub n_modes: usize,
    /// `z[i * n_modes + mode]` at time `t0 + i*dt`.
    pub z: Vec<T>,
    pub lambdas: Vec<T>,
    pub gammas: Vec<T>,
    pub amplitude: T,
    pub seed: u64,
    /// Count of (step, mode) pairs with `(γ+β) dt > 50`.
    pub degenerate_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SobolevNorms {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormRow {
    pub t: f64,
    pub norms: SobolevNorms,
}

/// Decay factor and increment weight of one exact step at rate·dt = `x`.
#[inline]
pub fn ou_step_weights<T: Real>(x: T) -> (T, T) {
    if x.abs() < T::lit(1e-4) {
        let w = T::one() - x / T::lit(2.0) + x * x / T::lit(6.0) - x * x * x / T::lit(24.0);
        ((-x).exp(), w)
    } else {
        ((-x).exp(), -(-x).exp_m1() / x)
    }
}

/// Run the per-mode recursion over the bundle's grid.
pub fn simulate_convolution<T: Real>(
    spec: &NoiseSpec<T>,
    basis: &SpectralBasis<T>,
    bundle: &FbmBundle<T>,
    init: ZInit<T>,
) -> Result<ConvolutionPath<T>> {
    let gammas = bundle.field.gammas(basis);
    simulate_convolution_modes(spec, &gammas, bundle, init)
}

/// [`simulate_convolution`] for an explicit spectrum.
pub fn simulate_convolution_modes<T: Real>(
    spec: &NoiseSpec<T>,
    gammas: &[T],
    bundle: &FbmBundle<T>,
    init: ZInit<T>,
) -> Result<ConvolutionPath<T>> {
    let n_modes = gammas.len();
    let lambdas = spec.lambdas(gammas);
    let noisy = spec.noisy_modes(n_modes);
    if bundle.paths.len() < noisy {
        return invalid(format!(
            "missing fBm stream: {} noisy modes but only {} paths",
            noisy,
            bundle.paths.len()
        ));
    }
    if !(bundle.dt > T::zero()) {
        return invalid("time step must be positive");
    }
    let (mut z, keep) = match init {
        ZInit::Values(v) => {
            if v.len() != n_modes {
                return invalid(format!("initial values: expected {n_modes}, got {}", v.len()));
            }
            (v, 0usize)
        }
        ZInit::BurnIn { keep_from } => {
            let k = ((keep_from - bundle.t0) / bundle.dt).round();
            let k = k
                .to_usize()
                .filter(|&k| k < bundle.n)
                .ok_or_else(|| Error::InvalidInput(format!("burn-in end {keep_from} outside the noise grid")))?;
            (vec![T::zero(); n_modes], k)
        }
    };
    let weights: Vec<(T, T)> = gammas
        .iter()
        .map(|&g| ou_step_weights((g + spec.beta_shift) * bundle.dt))
        .collect();
    let degenerate = gammas
        .iter()
        .filter(|&&g| ((g + spec.beta_shift) * bundle.dt).f64() > DEGENERATE_RATE)
        .count()
        * (bundle.n - 1);
    let n_times = bundle.n - keep;
    let mut out = Vec::with_capacity(n_times * n_modes);
    if keep == 0 {
        out.extend_from_slice(&z);
    }
    for step in 1..bundle.n {
        for (m, zm) in z.iter_mut().enumerate() {
            let (decay, w) = weights[m];
            let db = if m < noisy {
                bundle.paths[m][step] - bundle.paths[m][step - 1]
            } else {
                T::zero()
            };
            *zm = decay * *zm + w * db;
        }
        if step >= keep {
            out.extend_from_slice(&z);
        }
    }
    Ok(ConvolutionPath {
        field: bundle.field,
        t0: bundle.time(keep),
        dt: bundle.dt,
        n_times,
        n_modes,
        z: out,
        lambdas,
        gammas: gammas.to_vec(),
        amplitude: spec.amplitude,
        seed: bundle.seed,
        degenerate_steps: degenerate,
    })
}

/// Number of grid steps covering `len` (rounded up).
fn steps_for<T: Real>(len: T, dt: T) -> usize {
    let r = len / dt;
    let rr = r.round();
    let k = if (r - rr).abs() < T::lit(1e-9) { rr } else { r.ceil() };
    k.to_usize().unwrap_or(0)
}

/// Stationary convolution on `[t_start, t_end]`: the recursion starts from
/// zero one burn-in length before `t_start` and the burn-in is discarded.
#[allow(clippy::too_many_arguments)]
pub fn stationary_convolution<T: Real>(
    spec: &NoiseSpec<T>,
    basis: &SpectralBasis<T>,
    field: NoiseField,
    seed: u64,
    t_start: T,
    t_end: T,
    dt: T,
) -> Result<ConvolutionPath<T>> {
    let gammas = field.gammas(basis);
    stationary_convolution_modes(spec, &gammas, field, seed, t_start, t_end, dt, T::one())
}

/// [`stationary_convolution`] for an explicit spectrum, with the burn-in
/// scaled by `burn_factor`.
#[allow(clippy::too_many_arguments)]
pub fn stationary_convolution_modes<T: Real>(
    spec: &NoiseSpec<T>,
    gammas: &[T],
    field: NoiseField,
    seed: u64,
    t_start: T,
    t_end: T,
    dt: T,
    burn_factor: T,
) -> Result<ConvolutionPath<T>> {
    if !(t_end > t_start) {
        return invalid(format!("empty interval [{t_start}, {t_end}]"));
    }
    let burn_steps = steps_for(spec.burn_in_length(gammas) * burn_factor, dt);
    let span_steps = steps_for(t_end - t_start, dt);
    let t0 = t_start - dt * T::from_usize_lossy(burn_steps);
    let bundle = FbmBundle::generate(
        spec.hurst,
        field,
        spec.noisy_modes(gammas.len()),
        t0,
        dt,
        burn_steps + span_steps + 1,
        seed,
    )?;
    simulate_convolution_modes(spec, gammas, &bundle, ZInit::BurnIn { keep_from: t_start })
}

impl<T: Real> ConvolutionPath<T> {
    pub fn time(&self, i: usize) -> T {
        self.t0 + self.dt * T::from_usize_lossy(i)
    }

    pub fn t_end(&self) -> T {
        self.time(self.n_times - 1)
    }

    /// Raw per-mode values `z_i` at time index `i`.
    pub fn z_at(&self, i: usize) -> &[T] {
        &self.z[i * self.n_modes..(i + 1) * self.n_modes]
    }

    /// Field coefficients `amplitude · λ^{1/2} · z` at time index `i`.
    pub fn coeffs_at_index(&self, i: usize) -> Vec<T> {
        self.z_at(i)
            .iter()
            .zip(&self.lambdas)
            .map(|(&z, &l)| self.amplitude * l.sqrt() * z)
            .collect()
    }

    /// Field coefficients at time `t`, linearly interpolated between nodes.
    pub fn coeffs_at(&self, t: T) -> Result<Vec<T>> {
        let x = (t - self.t0) / self.dt;
        let tol = T::lit(1e-9);
        let last = T::from_usize_lossy(self.n_times - 1);
        if x < -tol || x > last + tol {
            return invalid(format!(
                "time {t} outside the noise path [{}, {}]",
                self.t0,
                self.t_end()
            ));
        }
        let xr = x.round();
        if (x - xr).abs() <= tol {
            let i = xr.to_usize().unwrap_or(0).min(self.n_times - 1);
            return Ok(self.coeffs_at_index(i));
        }
        let i = x.floor().to_usize().unwrap_or(0).min(self.n_times - 2);
        let f = x - T::from_usize_lossy(i);
        let a = self.coeffs_at_index(i);
        let b = self.coeffs_at_index(i + 1);
        Ok(a.iter().zip(&b).map(|(&p, &q)| p + f * (q - p)).collect())
    }

    /// `(Σ amplitude² λ_i γ_i^s z_i²)^{1/2}` at time index `i`, `s ∈ {0,1,2,3}`.
    pub fn sobolev_norm(&self, s: T, i: usize) -> Result<T> {
        let si = s.round();
        if (s - si).abs() > T::zero() || si < T::zero() || si > T::lit(3.0) {
            return invalid(format!("Sobolev index must be 0, 1, 2 or 3, got {s}"));
        }
        if i >= self.n_times {
            return invalid(format!("time index {i} out of range"));
        }
        let p = si.to_i32().unwrap_or(0);
        Ok(self.weighted_norm(self.z_at(i), p))
    }

    fn weighted_norm(&self, z: &[T], p: i32) -> T {
        let s: T = z
            .iter()
            .zip(&self.lambdas)
            .zip(&self.gammas)
            .map(|((&z, &l), &g)| l * g.powi(p) * z * z)
            .sum();
        self.amplitude * s.sqrt()
    }

    /// `‖Z(t_j) - Z(t_i)‖_s` for time indices `i, j`.
    pub fn increment_norm(&self, i: usize, j: usize, s: i32) -> T {
        let d: Vec<T> = self.z_at(j).iter().zip(self.z_at(i)).map(|(&a, &b)| a - b).collect();
        self.weighted_norm(&d, s)
    }

    pub fn norm_rows(&self) -> Vec<NormRow> {
        (0..self.n_times)
            .map(|i| {
                let z = self.z_at(i);
                NormRow {
                    t: self.time(i).f64(),
                    norms: SobolevNorms {
                        s0: self.weighted_norm(z, 0).f64(),
                        s1: self.weighted_norm(z, 1).f64(),
                        s2: self.weighted_norm(z, 2).f64(),
                        s3: self.weighted_norm(z, 3).f64(),
                    },
                }
            })
            .collect()
    }

    pub fn write_ndjson<W: Write>(&self, w: W) -> Result<()> {
        write_ndjson(w, self.norm_rows())
    }

    /// Binary dump with one row per time: `t` then the field coefficients.
    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        let cols = self.n_modes + 1;
        let mut data = Vec::with_capacity(self.n_times * cols);
        for i in 0..self.n_times {
            data.push(self.time(i).f64());
            data.extend(self.coeffs_at_index(i).into_iter().map(|v| v.f64()));
        }
        write_matrix(w, self.n_times, cols, &data)
    }
}

/// Stationary variance `H Γ(2H) λ^{-2H}` of the scalar fractional OU
/// process with rate `λ`.
pub fn stationary_fou_variance<T: Real>(h: T, rate: T) -> T {
    let two_h = h + h;
    h * gamma(two_h) * rate.powf(-two_h)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub beta: f64,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentTable {
    pub moment: u32,
    pub n_samples: usize,
    pub burn_in: f64,
    pub rows: Vec<EstimateRow>,
    /// Consecutive paired differences exceed two standard errors.
    pub strictly_decreasing: bool,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Run the recursion from zero over `bundle` for each rate set and return
/// the final `‖Z‖_s` values, reusing one set of fBm increments.
fn final_norms<T: Real>(
    spec: &NoiseSpec<T>,
    gammas: &[T],
    lambdas: &[T],
    bundle: &FbmBundle<T>,
    betas: &[T],
    s: i32,
) -> Vec<f64> {
    let noisy = bundle.paths.len();
    betas
        .iter()
        .map(|&beta| {
            let mut acc = T::zero();
            for (m, path) in bundle.paths.iter().enumerate().take(noisy) {
                let (decay, w) = ou_step_weights((gammas[m] + beta) * bundle.dt);
                let mut z = T::zero();
                for k in 1..bundle.n {
                    z = decay * z + w * (path[k] - path[k - 1]);
                }
                acc += lambdas[m] * gammas[m].powi(s) * z * z;
            }
            (spec.amplitude * acc.sqrt()).f64()
        })
        .collect()
}

/// Monte-Carlo estimates of `E‖Z(0)‖_3^m` for each β.
///
/// All β share the same fBm samples (common random numbers) and the burn-in
/// of the smallest β, so the table is compared through paired differences.
#[allow(clippy::too_many_arguments)]
pub fn moment_experiment<T: Real>(
    spec: &NoiseSpec<T>,
    basis: &SpectralBasis<T>,
    field: NoiseField,
    m: u32,
    n_samples: usize,
    betas: &[T],
    dt: T,
    seed: u64,
) -> Result<MomentTable> {
    let gammas = field.gammas(basis);
    moment_experiment_modes(spec, &gammas, field, m, n_samples, betas, dt, seed)
}

#[allow(clippy::too_many_arguments)]
pub fn moment_experiment_modes<T: Real>(
    spec: &NoiseSpec<T>,
    gammas: &[T],
    field: NoiseField,
    m: u32,
    n_samples: usize,
    betas: &[T],
    dt: T,
    seed: u64,
) -> Result<MomentTable> {
    if m == 0 || m % 2 == 1 {
        return invalid(format!("moment order must be even and positive, got {m}"));
    }
    if betas.is_empty() {
        return invalid("empty beta grid");
    }
    if n_samples < 2 {
        return invalid("need at least two samples");
    }
    let bmin = betas.iter().copied().fold(T::infinity(), T::min);
    let burn = spec.with_beta(bmin)?.burn_in_length(gammas);
    let steps = steps_for(burn, dt);
    let lambdas = spec.lambdas(gammas);
    let noisy = spec.noisy_modes(gammas.len());
    let t0 = -dt * T::from_usize_lossy(steps);
    let samples: Vec<Vec<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let bundle = FbmBundle::generate(spec.hurst, field, noisy, t0, dt, steps + 1, derive_seed(seed, k as u64))?;
            Ok(final_norms(spec, gammas, &lambdas, &bundle, betas, 3)
                .into_iter()
                .map(|v| v.powi(m as i32))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(betas.len());
    for (j, &b) in betas.iter().enumerate() {
        let col: Vec<f64> = samples.iter().map(|s| s[j]).collect();
        let (estimate, std_error) = mean_se(&col);
        rows.push(EstimateRow {
            beta: b.f64(),
            estimate,
            std_error,
        });
    }
    let strictly_decreasing = (1..betas.len()).all(|j| {
        let d: Vec<f64> = samples.iter().map(|s| s[j - 1] - s[j]).collect();
        let (md, sd) = mean_se(&d);
        md > 2.0 * sd && md > 0.0
    });
    Ok(MomentTable {
        moment: m,
        n_samples,
        burn_in: (dt * T::from_usize_lossy(steps)).f64(),
        rows,
        strictly_decreasing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BurnInCheck {
    pub burn_in: f64,
    pub estimate: f64,
    pub estimate_doubled: f64,
    pub std_error: f64,
    pub passed: bool,
}

/// Compare `E‖Z(0)‖_3²` under the default burn-in and twice that burn-in.
///
/// Both runs read the same fBm sample over the doubled window, so the
/// difference isolates the burn-in bias.
pub fn burn_in_doubling_check<T: Real>(
    spec: &NoiseSpec<T>,
    gammas: &[T],
    field: NoiseField,
    n_samples: usize,
    dt: T,
    seed: u64,
) -> Result<BurnInCheck> {
    if n_samples < 2 {
        return invalid("need at least two samples");
    }
    let steps = steps_for(spec.burn_in_length(gammas), dt);
    let lambdas = spec.lambdas(gammas);
    let noisy = spec.noisy_modes(gammas.len());
    let t0 = -dt * T::from_usize_lossy(2 * steps);
    let pairs: Vec<(f64, f64)> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let long = FbmBundle::generate(
                spec.hurst,
                field,
                noisy,
                t0,
                dt,
                2 * steps + 1,
                derive_seed(seed, k as u64),
            )?;
            let mut short = long.clone();
            short.t0 = -dt * T::from_usize_lossy(steps);
            short.n = steps + 1;
            for p in &mut short.paths {
                p.drain(..steps);
            }
            let beta = [spec.beta_shift];
            let a = final_norms(spec, gammas, &lambdas, &short, &beta, 3)[0];
            let b = final_norms(spec, gammas, &lambdas, &long, &beta, 3)[0];
            Ok((a * a, b * b))
        })
        .collect::<Result<_>>()?;
    let (a, se) = mean_se(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let (b, _) = mean_se(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    Ok(BurnInCheck {
        burn_in: (dt * T::from_usize_lossy(steps)).f64(),
        estimate: a,
        estimate_doubled: b,
        std_error: se,
        passed: (a - b).abs() < se || a == b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthRow {
    pub lookback: f64,
    pub median: f64,
    pub q90: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub rows: Vec<GrowthRow>,
    /// Log-log slope of the median supremum against the lookback.
    pub exponent: f64,
    pub verdict: Verdict,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Distribution of `sup_{t ∈ [-T, 0]} ‖Z(t)‖_3` over samples for each
/// lookback `T`; PASS iff the median grows with exponent below 1/2.
#[allow(clippy::too_many_arguments)]
pub fn growth_experiment<T: Real>(
    spec: &NoiseSpec<T>,
    basis: &SpectralBasis<T>,
    field: NoiseField,
    lookbacks: &[T],
    n_samples: usize,
    dt: T,
    seed: u64,
) -> Result<GrowthReport> {
    if lookbacks.len() < 2 || lookbacks.iter().any(|&t| !(t > T::zero())) {
        return invalid("need at least two positive lookbacks");
    }
    let tmax = lookbacks.iter().copied().fold(T::zero(), T::max);
    let sups: Vec<Vec<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let p = stationary_convolution(spec, basis, field, derive_seed(seed, k as u64), -tmax, T::zero(), dt)?;
            let norms: Vec<f64> = (0..p.n_times).map(|i| p.weighted_norm(p.z_at(i), 3).f64()).collect();
            Ok(lookbacks
                .iter()
                .map(|&lb| {
                    let from = p.n_times - 1 - steps_for(lb, dt).min(p.n_times - 1);
                    norms[from..].iter().copied().fold(0.0, f64::max)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (j, &lb) in lookbacks.iter().enumerate() {
        let mut col: Vec<f64> = sups.iter().map(|s| s[j]).collect();
        col.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        rows.push(GrowthRow {
            lookback: lb.f64(),
            median: quantile(&col, 0.5),
            q90: quantile(&col, 0.9),
            max: *col.last().unwrap_or(&f64::NAN),
        });
    }
    let exponent = if rows.iter().all(|r| r.median > 0.0) {
        let x: Vec<f64> = rows.iter().map(|r| r.lookback.ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.median.ln()).collect();
        fit_slope(&x, &y)
    } else {
        0.0
    };
    Ok(GrowthReport {
        rows,
        exponent,
        verdict: Verdict::from_bool(exponent < 0.5),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderFit {
    pub lags: Vec<f64>,
    pub medians: Vec<f64>,
    pub slope: f64,
    pub verdict: Verdict,
}

/// Required fitted increment exponent.
pub const HOLDER_SLOPE_TARGET: f64 = 0.45;

/// Fit the increment exponent of `‖Z(t) - Z(s)‖_s` over dyadic lags from
/// one grid step up to an eighth of the span.
pub fn holder_experiment<T: Real>(paths: &[ConvolutionPath<T>], s_norm: i32) -> Result<HolderFit> {
    let first = paths
        .first()
        .ok_or_else(|| Error::InvalidInput("empty ensemble".into()))?;
    if paths.iter().any(|p| p.n_times != first.n_times || p.dt != first.dt) {
        return invalid("ensemble paths must share one time grid");
    }
    let span = first.n_times - 1;
    if span < 16 {
        return invalid("paths too short for a dyadic lag fit");
    }
    let mut lags = Vec::new();
    let mut medians = Vec::new();
    let mut lag = 1usize;
    while lag * 8 <= span {
        let mut vals: Vec<f64> = Vec::new();
        for p in paths {
            let mut i = 0;
            while i + lag <= span {
                vals.push(p.increment_norm(i, i + lag, s_norm).f64());
                i += lag;
            }
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        lags.push((first.dt * T::from_usize_lossy(lag)).f64());
        medians.push(quantile(&vals, 0.5));
        lag *= 2;
    }
    let slope = if medians.iter().all(|&m| m > 0.0) {
        let x: Vec<f64> = lags.iter().map(|l| l.ln()).collect();
        let y: Vec<f64> = medians.iter().map(|m| m.ln()).collect();
        fit_slope(&x, &y)
    } else {
        f64::NAN
    };
    Ok(HolderFit {
        lags,
        medians,
        slope,
        verdict: Verdict::from_bool(slope >= HOLDER_SLOPE_TARGET),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OuStats {
    pub hurst: f64,
    pub rate: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub variance: f64,
    pub std_error: f64,
    pub oracle: f64,
    /// `(variance - oracle) / std_error`.
    pub z_score: f64,
    pub verdict: Verdict,
}

/// Sample variance of a scalar OU process driven by fBm.
///
/// For `H = 1/2` the process starts at zero and is read at `horizon`, with
/// oracle `(1 - e^{-2λT}) / (2λ)`. Otherwise the stationary variance is
/// estimated after burn-in and compared to `H Γ(2H) λ^{-2H}`.
pub fn ou_statistics<T: Real>(
    hurst: HurstIndex<T>,
    rate: T,
    horizon: T,
    dt: T,
    n_paths: usize,
    seed: u64,
) -> Result<OuStats> {
    if !(rate > T::zero()) {
        return invalid("rate must be positive");
    }
    if n_paths < 2 {
        return invalid("need at least two paths");
    }
    let h = hurst.value().f64();
    let brownian = (h - 0.5).abs() < 1e-15;
    let length = if brownian {
        horizon
    } else {
        T::lit(BURN_IN_EFOLDS) / rate + horizon
    };
    let steps = steps_for(length, dt);
    let gen = FbmGenerator::new(hurst, dt, steps + 1)?;
    let (decay, w) = ou_step_weights(rate * dt);
    let vals: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|k| {
            let b = gen.sample_values(derive_seed(seed, k as u64), 0, Half::Forward);
            let mut z = T::zero();
            for i in 1..b.len() {
                z = decay * z + w * (b[i] - b[i - 1]);
            }
            let z = z.f64();
            z * z
        })
        .collect();
    let (variance, std_error) = mean_se(&vals);
    let r = rate.f64();
    let oracle = if brownian {
        (1.0 - (-2.0 * r * horizon.f64()).exp()) / (2.0 * r)
    } else {
        stationary_fou_variance(h, r)
    };
    let z_score = (variance - oracle) / std_error;
    Ok(OuStats {
        hurst: h,
        rate: r,
        horizon: horizon.f64(),
        n_paths,
        variance,
        std_error,
        oracle,
        z_score,
        verdict: Verdict::from_bool(z_score.abs() <= 4.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_basis, Domain, Truncation};

    fn spec() -> NoiseSpec<f64> {
        NoiseSpec::new(0.75, 1.0, 10.0, 0.35).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(NoiseSpec::new(0.5, 1.0, 10.0, 0.35).is_err());
        assert!(NoiseSpec::new(0.75, 1.0, 10.0, 0.2).is_err());
        assert!(NoiseSpec::new(0.75, -1.0, 10.0, 0.35).is_err());
        assert!(NoiseSpec::generator_test(0.5, 0.0, 10.0).unwrap().generator_test_mode);
    }

    #[test]
    fn trace_condition_verdicts() {
        let b = build_basis::<f64>(Domain::default(), Truncation::new(5, 3).unwrap()).unwrap();
        let g: Vec<f64> = b.velocity_gammas().into_iter().take(200).collect();
        assert_eq!(g.len(), 200);
        let flat = NoiseSpec::new(0.75, 1.0, 0.0, 0.35).unwrap();
        let r = check_trace_conditions(&flat, &g).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(r.tail_bound.is_infinite());
        let steep = NoiseSpec::new(0.75, 1.0, 14.0, 0.35).unwrap();
        assert_eq!(check_trace_conditions(&steep, &g).unwrap().verdict, Verdict::Pass);
        let one = check_trace_conditions(&spec(), &g[..1]).unwrap();
        assert_eq!(one.verdict, Verdict::Pass);
        assert!(one.note.is_some());
    }

    #[test]
    fn zero_increments_give_pure_decay() {
        let s = spec();
        let g = [2.0, 5.0];
        let bundle = FbmBundle {
            field: NoiseField::Velocity,
            hurst: s.hurst,
            t0: 0.0,
            dt: 0.1,
            n: 11,
            seed: 0,
            paths: vec![vec![0.0; 11]; 2],
        };
        let p = simulate_convolution_modes(&s, &g, &bundle, ZInit::Values(vec![1.0, -2.0])).unwrap();
        for i in 0..11 {
            let t = 0.1 * i as f64;
            assert!((p.z_at(i)[0] - (-(3.0) * t).exp()).abs() < 1e-14);
            assert!((p.z_at(i)[1] + 2.0 * (-(6.0) * t).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_rate_reproduces_increments() {
        let s = NoiseSpec::new(0.75, 0.0, 10.0, 0.35).unwrap();
        let path: Vec<f64> = (0..9).map(|i| ((i * i) as f64 * 0.37).sin()).collect();
        let bundle = FbmBundle {
            field: NoiseField::Velocity,
            hurst: s.hurst,
            t0: 0.0,
            dt: 0.125,
            n: 9,
            seed: 0,
            paths: vec![path.clone()],
        };
        let p = simulate_convolution_modes(&s, &[0.0], &bundle, ZInit::Values(vec![0.0])).unwrap();
        for i in 0..9 {
            assert!((p.z_at(i)[0] - (path[i] - path[0])).abs() < 1e-14);
        }
    }

    #[test]
    fn sobolev_norm_examples() {
        let s = spec();
        let bundle = FbmBundle {
            field: NoiseField::Velocity,
            hurst: s.hurst,
            t0: 0.0,
            dt: 0.1,
            n: 2,
            seed: 0,
            paths: vec![vec![0.0; 2]; 2],
        };
        let g = [2.0, 3.0];
        let p = simulate_convolution_modes(&s, &g, &bundle, ZInit::Values(vec![1.0, 0.0])).unwrap();
        let l = 3.0f64.powf(-10.0);
        for sv in 0..4 {
            let want = (l * 2.0f64.powi(sv)).sqrt();
            assert!((p.sobolev_norm(sv as f64, 0).unwrap() - want).abs() < 1e-15);
        }
        assert!(p.sobolev_norm(1.5, 0).is_err());
        assert!(p.sobolev_norm(4.0, 0).is_err());
        let zero = simulate_convolution_modes(&s, &g, &bundle, ZInit::Values(vec![0.0, 0.0])).unwrap();
        assert_eq!(zero.sobolev_norm(3.0, 1).unwrap(), 0.0);
    }

    #[test]
    fn missing_streams_are_invalid_input() {
        let s = spec();
        let bundle = FbmBundle::generate(s.hurst, NoiseField::Velocity, 1, 0.0, 0.1, 5, 1).unwrap();
        assert!(matches!(
            simulate_convolution_modes(&s, &[1.0, 2.0], &bundle, ZInit::Values(vec![0.0, 0.0])),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn two_sided_bundle_is_zero_at_origin() {
        let s = spec();
        let b = FbmBundle::generate(s.hurst, NoiseField::Temperature, 3, -1.0, 0.25, 9, 4).unwrap();
        for p in &b.paths {
            assert_eq!(p[4], 0.0);
        }
        let c = FbmBundle::generate(s.hurst, NoiseField::Temperature, 3, -1.0, 0.25, 9, 4).unwrap();
        assert_eq!(b, c);
        assert!(FbmBundle::generate(s.hurst, NoiseField::Temperature, 3, -0.1, 0.25, 9, 4).is_err());
    }

    #[test]
    fn interpolated_coefficients_hit_nodes() {
        let s = spec();
        let g = [2.0, 3.0];
        let p = stationary_convolution_modes(&s, &g, NoiseField::Velocity, 9, -1.0, 0.0, 0.125, 1.0).unwrap();
        assert_eq!(p.n_times, 9);
        assert!((p.t0 + 1.0).abs() < 1e-12);
        assert_eq!(p.coeffs_at(-0.5).unwrap(), p.coeffs_at_index(4));
        let mid = p.coeffs_at(-0.4375).unwrap();
        let a = p.coeffs_at_index(4);
        let b = p.coeffs_at_index(5);
        assert!((mid[0] - 0.5 * (a[0] + b[0])).abs() < 1e-15);
        assert!(p.coeffs_at(0.5).is_err());
    }

    #[test]
    fn ndjson_and_binary_exports() {
        let s = spec();
        let p = stationary_convolution_modes(&s, &[2.0, 4.0], NoiseField::Velocity, 1, 0.0, 0.5, 0.125, 1.0).unwrap();
        let mut buf = Vec::new();
        p.write_ndjson(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        let row: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert!(row["norms"]["s3"].is_number());
        let mut bin = Vec::new();
        p.write_binary(&mut bin).unwrap();
        let (r, c, data) = crate::io::read_matrix(&bin[..]).unwrap();
        assert_eq!((r, c), (5, 3));
        assert_eq!(data[3], 0.125);
    }

    #[test]
    fn moments_vanish_without_noise() {
        let s = spec().with_amplitude(0.0).unwrap();
        let t = moment_experiment_modes(&s, &[2.0, 3.0], NoiseField::Velocity, 2, 8, &[1.0, 4.0], 0.1, 3).unwrap();
        assert!(t.rows.iter().all(|r| r.estimate == 0.0));
        assert!(moment_experiment_modes(&s, &[2.0], NoiseField::Velocity, 3, 8, &[1.0], 0.1, 3).is_err());
    }

    #[test]
    fn smooth_path_has_unit_increment_exponent() {
        let s = spec();
        let bundle = FbmBundle {
            field: NoiseField::Velocity,
            hurst: s.hurst,
            t0: 0.0,
            dt: 1.0 / 256.0,
            n: 257,
            seed: 0,
            paths: vec![vec![0.0; 257]; 2],
        };
        let p = simulate_convolution_modes(&s, &[1.0, 2.0], &bundle, ZInit::Values(vec![1.0, 1.0])).unwrap();
        let fit = holder_experiment(std::slice::from_ref(&p), 3).unwrap();
        assert!((fit.slope - 1.0).abs() < 0.05, "slope {}", fit.slope);
        assert_eq!(p.increment_norm(3, 3, 3), 0.0);
    }
}
