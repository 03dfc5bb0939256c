//! Fractional Brownian motion on uniform grids.
//!
//! Paths are built from fractional Gaussian noise drawn by circulant
//! embedding (Davies-Harte). When the embedding has a significantly negative
//! eigenvalue the generator falls back to a dense Cholesky factor of the
//! increment covariance, which is only attempted up to
//! [`CHOLESKY_MAX_INCREMENTS`] increments.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::fraccalc::GridFunction;
use crate::rng::{stream_rng, Half};
use crate::scalar::Real;

pub const CHOLESKY_MAX_INCREMENTS: usize = 4096;
/// Significance level of [`increment_stationarity_check`].
pub const STATIONARITY_LEVEL: f64 = 1e-3;
pub const STATIONARITY_MIN_PATHS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HurstIndex<T> {
    h: T,
}

impl<T: Real> HurstIndex<T> {
    pub fn new(h: T) -> Result<Self> {
        if h > T::zero() && h < T::one() {
            Ok(Self { h })
        } else {
            invalid(format!("Hurst index must lie in (0, 1), got {h}"))
        }
    }

    #[inline]
    pub fn value(&self) -> T {
        self.h
    }

    /// Pathwise Stieltjes integration against the path needs `H > 1/2`.
    pub fn require_pathwise(&self) -> Result<()> {
        if self.h > T::lit(0.5) {
            Ok(())
        } else {
            invalid(format!("pathwise integration needs H > 1/2, got {}", self.h))
        }
    }

    /// Covariance `½(s^{2H} + t^{2H} - |s-t|^{2H})`.
    pub fn covariance(&self, s: T, t: T) -> T {
        let e = self.h + self.h;
        T::lit(0.5) * (s.abs().powf(e) + t.abs().powf(e) - (s - t).abs().powf(e))
    }

    /// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
    fn fgn_autocov(&self, k: usize) -> T {
        let e = self.h + self.h;
        let k = T::from_usize_lossy(k);
        let one = T::one();
        T::lit(0.5) * ((k + one).powf(e) - T::lit(2.0) * k.powf(e) + (k - one).abs().powf(e))
    }
}

/// A sampled fBm path with the key that reproduces it.
#[derive(Debug, Clone, PartialEq)]
pub struct FbmPath<T> {
    pub hurst: HurstIndex<T>,
    pub path: GridFunction<T>,
    pub seed: u64,
    pub stream_id: u64,
    /// Seed of the negative-time half, for two-sided paths.
    pub backward_seed: Option<u64>,
}

/// JSON sidecar that pins down how a path file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbmSidecar {
    #[serde(rename = "H")]
    pub h: f64,
    pub seed: u64,
    pub stream_id: u64,
    pub t0: f64,
    pub dt: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backward_seed: Option<u64>,
}

impl<T: Real> FbmPath<T> {
    pub fn sidecar(&self) -> FbmSidecar {
        FbmSidecar {
            h: self.hurst.value().f64(),
            seed: self.seed,
            stream_id: self.stream_id,
            t0: self.path.t0().f64(),
            dt: self.path.dt().f64(),
            n: self.path.len(),
            backward_seed: self.backward_seed,
        }
    }

    /// Write the `t,value` CSV and its JSON sidecar.
    pub fn write<W1: Write, W2: Write>(&self, csv: W1, mut sidecar: W2) -> Result<()> {
        self.path.write_csv(csv)?;
        serde_json::to_writer_pretty(&mut sidecar, &self.sidecar())?;
        writeln!(sidecar)?;
        Ok(())
    }
}

impl FbmSidecar {
    /// Regenerate the path described by this sidecar.
    pub fn regenerate<T: Real>(&self) -> Result<FbmPath<T>> {
        let hurst = HurstIndex::new(T::lit(self.h))?;
        match self.backward_seed {
            None => sample_fbm(hurst, T::lit(self.dt), self.n, self.seed, self.stream_id),
            Some(back) => {
                if self.n.is_multiple_of(2) {
                    return invalid("two-sided path must have an odd number of samples");
                }
                let fwd = sample_fbm(hurst, T::lit(self.dt), self.n / 2 + 1, self.seed, self.stream_id)?;
                two_sided_extend(&fwd, back)
            }
        }
    }
}

enum Method<T: Real> {
    Embedding {
        /// `sqrt(λ_k / 2M)` for the circulant of size `2M`.
        scale: Vec<T>,
        fft: Arc<dyn Fft<T>>,
    },
    Cholesky {
        /// Row-major lower factor.
        lower: Vec<T>,
    },
}

/// Reusable generator for many paths on the same grid.
pub struct FbmGenerator<T: Real> {
    hurst: HurstIndex<T>,
    dt: T,
    n: usize,
    method: Method<T>,
}

impl<T: Real> std::fmt::Debug for FbmGenerator<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FbmGenerator")
            .field("hurst", &self.hurst)
            .field("dt", &self.dt)
            .field("n", &self.n)
            .field("method", &self.method_name())
            .finish()
    }
}

impl<T: Real> FbmGenerator<T> {
    /// Generator for paths with `n` samples on `0, dt, ..., (n-1)dt`.
    pub fn new(hurst: HurstIndex<T>, dt: T, n: usize) -> Result<Self> {
        if n < 2 {
            return invalid(format!("need at least 2 grid points, got {n}"));
        }
        if !(dt > T::zero()) || !dt.is_finite() {
            return invalid(format!("grid step must be positive, got {dt}"));
        }
        let incs = n - 1;
        let method = match Self::embedding(&hurst, incs) {
            Ok(m) => m,
            Err(why) => Self::cholesky(&hurst, incs)
                .map_err(|chol| Error::GenerationFailed(format!("circulant embedding: {why}; Cholesky: {chol}")))?,
        };
        Ok(Self { hurst, dt, n, method })
    }

    /// Generator that skips the embedding and always uses Cholesky.
    pub fn new_cholesky(hurst: HurstIndex<T>, dt: T, n: usize) -> Result<Self> {
        if n < 2 {
            return invalid(format!("need at least 2 grid points, got {n}"));
        }
        let method = Self::cholesky(&hurst, n - 1).map_err(Error::GenerationFailed)?;
        Ok(Self { hurst, dt, n, method })
    }

    pub fn method_name(&self) -> &'static str {
        match self.method {
            Method::Embedding { .. } => "circulant-embedding",
            Method::Cholesky { .. } => "cholesky",
        }
    }

    pub fn hurst(&self) -> HurstIndex<T> {
        self.hurst
    }
    pub fn dt(&self) -> T {
        self.dt
    }
    pub fn len(&self) -> usize {
        self.n
    }
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn embedding(hurst: &HurstIndex<T>, incs: usize) -> std::result::Result<Method<T>, String> {
        let m = incs.next_power_of_two();
        let size = 2 * m;
        let mut c: Vec<Complex<T>> = (0..size)
            .map(|k| {
                let lag = if k <= m { k } else { size - k };
                Complex::new(hurst.fgn_autocov(lag), T::zero())
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(size);
        fft.process(&mut c);
        let lmax = c.iter().map(|z| z.re.abs()).fold(T::zero(), T::max);
        let floor = -T::lit(1e-10) * lmax.max(T::one());
        if let Some((k, z)) = c.iter().enumerate().find(|(_, z)| z.re < floor) {
            return Err(format!("eigenvalue {k} is {} < 0", z.re));
        }
        let denom = T::from_usize_lossy(size);
        let scale = c.iter().map(|z| (z.re.max(T::zero()) / denom).sqrt()).collect();
        Ok(Method::Embedding { scale, fft })
    }

    fn cholesky(hurst: &HurstIndex<T>, incs: usize) -> std::result::Result<Method<T>, String> {
        if incs > CHOLESKY_MAX_INCREMENTS {
            return Err(format!(
                "{incs} increments exceed the dense limit {CHOLESKY_MAX_INCREMENTS}"
            ));
        }
        let acov: Vec<T> = (0..incs).map(|k| hurst.fgn_autocov(k)).collect();
        let mut l = vec![T::zero(); incs * incs];
        for i in 0..incs {
            for j in 0..=i {
                let mut s = acov[i - j];
                for k in 0..j {
                    s -= l[i * incs + k] * l[j * incs + k];
                }
                if i == j {
                    if !(s > T::zero()) {
                        return Err(format!("pivot {i} is {s}, covariance not positive definite"));
                    }
                    l[i * incs + i] = s.sqrt();
                } else {
                    l[i * incs + j] = s / l[j * incs + j];
                }
            }
        }
        Ok(Method::Cholesky { lower: l })
    }

    /// Unit-step fractional Gaussian noise of length `n - 1` from `rng`.
    fn fgn<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let incs = self.n - 1;
        match &self.method {
            Method::Embedding { scale, fft } => {
                let mut w: Vec<Complex<T>> = scale
                    .iter()
                    .map(|&s| Complex::new(s * T::standard_normal(rng), s * T::standard_normal(rng)))
                    .collect();
                fft.process(&mut w);
                w.into_iter().take(incs).map(|z| z.re).collect()
            }
            Method::Cholesky { lower } => {
                let z: Vec<T> = (0..incs).map(|_| T::standard_normal(rng)).collect();
                (0..incs)
                    .map(|i| {
                        let row = &lower[i * incs..i * incs + i + 1];
                        row.iter().zip(&z).map(|(&a, &b)| a * b).sum()
                    })
                    .collect()
            }
        }
    }

    /// Sample values `B(0) = 0, B(dt), ...` for key `(seed, stream_id, half)`.
    pub fn sample_values(&self, seed: u64, stream_id: u64, half: Half) -> Vec<T> {
        let mut rng = stream_rng(seed, stream_id, half);
        let noise = self.fgn(&mut rng);
        let scale = self.dt.powf(self.hurst.value() + self.hurst.value());
        let scale = scale.sqrt();
        let mut out = Vec::with_capacity(self.n);
        let mut acc = T::zero();
        out.push(acc);
        for x in noise {
            acc += scale * x;
            out.push(acc);
        }
        out
    }

    pub fn sample(&self, seed: u64, stream_id: u64) -> Result<FbmPath<T>> {
        let values = self.sample_values(seed, stream_id, Half::Forward);
        Ok(FbmPath {
            hurst: self.hurst,
            path: GridFunction::new(T::zero(), self.dt, values)?,
            seed,
            stream_id,
            backward_seed: None,
        })
    }
}

/// One fBm path on `0, dt, ..., (n-1)dt`, determined by `(seed, stream_id)`.
pub fn sample_fbm<T: Real>(hurst: HurstIndex<T>, dt: T, n: usize, seed: u64, stream_id: u64) -> Result<FbmPath<T>> {
    FbmGenerator::new(hurst, dt, n)?.sample(seed, stream_id)
}

/// Extend a forward path on `[0, T]` to `[-T, T]` with an independent fBm
/// run backwards in time, `W(t) = V(-t)` for `t <= 0`.
pub fn two_sided_extend<T: Real>(forward: &FbmPath<T>, backward_seed: u64) -> Result<FbmPath<T>> {
    let f = &forward.path;
    if f.t0() != T::zero() {
        return invalid("forward path must start at t = 0");
    }
    let gen = FbmGenerator::new(forward.hurst, f.dt(), f.len())?;
    let back = gen.sample_values(backward_seed, forward.stream_id, Half::Back);
    Ok(join_halves(forward, &back, backward_seed))
}

/// Assemble a two-sided path from a forward path and backward samples
/// `V(0), V(dt), ...` of the same length.
pub(crate) fn join_halves<T: Real>(forward: &FbmPath<T>, back: &[T], backward_seed: u64) -> FbmPath<T> {
    let f = &forward.path;
    let n = f.len();
    let mut values = Vec::with_capacity(2 * n - 1);
    values.extend(back.iter().rev());
    values.extend_from_slice(&f.values()[1..]);
    let t0 = -f.dt() * T::from_usize_lossy(n - 1);
    FbmPath {
        hurst: forward.hurst,
        path: GridFunction::new(t0, f.dt(), values).expect("finite samples"),
        seed: forward.seed,
        stream_id: forward.stream_id,
        backward_seed: Some(backward_seed),
    }
}

/// Outcome of [`increment_stationarity_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityReport {
    pub n_paths: usize,
    /// Increments per path and window.
    pub n_increments: usize,
    /// z statistic for equal mean increments across the windows.
    pub z_mean: f64,
    /// z statistic for equal mean squared increments across the windows.
    pub z_second_moment: f64,
    /// Smallest two-sided p-value after Bonferroni correction.
    pub p_value: f64,
    pub passed: bool,
}

/// Test that increments at `lag` have the same law on two disjoint windows.
///
/// For each path the mean increment and the mean squared increment on
/// non-overlapping lags are computed in both windows; the paired per-path
/// differences are then z-tested across paths. Failure is flagged when the
/// Bonferroni-corrected p-value drops below [`STATIONARITY_LEVEL`].
pub fn increment_stationarity_check<T: Real>(
    paths: &[FbmPath<T>],
    lag: T,
    window_a: (T, T),
    window_b: (T, T),
) -> Result<StationarityReport> {
    if paths.len() < STATIONARITY_MIN_PATHS {
        return invalid(format!(
            "stationarity check needs at least {STATIONARITY_MIN_PATHS} paths, got {}",
            paths.len()
        ));
    }
    let first = &paths[0].path;
    for p in paths {
        first.check_same_grid(&p.path)?;
    }
    let la = window_a.1 - window_a.0;
    let lb = window_b.1 - window_b.0;
    if (la - lb).abs() > T::lit(1e-9) * la.abs().max(T::one()) || !(la > T::zero()) {
        return invalid("windows must have equal positive length");
    }
    if window_a.1 > window_b.0 && window_b.1 > window_a.0 {
        return invalid("windows overlap");
    }
    let idx = |t: T| {
        first
            .index_of(t)
            .ok_or_else(|| Error::InvalidInput(format!("time {t} is not a grid node")))
    };
    let step = (lag / first.dt()).round().to_usize().unwrap_or(0);
    if step == 0 || (lag - first.dt() * T::from_usize_lossy(step)).abs() > T::lit(1e-9) * lag {
        return invalid(format!("lag {lag} is not a positive multiple of the grid step"));
    }
    let (a0, a1, b0, b1) = (idx(window_a.0)?, idx(window_a.1)?, idx(window_b.0)?, idx(window_b.1)?);
    let count = (a1 - a0) / step;
    if count == 0 {
        return invalid("lag exceeds window length");
    }
    let stats = |v: &[T], start: usize| {
        let mut m = 0.0;
        let mut q = 0.0;
        for k in 0..count {
            let d = (v[start + (k + 1) * step] - v[start + k * step]).f64();
            m += d;
            q += d * d;
        }
        (m / count as f64, q / count as f64)
    };
    let mut dm = Vec::with_capacity(paths.len());
    let mut dq = Vec::with_capacity(paths.len());
    for p in paths {
        let v = p.path.values();
        let (ma, qa) = stats(v, a0);
        let (mb, qb) = stats(v, b0);
        dm.push(ma - mb);
        dq.push(qa - qb);
    }
    debug_assert!(b1 >= b0);
    let z = |d: &[f64]| {
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        if var == 0.0 {
            if mean == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            mean / (var / n).sqrt()
        }
    };
    let z_mean = z(&dm);
    let z_second_moment = z(&dq);
    let normal = Normal::standard();
    let p = |z: f64| 2.0 * normal.sf(z.abs());
    let p_value = (2.0 * p(z_mean).min(p(z_second_moment))).min(1.0);
    Ok(StationarityReport {
        n_paths: paths.len(),
        n_increments: count,
        z_mean,
        z_second_moment,
        p_value,
        passed: p_value >= STATIONARITY_LEVEL,
    })
}
