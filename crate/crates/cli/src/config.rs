//! Run configuration: one JSON document per run.
//!
//! Unknown keys are rejected. Parse errors carry the line and column of the
//! offending token. The field reference lives in `docs/config.md`.

use std::path::{Path, PathBuf};

use fracpe::noise::NoiseField;
use fracpe::pesolver::Terms;
use fracpe::{Domain, NoiseSpec, Params, SpectralBasis};
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    CheckNoise,
    GenFbm,
    OuStats,
    Simulate,
    Pullback,
    Absorb,
    Contract,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::CheckNoise => "check-noise",
            Self::GenFbm => "gen-fbm",
            Self::OuStats => "ou-stats",
            Self::Simulate => "simulate",
            Self::Pullback => "pullback",
            Self::Absorb => "absorb",
            Self::Contract => "contract",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seed: u64,
    /// Noise seeds for per-seed experiments; `[seed]` when empty.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub domain: DomainConfig,
    #[serde(default)]
    pub truncation: TruncationConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub params: ParamsConfig,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check_noise: Option<CheckNoiseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen_fbm: Option<GenFbmConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ou_stats: Option<OuStatsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pullback: Option<PullbackConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub absorb: Option<AbsorbConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contract: Option<ContractConfig>,
}

fn default_dt() -> f64 {
    0.02
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config deserializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainConfig {
    pub lx: f64,
    pub ly: f64,
    pub alpha_robin: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            lx: std::f64::consts::PI,
            ly: std::f64::consts::PI,
            alpha_robin: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruncationConfig {
    pub m: usize,
    pub k: usize,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self { m: 4, k: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub hurst: f64,
    pub beta: f64,
    pub decay_p: f64,
    pub alpha: f64,
    pub amplitude: f64,
    pub modes: Option<usize>,
    /// Noise grid step; the solver step when absent.
    pub dt: Option<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            hurst: 0.75,
            beta: 1.0,
            decay_p: 10.0,
            alpha: 0.35,
            amplitude: 1.0,
            modes: None,
            dt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsConfig {
    pub f0: f64,
    pub beta_coriolis: f64,
    /// Heat source in the temperature basis; empty means zero.
    pub q: Vec<f64>,
    pub advection: bool,
    pub coriolis: bool,
    pub pressure: bool,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        Self {
            f0: 1.0,
            beta_coriolis: 0.0,
            q: Vec::new(),
            advection: true,
            coriolis: true,
            pressure: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct CheckNoiseConfig {
    pub moments: Option<MomentsConfig>,
    pub holder: Option<HolderConfig>,
    pub growth: Option<GrowthConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentsConfig {
    pub field: NoiseField,
    pub moment: u32,
    pub n_samples: usize,
    pub betas: Vec<f64>,
    pub dt: f64,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        Self {
            field: NoiseField::Velocity,
            moment: 2,
            n_samples: 2000,
            betas: vec![1.0, 4.0, 16.0],
            dt: 1.0 / 64.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HolderConfig {
    pub field: NoiseField,
    pub n_paths: usize,
    pub span: f64,
    pub dt: f64,
    pub s_norm: i32,
}

impl Default for HolderConfig {
    fn default() -> Self {
        Self {
            field: NoiseField::Velocity,
            n_paths: 100,
            span: 1.0,
            dt: 1.0 / 1024.0,
            s_norm: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowthConfig {
    pub field: NoiseField,
    pub lookbacks: Vec<f64>,
    pub n_samples: usize,
    pub dt: f64,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        Self {
            field: NoiseField::Velocity,
            lookbacks: vec![4.0, 8.0, 16.0, 32.0],
            n_samples: 200,
            dt: 1.0 / 16.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenFbmConfig {
    pub hurst: f64,
    pub dt: f64,
    pub n: usize,
    pub stream_id: u64,
    /// Seed of the negative-time half; one-sided when absent.
    pub backward_seed: Option<u64>,
}

impl Default for GenFbmConfig {
    fn default() -> Self {
        Self {
            hurst: 0.75,
            dt: 1.0 / 256.0,
            n: 257,
            stream_id: 0,
            backward_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OuStatsConfig {
    pub hurst: f64,
    pub rate: f64,
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
}

impl Default for OuStatsConfig {
    fn default() -> Self {
        Self {
            hurst: 0.5,
            rate: 1.0,
            horizon: 1.0,
            dt: 1.0 / 64.0,
            n_paths: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub t_start: f64,
    pub t_end: f64,
    /// V-norm of the random initial state; zero starts from rest.
    pub rho: f64,
    pub state_seed: u64,
    /// Energy row cadence in steps.
    pub report_every: usize,
    /// Coefficient snapshot cadence in steps; zero disables snapshots.
    pub snapshot_every: usize,
    /// Checkpoint cadence in steps; zero writes only the final checkpoint.
    pub checkpoint_every: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            t_start: 0.0,
            t_end: 10.0,
            rho: 1.0,
            state_seed: 0,
            report_every: 1,
            snapshot_every: 0,
            checkpoint_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PullbackConfig {
    pub start_times: Vec<f64>,
    pub eval_time: f64,
    pub rho: f64,
    pub n_states: usize,
    pub state_seed: u64,
    /// Fraction of seeds that must pass for an overall PASS.
    pub min_pass_fraction: f64,
}

impl Default for PullbackConfig {
    fn default() -> Self {
        Self {
            start_times: vec![-4.0, -8.0, -16.0, -32.0],
            eval_time: 0.0,
            rho: 1.0,
            n_states: 5,
            state_seed: 0,
            min_pass_fraction: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbsorbConfig {
    pub radii: Vec<f64>,
    pub t_start: f64,
    pub t_end: f64,
    pub window: f64,
    pub state_seed: u64,
    pub ball_radius: Option<f64>,
}

impl Default for AbsorbConfig {
    fn default() -> Self {
        Self {
            radii: vec![1.0, 4.0, 16.0],
            t_start: -30.0,
            t_end: 0.0,
            window: 2.0,
            state_seed: 0,
            ball_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContractConfig {
    pub horizon: f64,
    pub rho: f64,
    pub state_seed: u64,
    /// Perturbation scales for the Lipschitz check; skipped when empty.
    pub scales: Vec<f64>,
}

impl Default for ContractConfig {
    fn default() -> Self {
        Self {
            horizon: 4.0,
            rho: 1.0,
            state_seed: 0,
            scales: vec![1.0, 1e-2, 1e-4],
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "`{name}` must be positive and finite, got {v}"
        )))
    }
}

impl RunConfig {
    /// Parse a config document; errors name the line and column.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", origin.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Fix the experiment, apply the seed override, fill the experiment's
    /// section with defaults and validate.
    pub fn resolve(mut self, experiment: Experiment, seed: Option<u64>) -> Result<Self> {
        if let Some(e) = self.experiment {
            if e != experiment {
                return Err(CliError::Config(format!(
                    "config is for `{}` but the `{}` subcommand was run",
                    e.name(),
                    experiment.name()
                )));
            }
        }
        self.experiment = Some(experiment);
        if let Some(s) = seed {
            self.seed = s;
            self.seeds.clear();
        }
        if self.seeds.is_empty() {
            self.seeds.push(self.seed);
        }
        let sections = [
            ("check_noise", self.check_noise.is_some(), Experiment::CheckNoise),
            ("gen_fbm", self.gen_fbm.is_some(), Experiment::GenFbm),
            ("ou_stats", self.ou_stats.is_some(), Experiment::OuStats),
            ("simulate", self.simulate.is_some(), Experiment::Simulate),
            ("pullback", self.pullback.is_some(), Experiment::Pullback),
            ("absorb", self.absorb.is_some(), Experiment::Absorb),
            ("contract", self.contract.is_some(), Experiment::Contract),
        ];
        for (name, present, owner) in sections {
            if present && owner != experiment {
                return Err(CliError::Config(format!(
                    "section `{name}` does not apply to experiment `{}`",
                    experiment.name()
                )));
            }
        }
        match experiment {
            Experiment::CheckNoise => {
                self.check_noise.get_or_insert_with(Default::default);
            }
            Experiment::GenFbm => {
                self.gen_fbm.get_or_insert_with(Default::default);
            }
            Experiment::OuStats => {
                self.ou_stats.get_or_insert_with(Default::default);
            }
            Experiment::Simulate => {
                self.simulate.get_or_insert_with(Default::default);
            }
            Experiment::Pullback => {
                self.pullback.get_or_insert_with(Default::default);
            }
            Experiment::Absorb => {
                self.absorb.get_or_insert_with(Default::default);
            }
            Experiment::Contract => {
                self.contract.get_or_insert_with(Default::default);
            }
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        positive("dt", self.dt)?;
        if let Some(d) = self.noise.dt {
            positive("noise.dt", d)?;
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("`threads` must be at least 1".into()));
        }
        // constructing the core types runs their own checks
        self.domain()?;
        self.noise_spec()?;
        if let Some(s) = &self.simulate {
            if !(s.t_end > s.t_start) {
                return Err(CliError::Config(
                    "`simulate.t_end` must exceed `simulate.t_start`".into(),
                ));
            }
            if s.report_every == 0 {
                return Err(CliError::Config("`simulate.report_every` must be at least 1".into()));
            }
            self.steps_between(s.t_start, s.t_end)?;
        }
        if let Some(o) = &self.ou_stats {
            positive("ou_stats.rate", o.rate)?;
            positive("ou_stats.horizon", o.horizon)?;
            positive("ou_stats.dt", o.dt)?;
        }
        if let Some(g) = &self.gen_fbm {
            positive("gen_fbm.dt", g.dt)?;
        }
        if let Some(c) = &self.contract {
            positive("contract.horizon", c.horizon)?;
            positive("contract.rho", c.rho)?;
        }
        if let Some(p) = &self.pullback {
            if !(0.0..=1.0).contains(&p.min_pass_fraction) {
                return Err(CliError::Config(
                    "`pullback.min_pass_fraction` must lie in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    /// Whole number of steps of `dt` in `[a, b]`.
    pub fn steps_between(&self, a: f64, b: f64) -> Result<usize> {
        let r = (b - a) / self.dt;
        let n = r.round();
        if (r - n).abs() > 1e-6 || n < 0.0 {
            return Err(CliError::Config(format!(
                "interval [{a}, {b}] is not a whole number of steps of dt = {}",
                self.dt
            )));
        }
        Ok(n as usize)
    }

    pub fn experiment(&self) -> Experiment {
        self.experiment.expect("resolved config")
    }

    pub fn domain(&self) -> Result<Domain> {
        let d = &self.domain;
        Ok(fracpe::spectral::Domain::new(d.lx, d.ly, d.alpha_robin)?)
    }

    pub fn basis(&self) -> Result<SpectralBasis> {
        let t = fracpe::spectral::Truncation::new(self.truncation.m, self.truncation.k)?;
        Ok(fracpe::spectral::build_basis(self.domain()?, t)?)
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec> {
        let n = &self.noise;
        let mut spec =
            fracpe::noise::NoiseSpec::new(n.hurst, n.beta, n.decay_p, n.alpha)?.with_amplitude(n.amplitude)?;
        if let Some(m) = n.modes {
            spec = spec.with_modes(m);
        }
        Ok(spec)
    }

    pub fn noise_dt(&self) -> f64 {
        self.noise.dt.unwrap_or(self.dt)
    }

    pub fn params(&self) -> Params {
        let p = &self.params;
        fracpe::pesolver::Params {
            f0: p.f0,
            beta_coriolis: p.beta_coriolis,
            q_coeffs: p.q.clone(),
            terms: Terms {
                advection: p.advection,
                coriolis: p.coriolis,
                pressure: p.pressure,
            },
        }
    }

    /// The config without runtime-only settings (output root, threads),
    /// which do not affect results.
    pub fn portable(&self) -> Self {
        Self {
            out: None,
            threads: None,
            ..self.clone()
        }
    }

    /// Canonical bytes hashed into the manifest.
    pub fn canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(&self.portable()).expect("config serializes")
    }
}
