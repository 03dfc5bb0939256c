//! Experiment runners. Each writes `manifest.json`, `config.json`,
//! NDJSON results, `report.json` and `summary.txt` into its run directory.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use fracpe::attractor::{self, initial_states};
use fracpe::fbm::{sample_fbm, two_sided_extend};
use fracpe::noise::{self, NoiseField, Verdict};
use fracpe::pesolver::{self, Solver};
use fracpe::rng::derive_seed;
use fracpe::{HurstIndex, SpectralBasis};
use fracpe::{NoiseRealization, SpectralState};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, RunConfig};
use crate::manifest::{Manifest, CONFIG_FILE};
use crate::rundir::RunDir;
use crate::{init_threads, io_err, CliError, Invocation, Outcome, Result};

pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const RESULTS_FILE: &str = "results.ndjson";
pub const ENERGY_FILE: &str = "energy.ndjson";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const BASIS_FILE: &str = "basis.json";

/// Envelope of `report.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Report<R> {
    pub experiment: String,
    pub manifest_hash: String,
    /// `PASS`, `FAIL`, `complete` or `stopped`.
    pub status: String,
    pub result: R,
}

fn status(o: Outcome) -> &'static str {
    match o {
        Outcome::Pass => "PASS",
        Outcome::Fail => "FAIL",
        Outcome::Complete => "complete",
        Outcome::Stopped { .. } => "stopped",
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    dir: RunDir,
    manifest_hash: String,
}

impl Ctx<'_> {
    fn finish<R: Serialize>(&self, outcome: Outcome, result: &R, summary: &str) -> Result<Outcome> {
        let report = Report {
            experiment: self.cfg.experiment().name().to_string(),
            manifest_hash: self.manifest_hash.clone(),
            status: status(outcome).to_string(),
            result,
        };
        self.dir.write_json(REPORT_FILE, &report)?;
        let mut text = format!(
            "experiment: {}\nmanifest: {}\nstatus: {}\n",
            report.experiment, report.manifest_hash, report.status
        );
        text.push_str(summary);
        self.dir.write_bytes(SUMMARY_FILE, text.as_bytes())?;
        print!("{text}");
        Ok(outcome)
    }

    fn write_basis(&self, basis: &SpectralBasis) -> Result<()> {
        let mut w = self.dir.create_file(BASIS_FILE)?;
        basis.write_manifest(&mut w)?;
        w.flush().map_err(io_err(BASIS_FILE))
    }

    fn noise(&self, basis: &SpectralBasis, seed: u64, t0: f64, t1: f64) -> Result<Option<NoiseRealization>> {
        if !self.cfg.noise.enabled {
            return Ok(None);
        }
        let spec = self.cfg.noise_spec()?;
        Ok(Some(pesolver::NoiseRealization::generate(
            &spec,
            basis,
            seed,
            t0,
            t1,
            self.cfg.noise_dt(),
        )?))
    }
}

fn prepare<'a>(cfg: &'a RunConfig, out: &Path) -> Result<Ctx<'a>> {
    let dir = RunDir::create(out)?;
    let manifest = Manifest::new(cfg);
    manifest.write(dir.root())?;
    dir.write_json(CONFIG_FILE, &cfg.portable())?;
    Ok(Ctx {
        cfg,
        dir,
        manifest_hash: manifest.hash(),
    })
}

pub fn run_fresh(cfg: &RunConfig, out: &Path, max_steps: Option<usize>) -> Result<Outcome> {
    let ctx = prepare(cfg, out)?;
    match cfg.experiment() {
        Experiment::CheckNoise => check_noise(&ctx),
        Experiment::GenFbm => gen_fbm(&ctx),
        Experiment::OuStats => ou_stats(&ctx),
        Experiment::Simulate => simulate(&ctx, None, max_steps),
        Experiment::Pullback => pullback(&ctx),
        Experiment::Absorb => absorb(&ctx),
        Experiment::Contract => contract(&ctx),
    }
}

/// Continue a stopped `simulate` run in `dir`.
pub fn resume(experiment: Experiment, dir: &Path, inv: &Invocation) -> Result<Outcome> {
    if experiment != Experiment::Simulate {
        return Err(CliError::Resume(format!(
            "only `simulate` runs checkpoint; rerun `{}` from its config instead",
            experiment.name()
        )));
    }
    let manifest = Manifest::read(dir)?;
    let stored = RunConfig::load(&dir.join(CONFIG_FILE)).map_err(|e| CliError::Resume(e.to_string()))?;
    let stored = stored.resolve(experiment, inv.seed)?;
    manifest.check_matches(&stored)?;
    if let Some(p) = &inv.config {
        let given = RunConfig::load(p)?.resolve(experiment, inv.seed)?;
        if given.canonical_json() != stored.canonical_json() {
            return Err(CliError::Resume(format!(
                "{} differs from the config of the run in {}",
                p.display(),
                dir.display()
            )));
        }
    }
    let ckpt = dir.join(CHECKPOINT_FILE);
    if !ckpt.is_file() {
        return Err(CliError::Resume(format!("no checkpoint at {}", ckpt.display())));
    }
    init_threads(inv.threads)?;
    let ctx = Ctx {
        cfg: &stored,
        dir: RunDir::create(dir)?,
        manifest_hash: manifest.hash(),
    };
    simulate(&ctx, Some(&ckpt), inv.max_steps)
}

/// Summarize an existing run directory and return its recorded outcome.
pub fn report(dir: &Path) -> Result<Outcome> {
    let manifest = Manifest::read(dir)?;
    let cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let experiment = cfg
        .experiment
        .ok_or_else(|| CliError::Config("stored config names no experiment".into()))?;
    let cfg = cfg.resolve(experiment, None)?;
    let consistent = manifest.check_matches(&cfg).is_ok();
    let path = dir.join(REPORT_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(format!("reading {}", path.display())))?;
    let rep: Report<serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if rep.manifest_hash != manifest.hash() {
        return Err(CliError::Config(format!(
            "{} belongs to a different manifest ({} vs {})",
            path.display(),
            rep.manifest_hash,
            manifest.hash()
        )));
    }
    let summary = std::fs::read_to_string(dir.join(SUMMARY_FILE)).unwrap_or_default();
    print!("{summary}");
    println!("code version: {}", manifest.code_version);
    println!(
        "config matches manifest: {}",
        if consistent { "yes" } else { "NO (edited after the run)" }
    );
    Ok(match rep.status.as_str() {
        "PASS" => Outcome::Pass,
        "FAIL" => Outcome::Fail,
        "stopped" => Outcome::Stopped { step: 0 },
        _ => Outcome::Complete,
    })
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum NoiseRow<'a> {
    Trace {
        field: NoiseField,
        #[serde(flatten)]
        report: &'a noise::TraceReport,
    },
    Moment {
        field: NoiseField,
        moment: u32,
        #[serde(flatten)]
        row: &'a noise::EstimateRow,
    },
    Holder {
        field: NoiseField,
        lag: f64,
        median: f64,
    },
    Growth {
        field: NoiseField,
        #[serde(flatten)]
        row: &'a noise::GrowthRow,
    },
}

#[derive(Serialize)]
struct CheckNoiseResult {
    trace: Vec<(NoiseField, noise::TraceReport)>,
    moments: Option<noise::MomentTable>,
    holder: Option<noise::HolderFit>,
    growth: Option<noise::GrowthReport>,
}

fn check_noise(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let sec = cfg.check_noise.clone().unwrap_or_default();
    let basis = cfg.basis()?;
    ctx.write_basis(&basis)?;
    let spec = cfg.noise_spec()?;
    let mut ok = true;
    let mut summary = String::new();
    let mut trace = Vec::new();
    for field in [NoiseField::Velocity, NoiseField::Temperature] {
        let r = noise::check_trace_conditions(&spec, &field.gammas(&basis))?;
        ok &= r.verdict.passed();
        let _ = writeln!(
            summary,
            "trace condition ({field:?}, p = {}): {} (tail/partial = {:.3e}){}",
            r.decay_p,
            r.verdict,
            r.tail_fraction,
            r.note.as_ref().map(|n| format!("; {n}")).unwrap_or_default()
        );
        trace.push((field, r));
    }
    let moments = match &sec.moments {
        Some(m) => {
            let t = noise::moment_experiment(&spec, &basis, m.field, m.moment, m.n_samples, &m.betas, m.dt, cfg.seed)?;
            ok &= t.strictly_decreasing;
            let _ = writeln!(
                summary,
                "moment E|Z(0)|_3^{} strictly decreasing in beta: {}",
                m.moment,
                Verdict::from_bool(t.strictly_decreasing)
            );
            for r in &t.rows {
                let _ = writeln!(
                    summary,
                    "  beta = {}: {:.6e} +- {:.1e}",
                    r.beta, r.estimate, r.std_error
                );
            }
            Some(t)
        }
        None => None,
    };
    let holder = match &sec.holder {
        Some(h) => {
            let paths = (0..h.n_paths as u64)
                .into_par_iter()
                .map(|k| {
                    noise::stationary_convolution(&spec, &basis, h.field, derive_seed(cfg.seed, k), 0.0, h.span, h.dt)
                })
                .collect::<fracpe::Result<Vec<_>>>()?;
            let fit = noise::holder_experiment(&paths, h.s_norm)?;
            ok &= fit.verdict.passed();
            let _ = writeln!(summary, "increment exponent: {:.4} ({})", fit.slope, fit.verdict);
            Some(fit)
        }
        None => None,
    };
    let growth = match &sec.growth {
        Some(g) => {
            let r = noise::growth_experiment(&spec, &basis, g.field, &g.lookbacks, g.n_samples, g.dt, cfg.seed)?;
            ok &= r.verdict.passed();
            let _ = writeln!(summary, "sup growth exponent: {:.4} ({})", r.exponent, r.verdict);
            Some(r)
        }
        None => None,
    };
    let mut rows = Vec::new();
    for (field, r) in &trace {
        rows.push(NoiseRow::Trace {
            field: *field,
            report: r,
        });
    }
    if let (Some(t), Some(m)) = (&moments, &sec.moments) {
        rows.extend(t.rows.iter().map(|row| NoiseRow::Moment {
            field: m.field,
            moment: t.moment,
            row,
        }));
    }
    if let (Some(f), Some(h)) = (&holder, &sec.holder) {
        rows.extend(f.lags.iter().zip(&f.medians).map(|(&lag, &median)| NoiseRow::Holder {
            field: h.field,
            lag,
            median,
        }));
    }
    if let (Some(r), Some(g)) = (&growth, &sec.growth) {
        rows.extend(r.rows.iter().map(|row| NoiseRow::Growth { field: g.field, row }));
    }
    ctx.dir.write_ndjson(RESULTS_FILE, &rows)?;
    let result = CheckNoiseResult {
        trace,
        moments,
        holder,
        growth,
    };
    ctx.finish(Outcome::from_verdict(Verdict::from_bool(ok)), &result, &summary)
}

fn gen_fbm(ctx: &Ctx) -> Result<Outcome> {
    let g = ctx.cfg.gen_fbm.clone().unwrap_or_default();
    let h = HurstIndex::new(g.hurst)?;
    let mut path = sample_fbm(h, g.dt, g.n, ctx.cfg.seed, g.stream_id)?;
    if let Some(back) = g.backward_seed {
        path = two_sided_extend(&path, back)?;
    }
    let mut csv = ctx.dir.create_file("fbm.csv")?;
    let mut side = ctx.dir.create_file("fbm.json")?;
    path.write(&mut csv, &mut side)?;
    csv.flush().map_err(io_err("fbm.csv"))?;
    side.flush().map_err(io_err("fbm.json"))?;
    let summary = format!(
        "fBm path: H = {}, {} samples from t = {} with dt = {}\n",
        g.hurst,
        path.path.len(),
        path.path.t0(),
        g.dt
    );
    ctx.finish(Outcome::Complete, &path.sidecar(), &summary)
}

fn ou_stats(ctx: &Ctx) -> Result<Outcome> {
    let o = ctx.cfg.ou_stats.clone().unwrap_or_default();
    let s = noise::ou_statistics(
        HurstIndex::new(o.hurst)?,
        o.rate,
        o.horizon,
        o.dt,
        o.n_paths,
        ctx.cfg.seed,
    )?;
    ctx.dir.write_ndjson(RESULTS_FILE, [&s])?;
    let summary = format!(
        "variance at t = {}: {:.6} +- {:.1e}, oracle {:.6}, z = {:.2}: {}\n",
        s.horizon, s.variance, s.std_error, s.oracle, s.z_score, s.verdict
    );
    ctx.finish(Outcome::from_verdict(s.verdict), &s, &summary)
}

#[derive(Serialize)]
struct SimulateResult {
    steps_done: usize,
    steps_total: usize,
    t: f64,
    final_energy: pesolver::EnergyReport,
}

fn simulate(ctx: &Ctx, checkpoint: Option<&Path>, max_steps: Option<usize>) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let sim = cfg.simulate.clone().unwrap_or_default();
    let basis = cfg.basis()?;
    let dt = cfg.dt;
    let n_total = cfg.steps_between(sim.t_start, sim.t_end)?;
    let noise = ctx.noise(&basis, cfg.seed, sim.t_start, sim.t_end)?;
    let mut solver = Solver::new(&basis, cfg.params())?;
    let (mut state, mut k) = match checkpoint {
        None => {
            ctx.write_basis(&basis)?;
            let s = if sim.rho > 0.0 {
                initial_states(&basis, sim.rho, 1, sim.state_seed, sim.t_start).remove(0)
            } else {
                SpectralState::zeros(&basis, sim.t_start)
            };
            (s, 0)
        }
        Some(p) => {
            let f = std::fs::File::open(p).map_err(io_err(format!("opening {}", p.display())))?;
            let s = SpectralState::read_snapshot(std::io::BufReader::new(f), &basis)?;
            let k = ((s.t - sim.t_start) / dt).round();
            if !(k >= 0.0) || k as usize > n_total || s.t != sim.t_start + dt * k {
                return Err(CliError::Resume(format!(
                    "checkpoint time {} is not on the run's step grid",
                    s.t
                )));
            }
            (s, k as usize)
        }
    };
    let energy_path = ctx.dir.path(ENERGY_FILE);
    let mut energy = match checkpoint {
        None => {
            let mut w = ctx.dir.create_file(ENERGY_FILE)?;
            write_row(&mut w, &pesolver::norms(&basis, &state)?)?;
            w
        }
        Some(_) => {
            // drop rows written after the checkpoint
            let keep = k / sim.report_every + 1;
            let f = std::fs::File::open(&energy_path).map_err(io_err(format!("opening {}", energy_path.display())))?;
            let lines: Vec<String> = BufReader::new(f)
                .lines()
                .take(keep)
                .collect::<std::io::Result<_>>()
                .map_err(io_err(format!("reading {}", energy_path.display())))?;
            if lines.len() != keep {
                return Err(CliError::Resume(format!(
                    "{} has {} rows, the checkpoint needs {keep}",
                    energy_path.display(),
                    lines.len()
                )));
            }
            let mut w = ctx.dir.create_file(ENERGY_FILE)?;
            for l in lines {
                writeln!(w, "{l}").map_err(io_err(ENERGY_FILE))?;
            }
            w
        }
    };
    let snapshots = if sim.snapshot_every > 0 {
        Some(ctx.dir.subdir("snapshots")?)
    } else {
        None
    };
    let limit = max_steps.map_or(n_total, |m| m.min(n_total));
    let save = |state: &SpectralState, energy: &mut std::io::BufWriter<std::fs::File>| -> Result<()> {
        energy.flush().map_err(io_err(ENERGY_FILE))?;
        let mut buf = Vec::new();
        state.write_snapshot(&mut buf)?;
        ctx.dir.write_atomic(CHECKPOINT_FILE, &buf)
    };
    while k < limit {
        let next = solver.step(&state, dt, noise.as_ref());
        let mut next = match next {
            Ok(s) => s,
            Err(e) => {
                save(&state, &mut energy)?;
                return Err(e.into());
            }
        };
        k += 1;
        next.t = sim.t_start + dt * k as f64;
        state = next;
        if k % sim.report_every == 0 {
            write_row(&mut energy, &pesolver::norms(&basis, &state)?)?;
        }
        if let Some(dir) = &snapshots {
            if k % sim.snapshot_every == 0 {
                let p = dir.join(format!("step_{k:08}.bin"));
                let f = std::fs::File::create(&p).map_err(io_err(format!("creating {}", p.display())))?;
                let mut w = std::io::BufWriter::new(f);
                state.write_snapshot(&mut w)?;
                w.flush().map_err(io_err(format!("writing {}", p.display())))?;
            }
        }
        if sim.checkpoint_every > 0 && k % sim.checkpoint_every == 0 {
            save(&state, &mut energy)?;
        }
    }
    save(&state, &mut energy)?;
    let outcome = if k < n_total {
        Outcome::Stopped { step: k }
    } else {
        Outcome::Complete
    };
    let result = SimulateResult {
        steps_done: k,
        steps_total: n_total,
        t: state.t,
        final_energy: pesolver::norms(&basis, &state)?,
    };
    let mut summary = format!("steps: {k} of {n_total}, t = {}\n", state.t);
    if let Outcome::Stopped { .. } = outcome {
        let _ = writeln!(
            summary,
            "stopped at the step limit; continue with --resume {}",
            ctx.dir.root().display()
        );
    }
    let _ = writeln!(
        summary,
        "final |u|_2 = {:.6e}, |theta|_2 = {:.6e}",
        result.final_energy.u_l2, result.final_energy.th_l2
    );
    ctx.finish(outcome, &result, &summary)
}

fn write_row<W: Write, S: Serialize>(w: &mut W, row: &S) -> Result<()> {
    serde_json::to_writer(&mut *w, row).map_err(fracpe::Error::from)?;
    writeln!(w).map_err(io_err(ENERGY_FILE))
}

/// One line of `summary.csv`.
#[derive(Default)]
struct CsvRow {
    seed: u64,
    s_start: Option<f64>,
    diameter: Option<f64>,
    entry_time: Option<f64>,
    r_estimate: Option<f64>,
    c_star: Option<f64>,
}

fn write_csv(dir: &RunDir, rows: &[CsvRow]) -> Result<()> {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut text = String::from("seed,s_start,diameter,entry_time,r_estimate,c_star\n");
    for r in rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            r.seed,
            cell(r.s_start),
            cell(r.diameter),
            cell(r.entry_time),
            cell(r.r_estimate),
            cell(r.c_star)
        );
    }
    dir.write_bytes(SUMMARY_CSV, text.as_bytes())
}

#[derive(Serialize)]
struct SeedCell<R> {
    seed: u64,
    report: R,
}

#[derive(Serialize)]
struct PullbackResult {
    start_times: Vec<f64>,
    passed: usize,
    required: usize,
    cells: Vec<SeedCell<attractor::PullbackReport>>,
}

fn pullback(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let p = cfg.pullback.clone().unwrap_or_default();
    let basis = cfg.basis()?;
    ctx.write_basis(&basis)?;
    let params = cfg.params();
    let pc = attractor::PullbackConfig {
        start_times: p.start_times.clone(),
        eval_time: p.eval_time,
        rho: p.rho,
        n_states: p.n_states,
        state_seed: p.state_seed,
        dt: cfg.dt,
    };
    pc.validate()?;
    let earliest = p.start_times.iter().copied().fold(f64::INFINITY, f64::min);
    let cells = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let noise = ctx.noise(&basis, seed, earliest, p.eval_time)?;
            let report = attractor::pullback_experiment(&basis, &params, noise.as_ref(), seed, &pc)?;
            Ok(SeedCell { seed, report })
        })
        .collect::<Result<Vec<_>>>()?;
    let cell_dir = ctx.dir.subdir("cells")?;
    let mut csv = Vec::new();
    let mut summary = format!("pullback ladder {:?}, evaluation time {}\n", p.start_times, p.eval_time);
    for c in &cells {
        let name = format!("pullback_seed_{}.ndjson", c.seed);
        let rows: Vec<_> = c
            .report
            .rows
            .iter()
            .map(|r| serde_json::json!({"seed": c.seed, "s_start": r.s_start, "diameter": r.diameter}))
            .collect();
        let mut w = std::io::BufWriter::new(
            std::fs::File::create(cell_dir.join(&name)).map_err(io_err(format!("creating {name}")))?,
        );
        fracpe::io::write_ndjson(&mut w, &rows)?;
        w.flush().map_err(io_err(name))?;
        let diam: Vec<String> = c.report.rows.iter().map(|r| format!("{:.3e}", r.diameter)).collect();
        let _ = writeln!(summary, "seed {}: {} [{}]", c.seed, c.report.verdict, diam.join(", "));
        csv.extend(c.report.rows.iter().map(|r| CsvRow {
            seed: c.seed,
            s_start: Some(r.s_start),
            diameter: Some(r.diameter),
            ..Default::default()
        }));
    }
    write_csv(&ctx.dir, &csv)?;
    ctx.dir.write_ndjson(
        RESULTS_FILE,
        cells
            .iter()
            .map(|c| serde_json::json!({"seed": c.seed, "verdict": c.report.verdict, "rows": c.report.rows})),
    )?;
    let passed = cells.iter().filter(|c| c.report.verdict.passed()).count();
    let required = (p.min_pass_fraction * cells.len() as f64).ceil() as usize;
    let _ = writeln!(summary, "seeds passing: {passed} of {} (need {required})", cells.len());
    let result = PullbackResult {
        start_times: p.start_times,
        passed,
        required,
        cells,
    };
    ctx.finish(
        Outcome::from_verdict(Verdict::from_bool(passed >= required)),
        &result,
        &summary,
    )
}

fn absorb(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let a = cfg.absorb.clone().unwrap_or_default();
    let basis = cfg.basis()?;
    ctx.write_basis(&basis)?;
    let params = cfg.params();
    let ac = attractor::AbsorbConfig {
        radii: a.radii.clone(),
        t_start: a.t_start,
        t_end: a.t_end,
        window: a.window,
        dt: cfg.dt,
        state_seed: a.state_seed,
        ball_radius: a.ball_radius,
    };
    let cells = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let noise = ctx.noise(&basis, seed, a.t_start, a.t_end)?;
            let report = attractor::absorbing_radius(&basis, &params, noise.as_ref(), &ac)?;
            Ok(SeedCell { seed, report })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = Vec::new();
    let mut rows = Vec::new();
    let mut summary = String::new();
    for c in &cells {
        let _ = writeln!(
            summary,
            "seed {}: r_estimate = {:.4e}, ball = {:.4e}: {}",
            c.seed, c.report.r_estimate, c.report.ball_radius, c.report.verdict
        );
        for r in &c.report.rows {
            rows.push(serde_json::json!({
                "seed": c.seed,
                "rho": r.rho,
                "trailing_sup": r.trailing_sup,
                "entry_time": r.entry_time,
                "absorbed": r.absorbed,
            }));
            csv.push(CsvRow {
                seed: c.seed,
                s_start: Some(a.t_start),
                entry_time: r.entry_time,
                r_estimate: Some(c.report.r_estimate),
                ..Default::default()
            });
        }
    }
    ctx.dir.write_ndjson(RESULTS_FILE, &rows)?;
    write_csv(&ctx.dir, &csv)?;
    let ok = cells.iter().all(|c| c.report.verdict.passed());
    ctx.finish(Outcome::from_verdict(Verdict::from_bool(ok)), &cells, &summary)
}

#[derive(Serialize)]
struct ContractCell {
    seed: u64,
    c_star: f64,
    lipschitz: Option<attractor::LipschitzReport>,
}

fn contract(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let c = cfg.contract.clone().unwrap_or_default();
    let basis = cfg.basis()?;
    ctx.write_basis(&basis)?;
    let params = cfg.params();
    let states = initial_states(&basis, c.rho, 2, c.state_seed, 0.0);
    let (a, b) = (states[0].clone(), states[1].clone());
    let mut dir = SpectralState::zeros(&basis, 0.0);
    for (d, (x, y)) in dir.u.iter_mut().zip(a.u.iter().zip(&b.u)) {
        *d = y - x;
    }
    for (d, (x, y)) in dir.theta.iter_mut().zip(a.theta.iter().zip(&b.theta)) {
        *d = y - x;
    }
    let cells = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let noise = ctx.noise(&basis, seed, 0.0, c.horizon)?;
            let diag = attractor::contraction_diagnostic(
                &basis,
                &params,
                noise.as_ref(),
                a.clone(),
                b.clone(),
                c.horizon,
                cfg.dt,
            )?;
            let lipschitz = if c.scales.is_empty() {
                None
            } else {
                Some(attractor::lipschitz_scaling(
                    &basis,
                    &params,
                    noise.as_ref(),
                    &a,
                    &dir,
                    &c.scales,
                    c.horizon,
                    cfg.dt,
                )?)
            };
            Ok((seed, diag, lipschitz))
        })
        .collect::<Result<Vec<_>>>()?;
    let cell_dir = ctx.dir.subdir("cells")?;
    let mut csv = Vec::new();
    let mut summary = String::new();
    let mut out = Vec::new();
    for (seed, diag, lip) in cells {
        let name = format!("contract_seed_{seed}.ndjson");
        let rows: Vec<_> = (0..diag.times.len())
            .map(|i| serde_json::json!({"seed": seed, "t": diag.times[i], "eta": diag.eta[i], "xi": diag.xi[i]}))
            .collect();
        let mut w = std::io::BufWriter::new(
            std::fs::File::create(cell_dir.join(&name)).map_err(io_err(format!("creating {name}")))?,
        );
        fracpe::io::write_ndjson(&mut w, &rows)?;
        w.flush().map_err(io_err(name))?;
        let _ = writeln!(summary, "seed {seed}: c* = {:.6}", diag.c_star);
        csv.push(CsvRow {
            seed,
            c_star: Some(diag.c_star),
            ..Default::default()
        });
        if let Some(l) = &lip {
            let vals: Vec<String> = l
                .rows
                .iter()
                .map(|r| format!("{:e}: {:.6}", r.scale, r.c_star))
                .collect();
            let _ = writeln!(summary, "  scale stability [{}]: {}", vals.join(", "), l.verdict);
        }
        out.push(ContractCell {
            seed,
            c_star: diag.c_star,
            lipschitz: lip,
        });
    }
    write_csv(&ctx.dir, &csv)?;
    ctx.dir.write_ndjson(RESULTS_FILE, &out)?;
    let outcome = if c.scales.is_empty() {
        Outcome::Complete
    } else {
        let ok = out
            .iter()
            .all(|c| c.lipschitz.as_ref().is_some_and(|l| l.verdict.passed()));
        Outcome::from_verdict(Verdict::from_bool(ok))
    };
    ctx.finish(outcome, &out, &summary)
}
