//! End-to-end experiments: the three reference scenarios, the cost surface
//! over `B` and the delay sweep of the Lipschitz-past frontiers.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{run_greedy, ClosedLoopResult, CostSpec, PolicyConfig, PolicyVariant, RunSummary};
use crate::curves::{build_gamma_lh, FrontierCurve, DEFAULT_NODES};
use crate::dde::StepConfig;
use crate::error::{Error, Result};
use crate::model::{InitialCondition, Params, State};
use crate::regions::{contains, curve_sup_distance, region_area, Region, RegionSpec, DEFAULT_BAND};

/// Environment variable that overrides the configured worker count.
pub const WORKERS_ENV: &str = "VIADEL_WORKERS";

/// Reference starting state of the scenarios.
pub const X0: State = State::new(0.45, 0.001);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Constant history at `X0`.
    Phi0,
    /// Recovering cohort ending at `X0`.
    Phi1,
    /// Infections falling from the ICU cap to `X0` just before time zero.
    Phi2,
    /// History read from `ic_file`.
    File,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Phi0 => "phi0",
            Scenario::Phi1 => "phi1",
            Scenario::Phi2 => "phi2",
            Scenario::File => "file",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phi0" => Ok(Scenario::Phi0),
            "phi1" => Ok(Scenario::Phi1),
            "phi2" => Ok(Scenario::Phi2),
            "file" => Ok(Scenario::File),
            other => Err(Error::validation(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Continuous,
    /// Requires `params.lipschitz`.
    Lipschitz,
}

/// Experiment settings, loadable from JSON. Missing fields take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub params: Params,
    pub scenario: Scenario,
    pub ic_file: Option<PathBuf>,
    pub policy: PolicyKind,
    pub band: f64,
    /// Step size; `None` means `delay / 600`.
    pub dt: Option<f64>,
    pub t_max: f64,
    /// Output directory.
    pub out: PathBuf,
    pub resolution: usize,
    pub h_list: Vec<f64>,
    pub workers: Option<usize>,
    pub seed: u64,
    pub trials: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            params: Params::default(),
            scenario: Scenario::Phi0,
            ic_file: None,
            policy: PolicyKind::Continuous,
            band: DEFAULT_BAND,
            dt: None,
            t_max: 1000.0,
            out: PathBuf::from("."),
            resolution: 128,
            h_list: vec![6.0, 3.0, 1.0, 0.3, 0.1, 0.01],
            workers: None,
            seed: 0,
            trials: 200,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::validation(format!("cannot read config {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.band > 0.0 && self.band < 1.0) {
            return Err(Error::validation(format!("band = {} not in (0, 1)", self.band)));
        }
        if self.resolution < 8 {
            return Err(Error::validation(format!("resolution = {} below 8", self.resolution)));
        }
        if self.h_list.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::validation("h list must be positive"));
        }
        if self.h_list.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::validation("h list must be strictly decreasing"));
        }
        if self.workers == Some(0) {
            return Err(Error::validation("workers must be at least 1"));
        }
        if self.scenario == Scenario::File {
            match &self.ic_file {
                Some(p) if p.is_file() => {}
                Some(p) => return Err(Error::validation(format!("ic file {} does not exist", p.display()))),
                None => return Err(Error::validation("scenario file needs --ic-file")),
            }
        }
        if self.policy == PolicyKind::Lipschitz && self.params.lipschitz.is_none() {
            return Err(Error::validation("lipschitz policy needs --lipschitz"));
        }
        self.step().aligned(self.params.delay)?;
        Ok(())
    }

    pub fn step(&self) -> StepConfig {
        let base = StepConfig::for_params(&self.params).with_t_max(self.t_max);
        match self.dt {
            Some(dt) => base.with_dt(dt),
            None => base,
        }
    }

    pub fn policy_config(&self) -> Result<PolicyConfig> {
        match self.policy {
            PolicyKind::Continuous => PolicyConfig::continuous(&self.params, self.band),
            PolicyKind::Lipschitz => {
                let l = self
                    .params
                    .lipschitz
                    .ok_or_else(|| Error::validation("lipschitz policy needs a Lipschitz bound"))?;
                PolicyConfig::lipschitz(&self.params, l, self.band)
            }
        }
    }

    pub fn initial_condition(&self) -> Result<InitialCondition> {
        Ok(match self.scenario {
            Scenario::Phi0 => InitialCondition::constant(X0),
            Scenario::Phi1 => InitialCondition::ExpRecovery { s0: X0.s, i0: X0.i },
            Scenario::Phi2 => InitialCondition::ExpSurge { s0: X0.s, i0: X0.i },
            Scenario::File => {
                let path = self
                    .ic_file
                    .as_ref()
                    .ok_or_else(|| Error::validation("scenario file needs --ic-file"))?;
                let text = fs::read_to_string(path)?;
                serde_json::from_str(&text)?
            }
        })
    }

    /// Worker count: explicit setting, then `VIADEL_WORKERS`, then all cores.
    /// Callers that want the environment to beat a config file should apply
    /// it before copying flags in; see the CLI.
    pub fn worker_count(&self) -> usize {
        self.workers
            .or_else(workers_from_env)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.worker_count())
            .build()
            .map_err(|e| Error::solver(format!("cannot start worker pool: {e}")))
    }
}

/// Worker count from `VIADEL_WORKERS`, if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    let raw = std::env::var(WORKERS_ENV).ok()?;
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => Some(n),
        _ => {
            warn!("ignoring {WORKERS_ENV}={raw:?}");
            None
        }
    }
}

/// Formats a float with 17 significant digits; NaN becomes an empty field.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.16e}")
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// JSON with floats written at full precision (serde_json round-trips f64).
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_csv(path: &Path, r: &ClosedLoopResult) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "t,s,i,b,u,J_cum")?;
    let traj = &r.trajectory;
    for (k, x) in traj.states.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt_f64(traj.time(k)),
            fmt_f64(x.s),
            fmt_f64(x.i),
            fmt_f64(r.controls[k]),
            fmt_f64(r.u[k]),
            fmt_f64(r.j_cum[k])
        )?;
    }
    w.flush()?;
    Ok(())
}

/// True when `u` both rises and falls by more than `1e-9` on `[0, 2h]`.
pub fn initial_non_monotone(r: &ClosedLoopResult, h: f64) -> bool {
    let n = ((2.0 * h / r.trajectory.dt).round() as usize + 1).min(r.u.len());
    let (mut rise, mut fall) = (false, false);
    for w in r.u[..n].windows(2) {
        let d = w[1] - w[0];
        rise |= d > 1e-9;
        fall |= d < -1e-9;
    }
    rise && fall
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    #[serde(flatten)]
    pub run: RunSummary,
    pub u_initial_non_monotone: bool,
    pub params: Params,
    pub dt: f64,
    pub band: f64,
}

#[derive(Debug)]
pub struct ScenarioOutcome {
    pub result: ClosedLoopResult,
    pub summary: ScenarioSummary,
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// Runs the configured scenario without writing files.
pub fn simulate(cfg: &ExperimentConfig) -> Result<(ClosedLoopResult, ScenarioSummary)> {
    cfg.validate()?;
    let ic = cfg.initial_condition()?;
    let policy = cfg.policy_config()?;
    let step = cfg.step();
    let result = run_greedy(&ic, &policy, &step, &CostSpec::default())?;
    let summary = ScenarioSummary {
        scenario: cfg.scenario.name().into(),
        run: result.summary(),
        u_initial_non_monotone: initial_non_monotone(&result, cfg.params.delay),
        params: cfg.params,
        dt: result.trajectory.dt,
        band: cfg.band,
    };
    Ok((result, summary))
}

/// Runs the scenario and writes `<out>/<name>.csv` and `<out>/<name>.json`.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<ScenarioOutcome> {
    let (result, summary) = simulate(cfg)?;
    let csv = cfg.out.join(format!("{}.csv", summary.scenario));
    let json = cfg.out.join(format!("{}.json", summary.scenario));
    write_trajectory_csv(&csv, &result)?;
    write_json(&json, &summary)?;
    info!("{}: J = {}", summary.scenario, summary.run.j);
    Ok(ScenarioOutcome {
        result,
        summary,
        csv,
        json,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CostSurface {
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    /// `j[a][b]` is the cost from the constant history at `(s[a], i[b])`;
    /// NaN outside `B` or where the run failed.
    pub j: Vec<Vec<f64>>,
    pub failures: Vec<(usize, usize, String)>,
    pub policy: PolicyVariant,
    pub band: f64,
}

/// Greedy cost from every constant history on a uniform grid over
/// `[0, s_hat_B] x [0, i_max]`. Cells are evaluated in parallel and collected
/// by index, so the surface does not depend on the worker count.
pub fn cost_surface(cfg: &ExperimentConfig) -> Result<CostSurface> {
    cfg.validate()?;
    let policy = cfg.policy_config()?;
    let step = cfg.step();
    let p = cfg.params;
    let n = cfg.resolution;
    let s_hi = policy.region.curve_beta_star.s_hat();
    let s: Vec<f64> = (0..n).map(|k| s_hi * k as f64 / (n - 1) as f64).collect();
    let i: Vec<f64> = (0..n).map(|k| p.i_max * k as f64 / (n - 1) as f64).collect();
    let cost = CostSpec::default();

    let cells: Vec<std::result::Result<f64, String>> = cfg.pool()?.install(|| {
        (0..n * n)
            .into_par_iter()
            .map(|c| {
                let x = State::new(s[c / n], i[c % n]);
                if !contains(Region::B, &policy.region, x) {
                    return Ok(f64::NAN);
                }
                run_greedy(&InitialCondition::constant(x), &policy, &step, &cost)
                    .map(|r| r.j)
                    .map_err(|e| e.to_string())
            })
            .collect()
    });

    let mut j = vec![vec![f64::NAN; n]; n];
    let mut failures = Vec::new();
    for (c, v) in cells.into_iter().enumerate() {
        match v {
            Ok(v) => j[c / n][c % n] = v,
            Err(e) => {
                warn!("cost surface cell ({}, {}) failed: {e}", c / n, c % n);
                failures.push((c / n, c % n, e));
            }
        }
    }
    Ok(CostSurface {
        s,
        i,
        j,
        failures,
        policy: policy.variant,
        band: cfg.band,
    })
}

pub fn write_surface_csv(path: &Path, surface: &CostSurface) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "s,i,J")?;
    for (a, s) in surface.s.iter().enumerate() {
        for (b, i) in surface.i.iter().enumerate() {
            writeln!(w, "{},{},{}", fmt_f64(*s), fmt_f64(*i), fmt_f64(surface.j[a][b]))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub h: f64,
    pub sup_dist_beta: f64,
    pub sup_dist_beta_star: f64,
    pub area_a: f64,
    pub area_b: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HSweep {
    pub lipschitz: f64,
    pub rows: Vec<SweepRow>,
    /// Areas of the delay-free regions, the limits of the rows as `h -> 0`.
    pub area_a0: f64,
    pub area_b0: f64,
}

/// Frontier distance to the delay-free curves and region areas for each
/// delay in the list, at the configured (or minimal) Lipschitz bound.
pub fn h_sweep(cfg: &ExperimentConfig) -> Result<HSweep> {
    cfg.validate()?;
    let p = cfg.params;
    let l = p.lipschitz.unwrap_or_else(|| p.min_lipschitz());
    if l < p.min_lipschitz() {
        return Err(Error::validation(format!("L = {l} below the admissible minimum")));
    }
    let free = RegionSpec::delay_free(&p);
    let rows: Vec<Result<SweepRow>> = cfg.pool()?.install(|| {
        cfg.h_list
            .par_iter()
            .map(|&h| {
                let ph = Params { delay: h, ..p };
                let a: FrontierCurve = build_gamma_lh(p.beta, l, h, &ph, DEFAULT_NODES)?.into();
                let b: FrontierCurve = build_gamma_lh(p.beta_star, l, h, &ph, DEFAULT_NODES)?.into();
                Ok(SweepRow {
                    h,
                    sup_dist_beta: curve_sup_distance(&a, &free.curve_beta)?,
                    sup_dist_beta_star: curve_sup_distance(&b, &free.curve_beta_star)?,
                    area_a: region_area(&a, &p),
                    area_b: region_area(&b, &p),
                })
            })
            .collect()
    });
    Ok(HSweep {
        lipschitz: l,
        rows: rows.into_iter().collect::<Result<_>>()?,
        area_a0: region_area(&free.curve_beta, &p),
        area_b0: region_area(&free.curve_beta_star, &p),
    })
}

pub fn write_sweep_csv(path: &Path, sweep: &HSweep) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "h,sup_dist_beta,sup_dist_beta_star,area_A,area_B")?;
    for r in &sweep.rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_f64(r.h),
            fmt_f64(r.sup_dist_beta),
            fmt_f64(r.sup_dist_beta_star),
            fmt_f64(r.area_a),
            fmt_f64(r.area_b)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a curve as `s,i` rows.
pub fn write_curve_csv(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "s,i")?;
    for (s, i) in points {
        writeln!(w, "{},{}", fmt_f64(*s), fmt_f64(*i))?;
    }
    w.flush()?;
    Ok(())
}
