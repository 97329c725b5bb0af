//! Invariant region `A` and viable region `B` for the three past models,
//! boundary classification for the feedback, and probe harnesses that check
//! invariance and maximality of `A` by simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::curves::{build_gamma_lh, ClosedFormCurve, DelayFreeCurve, FrontierCurve, DEFAULT_NODES};
use crate::dde::{integrate, StepConfig};
use crate::error::{Error, Result};
use crate::model::{InitialCondition, Params, State};

/// Samples used by [`curve_sup_distance`].
pub const SUP_SAMPLES: usize = 4096;
/// Default activation band, relative to `i_max`.
pub const DEFAULT_BAND: f64 = 1e-3;
/// Absolute slack on the `s` limits of the ICU segment.
const S1_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionVariant {
    ContinuousPast,
    LipschitzPast { l: f64 },
    DelayFree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// Forward invariant: every control keeps `i <= i_max`.
    A,
    /// Viable: some control keeps `i <= i_max`.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryClass {
    Interior,
    OnS1,
    OnS2,
    Outside,
}

#[derive(Debug, Clone)]
pub struct RegionSpec {
    pub variant: RegionVariant,
    pub curve_beta: FrontierCurve,
    pub curve_beta_star: FrontierCurve,
    pub p: Params,
}

impl RegionSpec {
    pub fn continuous(p: &Params) -> Self {
        RegionSpec {
            variant: RegionVariant::ContinuousPast,
            curve_beta: ClosedFormCurve::new(p.beta, p).into(),
            curve_beta_star: ClosedFormCurve::new(p.beta_star, p).into(),
            p: *p,
        }
    }

    /// Regions for `L`-Lipschitz pasts at the delay stored in `p`.
    pub fn lipschitz(p: &Params, l: f64) -> Result<Self> {
        Ok(RegionSpec {
            variant: RegionVariant::LipschitzPast { l },
            curve_beta: build_gamma_lh(p.beta, l, p.delay, p, DEFAULT_NODES)?.into(),
            curve_beta_star: build_gamma_lh(p.beta_star, l, p.delay, p, DEFAULT_NODES)?.into(),
            p: *p,
        })
    }

    pub fn delay_free(p: &Params) -> Self {
        RegionSpec {
            variant: RegionVariant::DelayFree,
            curve_beta: DelayFreeCurve::new(p.beta, p).into(),
            curve_beta_star: DelayFreeCurve::new(p.beta_star, p).into(),
            p: *p,
        }
    }

    pub fn curve(&self, region: Region) -> &FrontierCurve {
        match region {
            Region::A => &self.curve_beta,
            Region::B => &self.curve_beta_star,
        }
    }

    pub fn contains(&self, region: Region, x: State) -> bool {
        contains(region, self, x)
    }

    pub fn classify(&self, x: State, band: f64) -> BoundaryClass {
        classify_boundary(self, x, band)
    }
}

/// Closed membership test; boundary points count as inside.
pub fn contains(region: Region, spec: &RegionSpec, x: State) -> bool {
    if !x.in_triangle(0.0) {
        return false;
    }
    let curve = spec.curve(region);
    let s_lo = spec.p.gamma / curve.b_level();
    if x.s <= s_lo {
        return x.i <= spec.p.i_max;
    }
    x.s <= curve.s_hat() && x.i <= curve.eval_clamped(x.s)
}

/// Labels a state for the greedy feedback. States up to `band * i_max`
/// above the boundary of `B` are still classified, so that the feedback can
/// correct the overshoot of one sampled step.
pub fn classify_boundary(spec: &RegionSpec, x: State, band: f64) -> BoundaryClass {
    let p = &spec.p;
    let slack = band * p.i_max;
    let star = &spec.curve_beta_star;
    let s_star = p.gamma / p.beta_star;
    if !x.in_triangle(S1_TOL) || x.i > star.eval_clamped(x.s) + slack {
        return BoundaryClass::Outside;
    }
    let s_beta = p.gamma / p.beta;
    if x.i >= p.i_max * (1.0 - band) && x.s >= s_beta - S1_TOL && x.s <= s_star + S1_TOL {
        return BoundaryClass::OnS1;
    }
    if x.s > s_star && x.i >= star.eval_clamped(x.s) - slack {
        return BoundaryClass::OnS2;
    }
    BoundaryClass::Interior
}

/// Max of `|c1 - c2|` over uniform samples of the common domain.
pub fn curve_sup_distance(c1: &FrontierCurve, c2: &FrontierCurve) -> Result<f64> {
    let lo = c1.s_lo().max(c2.s_lo());
    let hi = c1.s_hat().min(c2.s_hat());
    if !(hi > lo) {
        return Err(Error::validation(format!("curves do not overlap: [{lo}, {hi}]")));
    }
    Ok((0..SUP_SAMPLES)
        .map(|k| lo + (hi - lo) * k as f64 / (SUP_SAMPLES - 1) as f64)
        .map(|s| (c1.eval_clamped(s) - c2.eval_clamped(s)).abs())
        .fold(0.0, f64::max))
}

/// Area of `{s in [0, s_hat], 0 <= i <= Gamma(s)}`, with `Gamma = i_max`
/// left of the curve. Trapezoid rule on the curve part.
pub fn region_area(curve: &FrontierCurve, p: &Params) -> f64 {
    let lo = curve.s_lo();
    let hi = curve.s_hat();
    let n = SUP_SAMPLES;
    let w = (hi - lo) / (n - 1) as f64;
    let mut sum = 0.0;
    for k in 0..n {
        let v = curve.eval_clamped(lo + w * k as f64);
        sum += if k == 0 || k == n - 1 { 0.5 * v } else { v };
    }
    lo * p.i_max + w * sum
}

/// Settings shared by the simulation probes.
#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    pub step: StepConfig,
    pub horizon: f64,
    /// Length of each constant piece of the random controls.
    pub piece: f64,
    /// Duration over which the worst past ramps from `i_max` to `phi(0)`.
    pub ramp: f64,
}

impl ProbeConfig {
    /// 300-day horizon, 1-day control pieces, ramp of ten steps.
    pub fn for_params(p: &Params) -> Self {
        let step = StepConfig::for_params(p);
        ProbeConfig {
            step,
            horizon: 300.0,
            piece: 1.0,
            ramp: 10.0 * step.dt,
        }
    }

    fn aligned_dt(&self, p: &Params) -> Result<f64> {
        Ok(self.step.aligned(p.delay)?.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub trials: usize,
    /// Largest `max_t i(t) - i_max` over all trials.
    pub max_violation: f64,
    pub worst_trial: usize,
    pub worst_start: State,
}

/// Uniform sample of `A` by rejection from its bounding box.
pub fn sample_in(region: Region, spec: &RegionSpec, rng: &mut impl Rng) -> State {
    let s_hi = spec.curve(region).s_hat();
    loop {
        let x = State::new(rng.gen::<f64>() * s_hi, rng.gen::<f64>() * spec.p.i_max);
        if contains(region, spec, x) {
            return x;
        }
    }
}

/// One invariance trial from `x0` with worst past and random piecewise
/// constant controls. Returns `max_t i(t) - i_max`.
pub fn invariance_trial(spec: &RegionSpec, x0: State, rng: &mut impl Rng, cfg: &ProbeConfig) -> Result<f64> {
    let p = &spec.p;
    let lipschitz = match spec.variant {
        RegionVariant::LipschitzPast { l } => Some(l),
        _ => None,
    };
    let ic = InitialCondition::worst_past(x0, p, cfg.ramp, lipschitz);
    let pieces = (cfg.horizon / cfg.piece).ceil() as usize + 1;
    let rates: Vec<f64> = (0..pieces).map(|_| rng.gen_range(p.beta_star..=p.beta)).collect();
    let step = StepConfig {
        t_max: cfg.horizon,
        ..cfg.step
    };
    let out = integrate(
        &ic,
        p,
        &step,
        |t, _, _| Ok(rates[((t / cfg.piece).floor() as usize).min(pieces - 1)]),
        |_, _| false,
    )?;
    Ok(out.trajectory.max_i() - p.i_max)
}

/// Runs `n_trials` independent invariance trials in parallel. Trial `k` uses
/// its own ChaCha stream, so the report does not depend on the thread count.
pub fn invariance_probe(spec: &RegionSpec, n_trials: usize, seed: u64, cfg: &ProbeConfig) -> Result<InvarianceReport> {
    let results: Vec<Result<(f64, State)>> = (0..n_trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let x0 = sample_in(Region::A, spec, &mut rng);
            invariance_trial(spec, x0, &mut rng, cfg).map(|v| (v, x0))
        })
        .collect();
    let mut report = InvarianceReport {
        trials: n_trials,
        max_violation: f64::NEG_INFINITY,
        worst_trial: 0,
        worst_start: State::default(),
    };
    for (k, r) in results.into_iter().enumerate() {
        let (v, x0) = r?;
        if v > report.max_violation {
            report.max_violation = v;
            report.worst_trial = k;
            report.worst_start = x0;
        }
    }
    Ok(report)
}

/// Starting point of the maximality probe: `delta` above `Gamma_beta` at the
/// middle of its domain.
pub fn maximality_start(spec: &RegionSpec, delta: f64) -> State {
    let c = &spec.curve_beta;
    let s0 = 0.5 * (spec.p.gamma / spec.p.beta + c.s_hat());
    State::new(s0, c.eval_clamped(s0) + delta)
}

/// Runs `b = beta` from `delta` above the frontier of `A` while the past is
/// held at `i_max`, and returns the first grid time with `i > i_max`.
///
/// A single history can pin `i(t - h)` at `i_max` only for `t < h`. The run is
/// therefore chained: every `h - ramp` days it restarts from the current state
/// with a fresh history that sits at `i_max` up to `-ramp`. Each segment is a
/// genuine solution for an admissible past, and the chain reproduces the
/// worst-case flow that defines the frontier.
pub fn maximality_probe(spec: &RegionSpec, delta: f64, cfg: &ProbeConfig) -> Result<Option<f64>> {
    let p = &spec.p;
    let dt = cfg.aligned_dt(p)?;
    let ramp = cfg.ramp.max(dt);
    let seg_len = p.delay - ramp;
    if !(seg_len > 0.0) {
        return Err(Error::validation("ramp must be shorter than the delay"));
    }
    let mut x = maximality_start(spec, delta);
    if x.i > p.i_max {
        return Ok(Some(0.0));
    }
    let mut t0 = 0.0;
    while t0 < cfg.horizon {
        let ic = InitialCondition::worst_past(x, p, ramp, None);
        let step = StepConfig {
            t_max: p.delay,
            ..cfg.step
        };
        let stop_at = seg_len.min(cfg.horizon - t0) - 0.5 * dt;
        let out = integrate(&ic, p, &step, |_, _, _| Ok(p.beta), |t, _| t >= stop_at)?;
        let traj = &out.trajectory;
        if let Some(k) = traj.states.iter().position(|y| y.i > p.i_max) {
            return Ok(Some(t0 + traj.time(k)));
        }
        x = traj.last();
        t0 += traj.t_end();
    }
    Ok(None)
}
