//! Greedy feedback: keep `b = beta` in the interior of `B` and cap it on the
//! ICU segment `S1` and on the frontier `S2` by the largest rate that keeps the
//! state in `B`.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use log::{debug, info};
use serde::Serialize;

use crate::dde::{integrate, StepConfig, Trajectory};
use crate::error::{Error, Result};
use crate::model::{psi_truncate, InitialCondition, Params, State};
use crate::regions::{classify_boundary, contains, BoundaryClass, Region, RegionSpec, RegionVariant, DEFAULT_BAND};

/// Infected level below which a run with `s < gamma/beta` is considered over.
pub const I_TERMINAL: f64 = 1e-6;
/// Tolerance on negative control effort.
const U_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyVariant {
    ContinuousPast,
    LipschitzPast { l: f64 },
}

#[derive(Debug, Clone)]
pub struct PolicyConfig {
    pub variant: PolicyVariant,
    /// Activation band relative to `i_max`.
    pub band: f64,
    pub region: RegionSpec,
}

impl PolicyConfig {
    pub fn continuous(p: &Params, band: f64) -> Result<Self> {
        check_band(band)?;
        p.validate()?;
        Ok(PolicyConfig {
            variant: PolicyVariant::ContinuousPast,
            band,
            region: RegionSpec::continuous(p),
        })
    }

    pub fn lipschitz(p: &Params, l: f64, band: f64) -> Result<Self> {
        check_band(band)?;
        let p = p.with_lipschitz(l)?;
        Ok(PolicyConfig {
            variant: PolicyVariant::LipschitzPast { l },
            band,
            region: RegionSpec::lipschitz(&p, l)?,
        })
    }

    pub fn params(&self) -> &Params {
        &self.region.p
    }

    pub fn validate(&self) -> Result<()> {
        check_band(self.band)?;
        self.region.p.validate()?;
        match (self.variant, self.region.variant) {
            (PolicyVariant::ContinuousPast, RegionVariant::ContinuousPast) => Ok(()),
            (PolicyVariant::LipschitzPast { l }, RegionVariant::LipschitzPast { l: lr }) if l == lr => {
                if l >= self.region.p.min_lipschitz() {
                    Ok(())
                } else {
                    Err(Error::validation(format!("L = {l} below the admissible minimum")))
                }
            }
            _ => Err(Error::validation("policy variant does not match its region")),
        }
    }
}

fn check_band(band: f64) -> Result<()> {
    if band > 0.0 && band < 1.0 {
        Ok(())
    } else {
        Err(Error::validation(format!("band = {band} not in (0, 1)")))
    }
}

/// Running cost `G` of the control effort `u = beta - b`.
#[derive(Clone)]
pub struct CostSpec {
    pub name: String,
    g: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostSpec").field("name", &self.name).finish()
    }
}

impl Default for CostSpec {
    fn default() -> Self {
        CostSpec {
            name: "identity".into(),
            g: Arc::new(|u| u),
        }
    }
}

impl CostSpec {
    /// Wraps `g` after checking `g(0) = 0` and monotonicity on `[0, u_max]`.
    pub fn new(name: &str, u_max: f64, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        if g(0.0) != 0.0 {
            return Err(Error::validation(format!("cost {name}: G(0) = {} != 0", g(0.0))));
        }
        let mut prev = 0.0;
        for k in 1..100 {
            let v = g(u_max * k as f64 / 99.0);
            if !(v.is_finite() && v > prev) {
                return Err(Error::validation(format!("cost {name} is not increasing on [0, {u_max}]")));
            }
            prev = v;
        }
        Ok(CostSpec {
            name: name.into(),
            g: Arc::new(g),
        })
    }

    pub fn eval(&self, u: f64) -> f64 {
        (self.g)(u)
    }
}

/// Trapezoid integral of `G(u)` on a uniform grid.
pub fn cost(u: &[f64], dt: f64, spec: &CostSpec) -> Result<f64> {
    Ok(cumulative_cost(u, dt, spec)?.last().copied().unwrap_or(0.0))
}

fn cumulative_cost(u: &[f64], dt: f64, spec: &CostSpec) -> Result<Vec<f64>> {
    if let Some(k) = u.iter().position(|&v| v < -U_TOL || !v.is_finite()) {
        return Err(Error::validation(format!("control effort u[{k}] = {} is negative", u[k])));
    }
    let g: Vec<f64> = u.iter().map(|&v| if v <= 0.0 { 0.0 } else { spec.eval(v) }).collect();
    let mut acc = Vec::with_capacity(u.len());
    let mut sum = 0.0;
    for k in 0..g.len() {
        if k > 0 {
            sum += 0.5 * dt * (g[k - 1] + g[k]);
        }
        acc.push(sum);
    }
    Ok(acc)
}

/// Unclamped greedy rate. May fall below `beta_star` when `i_del` exceeds the
/// bound the policy was derived under.
pub fn greedy_cap(x: State, i_del: f64, class: BoundaryClass, cfg: &PolicyConfig) -> Result<f64> {
    let p = cfg.params();
    let s1 = |x: State| {
        if i_del > 0.0 {
            (p.gamma * p.i_max / (x.s * i_del)).min(p.beta)
        } else {
            p.beta
        }
    };
    let s2 = |x: State| {
        if i_del > 0.0 {
            let n = match cfg.variant {
                PolicyVariant::ContinuousPast => x.i,
                PolicyVariant::LipschitzPast { l } => psi_truncate(x.i, p.i_max, l, p.delay),
            };
            (p.beta_star * n / i_del).min(p.beta)
        } else {
            p.beta
        }
    };
    match class {
        BoundaryClass::Interior => Ok(p.beta),
        BoundaryClass::OnS1 => {
            let s_star = p.gamma / p.beta_star;
            let star = cfg.region.curve_beta_star.eval_clamped(x.s);
            if x.s > s_star && x.i >= star - cfg.band * p.i_max {
                Ok(s1(x).min(s2(x)))
            } else {
                Ok(s1(x))
            }
        }
        BoundaryClass::OnS2 => Ok(s2(x)),
        BoundaryClass::Outside => Err(Error::solver(format!(
            "state ({}, {}) left the viable region",
            x.s, x.i
        ))),
    }
}

/// Greedy rate in `[beta_star, beta]`.
pub fn greedy_b(x: State, i_del: f64, class: BoundaryClass, cfg: &PolicyConfig) -> Result<f64> {
    let p = cfg.params();
    Ok(greedy_cap(x, i_del, class, cfg)?.clamp(p.beta_star, p.beta))
}

#[derive(Debug, Clone)]
pub struct ClosedLoopResult {
    pub trajectory: Trajectory,
    /// Rate at every grid node.
    pub controls: Vec<f64>,
    /// `beta - b` at every grid node.
    pub u: Vec<f64>,
    pub j_cum: Vec<f64>,
    pub j: f64,
    /// End of the last step with `b < beta`; `0` when the rate never drops.
    pub t_lock: f64,
    pub s_inf_estimate: f64,
    pub clamp_events: usize,
    pub max_i: f64,
    pub constraint_ok: bool,
    pub reached_r: bool,
    /// The stopping rule fired before `t_max`.
    pub terminated: bool,
    pub degenerate: bool,
}

/// Closed-loop simulation under the greedy policy.
pub fn run_greedy(
    ic: &InitialCondition,
    cfg: &PolicyConfig,
    step: &StepConfig,
    cost_spec: &CostSpec,
) -> Result<ClosedLoopResult> {
    cfg.validate()?;
    let p = *cfg.params();
    ic.check_admissible(&p)?;
    if let PolicyVariant::LipschitzPast { l } = cfg.variant {
        ic.check_lipschitz(&p, l)?;
    }
    let x0 = ic.eval(0.0, &p)?;
    if !contains(Region::B, &cfg.region, x0) {
        return Err(Error::validation(format!(
            "initial state ({}, {}) is outside the viable region",
            x0.s, x0.i
        )));
    }
    let degenerate = ic.is_degenerate(&p);
    let s_beta = p.gamma / p.beta;
    let mut clamp_events = 0usize;

    let out = integrate(
        ic,
        &p,
        step,
        |t, x, i_del| {
            let class = classify_boundary(&cfg.region, x, cfg.band);
            let raw = greedy_cap(x, i_del, class, cfg)?;
            if raw < p.beta_star {
                clamp_events += 1;
                debug!("clamped rate {raw} to beta_star at t = {t}");
            }
            Ok(raw.clamp(p.beta_star, p.beta))
        },
        |t, x| {
            if degenerate {
                t >= p.delay
            } else {
                x.s < s_beta && x.i < I_TERMINAL
            }
        },
    )?;
    if clamp_events > 0 {
        info!("greedy run clamped the rate {clamp_events} times");
    }

    let traj = out.trajectory;
    let n = traj.states.len();
    let mut controls = out.controls;
    let t_lock = controls
        .iter()
        .rposition(|&b| b < p.beta)
        .map_or(0.0, |k| traj.time(k + 1));
    // The node after the last step carries the rate the loop would apply next.
    let last = traj.last();
    let i_del = traj.delayed_i(traj.t_end())?;
    let class = classify_boundary(&cfg.region, last, cfg.band);
    controls.push(greedy_b(last, i_del, class, cfg).unwrap_or(p.beta));
    debug_assert_eq!(controls.len(), n);

    let u: Vec<f64> = controls.iter().map(|&b| (p.beta - b).max(0.0)).collect();
    let j_cum = cumulative_cost(&u, traj.dt, cost_spec)?;
    let j = *j_cum.last().unwrap_or(&0.0);
    let max_i = traj.max_i();
    let terminated = traj.t_end() < step.t_max - 0.5 * traj.dt;
    Ok(ClosedLoopResult {
        s_inf_estimate: last.s,
        controls,
        u,
        j_cum,
        j,
        t_lock,
        clamp_events,
        max_i,
        constraint_ok: max_i <= p.i_max * (1.0 + cfg.band),
        reached_r: last.s < s_beta && last.i <= p.i_max,
        terminated,
        degenerate,
        trajectory: traj,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticDiagnostics {
    pub s_inf: f64,
    pub below_threshold: bool,
    /// Relative residual of the limit relation at `T = t_lock`; absent for
    /// degenerate runs.
    pub relative_residual: Option<f64>,
    /// Root of the limit relation, i.e. `s_inf` corrected for the tail that
    /// the stopping rule cuts off.
    pub s_inf_corrected: Option<f64>,
}

/// Checks `s_inf < gamma/beta` and the relation
/// `s_inf e^{-(beta/gamma) s_inf} = M_T s(T) e^{-(beta/gamma) s(T)}` with
/// `M_T = exp(-beta int_{T-h}^T i - (beta/gamma) i(T))`.
pub fn asymptotics(result: &ClosedLoopResult, p: &Params) -> Result<AsymptoticDiagnostics> {
    if !result.terminated {
        return Err(Error::validation("run did not reach its termination rule"));
    }
    let traj = &result.trajectory;
    let s_inf = result.s_inf_estimate;
    let below_threshold = s_inf < p.gamma / p.beta;
    if result.degenerate {
        return Ok(AsymptoticDiagnostics {
            s_inf,
            below_threshold,
            relative_residual: None,
            s_inf_corrected: None,
        });
    }
    let t = result.t_lock;
    let k = p.beta / p.gamma;
    let x_t = traj.eval_state(t)?;
    let n = traj.lag;
    let mut integral = 0.0;
    let mut prev = traj.eval_state(t - p.delay)?.i;
    for j in 1..=n {
        let cur = traj.eval_state(t - p.delay + j as f64 * traj.dt)?.i;
        integral += 0.5 * traj.dt * (prev + cur);
        prev = cur;
    }
    let m_t = (-p.beta * integral - k * x_t.i).exp();
    let rhs = m_t * x_t.s * (-k * x_t.s).exp();
    let lhs = s_inf * (-k * s_inf).exp();
    let relative_residual = (lhs - rhs).abs() / rhs.abs();

    // s e^{-ks} increases on [0, 1/k] = [0, gamma/beta].
    let (mut lo, mut hi) = (0.0, 1.0 / k);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid * (-k * mid).exp() < rhs {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(AsymptoticDiagnostics {
        s_inf,
        below_threshold,
        relative_residual: Some(relative_residual),
        s_inf_corrected: Some(0.5 * (lo + hi)),
    })
}

/// Largest `i(tau + t) - max_{[tau - h, tau]} i` over grid `tau >= 0` and
/// `t` in `[0, h]`. Requires `s(0) <= gamma/beta`.
pub fn weak_monotone_check(traj: &Trajectory, p: &Params) -> Result<f64> {
    let s0 = traj.states[0].s;
    if s0 > p.gamma / p.beta {
        return Err(Error::validation(format!(
            "s(0) = {s0} above the herd immunity threshold {}",
            p.gamma / p.beta
        )));
    }
    let lag = traj.lag;
    let mut v: Vec<f64> = (0..lag)
        .map(|j| traj.prefix.eval_unchecked(-p.delay + j as f64 * traj.dt, p).i)
        .collect();
    v.extend(traj.states.iter().map(|x| x.i));

    let back = sliding_max(&v, lag, false);
    let fwd = sliding_max(&v, lag, true);
    let worst = (lag..v.len())
        .map(|m| fwd[m] - back[m])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(worst.max(0.0))
}

/// Window maximum over `v[m - w ..= m]`, or `v[m ..= m + w]` when `forward`.
fn sliding_max(v: &[f64], w: usize, forward: bool) -> Vec<f64> {
    let n = v.len();
    let mut out = vec![0.0; n];
    let mut dq: VecDeque<usize> = VecDeque::new();
    let order: Box<dyn Iterator<Item = usize>> = if forward {
        Box::new((0..n).rev())
    } else {
        Box::new(0..n)
    };
    for m in order {
        while dq.back().is_some_and(|&j| v[j] <= v[m]) {
            dq.pop_back();
        }
        dq.push_back(m);
        while dq.front().is_some_and(|&j| j.abs_diff(m) > w) {
            dq.pop_front();
        }
        out[m] = v[dq[0]];
    }
    out
}

impl ClosedLoopResult {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            j: self.j,
            t_lock: self.t_lock,
            s_inf: self.s_inf_estimate,
            constraint_ok: self.constraint_ok,
            clamp_events: self.clamp_events,
            max_i: self.max_i,
            reached_r: self.reached_r,
            terminated: self.terminated,
            degenerate: self.degenerate,
            t_end: self.trajectory.t_end(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSummary {
    #[serde(rename = "J")]
    pub j: f64,
    pub t_lock: f64,
    pub s_inf: f64,
    pub constraint_ok: bool,
    pub clamp_events: usize,
    pub max_i: f64,
    pub reached_r: bool,
    pub terminated: bool,
    pub degenerate: bool,
    pub t_end: f64,
}

/// Policy with the default band on the continuous-past regions.
pub fn default_policy(p: &Params) -> Result<PolicyConfig> {
    PolicyConfig::continuous(p, DEFAULT_BAND)
}
