//! Frontier curves `i = Gamma(s)` bounding the invariant and viable regions.
//!
//! Three families share the interface in [`FrontierCurve`]:
//! closed-form curves for a past pinned at `i_max`, delay-free curves, and
//! curves tabulated from the worst-case system driven by `psi_{L,h}`.

use crate::error::{Error, Result};
use crate::model::{psi_truncate, Params, State};

/// Relative width of the removable-singularity branches.
const BRANCH_TOL: f64 = 1e-12;
/// RK steps per closed-form crossing time when tabulating.
const CURVE_STEPS: usize = 16384;
/// Tolerance on `|i|` when localizing the axis crossing.
const CROSSING_TOL: f64 = 1e-12;
/// Default node count of tabulated curves.
pub const DEFAULT_NODES: usize = 2048;

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= BRANCH_TOL * a.abs().max(b.abs())
}

/// Crossing time of the linear system `s' = b i_max s, i' = -b i_max s + gamma i`
/// started at `(gamma/b, i_max)`.
pub fn t_cross_closed_form(b: f64, p: &Params) -> f64 {
    let r = b * p.i_max;
    if near(r, p.gamma) {
        1.0 / p.gamma
    } else {
        (r / p.gamma).ln() / (r - p.gamma)
    }
}

/// Abscissa where the closed-form curve for rate `b` meets `i = 0`.
pub fn s_hat_closed_form(b: f64, p: &Params) -> f64 {
    let r = b * p.i_max;
    let a = r / p.gamma;
    if near(r, p.gamma) {
        p.gamma / b * std::f64::consts::E
    } else {
        p.gamma / b * a.powf(a / (a - 1.0))
    }
}

/// `Gamma_b(s) = c s^omega + s/(omega - 1)`, or `c1 s - s ln s` when `omega = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormCurve {
    pub b_level: f64,
    pub omega: f64,
    pub coeff_c: f64,
    pub coeff_c1: f64,
    pub unit_branch: bool,
    pub s_lo: f64,
    pub s_hat: f64,
    pub i_max: f64,
}

impl ClosedFormCurve {
    pub fn new(b: f64, p: &Params) -> Self {
        let s_lo = p.gamma / b;
        let omega = p.gamma / (b * p.i_max);
        let unit_branch = near(omega, 1.0);
        let (coeff_c, coeff_c1) = if unit_branch {
            (f64::NAN, 1.0 + s_lo.ln())
        } else {
            (s_lo.powf(-omega) * (p.i_max - s_lo / (omega - 1.0)), f64::NAN)
        };
        ClosedFormCurve {
            b_level: b,
            omega,
            coeff_c,
            coeff_c1,
            unit_branch,
            s_lo,
            s_hat: s_hat_closed_form(b, p),
            i_max: p.i_max,
        }
    }

    /// Unclamped formula value; defined for any `s > 0`.
    pub fn formula(&self, s: f64) -> f64 {
        if self.unit_branch {
            self.coeff_c1 * s - s * s.ln()
        } else {
            self.coeff_c * s.powf(self.omega) + s / (self.omega - 1.0)
        }
    }
}

/// Delay-free frontier: `i_max` up to `gamma/b`, then
/// `gamma/b + i_max - s + (gamma/b) ln(b s / gamma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayFreeCurve {
    pub b_level: f64,
    pub gamma: f64,
    pub s_lo: f64,
    pub s_hat: f64,
    pub i_max: f64,
}

/// Delay-free frontier value at any `s >= 0`.
pub fn gamma_delay_free(b: f64, p: &Params, s: f64) -> f64 {
    let s_lo = p.gamma / b;
    if s <= s_lo {
        p.i_max
    } else {
        s_lo + p.i_max - s + s_lo * (s / s_lo).ln()
    }
}

impl DelayFreeCurve {
    pub fn new(b: f64, p: &Params) -> Self {
        let s_lo = p.gamma / b;
        // The formula decreases on (s_lo, inf) and tends to -inf.
        let (mut lo, mut hi) = (s_lo, s_lo.max(1e-3));
        while gamma_delay_free(b, p, hi) > 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if gamma_delay_free(b, p, mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        DelayFreeCurve {
            b_level: b,
            gamma: p.gamma,
            s_lo,
            s_hat: 0.5 * (lo + hi),
            i_max: p.i_max,
        }
    }

    fn formula(&self, s: f64) -> f64 {
        if s <= self.s_lo {
            self.i_max
        } else {
            self.s_lo + self.i_max - s + self.s_lo * (s / self.s_lo).ln()
        }
    }
}

/// Curve sampled on a uniform grid in `s` with monotone cubic Hermite evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedCurve {
    pub b_level: f64,
    pub s_nodes: Vec<f64>,
    pub i_values: Vec<f64>,
    pub slopes: Vec<f64>,
    pub s_hat_lh: f64,
    pub t_cross: f64,
    pub i_max: f64,
}

struct Flow {
    dt: f64,
    states: Vec<State>,
    derivs: Vec<State>,
}

impl Flow {
    fn at(&self, k: usize, theta: f64) -> State {
        let (y0, y1) = (self.states[k], self.states[k + 1]);
        let (m0, m1) = (self.derivs[k], self.derivs[k + 1]);
        let t2 = theta * theta;
        let t3 = t2 * theta;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + theta;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let f = |a: f64, b: f64, ma: f64, mb: f64| h00 * a + h10 * self.dt * ma + h01 * b + h11 * self.dt * mb;
        State::new(f(y0.s, y1.s, m0.s, m1.s), f(y0.i, y1.i, m0.i, m1.i))
    }
}

/// Tabulates the graph of `s' = b s nu(i), i' = -b s nu(i) + gamma i`
/// from `(gamma/b, i_max)` until `i = 0`.
pub fn tabulate_flow<F>(b: f64, p: &Params, nu: F, n_nodes: usize) -> Result<TabulatedCurve>
where
    F: Fn(f64) -> f64,
{
    if n_nodes < 64 {
        return Err(Error::validation(format!("n_nodes = {n_nodes} below 64")));
    }
    let t_ref = t_cross_closed_form(b, p);
    let dt = t_ref / CURVE_STEPS as f64;
    let rhs = |x: State| {
        let flow = b * x.s * nu(x.i);
        State::new(flow, -flow + p.gamma * x.i)
    };

    let x0 = State::new(p.gamma / b, p.i_max);
    let mut flow = Flow {
        dt,
        states: vec![x0],
        derivs: vec![rhs(x0)],
    };
    let max_steps = 10 * CURVE_STEPS;
    let mut crossing = None;
    for k in 0..max_steps {
        let x = flow.states[k];
        let k1 = flow.derivs[k];
        let k2 = rhs(x.axpy(0.5 * dt, &k1));
        let k3 = rhs(x.axpy(0.5 * dt, &k2));
        let k4 = rhs(x.axpy(dt, &k3));
        let next = State::new(
            x.s + dt / 6.0 * (k1.s + 2.0 * k2.s + 2.0 * k3.s + k4.s),
            x.i + dt / 6.0 * (k1.i + 2.0 * k2.i + 2.0 * k3.i + k4.i),
        );
        if !next.is_finite() {
            return Err(Error::solver(format!("curve flow diverged at step {k}")));
        }
        flow.states.push(next);
        flow.derivs.push(rhs(next));
        if next.i <= 0.0 {
            crossing = Some(k);
            break;
        }
    }
    let k = crossing.ok_or_else(|| {
        Error::solver(format!(
            "no axis crossing of the b = {b} worst-case flow before t = {}",
            10.0 * t_ref
        ))
    })?;

    let (mut lo, mut hi) = (0.0, 1.0);
    let mut theta = 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let i = flow.at(k, mid).i;
        if i > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        theta = mid;
        if i.abs() <= CROSSING_TOL {
            break;
        }
    }
    let end = flow.at(k, theta);
    if end.i.abs() > CROSSING_TOL {
        return Err(Error::solver(format!("axis crossing not localized: |i| = {}", end.i.abs())));
    }
    let t_cross = (k as f64 + theta) * dt;
    let s_hat = end.s;

    // Keep only the part of the flow up to the crossing.
    flow.states.truncate(k + 2);
    flow.derivs.truncate(k + 2);
    flow.states[k + 1] = end;
    flow.derivs[k + 1] = rhs(end);
    // The last step is shortened to theta dt; rescale its Hermite data.
    let last_dt = theta * dt;

    let s_lo = x0.s;
    let ds = (s_hat - s_lo) / (n_nodes - 1) as f64;
    let mut s_nodes = Vec::with_capacity(n_nodes);
    let mut i_values = Vec::with_capacity(n_nodes);
    let mut seg = 0usize;
    for j in 0..n_nodes {
        let target = if j == n_nodes - 1 { s_hat } else { s_lo + j as f64 * ds };
        while seg < k && flow.states[seg + 1].s < target {
            seg += 1;
        }
        let x = if j == 0 {
            x0
        } else if j == n_nodes - 1 {
            end
        } else {
            let eval = |th: f64| {
                if seg == k {
                    // last, shortened step
                    let local = Flow {
                        dt: last_dt,
                        states: vec![flow.states[k], end],
                        derivs: vec![flow.derivs[k], flow.derivs[k + 1]],
                    };
                    local.at(0, th)
                } else {
                    flow.at(seg, th)
                }
            };
            let (mut a, mut c) = (0.0, 1.0);
            for _ in 0..60 {
                let m = 0.5 * (a + c);
                if eval(m).s < target {
                    a = m;
                } else {
                    c = m;
                }
            }
            eval(0.5 * (a + c))
        };
        s_nodes.push(target);
        i_values.push(x.i.max(0.0));
    }
    if let Some(last) = i_values.last_mut() {
        *last = 0.0;
    }

    let mut slopes: Vec<f64> = s_nodes
        .iter()
        .zip(&i_values)
        .map(|(&s, &i)| {
            let n = nu(i);
            if n > 0.0 {
                -1.0 + p.gamma * i / (b * s * n)
            } else {
                -1.0
            }
        })
        .collect();
    fritsch_carlson(&s_nodes, &i_values, &mut slopes);

    Ok(TabulatedCurve {
        b_level: b,
        s_nodes,
        i_values,
        slopes,
        s_hat_lh: s_hat,
        t_cross,
        i_max: p.i_max,
    })
}

/// Limits Hermite slopes so each interval is monotone.
fn fritsch_carlson(x: &[f64], y: &[f64], m: &mut [f64]) {
    for k in 0..x.len() - 1 {
        let delta = (y[k + 1] - y[k]) / (x[k + 1] - x[k]);
        if delta == 0.0 {
            m[k] = 0.0;
            m[k + 1] = 0.0;
            continue;
        }
        if m[k] * delta < 0.0 {
            m[k] = 0.0;
        }
        if m[k + 1] * delta < 0.0 {
            m[k + 1] = 0.0;
        }
        let a = m[k] / delta;
        let b = m[k + 1] / delta;
        let r = a * a + b * b;
        if r > 9.0 {
            let tau = 3.0 / r.sqrt();
            m[k] = tau * a * delta;
            m[k + 1] = tau * b * delta;
        }
    }
}

/// Frontier of the worst-case system with past speed bound `l` and delay `h`.
pub fn build_gamma_lh(b: f64, l: f64, h: f64, p: &Params, n_nodes: usize) -> Result<TabulatedCurve> {
    let lmin = p.min_lipschitz();
    if !(l >= lmin) {
        return Err(Error::validation(format!("L = {l} below i_max max(beta, gamma) = {lmin}")));
    }
    if !(h > 0.0) {
        return Err(Error::validation(format!("h = {h} must be positive")));
    }
    tabulate_flow(b, p, |i| psi_truncate(i, p.i_max, l, h), n_nodes)
}

/// Event-integrated version of the closed-form curve, for cross-checks.
pub fn build_gamma_event(b: f64, p: &Params, n_nodes: usize) -> Result<TabulatedCurve> {
    tabulate_flow(b, p, |_| p.i_max, n_nodes)
}

impl TabulatedCurve {
    fn eval_inner(&self, s: f64) -> f64 {
        let n = self.s_nodes.len();
        let s0 = self.s_nodes[0];
        let ds = self.s_nodes[1] - s0;
        let x = (s - s0) / ds;
        let k = x.round();
        if (x - k).abs() < 1e-9 && k >= 0.0 && (k as usize) < n {
            return self.i_values[k as usize];
        }
        let k = (x.floor().max(0.0) as usize).min(n - 2);
        let h = self.s_nodes[k + 1] - self.s_nodes[k];
        let theta = ((s - self.s_nodes[k]) / h).clamp(0.0, 1.0);
        let t2 = theta * theta;
        let t3 = t2 * theta;
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.i_values[k]
            + (t3 - 2.0 * t2 + theta) * h * self.slopes[k]
            + (-2.0 * t3 + 3.0 * t2) * self.i_values[k + 1]
            + (t3 - t2) * h * self.slopes[k + 1]
    }
}

/// Any frontier curve.
#[derive(Debug, Clone, PartialEq)]
pub enum FrontierCurve {
    Closed(ClosedFormCurve),
    DelayFree(DelayFreeCurve),
    Tabulated(TabulatedCurve),
}

impl FrontierCurve {
    pub fn b_level(&self) -> f64 {
        match self {
            FrontierCurve::Closed(c) => c.b_level,
            FrontierCurve::DelayFree(c) => c.b_level,
            FrontierCurve::Tabulated(c) => c.b_level,
        }
    }

    pub fn s_lo(&self) -> f64 {
        match self {
            FrontierCurve::Closed(c) => c.s_lo,
            FrontierCurve::DelayFree(c) => c.s_lo,
            FrontierCurve::Tabulated(c) => c.s_nodes[0],
        }
    }

    pub fn s_hat(&self) -> f64 {
        match self {
            FrontierCurve::Closed(c) => c.s_hat,
            FrontierCurve::DelayFree(c) => c.s_hat,
            FrontierCurve::Tabulated(c) => c.s_hat_lh,
        }
    }

    fn i_max(&self) -> f64 {
        match self {
            FrontierCurve::Closed(c) => c.i_max,
            FrontierCurve::DelayFree(c) => c.i_max,
            FrontierCurve::Tabulated(c) => c.i_max,
        }
    }

    /// Curve value, clamped to `[0, i_max]`, for `s` in `[s_lo, s_hat]`.
    pub fn eval(&self, s: f64) -> Result<f64> {
        let (lo, hi) = (self.s_lo(), self.s_hat());
        let slack = 1e-12 * hi;
        if !(s >= lo - slack && s <= hi + slack) {
            return Err(Error::Domain {
                what: "s",
                value: s,
                lo,
                hi,
            });
        }
        Ok(self.eval_clamped(s))
    }

    /// Value with `s` clamped into the domain; `i_max` to the left and `0`
    /// past the right end, as the region boundaries use it.
    pub fn eval_clamped(&self, s: f64) -> f64 {
        if s <= self.s_lo() {
            return self.i_max();
        }
        if s >= self.s_hat() {
            return 0.0;
        }
        let v = match self {
            FrontierCurve::Closed(c) => c.formula(s),
            FrontierCurve::DelayFree(c) => c.formula(s),
            FrontierCurve::Tabulated(c) => c.eval_inner(s),
        };
        v.clamp(0.0, self.i_max())
    }
}

impl From<ClosedFormCurve> for FrontierCurve {
    fn from(c: ClosedFormCurve) -> Self {
        FrontierCurve::Closed(c)
    }
}

impl From<DelayFreeCurve> for FrontierCurve {
    fn from(c: DelayFreeCurve) -> Self {
        FrontierCurve::DelayFree(c)
    }
}

impl From<TabulatedCurve> for FrontierCurve {
    fn from(c: TabulatedCurve) -> Self {
        FrontierCurve::Tabulated(c)
    }
}

/// Largest second difference over `n` uniform samples of the domain.
/// Non-positive values mean the samples are concave.
pub fn max_second_difference(c: &FrontierCurve, n: usize) -> f64 {
    let (lo, hi) = (c.s_lo(), c.s_hat());
    let v: Vec<f64> = (0..n)
        .map(|k| c.eval_clamped(lo + (hi - lo) * k as f64 / (n - 1) as f64))
        .collect();
    v.windows(3)
        .map(|w| w[0] - 2.0 * w[1] + w[2])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// True when `n` uniform samples strictly decrease.
pub fn strictly_decreasing(c: &FrontierCurve, n: usize) -> bool {
    let (lo, hi) = (c.s_lo(), c.s_hat());
    let mut prev = f64::INFINITY;
    for k in 0..n {
        let v = c.eval_clamped(lo + (hi - lo) * k as f64 / (n - 1) as f64);
        if !(v < prev) {
            return false;
        }
        prev = v;
    }
    true
}
