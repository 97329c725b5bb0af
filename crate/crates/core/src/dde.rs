//! Fixed-step RK4 for the constant-delay system, by the method of steps.
//!
//! The step is an exact divisor of the delay, so every delayed stage value
//! falls either on the initial history or on a stored interval at one of the
//! RK abscissae 0, 1/2, 1. Between nodes the trajectory is the cubic Hermite
//! interpolant of the stored end states and end slopes of each step.

use log::debug;

use crate::error::{Error, Result};
use crate::model::{rhs_delayed, InitialCondition, Params, State};

/// Distance outside the triangle tolerated before aborting.
const TRIANGLE_ABORT: f64 = 1e-6;

/// Integration grid and horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub dt: f64,
    pub t_max: f64,
    /// Freeze the control over each step (sampled-data controller).
    pub hold_control: bool,
}

impl StepConfig {
    /// `dt = h/600`, `t_max = 1000` days, zero-order hold.
    pub fn for_params(p: &Params) -> Self {
        StepConfig {
            dt: p.delay / 600.0,
            t_max: 1000.0,
            hold_control: true,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_t_max(mut self, t_max: f64) -> Self {
        self.t_max = t_max;
        self
    }

    /// Steps per delay and the aligned step `h / ceil(h / dt)`.
    pub fn aligned(&self, delay: f64) -> Result<(usize, f64)> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.t_max >= delay) {
            return Err(Error::validation(format!(
                "t_max = {} shorter than the delay {delay}",
                self.t_max
            )));
        }
        let ratio = delay / self.dt;
        // Guard against h/dt landing a hair above an integer.
        let lag = if (ratio - ratio.round()).abs() < 1e-9 * ratio.max(1.0) {
            ratio.round()
        } else {
            ratio.ceil()
        };
        let lag = (lag as usize).max(1);
        Ok((lag, delay / lag as f64))
    }
}

/// Dense solution on `[-h, t_end]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    /// Number of steps per delay.
    pub lag: usize,
    pub params: Params,
    pub prefix: InitialCondition,
    pub states: Vec<State>,
    /// `[left, right]` end slopes of each step, used by the Hermite interpolant.
    pub slopes: Vec<[State; 2]>,
}

#[inline]
fn hermite(y0: f64, y1: f64, m0: f64, m1: f64, dt: f64, theta: f64) -> f64 {
    if theta == 0.5 {
        return 0.5 * (y0 + y1) + dt * (m0 - m1) / 8.0;
    }
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + theta;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * y0 + h10 * dt * m0 + h01 * y1 + h11 * dt * m1
}

impl Trajectory {
    fn new(ic: &InitialCondition, p: &Params, dt: f64, lag: usize) -> Self {
        Trajectory {
            dt,
            lag,
            params: *p,
            prefix: ic.clone(),
            states: Vec::new(),
            slopes: Vec::new(),
        }
    }

    pub fn delay(&self) -> f64 {
        self.params.delay
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.states.len().saturating_sub(1))
    }

    pub fn last(&self) -> State {
        *self.states.last().expect("trajectory has at least the initial node")
    }

    /// Hermite value on step `k` at relative position `theta` in `[0, 1]`.
    fn on_interval(&self, k: usize, theta: f64) -> State {
        if theta == 0.0 {
            return self.states[k];
        }
        if theta == 1.0 {
            return self.states[k + 1];
        }
        let (y0, y1) = (self.states[k], self.states[k + 1]);
        let [m0, m1] = self.slopes[k];
        State::new(
            hermite(y0.s, y1.s, m0.s, m1.s, self.dt, theta),
            hermite(y0.i, y1.i, m0.i, m1.i, self.dt, theta),
        )
    }

    /// Delayed infected fraction seen by the stage at `t_k + theta dt`.
    fn delayed_stage(&self, k: usize, theta: f64) -> f64 {
        if k >= self.lag {
            self.on_interval(k - self.lag, theta).i
        } else {
            let t = (k as f64 + theta) * self.dt - self.params.delay;
            self.prefix.eval_unchecked(t.min(0.0), &self.params).i
        }
    }

    /// State at any `t` in `[-h, t_end]`; exact at grid nodes.
    pub fn eval_state(&self, t: f64) -> Result<State> {
        let h = self.params.delay;
        let t_end = self.t_end();
        let slack = 1e-9 * self.dt;
        if !(t >= -h - slack && t <= t_end + slack) {
            return Err(Error::Domain {
                what: "t",
                value: t,
                lo: -h,
                hi: t_end,
            });
        }
        if t <= 0.0 {
            return Ok(self.prefix.eval_unchecked(t.max(-h), &self.params));
        }
        let x = t / self.dt;
        let k = x.round();
        if (x - k).abs() < 1e-9 {
            return Ok(self.states[(k as usize).min(self.states.len() - 1)]);
        }
        let k = (x.floor() as usize).min(self.slopes.len() - 1);
        Ok(self.on_interval(k, x - k as f64))
    }

    /// `i(t - h)`.
    pub fn delayed_i(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain {
                what: "t",
                value: t,
                lo: 0.0,
                hi: self.t_end(),
            });
        }
        Ok(self.eval_state(t - self.params.delay)?.i)
    }

    pub fn max_i(&self) -> f64 {
        self.states.iter().map(|x| x.i).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Trajectory plus the control applied on each step.
#[derive(Debug, Clone)]
pub struct Integration {
    pub trajectory: Trajectory,
    /// `controls[k]` is the rate used on `[t_k, t_{k+1}]`.
    pub controls: Vec<f64>,
}

fn check_state(x: State, t: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::solver(format!("non-finite state at t = {t}")));
    }
    if !x.in_triangle(TRIANGLE_ABORT) {
        return Err(Error::solver(format!(
            "state ({}, {}) left the triangle at t = {t}",
            x.s, x.i
        )));
    }
    Ok(())
}

/// Integrates from the history `ic` until `t_max` or until `stop` holds at a
/// grid node (including `t = 0`).
///
/// `control(t, x, i_del)` returns the transmission rate. With `hold_control`
/// it is queried once per step at the step start, otherwise at every stage.
pub fn integrate<C, S>(
    ic: &InitialCondition,
    p: &Params,
    cfg: &StepConfig,
    mut control: C,
    mut stop: S,
) -> Result<Integration>
where
    C: FnMut(f64, State, f64) -> Result<f64>,
    S: FnMut(f64, State) -> bool,
{
    let (lag, dt) = cfg.aligned(p.delay)?;
    let n_max = (cfg.t_max / dt).round() as usize;
    let mut traj = Trajectory::new(ic, p, dt, lag);
    let x0 = ic.eval_unchecked(0.0, p);
    check_state(x0, 0.0)?;
    traj.states.reserve(n_max.min(1 << 20) + 1);
    traj.states.push(x0);
    let mut controls = Vec::with_capacity(n_max.min(1 << 20));

    if stop(0.0, x0) {
        return Ok(Integration { trajectory: traj, controls });
    }

    for k in 0..n_max {
        let t = k as f64 * dt;
        let x = traj.states[k];
        let d0 = traj.delayed_stage(k, 0.0);
        let dm = traj.delayed_stage(k, 0.5);
        let d1 = traj.delayed_stage(k, 1.0);

        let b0 = control(t, x, d0)?;
        let mut rate = |tt: f64, xx: State, dd: f64| -> Result<f64> {
            if cfg.hold_control {
                Ok(b0)
            } else {
                control(tt, xx, dd)
            }
        };
        let k1 = rhs_delayed(x, d0, b0, p);
        let x2 = x.axpy(0.5 * dt, &k1);
        let k2 = rhs_delayed(x2, dm, rate(t + 0.5 * dt, x2, dm)?, p);
        let x3 = x.axpy(0.5 * dt, &k2);
        let k3 = rhs_delayed(x3, dm, rate(t + 0.5 * dt, x3, dm)?, p);
        let x4 = x.axpy(dt, &k3);
        let b4 = rate(t + dt, x4, d1)?;
        let k4 = rhs_delayed(x4, d1, b4, p);
        let next = State::new(
            x.s + dt / 6.0 * (k1.s + 2.0 * k2.s + 2.0 * k3.s + k4.s),
            x.i + dt / 6.0 * (k1.i + 2.0 * k2.i + 2.0 * k3.i + k4.i),
        );
        let t_next = (k + 1) as f64 * dt;
        check_state(next, t_next)?;
        let right = rhs_delayed(next, d1, b4, p);

        traj.states.push(next);
        traj.slopes.push([k1, right]);
        controls.push(b0);

        if stop(t_next, next) {
            debug!("integration stopped at t = {t_next}");
            break;
        }
    }
    Ok(Integration { trajectory: traj, controls })
}

/// Open-loop run with a constant rate.
pub fn integrate_constant(ic: &InitialCondition, p: &Params, cfg: &StepConfig, b: f64) -> Result<Integration> {
    integrate(ic, p, cfg, |_, _, _| Ok(b), |_, _| false)
}
