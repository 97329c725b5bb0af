//! Epidemic parameters, states, initial histories and the delayed vector field.
//!
//! The controlled system is
//!
//! ```text
//! s'(t) = -b(t) s(t) i(t-h)
//! i'(t) =  b(t) s(t) i(t-h) - gamma i(t)
//! ```
//!
//! with `b(t)` in `[beta_star, beta]` and the ICU constraint `i(t) <= i_max`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of points used when checking an initial history on `[-h, 0]`.
pub const ADMISSIBILITY_GRID: usize = 1001;

/// Relative slack allowed on the Lipschitz bound of a sampled history.
const LIPSCHITZ_SLACK: f64 = 1e-9;

/// Epidemic and control constants. Rates are per day, the delay is in days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub gamma: f64,
    pub beta: f64,
    pub beta_star: f64,
    pub i_max: f64,
    pub delay: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
}

impl Default for Params {
    /// COVID-19 Italy, autumn 2021, with a six day latency.
    fn default() -> Self {
        Params {
            gamma: 0.0714,
            beta: 0.5,
            beta_star: 0.185,
            i_max: 0.021,
            delay: 6.0,
            lipschitz: None,
        }
    }
}

impl Params {
    pub fn new(gamma: f64, beta: f64, beta_star: f64, i_max: f64, delay: f64) -> Result<Self> {
        let p = Params {
            gamma,
            beta,
            beta_star,
            i_max,
            delay,
            lipschitz: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_lipschitz(mut self, l: f64) -> Result<Self> {
        self.lipschitz = Some(l);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.gamma, self.beta, self.beta_star, self.i_max, self.delay]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::validation("parameters must be finite"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::validation(format!("gamma = {} not in (0, 1)", self.gamma)));
        }
        if !(self.beta_star > 0.0 && self.beta_star <= self.beta && self.beta < 1.0) {
            return Err(Error::validation(format!(
                "need 0 < beta_star <= beta < 1, got beta_star = {}, beta = {}",
                self.beta_star, self.beta
            )));
        }
        if !(self.i_max > 0.0 && self.i_max <= 1.0) {
            return Err(Error::validation(format!("i_max = {} not in (0, 1]", self.i_max)));
        }
        if !(self.delay > 0.0) {
            return Err(Error::validation(format!("delay = {} must be positive", self.delay)));
        }
        if let Some(l) = self.lipschitz {
            let lmin = self.min_lipschitz();
            if !(l.is_finite() && l >= lmin) {
                return Err(Error::validation(format!(
                    "lipschitz = {l} below the admissible minimum {lmin}"
                )));
            }
        }
        Ok(())
    }

    /// Smallest admissible past-speed bound, `i_max * max(beta, gamma)`.
    pub fn min_lipschitz(&self) -> f64 {
        min_lipschitz(self)
    }

    /// Herd immunity abscissa `gamma / b` for a transmission level `b`.
    pub fn threshold(&self, b: f64) -> f64 {
        self.gamma / b
    }
}

/// A point `(s, i)` of the susceptible/infected plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub s: f64,
    pub i: f64,
}

impl State {
    pub const fn new(s: f64, i: f64) -> Self {
        State { s, i }
    }

    /// Membership in the triangle `s >= 0, i >= 0, s + i <= 1`, up to `tol`.
    pub fn in_triangle(&self, tol: f64) -> bool {
        self.s >= -tol && self.i >= -tol && self.s + self.i <= 1.0 + tol
    }

    pub fn max_norm_dist(&self, other: &State) -> f64 {
        (self.s - other.s).abs().max((self.i - other.i).abs())
    }

    pub fn is_finite(&self) -> bool {
        self.s.is_finite() && self.i.is_finite()
    }

    pub(crate) fn axpy(&self, a: f64, d: &State) -> State {
        State::new(self.s + a * d.s, self.i + a * d.i)
    }
}

/// Delayed SIR vector field. The returned pair is `(ds/dt, di/dt)`.
#[inline]
pub fn rhs_delayed(x: State, i_del: f64, b: f64, p: &Params) -> State {
    let flow = b * x.s * i_del;
    State::new(-flow, flow - p.gamma * x.i)
}

/// Worst admissible value of `i(t-h)` given `i(t)` for an `L`-Lipschitz
/// history bounded by `i_max`.
#[inline]
pub fn psi_truncate(i: f64, i_max: f64, l: f64, h: f64) -> f64 {
    let lh = l * h;
    if i <= -i_max - lh {
        -i_max
    } else if i <= i_max - lh {
        i + lh
    } else {
        i_max
    }
}

pub fn min_lipschitz(p: &Params) -> f64 {
    p.i_max * p.beta.max(p.gamma)
}

/// Feasible set `C`: the triangle intersected with `i <= i_max`.
pub fn in_c(x: State, p: &Params) -> bool {
    x.in_triangle(0.0) && x.i <= p.i_max
}

/// One node of a tabulated history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub t: f64,
    pub s: f64,
    pub i: f64,
}

/// Initial history on `[-h, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    /// `phi(t) = x` for all `t`.
    Constant { s: f64, i: f64 },
    /// `(s0, i0 e^{-gamma t})`: an exposed cohort recovering before time zero.
    ExpRecovery { s0: f64, i0: f64 },
    /// `i` falls from `i_max` at `-h` to `i0` at `0` along `1 - e^{5t}`.
    ExpSurge { s0: f64, i0: f64 },
    /// Piecewise linear through nodes sorted by time, spanning `[-h, 0]`.
    Sampled { points: Vec<SamplePoint> },
}

impl InitialCondition {
    pub fn constant(x: State) -> Self {
        InitialCondition::Constant { s: x.s, i: x.i }
    }

    pub fn sampled(points: Vec<SamplePoint>) -> Self {
        InitialCondition::Sampled { points }
    }

    /// History that sits at the ICU cap until `-ramp` and then moves linearly
    /// to `x0`. With `lipschitz` set, the history is instead the steepest
    /// admissible one, `min(i_max, i0 - L t)`.
    pub fn worst_past(x0: State, p: &Params, ramp: f64, lipschitz: Option<f64>) -> Self {
        let h = p.delay;
        let mut pts = Vec::with_capacity(3);
        match lipschitz {
            None => {
                let ramp = ramp.clamp(0.0, h);
                pts.push(SamplePoint { t: -h, s: x0.s, i: p.i_max });
                if ramp > 0.0 && ramp < h {
                    pts.push(SamplePoint { t: -ramp, s: x0.s, i: p.i_max });
                }
            }
            Some(l) => {
                let reach = (p.i_max - x0.i) / l;
                pts.push(SamplePoint {
                    t: -h,
                    s: x0.s,
                    i: p.i_max.min(x0.i + l * h),
                });
                if reach > 0.0 && reach < h {
                    pts.push(SamplePoint { t: -reach, s: x0.s, i: p.i_max });
                }
            }
        }
        pts.push(SamplePoint { t: 0.0, s: x0.s, i: x0.i });
        InitialCondition::Sampled { points: pts }
    }

    /// Value of the history at `t` in `[-h, 0]`.
    pub fn eval(&self, t: f64, p: &Params) -> Result<State> {
        let h = p.delay;
        let slack = 1e-12 * h.max(1.0);
        if !(t >= -h - slack && t <= slack) {
            return Err(Error::Domain {
                what: "t",
                value: t,
                lo: -h,
                hi: 0.0,
            });
        }
        Ok(self.eval_unchecked(t.clamp(-h, 0.0), p))
    }

    pub(crate) fn eval_unchecked(&self, t: f64, p: &Params) -> State {
        match self {
            InitialCondition::Constant { s, i } => State::new(*s, *i),
            InitialCondition::ExpRecovery { s0, i0 } => State::new(*s0, i0 * (-p.gamma * t).exp()),
            InitialCondition::ExpSurge { s0, i0 } => {
                // i0 + (i_max - i0)(1 - e^{5t})/(1 - e^{-5h}), arranged so
                // that t = -h gives i_max without rounding above it.
                let floor = (-5.0 * p.delay).exp();
                let w = ((5.0 * t).exp() - floor) / (1.0 - floor);
                State::new(*s0, p.i_max - (p.i_max - i0) * w)
            }
            InitialCondition::Sampled { points } => interpolate(points, t),
        }
    }

    /// Structural checks for sampled histories.
    fn check_shape(&self, p: &Params) -> Result<()> {
        if let InitialCondition::Sampled { points } = self {
            if points.len() < 2 {
                return Err(Error::validation("sampled history needs at least two nodes"));
            }
            if points.windows(2).any(|w| !(w[1].t > w[0].t)) {
                return Err(Error::validation("sampled history times must be strictly increasing"));
            }
            let span = 1e-9 * p.delay.max(1.0);
            let (first, last) = (points[0].t, points[points.len() - 1].t);
            if (first + p.delay).abs() > span || last.abs() > span {
                return Err(Error::validation(format!(
                    "sampled history must span [-h, 0], got [{first}, {last}]"
                )));
            }
        }
        Ok(())
    }

    fn grid(&self, p: &Params) -> impl Iterator<Item = (f64, State)> + '_ {
        let h = p.delay;
        let p = *p;
        (0..ADMISSIBILITY_GRID).map(move |k| {
            let t = -h + h * k as f64 / (ADMISSIBILITY_GRID - 1) as f64;
            (t, self.eval_unchecked(t, &p))
        })
    }

    /// Checks that the history stays in `C` on a uniform grid.
    pub fn check_admissible(&self, p: &Params) -> Result<()> {
        self.check_shape(p)?;
        for (t, x) in self.grid(p) {
            if !x.is_finite() || !in_c(x, p) {
                return Err(Error::validation(format!(
                    "initial history leaves C at t = {t}: (s, i) = ({}, {})",
                    x.s, x.i
                )));
            }
        }
        Ok(())
    }

    /// Checks the max-norm Lipschitz bound `L` between consecutive grid points
    /// (and between sampled nodes, where the slope is largest).
    pub fn check_lipschitz(&self, p: &Params, l: f64) -> Result<()> {
        self.check_shape(p)?;
        let pairs: Vec<(f64, State)> = match self {
            InitialCondition::Sampled { points } => {
                points.iter().map(|q| (q.t, State::new(q.s, q.i))).collect()
            }
            _ => self.grid(p).collect(),
        };
        for w in pairs.windows(2) {
            let dt = w[1].0 - w[0].0;
            let dx = w[1].1.max_norm_dist(&w[0].1);
            if dx > l * dt * (1.0 + LIPSCHITZ_SLACK) {
                return Err(Error::validation(format!(
                    "initial history violates the Lipschitz bound {l} near t = {}",
                    w[0].0
                )));
            }
        }
        Ok(())
    }

    /// True when `i` vanishes on the whole history grid.
    pub fn is_degenerate(&self, p: &Params) -> bool {
        match self {
            InitialCondition::Constant { i, .. } => *i == 0.0,
            InitialCondition::ExpRecovery { i0, .. } => *i0 == 0.0,
            InitialCondition::Sampled { points } => points.iter().all(|q| q.i == 0.0),
            InitialCondition::ExpSurge { .. } => self.grid(p).all(|(_, x)| x.i == 0.0),
        }
    }
}

fn interpolate(points: &[SamplePoint], t: f64) -> State {
    let n = points.len();
    if t <= points[0].t {
        return State::new(points[0].s, points[0].i);
    }
    if t >= points[n - 1].t {
        return State::new(points[n - 1].s, points[n - 1].i);
    }
    let k = points.partition_point(|q| q.t <= t).saturating_sub(1).min(n - 2);
    let (a, b) = (points[k], points[k + 1]);
    let w = (t - a.t) / (b.t - a.t);
    State::new(a.s + w * (b.s - a.s), a.i + w * (b.i - a.i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> Params {
        Params::default()
    }

    #[test]
    fn rhs_examples() {
        let p = Params { gamma: 0.0714, ..reference() };
        let d = rhs_delayed(State::new(0.4, 0.01), 0.02, 0.5, &p);
        assert!((d.s + 0.004).abs() < 1e-15);
        assert!((d.i - 0.003286).abs() < 1e-15);

        let d = rhs_delayed(State::new(0.3, 0.015), 0.0, 0.37, &p);
        assert_eq!(d.s, 0.0);
        assert_eq!(d.i, -p.gamma * 0.015);

        let d = rhs_delayed(State::new(0.45, 0.001), 0.001, 0.5, &p);
        assert!((d.s + 2.25e-4).abs() < 1e-18);
        assert!((d.i - (2.25e-4 - 7.14e-5)).abs() < 1e-18);
    }

    #[test]
    fn psi_examples() {
        let (im, l, h) = (0.021, 0.01, 0.5);
        assert!((psi_truncate(0.010, im, l, h) - 0.015).abs() < 1e-15);
        assert_eq!(psi_truncate(0.020, im, l, h), 0.021);
        assert_eq!(psi_truncate(-0.030, im, l, h), -0.021);
    }

    #[test]
    fn min_lipschitz_examples() {
        assert!((min_lipschitz(&reference()) - 0.0105).abs() < 1e-15);
        let tie = Params { gamma: 0.3, beta: 0.3, beta_star: 0.1, ..reference() };
        assert_eq!(min_lipschitz(&tie), tie.i_max * 0.3);
        let p = Params { gamma: 0.9, beta: 0.5, beta_star: 0.2, i_max: 1.0, ..reference() };
        assert_eq!(min_lipschitz(&p), 0.9);
    }

    #[test]
    fn param_validation() {
        assert!(reference().validate().is_ok());
        assert!(Params::new(0.0714, 0.5, 0.6, 0.021, 6.0).is_err());
        assert!(Params::new(1.2, 0.5, 0.2, 0.021, 6.0).is_err());
        assert!(Params::new(0.0714, 0.5, 0.2, 0.0, 6.0).is_err());
        assert!(Params::new(0.0714, 0.5, 0.2, 0.021, 0.0).is_err());
        assert!(reference().with_lipschitz(0.01).is_err());
        assert!(reference().with_lipschitz(0.0105).is_ok());
    }

    #[test]
    fn eval_initial_examples() {
        let p = reference();
        let c = InitialCondition::Constant { s: 0.45, i: 0.001 };
        assert_eq!(c.eval(-3.0, &p).unwrap(), State::new(0.45, 0.001));

        let r = InitialCondition::ExpRecovery { s0: 0.45, i0: 0.001 };
        assert_eq!(r.eval(0.0, &p).unwrap(), State::new(0.45, 0.001));
        let back = r.eval(-6.0, &p).unwrap();
        assert!((back.i - 0.001 * 0.4284f64.exp()).abs() < 1e-15);

        let e = InitialCondition::ExpSurge { s0: 0.45, i0: 0.001 };
        assert!((e.eval(-6.0, &p).unwrap().i - 0.021).abs() < 1e-15);
        assert!((e.eval(0.0, &p).unwrap().i - 0.001).abs() < 1e-15);

        assert!(matches!(c.eval(0.5, &p), Err(Error::Domain { .. })));
        assert!(c.eval(-6.5, &p).is_err());
    }

    #[test]
    fn in_c_examples() {
        let p = reference();
        assert!(in_c(State::new(0.1, 0.01), &p));
        assert!(!in_c(State::new(0.1, 0.03), &p));
        assert!(!in_c(State::new(0.6, 0.5), &p));
    }

    #[test]
    fn admissibility_checks() {
        let p = reference();
        for ic in [
            InitialCondition::Constant { s: 0.45, i: 0.001 },
            InitialCondition::ExpRecovery { s0: 0.45, i0: 0.001 },
            InitialCondition::ExpSurge { s0: 0.45, i0: 0.001 },
        ] {
            ic.check_admissible(&p).unwrap();
        }
        // 0.015 e^{6 gamma} > i_max
        let bad = InitialCondition::ExpRecovery { s0: 0.45, i0: 0.015 };
        assert!(bad.check_admissible(&p).is_err());

        let short = InitialCondition::sampled(vec![
            SamplePoint { t: -3.0, s: 0.2, i: 0.01 },
            SamplePoint { t: 0.0, s: 0.2, i: 0.01 },
        ]);
        assert!(short.check_admissible(&p).is_err());
    }

    #[test]
    fn lipschitz_checks() {
        let p = reference();
        let l = 0.0105;
        let worst = InitialCondition::worst_past(State::new(0.2, 0.005), &p, 0.0, Some(l));
        worst.check_admissible(&p).unwrap();
        worst.check_lipschitz(&p, l).unwrap();
        assert!(worst.check_lipschitz(&p, 0.9 * l).is_err());
        // the surge drops by 0.02 within a fraction of a day
        let surge = InitialCondition::ExpSurge { s0: 0.45, i0: 0.001 };
        assert!(surge.check_lipschitz(&p, l).is_err());
        InitialCondition::Constant { s: 0.45, i: 0.001 }.check_lipschitz(&p, l).unwrap();
    }

    #[test]
    fn worst_past_shapes() {
        let p = reference();
        let ic = InitialCondition::worst_past(State::new(0.15, 0.004), &p, 0.06, None);
        assert_eq!(ic.eval(-6.0, &p).unwrap().i, p.i_max);
        assert_eq!(ic.eval(-0.06, &p).unwrap().i, p.i_max);
        assert_eq!(ic.eval(0.0, &p).unwrap(), State::new(0.15, 0.004));
        let mid = ic.eval(-0.03, &p).unwrap().i;
        assert!((mid - 0.5 * (p.i_max + 0.004)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_detection() {
        let p = reference();
        assert!(InitialCondition::Constant { s: 0.3, i: 0.0 }.is_degenerate(&p));
        assert!(!InitialCondition::Constant { s: 0.3, i: 1e-9 }.is_degenerate(&p));
    }

    #[test]
    fn sampled_serde_shape() {
        let json = r#"{"kind":"sampled","points":[{"t":-6,"s":0.3,"i":0.01},{"t":0,"s":0.3,"i":0.02}]}"#;
        let ic: InitialCondition = serde_json::from_str(json).unwrap();
        let x = ic.eval(-3.0, &reference()).unwrap();
        assert!((x.i - 0.015).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn rhs_components_sum_to_recovery(
            s in 0.0f64..1.0, i in 0.0f64..1.0, id in 0.0f64..1.0, b in 0.185f64..0.5,
        ) {
            let p = reference();
            let d = rhs_delayed(State::new(s, i), id, b, &p);
            let expect = -p.gamma * i;
            let scale = d.s.abs().max(d.i.abs()).max(expect.abs());
            prop_assert!((d.s + d.i - expect).abs() <= f64::EPSILON * scale);
        }

        #[test]
        fn psi_is_monotone_and_contractive(
            a in -0.1f64..0.1, b in -0.1f64..0.1, l in 0.0105f64..0.1, h in 0.01f64..10.0,
        ) {
            let im = 0.021;
            let (pa, pb) = (psi_truncate(a, im, l, h), psi_truncate(b, im, l, h));
            prop_assert!((pa - pb).abs() <= (a - b).abs() + 1e-15);
            if a <= b { prop_assert!(pa <= pb); }
            prop_assert!(pa.abs() <= im);
        }

        #[test]
        fn psi_dominates_on_feasible_range(i in 0.0f64..=0.021, h in 0.001f64..10.0) {
            let v = psi_truncate(i, 0.021, 0.0105, h);
            prop_assert!(i <= v && v <= 0.021);
        }

        #[test]
        fn surge_decreases_in_time(t1 in -6.0f64..0.0, t2 in -6.0f64..0.0) {
            prop_assume!(t1 < t2);
            let p = reference();
            let ic = InitialCondition::ExpSurge { s0: 0.45, i0: 0.001 };
            prop_assert!(ic.eval(t1, &p).unwrap().i > ic.eval(t2, &p).unwrap().i);
        }
    }
}
