use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use viadel::control::{run_greedy, CostSpec, PolicyConfig};
use viadel::curves::{build_gamma_lh, ClosedFormCurve, DelayFreeCurve, FrontierCurve, DEFAULT_NODES};
use viadel::dde::{integrate, integrate_constant, StepConfig};
use viadel::model::{InitialCondition, Params, SamplePoint, State};
use viadel::regions::{contains, Region, RegionSpec};

fn reference() -> Params {
    Params::default()
}

fn random_past(rng: &mut ChaCha8Rng, p: &Params) -> InitialCondition {
    let n = 5;
    let pts = (0..n)
        .map(|k| {
            let i = rng.gen::<f64>() * p.i_max;
            SamplePoint {
                t: -p.delay + p.delay * k as f64 / (n - 1) as f64,
                s: rng.gen::<f64>() * (1.0 - i),
                i,
            }
        })
        .collect();
    InitialCondition::sampled(pts)
}

#[test]
fn permanence_and_monotone_s_under_random_controls() {
    let p = reference();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = StepConfig::for_params(&p).with_t_max(200.0);
    for _ in 0..200 {
        let ic = random_past(&mut rng, &p);
        let rates: Vec<f64> = (0..201).map(|_| rng.gen_range(p.beta_star..=p.beta)).collect();
        let out = integrate(&ic, &p, &cfg, |t, _, _| Ok(rates[t.floor() as usize]), |_, _| false).unwrap();
        let traj = &out.trajectory;
        for x in &traj.states {
            assert!(x.s >= -1e-9 && x.i >= -1e-9 && x.s + x.i <= 1.0 + 1e-9);
        }
        for w in traj.states.windows(2) {
            assert!(w[1].s <= w[0].s + 1e-12);
        }
        if traj.states[0].s > 0.0 && !ic.is_degenerate(&p) {
            let lag = traj.lag;
            assert!(traj.states[lag..].iter().all(|x| x.i > 0.0));
        }
    }
}

#[test]
fn halving_dt_shrinks_error() {
    let p = reference();
    let ic = InitialCondition::Constant { s: 0.45, i: 0.001 };
    let at = |dt: f64| {
        let cfg = StepConfig::for_params(&p).with_dt(dt).with_t_max(40.0);
        integrate_constant(&ic, &p, &cfg, p.beta).unwrap().trajectory.eval_state(30.0).unwrap()
    };
    let (a, b, c) = (at(0.5), at(0.25), at(0.125));
    assert!(a.max_norm_dist(&b) / b.max_norm_dist(&c) >= 8.0);
}

#[test]
fn delayed_lookup_matches_fine_grid() {
    let p = reference();
    let ic = InitialCondition::Constant { s: 0.45, i: 0.001 };
    let run = |dt: f64| {
        let cfg = StepConfig::for_params(&p).with_dt(dt).with_t_max(20.0);
        integrate_constant(&ic, &p, &cfg, p.beta).unwrap().trajectory
    };
    let (coarse, fine) = (run(0.01), run(0.001));
    let t = 1.5 * p.delay;
    assert!((coarse.delayed_i(t).unwrap() - fine.delayed_i(t).unwrap()).abs() < 1e-8);
    assert_eq!(coarse.delayed_i(p.delay).unwrap(), 0.001);
}

#[test]
fn curve_families_are_ordered() {
    let p = reference();
    for (b, h) in [(p.beta, 1.0), (p.beta, 0.1), (p.beta_star, 1.0), (p.beta_star, 0.1)] {
        let ph = Params { delay: h, ..p };
        let closed: FrontierCurve = ClosedFormCurve::new(b, &p).into();
        let lh: FrontierCurve = build_gamma_lh(b, 0.0105, h, &ph, DEFAULT_NODES).unwrap().into();
        let free: FrontierCurve = DelayFreeCurve::new(b, &p).into();
        for k in 0..2000 {
            let s = p.gamma / b + (free.s_hat() - p.gamma / b) * k as f64 / 1999.0;
            let (a, m, f) = (closed.eval_clamped(s), lh.eval_clamped(s), free.eval_clamped(s));
            assert!(a <= m + 1e-8 && m <= f + 1e-8, "b = {b}, h = {h}, s = {s}");
        }
    }
}

#[test]
fn frontier_grows_as_delay_shrinks() {
    let p = reference();
    let hs = [6.0, 1.0, 0.3, 0.1, 0.01];
    let curves: Vec<FrontierCurve> = hs
        .iter()
        .map(|&h| build_gamma_lh(p.beta, 0.0105, h, &Params { delay: h, ..p }, DEFAULT_NODES).unwrap().into())
        .collect();
    for w in curves.windows(2) {
        for k in 0..2000 {
            let s = 0.14 + 0.1 * k as f64 / 1999.0;
            assert!(w[0].eval_clamped(s) <= w[1].eval_clamped(s) + 1e-8);
        }
    }
}

#[test]
fn lipschitz_policy_keeps_cap() {
    let p = Params { delay: 1.0, ..reference() };
    let l = 0.0105;
    let cfg = PolicyConfig::lipschitz(&p, l, 1e-3).unwrap();
    let ic = InitialCondition::Constant { s: 0.45, i: 0.001 };
    let step = StepConfig::for_params(&p).with_dt(0.01);
    let r = run_greedy(&ic, &cfg, &step, &CostSpec::default()).unwrap();
    assert!(r.constraint_ok && r.terminated && r.reached_r);
    let cont = run_greedy(&ic, &PolicyConfig::continuous(&p, 1e-3).unwrap(), &step, &CostSpec::default()).unwrap();
    // the Lipschitz region is larger, so its greedy policy intervenes less
    assert!(r.j <= cont.j);
}

#[test]
fn eventual_lock_on_greedy_runs() {
    let p = reference();
    let cfg = PolicyConfig::continuous(&p, 1e-3).unwrap();
    let step = StepConfig::for_params(&p);
    for ic in [
        InitialCondition::Constant { s: 0.45, i: 0.001 },
        InitialCondition::Constant { s: 0.3, i: 0.015 },
        InitialCondition::ExpSurge { s0: 0.4, i0: 0.002 },
    ] {
        let r = run_greedy(&ic, &cfg, &step, &CostSpec::default()).unwrap();
        assert!(r.t_lock.is_finite() && r.terminated && r.reached_r);
        let k = (r.t_lock / r.trajectory.dt).round() as usize;
        assert!(r.controls[k..].iter().all(|&b| b == p.beta));
        assert!(r.j >= 0.0 && r.j.is_finite());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn region_inclusions(seed in any::<u64>()) {
        let p = reference();
        let cont = RegionSpec::continuous(&p);
        let lip = RegionSpec::lipschitz(&Params { delay: 0.3, ..p }, 0.0105).unwrap();
        let free = RegionSpec::delay_free(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5000 {
            let x = State::new(rng.gen::<f64>() * 0.6, rng.gen::<f64>() * 0.025);
            if contains(Region::A, &cont, x) {
                prop_assert!(contains(Region::B, &cont, x));
                prop_assert!(contains(Region::A, &lip, x));
            }
            if contains(Region::A, &lip, x) {
                prop_assert!(contains(Region::A, &free, x));
            }
            if contains(Region::B, &lip, x) {
                prop_assert!(contains(Region::B, &free, x));
            }
        }
    }

    #[test]
    fn greedy_runs_respect_cap(s in 0.0f64..0.45, frac in 0.0f64..1.0) {
        let p = reference();
        let cfg = PolicyConfig::continuous(&p, 1e-3).unwrap();
        let g = cfg.region.curve_beta_star.eval_clamped(s);
        let x = State::new(s, frac * g);
        prop_assume!(contains(Region::B, &cfg.region, x));
        let r = run_greedy(&InitialCondition::constant(x), &cfg, &StepConfig::for_params(&p), &CostSpec::default()).unwrap();
        prop_assert!(r.max_i <= p.i_max * (1.0 + 1e-3));
        prop_assert!(r.trajectory.last().s < p.gamma / p.beta);
    }
}
