//! Command-line front end.

use std::io::Read;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::curves::{build_gamma_event, build_gamma_lh, ClosedFormCurve, DelayFreeCurve, FrontierCurve, DEFAULT_NODES};
use crate::error::{Error, Result};
use crate::experiments::{
    cost_surface, h_sweep, run_scenario, workers_from_env, write_curve_csv, write_json, write_surface_csv,
    write_sweep_csv, ExperimentConfig, PolicyKind, Scenario,
};
use crate::model::State;
use crate::regions::{invariance_probe, maximality_probe, ProbeConfig, Region, RegionSpec};

#[derive(Debug, Parser)]
#[command(name = "viadel", version, about = "Delayed SIR epidemic under an ICU cap: frontiers, regions and greedy control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub beta_star: Option<f64>,
    #[arg(long, global = true)]
    pub i_max: Option<f64>,
    /// Latency h in days.
    #[arg(long, global = true)]
    pub delay: Option<f64>,
    /// Past-speed bound L.
    #[arg(long, global = true)]
    pub lipschitz: Option<f64>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Boundary activation band relative to i_max.
    #[arg(long, global = true)]
    pub band: Option<f64>,
    #[arg(long, global = true)]
    pub t_max: Option<f64>,
    #[arg(long, global = true, value_parser = parse_scenario)]
    pub scenario: Option<Scenario>,
    #[arg(long, global = true)]
    pub ic_file: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub policy: Option<PolicyArg>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub resolution: Option<usize>,
    /// Comma-separated, strictly decreasing delays.
    #[arg(long, global = true, value_delimiter = ',')]
    pub h_list: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

fn parse_scenario(s: &str) -> std::result::Result<Scenario, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Continuous,
    Lipschitz,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    Beta,
    BetaStar,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveKind {
    /// Past pinned at i_max, closed form.
    Closed,
    /// Past pinned at i_max, event-integrated.
    Event,
    DelayFree,
    /// Worst L-Lipschitz past at the configured delay.
    Lipschitz,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-loop greedy run; writes <scenario>.csv and <scenario>.json.
    Simulate,
    /// Tabulates a frontier curve as CSV plus a JSON header.
    Curves {
        #[arg(long, value_enum, default_value = "beta")]
        level: Level,
        #[arg(long, value_enum, default_value = "closed")]
        kind: CurveKind,
        #[arg(long, default_value_t = DEFAULT_NODES)]
        nodes: usize,
    },
    /// Membership of a point; reads {"s":..,"i":..} from stdin without --s/--i.
    Region {
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        i: Option<f64>,
    },
    /// Greedy cost from constant histories over a grid covering B.
    CostSurface,
    /// Frontier convergence as the delay shrinks.
    HSweep,
    /// Invariance and maximality probes.
    Selftest {
        #[arg(long)]
        trials: Option<usize>,
    },
}

/// Builds the experiment config: file (or defaults), then `VIADEL_WORKERS`,
/// then flags.
pub fn resolve_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(w) = workers_from_env() {
        cfg.workers = Some(w);
    }
    let p = &mut cfg.params;
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src {
                $dst = v;
            }
        };
    }
    set!(p.gamma, args.gamma);
    set!(p.beta, args.beta);
    set!(p.beta_star, args.beta_star);
    set!(p.i_max, args.i_max);
    set!(p.delay, args.delay);
    if args.lipschitz.is_some() {
        p.lipschitz = args.lipschitz;
    }
    if args.dt.is_some() {
        cfg.dt = args.dt;
    }
    set!(cfg.band, args.band);
    set!(cfg.t_max, args.t_max);
    set!(cfg.scenario, args.scenario);
    if args.ic_file.is_some() {
        cfg.ic_file = args.ic_file.clone();
        if args.scenario.is_none() {
            cfg.scenario = Scenario::File;
        }
    }
    if let Some(pol) = args.policy {
        cfg.policy = match pol {
            PolicyArg::Continuous => PolicyKind::Continuous,
            PolicyArg::Lipschitz => PolicyKind::Lipschitz,
        };
    }
    set!(cfg.out, args.out.clone());
    set!(cfg.resolution, args.resolution);
    set!(cfg.h_list, args.h_list.clone());
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    set!(cfg.seed, args.seed);
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Deserialize)]
struct PointQuery {
    s: f64,
    i: f64,
}

/// Executes a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let mut cfg = resolve_config(&cli.common)?;
    match cli.command {
        Command::Simulate => {
            let out = run_scenario(&cfg)?;
            println!("{} J = {:.6}", out.summary.scenario, out.summary.run.j);
            println!("wrote {} and {}", out.csv.display(), out.json.display());
        }
        Command::Curves { level, kind, nodes } => curves(&cfg, level, kind, nodes)?,
        Command::Region { s, i } => {
            let x = match (s, i) {
                (Some(s), Some(i)) => State::new(s, i),
                (None, None) => {
                    let mut text = String::new();
                    std::io::stdin().read_to_string(&mut text)?;
                    let q: PointQuery = serde_json::from_str(&text)?;
                    State::new(q.s, q.i)
                }
                _ => return Err(Error::validation("give both --s and --i, or neither")),
            };
            let p = cfg.params;
            let cont = RegionSpec::continuous(&p);
            let free = RegionSpec::delay_free(&p);
            let mut v = json!({
                "in_A": cont.contains(Region::A, x),
                "in_B": cont.contains(Region::B, x),
                "in_A0": free.contains(Region::A, x),
                "in_B0": free.contains(Region::B, x),
                "class": cont.classify(x, cfg.band),
            });
            if let Some(l) = p.lipschitz {
                let lip = RegionSpec::lipschitz(&p, l)?;
                v["in_A_lh"] = json!(lip.contains(Region::A, x));
                v["in_B_lh"] = json!(lip.contains(Region::B, x));
            }
            println!("{}", serde_json::to_string(&v)?);
        }
        Command::CostSurface => {
            let surface = cost_surface(&cfg)?;
            let path = cfg.out.join("cost_surface.csv");
            write_surface_csv(&path, &surface)?;
            println!(
                "wrote {} ({}x{} cells, {} failures)",
                path.display(),
                surface.s.len(),
                surface.i.len(),
                surface.failures.len()
            );
        }
        Command::HSweep => {
            let sweep = h_sweep(&cfg)?;
            let csv = cfg.out.join("h_sweep.csv");
            write_sweep_csv(&csv, &sweep)?;
            write_json(&cfg.out.join("h_sweep.json"), &sweep)?;
            for r in &sweep.rows {
                println!(
                    "h = {:<6} sup_dist_beta = {:.6e} sup_dist_beta_star = {:.6e}",
                    r.h, r.sup_dist_beta, r.sup_dist_beta_star
                );
            }
            println!("wrote {}", csv.display());
        }
        Command::Selftest { trials } => {
            if let Some(t) = trials {
                cfg.trials = t;
            }
            return selftest(&cfg);
        }
    }
    Ok(0)
}

fn curves(cfg: &ExperimentConfig, level: Level, kind: CurveKind, nodes: usize) -> Result<()> {
    let p = cfg.params;
    let b = match level {
        Level::Beta => p.beta,
        Level::BetaStar => p.beta_star,
    };
    let curve: FrontierCurve = match kind {
        CurveKind::Closed => ClosedFormCurve::new(b, &p).into(),
        CurveKind::DelayFree => DelayFreeCurve::new(b, &p).into(),
        CurveKind::Event => build_gamma_event(b, &p, nodes)?.into(),
        CurveKind::Lipschitz => {
            let l = p.lipschitz.unwrap_or_else(|| p.min_lipschitz());
            build_gamma_lh(b, l, p.delay, &p, nodes)?.into()
        }
    };
    let points: Vec<(f64, f64)> = match &curve {
        FrontierCurve::Tabulated(t) => t.s_nodes.iter().copied().zip(t.i_values.iter().copied()).collect(),
        c => {
            let n = nodes.max(2);
            let (lo, hi) = (c.s_lo(), c.s_hat());
            (0..n)
                .map(|k| {
                    let s = if k == n - 1 { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 };
                    (s, c.eval_clamped(s))
                })
                .collect()
        }
    };
    let stem = format!(
        "curve_{}_{}",
        serde_json::to_value(kind)?.as_str().unwrap_or("curve"),
        serde_json::to_value(level)?.as_str().unwrap_or("level")
    );
    let mut header = json!({
        "level": level,
        "kind": kind,
        "b": b,
        "s_lo": curve.s_lo(),
        "s_hat": curve.s_hat(),
        "nodes": points.len(),
        "params": p,
    });
    if let FrontierCurve::Tabulated(t) = &curve {
        header["t_cross"] = json!(t.t_cross);
    }
    write_curve_csv(&cfg.out.join(format!("{stem}.csv")), &points)?;
    write_json(&cfg.out.join(format!("{stem}.json")), &header)?;
    println!("{}", serde_json::to_string(&header)?);
    Ok(())
}

fn selftest(cfg: &ExperimentConfig) -> Result<i32> {
    let p = cfg.params;
    let spec = RegionSpec::continuous(&p);
    let mut probe = ProbeConfig::for_params(&p);
    probe.step = cfg.step().with_t_max(probe.horizon);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count())
        .build()
        .map_err(|e| Error::solver(format!("cannot start worker pool: {e}")))?;
    let inv = pool.install(|| invariance_probe(&spec, cfg.trials, cfg.seed, &probe))?;
    let inv_ok = inv.max_violation <= 1e-6;
    println!(
        "{} invariance: {} trials, max violation {:.3e}",
        verdict(inv_ok),
        inv.trials,
        inv.max_violation
    );

    probe.horizon = 200.0;
    let hit = maximality_probe(&spec, 0.02 * p.i_max, &probe)?;
    let hit_ok = hit.is_some_and(|t| t < 200.0);
    println!(
        "{} maximality, offset 0.02 i_max: first violation at {}",
        verdict(hit_ok),
        hit.map_or("none".into(), |t| format!("t = {t:.2}"))
    );
    let edge = maximality_probe(&spec, 0.0, &probe)?;
    let edge_ok = edge.is_none();
    println!(
        "{} maximality, on the frontier: {}",
        verdict(edge_ok),
        edge.map_or("no violation".into(), |t| format!("violation at t = {t:.2}"))
    );
    Ok(if inv_ok && hit_ok && edge_ok { 0 } else { 2 })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}
