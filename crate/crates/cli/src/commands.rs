//! Subcommand bodies: each turns a validated config into artifacts.

use mtcp_core::ancestor::{
    ancestor_track, build_renewal_point, build_renewal_point_psi, find_bifurcations, steered_sequence, RenewalOutcome,
};
use mtcp_core::estimators::{
    bound_fit, complete_convergence_check, drift_scan, estimate_lambda_c, estimate_survival_and_cone,
    invariant_audit, neuhauser_check, renewal_drift, symmetric_contrast,
};
use mtcp_core::paths::{
    classify, death_time_from, enumerate_paths, find_fbip, find_rfbip, fsip_reach_set, reach_set, reachable, Anchor,
    DeathTime, InfectionPath, PathClass,
};
use mtcp_core::process::evolve;
use mtcp_core::stats::Proportion;
use mtcp_core::walk::{box_chain, concentration, cone_experiment, overshoot_bound_check, simulate_walk};
use mtcp_core::{AugmentedHarrisSystem, EventKind, Point};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{field_err, Command, ConfigError, EstimateConfig, PathQuery};
use crate::output::{num, point, Artifact, CommandOutput};
use crate::render::render_svg;

type Result<T> = std::result::Result<T, ConfigError>;

fn kind_name(k: EventKind) -> &'static str {
    match k {
        EventKind::Death => "death",
        EventKind::Arrow => "arrow",
        EventKind::Selective => "selective",
    }
}

fn run_err(field: &str) -> impl Fn(String) -> ConfigError + '_ {
    move |m| field_err(field, m)
}

pub fn execute(cmd: &Command) -> Result<CommandOutput> {
    match cmd {
        Command::Simulate(c) => {
            let (h, input) = c.system.load()?;
            let t_end = c.t_end.unwrap_or(h.horizon());
            let xi0 = c.initial.build(h.window(), h.seed()).map_err(|e| field_err("initial", e.to_string()))?;
            let tr = evolve(&xi0, &h, t_end).map_err(|e| field_err("t_end", e.to_string()))?;
            let w = h.window();
            // one row per event; the state change it caused, if any
            let mut changes = tr.log.iter().peekable();
            let mut rows = Vec::new();
            for e in h.events().iter().take_while(|e| e.time <= t_end) {
                let mut row = vec![num(e.time), kind_name(e.kind).into(), point(&w.point(e.from as usize)), point(&w.point(e.to as usize))];
                match changes.peek() {
                    Some(tr) if tr.time == e.time => {
                        row.extend([tr.old.to_string(), tr.new.to_string()]);
                        changes.next();
                    }
                    _ => row.extend([String::new(), String::new()]),
                }
                rows.push(row);
            }
            let fin = tr.final_config();
            let summary = json!({
                "t_end": t_end,
                "events": rows.len(),
                "transitions": tr.log.len(),
                "initial": { "ones": xi0.count(1), "twos": xi0.count(2) },
                "final": { "ones": fin.count(1), "twos": fin.count(2) },
                "boundary_contact": tr.boundary_contact,
            });
            Ok(CommandOutput {
                artifacts: vec![
                    Artifact::csv("trajectory.csv", &["time", "kind", "from", "to", "old", "new"], rows),
                    Artifact::Json { name: "summary.json".into(), value: summary },
                    Artifact::Json { name: "system.json".into(), value: serde_json::from_str(&h.to_json()).expect("json") },
                ],
                censoring: json!({ "boundary_contact": tr.boundary_contact }),
                inputs: input.into_iter().collect(),
            })
        }
        Command::EvolveQuery(c) => {
            let (h, input) = c.system.load()?;
            let xi0 = c.initial.build(h.window(), h.seed()).map_err(|e| field_err("initial", e.to_string()))?;
            let t_max = c.queries.iter().map(|q| q.t).fold(0.0, f64::max);
            let tr = evolve(&xi0, &h, t_max).map_err(|e| field_err("queries", e.to_string()))?;
            let mut rows = Vec::new();
            for (i, q) in c.queries.iter().enumerate() {
                let v = tr.state_at(&q.x, q.t, q.left_limit).map_err(|e| field_err(&format!("queries[{i}]"), e.to_string()))?;
                rows.push(vec![point(&q.x), num(q.t), q.left_limit.to_string(), v.to_string()]);
            }
            Ok(CommandOutput {
                artifacts: vec![Artifact::csv("states.csv", &["x", "t", "left_limit", "state"], rows)],
                censoring: json!({ "boundary_contact": tr.boundary_contact }),
                inputs: input.into_iter().collect(),
            })
        }
        Command::Paths(c) => {
            let (h, input) = c.system.load()?;
            let mut rows = Vec::new();
            let mut results = Vec::new();
            for (i, q) in c.queries.iter().enumerate() {
                let field = format!("queries[{i}]");
                q.validate(&field, &h)?;
                let ans = run_path_query(&h, q).map_err(run_err(&field))?;
                for (k, p) in ans.paths.iter().enumerate() {
                    let cl = ans.classes[k].as_array();
                    let mut row = vec![
                        i.to_string(),
                        k.to_string(),
                        point(&h.window().point(p.origin)),
                        point(&h.window().point(p.final_site())),
                        num(p.start),
                        num(p.end),
                        p.jumps.len().to_string(),
                    ];
                    row.extend(cl.iter().map(|b| b.to_string()));
                    rows.push(row);
                }
                results.push(ans.to_json(&h));
            }
            Ok(CommandOutput {
                artifacts: vec![
                    Artifact::csv(
                        "paths.csv",
                        &["query", "path", "origin", "final", "start", "end", "jumps", "bip", "sip", "fbip", "fsip", "rfbip", "rfsip"],
                        rows,
                    ),
                    Artifact::Json { name: "paths.json".into(), value: Value::Array(results) },
                ],
                censoring: Value::Null,
                inputs: input.into_iter().collect(),
            })
        }
        Command::Ancestor(c) => {
            let (h, input) = c.system.load()?;
            let x = h.window().index(&c.x).ok_or_else(|| field_err("x", format!("site {:?} is not in the window", c.x)))?;
            let track = ancestor_track(&h, x, c.s, c.until).map_err(|e| field_err("until", e.to_string()))?;
            let rows = track
                .breakpoints
                .iter()
                .map(|(t, v)| vec![num(*t), v.map_or("none".into(), |s| point(&h.window().point(s)))])
                .collect();
            let bifs = match c.l {
                Some(l) => Some(find_bifurcations(&h, l).map_err(|e| field_err("l", e.to_string()))?),
                None => None,
            };
            let ext = track.extinction_time();
            Ok(CommandOutput {
                artifacts: vec![
                    Artifact::csv("ancestor.csv", &["time", "site"], rows),
                    Artifact::json("ancestor.json", json!({ "track": track, "extinction_time": ext, "bifurcations": bifs })),
                ],
                censoring: json!({ "extinct": ext.is_some() }),
                inputs: input.into_iter().collect(),
            })
        }
        Command::Renewal(c) => {
            let (h, input) = c.system.load()?;
            let outcome = match &c.relocate {
                Some(r) => build_renewal_point_psi(&h, c.l, r.axis, r.kappa),
                None => build_renewal_point(&h, c.l),
            }
            .map_err(|e| field_err("l", e.to_string()))?;
            let mut artifacts = Vec::new();
            let censoring = match &outcome {
                RenewalOutcome::Found(_) => json!({ "censored": Value::Null }),
                RenewalOutcome::Censored { reason, .. } => json!({ "censored": reason }),
            };
            let mut rows = Vec::new();
            if let Some(p) = outcome.point() {
                rows.push(vec!["0".into(), point(&p.x), num(p.t), p.case.to_string()]);
            }
            artifacts.push(Artifact::json("renewal.json", &outcome));
            if let Some(st) = &c.steer {
                let seq = steered_sequence(&h, &st.start, st.depth, c.l).map_err(|e| field_err("steer", e.to_string()))?;
                let steps = seq
                    .steps
                    .iter()
                    .enumerate()
                    .map(|(n, s)| {
                        vec![
                            n.to_string(),
                            point(&s.s),
                            num(s.tau),
                            s.kappa.as_ref().map_or(String::new(), |k| point(k)),
                            s.cases.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";"),
                        ]
                    })
                    .collect();
                artifacts.push(Artifact::csv("steered.csv", &["n", "s", "tau", "kappa", "cases"], steps));
                artifacts.push(Artifact::json("steered.json", &seq));
            }
            artifacts.push(Artifact::csv("renewal.csv", &["index", "x", "t", "case"], rows));
            Ok(CommandOutput { artifacts, censoring, inputs: input.into_iter().collect() })
        }
        Command::Walk(c) => {
            let dist = c.law.build("law")?;
            let run = simulate_walk(&dist, c.start, c.n_steps, c.seed);
            let rows = (0..run.s.len())
                .map(|n| vec![n.to_string(), run.s[n].to_string(), run.s_plus[n].to_string(), num(run.t[n])])
                .collect();
            Ok(CommandOutput {
                artifacts: vec![
                    Artifact::csv("walk.csv", &["n", "s", "s_plus", "t"], rows),
                    Artifact::json("walk.json", json!({ "mu": dist.mu(), "nu": dist.nu(), "beta_bar": dist.beta_bar() })),
                ],
                censoring: Value::Null,
                inputs: Vec::new(),
            })
        }
        Command::Estimate(e) => estimate(e),
        Command::Render(c) => {
            let (h, input) = c.system.load()?;
            let body = render_svg(&h, &c.diagram)?;
            Ok(CommandOutput {
                artifacts: vec![Artifact::Svg { name: "diagram.svg".into(), body }],
                censoring: Value::Null,
                inputs: input.into_iter().collect(),
            })
        }
    }
}

/// Paths (with classes) and auxiliary answers of one path query.
pub struct PathAnswer {
    pub paths: Vec<InfectionPath>,
    pub classes: Vec<PathClass>,
    pub sites: Option<Vec<usize>>,
    pub death_time: Option<DeathTime>,
    pub repairs: Option<Vec<f64>>,
}

impl PathAnswer {
    fn to_json(&self, h: &AugmentedHarrisSystem) -> Value {
        let w = h.window();
        json!({
            "paths": self.paths.iter().map(|p| p.to_document(w)).collect::<Vec<_>>(),
            "classes": self.classes,
            "sites": self.sites.as_ref().map(|v| v.iter().map(|&i| w.point(i)).collect::<Vec<Point>>()),
            "death_time": self.death_time.map(|d| d.finite()),
            "censored": self.death_time.map(|d| d.is_censored()),
            "repair_times": self.repairs,
        })
    }
}

pub fn run_path_query(h: &AugmentedHarrisSystem, q: &PathQuery) -> std::result::Result<PathAnswer, String> {
    let w = h.window();
    let idx = |p: &Point| w.index(p).ok_or_else(|| format!("site {p:?} is not in the window"));
    let mut ans = PathAnswer { paths: Vec::new(), classes: Vec::new(), sites: None, death_time: None, repairs: None };
    let e = |x: mtcp_core::paths::PathError| x.to_string();
    match q {
        PathQuery::Reachable { from, s, to, t, mode } => {
            let target = match to {
                Some(y) => Anchor::Point(idx(y)?, *t),
                None => Anchor::Level(*t),
            };
            ans.paths.extend(reachable(h, &Anchor::Point(idx(from)?, *s), &target, *mode).map_err(e)?);
        }
        PathQuery::Enumerate { from, s, to, t, mode, cap } => {
            ans.paths = enumerate_paths(h, &Anchor::Point(idx(from)?, *s), &Anchor::Point(idx(to)?, *t), *mode, *cap).map_err(e)?;
        }
        PathQuery::Fbip { s, x, t } => {
            if let Some((p, tr)) = find_fbip(h, *s, idx(x)?, *t).map_err(e)? {
                ans.paths.push(p);
                ans.repairs = Some(tr.violations);
            }
        }
        PathQuery::Rfbip { x, s, t } => {
            if let Some((p, tr)) = find_rfbip(h, idx(x)?, *s, *t).map_err(e)? {
                ans.paths.push(p);
                ans.repairs = Some(tr.violations);
            }
        }
        PathQuery::ReachSet { from, s, t, mode } => {
            let src = match from {
                Some(x) => Anchor::Point(idx(x)?, *s),
                None => Anchor::Level(*s),
            };
            let r = reach_set(h, &src, *t, *mode).map_err(e)?;
            ans.sites = Some((0..r.len()).filter(|&i| r[i]).collect());
        }
        PathQuery::FsipReach { sources, s, t } => {
            let src = sources.iter().map(idx).collect::<std::result::Result<Vec<_>, _>>()?;
            let r = fsip_reach_set(h, &src, *s, *t).map_err(e)?;
            ans.sites = Some((0..r.len()).filter(|&i| r[i]).collect());
        }
        PathQuery::DeathTime { sites, s } => {
            let src = sites.iter().map(idx).collect::<std::result::Result<Vec<_>, _>>()?;
            ans.death_time = Some(death_time_from(h, &src, *s).map_err(e)?);
        }
    }
    ans.classes = ans.paths.iter().map(|p| classify(h, p)).collect::<std::result::Result<_, _>>().map_err(e)?;
    Ok(ans)
}

fn prop_cells(p: &Proportion) -> Vec<String> {
    vec![p.successes.to_string(), p.trials.to_string(), num(p.p_hat), num(p.lo), num(p.hi)]
}

fn est_err(e: impl ToString) -> ConfigError {
    field_err("estimator", e.to_string())
}

fn out(artifacts: Vec<Artifact>, censoring: Value) -> Result<CommandOutput> {
    Ok(CommandOutput { artifacts, censoring, inputs: Vec::new() })
}

fn summary(value: impl Serialize) -> Artifact {
    Artifact::json("estimate.json", value)
}

fn estimate(cfg: &EstimateConfig) -> Result<CommandOutput> {
    const PROP: [&str; 5] = ["successes", "trials", "p_hat", "lo", "hi"];
    let with = |lead: &[&str]| -> Vec<String> { lead.iter().chain(PROP.iter()).map(|s| s.to_string()).collect() };
    match cfg {
        EstimateConfig::LambdaC(c) => {
            let r = estimate_lambda_c(c).map_err(est_err)?;
            let mut rows = Vec::new();
            let mut boundary = 0;
            for (k, round) in r.rounds.iter().enumerate() {
                for curve in &round.curves {
                    for (i, l) in curve.lambdas.iter().enumerate() {
                        let mut row = vec![k.to_string(), num(curve.horizon), num(*l)];
                        row.extend(prop_cells(&curve.freq[i]));
                        row.push(curve.boundary[i].to_string());
                        boundary += curve.boundary[i];
                        rows.push(row);
                    }
                }
            }
            let mut header = with(&["round", "horizon", "lambda"]);
            header.push("boundary".into());
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            out(
                vec![Artifact::csv("estimate.csv", &header, rows), summary(&r)],
                json!({ "boundary_runs": boundary }),
            )
        }
        EstimateConfig::Survival(c) => {
            let (s, cone) = estimate_survival_and_cone(&c.survival, c.quantile).map_err(est_err)?;
            let mut rows = Vec::new();
            for (k, h) in s.horizons.iter().enumerate() {
                let mut row = vec![num(*h), "1".into()];
                row.extend(prop_cells(&s.s1[k]));
                rows.push(row);
                if let Some(s2) = &s.s2 {
                    let mut row = vec![num(*h), "2".into()];
                    row.extend(prop_cells(&s2[k]));
                    rows.push(row);
                }
            }
            let header = with(&["horizon", "type"]);
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            let slopes = cone.slopes.iter().enumerate().map(|(i, v)| vec![i.to_string(), num(*v)]).collect();
            out(
                vec![
                    Artifact::csv("estimate.csv", &header, rows),
                    Artifact::csv("cone.csv", &["survivor", "slope"], slopes),
                    summary(json!({ "survival": s, "cone": cone })),
                ],
                serde_json::to_value(&s.censoring).expect("json"),
            )
        }
        EstimateConfig::SymmetricContrast(c) => {
            let r = symmetric_contrast(c).map_err(est_err)?;
            let mut rows = Vec::new();
            for (name, arm) in [("symmetric", &r.symmetric), ("asymmetric", &r.asymmetric)] {
                for (h, p) in arm.horizons.iter().zip(&arm.freq) {
                    let mut row = vec![name.into(), num(*h)];
                    row.extend(prop_cells(p));
                    rows.push(row);
                }
            }
            let header = with(&["arm", "horizon"]);
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            out(vec![Artifact::csv("estimate.csv", &header, rows), summary(&r)], Value::Null)
        }
        EstimateConfig::CompleteConvergence(c) => {
            let r = complete_convergence_check(c).map_err(est_err)?;
            let direct = r.direct.probabilities();
            let m1 = r.mu1.as_ref().map(|m| m.probabilities());
            let m2 = r.mu2.as_ref().map(|m| m.probabilities());
            let opt = |v: &Option<Vec<f64>>, i: usize| v.as_ref().map_or(String::new(), |v| num(v[i]));
            let rows = (0..direct.len())
                .map(|i| vec![i.to_string(), num(direct[i]), opt(&m1, i), opt(&m2, i), num(r.mixture[i])])
                .collect();
            out(vec![Artifact::csv("estimate.csv", &["cell", "direct", "mu1", "mu2", "mixture"], rows), summary(&r)], Value::Null)
        }
        EstimateConfig::Neuhauser(c) => {
            let r = neuhauser_check(&c.params, c.p1, c.p2, &c.sites, c.n_runs, c.seed).map_err(est_err)?;
            let (a, b) = (r.direct.probabilities(), r.mu1.probabilities());
            let rows = (0..a.len()).map(|i| vec![i.to_string(), num(a[i]), num(b[i])]).collect();
            out(vec![Artifact::csv("estimate.csv", &["cell", "direct", "mu1"], rows), summary(&r)], Value::Null)
        }
        EstimateConfig::BoundFit(c) => {
            let r = bound_fit(c).map_err(est_err)?;
            let rows = r
                .curve
                .iter()
                .map(|p| {
                    let mut row = vec![num(p.x), num(p.t)];
                    row.extend(prop_cells(&p.freq));
                    row
                })
                .collect();
            let header = with(&["x", "t"]);
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            out(vec![Artifact::csv("estimate.csv", &header, rows), summary(&r)], Value::Null)
        }
        EstimateConfig::DriftScan(c) => {
            let r = drift_scan(c).map_err(est_err)?;
            let rows = r
                .rows
                .iter()
                .map(|d| {
                    vec![
                        d.l.to_string(),
                        d.runs.to_string(),
                        d.in_a.to_string(),
                        d.pair_extinct.to_string(),
                        d.boundary.to_string(),
                        num(d.mean.mean),
                        num(d.mean.lo),
                        num(d.mean.hi),
                    ]
                })
                .collect();
            let boundary: u64 = r.rows.iter().map(|d| d.boundary).sum();
            out(
                vec![
                    Artifact::csv("estimate.csv", &["l", "runs", "in_a", "pair_extinct", "boundary", "mean", "lo", "hi"], rows),
                    summary(&r),
                ],
                json!({ "boundary_runs": boundary }),
            )
        }
        EstimateConfig::RenewalDrift(c) => {
            let r = renewal_drift(c).map_err(est_err)?;
            let rows = r.points.iter().enumerate().map(|(i, (x, t))| vec![i.to_string(), point(x), num(*t)]).collect();
            out(
                vec![Artifact::csv("estimate.csv", &["index", "x", "t"], rows), summary(&r)],
                json!({ "survivors": r.survivors, "found": r.found, "censored": r.censored }),
            )
        }
        EstimateConfig::InvariantAudit(c) => {
            let r = invariant_audit(c).map_err(est_err)?;
            let rows = r
                .items
                .iter()
                .map(|i| vec![i.name.clone(), i.checks.to_string(), i.violations.to_string(), i.passed.to_string(), i.detail.clone()])
                .collect();
            out(
                vec![Artifact::csv("estimate.csv", &["item", "checks", "violations", "passed", "detail"], rows), summary(&r)],
                Value::Null,
            )
        }
        EstimateConfig::Overshoot(c) => {
            let dist = c.law.build("law")?;
            let r = overshoot_bound_check(&dist, c.ell, c.x, c.n_runs, c.seed).map_err(est_err)?;
            let rows = vec![vec![num(r.lhs), num(r.lhs_se), num(r.rhs), num(r.tail_sum), r.pass.to_string()]];
            out(vec![Artifact::csv("estimate.csv", &["lhs", "lhs_se", "rhs", "tail_sum", "pass"], rows), summary(&r)], Value::Null)
        }
        EstimateConfig::ConeExperiment(c) => {
            let dist = c.law.build("law")?;
            let r = cone_experiment(&dist, c.beta, c.ell, c.t, c.n_runs, c.x0, c.seed).map_err(|e| field_err("beta", e.to_string()))?;
            let mut row = prop_cells(&r.freq);
            row.extend([num(r.beta_bar), r.in_cone.to_string()]);
            let mut header = PROP.to_vec();
            header.extend(["beta_bar", "in_cone"]);
            out(vec![Artifact::csv("estimate.csv", &header, vec![row]), summary(&r)], Value::Null)
        }
        EstimateConfig::BoxChain(c) => {
            let r = box_chain(c.ell, c.t).map_err(est_err)?;
            let rows = r
                .boxes
                .iter()
                .enumerate()
                .map(|(i, b)| vec![(i + 1).to_string(), num(b.half_width), num(b.t_lo), num(b.t_hi)])
                .collect();
            out(vec![Artifact::csv("estimate.csv", &["box", "half_width", "t_lo", "t_hi"], rows), summary(&r)], Value::Null)
        }
        EstimateConfig::Concentration(c) => {
            let dist = c.law.build("law")?;
            let r = concentration(&dist, c.eps, &c.ns, c.n_runs, c.seed);
            let rows = r
                .ns
                .iter()
                .zip(&r.inside)
                .map(|(n, p)| {
                    let mut row = vec![n.to_string()];
                    row.extend(prop_cells(p));
                    row
                })
                .collect();
            let header = with(&["n"]);
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            out(vec![Artifact::csv("estimate.csv", &header, rows), summary(&r)], Value::Null)
        }
    }
}
