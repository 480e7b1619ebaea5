//! Deterministic SVG diagrams of one-dimensional Harris systems: sites as
//! columns, time upward, layers drawn in the declared order.

use std::fmt::Write;

use mtcp_core::ancestor::{ancestor_track, find_bifurcations};
use mtcp_core::paths::{classify, enumerate_paths, Anchor, InfectionPath, Mode, DEFAULT_EVENT_CAP};
use mtcp_core::process::evolve;
use mtcp_core::{AugmentedHarrisSystem, EventKind};

use crate::commands::run_path_query;
use crate::config::{field_err, ConfigError, DiagramSpec};

const LEFT: f64 = 56.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 40.0;

struct Frame {
    t1: f64,
    a: i64,
    cw: f64,
    ts: f64,
}

impl Frame {
    fn x(&self, site: f64) -> f64 {
        LEFT + (site - self.a as f64 + 0.5) * self.cw
    }
    fn y(&self, t: f64) -> f64 {
        TOP + (self.t1 - t) * self.ts
    }
}

fn f(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn coord(h: &AugmentedHarrisSystem, site: usize) -> f64 {
    h.window().point(site)[0] as f64
}

fn tick_step(span: f64) -> f64 {
    let mut step = 1.0;
    while span / step > 20.0 {
        step *= if (step.log10().fract()).abs() < 1e-9 { 2.0 } else { 2.5 };
    }
    while span / step < 4.0 && step > 1e-3 {
        step /= 2.0;
    }
    step
}

fn polyline(h: &AugmentedHarrisSystem, fr: &Frame, p: &InfectionPath) -> String {
    let mut pts = Vec::new();
    let mut site = p.origin;
    pts.push((fr.x(coord(h, site)), fr.y(p.start)));
    for j in &p.jumps {
        pts.push((fr.x(coord(h, site)), fr.y(j.time)));
        site = j.to;
        pts.push((fr.x(coord(h, site)), fr.y(j.time)));
    }
    pts.push((fr.x(coord(h, site)), fr.y(p.end)));
    pts.iter().map(|(x, y)| format!("{},{}", f(*x), f(*y))).collect::<Vec<_>>().join(" ")
}

pub fn render_svg(h: &AugmentedHarrisSystem, spec: &DiagramSpec) -> Result<String, ConfigError> {
    spec.validate(h)?;
    let [t0, t1] = spec.times;
    let [a, b] = spec.sites;
    let fr = Frame { t1, a, cw: spec.column_width, ts: spec.time_scale };
    let ncol = (b - a + 1) as f64;
    let width = LEFT + ncol * fr.cw + RIGHT;
    let height = TOP + (t1 - t0) * fr.ts + BOTTOM;
    let in_sites = |site: usize| {
        let c = coord(h, site) as i64;
        a <= c && c <= b
    };

    let mut s = String::new();
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">",
        f(width),
        f(height),
        f(width),
        f(height)
    )
    .unwrap();
    s.push_str("<defs>\n");
    s.push_str("<marker id=\"head\" markerWidth=\"8\" markerHeight=\"6\" refX=\"7\" refY=\"3\" orient=\"auto\"><path d=\"M0,0 L8,3 L0,6 z\" fill=\"#000000\"/></marker>\n");
    s.push_str("<marker id=\"head-sel\" markerWidth=\"8\" markerHeight=\"6\" refX=\"7\" refY=\"3\" orient=\"auto\"><path d=\"M0,0 L8,3 L0,6 z\" fill=\"#2ca02c\"/></marker>\n");
    writeln!(
        s,
        "<clipPath id=\"plot\"><rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\"/></clipPath>",
        f(LEFT),
        f(TOP),
        f(ncol * fr.cw),
        f((t1 - t0) * fr.ts)
    )
    .unwrap();
    s.push_str("</defs>\n");

    // axes
    s.push_str("<g id=\"axes\" stroke=\"#999999\" stroke-width=\"0.5\" font-family=\"sans-serif\" font-size=\"10\">\n");
    let ax = LEFT - 8.0;
    writeln!(s, "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#000000\"/>", f(ax), f(fr.y(t0)), f(ax), f(fr.y(t1))).unwrap();
    let step = tick_step(t1 - t0);
    let mut k = (t0 / step).ceil() as i64;
    while k as f64 * step <= t1 + 1e-9 {
        let t = k as f64 * step;
        let y = fr.y(t);
        writeln!(s, "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#000000\"/>", f(ax - 4.0), f(y), f(ax), f(y)).unwrap();
        writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" stroke=\"none\">{}</text>", f(ax - 6.0), f(y + 3.0), t).unwrap();
        k += 1;
    }
    for c in a..=b {
        let x = fr.x(c as f64);
        writeln!(s, "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/>", f(x), f(fr.y(t0)), f(x), f(fr.y(t1))).unwrap();
        writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" stroke=\"none\">{}</text>", f(x), f(fr.y(t0) + 14.0), c).unwrap();
    }
    writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" stroke=\"none\">site</text>", f(LEFT + ncol * fr.cw / 2.0), f(height - 6.0)).unwrap();
    s.push_str("</g>\n");

    let events: Vec<_> = h
        .events()
        .iter()
        .filter(|e| e.time >= t0 && e.time <= t1)
        .filter(|e| in_sites(e.from as usize) || in_sites(e.to as usize))
        .collect();

    for layer in &spec.layers {
        writeln!(s, "<g id=\"layer-{layer}\" clip-path=\"url(#plot)\">").unwrap();
        match layer.as_str() {
            "deaths" => {
                for e in events.iter().filter(|e| e.kind == EventKind::Death) {
                    let (x, y) = (fr.x(coord(h, e.from as usize)), fr.y(e.time));
                    writeln!(
                        s,
                        "<path class=\"death\" d=\"M{},{} L{},{} M{},{} L{},{}\" stroke=\"#d62728\" stroke-width=\"1.5\"/>",
                        f(x - 4.0),
                        f(y - 4.0),
                        f(x + 4.0),
                        f(y + 4.0),
                        f(x - 4.0),
                        f(y + 4.0),
                        f(x + 4.0),
                        f(y - 4.0)
                    )
                    .unwrap();
                }
            }
            "arrows" | "selective-arrows" => {
                let (kind, class, extra) = if layer == "arrows" {
                    (EventKind::Arrow, "arrow", "stroke=\"#000000\" marker-end=\"url(#head)\"")
                } else {
                    (EventKind::Selective, "selective", "stroke=\"#2ca02c\" stroke-dasharray=\"4 3\" marker-end=\"url(#head-sel)\"")
                };
                for e in events.iter().filter(|e| e.kind == kind) {
                    let y = fr.y(e.time);
                    writeln!(
                        s,
                        "<line class=\"{class}\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke-width=\"1\" {extra}/>",
                        f(fr.x(coord(h, e.from as usize))),
                        f(y),
                        f(fr.x(coord(h, e.to as usize))),
                        f(y)
                    )
                    .unwrap();
                }
            }
            "trajectory" => {
                let xi0 = spec.initial.as_ref().expect("validated").build(h.window(), h.seed()).map_err(|e| field_err("diagram.initial", e.to_string()))?;
                let tr = evolve(&xi0, h, t1).map_err(|e| field_err("diagram.initial", e.to_string()))?;
                let n = h.n_sites();
                let mut state: Vec<u8> = xi0.states().to_vec();
                let mut since = vec![0.0; n];
                let mut bars = Vec::new();
                for t in &tr.log {
                    let i = t.site as usize;
                    bars.push((i, state[i], since[i], t.time));
                    state[i] = t.new;
                    since[i] = t.time;
                }
                for i in 0..n {
                    bars.push((i, state[i], since[i], t1));
                }
                bars.sort_by(|p, q| p.0.cmp(&q.0).then(p.2.total_cmp(&q.2)));
                for (i, v, lo, hi) in bars {
                    if v == 0 || !in_sites(i) || hi < t0 {
                        continue;
                    }
                    let (lo, hi) = (lo.max(t0), hi.min(t1));
                    let fill = if v == 1 { "#d62728" } else { "#1f77b4" };
                    writeln!(
                        s,
                        "<rect class=\"occ{v}\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{fill}\" fill-opacity=\"0.45\"/>",
                        f(fr.x(coord(h, i)) - fr.cw * 0.12),
                        f(fr.y(hi)),
                        f(fr.cw * 0.24),
                        f((hi - lo) * fr.ts)
                    )
                    .unwrap();
                }
            }
            "paths" => {
                for (k, q) in spec.paths.iter().enumerate() {
                    let found = run_path_query(h, q).map_err(|e| field_err(&format!("diagram.paths[{k}]"), e))?;
                    for p in found.paths {
                        let basic = classify(h, &p).map(|c| c.is_bip).unwrap_or(false);
                        let dash = if basic { "" } else { " stroke-dasharray=\"8 4\"" };
                        let class = if basic { "path basic" } else { "path selective" };
                        writeln!(
                            s,
                            "<polyline class=\"{class}\" id=\"path-{k}\" points=\"{}\" fill=\"none\" stroke=\"#000000\" stroke-width=\"3\"{dash}/>",
                            polyline(h, &fr, &p)
                        )
                        .unwrap();
                    }
                }
            }
            "ancestor" => {
                let an = spec.ancestor.as_ref().expect("validated");
                let x = h.window().index(&an.x).expect("validated");
                let track = ancestor_track(h, x, an.s, t1).map_err(|e| field_err("diagram.ancestor", e.to_string()))?;
                let mut d = String::new();
                let bp = &track.breakpoints;
                for (k, &(t, v)) in bp.iter().enumerate() {
                    let Some(site) = v else { break };
                    let end = bp.get(k + 1).map_or(track.end, |p| p.0);
                    let xx = fr.x(coord(h, site));
                    write!(d, "{}{},{} L{},{} ", if k == 0 { "M" } else { "L" }, f(xx), f(fr.y(t)), f(xx), f(fr.y(end))).unwrap();
                }
                writeln!(s, "<path class=\"ancestor\" d=\"{}\" fill=\"none\" stroke=\"#ff7f0e\" stroke-width=\"2.5\"/>", d.trim_end()).unwrap();
                if let Some(l) = an.bifurcation_l {
                    draw_bifurcations(&mut s, h, &fr, l)?;
                }
            }
            "boxes" => {
                for (k, bx) in spec.boxes.iter().enumerate() {
                    let (c, hw) = (bx.center as f64, bx.half_width);
                    let x0 = fr.x(c - hw) - fr.cw / 2.0;
                    writeln!(
                        s,
                        "<rect class=\"box\" id=\"box-{k}\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#9467bd\" stroke-width=\"1.5\"/>",
                        f(x0),
                        f(fr.y(bx.t_hi)),
                        f((2.0 * hw + 1.0) * fr.cw),
                        f((bx.t_hi - bx.t_lo) * fr.ts)
                    )
                    .unwrap();
                }
            }
            _ => unreachable!("validated"),
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// One element per bifurcation condition, ids `bif{k}-c1` … `bif{k}-c7`.
fn draw_bifurcations(s: &mut String, h: &AugmentedHarrisSystem, fr: &Frame, l: i64) -> Result<(), ConfigError> {
    let bifs = find_bifurcations(h, l).map_err(|e| field_err("diagram.ancestor.bifurcation_l", e.to_string()))?;
    let w = h.window();
    let rect = |s: &mut String, id: &str, class: &str, lo: f64, hi: f64, t_lo: f64, t_hi: f64, color: &str| {
        writeln!(
            s,
            "<rect id=\"{id}\" class=\"{class}\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{color}\" fill-opacity=\"0.12\" stroke=\"{color}\" stroke-dasharray=\"2 2\"/>",
            f(fr.x(lo) - fr.cw * 0.45),
            f(fr.y(t_hi)),
            f((hi - lo) * fr.cw + fr.cw * 0.9),
            f((t_hi - t_lo) * fr.ts)
        )
        .unwrap();
    };
    for (k, b) in bifs.iter().enumerate() {
        let (t, y) = (b.time, b.pivot[0] as f64);
        writeln!(s, "<g class=\"bifurcation\" id=\"bif{k}\">").unwrap();
        rect(s, &format!("bif{k}-c1"), "no-deaths", y - 1.0, y + 1.0, t - 3.0, t - 1.0, "#17becf");
        let death = h.deaths_in(b.pivot_site, t - 1.0, t).first().copied().unwrap_or(t);
        writeln!(
            s,
            "<circle id=\"bif{k}-c2\" class=\"pivot-death\" cx=\"{}\" cy=\"{}\" r=\"7\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\"/>",
            f(fr.x(y)),
            f(fr.y(death))
        )
        .unwrap();
        writeln!(
            s,
            "<g id=\"bif{k}-c3\" class=\"exit-arrows\" stroke=\"#e377c2\" stroke-width=\"3\"><line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/><line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/></g>",
            f(fr.x(y)),
            f(fr.y(b.t_minus)),
            f(fr.x(y - 1.0)),
            f(fr.y(b.t_minus)),
            f(fr.x(y)),
            f(fr.y(b.t_plus)),
            f(fr.x(y + 1.0)),
            f(fr.y(b.t_plus))
        )
        .unwrap();
        rect(s, &format!("bif{k}-c4"), "no-arrows-pivot", y, y, t - 2.0, t, "#bcbd22");
        writeln!(s, "<g id=\"bif{k}-c5\" class=\"no-arrows-neighbours\">").unwrap();
        rect(s, &format!("bif{k}-c5-minus"), "no-arrows-neighbour", y - 1.0, y - 1.0, t - 3.0, t - 1.0, "#8c564b");
        rect(s, &format!("bif{k}-c5-plus"), "no-arrows-neighbour", y + 1.0, y + 1.0, t - 3.0, t - 1.0, "#8c564b");
        s.push_str("</g>\n");
        for (c, from, to) in [(6, y - 1.0, y - l as f64), (7, y + 1.0, y + l as f64)] {
            let src = w.index(&[from as i64]);
            let dst = w.index(&[to as i64]);
            let path = match (src, dst) {
                (Some(a), Some(z)) => {
                    enumerate_paths(h, &Anchor::Point(a, t - 1.0), &Anchor::Point(z, t), Mode::Basic, DEFAULT_EVENT_CAP)
                        .map_err(|e| field_err("diagram.ancestor.bifurcation_l", e.to_string()))?
                        .into_iter()
                        .next()
                }
                _ => None,
            };
            if let Some(p) = path {
                writeln!(
                    s,
                    "<polyline id=\"bif{k}-c{c}\" class=\"single-path\" points=\"{}\" fill=\"none\" stroke=\"#7f7f7f\" stroke-width=\"2.5\"/>",
                    polyline(h, fr, &p)
                )
                .unwrap();
            }
        }
        s.push_str("</g>\n");
    }
    Ok(())
}
