//! Static SVG heatmap of a results file.

use std::fmt::Write as _;

use unlearn_core::results::ResultRow;
use unlearn_core::theory::{efficient_threshold, inefficient_boundary, trivial_boundary};
use unlearn_core::{make_problem, ForgetSplit, RegimeParams};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ValueColumn {
    Ratio,
    TScratchMean,
    TUnlearnMean,
}

impl ValueColumn {
    fn pick(self, r: &ResultRow) -> f64 {
        match self {
            Self::Ratio => r.cell.ratio,
            Self::TScratchMean => r.cell.t_scratch_mean,
            Self::TUnlearnMean => r.cell.t_unlearn_mean,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Self::Ratio => "unlearning / retraining time",
            Self::TScratchMean => "mean retraining time",
            Self::TUnlearnMean => "mean unlearning time",
        }
    }
}

const LEFT: f64 = 80.0;
const TOP: f64 = 30.0;
const PLOT_W: f64 = 520.0;
const PLOT_H: f64 = 420.0;
const BAR_X: f64 = LEFT + PLOT_W + 40.0;
const WIDTH: f64 = BAR_X + 110.0;
const HEIGHT: f64 = TOP + PLOT_H + 60.0;

// Five-stop approximation of viridis.
const STOPS: [(f64, f64, f64); 5] =
    [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];

fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let c = |x: f64, y: f64| (x + f * (y - x)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(a.0, b.0), c(a.1, b.1), c(a.2, b.2))
}

/// Log-scale color range over the positive finite values.
fn value_range(values: &[f64]) -> (f64, f64) {
    let pos = values.iter().copied().filter(|v| *v > 0.0 && v.is_finite());
    let (lo, hi) = pos.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.1, 10.0);
    }
    let (lo, hi) = (lo.log10().floor(), hi.log10().ceil());
    if hi > lo {
        (10f64.powf(lo), 10f64.powf(hi))
    } else {
        (10f64.powf(lo - 1.0), 10f64.powf(lo + 1.0))
    }
}

fn color(v: f64, (lo, hi): (f64, f64)) -> String {
    if v.is_nan() {
        "#bbbbbb".into()
    } else if v <= 0.0 {
        "#ffffff".into()
    } else if v.is_infinite() {
        "#000000".into()
    } else {
        ramp((v.log10() - lo.log10()) / (hi.log10() - lo.log10()))
    }
}

fn uniq_sorted(mut xs: Vec<f64>) -> Vec<f64> {
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

/// Renders the heatmap. `e` runs up the y axis and `kdp` along the x axis,
/// both on log scales with one cell per grid point.
pub fn render_svg(rows: &[ResultRow], value: ValueColumn, overlay_theory: bool) -> Result<String, CliError> {
    if rows.is_empty() {
        return Err(CliError::Usage("results file has no data rows".into()));
    }
    let es = uniq_sorted(rows.iter().map(|r| r.cell.e).collect());
    let ks = uniq_sorted(rows.iter().map(|r| r.cell.kdp).collect());
    if es.iter().chain(&ks).any(|v| !(*v > 0.0)) {
        return Err(CliError::Usage("e and kdp must be positive for log axes".into()));
    }
    let (nx, ny) = (ks.len() as f64, es.len() as f64);
    let (cw, ch) = (PLOT_W / nx, PLOT_H / ny);
    let (lk0, lk1) = (ks[0].log10(), ks[ks.len() - 1].log10());
    let (le0, le1) = (es[0].log10(), es[es.len() - 1].log10());
    // cell centers sit on grid points, so the axes extend half a cell past them
    let x_of = |k: f64| {
        if ks.len() == 1 {
            return LEFT + PLOT_W / 2.0;
        }
        LEFT + cw / 2.0 + (k.log10() - lk0) / (lk1 - lk0) * (PLOT_W - cw)
    };
    let y_of = |e: f64| {
        if es.len() == 1 {
            return TOP + PLOT_H / 2.0;
        }
        TOP + PLOT_H - ch / 2.0 - (e.log10() - le0) / (le1 - le0) * (PLOT_H - ch)
    };
    let values: Vec<f64> = rows.iter().map(|r| value.pick(r)).collect();
    let range = value_range(&values);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r##"<defs><pattern id="hatch" patternUnits="userSpaceOnUse" width="6" height="6" patternTransform="rotate(45)"><line x1="0" y1="0" x2="0" y2="6" stroke="#d62728" stroke-width="1.5"/></pattern><clipPath id="plot-area"><rect x="{LEFT}" y="{TOP}" width="{PLOT_W}" height="{PLOT_H}"/></clipPath></defs>"##
    );
    let _ = writeln!(s, r#"<g id="cells">"#);
    for (r, &v) in rows.iter().zip(&values) {
        let (x, y) = (x_of(r.cell.kdp) - cw / 2.0, y_of(r.cell.e) - ch / 2.0);
        let _ = writeln!(
            s,
            r#"<rect class="cell" x="{x:.2}" y="{y:.2}" width="{cw:.2}" height="{ch:.2}" fill="{}" data-e="{:e}" data-kdp="{:e}" data-value="{v:e}"/>"#,
            color(v, range),
            r.cell.e,
            r.cell.kdp
        );
        if r.cell.is_censored() || r.cell.invalid {
            let _ = writeln!(
                s,
                r#"<rect class="censored" x="{x:.2}" y="{y:.2}" width="{cw:.2}" height="{ch:.2}" fill="url(#hatch)"/>"#
            );
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{PLOT_W}" height="{PLOT_H}" fill="none" stroke="#333"/>"##
    );

    // axis ticks on grid points, thinned to at most ~7 labels
    let step = |n: usize| n.div_ceil(7).max(1);
    for &k in ks.iter().step_by(step(ks.len())) {
        let x = x_of(k);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{k:.2e}</text>"#, TOP + PLOT_H + 16.0);
    }
    for &e in es.iter().step_by(step(es.len())) {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{e:.2e}</text>"#, LEFT - 6.0, y_of(e) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">kdp (log scale)</text>"#, LEFT + PLOT_W / 2.0, HEIGHT - 14.0);
    let _ = writeln!(
        s,
        r#"<text transform="translate(16,{:.2}) rotate(-90)" text-anchor="middle">excess risk e (log scale)</text>"#,
        TOP + PLOT_H / 2.0
    );

    // color bar
    let _ = writeln!(s, r#"<g id="colorbar">"#);
    let n_bar = 40;
    let bh = PLOT_H / n_bar as f64;
    for i in 0..n_bar {
        let t = (i as f64 + 0.5) / n_bar as f64;
        let y = TOP + PLOT_H - (i + 1) as f64 * bh;
        let _ = writeln!(s, r#"<rect x="{BAR_X}" y="{y:.2}" width="18" height="{:.2}" fill="{}"/>"#, bh + 0.5, ramp(t));
    }
    let (lo, hi) = range;
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{hi:.0e}</text>"#, BAR_X + 24.0, TOP + 8.0);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{lo:.0e}</text>"#, BAR_X + 24.0, TOP + PLOT_H);
    let _ = writeln!(
        s,
        r##"<rect x="{BAR_X}" y="{:.2}" width="18" height="12" fill="#ffffff" stroke="#333"/><text x="{:.2}" y="{:.2}">0</text>"##,
        TOP + PLOT_H + 8.0,
        BAR_X + 24.0,
        TOP + PLOT_H + 18.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate({:.2},{:.2}) rotate(90)" text-anchor="middle">{}</text>"#,
        BAR_X + 64.0,
        TOP + PLOT_H / 2.0,
        value.label()
    );
    let _ = writeln!(s, "</g>");

    if overlay_theory {
        overlay(&mut s, &rows[0], &ks, &x_of, &y_of, (le0, le1))?;
    }
    let _ = writeln!(s, "</svg>");
    Ok(s)
}

fn overlay(
    s: &mut String,
    row: &ResultRow,
    ks: &[f64],
    x_of: &dyn Fn(f64) -> f64,
    y_of: &dyn Fn(f64) -> f64,
    (le0, le1): (f64, f64),
) -> Result<(), CliError> {
    let m = &row.meta;
    let spec = make_problem(m.mu, m.lipschitz, m.dim)?;
    let split = ForgetSplit::new(m.rf)?;
    let params = RegimeParams::default();
    let curves: [(&str, &str, Box<dyn Fn(f64) -> f64>); 3] = [
        ("trivial-boundary", "#ffffff", Box::new(|k| trivial_boundary(&spec, &split, k))),
        ("inefficient-boundary", "#ff7f0e", Box::new(|k| inefficient_boundary(&spec, &split, k, &params))),
        ("efficient-threshold", "#17becf", Box::new(|k| efficient_threshold(&spec, &split, k, &params))),
    ];
    let (k0, k1) = (ks[0].log10(), ks[ks.len() - 1].log10());
    let _ = writeln!(s, r#"<g id="theory" clip-path="url(#plot-area)" fill="none" stroke-width="2">"#);
    for (id, stroke, f) in &curves {
        let mut d = String::new();
        for i in 0..=100 {
            let k = 10f64.powf(k0 + (k1 - k0) * i as f64 / 100.0);
            let e = f(k);
            if !(e > 0.0) {
                continue;
            }
            // keep far-off points finite so the clip path does the cutting
            let e = e.clamp(10f64.powf(le0 - 3.0), 10f64.powf(le1 + 3.0));
            let _ = write!(d, "{}{:.2},{:.2} ", if d.is_empty() { "M" } else { "L" }, x_of(k), y_of(e));
        }
        if !d.is_empty() {
            let _ = writeln!(s, r#"<path class="boundary" id="{id}" stroke="{stroke}" stroke-dasharray="6,3" d="{}"/>"#, d.trim_end());
        }
    }
    let _ = writeln!(s, "</g>");
    Ok(())
}
