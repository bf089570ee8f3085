use std::fmt::Write as _;

use predalign::evalmetrics::{pr_curve, EvalSet, MetricsReport};
use predalign::trainloop::{ExperimentStats, Mode, RunResult, Stat};

pub const METRICS_HEADER: &str = "mode,stat,AP,F1,PR,RR,FAR";
pub const PR_HEADER: &str = "threshold,precision,recall";

fn row(out: &mut String, mode: Mode, stat: &str, v: [f64; 5]) {
    let _ = writeln!(
        out,
        "{},{stat},{:.4},{:.4},{:.4},{:.4},{:.4}",
        mode.name(),
        v[0],
        v[1],
        v[2],
        v[3],
        v[4]
    );
}

fn stat_values(s: [Stat; 5], f: fn(&Stat) -> f64) -> [f64; 5] {
    s.map(|x| f(&x))
}

/// One block per mode in `modes` order: run rows by ascending seed, then AVR
/// and STDERR.
pub fn metrics_csv(runs: &[RunResult], stats: &ExperimentStats, modes: &[Mode]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for &mode in modes {
        let mut rs: Vec<&RunResult> = runs.iter().filter(|r| r.mode == mode).collect();
        rs.sort_by_key(|r| r.seed);
        for r in rs {
            let m: &MetricsReport = &r.metrics;
            row(&mut out, mode, &r.seed.to_string(), [m.ap, m.f1, m.pr, m.rr, m.far]);
        }
        if let Some(s) = stats.get(mode) {
            let all = [s.ap, s.f1, s.pr, s.rr, s.far];
            row(&mut out, mode, "AVR", stat_values(all, |x| x.avr));
            row(&mut out, mode, "STDERR", stat_values(all, |x| x.stderr));
        }
    }
    out
}

/// One row per distinct score, highest threshold first, values at full precision.
pub fn pr_curve_csv(set: &EvalSet) -> String {
    let mut out = String::from(PR_HEADER);
    out.push('\n');
    for (t, p, r) in pr_curve(set) {
        let _ = writeln!(out, "{t},{p},{r}");
    }
    out
}

/// Area under the right-envelope of a curve given as `(precision, recall)`
/// points in order of decreasing threshold.
pub fn envelope_area(points: &[(f64, f64)]) -> f64 {
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(_, r)) in points.iter().enumerate() {
        let best = points[i..].iter().map(|&(p, _)| p).fold(0.0, f64::max);
        area += (r - prev_recall) * best;
        prev_recall = r;
    }
    area
}

const SIZE: f64 = 400.0;
const MARGIN: f64 = 50.0;

/// Self-contained SVG of recall (x) against precision (y) on [0, 1]².
pub fn pr_curve_svg(set: &EvalSet, title: &str) -> String {
    let plot = SIZE - 2.0 * MARGIN;
    let x = |r: f64| MARGIN + r * plot;
    let y = |p: f64| SIZE - MARGIN - p * plot;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot}" height="{plot}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{v:.2}</text>"#,
            x(v),
            SIZE - MARGIN + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{v:.2}</text>"#,
            MARGIN - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">recall</text>"#,
        SIZE / 2.0,
        SIZE - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.1})">precision</text>"#,
        SIZE / 2.0,
        SIZE / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="30" font-size="13" text-anchor="middle">{}</text>"#,
        SIZE / 2.0,
        escape(title)
    );
    let points: Vec<String> = pr_curve(set)
        .iter()
        .map(|&(_, p, r)| format!("{:.2},{:.2}", x(r), y(p)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        points.join(" ")
    );
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
