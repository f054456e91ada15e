//! Minimal SVG output: box charts of uncertainty quartiles and overlaid
//! relative-frequency histograms for correct and incorrect predictions.

use std::fmt::Write;

use uq_core::train::{Histogram, Quartiles};

const CORRECT: &str = "#1f77b4";
const INCORRECT: &str = "#d62728";

fn header(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn legend(out: &mut String, x: f64, y: f64) {
    for (i, (label, color)) in [("correct", CORRECT), ("incorrect", INCORRECT)].iter().enumerate() {
        let yy = y + 14.0 * i as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{color}\" fill-opacity=\"0.6\"/>\
             <text x=\"{:.1}\" y=\"{:.1}\">{label}</text>",
            yy - 9.0,
            x + 14.0,
            yy
        );
    }
}

fn axis_ticks(out: &mut String, x0: f64, y_of: impl Fn(f64) -> f64, top: f64) {
    for k in 0..=4 {
        let v = top * k as f64 / 4.0;
        let y = y_of(v);
        let _ = writeln!(
            out,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{x0:.1}\" y2=\"{y:.1}\" stroke=\"black\"/>\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            x0 - 4.0,
            x0 - 6.0,
            y + 4.0,
            format_tick(v)
        );
    }
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 0.01 {
        format!("{v:.3}")
    } else {
        format!("{v:.1e}")
    }
}

/// One pair of boxes (correct, incorrect) per group.
pub fn box_chart(title: &str, groups: &[(String, Option<Quartiles>, Option<Quartiles>)]) -> String {
    let (w, h) = (120.0 + 140.0 * groups.len() as f64, 340.0);
    let (x0, y0, y1) = (70.0, 40.0, 290.0);
    let top = groups
        .iter()
        .flat_map(|(_, a, b)| [a, b])
        .filter_map(|q| q.map(|q| q.max))
        .fold(0.0, f64::max);
    let top = if top > 0.0 { top * 1.05 } else { 1.0 };
    let y_of = |v: f64| y1 - (v / top) * (y1 - y0);
    let mut out = header(w, h);
    let _ = writeln!(out, "<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{}</text>", w / 2.0, escape(title));
    let _ = writeln!(out, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
    let _ = writeln!(out, "<line x1=\"{x0}\" y1=\"{y1}\" x2=\"{:.1}\" y2=\"{y1}\" stroke=\"black\"/>", w - 20.0);
    axis_ticks(&mut out, x0, y_of, top);
    for (i, (label, good, bad)) in groups.iter().enumerate() {
        let cx = x0 + 70.0 + 140.0 * i as f64;
        for (q, dx, color) in [(good, -25.0, CORRECT), (bad, 25.0, INCORRECT)] {
            let Some(q) = q else { continue };
            let x = cx + dx;
            let _ = writeln!(
                out,
                "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"{color}\"/>\n\
                 <rect x=\"{:.1}\" y=\"{:.1}\" width=\"30\" height=\"{:.1}\" fill=\"{color}\" fill-opacity=\"0.6\" stroke=\"{color}\"/>\n\
                 <line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\" stroke-width=\"2\"/>",
                y_of(q.min),
                y_of(q.max),
                x - 15.0,
                y_of(q.q3),
                (y_of(q.q1) - y_of(q.q3)).max(0.5),
                x - 15.0,
                y_of(q.median),
                x + 15.0,
                y_of(q.median)
            );
        }
        let _ = writeln!(out, "<text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", y1 + 18.0, escape(label));
    }
    legend(&mut out, w - 100.0, 40.0);
    let _ = writeln!(out, "<text x=\"15\" y=\"{:.1}\" transform=\"rotate(-90 15 {:.1})\" text-anchor=\"middle\">uncertainty</text>", (y0 + y1) / 2.0, (y0 + y1) / 2.0);
    out.push_str("</svg>\n");
    out
}

/// One panel per histogram, both groups drawn over shared bins.
pub fn histogram_chart(title: &str, panels: &[(String, &Histogram)]) -> String {
    let (pw, ph) = (360.0, 220.0);
    let (w, h) = (pw * panels.len() as f64 + 20.0, ph + 70.0);
    let mut out = header(w, h);
    let _ = writeln!(out, "<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{}</text>", w / 2.0, escape(title));
    for (i, (label, hist)) in panels.iter().enumerate() {
        let x0 = 60.0 + pw * i as f64;
        let (y0, y1) = (50.0, 40.0 + ph);
        let width = pw - 80.0;
        let top = hist.correct.iter().chain(&hist.incorrect).copied().fold(0.0, f64::max);
        let top = if top > 0.0 { top } else { 1.0 };
        let y_of = |v: f64| y1 - (v / top) * (y1 - y0);
        let bins = hist.correct.len().max(1);
        let bw = width / bins as f64;
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"42\" text-anchor=\"middle\">{}</text>", x0 + width / 2.0, escape(label));
        for (freqs, color) in [(&hist.correct, CORRECT), (&hist.incorrect, INCORRECT)] {
            for (k, &f) in freqs.iter().enumerate() {
                if f > 0.0 {
                    let _ = writeln!(
                        out,
                        "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bw:.2}\" height=\"{:.1}\" fill=\"{color}\" fill-opacity=\"0.5\"/>",
                        x0 + bw * k as f64,
                        y_of(f),
                        y1 - y_of(f)
                    );
                }
            }
        }
        let _ = writeln!(out, "<line x1=\"{x0:.1}\" y1=\"{y0}\" x2=\"{x0:.1}\" y2=\"{y1}\" stroke=\"black\"/>");
        let _ = writeln!(out, "<line x1=\"{x0:.1}\" y1=\"{y1}\" x2=\"{:.1}\" y2=\"{y1}\" stroke=\"black\"/>", x0 + width);
        axis_ticks(&mut out, x0, y_of, top);
        let last = hist.edges.last().copied().unwrap_or(1.0);
        let _ = writeln!(
            out,
            "<text x=\"{x0:.1}\" y=\"{:.1}\" text-anchor=\"middle\">0</text><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            y1 + 14.0,
            x0 + width,
            y1 + 14.0,
            format_tick(last)
        );
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">uncertainty</text>", x0 + width / 2.0, y1 + 28.0);
    }
    legend(&mut out, w - 100.0, 40.0);
    out.push_str("</svg>\n");
    out
}
