//! Static SVG trajectory plots.

use std::collections::BTreeMap;
use std::fmt::Write;

use u5mr_core::model::CountryModel;
use u5mr_core::project::TrajectoryPoint;
use u5mr_core::Observation;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

struct Frame {
    x0: f64,
    x1: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, t: f64) -> f64 {
        LEFT + (t - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }
    fn y(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - v / self.y1 * (HEIGHT - TOP - BOTTOM)
    }
}

fn nice_step(range: f64) -> f64 {
    let raw = range / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

/// One plot: 90% band and median of the estimates, observations coloured
/// by series with ±2 sampling-SE bars.
pub fn country_svg(country: &CountryModel, observations: &[Observation], traj: &[TrajectoryPoint]) -> String {
    let mut series: BTreeMap<&str, Vec<(f64, f64, f64, f64)>> = BTreeMap::new();
    for o in &country.obs {
        let src = &observations[o.source];
        series.entry(src.series_id.as_str()).or_default().push((
            o.year,
            src.u5mr,
            (o.y - 2.0 * o.v).exp(),
            (o.y + 2.0 * o.v).exp(),
        ));
    }
    let x0 = traj
        .first()
        .map_or(country.basis.first_obs(), |p| p.year)
        .min(country.basis.first_obs());
    let x1 = traj.last().map_or(country.basis.projection_end(), |p| p.year);
    let top = traj
        .iter()
        .map(|p| p.upper)
        .chain(series.values().flatten().map(|p| p.1))
        .fold(1.0, f64::max);
    let ystep = nice_step(top * 1.05);
    let f = Frame {
        x0: x0.floor(),
        x1: x1.ceil().max(x0.floor() + 1.0),
        y1: (top * 1.05 / ystep).ceil() * ystep,
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" font-size="15" text-anchor="middle">{}</text>"#,
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        country.code
    );

    // axes and grid
    let (px0, px1) = (f.x(f.x0), f.x(f.x1));
    let (py0, py1) = (f.y(0.0), f.y(f.y1));
    let mut v = 0.0;
    while v <= f.y1 + 1e-9 {
        let y = f.y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{px0:.2}" y1="{y:.2}" x2="{px1:.2}" y2="{y:.2}" stroke="#e5e5e5"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v}</text>"##,
            px0 - 6.0,
            y + 4.0
        );
        v += ystep;
    }
    let xstep = if f.x1 - f.x0 > 30.0 { 10.0 } else { 5.0 };
    let mut t = (f.x0 / xstep).ceil() * xstep;
    while t <= f.x1 {
        let x = f.x(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{py0:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"##,
            py0 + 5.0,
            py0 + 18.0
        );
        t += xstep;
    }
    let _ = writeln!(
        s,
        r##"<polyline points="{px0:.2},{py1:.2} {px0:.2},{py0:.2} {px1:.2},{py0:.2}" fill="none" stroke="#333"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" transform="rotate(-90 16 {:.2})" text-anchor="middle">U5MR (per 1000)</text>"#,
        (py0 + py1) / 2.0,
        (py0 + py1) / 2.0
    );

    // 90% band and median
    if !traj.is_empty() {
        let mut pts = String::new();
        for p in traj {
            let _ = write!(pts, "{:.2},{:.2} ", f.x(p.year), f.y(p.upper));
        }
        for p in traj.iter().rev() {
            let _ = write!(pts, "{:.2},{:.2} ", f.x(p.year), f.y(p.lower));
        }
        let _ = writeln!(
            s,
            r##"<polygon points="{}" fill="#d62728" fill-opacity="0.25" stroke="none"/>"##,
            pts.trim_end()
        );
        let line: Vec<String> = traj
            .iter()
            .map(|p| format!("{:.2},{:.2}", f.x(p.year), f.y(p.median)))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#d62728" stroke-width="2"/>"##,
            line.join(" ")
        );
    }

    // observations and legend
    for (i, (id, pts)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        for &(t, u, lo, hi) in pts {
            let x = f.x(t);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{colour}" stroke-opacity="0.5"/><circle cx="{x:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#,
                f.y(lo.min(f.y1)),
                f.y(hi.min(f.y1)),
                f.y(u)
            );
        }
        let ly = TOP + 14.0 + 16.0 * i as f64;
        let lx = WIDTH - RIGHT + 14.0;
        let _ = writeln!(
            s,
            r#"<circle cx="{lx:.2}" cy="{:.2}" r="4" fill="{colour}"/><text x="{:.2}" y="{ly:.2}">{}</text>"#,
            ly - 4.0,
            lx + 10.0,
            escape(id)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
