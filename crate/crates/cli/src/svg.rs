//! Static SVG rendering of a trial: a top-down trajectory overlay and the
//! executed minimum-value timeline underneath.

use dualshield::scenario::Scenario;
use dualshield::sim::TrialResult;
use std::fmt::Write as _;

const W: f64 = 860.0;
const TOP_H: f64 = 420.0;
const BOT_H: f64 = 180.0;
const PAD: f64 = 42.0;

struct Frame {
    x0: f64,
    x1: f64,
    y1: f64,
    sx: f64,
    sy: f64,
    oy: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64, width: f64, height: f64, oy: f64) -> Self {
        Self { x0, x1, y1, sx: width / (x1 - x0), sy: height / (y1 - y0), oy }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) * self.sx
    }

    /// World y grows upward, screen y downward.
    fn py(&self, y: f64) -> f64 {
        self.oy + (self.y1 - y) * self.sy
    }
}

fn polyline(out: &mut String, pts: impl Iterator<Item = (f64, f64)>, style: &str) {
    let mut s = String::new();
    for (x, y) in pts {
        let _ = write!(s, "{x:.1},{y:.1} ");
    }
    let _ = writeln!(out, "<polyline fill=\"none\" points=\"{}\" {style}/>", s.trim_end());
}

pub fn render(scn: &Scenario, r: &TrialResult) -> String {
    let mut xs: Vec<f64> = r.ego.iter().map(|s| s.p_x).collect();
    for t in &r.hvs {
        xs.extend(t.iter().map(|s| s.p_x));
    }
    xs.extend(scn.static_obstacles.iter().map(|o| o.x));
    let x_lo = xs.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let x_hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let y_lo = scn.lane.y_min - 0.6;
    let y_hi = scn.lane.y_max + 0.6;

    // keep world aspect ratio within the fixed canvas
    let avail_h = TOP_H - 2.0 * PAD;
    let avail_w = W - 2.0 * PAD;
    let scale = (avail_w / (x_hi - x_lo)).min(avail_h / (y_hi - y_lo));
    let top = Frame {
        x0: x_lo,
        x1: x_hi,
        y1: y_hi,
        sx: scale,
        sy: scale,
        oy: PAD + (avail_h - (y_hi - y_lo) * scale) / 2.0,
    };

    let mut out = String::new();
    let total_h = TOP_H + BOT_H;
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{total_h}\" viewBox=\"0 0 {W} {total_h}\">"
    );
    let _ = writeln!(out, "<rect width=\"{W}\" height=\"{total_h}\" fill=\"white\"/>");

    // road boundaries and centerline
    for (y, dash) in [(scn.lane.y_min, ""), (scn.lane.y_max, ""), (0.0, " stroke-dasharray=\"6 6\"")] {
        let _ = writeln!(
            out,
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#999\" stroke-width=\"1.2\"{dash}/>",
            top.px(x_lo),
            top.py(y),
            top.px(x_hi),
            top.py(y)
        );
    }
    // dividers
    for o in &scn.static_obstacles {
        let _ = writeln!(
            out,
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"{:.1}\" fill=\"#444\"/>",
            top.px(o.x),
            top.py(o.y),
            (o.radius * scale).max(1.5)
        );
    }
    // goal marker
    let g = scn.goal.x_g;
    let _ = writeln!(
        out,
        "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"5\" fill=\"none\" stroke=\"#2a2\" stroke-width=\"2\"/>",
        top.px(g.p_x),
        top.py(g.p_y)
    );

    // traffic trajectories
    let hv_colors = ["#d86", "#b44", "#a69", "#877"];
    for (h, t) in r.hvs.iter().enumerate() {
        polyline(
            &mut out,
            t.iter().map(|s| (top.px(s.p_x), top.py(s.p_y))),
            &format!("stroke=\"{}\" stroke-width=\"1.6\" opacity=\"0.8\"", hv_colors[h % hv_colors.len()]),
        );
        if let Some(s0) = t.first() {
            let _ = writeln!(
                out,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"7\" height=\"7\" fill=\"{}\"/>",
                top.px(s0.p_x) - 3.5,
                top.py(s0.p_y) - 3.5,
                hv_colors[h % hv_colors.len()]
            );
        }
    }
    // ego trajectory, shield interventions flagged
    polyline(
        &mut out,
        r.ego.iter().map(|s| (top.px(s.p_x), top.py(s.p_y))),
        "stroke=\"#26c\" stroke-width=\"2.2\"",
    );
    for (k, l) in r.log.iter().enumerate() {
        if l.shield_active {
            let s = &r.ego[k];
            let _ = writeln!(
                out,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.2\" fill=\"#e62\" opacity=\"0.7\"/>",
                top.px(s.p_x),
                top.py(s.p_y)
            );
        }
    }
    if let Some(s0) = r.ego.first() {
        let _ = writeln!(
            out,
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"#26c\"/>",
            top.px(s0.p_x),
            top.py(s0.p_y)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{PAD}\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">seed {} | success: {} | min clearance {:.3} m | shield steps: {}</text>",
        r.seed,
        r.success,
        r.min_distance,
        r.log.iter().filter(|l| l.shield_active).count()
    );

    // value timeline
    let vmax = r.log.iter().map(|l| l.v_min).fold(0.5f64, f64::max).min(6.0);
    let vmin = r.log.iter().map(|l| l.v_min).fold(-0.2f64, f64::min);
    let bot = Frame::new(0.0, r.log.len().max(1) as f64 * 0.1, vmin, vmax, W - 2.0 * PAD, BOT_H - 50.0, TOP_H + 10.0);
    let _ = writeln!(
        out,
        "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#c33\" stroke-width=\"1\" stroke-dasharray=\"4 4\"/>",
        bot.px(bot.x0),
        bot.py(0.0),
        bot.px(bot.x1),
        bot.py(0.0)
    );
    polyline(
        &mut out,
        r.log.iter().enumerate().map(|(k, l)| (bot.px(k as f64 * 0.1), bot.py(l.v_min.min(vmax)))),
        "stroke=\"#26c\" stroke-width=\"1.6\"",
    );
    let _ = writeln!(
        out,
        "<text x=\"{PAD}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">minimum value along execution (red dashes: zero)</text>",
        TOP_H + BOT_H - 14.0
    );
    let _ = writeln!(out, "</svg>");
    out
}
