//! Route figures as standalone SVG.

use std::fmt::Write as _;

use crate::instance::{build_distance_matrix, ProblemInstance};
use crate::verifier::{compute_cost, CandidateSolution};

pub const VIEWBOX: f64 = 800.0;
pub const MARGIN: f64 = 0.05 * VIEWBOX;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Uniform scale into the drawable square, centred, y pointing up.
struct Frame {
    min_x: f64,
    min_y: f64,
    scale: f64,
    off_x: f64,
    off_y: f64,
}

impl Frame {
    fn fit(instance: &ProblemInstance) -> Self {
        let xs = instance.cities.iter().map(|p| p.x);
        let ys = instance.cities.iter().map(|p| p.y);
        let (min_x, max_x) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let (min_y, max_y) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let (min_x, max_x, min_y, max_y) =
            if min_x.is_finite() { (min_x, max_x, min_y, max_y) } else { (0.0, 0.0, 0.0, 0.0) };
        let span = (max_x - min_x).max(max_y - min_y);
        let inner = VIEWBOX - 2.0 * MARGIN;
        let scale = if span > 0.0 { inner / span } else { 0.0 };
        Self {
            min_x,
            min_y,
            scale,
            off_x: MARGIN + (inner - (max_x - min_x) * scale) / 2.0,
            off_y: MARGIN + (inner - (max_y - min_y) * scale) / 2.0,
        }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (self.off_x + (x - self.min_x) * self.scale, VIEWBOX - (self.off_y + (y - self.min_y) * self.scale))
    }
}

/// One polyline per route, a marker per city (depots styled apart) and a
/// total-cost label.
pub fn render_svg(solution: &CandidateSolution, instance: &ProblemInstance) -> String {
    let frame = Frame::fit(instance);
    let cost = build_distance_matrix(instance).map(|m| compute_cost(solution, &m)).unwrap_or(f64::NAN);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {VIEWBOX} {VIEWBOX}" width="{VIEWBOX}" height="{VIEWBOX}">"#
    );
    out.push_str(
        "<style>.route{fill:none;stroke-width:3;stroke-linejoin:round}.city{fill:#333}.depot{fill:#fff;stroke:#000;stroke-width:3}.label{font:14px sans-serif}</style>\n",
    );
    out.push_str(r##"<rect width="100%" height="100%" fill="#fff"/>"##);
    out.push('\n');
    for (day, route) in solution.routes.iter().enumerate() {
        let points: Vec<String> = route
            .iter()
            .filter_map(|&c| instance.cities.get(c))
            .map(|p| {
                let (x, y) = frame.map(p.x, p.y);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="route day-{}" stroke="{}" points="{}"/>"#,
            day + 1,
            PALETTE[day % PALETTE.len()],
            points.join(" ")
        );
    }
    for (i, p) in instance.cities.iter().enumerate() {
        let (x, y) = frame.map(p.x, p.y);
        if instance.is_depot(i) {
            let _ = writeln!(out, r#"<rect class="depot" x="{:.2}" y="{:.2}" width="14" height="14"/>"#, x - 7.0, y - 7.0);
        } else {
            let _ = writeln!(out, r#"<circle class="city" cx="{x:.2}" cy="{y:.2}" r="5"/>"#);
        }
        let _ = writeln!(out, r#"<text class="label" x="{:.2}" y="{:.2}">{i}</text>"#, x + 9.0, y - 9.0);
    }
    let _ = writeln!(out, r#"<text class="label cost" x="{MARGIN}" y="{}">Total cost: {cost:.2}</text>"#, MARGIN / 2.0 + 5.0);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{Point2D, ProblemType};

    fn instance() -> ProblemInstance {
        ProblemInstance {
            cities: vec![Point2D::new(0.0, 0.0), Point2D::new(2.0, 0.0), Point2D::new(0.0, 1.0)],
            problem_type: ProblemType::MultiDaySingleDepot,
            depots: vec![0],
            days: 2,
            request_text: String::new(),
        }
    }

    #[test]
    fn elements_and_label() {
        let s = render_svg(&CandidateSolution::from_model(vec![vec![0, 1, 0], vec![0, 2, 0]]), &instance());
        assert_eq!(s.matches("<polyline").count(), 2);
        assert_eq!(s.matches(r#"class="depot""#).count(), 1);
        assert_eq!(s.matches(r#"class="city""#).count(), 2);
        assert!(s.contains("Total cost: 6.00"));
    }

    #[test]
    fn frame_fits_margin_and_flips_y() {
        let f = Frame::fit(&instance());
        assert_eq!(f.map(0.0, 0.0).0, MARGIN);
        assert_eq!(f.map(2.0, 0.0).0, VIEWBOX - MARGIN);
        assert!(f.map(0.0, 1.0).1 < f.map(0.0, 0.0).1);
    }
}
