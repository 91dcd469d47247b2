//! Plain SVG drawings of layouts on the workspace.

use std::fmt::Write;

use knoll::geom::{Layout, Workspace, MAX_OBJECT_SIZE, MIN_OBJECT_SIZE};

const PIXELS_PER_METER: f64 = 2000.0;
const MARGIN: f64 = 20.0;

/// Fill darkens with object area, from the smallest to the largest size the
/// generator produces.
fn fill(area: f64) -> String {
    let (lo, hi) = (MIN_OBJECT_SIZE * MIN_OBJECT_SIZE, MAX_OBJECT_SIZE * MAX_OBJECT_SIZE);
    let t = ((area - lo) / (hi - lo)).clamp(0.0, 1.0);
    let light = 85.0 - 50.0 * t;
    format!("hsl(205,60%,{light:.0}%)")
}

/// Workspace outline plus every object as a rotated rectangle labeled with
/// its index. The y axis points up.
pub fn render_layout(layout: &Layout<f64>, ws: &Workspace<f64>, title: &str) -> String {
    let w = ws.width * PIXELS_PER_METER + 2.0 * MARGIN;
    let h = ws.height * PIXELS_PER_METER + 2.0 * MARGIN;
    let px = |x: f64| MARGIN + x * PIXELS_PER_METER;
    let py = |y: f64| MARGIN + (ws.height - y) * PIXELS_PER_METER;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(
        s,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#fafafa" stroke="#888" stroke-dasharray="4 3"/>"##,
        px(0.0),
        py(ws.height),
        ws.width * PIXELS_PER_METER,
        ws.height * PIXELS_PER_METER
    );
    for (i, p) in layout.items.iter().enumerate() {
        let (cx, cy) = (px(p.pose.x), py(p.pose.y));
        let (rw, rh) = (p.spec.width * PIXELS_PER_METER, p.spec.length * PIXELS_PER_METER);
        // screen y points down, so a counter-clockwise yaw is a negative rotation
        let deg = -p.pose.yaw.to_degrees();
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{rw:.2}" height="{rh:.2}" fill="{}" stroke="#234" stroke-width="1" transform="rotate({deg:.3} {cx:.2} {cy:.2})"/>"##,
            cx - rw / 2.0,
            cy - rh / 2.0,
            fill(p.spec.area()),
        );
        let font = (rw.min(rh) * 0.5).clamp(8.0, 18.0);
        let _ = writeln!(
            s,
            r##"<text x="{cx:.2}" y="{cy:.2}" font-family="sans-serif" font-size="{font:.1}" text-anchor="middle" dominant-baseline="central" fill="#111">{i}</text>"##
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use knoll::geom::{ObjectSpec, Placed, Pose2D};

    #[test]
    fn one_rect_and_label_per_object() {
        let layout = Layout::new(vec![
            Placed::new(ObjectSpec::new(0.02, 0.03).unwrap(), Pose2D::at(0.05, 0.05)),
            Placed::new(ObjectSpec::new(0.05, 0.05).unwrap(), Pose2D::new(0.2, 0.1, 0.3)),
        ]);
        let svg = render_layout(&layout, &Workspace::default(), "a < b");
        assert_eq!(svg.matches("<rect").count(), 3);
        assert!(svg.contains(">0</text>") && svg.contains(">1</text>"));
        assert!(svg.contains("a &lt; b"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn larger_objects_are_darker() {
        assert_eq!(fill(MIN_OBJECT_SIZE * MIN_OBJECT_SIZE), "hsl(205,60%,85%)");
        assert_eq!(fill(MAX_OBJECT_SIZE * MAX_OBJECT_SIZE), "hsl(205,60%,35%)");
    }
}
