//! SVG pictures of coverings and measures projected onto two coordinates.
//!
//! Boxes of equal size that project onto the same rectangle are merged into
//! one cell, and their measure values are summed (a density projection).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::HyperBox;

/// Fill colors for measure values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Colormap {
    /// Blue for low density through green to yellow for high density.
    #[default]
    BlueGreenYellow,
    Grayscale,
}

const BGY_STOPS: [(f64, [f64; 3]); 3] = [
    (0.0, [0.0, 0.12, 0.85]),
    (0.5, [0.1, 0.72, 0.25]),
    (1.0, [1.0, 0.9, 0.05]),
];

impl Colormap {
    /// Color at `t ∈ [0, 1]` as `#rrggbb`.
    pub fn color(self, t: f64) -> String {
        let t = t.clamp(0.0, 1.0);
        let rgb = match self {
            Colormap::Grayscale => {
                let v = 0.85 * (1.0 - t);
                [v, v, v]
            }
            Colormap::BlueGreenYellow => {
                let i = if t <= BGY_STOPS[1].0 { 0 } else { 1 };
                let (t0, a) = BGY_STOPS[i];
                let (t1, b) = BGY_STOPS[i + 1];
                let s = (t - t0) / (t1 - t0);
                [0, 1, 2].map(|k| a[k] + s * (b[k] - a[k]))
            }
        };
        let [r, g, b] = rgb.map(|v| (v * 255.0).round() as u8);
        format!("#{r:02x}{g:02x}{b:02x}")
    }
}

/// Lowest plotted density relative to the maximum; smaller values are
/// clamped to the bottom of the colormap.
pub const LOG_FLOOR: f64 = 1e-6;

const OUTLINE: &str = "#c8c8c8";

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOptions {
    pub width: u32,
    pub height: u32,
    pub axes: (usize, usize),
    pub colormap: Colormap,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            width: 800,
            height: 600,
            axes: (0, 1),
            colormap: Colormap::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub svg: String,
    /// Number of `<rect>` elements drawn.
    pub rects: usize,
}

/// Projected rectangle in frame coordinates with its summed measure.
struct Cell {
    lo: [f64; 2],
    hi: [f64; 2],
    mass: f64,
}

/// Draws `boxes` inside `frame`, filled by `measure` when given and outlined
/// otherwise.
pub fn render_svg(
    frame: &HyperBox,
    boxes: &[HyperBox],
    measure: Option<&[f64]>,
    opts: &RenderOptions,
) -> Result<Rendered> {
    let (a, b) = opts.axes;
    let n = frame.dim();
    if a >= n || b >= n || a == b {
        return Err(Error::input(format!("projection axes ({a}, {b}) invalid for dimension {n}")));
    }
    if opts.width == 0 || opts.height == 0 {
        return Err(Error::input("image size must be positive"));
    }
    if let Some(m) = measure {
        if m.len() != boxes.len() {
            return Err(Error::input(format!("{} measure values for {} boxes", m.len(), boxes.len())));
        }
    }
    if let Some(bad) = boxes.iter().find(|x| x.dim() != n) {
        return Err(Error::input(format!("box of dimension {} in a {n}-dimensional frame", bad.dim())));
    }

    // key: lower corner in units of the box width, plus the width itself
    let mut cells: BTreeMap<(i64, i64, u64, u64), Cell> = BTreeMap::new();
    for (i, bx) in boxes.iter().enumerate() {
        let (ra, rb) = (bx.radius()[a], bx.radius()[b]);
        let ia = ((bx.lower(a) - frame.lower(a)) / (2.0 * ra)).round() as i64;
        let ib = ((bx.lower(b) - frame.lower(b)) / (2.0 * rb)).round() as i64;
        let cell = cells.entry((ia, ib, ra.to_bits(), rb.to_bits())).or_insert(Cell {
            lo: [bx.lower(a), bx.lower(b)],
            hi: [bx.upper(a), bx.upper(b)],
            mass: 0.0,
        });
        cell.mass += measure.map_or(0.0, |m| m[i]);
    }

    let (w, h) = (opts.width as f64, opts.height as f64);
    let sx = w / (frame.upper(a) - frame.lower(a));
    let sy = h / (frame.upper(b) - frame.lower(b));
    let max = cells.values().map(|c| c.mass).fold(0.0, f64::max);
    let floor = (max * LOG_FLOOR).log10();

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" style="background:#ffffff">"#
    );
    let _ = writeln!(svg, r#"<g shape-rendering="crispEdges">"#);
    let mut rects = 0;
    for c in cells.values() {
        let x = (c.lo[0] - frame.lower(a)) * sx;
        let y = (frame.upper(b) - c.hi[1]) * sy;
        let cw = (c.hi[0] - c.lo[0]) * sx;
        let ch = (c.hi[1] - c.lo[1]) * sy;
        if !(cw > 0.0 && ch > 0.0) {
            continue;
        }
        let style = if measure.is_some() && c.mass > 0.0 {
            let t = (c.mass.log10() - floor) / -LOG_FLOOR.log10();
            format!(r#"fill="{}""#, opts.colormap.color(t))
        } else {
            format!(r#"fill="none" stroke="{OUTLINE}" stroke-width="0.5""#)
        };
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.3}" y="{y:.3}" width="{cw:.3}" height="{ch:.3}" {style}/>"#
        );
        rects += 1;
    }
    svg.push_str("</g>\n</svg>\n");
    Ok(Rendered { svg, rects })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> HyperBox {
        HyperBox::from_bounds(&[0.0, 0.0], &[1.0, 1.0]).unwrap()
    }

    fn quarters() -> Vec<HyperBox> {
        let (l, r) = unit().bisect(0).unwrap();
        let (a, b) = l.bisect(1).unwrap();
        let (c, d) = r.bisect(1).unwrap();
        vec![a, b, c, d]
    }

    #[test]
    fn covering_only_draws_outlines() {
        let out = render_svg(&unit(), &quarters(), None, &RenderOptions::default()).unwrap();
        assert_eq!(out.rects, 4);
        assert_eq!(out.svg.matches("<rect").count(), 4);
        assert_eq!(out.svg.matches(r#"fill="none""#).count(), 4);
    }

    #[test]
    fn single_box_is_at_ramp_top() {
        let out = render_svg(&unit(), &[unit()], Some(&[1.0]), &RenderOptions::default()).unwrap();
        assert_eq!(out.rects, 1);
        let top = Colormap::BlueGreenYellow.color(1.0);
        assert!(out.svg.contains(&format!(r#"fill="{top}""#)));
        assert!(out.svg.contains(r#"x="0.000" y="0.000" width="800.000" height="600.000""#));
    }

    #[test]
    fn zero_measure_is_outlined_and_log_scale_floors() {
        let m = [0.0, 1e-12, 1e-3, 1.0];
        let out = render_svg(&unit(), &quarters(), Some(&m), &RenderOptions::default()).unwrap();
        assert_eq!(out.svg.matches(r#"fill="none""#).count(), 1);
        let bottom = Colormap::BlueGreenYellow.color(0.0);
        let mid = Colormap::BlueGreenYellow.color(0.5);
        assert!(out.svg.contains(&format!(r#"fill="{bottom}""#)));
        assert!(out.svg.contains(&format!(r#"fill="{mid}""#)));
    }

    #[test]
    fn projection_sums_over_collapsed_axis() {
        let cube = HyperBox::from_bounds(&[0.0; 3], &[1.0; 3]).unwrap();
        let (lo, hi) = cube.bisect(2).unwrap();
        let opts = RenderOptions {
            axes: (0, 1),
            ..Default::default()
        };
        // both halves project onto the full square
        let out = render_svg(&cube, &[lo.clone(), hi.clone()], Some(&[0.25, 0.75]), &opts).unwrap();
        assert_eq!(out.rects, 1);
        let opts = RenderOptions { axes: (0, 2), ..opts };
        let out = render_svg(&cube, &[lo, hi], Some(&[0.25, 0.75]), &opts).unwrap();
        assert_eq!(out.rects, 2);
    }

    #[test]
    fn invalid_axes() {
        let opts = RenderOptions {
            axes: (0, 2),
            ..Default::default()
        };
        assert!(render_svg(&unit(), &quarters(), None, &opts).is_err());
        let opts = RenderOptions {
            axes: (1, 1),
            ..Default::default()
        };
        assert!(render_svg(&unit(), &quarters(), None, &opts).is_err());
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(Colormap::BlueGreenYellow.color(0.0), "#001fd9");
        assert_eq!(Colormap::BlueGreenYellow.color(1.0), "#ffe60d");
        assert_eq!(Colormap::Grayscale.color(1.0), "#000000");
    }
}
