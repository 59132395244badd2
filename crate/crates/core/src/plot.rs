//! Static SVG scatter plots of 2-D embeddings.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_file;
use crate::tsne::Embedding;
use crate::Scalar;

pub const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#393b79", "#ad494a",
];

const SIZE: f64 = 600.0;
const TITLE_BAND: f64 = 30.0;
const MARGIN: f64 = 0.05;
const RADIUS: f64 = 2.5;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders the scatter. Distinct labels take palette colors in increasing
/// label order, cycling after twelve; without labels every point gets the first.
pub fn render_svg<T: Scalar>(y: &Embedding<T>, labels: Option<&[i64]>, title: &str) -> Result<String> {
    if y.dim() != 2 {
        return Err(Error::UnsupportedDimension(y.dim()));
    }
    if let Some(l) = labels {
        if l.len() != y.n() {
            return Err(Error::DimensionMismatch(format!("{} labels for {} points", l.len(), y.n())));
        }
    }
    let mut distinct: Vec<i64> = labels.map(<[i64]>::to_vec).unwrap_or_default();
    distinct.sort_unstable();
    distinct.dedup();

    let pts = y.points();
    let axis = |k: usize| {
        let (lo, hi) = pts
            .column(k)
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.as_f64()), hi.max(v.as_f64())));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let pad = MARGIN * span;
        (lo - pad, span + 2.0 * pad)
    };
    let ((x0, xs), (y0, ys)) = (axis(0), axis(1));
    let plot = SIZE - TITLE_BAND;

    let mut o = String::new();
    let _ = writeln!(
        o,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(o, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        o,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        SIZE / 2.0,
        escape(title)
    );
    let _ = writeln!(
        o,
        r##"<rect x="0" y="{TITLE_BAND}" width="{SIZE}" height="{plot}" fill="none" stroke="#cccccc"/>"##
    );
    for i in 0..y.n() {
        let px = (pts[[i, 0]].as_f64() - x0) / xs * SIZE;
        let py = TITLE_BAND + (1.0 - (pts[[i, 1]].as_f64() - y0) / ys) * plot;
        let color = match labels {
            Some(l) => PALETTE[distinct.binary_search(&l[i]).expect("label present") % PALETTE.len()],
            None => PALETTE[0],
        };
        let _ = writeln!(o, r#"<circle cx="{px:.3}" cy="{py:.3}" r="{RADIUS}" fill="{color}"/>"#);
    }
    o.push_str("</svg>\n");
    Ok(o)
}

pub fn plot_svg<T: Scalar>(path: impl AsRef<Path>, y: &Embedding<T>, labels: Option<&[i64]>, title: &str) -> Result<()> {
    write_file(path, render_svg(y, labels, title)?)
}
