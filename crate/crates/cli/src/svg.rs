//! Static SVG heatmaps. Output depends only on the matrix and the
//! fingerprint, so regenerating a report is byte-stable.

use std::fmt::Write;

use neurosteer_core::table::LabeledMatrix;

const CELL: usize = 64;
const LEFT: usize = 96;
const TOP: usize = 84;
const NULL_FILL: Rgb = Rgb(0xbd, 0xbd, 0xbd);
const NEUTRAL: Rgb = Rgb(0xf7, 0xf7, 0xf7);
const NEGATIVE: Rgb = Rgb(0x21, 0x66, 0xac);
const POSITIVE: Rgb = Rgb(0xb2, 0x18, 0x2b);
const LOW: Rgb = Rgb(0xff, 0xff, 0xff);
const HIGH: Rgb = Rgb(0x08, 0x30, 0x6b);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    fn lerp(self, other: Rgb, t: f64) -> Rgb {
        let t = t.clamp(0.0, 1.0);
        let mix = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * t).round() as u8;
        Rgb(mix(self.0, other.0), mix(self.1, other.1), mix(self.2, other.2))
    }

    fn is_dark(self) -> bool {
        let luma = 0.299 * f64::from(self.0) + 0.587 * f64::from(self.1) + 0.114 * f64::from(self.2);
        luma < 128.0
    }

    pub fn hex(self) -> String {
        format!("#{:02x}{:02x}{:02x}", self.0, self.1, self.2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scale {
    /// Blue below zero, red above, centered at 0 and scaled by the largest
    /// magnitude in the matrix.
    Diverging,
    /// White at 0 to dark blue at 1.
    Sequential,
}

impl Scale {
    pub fn color(self, v: f64, max_abs: f64) -> Rgb {
        match self {
            Scale::Sequential => LOW.lerp(HIGH, v),
            Scale::Diverging if max_abs == 0.0 || v == 0.0 => NEUTRAL,
            Scale::Diverging if v > 0.0 => NEUTRAL.lerp(POSITIVE, v / max_abs),
            Scale::Diverging => NEUTRAL.lerp(NEGATIVE, -v / max_abs),
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Heatmap with rows = `row_label` (input/source language), columns =
/// `col_label` (intervention language). Undefined cells are gray.
pub fn heatmap(m: &LabeledMatrix, scale: Scale, fingerprint: &str) -> String {
    let (w, h) = (LEFT + CELL * m.cols.len() + 24, TOP + CELL * m.rows.len() + 24);
    let max_abs = m.defined().map(f64::abs).fold(0.0, f64::max);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, "<!-- fingerprint: {fingerprint} -->");
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-size="14" font-weight="bold">{}</text>"#,
        LEFT,
        escape(&m.name)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="42" text-anchor="middle">{}</text>"#,
        LEFT + CELL * m.cols.len() / 2,
        escape(&m.col_label)
    );
    let _ = writeln!(s, r#"<text x="8" y="{}">{}</text>"#, TOP - 8, escape(&m.row_label));
    for (j, c) in m.cols.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text class="col" x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + CELL * j + CELL / 2,
            TOP - 8,
            escape(c)
        );
    }
    for (i, (r, row)) in m.rows.iter().zip(&m.values).enumerate() {
        let y = TOP + CELL * i;
        let _ = writeln!(
            s,
            r#"<text class="row" x="{}" y="{}" text-anchor="end">{}</text>"#,
            LEFT - 8,
            y + CELL / 2 + 4,
            escape(r)
        );
        for (j, v) in row.iter().enumerate() {
            let x = LEFT + CELL * j;
            let fill = v.map_or(NULL_FILL, |v| scale.color(v, max_abs));
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="white"/>"#,
                fill.hex()
            );
            let label = v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
            let ink = if fill.is_dark() { "white" } else { "black" };
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{label}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 4
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
