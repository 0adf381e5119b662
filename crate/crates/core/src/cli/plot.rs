use std::fmt::Write as _;

use crate::data::QuestionTypeHistogram;

const BAR_HEIGHT: usize = 24;
const LABEL_WIDTH: usize = 140;
const PLOT_WIDTH: usize = 360;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Horizontal bar chart of question-type counts.
pub fn histogram_svg(h: &QuestionTypeHistogram) -> String {
    let max = h.counts.iter().map(|(_, c)| *c).max().unwrap_or(1).max(1);
    let width = LABEL_WIDTH + PLOT_WIDTH + 60;
    let height = BAR_HEIGHT * h.counts.len() + 20;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    for (i, (t, c)) in h.counts.iter().enumerate() {
        let y = 10 + i * BAR_HEIGHT;
        let w = PLOT_WIDTH * c / max;
        let _ = writeln!(
            s,
            r#"  <text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LABEL_WIDTH - 6,
            y + 16,
            escape(t)
        );
        let _ = writeln!(
            s,
            r##"  <rect x="{LABEL_WIDTH}" y="{}" width="{w}" height="{}" fill="#4a78a8"/>"##,
            y + 2,
            BAR_HEIGHT - 4
        );
        let _ = writeln!(s, r#"  <text x="{}" y="{}">{c}</text>"#, LABEL_WIDTH + w + 4, y + 16);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_bar_per_type() {
        let h = QuestionTypeHistogram {
            counts: vec![("Organ".into(), 4), ("A<B".into(), 2)],
            total: 6,
            split_size: 6,
        };
        let svg = histogram_svg(&h);
        assert_eq!(svg.matches("<rect").count(), 2);
        assert!(svg.contains("A&lt;B"));
        assert!(svg.contains(r#"width="360""#));
    }
}
