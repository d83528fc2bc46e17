//! Two-dimensional projections of latent dumps and rendering of grid
//! reports, both as standalone SVG.

use std::fmt::Write as _;

use bhtsne::tSNE;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use disentangle::eval::{CellStatus, EvalReport};
use disentangle::export::{LatentKind, LatentRow};

use crate::failure::{Failure, Outcome};

/// Fewer points than this cannot be embedded meaningfully.
pub const MIN_POINTS: usize = 5;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

#[derive(Clone, Debug)]
pub struct TsneParams {
    pub perplexity: f32,
    pub epochs: usize,
    pub seed: u64,
}

/// Seeded exact t-SNE. The perplexity is lowered when there are too few
/// points for the requested value.
pub fn embed(points: &[Vec<f32>], p: &TsneParams) -> Outcome<Vec<[f32; 2]>> {
    let n = points.len();
    if n < MIN_POINTS {
        return Err(Failure::data(format!(
            "{n} points is too few to embed; at least {MIN_POINTS} are needed"
        )));
    }
    if let Some(d) = points.first().map(Vec::len) {
        if d == 0 || points.iter().any(|v| v.len() != d) {
            return Err(Failure::data(
                "latent vectors are empty or of unequal length",
            ));
        }
    }
    let perplexity = p.perplexity.min((n - 1) as f32 / 3.0).max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let init: Vec<f32> = (0..2 * n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            1e-4 * z as f32
        })
        .collect();
    let mut tsne = tSNE::new(points);
    tsne.embedding_dim(2)
        .perplexity(perplexity)
        .epochs(p.epochs)
        .initial_embedding(init)
        .exact(|a: &Vec<f32>, b: &Vec<f32>| {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f32>()
        });
    let flat = tsne.embedding();
    Ok(flat.chunks(2).map(|c| [c[0], c[1]]).collect())
}

pub fn latent_points(rows: &[LatentRow], kind: LatentKind) -> Vec<Vec<f32>> {
    rows.iter().map(|r| r.vector(kind).to_vec()).collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Scatter plot coloured by platform; hateful posts are filled, the rest
/// drawn as rings.
pub fn scatter_svg(rows: &[LatentRow], coords: &[[f32; 2]], title: &str) -> String {
    let (w, h, m) = (640.0f32, 560.0f32, 40.0f32);
    let (mut x0, mut x1, mut y0, mut y1) = (f32::MAX, f32::MIN, f32::MAX, f32::MIN);
    for c in coords {
        x0 = x0.min(c[0]);
        x1 = x1.max(c[0]);
        y0 = y0.min(c[1]);
        y1 = y1.max(c[1]);
    }
    let sx = (w - 2.0 * m) / (x1 - x0).max(1e-6);
    let sy = (h - 2.0 * m - 40.0) / (y1 - y0).max(1e-6);
    let mut platforms: Vec<&str> = rows.iter().map(|r| r.platform.as_str()).collect();
    platforms.sort();
    platforms.dedup();
    let colour =
        |p: &str| PALETTE[platforms.iter().position(|q| *q == p).unwrap_or(0) % PALETTE.len()];

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{m}" y="24" font-size="14">{}</text>"#,
        escape(title)
    )
    .unwrap();
    for (r, c) in rows.iter().zip(coords) {
        let (x, y) = (m + (c[0] - x0) * sx, m + 40.0 + (y1 - c[1]) * sy);
        let col = colour(&r.platform);
        if r.hate == 1 {
            writeln!(
                s,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{col}" fill-opacity="0.7"/>"#
            )
            .unwrap();
        } else {
            writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="none" stroke="{col}" stroke-opacity="0.7"/>"#).unwrap();
        }
    }
    for (i, p) in platforms.iter().enumerate() {
        let x = m + 120.0 * i as f32;
        writeln!(
            s,
            r#"<circle cx="{}" cy="{}" r="5" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            x + 5.0,
            h - 14.0,
            colour(p),
            x + 14.0,
            h - 10.0,
            escape(p)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Source-by-target table of macro-F1, shaded by value.
pub fn report_svg(report: &EvalReport) -> String {
    let sources = report.sources();
    let targets = report.targets();
    let (cw, ch, lw, top) = (110.0f32, 32.0f32, 120.0f32, 60.0f32);
    let w = lw + cw * targets.len() as f32 + 20.0;
    let h = top + ch * sources.len() as f32 + 20.0;
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="10" y="20" font-size="14">macro-F1, rows train, columns test</text>"#
    )
    .unwrap();
    for (j, t) in targets.iter().enumerate() {
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            lw + cw * (j as f32 + 0.5),
            top - 8.0,
            escape(t)
        )
        .unwrap();
    }
    for (i, src) in sources.iter().enumerate() {
        let y = top + ch * i as f32;
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            lw - 8.0,
            y + ch * 0.6,
            escape(src)
        )
        .unwrap();
        for (j, t) in targets.iter().enumerate() {
            let x = lw + cw * j as f32;
            let (fill, label) = match report.cell(src, t) {
                Some(c) => match (&c.status, c.macro_f1) {
                    (CellStatus::Ok, Some(f)) => {
                        let g = (255.0 - 155.0 * f.clamp(0.0, 1.0)) as u8;
                        (format!("rgb({g},{},255)", g / 2 + 127), format!("{f:.3}"))
                    }
                    _ => ("#eeeeee".to_string(), "failed".to_string()),
                },
                None => ("#ffffff".to_string(), "-".to_string()),
            };
            writeln!(s, r##"<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{fill}" stroke="#999"/>"##).unwrap();
            writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#,
                x + cw / 2.0,
                y + ch * 0.6
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}
