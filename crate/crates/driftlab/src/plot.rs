//! Small dependency-free chart renderers for report artifacts: bar
//! charts, line charts and 10x10 heatmaps as PNG files. Geometry only;
//! filenames carry the semantics.

use std::path::Path;

use ndarray::Array3;

use crate::error::Result;

const W: usize = 480;
const H: usize = 360;
const MARGIN: usize = 40;

fn blank() -> Array3<f32> {
    Array3::from_elem((H, W, 3), 1.0)
}

fn put(img: &mut Array3<f32>, y: usize, x: usize, rgb: [f32; 3]) {
    if y < H && x < W {
        for c in 0..3 {
            img[[y, x, c]] = rgb[c];
        }
    }
}

fn axes(img: &mut Array3<f32>) {
    let axis = [0.2, 0.2, 0.2];
    for x in MARGIN..W - MARGIN / 2 {
        put(img, H - MARGIN, x, axis);
    }
    for y in MARGIN / 2..=H - MARGIN {
        put(img, y, MARGIN, axis);
    }
}

/// Vertical bars over categorical x positions; values auto-scale.
pub fn bar_chart(values: &[f64], path: &Path) -> Result<()> {
    let mut img = blank();
    axes(&mut img);
    if !values.is_empty() {
        let vmax = values.iter().cloned().fold(f64::MIN, f64::max).max(1e-12);
        let span = W - MARGIN - MARGIN / 2;
        let bw = (span / values.len()).max(1);
        for (i, &v) in values.iter().enumerate() {
            let hpx = ((v / vmax) * (H - MARGIN - MARGIN / 2) as f64) as usize;
            for dx in 1..bw.saturating_sub(1).max(1) {
                let x = MARGIN + i * bw + dx;
                for dy in 0..hpx {
                    put(&mut img, H - MARGIN - 1 - dy, x, [0.25, 0.45, 0.8]);
                }
            }
        }
    }
    crate::data::save_png(path, &img)
}

/// One or more polylines over [0,1]^2-normalized points.
pub fn line_chart(series: &[Vec<(f64, f64)>], path: &Path) -> Result<()> {
    let mut img = blank();
    axes(&mut img);
    let palette = [
        [0.85, 0.3, 0.25],
        [0.25, 0.45, 0.8],
        [0.2, 0.65, 0.35],
        [0.7, 0.5, 0.15],
    ];
    let sx = (W - MARGIN - MARGIN / 2) as f64;
    let sy = (H - MARGIN - MARGIN / 2) as f64;
    for (si, pts) in series.iter().enumerate() {
        let color = palette[si % palette.len()];
        for pair in pts.windows(2) {
            let (x0, y0) = pair[0];
            let (x1, y1) = pair[1];
            let steps = 200;
            for k in 0..=steps {
                let t = k as f64 / steps as f64;
                let x = x0 + t * (x1 - x0);
                let y = y0 + t * (y1 - y0);
                let px = MARGIN + (x.clamp(0.0, 1.0) * sx) as usize;
                let py = H - MARGIN - 1 - (y.clamp(0.0, 1.0) * sy) as usize;
                put(&mut img, py, px, color);
            }
        }
    }
    crate::data::save_png(path, &img)
}

/// 10x10 histogram as shaded cells, row 0 at the bottom.
pub fn heatmap10(hist: &[[u32; 10]; 10], path: &Path) -> Result<()> {
    let mut img = blank();
    axes(&mut img);
    let vmax = hist
        .iter()
        .flat_map(|r| r.iter())
        .cloned()
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let cw = (W - MARGIN - MARGIN / 2) / 10;
    let ch = (H - MARGIN - MARGIN / 2) / 10;
    for (ri, row) in hist.iter().enumerate() {
        for (ci, &v) in row.iter().enumerate() {
            let heat = (v as f64 / vmax).sqrt();
            let rgb = [1.0 - 0.75 * heat as f32, 1.0 - 0.55 * heat as f32, 1.0];
            for dy in 0..ch.saturating_sub(1) {
                for dx in 0..cw.saturating_sub(1) {
                    put(
                        &mut img,
                        H - MARGIN - 1 - ri * ch - dy,
                        MARGIN + 1 + ci * cw + dx,
                        rgb,
                    );
                }
            }
        }
    }
    crate::data::save_png(path, &img)
}
