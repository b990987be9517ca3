//! Side-by-side prediction panels written as 16-bit PGM and PNG grids.

use crate::dataset::encode_pgm16;
use ndarray::Array2;
use std::path::{Path, PathBuf};

/// White gutter between panel cells, in pixels.
pub const GUTTER: usize = 2;

/// One panel row: ground-truth depth, predicted depth, ground-truth
/// grayscale, predicted grayscale. All images share one resolution.
pub struct FigureRow {
    pub depth_gt: Array2<f64>,
    pub depth_pred: Array2<f64>,
    pub gray_gt: Array2<f64>,
    pub gray_pred: Array2<f64>,
}

/// Composes rows into a single grid image with white gutters.
pub fn compose_panel(rows: &[FigureRow]) -> Array2<f64> {
    assert!(!rows.is_empty(), "panel needs at least one row");
    let res = rows[0].depth_gt.dim().0;
    let width = 4 * res + 3 * GUTTER;
    let height = rows.len() * res + (rows.len() - 1) * GUTTER;
    let mut panel = Array2::from_elem((height, width), 1.0);
    for (ri, row) in rows.iter().enumerate() {
        let top = ri * (res + GUTTER);
        for (ci, img) in [&row.depth_gt, &row.depth_pred, &row.gray_gt, &row.gray_pred]
            .iter()
            .enumerate()
        {
            assert_eq!(img.dim(), (res, res), "panel cell resolution mismatch");
            let left = ci * (res + GUTTER);
            for r in 0..res {
                for c in 0..res {
                    panel[[top + r, left + c]] = img[[r, c]];
                }
            }
        }
    }
    panel
}

/// Writes a panel as both `<stem>.pgm16` and `<stem>.png`; returns the paths.
pub fn write_panel(panel: &Array2<f64>, stem: &Path) -> std::io::Result<Vec<PathBuf>> {
    if let Some(dir) = stem.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let pgm_path = stem.with_extension("pgm16");
    std::fs::write(&pgm_path, encode_pgm16(panel))?;

    let (h, w) = panel.dim();
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for ((r, c), &v) in panel.indexed_iter() {
        let q = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        buf.put_pixel(c as u32, r as u32, image::Luma([q]));
    }
    let png_path = stem.with_extension("png");
    buf.save(&png_path)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(vec![pgm_path, png_path])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(res: usize, v: f64) -> Array2<f64> {
        Array2::from_elem((res, res), v)
    }

    fn row(res: usize) -> FigureRow {
        FigureRow {
            depth_gt: constant(res, 0.2),
            depth_pred: constant(res, 0.4),
            gray_gt: constant(res, 0.6),
            gray_pred: constant(res, 0.8),
        }
    }

    // 4 rows of 16 px cells: 4*16+3*2 wide, 4*16+3*2 tall
    #[test]
    fn panel_dimensions_include_gutters() {
        let rows: Vec<FigureRow> = (0..4).map(|_| row(16)).collect();
        let panel = compose_panel(&rows);
        assert_eq!(panel.dim(), (4 * 16 + 3 * GUTTER, 4 * 16 + 3 * GUTTER));
    }

    #[test]
    fn panel_export_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<FigureRow> = (0..2).map(|_| row(16)).collect();
        let panel = compose_panel(&rows);
        let a = write_panel(&panel, &dir.path().join("a")).unwrap();
        let b = write_panel(&panel, &dir.path().join("b")).unwrap();
        for (pa, pb) in a.iter().zip(b.iter()) {
            assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
        }
    }

    #[test]
    fn panel_cells_land_in_place() {
        let panel = compose_panel(&[row(16)]);
        assert_eq!(panel[[0, 0]], 0.2);
        assert_eq!(panel[[0, 16 + GUTTER]], 0.4);
        assert_eq!(panel[[0, 2 * (16 + GUTTER)]], 0.6);
        assert_eq!(panel[[0, 3 * (16 + GUTTER)]], 0.8);
        // gutter pixel is white
        assert_eq!(panel[[0, 16]], 1.0);
    }
}
