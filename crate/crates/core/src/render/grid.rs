use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalize::{NormMode, NormRange};
use crate::render::colormap::Colormap;
use crate::render::image::{colorize, RgbImage};
use crate::select::{resolve_volume, Axis, AxisSel, Selection};
use crate::store::AttentionStore;
use crate::upsample::{CoordMapping, Upsampler};
use crate::volume::{Frame, Shape3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub cell_w: usize,
    pub cell_h: usize,
    pub padding: usize,
    pub background: [u8; 3],
}

impl GridSpec {
    /// Layout for `n` cells; `cols` defaults to `ceil(sqrt(n))`.
    pub fn auto(n: usize, cols: Option<usize>, cell_w: usize, cell_h: usize) -> Self {
        let cols = cols.unwrap_or_else(|| default_cols(n)).max(1);
        GridSpec {
            rows: n.div_ceil(cols).max(1),
            cols,
            cell_w,
            cell_h,
            padding: 2,
            background: [0, 0, 0],
        }
    }

    pub fn output_size(&self) -> (usize, usize) {
        (
            self.padding + (self.cell_w + self.padding) * self.cols,
            self.padding + (self.cell_h + self.padding) * self.rows,
        )
    }

    /// Top-left `(x, y)` of the cell at (row, col).
    pub fn cell_origin(&self, row: usize, col: usize) -> (usize, usize) {
        (
            self.padding + (self.cell_w + self.padding) * col,
            self.padding + (self.cell_h + self.padding) * row,
        )
    }

    /// (row, col) of cell `i`.
    pub fn cell_position(&self, i: usize) -> (usize, usize) {
        (i / self.cols, i % self.cols)
    }
}

pub fn default_cols(n: usize) -> usize {
    let mut c = (n as f64).sqrt().ceil() as usize;
    // guard against sqrt rounding for perfect squares
    while c > 1 && (c - 1) * (c - 1) >= n {
        c -= 1;
    }
    c.max(1)
}

/// Places cell `i` at row `i / cols`, column `i % cols`; unused slots keep the background.
pub fn compose_grid(cells: &[RgbImage], spec: &GridSpec) -> Result<RgbImage> {
    if cells.len() > spec.rows * spec.cols {
        return Err(Error::param(format!(
            "{} cells do not fit a {}x{} grid",
            cells.len(),
            spec.rows,
            spec.cols
        )));
    }
    if let Some((i, c)) = cells
        .iter()
        .enumerate()
        .find(|(_, c)| c.width != spec.cell_w || c.height != spec.cell_h)
    {
        return Err(Error::param(format!(
            "cell {i} is {}x{}, grid cells are {}x{}",
            c.width, c.height, spec.cell_w, spec.cell_h
        )));
    }
    let (w, h) = spec.output_size();
    let mut out = RgbImage::filled(w, h, spec.background);
    let row_bytes = spec.cell_w * 3;
    for (i, cell) in cells.iter().enumerate() {
        let (r, c) = spec.cell_position(i);
        let (x0, y0) = spec.cell_origin(r, c);
        for y in 0..spec.cell_h {
            let dst = ((y0 + y) * w + x0) * 3;
            out.pixels[dst..dst + row_bytes].copy_from_slice(&cell.pixels[y * row_bytes..(y + 1) * row_bytes]);
        }
    }
    Ok(out)
}

/// An appendix-style grid: one cell per index of `axis` (columns), optionally
/// repeated for every index of `rows_axis`, all at one output frame.
#[derive(Debug, Clone)]
pub struct GridRequest {
    pub token: usize,
    pub axis: Axis,
    pub rows_axis: Option<Axis>,
    /// Resolution of the axes not laid out in the grid.
    pub fixed: Selection,
    pub frame: usize,
    pub cols: Option<usize>,
    /// Cell size `(width, height)`; defaults to [`default_cell_size`].
    pub cell: Option<(usize, usize)>,
    pub padding: usize,
    pub background: [u8; 3],
    pub norm: NormMode,
    /// One normalization range across all cells instead of one per cell.
    pub shared_norm: bool,
    pub cmap: Colormap,
    pub mapping: CoordMapping,
}

impl GridRequest {
    pub fn new(token: usize, axis: Axis, fixed: Selection) -> Self {
        GridRequest {
            token,
            axis,
            rows_axis: None,
            fixed,
            frame: 0,
            cols: None,
            cell: None,
            padding: 2,
            background: [0, 0, 0],
            norm: NormMode::default(),
            shared_norm: true,
            cmap: Colormap::default(),
            mapping: CoordMapping::default(),
        }
    }

    /// Selections for every cell, in layout order.
    pub fn cell_selections(&self, store: &AttentionStore) -> Result<Vec<Selection>> {
        if self.rows_axis == Some(self.axis) {
            return Err(Error::param("grid row axis must differ from the column axis"));
        }
        let base = Selection {
            token: self.token,
            ..self.fixed
        };
        let mut grid_axes = vec![self.axis];
        grid_axes.extend(self.rows_axis);
        for other in Axis::ALL.into_iter().filter(|a| !grid_axes.contains(a)) {
            if base.get(other) == AxisSel::All {
                return Err(Error::param(format!(
                    "axis {other} is not part of the grid and cannot be \"all\""
                )));
            }
        }
        let mut sels = Vec::new();
        let rows = self.rows_axis.map_or(1, |a| a.len(store));
        for r in 0..rows {
            for c in 0..self.axis.len(store) {
                let mut s = base.with(self.axis, AxisSel::Single(c));
                if let Some(ra) = self.rows_axis {
                    s = s.with(ra, AxisSel::Single(r));
                }
                s.check(store)?;
                sels.push(s);
            }
        }
        Ok(sels)
    }
}

/// Output size divided down (by an integer factor) until the width is at most 256 pixels,
/// never smaller than the latent grid.
pub fn default_cell_size(store: &AttentionStore) -> (usize, usize) {
    let h = store.header();
    let o = h.output_shape;
    let factor = o.width.div_ceil(256).max(1);
    (
        (o.width / factor).max(h.dims.latent_w),
        (o.height / factor).max(h.dims.latent_h),
    )
}

pub fn render_grid(store: &AttentionStore, req: &GridRequest) -> Result<RgbImage> {
    req.norm.check()?;
    let sels = req.cell_selections(store)?;
    let h = store.header();
    let frames = h.output_shape.frames;
    if req.frame >= frames {
        return Err(Error::Bounds {
            axis: "frame",
            index: req.frame,
            len: frames,
        });
    }
    let (cw, ch) = req.cell.unwrap_or_else(|| default_cell_size(store));
    let up = Upsampler::new(h.dims.latent_shape(), Shape3::new(frames, ch, cw), req.mapping)?;

    let cell_frames: Vec<Frame> = sels
        .par_iter()
        .map(|s| {
            let v = resolve_volume(store, s)?;
            up.frame(&v, req.frame)
        })
        .collect::<Result<_>>()?;

    let shared = if req.shared_norm && req.norm != NormMode::PerFrameMinmax {
        Some(NormRange::shared(
            req.norm,
            cell_frames.iter().map(|f| f.values.as_slice()),
        )?)
    } else {
        None
    };
    let cells: Vec<RgbImage> = cell_frames
        .into_par_iter()
        .map(|mut f| {
            let range = match shared {
                Some(r) => r,
                None => NormRange::from_values(req.norm, &f.values)?,
            };
            range.apply_slice(&mut f.values);
            colorize(&f, &req.cmap)
        })
        .collect::<Result<_>>()?;

    let cols = match req.rows_axis {
        Some(_) => req.cols.unwrap_or_else(|| req.axis.len(store)),
        None => req.cols.unwrap_or_else(|| default_cols(cells.len())),
    };
    let mut spec = GridSpec::auto(cells.len(), Some(cols), cw, ch);
    spec.padding = req.padding;
    spec.background = req.background;
    compose_grid(&cells, &spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirty_cells_six_cols() {
        let g = GridSpec::auto(30, Some(6), 4, 4);
        assert_eq!(g.rows, 5);
        assert_eq!(g.cell_position(7), (1, 1));
    }

    #[test]
    fn twenty_five_cells_default_is_square() {
        let g = GridSpec::auto(25, None, 4, 4);
        assert_eq!((g.rows, g.cols), (5, 5));
        assert_eq!(default_cols(30), 6);
        assert_eq!(default_cols(12), 4);
        assert_eq!(default_cols(1), 1);
    }

    #[test]
    fn single_cell_with_padding() {
        let mut cell = RgbImage::filled(4, 4, [9, 9, 9]);
        cell.set_pixel(0, 0, [1, 2, 3]);
        let mut spec = GridSpec::auto(1, None, 4, 4);
        spec.padding = 2;
        spec.background = [200, 200, 200];
        let out = compose_grid(&[cell.clone()], &spec).unwrap();
        assert_eq!((out.width, out.height), (8, 8));
        assert_eq!(out.pixel(2, 2), [1, 2, 3]);
        assert_eq!(out.pixel(0, 0), [200, 200, 200]);
        assert_eq!(out.crop(2, 2, 4, 4).unwrap(), cell);
    }

    #[test]
    fn unused_cells_are_background() {
        let mut spec = GridSpec::auto(3, Some(2), 2, 2);
        spec.background = [7, 7, 7];
        let cells = vec![RgbImage::filled(2, 2, [1, 1, 1]); 3];
        let out = compose_grid(&cells, &spec).unwrap();
        let (x, y) = spec.cell_origin(1, 1);
        assert_eq!(out.crop(x, y, 2, 2).unwrap(), RgbImage::filled(2, 2, [7, 7, 7]));
    }

    #[test]
    fn wrong_cell_size_or_count() {
        let spec = GridSpec::auto(2, Some(2), 2, 2);
        assert!(compose_grid(&[RgbImage::filled(3, 2, [0; 3])], &spec).is_err());
        assert!(compose_grid(&vec![RgbImage::filled(2, 2, [0; 3]); 3], &spec).is_err());
    }
}
