//! Heatmap frames, overlays and grid composites.

pub mod colormap;
pub mod grid;
pub mod image;
pub mod sequence;

pub use colormap::{Colormap, DEFAULT_COLORMAP};
pub use grid::{compose_grid, default_cell_size, default_cols, render_grid, GridRequest, GridSpec};
pub use image::{colorize, overlay, RgbImage};
pub use sequence::{
    export_png_sequence, frame_file_name, load_png_sequence, render_sequence, PreparedSequence, RenderSpec,
    DEFAULT_ALPHA,
};
