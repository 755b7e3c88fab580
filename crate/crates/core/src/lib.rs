//! Storage, numerics and rendering for cross-attention maps captured from
//! text-to-video diffusion transformers.
//!
//! A dump holds the full `[steps x blocks x heads x tokens x positions]`
//! attention tensor of one generation run. From it, a token's map can be
//! selected or averaged across steps, blocks and heads, upsampled to the
//! output video shape, and rendered as heatmap frames or grids.

pub mod error;
pub mod format;
pub mod normalize;
pub mod reference;
pub mod render;
pub mod select;
pub mod stats;
pub mod store;
pub mod synth;
pub mod upsample;
pub mod validate;
pub mod volume;
pub mod writer;

pub use error::{Error, Result};
pub use format::{CfgBranch, DType, Dims, DumpHeader, Generation, OutputShape, SoftmaxAxis, TokenEntry};
pub use normalize::{normalize_display, NormMode, NormRange};
pub use reference::{reference_attention, Matrix};
pub use select::{resolve, resolve_volume, Axis, AxisSel, Resolved, Selection};
pub use stats::{center_of_mass, entropy, peak, stats_series, Metric, StatValue, StatsSeries};
pub use store::{open_dump, AttentionStore};
pub use synth::{synth_dump, SynthConfig, SynthSpec, Trajectory};
pub use upsample::{upsample_frame, upsample_trilinear, upsample_trilinear_with, CoordMapping};
pub use validate::{validate_dump, validate_dump_with_limit, ValidationReport};
pub use volume::{Frame, LatentVolume, Shape3, Volume};
pub use writer::{write_dump, DumpWriter};
