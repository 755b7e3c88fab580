use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::normalize::{NormMode, NormRange};
use crate::render::colormap::Colormap;
use crate::render::image::{colorize, overlay, RgbImage};
use crate::select::{resolve_volume, Selection};
use crate::store::AttentionStore;
use crate::upsample::{CoordMapping, Upsampler};
use crate::volume::{min_max, LatentVolume, Shape3};

pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct RenderSpec {
    pub norm: NormMode,
    pub cmap: Colormap,
    /// Heatmap weight when blending over base video frames.
    pub alpha: f64,
    /// Output video shape; `None` uses the dump's recorded output shape.
    pub output: Option<Shape3>,
    pub mapping: CoordMapping,
}

impl Default for RenderSpec {
    fn default() -> Self {
        RenderSpec {
            norm: NormMode::default(),
            cmap: Colormap::default(),
            alpha: DEFAULT_ALPHA,
            output: None,
            mapping: CoordMapping::default(),
        }
    }
}

/// A resolved selection ready to render any output frame on demand.
///
/// The normalization range is computed once over the whole upsampled
/// volume, so every frame of a sequence shares one brightness scale.
#[derive(Debug, Clone)]
pub struct PreparedSequence {
    volume: LatentVolume,
    upsampler: Upsampler,
    range: Option<NormRange>,
    norm: NormMode,
    cmap: Colormap,
    alpha: f64,
}

impl PreparedSequence {
    pub fn new(store: &AttentionStore, sel: &Selection, spec: &RenderSpec) -> Result<Self> {
        spec.norm.check()?;
        if !(0.0..=1.0).contains(&spec.alpha) {
            return Err(Error::param(format!("alpha must be in [0, 1], got {}", spec.alpha)));
        }
        let volume = resolve_volume(store, sel)?;
        let target = spec.output.unwrap_or_else(|| store.header().output_shape.shape());
        PreparedSequence::from_volume(volume, target, spec)
    }

    pub fn from_volume(volume: LatentVolume, target: Shape3, spec: &RenderSpec) -> Result<Self> {
        let upsampler = Upsampler::new(volume.shape(), target, spec.mapping)?;
        let range = match spec.norm {
            NormMode::PerFrameMinmax => None,
            NormMode::Fixed { lo, hi } => Some(NormRange { lo, hi }),
            NormMode::GlobalMinmax => {
                let (lo, hi) = (0..target.frames)
                    .into_par_iter()
                    .map(|f| upsampler.frame(&volume, f).map(|fr| min_max(&fr.values)))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (c, d)| {
                        (a.min(c), b.max(d))
                    });
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::param("volume has non-finite values"));
                }
                Some(NormRange { lo, hi })
            }
            NormMode::Percentile { .. } => {
                let full = upsampler.volume(&volume)?;
                Some(NormRange::from_values(spec.norm, full.values())?)
            }
        };
        Ok(PreparedSequence {
            volume,
            upsampler,
            range,
            norm: spec.norm,
            cmap: spec.cmap.clone(),
            alpha: spec.alpha,
        })
    }

    pub fn frames(&self) -> usize {
        self.upsampler.target().frames
    }

    pub fn target(&self) -> Shape3 {
        self.upsampler.target()
    }

    pub fn range(&self) -> Option<NormRange> {
        self.range
    }

    /// Heatmap for output frame `f`, blended over `base` when given.
    pub fn render_frame(&self, f: usize, base: Option<&RgbImage>) -> Result<RgbImage> {
        let mut frame = self.upsampler.frame(&self.volume, f)?;
        let range = match self.range {
            Some(r) => r,
            None => NormRange::from_values(self.norm, &frame.values)?,
        };
        range.apply_slice(&mut frame.values);
        let heat = colorize(&frame, &self.cmap)?;
        match base {
            Some(b) => overlay(b, &heat, self.alpha),
            None => Ok(heat),
        }
    }

    pub fn render_all(&self, base: Option<&[RgbImage]>) -> Result<Vec<RgbImage>> {
        if let Some(b) = base {
            if b.len() != self.frames() {
                return Err(Error::param(format!(
                    "{} base frames supplied for a {}-frame sequence",
                    b.len(),
                    self.frames()
                )));
            }
        }
        (0..self.frames())
            .into_par_iter()
            .map(|f| self.render_frame(f, base.map(|b| &b[f])))
            .collect()
    }
}

/// resolve, upsample to the output shape, normalize, colorize and optionally overlay.
pub fn render_sequence(
    store: &AttentionStore,
    sel: &Selection,
    spec: &RenderSpec,
    base: Option<&[RgbImage]>,
) -> Result<Vec<RgbImage>> {
    PreparedSequence::new(store, sel, spec)?.render_all(base)
}

/// File name for frame `i` of `n`: `{name}_{i}` zero-padded to at least three digits.
pub fn frame_file_name(name: &str, i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len().max(3);
    format!("{name}_{i:0width$}.png")
}

/// Writes one PNG per frame into `dir` and returns the paths in frame order.
pub fn export_png_sequence(frames: &[RgbImage], dir: impl AsRef<Path>, name: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    frames
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let path = dir.join(frame_file_name(name, i, frames.len()));
            img.save_png(&path)?;
            Ok(path)
        })
        .collect()
}

/// Loads every `.png` in `dir`, sorted by file name.
pub fn load_png_sequence(dir: impl AsRef<Path>) -> Result<Vec<RgbImage>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    paths.par_iter().map(RgbImage::load_png).collect()
}
