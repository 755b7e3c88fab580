//! Separable trilinear upsampling from the latent grid to the output video grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Frame, Shape3, Volume};

/// How output sample `i` maps to a source coordinate along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordMapping {
    /// `i * (in - 1) / (out - 1)`; first and last samples land on the source corners.
    #[default]
    EndpointAligned,
    /// `(i + 0.5) * in / out - 0.5`, clamped to the source range.
    CellCentered,
}

impl CoordMapping {
    pub fn source_coord(self, i: usize, input: usize, output: usize) -> f64 {
        let last = (input - 1) as f64;
        match self {
            CoordMapping::EndpointAligned => {
                if output > 1 {
                    i as f64 * last / (output - 1) as f64
                } else {
                    last / 2.0
                }
            }
            CoordMapping::CellCentered => {
                let c = (i as f64 + 0.5) * input as f64 / output as f64 - 0.5;
                c.clamp(0.0, last)
            }
        }
    }
}

/// Precomputed neighbours and weights along one axis.
#[derive(Debug, Clone)]
struct AxisMap {
    lo: Vec<usize>,
    hi: Vec<usize>,
    w: Vec<f64>,
}

impl AxisMap {
    fn new(input: usize, output: usize, mapping: CoordMapping) -> Self {
        let mut m = AxisMap {
            lo: Vec::with_capacity(output),
            hi: Vec::with_capacity(output),
            w: Vec::with_capacity(output),
        };
        for i in 0..output {
            let c = mapping.source_coord(i, input, output);
            let lo = (c.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            m.lo.push(lo);
            m.hi.push(hi);
            m.w.push(if hi == lo { 0.0 } else { c - lo as f64 });
        }
        m
    }
}

/// `a + w * (b - a)`: exact when `a == b`, so constants survive untouched.
#[inline]
fn lerp(a: f64, b: f64, w: f64) -> f64 {
    a + w * (b - a)
}

#[derive(Debug, Clone)]
pub struct Upsampler {
    source: Shape3,
    target: Shape3,
    t: AxisMap,
    y: AxisMap,
    x: AxisMap,
}

impl Upsampler {
    pub fn new(source: Shape3, target: Shape3, mapping: CoordMapping) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::param("cannot upsample an empty grid"));
        }
        if target.frames < source.frames || target.height < source.height || target.width < source.width {
            return Err(Error::param(format!(
                "target {target} is smaller than source {source} on some axis (downsampling unsupported)"
            )));
        }
        Ok(Upsampler {
            source,
            target,
            t: AxisMap::new(source.frames, target.frames, mapping),
            y: AxisMap::new(source.height, target.height, mapping),
            x: AxisMap::new(source.width, target.width, mapping),
        })
    }

    pub fn target(&self) -> Shape3 {
        self.target
    }

    fn check_source(&self, v: &Volume) -> Result<()> {
        if v.shape() != self.source {
            return Err(Error::param(format!(
                "volume is {}, upsampler expects {}",
                v.shape(),
                self.source
            )));
        }
        Ok(())
    }

    /// Writes output frame `f` into `out` (length `target.height * target.width`).
    fn frame_into(&self, v: &Volume, f: usize, out: &mut [f64]) {
        let s = self.source;
        let (a, b, wt) = (self.t.lo[f], self.t.hi[f], self.t.w[f]);
        let fa = v.frame(a);
        let fb = v.frame(b);
        let blended: Vec<f64> = fa.iter().zip(fb).map(|(p, q)| lerp(*p, *q, wt)).collect();

        let tw = self.target.width;
        let mut rows = vec![0.0; s.height * tw];
        for yi in 0..s.height {
            let src = &blended[yi * s.width..(yi + 1) * s.width];
            let dst = &mut rows[yi * tw..(yi + 1) * tw];
            for (xo, d) in dst.iter_mut().enumerate() {
                let w = self.x.w[xo];
                *d = lerp(src[self.x.lo[xo]], src[self.x.hi[xo]], w);
            }
        }
        for (yo, dst) in out.chunks_exact_mut(tw).enumerate() {
            let w = self.y.w[yo];
            let r0 = &rows[self.y.lo[yo] * tw..(self.y.lo[yo] + 1) * tw];
            let r1 = &rows[self.y.hi[yo] * tw..(self.y.hi[yo] + 1) * tw];
            for ((d, p), q) in dst.iter_mut().zip(r0).zip(r1) {
                *d = lerp(*p, *q, w);
            }
        }
    }

    pub fn frame(&self, v: &Volume, f: usize) -> Result<Frame> {
        self.check_source(v)?;
        if f >= self.target.frames {
            return Err(Error::Bounds {
                axis: "frame",
                index: f,
                len: self.target.frames,
            });
        }
        let mut out = vec![0.0; self.target.frame_len()];
        self.frame_into(v, f, &mut out);
        Frame::new(self.target.height, self.target.width, out)
    }

    pub fn volume(&self, v: &Volume) -> Result<Volume> {
        self.check_source(v)?;
        let mut out = vec![0.0; self.target.len()];
        out.par_chunks_mut(self.target.frame_len())
            .enumerate()
            .for_each(|(f, dst)| self.frame_into(v, f, dst));
        Volume::new(self.target, out)
    }
}

/// Upsamples `v` to `target` with endpoint-aligned coordinates.
pub fn upsample_trilinear(v: &Volume, target: Shape3) -> Result<Volume> {
    Upsampler::new(v.shape(), target, CoordMapping::EndpointAligned)?.volume(v)
}

pub fn upsample_trilinear_with(v: &Volume, target: Shape3, mapping: CoordMapping) -> Result<Volume> {
    Upsampler::new(v.shape(), target, mapping)?.volume(v)
}

/// Only output frame `frame` of [`upsample_trilinear_with`], without materializing the rest.
pub fn upsample_frame(v: &Volume, target: Shape3, frame: usize, mapping: CoordMapping) -> Result<Frame> {
    Upsampler::new(v.shape(), target, mapping)?.frame(v, frame)
}
