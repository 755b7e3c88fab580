//! Synthetic dumps: Gaussian attention blobs that move and sharpen over
//! diffusion steps. They give every downstream stage a fixture with known
//! ground truth and no model in the loop.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::{
    CfgBranch, DType, Dims, DumpHeader, Generation, OutputShape, SoftmaxAxis, TokenEntry, FORMAT_VERSION,
};
use crate::volume::Shape3;
use crate::writer::DumpWriter;

/// Blob center (latent frame, row, column) and width for every step.
///
/// A single entry is broadcast to all steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub centers: Vec<[f64; 3]>,
    pub sigmas: Vec<f64>,
}

impl Trajectory {
    pub fn fixed(center: [f64; 3], sigma: f64) -> Self {
        Trajectory {
            centers: vec![center],
            sigmas: vec![sigma],
        }
    }

    fn at(&self, step: usize) -> ([f64; 3], f64) {
        let c = self.centers[step.min(self.centers.len() - 1)];
        let s = self.sigmas[step.min(self.sigmas.len() - 1)];
        (c, s)
    }
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub header: DumpHeader,
    /// One entry per token; `None` produces a uniform row (used for special tokens).
    pub trajectories: Vec<Option<Trajectory>>,
    /// Amplitude of the uniform noise added before renormalization, relative to the blob peak.
    pub noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn check(&self) -> Result<()> {
        self.header.validate()?;
        if !self.header.softmax_applied {
            return Err(Error::param("synthetic dumps always hold softmax rows"));
        }
        let d = &self.header.dims;
        if self.trajectories.len() != d.tokens {
            return Err(Error::param(format!(
                "{} trajectories for {} tokens",
                self.trajectories.len(),
                d.tokens
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::param(format!(
                "noise must be finite and >= 0, got {}",
                self.noise
            )));
        }
        for (t, traj) in self.trajectories.iter().enumerate() {
            let Some(traj) = traj else { continue };
            for (name, n) in [("centers", traj.centers.len()), ("sigmas", traj.sigmas.len())] {
                if n != 1 && n != d.steps {
                    return Err(Error::param(format!(
                        "token {t}: {n} {name} for {} steps (need 1 or {})",
                        d.steps, d.steps
                    )));
                }
            }
            if let Some(s) = traj.sigmas.iter().find(|s| !s.is_finite() || **s <= 0.0) {
                return Err(Error::param(format!("token {t}: sigma must be > 0, got {s}")));
            }
            if traj.centers.iter().flatten().any(|c| !c.is_finite()) {
                return Err(Error::param(format!("token {t}: non-finite blob center")));
            }
        }
        Ok(())
    }

    fn rows_per_chunk(&self) -> usize {
        self.header.dims.heads * self.header.dims.tokens
    }

    /// The exact row written for (step, block, head, token), before dtype encoding.
    pub fn row(&self, step: usize, block: usize, head: usize, token: usize) -> Vec<f64> {
        let d = &self.header.dims;
        let chunk = (step * d.blocks + block) as u64;
        let stream = chunk * self.rows_per_chunk() as u64 + (head * d.tokens + token) as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);

        let shape = d.latent_shape();
        let mut row = match &self.trajectories[token] {
            Some(traj) => {
                let (c, sigma) = traj.at(step);
                let wf = axis_weights(shape.frames, c[0], sigma);
                let wy = axis_weights(shape.height, c[1], sigma);
                let wx = axis_weights(shape.width, c[2], sigma);
                let mut v = Vec::with_capacity(shape.len());
                for f in &wf {
                    for y in &wy {
                        let fy = f * y;
                        v.extend(wx.iter().map(|x| fy * x));
                    }
                }
                v
            }
            None => vec![1.0; shape.len()],
        };
        if self.noise > 0.0 {
            for v in &mut row {
                *v += self.noise * rng.gen::<f64>();
            }
        }
        let total: f64 = row.iter().sum();
        for v in &mut row {
            *v /= total;
        }
        row
    }

    fn chunk_bytes(&self, step: usize, block: usize) -> Vec<u8> {
        let d = &self.header.dims;
        let dtype = self.header.dtype;
        let rows: Vec<Vec<u8>> = (0..self.rows_per_chunk())
            .into_par_iter()
            .map(|r| {
                let (head, token) = (r / d.tokens, r % d.tokens);
                let mut out = Vec::with_capacity(self.header.row_bytes());
                for v in self.row(step, block, head, token) {
                    dtype.encode_into(v, &mut out);
                }
                out
            })
            .collect();
        rows.concat()
    }
}

/// Gaussian falloff along one axis, scaled so the nearest voxel weighs 1.
fn axis_weights(len: usize, center: f64, sigma: f64) -> Vec<f64> {
    let d2: Vec<f64> = (0..len).map(|i| (i as f64 - center).powi(2)).collect();
    let nearest = d2.iter().copied().fold(f64::INFINITY, f64::min);
    d2.into_iter()
        .map(|d| (-(d - nearest) / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Generates the dump described by `spec`, streaming one chunk at a time.
pub fn synth_dump(path: impl AsRef<Path>, spec: &SynthSpec) -> Result<PathBuf> {
    spec.check()?;
    let d = spec.header.dims;
    let mut w = DumpWriter::create(path, spec.header.clone())?;
    for step in 0..d.steps {
        for block in 0..d.blocks {
            let bytes = spec.chunk_bytes(step, block);
            w.write_chunk(step, block, &bytes)?;
        }
    }
    w.finish()
}

/// Knobs for the common synthetic fixture: every non-special token gets a
/// blob that drifts left to right across the steps while sigma shrinks
/// linearly from `sigma_start` to `sigma_end`.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub model_id: String,
    pub steps: usize,
    pub blocks: usize,
    pub heads: usize,
    pub latent: Shape3,
    pub output: Shape3,
    pub prompt: String,
    /// Number of `<pad>` tokens appended after the prompt words.
    pub special_tokens: usize,
    pub dtype: DType,
    pub sigma_start: f64,
    pub sigma_end: f64,
    pub noise: f64,
    pub seed: u64,
    pub guidance_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            model_id: "synthetic".into(),
            steps: 25,
            blocks: 30,
            heads: 12,
            latent: Shape3::new(4, 15, 26),
            output: Shape3::new(61, 480, 832),
            prompt: "a cat playing with a soccer ball".into(),
            special_tokens: 1,
            dtype: DType::F16,
            sigma_start: 4.0,
            sigma_end: 1.0,
            noise: 0.01,
            seed: 58,
            guidance_scale: 6.0,
        }
    }
}

impl SynthConfig {
    pub fn header(&self) -> DumpHeader {
        let mut tokens: Vec<TokenEntry> = self
            .prompt
            .split_whitespace()
            .map(|w| TokenEntry {
                index: 0,
                text: w.to_string(),
                is_special: false,
            })
            .collect();
        tokens.extend((0..self.special_tokens).map(|_| TokenEntry {
            index: 0,
            text: "<pad>".into(),
            is_special: true,
        }));
        for (i, t) in tokens.iter_mut().enumerate() {
            t.index = i;
        }
        DumpHeader {
            version: FORMAT_VERSION,
            model_id: self.model_id.clone(),
            prompt: self.prompt.clone(),
            negative_prompt: None,
            dims: Dims {
                steps: self.steps,
                blocks: self.blocks,
                heads: self.heads,
                tokens: tokens.len(),
                latent_frames: self.latent.frames,
                latent_h: self.latent.height,
                latent_w: self.latent.width,
            },
            tokens,
            output_shape: OutputShape {
                frames: self.output.frames,
                height: self.output.height,
                width: self.output.width,
            },
            dtype: self.dtype,
            softmax_applied: true,
            cfg_branch: CfgBranch::Cond,
            generation: Generation {
                seed: self.seed,
                guidance_scale: self.guidance_scale,
                scheduler_name: None,
            },
            softmax_axis: Some(SoftmaxAxis::VideoPositions),
        }
    }

    pub fn spec(&self) -> Result<SynthSpec> {
        if self.steps == 0 {
            return Err(Error::param("steps must be positive"));
        }
        let header = self.header();
        let words = header.tokens.iter().filter(|t| !t.is_special).count();
        let l = self.latent;
        let span = |a: f64, b: f64, s: usize| {
            if self.steps == 1 {
                a
            } else {
                a + (b - a) * s as f64 / (self.steps - 1) as f64
            }
        };
        let trajectories = header
            .tokens
            .iter()
            .map(|t| {
                (!t.is_special).then(|| {
                    let row = (t.index + 1) as f64 / (words + 1) as f64 * (l.height as f64 - 1.0);
                    let w = l.width as f64 - 1.0;
                    Trajectory {
                        centers: (0..self.steps)
                            .map(|s| [(l.frames as f64 - 1.0) / 2.0, row, span(0.2 * w, 0.8 * w, s)])
                            .collect(),
                        sigmas: (0..self.steps)
                            .map(|s| span(self.sigma_start, self.sigma_end, s))
                            .collect(),
                    }
                })
            })
            .collect();
        Ok(SynthSpec {
            header,
            trajectories,
            noise: self.noise,
            seed: self.seed,
        })
    }
}
