#![allow(dead_code)]

use std::path::{Path, PathBuf};

use attnscope_core::format::{CfgBranch, DType, Dims, DumpHeader, Generation, OutputShape, TokenEntry, FORMAT_VERSION};
use attnscope_core::synth::{synth_dump, SynthSpec, Trajectory};

pub fn header(
    steps: usize,
    blocks: usize,
    heads: usize,
    tokens: usize,
    latent: [usize; 3],
    output: [usize; 3],
    dtype: DType,
) -> DumpHeader {
    DumpHeader {
        version: FORMAT_VERSION,
        model_id: "test".into(),
        prompt: "test prompt".into(),
        negative_prompt: Some("blurry".into()),
        tokens: (0..tokens)
            .map(|i| TokenEntry {
                index: i,
                text: format!("w{i}"),
                is_special: false,
            })
            .collect(),
        dims: Dims {
            steps,
            blocks,
            heads,
            tokens,
            latent_frames: latent[0],
            latent_h: latent[1],
            latent_w: latent[2],
        },
        output_shape: OutputShape {
            frames: output[0],
            height: output[1],
            width: output[2],
        },
        dtype,
        softmax_applied: true,
        cfg_branch: CfgBranch::Cond,
        generation: Generation {
            seed: 58,
            guidance_scale: 6.0,
            scheduler_name: Some("unipc".into()),
        },
        softmax_axis: None,
    }
}

/// Every token gets the same blob trajectory.
pub fn blob_spec(header: DumpHeader, trajectory: Trajectory, noise: f64, seed: u64) -> SynthSpec {
    let n = header.dims.tokens;
    SynthSpec {
        header,
        trajectories: vec![Some(trajectory); n],
        noise,
        seed,
    }
}

pub fn synth(dir: &Path, name: &str, spec: &SynthSpec) -> PathBuf {
    synth_dump(dir.join(name), spec).unwrap()
}

/// Linear schedule from `a` to `b` over `n` samples.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Plain sort-based entropy, independent of the library's implementation.
pub fn entropy_oracle(values: &[f64]) -> f64 {
    let total: f64 = values.iter().sum();
    values
        .iter()
        .map(|v| v / total)
        .filter(|p| *p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}
