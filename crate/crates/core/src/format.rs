//! The `ATTNDMP1` container.
//!
//! ```text
//! magic "ATTNDMP1"            8 bytes
//! header length               u64, little-endian
//! header                      UTF-8 JSON (DumpHeader)
//! checksum table              one CRC32 (u32 LE) per chunk, step-major
//! data                        steps * blocks chunks, step-major
//! ```
//!
//! A chunk holds one cross-attention call: `[head][token][position]` with
//! positions flattened frame-major, then row-major within a frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Shape3;

pub const MAGIC: &[u8; 8] = b"ATTNDMP1";
/// Written in place of [`MAGIC`] until the writer finalizes the file.
pub const PARTIAL_MAGIC: &[u8; 8] = b"ATTNPART";
pub const FORMAT_VERSION: u32 = 1;
/// Magic plus the header length word.
pub const PREAMBLE_LEN: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    #[default]
    F16,
    F32,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F16 => 2,
            DType::F32 => 4,
        }
    }

    /// Appends `value` in this dtype's little-endian encoding.
    pub fn encode_into(self, value: f64, out: &mut Vec<u8>) {
        match self {
            DType::F16 => out.extend_from_slice(&half::f16::from_f64(value).to_le_bytes()),
            DType::F32 => out.extend_from_slice(&(value as f32).to_le_bytes()),
        }
    }

    /// Decodes a packed little-endian run of elements, appending to `out`.
    pub fn decode_into(self, bytes: &[u8], out: &mut Vec<f64>) {
        match self {
            DType::F16 => out.extend(
                bytes
                    .chunks_exact(2)
                    .map(|b| half::f16::from_le_bytes([b[0], b[1]]).to_f64()),
            ),
            DType::F32 => out.extend(
                bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64),
            ),
        }
    }

    /// Value after a round trip through this dtype.
    pub fn quantize(self, value: f64) -> f64 {
        match self {
            DType::F16 => half::f16::from_f64(value).to_f64(),
            DType::F32 => value as f32 as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CfgBranch {
    #[default]
    Cond,
    Uncond,
}

/// Which axis the stored softmax normalizes over, as recorded by the capturing tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftmaxAxis {
    VideoPositions,
    PromptTokens,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenEntry {
    pub index: usize,
    pub text: String,
    pub is_special: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub steps: usize,
    pub blocks: usize,
    pub heads: usize,
    pub tokens: usize,
    pub latent_frames: usize,
    pub latent_h: usize,
    pub latent_w: usize,
}

impl Dims {
    pub fn latent_shape(&self) -> Shape3 {
        Shape3::new(self.latent_frames, self.latent_h, self.latent_w)
    }

    /// Video positions per attention row.
    pub fn positions(&self) -> usize {
        self.latent_frames * self.latent_h * self.latent_w
    }

    pub fn chunk_count(&self) -> usize {
        self.steps * self.blocks
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputShape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl OutputShape {
    pub fn shape(&self) -> Shape3 {
        Shape3::new(self.frames, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub seed: u64,
    pub guidance_scale: f64,
    #[serde(default)]
    pub scheduler_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub version: u32,
    pub model_id: String,
    pub prompt: String,
    #[serde(default)]
    pub negative_prompt: Option<String>,
    pub tokens: Vec<TokenEntry>,
    pub dims: Dims,
    pub output_shape: OutputShape,
    pub dtype: DType,
    pub softmax_applied: bool,
    pub cfg_branch: CfgBranch,
    pub generation: Generation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub softmax_axis: Option<SoftmaxAxis>,
}

impl DumpHeader {
    /// Checks every structural invariant of the header.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::MalformedHeader(msg));
        if self.version != FORMAT_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        let d = &self.dims;
        let named = [
            ("steps", d.steps),
            ("blocks", d.blocks),
            ("heads", d.heads),
            ("tokens", d.tokens),
            ("latent_frames", d.latent_frames),
            ("latent_h", d.latent_h),
            ("latent_w", d.latent_w),
            ("output frames", self.output_shape.frames),
            ("output height", self.output_shape.height),
            ("output width", self.output_shape.width),
        ];
        if let Some((name, _)) = named.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if d.tokens != self.tokens.len() {
            return bad(format!(
                "dims.tokens is {} but {} token entries are listed",
                d.tokens,
                self.tokens.len()
            ));
        }
        if let Some((pos, t)) = self.tokens.iter().enumerate().find(|(i, t)| t.index != *i) {
            return bad(format!(
                "token entry {pos} has index {} (indices must be 0..{})",
                t.index, d.tokens
            ));
        }
        let o = &self.output_shape;
        if d.latent_frames > o.frames || d.latent_h > o.height || d.latent_w > o.width {
            return bad(format!(
                "latent grid {}x{}x{} exceeds output shape {}x{}x{}",
                d.latent_frames, d.latent_h, d.latent_w, o.frames, o.height, o.width
            ));
        }
        if !self.generation.guidance_scale.is_finite() {
            return bad("guidance_scale must be finite".into());
        }
        Ok(())
    }

    pub fn element_size(&self) -> usize {
        self.dtype.size()
    }

    /// Bytes in one attention row (one token's map for one head).
    pub fn row_bytes(&self) -> usize {
        self.dims.positions() * self.element_size()
    }

    /// Bytes in one (step, block) chunk.
    pub fn chunk_bytes(&self) -> usize {
        self.dims.heads * self.dims.tokens * self.row_bytes()
    }

    pub fn data_bytes(&self) -> u64 {
        self.dims.chunk_count() as u64 * self.chunk_bytes() as u64
    }

    pub fn checksum_table_bytes(&self) -> u64 {
        self.dims.chunk_count() as u64 * 4
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("header serialization is infallible")
    }

    /// Expected total file length when the header serializes to `header_len` bytes.
    pub fn file_len(&self, header_len: u64) -> u64 {
        PREAMBLE_LEN + header_len + self.checksum_table_bytes() + self.data_bytes()
    }

    pub fn chunk_index(&self, step: usize, block: usize) -> usize {
        step * self.dims.blocks + block
    }

    /// Offset of row (head, token) inside its chunk.
    pub fn row_offset_in_chunk(&self, head: usize, token: usize) -> usize {
        (head * self.dims.tokens + token) * self.row_bytes()
    }

    /// Index of the first token with this exact text among non-special tokens.
    pub fn find_token(&self, text: &str) -> Result<usize> {
        let hits: Vec<&TokenEntry> = self.tokens.iter().filter(|t| !t.is_special && t.text == text).collect();
        match hits.as_slice() {
            [one] => Ok(one.index),
            [] => Err(Error::param(format!("no non-special token matches {text:?}"))),
            many => Err(Error::param(format!(
                "token text {text:?} is ambiguous; candidates: {}",
                many.iter()
                    .map(|t| format!("#{}", t.index))
                    .collect::<Vec<_>>()
                    .join(", ")
            ))),
        }
    }
}

/// Byte layout of a dump once the header length is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub header_len: u64,
    pub checksum_offset: u64,
    pub data_offset: u64,
    pub chunk_bytes: u64,
    pub row_bytes: u64,
    pub total_len: u64,
}

impl Layout {
    pub fn new(header: &DumpHeader, header_len: u64) -> Self {
        let checksum_offset = PREAMBLE_LEN + header_len;
        let data_offset = checksum_offset + header.checksum_table_bytes();
        Layout {
            header_len,
            checksum_offset,
            data_offset,
            chunk_bytes: header.chunk_bytes() as u64,
            row_bytes: header.row_bytes() as u64,
            total_len: header.file_len(header_len),
        }
    }

    /// Absolute file offset of the row (step, block, head, token).
    pub fn row_offset(&self, header: &DumpHeader, step: usize, block: usize, head: usize, token: usize) -> u64 {
        self.data_offset
            + header.chunk_index(step, block) as u64 * self.chunk_bytes
            + header.row_offset_in_chunk(head, token) as u64
    }
}
