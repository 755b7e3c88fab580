use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU8, Ordering};

use memmap2::Mmap;

use crate::error::{Error, Result};
use crate::format::{DumpHeader, Layout, MAGIC, PREAMBLE_LEN};
use crate::volume::LatentVolume;

const UNCHECKED: u8 = 0;
const VERIFIED: u8 = 1;
const CORRUPT: u8 = 2;

/// Read-only, memory-mapped view of a dump.
///
/// Chunk checksums are verified the first time a chunk is touched and the
/// verdict is remembered; [`crate::validate::validate_dump`] checks all of
/// them eagerly.
pub struct AttentionStore {
    path: PathBuf,
    header: DumpHeader,
    header_json: Vec<u8>,
    layout: Layout,
    map: Mmap,
    checksums: Vec<u32>,
    chunk_state: Vec<AtomicU8>,
}

pub fn open_dump(path: impl AsRef<Path>) -> Result<AttentionStore> {
    AttentionStore::open(path)
}

impl AttentionStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let io = |e| Error::io(&path, e);
        let mut file = File::open(&path).map_err(io)?;
        let actual = file.metadata().map_err(io)?.len();

        let mut preamble = [0u8; PREAMBLE_LEN as usize];
        if actual < PREAMBLE_LEN {
            let mut found = Vec::new();
            file.read_to_end(&mut found).map_err(io)?;
            return Err(Error::BadMagic { found });
        }
        file.read_exact(&mut preamble).map_err(io)?;
        if &preamble[..8] != MAGIC {
            return Err(Error::BadMagic {
                found: preamble[..8].to_vec(),
            });
        }
        let header_len = u64::from_le_bytes(preamble[8..16].try_into().unwrap());
        if header_len > actual - PREAMBLE_LEN {
            return Err(Error::MalformedHeader(format!(
                "header length {header_len} exceeds remaining file size {}",
                actual - PREAMBLE_LEN
            )));
        }
        let mut header_json = vec![0u8; header_len as usize];
        file.read_exact(&mut header_json).map_err(io)?;
        let header: DumpHeader =
            serde_json::from_slice(&header_json).map_err(|e| Error::MalformedHeader(e.to_string()))?;
        header.validate()?;

        let layout = Layout::new(&header, header_len);
        if layout.total_len != actual {
            return Err(Error::SizeMismatch {
                expected: layout.total_len,
                actual,
            });
        }

        // SAFETY: the mapping is read-only; dumps are treated as immutable
        // while open, as with any memory-mapped tensor file.
        let map = unsafe { Mmap::map(&file) }.map_err(io)?;
        let table = &map[layout.checksum_offset as usize..layout.data_offset as usize];
        let checksums = table
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect::<Vec<_>>();
        let chunk_state = (0..checksums.len()).map(|_| AtomicU8::new(UNCHECKED)).collect();

        Ok(AttentionStore {
            path,
            header,
            header_json,
            layout,
            map,
            checksums,
            chunk_state,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn header(&self) -> &DumpHeader {
        &self.header
    }

    /// Header JSON exactly as stored in the file.
    pub fn header_json(&self) -> &[u8] {
        &self.header_json
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn checksums(&self) -> &[u32] {
        &self.checksums
    }

    pub fn check_indices(&self, token: usize, step: usize, block: usize, head: usize) -> Result<()> {
        let d = &self.header.dims;
        for (axis, index, len) in [
            ("token", token, d.tokens),
            ("step", step, d.steps),
            ("block", block, d.blocks),
            ("head", head, d.heads),
        ] {
            if index >= len {
                return Err(Error::Bounds { axis, index, len });
            }
        }
        Ok(())
    }

    /// Raw bytes of chunk (step, block), without checksum verification.
    pub fn chunk_raw(&self, step: usize, block: usize) -> &[u8] {
        let idx = self.header.chunk_index(step, block);
        let start = self.layout.data_offset + idx as u64 * self.layout.chunk_bytes;
        &self.map[start as usize..(start + self.layout.chunk_bytes) as usize]
    }

    /// Recomputes the chunk CRC and compares it to the table.
    pub fn check_chunk(&self, step: usize, block: usize) -> Result<()> {
        let idx = self.header.chunk_index(step, block);
        let stored = self.checksums[idx];
        let computed = crc32fast::hash(self.chunk_raw(step, block));
        let state = if stored == computed { VERIFIED } else { CORRUPT };
        self.chunk_state[idx].store(state, Ordering::Relaxed);
        if state == VERIFIED {
            Ok(())
        } else {
            Err(Error::Integrity {
                step,
                block,
                stored,
                computed,
            })
        }
    }

    fn ensure_chunk(&self, step: usize, block: usize) -> Result<()> {
        let idx = self.header.chunk_index(step, block);
        match self.chunk_state[idx].load(Ordering::Relaxed) {
            VERIFIED => Ok(()),
            _ => self.check_chunk(step, block),
        }
    }

    /// Raw bytes of one attention row, after verifying its chunk.
    pub fn row_raw(&self, token: usize, step: usize, block: usize, head: usize) -> Result<&[u8]> {
        self.check_indices(token, step, block, head)?;
        self.ensure_chunk(step, block)?;
        let off = self.layout.row_offset(&self.header, step, block, head, token) as usize;
        Ok(&self.map[off..off + self.layout.row_bytes as usize])
    }

    /// Appends the decoded row to `out`. Lets aggregation reuse one buffer.
    pub fn read_row_into(
        &self,
        token: usize,
        step: usize,
        block: usize,
        head: usize,
        out: &mut Vec<f64>,
    ) -> Result<()> {
        let raw = self.row_raw(token, step, block, head)?;
        self.header.dtype.decode_into(raw, out);
        Ok(())
    }

    /// One token's attention map for a single (step, block, head).
    pub fn get_map(&self, token: usize, step: usize, block: usize, head: usize) -> Result<LatentVolume> {
        let mut values = Vec::with_capacity(self.header.dims.positions());
        self.read_row_into(token, step, block, head, &mut values)?;
        LatentVolume::new(self.header.dims.latent_shape(), values)
    }
}

impl std::fmt::Debug for AttentionStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AttentionStore")
            .field("path", &self.path)
            .field("dims", &self.header.dims)
            .field("dtype", &self.header.dtype)
            .finish()
    }
}
