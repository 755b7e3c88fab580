use std::fs::File;
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::format::{DumpHeader, Layout, MAGIC, PARTIAL_MAGIC};

/// Streaming writer for `ATTNDMP1` files.
///
/// Chunks must arrive step-major, block-minor. The file carries
/// [`PARTIAL_MAGIC`] until [`DumpWriter::finish`] succeeds, so an aborted
/// capture never looks like a valid dump.
pub struct DumpWriter {
    path: PathBuf,
    file: File,
    header: DumpHeader,
    layout: Layout,
    checksums: Vec<u32>,
    scratch: Vec<u8>,
}

impl DumpWriter {
    pub fn create(path: impl AsRef<Path>, header: DumpHeader) -> Result<Self> {
        header.validate()?;
        let path = path.as_ref().to_path_buf();
        let json = header.to_json_bytes();
        let layout = Layout::new(&header, json.len() as u64);
        let mut file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let io = |e| Error::io(&path, e);
        file.write_all(PARTIAL_MAGIC).map_err(io)?;
        file.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        file.write_all(&json).map_err(io)?;
        file.write_all(&vec![0u8; header.checksum_table_bytes() as usize])
            .map_err(io)?;
        Ok(DumpWriter {
            path,
            file,
            checksums: Vec::with_capacity(header.dims.chunk_count()),
            header,
            layout,
            scratch: Vec::new(),
        })
    }

    pub fn header(&self) -> &DumpHeader {
        &self.header
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// The (step, block) the next chunk must carry, or `None` once complete.
    pub fn next_expected(&self) -> Option<(usize, usize)> {
        let written = self.checksums.len();
        (written < self.header.dims.chunk_count())
            .then(|| (written / self.header.dims.blocks, written % self.header.dims.blocks))
    }

    pub fn write_chunk(&mut self, step: usize, block: usize, bytes: &[u8]) -> Result<()> {
        match self.next_expected() {
            None => {
                return Err(Error::Sequencing(format!(
                    "chunk (step {step}, block {block}) arrived after all {} chunks were written",
                    self.checksums.len()
                )))
            }
            Some(expected) if expected != (step, block) => {
                return Err(Error::Sequencing(format!(
                    "expected chunk (step {}, block {}), got (step {step}, block {block})",
                    expected.0, expected.1
                )))
            }
            Some(_) => {}
        }
        if bytes.len() as u64 != self.layout.chunk_bytes {
            return Err(Error::Format(format!(
                "chunk (step {step}, block {block}) has {} bytes, expected {}",
                bytes.len(),
                self.layout.chunk_bytes
            )));
        }
        self.file.write_all(bytes).map_err(|e| Error::io(&self.path, e))?;
        self.checksums.push(crc32fast::hash(bytes));
        Ok(())
    }

    /// Encodes `values` (laid out `[head][token][position]`) in the header dtype and writes them.
    pub fn write_chunk_values(&mut self, step: usize, block: usize, values: &[f64]) -> Result<()> {
        let mut buf = std::mem::take(&mut self.scratch);
        buf.clear();
        buf.reserve(values.len() * self.header.element_size());
        for &v in values {
            self.header.dtype.encode_into(v, &mut buf);
        }
        let res = self.write_chunk(step, block, &buf);
        self.scratch = buf;
        res
    }

    /// Writes the checksum table and the real magic. Fails if chunks are missing.
    pub fn finish(mut self) -> Result<PathBuf> {
        let total = self.header.dims.chunk_count();
        if self.checksums.len() != total {
            return Err(Error::Sequencing(format!(
                "finalized after {} of {total} chunks",
                self.checksums.len()
            )));
        }
        let table: Vec<u8> = self.checksums.iter().flat_map(|c| c.to_le_bytes()).collect();
        let io = |e| Error::io(&self.path, e);
        self.file
            .seek(SeekFrom::Start(self.layout.checksum_offset))
            .map_err(io)?;
        self.file.write_all(&table).map_err(io)?;
        self.file.seek(SeekFrom::Start(0)).map_err(io)?;
        self.file.write_all(MAGIC).map_err(io)?;
        self.file.sync_all().map_err(io)?;
        Ok(self.path)
    }
}

/// Writes a complete dump from a stream of `(step, block, chunk bytes)`.
pub fn write_dump<I, B>(path: impl AsRef<Path>, header: DumpHeader, chunks: I) -> Result<PathBuf>
where
    I: IntoIterator<Item = (usize, usize, B)>,
    B: AsRef<[u8]>,
{
    let mut w = DumpWriter::create(path, header)?;
    for (s, b, bytes) in chunks {
        w.write_chunk(s, b, bytes.as_ref())?;
    }
    w.finish()
}
