//! EMB1 binary embedding file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! bytes 0..4    magic  b"EMB1"
//! bytes 4..8    u32    version, currently 1
//! bytes 8..12   u32    dim
//! bytes 12..20  u64    count
//! bytes 20..    f32    count * dim values, row-major
//! ```
//!
//! Row `i` starts at byte `20 + i * dim * 4`, so the file is seekable by
//! arithmetic alone and its exact length is implied by the header. A file
//! with count 0 is valid (dim may then be 0). Non-finite values are rejected
//! at read time with the offending row and column.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::vector::Embedding;

const MAGIC: &[u8; 4] = b"EMB1";
const VERSION: u32 = 1;
pub(crate) const HEADER_LEN: u64 = 20;

/// Parsed contents of one EMB1 file.
#[derive(Debug, Clone)]
pub struct EmbeddingFile {
    pub dim: usize,
    pub vectors: Vec<Embedding>,
}

impl EmbeddingFile {
    pub fn count(&self) -> usize {
        self.vectors.len()
    }
}

fn read_header(reader: &mut impl Read, path: &Path) -> Result<(u32, u64)> {
    let mut header = [0u8; HEADER_LEN as usize];
    reader
        .read_exact(&mut header)
        .map_err(|_| Error::format(path, "file shorter than the 20-byte header"))?;
    if &header[0..4] != MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic {:?}, expected \"EMB1\"", &header[0..4]),
        ));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let count = u64::from_le_bytes(header[12..20].try_into().unwrap());
    if count > 0 && dim == 0 {
        return Err(Error::format(path, "dim 0 with nonzero count"));
    }
    Ok((dim, count))
}

/// Reads only the header, returning `(dim, count)`. Used to validate manifest
/// references without loading vector payloads.
pub fn probe_embeddings(path: impl AsRef<Path>) -> Result<(usize, u64)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let (dim, count) = read_header(&mut reader, path)?;
    Ok((dim as usize, count))
}

/// Reads and fully validates an EMB1 file. The payload length must match the
/// header exactly; any non-finite value is a data error naming its row.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingFile> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let actual_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut reader = BufReader::new(file);
    let (dim, count) = read_header(&mut reader, path)?;

    let payload = (count as u128) * (dim as u128) * 4;
    let expected_len = HEADER_LEN as u128 + payload;
    if (actual_len as u128) != expected_len {
        return Err(Error::format(
            path,
            format!(
                "length mismatch: header implies {expected_len} bytes (count {count}, dim {dim}), file has {actual_len}"
            ),
        ));
    }

    let dim = dim as usize;
    let count = count as usize;
    let mut vectors = Vec::with_capacity(count);
    let mut row_buf = vec![0u8; dim * 4];
    for row in 0..count {
        reader
            .read_exact(&mut row_buf)
            .map_err(|e| Error::io(path, e))?;
        let mut values = Vec::with_capacity(dim);
        for (col, chunk) in row_buf.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::data(
                    path,
                    format!("non-finite value {v} at row {row}, column {col}"),
                ));
            }
            values.push(v);
        }
        vectors.push(Embedding::new(values).expect("validated above"));
    }
    Ok(EmbeddingFile { dim, vectors })
}

/// Writes vectors as an EMB1 file. All vectors must share one dimension;
/// empty input writes a valid header-only file with dim 0 and count 0.
/// The write is atomic: a temp file in the target directory is renamed over
/// the destination, so no partial file is ever observable.
pub fn write_embeddings(path: impl AsRef<Path>, vectors: &[Embedding]) -> Result<()> {
    let path = path.as_ref();
    let dim = vectors.first().map(|v| v.dim()).unwrap_or(0);
    for (row, v) in vectors.iter().enumerate() {
        if v.dim() != dim {
            return Err(Error::InvalidArgument(format!(
                "mixed dimensions: row 0 has dim {dim}, row {row} has dim {}",
                v.dim()
            )));
        }
    }

    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match parent {
        Some(dir) => tempfile::NamedTempFile::new_in(dir),
        None => tempfile::NamedTempFile::new_in("."),
    }
    .map_err(|e| Error::io(path, e))?;

    {
        let out = tmp.as_file_mut();
        let mut buf = Vec::with_capacity(HEADER_LEN as usize + vectors.len() * dim * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
        buf.extend_from_slice(&(vectors.len() as u64).to_le_bytes());
        for v in vectors {
            for &x in v.values() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        out.write_all(&buf).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path)
        .map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
