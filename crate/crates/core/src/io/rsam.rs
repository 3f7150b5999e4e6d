//! RSAM binary container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "RSAM"
//! version  u8       1
//! dtype    u8       0 = float32 LE
//! rank     u32
//! dims     rank x u64
//! payload  prod(dims) x f32, row-major
//! trailer  (token files only) u64 sentence count n, then n x u64 token counts
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"RSAM";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RsamHeader {
    pub dims: Vec<u64>,
}

impl RsamHeader {
    pub fn encoded_len(&self) -> u64 {
        4 + 1 + 1 + 4 + 8 * self.dims.len() as u64
    }

    pub fn element_count(&self) -> u64 {
        self.dims.iter().product()
    }
}

/// A decoded RSAM file.
#[derive(Debug, Clone, PartialEq)]
pub struct RsamTensor {
    pub dims: Vec<u64>,
    /// Row-major payload.
    pub data: Vec<f32>,
    pub token_counts: Option<Vec<u64>>,
}

fn ctx(path: &Path) -> String {
    path.display().to_string()
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn read_exact_or_malformed(r: &mut impl Read, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Malformed {
            context: ctx(path),
            reason: format!("truncated {what}"),
        },
        _ => Error::Io(e),
    })
}

fn read_header_from(r: &mut impl Read, path: &Path) -> Result<RsamHeader> {
    let mut magic = [0u8; 4];
    read_exact_or_malformed(r, &mut magic, path, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    let mut fixed = [0u8; 6];
    read_exact_or_malformed(r, &mut fixed, path, "header")?;
    if fixed[0] != VERSION {
        return Err(Error::Malformed {
            context: ctx(path),
            reason: format!("unsupported version {}", fixed[0]),
        });
    }
    if fixed[1] != DTYPE_F32 {
        return Err(Error::Malformed {
            context: ctx(path),
            reason: format!("unsupported dtype code {}", fixed[1]),
        });
    }
    let rank = u32::from_le_bytes(fixed[2..6].try_into().unwrap()) as usize;
    if rank > 8 {
        return Err(Error::Malformed {
            context: ctx(path),
            reason: format!("implausible rank {rank}"),
        });
    }
    let mut dims = Vec::with_capacity(rank);
    let mut word = [0u8; 8];
    for _ in 0..rank {
        read_exact_or_malformed(r, &mut word, path, "dims")?;
        dims.push(u64::from_le_bytes(word));
    }
    Ok(RsamHeader { dims })
}

/// Reads only the header; the payload is left untouched.
pub fn read_header(path: &Path) -> Result<RsamHeader> {
    let mut r = BufReader::new(open(path)?);
    read_header_from(&mut r, path)
}

pub fn read(path: &Path, with_token_trailer: bool) -> Result<RsamTensor> {
    let mut r = BufReader::new(open(path)?);
    let header = read_header_from(&mut r, path)?;
    let count = usize::try_from(header.element_count()).map_err(|_| Error::Malformed {
        context: ctx(path),
        reason: "payload too large".into(),
    })?;
    let mut bytes = vec![0u8; count * 4];
    read_exact_or_malformed(&mut r, &mut bytes, path, "payload")?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut word = [0u8; 8];
    let token_counts = if with_token_trailer {
        read_exact_or_malformed(&mut r, &mut word, path, "token trailer")?;
        let n = u64::from_le_bytes(word) as usize;
        let mut counts = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            read_exact_or_malformed(&mut r, &mut word, path, "token counts")?;
            counts.push(u64::from_le_bytes(word));
        }
        Some(counts)
    } else {
        None
    };

    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Malformed {
            context: ctx(path),
            reason: format!("{} trailing bytes", rest.len()),
        });
    }
    Ok(RsamTensor {
        dims: header.dims,
        data,
        token_counts,
    })
}

pub fn write(path: &Path, tensor: &RsamTensor) -> Result<()> {
    let expected: u64 = tensor.dims.iter().product();
    if expected != tensor.data.len() as u64 {
        return Err(Error::ShapeMismatch {
            context: ctx(path),
            expected: format!("{expected} elements"),
            found: format!("{} elements", tensor.data.len()),
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION, DTYPE_F32])?;
    w.write_all(&(tensor.dims.len() as u32).to_le_bytes())?;
    for d in &tensor.dims {
        w.write_all(&d.to_le_bytes())?;
    }
    for v in &tensor.data {
        w.write_all(&v.to_le_bytes())?;
    }
    if let Some(counts) = &tensor.token_counts {
        w.write_all(&(counts.len() as u64).to_le_bytes())?;
        for c in counts {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}
