//! Little-endian image container: `CPLX`, then u32 version, count, height
//! and width, then `count * h * w` interleaved `(re, im)` f32 pairs.

use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fourier::ComplexTensor;

pub const CONTAINER_MAGIC: [u8; 4] = *b"CPLX";
pub const CONTAINER_VERSION: u32 = 1;
pub const CONTAINER_HEADER_LEN: usize = 20;

/// Equally sized 2-D complex images.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub height: usize,
    pub width: usize,
    pub images: Vec<ComplexTensor>,
}

impl Container {
    pub fn new(images: Vec<ComplexTensor>) -> Result<Self> {
        let (height, width) = images.first().map_or((0, 0), |t| t.plane());
        for (i, t) in images.iter().enumerate() {
            if t.shape() != [height, width] {
                return Err(Error::Shape(format!(
                    "container image {i} is {:?}, expected [{height}, {width}]",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            height,
            width,
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dim = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
        };
        let mut out =
            Vec::with_capacity(CONTAINER_HEADER_LEN + self.len() * self.height * self.width * 8);
        out.extend_from_slice(&CONTAINER_MAGIC);
        for (v, what) in [
            (CONTAINER_VERSION as usize, "version"),
            (self.len(), "count"),
            (self.height, "height"),
            (self.width, "width"),
        ] {
            out.extend_from_slice(&dim(v, what)?.to_le_bytes());
        }
        for z in self.images.iter().flat_map(|t| t.data()) {
            out.extend_from_slice(&(z.re as f32).to_le_bytes());
            out.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CONTAINER_HEADER_LEN {
            return Err(Error::Format(format!(
                "container truncated: {} header bytes",
                bytes.len()
            )));
        }
        if bytes[..4] != CONTAINER_MAGIC {
            return Err(Error::Format("not an image container (bad magic)".into()));
        }
        let word = |i: usize| {
            u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize
        };
        let (version, count, h, w) = (word(0), word(1), word(2), word(3));
        if version != CONTAINER_VERSION as usize {
            return Err(Error::Format(format!(
                "container version {version}, this build reads {CONTAINER_VERSION}"
            )));
        }
        let expected = count
            .checked_mul(h)
            .and_then(|n| n.checked_mul(w))
            .and_then(|n| n.checked_mul(8))
            .and_then(|n| n.checked_add(CONTAINER_HEADER_LEN))
            .ok_or_else(|| Error::Format("container dimensions overflow".into()))?;
        if bytes.len() != expected {
            let what = if bytes.len() < expected {
                "truncated"
            } else {
                "has trailing bytes"
            };
            return Err(Error::Format(format!(
                "container {what}: {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let f = |off: usize| {
            f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes")) as f64
        };
        let images = (0..count)
            .map(|i| {
                let base = CONTAINER_HEADER_LEN + i * h * w * 8;
                let data = (0..h * w)
                    .map(|p| Complex64::new(f(base + 8 * p), f(base + 8 * p + 4)))
                    .collect();
                ComplexTensor::new(vec![h, w], data)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            height: h,
            width: w,
            images,
        })
    }
}

/// Writes `images` atomically. Values are stored as f32.
pub fn write_container(path: impl AsRef<Path>, images: &[ComplexTensor]) -> Result<()> {
    let bytes = Container::new(images.to_vec())?.to_bytes()?;
    crate::io::write_atomic(path, &bytes)
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Vec<ComplexTensor>> {
    Ok(Container::from_bytes(&std::fs::read(path)?)?.images)
}
