//! Per-camera cache of per-pixel unit ray directions.
//!
//! Unprojection runs two iterative solvers per pixel, so it is computed once
//! per camera at build time and looked up afterwards. The cache stores the
//! exact build-time values; lookups are bit-identical to them.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{UnitVector3, Vector3};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::camera::{MeiIntrinsics, PixelCoord, UnitDirection};

const MAGIC: [u8; 4] = *b"ORAY";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RayTableError {
    #[error("pixel ({u}, {v}) outside table {width}x{height}")]
    OutOfBounds {
        u: usize,
        v: usize,
        width: usize,
        height: usize,
    },
    #[error("table is {width}x{height} but {expected_width}x{expected_height} was expected")]
    DimensionMismatch {
        width: usize,
        height: usize,
        expected_width: usize,
        expected_height: usize,
    },
    #[error("not a ray-table file (bad magic)")]
    BadMagic,
    #[error("unsupported ray-table format version {0} (expected {FORMAT_VERSION})")]
    FormatVersionMismatch(u32),
    #[error("truncated or oversized ray-table file")]
    CorruptFile,
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

/// Dense grid of unit rays sampled at pixel centers `(u + 0.5, v + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RayTable {
    cam_id: u64,
    width: usize,
    height: usize,
    rays: Vec<Vector3<f64>>,
    valid: Vec<bool>,
}

/// Identity token for a calibration: low 8 bytes of the SHA-256 of its
/// canonical text form.
pub fn camera_id(cam: &MeiIntrinsics<f64>) -> u64 {
    content_key(cam.to_file_string().as_bytes())
}

/// Cache key for raw calibration file contents.
pub fn content_key(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl RayTable {
    /// Unprojects every pixel center of `cam`. Solver failures (outside the
    /// valid image region) are recorded in the validity mask, not raised.
    pub fn build(cam: &MeiIntrinsics<f64>) -> RayTable {
        let width = cam.width as usize;
        let height = cam.height as usize;
        let mut rays = Vec::with_capacity(width * height);
        let mut valid = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                let px = PixelCoord::new(u as f64 + 0.5, v as f64 + 0.5);
                match cam.unproject(px) {
                    Ok(dir) => {
                        rays.push(dir.into_inner());
                        valid.push(true);
                    }
                    Err(_) => {
                        rays.push(Vector3::zeros());
                        valid.push(false);
                    }
                }
            }
        }
        RayTable {
            cam_id: camera_id(cam),
            width,
            height,
            rays,
            valid,
        }
    }

    pub fn cam_id(&self) -> u64 {
        self.cam_id
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Stored ray at an integer pixel; `None` where unprojection failed.
    pub fn lookup(&self, u: usize, v: usize) -> Result<Option<UnitDirection<f64>>, RayTableError> {
        if u >= self.width || v >= self.height {
            return Err(RayTableError::OutOfBounds {
                u,
                v,
                width: self.width,
                height: self.height,
            });
        }
        let idx = v * self.width + u;
        Ok(self.valid[idx].then(|| UnitVector3::new_unchecked(self.rays[idx])))
    }

    /// Unchecked fast-path lookup for inner loops.
    #[inline]
    pub fn ray(&self, u: usize, v: usize) -> Option<&Vector3<f64>> {
        let idx = v * self.width + u;
        self.valid[idx].then(|| &self.rays[idx])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Serializes to the versioned little-endian binary layout:
    /// magic, version, cam id, dims, row-major `3 x f64` rays, packed
    /// validity bitmask.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), RayTableError> {
        w.write_all(&MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.cam_id.to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        for ray in &self.rays {
            for c in 0..3 {
                w.write_all(&ray[c].to_le_bytes())?;
            }
        }
        for chunk in self.valid.chunks(8) {
            let mut byte = 0u8;
            for (bit, is_valid) in chunk.iter().enumerate() {
                if *is_valid {
                    byte |= 1 << bit;
                }
            }
            w.write_all(&[byte])?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<RayTable, RayTableError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(RayTableError::BadMagic);
        }
        let mut u32_buf = [0u8; 4];
        r.read_exact(&mut u32_buf)?;
        let version = u32::from_le_bytes(u32_buf);
        if version != FORMAT_VERSION {
            return Err(RayTableError::FormatVersionMismatch(version));
        }
        let mut u64_buf = [0u8; 8];
        r.read_exact(&mut u64_buf)?;
        let cam_id = u64::from_le_bytes(u64_buf);
        r.read_exact(&mut u32_buf)?;
        let width = u32::from_le_bytes(u32_buf) as usize;
        r.read_exact(&mut u32_buf)?;
        let height = u32::from_le_bytes(u32_buf) as usize;
        let count = width
            .checked_mul(height)
            .ok_or(RayTableError::CorruptFile)?;
        let mut rays = Vec::with_capacity(count);
        let mut f64_buf = [0u8; 8];
        for _ in 0..count {
            let mut ray = Vector3::zeros();
            for c in 0..3 {
                r.read_exact(&mut f64_buf)?;
                ray[c] = f64::from_le_bytes(f64_buf);
            }
            rays.push(ray);
        }
        let mut valid = Vec::with_capacity(count);
        let mut byte = [0u8; 1];
        for chunk_start in (0..count).step_by(8) {
            r.read_exact(&mut byte)?;
            for bit in 0..8.min(count - chunk_start) {
                valid.push(byte[0] & (1 << bit) != 0);
            }
        }
        if r.read(&mut byte)? != 0 {
            return Err(RayTableError::CorruptFile);
        }
        Ok(RayTable {
            cam_id,
            width,
            height,
            rays,
            valid,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), RayTableError> {
        let mut bytes = Vec::new();
        self.write_to(&mut bytes)?;
        crate::io::atomic_write(path, &bytes)?;
        Ok(())
    }

    /// Loads a table and checks it against the expected intrinsics.
    pub fn load(path: &Path, expected: &MeiIntrinsics<f64>) -> Result<RayTable, RayTableError> {
        let file = std::fs::File::open(path)?;
        let table = Self::read_from(std::io::BufReader::new(file))?;
        if table.width != expected.width as usize || table.height != expected.height as usize {
            return Err(RayTableError::DimensionMismatch {
                width: table.width,
                height: table.height,
                expected_width: expected.width as usize,
                expected_height: expected.height as usize,
            });
        }
        Ok(table)
    }
}

/// Loads the cached table for `cam` from `cache_dir`, building and persisting
/// it on a miss. The file name is keyed by the canonical calibration hash.
pub fn cached_table(cache_dir: &Path, cam: &MeiIntrinsics<f64>) -> Result<RayTable, RayTableError> {
    cached_table_keyed(cache_dir, cam, camera_id(cam))
}

/// [`cached_table`] with an explicit cache key (e.g. the hash of the raw
/// calibration file contents).
pub fn cached_table_keyed(
    cache_dir: &Path,
    cam: &MeiIntrinsics<f64>,
    key: u64,
) -> Result<RayTable, RayTableError> {
    std::fs::create_dir_all(cache_dir)?;
    let path = cache_dir.join(format!("{key:016x}.raytab"));
    if path.exists() {
        if let Ok(table) = RayTable::load(&path, cam) {
            return Ok(table);
        }
    }
    let table = RayTable::build(cam);
    table.save(&path)?;
    Ok(table)
}
