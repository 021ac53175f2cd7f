//! Dataset layout, raster codecs, configuration, and write plumbing.
//!
//! Directory layout per camera:
//!
//! ```text
//! <root>/<camera_id>/
//!   calib.txt          # key = value intrinsics
//!   poses.txt          # frame_id + 3x4 matrix or quaternion per line
//!   images/NNNNNN.png  # 8-bit grayscale or RGB
//!   mask.png           # optional vehicle mask, 0 = masked out
//!   gt/NNNNNN.pfm      # optional ground-truth distance maps
//! ```

mod config;
mod dataset;
mod raster;

pub use config::{parse_range, ConfigError, ConfigFile};
pub use dataset::{load_dataset, load_frame_image, CameraData, DatasetError, DatasetIndex};
pub use raster::{
    read_distance_map, read_image, write_distance_map, write_image, RasterError,
};

use std::io::Write;
use std::path::Path;

/// Writes a file atomically: the bytes land in a temporary sibling which is
/// renamed over the destination, so interrupted runs never leave truncated
/// artifacts.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut temp = tempfile::NamedTempFile::new_in(dir)?;
    temp.write_all(bytes)?;
    temp.flush()?;
    temp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
