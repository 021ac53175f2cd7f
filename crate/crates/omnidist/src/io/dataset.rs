//! Multi-camera dataset indexing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::grid::ImageGrid;
use crate::pose::{PoseError, Trajectory};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("camera {camera}: missing calibration file {path}")]
    MissingCalibration { camera: String, path: PathBuf },
    #[error("camera {camera}: missing pose file {path}")]
    MissingPoses { camera: String, path: PathBuf },
    #[error("camera {camera}: no pose for frame {frame_id}")]
    MissingPoseForFrame { camera: String, frame_id: u64 },
    #[error("camera {camera}: cannot read image {path}: {reason}")]
    UnreadableImage {
        camera: String,
        path: PathBuf,
        reason: String,
    },
    #[error("camera {camera}: {source}")]
    BadPoses { camera: String, source: PoseError },
    #[error("camera {camera}: bad calibration: {reason}")]
    BadCalibration { camera: String, reason: String },
    #[error("no camera directories under {0}")]
    Empty(PathBuf),
    #[error("io failure under {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// One camera's files, frame lists keyed by id.
#[derive(Debug, Clone)]
pub struct CameraData {
    pub id: String,
    pub calibration_path: PathBuf,
    pub poses_path: PathBuf,
    pub images: BTreeMap<u64, PathBuf>,
    pub ground_truth: BTreeMap<u64, PathBuf>,
    pub vehicle_mask: Option<PathBuf>,
}

/// Validated index of a dataset root.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub cameras: Vec<CameraData>,
}

impl DatasetIndex {
    pub fn camera(&self, id: &str) -> Option<&CameraData> {
        self.cameras.iter().find(|c| c.id == id)
    }
}

fn indexed_files(dir: &Path, extension: &str) -> Result<BTreeMap<u64, PathBuf>, DatasetError> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let entries = std::fs::read_dir(dir).map_err(|source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for entry in entries {
        let entry = entry.map_err(|source| DatasetError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some(extension) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Ok(frame_id) = stem.parse::<u64>() {
            out.insert(frame_id, path);
        }
    }
    Ok(out)
}

/// Scans `<root>/<camera_id>/` directories and validates the invariants:
/// calibration parses, every indexed frame has a pose.
pub fn load_dataset(root: &Path) -> Result<DatasetIndex, DatasetError> {
    let entries = std::fs::read_dir(root).map_err(|source| DatasetError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    let mut camera_dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("images").is_dir())
        .collect();
    camera_dirs.sort();
    if camera_dirs.is_empty() {
        return Err(DatasetError::Empty(root.to_path_buf()));
    }

    let mut cameras = Vec::new();
    for dir in camera_dirs {
        let id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("camera")
            .to_string();
        let calibration_path = dir.join("calib.txt");
        if !calibration_path.is_file() {
            return Err(DatasetError::MissingCalibration {
                camera: id,
                path: calibration_path,
            });
        }
        crate::camera::MeiIntrinsics::<f64>::load(&calibration_path).map_err(|e| {
            DatasetError::BadCalibration {
                camera: id.clone(),
                reason: e.to_string(),
            }
        })?;
        let poses_path = dir.join("poses.txt");
        if !poses_path.is_file() {
            return Err(DatasetError::MissingPoses {
                camera: id,
                path: poses_path,
            });
        }
        let trajectory = Trajectory::<f64>::load(&poses_path).map_err(|source| {
            DatasetError::BadPoses {
                camera: id.clone(),
                source,
            }
        })?;
        let images = indexed_files(&dir.join("images"), "png")?;
        for frame_id in images.keys() {
            if trajectory.world_from_camera(*frame_id).is_err() {
                return Err(DatasetError::MissingPoseForFrame {
                    camera: id,
                    frame_id: *frame_id,
                });
            }
        }
        let ground_truth = indexed_files(&dir.join("gt"), "pfm")?;
        let mask_path = dir.join("mask.png");
        cameras.push(CameraData {
            id,
            calibration_path,
            poses_path,
            images,
            ground_truth,
            vehicle_mask: mask_path.is_file().then_some(mask_path),
        });
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        cameras,
    })
}

/// Loads one indexed frame, mapping decode failures to the dataset error.
pub fn load_frame_image(camera: &CameraData, frame_id: u64) -> Result<ImageGrid, DatasetError> {
    let path = camera
        .images
        .get(&frame_id)
        .ok_or(DatasetError::MissingPoseForFrame {
            camera: camera.id.clone(),
            frame_id,
        })?;
    crate::io::read_image(path).map_err(|e| DatasetError::UnreadableImage {
        camera: camera.id.clone(),
        path: path.clone(),
        reason: e.to_string(),
    })
}
