//! Raster codecs: PFM float maps, 16-bit PNG distance maps, 8-bit images.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use thiserror::Error;

use crate::grid::{DistanceMap, ImageGrid};

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("unsupported format for {0} (expected .pfm or .png)")]
    UnsupportedFormat(String),
    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: String, reason: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: {message}")]
    Image { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RasterError + '_ {
    move |source| RasterError::Io {
        path: path.display().to_string(),
        message: source.to_string(),
    }
}

/// Scale used by the 16-bit integer distance format: value = meters * 256,
/// covering (0, 255.996] m at ~4 mm quantization.
pub const PNG16_UNITS_PER_METER: f64 = 256.0;

/// Reads a distance map, dispatching on the extension: `.pfm` for the float
/// format (lossless), `.png` for 16-bit integers at 1/256 m per unit.
pub fn read_distance_map(path: &Path) -> Result<DistanceMap<f32>, RasterError> {
    match extension(path) {
        Some("pfm") => read_pfm(path),
        Some("png") => read_png16(path),
        _ => Err(RasterError::UnsupportedFormat(path.display().to_string())),
    }
}

/// Writes a distance map; format chosen by the extension as in
/// [`read_distance_map`]. PFM round-trips bit-exactly; PNG16 quantizes.
pub fn write_distance_map(path: &Path, map: &DistanceMap<f32>) -> Result<(), RasterError> {
    match extension(path) {
        Some("pfm") => write_pfm(path, map),
        Some("png") => write_png16(path, map),
        _ => Err(RasterError::UnsupportedFormat(path.display().to_string())),
    }
}

fn extension(path: &Path) -> Option<&str> {
    path.extension().and_then(|e| e.to_str())
}

/// Grayscale portable float map, little-endian (`Pf`, negative scale),
/// bottom-up row order per the format convention.
fn write_pfm(path: &Path, map: &DistanceMap<f32>) -> Result<(), RasterError> {
    let mut bytes = Vec::with_capacity(32 + map.width() * map.height() * 4);
    bytes.extend_from_slice(format!("Pf\n{} {}\n-1.0\n", map.width(), map.height()).as_bytes());
    for y in (0..map.height()).rev() {
        for x in 0..map.width() {
            bytes.extend_from_slice(&map.get(x, y).to_le_bytes());
        }
    }
    crate::io::atomic_write(path, &bytes).map_err(io_err(path))
}

fn read_pfm(path: &Path) -> Result<DistanceMap<f32>, RasterError> {
    let corrupt = |reason: &str| RasterError::CorruptFile {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    for _ in 0..3 {
        let mut line = String::new();
        reader.read_line(&mut line).map_err(io_err(path))?;
        header.push_str(&line);
    }
    let mut tokens = header.split_whitespace();
    let magic = tokens.next().ok_or_else(|| corrupt("missing magic"))?;
    if magic != "Pf" {
        return Err(corrupt("not a grayscale PFM (magic != Pf)"));
    }
    let width: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| corrupt("bad width"))?;
    let height: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| corrupt("bad height"))?;
    let scale: f64 = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| corrupt("bad scale"))?;
    let little_endian = scale < 0.0;
    let mut data = vec![0u8; width * height * 4];
    reader.read_exact(&mut data).map_err(io_err(path))?;
    if reader.read(&mut [0u8; 1]).map_err(io_err(path))? != 0 {
        return Err(corrupt("trailing bytes"));
    }
    let mut map = DistanceMap::invalid(width, height);
    let mut offset = 0;
    for y in (0..height).rev() {
        for x in 0..width {
            let raw: [u8; 4] = data[offset..offset + 4].try_into().expect("4 bytes");
            let value = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            map.set(x, y, value);
            offset += 4;
        }
    }
    Ok(map)
}

/// 16-bit grayscale PNG at 1/256 m per unit; invalid pixels store zero.
fn write_png16(path: &Path, map: &DistanceMap<f32>) -> Result<(), RasterError> {
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(
        map.width() as u32,
        map.height() as u32,
    );
    for (x, y, px) in img.enumerate_pixels_mut() {
        let value = map.get(x as usize, y as usize);
        let quantized = if value.is_finite() && value > 0.0 {
            (value as f64 * PNG16_UNITS_PER_METER).round().clamp(0.0, 65535.0) as u16
        } else {
            0
        };
        *px = image::Luma([quantized]);
    }
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|source| RasterError::Image {
            path: path.display().to_string(),
            message: source.to_string(),
        })?;
    crate::io::atomic_write(path, &bytes).map_err(io_err(path))
}

fn read_png16(path: &Path) -> Result<DistanceMap<f32>, RasterError> {
    let dynamic = image::open(path).map_err(|source| RasterError::Image {
        path: path.display().to_string(),
        message: source.to_string(),
    })?;
    let img = dynamic.into_luma16();
    let mut map = DistanceMap::invalid(img.width() as usize, img.height() as usize);
    for (x, y, px) in img.enumerate_pixels() {
        let raw = px.0[0];
        if raw > 0 {
            map.set(
                x as usize,
                y as usize,
                (raw as f64 / PNG16_UNITS_PER_METER) as f32,
            );
        }
    }
    Ok(map)
}

/// Loads an 8-bit PNG as intensities in [0, 1] (gray stays single-channel,
/// anything with color becomes RGB; alpha is dropped).
pub fn read_image(path: &Path) -> Result<ImageGrid, RasterError> {
    let dynamic = image::open(path).map_err(|source| RasterError::Image {
        path: path.display().to_string(),
        message: source.to_string(),
    })?;
    let (width, height) = (dynamic.width() as usize, dynamic.height() as usize);
    let grid = match dynamic {
        image::DynamicImage::ImageLuma8(img) => {
            let data = img.into_raw().iter().map(|v| *v as f32 / 255.0).collect();
            ImageGrid::from_vec(width, height, 1, data)
        }
        other => {
            let rgb = other.into_rgb8();
            let data = rgb.into_raw().iter().map(|v| *v as f32 / 255.0).collect();
            ImageGrid::from_vec(width, height, 3, data)
        }
    };
    grid.map_err(|e| RasterError::CorruptFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Writes an image as 8-bit PNG (values rounded from [0, 1]).
pub fn write_image(path: &Path, image: &ImageGrid) -> Result<(), RasterError> {
    let to_byte = |v: f32| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    let mut bytes = Vec::new();
    let cursor = &mut std::io::Cursor::new(&mut bytes);
    let result = if image.channels() == 1 {
        let mut img =
            image::ImageBuffer::<image::Luma<u8>, Vec<u8>>::new(image.width() as u32, image.height() as u32);
        for (x, y, px) in img.enumerate_pixels_mut() {
            *px = image::Luma([to_byte(image.get(x as usize, y as usize, 0))]);
        }
        img.write_to(cursor, image::ImageFormat::Png)
    } else {
        let mut img =
            image::ImageBuffer::<image::Rgb<u8>, Vec<u8>>::new(image.width() as u32, image.height() as u32);
        for (x, y, px) in img.enumerate_pixels_mut() {
            let get = |c| to_byte(image.get(x as usize, y as usize, c));
            *px = image::Rgb([get(0), get(1), get(2)]);
        }
        img.write_to(cursor, image::ImageFormat::Png)
    };
    result.map_err(|source| RasterError::Image {
        path: path.display().to_string(),
        message: source.to_string(),
    })?;
    crate::io::atomic_write(path, &bytes).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_map(w: usize, h: usize, seed: u64) -> DistanceMap<f32> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut map = DistanceMap::invalid(w, h);
        for y in 0..h {
            for x in 0..w {
                map.set(x, y, rng.gen_range(0.31f32..79.0));
            }
        }
        map
    }

    #[test]
    fn pfm_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.pfm");
        let mut map = random_map(13, 7, 1);
        map.set(3, 2, f32::NAN); // invalid pixels survive too
        write_distance_map(&path, &map).unwrap();
        let loaded = read_distance_map(&path).unwrap();
        assert_eq!(map.width(), loaded.width());
        for (a, b) in map.data().iter().zip(loaded.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn png16_quantizes_at_the_documented_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.png");
        let mut map = DistanceMap::invalid(2, 1);
        map.set(0, 0, 4.0); // 1024 units: exactly representable
        map.set(1, 0, 0.997); // not on the grid
        write_distance_map(&path, &map).unwrap();
        let loaded = read_distance_map(&path).unwrap();
        assert_eq!(loaded.get(0, 0), 4.0);
        assert!((loaded.get(1, 0) - 0.997).abs() <= 1.0 / 512.0);
    }

    #[test]
    fn png16_round_trip_error_is_half_quantum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.png");
        let map = random_map(16, 16, 2);
        write_distance_map(&path, &map).unwrap();
        let loaded = read_distance_map(&path).unwrap();
        for (a, b) in map.data().iter().zip(loaded.data()) {
            assert!(
                (a - b).abs() <= 1.0 / 512.0 + 1e-6,
                "quantization error {} too large",
                (a - b).abs()
            );
        }
    }

    #[test]
    fn unsupported_and_corrupt_inputs_error() {
        let dir = tempfile::tempdir().unwrap();
        let map = random_map(2, 2, 3);
        assert!(matches!(
            write_distance_map(&dir.path().join("m.tiff"), &map),
            Err(RasterError::UnsupportedFormat(_))
        ));

        let bad = dir.path().join("bad.pfm");
        std::fs::write(&bad, b"PF\n2 2\n-1.0\nxxxx").unwrap();
        assert!(matches!(
            read_distance_map(&bad),
            Err(RasterError::CorruptFile { .. })
        ));

        let truncated = dir.path().join("short.pfm");
        std::fs::write(&truncated, b"Pf\n4 4\n-1.0\n\x00\x00").unwrap();
        assert!(read_distance_map(&truncated).is_err());
    }

    #[test]
    fn image_round_trip_within_8bit_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut img = ImageGrid::new(5, 4, 3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for y in 0..4 {
            for x in 0..5 {
                for c in 0..3 {
                    img.set(x, y, c, rng.gen_range(0.0..1.0));
                }
            }
        }
        write_image(&path, &img).unwrap();
        let loaded = read_image(&path).unwrap();
        assert_eq!(loaded.channels(), 3);
        for (a, b) in img.data().iter().zip(loaded.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
