//! Multi-channel output head: channel attention, attention weighting,
//! disparity logits, and the bounded logit-to-distance mapping.
//!
//! Forward math only. Weights are supplied externally (file or seeded
//! generator); nothing here trains. Convolutions are same-padded with zero
//! borders, stride 1.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::grid::DistanceMap;
use crate::scalar::Scalar;

const WEIGHTS_MAGIC: [u8; 4] = *b"OWTS";
const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HeadError {
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },
    #[error("empty input list")]
    EmptyInput,
    #[error("scale {scale} map is {width}x{height}, expected {expected_width}x{expected_height}")]
    InconsistentScales {
        scale: u32,
        width: usize,
        height: usize,
        expected_width: usize,
        expected_height: usize,
    },
    #[error("weight file: {0}")]
    WeightFile(String),
    #[error("io failure: {0}")]
    Io(String),
}

/// Planar C x H x W activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<S> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<S>,
}

impl<S: Scalar> FeatureMap<S> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![S::zero(); channels * height * width],
        }
    }

    pub fn from_vec(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<S>,
    ) -> Result<Self, HeadError> {
        if data.len() != channels * height * width {
            return Err(HeadError::ShapeMismatch {
                context: format!(
                    "{} values for {channels}x{height}x{width} feature map",
                    data.len()
                ),
            });
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> S {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: S) {
        self.data[(c * self.height + y) * self.width + x] = value;
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }
}

/// Convolution kernel (out x in x kH x kW) plus per-output bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights<S> {
    out_channels: usize,
    in_channels: usize,
    kernel_height: usize,
    kernel_width: usize,
    kernel: Vec<S>,
    bias: Vec<S>,
}

impl<S: Scalar> ConvWeights<S> {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_height: usize,
        kernel_width: usize,
        kernel: Vec<S>,
        bias: Vec<S>,
    ) -> Result<Self, HeadError> {
        if kernel_height % 2 == 0 || kernel_width % 2 == 0 {
            return Err(HeadError::ShapeMismatch {
                context: format!(
                    "kernel dims must be odd for same padding, got {kernel_height}x{kernel_width}"
                ),
            });
        }
        if kernel.len() != out_channels * in_channels * kernel_height * kernel_width {
            return Err(HeadError::ShapeMismatch {
                context: format!("kernel length {}", kernel.len()),
            });
        }
        if bias.len() != out_channels {
            return Err(HeadError::ShapeMismatch {
                context: format!("bias length {} for {out_channels} outputs", bias.len()),
            });
        }
        Ok(ConvWeights {
            out_channels,
            in_channels,
            kernel_height,
            kernel_width,
            kernel,
            bias,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    #[inline]
    fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> S {
        self.kernel[((o * self.in_channels + i) * self.kernel_height + ky) * self.kernel_width + kx]
    }
}

/// Output mapping parameters: disparity bounds in 1/meters and the metric
/// scaling factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputScale<S> {
    pub depth_scale: S,
    pub d_min: S,
    pub d_max: S,
}

impl<S: Scalar> OutputScale<S> {
    pub fn new(depth_scale: S, d_min: S, d_max: S) -> Result<Self, HeadError> {
        if !(S::zero() < d_min && d_min < d_max) || !(depth_scale > S::zero()) {
            return Err(HeadError::ShapeMismatch {
                context: "require 0 < d_min < d_max and depth_scale > 0".into(),
            });
        }
        Ok(OutputScale {
            depth_scale,
            d_min,
            d_max,
        })
    }

    /// Scaling hook tying the output range to the intrinsics: the mean focal
    /// scale relative to a reference focal length.
    pub fn depth_scale_from_focal(gamma1: S, gamma2: S, reference_focal: S) -> S {
        (gamma1 + gamma2) * S::of(0.5) / reference_focal
    }
}

/// Same-padded stride-1 convolution with zero borders.
pub fn conv2d<S: Scalar>(x: &FeatureMap<S>, w: &ConvWeights<S>) -> Result<FeatureMap<S>, HeadError> {
    if w.in_channels != x.channels {
        return Err(HeadError::ShapeMismatch {
            context: format!(
                "kernel expects {} input channels, feature map has {}",
                w.in_channels, x.channels
            ),
        });
    }
    let pad_y = (w.kernel_height / 2) as isize;
    let pad_x = (w.kernel_width / 2) as isize;
    let mut out = FeatureMap::zeros(w.out_channels, x.height, x.width);
    for o in 0..w.out_channels {
        for y in 0..x.height {
            for px in 0..x.width {
                let mut acc = w.bias[o];
                for i in 0..x.channels {
                    for ky in 0..w.kernel_height {
                        for kx in 0..w.kernel_width {
                            let sy = y as isize + ky as isize - pad_y;
                            let sx = px as isize + kx as isize - pad_x;
                            if sy < 0 || sx < 0 || sy >= x.height as isize || sx >= x.width as isize
                            {
                                continue;
                            }
                            acc += w.weight(o, i, ky, kx) * x.get(i, sy as usize, sx as usize);
                        }
                    }
                }
                out.set(o, y, px, acc);
            }
        }
    }
    Ok(out)
}

#[inline]
pub fn sigmoid<S: Scalar>(z: S) -> S {
    S::one() / (S::one() + (-z).exp())
}

/// Attention weights `A = sigmoid(conv(X))`, same shape as `X`; every value
/// lies strictly in (0, 1).
pub fn channel_attention<S: Scalar>(
    x: &FeatureMap<S>,
    w: &ConvWeights<S>,
) -> Result<FeatureMap<S>, HeadError> {
    if w.out_channels != x.channels {
        return Err(HeadError::ShapeMismatch {
            context: format!(
                "attention conv must preserve channel count ({} != {})",
                w.out_channels, x.channels
            ),
        });
    }
    let mut out = conv2d(x, w)?;
    for v in out.data.iter_mut() {
        *v = sigmoid(*v);
    }
    Ok(out)
}

/// Elementwise weighting `A (*) X`.
pub fn apply_attention<S: Scalar>(
    x: &FeatureMap<S>,
    attention: &FeatureMap<S>,
) -> Result<FeatureMap<S>, HeadError> {
    if x.channels != attention.channels || x.height != attention.height || x.width != attention.width
    {
        return Err(HeadError::ShapeMismatch {
            context: "attention and feature map shapes differ".into(),
        });
    }
    let data = x
        .data
        .iter()
        .zip(&attention.data)
        .map(|(v, a)| *v * *a)
        .collect();
    Ok(FeatureMap {
        channels: x.channels,
        height: x.height,
        width: x.width,
        data,
    })
}

/// Single-channel prediction logits from the weighted features.
pub fn disp_logits<S: Scalar>(
    weighted: &FeatureMap<S>,
    w: &ConvWeights<S>,
) -> Result<FeatureMap<S>, HeadError> {
    if w.out_channels != 1 {
        return Err(HeadError::ShapeMismatch {
            context: format!("disparity conv must output 1 channel, got {}", w.out_channels),
        });
    }
    conv2d(weighted, w)
}

/// Maps logits to bounded disparity and metric distance:
/// `disp = d_min + (d_max - d_min) sigmoid(z)`, `L = depth_scale / disp`.
///
/// `L` is strictly decreasing in the logit and bounded in
/// `[depth_scale / d_max, depth_scale / d_min]`.
pub fn gather_output<S: Scalar>(
    logits: &FeatureMap<S>,
    scale: &OutputScale<S>,
) -> Result<(DistanceMap<S>, DistanceMap<S>), HeadError> {
    if logits.channels != 1 {
        return Err(HeadError::ShapeMismatch {
            context: format!("gather_output expects 1-channel logits, got {}", logits.channels),
        });
    }
    let mut distance = DistanceMap::invalid(logits.width, logits.height);
    let mut disparity = DistanceMap::invalid(logits.width, logits.height);
    for y in 0..logits.height {
        for x in 0..logits.width {
            let disp = scale.d_min + (scale.d_max - scale.d_min) * sigmoid(logits.get(0, y, x));
            disparity.set(x, y, disp);
            distance.set(x, y, scale.depth_scale / disp);
        }
    }
    Ok((distance, disparity))
}

/// Analytic derivative of the logit-to-distance map,
/// `dL/dz = -depth_scale (d_max - d_min) sigmoid'(z) / disp(z)^2`.
pub fn distance_logit_derivative<S: Scalar>(logit: S, scale: &OutputScale<S>) -> S {
    let s = sigmoid(logit);
    let ds = s * (S::one() - s);
    let disp = scale.d_min + (scale.d_max - scale.d_min) * s;
    -scale.depth_scale * (scale.d_max - scale.d_min) * ds / (disp * disp)
}

/// Selects the finest prediction from per-scale outputs.
///
/// `scale_index` counts powers-of-two subsamplings from the finest level;
/// every coarser map must have the dimensions obtained by repeated floor
/// halving of the finest. All scales stay available to loss consumers; the
/// fused inference output is the finest map.
pub fn fuse_multi_scale<S: Scalar>(
    outputs: &[(u32, DistanceMap<S>)],
) -> Result<DistanceMap<S>, HeadError> {
    let Some((finest_scale, finest)) = outputs
        .iter()
        .min_by_key(|(scale, _)| *scale)
        .map(|(s, m)| (*s, m))
    else {
        return Err(HeadError::EmptyInput);
    };
    for (scale, map) in outputs {
        let shift = scale - finest_scale;
        let expected_w = (finest.width() >> shift).max(1);
        let expected_h = (finest.height() >> shift).max(1);
        if map.width() != expected_w || map.height() != expected_h {
            return Err(HeadError::InconsistentScales {
                scale: *scale,
                width: map.width(),
                height: map.height(),
                expected_width: expected_w,
                expected_height: expected_h,
            });
        }
        if outputs.iter().filter(|(s, _)| s == scale).count() > 1 {
            return Err(HeadError::InconsistentScales {
                scale: *scale,
                width: map.width(),
                height: map.height(),
                expected_width: expected_w,
                expected_height: expected_h,
            });
        }
    }
    Ok(finest.clone())
}

/// Named f64 tensors with shapes; the on-disk form of head weights.
pub type TensorMap = BTreeMap<String, (Vec<u32>, Vec<f64>)>;

/// Writes a shape-tagged tensor file: magic, version, tensor count, then for
/// each tensor a name, rank, dims, and little-endian f64 data.
pub fn write_weights(mut w: impl Write, tensors: &TensorMap) -> Result<(), HeadError> {
    let io_err = |e: std::io::Error| HeadError::Io(e.to_string());
    w.write_all(&WEIGHTS_MAGIC).map_err(io_err)?;
    w.write_all(&WEIGHTS_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io_err)?;
    for (name, (dims, data)) in tensors {
        let expected: usize = dims.iter().map(|d| *d as usize).product();
        if expected != data.len() {
            return Err(HeadError::WeightFile(format!(
                "tensor {name}: {} values for shape {:?}",
                data.len(),
                dims
            )));
        }
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes()).map_err(io_err)?;
        w.write_all(name_bytes).map_err(io_err)?;
        w.write_all(&[dims.len() as u8]).map_err(io_err)?;
        for d in dims {
            w.write_all(&d.to_le_bytes()).map_err(io_err)?;
        }
        for v in data {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    Ok(())
}

pub fn read_weights(mut r: impl Read) -> Result<TensorMap, HeadError> {
    let io_err = |e: std::io::Error| HeadError::Io(e.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if magic != WEIGHTS_MAGIC {
        return Err(HeadError::WeightFile("bad magic".into()));
    }
    let mut u32_buf = [0u8; 4];
    r.read_exact(&mut u32_buf).map_err(io_err)?;
    let version = u32::from_le_bytes(u32_buf);
    if version != WEIGHTS_VERSION {
        return Err(HeadError::WeightFile(format!(
            "unsupported version {version}"
        )));
    }
    r.read_exact(&mut u32_buf).map_err(io_err)?;
    let count = u32::from_le_bytes(u32_buf);
    let mut tensors = TensorMap::new();
    for _ in 0..count {
        let mut u16_buf = [0u8; 2];
        r.read_exact(&mut u16_buf).map_err(io_err)?;
        let mut name_bytes = vec![0u8; u16::from_le_bytes(u16_buf) as usize];
        r.read_exact(&mut name_bytes).map_err(io_err)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| HeadError::WeightFile("tensor name is not utf-8".into()))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank).map_err(io_err)?;
        let mut dims = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            r.read_exact(&mut u32_buf).map_err(io_err)?;
            dims.push(u32::from_le_bytes(u32_buf));
        }
        let len: usize = dims.iter().map(|d| *d as usize).product();
        let mut data = Vec::with_capacity(len);
        let mut f64_buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut f64_buf).map_err(io_err)?;
            data.push(f64::from_le_bytes(f64_buf));
        }
        tensors.insert(name, (dims, data));
    }
    Ok(tensors)
}

pub fn load_weights(path: &Path) -> Result<TensorMap, HeadError> {
    let file = std::fs::File::open(path).map_err(|e| HeadError::Io(format!("{}: {e}", path.display())))?;
    read_weights(std::io::BufReader::new(file))
}

pub fn save_weights(path: &Path, tensors: &TensorMap) -> Result<(), HeadError> {
    let mut bytes = Vec::new();
    write_weights(&mut bytes, tensors)?;
    crate::io::atomic_write(path, &bytes).map_err(|e| HeadError::Io(e.to_string()))
}

/// Extracts the `attn.<i>` / `disp.<i>` convolution pair for decoder stage `i`.
pub fn stage_weights(tensors: &TensorMap, stage: u32) -> Result<(ConvWeights<f64>, ConvWeights<f64>), HeadError> {
    let conv = |prefix: &str| -> Result<ConvWeights<f64>, HeadError> {
        let kernel_name = format!("{prefix}.{stage}.kernel");
        let bias_name = format!("{prefix}.{stage}.bias");
        let (kdims, kdata) = tensors
            .get(&kernel_name)
            .ok_or_else(|| HeadError::WeightFile(format!("missing tensor {kernel_name}")))?;
        let (bdims, bdata) = tensors
            .get(&bias_name)
            .ok_or_else(|| HeadError::WeightFile(format!("missing tensor {bias_name}")))?;
        if kdims.len() != 4 || bdims.len() != 1 {
            return Err(HeadError::WeightFile(format!(
                "{kernel_name} must be rank 4 and {bias_name} rank 1"
            )));
        }
        ConvWeights::new(
            kdims[0] as usize,
            kdims[1] as usize,
            kdims[2] as usize,
            kdims[3] as usize,
            kdata.clone(),
            bdata.clone(),
        )
    };
    Ok((conv("attn")?, conv("disp")?))
}

/// Deterministic seeded weights for one decoder stage (test/CLI fixture).
pub fn seeded_stage_weights(
    channels: usize,
    kernel_size: usize,
    seed: u64,
    stage: u32,
) -> TensorMap {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ u64::from(stage).wrapping_mul(0x9e3779b97f4a7c15));
    let scale = 1.0 / (channels * kernel_size * kernel_size) as f64;
    let mut tensors = TensorMap::new();
    let tensor = |dims: Vec<u32>, rng: &mut rand_chacha::ChaCha8Rng| {
        let len: usize = dims.iter().map(|d| *d as usize).product();
        let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        (dims, data)
    };
    let c = channels as u32;
    let k = kernel_size as u32;
    tensors.insert(format!("attn.{stage}.kernel"), tensor(vec![c, c, k, k], &mut rng));
    tensors.insert(format!("attn.{stage}.bias"), tensor(vec![c], &mut rng));
    tensors.insert(format!("disp.{stage}.kernel"), tensor(vec![1, c, k, k], &mut rng));
    tensors.insert(format!("disp.{stage}.bias"), tensor(vec![1], &mut rng));
    tensors
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn random_features(channels: usize, h: usize, w: usize, seed: u64) -> FeatureMap<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..channels * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
        FeatureMap::from_vec(channels, h, w, data).unwrap()
    }

    fn random_conv(out_c: usize, in_c: usize, k: usize, seed: u64) -> ConvWeights<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let kernel = (0..out_c * in_c * k * k).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let bias = (0..out_c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        ConvWeights::new(out_c, in_c, k, k, kernel, bias).unwrap()
    }

    /// Independent nested-loop convolution oracle.
    fn conv_oracle(x: &FeatureMap<f64>, w: &ConvWeights<f64>) -> FeatureMap<f64> {
        let mut out = FeatureMap::zeros(w.out_channels, x.height(), x.width());
        for o in 0..w.out_channels {
            for y in 0..x.height() {
                for px in 0..x.width() {
                    let mut acc = w.bias[o];
                    for i in 0..x.channels() {
                        for ky in 0..w.kernel_height {
                            for kx in 0..w.kernel_width {
                                let sy = y as isize + ky as isize - (w.kernel_height / 2) as isize;
                                let sx = px as isize + kx as isize - (w.kernel_width / 2) as isize;
                                if sy >= 0
                                    && sx >= 0
                                    && (sy as usize) < x.height()
                                    && (sx as usize) < x.width()
                                {
                                    acc += w.weight(o, i, ky, kx) * x.get(i, sy as usize, sx as usize);
                                }
                            }
                        }
                    }
                    out.set(o, y, px, acc);
                }
            }
        }
        out
    }

    #[test]
    fn zero_weights_give_half_attention() {
        let x = random_features(3, 4, 4, 1);
        let w = ConvWeights::new(3, 3, 1, 1, vec![0.0; 9], vec![0.0; 3]).unwrap();
        let a = channel_attention(&x, &w).unwrap();
        assert!(a.data().iter().all(|v| (*v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn large_bias_saturates_attention() {
        let x = random_features(2, 3, 3, 2);
        let w = ConvWeights::new(2, 2, 1, 1, vec![0.0; 4], vec![20.0; 2]).unwrap();
        let a = channel_attention(&x, &w).unwrap();
        assert!(a.data().iter().all(|v| (1.0 - v).abs() < 1e-8 && *v < 1.0));
    }

    #[test]
    fn identity_kernel_attention_is_elementwise_sigmoid() {
        let x: FeatureMap<f64> = FeatureMap::from_vec(1, 2, 2, vec![-1.0, 0.0, 0.5, 3.0]).unwrap();
        let w = ConvWeights::new(1, 1, 1, 1, vec![1.0], vec![0.0]).unwrap();
        let a = channel_attention(&x, &w).unwrap();
        for (out, input) in a.data().iter().zip(x.data()) {
            let expect: f64 = 1.0 / (1.0 + (-input).exp());
            assert_abs_diff_eq!(*out, expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn apply_attention_examples() {
        let x = random_features(2, 3, 5, 3);
        let half = FeatureMap::from_vec(2, 3, 5, vec![0.5; 30]).unwrap();
        let halved = apply_attention(&x, &half).unwrap();
        for (out, input) in halved.data().iter().zip(x.data()) {
            assert_eq!(*out, input / 2.0);
        }
        let ones = FeatureMap::from_vec(2, 3, 5, vec![1.0; 30]).unwrap();
        assert_eq!(apply_attention(&x, &ones).unwrap(), x);

        let wrong = FeatureMap::<f64>::zeros(2, 3, 4);
        assert!(matches!(
            apply_attention(&x, &wrong),
            Err(HeadError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn disp_logits_examples() {
        let x = random_features(3, 4, 4, 4);
        let zero = ConvWeights::new(1, 3, 1, 1, vec![0.0; 3], vec![0.0]).unwrap();
        let logits = disp_logits(&x, &zero).unwrap();
        assert!(logits.data().iter().all(|v| *v == 0.0));

        // 1x1 kernel of ones sums the channels.
        let sum = ConvWeights::new(1, 3, 1, 1, vec![1.0; 3], vec![0.0]).unwrap();
        let logits = disp_logits(&x, &sum).unwrap();
        for y in 0..4 {
            for px in 0..4 {
                let expect = x.get(0, y, px) + x.get(1, y, px) + x.get(2, y, px);
                assert_abs_diff_eq!(logits.get(0, y, px), expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        let x = random_features(4, 8, 8, 5);
        let w = random_conv(1, 4, 3, 6);
        let fast = conv2d(&x, &w).unwrap();
        let slow = conv_oracle(&x, &w);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }
    }

    #[test]
    fn gather_output_midpoint_and_bounds() {
        let scale = OutputScale::new(1.0, 0.01, 10.0).unwrap();
        let logits = FeatureMap::from_vec(1, 1, 1, vec![0.0]).unwrap();
        let (distance, disparity) = gather_output(&logits, &scale).unwrap();
        assert_abs_diff_eq!(disparity.get(0, 0), 5.005, epsilon = 1e-12);
        assert_abs_diff_eq!(distance.get(0, 0), 0.1998001998001998, epsilon = 1e-12);

        // Saturation limit.
        let big = FeatureMap::from_vec(1, 1, 1, vec![60.0]).unwrap();
        let (distance, disparity) = gather_output(&big, &scale).unwrap();
        assert_abs_diff_eq!(disparity.get(0, 0), 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(distance.get(0, 0), 0.1, epsilon = 1e-9);
    }

    #[test]
    fn gather_output_matches_scalar_oracle_and_monotonicity() {
        let scale = OutputScale::new(2.5, 0.05, 4.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut logits: Vec<f64> = (0..64).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let fm = FeatureMap::from_vec(1, 8, 8, logits.clone()).unwrap();
        let (distance, _) = gather_output(&fm, &scale).unwrap();
        for (i, z) in logits.iter().enumerate() {
            let s = 1.0 / (1.0 + (-z).exp());
            let disp = 0.05 + (4.0 - 0.05) * s;
            assert_eq!(distance.get(i % 8, i / 8), 2.5 / disp);
            // Bounds.
            let v = distance.get(i % 8, i / 8);
            assert!(v >= 2.5 / 4.0 - 1e-12 && v <= 2.5 / 0.05 + 1e-12);
        }
        // Strictly decreasing on sorted logits.
        logits.sort_by(f64::total_cmp);
        let fm = FeatureMap::from_vec(1, 8, 8, logits).unwrap();
        let (distance, _) = gather_output(&fm, &scale).unwrap();
        let values = distance.data();
        for pair in values.windows(2) {
            assert!(pair[1] < pair[0]);
        }
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let scale = OutputScale::new(1.7, 0.02, 8.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let distance = |z: f64| {
            let s = 1.0 / (1.0 + (-z).exp());
            1.7 / (0.02 + (8.0 - 0.02) * s)
        };
        for _ in 0..200 {
            let z: f64 = rng.gen_range(-4.0..4.0);
            let h = 1e-6;
            let numeric = (distance(z + h) - distance(z - h)) / (2.0 * h);
            let analytic = distance_logit_derivative(z, &scale);
            assert!(
                ((numeric - analytic) / analytic).abs() < 1e-6,
                "z = {z}: numeric {numeric} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn fuse_multi_scale_rules() {
        let finest = DistanceMap::constant(8, 8, 2.0f64);
        let single = fuse_multi_scale(&[(0, finest.clone())]).unwrap();
        assert_eq!(single, finest);

        let maps = vec![
            (0, finest.clone()),
            (1, DistanceMap::constant(4, 4, 2.1f64)),
            (2, DistanceMap::constant(2, 2, 2.2f64)),
            (3, DistanceMap::constant(1, 1, 2.3f64)),
        ];
        assert_eq!(fuse_multi_scale(&maps).unwrap(), finest);

        assert!(matches!(
            fuse_multi_scale::<f64>(&[]),
            Err(HeadError::EmptyInput)
        ));
        let bad = vec![(0, finest.clone()), (1, DistanceMap::constant(5, 4, 1.0f64))];
        assert!(matches!(
            fuse_multi_scale(&bad),
            Err(HeadError::InconsistentScales { scale: 1, .. })
        ));
    }

    #[test]
    fn full_chain_is_deterministic() {
        let x = random_features(4, 8, 8, 77);
        let tensors = seeded_stage_weights(4, 3, 42, 0);
        let (attn_w, disp_w) = stage_weights(&tensors, 0).unwrap();
        let scale = OutputScale::new(1.0, 0.01, 10.0).unwrap();
        let run = || {
            let a = channel_attention(&x, &attn_w).unwrap();
            let weighted = apply_attention(&x, &a).unwrap();
            let logits = disp_logits(&weighted, &disp_w).unwrap();
            gather_output(&logits, &scale).unwrap().0
        };
        let first = run();
        let second = run();
        assert_eq!(first, second);
        for v in first.data() {
            assert!(v.is_finite());
        }
    }

    #[test]
    fn weights_round_trip_through_file() {
        let tensors = seeded_stage_weights(3, 3, 9, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.weights");
        save_weights(&path, &tensors).unwrap();
        let loaded = load_weights(&path).unwrap();
        assert_eq!(tensors, loaded);
        let (attn_w, disp_w) = stage_weights(&loaded, 2).unwrap();
        assert_eq!(attn_w.out_channels(), 3);
        assert_eq!(disp_w.out_channels(), 1);

        assert!(matches!(
            stage_weights(&loaded, 5),
            Err(HeadError::WeightFile(_))
        ));
    }
}
