//! Seeded model weights and their flat binary form.
//!
//! Every parameter is drawn from one [`SplitMix64`] stream, uniform in
//! `[-0.1, 0.1)`, in blob order:
//!
//! 1. conv1..conv4 kernels `[27][in][out]`, each followed by its bias `[out]`
//! 2. backbone2d layers 1 and 2, kernel `[out][in][3][3]` then bias `[out]`
//! 3. dense head `[8][in]` then bias `[8]`
//! 4. RoI scorer `[1][conv2 + conv3 + conv4]` then bias `[1]`
//!
//! The blob is those values as little-endian `f32`, nothing else.

use crate::rng::SplitMix64;

use super::{ArchConfig, DetectorError};

/// Taps of a 3x3x3 kernel, indexed `((dz + 1) * 3 + (dy + 1)) * 3 + (dx + 1)`.
pub const TAPS_3D: usize = 27;
/// Objectness logit followed by seven box residuals.
pub const HEAD_OUTPUTS: usize = 8;

const WEIGHT_SCALE: f32 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv3dWeights {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[TAPS_3D][in][out]`
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv3dWeights {
    pub fn tap(&self, k: usize) -> &[f32] {
        let n = self.in_channels * self.out_channels;
        &self.kernel[k * n..(k + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dWeights {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out][in][3][3]`
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearWeights {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out][in]`
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub seed: u64,
    pub conv3d: [Conv3dWeights; 4],
    pub conv2d: [Conv2dWeights; 2],
    pub dense_head: LinearWeights,
    pub roi_head: LinearWeights,
}

/// Weight tensor sizes in blob order.
fn layout(arch: &ArchConfig) -> Vec<usize> {
    let c = arch.channels;
    let mut sizes = Vec::new();
    for k in 0..4 {
        sizes.push(TAPS_3D * c[k] * c[k + 1]);
        sizes.push(c[k + 1]);
    }
    let b = arch.bev_channels;
    sizes.extend([9 * arch.bev_input_channels() * b, b, 9 * b * b, b]);
    sizes.extend([HEAD_OUTPUTS * b, HEAD_OUTPUTS]);
    sizes.extend([c[2] + c[3] + c[4], 1]);
    sizes
}

impl ModelWeights {
    pub fn init(seed: u64, arch: &ArchConfig) -> Self {
        let mut rng = SplitMix64::new(seed);
        let values: Vec<f32> = (0..layout(arch).iter().sum::<usize>())
            .map(|_| rng.uniform(-WEIGHT_SCALE, WEIGHT_SCALE))
            .collect();
        Self::from_values(seed, arch, &values)
    }

    fn from_values(seed: u64, arch: &ArchConfig, values: &[f32]) -> Self {
        let mut rest = values;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        };
        let c = arch.channels;
        let conv3d = [0, 1, 2, 3].map(|k| Conv3dWeights {
            in_channels: c[k],
            out_channels: c[k + 1],
            kernel: take(TAPS_3D * c[k] * c[k + 1]),
            bias: take(c[k + 1]),
        });
        let b = arch.bev_channels;
        let bev_in = arch.bev_input_channels();
        let conv2d = [(bev_in, b), (b, b)].map(|(i, o)| Conv2dWeights {
            in_channels: i,
            out_channels: o,
            kernel: take(9 * i * o),
            bias: take(o),
        });
        let dense_head = LinearWeights {
            in_features: b,
            out_features: HEAD_OUTPUTS,
            weight: take(HEAD_OUTPUTS * b),
            bias: take(HEAD_OUTPUTS),
        };
        let pooled = c[2] + c[3] + c[4];
        let roi_head = LinearWeights { in_features: pooled, out_features: 1, weight: take(pooled), bias: take(1) };
        Self { seed, conv3d, conv2d, dense_head, roi_head }
    }

    fn values(&self) -> impl Iterator<Item = f32> + '_ {
        let conv3d = self.conv3d.iter().flat_map(|w| w.kernel.iter().chain(&w.bias));
        let conv2d = self.conv2d.iter().flat_map(|w| w.kernel.iter().chain(&w.bias));
        let heads = [&self.dense_head, &self.roi_head].into_iter().flat_map(|w| w.weight.iter().chain(&w.bias));
        conv3d.chain(conv2d).chain(heads).copied()
    }

    pub fn to_blob(&self) -> Vec<u8> {
        self.values().flat_map(f32::to_le_bytes).collect()
    }

    pub fn from_blob(seed: u64, arch: &ArchConfig, blob: &[u8]) -> Result<Self, DetectorError> {
        let expected = layout(arch).iter().sum::<usize>() * 4;
        if blob.len() != expected {
            return Err(DetectorError::Shape(format!("weight blob is {} bytes, expected {expected}", blob.len())));
        }
        let values: Vec<f32> = blob.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DetectorError::Shape("non-finite weight in blob".into()));
        }
        Ok(Self::from_values(seed, arch, &values))
    }

    /// Checks that every tensor matches the widths in `arch`.
    pub fn check_arch(&self, arch: &ArchConfig) -> Result<(), DetectorError> {
        let got: Vec<usize> = {
            let mut v = Vec::new();
            for w in &self.conv3d {
                v.extend([w.kernel.len(), w.bias.len()]);
            }
            for w in &self.conv2d {
                v.extend([w.kernel.len(), w.bias.len()]);
            }
            for w in [&self.dense_head, &self.roi_head] {
                v.extend([w.weight.len(), w.bias.len()]);
            }
            v
        };
        if got != layout(arch) {
            return Err(DetectorError::Shape("weights do not match architecture widths".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_xoshiro::rand_core::{Rng, SeedableRng};

    #[test]
    fn same_seed_same_blob() {
        let arch = ArchConfig::tiny();
        assert_eq!(ModelWeights::init(42, &arch).to_blob(), ModelWeights::init(42, &arch).to_blob());
    }

    #[test]
    fn different_seed_different_blob() {
        let arch = ArchConfig::tiny();
        assert_ne!(ModelWeights::init(42, &arch).to_blob(), ModelWeights::init(43, &arch).to_blob());
    }

    #[test]
    fn first_value_matches_reference_prng() {
        let mut reference = rand_xoshiro::SplitMix64::from_seed(7u64.to_le_bytes());
        let raw = reference.next_u64();
        let expected = -0.1f32 + 0.2f32 * ((raw >> 40) as f32 / 16_777_216.0);
        let w = ModelWeights::init(7, &ArchConfig::tiny());
        assert_eq!(w.conv3d[0].kernel[0].to_bits(), expected.to_bits());
    }

    #[test]
    fn stream_matches_reference_prng() {
        let mut ours = SplitMix64::new(7);
        let mut reference = rand_xoshiro::SplitMix64::from_seed(7u64.to_le_bytes());
        for _ in 0..1000 {
            assert_eq!(ours.next_u64(), reference.next_u64());
        }
    }

    #[test]
    fn blob_round_trip_and_layout() {
        let arch = ArchConfig::tiny();
        let w = ModelWeights::init(3, &arch);
        w.check_arch(&arch).unwrap();
        let blob = w.to_blob();
        assert_eq!(blob.len(), layout(&arch).iter().sum::<usize>() * 4);
        assert_eq!(ModelWeights::from_blob(3, &arch, &blob).unwrap(), w);
        assert!(ModelWeights::from_blob(3, &arch, &blob[1..]).is_err());
        assert!(w.check_arch(&ArchConfig::default()).is_err());
    }

    #[test]
    fn values_in_range() {
        let w = ModelWeights::init(11, &ArchConfig::tiny());
        assert!(w.values().all(|v| (-0.1..0.1).contains(&v)));
    }
}
