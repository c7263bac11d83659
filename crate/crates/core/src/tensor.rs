//! Intermediate representations passed between pipeline steps and over the wire.

use thiserror::Error;

/// Default element cap for [`SparseVoxelTensor::densify`].
pub const DEFAULT_DENSE_CAP: usize = 1 << 26;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("coordinate {0:?} appears more than once")]
    DuplicateCoord([i32; 3]),
    #[error("coordinate {coord:?} outside spatial shape {shape:?}")]
    OutOfBounds { coord: [i32; 3], shape: [u32; 3] },
    #[error("dense size {elements} exceeds cap {cap}")]
    Size { elements: usize, cap: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("duplicate bundle entry {0:?}")]
    DuplicateEntry(String),
}

/// Coordinate-indexed voxel features.
///
/// Coordinates are `(d, h, w)` = (z, y, x) grid indices. `features` is stored
/// flat, `channels` values per voxel, parallel to `coords`. The canonical form
/// has unique coordinates sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelTensor {
    pub spatial_shape: [u32; 3],
    pub channels: usize,
    pub coords: Vec<[i32; 3]>,
    pub features: Vec<f32>,
}

impl SparseVoxelTensor {
    pub fn new(
        spatial_shape: [u32; 3],
        channels: usize,
        coords: Vec<[i32; 3]>,
        features: Vec<f32>,
    ) -> Result<Self, TensorError> {
        if features.len() != coords.len() * channels {
            return Err(TensorError::Shape(format!(
                "{} features for {} coords x {} channels",
                features.len(),
                coords.len(),
                channels
            )));
        }
        let t = Self { spatial_shape, channels, coords, features };
        t.check_bounds()?;
        Ok(t)
    }

    pub fn empty(spatial_shape: [u32; 3], channels: usize) -> Self {
        Self { spatial_shape, channels, coords: Vec::new(), features: Vec::new() }
    }

    pub fn nnz(&self) -> usize {
        self.coords.len()
    }

    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    pub fn in_bounds(&self, c: [i32; 3]) -> bool {
        (0..3).all(|a| c[a] >= 0 && (c[a] as i64) < self.spatial_shape[a] as i64)
    }

    fn check_bounds(&self) -> Result<(), TensorError> {
        match self.coords.iter().find(|c| !self.in_bounds(**c)) {
            Some(&coord) => Err(TensorError::OutOfBounds { coord, shape: self.spatial_shape }),
            None => Ok(()),
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.coords.windows(2).all(|w| w[0] < w[1])
    }

    /// Sorts coordinates lexicographically, permuting features in lockstep.
    pub fn to_canonical(self) -> Result<Self, TensorError> {
        self.check_bounds()?;
        if self.is_canonical() {
            return Ok(self);
        }
        let mut order: Vec<usize> = (0..self.coords.len()).collect();
        order.sort_unstable_by_key(|&i| self.coords[i]);
        if let Some(w) = order.windows(2).find(|w| self.coords[w[0]] == self.coords[w[1]]) {
            return Err(TensorError::DuplicateCoord(self.coords[w[0]]));
        }
        let mut coords = Vec::with_capacity(order.len());
        let mut features = Vec::with_capacity(self.features.len());
        for &i in &order {
            coords.push(self.coords[i]);
            features.extend_from_slice(self.feature(i));
        }
        Ok(Self { spatial_shape: self.spatial_shape, channels: self.channels, coords, features })
    }

    pub fn dense_len(&self) -> usize {
        self.channels * self.spatial_shape.iter().map(|&s| s as usize).product::<usize>()
    }

    /// Dense `channels x D x H x W` array, zero wherever no voxel is stored.
    pub fn densify(&self, cap: usize) -> Result<Vec<f32>, TensorError> {
        let elements = self.dense_len();
        if elements > cap {
            return Err(TensorError::Size { elements, cap });
        }
        let [d, h, w] = self.spatial_shape.map(|s| s as usize);
        let plane = d * h * w;
        let mut out = vec![0.0f32; elements];
        for (i, c) in self.coords.iter().enumerate() {
            let cell = (c[0] as usize * h + c[1] as usize) * w + c[2] as usize;
            for (ch, &v) in self.feature(i).iter().enumerate() {
                out[ch * plane + cell] = v;
            }
        }
        Ok(out)
    }

    /// Inverse of [`densify`](Self::densify): keeps every cell with at least
    /// one non-zero channel. Voxels whose features are all zero do not survive
    /// a densify/sparsify round trip.
    pub fn sparsify(spatial_shape: [u32; 3], channels: usize, data: &[f32]) -> Result<Self, TensorError> {
        let [d, h, w] = spatial_shape.map(|s| s as usize);
        let plane = d * h * w;
        if data.len() != plane * channels {
            return Err(TensorError::Shape(format!("dense length {} != {}", data.len(), plane * channels)));
        }
        let mut coords = Vec::new();
        let mut features = Vec::new();
        for cell in 0..plane {
            if (0..channels).any(|ch| data[ch * plane + cell] != 0.0) {
                coords.push([(cell / (h * w)) as i32, ((cell / w) % h) as i32, (cell % w) as i32]);
                features.extend((0..channels).map(|ch| data[ch * plane + cell]));
            }
        }
        Ok(Self { spatial_shape, channels, coords, features })
    }
}

/// Row-major `channels x height x width` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBevTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl DenseBevTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, TensorError> {
        if data.len() != channels * height * width {
            return Err(TensorError::Shape(format!(
                "data length {} != {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn check_finite(&self) -> Result<(), TensorError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite("dense tensor"))
        }
    }
}

/// A 3D box: center, size and heading (meters / radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub center: [f32; 3],
    pub size: [f32; 3],
    pub yaw: f32,
}

impl Box3D {
    pub fn to_array(self) -> [f32; 7] {
        let [cx, cy, cz] = self.center;
        let [dx, dy, dz] = self.size;
        [cx, cy, cz, dx, dy, dz, self.yaw]
    }

    pub fn from_array(a: [f32; 7]) -> Self {
        Self { center: [a[0], a[1], a[2]], size: [a[3], a[4], a[5]], yaw: a[6] }
    }

    /// Axis-aligned bounds `(min, max)`, ignoring yaw.
    pub fn aabb(&self) -> ([f32; 3], [f32; 3]) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            lo[a] = self.center[a] - 0.5 * self.size[a];
            hi[a] = self.center[a] + 0.5 * self.size[a];
        }
        (lo, hi)
    }
}

/// Final detector output. Scores are sorted descending.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Detections {
    pub boxes: Vec<Box3D>,
    pub scores: Vec<f32>,
    pub labels: Vec<u32>,
}

impl Detections {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &Self) -> bool {
        let bits = |d: &Self| -> Vec<u32> {
            d.boxes
                .iter()
                .flat_map(|b| b.to_array())
                .chain(d.scores.iter().copied())
                .map(f32::to_bits)
                .chain(d.labels.iter().copied())
                .collect()
        };
        self.len() == other.len() && bits(self) == bits(other)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorPayload {
    Sparse(SparseVoxelTensor),
    Dense(DenseBevTensor),
}

impl TensorPayload {
    pub fn kind_tag(&self) -> u8 {
        match self {
            TensorPayload::Sparse(_) => 0,
            TensorPayload::Dense(_) => 1,
        }
    }
}

/// Named tensors crossing the link, in pipeline production order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorBundle {
    entries: Vec<(String, TensorPayload)>,
}

impl TensorBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, id: impl Into<String>, payload: TensorPayload) -> Result<(), TensorError> {
        let id = id.into();
        if self.get(&id).is_some() {
            return Err(TensorError::DuplicateEntry(id));
        }
        self.entries.push((id, payload));
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&TensorPayload> {
        self.entries.iter().find(|(k, _)| k == id).map(|(_, v)| v)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn entries(&self) -> &[(String, TensorPayload)] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<(String, TensorPayload)> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
