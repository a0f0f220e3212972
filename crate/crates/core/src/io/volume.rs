use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{data_stem, parse_json, read_file, sibling, write_atomic, FormatError, IoError, Point3};

/// Grid layout shared by scalar and label volumes. Voxel `(x, y, z)` has its
/// center at `origin + (x, y, z) * spacing`; x varies fastest in memory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeGeometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl VolumeGeometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self, IoError> {
        if dims.contains(&0) {
            return Err(IoError::Invalid(format!("dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(IoError::Invalid(format!("spacing must be > 0, got {spacing:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(IoError::Invalid(format!("origin must be finite, got {origin:?}")));
        }
        Ok(Self { dims, spacing, origin })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[0];
        let rest = index / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Point3 {
        Point3::new(
            self.origin[0] + x as f64 * self.spacing[0],
            self.origin[1] + y as f64 * self.spacing[1],
            self.origin[2] + z as f64 * self.spacing[2],
        )
    }

    /// Continuous voxel coordinates of a world point.
    pub fn to_voxel(&self, p: &Point3) -> [f64; 3] {
        [
            (p.x - self.origin[0]) / self.spacing[0],
            (p.y - self.origin[1]) / self.spacing[1],
            (p.z - self.origin[2]) / self.spacing[2],
        ]
    }
}

/// Dense 3D grid of values with physical geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    geometry: VolumeGeometry,
    values: Vec<T>,
}

/// HU volume; the CT stand-in.
pub type ScalarVolume = Volume<f64>;
/// Binary volume (lumen masks).
pub type LabelVolume = Volume<bool>;

impl<T: Clone> Volume<T> {
    pub fn new(geometry: VolumeGeometry, values: Vec<T>) -> Result<Self, IoError> {
        if values.len() != geometry.len() {
            return Err(IoError::Invalid(format!(
                "value count {} does not match dims {:?}",
                values.len(),
                geometry.dims
            )));
        }
        Ok(Self { geometry, values })
    }

    pub fn filled(geometry: VolumeGeometry, value: T) -> Self {
        Self { values: vec![value; geometry.len()], geometry }
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> &T {
        &self.values[self.geometry.index(x, y, z)]
    }

    pub fn map<U, F: FnMut(&T) -> U>(&self, f: F) -> Volume<U> {
        Volume { geometry: self.geometry, values: self.values.iter().map(f).collect() }
    }
}

impl ScalarVolume {
    /// Trilinear interpolation of the eight enclosing voxels. Points outside
    /// the grid take the value at the nearest face.
    pub fn sample_trilinear(&self, p: &Point3) -> f64 {
        self.sample_trilinear_checked(p).0
    }

    /// As [`sample_trilinear`](Self::sample_trilinear), also reporting whether
    /// the point had to be clamped onto the grid.
    pub fn sample_trilinear_checked(&self, p: &Point3) -> (f64, bool) {
        let g = &self.geometry;
        let c = g.to_voxel(p);
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut clamped = false;
        for axis in 0..3 {
            let n = g.dims[axis];
            let hi = (n - 1) as f64;
            let mut v = c[axis];
            if !(v >= 0.0) {
                // also catches NaN
                clamped |= v < -1e-9 || v.is_nan();
                v = 0.0;
            } else if v > hi {
                clamped |= v > hi + 1e-9;
                v = hi;
            }
            if n == 1 {
                base[axis] = 0;
                frac[axis] = 0.0;
            } else {
                let i0 = (v.floor() as usize).min(n - 2);
                base[axis] = i0;
                frac[axis] = v - i0 as f64;
            }
        }
        let step = [usize::from(g.dims[0] > 1), usize::from(g.dims[1] > 1), usize::from(g.dims[2] > 1)];
        let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };
        let at = |dx: usize, dy: usize, dz: usize| {
            *self.get(base[0] + dx * step[0], base[1] + dy * step[1], base[2] + dz * step[2])
        };
        let plane = |dz: usize| {
            let y0 = lerp(at(0, 0, dz), at(1, 0, dz), frac[0]);
            let y1 = lerp(at(0, 1, dz), at(1, 1, dz), frac[0]);
            lerp(y0, y1, frac[1])
        };
        let acc = lerp(plane(0), plane(1), frac[2]);
        (acc, clamped)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Voxel storage type of a raw payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Int16,
    Float32,
    Float64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::Int16 => 2,
            Dtype::Float32 => 4,
            Dtype::Float64 => 8,
        }
    }
}

/// Contents of a `*.vol.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: Dtype,
    pub data: String,
    /// Free-form record of how the volume was produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl VolumeHeader {
    pub fn from_json_slice(bytes: &[u8]) -> Result<Self, FormatError> {
        let header: VolumeHeader = parse_json(bytes)?;
        header.geometry()?;
        check_data_name(&header.data)?;
        Ok(header)
    }

    pub fn geometry(&self) -> Result<VolumeGeometry, FormatError> {
        VolumeGeometry::new(self.dims, self.spacing_mm, self.origin_mm).map_err(|e| match e {
            IoError::Invalid(msg) => FormatError::new("dims/spacing_mm/origin_mm", msg),
            other => FormatError::new("", other.to_string()),
        })
    }

    /// Expected payload size, `None` on arithmetic overflow.
    pub fn payload_len(&self) -> Option<usize> {
        self.dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).and_then(|n| n.checked_mul(self.dtype.size()))
    }

    /// Decode a raw payload against this header. The byte count is checked
    /// before any allocation.
    pub fn decode(&self, raw: &[u8]) -> Result<ScalarVolume, FormatError> {
        let geometry = self.geometry()?;
        let expected = self.payload_len().ok_or_else(|| FormatError::new("dims", "voxel count overflows"))?;
        if raw.len() != expected {
            return Err(FormatError::at(
                "raw payload",
                raw.len().min(expected) as u64,
                format!("expected {expected} bytes, got {}", raw.len()),
            ));
        }
        let values = decode_values(self.dtype, raw, "raw payload")?;
        Ok(Volume { geometry, values })
    }
}

/// Payload references must name a file next to the sidecar.
pub(crate) fn check_data_name(name: &str) -> Result<(), FormatError> {
    if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
        return Err(FormatError::new("data", format!("{name:?} is not a plain file name")));
    }
    Ok(())
}

pub(crate) fn decode_values(dtype: Dtype, raw: &[u8], context: &str) -> Result<Vec<f64>, FormatError> {
    let size = dtype.size();
    if !raw.len().is_multiple_of(size) {
        return Err(FormatError::at(context, raw.len() as u64, "payload is not a whole number of samples"));
    }
    let mut out = Vec::with_capacity(raw.len() / size);
    for (i, chunk) in raw.chunks_exact(size).enumerate() {
        let v = match dtype {
            Dtype::Int16 => i16::from_le_bytes([chunk[0], chunk[1]]) as f64,
            Dtype::Float32 => f32::from_le_bytes(chunk.try_into().unwrap()) as f64,
            Dtype::Float64 => f64::from_le_bytes(chunk.try_into().unwrap()),
        };
        if !v.is_finite() {
            return Err(FormatError::at(context, (i * size) as u64, "non-finite sample"));
        }
        out.push(v);
    }
    Ok(out)
}

pub(crate) fn encode_values(dtype: Dtype, values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.size());
    for &v in values {
        match dtype {
            Dtype::Int16 => {
                let q = v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
            Dtype::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::Float64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

/// Write `vol` as `path` (a `*.vol.json` sidecar) plus a sibling `.raw`.
/// `Int16` rounds to the nearest HU and saturates to the 16-bit range.
pub fn save_volume(path: &Path, vol: &ScalarVolume, dtype: Dtype) -> Result<(), IoError> {
    save_volume_with(path, vol, dtype, None)
}

/// As [`save_volume`], recording `provenance` in the sidecar.
pub fn save_volume_with(
    path: &Path,
    vol: &ScalarVolume,
    dtype: Dtype,
    provenance: Option<serde_json::Value>,
) -> Result<(), IoError> {
    let g = vol.geometry();
    let data = format!("{}.raw", data_stem(path, ".vol.json"));
    let header = VolumeHeader {
        dims: g.dims,
        spacing_mm: g.spacing,
        origin_mm: g.origin,
        dtype,
        data: data.clone(),
        provenance,
    };
    write_atomic(&sibling(path, &data), &encode_values(dtype, vol.values()))?;
    let mut json = serde_json::to_vec_pretty(&header).expect("header serializes");
    json.push(b'\n');
    write_atomic(path, &json)
}

pub fn load_volume(path: &Path) -> Result<ScalarVolume, IoError> {
    let header = VolumeHeader::from_json_slice(&read_file(path)?).map_err(|e| e.in_file(path))?;
    let raw_path = sibling(path, &header.data);
    let raw = read_file(&raw_path)?;
    Ok(header.decode(&raw).map_err(|e| e.in_file(&raw_path))?)
}

pub fn save_label_volume(
    path: &Path,
    mask: &LabelVolume,
    provenance: Option<serde_json::Value>,
) -> Result<(), IoError> {
    save_volume_with(path, &mask.map(|&b| if b { 1.0 } else { 0.0 }), Dtype::Int16, provenance)
}

/// Load a mask stored as a scalar volume; nonzero voxels are set.
pub fn load_label_volume(path: &Path) -> Result<LabelVolume, IoError> {
    Ok(load_volume(path)?.map(|&v| v != 0.0))
}
