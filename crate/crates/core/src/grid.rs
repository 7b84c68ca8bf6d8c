//! N-dimensional rectilinear grids holding sampled value functions, with
//! multilinear interpolation, interpolated node gradients, and a compact
//! binary persistence format.
//!
//! Periodic dimensions wrap; queries outside a non-periodic dimension clamp
//! to the boundary, so a lookup always returns a (conservative) value even
//! when the closed loop drifts past the tabulated domain.

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

/// Grids are stored flat; dimensions beyond this are out of scope.
pub const MAX_DIM: usize = 8;

const MAGIC: &[u8; 4] = b"HJVF";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("query has {got} coordinates, grid has {expected} dimensions")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid grid: {0}")]
    InvalidSpec(String),
    #[error("value array has {got} entries, grid has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at node {0}")]
    NonFinite(usize),
    #[error("bad magic bytes, not a value-function file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated")]
    Truncated,
    #[error("payload checksum mismatch")]
    ChecksumMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("metadata sidecar: {0}")]
    Meta(#[from] serde_json::Error),
}

/// One grid dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridDim {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub periodic: bool,
}

impl GridDim {
    pub fn linear(lo: f64, hi: f64, count: usize) -> Self {
        Self { lo, hi, count, periodic: false }
    }

    pub fn periodic(lo: f64, hi: f64, count: usize) -> Self {
        Self { lo, hi, count, periodic: true }
    }

    /// Node spacing. Periodic dimensions do not store the duplicate endpoint,
    /// so their spacing divides by `count` instead of `count - 1`.
    pub fn spacing(&self) -> f64 {
        if self.periodic {
            (self.hi - self.lo) / self.count as f64
        } else {
            (self.hi - self.lo) / (self.count - 1) as f64
        }
    }

    pub fn coord(&self, idx: usize) -> f64 {
        self.lo + self.spacing() * idx as f64
    }
}

/// A rectilinear grid specification: per-dimension extents and node counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dims: Vec<GridDim>,
}

impl GridSpec {
    pub fn new(dims: Vec<GridDim>) -> Result<Self, GridError> {
        if dims.is_empty() || dims.len() > MAX_DIM {
            return Err(GridError::InvalidSpec(format!(
                "need between 1 and {MAX_DIM} dimensions, got {}",
                dims.len()
            )));
        }
        for (j, d) in dims.iter().enumerate() {
            if !(d.lo < d.hi) || !d.lo.is_finite() || !d.hi.is_finite() {
                return Err(GridError::InvalidSpec(format!("dimension {j}: need lo < hi, got [{}, {}]", d.lo, d.hi)));
            }
            if d.count < 2 {
                return Err(GridError::InvalidSpec(format!("dimension {j}: need at least 2 nodes, got {}", d.count)));
            }
        }
        Ok(Self { dims })
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[GridDim] {
        &self.dims
    }

    pub fn node_count(&self) -> usize {
        self.dims.iter().map(|d| d.count).product()
    }

    /// Row-major strides (last dimension contiguous).
    pub fn strides(&self) -> Vec<usize> {
        let n = self.ndim();
        let mut s = vec![1usize; n];
        for j in (0..n - 1).rev() {
            s[j] = s[j + 1] * self.dims[j + 1].count;
        }
        s
    }

    /// Multi-index of a flat node index.
    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        let strides = self.strides();
        for j in 0..self.ndim() {
            out[j] = flat / strides[j];
            flat %= strides[j];
        }
    }

    /// Coordinates of a flat node index.
    pub fn node_coords(&self, flat: usize, out: &mut [f64]) {
        let mut idx = [0usize; MAX_DIM];
        self.unravel(flat, &mut idx[..self.ndim()]);
        for j in 0..self.ndim() {
            out[j] = self.dims[j].coord(idx[j]);
        }
    }
}

/// Descriptive metadata carried alongside a value function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VfMeta {
    /// Identifier of the game model that produced the values.
    pub model: String,
    /// Failure radius of the model (m).
    pub r_s: f64,
    /// Game horizon the sweep covered (s).
    pub horizon: f64,
    /// Ego input box, `(lo, hi)` per input.
    pub ego_bounds: Vec<(f64, f64)>,
    /// Disturbance input box; empty when the model has no opponent input.
    pub disturbance_bounds: Vec<(f64, f64)>,
}

impl VfMeta {
    pub fn unspecified() -> Self {
        Self { model: "unspecified".into(), r_s: 0.0, horizon: 0.0, ego_bounds: vec![], disturbance_bounds: vec![] }
    }
}

/// Per-dimension cell localization of a query point.
#[derive(Clone, Copy, Default)]
struct Loc {
    i0: usize,
    /// Flat-index offset from i0's node to the upper node (handles wrap).
    step: isize,
    frac: f64,
}

/// A gridded scalar field with interpolation and gradient queries.
///
/// Immutable after construction, so shared references can be queried from
/// any number of threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    spec: GridSpec,
    values: Vec<f64>,
    meta: VfMeta,
    strides: Vec<usize>,
}

impl ValueFunction {
    pub fn new(spec: GridSpec, values: Vec<f64>, meta: VfMeta) -> Result<Self, GridError> {
        if values.len() != spec.node_count() {
            return Err(GridError::LengthMismatch { expected: spec.node_count(), got: values.len() });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(bad));
        }
        let strides = spec.strides();
        Ok(Self { spec, values, meta, strides })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn meta(&self) -> &VfMeta {
        &self.meta
    }

    pub fn ndim(&self) -> usize {
        self.spec.ndim()
    }

    /// True if any coordinate of `x` lies outside a non-periodic dimension
    /// (such a query is answered with the clamped boundary value).
    pub fn clamps(&self, x: &[f64]) -> bool {
        self.spec.dims().iter().zip(x).any(|(d, &c)| !d.periodic && (c < d.lo || c > d.hi))
    }

    fn locate(&self, x: &[f64], locs: &mut [Loc]) -> Result<(), GridError> {
        let n = self.spec.ndim();
        if x.len() != n {
            return Err(GridError::DimensionMismatch { expected: n, got: x.len() });
        }
        for j in 0..n {
            let d = self.spec.dims[j];
            let h = d.spacing();
            let stride = self.strides[j] as isize;
            locs[j] = if d.periodic {
                let span = d.hi - d.lo;
                let u = (x[j] - d.lo).rem_euclid(span) / h;
                let mut i = u.floor() as usize;
                if i >= d.count {
                    i = d.count - 1;
                }
                let upper = (i + 1) % d.count;
                Loc { i0: i, step: (upper as isize - i as isize) * stride, frac: (u - i as f64).clamp(0.0, 1.0) }
            } else {
                let c = x[j].clamp(d.lo, d.hi);
                let u = (c - d.lo) / h;
                let i = (u.floor() as usize).min(d.count - 2);
                Loc { i0: i, step: stride, frac: (u - i as f64).clamp(0.0, 1.0) }
            };
        }
        Ok(())
    }

    /// Multilinear interpolation at `x`.
    pub fn interpolate(&self, x: &[f64]) -> Result<f64, GridError> {
        let n = self.spec.ndim();
        let mut locs = [Loc::default(); MAX_DIM];
        self.locate(x, &mut locs[..n])?;
        let base: usize = (0..n).map(|j| locs[j].i0 * self.strides[j]).sum();
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut at = base as isize;
            for j in 0..n {
                if corner >> j & 1 == 1 {
                    w *= locs[j].frac;
                    at += locs[j].step;
                } else {
                    w *= 1.0 - locs[j].frac;
                }
            }
            if w != 0.0 {
                acc += w * self.values[at as usize];
            }
        }
        Ok(acc)
    }

    /// Finite-difference gradient at node `idx` along dimension `j`:
    /// central in the interior and across periodic seams, one-sided at
    /// non-periodic boundaries.
    fn node_gradient(&self, flat: usize, i: usize, j: usize) -> f64 {
        let d = self.spec.dims[j];
        let h = d.spacing();
        let s = self.strides[j];
        if d.periodic {
            let up = if i + 1 < d.count { flat + s } else { flat + s - s * d.count };
            let dn = if i > 0 { flat - s } else { flat + s * (d.count - 1) };
            (self.values[up] - self.values[dn]) / (2.0 * h)
        } else if i == 0 {
            (self.values[flat + s] - self.values[flat]) / h
        } else if i + 1 == d.count {
            (self.values[flat] - self.values[flat - s]) / h
        } else {
            (self.values[flat + s] - self.values[flat - s]) / (2.0 * h)
        }
    }

    /// Node-stencil gradients multilinearly interpolated at `x`, written to `out`.
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), GridError> {
        let n = self.spec.ndim();
        if out.len() != n {
            return Err(GridError::DimensionMismatch { expected: n, got: out.len() });
        }
        let mut locs = [Loc::default(); MAX_DIM];
        self.locate(x, &mut locs[..n])?;
        out.fill(0.0);
        let base: usize = (0..n).map(|j| locs[j].i0 * self.strides[j]).sum();
        let mut idx = [0usize; MAX_DIM];
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut at = base as isize;
            for j in 0..n {
                if corner >> j & 1 == 1 {
                    w *= locs[j].frac;
                    at += locs[j].step;
                    idx[j] = (locs[j].i0 + 1) % self.spec.dims[j].count;
                } else {
                    w *= 1.0 - locs[j].frac;
                    idx[j] = locs[j].i0;
                }
            }
            if w == 0.0 {
                continue;
            }
            for j in 0..n {
                out[j] += w * self.node_gradient(at as usize, idx[j], j);
            }
        }
        Ok(())
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, GridError> {
        let mut g = vec![0.0; self.spec.ndim()];
        self.gradient_into(x, &mut g)?;
        Ok(g)
    }

    /// Serializes to the binary layout (all little-endian):
    /// magic `HJVF`, format version u32, ndim u32, per dimension
    /// `(lo f64, hi f64, count u64, periodic u8)`, row-major f64 payload,
    /// CRC32 of the payload bytes. Metadata goes to a `<path>.meta.json`
    /// sidecar. Both writes are atomic (temp file + rename).
    pub fn save(&self, path: &Path) -> Result<(), GridError> {
        let mut buf = Vec::with_capacity(16 + self.values.len() * 8 + 25 * self.spec.ndim());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.spec.ndim() as u32).to_le_bytes());
        for d in self.spec.dims() {
            buf.extend_from_slice(&d.lo.to_le_bytes());
            buf.extend_from_slice(&d.hi.to_le_bytes());
            buf.extend_from_slice(&(d.count as u64).to_le_bytes());
            buf.push(d.periodic as u8);
        }
        let payload_start = buf.len();
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&buf[payload_start..]);
        buf.extend_from_slice(&hasher.finalize().to_le_bytes());
        write_atomic(path, &buf)?;
        let meta_json = serde_json::to_vec_pretty(&self.meta)?;
        write_atomic(&sidecar_path(path), &meta_json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GridError> {
        let bytes = fs::read(path)?;
        let mut cur = Cursor { bytes: &bytes, at: 0 };
        if cur.take(4)? != MAGIC {
            return Err(GridError::BadMagic);
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(GridError::UnsupportedVersion(version));
        }
        let ndim = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
        if ndim == 0 || ndim > MAX_DIM {
            return Err(GridError::InvalidSpec(format!("{ndim} dimensions in file")));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let lo = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
            let hi = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
            let count = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
            let periodic = cur.take(1)?[0] != 0;
            dims.push(GridDim { lo, hi, count, periodic });
        }
        let spec = GridSpec::new(dims)?;
        let n = spec.node_count();
        let payload = cur.take(8 * n)?;
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(payload);
        let computed = hasher.finalize();
        let stored = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        if computed != stored {
            return Err(GridError::ChecksumMismatch);
        }
        let values: Vec<f64> =
            payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let meta: VfMeta = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
        Self::new(spec, values, meta)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    std::path::PathBuf::from(s)
}

/// Writes a file atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into()),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GridError> {
        if self.at + n > self.bytes.len() {
            return Err(GridError::Truncated);
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
}
