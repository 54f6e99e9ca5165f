//! On-disk cache for ultrasound field tables and transfer tensors so
//! repeated optimizer runs skip re-assembly.
//!
//! File format (little-endian throughout):
//!   bytes 0..8    magic "PALZCCH1"
//!   byte  8       payload kind (1 = PAL tensor, 2 = EDL tensor, 3 = field table)
//!   bytes 9..41   SHA-256 key of the producing parameters
//!   then the payload:
//!     tensors:  f_audio f64, n_points u64, bright_count u64, n_elements u64,
//!               points (x, z) f64 pairs, entries as (re, im) f64 pairs in
//!               point-major row-major order
//!     tables:   n_points u64, n_elements u64, points (x, z) f64 pairs,
//!               carrier1 then carrier2 entries as (re, im) f64 pairs
//!
//! The key hashes every parameter the payload depends on (geometry,
//! medium, frequency plan, quadrature spec, drive scale, point list), so
//! a stale file can never be confused with a current one. A load with a
//! mismatched magic, kind, or key is treated as a miss. Writes go
//! through a temp file plus rename.

use crate::field::{TensorData, TransferTensor, UltrasoundFieldTable};
use crate::linalg::{CMat, C64};
use crate::model::{ArrayGeometry, FrequencyPlan, MediumParams, Point2, QuadratureSpec};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 8] = b"PALZCCH1";

const KIND_PAL: u8 = 1;
const KIND_EDL: u8 = 2;
const KIND_TABLE: u8 = 3;

/// SHA-256 digest identifying the parameters behind a cached payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CacheKey([u8; 32]);

impl CacheKey {
    pub fn hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

struct KeyHasher(Sha256);

impl KeyHasher {
    fn new(tag: &str) -> Self {
        let mut h = Sha256::new();
        h.update(tag.as_bytes());
        KeyHasher(h)
    }
    fn f64(&mut self, v: f64) -> &mut Self {
        self.0.update(v.to_le_bytes());
        self
    }
    fn u64(&mut self, v: u64) -> &mut Self {
        self.0.update(v.to_le_bytes());
        self
    }
    fn slice(&mut self, vs: &[f64]) -> &mut Self {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.f64(v);
        }
        self
    }
    fn points(&mut self, pts: &[Point2]) -> &mut Self {
        self.u64(pts.len() as u64);
        for p in pts {
            self.f64(p.x).f64(p.z);
        }
        self
    }
    fn geometry(&mut self, g: &ArrayGeometry) -> &mut Self {
        self.f64(g.element_width()).slice(g.element_centers())
    }
    fn medium(&mut self, m: &MediumParams) -> &mut Self {
        self.f64(m.rho0)
            .f64(m.c0)
            .f64(m.beta)
            .f64(m.temperature)
            .f64(m.humidity)
            .f64(m.alpha_override.unwrap_or(f64::NEG_INFINITY))
    }
    fn plan(&mut self, p: &FrequencyPlan) -> &mut Self {
        self.f64(p.f_center()).f64(p.f_audio())
    }
    fn quad(&mut self, q: &QuadratureSpec) -> &mut Self {
        self.f64(q.x_min).f64(q.x_max).f64(q.z_min).f64(q.z_max).f64(q.dx).f64(q.dz)
    }
    fn finish(self) -> CacheKey {
        CacheKey(self.0.finalize().into())
    }
}

/// Cache key for a PAL transfer tensor.
pub fn pal_tensor_key(
    geometry: &ArrayGeometry,
    medium: &MediumParams,
    plan: &FrequencyPlan,
    quad: &QuadratureSpec,
    v0: f64,
    points: &[Point2],
    bright_count: usize,
) -> CacheKey {
    let mut h = KeyHasher::new("pal-tensor-v1");
    h.geometry(geometry)
        .medium(medium)
        .plan(plan)
        .quad(quad)
        .f64(v0)
        .points(points)
        .u64(bright_count as u64);
    h.finish()
}

/// Cache key for an EDL transfer vector set.
pub fn edl_tensor_key(
    geometry: &ArrayGeometry,
    medium: &MediumParams,
    plan: &FrequencyPlan,
    v0: f64,
    points: &[Point2],
    bright_count: usize,
) -> CacheKey {
    let mut h = KeyHasher::new("edl-tensor-v1");
    h.geometry(geometry)
        .medium(medium)
        .plan(plan)
        .f64(v0)
        .points(points)
        .u64(bright_count as u64);
    h.finish()
}

/// Cache key for an ultrasound field table.
pub fn field_table_key(
    geometry: &ArrayGeometry,
    medium: &MediumParams,
    plan: &FrequencyPlan,
    v0: f64,
    points: &[Point2],
) -> CacheKey {
    let mut h = KeyHasher::new("field-table-v1");
    h.geometry(geometry).medium(medium).plan(plan).f64(v0).points(points);
    h.finish()
}

fn cache_path(dir: &Path, key: &CacheKey, kind: u8) -> PathBuf {
    let prefix = match kind {
        KIND_PAL => "pal",
        KIND_EDL => "edl",
        _ => "table",
    };
    dir.join(format!("{prefix}-{}.palz", key.hex()))
}

struct PayloadWriter(Vec<u8>);

impl PayloadWriter {
    fn new(kind: u8, key: &CacheKey) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.push(kind);
        buf.extend_from_slice(&key.0);
        PayloadWriter(buf)
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn c64(&mut self, v: C64) {
        self.f64(v.re);
        self.f64(v.im);
    }
    fn points(&mut self, pts: &[Point2]) {
        for p in pts {
            self.f64(p.x);
            self.f64(p.z);
        }
    }
}

struct PayloadReader {
    buf: Vec<u8>,
    pos: usize,
}

impl PayloadReader {
    fn f64(&mut self) -> io::Result<f64> {
        let bytes: [u8; 8] = self
            .buf
            .get(self.pos..self.pos + 8)
            .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "truncated cache file"))?
            .try_into()
            .unwrap();
        self.pos += 8;
        Ok(f64::from_le_bytes(bytes))
    }
    fn u64(&mut self) -> io::Result<u64> {
        let bytes: [u8; 8] = self
            .buf
            .get(self.pos..self.pos + 8)
            .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "truncated cache file"))?
            .try_into()
            .unwrap();
        self.pos += 8;
        Ok(u64::from_le_bytes(bytes))
    }
    fn c64(&mut self) -> io::Result<C64> {
        Ok(C64::new(self.f64()?, self.f64()?))
    }
    fn point(&mut self) -> io::Result<Point2> {
        Ok(Point2::new(self.f64()?, self.f64()?))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Store a transfer tensor under its key. Returns the file path.
pub fn store_tensor(dir: &Path, key: &CacheKey, tensor: &TransferTensor) -> io::Result<PathBuf> {
    let kind = match tensor.data {
        TensorData::Pal(_) => KIND_PAL,
        TensorData::Edl(_) => KIND_EDL,
    };
    let mut w = PayloadWriter::new(kind, key);
    w.f64(tensor.f_audio);
    w.u64(tensor.n_points() as u64);
    w.u64(tensor.bright_count as u64);
    w.u64(tensor.n_elements() as u64);
    w.points(&tensor.points);
    match &tensor.data {
        TensorData::Pal(ms) => {
            for m in ms {
                for &v in m.data() {
                    w.c64(v);
                }
            }
        }
        TensorData::Edl(vs) => {
            for v in vs.iter().flatten() {
                w.c64(*v);
            }
        }
    }
    let path = cache_path(dir, key, kind);
    write_atomic(&path, &w.0)?;
    Ok(path)
}

fn open_payload(dir: &Path, key: &CacheKey, kind: u8) -> io::Result<Option<PayloadReader>> {
    let path = cache_path(dir, key, kind);
    let mut buf = Vec::new();
    match fs::File::open(&path) {
        Ok(mut f) => {
            f.read_to_end(&mut buf)?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e),
    }
    if buf.len() < 41 || &buf[..8] != MAGIC || buf[8] != kind || buf[9..41] != key.0 {
        return Ok(None); // wrong version/kind/key: treat as a miss
    }
    Ok(Some(PayloadReader { buf, pos: 41 }))
}

/// Load a tensor previously stored under the key, or None on a miss.
pub fn load_tensor(
    dir: &Path,
    key: &CacheKey,
    kind_pal: bool,
) -> io::Result<Option<TransferTensor>> {
    let kind = if kind_pal { KIND_PAL } else { KIND_EDL };
    let Some(mut r) = open_payload(dir, key, kind)? else {
        return Ok(None);
    };
    let f_audio = r.f64()?;
    let n_points = r.u64()? as usize;
    let bright_count = r.u64()? as usize;
    let n_elements = r.u64()? as usize;
    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        points.push(r.point()?);
    }
    let data = if kind_pal {
        let mut ms = Vec::with_capacity(n_points);
        for _ in 0..n_points {
            let mut m = CMat::zeros(n_elements);
            for i in 0..n_elements {
                for j in 0..n_elements {
                    m[(i, j)] = r.c64()?;
                }
            }
            ms.push(m);
        }
        TensorData::Pal(ms)
    } else {
        let mut vs = Vec::with_capacity(n_points);
        for _ in 0..n_points {
            let mut v = Vec::with_capacity(n_elements);
            for _ in 0..n_elements {
                v.push(r.c64()?);
            }
            vs.push(v);
        }
        TensorData::Edl(vs)
    };
    Ok(Some(TransferTensor { points, bright_count, f_audio, data }))
}

/// Store an ultrasound field table under its key.
pub fn store_field_table(
    dir: &Path,
    key: &CacheKey,
    table: &UltrasoundFieldTable,
) -> io::Result<PathBuf> {
    let mut w = PayloadWriter::new(KIND_TABLE, key);
    w.u64(table.points.len() as u64);
    w.u64(table.n_elements as u64);
    w.points(&table.points);
    for &v in table.carrier1.iter().chain(&table.carrier2) {
        w.c64(v);
    }
    let path = cache_path(dir, key, KIND_TABLE);
    write_atomic(&path, &w.0)?;
    Ok(path)
}

/// Load an ultrasound field table, or None on a miss.
pub fn load_field_table(dir: &Path, key: &CacheKey) -> io::Result<Option<UltrasoundFieldTable>> {
    let Some(mut r) = open_payload(dir, key, KIND_TABLE)? else {
        return Ok(None);
    };
    let n_points = r.u64()? as usize;
    let n_elements = r.u64()? as usize;
    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        points.push(r.point()?);
    }
    let n_vals = n_points * n_elements;
    let mut carrier1 = Vec::with_capacity(n_vals);
    for _ in 0..n_vals {
        carrier1.push(r.c64()?);
    }
    let mut carrier2 = Vec::with_capacity(n_vals);
    for _ in 0..n_vals {
        carrier2.push(r.c64()?);
    }
    Ok(Some(UltrasoundFieldTable { points, n_elements, carrier1, carrier2 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Point2;

    fn sample_edl() -> TransferTensor {
        TransferTensor {
            points: vec![Point2::new(0.1, 0.5), Point2::new(-0.1, 0.7)],
            bright_count: 1,
            f_audio: 1000.0,
            data: TensorData::Edl(vec![
                vec![C64::new(1.0, -2.0), C64::new(0.5, 0.25)],
                vec![C64::new(-0.125, 4.0), C64::new(3.0, 0.0)],
            ]),
        }
    }

    fn sample_key(tag: u64) -> CacheKey {
        let mut h = KeyHasher::new("test");
        h.u64(tag);
        h.finish()
    }

    #[test]
    fn tensor_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let t = sample_edl();
        let key = sample_key(1);
        store_tensor(dir.path(), &key, &t).unwrap();
        let loaded = load_tensor(dir.path(), &key, false).unwrap().unwrap();
        assert_eq!(t, loaded);
    }

    #[test]
    fn missing_and_mismatched_keys_are_misses() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_tensor(dir.path(), &sample_key(9), false).unwrap().is_none());
        let t = sample_edl();
        let key = sample_key(2);
        let path = store_tensor(dir.path(), &key, &t).unwrap();
        // corrupt the stored key field
        let mut bytes = fs::read(&path).unwrap();
        bytes[12] ^= 0xFF;
        fs::write(&path, bytes).unwrap();
        assert!(load_tensor(dir.path(), &key, false).unwrap().is_none());
    }

    #[test]
    fn keys_separate_parameters() {
        let geom_a = ArrayGeometry::closely_arranged(2, 0.01);
        let geom_b = ArrayGeometry::closely_arranged(3, 0.01);
        let medium = MediumParams::default();
        let plan = FrequencyPlan::new(40_000.0, 1_000.0).unwrap();
        let pts = vec![Point2::new(0.0, 0.5)];
        let k1 = edl_tensor_key(&geom_a, &medium, &plan, 1.0, &pts, 1);
        let k2 = edl_tensor_key(&geom_b, &medium, &plan, 1.0, &pts, 1);
        assert_ne!(k1, k2);
        let k3 = edl_tensor_key(&geom_a, &medium, &plan, 2.0, &pts, 1);
        assert_ne!(k1, k3);
        assert_eq!(k1, edl_tensor_key(&geom_a, &medium, &plan, 1.0, &pts, 1));
    }
}
