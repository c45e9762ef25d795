//! Binary artifact formats and content digests.
//!
//! Three little-endian container formats cover every persisted artifact:
//!
//! * `VFMD` - labeled observation datasets (pixels + pose + environment
//!   + optional failure label),
//! * `VFGV` - dense grid tables (value functions and cached policy tables),
//! * `VFMW` - model checkpoints (layer shapes + f32 parameters, with an
//!   optional trailing metadata block for value networks).
//!
//! Layouts are fixed; writing the same content twice yields byte-identical
//! files, which the pipeline relies on for its reproducibility checks.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::levelset::{AxisSpec, GridSpec};
use crate::plant::State;
use crate::sensor::{Cloud, EnvParams, Observation, TimeOfDay};

const DATASET_MAGIC: &[u8; 4] = b"VFMD";
const GRID_MAGIC: &[u8; 4] = b"VFGV";
const MODEL_MAGIC: &[u8; 4] = b"VFMW";
const FORMAT_VERSION: u32 = 1;

/// One dataset record: rendered pixels plus the pose and environment they
/// came from, and an optional binary failure label.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsRecord {
    pub pixels: Vec<f32>,
    pub px: f32,
    pub py: f32,
    pub theta: f32,
    pub d1: u8,
    pub d2: u8,
    pub runway_id: u8,
    pub label: Option<u8>,
}

impl ObsRecord {
    pub fn from_observation(obs: &Observation, label: Option<u8>) -> Result<Self> {
        let (state, env) = obs
            .provenance
            .ok_or_else(|| Error::InvalidArgument("observation has no provenance".into()))?;
        Ok(ObsRecord {
            pixels: obs.pixels.iter().map(|&p| p as f32).collect(),
            px: state.px as f32,
            py: state.py as f32,
            theta: state.theta as f32,
            d1: env.d1.code(),
            d2: env.d2.code(),
            runway_id: env.runway_id,
            label,
        })
    }

    pub fn state(&self) -> State {
        State::new(self.px as f64, self.py as f64, self.theta as f64)
    }

    pub fn env(&self) -> Result<EnvParams> {
        Ok(EnvParams::new(TimeOfDay::from_code(self.d1)?, Cloud::from_code(self.d2)?, self.runway_id))
    }

    pub fn to_observation(&self, width: usize, height: usize) -> Result<Observation> {
        if self.pixels.len() != width * height {
            return Err(Error::DimMismatch { expected: width * height, got: self.pixels.len() });
        }
        let mut obs =
            Observation::new(width, height, self.pixels.iter().map(|&p| p as f64).collect());
        obs.provenance = Some((self.state(), self.env()?));
        Ok(obs)
    }
}

/// An observation dataset with homogeneous image dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub width: usize,
    pub height: usize,
    pub label_present: bool,
    pub records: Vec<ObsRecord>,
}

impl Dataset {
    pub fn new(width: usize, height: usize, label_present: bool) -> Self {
        Dataset { width, height, label_present, records: Vec::new() }
    }

    pub fn push(&mut self, rec: ObsRecord) -> Result<()> {
        if rec.pixels.len() != self.width * self.height {
            return Err(Error::DimMismatch {
                expected: self.width * self.height,
                got: rec.pixels.len(),
            });
        }
        if self.label_present && rec.label.is_none() {
            return Err(Error::InvalidArgument("dataset requires labels".into()));
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(DATASET_MAGIC);
        put_u32(&mut buf, FORMAT_VERSION);
        put_u32(&mut buf, self.records.len() as u32);
        put_u16(&mut buf, self.width as u16);
        put_u16(&mut buf, self.height as u16);
        buf.push(1); // channels
        buf.push(u8::from(self.label_present));
        for rec in &self.records {
            for &p in &rec.pixels {
                put_f32(&mut buf, p);
            }
            put_f32(&mut buf, rec.px);
            put_f32(&mut buf, rec.py);
            put_f32(&mut buf, rec.theta);
            buf.push(rec.d1);
            buf.push(rec.d2);
            buf.push(rec.runway_id);
            if self.label_present {
                buf.push(rec.label.expect("checked on push"));
            }
        }
        write_atomic(path, &buf)
    }

    pub fn read(path: &Path) -> Result<Dataset> {
        let bytes = fs::read(path)?;
        let mut r = Cursor::new(&bytes, path);
        r.expect_magic(DATASET_MAGIC)?;
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return r.fail(format!("unsupported dataset version {version}"));
        }
        let count = r.u32()? as usize;
        let width = r.u16()? as usize;
        let height = r.u16()? as usize;
        let channels = r.u8()?;
        if channels != 1 {
            return r.fail(format!("expected 1 channel, got {channels}"));
        }
        let label_present = r.u8()? != 0;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let mut pixels = Vec::with_capacity(width * height);
            for _ in 0..width * height {
                pixels.push(r.f32()?);
            }
            let px = r.f32()?;
            let py = r.f32()?;
            let theta = r.f32()?;
            let d1 = r.u8()?;
            let d2 = r.u8()?;
            let runway_id = r.u8()?;
            let label = if label_present { Some(r.u8()?) } else { None };
            records.push(ObsRecord { pixels, px, py, theta, d1, d2, runway_id, label });
        }
        r.expect_eof()?;
        Ok(Dataset { width, height, label_present, records })
    }
}

/// Write a dense grid table (value function or policy cache).
pub fn write_grid_table(
    path: &Path,
    spec: &GridSpec,
    env: &EnvParams,
    horizon: f64,
    values: &[f32],
) -> Result<()> {
    if values.len() != spec.total_nodes() {
        return Err(Error::DimMismatch { expected: spec.total_nodes(), got: values.len() });
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(GRID_MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    buf.push(3); // dims
    for ax in [&spec.px, &spec.py, &spec.theta] {
        put_f64(&mut buf, ax.min);
        put_f64(&mut buf, ax.max);
        put_u32(&mut buf, ax.count as u32);
    }
    buf.push(env.d1.code());
    buf.push(env.d2.code());
    buf.push(env.runway_id);
    put_f64(&mut buf, horizon);
    for &v in values {
        put_f32(&mut buf, v);
    }
    write_atomic(path, &buf)
}

/// Read a dense grid table back.
pub fn read_grid_table(path: &Path) -> Result<(GridSpec, EnvParams, f64, Vec<f32>)> {
    let bytes = fs::read(path)?;
    let mut r = Cursor::new(&bytes, path);
    r.expect_magic(GRID_MAGIC)?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return r.fail(format!("unsupported grid version {version}"));
    }
    let dims = r.u8()?;
    if dims != 3 {
        return r.fail(format!("expected 3 dims, got {dims}"));
    }
    let mut axes = Vec::with_capacity(3);
    for _ in 0..3 {
        let min = r.f64()?;
        let max = r.f64()?;
        let count = r.u32()? as usize;
        axes.push(AxisSpec::new(min, max, count));
    }
    let spec = GridSpec { px: axes[0], py: axes[1], theta: axes[2] };
    let d1 = TimeOfDay::from_code(r.u8()?)?;
    let d2 = Cloud::from_code(r.u8()?)?;
    let runway_id = r.u8()?;
    let horizon = r.f64()?;
    let mut values = Vec::with_capacity(spec.total_nodes());
    for _ in 0..spec.total_nodes() {
        values.push(r.f32()?);
    }
    r.expect_eof()?;
    Ok((spec, EnvParams::new(d1, d2, runway_id), horizon, values))
}

/// Trailing metadata block for value-network checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNetMeta {
    /// State normalization bounds: (min, max) for px, py, theta.
    pub bounds: [(f64, f64); 3],
    pub horizon: f64,
    pub omega0: f64,
    pub env_encoding_version: u8,
}

const MODEL_KIND_VALUE_NET: u8 = 1;

/// Write a model checkpoint: layer shapes, f32 parameters in declaration
/// order, and an optional value-network metadata block.
pub fn write_model(
    path: &Path,
    layers: &[(usize, usize)],
    params: &[f64],
    meta: Option<&ValueNetMeta>,
) -> Result<()> {
    let expected: usize = layers.iter().map(|&(i, o)| i * o + o).sum();
    if params.len() != expected {
        return Err(Error::DimMismatch { expected, got: params.len() });
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    put_u32(&mut buf, layers.len() as u32);
    for &(fan_in, fan_out) in layers {
        put_u32(&mut buf, fan_in as u32);
        put_u32(&mut buf, fan_out as u32);
    }
    for &p in params {
        put_f32(&mut buf, p as f32);
    }
    if let Some(m) = meta {
        buf.push(MODEL_KIND_VALUE_NET);
        for (lo, hi) in m.bounds {
            put_f64(&mut buf, lo);
            put_f64(&mut buf, hi);
        }
        put_f64(&mut buf, m.horizon);
        put_f64(&mut buf, m.omega0);
        buf.push(m.env_encoding_version);
    }
    write_atomic(path, &buf)
}

/// Read a model checkpoint back; parameters are widened to f64.
pub fn read_model(path: &Path) -> Result<(Vec<(usize, usize)>, Vec<f64>, Option<ValueNetMeta>)> {
    let bytes = fs::read(path)?;
    let mut r = Cursor::new(&bytes, path);
    r.expect_magic(MODEL_MAGIC)?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return r.fail(format!("unsupported model version {version}"));
    }
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let fan_in = r.u32()? as usize;
        let fan_out = r.u32()? as usize;
        layers.push((fan_in, fan_out));
    }
    let n_params: usize = layers.iter().map(|&(i, o)| i * o + o).sum();
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        params.push(r.f32()? as f64);
    }
    let meta = if r.remaining() > 0 {
        let kind = r.u8()?;
        if kind != MODEL_KIND_VALUE_NET {
            return r.fail(format!("unknown model metadata kind {kind}"));
        }
        let mut bounds = [(0.0, 0.0); 3];
        for b in bounds.iter_mut() {
            b.0 = r.f64()?;
            b.1 = r.f64()?;
        }
        let horizon = r.f64()?;
        let omega0 = r.f64()?;
        let env_encoding_version = r.u8()?;
        Some(ValueNetMeta { bounds, horizon, omega0, env_encoding_version })
    } else {
        None
    };
    r.expect_eof()?;
    Ok((layers, params, meta))
}

/// SHA-256 digest (hex) of a file's contents.
pub fn file_digest(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut file = fs::File::open(path)?;
    let mut buf = [0u8; 65536];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

/// SHA-256 digest (hex) of a byte slice.
pub fn bytes_digest(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn put_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(buf: &mut Vec<u8>, v: f32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Cursor { bytes, pos: 0, path }
    }

    fn fail<T>(&self, detail: String) -> Result<T> {
        Err(Error::Format { path: self.path.to_path_buf(), detail })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                detail: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return self.fail(format!("bad magic {got:?}, expected {magic:?}"));
        }
        Ok(())
    }

    fn expect_eof(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return self.fail(format!("{} trailing bytes", self.bytes.len() - self.pos));
        }
        Ok(())
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn sample_record(seed: u8, label: Option<u8>) -> ObsRecord {
        ObsRecord {
            pixels: (0..12).map(|i| (i as f32 + seed as f32) / 16.0).collect(),
            px: 1.5 + seed as f32,
            py: 120.0,
            theta: -0.2,
            d1: seed % 3,
            d2: seed % 2,
            runway_id: seed % 5,
            label,
        }
    }

    #[test]
    fn dataset_header_layout_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.vfmd");
        let mut ds = Dataset::new(4, 3, true);
        ds.push(sample_record(1, Some(1))).unwrap();
        ds.write(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"VFMD");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1); // version
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1); // count
        assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 4); // width
        assert_eq!(u16::from_le_bytes(bytes[14..16].try_into().unwrap()), 3); // height
        assert_eq!(bytes[16], 1); // channels
        assert_eq!(bytes[17], 1); // label_present
        // record: 12 pixels + 3 pose floats = 60 bytes, then d1 d2 runway label
        assert_eq!(bytes.len(), 18 + 12 * 4 + 3 * 4 + 4);
        assert_eq!(bytes[18 + 60 + 3], 1); // label byte is last
    }

    #[test]
    fn grid_header_layout_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("g.vfgv");
        let spec = GridSpec {
            px: AxisSpec::new(-1.0, 1.0, 3),
            py: AxisSpec::new(0.0, 2.0, 3),
            theta: AxisSpec::new(-0.5, 0.5, 3),
        };
        let env = EnvParams::new(TimeOfDay::Evening, Cloud::Overcast, 4);
        let values: Vec<f32> = (0..27).map(|i| i as f32).collect();
        write_grid_table(&path, &spec, &env, 2.5, &values).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"VFGV");
        assert_eq!(bytes[8], 3); // dims
        // First axis: f64 min, f64 max, u32 count.
        assert_eq!(f64::from_le_bytes(bytes[9..17].try_into().unwrap()), -1.0);
        assert_eq!(f64::from_le_bytes(bytes[17..25].try_into().unwrap()), 1.0);
        assert_eq!(u32::from_le_bytes(bytes[25..29].try_into().unwrap()), 3);
        let tail = 9 + 3 * 20;
        assert_eq!(bytes[tail], 1); // d1 = evening
        assert_eq!(bytes[tail + 1], 1); // d2 = overcast
        assert_eq!(bytes[tail + 2], 4); // runway
        assert_eq!(f64::from_le_bytes(bytes[tail + 3..tail + 11].try_into().unwrap()), 2.5);
        assert_eq!(bytes.len(), tail + 11 + 27 * 4);
    }

    #[test]
    fn model_roundtrip_with_metadata() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.vfmw");
        let layers = [(3usize, 4usize), (4, 1)];
        let params: Vec<f64> = (0..(3 * 4 + 4 + 4 + 1)).map(|i| i as f64 * 0.25).collect();
        let meta = ValueNetMeta {
            bounds: [(-15.0, 15.0), (100.0, 250.0), (-0.5, 0.5)],
            horizon: 10.0,
            omega0: 30.0,
            env_encoding_version: 1,
        };
        write_model(&path, &layers, &params, Some(&meta)).unwrap();
        let (l2, p2, m2) = read_model(&path).unwrap();
        assert_eq!(l2, layers.to_vec());
        assert_eq!(p2, params); // quarter-integers are exact in f32
        assert_eq!(m2, Some(meta));

        write_model(&path, &layers, &params, None).unwrap();
        let (_, _, m3) = read_model(&path).unwrap();
        assert_eq!(m3, None);
    }

    #[test]
    fn digest_is_stable_and_content_sensitive() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.bin");
        fs::write(&path, b"hello").unwrap();
        let d1 = file_digest(&path).unwrap();
        assert_eq!(d1, bytes_digest(b"hello"));
        assert_eq!(
            d1,
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        fs::write(&path, b"hellp").unwrap();
        assert_ne!(file_digest(&path).unwrap(), d1);
    }

    #[test]
    fn truncated_file_is_rejected_with_path() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.vfmd");
        fs::write(&path, b"VFMD\x01\x00\x00").unwrap();
        match Dataset::read(&path) {
            Err(Error::Format { path: p, .. }) => assert_eq!(p, path),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn dataset_roundtrips(n in 0usize..5, labeled: bool, w in 2usize..5, h in 2usize..4) {
            let dir = tempdir().unwrap();
            let path = dir.path().join("r.vfmd");
            let mut ds = Dataset::new(w, h, labeled);
            for i in 0..n {
                let mut rec = sample_record(i as u8, labeled.then_some((i % 2) as u8));
                rec.pixels = (0..w * h).map(|j| (j as f32 * 0.03 + i as f32).fract()).collect();
                ds.push(rec).unwrap();
            }
            ds.write(&path).unwrap();
            let back = Dataset::read(&path).unwrap();
            prop_assert_eq!(back, ds);
        }

        #[test]
        fn grid_table_roundtrips(c1 in 3usize..6, c2 in 3usize..5, c3 in 3usize..5) {
            let dir = tempdir().unwrap();
            let path = dir.path().join("r.vfgv");
            let spec = GridSpec {
                px: AxisSpec::new(-2.0, 2.0, c1),
                py: AxisSpec::new(0.0, 5.0, c2),
                theta: AxisSpec::new(-0.3, 0.3, c3),
            };
            let env = EnvParams::new(TimeOfDay::Night, Cloud::Clear, 2);
            let values: Vec<f32> = (0..spec.total_nodes()).map(|i| (i as f32).sin()).collect();
            write_grid_table(&path, &spec, &env, 1.5, &values).unwrap();
            let (s2, e2, h2, v2) = read_grid_table(&path).unwrap();
            prop_assert_eq!(s2, spec);
            prop_assert_eq!(e2, env);
            prop_assert_eq!(h2, 1.5);
            prop_assert_eq!(v2, values);
        }
    }
}
