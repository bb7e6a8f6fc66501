//! On-disk formats.
//!
//! Volume file: 16-byte magic, `u32` little-endian header length, JSON header
//! `{n, support_radius, dtype, order}`, then `n³` little-endian `f32` values
//! with `j1` varying slowest.
//!
//! Sample file: little-endian `f64` records `(y1, y2, y3, re, im)`, with a JSON
//! sidecar at `<path>.json` describing the data.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Sign, Vec3};
use crate::sampling::{DesignInfo, GridSpec};
use crate::transform::KSpaceSamples;
use crate::volume::Volume;

pub const VOLUME_MAGIC: &[u8; 16] = b"ROTODT-VOLUME-01";
pub const SAMPLE_RECORD: &str = "y1,y2,y3,re,im as f64 little-endian";
const MAX_HEADER: u32 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub n: usize,
    pub support_radius: f64,
    pub dtype: String,
    pub order: String,
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.into() }
}

/// Writes via a temporary sibling and a rename, so a failed write leaves no
/// partial file under the final name.
fn write_atomic(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        body(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        Ok(())
    })();
    match result {
        Ok(()) => Ok(fs::rename(&tmp, path)?),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

/// Values are stored as `f32`; non-finite voxels are rejected.
pub fn write_volume(path: &Path, vol: &Volume<f64>) -> Result<()> {
    vol.check_finite()?;
    let grid = vol.grid();
    let header = VolumeHeader {
        n: grid.n,
        support_radius: grid.support_radius,
        dtype: "float32".into(),
        order: "j1-slowest".into(),
    };
    let json = serde_json::to_vec(&header)?;
    write_atomic(path, |w| {
        w.write_all(VOLUME_MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for &v in vol.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    })
}

pub fn read_volume(path: &Path) -> Result<Volume<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 16];
    r.read_exact(&mut magic).map_err(|_| format_err(path, "file shorter than the magic"))?;
    if &magic != VOLUME_MAGIC {
        return Err(format_err(path, "not a volume file (bad magic)"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(|_| format_err(path, "truncated header length"))?;
    let len = u32::from_le_bytes(len);
    if len > MAX_HEADER {
        return Err(format_err(path, format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(|_| format_err(path, "truncated header"))?;
    let header: VolumeHeader =
        serde_json::from_slice(&json).map_err(|e| format_err(path, format!("bad header: {e}")))?;
    if header.dtype != "float32" {
        return Err(format_err(path, format!("unsupported dtype {}", header.dtype)));
    }
    if header.order != "j1-slowest" {
        return Err(format_err(path, format!("unsupported order {}", header.order)));
    }
    let grid = GridSpec::new(header.n, header.support_radius)
        .map_err(|e| format_err(path, format!("bad grid in header: {e}")))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != 4 * grid.len() {
        return Err(format_err(
            path,
            format!("payload has {} bytes, expected {} for N = {}", payload.len(), 4 * grid.len(), grid.n),
        ));
    }
    let data =
        payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Volume::from_vec(grid, data)
}

/// Sidecar of a sample file. `metadata` is free-form provenance (wave
/// parameters, phantom, trajectory, noise, conventions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSidecar {
    pub count: usize,
    pub sign: Sign,
    pub record: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignInfo>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_samples(path: &Path, samples: &KSpaceSamples, metadata: serde_json::Value) -> Result<()> {
    let sidecar = SampleSidecar {
        count: samples.len(),
        sign: samples.sign,
        record: SAMPLE_RECORD.into(),
        design: samples.design.clone(),
        metadata,
    };
    write_atomic(path, |w| {
        for (y, v) in samples.points.iter().zip(&samples.values) {
            for x in [y[0], y[1], y[2], v.re, v.im] {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    })?;
    let json = serde_json::to_vec_pretty(&sidecar)?;
    write_atomic(&sidecar_path(path), |w| Ok(w.write_all(&json)?))
}

pub fn read_samples(path: &Path) -> Result<(KSpaceSamples, SampleSidecar)> {
    let side_path = sidecar_path(path);
    let sidecar: SampleSidecar = serde_json::from_slice(&fs::read(&side_path)?)
        .map_err(|e| format_err(&side_path, format!("bad sidecar: {e}")))?;
    if sidecar.record != SAMPLE_RECORD {
        return Err(format_err(&side_path, format!("unknown record layout {:?}", sidecar.record)));
    }
    let bytes = fs::read(path)?;
    if bytes.len() != 40 * sidecar.count {
        return Err(format_err(
            path,
            format!("{} bytes for {} records of 40 bytes", bytes.len(), sidecar.count),
        ));
    }
    let mut points = Vec::with_capacity(sidecar.count);
    let mut values = Vec::with_capacity(sidecar.count);
    for rec in bytes.chunks_exact(40) {
        let f = |i: usize| f64::from_le_bytes(rec[8 * i..8 * i + 8].try_into().expect("8-byte field"));
        points.push(Vec3::new(f(0), f(1), f(2)));
        values.push(Complex64::new(f(3), f(4)));
    }
    let mut samples = KSpaceSamples::new(points, values, sidecar.sign)?;
    if let Some(d) = &sidecar.design {
        if d.total != sidecar.count {
            return Err(format_err(&side_path, format!("design has {} points, file {}", d.total, sidecar.count)));
        }
        samples = samples.with_design(d.clone());
    }
    Ok((samples, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_volume() -> Volume<f64> {
        let grid = GridSpec::new(6, 1.5).unwrap();
        Volume::from_vec(grid, (0..grid.len()).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap()
    }

    #[test]
    fn volume_round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.vol");
        let vol = sample_volume();
        write_volume(&p, &vol).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..16], VOLUME_MAGIC);
        let hlen = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[20..20 + hlen]).unwrap();
        assert_eq!(header["n"], 6);
        assert_eq!(header["order"], "j1-slowest");
        assert_eq!(bytes.len(), 20 + hlen + 4 * 216);
        // second value in the payload is j = (-3, -3, -2)
        let second = f32::from_le_bytes(bytes[20 + hlen + 4..20 + hlen + 8].try_into().unwrap());
        assert_eq!(second, *vol.get([-3, -3, -2]).unwrap() as f32);

        let back = read_volume(&p).unwrap();
        assert_eq!(back.grid(), vol.grid());
        for (a, b) in back.data().iter().zip(vol.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert!(!dir.path().join("v.vol.partial").exists());
    }

    #[test]
    fn volume_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.vol");
        write_volume(&p, &sample_volume()).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::Format { .. })));
        bytes[0] = b'X';
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn volume_rejects_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let mut vol = sample_volume();
        vol.data_mut()[3] = f64::NAN;
        let p = dir.path().join("v.vol");
        assert!(write_volume(&p, &vol).is_err());
        assert!(!p.exists());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn samples_round_trip_exactly(vals in prop::collection::vec((any::<f64>(), any::<f64>()), 1..50), refl in any::<bool>()) {
            let vals: Vec<(f64, f64)> = vals.into_iter().map(|(a, b)| {
                (if a.is_finite() { a } else { 1.0 }, if b.is_finite() { b } else { -2.0 })
            }).collect();
            let points: Vec<Vec3> = vals.iter().map(|(a, b)| Vec3::new(a * 1e-300, *b, a + b)).collect();
            let points: Vec<Vec3> = points.into_iter().map(|p| p.map(|c| if c.is_finite() { c } else { 0.0 })).collect();
            let values: Vec<Complex64> = vals.iter().map(|(a, b)| Complex64::new(*a, *b)).collect();
            let sign = if refl { Sign::Reflection } else { Sign::Transmission };
            let s = KSpaceSamples::new(points, values, sign).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("s.bin");
            write_samples(&p, &s, serde_json::json!({"source": "test"})).unwrap();
            let (back, side) = read_samples(&p).unwrap();
            prop_assert_eq!(back, s);
            prop_assert_eq!(side.metadata["source"].as_str(), Some("test"));
        }
    }

    #[test]
    fn samples_reject_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        let s = KSpaceSamples::new(vec![Vec3::zeros(); 3], vec![Complex64::new(1.0, 0.0); 3], Sign::Transmission)
            .unwrap();
        write_samples(&p, &s, serde_json::Value::Null).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(80);
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_samples(&p), Err(Error::Format { .. })));
    }
}
