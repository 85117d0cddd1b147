//! Raw data on disk: little-endian binary payload (`<stem>.bin`) with a text header
//! (`<stem>.hdr`) of `key = value` lines giving dims, dtype and units.
//!
//! Complex values are stored as interleaved `(re, im)` float64 pairs. The last axis
//! varies fastest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RigidPose, Trajectory};
use crate::recon::VolumeSeries;
use crate::sim::{NavigatorSignal, ShotData, ShotTruth};
use crate::C64;

const FORMAT: &str = "peers-raw";
const VERSION: &str = "1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    Complex128,
    Float64,
}

impl Dtype {
    fn name(self) -> &'static str {
        match self {
            Dtype::Complex128 => "complex128",
            Dtype::Float64 => "float64",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "complex128" => Ok(Dtype::Complex128),
            "float64" => Ok(Dtype::Float64),
            other => Err(Error::Format(format!("unsupported dtype {other:?}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::Complex128 => 2,
            Dtype::Float64 => 1,
        }
    }
}

/// Sidecar header. `extra` holds free-form metadata such as voxel sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub dtype: Dtype,
    pub dims: Vec<usize>,
    pub axes: Vec<String>,
    pub units: String,
    pub extra: BTreeMap<String, String>,
}

impl Header {
    pub fn new(dtype: Dtype, dims: &[usize], axes: &[&str], units: &str) -> Self {
        Self {
            dtype,
            dims: dims.to_vec(),
            axes: axes.iter().map(|s| s.to_string()).collect(),
            units: units.to_string(),
            extra: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.insert(key.to_string(), value.to_string());
        self
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("format = {FORMAT}\nversion = {VERSION}\n"));
        s.push_str(&format!("dtype = {}\nendian = little\n", self.dtype.name()));
        s.push_str(&format!("dims = {}\n", join(&self.dims)));
        s.push_str(&format!("axes = {}\n", self.axes.join(" ")));
        s.push_str(&format!("units = {}\n", self.units));
        for (k, v) in &self.extra {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("header line {}: expected key = value", n + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut take = |k: &str| kv.remove(k).ok_or_else(|| Error::Format(format!("header lacks {k:?}")));
        if take("format")? != FORMAT {
            return Err(Error::Format("not a peers-raw header".into()));
        }
        let version = take("version")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported header version {version}")));
        }
        if take("endian")? != "little" {
            return Err(Error::Format("only little-endian payloads are supported".into()));
        }
        let dtype = Dtype::parse(&take("dtype")?)?;
        let dims = take("dims")?
            .split_whitespace()
            .map(|d| d.parse::<usize>().map_err(|e| Error::Format(format!("dims: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let axes: Vec<String> = take("axes")?.split_whitespace().map(String::from).collect();
        if axes.len() != dims.len() {
            return Err(Error::Format("axes and dims differ in length".into()));
        }
        let units = take("units")?;
        Ok(Self { dtype, dims, axes, units, extra: kv })
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.extra.get(key).map(String::as_str).ok_or_else(|| Error::Format(format!("header lacks {key:?}")))
    }

    pub fn get_f64s(&self, key: &str) -> Result<Vec<f64>> {
        self.get(key)?
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| Error::Format(format!("{key}: {e}"))))
            .collect()
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("hdr"))
}

/// Writes `values` (already flattened in header order) as float64 words.
pub fn write_raw(stem: &Path, header: &Header, values: &[f64]) -> Result<()> {
    if values.len() != header.len() * header.dtype.width() {
        return Err(Error::InvalidInput(format!(
            "payload has {} words, header describes {}",
            values.len(),
            header.len() * header.dtype.width()
        )));
    }
    let (bin, hdr) = paths(stem);
    std::fs::write(hdr, header.to_text())?;
    let mut w = BufWriter::new(File::create(bin)?);
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_raw(stem: &Path) -> Result<(Header, Vec<f64>)> {
    let (bin, hdr) = paths(stem);
    let header = Header::parse(&std::fs::read_to_string(&hdr)?)?;
    let words = header.len() * header.dtype.width();
    let mut bytes = Vec::with_capacity(words * 8);
    BufReader::new(File::open(&bin)?).read_to_end(&mut bytes)?;
    if bytes.len() != words * 8 {
        return Err(Error::Format(format!(
            "{}: expected {} bytes, found {}",
            bin.display(),
            words * 8,
            bytes.len()
        )));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    Ok((header, values))
}

fn push_complex(out: &mut Vec<f64>, v: C64) {
    out.push(v.re);
    out.push(v.im);
}

fn expect_dims(h: &Header, dtype: Dtype, rank: usize, what: &str) -> Result<()> {
    if h.dtype != dtype || h.dims.len() != rank {
        return Err(Error::Format(format!("{what}: expected {} of rank {rank}", dtype.name())));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ShotMeta {
    shot_index: usize,
    volume_index: usize,
    kz_index: usize,
}

/// Writes `<dir>/shots.{bin,hdr}` (shot, echo, readout, coil), the played trajectories
/// `<dir>/shots_kspace.{bin,hdr}` (shot, echo, readout, axis), sample times
/// `<dir>/shots_time.{bin,hdr}` and `<dir>/shots.csv` with per-shot indices.
pub fn write_shots(dir: &Path, shots: &[ShotData]) -> Result<()> {
    let first = shots.first().ok_or_else(|| Error::InvalidInput("no shots to write".into()))?;
    let (nm, nk, nc) = first.dims();
    let mut data = Vec::with_capacity(shots.len() * nm * nk * nc * 2);
    let mut traj = Vec::with_capacity(shots.len() * nm * nk * 3);
    let mut times = Vec::with_capacity(shots.len() * nm * nk);
    let mut meta = csv::Writer::from_path(dir.join("shots.csv")).map_err(|e| Error::Format(e.to_string()))?;
    for s in shots {
        if s.dims() != (nm, nk, nc) || s.trajectory.len() != nm * nk || s.timing.dim() != (nm, nk) {
            return Err(Error::InvalidInput(format!("shot {} differs in shape", s.shot_index)));
        }
        s.samples.iter().for_each(|v| push_complex(&mut data, *v));
        s.trajectory.coords().iter().for_each(|c| traj.extend_from_slice(c));
        times.extend(s.timing.iter());
        meta.serialize(ShotMeta { shot_index: s.shot_index, volume_index: s.volume_index, kz_index: s.kz_index })
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    meta.flush()?;
    let n = shots.len();
    write_raw(&dir.join("shots"), &Header::new(Dtype::Complex128, &[n, nm, nk, nc], &["shot", "echo", "readout", "coil"], "arbitrary"), &data)?;
    write_raw(&dir.join("shots_kspace"), &Header::new(Dtype::Float64, &[n, nm, nk, 3], &["shot", "echo", "readout", "axis"], "rad/m"), &traj)?;
    write_raw(&dir.join("shots_time"), &Header::new(Dtype::Float64, &[n, nm, nk], &["shot", "echo", "readout"], "s"), &times)?;
    Ok(())
}

pub fn read_shots(dir: &Path) -> Result<Vec<ShotData>> {
    let (h, data) = read_raw(&dir.join("shots"))?;
    expect_dims(&h, Dtype::Complex128, 4, "shots")?;
    let (ht, traj) = read_raw(&dir.join("shots_kspace"))?;
    let (hs, times) = read_raw(&dir.join("shots_time"))?;
    let [n, nm, nk, nc] = [h.dims[0], h.dims[1], h.dims[2], h.dims[3]];
    if ht.dims != [n, nm, nk, 3] || hs.dims != [n, nm, nk] {
        return Err(Error::Format("shot trajectory or timing dims differ from the samples".into()));
    }
    let meta: Vec<ShotMeta> = csv::Reader::from_path(dir.join("shots.csv"))
        .map_err(|e| Error::Format(e.to_string()))?
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(e.to_string()))?;
    if meta.len() != n {
        return Err(Error::Format(format!("shots.csv has {} rows for {n} shots", meta.len())));
    }
    let per = nm * nk;
    meta.into_iter()
        .enumerate()
        .map(|(i, m)| {
            let d = &data[i * per * nc * 2..(i + 1) * per * nc * 2];
            let samples = Array3::from_shape_vec((nm, nk, nc), d.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect())
                .map_err(|e| Error::Format(e.to_string()))?;
            let t = &times[i * per..(i + 1) * per];
            let coords = traj[i * per * 3..(i + 1) * per * 3].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            Ok(ShotData {
                samples,
                timing: Array2::from_shape_vec((nm, nk), t.to_vec()).map_err(|e| Error::Format(e.to_string()))?,
                kz_index: m.kz_index,
                volume_index: m.volume_index,
                shot_index: m.shot_index,
                trajectory: Trajectory::new(coords, t.to_vec())?,
            })
        })
        .collect()
}

/// Writes `<dir>/navigators.{bin,hdr}` (shot, sample, coil) and the played navigator
/// trajectories `<dir>/navigators_kspace.{bin,hdr}`. Sample times go in the header.
pub fn write_navigators(dir: &Path, navs: &[NavigatorSignal]) -> Result<()> {
    let first = navs.first().ok_or_else(|| Error::InvalidInput("no navigators to write".into()))?;
    let (n, nc) = first.samples.dim();
    let mut data = Vec::with_capacity(navs.len() * n * nc * 2);
    let mut traj = Vec::with_capacity(navs.len() * n * 3);
    for v in navs {
        if v.samples.dim() != (n, nc) || v.trajectory.times() != first.trajectory.times() {
            return Err(Error::InvalidInput("navigators differ in shape or timing".into()));
        }
        v.samples.iter().for_each(|x| push_complex(&mut data, *x));
        v.trajectory.coords().iter().for_each(|c| traj.extend_from_slice(c));
    }
    let h = Header::new(Dtype::Complex128, &[navs.len(), n, nc], &["shot", "sample", "coil"], "arbitrary")
        .with("tnav_s", first.tnav)
        .with("times_s", join(first.trajectory.times()));
    write_raw(&dir.join("navigators"), &h, &data)?;
    write_raw(
        &dir.join("navigators_kspace"),
        &Header::new(Dtype::Float64, &[navs.len(), n, 3], &["shot", "sample", "axis"], "rad/m"),
        &traj,
    )
}

pub fn read_navigators(dir: &Path) -> Result<Vec<NavigatorSignal>> {
    let (h, data) = read_raw(&dir.join("navigators"))?;
    expect_dims(&h, Dtype::Complex128, 3, "navigators")?;
    let (ht, traj) = read_raw(&dir.join("navigators_kspace"))?;
    let [count, n, nc] = [h.dims[0], h.dims[1], h.dims[2]];
    if ht.dims != [count, n, 3] {
        return Err(Error::Format("navigator trajectory dims differ from the samples".into()));
    }
    let times = h.get_f64s("times_s")?;
    let tnav = h.get_f64s("tnav_s")?.first().copied().ok_or_else(|| Error::Format("empty tnav_s".into()))?;
    (0..count)
        .map(|i| {
            let d = &data[i * n * nc * 2..(i + 1) * n * nc * 2];
            let coords = traj[i * n * 3..(i + 1) * n * 3].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            Ok(NavigatorSignal {
                samples: Array2::from_shape_vec((n, nc), d.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect())
                    .map_err(|e| Error::Format(e.to_string()))?,
                trajectory: Trajectory::new(coords, times.clone())?,
                tnav,
            })
        })
        .collect()
}

/// Writes `<stem>.{bin,hdr}` with dims (volume, x, y, z); voxel size and volume times
/// go in the header.
pub fn write_volumes(stem: &Path, series: &VolumeSeries) -> Result<()> {
    let d = series.dims();
    let mut data = Vec::with_capacity(series.len() * d.iter().product::<usize>() * 2);
    for v in &series.volumes {
        v.iter().for_each(|x| push_complex(&mut data, *x));
    }
    let h = Header::new(Dtype::Complex128, &[series.len(), d[0], d[1], d[2]], &["volume", "x", "y", "z"], "arbitrary")
        .with("voxel_size_mm", join(&series.voxel_size.map(|v| v * 1e3)))
        .with("times_s", join(&series.times));
    write_raw(stem, &h, &data)
}

pub fn read_volumes(stem: &Path) -> Result<VolumeSeries> {
    let (h, data) = read_raw(stem)?;
    expect_dims(&h, Dtype::Complex128, 4, "volumes")?;
    let [n, nx, ny, nz] = [h.dims[0], h.dims[1], h.dims[2], h.dims[3]];
    let vox = h.get_f64s("voxel_size_mm")?;
    if vox.len() != 3 {
        return Err(Error::Format("voxel_size_mm needs three values".into()));
    }
    let times = if n == 0 { Vec::new() } else { h.get_f64s("times_s")? };
    let per = nx * ny * nz * 2;
    let volumes = (0..n)
        .map(|i| {
            Array3::from_shape_vec((nx, ny, nz), data[i * per..(i + 1) * per].chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect())
                .map_err(|e| Error::Format(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    VolumeSeries::new(volumes, [vox[0] * 1e-3, vox[1] * 1e-3, vox[2] * 1e-3], times)
}

#[derive(Serialize, Deserialize)]
struct TruthRow {
    shot_index: i64,
    time_s: f64,
    object_nav_deg: String,
    object_nav_mm: String,
    object_epi_deg: String,
    object_epi_mm: String,
    scanner_nav_deg: String,
    scanner_nav_mm: String,
    scanner_epi_deg: String,
    scanner_epi_mm: String,
    phase_rad: f64,
    freq_hz: f64,
    residual_rotation_deg: f64,
}

fn pose_cols(p: &RigidPose) -> (String, String) {
    (join(&p.angles_deg()), join(&p.translation_mm()))
}

fn parse_pose(deg: &str, mm: &str) -> Result<RigidPose> {
    let parse = |s: &str| -> Result<[f64; 3]> {
        let v: Vec<f64> = s
            .split_whitespace()
            .map(|x| x.parse::<f64>().map_err(|e| Error::Format(e.to_string())))
            .collect::<Result<_>>()?;
        v.try_into().map_err(|_| Error::Format(format!("expected three values in {s:?}")))
    };
    Ok(RigidPose::from_degrees_mm(parse(deg)?, parse(mm)?))
}

/// Ground truth per shot, also the servo residual-vs-truth table. Poses are written as
/// space-separated `pitch roll yaw` (deg) and `dx dy dz` (mm) triples.
pub fn write_truth_csv<W: Write>(truth: &[ShotTruth], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for t in truth {
        let (ond, onm) = pose_cols(&t.object_pose_nav);
        let (oed, oem) = pose_cols(&t.object_pose_epi);
        let (snd, snm) = pose_cols(&t.scanner_pose_nav);
        let (sed, sem) = pose_cols(&t.scanner_pose_epi);
        wr.serialize(TruthRow {
            shot_index: t.shot_index,
            time_s: t.time,
            object_nav_deg: ond,
            object_nav_mm: onm,
            object_epi_deg: oed,
            object_epi_mm: oem,
            scanner_nav_deg: snd,
            scanner_nav_mm: snm,
            scanner_epi_deg: sed,
            scanner_epi_mm: sem,
            phase_rad: t.phase,
            freq_hz: t.omega / (2.0 * std::f64::consts::PI),
            residual_rotation_deg: t.scanner_pose_epi.inverse().compose(&t.object_pose_epi).rotation_angle().to_degrees(),
        })
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_truth_csv<R: Read>(r: R) -> Result<Vec<ShotTruth>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| {
            let row: TruthRow = row.map_err(|e| Error::Format(e.to_string()))?;
            Ok(ShotTruth {
                shot_index: row.shot_index,
                time: row.time_s,
                object_pose_nav: parse_pose(&row.object_nav_deg, &row.object_nav_mm)?,
                object_pose_epi: parse_pose(&row.object_epi_deg, &row.object_epi_mm)?,
                scanner_pose_nav: parse_pose(&row.scanner_nav_deg, &row.scanner_nav_mm)?,
                scanner_pose_epi: parse_pose(&row.scanner_epi_deg, &row.scanner_epi_mm)?,
                phase: row.phase_rad,
                omega: row.freq_hz * 2.0 * std::f64::consts::PI,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip_and_errors() {
        let h = Header::new(Dtype::Complex128, &[2, 3], &["a", "b"], "arbitrary").with("note", "x y");
        assert_eq!(Header::parse(&h.to_text()).unwrap(), h);
        assert!(Header::parse("format = other\n").is_err());
        let bad = h.to_text().replace("endian = little", "endian = big");
        assert!(Header::parse(&bad).is_err());
    }

    #[test]
    fn raw_round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("x");
        let vals = vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, std::f64::consts::PI, -2.5];
        let h = Header::new(Dtype::Complex128, &[3], &["n"], "arbitrary");
        write_raw(&stem, &h, &vals).unwrap();
        let (h2, v2) = read_raw(&stem).unwrap();
        assert_eq!(h2, h);
        assert_eq!(v2.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), vals.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert!(write_raw(&stem, &h, &vals[..4]).is_err());
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("x");
        write_raw(&stem, &Header::new(Dtype::Float64, &[4], &["n"], "s"), &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let bin = stem.with_extension("bin");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..20]).unwrap();
        assert!(matches!(read_raw(&stem), Err(Error::Format(_))));
    }

    #[test]
    fn volumes_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vols = (0..3).map(|i| Array3::from_shape_fn((2, 3, 4), |(a, b, c)| C64::new((a + b + c + i) as f64, -(i as f64)))).collect();
        let s = VolumeSeries::new(vols, [5e-3, 5e-3, 5e-3], vec![0.5, 1.5, 2.5]).unwrap();
        write_volumes(&dir.path().join("v"), &s).unwrap();
        let r = read_volumes(&dir.path().join("v")).unwrap();
        assert_eq!(r.volumes, s.volumes);
        assert_eq!(r.times, s.times);
        assert!((r.voxel_size[0] - 5e-3).abs() < 1e-18);
    }
}
