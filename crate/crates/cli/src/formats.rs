//! On-disk formats.
//!
//! * Descriptor matrix (`.tldm`): little-endian; magic `TLDM`, u32 version 1,
//!   u32 rows, u32 cols, then rows × cols f32 row-major.
//! * Traverse: JSON lines, one frame per line, plus a sibling `.tldm` with the
//!   same stem holding the descriptors.
//! * Map: one JSON document with the relative-pose band as `[i, j, dx, dy, dθ]`
//!   entries, plus a descriptor matrix named in the header.
//!
//! Floats are written with shortest round-trip formatting, so every format
//! reloads bit-exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use topoloc::geometry::{Covariance3, Pose2, WorldPose};
use topoloc::map::TopometricMap;
use topoloc::traverse::{DescriptorMatrix, FrameMeta, OdometryStep, Traverse};

use crate::error::{CliError, CliResult};

const MAGIC: &[u8; 4] = b"TLDM";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

fn data_err(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {msg}", path.display()))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> CliResult<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn encode_tldm(m: &DescriptorMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tldm(bytes: &[u8]) -> Result<DescriptorMatrix, String> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err("not a TLDM descriptor file".into());
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap());
    let (version, rows, cols) = (word(1), word(2) as usize, word(3) as usize);
    if version != VERSION {
        return Err(format!("unsupported TLDM version {version}"));
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or("TLDM size overflows")?;
    if bytes.len() != expected {
        return Err(format!("TLDM payload is {} bytes, header implies {expected}", bytes.len()));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DescriptorMatrix::new(rows, cols, data).map_err(|e| e.to_string())
}

pub fn write_tldm(path: &Path, m: &DescriptorMatrix) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_all(&encode_tldm(m)).map_err(|e| CliError::io(path, e))?;
    finish(path, w)
}

pub fn read_tldm(path: &Path) -> CliResult<DescriptorMatrix> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CliError::io(path, e))?;
    decode_tldm(&bytes).map_err(|m| data_err(path, m))
}

/// Writes `items` as JSON lines.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| data_err(path, e))?;
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    finish(path, w)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| data_err(path, format!("line {}: {e}", k + 1)))?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| data_err(path, e))?;
    w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    finish(path, w)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| data_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))?;
    finish(path, w)
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Descriptor matrix stored beside a traverse or map file.
pub fn descriptor_path(path: &Path) -> PathBuf {
    path.with_extension("tldm")
}

fn pose_array(p: &WorldPose) -> [f64; 3] {
    [p.x, p.y, p.theta]
}

fn world_pose(a: [f64; 3]) -> WorldPose {
    WorldPose::new(a[0], a[1], a[2])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdomLine {
    pub mean: [f64; 3],
    /// Upper triangle (xx, xy, xθ, yy, yθ, θθ).
    pub cov: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameLine {
    pub t: usize,
    pub gt_pose: Option<[f64; 3]>,
    pub odom: Option<OdomLine>,
    pub descriptor_row: usize,
}

pub fn traverse_lines(tr: &Traverse) -> Vec<FrameLine> {
    tr.frames()
        .iter()
        .enumerate()
        .map(|(t, f)| FrameLine {
            t,
            gt_pose: f.gt_pose.as_ref().map(pose_array),
            odom: f.odom.map(|o| OdomLine {
                mean: o.mean.to_array(),
                cov: o.cov.upper(),
            }),
            descriptor_row: t,
        })
        .collect()
}

/// Writes `path` (JSON lines) and its sibling descriptor matrix.
pub fn write_traverse(path: &Path, tr: &Traverse) -> CliResult<()> {
    write_tldm(&descriptor_path(path), tr.descriptors())?;
    write_jsonl(path, &traverse_lines(tr))
}

pub fn read_traverse(path: &Path) -> CliResult<Traverse> {
    let lines: Vec<FrameLine> = read_jsonl(path)?;
    let desc = read_tldm(&descriptor_path(path))?;
    let mut frames = Vec::with_capacity(lines.len());
    let mut rows = Vec::with_capacity(lines.len());
    for (k, line) in lines.iter().enumerate() {
        if line.t != k {
            return Err(data_err(path, format!("line {} has t = {}", k + 1, line.t)));
        }
        if line.descriptor_row >= desc.rows() {
            return Err(data_err(path, format!("frame {k}: descriptor_row {} out of range", line.descriptor_row)));
        }
        let odom = match &line.odom {
            None => None,
            Some(o) => {
                let mean = Pose2::try_new(o.mean[0], o.mean[1], o.mean[2]).map_err(|e| data_err(path, format!("frame {k}: {e}")))?;
                let cov = Covariance3::from_upper(o.cov).map_err(|e| data_err(path, format!("frame {k}: {e}")))?;
                Some(OdometryStep::new(mean, cov))
            }
        };
        frames.push(FrameMeta {
            odom,
            gt_pose: line.gt_pose.map(world_pose),
        });
        rows.push(line.descriptor_row);
    }
    let desc = if rows.iter().enumerate().all(|(k, &r)| k == r) && desc.rows() == rows.len() {
        desc
    } else {
        desc.select(&rows)
    };
    Traverse::new(desc, frames).map_err(|e| data_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapFile {
    #[serde(rename = "N")]
    pub n: usize,
    pub window: usize,
    pub node_spacing: f64,
    pub d: usize,
    /// Relative to the directory of the map file.
    pub descriptor_file: String,
    pub gt_poses: Option<Vec<[f64; 3]>>,
    pub rel_pose: Vec<(usize, usize, f64, f64, f64)>,
}

/// Writes the map header to `path` and descriptors to its sibling `.tldm`.
pub fn write_map(path: &Path, map: &TopometricMap) -> CliResult<()> {
    let dpath = descriptor_path(path);
    write_tldm(&dpath, map.descriptors())?;
    let mut rel_pose = Vec::with_capacity(map.len() * map.window());
    for i in 0..map.len() {
        for j in i..(i + map.window()).min(map.len()) {
            let p = map.rel_pose(i, j)?;
            rel_pose.push((i, j, p.dx(), p.dy(), p.dtheta()));
        }
    }
    let file = MapFile {
        n: map.len(),
        window: map.window(),
        node_spacing: map.node_spacing(),
        d: map.dim(),
        descriptor_file: dpath.file_name().unwrap().to_string_lossy().into_owned(),
        gt_poses: map.gt_poses().map(|g| g.iter().map(pose_array).collect()),
        rel_pose,
    };
    write_json(path, &file)
}

pub fn read_map(path: &Path) -> CliResult<TopometricMap> {
    let file: MapFile = read_json(path)?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let desc = read_tldm(&dir.join(&file.descriptor_file))?;
    if desc.rows() != file.n || desc.cols() != file.d {
        return Err(data_err(
            path,
            format!("header says {}x{}, descriptor file holds {}x{}", file.n, file.d, desc.rows(), desc.cols()),
        ));
    }
    if file.window < 2 {
        return Err(data_err(path, format!("window must be >= 2, got {}", file.window)));
    }
    let mut band: Vec<Vec<Option<Pose2>>> = (0..file.n).map(|i| vec![None; file.window.min(file.n - i)]).collect();
    for &(i, j, dx, dy, dth) in &file.rel_pose {
        let slot = band
            .get_mut(i)
            .and_then(|row| j.checked_sub(i).and_then(|k| row.get_mut(k)))
            .ok_or_else(|| data_err(path, format!("rel_pose entry ({i}, {j}) outside the band")))?;
        if slot.is_some() {
            return Err(data_err(path, format!("duplicate rel_pose entry ({i}, {j})")));
        }
        *slot = Some(Pose2::try_new(dx, dy, dth).map_err(|e| data_err(path, e))?);
    }
    let band = band
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            row.into_iter()
                .enumerate()
                .map(|(k, p)| p.ok_or_else(|| data_err(path, format!("missing rel_pose entry ({i}, {})", i + k))))
                .collect::<CliResult<Vec<_>>>()
        })
        .collect::<CliResult<Vec<_>>>()?;
    let gt = file.gt_poses.map(|g| g.into_iter().map(world_pose).collect());
    TopometricMap::from_band(desc, gt, file.window, file.node_spacing, band).map_err(|e| data_err(path, e))
}
