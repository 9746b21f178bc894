//! Dataset directory: `manifest.json` plus headerless little-endian
//! payloads (f32 features and masks, u16 labels, u8 ignore flags).

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{FrameSample, LabelMap};
use crate::metrics::FrameLabels;
use crate::region::{BBox, RegionMask, RegionSet};
use crate::taxonomy::Taxonomy;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const PREDICTIONS_MANIFEST: &str = "predictions.json";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub taxonomy: Taxonomy,
    pub frames: Vec<FrameSample>,
}

#[derive(Serialize, Deserialize)]
struct Payload {
    file: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RegionRecord {
    bbox: [f64; 4],
    mask_file: String,
    mask_shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    appearance: Payload,
    motion: Payload,
    gt_actor: Payload,
    gt_action: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_actor_ignore: Option<Payload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_action_ignore: Option<Payload>,
    regions: Vec<RegionRecord>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    taxonomy: Taxonomy,
    frames: Vec<FrameRecord>,
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    actor: Payload,
    action: Payload,
    joint: Payload,
}

#[derive(Serialize, Deserialize)]
struct PredictionManifest {
    format_version: u32,
    frames: Vec<PredictionRecord>,
}

fn f32_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn u16_bytes<'a>(v: impl Iterator<Item = &'a u16>) -> Vec<u8> {
    v.flat_map(|x| x.to_le_bytes()).collect()
}

fn write_payload(dir: &Path, file: String, shape: Vec<usize>, bytes: Vec<u8>) -> Result<Payload> {
    fs::write(dir.join(&file), bytes)?;
    Ok(Payload { file, shape })
}

fn label_payload(dir: &Path, file: String, map: &Array2<u16>) -> Result<Payload> {
    let (h, w) = map.dim();
    write_payload(dir, file, vec![h, w], u16_bytes(map.iter()))
}

fn ignore_payload(dir: &Path, file: String, map: &Option<Array2<bool>>) -> Result<Option<Payload>> {
    map.as_ref()
        .map(|m| {
            let (h, w) = m.dim();
            write_payload(dir, file, vec![h, w], m.iter().map(|&b| u8::from(b)).collect())
        })
        .transpose()
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut frames = Vec::with_capacity(dataset.frames.len());
    for (i, f) in dataset.frames.iter().enumerate() {
        let p = |s: &str| format!("f{i:05}_{s}");
        let regions = f
            .regions
            .iter()
            .enumerate()
            .map(|(r, region)| {
                let (hb, wb) = region.mask_dims();
                let mask_file = p(&format!("region{r:03}.f32"));
                fs::write(dir.join(&mask_file), f32_bytes(region.mask().data()))?;
                Ok(RegionRecord { bbox: region.bbox().to_array(), mask_file, mask_shape: [hb, wb] })
            })
            .collect::<Result<Vec<_>>>()?;
        frames.push(FrameRecord {
            appearance: write_payload(dir, p("appearance.f32"), f.appearance.shape().to_vec(), f32_bytes(f.appearance.data()))?,
            motion: write_payload(dir, p("motion.f32"), f.motion.shape().to_vec(), f32_bytes(f.motion.data()))?,
            gt_actor: label_payload(dir, p("actor.u16"), &f.gt_actor.labels)?,
            gt_action: label_payload(dir, p("action.u16"), &f.gt_action.labels)?,
            gt_actor_ignore: ignore_payload(dir, p("actor_ignore.u8"), &f.gt_actor.ignore)?,
            gt_action_ignore: ignore_payload(dir, p("action_ignore.u8"), &f.gt_action.ignore)?,
            regions,
        });
    }
    let manifest = Manifest { format_version: FORMAT_VERSION, taxonomy: dataset.taxonomy.clone(), frames };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    Ok(())
}

fn read_manifest<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = match fs::read_to_string(path) {
        Err(e) if e.kind() == ErrorKind::NotFound => {
            return Err(Error::MalformedManifest { path: path.into(), reason: "not found".into() })
        }
        r => r?,
    };
    serde_json::from_str(&text).map_err(|e| {
        if e.is_eof() {
            Error::Truncated { path: path.into(), reason: e.to_string() }
        } else {
            Error::MalformedManifest { path: path.into(), reason: e.to_string() }
        }
    })
}

fn read_raw(dir: &Path, p: &Payload, width: usize, rank: usize) -> Result<Vec<u8>> {
    let path = dir.join(&p.file);
    if p.shape.len() != rank || p.shape.contains(&0) || Path::new(&p.file).components().count() != 1 {
        return Err(Error::MalformedManifest {
            path,
            reason: format!("payload {} needs a rank-{rank} positive shape and a bare file name", p.file),
        });
    }
    read_payload_bytes(&path, &p.shape, width)
}

/// Reads a payload of `product(shape)` elements of `width` bytes. A length
/// that is not a whole number of elements means the file was cut short; a
/// whole but wrong count is a shape mismatch.
fn read_payload_bytes(path: &Path, shape: &[usize], width: usize) -> Result<Vec<u8>> {
    let path = path.to_path_buf();
    let bytes = match fs::read(&path) {
        Err(e) if e.kind() == ErrorKind::NotFound => return Err(Error::MissingPayload { path }),
        r => r?,
    };
    let expected = width * shape.iter().product::<usize>();
    if bytes.len() % width != 0 {
        return Err(Error::Truncated { path, reason: format!("{} bytes is not a whole number of elements", bytes.len()) });
    }
    if bytes.len() != expected {
        return Err(Error::PayloadShapeMismatch { path, expected, actual: bytes.len() });
    }
    Ok(bytes)
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()
}

/// Reads a headerless little-endian f32 payload of the given shape.
pub fn read_f32_payload(path: &Path, shape: &[usize]) -> Result<Tensor> {
    Tensor::new(shape.to_vec(), decode_f32(&read_payload_bytes(path, shape, 4)?))
}

pub fn write_f32_payload(path: &Path, tensor: &Tensor) -> Result<()> {
    fs::write(path, f32_bytes(tensor.data()))?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RegionFile {
    frame_width: usize,
    frame_height: usize,
    regions: Vec<RegionRecord>,
}

/// Writes `path` (JSON) plus one mask payload per region next to it, named
/// after the JSON file's stem.
pub fn write_regions(regions: &RegionSet, path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("regions");
    let records = regions
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (hb, wb) = r.mask_dims();
            let mask_file = format!("{stem}_mask{i:03}.f32");
            fs::write(dir.join(&mask_file), f32_bytes(r.mask().data()))?;
            Ok(RegionRecord { bbox: r.bbox().to_array(), mask_file, mask_shape: [hb, wb] })
        })
        .collect::<Result<Vec<_>>>()?;
    let file = RegionFile { frame_width: regions.frame_width, frame_height: regions.frame_height, regions: records };
    fs::write(path, serde_json::to_string_pretty(&file).expect("region file serializes"))?;
    Ok(())
}

/// Reads a region file written by [`write_regions`]; mask paths are
/// relative to the JSON file. Regions must satisfy the mask invariants.
pub fn read_regions(path: &Path) -> Result<RegionSet> {
    let file: RegionFile = read_manifest(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let regions = file
        .regions
        .iter()
        .map(|r| {
            let p = Payload { file: r.mask_file.clone(), shape: r.mask_shape.to_vec() };
            let mask = Tensor::new(p.shape.clone(), decode_f32(&read_raw(dir, &p, 4, 2)?))?;
            RegionMask::new(BBox::from_array(r.bbox), mask)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegionSet::new(regions, file.frame_width, file.frame_height))
}

fn read_f32(dir: &Path, p: &Payload, rank: usize) -> Result<Tensor> {
    Tensor::new(p.shape.clone(), decode_f32(&read_raw(dir, p, 4, rank)?))
}

fn read_u16(dir: &Path, p: &Payload) -> Result<Array2<u16>> {
    let bytes = read_raw(dir, p, 2, 2)?;
    let data = bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
    Ok(Array2::from_shape_vec((p.shape[0], p.shape[1]), data).expect("length checked"))
}

fn read_label_map(dir: &Path, labels: &Payload, ignore: Option<&Payload>) -> Result<LabelMap> {
    let mut map = LabelMap::new(read_u16(dir, labels)?);
    if let Some(p) = ignore {
        let bytes = read_raw(dir, p, 1, 2)?;
        let ig = Array2::from_shape_vec((p.shape[0], p.shape[1]), bytes.iter().map(|&b| b != 0).collect())
            .expect("length checked");
        if ig.dim() != map.dim() {
            return Err(Error::ShapeMismatch(format!("ignore map {:?} vs labels {:?}", ig.dim(), map.dim())));
        }
        map = map.with_ignore(ig);
    }
    Ok(map)
}

/// Reads a dataset written by [`write_dataset`]. Frames are returned as
/// stored; run `validate_frame` for semantic checks.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST);
    let m: Manifest = read_manifest(&manifest_path)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::MalformedManifest {
            path: manifest_path,
            reason: format!("unsupported format version {}", m.format_version),
        });
    }
    let mut frames = Vec::with_capacity(m.frames.len());
    for r in &m.frames {
        let gt_actor = read_label_map(dir, &r.gt_actor, r.gt_actor_ignore.as_ref())?;
        let gt_action = read_label_map(dir, &r.gt_action, r.gt_action_ignore.as_ref())?;
        let (h, w) = gt_actor.dim();
        let regions = r
            .regions
            .iter()
            .map(|rr| {
                let p = Payload { file: rr.mask_file.clone(), shape: rr.mask_shape.to_vec() };
                Ok(RegionMask::new_unchecked(BBox::from_array(rr.bbox), read_f32(dir, &p, 2)?))
            })
            .collect::<Result<Vec<_>>>()?;
        frames.push(FrameSample {
            appearance: read_f32(dir, &r.appearance, 3)?,
            motion: read_f32(dir, &r.motion, 3)?,
            gt_actor,
            gt_action,
            regions: RegionSet::new(regions, w, h),
        });
    }
    Ok(Dataset { taxonomy: m.taxonomy, frames })
}

/// One actor, action and joint label payload per frame plus
/// `predictions.json`.
pub fn write_predictions(predictions: &[FrameLabels], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let frames = predictions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(PredictionRecord {
                actor: label_payload(dir, format!("f{i:05}_actor.u16"), &p.actor.labels)?,
                action: label_payload(dir, format!("f{i:05}_action.u16"), &p.action.labels)?,
                joint: label_payload(dir, format!("f{i:05}_joint.u16"), &p.joint.labels)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m = PredictionManifest { format_version: FORMAT_VERSION, frames };
    fs::write(dir.join(PREDICTIONS_MANIFEST), serde_json::to_string_pretty(&m).expect("manifest serializes"))?;
    Ok(())
}

pub fn read_predictions(dir: &Path) -> Result<Vec<FrameLabels>> {
    let path: PathBuf = dir.join(PREDICTIONS_MANIFEST);
    let m: PredictionManifest = read_manifest(&path)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::MalformedManifest { path, reason: format!("unsupported format version {}", m.format_version) });
    }
    m.frames
        .iter()
        .map(|r| {
            Ok(FrameLabels {
                actor: LabelMap::new(read_u16(dir, &r.actor)?),
                action: LabelMap::new(read_u16(dir, &r.action)?),
                joint: LabelMap::new(read_u16(dir, &r.joint)?),
            })
        })
        .collect()
}
