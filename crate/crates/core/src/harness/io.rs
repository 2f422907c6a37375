//! JSON Lines files for datasets and detections, JSON for models and reports.
//!
//! Class indices are 1-based on disk.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpclError};
use crate::evaldet::Detection;
use crate::geometry::BBox;
use crate::types::{Dataset, DetectorSet, GtObject, Hypothesis, ImageBag};

#[derive(Serialize, Deserialize)]
struct HypRecord {
    bbox: BBox,
    feat: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GtRecord {
    class: usize,
    bbox: BBox,
}

#[derive(Serialize, Deserialize)]
struct BagRecord {
    id: String,
    weak_labels: Vec<usize>,
    saliency_box: Option<BBox>,
    hypotheses: Vec<HypRecord>,
    gt: Option<Vec<GtRecord>>,
}

#[derive(Serialize, Deserialize)]
struct DetectionRecord {
    bag_id: String,
    class: usize,
    bbox: BBox,
    score: f64,
}

fn to_zero_based(c: usize) -> std::result::Result<usize, String> {
    c.checked_sub(1).ok_or_else(|| "class indices are 1-based".to_string())
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| SpclError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg: e.to_string(),
        })?;
        out.push((n + 1, rec));
    }
    Ok(out)
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a dataset, inferring the class count from the largest class index
/// seen unless `num_classes` is given.
pub fn load_dataset_with(path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let parse_err = |line, msg: String| SpclError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut bags = Vec::new();
    let mut feat_dim: Option<usize> = None;
    let mut max_class = 0;
    for (line, rec) in read_lines::<BagRecord>(path)? {
        let weak_labels = rec
            .weak_labels
            .iter()
            .map(|&c| to_zero_based(c))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|m| parse_err(line, m))?;
        let gt = rec
            .gt
            .map(|g| {
                g.into_iter()
                    .map(|o| to_zero_based(o.class).map(|class| GtObject { class, bbox: o.bbox }))
                    .collect::<std::result::Result<Vec<_>, _>>()
            })
            .transpose()
            .map_err(|m| parse_err(line, m))?;
        let mut hyps = Vec::with_capacity(rec.hypotheses.len());
        for h in rec.hypotheses {
            let dim = *feat_dim.get_or_insert(h.feat.len());
            if h.feat.len() != dim {
                return Err(parse_err(
                    line,
                    format!("bag `{}`: feature dimension {} differs from {dim}", rec.id, h.feat.len()),
                ));
            }
            hyps.push(Hypothesis::new(h.feat, h.bbox).map_err(|e| parse_err(line, e.to_string()))?);
        }
        for c in weak_labels.iter().chain(gt.iter().flatten().map(|o| &o.class)) {
            max_class = max_class.max(c + 1);
        }
        bags.push(ImageBag::new(rec.id, hyps, weak_labels, rec.saliency_box, gt));
    }
    Dataset::new(bags, num_classes.unwrap_or(max_class), feat_dim.unwrap_or(0))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    load_dataset_with(path, None)
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    write_lines(
        path,
        data.bags.iter().map(|b| BagRecord {
            id: b.id.clone(),
            weak_labels: b.weak_labels.iter().map(|c| c + 1).collect(),
            saliency_box: b.saliency_box,
            hypotheses: b
                .hypotheses
                .iter()
                .map(|h| HypRecord {
                    bbox: h.bbox,
                    feat: h.feat.clone(),
                })
                .collect(),
            gt: b.gt_objects.as_ref().map(|g| {
                g.iter()
                    .map(|o| GtRecord {
                        class: o.class + 1,
                        bbox: o.bbox,
                    })
                    .collect()
            }),
        }),
    )
}

pub fn save_detections(dets: &[Detection], path: &Path) -> Result<()> {
    write_lines(
        path,
        dets.iter().map(|d| DetectionRecord {
            bag_id: d.bag_id.clone(),
            class: d.class + 1,
            bbox: d.bbox,
            score: d.score,
        }),
    )
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection>> {
    read_lines::<DetectionRecord>(path)?
        .into_iter()
        .map(|(line, r)| {
            let class = to_zero_based(r.class).map_err(|msg| SpclError::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            })?;
            if !r.score.is_finite() {
                return Err(SpclError::NonFinite(format!("detection score on line {line}")));
            }
            Ok(Detection {
                bag_id: r.bag_id,
                class,
                bbox: r.bbox,
                score: r.score,
            })
        })
        .collect()
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn save_detectors(det: &DetectorSet, path: &Path) -> Result<()> {
    write_json(det, path)
}

pub fn load_detectors(path: &Path) -> Result<DetectorSet> {
    let det: DetectorSet = read_json(path)?;
    det.validate()?;
    Ok(det)
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    write_lines(path, items)
}
