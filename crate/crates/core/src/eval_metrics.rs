//! Detection evaluation: IoU, greedy TP/FP matching, cumulative precision
//! and recall, all-point interpolated AP, mAP and the IoU threshold sweep.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of IoU thresholds in a sweep: 0.01, 0.02, ..., 1.00.
pub const SWEEP_STEPS: usize = 100;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("mAP needs at least one class")]
    NoClasses,
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: row {row}: {message}")]
    InvalidRow {
        path: String,
        row: usize,
        message: String,
    },
}

/// Axis-aligned box: top-left corner plus size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = overlap(self.x, self.w, other.x, other.w);
        let ih = overlap(self.y, self.h, other.y, other.h);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }
}

/// Length of `[a0, a0 + aw) ∩ [b0, b0 + bw)`. When one interval contains
/// the other its own length is returned, since `(a0 + aw) - a0` need not
/// round back to `aw`; this keeps `iou(a, a) == 1` exact.
fn overlap(a0: f64, aw: f64, b0: f64, bw: f64) -> f64 {
    let (a1, b1) = (a0 + aw, b0 + bw);
    let a_in_b = a0 >= b0 && a1 <= b1;
    let b_in_a = b0 >= a0 && b1 <= a1;
    match (a_in_b, b_in_a) {
        (true, true) => aw.min(bw),
        (true, false) => aw,
        (false, true) => bw,
        (false, false) => a1.min(b1) - a0.max(b0),
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Detection {
    pub image_id: String,
    pub class_label: String,
    pub score: f64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruthBox {
    pub image_id: String,
    pub class_label: String,
    pub bbox: BBox,
}

#[derive(Debug, Deserialize)]
struct DetectionRow {
    image_id: String,
    class: String,
    score: f64,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Debug, Deserialize)]
struct GroundTruthRow {
    image_id: String,
    class: String,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MatchLabel {
    #[serde(rename = "TP")]
    Tp,
    #[serde(rename = "FP")]
    Fp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedDetection {
    /// Index into the input detection slice.
    pub index: usize,
    pub label: MatchLabel,
    pub iou: f64,
}

/// Ranking used for matching: score descending, then image id, then input
/// position.
pub fn rank_detections(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then_with(|| dets[a].image_id.cmp(&dets[b].image_id))
            .then_with(|| a.cmp(&b))
    });
    order
}

/// Greedy one-to-one matching for a single class.
///
/// Each detection, in rank order, takes the not-yet-matched ground truth box
/// of the same image with the highest IoU (first in input order on ties). It
/// is a TP when that IoU reaches `thr`, and the box is then consumed.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    thr: f64,
) -> Vec<MatchedDetection> {
    let mut by_image: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.image_id.as_str()).or_default().push(i);
    }
    let mut consumed = vec![false; gts.len()];

    rank_detections(dets)
        .into_iter()
        .map(|index| {
            let det = &dets[index];
            let best = by_image
                .get(det.image_id.as_str())
                .into_iter()
                .flatten()
                .filter(|&&g| !consumed[g])
                .map(|&g| (g, iou(&det.bbox, &gts[g].bbox)))
                .fold(None, |best: Option<(usize, f64)>, (g, v)| match best {
                    Some((_, bv)) if bv >= v => best,
                    _ => Some((g, v)),
                });
            match best {
                Some((g, v)) if v >= thr => {
                    consumed[g] = true;
                    MatchedDetection {
                        index,
                        label: MatchLabel::Tp,
                        iou: v,
                    }
                }
                other => MatchedDetection {
                    index,
                    label: MatchLabel::Fp,
                    iou: other.map_or(0.0, |(_, v)| v),
                },
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Cumulative precision/recall after each ranked label.
pub fn pr_curve(labels: &[MatchLabel], gt_count: usize) -> Vec<PrPoint> {
    if gt_count == 0 {
        return Vec::new();
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    labels
        .iter()
        .map(|l| {
            match l {
                MatchLabel::Tp => tp += 1,
                MatchLabel::Fp => fp += 1,
            }
            PrPoint {
                recall: tp as f64 / gt_count as f64,
                precision: tp as f64 / (tp + fp) as f64,
            }
        })
        .collect()
}

/// All-point interpolated area under the P-R curve.
///
/// Over the distinct recall levels `0 = r_0 < r_1 < ... < r_n`, sums
/// `(r_{i+1} - r_i) * max{p : r >= r_{i+1}}`.
pub fn average_precision(points: &[PrPoint]) -> f64 {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.recall.total_cmp(&b.recall));
    // suffix_max[i] = max precision over sorted[i..]
    let mut suffix_max = vec![0.0f64; sorted.len() + 1];
    for i in (0..sorted.len()).rev() {
        suffix_max[i] = suffix_max[i + 1].max(sorted[i].precision);
    }

    let mut ap = 0.0;
    let mut prev = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let level = sorted[i].recall;
        if level > prev {
            ap += (level - prev) * suffix_max[i];
            prev = level;
        }
        while i < sorted.len() && sorted[i].recall == level {
            i += 1;
        }
    }
    ap.clamp(0.0, 1.0)
}

pub fn map_score(aps: &[f64]) -> Result<f64, EvalError> {
    if aps.is_empty() {
        return Err(EvalError::NoClasses);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// AP of one class at one IoU threshold.
pub fn class_ap(dets: &[Detection], gts: &[GroundTruthBox], thr: f64) -> f64 {
    let labels: Vec<MatchLabel> = match_detections(dets, gts, thr)
        .into_iter()
        .map(|m| m.label)
        .collect();
    average_precision(&pr_curve(&labels, gts.len()))
}

pub fn sweep_thresholds() -> Vec<f64> {
    (1..=SWEEP_STEPS)
        .map(|k| k as f64 / SWEEP_STEPS as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    /// Classes with at least one ground truth box, sorted.
    pub classes: Vec<String>,
    /// `ap[c][t]` for class `classes[c]` at `thresholds[t]`.
    pub ap: Vec<Vec<f64>>,
    /// Mean over classes per threshold; `None` when there are no classes.
    pub map: Vec<Option<f64>>,
}

impl EvalReport {
    /// `threshold,class,ap,map`, one row per threshold and class.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["threshold", "class", "ap", "map"])
            .expect("in-memory write");
        for (t, thr) in self.thresholds.iter().enumerate() {
            let map = self.map[t].map_or(String::new(), |m| format!("{m:.6}"));
            for (c, class) in self.classes.iter().enumerate() {
                w.write_record([
                    format!("{thr:.2}"),
                    class.clone(),
                    format!("{:.6}", self.ap[c][t]),
                    map.clone(),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

struct ClassData<'a> {
    label: &'a str,
    dets: Vec<Detection>,
    gts: Vec<GroundTruthBox>,
}

fn group_by_class<'a>(dets: &'a [Detection], gts: &'a [GroundTruthBox]) -> Vec<ClassData<'a>> {
    let classes: BTreeSet<&str> = gts.iter().map(|g| g.class_label.as_str()).collect();
    classes
        .into_iter()
        .map(|label| ClassData {
            label,
            dets: dets
                .iter()
                .filter(|d| d.class_label == label)
                .cloned()
                .collect(),
            gts: gts
                .iter()
                .filter(|g| g.class_label == label)
                .cloned()
                .collect(),
        })
        .collect()
}

fn assemble(classes: &[ClassData<'_>], thresholds: Vec<f64>, ap: Vec<Vec<f64>>) -> EvalReport {
    let map = (0..thresholds.len())
        .map(|t| {
            let column: Vec<f64> = ap.iter().map(|row| row[t]).collect();
            map_score(&column).ok()
        })
        .collect();
    EvalReport {
        thresholds,
        classes: classes.iter().map(|c| c.label.to_owned()).collect(),
        ap,
        map,
    }
}

/// Per-class AP and mAP at every threshold of the sweep. Detection classes
/// without ground truth are skipped.
pub fn threshold_sweep(dets: &[Detection], gts: &[GroundTruthBox]) -> EvalReport {
    threshold_sweep_parallel(dets, gts, 1)
}

/// [`threshold_sweep`] with the thresholds split across `jobs` threads.
/// Output is identical for any `jobs`.
pub fn threshold_sweep_parallel(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    jobs: usize,
) -> EvalReport {
    let classes = group_by_class(dets, gts);
    let thresholds = sweep_thresholds();
    let jobs = jobs.clamp(1, thresholds.len());
    let chunk = thresholds.len().div_ceil(jobs);

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); thresholds.len()];
    std::thread::scope(|scope| {
        let handles: Vec<_> = thresholds
            .chunks(chunk)
            .map(|part| {
                let classes = &classes;
                scope.spawn(move || {
                    part.iter()
                        .map(|&thr| {
                            classes
                                .iter()
                                .map(|c| class_ap(&c.dets, &c.gts, thr))
                                .collect::<Vec<f64>>()
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut t = 0;
        for h in handles {
            for col in h.join().expect("sweep worker panicked") {
                columns[t] = col;
                t += 1;
            }
        }
    });

    let ap = (0..classes.len())
        .map(|c| columns.iter().map(|col| col[c]).collect())
        .collect();
    assemble(&classes, thresholds, ap)
}

fn read_csv<T: for<'de> Deserialize<'de>>(
    reader: impl io::Read,
    path: &str,
) -> Result<Vec<T>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    rdr.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|source| EvalError::Csv {
            path: path.to_owned(),
            source,
        })
}

fn check_box(b: &BBox, path: &str, row: usize) -> Result<(), EvalError> {
    let finite = [b.x, b.y, b.w, b.h].iter().all(|v| v.is_finite());
    if !finite || b.w < 0.0 || b.h < 0.0 {
        return Err(EvalError::InvalidRow {
            path: path.to_owned(),
            row,
            message: "box needs finite coordinates and w, h >= 0".into(),
        });
    }
    Ok(())
}

/// Reads `image_id,class,score,x,y,w,h` rows.
pub fn read_detections(reader: impl io::Read, path: &str) -> Result<Vec<Detection>, EvalError> {
    let rows: Vec<DetectionRow> = read_csv(reader, path)?;
    let dets: Vec<Detection> = rows
        .into_iter()
        .map(|r| Detection {
            image_id: r.image_id,
            class_label: r.class,
            score: r.score,
            bbox: BBox::new(r.x, r.y, r.w, r.h),
        })
        .collect();
    for (i, d) in dets.iter().enumerate() {
        check_box(&d.bbox, path, i + 1)?;
        if !(0.0..=1.0).contains(&d.score) {
            return Err(EvalError::InvalidRow {
                path: path.to_owned(),
                row: i + 1,
                message: format!("score {} outside [0, 1]", d.score),
            });
        }
    }
    Ok(dets)
}

/// Reads `image_id,class,x,y,w,h` rows.
pub fn read_ground_truth(
    reader: impl io::Read,
    path: &str,
) -> Result<Vec<GroundTruthBox>, EvalError> {
    let rows: Vec<GroundTruthRow> = read_csv(reader, path)?;
    let gts: Vec<GroundTruthBox> = rows
        .into_iter()
        .map(|r| GroundTruthBox {
            image_id: r.image_id,
            class_label: r.class,
            bbox: BBox::new(r.x, r.y, r.w, r.h),
        })
        .collect();
    for (i, g) in gts.iter().enumerate() {
        check_box(&g.bbox, path, i + 1)?;
    }
    Ok(gts)
}
