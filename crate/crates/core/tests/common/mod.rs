//! Shared generators and brute-force references for the integration suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::PathBuf;

use percept_place::depth::DepthImage;
use percept_place::eval_metrics::{Detection, GroundTruthBox};
use percept_place::topology::{Device, DeviceClass, LinkSet, Sensor};
use percept_place::{BBox, Configuration, SelectionResult, Topology};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
        .join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const RESOLUTIONS: [(u32, u32); 5] = [
    (320, 240),
    (640, 480),
    (1280, 720),
    (1920, 1080),
    (800, 600),
];
const POWERS: [f64; 6] = [5.0, 10.15, 12.59, 13.67, 17.35, 21.47];
const CLASSES: [DeviceClass; 3] = [DeviceClass::Cpu, DeviceClass::OnboardGpu, DeviceClass::Vpu];

fn random_nodes<R: Rng>(rng: &mut R, ns: usize, nd: usize) -> (Vec<Sensor>, Vec<Device>) {
    let sensors = (0..ns)
        .map(|i| {
            let (w, h) = RESOLUTIONS[rng.random_range(0..RESOLUTIONS.len())];
            let fps = if rng.random_bool(0.5) { 30.0 } else { 15.0 };
            Sensor::new(format!("s{i}"), w, h, fps)
        })
        .collect();
    let devices = (0..nd)
        .map(|i| {
            // Mix a small discrete set (ties) with continuous values.
            let power = if rng.random_bool(0.5) {
                POWERS[rng.random_range(0..POWERS.len())]
            } else {
                rng.random_range(1.0..30.0)
            };
            Device::new(format!("d{i}"), CLASSES[rng.random_range(0..3)], power)
        })
        .collect();
    (sensors, devices)
}

/// Every sensor directly linked to every device; all devices share Ethernet.
pub fn fully_connected<R: Rng>(rng: &mut R, max_s: usize, max_d: usize) -> Topology {
    let ns = rng.random_range(1..=max_s);
    let nd = rng.random_range(1..=max_d);
    let (sensors, devices) = random_nodes(rng, ns, nd);
    let mut links = LinkSet::default();
    for s in &sensors {
        for d in &devices {
            if rng.random_bool(0.5) {
                links.add_usb(&s.id, &d.id);
            } else {
                links.add_enet_sd(&s.id, &d.id);
            }
        }
    }
    for w in devices.windows(2) {
        links.add_enet_dd(&w[0].id, &w[1].id);
    }
    Topology::new(sensors, devices, links).expect("generated topology is valid")
}

/// Random sparse links; sizes may be zero.
pub fn partially_connected<R: Rng>(rng: &mut R, max_s: usize, max_d: usize) -> Topology {
    let ns = rng.random_range(0..=max_s);
    let nd = rng.random_range(0..=max_d);
    let (sensors, devices) = random_nodes(rng, ns, nd);
    let p_sd = rng.random_range(0.1..0.6);
    let p_dd = rng.random_range(0.0..0.8);
    let mut links = LinkSet::default();
    for s in &sensors {
        for d in &devices {
            match rng.random_range(0.0..1.0) {
                x if x < p_sd / 2.0 => {
                    links.add_usb(&s.id, &d.id);
                }
                x if x < p_sd => {
                    links.add_enet_sd(&s.id, &d.id);
                }
                _ => {}
            }
        }
    }
    for (i, a) in devices.iter().enumerate() {
        for b in &devices[i + 1..] {
            if rng.random_bool(p_dd) {
                links.add_enet_dd(&a.id, &b.id);
            }
        }
    }
    Topology::new(sensors, devices, links).expect("generated topology is valid")
}

/// Breadth-first search over device-to-device links.
pub fn bfs_reachable(t: &Topology, from: &str, to: &str) -> bool {
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, b) in &t.links().enet_dd {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let mut seen = BTreeSet::from([from]);
    let mut queue = VecDeque::from([from]);
    while let Some(n) = queue.pop_front() {
        if n == to {
            return true;
        }
        for &m in adj.get(n).into_iter().flatten() {
            if seen.insert(m) {
                queue.push_back(m);
            }
        }
    }
    false
}

fn linked(t: &Topology, s: &str, d: &str) -> bool {
    let pair = (s.to_owned(), d.to_owned());
    t.links().usb.contains(&pair) || t.links().enet_sd.contains(&pair)
}

/// Link and exclusivity checks written against the raw link sets.
pub fn check_feasible(t: &Topology, configs: &[Configuration]) -> Result<(), String> {
    let mut used_devices = BTreeSet::new();
    let mut used_sensors = BTreeSet::new();
    for c in configs {
        if !used_sensors.insert(c.sensor.as_str()) {
            return Err(format!("sensor {} assigned twice", c.sensor));
        }
        for d in std::iter::once(&c.processor).chain(c.relay.as_ref()) {
            if !used_devices.insert(d.as_str()) {
                return Err(format!("device {d} used twice"));
            }
        }
        match &c.relay {
            None if !linked(t, &c.sensor, &c.processor) => {
                return Err(format!("{} not linked to {}", c.sensor, c.processor));
            }
            Some(r) if !linked(t, &c.sensor, r) => {
                return Err(format!("{} not linked to relay {r}", c.sensor));
            }
            Some(r) if !bfs_reachable(t, r, &c.processor) => {
                return Err(format!("relay {r} cannot reach {}", c.processor));
            }
            _ => {}
        }
    }
    Ok(())
}

/// Every sensor and device is accounted for exactly once.
pub fn check_partition(t: &Topology, r: &SelectionResult) -> Result<(), String> {
    let assigned: BTreeSet<&str> = r.configurations.iter().map(|c| c.sensor.as_str()).collect();
    let unassigned: BTreeSet<&str> = r
        .unassigned_sensors
        .iter()
        .map(|u| u.sensor.as_str())
        .collect();
    let all: BTreeSet<&str> = t.sensors().iter().map(|s| s.id.as_str()).collect();
    if !assigned.is_disjoint(&unassigned) || &assigned | &unassigned != all {
        return Err("sensor partition broken".into());
    }
    let used: BTreeSet<&str> = r.configurations.iter().flat_map(|c| c.devices()).collect();
    let idle: BTreeSet<&str> = r.idle_devices.iter().map(String::as_str).collect();
    let all: BTreeSet<&str> = t.devices().iter().map(|d| d.id.as_str()).collect();
    if !used.is_disjoint(&idle) || &used | &idle != all {
        return Err("device partition broken".into());
    }
    Ok(())
}

/// Random depth image with holes (zeros) at the given rate.
pub fn random_depth<R: Rng>(rng: &mut R, hole_rate: f64) -> DepthImage {
    let w = rng.random_range(1..=48);
    let h = rng.random_range(1..=48);
    let values = (0..w * h)
        .map(|_| {
            if rng.random_bool(hole_rate) {
                0.0
            } else {
                rng.random_range(0.2..6.0)
            }
        })
        .collect();
    DepthImage::new(w, h, values).expect("dimensions match")
}

/// Scan the whole image and keep pixels whose offset from the floored
/// centre lies in `[-len/2, len - len/2)`.
pub fn brute_force_depth(img: &DepthImage, bbox: &BBox, rw: u32, rh: u32) -> Option<f64> {
    let cx = (bbox.x + bbox.w / 2.0).floor() as i64;
    let cy = (bbox.y + bbox.h / 2.0).floor() as i64;
    let (hw, hh) = (i64::from(rw / 2), i64::from(rh / 2));
    let (mut sum, mut valid, mut total) = (0.0, 0usize, 0usize);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (dx, dy) = (x as i64 - cx, y as i64 - cy);
            if dx >= -hw && dx < i64::from(rw) - hw && dy >= -hh && dy < i64::from(rh) - hh {
                total += 1;
                let v = img.get(x, y);
                if v != 0.0 {
                    sum += v;
                    valid += 1;
                }
            }
        }
    }
    (total > 0 && 2 * valid >= total).then(|| sum / valid as f64)
}

pub fn ref_iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.w * a.h + b.w * b.h - inter)
}

/// Reference AP for one class: explicit nested-loop matching followed by the
/// classic precision-envelope integration.
pub fn ref_class_ap(dets: &[Detection], gts: &[GroundTruthBox], thr: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then_with(|| dets[a].image_id.cmp(&dets[b].image_id))
            .then(a.cmp(&b))
    });
    let mut taken = vec![false; gts.len()];
    let mut tp_flags = Vec::new();
    for &i in &order {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.image_id != d.image_id {
                continue;
            }
            let v = ref_iou(&d.bbox, &gt.bbox);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        let tp = matches!(best, Some((_, v)) if v >= thr);
        if tp {
            taken[best.unwrap().0] = true;
        }
        tp_flags.push(tp);
    }

    // mrec = [0, r_1..r_n, 1], mpre = [0, p_1..p_n, 0]
    let mut mrec = vec![0.0];
    let mut mpre = vec![0.0];
    let (mut ctp, mut cfp) = (0.0, 0.0);
    for tp in tp_flags {
        if tp {
            ctp += 1.0;
        } else {
            cfp += 1.0;
        }
        mrec.push(ctp / gts.len() as f64);
        mpre.push(ctp / (ctp + cfp));
    }
    mrec.push(1.0);
    mpre.push(0.0);
    for i in (0..mpre.len() - 1).rev() {
        mpre[i] = mpre[i].max(mpre[i + 1]);
    }
    (1..mrec.len())
        .filter(|&i| mrec[i] != mrec[i - 1])
        .map(|i| (mrec[i] - mrec[i - 1]) * mpre[i])
        .sum()
}

/// Small random detection dataset. Scores are distinct; boxes sit on a
/// coarse grid so overlaps are frequent.
pub fn random_detection_set<R: Rng>(rng: &mut R) -> (Vec<Detection>, Vec<GroundTruthBox>) {
    let images = ["a", "b"];
    let classes = ["car", "cone"];
    let n_gt = rng.random_range(0..=5);
    let n_det = rng.random_range(0..=7);
    let grid_box = |rng: &mut R| {
        BBox::new(
            f64::from(rng.random_range(0..6u8)) * 4.0,
            f64::from(rng.random_range(0..6u8)) * 4.0,
            f64::from(rng.random_range(2..10u8)) * 2.0,
            f64::from(rng.random_range(2..10u8)) * 2.0,
        )
    };
    let gts = (0..n_gt)
        .map(|_| GroundTruthBox {
            image_id: images[rng.random_range(0..2)].into(),
            class_label: classes[rng.random_range(0..2)].into(),
            bbox: grid_box(rng),
        })
        .collect();
    let mut scores: Vec<u32> = (1..=100).collect();
    let dets = (0..n_det)
        .map(|_| {
            let s = scores.swap_remove(rng.random_range(0..scores.len()));
            Detection {
                image_id: images[rng.random_range(0..2)].into(),
                class_label: classes[rng.random_range(0..2)].into(),
                score: f64::from(s) / 100.0,
                bbox: grid_box(rng),
            }
        })
        .collect();
    (dets, gts)
}

/// Single class, single image; ground truth boxes are far apart so each
/// detection overlaps at most one of them.
pub fn one_overlap_set<R: Rng>(rng: &mut R) -> (Vec<Detection>, Vec<GroundTruthBox>) {
    let n_gt = rng.random_range(1..=4);
    let gts: Vec<GroundTruthBox> = (0..n_gt)
        .map(|i| GroundTruthBox {
            image_id: "img".into(),
            class_label: "obj".into(),
            bbox: BBox::new(100.0 * i as f64, 0.0, 20.0, 20.0),
        })
        .collect();
    let n_det = rng.random_range(0..=6);
    let mut scores: Vec<u32> = (1..=100).collect();
    let dets = (0..n_det)
        .map(|_| {
            let g = rng.random_range(0..n_gt);
            let bbox = BBox::new(
                100.0 * g as f64 + rng.random_range(-15.0..15.0),
                rng.random_range(-15.0..15.0),
                rng.random_range(5.0..30.0),
                rng.random_range(5.0..30.0),
            );
            let s = scores.swap_remove(rng.random_range(0..scores.len()));
            Detection {
                image_id: "img".into(),
                class_label: "obj".into(),
                score: f64::from(s) / 100.0,
                bbox,
            }
        })
        .collect();
    (dets, gts)
}

pub fn split_by_class<'a>(
    dets: &'a [Detection],
    gts: &'a [GroundTruthBox],
    class: &str,
) -> (Vec<Detection>, Vec<GroundTruthBox>) {
    (
        dets.iter()
            .filter(|d| d.class_label == class)
            .cloned()
            .collect(),
        gts.iter()
            .filter(|g| g.class_label == class)
            .cloned()
            .collect(),
    )
}
