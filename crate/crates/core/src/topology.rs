//! Sensor/device/link graph.
//!
//! A topology file is a TOML document with three top-level tables:
//!
//! ```toml
//! [[sensors]]
//! id = "cam_front"
//! width = 1920
//! height = 1080
//! fps = 30          # optional, defaults to 30
//!
//! [[devices]]
//! id = "nuc1_gpu"
//! class = "ONBOARD_GPU"   # CPU | ONBOARD_GPU | VPU
//! power = 21.47
//!
//! [links]
//! usb = [["cam_front", "nuc1_gpu"]]
//! enet_sd = []
//! enet_dd = [["nuc1_gpu", "nuc2_cpu"]]
//! ```
//!
//! Unknown keys are rejected. Link pairs are stored as sorted sets, and
//! `enet_dd` pairs are unordered, so two documents that differ only in pair
//! order or duplicate entries parse to the same [`Topology`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_FRAME_RATE: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("malformed topology document: {0}")]
    Malformed(String),
    #[error("{path}: duplicate id \"{id}\"")]
    DuplicateId { path: String, id: String },
    #[error("{path}: unknown {kind} id \"{id}\"")]
    UnknownId {
        path: String,
        kind: &'static str,
        id: String,
    },
    #[error("{path}: {message}")]
    InvalidField { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sensor {
    pub id: String,
    pub width: u32,
    pub height: u32,
    #[serde(rename = "fps", default = "default_frame_rate")]
    pub frame_rate: f64,
}

fn default_frame_rate() -> f64 {
    DEFAULT_FRAME_RATE
}

impl Sensor {
    pub fn new(id: impl Into<String>, width: u32, height: u32, frame_rate: f64) -> Self {
        Self {
            id: id.into(),
            width,
            height,
            frame_rate,
        }
    }

    /// Pixels per frame, the primary key when ranking sensors.
    pub fn image_size(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeviceClass {
    #[serde(rename = "CPU")]
    Cpu,
    #[serde(rename = "ONBOARD_GPU")]
    OnboardGpu,
    #[serde(rename = "VPU")]
    Vpu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Device {
    pub id: String,
    pub class: DeviceClass,
    /// Relative computational power. Larger is faster.
    pub power: f64,
}

impl Device {
    pub fn new(id: impl Into<String>, class: DeviceClass, power: f64) -> Self {
        Self {
            id: id.into(),
            class,
            power,
        }
    }
}

/// Boolean connectivity between sensors and devices.
///
/// `usb` and `enet_sd` hold `(sensor, device)` pairs; `enet_dd` holds
/// device pairs normalized so the smaller id comes first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinkSet {
    pub usb: BTreeSet<(String, String)>,
    pub enet_sd: BTreeSet<(String, String)>,
    pub enet_dd: BTreeSet<(String, String)>,
}

impl LinkSet {
    pub fn add_usb(&mut self, sensor: &str, device: &str) -> &mut Self {
        self.usb.insert((sensor.to_owned(), device.to_owned()));
        self
    }

    pub fn add_enet_sd(&mut self, sensor: &str, device: &str) -> &mut Self {
        self.enet_sd.insert((sensor.to_owned(), device.to_owned()));
        self
    }

    pub fn add_enet_dd(&mut self, a: &str, b: &str) -> &mut Self {
        self.enet_dd.insert(normalize_pair(a, b));
        self
    }

    pub fn usb(&self, sensor: &str, device: &str) -> bool {
        contains_pair(&self.usb, sensor, device)
    }

    pub fn enet(&self, sensor: &str, device: &str) -> bool {
        contains_pair(&self.enet_sd, sensor, device)
    }

    /// `usb(s, d) or enet(s, d)`.
    pub fn direct(&self, sensor: &str, device: &str) -> bool {
        self.usb(sensor, device) || self.enet(sensor, device)
    }
}

fn normalize_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

fn contains_pair(set: &BTreeSet<(String, String)>, a: &str, b: &str) -> bool {
    // BTreeSet<(String, String)> cannot be probed with borrowed tuples.
    set.range((a.to_owned(), b.to_owned())..)
        .next()
        .is_some_and(|(x, y)| x == a && y == b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    sensors: Vec<Sensor>,
    devices: Vec<Device>,
    links: LinkSet,
    /// Ethernet component label per device, aligned with `devices`.
    enet_component: Vec<usize>,
}

impl Topology {
    pub fn new(
        sensors: Vec<Sensor>,
        devices: Vec<Device>,
        links: LinkSet,
    ) -> Result<Self, TopologyError> {
        let mut seen = BTreeSet::new();
        for (i, s) in sensors.iter().enumerate() {
            let path = format!("sensors[{i}]");
            if !seen.insert(s.id.as_str()) {
                return Err(TopologyError::DuplicateId {
                    path: format!("{path}.id"),
                    id: s.id.clone(),
                });
            }
            if s.width == 0 {
                return Err(invalid(format!("{path}.width"), "must be >= 1"));
            }
            if s.height == 0 {
                return Err(invalid(format!("{path}.height"), "must be >= 1"));
            }
            if !(s.frame_rate.is_finite() && s.frame_rate > 0.0) {
                return Err(invalid(format!("{path}.fps"), "must be a positive number"));
            }
        }
        let mut seen = BTreeSet::new();
        for (i, d) in devices.iter().enumerate() {
            let path = format!("devices[{i}]");
            if !seen.insert(d.id.as_str()) {
                return Err(TopologyError::DuplicateId {
                    path: format!("{path}.id"),
                    id: d.id.clone(),
                });
            }
            if !(d.power.is_finite() && d.power > 0.0) {
                return Err(invalid(
                    format!("{path}.power"),
                    "must be a positive number",
                ));
            }
        }

        let sensor_ids: BTreeSet<&str> = sensors.iter().map(|s| s.id.as_str()).collect();
        let device_ids: BTreeSet<&str> = devices.iter().map(|d| d.id.as_str()).collect();
        for (name, set) in [("usb", &links.usb), ("enet_sd", &links.enet_sd)] {
            for (i, (s, d)) in set.iter().enumerate() {
                if !sensor_ids.contains(s.as_str()) {
                    return Err(unknown(format!("links.{name}[{i}][0]"), "sensor", s));
                }
                if !device_ids.contains(d.as_str()) {
                    return Err(unknown(format!("links.{name}[{i}][1]"), "device", d));
                }
            }
        }
        for (i, (a, b)) in links.enet_dd.iter().enumerate() {
            for (j, id) in [a, b].into_iter().enumerate() {
                if !device_ids.contains(id.as_str()) {
                    return Err(unknown(format!("links.enet_dd[{i}][{j}]"), "device", id));
                }
            }
            if a == b {
                return Err(invalid(
                    format!("links.enet_dd[{i}]"),
                    format!("self-pair on device \"{a}\""),
                ));
            }
        }

        let enet_component = ethernet_components(&devices, &links.enet_dd);
        Ok(Self {
            sensors,
            devices,
            links,
            enet_component,
        })
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn links(&self) -> &LinkSet {
        &self.links
    }

    pub fn sensor(&self, id: &str) -> Option<&Sensor> {
        self.sensors.iter().find(|s| s.id == id)
    }

    pub fn device(&self, id: &str) -> Option<&Device> {
        self.devices.iter().find(|d| d.id == id)
    }

    /// True when `a` and `b` are the same device or joined by a path of
    /// device-to-device Ethernet links.
    pub fn enet_reachable(&self, a: &str, b: &str) -> bool {
        match (self.device_index(a), self.device_index(b)) {
            (Some(i), Some(j)) => self.enet_component[i] == self.enet_component[j],
            _ => false,
        }
    }

    /// Devices grouped by Ethernet component. Each group is sorted by id and
    /// groups are ordered by their smallest id.
    pub fn enet_partition(&self) -> Vec<Vec<String>> {
        let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for (d, &c) in self.devices.iter().zip(&self.enet_component) {
            groups.entry(c).or_default().push(d.id.clone());
        }
        let mut groups: Vec<Vec<String>> = groups
            .into_values()
            .map(|mut g| {
                g.sort();
                g
            })
            .collect();
        groups.sort();
        groups
    }

    fn device_index(&self, id: &str) -> Option<usize> {
        self.devices.iter().position(|d| d.id == id)
    }

    pub fn to_toml_string(&self) -> String {
        let doc = TopologyDoc {
            sensors: self.sensors.clone(),
            devices: self.devices.clone(),
            links: LinksDoc {
                usb: pairs_to_doc(&self.links.usb),
                enet_sd: pairs_to_doc(&self.links.enet_sd),
                enet_dd: pairs_to_doc(&self.links.enet_dd),
            },
        };
        toml::to_string(&doc).expect("topology document is always serializable")
    }
}

fn invalid(path: String, message: impl Into<String>) -> TopologyError {
    TopologyError::InvalidField {
        path,
        message: message.into(),
    }
}

fn unknown(path: String, kind: &'static str, id: &str) -> TopologyError {
    TopologyError::UnknownId {
        path,
        kind,
        id: id.to_owned(),
    }
}

/// Union-find over the device-to-device links. Labels are the index of the
/// component's first device in input order.
fn ethernet_components(devices: &[Device], enet_dd: &BTreeSet<(String, String)>) -> Vec<usize> {
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    let index: BTreeMap<&str, usize> = devices
        .iter()
        .enumerate()
        .map(|(i, d)| (d.id.as_str(), i))
        .collect();
    let mut parent: Vec<usize> = (0..devices.len()).collect();
    for (a, b) in enet_dd {
        let (ra, rb) = (
            find(&mut parent, index[a.as_str()]),
            find(&mut parent, index[b.as_str()]),
        );
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            parent[hi] = lo;
        }
    }
    (0..devices.len()).map(|i| find(&mut parent, i)).collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyDoc {
    #[serde(default)]
    sensors: Vec<Sensor>,
    #[serde(default)]
    devices: Vec<Device>,
    #[serde(default)]
    links: LinksDoc,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinksDoc {
    #[serde(default)]
    usb: Vec<[String; 2]>,
    #[serde(default)]
    enet_sd: Vec<[String; 2]>,
    #[serde(default)]
    enet_dd: Vec<[String; 2]>,
}

fn pairs_to_doc(set: &BTreeSet<(String, String)>) -> Vec<[String; 2]> {
    set.iter().map(|(a, b)| [a.clone(), b.clone()]).collect()
}

pub fn parse_topology(text: &str) -> Result<Topology, TopologyError> {
    let doc: TopologyDoc =
        toml::from_str(text).map_err(|e| TopologyError::Malformed(one_line(&e.to_string())))?;

    // Unknown ids are reported against the document's own indices, so check
    // them before the pairs are folded into sets.
    let sensor_ids: BTreeSet<&str> = doc.sensors.iter().map(|s| s.id.as_str()).collect();
    let device_ids: BTreeSet<&str> = doc.devices.iter().map(|d| d.id.as_str()).collect();
    for (name, pairs) in [("usb", &doc.links.usb), ("enet_sd", &doc.links.enet_sd)] {
        for (i, [s, d]) in pairs.iter().enumerate() {
            if !sensor_ids.contains(s.as_str()) {
                return Err(unknown(format!("links.{name}[{i}][0]"), "sensor", s));
            }
            if !device_ids.contains(d.as_str()) {
                return Err(unknown(format!("links.{name}[{i}][1]"), "device", d));
            }
        }
    }
    for (i, pair) in doc.links.enet_dd.iter().enumerate() {
        for (j, id) in pair.iter().enumerate() {
            if !device_ids.contains(id.as_str()) {
                return Err(unknown(format!("links.enet_dd[{i}][{j}]"), "device", id));
            }
        }
        if pair[0] == pair[1] {
            return Err(invalid(
                format!("links.enet_dd[{i}]"),
                format!("self-pair on device \"{}\"", pair[0]),
            ));
        }
    }

    let mut links = LinkSet::default();
    for [s, d] in &doc.links.usb {
        links.add_usb(s, d);
    }
    for [s, d] in &doc.links.enet_sd {
        links.add_enet_sd(s, d);
    }
    for [a, b] in &doc.links.enet_dd {
        links.add_enet_dd(a, b);
    }
    Topology::new(doc.sensors, doc.devices, links)
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Constraint {
    /// Every sensor is interfaced to at least one device.
    SensorLinked = 2,
    /// Every pair of devices can share data over Ethernet.
    DevicesShareEthernet = 3,
}

impl Constraint {
    pub fn number(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Violation {
    pub constraint: Constraint,
    pub subject: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "constraint {}: {}: {}",
            self.constraint.number(),
            self.subject,
            self.detail
        )
    }
}

/// Checks the placement constraints. An empty result means every sensor has
/// a direct link and all devices form one Ethernet component.
pub fn validate(t: &Topology) -> Vec<Violation> {
    let mut out = Vec::new();
    for s in &t.sensors {
        let linked = t.devices.iter().any(|d| t.links.direct(&s.id, &d.id));
        if !linked {
            out.push(Violation {
                constraint: Constraint::SensorLinked,
                subject: s.id.clone(),
                detail: "sensor has no usb or enet_sd link".into(),
            });
        }
    }
    if t.devices.len() > 1 {
        let partition = t.enet_partition();
        if partition.len() > 1 {
            let subject = partition
                .iter()
                .map(|g| format!("{{{}}}", g.join(",")))
                .collect::<Vec<_>>()
                .join(" | ");
            out.push(Violation {
                constraint: Constraint::DevicesShareEthernet,
                subject,
                detail: format!("devices split into {} Ethernet components", partition.len()),
            });
        }
    }
    out.sort();
    out
}
