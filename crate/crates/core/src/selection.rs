//! Recursive best-fit hardware selection.
//!
//! The largest remaining sensor is offered the most powerful remaining
//! device. If the sensor is wired to that device (USB or Ethernet) the pair
//! becomes a direct configuration. Otherwise another remaining device that
//! the sensor *is* wired to acts as a relay and forwards the stream to the
//! processor over device-to-device Ethernet. Assigned sensors and devices
//! are removed and the procedure recurses on what is left.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::topology::{Device, LinkSet, Sensor, Topology};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Configuration {
    pub sensor: String,
    pub processor: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relay: Option<String>,
}

impl Configuration {
    pub fn direct(sensor: &str, processor: &str) -> Self {
        Self {
            sensor: sensor.to_owned(),
            processor: processor.to_owned(),
            relay: None,
        }
    }

    pub fn relayed(sensor: &str, processor: &str, relay: &str) -> Self {
        Self {
            sensor: sensor.to_owned(),
            processor: processor.to_owned(),
            relay: Some(relay.to_owned()),
        }
    }

    pub fn is_relayed(&self) -> bool {
        self.relay.is_some()
    }

    /// Devices consumed by this configuration.
    pub fn devices(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.processor.as_str()).chain(self.relay.as_deref())
    }

    /// Checks the link requirements of this configuration against `t`.
    pub fn is_feasible(&self, t: &Topology) -> bool {
        if t.sensor(&self.sensor).is_none() || t.device(&self.processor).is_none() {
            return false;
        }
        match &self.relay {
            None => t.links().direct(&self.sensor, &self.processor),
            Some(relay) => {
                relay != &self.processor
                    && t.device(relay).is_some()
                    && t.links().direct(&self.sensor, relay)
                    && t.enet_reachable(relay, &self.processor)
            }
        }
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.relay {
            None => write!(f, "({}, {})", self.sensor, self.processor),
            Some(r) => write!(f, "({}, {}, {})", self.sensor, self.processor, r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnassignedReason {
    /// The sensor is not wired to any remaining device.
    #[serde(rename = "no connectivity")]
    NoConnectivity,
    /// The sensor is wired to remaining devices, but none of them can reach
    /// the offered processor over Ethernet.
    #[serde(rename = "no relay path")]
    NoRelayPath,
    #[serde(rename = "no devices left")]
    NoDevicesLeft,
}

impl fmt::Display for UnassignedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NoConnectivity => "no connectivity",
            Self::NoRelayPath => "no relay path",
            Self::NoDevicesLeft => "no devices left",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unassigned {
    pub sensor: String,
    pub reason: UnassignedReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub configurations: Vec<Configuration>,
    pub unassigned_sensors: Vec<Unassigned>,
    pub idle_devices: Vec<String>,
}

impl SelectionResult {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("selection result serializes");
        s.push('\n');
        s
    }
}

fn sensor_order(a: &Sensor, b: &Sensor) -> Ordering {
    b.image_size()
        .cmp(&a.image_size())
        .then_with(|| b.frame_rate.total_cmp(&a.frame_rate))
        .then_with(|| a.id.cmp(&b.id))
}

fn device_order(a: &Device, b: &Device) -> Ordering {
    b.power.total_cmp(&a.power).then_with(|| a.id.cmp(&b.id))
}

/// Descending by pixel count, then frame rate, then ascending id.
pub fn sort_sensors(sensors: &[Sensor]) -> Vec<Sensor> {
    let mut v = sensors.to_vec();
    v.sort_by(sensor_order);
    v
}

/// Descending by power, then ascending id.
pub fn sort_devices(devices: &[Device]) -> Vec<Device> {
    let mut v = devices.to_vec();
    v.sort_by(device_order);
    v
}

/// Highest-power candidate wired directly to `sensor`.
pub fn find_connected<'a>(
    sensor: &Sensor,
    candidates: &'a [Device],
    links: &LinkSet,
) -> Option<&'a Device> {
    candidates
        .iter()
        .filter(|d| links.direct(&sensor.id, &d.id))
        .min_by(|a, b| device_order(a, b))
}

pub fn select(t: &Topology) -> SelectionResult {
    let sensors = sort_sensors(t.sensors());
    let devices = sort_devices(t.devices());
    let mut result = SelectionResult::default();
    hardware_selection(t, &sensors, devices, &mut result);
    result
}

/// One recursion level: settles the head sensor and recurses on the rest.
/// Both lists stay sorted, so re-sorting at each level is unnecessary.
fn hardware_selection(
    t: &Topology,
    sensors: &[Sensor],
    mut devices: Vec<Device>,
    out: &mut SelectionResult,
) {
    let Some((sensor, rest)) = sensors.split_first() else {
        out.idle_devices = devices.into_iter().map(|d| d.id).collect();
        return;
    };
    if devices.is_empty() {
        out.unassigned_sensors
            .extend(sensors.iter().map(|s| Unassigned {
                sensor: s.id.clone(),
                reason: UnassignedReason::NoDevicesLeft,
            }));
        return;
    }

    let links = t.links();
    let head = devices[0].clone();
    if links.direct(&sensor.id, &head.id) {
        out.configurations
            .push(Configuration::direct(&sensor.id, &head.id));
        devices.remove(0);
    } else {
        let reachable: Vec<Device> = devices[1..]
            .iter()
            .filter(|d| t.enet_reachable(&d.id, &head.id))
            .cloned()
            .collect();
        match find_connected(sensor, &reachable, links) {
            Some(relay) => {
                let relay_id = relay.id.clone();
                out.configurations
                    .push(Configuration::relayed(&sensor.id, &head.id, &relay_id));
                devices.retain(|d| d.id != head.id && d.id != relay_id);
            }
            None => {
                let reason = if find_connected(sensor, &devices, links).is_some() {
                    UnassignedReason::NoRelayPath
                } else {
                    UnassignedReason::NoConnectivity
                };
                out.unassigned_sensors.push(Unassigned {
                    sensor: sensor.id.clone(),
                    reason,
                });
            }
        }
    }
    hardware_selection(t, rest, devices, out);
}
