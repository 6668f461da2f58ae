//! Exhaustive reference for the selection algorithm on small instances.
//!
//! Every maximal feasible assignment is enumerated and ranked by [`Score`]:
//! more sensors assigned first, then fewer size/power inversions, then
//! fewer relays, then the rank key (processor and relay positions in the
//! best-fit sort orders, read in sensor sort order, smaller first).

use std::cmp::Ordering;

use serde::Serialize;
use thiserror::Error;

use crate::selection::{sort_devices, sort_sensors, Configuration};
use crate::topology::{Device, Sensor, Topology};

/// Largest |S| or |D| the oracle accepts.
pub const MAX_ORACLE_SIZE: usize = 6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("instance too large for exhaustive search: {sensors} sensors x {devices} devices (limit {limit})")]
    TooLarge {
        sensors: usize,
        devices: usize,
        limit: usize,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Assignment {
    /// Sorted by sensor id.
    pub configurations: Vec<Configuration>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Score {
    pub assigned_count: usize,
    pub inversions: usize,
    pub relays_used: usize,
    /// Processor ranks then relay ranks, one entry per sensor in sensor
    /// sort order; `|D|` marks "none".
    pub rank_key: Vec<usize>,
}

impl Score {
    /// Positional summary `(assigned, inversions, relays)`.
    pub fn triple(&self) -> (usize, usize, usize) {
        (self.assigned_count, self.inversions, self.relays_used)
    }
}

/// `Greater` means better.
impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        self.assigned_count
            .cmp(&other.assigned_count)
            .then_with(|| other.inversions.cmp(&self.inversions))
            .then_with(|| other.relays_used.cmp(&self.relays_used))
            .then_with(|| other.rank_key.cmp(&self.rank_key))
    }
}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub configurations: Vec<Configuration>,
    pub score: Score,
}

impl OracleReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("oracle report serializes");
        s.push('\n');
        s
    }
}

/// Scores any configuration list against `t`. Ids missing from `t` are
/// treated as unranked.
pub fn score(t: &Topology, configurations: &[Configuration]) -> Score {
    let sensors = sort_sensors(t.sensors());
    let devices = sort_devices(t.devices());
    let none = devices.len();
    let rank = |id: &str| devices.iter().position(|d| d.id == id).unwrap_or(none);

    let mut proc_key = vec![none; sensors.len()];
    let mut relay_key = vec![none; sensors.len()];
    let mut placed: Vec<(u64, f64)> = Vec::new();
    for c in configurations {
        if let Some(i) = sensors.iter().position(|s| s.id == c.sensor) {
            proc_key[i] = rank(&c.processor);
            relay_key[i] = c.relay.as_deref().map_or(none, rank);
        }
        let size = t.sensor(&c.sensor).map_or(0, Sensor::image_size);
        let power = t.device(&c.processor).map_or(0.0, |d| d.power);
        placed.push((size, power));
    }

    proc_key.extend(relay_key);
    Score {
        assigned_count: configurations.len(),
        inversions: count_inversions(&placed),
        relays_used: configurations.iter().filter(|c| c.is_relayed()).count(),
        rank_key: proc_key,
    }
}

/// Pairs where the larger image went to the strictly weaker processor.
fn count_inversions(placed: &[(u64, f64)]) -> usize {
    let mut n = 0;
    for (i, a) in placed.iter().enumerate() {
        for b in &placed[i + 1..] {
            if (a.0 > b.0 && a.1 < b.1) || (b.0 > a.0 && b.1 < a.1) {
                n += 1;
            }
        }
    }
    n
}

/// A placement option for one sensor: indices into the sorted device list.
#[derive(Debug, Clone, Copy)]
struct Option_ {
    processor: usize,
    relay: Option<usize>,
}

impl Option_ {
    fn mask(self) -> u64 {
        (1 << self.processor) | self.relay.map_or(0, |r| 1 << r)
    }
}

struct Search {
    sensors: Vec<Sensor>,
    devices: Vec<Device>,
    options: Vec<Vec<Option_>>,
}

type Leaf = [Option<Option_>];

impl Search {
    fn new(t: &Topology) -> Self {
        let sensors = sort_sensors(t.sensors());
        let devices = sort_devices(t.devices());
        let links = t.links();
        let options = sensors
            .iter()
            .map(|s| {
                let mut opts = Vec::new();
                for (p, dp) in devices.iter().enumerate() {
                    if links.direct(&s.id, &dp.id) {
                        opts.push(Option_ {
                            processor: p,
                            relay: None,
                        });
                    }
                }
                for (p, dp) in devices.iter().enumerate() {
                    for (r, dr) in devices.iter().enumerate() {
                        if r != p && links.direct(&s.id, &dr.id) && t.enet_reachable(&dr.id, &dp.id)
                        {
                            opts.push(Option_ {
                                processor: p,
                                relay: Some(r),
                            });
                        }
                    }
                }
                opts
            })
            .collect();
        Search {
            sensors,
            devices,
            options,
        }
    }

    fn run(&self, visit: &mut dyn FnMut(&Leaf)) {
        let mut chosen = vec![None; self.sensors.len()];
        self.descend(0, 0, &mut chosen, visit);
    }

    fn descend(
        &self,
        i: usize,
        used: u64,
        chosen: &mut Vec<Option<Option_>>,
        visit: &mut dyn FnMut(&Leaf),
    ) {
        if i == self.sensors.len() {
            if self.is_maximal(used, chosen) {
                visit(chosen);
            }
            return;
        }
        for &opt in &self.options[i] {
            if opt.mask() & used == 0 {
                chosen[i] = Some(opt);
                self.descend(i + 1, used | opt.mask(), chosen, visit);
            }
        }
        chosen[i] = None;
        self.descend(i + 1, used, chosen, visit);
    }

    fn is_maximal(&self, used: u64, chosen: &Leaf) -> bool {
        chosen
            .iter()
            .enumerate()
            .all(|(i, c)| c.is_some() || self.options[i].iter().all(|o| o.mask() & used != 0))
    }

    /// Same result as [`score`] on the materialized assignment, computed
    /// from indices.
    fn score(&self, chosen: &Leaf) -> Score {
        let none = self.devices.len();
        let mut rank_key: Vec<usize> = chosen
            .iter()
            .map(|c| c.map_or(none, |o| o.processor))
            .collect();
        rank_key.extend(
            chosen
                .iter()
                .map(|c| c.and_then(|o| o.relay).unwrap_or(none)),
        );
        let placed: Vec<(u64, f64)> = chosen
            .iter()
            .zip(&self.sensors)
            .filter_map(|(c, s)| c.map(|o| (s.image_size(), self.devices[o.processor].power)))
            .collect();
        Score {
            assigned_count: placed.len(),
            inversions: count_inversions(&placed),
            relays_used: chosen
                .iter()
                .flatten()
                .filter(|o| o.relay.is_some())
                .count(),
            rank_key,
        }
    }

    fn to_assignment(&self, chosen: &Leaf) -> Assignment {
        let mut configurations: Vec<Configuration> = chosen
            .iter()
            .zip(&self.sensors)
            .filter_map(|(c, s)| {
                c.map(|o| Configuration {
                    sensor: s.id.clone(),
                    processor: self.devices[o.processor].id.clone(),
                    relay: o.relay.map(|r| self.devices[r].id.clone()),
                })
            })
            .collect();
        configurations.sort();
        Assignment { configurations }
    }
}

fn check_size(t: &Topology) -> Result<(), OracleError> {
    let (s, d) = (t.sensors().len(), t.devices().len());
    if s > MAX_ORACLE_SIZE || d > MAX_ORACLE_SIZE {
        return Err(OracleError::TooLarge {
            sensors: s,
            devices: d,
            limit: MAX_ORACLE_SIZE,
        });
    }
    Ok(())
}

/// All maximal feasible assignments, in depth-first order over sensors
/// (sensor sort order) and options (direct before relayed, by device rank,
/// "unassigned" last).
pub fn enumerate_assignments(t: &Topology) -> Result<Vec<Assignment>, OracleError> {
    check_size(t)?;
    let search = Search::new(t);
    let mut out = Vec::new();
    search.run(&mut |leaf| out.push(search.to_assignment(leaf)));
    Ok(out)
}

pub fn best_assignment(t: &Topology) -> Result<(Assignment, Score), OracleError> {
    check_size(t)?;
    let search = Search::new(t);
    let mut best: Option<(Vec<Option<Option_>>, Score)> = None;
    search.run(&mut |leaf| {
        let s = search.score(leaf);
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((leaf.to_vec(), s));
        }
    });
    let (leaf, s) = best.expect("the search always yields at least one maximal assignment");
    Ok((search.to_assignment(&leaf), s))
}
