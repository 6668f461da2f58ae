//! Discrete-event simulation of load-aware frame dispatch.
//!
//! Compute nodes broadcast their queue length every `broadcast_interval`
//! simulated seconds. Each arriving frame is dispatched using only the most
//! recent broadcast, to the node with the smallest expected completion time
//! `(queue_length + 1) / throughput`. Service is FIFO and deterministic at
//! `1 / throughput` seconds per frame. Nothing is dropped.
//!
//! Events at equal timestamps are ordered completion, broadcast, arrival,
//! then by insertion order.
//!
//! Config file (TOML):
//!
//! ```toml
//! broadcast_interval = 0.5   # optional, default 0.5
//! horizon = 300.0
//! seed = 7
//!
//! [[nodes]]
//! id = "nuc1_cpu"
//! throughput = 14.87
//!
//! [[sources]]
//! sensor = "cam_front"
//! fps = 20.0
//! arrival = "poisson"        # or "deterministic"
//! ```

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_BROADCAST_INTERVAL: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("malformed simulation config: {0}")]
    Malformed(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arrival {
    Deterministic,
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub sensor: String,
    pub fps: f64,
    pub arrival: Arrival,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    #[serde(default = "default_interval")]
    pub broadcast_interval: f64,
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_interval() -> f64 {
    DEFAULT_BROADCAST_INTERVAL
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| {
            SimError::Malformed(
                e.to_string()
                    .split_whitespace()
                    .collect::<Vec<_>>()
                    .join(" "),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |field: String, message: &str| SimError::Invalid {
            field,
            message: message.to_owned(),
        };
        if !positive(self.horizon) {
            return Err(bad("horizon".into(), "must be > 0"));
        }
        if !positive(self.broadcast_interval) {
            return Err(bad("broadcast_interval".into(), "must be > 0"));
        }
        let mut ids = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if !ids.insert(n.id.as_str()) {
                return Err(bad(format!("nodes[{i}].id"), "duplicate node id"));
            }
            if !positive(n.throughput) {
                return Err(bad(format!("nodes[{i}].throughput"), "must be > 0"));
            }
        }
        for (i, s) in self.sources.iter().enumerate() {
            if !positive(s.fps) {
                return Err(bad(format!("sources[{i}].fps"), "must be > 0"));
            }
        }
        if self.nodes.is_empty() && !self.sources.is_empty() {
            return Err(bad(
                "nodes".into(),
                "sources present but no nodes to serve them",
            ));
        }
        Ok(())
    }
}

/// Load report a node broadcasts to its peers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeStatus {
    pub node: String,
    /// Waiting frames plus the one in service.
    pub queue_length: usize,
    pub throughput: f64,
    pub timestamp: f64,
}

impl NodeStatus {
    fn expected_completion(&self) -> f64 {
        (self.queue_length as f64 + 1.0) / self.throughput
    }
}

/// Node with the least expected completion time; ties go to the smaller id.
pub fn schedule(statuses: &[NodeStatus]) -> Option<&str> {
    statuses
        .iter()
        .min_by(|a, b| {
            a.expected_completion()
                .total_cmp(&b.expected_completion())
                .then_with(|| a.node.cmp(&b.node))
        })
        .map(|s| s.node.as_str())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SimEvent {
    Broadcast {
        time: f64,
        statuses: Vec<NodeStatus>,
    },
    Dispatch {
        time: f64,
        source: String,
        node: String,
        /// Oldest timestamp among the statuses the decision was based on.
        status_timestamp: f64,
    },
    Completion {
        time: f64,
        node: String,
        latency: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeMetrics {
    pub id: String,
    pub frames_completed: u64,
    pub utilization: f64,
    pub mean_latency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Totals {
    pub arrived: u64,
    pub completed: u64,
    pub queued_at_end: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimMetrics {
    pub nodes: Vec<NodeMetrics>,
    pub totals: Totals,
    /// Max minus min node utilization.
    pub imbalance: f64,
}

impl SimMetrics {
    /// One row per node, then a `total` row. Numbers use 6 decimals.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "scope",
            "id",
            "frames_completed",
            "utilization",
            "mean_latency_s",
            "arrived",
            "queued_at_end",
            "dropped",
            "imbalance",
        ])
        .expect("in-memory write");
        for n in &self.nodes {
            w.write_record([
                "node",
                &n.id,
                &n.frames_completed.to_string(),
                &format!("{:.6}", n.utilization),
                &format!("{:.6}", n.mean_latency),
                "",
                "",
                "",
                "",
            ])
            .expect("in-memory write");
        }
        let t = &self.totals;
        w.write_record([
            "total",
            "",
            &t.completed.to_string(),
            "",
            "",
            &t.arrived.to_string(),
            &t.queued_at_end.to_string(),
            &t.dropped.to_string(),
            &format!("{:.6}", self.imbalance),
        ])
        .expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Completion(usize),
    Broadcast,
    Arrival(usize),
}

impl Kind {
    fn priority(self) -> u8 {
        match self {
            Kind::Completion(_) => 0,
            Kind::Broadcast => 1,
            Kind::Arrival(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Scheduled {
    time: f64,
    kind: Kind,
    seq: u64,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

// Reversed so BinaryHeap pops the earliest event.
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.kind.priority().cmp(&self.kind.priority()))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Node {
    id: String,
    service_time: f64,
    throughput: f64,
    waiting: VecDeque<f64>,
    /// (arrival time, service start) of the frame in service.
    in_service: Option<(f64, f64)>,
    busy_time: f64,
    completed: u64,
    latency_sum: f64,
}

impl Node {
    fn queue_length(&self) -> usize {
        self.waiting.len() + usize::from(self.in_service.is_some())
    }
}

struct SourceState {
    sensor: String,
    arrival: Arrival,
    fps: f64,
    emitted: u64,
    next_time: f64,
}

struct Simulator<'a> {
    cfg: &'a SimConfig,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    nodes: Vec<Node>,
    sources: Vec<SourceState>,
    known: Vec<NodeStatus>,
    arrived: u64,
    trace: Option<Vec<SimEvent>>,
}

impl<'a> Simulator<'a> {
    fn new(cfg: &'a SimConfig, trace: bool) -> Self {
        let nodes = cfg
            .nodes
            .iter()
            .map(|n| Node {
                id: n.id.clone(),
                service_time: 1.0 / n.throughput,
                throughput: n.throughput,
                waiting: VecDeque::new(),
                in_service: None,
                busy_time: 0.0,
                completed: 0,
                latency_sum: 0.0,
            })
            .collect();
        let sources = cfg
            .sources
            .iter()
            .map(|s| SourceState {
                sensor: s.sensor.clone(),
                arrival: s.arrival,
                fps: s.fps,
                emitted: 0,
                next_time: 0.0,
            })
            .collect();
        Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            queue: BinaryHeap::new(),
            seq: 0,
            nodes,
            sources,
            known: Vec::new(),
            arrived: 0,
            trace: trace.then(Vec::new),
        }
    }

    fn push(&mut self, time: f64, kind: Kind) {
        self.queue.push(Scheduled {
            time,
            kind,
            seq: self.seq,
        });
        self.seq += 1;
    }

    fn record(&mut self, ev: impl FnOnce() -> SimEvent) {
        if let Some(t) = self.trace.as_mut() {
            t.push(ev());
        }
    }

    fn schedule_next_arrival(&mut self, src: usize) {
        let s = &mut self.sources[src];
        let t = match s.arrival {
            // k / fps rather than a running sum keeps the grid exact.
            Arrival::Deterministic => s.emitted as f64 / s.fps,
            Arrival::Poisson => {
                let gap = Exp::new(s.fps)
                    .expect("fps validated positive")
                    .sample(&mut self.rng);
                s.next_time + gap
            }
        };
        s.next_time = t;
        if t < self.cfg.horizon {
            self.push(t, Kind::Arrival(src));
        }
    }

    fn start_service(&mut self, n: usize, now: f64) {
        let node = &mut self.nodes[n];
        if node.in_service.is_none() {
            if let Some(arrival) = node.waiting.pop_front() {
                node.in_service = Some((arrival, now));
                let done = now + node.service_time;
                self.push(done, Kind::Completion(n));
            }
        }
    }

    fn run(mut self) -> (SimMetrics, Vec<SimEvent>) {
        let horizon = self.cfg.horizon;
        if !self.nodes.is_empty() {
            self.push(0.0, Kind::Broadcast);
        }
        for i in 0..self.sources.len() {
            self.schedule_next_arrival(i);
        }
        let mut ticks: u64 = 0;

        while let Some(ev) = self.queue.pop() {
            let now = ev.time;
            if now > horizon {
                break;
            }
            match ev.kind {
                Kind::Broadcast => {
                    self.known = self
                        .nodes
                        .iter()
                        .map(|n| NodeStatus {
                            node: n.id.clone(),
                            queue_length: n.queue_length(),
                            throughput: n.throughput,
                            timestamp: now,
                        })
                        .collect();
                    let statuses = self.known.clone();
                    self.record(|| SimEvent::Broadcast {
                        time: now,
                        statuses,
                    });
                    ticks += 1;
                    let next = ticks as f64 * self.cfg.broadcast_interval;
                    if next <= horizon {
                        self.push(next, Kind::Broadcast);
                    }
                }
                Kind::Arrival(src) => {
                    self.arrived += 1;
                    let target = schedule(&self.known).expect("a broadcast precedes every arrival");
                    let n = self
                        .nodes
                        .iter()
                        .position(|n| n.id == target)
                        .expect("status refers to a configured node");
                    let oldest = self
                        .known
                        .iter()
                        .map(|s| s.timestamp)
                        .fold(f64::INFINITY, f64::min);
                    let (source, node) = (self.sources[src].sensor.clone(), target.to_owned());
                    self.record(|| SimEvent::Dispatch {
                        time: now,
                        source,
                        node,
                        status_timestamp: oldest,
                    });
                    self.nodes[n].waiting.push_back(now);
                    self.start_service(n, now);
                    self.sources[src].emitted += 1;
                    self.schedule_next_arrival(src);
                }
                Kind::Completion(n) => {
                    let node = &mut self.nodes[n];
                    let (arrival, start) =
                        node.in_service.take().expect("completion of a busy node");
                    node.busy_time += now - start;
                    node.completed += 1;
                    node.latency_sum += now - arrival;
                    let (id, latency) = (node.id.clone(), now - arrival);
                    self.record(|| SimEvent::Completion {
                        time: now,
                        node: id,
                        latency,
                    });
                    self.start_service(n, now);
                }
            }
        }

        let mut queued_at_end = 0;
        let nodes: Vec<NodeMetrics> = self
            .nodes
            .iter()
            .map(|n| {
                let partial = n.in_service.map_or(0.0, |(_, start)| horizon - start);
                queued_at_end += n.queue_length() as u64;
                NodeMetrics {
                    id: n.id.clone(),
                    frames_completed: n.completed,
                    utilization: ((n.busy_time + partial) / horizon).clamp(0.0, 1.0),
                    mean_latency: if n.completed == 0 {
                        0.0
                    } else {
                        n.latency_sum / n.completed as f64
                    },
                }
            })
            .collect();
        let completed = nodes.iter().map(|n| n.frames_completed).sum();
        let (lo, hi) = nodes
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), n| {
                (lo.min(n.utilization), hi.max(n.utilization))
            });
        let imbalance = if nodes.is_empty() { 0.0 } else { hi - lo };
        let metrics = SimMetrics {
            nodes,
            totals: Totals {
                arrived: self.arrived,
                completed,
                queued_at_end,
                dropped: 0,
            },
            imbalance,
        };
        (metrics, self.trace.unwrap_or_default())
    }
}

pub fn run_sim(cfg: &SimConfig) -> Result<SimMetrics, SimError> {
    cfg.validate()?;
    Ok(Simulator::new(cfg, false).run().0)
}

/// Like [`run_sim`], also returning every broadcast, dispatch and completion.
pub fn run_sim_traced(cfg: &SimConfig) -> Result<(SimMetrics, Vec<SimEvent>), SimError> {
    cfg.validate()?;
    Ok(Simulator::new(cfg, true).run())
}
