//! Time-stamped records produced by a run, and their JSON-lines form.

use std::io::Write;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropCause {
    AccessFailure,
    RetryLimit,
    QueueOverflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HopOutcome {
    Ack,
    AccessFailure,
    RetryLimit,
}

/// One node's handling of a packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopRecord {
    pub node: String,
    pub parent: String,
    pub transmissions: u32,
    pub ccas: u32,
    pub outcome: HopOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Fate {
    Delivered {
        time_s: f64,
    },
    Dropped {
        cause: DropCause,
        node: String,
        time_s: f64,
    },
    InFlight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub id: u64,
    pub source: String,
    pub birth_s: f64,
    pub hops: Vec<HopRecord>,
    pub fate: Fate,
}

/// Per-node counters over the whole run. State times sum to the duration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NodeCounters {
    pub node: String,
    pub generated: u64,
    pub enqueued: u64,
    pub tx_attempts: u64,
    pub cca_busy: u64,
    pub cca_idle: u64,
    pub collisions: u64,
    pub bad_channel_losses: u64,
    pub acks: u64,
    pub control_frames: u64,
    pub tx_s: f64,
    pub cca_s: f64,
    pub rx_s: f64,
    pub backoff_s: f64,
    pub idle_s: f64,
}

impl NodeCounters {
    pub fn state_time(&self) -> f64 {
        self.tx_s + self.cca_s + self.rx_s + self.backoff_s + self.idle_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub time_s: f64,
    pub node: String,
    pub old_parent: String,
    pub new_parent: String,
}

/// Both reliability estimates of a node's current uplink, taken when a data
/// packet leaves its MAC (acknowledged or dropped).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSample {
    pub time_s: f64,
    pub node: String,
    pub parent: String,
    pub alpha: f64,
    pub alpha_reliability: f64,
    pub etx: f64,
    pub etx_reliability: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimTrace {
    pub duration_s: f64,
    /// Empty unless the run recorded a trace.
    pub packets: Vec<PacketRecord>,
    pub nodes: Vec<NodeCounters>,
    pub switches: Vec<SwitchEvent>,
    /// Empty unless the run recorded a trace.
    pub estimates: Vec<EstimateSample>,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
enum Line<'a> {
    Run {
        run: usize,
        duration_s: f64,
    },
    Node {
        run: usize,
        #[serde(flatten)]
        counters: &'a NodeCounters,
    },
    Switch {
        run: usize,
        #[serde(flatten)]
        event: &'a SwitchEvent,
    },
    Packet {
        run: usize,
        #[serde(flatten)]
        packet: &'a PacketRecord,
    },
    Estimate {
        run: usize,
        #[serde(flatten)]
        sample: &'a EstimateSample,
    },
}

impl SimTrace {
    /// Writes one JSON object per line, each tagged by a `record` field.
    pub fn write_jsonl<W: Write + ?Sized>(&self, run: usize, out: &mut W) -> std::io::Result<()> {
        let mut emit = |line: Line| -> std::io::Result<()> {
            serde_json::to_writer(&mut *out, &line)?;
            out.write_all(b"\n")
        };
        emit(Line::Run {
            run,
            duration_s: self.duration_s,
        })?;
        for counters in &self.nodes {
            emit(Line::Node { run, counters })?;
        }
        for event in &self.switches {
            emit(Line::Switch { run, event })?;
        }
        for packet in &self.packets {
            emit(Line::Packet { run, packet })?;
        }
        for sample in &self.estimates {
            emit(Line::Estimate { run, sample })?;
        }
        Ok(())
    }
}
