//! Event-driven unslotted CSMA/CA over a shared channel.
//!
//! Time is an integer count of unit backoff periods. A CCA at slot `s` finds
//! the channel busy when an audible transmission covers `s`; an idle CCA
//! starts the frame at `s + t_cca`. Two nodes sensing the same slot therefore
//! both transmit and collide, which is the vulnerable window behind
//! `p_coll = alpha / T_s`.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rplmac_core::interference::InterferenceMap;
use rplmac_core::metrics::{
    CandidateView, MetricRegistry, ParentSelector, SelectionContext, SelectionMatrix,
};
use rplmac_core::solver::traffic_fixed_point;
use rplmac_core::topology::{Dodag, Topology};

use crate::config::{ArrivalProcess, SimConfig};
use crate::estimators::{AlphaEstimator, EtxEstimator, ETX_INIT};
use crate::trace::{
    DropCause, EstimateSample, Fate, HopOutcome, HopRecord, NodeCounters, PacketRecord, SimTrace,
    SwitchEvent,
};

const TX: u8 = 4;
const CCA: u8 = 3;
const RX: u8 = 2;
const BACKOFF: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Arrival(usize),
    BackoffEnd(usize),
    TxEnd { node: usize, tx: u64 },
    AttemptDone { node: usize, success: bool },
    Reselect(usize),
}

#[derive(Debug, Clone, Copy)]
struct Transmission {
    id: u64,
    node: usize,
    start: u64,
    end: u64,
}

#[derive(Debug, Clone)]
struct PacketState {
    source: usize,
    birth: u64,
    hops: Vec<HopRecord>,
    fate: Fate,
}

#[derive(Debug, Clone, Copy)]
enum Frame {
    Data(usize),
    Control,
}

struct Service {
    frame: Frame,
    parent: Option<usize>,
    nb: u8,
    be: u8,
    transmissions: u32,
    ccas: u32,
    /// Outcome of the frame on the air, decided at its end.
    collided: bool,
}

struct NodeRt {
    queue: VecDeque<Frame>,
    service: Option<Service>,
    parent: Option<usize>,
    alpha: AlphaEstimator,
    etx: BTreeMap<usize, EtxEstimator>,
    counters: NodeCounters,
    intervals: Vec<(u64, u64, u8)>,
    next_arrival: f64,
    switches: u64,
}

pub(crate) struct RunOutput {
    pub trace: SimTrace,
    pub packets: Vec<(usize, u64, Fate)>,
    pub final_parents: Vec<Option<usize>>,
    pub switches: Vec<u64>,
}

pub(crate) struct Engine<'a> {
    topo: &'a Topology,
    dodag: &'a Dodag,
    cfg: &'a SimConfig,
    hears: InterferenceMap,
    selector: Box<dyn ParentSelector>,
    rng: ChaCha8Rng,
    now: u64,
    end: u64,
    warmup: u64,
    seq: u64,
    events: BinaryHeap<Reverse<(u64, u64, Event)>>,
    on_air: Vec<Transmission>,
    next_tx: u64,
    nodes: Vec<NodeRt>,
    packets: Vec<PacketState>,
    switches: Vec<SwitchEvent>,
    estimates: Vec<EstimateSample>,
}

impl<'a> Engine<'a> {
    pub fn new(
        topo: &'a Topology,
        dodag: &'a Dodag,
        cfg: &'a SimConfig,
        rng: ChaCha8Rng,
    ) -> rplmac_core::Result<Self> {
        let selector = MetricRegistry::builtin().build(&cfg.metric)?;
        let nodes = (0..topo.len())
            .map(|i| NodeRt {
                queue: VecDeque::new(),
                service: None,
                parent: None,
                alpha: AlphaEstimator::new(cfg.alpha_window, cfg.alpha_smoothing),
                etx: BTreeMap::new(),
                counters: NodeCounters {
                    node: topo.id(i).to_string(),
                    ..NodeCounters::default()
                },
                intervals: Vec::new(),
                next_arrival: 0.0,
                switches: 0,
            })
            .collect();
        Ok(Engine {
            topo,
            dodag,
            cfg,
            hears: InterferenceMap::new(topo, dodag),
            selector,
            rng,
            now: 0,
            end: cfg.slots(cfg.duration),
            warmup: cfg.slots(cfg.warmup),
            seq: 0,
            events: BinaryHeap::new(),
            on_air: Vec::new(),
            next_tx: 0,
            nodes,
            packets: Vec::new(),
            switches: Vec::new(),
            estimates: Vec::new(),
        })
    }

    fn secs(&self, slots: u64) -> f64 {
        slots as f64 * self.cfg.timing.slot
    }

    fn schedule(&mut self, at: u64, event: Event) {
        self.seq += 1;
        self.events.push(Reverse((at, self.seq, event)));
    }

    fn mark(&mut self, node: usize, start: u64, end: u64, state: u8) {
        if end > start {
            self.nodes[node].intervals.push((start, end, state));
        }
    }

    pub fn run(mut self) -> RunOutput {
        let root = self.topo.root();
        for i in self.dodag.top_down_order(self.topo) {
            if i == root {
                continue;
            }
            let choice = self.decide(i);
            self.nodes[i].parent = Some(choice);
        }
        let period = self.cfg.reselect_period;
        for i in (0..self.topo.len()).filter(|&i| i != root) {
            let lambda = self.topo.lambda(i);
            if lambda > 0.0 {
                let first = match self.cfg.arrival {
                    ArrivalProcess::PeriodicJitter => self.rng.gen::<f64>() / lambda,
                    ArrivalProcess::Poisson => self.exp_draw(lambda),
                };
                self.nodes[i].next_arrival = first;
                let at = self.cfg.slots(first);
                self.schedule(at, Event::Arrival(i));
            }
            if !self.selector.per_packet() {
                let phase = self.rng.gen::<f64>() * period;
                let at = self.cfg.slots(phase);
                self.schedule(at.max(1), Event::Reselect(i));
            }
        }

        while let Some(Reverse((at, _, event))) = self.events.pop() {
            if at >= self.end {
                break;
            }
            self.now = at;
            match event {
                Event::Arrival(i) => self.on_arrival(i),
                Event::BackoffEnd(i) => self.on_backoff_end(i),
                Event::TxEnd { node, tx } => self.on_tx_end(node, tx),
                Event::AttemptDone { node, success } => self.on_attempt_done(node, success),
                Event::Reselect(i) => self.on_reselect(i),
            }
        }
        self.finish()
    }

    fn exp_draw(&mut self, rate: f64) -> f64 {
        let u: f64 = self.rng.gen();
        -(1.0 - u).ln() / rate
    }

    fn on_arrival(&mut self, i: usize) {
        let lambda = self.topo.lambda(i);
        let gap = match self.cfg.arrival {
            ArrivalProcess::PeriodicJitter => (1.0 + self.rng.gen_range(-0.1..0.1)) / lambda,
            ArrivalProcess::Poisson => self.exp_draw(lambda),
        };
        self.nodes[i].next_arrival += gap;
        let at = self.cfg.slots(self.nodes[i].next_arrival).max(self.now);
        self.schedule(at, Event::Arrival(i));

        let id = self.packets.len();
        self.packets.push(PacketState {
            source: i,
            birth: self.now,
            hops: Vec::new(),
            fate: Fate::InFlight,
        });
        self.nodes[i].counters.generated += 1;
        self.enqueue(i, id);
    }

    fn enqueue(&mut self, i: usize, packet: usize) {
        let node = &mut self.nodes[i];
        if node.queue.len() >= self.cfg.queue_capacity {
            let fate = Fate::Dropped {
                cause: DropCause::QueueOverflow,
                node: self.topo.id(i).to_string(),
                time_s: self.secs(self.now),
            };
            self.packets[packet].fate = fate;
            return;
        }
        node.counters.enqueued += 1;
        node.queue.push_back(Frame::Data(packet));
        if node.service.is_none() {
            self.start_service(i);
        }
    }

    fn start_service(&mut self, i: usize) {
        let Some(frame) = self.nodes[i].queue.pop_front() else {
            return;
        };
        let parent = match frame {
            Frame::Control => None,
            Frame::Data(_) => {
                if self.selector.per_packet() {
                    // the head packet is out of the queue while deciding
                    let choice = self.decide(i);
                    self.switch_parent(i, choice);
                }
                self.nodes[i].parent
            }
        };
        self.nodes[i].service = Some(Service {
            frame,
            parent,
            nb: 0,
            be: self.cfg.mac.m0,
            transmissions: 0,
            ccas: 0,
            collided: false,
        });
        self.backoff(i, self.now);
    }

    fn backoff(&mut self, i: usize, from: u64) {
        let be = self.nodes[i].service.as_ref().expect("in service").be;
        let wait = self.rng.gen_range(0..(1u64 << be));
        self.mark(i, from, from + wait, BACKOFF);
        self.schedule(from + wait, Event::BackoffEnd(i));
    }

    fn channel_busy(&self, i: usize, slot: u64) -> bool {
        self.on_air
            .iter()
            .any(|t| t.node != i && t.start <= slot && slot < t.end && self.hears.hears(i, t.node))
    }

    fn on_backoff_end(&mut self, i: usize) {
        let s = self.now;
        let t_cca = self.cfg.timing.t_cca as u64;
        let t_tx = self.cfg.timing.t_tx as u64;
        self.mark(i, s, s + t_cca, CCA);
        let mut busy = self.channel_busy(i, s);
        if let Some(script) = self.cfg.interferer {
            busy |= self.rng.gen::<f64>() < script.busy_probability;
        }
        let (m, mb) = (self.cfg.mac.m, self.cfg.mac.mb);
        let node = &mut self.nodes[i];
        node.alpha.observe(busy);
        let service = node.service.as_mut().expect("in service");
        service.ccas += 1;
        if busy {
            node.counters.cca_busy += 1;
            service.nb += 1;
            if service.nb > m {
                self.complete(i, Err(DropCause::AccessFailure));
            } else {
                service.be = (service.be + 1).min(mb);
                self.backoff(i, s + t_cca);
            }
            return;
        }
        node.counters.cca_idle += 1;
        node.counters.tx_attempts += 1;
        service.transmissions += 1;
        let start = s + t_cca;
        let tx = Transmission {
            id: self.next_tx,
            node: i,
            start,
            end: start + t_tx,
        };
        self.next_tx += 1;
        self.on_air.retain(|t| t.end + t_tx > s);
        self.on_air.push(tx);
        self.mark(i, start, tx.end, TX);
        self.schedule(tx.end, Event::TxEnd { node: i, tx: tx.id });
    }

    fn on_tx_end(&mut self, i: usize, tx_id: u64) {
        let tx = *self
            .on_air
            .iter()
            .find(|t| t.id == tx_id)
            .expect("frame still tracked");
        let t_ack = self.cfg.timing.t_ack as u64;
        let service = self.nodes[i].service.as_ref().expect("in service");
        let Some(receiver) = service.parent else {
            // broadcast control frame: no ACK, no retry
            self.nodes[i].counters.control_frames += 1;
            self.nodes[i].service = None;
            self.start_service(i);
            return;
        };
        let mut collided = self.on_air.iter().any(|o| {
            o.id != tx.id
                && o.node != i
                && o.start < tx.end
                && o.end > tx.start
                && (o.node == receiver || self.hears.hears(receiver, o.node))
        });
        if let Some(script) = self.cfg.interferer {
            let p_coll = (script.busy_probability / self.cfg.timing.t_tx as f64).min(1.0);
            collided |= self.rng.gen::<f64>() < p_coll;
        }
        let p_bad = self.topo.p_bad(i, receiver).expect("parent is a neighbor");
        let corrupted = !collided && self.rng.gen::<f64>() < p_bad;
        let counters = &mut self.nodes[i].counters;
        counters.collisions += collided as u64;
        counters.bad_channel_losses += corrupted as u64;
        self.nodes[i].service.as_mut().unwrap().collided = collided;
        self.mark(receiver, tx.start, tx.end + t_ack, RX);
        self.mark(i, tx.end, tx.end + t_ack, RX);
        self.schedule(
            tx.end + t_ack,
            Event::AttemptDone {
                node: i,
                success: !(collided || corrupted),
            },
        );
    }

    fn on_attempt_done(&mut self, i: usize, success: bool) {
        if success {
            self.complete(i, Ok(()));
            return;
        }
        let service = self.nodes[i].service.as_mut().expect("in service");
        if service.transmissions > self.cfg.mac.n as u32 {
            self.complete(i, Err(DropCause::RetryLimit));
        } else {
            service.nb = 0;
            service.be = self.cfg.mac.m0;
            self.backoff(i, self.now);
        }
    }

    /// Ends service of the head frame and starts the next one.
    fn complete(&mut self, i: usize, outcome: Result<(), DropCause>) {
        let service = self.nodes[i].service.take().expect("in service");
        if let Frame::Data(packet) = service.frame {
            let parent = service.parent.expect("data frames have a parent");
            let estimator = self.nodes[i]
                .etx
                .entry(parent)
                .or_insert_with(|| EtxEstimator::new(self.cfg.etx_window));
            match outcome {
                Ok(()) => estimator.on_ack(service.transmissions),
                Err(_) => estimator.on_failure(service.transmissions),
            }
            if outcome.is_ok() {
                self.nodes[i].counters.acks += 1;
            }
            if self.cfg.record_trace {
                self.packets[packet].hops.push(HopRecord {
                    node: self.topo.id(i).to_string(),
                    parent: self.topo.id(parent).to_string(),
                    transmissions: service.transmissions,
                    ccas: service.ccas,
                    outcome: match outcome {
                        Ok(()) => HopOutcome::Ack,
                        Err(DropCause::RetryLimit) => HopOutcome::RetryLimit,
                        Err(_) => HopOutcome::AccessFailure,
                    },
                });
                self.record_estimate(i, parent);
            }
            match outcome {
                Ok(()) if parent == self.topo.root() => {
                    self.packets[packet].fate = Fate::Delivered {
                        time_s: self.secs(self.now),
                    };
                }
                Ok(()) => self.enqueue(parent, packet),
                Err(cause) => {
                    self.packets[packet].fate = Fate::Dropped {
                        cause,
                        node: self.topo.id(i).to_string(),
                        time_s: self.secs(self.now),
                    };
                }
            }
        }
        if self.nodes[i].service.is_none() {
            self.start_service(i);
        }
    }

    fn record_estimate(&mut self, i: usize, parent: usize) {
        let node = &self.nodes[i];
        let p_bad = self.topo.p_bad(i, parent).unwrap_or(0.0);
        let etx = node.etx.get(&parent);
        self.estimates.push(EstimateSample {
            time_s: self.secs(self.now),
            node: self.topo.id(i).to_string(),
            parent: self.topo.id(parent).to_string(),
            alpha: node.alpha.estimate(),
            alpha_reliability: node
                .alpha
                .reliability(p_bad, &self.cfg.mac, &self.cfg.timing),
            etx: etx.map_or(ETX_INIT, EtxEstimator::etx),
            etx_reliability: etx.map_or_else(
                || EtxEstimator::new(self.cfg.etx_window).reliability(&self.cfg.mac),
                |e| e.reliability(&self.cfg.mac),
            ),
        });
    }

    fn on_reselect(&mut self, i: usize) {
        let choice = self.decide(i);
        self.switch_parent(i, choice);
        let next = self.now + self.cfg.slots(self.cfg.reselect_period).max(1);
        self.schedule(next, Event::Reselect(i));
    }

    fn switch_parent(&mut self, i: usize, choice: usize) {
        let old = self.nodes[i].parent;
        if old == Some(choice) {
            return;
        }
        self.nodes[i].parent = Some(choice);
        self.nodes[i].switches += 1;
        self.switches.push(SwitchEvent {
            time_s: self.secs(self.now),
            node: self.topo.id(i).to_string(),
            old_parent: old.map(|p| self.topo.id(p).to_string()).unwrap_or_default(),
            new_parent: self.topo.id(choice).to_string(),
        });
        if self.selector.per_packet() && self.nodes[i].queue.len() < self.cfg.queue_capacity {
            // advertise the new route; shares the channel with data
            self.nodes[i].queue.push_back(Frame::Control);
        }
    }

    /// Reliability of `k`'s uplink to `parent` as `k` currently estimates it.
    fn link_estimate(&self, k: usize, parent: usize) -> f64 {
        let p_bad = self.topo.p_bad(k, parent).unwrap_or(1.0);
        self.nodes[k]
            .alpha
            .reliability(p_bad, &self.cfg.mac, &self.cfg.timing)
    }

    fn link_etx(&self, k: usize, parent: usize) -> f64 {
        self.nodes[k]
            .etx
            .get(&parent)
            .map_or(ETX_INIT, EtxEstimator::etx)
    }

    /// `(R(j), ETX(j))` along `j`'s current route.
    fn downstream(&self, j: usize) -> (f64, f64) {
        let root = self.topo.root();
        let (mut rel, mut etx, mut k) = (1.0, 0.0, j);
        let mut hops = 0;
        while k != root && hops <= self.topo.len() {
            let Some(p) = self.nodes[k].parent else {
                break;
            };
            rel *= self.link_estimate(k, p);
            etx += self.link_etx(k, p);
            k = p;
            hops += 1;
        }
        (rel, etx)
    }

    fn estimated_loads(&self) -> Vec<f64> {
        let n = self.topo.len();
        let parents: Vec<Option<usize>> = self.nodes.iter().map(|s| s.parent).collect();
        let mut rel = DMatrix::zeros(n, n);
        for (k, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                rel[(k, p)] = self.link_estimate(k, p);
            }
        }
        let lambda = self.topo.lambdas();
        traffic_fixed_point(&lambda, &SelectionMatrix::from_parents(parents), &rel)
            .unwrap_or(lambda)
    }

    fn decide(&self, i: usize) -> usize {
        let root = self.topo.root();
        let loads = if self.selector.kind().is_load_aware() {
            Some(self.estimated_loads())
        } else {
            None
        };
        let candidates = self
            .dodag
            .parents(i)
            .iter()
            .map(|&j| {
                let link = self.link_estimate(i, j);
                let (down_rel, down_etx) = self.downstream(j);
                let mut c = CandidateView::new(j, self.topo.tie_key(j));
                c.link_reliability = link;
                c.downstream_reliability = down_rel;
                c.link_etx = self.link_etx(i, j);
                c.downstream_etx = down_etx;
                if let Some(q) = &loads {
                    let attached = if self.nodes[i].parent == Some(j) {
                        0.0
                    } else {
                        link * q[i]
                    };
                    c.load_pps = q[j] + attached;
                }
                c.lambda_pps = self.topo.lambda(j);
                c.p_tx = self.cfg.profile.p_tx;
                c.p_rx = self.cfg.profile.p_rx;
                c.queue_len = if j == root { 0.0 } else { self.queue_len(j) };
                c
            })
            .collect();
        let ctx = SelectionContext {
            node: i,
            queue_len: self.queue_len(i),
            candidates,
        };
        self.selector.select(&ctx).parent
    }

    /// Frames waiting or in service.
    fn queue_len(&self, k: usize) -> f64 {
        let node = &self.nodes[k];
        (node.queue.len() + node.service.is_some() as usize) as f64
    }

    fn finish(mut self) -> RunOutput {
        let end = self.end;
        let slot = self.cfg.timing.slot;
        for node in &mut self.nodes {
            let occupancy = occupancy(&node.intervals, end);
            let c = &mut node.counters;
            c.tx_s = occupancy[TX as usize] as f64 * slot;
            c.cca_s = occupancy[CCA as usize] as f64 * slot;
            c.rx_s = occupancy[RX as usize] as f64 * slot;
            c.backoff_s = occupancy[BACKOFF as usize] as f64 * slot;
            c.idle_s = occupancy[0] as f64 * slot;
        }
        let warmup = self.warmup;
        let packets: Vec<(usize, u64, Fate)> = self
            .packets
            .iter()
            .filter(|p| p.birth >= warmup)
            .map(|p| (p.source, p.birth, p.fate.clone()))
            .collect();
        let records = if self.cfg.record_trace {
            self.packets
                .iter()
                .enumerate()
                .map(|(id, p)| PacketRecord {
                    id: id as u64,
                    source: self.topo.id(p.source).to_string(),
                    birth_s: p.birth as f64 * slot,
                    hops: p.hops.clone(),
                    fate: p.fate.clone(),
                })
                .collect()
        } else {
            Vec::new()
        };
        RunOutput {
            trace: SimTrace {
                duration_s: end as f64 * slot,
                packets: records,
                nodes: self.nodes.iter().map(|n| n.counters.clone()).collect(),
                switches: self.switches,
                estimates: self.estimates,
            },
            packets,
            final_parents: self.nodes.iter().map(|n| n.parent).collect(),
            switches: self.nodes.iter().map(|n| n.switches).collect(),
        }
    }
}

/// Slots spent in each state over `[0, end)`, the highest-priority active
/// state winning; index 0 is idle.
fn occupancy(intervals: &[(u64, u64, u8)], end: u64) -> [u64; 5] {
    let mut marks: Vec<(u64, i32, u8)> = Vec::with_capacity(intervals.len() * 2);
    for &(s, e, state) in intervals {
        let (s, e) = (s.min(end), e.min(end));
        if e > s {
            marks.push((s, 1, state));
            marks.push((e, -1, state));
        }
    }
    marks.sort_unstable();
    let mut active = [0i32; 5];
    let mut out = [0u64; 5];
    let mut last = 0;
    for (pos, delta, state) in marks {
        let top = (1..5).rev().find(|&k| active[k] > 0).unwrap_or(0);
        out[top] += pos - last;
        last = pos;
        active[state as usize] += delta;
    }
    out[0] += end - last;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn occupancy_priority() {
        // backoff [0,10), rx [5,20), tx [8,12)
        let occ = occupancy(&[(0, 10, BACKOFF), (5, 20, RX), (8, 12, TX)], 30);
        assert_eq!(occ[BACKOFF as usize], 5);
        assert_eq!(occ[TX as usize], 4);
        assert_eq!(occ[RX as usize], 3 + 8);
        assert_eq!(occ[0], 10);
        assert_eq!(occ.iter().sum::<u64>(), 30);
    }

    #[test]
    fn occupancy_clips_to_end() {
        let occ = occupancy(&[(25, 40, TX)], 30);
        assert_eq!(occ[TX as usize], 5);
        assert_eq!(occ[0], 25);
    }
}
