//! Classic CAN bus: identifier arbitration, frame timing and broadcast delivery.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::time::{BitRate, SimDuration, SimTime};
use crate::NodeId;

pub const MAX_CAN_ID: u16 = 0x7FF;
pub const MAX_DLC: u8 = 8;

/// Standard data frame length without stuffing: SOF..EOF fields for an 11-bit
/// identifier.
const DATA_FRAME_FIXED_BITS: u64 = 47;
const INTERFRAME_SPACE_BITS: u64 = 3;
/// Bits exposed to stuffing (SOF, arbitration, control, CRC) minus the data field.
const STUFFABLE_FIXED_BITS: u64 = 34;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CanError {
    #[error("CAN id {0:#x} exceeds 11 bits")]
    InvalidId(u32),
    #[error("invalid dlc {0} (must be 0..=8)")]
    InvalidDlc(usize),
    #[error("nodes {a} and {b} contend with the same CAN id {id:#x}")]
    DuplicateIdContention { id: u16, a: NodeId, b: NodeId },
    #[error("arbitration over an empty set")]
    NothingPending,
    #[error("node {0} is not attached to the bus")]
    UnknownNode(NodeId),
    #[error("node {node} queue overflow (cap {cap})")]
    NodeQueueOverflow { node: NodeId, cap: usize },
}

/// An 11-bit CAN identifier. Lower values win arbitration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanId(u16);

impl CanId {
    pub fn new(raw: u32) -> Result<Self, CanError> {
        if raw > MAX_CAN_ID as u32 {
            return Err(CanError::InvalidId(raw));
        }
        Ok(CanId(raw as u16))
    }

    pub fn raw(self) -> u16 {
        self.0
    }
}

impl fmt::Display for CanId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#05x}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanMessage {
    pub can_id: CanId,
    data: Vec<u8>,
    /// When the sending node requested transmission.
    pub created_at: SimTime,
    pub source: NodeId,
}

impl CanMessage {
    pub fn new(
        can_id: CanId,
        data: Vec<u8>,
        created_at: SimTime,
        source: NodeId,
    ) -> Result<Self, CanError> {
        if data.len() > MAX_DLC as usize {
            return Err(CanError::InvalidDlc(data.len()));
        }
        Ok(CanMessage {
            can_id,
            data,
            created_at,
            source,
        })
    }

    pub fn dlc(&self) -> u8 {
        self.data.len() as u8
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StuffingModel {
    #[default]
    None,
    WorstCase,
}

impl FromStr for StuffingModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(StuffingModel::None),
            "worst_case" => Ok(StuffingModel::WorstCase),
            other => Err(format!(
                "unknown stuffing model `{other}` (none|worst_case)"
            )),
        }
    }
}

impl fmt::Display for StuffingModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StuffingModel::None => "none",
            StuffingModel::WorstCase => "worst_case",
        })
    }
}

/// Number of bits one data frame occupies on the bus, interframe space included.
pub fn can_frame_bits(dlc: usize, stuffing: StuffingModel) -> Result<u64, CanError> {
    if dlc > MAX_DLC as usize {
        return Err(CanError::InvalidDlc(dlc));
    }
    let data_bits = 8 * dlc as u64;
    let mut bits = DATA_FRAME_FIXED_BITS + data_bits + INTERFRAME_SPACE_BITS;
    if stuffing == StuffingModel::WorstCase {
        bits += (STUFFABLE_FIXED_BITS + data_bits - 1) / 4;
    }
    Ok(bits)
}

pub fn can_frame_time(
    dlc: usize,
    bitrate: BitRate,
    stuffing: StuffingModel,
) -> Result<SimDuration, CanError> {
    Ok(SimDuration::for_bits(
        can_frame_bits(dlc, stuffing)?,
        bitrate,
    ))
}

/// Index of the contender with the numerically smallest identifier.
pub fn arbitrate<'a, I>(contenders: I) -> Result<usize, CanError>
where
    I: IntoIterator<Item = (NodeId, &'a CanMessage)>,
{
    let mut best: Option<(usize, NodeId, CanId)> = None;
    for (i, (node, msg)) in contenders.into_iter().enumerate() {
        match best {
            Some((_, other, id)) if id == msg.can_id && other != node => {
                return Err(CanError::DuplicateIdContention {
                    id: id.raw(),
                    a: other,
                    b: node,
                });
            }
            Some((_, _, id)) if id <= msg.can_id => {}
            _ => best = Some((i, node, msg.can_id)),
        }
    }
    best.map(|(i, _, _)| i).ok_or(CanError::NothingPending)
}

#[derive(Debug, Clone)]
struct CanNode {
    id: NodeId,
    queue: VecDeque<CanMessage>,
}

/// A completed transmission: the frame and the nodes that received a copy.
#[derive(Debug, Clone)]
pub struct CanDelivery {
    pub msg: CanMessage,
    pub delivered_at: SimTime,
    pub receivers: Vec<NodeId>,
}

#[derive(Debug, Clone)]
struct InFlight {
    msg: CanMessage,
    started_at: SimTime,
}

/// Bus state. The owner drives it from the event loop:
/// `transmit_request` may ask for an arbitration event at the current instant,
/// `on_arbitrate` starts the winning frame and returns its completion time,
/// `on_tx_complete` broadcasts the frame.
#[derive(Debug, Clone)]
pub struct CanBus {
    bitrate: BitRate,
    stuffing: StuffingModel,
    node_queue_cap: Option<usize>,
    nodes: Vec<CanNode>,
    in_flight: Option<InFlight>,
    busy_until: SimTime,
    busy_time: SimDuration,
    arbitration_pending: bool,
    frames_sent: u64,
    dropped: u64,
}

impl CanBus {
    pub fn new(bitrate: BitRate, stuffing: StuffingModel, node_queue_cap: Option<usize>) -> Self {
        CanBus {
            bitrate,
            stuffing,
            node_queue_cap,
            nodes: Vec::new(),
            in_flight: None,
            busy_until: SimTime::ZERO,
            busy_time: SimDuration::ZERO,
            arbitration_pending: false,
            frames_sent: 0,
            dropped: 0,
        }
    }

    pub fn attach(&mut self, node: NodeId) {
        if !self.nodes.iter().any(|n| n.id == node) {
            self.nodes.push(CanNode {
                id: node,
                queue: VecDeque::new(),
            });
        }
    }

    pub fn bitrate(&self) -> BitRate {
        self.bitrate
    }

    pub fn stuffing(&self) -> StuffingModel {
        self.stuffing
    }

    pub fn is_idle(&self) -> bool {
        self.in_flight.is_none()
    }

    pub fn busy_until(&self) -> SimTime {
        self.busy_until
    }

    pub fn busy_time(&self) -> SimDuration {
        self.busy_time
    }

    pub fn frames_sent(&self) -> u64 {
        self.frames_sent
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Messages waiting in node queues plus the one on the wire.
    pub fn in_flight_count(&self) -> usize {
        self.nodes.iter().map(|n| n.queue.len()).sum::<usize>() + self.in_flight.iter().count()
    }

    /// Queues `msg` at `node`. Returns true when the caller must schedule an
    /// arbitration event at the current instant.
    pub fn transmit_request(&mut self, node: NodeId, msg: CanMessage) -> Result<bool, CanError> {
        let cap = self.node_queue_cap;
        let slot = self
            .nodes
            .iter_mut()
            .find(|n| n.id == node)
            .ok_or(CanError::UnknownNode(node))?;
        if let Some(cap) = cap {
            if slot.queue.len() >= cap {
                self.dropped += 1;
                return Err(CanError::NodeQueueOverflow { node, cap });
            }
        }
        slot.queue.push_back(msg);
        Ok(self.claim_arbitration())
    }

    fn claim_arbitration(&mut self) -> bool {
        if self.in_flight.is_none() && !self.arbitration_pending {
            self.arbitration_pending = true;
            true
        } else {
            false
        }
    }

    /// Runs arbitration over the head-of-line messages. Returns the completion
    /// instant of the frame that starts, if any.
    pub fn on_arbitrate(&mut self, now: SimTime) -> Result<Option<SimTime>, CanError> {
        self.arbitration_pending = false;
        if self.in_flight.is_some() {
            return Ok(None);
        }
        let heads: Vec<(usize, NodeId, &CanMessage)> = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.queue.front().map(|m| (i, n.id, m)))
            .collect();
        if heads.is_empty() {
            return Ok(None);
        }
        let winner = arbitrate(heads.iter().map(|(_, id, m)| (*id, *m)))?;
        let node_idx = heads[winner].0;
        let msg = self.nodes[node_idx].queue.pop_front().expect("head exists");
        let duration = can_frame_time(msg.data.len(), self.bitrate, self.stuffing)?;
        self.busy_until = now + duration;
        self.in_flight = Some(InFlight {
            msg,
            started_at: now,
        });
        Ok(Some(self.busy_until))
    }

    /// Finishes the frame on the wire. The second value is true when another
    /// arbitration round must be scheduled at `now`.
    pub fn on_tx_complete(&mut self, now: SimTime) -> Option<(CanDelivery, bool)> {
        let InFlight { msg, started_at } = self.in_flight.take()?;
        self.busy_time = self.busy_time + (now - started_at);
        self.frames_sent += 1;
        let receivers = self
            .nodes
            .iter()
            .map(|n| n.id)
            .filter(|id| *id != msg.source)
            .collect();
        let more = self.nodes.iter().any(|n| !n.queue.is_empty()) && self.claim_arbitration();
        Some((
            CanDelivery {
                msg,
                delivered_at: now,
                receivers,
            },
            more,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Engine, EntityId};
    use proptest::prelude::*;

    fn msg(id: u32, node: u32, t: u64) -> CanMessage {
        CanMessage::new(
            CanId::new(id).unwrap(),
            vec![0; 8],
            SimTime::from_nanos(t),
            NodeId(node),
        )
        .unwrap()
    }

    #[test]
    fn frame_times() {
        let r = BitRate::mbps(1);
        assert_eq!(
            can_frame_time(0, r, StuffingModel::None).unwrap(),
            SimDuration::from_micros(50)
        );
        assert_eq!(
            can_frame_time(8, r, StuffingModel::None).unwrap(),
            SimDuration::from_micros(114)
        );
        assert_eq!(
            can_frame_time(8, r, StuffingModel::WorstCase).unwrap(),
            SimDuration::from_micros(138)
        );
        assert_eq!(
            can_frame_time(9, r, StuffingModel::None),
            Err(CanError::InvalidDlc(9))
        );
    }

    /// Stuff bits a transmitter inserts into `bits` (one after every run of five
    /// equal bits, the stuff bit itself starting a new run).
    fn stuff_count(bits: &[bool]) -> u64 {
        let mut count = 0;
        let mut last = None;
        let mut run = 0;
        for &b in bits {
            if Some(b) == last {
                run += 1;
            } else {
                last = Some(b);
                run = 1;
            }
            if run == 5 {
                count += 1;
                last = Some(!b);
                run = 1;
            }
        }
        count
    }

    #[test]
    fn worst_case_stuffing_matches_enumeration() {
        for n in 1..=18u64 {
            let worst = (0u32..1 << n)
                .map(|pattern| {
                    let bits: Vec<bool> = (0..n).map(|i| pattern >> i & 1 == 1).collect();
                    stuff_count(&bits)
                })
                .max()
                .unwrap();
            assert_eq!(worst, (n - 1) / 4, "n={n}");
        }
    }

    #[test]
    fn dlc8_adversarial_pattern_hits_formula() {
        // 5 dominant bits, then alternating runs of 4 that merge with each stuff bit.
        let n = (STUFFABLE_FIXED_BITS + 64) as usize;
        let mut bits = vec![false; 5];
        let mut level = true;
        while bits.len() < n {
            for _ in 0..4 {
                bits.push(level);
            }
            level = !level;
        }
        bits.truncate(n);
        assert_eq!(stuff_count(&bits), 24);
        assert_eq!(
            can_frame_bits(8, StuffingModel::WorstCase).unwrap(),
            114 + stuff_count(&bits)
        );
    }

    #[test]
    fn arbitration_picks_lowest_id() {
        let a = msg(5, 1, 0);
        assert_eq!(arbitrate([(NodeId(1), &a)]).unwrap(), 0);
        let (x, y, z) = (msg(0x100, 1, 0), msg(0x0A0, 2, 0), msg(0x700, 3, 0));
        let set = [(NodeId(1), &x), (NodeId(2), &y), (NodeId(3), &z)];
        assert_eq!(arbitrate(set).unwrap(), 1);
    }

    #[test]
    fn duplicate_id_contention() {
        let (a, b) = (msg(7, 1, 0), msg(7, 2, 0));
        assert!(matches!(
            arbitrate([(NodeId(1), &a), (NodeId(2), &b)]),
            Err(CanError::DuplicateIdContention { id: 7, .. })
        ));
        assert_eq!(arbitrate(std::iter::empty()), Err(CanError::NothingPending));
    }

    proptest! {
        #[test]
        fn winner_is_exhaustive_minimum(ids in proptest::collection::hash_set(0u32..=0x7FF, 1..=8)) {
            let msgs: Vec<CanMessage> =
                ids.iter().enumerate().map(|(i, id)| msg(*id, i as u32, 0)).collect();
            let w = arbitrate(msgs.iter().map(|m| (m.source, m))).unwrap();
            let mut min = u16::MAX;
            for m in &msgs {
                if m.can_id.raw() < min {
                    min = m.can_id.raw();
                }
            }
            prop_assert_eq!(msgs[w].can_id.raw(), min);
        }
    }

    #[derive(Debug)]
    enum Ev {
        Request(NodeId, CanMessage),
        Arbitrate,
        Done,
    }

    /// Drives a bus from an engine; returns (can_id, completion) per frame.
    fn run_bus(bus: &mut CanBus, requests: Vec<(NodeId, CanMessage)>) -> Vec<(u16, u64)> {
        let mut eng: Engine<Ev> = Engine::new();
        for (node, m) in requests {
            let at = m.created_at;
            eng.schedule(EntityId(0), Ev::Request(node, m), at).unwrap();
        }
        let mut out = Vec::new();
        eng.run_until::<CanError, _>(SimTime::MAX, |eng, ev| {
            let now = eng.now();
            match ev.kind {
                Ev::Request(node, m) => {
                    if bus.transmit_request(node, m)? {
                        eng.schedule(EntityId(0), Ev::Arbitrate, now).unwrap();
                    }
                }
                Ev::Arbitrate => {
                    if let Some(done) = bus.on_arbitrate(now)? {
                        eng.schedule(EntityId(0), Ev::Done, done).unwrap();
                    }
                }
                Ev::Done => {
                    let (d, more) = bus.on_tx_complete(now).unwrap();
                    out.push((d.msg.can_id.raw(), now.as_nanos()));
                    if more {
                        eng.schedule(EntityId(0), Ev::Arbitrate, now).unwrap();
                    }
                }
            }
            Ok(())
        })
        .unwrap();
        out
    }

    #[test]
    fn idle_bus_delivers_after_one_frame_time() {
        let mut bus = CanBus::new(BitRate::mbps(1), StuffingModel::None, None);
        for n in 1..=3 {
            bus.attach(NodeId(n));
        }
        assert!(bus.transmit_request(NodeId(1), msg(0x10, 1, 0)).unwrap());
        let done = bus.on_arbitrate(SimTime::ZERO).unwrap().unwrap();
        assert_eq!(done, SimTime::from_nanos(114_000));
        let (d, more) = bus.on_tx_complete(done).unwrap();
        assert!(!more);
        assert_eq!(d.receivers, vec![NodeId(2), NodeId(3)]);
        assert_eq!(d.delivered_at, done);
    }

    #[test]
    fn simultaneous_requests_serialize_by_id() {
        let mut bus = CanBus::new(BitRate::mbps(1), StuffingModel::None, None);
        bus.attach(NodeId(1));
        bus.attach(NodeId(2));
        let t = 1_000;
        let out = run_bus(
            &mut bus,
            vec![(NodeId(1), msg(7, 1, t)), (NodeId(2), msg(3, 2, t))],
        );
        assert_eq!(out, vec![(3, t + 114_000), (7, t + 228_000)]);
        assert_eq!(bus.busy_time(), SimDuration::from_micros(228));
    }

    #[test]
    fn busy_bus_defers_request() {
        let mut bus = CanBus::new(BitRate::mbps(1), StuffingModel::None, None);
        for n in 1..=3 {
            bus.attach(NodeId(n));
        }
        // id 9 starts at 0; ids 8 and 2 arrive mid-frame and wait for busy_until.
        let out = run_bus(
            &mut bus,
            vec![
                (NodeId(1), msg(9, 1, 0)),
                (NodeId(2), msg(8, 2, 10_000)),
                (NodeId(3), msg(2, 3, 50_000)),
            ],
        );
        assert_eq!(out, vec![(9, 114_000), (2, 228_000), (8, 342_000)]);
    }

    #[test]
    fn per_sender_fifo() {
        let mut bus = CanBus::new(BitRate::mbps(1), StuffingModel::None, None);
        bus.attach(NodeId(1));
        bus.attach(NodeId(2));
        // Node 1's later message has a lower id but must wait behind its own head.
        let out = run_bus(
            &mut bus,
            vec![
                (NodeId(1), msg(0x300, 1, 0)),
                (NodeId(1), msg(0x001, 1, 0)),
                (NodeId(2), msg(0x200, 2, 0)),
            ],
        );
        let ids: Vec<u16> = out.iter().map(|(id, _)| *id).collect();
        assert_eq!(ids, vec![0x200, 0x300, 0x001]);
    }

    #[test]
    fn node_queue_cap() {
        let mut bus = CanBus::new(BitRate::mbps(1), StuffingModel::None, Some(1));
        bus.attach(NodeId(1));
        bus.transmit_request(NodeId(1), msg(1, 1, 0)).unwrap();
        assert!(matches!(
            bus.transmit_request(NodeId(1), msg(2, 1, 0)),
            Err(CanError::NodeQueueOverflow { cap: 1, .. })
        ));
        assert_eq!(bus.dropped(), 1);
        assert!(matches!(
            bus.transmit_request(NodeId(9), msg(2, 9, 0)),
            Err(CanError::UnknownNode(_))
        ));
    }
}
