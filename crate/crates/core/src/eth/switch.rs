use std::collections::{BTreeMap, VecDeque};

use crate::time::{SimDuration, SimTime};
use crate::NodeId;

use super::frame::EthFrame;
use super::EthError;

/// Store-and-forward switch with a static forwarding table. Frames spend a
/// fixed `forwarding_latency` in the fabric before reaching an egress port.
#[derive(Debug, Clone)]
pub struct SwitchModel {
    pub node: NodeId,
    /// Egress ports, indexed by local port number.
    pub ports: Vec<usize>,
    table: BTreeMap<NodeId, usize>,
    forwarding_latency: SimDuration,
    fabric: VecDeque<(SimTime, usize, EthFrame)>,
    dropped_unknown: u64,
}

impl SwitchModel {
    pub fn new(node: NodeId, forwarding_latency: SimDuration) -> Self {
        SwitchModel {
            node,
            ports: Vec::new(),
            table: BTreeMap::new(),
            forwarding_latency,
            fabric: VecDeque::new(),
            dropped_unknown: 0,
        }
    }

    /// Adds an egress port backed by `port_id` and returns its local number.
    pub fn add_port(&mut self, port_id: usize) -> usize {
        self.ports.push(port_id);
        self.ports.len() - 1
    }

    pub fn route(&mut self, dst: NodeId, local_port: usize) {
        self.table.insert(dst, local_port);
    }

    pub fn lookup(&self, dst: NodeId) -> Option<usize> {
        self.table.get(&dst).map(|&local| self.ports[local])
    }

    pub fn forwarding_latency(&self) -> SimDuration {
        self.forwarding_latency
    }

    pub fn dropped_unknown(&self) -> u64 {
        self.dropped_unknown
    }

    /// Accepts a fully received frame. Returns when it should be released
    /// into its egress port.
    pub fn forward(
        &mut self,
        frame: EthFrame,
        arrival_complete: SimTime,
    ) -> Result<SimTime, EthError> {
        let Some(port) = self.lookup(frame.dst) else {
            self.dropped_unknown += 1;
            return Err(EthError::UnknownDestination(frame.dst));
        };
        let release_at = arrival_complete + self.forwarding_latency;
        debug_assert!(self.fabric.back().is_none_or(|(t, _, _)| *t <= release_at));
        self.fabric.push_back((release_at, port, frame));
        Ok(release_at)
    }

    /// Pops the next frame due at `now` together with its egress port id.
    pub fn release(&mut self, now: SimTime) -> Option<(usize, EthFrame)> {
        match self.fabric.front() {
            Some((t, _, _)) if *t <= now => self.fabric.pop_front().map(|(_, p, f)| (p, f)),
            _ => None,
        }
    }

    pub fn in_fabric(&self) -> impl Iterator<Item = &EthFrame> {
        self.fabric.iter().map(|(_, _, f)| f)
    }
}
