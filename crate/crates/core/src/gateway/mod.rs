//! CAN to Ethernet-AVB gateway: FIFO-queues CAN messages, packs them into one
//! Ethernet frame per pack period and tags that frame with the CAN traffic class.

pub mod codec;

use std::collections::VecDeque;

use thiserror::Error;

use crate::can::CanMessage;
use crate::eth::{EthError, EthFrame, Payload, Pcp, MAX_PAYLOAD, MIN_PAYLOAD};
use crate::time::{SimDuration, SimTime};
use crate::NodeId;

pub use codec::{pack, packed_len, record_len, unpack, CanRecord, CodecError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("gateway FIFO overflow (cap {0})")]
    QueueOverflow(usize),
    #[error("invalid gateway config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Eth(#[from] EthError),
}

/// `class_for_can` may equal `be_pcp`: that is how the best-effort arms route
/// CAN frames into the best-effort queue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GwConfig {
    pub pack_period: SimDuration,
    pub mtu_payload: usize,
    pub class_for_can: Pcp,
    pub be_pcp: Pcp,
    pub dst: NodeId,
    pub queue_cap: Option<usize>,
}

impl GwConfig {
    pub fn new(dst: NodeId) -> Self {
        GwConfig {
            pack_period: SimDuration::from_micros(500),
            mtu_payload: MAX_PAYLOAD,
            class_for_can: Pcp::AVB_CLASS_A,
            be_pcp: Pcp::BEST_EFFORT,
            dst,
            queue_cap: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidConfig(m.to_string()));
        if self.pack_period == SimDuration::ZERO {
            return bad("pack_period must be > 0");
        }
        if self.mtu_payload > MAX_PAYLOAD || self.mtu_payload < codec::COUNT_BYTES + record_len(8) {
            return bad("mtu_payload must fit one 8-byte record and be at most 1500");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameOrigin {
    CanDerived,
    Other,
}

#[derive(Debug, Clone)]
pub struct Gateway {
    pub node: NodeId,
    cfg: GwConfig,
    fifo: VecDeque<CanMessage>,
    dropped: u64,
    frames_built: u64,
}

impl Gateway {
    pub fn new(node: NodeId, cfg: GwConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        Ok(Gateway {
            node,
            cfg,
            fifo: VecDeque::new(),
            dropped: 0,
            frames_built: 0,
        })
    }

    pub fn config(&self) -> &GwConfig {
        &self.cfg
    }

    pub fn queued(&self) -> usize {
        self.fifo.len()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn frames_built(&self) -> u64 {
        self.frames_built
    }

    /// The scheduling rule: CAN-bearing frames get the CAN class, everything
    /// else is best-effort.
    pub fn classify(&self, origin: FrameOrigin) -> Pcp {
        match origin {
            FrameOrigin::CanDerived => self.cfg.class_for_can,
            FrameOrigin::Other => self.cfg.be_pcp,
        }
    }

    pub fn on_can_received(&mut self, msg: CanMessage) -> Result<(), GatewayError> {
        if let Some(cap) = self.cfg.queue_cap {
            if self.fifo.len() >= cap {
                self.dropped += 1;
                return Err(GatewayError::QueueOverflow(cap));
            }
        }
        self.fifo.push_back(msg);
        Ok(())
    }

    /// Drains as many head messages as fit into one payload and wraps them in
    /// a frame. Nothing is emitted for an empty FIFO.
    pub fn on_pack_timer(&mut self, _now: SimTime) -> Result<Option<EthFrame>, GatewayError> {
        if self.fifo.is_empty() {
            return Ok(None);
        }
        let mut len = codec::COUNT_BYTES;
        let mut take = 0;
        for m in &self.fifo {
            let next = len + record_len(m.data().len());
            if next > self.cfg.mtu_payload || take == u16::MAX as usize {
                break;
            }
            len = next;
            take += 1;
        }
        let records: Vec<CanRecord> = self
            .fifo
            .drain(..take)
            .map(|m| CanRecord::from(&m))
            .collect();
        let bytes = pack(&records, self.cfg.mtu_payload)?;
        let frame = EthFrame::new(
            self.node,
            self.cfg.dst,
            self.classify(FrameOrigin::CanDerived),
            bytes.len().max(MIN_PAYLOAD),
            Payload::PackedCan {
                bytes,
                records: take as u16,
            },
        )?;
        self.frames_built += 1;
        Ok(Some(frame))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::can::CanId;

    fn msg(i: u64, dlc: usize) -> CanMessage {
        CanMessage::new(
            CanId::new(0x100).unwrap(),
            vec![i as u8; dlc],
            SimTime::from_nanos(i),
            NodeId(1),
        )
        .unwrap()
    }

    fn gw() -> Gateway {
        Gateway::new(NodeId(2), GwConfig::new(NodeId(9))).unwrap()
    }

    #[test]
    fn empty_fifo_emits_nothing() {
        assert_eq!(gw().on_pack_timer(SimTime::ZERO).unwrap(), None);
    }

    #[test]
    fn single_message_is_padded() {
        let mut g = gw();
        g.on_can_received(msg(0, 8)).unwrap();
        let f = g.on_pack_timer(SimTime::ZERO).unwrap().unwrap();
        assert_eq!(f.pcp, Pcp::AVB_CLASS_A);
        assert_eq!(f.payload_len(), 46);
        let Payload::PackedCan { bytes, records } = &f.payload else {
            panic!()
        };
        assert_eq!((bytes.len(), *records), (23, 1));
        assert_eq!(f.dst, NodeId(9));
        assert_eq!(g.queued(), 0);
    }

    #[test]
    fn greedy_fit_leaves_remainder() {
        let mut g = gw();
        for i in 0..80 {
            g.on_can_received(msg(i, 8)).unwrap();
        }
        let f = g.on_pack_timer(SimTime::ZERO).unwrap().unwrap();
        assert_eq!(f.can_records(), 71);
        assert_eq!(f.payload_len(), 1493);
        assert_eq!(g.queued(), 9);
        let f2 = g.on_pack_timer(SimTime::ZERO).unwrap().unwrap();
        let Payload::PackedCan { bytes, .. } = &f2.payload else {
            panic!()
        };
        let recs = unpack(bytes).unwrap();
        let stamps: Vec<u64> = recs.iter().map(|r| r.created_at.as_nanos()).collect();
        assert_eq!(stamps, (71..80).collect::<Vec<_>>());
    }

    #[test]
    fn fifo_order_preserved() {
        let mut g = gw();
        for i in [3, 1, 2] {
            g.on_can_received(msg(i, 2)).unwrap();
        }
        let f = g.on_pack_timer(SimTime::ZERO).unwrap().unwrap();
        let Payload::PackedCan { bytes, .. } = &f.payload else {
            panic!()
        };
        let order: Vec<u64> = unpack(bytes)
            .unwrap()
            .iter()
            .map(|r| r.created_at.as_nanos())
            .collect();
        assert_eq!(order, vec![3, 1, 2]);
    }

    #[test]
    fn overflow_drops() {
        let mut cfg = GwConfig::new(NodeId(9));
        cfg.queue_cap = Some(1);
        let mut g = Gateway::new(NodeId(2), cfg).unwrap();
        g.on_can_received(msg(0, 8)).unwrap();
        assert_eq!(
            g.on_can_received(msg(1, 8)),
            Err(GatewayError::QueueOverflow(1))
        );
        assert_eq!(g.dropped(), 1);
        assert_eq!(g.queued(), 1);
    }

    #[test]
    fn classification() {
        let g = gw();
        assert_eq!(g.classify(FrameOrigin::CanDerived), Pcp::new(3).unwrap());
        assert_eq!(g.classify(FrameOrigin::Other), Pcp::new(0).unwrap());
        let mut cfg = GwConfig::new(NodeId(9));
        cfg.class_for_can = Pcp::BEST_EFFORT;
        let mut g = Gateway::new(NodeId(2), cfg).unwrap();
        assert_eq!(g.classify(FrameOrigin::CanDerived), Pcp::BEST_EFFORT);
        g.on_can_received(msg(0, 8)).unwrap();
        assert_eq!(
            g.on_pack_timer(SimTime::ZERO).unwrap().unwrap().pcp,
            Pcp::BEST_EFFORT
        );
    }

    #[test]
    fn config_validation() {
        let mut cfg = GwConfig::new(NodeId(9));
        cfg.pack_period = SimDuration::ZERO;
        assert!(Gateway::new(NodeId(2), cfg).is_err());
        let mut cfg = GwConfig::new(NodeId(9));
        cfg.mtu_payload = 1501;
        assert!(Gateway::new(NodeId(2), cfg).is_err());
    }
}
