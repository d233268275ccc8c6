//! Traffic sources and the sink: a periodic CAN sender, the jamming talker and
//! the AVB listener that turns packed frames back into latency records.

use thiserror::Error;

use crate::can::{CanError, CanId, CanMessage};
use crate::eth::{EthError, EthFrame, Payload, Pcp, MAC_OVERHEAD_BYTES, MAX_PAYLOAD, MIN_PAYLOAD};
use crate::gateway::{unpack, CodecError};
use crate::metrics::{Arm, LatencyRecord};
use crate::rng::{RngError, SimRng};
use crate::time::{SimDuration, SimTime};
use crate::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrafficError {
    #[error("invalid traffic config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Can(#[from] CanError),
    #[error(transparent)]
    Eth(#[from] EthError),
    #[error(transparent)]
    Rng(#[from] RngError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodicCanSenderCfg {
    pub can_id: CanId,
    pub dlc: u8,
    pub period: SimDuration,
    pub start: SimTime,
    pub count: Option<u64>,
}

impl Default for PeriodicCanSenderCfg {
    fn default() -> Self {
        PeriodicCanSenderCfg {
            can_id: CanId::new(0x100).expect("valid id"),
            dlc: 8,
            period: SimDuration::from_millis(3),
            start: SimTime::ZERO,
            count: None,
        }
    }
}

impl PeriodicCanSenderCfg {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if self.period == SimDuration::ZERO {
            return Err(TrafficError::InvalidConfig(
                "sender period must be > 0".into(),
            ));
        }
        if self.dlc > 8 {
            return Err(CanError::InvalidDlc(self.dlc as usize).into());
        }
        Ok(())
    }
}

/// Sends one message per period. The payload carries the sequence number,
/// little-endian, truncated to `dlc` bytes.
#[derive(Debug, Clone)]
pub struct PeriodicCanSender {
    pub node: NodeId,
    cfg: PeriodicCanSenderCfg,
    next_seq: u64,
}

impl PeriodicCanSender {
    pub fn new(node: NodeId, cfg: PeriodicCanSenderCfg) -> Result<Self, TrafficError> {
        cfg.validate()?;
        Ok(PeriodicCanSender {
            node,
            cfg,
            next_seq: 0,
        })
    }

    pub fn config(&self) -> &PeriodicCanSenderCfg {
        &self.cfg
    }

    pub fn created(&self) -> u64 {
        self.next_seq
    }

    /// First tick, or `None` when the count limit is zero.
    pub fn first_tick(&self) -> Option<SimTime> {
        (self.cfg.count != Some(0)).then_some(self.cfg.start)
    }

    /// Creates the next message at `now` and returns when to tick again.
    pub fn tick(&mut self, now: SimTime) -> Result<(CanMessage, Option<SimTime>), TrafficError> {
        let seq = self.next_seq;
        self.next_seq += 1;
        let data = seq.to_le_bytes()[..self.cfg.dlc as usize].to_vec();
        let msg = CanMessage::new(self.cfg.can_id, data, now, self.node)?;
        let next = match self.cfg.count {
            Some(limit) if self.next_seq >= limit => None,
            _ => Some(now + self.cfg.period),
        };
        Ok((msg, next))
    }
}

/// Recovers the sequence number a [`PeriodicCanSender`] wrote into `data`.
pub fn decode_seq(data: &[u8]) -> u64 {
    let mut buf = [0u8; 8];
    buf[..data.len()].copy_from_slice(data);
    u64::from_le_bytes(buf)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JammingTalkerCfg {
    /// MAC frame size: header, payload and FCS.
    pub frame_total_bytes: usize,
    pub period_lo: SimDuration,
    pub period_hi: SimDuration,
    pub dst: NodeId,
    pub pcp: Pcp,
}

impl JammingTalkerCfg {
    pub fn new(dst: NodeId) -> Self {
        JammingTalkerCfg {
            frame_total_bytes: 1470,
            period_lo: SimDuration::from_micros(1),
            period_hi: SimDuration::from_micros(25),
            dst,
            pcp: Pcp::BEST_EFFORT,
        }
    }

    pub fn payload_len(&self) -> usize {
        self.frame_total_bytes
            .saturating_sub(MAC_OVERHEAD_BYTES as usize)
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        let min = MIN_PAYLOAD + MAC_OVERHEAD_BYTES as usize;
        let max = MAX_PAYLOAD + MAC_OVERHEAD_BYTES as usize;
        if !(min..=max).contains(&self.frame_total_bytes) {
            return Err(TrafficError::InvalidConfig(format!(
                "jammer frame_total_bytes {} outside {min}..={max}",
                self.frame_total_bytes
            )));
        }
        if self.period_lo > self.period_hi {
            return Err(TrafficError::InvalidConfig(format!(
                "jammer period_lo {} > period_hi {}",
                self.period_lo, self.period_hi
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct JammingTalker {
    pub node: NodeId,
    cfg: JammingTalkerCfg,
    rng: SimRng,
    emitted: u64,
}

impl JammingTalker {
    pub fn new(node: NodeId, cfg: JammingTalkerCfg, rng: SimRng) -> Result<Self, TrafficError> {
        cfg.validate()?;
        Ok(JammingTalker {
            node,
            cfg,
            rng,
            emitted: 0,
        })
    }

    pub fn config(&self) -> &JammingTalkerCfg {
        &self.cfg
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    /// Emits one best-effort filler frame and draws the gap to the next one.
    pub fn tick(&mut self, now: SimTime) -> Result<(EthFrame, SimTime), TrafficError> {
        let frame = EthFrame::new(
            self.node,
            self.cfg.dst,
            self.cfg.pcp,
            self.cfg.payload_len(),
            Payload::Filler,
        )?;
        self.emitted += 1;
        let gap = self
            .rng
            .uniform_draw(self.cfg.period_lo, self.cfg.period_hi)?;
        Ok((frame, now + gap))
    }
}

/// The AVB listener: unpacks CAN-bearing frames into latency records and
/// counts filler frames.
#[derive(Debug, Clone)]
pub struct Listener {
    pub node: NodeId,
    arm: Arm,
    jam_frames: u64,
    can_frames: u64,
}

impl Listener {
    pub fn new(node: NodeId, arm: Arm) -> Self {
        Listener {
            node,
            arm,
            jam_frames: 0,
            can_frames: 0,
        }
    }

    pub fn jam_frames(&self) -> u64 {
        self.jam_frames
    }

    pub fn can_frames(&self) -> u64 {
        self.can_frames
    }

    pub fn receive(
        &mut self,
        frame: &EthFrame,
        now: SimTime,
    ) -> Result<Vec<LatencyRecord>, TrafficError> {
        match &frame.payload {
            Payload::Filler => {
                self.jam_frames += 1;
                Ok(Vec::new())
            }
            Payload::PackedCan { bytes, .. } => {
                self.can_frames += 1;
                let records = unpack(bytes)?;
                Ok(records
                    .into_iter()
                    .map(|r| LatencyRecord {
                        seq: decode_seq(&r.data),
                        can_id: r.can_id.raw(),
                        created_at: r.created_at,
                        delivered_at: now,
                        arm: self.arm,
                    })
                    .collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eth::eth_wire_time;
    use crate::gateway::{pack, CanRecord};
    use crate::time::BitRate;

    #[test]
    fn default_sender_over_one_second() {
        let mut s = PeriodicCanSender::new(NodeId(1), PeriodicCanSenderCfg::default()).unwrap();
        let end = SimTime::from_nanos(1_000_000_000);
        let mut t = s.first_tick();
        let mut created = Vec::new();
        while let Some(now) = t.filter(|t| *t < end) {
            let (m, next) = s.tick(now).unwrap();
            created.push((m.created_at.as_nanos(), decode_seq(m.data())));
            t = next;
        }
        assert_eq!(created.len(), 334);
        assert_eq!(created.last().unwrap().0, 999_000_000);
        for (i, w) in created.windows(2).enumerate() {
            assert_eq!(w[1].0 - w[0].0, 3_000_000);
            assert_eq!(w[1].1, i as u64 + 1);
        }
    }

    #[test]
    fn count_limit() {
        let cfg = PeriodicCanSenderCfg {
            count: Some(1),
            ..Default::default()
        };
        let mut s = PeriodicCanSender::new(NodeId(1), cfg).unwrap();
        let (_, next) = s.tick(SimTime::ZERO).unwrap();
        assert_eq!(next, None);
        assert_eq!(s.created(), 1);
        let zero = PeriodicCanSenderCfg {
            count: Some(0),
            ..Default::default()
        };
        assert_eq!(
            PeriodicCanSender::new(NodeId(1), zero)
                .unwrap()
                .first_tick(),
            None
        );
    }

    #[test]
    fn no_drift_over_a_million_ticks() {
        let mut s = PeriodicCanSender::new(NodeId(1), PeriodicCanSenderCfg::default()).unwrap();
        let mut t = SimTime::ZERO;
        for _ in 0..1_000_000 {
            t = s.tick(t).unwrap().1.unwrap();
        }
        assert_eq!(t.as_nanos(), 1_000_000 * 3_000_000);
    }

    #[test]
    fn jam_frame_size() {
        let cfg = JammingTalkerCfg::new(NodeId(9));
        assert_eq!(cfg.payload_len(), 1452);
        let wire = eth_wire_time(cfg.payload_len(), false, BitRate::mbps(100)).unwrap();
        assert_eq!(wire.as_nanos(), 119_200);
    }

    #[test]
    fn jammer_gaps_bounded_with_expected_mean() {
        let cfg = JammingTalkerCfg::new(NodeId(9));
        let mut j = JammingTalker::new(NodeId(8), cfg.clone(), SimRng::new(42, 3)).unwrap();
        let mut t = SimTime::ZERO;
        let n = 100_000;
        for _ in 0..n {
            let (f, next) = j.tick(t).unwrap();
            assert_eq!(f.pcp, Pcp::BEST_EFFORT);
            let gap = next - t;
            assert!(gap >= cfg.period_lo && gap <= cfg.period_hi);
            t = next;
        }
        let mean_us = t.as_nanos() as f64 / n as f64 / 1e3;
        assert!((mean_us - 13.0).abs() < 0.2, "mean gap {mean_us}");
    }

    #[test]
    fn jam_offered_load_exceeds_link() {
        let cfg = JammingTalkerCfg::new(NodeId(9));
        let service = eth_wire_time(cfg.payload_len(), false, BitRate::mbps(100)).unwrap();
        let load = service.as_micros_f64() / 13.0;
        assert!(load > 9.0 && load < 9.3, "load {load}");
    }

    #[test]
    fn jammer_config_validation() {
        let mut cfg = JammingTalkerCfg::new(NodeId(9));
        cfg.period_lo = SimDuration::from_micros(30);
        assert!(cfg.validate().is_err());
        let mut cfg = JammingTalkerCfg::new(NodeId(9));
        cfg.frame_total_bytes = 63;
        assert!(cfg.validate().is_err());
    }

    fn can_frame(stamps: &[u64]) -> EthFrame {
        let recs: Vec<CanRecord> = stamps
            .iter()
            .enumerate()
            .map(|(i, &t)| CanRecord {
                can_id: CanId::new(0x100).unwrap(),
                created_at: SimTime::from_nanos(t),
                data: (i as u64).to_le_bytes().to_vec(),
            })
            .collect();
        let bytes = pack(&recs, 1500).unwrap();
        EthFrame::new(
            NodeId(1),
            NodeId(9),
            Pcp::AVB_CLASS_A,
            bytes.len().max(46),
            Payload::PackedCan {
                bytes,
                records: recs.len() as u16,
            },
        )
        .unwrap()
    }

    #[test]
    fn listener_latency() {
        let mut l = Listener::new(NodeId(9), Arm::AvbNature);
        let recs = l
            .receive(&can_frame(&[100]), SimTime::from_nanos(600))
            .unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].latency().as_nanos(), 500);
        let recs = l
            .receive(&can_frame(&[1, 2, 3]), SimTime::from_nanos(10))
            .unwrap();
        assert_eq!(recs.len(), 3);
        assert!(recs.iter().all(|r| r.delivered_at.as_nanos() == 10));
        assert_eq!(
            recs.iter().map(|r| r.seq).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn listener_counts_jam() {
        let mut l = Listener::new(NodeId(9), Arm::AvbJam);
        let jam = EthFrame::new(
            NodeId(8),
            NodeId(9),
            Pcp::BEST_EFFORT,
            1452,
            Payload::Filler,
        )
        .unwrap();
        assert!(l.receive(&jam, SimTime::ZERO).unwrap().is_empty());
        assert_eq!(l.jam_frames(), 1);
    }

    #[test]
    fn listener_rejects_malformed() {
        let mut l = Listener::new(NodeId(9), Arm::AvbJam);
        let bad = EthFrame::new(
            NodeId(1),
            NodeId(9),
            Pcp::AVB_CLASS_A,
            46,
            Payload::PackedCan {
                bytes: vec![1, 0, 0],
                records: 1,
            },
        )
        .unwrap();
        assert!(matches!(
            l.receive(&bad, SimTime::ZERO),
            Err(TrafficError::Codec(_))
        ));
    }
}
