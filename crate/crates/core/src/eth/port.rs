use std::collections::VecDeque;
use std::fmt;

use crate::time::{BitRate, SimDuration, SimTime};
use crate::NodeId;

use super::frame::{eth_reception_time, eth_wire_time, EthFrame, HopStamp, Pcp};
use super::shaper::CreditState;
use super::EthError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrafficClass {
    Avb,
    BestEffort,
}

impl fmt::Display for TrafficClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrafficClass::Avb => "avb",
            TrafficClass::BestEffort => "be",
        })
    }
}

/// The two egress queues of a port. Frames whose PCP equals `avb_pcp` go to
/// the AVB queue, everything else to best-effort.
#[derive(Debug, Clone)]
pub struct PortQueueSet {
    avb_pcp: Pcp,
    avb_q: VecDeque<EthFrame>,
    be_q: VecDeque<EthFrame>,
    avb_cap: Option<usize>,
    be_cap: Option<usize>,
}

impl PortQueueSet {
    pub fn new(avb_pcp: Pcp, avb_cap: Option<usize>, be_cap: Option<usize>) -> Self {
        PortQueueSet {
            avb_pcp,
            avb_q: VecDeque::new(),
            be_q: VecDeque::new(),
            avb_cap,
            be_cap,
        }
    }

    pub fn classify(&self, pcp: Pcp) -> TrafficClass {
        if pcp == self.avb_pcp {
            TrafficClass::Avb
        } else {
            TrafficClass::BestEffort
        }
    }

    /// Tail-drops when the target queue is at its cap.
    pub fn enqueue(&mut self, frame: EthFrame) -> Result<TrafficClass, (EthError, EthFrame)> {
        let class = self.classify(frame.pcp);
        let (q, cap) = match class {
            TrafficClass::Avb => (&mut self.avb_q, self.avb_cap),
            TrafficClass::BestEffort => (&mut self.be_q, self.be_cap),
        };
        if cap.is_some_and(|c| q.len() >= c) {
            return Err((EthError::QueueFull(class), frame));
        }
        q.push_back(frame);
        Ok(class)
    }

    pub fn avb_len(&self) -> usize {
        self.avb_q.len()
    }

    pub fn be_len(&self) -> usize {
        self.be_q.len()
    }

    pub fn len(&self) -> usize {
        self.avb_q.len() + self.be_q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pop(&mut self, class: TrafficClass) -> Option<EthFrame> {
        match class {
            TrafficClass::Avb => self.avb_q.pop_front(),
            TrafficClass::BestEffort => self.be_q.pop_front(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &EthFrame> {
        self.avb_q.iter().chain(self.be_q.iter())
    }
}

/// Credit-gated strict priority: AVB when it has a frame and non-negative
/// credit, otherwise best-effort, otherwise nothing.
pub fn select_next_frame(pq: &PortQueueSet, cs: &CreditState) -> Option<TrafficClass> {
    if pq.avb_len() > 0 && cs.credit() >= 0 {
        Some(TrafficClass::Avb)
    } else if pq.be_len() > 0 {
        Some(TrafficClass::BestEffort)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PortCounters {
    pub enqueued: u64,
    pub transmitted: u64,
    pub dropped: u64,
    pub avb_transmitted: u64,
    pub be_transmitted: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxRecord {
    pub start: SimTime,
    pub duration: SimDuration,
    pub wire_bits: u64,
    pub class: TrafficClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartOutcome {
    /// A frame went on the wire. It reaches the peer at `arrival_at`; the
    /// link can start the next frame at `link_free_at`.
    Started {
        class: TrafficClass,
        arrival_at: SimTime,
        link_free_at: SimTime,
    },
    /// Only AVB frames are waiting and credit is negative.
    Blocked {
        wake_at: SimTime,
    },
    Busy,
    Idle,
}

/// One direction of a full-duplex link: egress queues, shaper and transmitter.
#[derive(Debug, Clone)]
pub struct EgressPort {
    pub name: String,
    pub owner: NodeId,
    pub peer: NodeId,
    rate: BitRate,
    queues: PortQueueSet,
    shaper: CreditState,
    transmitting: Option<TrafficClass>,
    on_wire: Option<EthFrame>,
    counters: PortCounters,
    tx_log: Vec<TxRecord>,
}

impl EgressPort {
    pub fn new(
        name: impl Into<String>,
        owner: NodeId,
        peer: NodeId,
        rate: BitRate,
        queues: PortQueueSet,
        shaper: CreditState,
    ) -> Self {
        EgressPort {
            name: name.into(),
            owner,
            peer,
            rate,
            queues,
            shaper,
            transmitting: None,
            on_wire: None,
            counters: PortCounters::default(),
            tx_log: Vec::new(),
        }
    }

    pub fn rate(&self) -> BitRate {
        self.rate
    }

    pub fn queues(&self) -> &PortQueueSet {
        &self.queues
    }

    pub fn shaper(&self) -> &CreditState {
        &self.shaper
    }

    pub fn counters(&self) -> PortCounters {
        self.counters
    }

    pub fn tx_log(&self) -> &[TxRecord] {
        &self.tx_log
    }

    pub fn is_transmitting(&self) -> bool {
        self.transmitting.is_some()
    }

    /// The frame currently propagating to the peer, if any.
    pub fn on_wire(&self) -> Option<&EthFrame> {
        self.on_wire.as_ref()
    }

    fn sync_credit(&mut self, now: SimTime) -> Result<(), EthError> {
        let tx_avb = self.transmitting == Some(TrafficClass::Avb);
        let empty = self.queues.avb_len() == 0;
        self.shaper.update(now, tx_avb, empty)?;
        Ok(())
    }

    /// Queues a frame. Returns true if the transmitter is idle and should be kicked.
    pub fn enqueue(&mut self, now: SimTime, mut frame: EthFrame) -> Result<bool, EthError> {
        self.sync_credit(now)?;
        self.counters.enqueued += 1;
        frame.hops.push(HopStamp {
            node: self.owner,
            enqueued_at: now,
            dequeued_at: None,
        });
        match self.queues.enqueue(frame) {
            Ok(_) => Ok(self.transmitting.is_none()),
            Err((e, _)) => {
                self.counters.dropped += 1;
                Err(e)
            }
        }
    }

    pub fn try_start(&mut self, now: SimTime) -> Result<StartOutcome, EthError> {
        if self.transmitting.is_some() {
            return Ok(StartOutcome::Busy);
        }
        self.sync_credit(now)?;
        let Some(class) = select_next_frame(&self.queues, &self.shaper) else {
            if self.queues.avb_len() > 0 {
                return Ok(StartOutcome::Blocked {
                    wake_at: now + self.shaper.time_to_zero(),
                });
            }
            return Ok(StartOutcome::Idle);
        };
        let mut frame = self.queues.pop(class).expect("selected queue is non-empty");
        if let Some(h) = frame.hops.last_mut() {
            h.dequeued_at = Some(now);
        }
        let wire = eth_wire_time(frame.payload_len(), frame.tagged(), self.rate)?;
        let rx = eth_reception_time(frame.payload_len(), frame.tagged(), self.rate)?;
        self.tx_log.push(TxRecord {
            start: now,
            duration: wire,
            wire_bits: frame.wire_bits(),
            class,
        });
        self.counters.transmitted += 1;
        match class {
            TrafficClass::Avb => self.counters.avb_transmitted += 1,
            TrafficClass::BestEffort => self.counters.be_transmitted += 1,
        }
        self.transmitting = Some(class);
        self.on_wire = Some(frame);
        Ok(StartOutcome::Started {
            class,
            arrival_at: now + rx,
            link_free_at: now + wire,
        })
    }

    /// Hands the frame on the wire to the peer.
    pub fn take_arrival(&mut self) -> Option<EthFrame> {
        self.on_wire.take()
    }

    /// The interframe gap after the current frame has elapsed.
    pub fn on_link_free(&mut self, now: SimTime) -> Result<(), EthError> {
        self.sync_credit(now)?;
        self.transmitting = None;
        Ok(())
    }

    /// enqueued == transmitted + queued + dropped
    pub fn is_conserved(&self) -> bool {
        let c = self.counters;
        c.enqueued == c.transmitted + self.queues.len() as u64 + c.dropped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eth::frame::Payload;
    use crate::eth::shaper::CREDIT_PER_BIT;

    fn frame(pcp: u8, len: usize) -> EthFrame {
        EthFrame::new(
            NodeId(0),
            NodeId(1),
            Pcp::new(pcp).unwrap(),
            len,
            Payload::Filler,
        )
        .unwrap()
    }

    fn cs(credit_bits: i64) -> CreditState {
        CreditState::new(BitRate::mbps(20), BitRate::mbps(100))
            .unwrap()
            .with_credit(credit_bits * CREDIT_PER_BIT, SimTime::ZERO)
    }

    fn port() -> EgressPort {
        EgressPort::new(
            "p",
            NodeId(0),
            NodeId(1),
            BitRate::mbps(100),
            PortQueueSet::new(Pcp::AVB_CLASS_A, None, None),
            cs(0),
        )
    }

    #[test]
    fn selection_rules() {
        let mut pq = PortQueueSet::new(Pcp::AVB_CLASS_A, None, None);
        assert_eq!(select_next_frame(&pq, &cs(0)), None);
        pq.enqueue(frame(3, 46)).unwrap();
        pq.enqueue(frame(0, 46)).unwrap();
        assert_eq!(select_next_frame(&pq, &cs(0)), Some(TrafficClass::Avb));
        assert_eq!(
            select_next_frame(&pq, &cs(-1)),
            Some(TrafficClass::BestEffort)
        );
    }

    #[test]
    fn classification_is_total() {
        let mut pq = PortQueueSet::new(Pcp::AVB_CLASS_A, None, None);
        for pcp in 0..=7 {
            pq.enqueue(frame(pcp, 46)).unwrap();
        }
        assert_eq!(pq.avb_len(), 1);
        assert_eq!(pq.be_len(), 7);
    }

    #[test]
    fn tail_drop() {
        let mut pq = PortQueueSet::new(Pcp::AVB_CLASS_A, Some(1), Some(0));
        assert!(pq.enqueue(frame(0, 46)).is_err());
        pq.enqueue(frame(3, 46)).unwrap();
        assert!(matches!(
            pq.enqueue(frame(3, 46)),
            Err((EthError::QueueFull(TrafficClass::Avb), _))
        ));
    }

    #[test]
    fn avb_frame_spends_credit_then_waits() {
        let mut p = port();
        p.enqueue(SimTime::ZERO, frame(3, 1500)).unwrap();
        p.enqueue(SimTime::ZERO, frame(3, 1500)).unwrap();
        let StartOutcome::Started {
            link_free_at,
            arrival_at,
            ..
        } = p.try_start(SimTime::ZERO).unwrap()
        else {
            panic!("expected start");
        };
        assert_eq!(link_free_at.as_nanos(), 123_360);
        assert_eq!(arrival_at.as_nanos(), 123_360 - 960);
        assert!(p.take_arrival().is_some());
        p.on_link_free(link_free_at).unwrap();
        assert_eq!(p.shaper().credit(), -9_868_800 * CREDIT_PER_BIT / 1000);
        let out = p.try_start(link_free_at).unwrap();
        assert_eq!(
            out,
            StartOutcome::Blocked {
                wake_at: SimTime::from_nanos(123_360 + 493_440)
            }
        );
        let wake = SimTime::from_nanos(123_360 + 493_440);
        assert!(matches!(
            p.try_start(wake).unwrap(),
            StartOutcome::Started { .. }
        ));
        assert!(p.is_conserved());
    }

    #[test]
    fn best_effort_fills_while_avb_blocked() {
        let mut p = port();
        p.enqueue(SimTime::ZERO, frame(3, 1500)).unwrap();
        p.enqueue(SimTime::ZERO, frame(3, 46)).unwrap();
        p.enqueue(SimTime::ZERO, frame(0, 46)).unwrap();
        let mut t = SimTime::ZERO;
        let mut order = Vec::new();
        loop {
            match p.try_start(t).unwrap() {
                StartOutcome::Started {
                    class,
                    link_free_at,
                    ..
                } => {
                    order.push(class);
                    p.take_arrival();
                    t = link_free_at;
                    p.on_link_free(t).unwrap();
                }
                StartOutcome::Blocked { wake_at } => t = wake_at,
                StartOutcome::Idle => break,
                StartOutcome::Busy => unreachable!(),
            }
        }
        use TrafficClass::*;
        assert_eq!(order, vec![Avb, BestEffort, Avb]);
        assert!(p.is_conserved());
        assert!(p.shaper().credit() <= 0);
    }
}
