use std::fmt;

use crate::time::{BitRate, SimDuration, SimTime};
use crate::NodeId;

use super::EthError;

pub const PREAMBLE_BYTES: u64 = 8;
pub const HEADER_BYTES: u64 = 14;
pub const VLAN_TAG_BYTES: u64 = 4;
pub const FCS_BYTES: u64 = 4;
pub const IFG_BYTES: u64 = 12;
/// Header plus FCS: the MAC frame size is `payload_len + MAC_OVERHEAD_BYTES`.
pub const MAC_OVERHEAD_BYTES: u64 = HEADER_BYTES + FCS_BYTES;
pub const MIN_PAYLOAD: usize = 46;
pub const MAX_PAYLOAD: usize = 1500;
/// Wire footprint of the largest tagged frame, preamble and IFG included.
pub const MAX_FRAME_WIRE_BITS: u64 = 8
    * (PREAMBLE_BYTES + HEADER_BYTES + VLAN_TAG_BYTES + MAX_PAYLOAD as u64 + FCS_BYTES + IFG_BYTES);

/// 802.1Q priority code point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pcp(u8);

impl Pcp {
    pub const BEST_EFFORT: Pcp = Pcp(0);
    pub const AVB_CLASS_A: Pcp = Pcp(3);

    pub fn new(v: u8) -> Option<Pcp> {
        (v <= 7).then_some(Pcp(v))
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl fmt::Display for Pcp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    /// A packed CAN payload and the number of records it carries.
    PackedCan { bytes: Vec<u8>, records: u16 },
    /// Opaque filler (jamming traffic).
    Filler,
}

/// Per-hop diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HopStamp {
    pub node: NodeId,
    pub enqueued_at: SimTime,
    pub dequeued_at: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EthFrame {
    pub src: NodeId,
    pub dst: NodeId,
    pub pcp: Pcp,
    payload_len: usize,
    pub payload: Payload,
    pub hops: Vec<HopStamp>,
}

impl EthFrame {
    /// Builds a frame whose wire payload is `payload_len` bytes. Short payloads
    /// are padded by the caller's choice of `payload_len`; the packed bytes in
    /// `payload` may be shorter than that.
    pub fn new(
        src: NodeId,
        dst: NodeId,
        pcp: Pcp,
        payload_len: usize,
        payload: Payload,
    ) -> Result<Self, EthError> {
        if !(MIN_PAYLOAD..=MAX_PAYLOAD).contains(&payload_len) {
            return Err(EthError::InvalidPayloadLen(payload_len));
        }
        if let Payload::PackedCan { bytes, .. } = &payload {
            if bytes.len() > payload_len {
                return Err(EthError::InvalidPayloadLen(bytes.len()));
            }
        }
        Ok(EthFrame {
            src,
            dst,
            pcp,
            payload_len,
            payload,
            hops: Vec::new(),
        })
    }

    pub fn payload_len(&self) -> usize {
        self.payload_len
    }

    /// Frames with a non-zero PCP carry a VLAN tag on the wire.
    pub fn tagged(&self) -> bool {
        self.pcp != Pcp::BEST_EFFORT
    }

    pub fn can_records(&self) -> u64 {
        match &self.payload {
            Payload::PackedCan { records, .. } => *records as u64,
            Payload::Filler => 0,
        }
    }

    /// Bits the link is occupied for, preamble and IFG included.
    pub fn wire_bits(&self) -> u64 {
        wire_bytes(self.payload_len as u64, self.tagged()) * 8
    }
}

fn wire_bytes(payload_len: u64, tagged: bool) -> u64 {
    PREAMBLE_BYTES
        + HEADER_BYTES
        + if tagged { VLAN_TAG_BYTES } else { 0 }
        + payload_len
        + FCS_BYTES
        + IFG_BYTES
}

fn check_len(payload_len: usize) -> Result<(), EthError> {
    if (MIN_PAYLOAD..=MAX_PAYLOAD).contains(&payload_len) {
        Ok(())
    } else {
        Err(EthError::InvalidPayloadLen(payload_len))
    }
}

/// Time the link is busy with one frame: preamble, header, optional tag,
/// payload, FCS and interframe gap.
pub fn eth_wire_time(
    payload_len: usize,
    tagged: bool,
    rate: BitRate,
) -> Result<SimDuration, EthError> {
    check_len(payload_len)?;
    Ok(SimDuration::for_bits(
        wire_bytes(payload_len as u64, tagged) * 8,
        rate,
    ))
}

/// Time from first preamble bit until the last FCS bit reaches the peer.
pub fn eth_reception_time(
    payload_len: usize,
    tagged: bool,
    rate: BitRate,
) -> Result<SimDuration, EthError> {
    check_len(payload_len)?;
    Ok(SimDuration::for_bits(
        (wire_bytes(payload_len as u64, tagged) - IFG_BYTES) * 8,
        rate,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FAST_E: BitRate = BitRate::mbps(100);

    #[test]
    fn wire_times() {
        assert_eq!(eth_wire_time(46, false, FAST_E).unwrap().as_nanos(), 6_720);
        assert_eq!(
            eth_wire_time(1448, false, FAST_E).unwrap().as_nanos(),
            118_880
        );
        assert_eq!(
            eth_wire_time(1500, true, FAST_E).unwrap().as_nanos(),
            123_360
        );
        assert_eq!(MAX_FRAME_WIRE_BITS, 12_336);
        // The VLAN tag costs 0.32 µs at 100 Mbps.
        assert_eq!(eth_wire_time(46, true, FAST_E).unwrap().as_nanos(), 7_040);
        assert_eq!(
            eth_reception_time(46, true, FAST_E).unwrap().as_nanos(),
            6_080
        );
    }

    #[test]
    fn payload_bounds() {
        assert_eq!(
            eth_wire_time(45, false, FAST_E),
            Err(EthError::InvalidPayloadLen(45))
        );
        assert_eq!(
            eth_wire_time(1501, true, FAST_E),
            Err(EthError::InvalidPayloadLen(1501))
        );
        assert!(
            EthFrame::new(NodeId(0), NodeId(1), Pcp::BEST_EFFORT, 40, Payload::Filler).is_err()
        );
    }
}
