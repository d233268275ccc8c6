//! Full-duplex Ethernet links, AVB-capable egress ports and switches.

mod frame;
mod port;
mod shaper;
mod switch;

use thiserror::Error;

use crate::NodeId;

pub use frame::{
    eth_reception_time, eth_wire_time, EthFrame, HopStamp, Payload, Pcp, MAC_OVERHEAD_BYTES,
    MAX_FRAME_WIRE_BITS, MAX_PAYLOAD, MIN_PAYLOAD,
};
pub use port::{
    select_next_frame, EgressPort, PortCounters, PortQueueSet, StartOutcome, TrafficClass, TxRecord,
};
pub use shaper::{CreditState, ShaperError, CREDIT_PER_BIT};
pub use switch::SwitchModel;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EthError {
    #[error("payload length {0} outside 46..=1500")]
    InvalidPayloadLen(usize),
    #[error("no route to node {0}")]
    UnknownDestination(NodeId),
    #[error("{0} queue full")]
    QueueFull(TrafficClass),
    #[error(transparent)]
    Shaper(#[from] ShaperError),
}
