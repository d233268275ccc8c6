//! Packed CAN payload carried inside gateway Ethernet frames.
//!
//! Layout, all multi-byte fields little-endian:
//!
//! ```text
//! offset  size  field
//! 0       2     record_count (u16)
//! then record_count records, back to back:
//! +0      4     can_id (u32, 11 significant bits)
//! +4      1     dlc (0..=8)
//! +5      8     created_at (u64, ns)
//! +13     dlc   data
//! ```

use thiserror::Error;

use crate::can::{CanId, CanMessage, MAX_CAN_ID, MAX_DLC};
use crate::time::SimTime;

pub const COUNT_BYTES: usize = 2;
pub const RECORD_HEADER_BYTES: usize = 13;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("packed payload of {len} bytes exceeds limit {limit}")]
    PayloadOverflow { len: usize, limit: usize },
    #[error("malformed payload: {0}")]
    MalformedPayload(&'static str),
}

/// One CAN message as it travels inside a packed payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanRecord {
    pub can_id: CanId,
    pub created_at: SimTime,
    pub data: Vec<u8>,
}

impl CanRecord {
    pub fn encoded_len(&self) -> usize {
        record_len(self.data.len())
    }
}

impl From<&CanMessage> for CanRecord {
    fn from(m: &CanMessage) -> Self {
        CanRecord {
            can_id: m.can_id,
            created_at: m.created_at,
            data: m.data().to_vec(),
        }
    }
}

pub fn record_len(dlc: usize) -> usize {
    RECORD_HEADER_BYTES + dlc
}

pub fn packed_len(records: &[CanRecord]) -> usize {
    COUNT_BYTES + records.iter().map(CanRecord::encoded_len).sum::<usize>()
}

pub fn pack(records: &[CanRecord], limit: usize) -> Result<Vec<u8>, CodecError> {
    let len = packed_len(records);
    if len > limit || records.len() > u16::MAX as usize {
        return Err(CodecError::PayloadOverflow { len, limit });
    }
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(&(records.len() as u16).to_le_bytes());
    for r in records {
        debug_assert!(r.data.len() <= MAX_DLC as usize);
        out.extend_from_slice(&(r.can_id.raw() as u32).to_le_bytes());
        out.push(r.data.len() as u8);
        out.extend_from_slice(&r.created_at.as_nanos().to_le_bytes());
        out.extend_from_slice(&r.data);
    }
    debug_assert_eq!(out.len(), len);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.buf.len() < n {
            return Err(CodecError::MalformedPayload("truncated"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

/// Exact inverse of [`pack`]. Trailing bytes after the last record are rejected.
pub fn unpack(payload: &[u8]) -> Result<Vec<CanRecord>, CodecError> {
    let mut r = Reader { buf: payload };
    let count = u16::from_le_bytes(r.array()?) as usize;
    let mut records = Vec::with_capacity(count.min(payload.len() / RECORD_HEADER_BYTES));
    for _ in 0..count {
        let raw_id = u32::from_le_bytes(r.array()?);
        if raw_id > MAX_CAN_ID as u32 {
            return Err(CodecError::MalformedPayload("can_id exceeds 11 bits"));
        }
        let dlc = r.take(1)?[0];
        if dlc > MAX_DLC {
            return Err(CodecError::MalformedPayload("dlc > 8"));
        }
        let created_at = SimTime::from_nanos(u64::from_le_bytes(r.array()?));
        let data = r.take(dlc as usize)?.to_vec();
        records.push(CanRecord {
            can_id: CanId::new(raw_id).expect("range checked"),
            created_at,
            data,
        });
    }
    if !r.buf.is_empty() {
        return Err(CodecError::MalformedPayload(
            "trailing bytes after last record",
        ));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: u32, data: &[u8], t: u64) -> CanRecord {
        CanRecord {
            can_id: CanId::new(id).unwrap(),
            created_at: SimTime::from_nanos(t),
            data: data.to_vec(),
        }
    }

    #[test]
    fn empty_list() {
        assert_eq!(pack(&[], 1500).unwrap(), vec![0, 0]);
        assert_eq!(unpack(&[0, 0]).unwrap(), vec![]);
    }

    #[test]
    fn documented_offsets() {
        let bytes = pack(&[rec(0x0A0, &[0xBE, 0xEF], 1000)], 1500).unwrap();
        assert_eq!(bytes.len(), 17);
        assert_eq!(&bytes[0..2], &[1, 0]);
        assert_eq!(&bytes[2..6], &[0xA0, 0, 0, 0]);
        assert_eq!(bytes[6], 2);
        assert_eq!(&bytes[7..15], &1000u64.to_le_bytes());
        assert_eq!(&bytes[15..17], &[0xBE, 0xEF]);
    }

    #[test]
    fn overflow() {
        let recs = vec![rec(1, &[0; 8], 0); 72];
        assert_eq!(packed_len(&recs), 2 + 72 * 21);
        assert!(matches!(
            pack(&recs, 1500),
            Err(CodecError::PayloadOverflow { .. })
        ));
        assert!(pack(&recs[..71], 1500).is_ok());
    }

    #[test]
    fn malformed_inputs() {
        let good = pack(&[rec(5, &[1, 2, 3], 9)], 1500).unwrap();
        assert!(unpack(&good[..good.len() - 1]).is_err());
        assert!(unpack(&[]).is_err());
        let mut bad_dlc = good.clone();
        bad_dlc[6] = 9;
        assert_eq!(
            unpack(&bad_dlc),
            Err(CodecError::MalformedPayload("dlc > 8"))
        );
        let mut bad_count = good.clone();
        bad_count[0] = 2;
        assert!(unpack(&bad_count).is_err());
        let mut padded = good.clone();
        padded.push(0);
        assert!(unpack(&padded).is_err());
        let mut bad_id = good;
        bad_id[3] = 0x08;
        assert!(unpack(&bad_id).is_err());
    }

    fn arb_record() -> impl Strategy<Value = CanRecord> {
        (
            0u32..=0x7FF,
            proptest::collection::vec(any::<u8>(), 0..=8),
            any::<u64>(),
        )
            .prop_map(|(id, data, t)| rec(id, &data, t))
    }

    proptest! {
        #[test]
        fn round_trip(records in proptest::collection::vec(arb_record(), 0..70)) {
            let bytes = pack(&records, 1500).unwrap();
            prop_assert_eq!(bytes.len(), packed_len(&records));
            prop_assert_eq!(unpack(&bytes).unwrap(), records);
        }

        #[test]
        fn every_strict_prefix_is_rejected(records in proptest::collection::vec(arb_record(), 1..8)) {
            let bytes = pack(&records, 1500).unwrap();
            for cut in 0..bytes.len() {
                prop_assert!(unpack(&bytes[..cut]).is_err());
            }
        }
    }
}
