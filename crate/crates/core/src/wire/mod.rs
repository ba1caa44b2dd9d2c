//! Byte layouts of every datagram on the wire. All integers are big-endian.

mod fragment;
mod management;
mod packet;

pub use fragment::{fragment, FragmentPacket, Reassembler, FRAGMENT_HEADER_LEN, MAX_IN_FLIGHT_PER_SENDER, REASSEMBLY_TIMEOUT_MS};
pub use management::{
    CertBlob, Envelope, GkaRoundPayload, JoinPayload, JoinResponsePayload, Kind, Member,
};
pub use packet::{
    decode_plain_lcm, encode_plain_lcm, plain_lcm_datagrams, PlainLcmMessage, RawSecurePacket,
    SecurePacket, WirePacket, PLAIN_LCM_HEADER_LEN, SECURE_HEADER_LEN,
};

use thiserror::Error;

pub const MAGIC_SECURE: u32 = 0x4C43_3353;
pub const MAGIC_FRAGMENT: u32 = 0x4C43_3346;
pub const MAGIC_MANAGEMENT: u32 = 0x4C43_334D;
/// Plain LCM single-datagram magic ("LC02").
pub const MAGIC_LCM_SHORT: u32 = 0x4C43_3032;
/// Plain LCM fragment magic ("LC03").
pub const MAGIC_LCM_LONG: u32 = 0x4C43_3033;

/// Largest datagram any transport carries.
pub const MAX_DATAGRAM: usize = 65_507;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("unexpected magic {0:#010x}")]
    BadMagic(u32),
    #[error("datagram truncated")]
    Truncated,
    #[error("encoding is not canonical")]
    NonCanonical,
    #[error("channel name must be non-empty ASCII without NUL and at most 255 bytes")]
    BadName,
    #[error("message too large to frame")]
    OversizeMessage,
    #[error("mtu {mtu} cannot carry a fragment (needs at least {need})")]
    MtuTooSmall { mtu: usize, need: usize },
    #[error("fragment conflicts with earlier fragments of the same message")]
    InconsistentFragment,
    #[error("unknown management kind {0}")]
    UnknownKind(u8),
}

/// Reads the leading magic without consuming anything.
pub fn peek_magic(b: &[u8]) -> Result<u32, WireError> {
    let head: [u8; 4] = b.get(..4).ok_or(WireError::Truncated)?.try_into().expect("4 bytes");
    Ok(u32::from_be_bytes(head))
}

pub(crate) struct Writer(pub(crate) Vec<u8>);

impl Writer {
    pub(crate) fn new() -> Self {
        Writer(Vec::new())
    }

    pub(crate) fn u8(&mut self, v: u8) -> &mut Self {
        self.0.push(v);
        self
    }

    pub(crate) fn u16(&mut self, v: u16) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub(crate) fn u32(&mut self, v: u32) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub(crate) fn u64(&mut self, v: u64) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub(crate) fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.0.extend_from_slice(v);
        self
    }

    /// 32-bit length prefix then the bytes.
    pub(crate) fn var(&mut self, v: &[u8]) -> &mut Self {
        self.u32(u32::try_from(v.len()).expect("field below 4 GiB"));
        self.raw(v)
    }
}

pub(crate) struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    pub(crate) fn new(b: &'a [u8]) -> Self {
        Reader(b)
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.0.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn var(&mut self) -> Result<&'a [u8], WireError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub(crate) fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.0)
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
