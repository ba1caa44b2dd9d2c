use super::{peek_magic, FragmentPacket, Reader, WireError, Writer, MAGIC_LCM_LONG, MAGIC_LCM_SHORT, MAGIC_SECURE};
use crate::crypto::TAG_LEN;
use crate::identity::MAX_CHANNEL_LEN;

/// magic ‖ msg_seqno ‖ sender_id.
pub const SECURE_HEADER_LEN: usize = 10;
/// magic ‖ seqno.
pub const PLAIN_LCM_HEADER_LEN: usize = 8;
const PLAIN_LCM_FRAGMENT_HEADER_LEN: usize = 20;

/// A complete single-datagram data packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecurePacket {
    pub msg_seqno: u32,
    pub sender_id: u16,
    /// CTR ciphertext of `channelname ‖ NUL`.
    pub enc_channelname: Vec<u8>,
    /// AEAD ciphertext ‖ tag.
    pub body: Vec<u8>,
}

impl SecurePacket {
    pub fn encoded_len(&self) -> usize {
        SECURE_HEADER_LEN + self.enc_channelname.len() + self.body.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(MAGIC_SECURE).u32(self.msg_seqno).u16(self.sender_id);
        w.raw(&self.enc_channelname).raw(&self.body);
        w.0
    }

    /// Header fields plus the undifferentiated tail; the channelname
    /// boundary is only known after decryption.
    pub fn decode(b: &[u8]) -> Result<RawSecurePacket, WireError> {
        let magic = peek_magic(b)?;
        if magic != MAGIC_SECURE {
            return Err(WireError::BadMagic(magic));
        }
        let mut r = Reader::new(b);
        r.u32()?;
        let msg_seqno = r.u32()?;
        let sender_id = r.u16()?;
        let tail = r.rest();
        if tail.len() < 1 + TAG_LEN {
            return Err(WireError::Truncated);
        }
        Ok(RawSecurePacket { msg_seqno, sender_id, tail: tail.to_vec() })
    }
}

/// A data packet whose tail is `enc_channelname ‖ body`, either decoded from
/// one datagram or reassembled from fragments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSecurePacket {
    pub msg_seqno: u32,
    pub sender_id: u16,
    pub tail: Vec<u8>,
}

impl RawSecurePacket {
    /// Splits the tail after `name_len` bytes (terminator included).
    pub fn split(self, name_len: usize) -> Result<SecurePacket, WireError> {
        if name_len == 0 || name_len > self.tail.len() {
            return Err(WireError::Truncated);
        }
        let mut enc_channelname = self.tail;
        let body = enc_channelname.split_off(name_len);
        Ok(SecurePacket { msg_seqno: self.msg_seqno, sender_id: self.sender_id, enc_channelname, body })
    }
}

/// Either framing of an encrypted message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WirePacket {
    Secure(SecurePacket),
    Fragment(FragmentPacket),
}

impl WirePacket {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            WirePacket::Secure(p) => p.encode(),
            WirePacket::Fragment(f) => f.encode(),
        }
    }
}

pub(crate) fn validate_name(name: &str) -> Result<(), WireError> {
    if name.is_empty() || name.len() > MAX_CHANNEL_LEN || !name.is_ascii() || name.bytes().any(|b| b == 0) {
        return Err(WireError::BadName);
    }
    Ok(())
}

/// Plaintext LCM datagram: magic ‖ seqno ‖ name ‖ NUL ‖ payload.
pub fn encode_plain_lcm(name: &str, seqno: u32, payload: &[u8]) -> Result<Vec<u8>, WireError> {
    validate_name(name)?;
    let mut w = Writer::new();
    w.u32(MAGIC_LCM_SHORT).u32(seqno).raw(name.as_bytes()).u8(0).raw(payload);
    Ok(w.0)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlainLcmMessage {
    pub seqno: u32,
    pub channel: String,
    pub payload: Vec<u8>,
}

pub fn decode_plain_lcm(b: &[u8]) -> Result<PlainLcmMessage, WireError> {
    let magic = peek_magic(b)?;
    if magic != MAGIC_LCM_SHORT {
        return Err(WireError::BadMagic(magic));
    }
    let mut r = Reader::new(b);
    r.u32()?;
    let seqno = r.u32()?;
    let rest = r.rest();
    let nul = rest.iter().take(MAX_CHANNEL_LEN + 1).position(|&c| c == 0).ok_or(WireError::BadName)?;
    let channel = std::str::from_utf8(&rest[..nul]).map_err(|_| WireError::BadName)?.to_string();
    validate_name(&channel)?;
    Ok(PlainLcmMessage { seqno, channel, payload: rest[nul + 1..].to_vec() })
}

/// Plain LCM datagrams for one message, using LCM's fragment layout
/// (magic ‖ seqno ‖ size ‖ offset ‖ no ‖ total) when it exceeds `mtu`.
/// Baseline for benchmarks only.
pub fn plain_lcm_datagrams(name: &str, seqno: u32, payload: &[u8], mtu: usize) -> Result<Vec<Vec<u8>>, WireError> {
    let single = encode_plain_lcm(name, seqno, payload)?;
    if single.len() <= mtu {
        return Ok(vec![single]);
    }
    let cap = mtu.checked_sub(PLAIN_LCM_FRAGMENT_HEADER_LEN).filter(|&c| c > name.len() + 1).ok_or(
        WireError::MtuTooSmall { mtu, need: PLAIN_LCM_FRAGMENT_HEADER_LEN + name.len() + 2 },
    )?;
    let size = u32::try_from(payload.len()).map_err(|_| WireError::OversizeMessage)?;
    let first = cap - name.len() - 1;
    let total = 1 + payload.len().saturating_sub(first).div_ceil(cap);
    let total = u16::try_from(total).map_err(|_| WireError::OversizeMessage)?;
    let mut out = Vec::with_capacity(total as usize);
    let mut offset = 0usize;
    for no in 0..total {
        let take = if no == 0 { first.min(payload.len()) } else { cap.min(payload.len() - offset) };
        let mut w = Writer::new();
        w.u32(MAGIC_LCM_LONG).u32(seqno).u32(size).u32(offset as u32).u16(no).u16(total);
        if no == 0 {
            w.raw(name.as_bytes()).u8(0);
        }
        w.raw(&payload[offset..offset + take]);
        offset += take;
        out.push(w.0);
    }
    Ok(out)
}
