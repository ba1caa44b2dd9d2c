use std::collections::{BTreeMap, HashMap};

use super::{peek_magic, RawSecurePacket, Reader, SecurePacket, WireError, WirePacket, Writer, MAGIC_FRAGMENT, SECURE_HEADER_LEN};

/// magic ‖ seqno ‖ sender ‖ full_body_length ‖ fragment_offset ‖ fragment_no ‖ fragments_total.
pub const FRAGMENT_HEADER_LEN: usize = 22;
pub const MAX_IN_FLIGHT_PER_SENDER: usize = 16;
pub const REASSEMBLY_TIMEOUT_MS: u64 = 5_000;
/// Largest body the reassembler accepts.
pub const MAX_REASSEMBLED_BODY: usize = 64 << 20;

/// One fragment of an encrypted message. Fragment 0 carries
/// `enc_channelname ‖ chunk`; the rest carry bare chunks of the body.
/// `fragment_offset` is the chunk's offset within the body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragmentPacket {
    pub msg_seqno: u32,
    pub sender_id: u16,
    pub full_body_length: u32,
    pub fragment_offset: u32,
    pub fragment_no: u16,
    pub fragments_total: u16,
    pub data: Vec<u8>,
}

impl FragmentPacket {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(MAGIC_FRAGMENT).u32(self.msg_seqno).u16(self.sender_id);
        w.u32(self.full_body_length).u32(self.fragment_offset);
        w.u16(self.fragment_no).u16(self.fragments_total).raw(&self.data);
        w.0
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        let magic = peek_magic(b)?;
        if magic != MAGIC_FRAGMENT {
            return Err(WireError::BadMagic(magic));
        }
        let mut r = Reader::new(b);
        r.u32()?;
        let f = FragmentPacket {
            msg_seqno: r.u32()?,
            sender_id: r.u16()?,
            full_body_length: r.u32()?,
            fragment_offset: r.u32()?,
            fragment_no: r.u16()?,
            fragments_total: r.u16()?,
            data: r.rest().to_vec(),
        };
        if f.data.is_empty() {
            return Err(WireError::Truncated);
        }
        Ok(f)
    }
}

/// Frames an encrypted message for an `mtu`-byte datagram budget: one
/// [`SecurePacket`] if it fits, otherwise maximal fragments in order.
pub fn fragment(
    body: &[u8],
    enc_channelname: &[u8],
    msg_seqno: u32,
    sender_id: u16,
    mtu: usize,
) -> Result<Vec<WirePacket>, WireError> {
    if SECURE_HEADER_LEN + enc_channelname.len() + body.len() <= mtu {
        return Ok(vec![WirePacket::Secure(SecurePacket {
            msg_seqno,
            sender_id,
            enc_channelname: enc_channelname.to_vec(),
            body: body.to_vec(),
        })]);
    }
    let need = FRAGMENT_HEADER_LEN + enc_channelname.len() + 1;
    if mtu < need {
        return Err(WireError::MtuTooSmall { mtu, need });
    }
    let full_body_length = u32::try_from(body.len()).map_err(|_| WireError::OversizeMessage)?;
    let cap = mtu - FRAGMENT_HEADER_LEN;
    let first = (cap - enc_channelname.len()).min(body.len());
    let total = 1 + (body.len() - first).div_ceil(cap);
    let fragments_total = u16::try_from(total).map_err(|_| WireError::OversizeMessage)?;

    let mut out = Vec::with_capacity(total);
    let mut offset = 0usize;
    for no in 0..fragments_total {
        let take = if no == 0 { first } else { cap.min(body.len() - offset) };
        let mut data = Vec::with_capacity(take + if no == 0 { enc_channelname.len() } else { 0 });
        if no == 0 {
            data.extend_from_slice(enc_channelname);
        }
        data.extend_from_slice(&body[offset..offset + take]);
        out.push(WirePacket::Fragment(FragmentPacket {
            msg_seqno,
            sender_id,
            full_body_length,
            fragment_offset: offset as u32,
            fragment_no: no,
            fragments_total,
            data,
        }));
        offset += take;
    }
    debug_assert_eq!(offset, body.len());
    Ok(out)
}

#[derive(Debug)]
struct Partial {
    full_body_length: u32,
    fragments_total: u16,
    first_seen_ms: u64,
    bytes: usize,
    parts: BTreeMap<u16, (u32, Vec<u8>)>,
}

impl Partial {
    /// Joins the parts once all are present, validating the offsets.
    fn assemble(&self) -> Result<Vec<u8>, WireError> {
        let total = self.fragments_total as usize;
        let full = self.full_body_length as usize;
        // Body bytes in fragment 0: the offset of fragment 1, or all of it.
        let chunk0 = if total == 1 { full } else { self.parts[&1].0 as usize };
        let (off0, data0) = &self.parts[&0];
        if *off0 != 0 || data0.len() <= chunk0 {
            return Err(WireError::InconsistentFragment);
        }
        let mut expected = chunk0;
        for no in 1..self.fragments_total {
            let (off, data) = &self.parts[&no];
            if *off as usize != expected {
                return Err(WireError::InconsistentFragment);
            }
            expected += data.len();
        }
        if expected != full {
            return Err(WireError::InconsistentFragment);
        }
        let mut tail = Vec::with_capacity(data0.len() + full - chunk0);
        for (_, data) in self.parts.values() {
            tail.extend_from_slice(data);
        }
        Ok(tail)
    }
}

/// Buffers fragments per `(sender_id, msg_seqno)` until complete.
///
/// At most [`MAX_IN_FLIGHT_PER_SENDER`] incomplete messages are kept per
/// sender (the oldest is evicted first) and any message incomplete after
/// [`REASSEMBLY_TIMEOUT_MS`] is dropped.
#[derive(Debug, Default)]
pub struct Reassembler {
    partials: HashMap<(u16, u32), Partial>,
    evicted: u64,
}

impl Reassembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn in_flight(&self) -> usize {
        self.partials.len()
    }

    /// Incomplete messages dropped so far by timeout or capacity.
    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    pub fn evict_expired(&mut self, now_ms: u64) {
        let before = self.partials.len();
        self.partials.retain(|_, p| now_ms.saturating_sub(p.first_seen_ms) < REASSEMBLY_TIMEOUT_MS);
        self.evicted += (before - self.partials.len()) as u64;
    }

    pub fn insert(&mut self, f: FragmentPacket, now_ms: u64) -> Result<Option<RawSecurePacket>, WireError> {
        self.evict_expired(now_ms);
        if f.fragments_total == 0 || f.fragment_no >= f.fragments_total {
            return Err(WireError::InconsistentFragment);
        }
        if f.full_body_length as usize > MAX_REASSEMBLED_BODY {
            return Err(WireError::OversizeMessage);
        }
        let key = (f.sender_id, f.msg_seqno);
        if !self.partials.contains_key(&key) {
            self.make_room(f.sender_id);
            self.partials.insert(
                key,
                Partial {
                    full_body_length: f.full_body_length,
                    fragments_total: f.fragments_total,
                    first_seen_ms: now_ms,
                    bytes: 0,
                    parts: BTreeMap::new(),
                },
            );
        }
        let partial = self.partials.get_mut(&key).expect("inserted above");
        if partial.full_body_length != f.full_body_length || partial.fragments_total != f.fragments_total {
            self.partials.remove(&key);
            return Err(WireError::InconsistentFragment);
        }
        match partial.parts.get(&f.fragment_no) {
            Some((off, data)) if *off == f.fragment_offset && *data == f.data => return Ok(None),
            Some(_) => {
                self.partials.remove(&key);
                return Err(WireError::InconsistentFragment);
            }
            None => {}
        }
        // Anything beyond the body plus a maximal channelname is bogus.
        partial.bytes += f.data.len();
        if partial.bytes > f.full_body_length as usize + crate::identity::MAX_CHANNEL_LEN + 1 {
            self.partials.remove(&key);
            return Err(WireError::InconsistentFragment);
        }
        partial.parts.insert(f.fragment_no, (f.fragment_offset, f.data));
        if partial.parts.len() < partial.fragments_total as usize {
            return Ok(None);
        }
        let partial = self.partials.remove(&key).expect("present");
        let tail = partial.assemble()?;
        Ok(Some(RawSecurePacket { msg_seqno: key.1, sender_id: key.0, tail }))
    }

    fn make_room(&mut self, sender: u16) {
        let mine: Vec<_> = self.partials.iter().filter(|(k, _)| k.0 == sender).map(|(k, p)| (p.first_seen_ms, k.1)).collect();
        if mine.len() >= MAX_IN_FLIGHT_PER_SENDER {
            let oldest = mine.into_iter().min().expect("non-empty");
            self.partials.remove(&(sender, oldest.1));
            self.evicted += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn frags(body: &[u8], name: &[u8], mtu: usize) -> Vec<FragmentPacket> {
        fragment(body, name, 7, 3, mtu)
            .unwrap()
            .into_iter()
            .map(|p| match p {
                WirePacket::Fragment(f) => f,
                WirePacket::Secure(_) => panic!("expected fragments"),
            })
            .collect()
    }

    fn expected_tail(body: &[u8], name: &[u8]) -> Vec<u8> {
        [name, body].concat()
    }

    #[test]
    fn ten_kilobytes_at_1400() {
        let body = vec![0x5a; 10 * 1024];
        let name = b"chatter\0";
        let fs = frags(&body, name, 1400);
        // Oracle: (name + body) bytes over a 1378-byte payload budget.
        let cap = 1400 - 22;
        assert_eq!(fs.len(), (name.len() + body.len()).div_ceil(cap));
        assert_eq!(fs.len(), 8);
        assert!(fs[..7].iter().all(|f| f.encode().len() == 1400));
        assert!(fs[7].encode().len() < 1400);
        let chunks: usize = fs.iter().map(|f| f.data.len()).sum::<usize>() - name.len();
        assert_eq!(chunks, body.len());
    }

    #[test]
    fn small_body_is_one_secure_packet() {
        let out = fragment(&[1; 100], b"c\0", 1, 1, 1400).unwrap();
        assert!(matches!(out.as_slice(), [WirePacket::Secure(_)]));
    }

    #[test]
    fn mtu_bounds() {
        assert!(matches!(fragment(&[0; 100], b"abc\0", 1, 1, 25), Err(WireError::MtuTooSmall { .. })));
        assert!(fragment(&[0; 100], b"abc\0", 1, 1, 27).is_ok());
    }

    #[test]
    fn reverse_order_and_duplicates() {
        let body: Vec<u8> = (0..5000u32).map(|i| (i * 7) as u8).collect();
        let name = b"x\0";
        let mut fs = frags(&body, name, 600);
        fs.reverse();
        let mut r = Reassembler::new();
        let mut done = Vec::new();
        for f in fs {
            done.extend(r.insert(f.clone(), 0).unwrap());
            done.extend(r.insert(f, 0).unwrap());
        }
        assert_eq!(done.len(), 1);
        let p = done.pop().unwrap();
        assert_eq!((p.msg_seqno, p.sender_id), (7, 3));
        assert_eq!(p.tail, expected_tail(&body, name));
        // The late copy of the completing fragment opens a partial that only expires.
        assert_eq!(r.in_flight(), 1);
        r.evict_expired(REASSEMBLY_TIMEOUT_MS);
        assert_eq!(r.in_flight(), 0);
    }

    #[test]
    fn missing_fragment_evicts_after_timeout() {
        let fs = frags(&[9; 4000], b"n\0", 1000);
        let mut r = Reassembler::new();
        for f in fs.iter().skip(1) {
            assert!(r.insert(f.clone(), 100).unwrap().is_none());
        }
        assert_eq!(r.in_flight(), 1);
        r.evict_expired(100 + REASSEMBLY_TIMEOUT_MS - 1);
        assert_eq!(r.in_flight(), 1);
        r.evict_expired(100 + REASSEMBLY_TIMEOUT_MS);
        assert_eq!((r.in_flight(), r.evicted()), (0, 1));
    }

    #[test]
    fn inconsistent_totals_rejected() {
        let fs = frags(&[9; 4000], b"n\0", 1000);
        let mut r = Reassembler::new();
        r.insert(fs[0].clone(), 0).unwrap();
        let mut bad = fs[1].clone();
        bad.full_body_length += 1;
        assert_eq!(r.insert(bad, 0), Err(WireError::InconsistentFragment));
        let mut bad = fs[1].clone();
        bad.fragment_no = bad.fragments_total;
        assert_eq!(r.insert(bad, 0), Err(WireError::InconsistentFragment));
    }

    #[test]
    fn shifted_offset_rejected() {
        let fs = frags(&[9; 4000], b"n\0", 1000);
        let mut r = Reassembler::new();
        let n = fs.len();
        for (i, mut f) in fs.into_iter().enumerate() {
            if i == 2 {
                f.fragment_offset += 1;
            }
            let res = r.insert(f, 0);
            if i + 1 == n {
                assert_eq!(res, Err(WireError::InconsistentFragment));
            }
        }
    }

    #[test]
    fn per_sender_capacity() {
        let mut r = Reassembler::new();
        for seq in 0..(MAX_IN_FLIGHT_PER_SENDER as u32 + 4) {
            let f = &fragment(&[1; 3000], b"n\0", seq, 5, 1000).unwrap()[0];
            if let WirePacket::Fragment(f) = f {
                r.insert(f.clone(), seq as u64).unwrap();
            }
        }
        assert_eq!(r.in_flight(), MAX_IN_FLIGHT_PER_SENDER);
        assert_eq!(r.evicted(), 4);
    }

    #[test]
    fn golden_fragment_header() {
        let f = FragmentPacket {
            msg_seqno: 1,
            sender_id: 2,
            full_body_length: 0x0102_0304,
            fragment_offset: 5,
            fragment_no: 6,
            fragments_total: 7,
            data: vec![0xee],
        };
        assert_eq!(
            f.encode(),
            [0x4c, 0x43, 0x33, 0x46, 0, 0, 0, 1, 0, 2, 1, 2, 3, 4, 0, 0, 0, 5, 0, 6, 0, 7, 0xee]
        );
        assert_eq!(FragmentPacket::decode(&f.encode()).unwrap(), f);
    }

    proptest! {
        #[test]
        fn any_order_reassembles(body in proptest::collection::vec(any::<u8>(), 17..20_000),
                                 name_len in 1usize..40, mtu in 200usize..2000, seed in any::<u64>()) {
            let name = vec![0xab; name_len];
            let packets = fragment(&body, &name, 1, 1, mtu).unwrap();
            let mut tails = Vec::new();
            let mut fs = Vec::new();
            for p in packets {
                match p {
                    WirePacket::Secure(s) => {
                        let raw = SecurePacket::decode(&s.encode()).unwrap();
                        tails.push(raw.tail);
                    }
                    WirePacket::Fragment(f) => {
                        prop_assert!(f.encode().len() <= mtu);
                        fs.push(FragmentPacket::decode(&f.encode()).unwrap());
                    }
                }
            }
            if !fs.is_empty() {
                let cap = mtu - FRAGMENT_HEADER_LEN;
                prop_assert_eq!(fs.len(), (name_len + body.len()).div_ceil(cap));
                fs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                let mut r = Reassembler::new();
                for f in fs {
                    if let Some(p) = r.insert(f, 0).unwrap() {
                        tails.push(p.tail);
                    }
                }
            }
            prop_assert_eq!(tails, vec![expected_tail(&body, &name)]);
        }
    }
}
