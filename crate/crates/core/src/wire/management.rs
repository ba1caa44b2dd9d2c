use super::{peek_magic, Reader, WireError, Writer, MAGIC_MANAGEMENT};
use crate::identity::LcmDomain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Kind {
    Join = 1,
    JoinResponse = 2,
    GkaRound1 = 3,
    GkaRound2 = 4,
}

impl TryFrom<u8> for Kind {
    type Error = WireError;

    fn try_from(v: u8) -> Result<Self, WireError> {
        Ok(match v {
            1 => Kind::Join,
            2 => Kind::JoinResponse,
            3 => Kind::GkaRound1,
            4 => Kind::GkaRound2,
            other => return Err(WireError::UnknownKind(other)),
        })
    }
}

/// Signed, unencrypted management datagram:
/// magic ‖ signer_uid ‖ kind ‖ group ‖ channel ‖ payload ‖ signature.
///
/// The signature covers every byte before the signature field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub signer_uid: u16,
    pub kind: Kind,
    pub scope: LcmDomain,
    pub payload: Vec<u8>,
    pub signature: Vec<u8>,
}

impl Envelope {
    pub fn signed(
        signer_uid: u16,
        kind: Kind,
        scope: LcmDomain,
        payload: Vec<u8>,
        sign: impl FnOnce(&[u8]) -> Vec<u8>,
    ) -> Self {
        let mut env = Envelope { signer_uid, kind, scope, payload, signature: Vec::new() };
        env.signature = sign(&env.signed_bytes());
        env
    }

    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(MAGIC_MANAGEMENT).u16(self.signer_uid).u8(self.kind as u8);
        w.var(self.scope.group().as_bytes()).var(self.scope.channel().as_bytes());
        w.var(&self.payload);
        w.0
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(self.signed_bytes());
        w.var(&self.signature);
        w.0
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        let magic = peek_magic(b)?;
        if magic != MAGIC_MANAGEMENT {
            return Err(WireError::BadMagic(magic));
        }
        let mut r = Reader::new(b);
        r.u32()?;
        let signer_uid = r.u16()?;
        let kind = Kind::try_from(r.u8()?)?;
        let group = std::str::from_utf8(r.var()?).map_err(|_| WireError::NonCanonical)?;
        let channel = std::str::from_utf8(r.var()?).map_err(|_| WireError::NonCanonical)?;
        let scope = LcmDomain::new(group, channel).map_err(|_| WireError::NonCanonical)?;
        let payload = r.var()?.to_vec();
        let signature = r.var()?.to_vec();
        if !r.is_empty() {
            return Err(WireError::NonCanonical);
        }
        Ok(Envelope { signer_uid, kind, scope, payload, signature })
    }
}

/// A certificate chain, leaf first: count ‖ (len ‖ der)*.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CertBlob(pub Vec<Vec<u8>>);

impl CertBlob {
    fn write(&self, w: &mut Writer) {
        w.u32(u32::try_from(self.0.len()).expect("chain length"));
        for der in &self.0 {
            w.var(der);
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let n = r.u32()? as usize;
        if n == 0 || n > 8 {
            return Err(WireError::NonCanonical);
        }
        (0..n).map(|_| r.var().map(<[u8]>::to_vec)).collect::<Result<_, _>>().map(CertBlob)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Member {
    pub uid: u16,
    pub cert: CertBlob,
}

fn finish<T>(r: Reader<'_>, value: T, original: &[u8], encode: impl Fn(&T) -> Vec<u8>) -> Result<T, WireError> {
    if !r.is_empty() || encode(&value) != original {
        return Err(WireError::NonCanonical);
    }
    Ok(value)
}

/// JOIN = t ‖ next_instance ‖ cert.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinPayload {
    pub t_ms: u64,
    /// Smallest instance id the sender would accept for the next agreement.
    pub next_instance: u64,
    pub cert: CertBlob,
}

impl JoinPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.t_ms).u64(self.next_instance);
        self.cert.write(&mut w);
        w.0
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b);
        let v = JoinPayload { t_ms: r.u64()?, next_instance: r.u64()?, cert: CertBlob::read(&mut r)? };
        finish(r, v, b, Self::encode)
    }
}

/// JOIN_RESPONSE = t ‖ next_instance ‖ responder cert ‖ P ‖ J, with P and J
/// in strictly ascending uid order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinResponsePayload {
    pub t_ms: u64,
    pub next_instance: u64,
    pub responder: CertBlob,
    p: Vec<Member>,
    j: Vec<Member>,
}

fn normalize(mut members: Vec<Member>) -> Vec<Member> {
    members.sort_by_key(|m| m.uid);
    members.dedup_by_key(|m| m.uid);
    members
}

fn write_members(w: &mut Writer, members: &[Member]) {
    w.u32(members.len() as u32);
    for m in members {
        w.u16(m.uid);
        m.cert.write(w);
    }
}

fn read_members(r: &mut Reader<'_>) -> Result<Vec<Member>, WireError> {
    let n = r.u32()? as usize;
    if n > u16::MAX as usize + 1 {
        return Err(WireError::NonCanonical);
    }
    let mut out: Vec<Member> = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let uid = r.u16()?;
        if out.last().is_some_and(|m| m.uid >= uid) {
            return Err(WireError::NonCanonical);
        }
        out.push(Member { uid, cert: CertBlob::read(r)? });
    }
    Ok(out)
}

impl JoinResponsePayload {
    /// Sorts both sets by uid, keeping the first entry per uid.
    pub fn new(t_ms: u64, next_instance: u64, responder: CertBlob, p: Vec<Member>, j: Vec<Member>) -> Self {
        JoinResponsePayload { t_ms, next_instance, responder, p: normalize(p), j: normalize(j) }
    }

    pub fn p(&self) -> &[Member] {
        &self.p
    }

    pub fn j(&self) -> &[Member] {
        &self.j
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.t_ms).u64(self.next_instance);
        self.responder.write(&mut w);
        write_members(&mut w, &self.p);
        write_members(&mut w, &self.j);
        w.0
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b);
        let t_ms = r.u64()?;
        let next_instance = r.u64()?;
        let responder = CertBlob::read(&mut r)?;
        let p = read_members(&mut r)?;
        let j = read_members(&mut r)?;
        finish(r, JoinResponsePayload { t_ms, next_instance, responder, p, j }, b, Self::encode)
    }
}

/// GKA round message = uid ‖ round ‖ element ‖ d.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GkaRoundPayload {
    pub uid: u16,
    pub round: u8,
    pub element: Vec<u8>,
    pub d: u64,
}

impl GkaRoundPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u16(self.uid).u8(self.round).var(&self.element).u64(self.d);
        w.0
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b);
        let v = GkaRoundPayload { uid: r.u16()?, round: r.u8()?, element: r.var()?.to_vec(), d: r.u64()? };
        if v.round != 1 && v.round != 2 {
            return Err(WireError::NonCanonical);
        }
        finish(r, v, b, Self::encode)
    }
}
