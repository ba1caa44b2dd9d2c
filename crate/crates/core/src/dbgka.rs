//! Two-round Dutta-Barua group key agreement with dynamic Join.
//!
//! Ring positions are taken modulo `n`. Member `i` broadcasts `g^x_i`, then
//! `Y_i = K^R_i - K^L_i` where `K^L_i = g^(x_{i-1} x_i)` and
//! `K^R_i = g^(x_i x_{i+1})` (additive notation for the curve group). With
//! all `Y` values every member walks the ring recovering `K^R_j = Y_j +
//! K^R_{j-1}`; the walk must close on its own `K^L`. The session seed is the
//! compressed encoding of `sum_j K^R_j = g^(sum x_j x_{j+1})`.
//!
//! In Join mode the ring is the first, second and last incumbent followed by
//! the joiners. The first incumbent's scalar is derived from the previous
//! seed, so every other incumbent can replay its view from broadcast traffic
//! alone and stays silent.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::crypto::{expand_into, CurveSuite, GroupElement, Scalar, SuiteRngDyn};
use crate::identity::{Identity, LcmDomain, PeerCertificate};
use crate::wire::{Envelope, GkaRoundPayload, Kind, WireError, Writer};

pub const DEFAULT_ROUND_TIMEOUT_MS: u64 = 2_000;
const REPRESENTATIVE_LABEL: &[u8] = b"join-representative";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GkaError {
    #[error("instance {d} not above ledger value {ledger}")]
    StaleInstance { d: u64, ledger: u64 },
    #[error("message for instance {got}, expected {expected}")]
    WrongInstance { got: u64, expected: u64 },
    #[error("replayed message of completed instance {d} from uid {uid}")]
    Replayed { uid: u16, d: u64 },
    #[error("bad signature from uid {0}")]
    BadSignature(u16),
    #[error("uid {0} is not in the ring")]
    UnknownSender(u16),
    #[error("uid {0} sent two different elements for one round")]
    Conflicting(u16),
    #[error("invalid group element from uid {0}")]
    InvalidElement(u16),
    #[error("message for another scope")]
    WrongScope,
    #[error("malformed round message: {0}")]
    Malformed(#[from] WireError),
    #[error("ring does not close")]
    ConsistencyFailure,
    #[error("round deadline passed")]
    Timeout,
    #[error("ring needs at least two members, got {0}")]
    TooFew(usize),
    #[error("ring has {0} members, more than sender ids can address")]
    TooMany(usize),
    #[error("local node is neither a ring member nor an incumbent")]
    NotParticipant,
    #[error("passive incumbent lacks the previous session seed")]
    MissingPreviousSeed,
    #[error("duplicate uid {0} in ring")]
    DuplicateUid(u16),
}

/// Canonical serialization of the agreed group element.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SessionSeed(Vec<u8>);

impl SessionSeed {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    #[doc(hidden)]
    pub fn from_bytes(b: Vec<u8>) -> Self {
        SessionSeed(b)
    }
}

impl fmt::Debug for SessionSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionSeed({}..)", crate::crypto::suite::hex(&self.0[..self.0.len().min(6)]))
    }
}

impl Drop for SessionSeed {
    fn drop(&mut self) {
        self.0.iter_mut().for_each(|b| *b = 0);
    }
}

#[derive(Debug, Clone)]
pub struct RingMember {
    pub uid: u16,
    pub cert: PeerCertificate,
}

#[derive(Debug, Clone)]
pub enum Mode {
    KeyAgree,
    Join {
        /// Seed of the current epoch; `None` on joiners.
        previous_seed: Option<SessionSeed>,
        /// Uids of every current member, including the three representatives.
        incumbents: BTreeSet<u16>,
    },
}

/// One agreement instance as seen by one node.
#[derive(Debug, Clone)]
pub struct RingConfig {
    pub scope: LcmDomain,
    pub suite: Arc<dyn CurveSuite>,
    /// Ring order, not necessarily sorted.
    pub ring: Vec<RingMember>,
    pub my_uid: u16,
    pub d: u64,
    pub mode: Mode,
}

impl RingConfig {
    /// KeyAgree over `members`, ordered ascending by uid.
    pub fn key_agree(
        scope: LcmDomain,
        suite: Arc<dyn CurveSuite>,
        mut members: Vec<RingMember>,
        my_uid: u16,
        d: u64,
    ) -> Self {
        members.sort_by_key(|m| m.uid);
        RingConfig { scope, suite, ring: members, my_uid, d, mode: Mode::KeyAgree }
    }

    /// Join of `joiners` into the group `incumbents`.
    pub fn join(
        scope: LcmDomain,
        suite: Arc<dyn CurveSuite>,
        incumbents: Vec<RingMember>,
        joiners: Vec<RingMember>,
        my_uid: u16,
        d: u64,
        previous_seed: Option<SessionSeed>,
    ) -> Self {
        let ring = join_ring(incumbents.clone(), joiners);
        let incumbents = incumbents.iter().map(|m| m.uid).collect();
        RingConfig { scope, suite, ring, my_uid, d, mode: Mode::Join { previous_seed, incumbents } }
    }

    pub fn ring_uids(&self) -> Vec<u16> {
        self.ring.iter().map(|m| m.uid).collect()
    }
}

/// `[first(P), second(P), last(P)]` without repeats, then `J` ascending.
pub fn join_ring(mut incumbents: Vec<RingMember>, mut joiners: Vec<RingMember>) -> Vec<RingMember> {
    incumbents.sort_by_key(|m| m.uid);
    joiners.sort_by_key(|m| m.uid);
    let mut ring: Vec<RingMember> = Vec::new();
    let picks = [0, 1, incumbents.len().wrapping_sub(1)];
    for i in picks {
        if let Some(m) = incumbents.get(i) {
            if !ring.iter().any(|r| r.uid == m.uid) {
                ring.push(m.clone());
            }
        }
    }
    ring.extend(joiners);
    ring
}

/// Highest instance ids seen per scope, consulted before accepting any
/// round message.
#[derive(Debug, Default, Clone)]
pub struct InstanceLedger {
    completed: HashMap<(LcmDomain, u16), u64>,
    attempted: HashMap<LcmDomain, u64>,
}

impl InstanceLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Greatest instance id attempted or completed in `scope`, 0 if none.
    pub fn max_instance(&self, scope: &LcmDomain) -> u64 {
        let completed = self.completed.iter().filter(|((s, _), _)| s == scope).map(|(_, &d)| d).max();
        completed.unwrap_or(0).max(self.attempted.get(scope).copied().unwrap_or(0))
    }

    pub fn next_instance(&self, scope: &LcmDomain) -> u64 {
        self.max_instance(scope) + 1
    }

    pub fn check_new(&self, scope: &LcmDomain, d: u64) -> Result<(), GkaError> {
        let ledger = self.max_instance(scope);
        if d <= ledger {
            return Err(GkaError::StaleInstance { d, ledger });
        }
        Ok(())
    }

    pub fn record_attempt(&mut self, scope: &LcmDomain, d: u64) {
        let e = self.attempted.entry(scope.clone()).or_default();
        *e = (*e).max(d);
    }

    pub fn completed(&self, scope: &LcmDomain, uid: u16) -> Option<u64> {
        self.completed.get(&(scope.clone(), uid)).copied()
    }

    fn complete(&mut self, scope: &LcmDomain, uids: impl IntoIterator<Item = u16>, d: u64) {
        for uid in uids {
            let e = self.completed.entry((scope.clone(), uid)).or_default();
            *e = (*e).max(d);
        }
        self.record_attempt(scope, d);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Phase {
    /// Active: own round-1 element broadcast.
    Round1Sent,
    /// Active: own round-2 value broadcast.
    Round2Sent,
    /// Passive incumbent following the first representative's view.
    Following,
    Done,
    Failed(GkaError),
}

/// Result of feeding one message.
#[derive(Debug, Default)]
pub struct Step {
    pub send: Option<Envelope>,
    pub seed: Option<SessionSeed>,
}

pub struct Gka {
    cfg: RingConfig,
    /// Ring position whose view this node holds: its own, or 0 when passive.
    view: usize,
    passive: bool,
    x: Option<Scalar>,
    round1: HashMap<u16, GroupElement>,
    round2: HashMap<u16, GroupElement>,
    k_left: Option<GroupElement>,
    k_right: Option<GroupElement>,
    phase: Phase,
    seed: Option<SessionSeed>,
    own: Vec<Envelope>,
    deadline_ms: u64,
    round_timeout_ms: u64,
}

impl fmt::Debug for Gka {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gka")
            .field("scope", &self.cfg.scope)
            .field("d", &self.cfg.d)
            .field("ring", &self.cfg.ring_uids())
            .field("phase", &self.phase)
            .finish_non_exhaustive()
    }
}

fn representative_scalar(suite: &dyn CurveSuite, previous: &SessionSeed, scope: &LcmDomain, d: u64) -> Scalar {
    let mut ctx = Writer::new();
    ctx.raw(REPRESENTATIVE_LABEL).var(scope.group().as_bytes()).var(scope.channel().as_bytes()).u64(d);
    let mut okm = [0u8; 64];
    expand_into(previous.as_bytes(), &ctx.0, &mut okm);
    let s = suite.scalar_from_bytes(&okm);
    okm.iter_mut().for_each(|b| *b = 0);
    s
}

impl Gka {
    /// Validates `cfg`, reserves its instance id in `ledger` and returns the
    /// state with the round-1 broadcast (none for passive incumbents).
    pub fn start(
        cfg: RingConfig,
        me: &Identity,
        ledger: &mut InstanceLedger,
        rng: &mut dyn SuiteRngDyn,
        now_ms: u64,
        round_timeout_ms: u64,
    ) -> Result<(Gka, Option<Envelope>), GkaError> {
        let n = cfg.ring.len();
        if n < 2 {
            return Err(GkaError::TooFew(n));
        }
        if n > u16::MAX as usize {
            return Err(GkaError::TooMany(n));
        }
        let mut seen = BTreeSet::new();
        for m in &cfg.ring {
            if !seen.insert(m.uid) {
                return Err(GkaError::DuplicateUid(m.uid));
            }
        }
        ledger.check_new(&cfg.scope, cfg.d)?;

        let position = cfg.ring.iter().position(|m| m.uid == cfg.my_uid);
        let (view, passive) = match (position, &cfg.mode) {
            (Some(i), _) => (i, false),
            (None, Mode::Join { incumbents, .. }) if incumbents.contains(&cfg.my_uid) => (0, true),
            (None, _) => return Err(GkaError::NotParticipant),
        };
        let derived = match &cfg.mode {
            Mode::Join { previous_seed, incumbents } if view == 0 => {
                debug_assert!(incumbents.contains(&cfg.ring[0].uid));
                let prev = previous_seed.as_ref().ok_or(GkaError::MissingPreviousSeed)?;
                Some(representative_scalar(cfg.suite.as_ref(), prev, &cfg.scope, cfg.d))
            }
            _ => None,
        };
        ledger.record_attempt(&cfg.scope, cfg.d);

        let x = derived.unwrap_or_else(|| cfg.suite.random_scalar(rng));
        let element = cfg.suite.exp(&cfg.suite.generator(), &x);
        let mut gka = Gka {
            view,
            passive,
            x: Some(x),
            round1: HashMap::new(),
            round2: HashMap::new(),
            k_left: None,
            k_right: None,
            phase: if passive { Phase::Following } else { Phase::Round1Sent },
            seed: None,
            own: Vec::new(),
            deadline_ms: now_ms + if passive { 2 * round_timeout_ms } else { round_timeout_ms },
            round_timeout_ms,
            cfg,
        };
        gka.round1.insert(gka.cfg.ring[view].uid, element.clone());
        if passive {
            return Ok((gka, None));
        }
        let env = gka.envelope(me, 1, &element);
        gka.own.push(env.clone());
        Ok((gka, Some(env)))
    }

    fn envelope(&self, me: &Identity, round: u8, element: &GroupElement) -> Envelope {
        let payload =
            GkaRoundPayload { uid: self.cfg.my_uid, round, element: self.cfg.suite.serialize(element), d: self.cfg.d };
        let kind = if round == 1 { Kind::GkaRound1 } else { Kind::GkaRound2 };
        Envelope::signed(self.cfg.my_uid, kind, self.cfg.scope.clone(), payload.encode(), |b| me.sign(b))
    }

    pub fn config(&self) -> &RingConfig {
        &self.cfg
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn is_passive(&self) -> bool {
        self.passive
    }

    pub fn seed(&self) -> Option<&SessionSeed> {
        self.seed.as_ref()
    }

    /// When [`Gka::poll`] will fail the instance.
    pub fn deadline_ms(&self) -> u64 {
        self.deadline_ms
    }

    /// Every round message this node has broadcast, for retransmission.
    pub fn own_messages(&self) -> &[Envelope] {
        &self.own
    }

    /// Scalar behind this node's view. Test oracles only.
    #[doc(hidden)]
    pub fn ephemeral_scalar(&self) -> Option<&Scalar> {
        self.x.as_ref()
    }

    fn n(&self) -> usize {
        self.cfg.ring.len()
    }

    fn uid_at(&self, i: usize) -> u16 {
        self.cfg.ring[i % self.n()].uid
    }

    fn fail(&mut self, e: GkaError) -> GkaError {
        self.phase = Phase::Failed(e.clone());
        self.x = None;
        e
    }

    /// Fails the instance once the current round's deadline passes.
    pub fn poll(&mut self, now_ms: u64) -> Option<GkaError> {
        match self.phase {
            Phase::Done | Phase::Failed(_) => None,
            _ if now_ms >= self.deadline_ms => Some(self.fail(GkaError::Timeout)),
            _ => None,
        }
    }

    /// Feeds one round message. Errors describe why it was dropped; only
    /// [`GkaError::ConsistencyFailure`] changes the phase.
    pub fn handle(
        &mut self,
        env: &Envelope,
        me: &Identity,
        ledger: &mut InstanceLedger,
        now_ms: u64,
    ) -> Result<Step, GkaError> {
        let round = match env.kind {
            Kind::GkaRound1 => 1,
            Kind::GkaRound2 => 2,
            _ => return Err(GkaError::Malformed(WireError::UnknownKind(env.kind as u8))),
        };
        if env.scope != self.cfg.scope {
            return Err(GkaError::WrongScope);
        }
        let msg = GkaRoundPayload::decode(&env.payload)?;
        if msg.uid != env.signer_uid || msg.round != round {
            return Err(GkaError::Malformed(WireError::NonCanonical));
        }
        let Some(member) = self.cfg.ring.iter().find(|m| m.uid == msg.uid) else {
            return Err(GkaError::UnknownSender(msg.uid));
        };
        if msg.d != self.cfg.d {
            if ledger.completed(&self.cfg.scope, msg.uid).is_some_and(|done| msg.d <= done) {
                return Err(GkaError::Replayed { uid: msg.uid, d: msg.d });
            }
            return Err(GkaError::WrongInstance { got: msg.d, expected: self.cfg.d });
        }
        let store = if round == 1 { &self.round1 } else { &self.round2 };
        if let Some(existing) = store.get(&msg.uid) {
            // A verified copy is already stored; identical bytes change nothing.
            return if self.cfg.suite.serialize(existing) == msg.element {
                Ok(Step::default())
            } else {
                Err(GkaError::Conflicting(msg.uid))
            };
        }
        if !member.cert.verify_signature(&env.signed_bytes(), &env.signature) {
            return Err(GkaError::BadSignature(msg.uid));
        }
        let element = self.cfg.suite.deserialize(&msg.element).map_err(|_| GkaError::InvalidElement(msg.uid))?;
        if round == 1 && element.is_identity() {
            return Err(GkaError::InvalidElement(msg.uid));
        }
        if matches!(self.phase, Phase::Done | Phase::Failed(_)) {
            return Ok(Step::default());
        }
        if round == 1 {
            self.round1.insert(msg.uid, element);
        } else {
            self.round2.insert(msg.uid, element);
        }
        self.advance(me, ledger, now_ms)
    }

    fn advance(&mut self, me: &Identity, ledger: &mut InstanceLedger, now_ms: u64) -> Result<Step, GkaError> {
        let mut step = Step::default();
        let n = self.n();
        let i = self.view;
        if self.k_right.is_none() {
            let left = self.round1.get(&self.uid_at(i + n - 1)).cloned();
            let right = self.round1.get(&self.uid_at(i + 1)).cloned();
            if let (Some(left), Some(right)) = (left, right) {
                let suite = self.cfg.suite.clone();
                let x = self.x.as_ref().expect("scalar present until done");
                let kl = suite.exp(&left, x);
                let kr = suite.exp(&right, x);
                let y = suite.op(&kr, &suite.inv(&kl));
                self.k_left = Some(kl);
                self.k_right = Some(kr);
                self.round2.insert(self.uid_at(i), y.clone());
                if !self.passive {
                    let env = self.envelope(me, 2, &y);
                    self.own.push(env.clone());
                    step.send = Some(env);
                    self.phase = Phase::Round2Sent;
                    self.deadline_ms = now_ms + self.round_timeout_ms;
                }
            }
        }
        if self.k_right.is_some() && self.round2.len() == n {
            match self.finish() {
                Ok(seed) => {
                    let uids = self.cfg.ring_uids();
                    ledger.complete(&self.cfg.scope, uids, self.cfg.d);
                    self.phase = Phase::Done;
                    self.x = None;
                    self.seed = Some(seed.clone());
                    step.seed = Some(seed);
                }
                Err(e) => return Err(self.fail(e)),
            }
        }
        Ok(step)
    }

    fn finish(&self) -> Result<SessionSeed, GkaError> {
        let suite = &self.cfg.suite;
        let n = self.n();
        let i = self.view;
        let mut kr = self.k_right.clone().expect("checked by caller");
        let mut sum = kr.clone();
        for step in 1..n {
            let y = &self.round2[&self.uid_at(i + step)];
            kr = suite.op(y, &kr);
            sum = suite.op(&sum, &kr);
        }
        // The walk ends on K^R_{i-1}, which must be our K^L.
        if Some(&kr) != self.k_left.as_ref() {
            return Err(GkaError::ConsistencyFailure);
        }
        Ok(SessionSeed(suite.serialize(&sum)))
    }
}
