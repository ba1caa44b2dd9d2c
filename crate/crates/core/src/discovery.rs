//! Leaderless group discovery.
//!
//! Nodes gossip JOIN and JOIN_RESPONSE messages and keep the greatest
//! [`DiscoveryState`] under a total order. At the agreed start time the state
//! freezes and drives one DBGKA instance; success folds J into P, failure
//! empties both and rejoins.
//!
//! The machine is sans-IO: every entry point takes the current time and
//! returns [`Event`]s, and [`Discovery::next_wakeup`] says when to call
//! [`Discovery::on_timer`] next.

use std::cmp::Ordering;
use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use log::{debug, info};
use rand::Rng;
use thiserror::Error;

use crate::crypto::{CurveSuite, SuiteRngDyn};
use crate::dbgka::{Gka, GkaError, InstanceLedger, Phase as GkaPhase, RingConfig, RingMember, SessionSeed};
use crate::identity::{authorize, CertVerifier, Identity, IdentityError, LcmDomain, PeerCertificate};
use crate::wire::{CertBlob, Envelope, GkaRoundPayload, JoinPayload, JoinResponsePayload, Kind, Member};

/// `t` of a committed state with nobody joining.
pub const NO_DEADLINE: u64 = u64::MAX;
const EARLY_BUFFER: usize = 1024;

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error(transparent)]
    Identity(#[from] IdentityError),
}

/// Timing knobs, all in milliseconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscoveryConfig {
    /// Gap between sending a JOIN and its proposed start time.
    pub base_offset_ms: u64,
    /// Upper bound of the uniform offset added to every proposed start time.
    pub epsilon_max_ms: u64,
    pub response_delay_min_ms: u64,
    pub response_delay_max_ms: u64,
    /// Round messages arriving this long before the local start time are
    /// buffered instead of dropped.
    pub clock_skew_ms: u64,
    pub round_timeout_ms: u64,
    pub retransmit_ms: u64,
    /// Retransmission continues this long after local success, for peers
    /// that lost a round message.
    pub linger_ms: u64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            base_offset_ms: 500,
            epsilon_max_ms: 50,
            response_delay_min_ms: 10,
            response_delay_max_ms: 100,
            clock_skew_ms: 100,
            round_timeout_ms: crate::dbgka::DEFAULT_ROUND_TIMEOUT_MS,
            retransmit_ms: 100,
            linger_ms: 1_000,
        }
    }
}

/// `(P, J, t)`: current participants, joiners and the agreed start time.
#[derive(Debug, Clone)]
pub struct DiscoveryState {
    pub p: BTreeMap<u16, PeerCertificate>,
    pub j: BTreeMap<u16, PeerCertificate>,
    pub t_ms: u64,
}

type Canonical = (Vec<(u16, [u8; 32])>, Vec<(u16, [u8; 32])>);

impl DiscoveryState {
    pub fn empty() -> Self {
        DiscoveryState { p: BTreeMap::new(), j: BTreeMap::new(), t_ms: NO_DEADLINE }
    }

    fn canonical(&self) -> Canonical {
        let list = |m: &BTreeMap<u16, PeerCertificate>| m.iter().map(|(&u, c)| (u, *c.fingerprint())).collect();
        (list(&self.p), list(&self.j))
    }

    pub fn contains(&self, uid: u16) -> bool {
        self.p.contains_key(&uid) || self.j.contains_key(&uid)
    }

    /// Uids of P and J together, ascending.
    pub fn members(&self) -> Vec<u16> {
        let mut v: Vec<u16> = self.p.keys().chain(self.j.keys()).copied().collect();
        v.sort_unstable();
        v
    }
}

/// Larger |P| wins, then larger |J|, then the smaller start time. Exact ties
/// fall back to the (uid, fingerprint) lists so the order is total.
pub fn compare(a: &DiscoveryState, b: &DiscoveryState) -> Ordering {
    a.p.len()
        .cmp(&b.p.len())
        .then(a.j.len().cmp(&b.j.len()))
        .then(b.t_ms.cmp(&a.t_ms))
        .then_with(|| a.canonical().cmp(&b.canonical()))
}

impl PartialEq for DiscoveryState {
    fn eq(&self, other: &Self) -> bool {
        compare(self, other) == Ordering::Equal
    }
}

impl Eq for DiscoveryState {}

impl PartialOrd for DiscoveryState {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DiscoveryState {
    fn cmp(&self, other: &Self) -> Ordering {
        compare(self, other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Gathering,
    Agreeing,
    Committed,
}

#[derive(Debug, Clone)]
pub struct Commit {
    pub scope: LcmDomain,
    /// Instance id of the agreement; strictly increasing per scope.
    pub instance: u64,
    pub epoch: u64,
    pub seed: SessionSeed,
    /// Every member of the new group, ascending.
    pub members: Vec<u16>,
}

#[derive(Debug)]
pub enum Event {
    Send(Envelope),
    Committed(Commit),
    Failed(GkaError),
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct DiscoveryStats {
    pub joins_sent: u64,
    pub responses_sent: u64,
    pub round_messages_sent: u64,
    pub retransmissions: u64,
    pub commits: u64,
    pub failures: u64,
    pub too_few: u64,
    pub missed_instances: u64,
    pub drops: BTreeMap<&'static str, u64>,
}

impl DiscoveryStats {
    fn drop(&mut self, reason: &'static str) {
        *self.drops.entry(reason).or_default() += 1;
    }

    pub fn dropped(&self) -> u64 {
        self.drops.values().sum()
    }
}

/// The frozen state one agreement ran over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Agreement {
    pub instance: u64,
    pub p: Vec<u16>,
    pub j: Vec<u16>,
}

/// A JOIN not yet folded into J.
#[derive(Debug, Clone)]
struct PendingJoin {
    t_ms: u64,
    received_ms: u64,
    cert: PeerCertificate,
}

pub struct Discovery {
    scope: LcmDomain,
    suite: Arc<dyn CurveSuite>,
    me: Identity,
    my_uid: u16,
    verifier: CertVerifier,
    cfg: DiscoveryConfig,
    rng: Box<dyn SuiteRngDyn + Send>,
    phase: Phase,
    state: DiscoveryState,
    /// M: every JOIN seen since the last commit, keyed by uid.
    pending: BTreeMap<u16, PendingJoin>,
    /// A known member re-sent its JOIN, so it has lost track of D.
    force_response: bool,
    response_at: Option<u64>,
    instance_hint: u64,
    ledger: InstanceLedger,
    frozen_at_ms: u64,
    gka: Option<Gka>,
    next_retransmit: u64,
    linger_until: Option<u64>,
    early: VecDeque<Envelope>,
    seed: Option<SessionSeed>,
    epoch: u64,
    agreements: Vec<Agreement>,
    stats: DiscoveryStats,
}

impl std::fmt::Debug for Discovery {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Discovery")
            .field("scope", &self.scope)
            .field("uid", &self.my_uid)
            .field("phase", &self.phase)
            .field("members", &self.state.members())
            .field("epoch", &self.epoch)
            .finish_non_exhaustive()
    }
}

fn blob(cert: &PeerCertificate) -> CertBlob {
    CertBlob(cert.chain().to_vec())
}

impl Discovery {
    pub fn new(
        scope: LcmDomain,
        suite: Arc<dyn CurveSuite>,
        me: Identity,
        verifier: CertVerifier,
        cfg: DiscoveryConfig,
        rng: Box<dyn SuiteRngDyn + Send>,
        now_ms: u64,
    ) -> Result<Self, DiscoveryError> {
        let my_uid = authorize(me.certificate(), &scope, now_ms)?.uid;
        Ok(Discovery {
            scope,
            suite,
            me,
            my_uid,
            verifier,
            cfg,
            rng,
            phase: Phase::Idle,
            state: DiscoveryState::empty(),
            pending: BTreeMap::new(),
            force_response: false,
            response_at: None,
            instance_hint: 1,
            ledger: InstanceLedger::new(),
            frozen_at_ms: 0,
            gka: None,
            next_retransmit: 0,
            linger_until: None,
            early: VecDeque::new(),
            seed: None,
            epoch: 0,
            agreements: Vec::new(),
            stats: DiscoveryStats::default(),
        })
    }

    pub fn scope(&self) -> &LcmDomain {
        &self.scope
    }

    pub fn uid(&self) -> u16 {
        self.my_uid
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn state(&self) -> &DiscoveryState {
        &self.state
    }

    pub fn stats(&self) -> &DiscoveryStats {
        &self.stats
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn seed(&self) -> Option<&SessionSeed> {
        self.seed.as_ref()
    }

    pub fn gka(&self) -> Option<&Gka> {
        self.gka.as_ref()
    }

    /// Every agreement this node started, oldest first.
    pub fn agreements(&self) -> &[Agreement] {
        &self.agreements
    }

    /// Broadcasts a JOIN with a fresh start time and resets D to this node
    /// alone. Used for the first join, after failures and for rekeying.
    pub fn start(&mut self, now_ms: u64) -> Vec<Event> {
        let mut out = Vec::new();
        self.rejoin(now_ms, &mut out);
        out
    }

    fn rejoin(&mut self, now_ms: u64, out: &mut Vec<Event>) {
        self.pending.clear();
        self.force_response = false;
        self.response_at = None;
        self.gka = None;
        self.linger_until = None;
        self.early.clear();
        let eps = self.rng.gen_range(0..=self.cfg.epsilon_max_ms);
        let t = now_ms + self.cfg.base_offset_ms + eps;
        self.state = DiscoveryState::empty();
        self.state.t_ms = t;
        self.state.j.insert(self.my_uid, self.me.certificate().clone());
        self.set_phase(Phase::Gathering);
        self.instance_hint = self.instance_hint.max(self.ledger.next_instance(&self.scope));
        let payload = JoinPayload { t_ms: t, next_instance: self.instance_hint, cert: blob(self.me.certificate()) };
        self.stats.joins_sent += 1;
        out.push(Event::Send(self.sign(Kind::Join, payload.encode())));
    }

    fn set_phase(&mut self, phase: Phase) {
        if self.phase != phase {
            info!("{} uid {}: {:?} -> {:?}", self.scope, self.my_uid, self.phase, phase);
            self.phase = phase;
        }
    }

    fn sign(&self, kind: Kind, payload: Vec<u8>) -> Envelope {
        Envelope::signed(self.my_uid, kind, self.scope.clone(), payload, |b| self.me.sign(b))
    }

    /// Chain, authorization and uid binding of a certificate received for
    /// this scope.
    fn admit(&mut self, chain: &CertBlob, claimed_uid: u16, now_ms: u64) -> Result<PeerCertificate, &'static str> {
        let cert = PeerCertificate::from_chain(chain.0.clone()).map_err(|_| "bad certificate")?;
        if !self.verifier.verify(&cert, now_ms).ok {
            return Err("untrusted certificate");
        }
        match authorize(&cert, &self.scope, now_ms) {
            Ok(p) if p.uid == claimed_uid => Ok(cert),
            Ok(_) => Err("uid mismatch"),
            Err(_) => Err("not authorized"),
        }
    }

    pub fn handle(&mut self, env: &Envelope, now_ms: u64) -> Vec<Event> {
        let mut out = Vec::new();
        if env.scope != self.scope {
            self.stats.drop("wrong scope");
            return out;
        }
        if env.signer_uid == self.my_uid {
            // Multicast loopback of our own traffic.
            return out;
        }
        if let Err(reason) = match env.kind {
            Kind::Join => self.on_join(env, now_ms),
            Kind::JoinResponse => self.on_response(env, now_ms),
            Kind::GkaRound1 | Kind::GkaRound2 => self.on_round(env, now_ms, &mut out),
        } {
            debug!("{} uid {}: dropped {:?} from {}: {reason}", self.scope, self.my_uid, env.kind, env.signer_uid);
            self.stats.drop(reason);
        }
        out
    }

    fn on_join(&mut self, env: &Envelope, now_ms: u64) -> Result<(), &'static str> {
        if self.phase == Phase::Idle {
            return Err("idle");
        }
        let msg = JoinPayload::decode(&env.payload).map_err(|_| "malformed")?;
        let cert = self.admit(&msg.cert, env.signer_uid, now_ms)?;
        if !cert.verify_signature(&env.signed_bytes(), &env.signature) {
            return Err("bad signature");
        }
        self.instance_hint = self.instance_hint.max(msg.next_instance);
        match self.pending.get(&env.signer_uid) {
            Some(p) if p.t_ms == msg.t_ms => return Err("duplicate join"),
            Some(_) => self.force_response = true,
            None => {}
        }
        self.pending.insert(env.signer_uid, PendingJoin { t_ms: msg.t_ms, received_ms: now_ms, cert });
        self.arm_response(now_ms);
        Ok(())
    }

    fn arm_response(&mut self, now_ms: u64) {
        if self.response_at.is_none() {
            let delay = self.rng.gen_range(self.cfg.response_delay_min_ms..=self.cfg.response_delay_max_ms);
            self.response_at = Some(now_ms + delay);
        }
    }

    /// J_new = M \ J, ignoring JOINs whose start time has already passed.
    fn new_joiners(&self, now_ms: u64) -> Vec<u16> {
        self.pending
            .iter()
            .filter(|(uid, p)| !self.state.j.contains_key(uid) && p.t_ms > now_ms)
            .map(|(&uid, _)| uid)
            .collect()
    }

    fn flush_response(&mut self, now_ms: u64, out: &mut Vec<Event>) {
        self.response_at = None;
        let fresh = self.new_joiners(now_ms);
        if fresh.is_empty() && !self.force_response {
            return;
        }
        self.force_response = false;
        for uid in fresh {
            let p = &self.pending[&uid];
            self.state.p.remove(&uid);
            self.state.t_ms = self.state.t_ms.min(p.t_ms);
            self.state.j.insert(uid, p.cert.clone());
        }
        if self.phase == Phase::Committed {
            self.set_phase(Phase::Gathering);
        }
        let members = |m: &BTreeMap<u16, PeerCertificate>| {
            m.iter().map(|(&uid, c)| Member { uid, cert: blob(c) }).collect::<Vec<_>>()
        };
        let payload = JoinResponsePayload::new(
            self.state.t_ms,
            self.instance_hint,
            blob(self.me.certificate()),
            members(&self.state.p),
            members(&self.state.j),
        );
        self.stats.responses_sent += 1;
        out.push(Event::Send(self.sign(Kind::JoinResponse, payload.encode())));
    }

    fn on_response(&mut self, env: &Envelope, now_ms: u64) -> Result<(), &'static str> {
        match self.phase {
            Phase::Idle => return Err("idle"),
            Phase::Agreeing => return Err("frozen"),
            Phase::Gathering | Phase::Committed => {}
        }
        let msg = JoinResponsePayload::decode(&env.payload).map_err(|_| "malformed")?;
        let responder = self.admit(&msg.responder, env.signer_uid, now_ms)?;
        if !responder.verify_signature(&env.signed_bytes(), &env.signature) {
            return Err("bad signature");
        }
        let mut d = DiscoveryState::empty();
        d.t_ms = msg.t_ms;
        for m in msg.p() {
            let cert = self.admit(&m.cert, m.uid, now_ms)?;
            d.p.insert(m.uid, cert);
        }
        for m in msg.j() {
            if d.p.contains_key(&m.uid) {
                return Err("P and J overlap");
            }
            let cert = self.admit(&m.cert, m.uid, now_ms)?;
            d.j.insert(m.uid, cert);
        }
        if d.j.is_empty() {
            return Err("empty J");
        }
        self.instance_hint = self.instance_hint.max(msg.next_instance);
        if d > self.state {
            self.state = d;
            self.set_phase(Phase::Gathering);
        }
        if !self.new_joiners(now_ms).is_empty() {
            self.arm_response(now_ms);
        }
        Ok(())
    }

    fn on_round(&mut self, env: &Envelope, now_ms: u64, out: &mut Vec<Event>) -> Result<(), &'static str> {
        let msg = GkaRoundPayload::decode(&env.payload).map_err(|_| "malformed")?;
        let Some(gka) = self.gka.as_mut().filter(|g| g.config().d == msg.d) else {
            if self.phase == Phase::Gathering && now_ms + self.cfg.clock_skew_ms >= self.state.t_ms {
                if self.early.len() == EARLY_BUFFER {
                    self.early.pop_front();
                }
                self.early.push_back(env.clone());
                return Ok(());
            }
            if self.phase == Phase::Committed && msg.d >= self.instance_hint {
                return self.on_missed_instance(env, msg.d, now_ms, out);
            }
            return Err("no matching instance");
        };
        match gka.handle(env, &self.me, &mut self.ledger, now_ms) {
            Ok(step) => {
                self.apply_step(step, now_ms, out);
                Ok(())
            }
            Err(e) => {
                let reason = gka_reason(&e);
                if matches!(gka.phase(), GkaPhase::Failed(_)) && self.phase == Phase::Agreeing {
                    self.fail(e, now_ms, out);
                }
                Err(reason)
            }
        }
    }

    /// A member we share a key with is running an instance we never heard
    /// of, so we missed the discovery that led to it and hold a stale key.
    fn on_missed_instance(&mut self, env: &Envelope, d: u64, now_ms: u64, out: &mut Vec<Event>) -> Result<(), &'static str> {
        let signer = self.state.p.get(&env.signer_uid).ok_or("no matching instance")?;
        if !signer.verify_signature(&env.signed_bytes(), &env.signature) {
            return Err("bad signature");
        }
        info!("{} uid {}: member {} runs unknown instance {d}, rejoining", self.scope, self.my_uid, env.signer_uid);
        self.stats.missed_instances += 1;
        self.instance_hint = self.instance_hint.max(d + 1);
        self.rejoin(now_ms, out);
        Ok(())
    }

    fn apply_step(&mut self, step: crate::dbgka::Step, now_ms: u64, out: &mut Vec<Event>) {
        if let Some(env) = step.send {
            self.stats.round_messages_sent += 1;
            out.push(Event::Send(env));
        }
        if let Some(seed) = step.seed {
            self.commit(seed, now_ms, out);
        }
    }

    fn freeze(&mut self, now_ms: u64, out: &mut Vec<Event>) {
        let members = self.state.members();
        if !self.state.contains(self.my_uid) {
            info!("{} uid {}: left out of the agreed state, rejoining", self.scope, self.my_uid);
            return self.rejoin(now_ms, out);
        }
        if members.len() < 2 {
            self.stats.too_few += 1;
            return self.rejoin(now_ms, out);
        }
        let d = self.ledger.next_instance(&self.scope).max(self.instance_hint);
        let ring = |m: &BTreeMap<u16, PeerCertificate>| {
            m.iter().map(|(&uid, cert)| RingMember { uid, cert: cert.clone() }).collect::<Vec<_>>()
        };
        let cfg = if self.state.p.is_empty() {
            RingConfig::key_agree(self.scope.clone(), self.suite.clone(), ring(&self.state.j), self.my_uid, d)
        } else {
            let previous = self.state.p.contains_key(&self.my_uid).then(|| self.seed.clone()).flatten();
            RingConfig::join(
                self.scope.clone(),
                self.suite.clone(),
                ring(&self.state.p),
                ring(&self.state.j),
                self.my_uid,
                d,
                previous,
            )
        };
        self.set_phase(Phase::Agreeing);
        self.frozen_at_ms = now_ms;
        self.linger_until = None;
        match Gka::start(cfg, &self.me, &mut self.ledger, &mut *self.rng, now_ms, self.cfg.round_timeout_ms) {
            Err(e) => self.fail(e, now_ms, out),
            Ok((gka, first)) => {
                info!("{} uid {}: agreement {d} over {:?}", self.scope, self.my_uid, gka.config().ring_uids());
                self.agreements.push(Agreement {
                    instance: d,
                    p: self.state.p.keys().copied().collect(),
                    j: self.state.j.keys().copied().collect(),
                });
                self.gka = Some(gka);
                self.next_retransmit = now_ms + self.cfg.retransmit_ms;
                if let Some(env) = first {
                    self.stats.round_messages_sent += 1;
                    out.push(Event::Send(env));
                }
                for env in std::mem::take(&mut self.early) {
                    if self.phase != Phase::Agreeing {
                        break;
                    }
                    let _ = self.on_round(&env, now_ms, out);
                }
            }
        }
    }

    fn commit(&mut self, seed: SessionSeed, now_ms: u64, out: &mut Vec<Event>) {
        let joiners = std::mem::take(&mut self.state.j);
        self.state.p.extend(joiners);
        self.state.t_ms = NO_DEADLINE;
        self.epoch += 1;
        self.stats.commits += 1;
        self.seed = Some(seed.clone());
        self.linger_until = Some(now_ms + self.cfg.linger_ms);
        let members = self.state.members();
        // A JOIN that arrived after the freeze means its sender missed this
        // agreement, even if it was in the ring.
        let frozen_at = self.frozen_at_ms;
        self.pending.retain(|uid, p| !members.contains(uid) || p.received_ms >= frozen_at);
        self.force_response = false;
        self.set_phase(Phase::Committed);
        let instance = self.gka.as_ref().map(|g| g.config().d).unwrap_or_default();
        self.instance_hint = self.instance_hint.max(instance + 1);
        debug!("{} uid {}: committed instance {instance} members {members:?} seed {seed:?}", self.scope, self.my_uid);
        out.push(Event::Committed(Commit { scope: self.scope.clone(), instance, epoch: self.epoch, seed, members }));
        if !self.new_joiners(now_ms).is_empty() {
            self.arm_response(now_ms);
        }
    }

    fn fail(&mut self, e: GkaError, now_ms: u64, out: &mut Vec<Event>) {
        info!("{} uid {}: agreement failed: {e}", self.scope, self.my_uid);
        self.stats.failures += 1;
        out.push(Event::Failed(e));
        self.rejoin(now_ms, out);
    }

    pub fn next_wakeup(&self) -> Option<u64> {
        let mut next = self.response_at;
        let mut at = |t: u64| next = Some(next.map_or(t, |n| n.min(t)));
        if self.phase == Phase::Gathering && self.state.t_ms != NO_DEADLINE {
            at(self.state.t_ms);
        }
        if let Some(gka) = &self.gka {
            if self.phase == Phase::Agreeing {
                at(gka.deadline_ms());
                at(self.next_retransmit);
            } else if let Some(end) = self.linger_until {
                at(end.min(self.next_retransmit));
            }
        }
        next
    }

    pub fn on_timer(&mut self, now_ms: u64) -> Vec<Event> {
        let mut out = Vec::new();
        if self.response_at.is_some_and(|t| now_ms >= t) {
            if self.phase == Phase::Agreeing {
                // Flushed once the agreement settles.
                self.response_at = None;
            } else {
                self.flush_response(now_ms, &mut out);
            }
        }
        if self.phase == Phase::Gathering && now_ms >= self.state.t_ms {
            self.freeze(now_ms, &mut out);
        }
        let expired = match (&mut self.gka, self.phase) {
            (Some(gka), Phase::Agreeing) => gka.poll(now_ms),
            _ => None,
        };
        if let Some(e) = expired {
            self.fail(e, now_ms, &mut out);
            return out;
        }
        if let Some(gka) = self.gka.as_ref() {
            let lingering = self.linger_until.is_some_and(|end| now_ms < end);
            if self.phase == Phase::Agreeing || lingering {
                if now_ms >= self.next_retransmit {
                    for env in gka.own_messages() {
                        self.stats.retransmissions += 1;
                        out.push(Event::Send(env.clone()));
                    }
                    self.next_retransmit = now_ms + self.cfg.retransmit_ms;
                }
            } else if self.linger_until.is_some() {
                self.gka = None;
                self.linger_until = None;
            }
        }
        out
    }
}

fn gka_reason(e: &GkaError) -> &'static str {
    match e {
        GkaError::StaleInstance { .. } => "stale instance",
        GkaError::WrongInstance { .. } => "wrong instance",
        GkaError::Replayed { .. } => "replayed round",
        GkaError::BadSignature(_) => "bad signature",
        GkaError::UnknownSender(_) => "unknown sender",
        GkaError::Conflicting(_) => "conflicting element",
        GkaError::InvalidElement(_) => "invalid element",
        GkaError::WrongScope => "wrong scope",
        GkaError::Malformed(_) => "malformed",
        GkaError::ConsistencyFailure => "consistency failure",
        _ => "agreement error",
    }
}
