//! Per-node runtime: the publish and receive pipelines over the two-level
//! key hierarchy, with one discovery instance for the group and one per
//! configured channel.
//!
//! The channelname is encrypted under the group key `k_g` and the payload
//! sealed under the channel key `k_ch`, both with IVs built from the same
//! sender id and sequence number. Channel keys are derived from the channel
//! seed together with the current group instance, so every group commit
//! re-keys all channels locally and the send counter can safely restart.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::config::SessionConfig;
use crate::crypto::{aead_open, aead_seal, build_iv, ctr_crypt, kdf_expand, CtrStream, CurveSuite, KeyMaterial, SuiteRngDyn, TAG_LEN};
use crate::dbgka::SessionSeed;
use crate::discovery::{Commit, Discovery, DiscoveryConfig, DiscoveryError, Event, Phase};
use crate::identity::{CertVerifier, Identity, IdentityError, LcmDomain, RootStore, MAX_CHANNEL_LEN};
use crate::registry::{self, ReplayFactory, UnknownStrategy};
use crate::replay::{ReplayWindow, WindowSizeError};
use crate::wire::{
    fragment, peek_magic, Envelope, FragmentPacket, RawSecurePacket, Reassembler, SecurePacket, WireError, Writer,
    MAGIC_FRAGMENT, MAGIC_MANAGEMENT, MAGIC_SECURE,
};

const GROUP_KEY_LABEL: &[u8] = b"lcmsec group key";
const CHANNEL_KEY_LABEL: &[u8] = b"lcmsec channel key";
/// Materials kept per scope: the current one and its predecessor.
const KEPT_MATERIALS: usize = 2;
/// Own messages remembered for loopback suppression.
const OWN_TAG_MEMORY: usize = 256;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("no key established yet")]
    NoKey,
    #[error("sequence numbers exhausted; rekeying")]
    CounterExhausted,
    #[error("channel {0:?} is not configured")]
    UnknownChannel(String),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Strategy(#[from] UnknownStrategy),
    #[error("invalid replay window size {}", .0 .0)]
    Window(#[from] WindowSizeError),
}

impl From<DiscoveryError> for SessionError {
    fn from(e: DiscoveryError) -> Self {
        match e {
            DiscoveryError::Identity(e) => SessionError::Identity(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropReason {
    BadMagic,
    Malformed,
    Fragment,
    /// No NUL within the channelname bound under any group key.
    NoTerminator,
    Unsubscribed,
    UnknownChannelKey,
    AuthFailure,
    Replayed,
    /// Management traffic for a scope this node does not run.
    ForeignScope,
    /// Our own message, looped back by the multicast socket.
    Loopback,
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct SessionStats {
    pub published: u64,
    pub datagrams_sent: u64,
    pub delivered: u64,
    pub previous_epoch_deliveries: u64,
    pub drops: BTreeMap<DropReason, u64>,
}

impl SessionStats {
    fn drop(&mut self, r: DropReason) {
        *self.drops.entry(r).or_default() += 1;
    }

    pub fn dropped(&self, r: DropReason) -> u64 {
        self.drops.get(&r).copied().unwrap_or(0)
    }

    pub fn total_dropped(&self) -> u64 {
        self.drops.values().sum()
    }
}

/// One 32-bit sequence space per group, shared by all channels.
#[derive(Debug, Default, Clone)]
pub struct SendCounter {
    next: u64,
}

impl SendCounter {
    pub fn next(&mut self) -> Option<u32> {
        let v = u32::try_from(self.next).ok()?;
        self.next += 1;
        Some(v)
    }

    pub fn reset(&mut self) {
        self.next = 0;
    }

    /// Positions the counter as if `last_used` had just been issued.
    pub fn set_last_used(&mut self, last_used: u32) {
        self.next = u64::from(last_used) + 1;
    }
}

struct Slot {
    material: KeyMaterial,
    retired_at: Option<u64>,
    windows: HashMap<u16, Box<dyn ReplayWindow>>,
}

/// Newest-first key materials per scope. A replaced material stays usable
/// for receiving until the grace period after its replacement ends.
pub struct KeyStore {
    grace_ms: u64,
    group: Vec<Slot>,
    channels: HashMap<String, Vec<Slot>>,
}

impl std::fmt::Debug for KeyStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyStore")
            .field("group", &self.group.len())
            .field("channels", &self.channels.iter().map(|(k, v)| (k, v.len())).collect::<BTreeMap<_, _>>())
            .finish()
    }
}

fn install(slots: &mut Vec<Slot>, material: KeyMaterial, now_ms: u64) {
    if let Some(cur) = slots.first_mut() {
        cur.retired_at.get_or_insert(now_ms);
    }
    slots.insert(0, Slot { material, retired_at: None, windows: HashMap::new() });
    slots.truncate(KEPT_MATERIALS);
}

impl KeyStore {
    pub fn new(grace_ms: u64) -> Self {
        KeyStore { grace_ms, group: Vec::new(), channels: HashMap::new() }
    }

    pub fn install_group(&mut self, material: KeyMaterial, now_ms: u64) {
        install(&mut self.group, material, now_ms);
    }

    pub fn install_channel(&mut self, channel: &str, material: KeyMaterial, now_ms: u64) {
        install(self.channels.entry(channel.to_string()).or_default(), material, now_ms);
    }

    /// Drops materials whose grace period has ended.
    pub fn purge(&mut self, now_ms: u64) {
        let grace = self.grace_ms;
        let keep = |s: &Slot| s.retired_at.is_none_or(|r| now_ms < r.saturating_add(grace));
        self.group.retain(keep);
        self.channels.values_mut().for_each(|v| v.retain(keep));
    }

    pub fn current_group(&self) -> Option<&KeyMaterial> {
        self.group.first().filter(|s| s.retired_at.is_none()).map(|s| &s.material)
    }

    pub fn current_channel(&self, channel: &str) -> Option<&KeyMaterial> {
        self.channels.get(channel)?.first().filter(|s| s.retired_at.is_none()).map(|s| &s.material)
    }

    pub fn group_len(&self) -> usize {
        self.group.len()
    }

    pub fn channel_len(&self, channel: &str) -> usize {
        self.channels.get(channel).map_or(0, Vec::len)
    }
}

/// Everything a session needs besides credentials and scope names.
#[derive(Clone)]
pub struct SessionParams {
    pub suite: Arc<dyn CurveSuite>,
    pub replay: ReplayFactory,
    pub window: usize,
    pub mtu: usize,
    pub grace_ms: u64,
    pub discovery: DiscoveryConfig,
}

impl std::fmt::Debug for SessionParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionParams")
            .field("suite", &self.suite.name())
            .field("window", &self.window)
            .field("mtu", &self.mtu)
            .finish_non_exhaustive()
    }
}

impl SessionParams {
    pub fn from_config(cfg: &SessionConfig) -> Result<Self, SessionError> {
        let replay = *registry::replay_strategies().get(&cfg.replay_strategy)?;
        replay(cfg.window)?;
        Ok(SessionParams {
            suite: registry::suite_by_name(&cfg.suite)?,
            replay,
            window: cfg.window,
            mtu: cfg.mtu,
            grace_ms: cfg.grace_ms,
            discovery: cfg.discovery.clone(),
        })
    }
}

struct ChannelState {
    disc: Discovery,
    seed: Option<(u64, SessionSeed)>,
}

pub struct Session {
    identity: Identity,
    group: LcmDomain,
    params: SessionParams,
    group_disc: Discovery,
    channels: BTreeMap<String, ChannelState>,
    keys: KeyStore,
    group_seed: Option<(u64, SessionSeed)>,
    sender_id: Option<u16>,
    counter: SendCounter,
    rekeying: bool,
    reassembler: Reassembler,
    outbox: Vec<Vec<u8>>,
    /// (sender, seqno, tag) of recent own messages; loopback copies match
    /// one exactly and are dropped before any decryption.
    own_tags: VecDeque<(u16, u32, [u8; TAG_LEN])>,
    stats: SessionStats,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("group", &self.group)
            .field("sender_id", &self.sender_id)
            .field("channels", &self.channels.keys().collect::<Vec<_>>())
            .field("keys", &self.keys)
            .finish_non_exhaustive()
    }
}

fn key_context(label: &[u8], scope: &LcmDomain, instance: u64, group_instance: u64) -> Vec<u8> {
    let mut w = Writer::new();
    w.raw(label).var(scope.group().as_bytes()).var(scope.channel().as_bytes()).u64(instance).u64(group_instance);
    w.0
}

fn name_with_nul(channel: &str) -> Vec<u8> {
    let mut v = Vec::with_capacity(channel.len() + 1);
    v.extend_from_slice(channel.as_bytes());
    v.push(0);
    v
}

impl Session {
    /// Fails with `NotAuthorized` unless the certificate covers the group
    /// and every channel.
    pub fn new(
        identity: Identity,
        roots: Arc<RootStore>,
        group: &str,
        channels: &[String],
        params: SessionParams,
        rng: &mut dyn SuiteRngDyn,
        now_ms: u64,
    ) -> Result<Self, SessionError> {
        let mut make = |scope: LcmDomain| -> Result<Discovery, SessionError> {
            let child = ChaCha20Rng::from_rng(&mut *rng).expect("ChaCha seeding from an RNG is infallible");
            Ok(Discovery::new(
                scope,
                params.suite.clone(),
                identity.clone(),
                CertVerifier::new(roots.clone()),
                params.discovery.clone(),
                Box::new(child),
                now_ms,
            )?)
        };
        let group_scope = LcmDomain::group_scope(group)?;
        let group_disc = make(group_scope.clone())?;
        let mut chans = BTreeMap::new();
        for c in channels {
            let disc = make(LcmDomain::new(group, c)?)?;
            chans.insert(c.clone(), ChannelState { disc, seed: None });
        }
        Ok(Session {
            identity,
            group: group_scope,
            keys: KeyStore::new(params.grace_ms),
            params,
            group_disc,
            channels: chans,
            group_seed: None,
            sender_id: None,
            counter: SendCounter::default(),
            rekeying: false,
            reassembler: Reassembler::new(),
            outbox: Vec::new(),
            own_tags: VecDeque::with_capacity(OWN_TAG_MEMORY),
            stats: SessionStats::default(),
        })
    }

    pub fn identity(&self) -> &Identity {
        &self.identity
    }

    pub fn group(&self) -> &LcmDomain {
        &self.group
    }

    pub fn channels(&self) -> impl Iterator<Item = &str> {
        self.channels.keys().map(String::as_str)
    }

    pub fn stats(&self) -> &SessionStats {
        &self.stats
    }

    pub fn keys(&self) -> &KeyStore {
        &self.keys
    }

    pub fn sender_id(&self) -> Option<u16> {
        self.sender_id
    }

    pub fn group_discovery(&self) -> &Discovery {
        &self.group_disc
    }

    pub fn channel_discovery(&self, channel: &str) -> Option<&Discovery> {
        self.channels.get(channel).map(|c| &c.disc)
    }

    /// Whether publishing on `channel` would find keys.
    pub fn is_ready(&self, channel: &str) -> bool {
        !self.rekeying
            && self.sender_id.is_some()
            && self.keys.current_group().is_some()
            && self.keys.current_channel(channel).is_some()
    }

    pub fn counter_mut(&mut self) -> &mut SendCounter {
        &mut self.counter
    }

    /// Starts group discovery; channel discovery follows the first group
    /// commit.
    pub fn start(&mut self, now_ms: u64) {
        let events = self.group_disc.start(now_ms);
        self.apply(events, None, now_ms);
    }

    /// Rejoins the group so that a new group key, a fresh salt and a reset
    /// counter follow.
    pub fn rekey(&mut self, now_ms: u64) {
        info!("{}: rekeying", self.group);
        self.rekeying = true;
        self.start(now_ms);
    }

    /// Datagrams produced by protocol activity since the last call.
    pub fn take_outgoing(&mut self) -> Vec<Vec<u8>> {
        std::mem::take(&mut self.outbox)
    }

    pub fn next_wakeup(&self) -> Option<u64> {
        std::iter::once(&self.group_disc)
            .chain(self.channels.values().map(|c| &c.disc))
            .filter_map(Discovery::next_wakeup)
            .min()
    }

    pub fn on_timer(&mut self, now_ms: u64) {
        self.keys.purge(now_ms);
        self.reassembler.evict_expired(now_ms);
        if self.group_disc.next_wakeup().is_some_and(|t| t <= now_ms) {
            let events = self.group_disc.on_timer(now_ms);
            self.apply(events, None, now_ms);
        }
        let due: Vec<String> = self
            .channels
            .iter()
            .filter(|(_, c)| c.disc.next_wakeup().is_some_and(|t| t <= now_ms))
            .map(|(k, _)| k.clone())
            .collect();
        for name in due {
            let events = self.channels.get_mut(&name).expect("listed above").disc.on_timer(now_ms);
            self.apply(events, Some(&name), now_ms);
        }
    }

    fn apply(&mut self, events: Vec<Event>, channel: Option<&str>, now_ms: u64) {
        for ev in events {
            match ev {
                Event::Send(env) => self.outbox.push(env.encode()),
                Event::Failed(e) => warn!("{}: agreement failed in {:?}: {e}", self.group, channel.unwrap_or("<group>")),
                Event::Committed(c) => match channel {
                    None => self.commit_group(c, now_ms),
                    Some(name) => self.commit_channel(name, c, now_ms),
                },
            }
        }
    }

    fn commit_group(&mut self, c: Commit, now_ms: u64) {
        let material = kdf_expand(c.seed.as_bytes(), &key_context(GROUP_KEY_LABEL, &self.group, c.instance, 0));
        self.keys.install_group(material.with_epoch(c.instance), now_ms);
        let me = self.group_disc.uid();
        let rank = c.members.binary_search(&me).expect("committed ring contains this node");
        self.sender_id = Some(rank as u16 + 1);
        self.counter.reset();
        self.rekeying = false;
        let first = self.group_seed.is_none();
        self.group_seed = Some((c.instance, c.seed));
        info!("{}: group epoch {} (instance {}), sender id {}", self.group, c.epoch, c.instance, rank + 1);
        let names: Vec<String> = self.channels.keys().cloned().collect();
        for name in names {
            self.derive_channel(&name, now_ms);
            if first {
                let events = self.channels.get_mut(&name).expect("listed above").disc.start(now_ms);
                self.apply(events, Some(&name), now_ms);
            }
        }
    }

    fn commit_channel(&mut self, name: &str, c: Commit, now_ms: u64) {
        info!("{}: channel {name} epoch {} (instance {})", self.group, c.epoch, c.instance);
        self.channels.get_mut(name).expect("committed channel exists").seed = Some((c.instance, c.seed));
        self.derive_channel(name, now_ms);
    }

    fn derive_channel(&mut self, name: &str, now_ms: u64) {
        let (Some((group_instance, _)), Some((instance, seed))) =
            (&self.group_seed, &self.channels[name].seed)
        else {
            return;
        };
        let scope = self.channels[name].disc.scope();
        let material = kdf_expand(seed.as_bytes(), &key_context(CHANNEL_KEY_LABEL, scope, *instance, *group_instance));
        self.keys.install_channel(name, material.with_epoch(*instance), now_ms);
    }

    /// Encrypts and frames one message. All channels draw from the group's
    /// single sequence counter.
    pub fn publish(&mut self, channel: &str, payload: &[u8], now_ms: u64) -> Result<Vec<Vec<u8>>, SessionError> {
        if !self.channels.contains_key(channel) {
            return Err(SessionError::UnknownChannel(channel.to_string()));
        }
        if self.rekeying {
            return Err(SessionError::CounterExhausted);
        }
        let (Some(sender), Some(kg), Some(kch)) =
            (self.sender_id, self.keys.current_group(), self.keys.current_channel(channel))
        else {
            return Err(SessionError::NoKey);
        };
        let Some(seq) = self.counter.next() else {
            self.rekey(now_ms);
            return Err(SessionError::CounterExhausted);
        };
        let name = name_with_nul(channel);
        let enc_name = ctr_crypt(kg, &build_iv(kg.salt(), sender, seq), &name);
        let body = aead_seal(kch, &build_iv(kch.salt(), sender, seq), payload, &name);
        if self.own_tags.len() == OWN_TAG_MEMORY {
            self.own_tags.pop_front();
        }
        let tag = body[body.len() - TAG_LEN..].try_into().expect("sealed output ends in a tag");
        self.own_tags.push_back((sender, seq, tag));
        let datagrams: Vec<Vec<u8>> =
            fragment(&body, &enc_name, seq, sender, self.params.mtu)?.iter().map(|p| p.encode()).collect();
        self.stats.published += 1;
        self.stats.datagrams_sent += datagrams.len() as u64;
        Ok(datagrams)
    }

    /// Processes one datagram from the wire. Hostile input only ever bumps a
    /// drop counter.
    pub fn receive(&mut self, datagram: &[u8], now_ms: u64) -> Option<(String, Vec<u8>)> {
        let magic = match peek_magic(datagram) {
            Ok(m) => m,
            Err(_) => {
                self.stats.drop(DropReason::Malformed);
                return None;
            }
        };
        match magic {
            MAGIC_MANAGEMENT => {
                match Envelope::decode(datagram) {
                    Ok(env) => self.on_management(env, now_ms),
                    Err(_) => self.stats.drop(DropReason::Malformed),
                }
                None
            }
            MAGIC_SECURE => match SecurePacket::decode(datagram) {
                Ok(raw) => self.open(raw),
                Err(_) => {
                    self.stats.drop(DropReason::Malformed);
                    None
                }
            },
            MAGIC_FRAGMENT => {
                let raw = FragmentPacket::decode(datagram).and_then(|f| self.reassembler.insert(f, now_ms));
                match raw {
                    Ok(Some(raw)) => self.open(raw),
                    Ok(None) => None,
                    Err(_) => {
                        self.stats.drop(DropReason::Fragment);
                        None
                    }
                }
            }
            _ => {
                self.stats.drop(DropReason::BadMagic);
                None
            }
        }
    }

    fn on_management(&mut self, env: Envelope, now_ms: u64) {
        if env.scope == self.group {
            let events = self.group_disc.handle(&env, now_ms);
            return self.apply(events, None, now_ms);
        }
        let name = env.scope.channel().to_string();
        match self.channels.get_mut(&name) {
            Some(c) if env.scope.group() == self.group.group() => {
                let events = c.disc.handle(&env, now_ms);
                self.apply(events, Some(&name), now_ms);
            }
            _ => self.stats.drop(DropReason::ForeignScope),
        }
    }

    fn open(&mut self, raw: RawSecurePacket) -> Option<(String, Vec<u8>)> {
        let tail_tag = raw.tail.len().checked_sub(TAG_LEN).map(|at| &raw.tail[at..]);
        if tail_tag.is_some_and(|t| self.own_tags.iter().any(|o| (o.0, o.1, &o.2[..]) == (raw.sender_id, raw.msg_seqno, t))) {
            self.stats.drop(DropReason::Loopback);
            return None;
        }
        let mut name = None;
        for slot in &self.keys.group {
            let kg = &slot.material;
            let mut stream = CtrStream::new(kg, &build_iv(kg.salt(), raw.sender_id, raw.msg_seqno));
            let bound = raw.tail.len().saturating_sub(TAG_LEN).min(MAX_CHANNEL_LEN + 1);
            let mut plain = Vec::new();
            for &c in &raw.tail[..bound] {
                match stream.next_byte(c) {
                    0 => break,
                    b => plain.push(b),
                }
            }
            if plain.len() < bound && !plain.is_empty() && plain.iter().all(|b| b.is_ascii_graphic()) {
                if let Ok(s) = String::from_utf8(plain) {
                    name = Some(s);
                    break;
                }
            }
        }
        let Some(channel) = name else {
            self.stats.drop(DropReason::NoTerminator);
            return None;
        };
        if !self.channels.contains_key(&channel) {
            self.stats.drop(DropReason::Unsubscribed);
            return None;
        }
        let aad = name_with_nul(&channel);
        let pkt = raw.split(aad.len()).ok()?;
        let Some(slots) = self.keys.channels.get_mut(&channel).filter(|s| !s.is_empty()) else {
            self.stats.drop(DropReason::UnknownChannelKey);
            return None;
        };
        for (age, slot) in slots.iter_mut().enumerate() {
            let kch = &slot.material;
            let Ok(payload) = aead_open(kch, &build_iv(kch.salt(), pkt.sender_id, pkt.msg_seqno), &pkt.body, &aad) else {
                continue;
            };
            let window = match slot.windows.entry(pkt.sender_id) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert((self.params.replay)(self.params.window).expect("size validated at construction"))
                }
            };
            if !window.update(pkt.msg_seqno) {
                self.stats.drop(DropReason::Replayed);
                return None;
            }
            self.stats.delivered += 1;
            if age > 0 {
                self.stats.previous_epoch_deliveries += 1;
            }
            return Some((channel, payload));
        }
        self.stats.drop(DropReason::AuthFailure);
        None
    }

    /// Raw key bytes of the current group and channel materials. Test
    /// oracles only.
    #[doc(hidden)]
    pub fn current_key_bytes(&self, channel: &str) -> Option<([u8; 16], [u8; 16])> {
        Some((*self.keys.current_group()?.key_bytes(), *self.keys.current_channel(channel)?.key_bytes()))
    }

    pub fn phase(&self) -> Phase {
        self.group_disc.phase()
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use rand::{Rng, RngCore};

    use super::*;
    use crate::cluster::{default_params, TestPki, DEFAULT_GROUP};
    use crate::config::{DEFAULT_GRACE_MS, DEFAULT_MTU};
    use crate::wire::encode_plain_lcm;

    const NOW: u64 = 1_750_000_000_000;

    fn seed(tag: u8) -> SessionSeed {
        SessionSeed::from_bytes(vec![tag; 33])
    }

    fn commit(scope: &LcmDomain, instance: u64, seed: SessionSeed, members: &[u16]) -> Commit {
        Commit { scope: scope.clone(), instance, epoch: instance, seed, members: members.to_vec() }
    }

    struct Fixture {
        pki: TestPki,
        rng: ChaCha20Rng,
    }

    impl Fixture {
        fn new() -> Self {
            Fixture { pki: TestPki::new(default_params().suite, 3, NOW).unwrap(), rng: ChaCha20Rng::seed_from_u64(3) }
        }

        fn session(&mut self, channels: &[&str]) -> Session {
            let channels: Vec<String> = channels.iter().map(|c| c.to_string()).collect();
            let id = self.pki.member(DEFAULT_GROUP, &channels).unwrap();
            Session::new(id, self.pki.roots.clone(), DEFAULT_GROUP, &channels, default_params(), &mut self.rng, NOW)
                .unwrap()
        }
    }

    /// Installs the keys a successful agreement would have produced.
    fn key(sessions: &mut [&mut Session], group_instance: u64, group_seed: u8, channel_seeds: &[(&str, u8)], now_ms: u64) {
        let mut members: Vec<u16> = sessions.iter().map(|s| s.group_disc.uid()).collect();
        members.sort_unstable();
        for s in sessions.iter_mut() {
            let scope = s.group.clone();
            s.commit_group(commit(&scope, group_instance, seed(group_seed), &members), now_ms);
            for &(name, tag) in channel_seeds {
                if let Some(c) = s.channels.get(name) {
                    let scope = c.disc.scope().clone();
                    s.commit_channel(name, commit(&scope, 1, seed(tag), &members), now_ms);
                }
            }
            s.take_outgoing();
        }
    }

    fn channel_name(rng: &mut impl Rng) -> String {
        let len = rng.gen_range(1..=40);
        (0..len).map(|_| rng.gen_range(b'!'..=b'~') as char).filter(|&c| c != ':').chain(std::iter::once('x')).collect()
    }

    #[test]
    fn overhead_is_eighteen_bytes_and_round_trips() {
        let mut fx = Fixture::new();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..200 {
            let name = channel_name(&mut rng);
            let mut a = fx.session(&[&name]);
            let mut b = fx.session(&[&name]);
            key(&mut [&mut a, &mut b], 1, 1, &[(&name, 2)], NOW);
            let mut payload = vec![0u8; rng.gen_range(0..1200)];
            rng.fill_bytes(&mut payload);
            let dgs = a.publish(&name, &payload, NOW).unwrap();
            assert_eq!(dgs.len(), 1);
            let plain = encode_plain_lcm(&name, 0, &payload).unwrap();
            assert_eq!(dgs[0].len() - plain.len(), 18);
            assert_eq!(b.receive(&dgs[0], NOW), Some((name.clone(), payload)));
        }
    }

    #[test]
    fn single_bit_corruption_never_delivers() {
        let mut fx = Fixture::new();
        let mut a = fx.session(&["chatter", "status"]);
        let mut b = fx.session(&["chatter", "status"]);
        key(&mut [&mut a, &mut b], 1, 1, &[("chatter", 2), ("status", 3)], NOW);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let originals: Vec<Vec<u8>> = (0..100)
            .map(|i| {
                let ch = if i % 2 == 0 { "chatter" } else { "status" };
                let mut p = vec![0u8; rng.gen_range(1..300)];
                rng.fill_bytes(&mut p);
                a.publish(ch, &p, NOW).unwrap().remove(0)
            })
            .collect();
        for _ in 0..10_000 {
            let mut d = originals[rng.gen_range(0..originals.len())].clone();
            let bit = rng.gen_range(0..d.len() * 8);
            d[bit / 8] ^= 1 << (bit % 8);
            assert_eq!(b.receive(&d, NOW), None);
        }
        assert_eq!(b.stats().delivered, 0);
        // The untouched originals still go through: corruption never advanced a window.
        for d in &originals {
            assert!(b.receive(d, NOW).is_some());
        }
    }

    #[test]
    fn replayed_datagram_is_dropped() {
        let mut fx = Fixture::new();
        let mut a = fx.session(&["chatter"]);
        let mut b = fx.session(&["chatter"]);
        key(&mut [&mut a, &mut b], 1, 1, &[("chatter", 2)], NOW);
        let d = a.publish("chatter", b"hello", NOW).unwrap().remove(0);
        assert!(b.receive(&d, NOW).is_some());
        assert_eq!(b.receive(&d, NOW), None);
        assert_eq!(b.stats().dropped(DropReason::Replayed), 1);
    }

    #[test]
    fn own_loopback_is_dropped_without_decryption() {
        let mut fx = Fixture::new();
        let mut a = fx.session(&["chatter"]);
        let mut b = fx.session(&["chatter"]);
        key(&mut [&mut a, &mut b], 1, 1, &[("chatter", 2)], NOW);
        let big = vec![7; 5_000];
        for payload in [&b"hello"[..], &big] {
            let dgs = a.publish("chatter", payload, NOW).unwrap();
            for d in &dgs {
                assert_eq!(a.receive(d, NOW), None);
            }
            let got: Vec<_> = dgs.iter().filter_map(|d| b.receive(d, NOW)).collect();
            assert_eq!(got, [("chatter".to_string(), payload.to_vec())]);
        }
        assert_eq!(a.stats().dropped(DropReason::Loopback), 2);
        assert_eq!(a.stats().total_dropped(), 2);
    }

    #[test]
    fn unsubscribed_and_foreign_traffic_is_dropped() {
        let mut fx = Fixture::new();
        let mut a = fx.session(&["chatter", "status"]);
        let mut b = fx.session(&["chatter"]);
        key(&mut [&mut a, &mut b], 1, 1, &[("chatter", 2), ("status", 3)], NOW);
        let d = a.publish("status", b"not for b", NOW).unwrap().remove(0);
        assert_eq!(b.receive(&d, NOW), None);
        assert_eq!(b.stats().dropped(DropReason::Unsubscribed), 1);
        assert!(matches!(b.publish("status", b"x", NOW), Err(SessionError::UnknownChannel(_))));
        assert_eq!(b.receive(b"LC02\0\0\0\0plain\0text", NOW), None);
        assert_eq!(b.stats().dropped(DropReason::BadMagic), 1);
    }

    #[test]
    fn group_key_alone_cannot_forge_channel_traffic() {
        let mut fx = Fixture::new();
        let mut honest = fx.session(&["chatter"]);
        let mut insider = fx.session(&["chatter"]);
        key(&mut [&mut honest], 1, 1, &[("chatter", 2)], NOW);
        // Same group key, different channel key.
        key(&mut [&mut insider], 1, 1, &[("chatter", 9)], NOW);
        for i in 0..20 {
            let d = insider.publish("chatter", format!("forged {i}").as_bytes(), NOW).unwrap().remove(0);
            assert_eq!(honest.receive(&d, NOW), None);
        }
        assert_eq!(honest.stats().dropped(DropReason::AuthFailure), 20);
    }

    #[test]
    fn counter_exhaustion_forces_rekey_and_restarts_at_zero() {
        let mut fx = Fixture::new();
        let mut a = fx.session(&["chatter"]);
        let mut b = fx.session(&["chatter"]);
        key(&mut [&mut a, &mut b], 1, 1, &[("chatter", 2)], NOW);
        a.counter_mut().set_last_used(u32::MAX - 1);
        let last = a.publish("chatter", b"last", NOW).unwrap().remove(0);
        assert_eq!(SecurePacket::decode(&last).unwrap().msg_seqno, u32::MAX);
        assert!(matches!(a.publish("chatter", b"one too many", NOW), Err(SessionError::CounterExhausted)));
        assert!(!a.is_ready("chatter"));
        // The rekey broadcast a fresh JOIN for the group.
        let out = a.take_outgoing();
        assert_eq!(out.len(), 1);
        assert_eq!(Envelope::decode(&out[0]).unwrap().kind, crate::wire::Kind::Join);
        assert!(matches!(a.publish("chatter", b"still waiting", NOW), Err(SessionError::CounterExhausted)));

        key(&mut [&mut a, &mut b], 2, 5, &[], NOW + 1_000);
        assert!(a.is_ready("chatter"));
        let d = a.publish("chatter", b"fresh", NOW + 1_000).unwrap().remove(0);
        assert_eq!(SecurePacket::decode(&d).unwrap().msg_seqno, 0);
        assert_eq!(b.receive(&d, NOW + 1_000), Some(("chatter".into(), b"fresh".to_vec())));
        assert_eq!(b.stats().previous_epoch_deliveries, 0);
    }

    #[test]
    fn previous_keys_accepted_only_during_grace() {
        let mut fx = Fixture::new();
        let mut a = fx.session(&["chatter"]);
        let mut b = fx.session(&["chatter"]);
        key(&mut [&mut a, &mut b], 1, 1, &[("chatter", 2)], NOW);
        let early = a.publish("chatter", b"old epoch", NOW).unwrap().remove(0);
        let late = a.publish("chatter", b"too late", NOW).unwrap().remove(0);
        // b moves on; a's datagrams are still in flight under the old keys.
        key(&mut [&mut b], 2, 5, &[], NOW + 100);
        assert_eq!(b.keys().group_len(), 2);
        assert_eq!(b.receive(&early, NOW + 200), Some(("chatter".into(), b"old epoch".to_vec())));
        assert_eq!(b.stats().previous_epoch_deliveries, 1);
        b.on_timer(NOW + 100 + DEFAULT_GRACE_MS);
        assert_eq!(b.keys().group_len(), 1);
        assert_eq!(b.receive(&late, NOW + 100 + DEFAULT_GRACE_MS), None);
    }

    #[test]
    fn key_store_keeps_two_materials() {
        let mut store = KeyStore::new(1_000);
        for i in 0..5u8 {
            store.install_group(kdf_expand(&[i], b"ctx"), NOW + u64::from(i));
        }
        assert_eq!(store.group_len(), KEPT_MATERIALS);
        assert_eq!(store.current_group().unwrap().key_bytes(), kdf_expand(&[4], b"ctx").key_bytes());
        store.purge(NOW + 4 + 1_000);
        assert_eq!(store.group_len(), 1);
        assert!(store.current_group().is_some());
    }

    #[test]
    fn ivs_are_unique_across_senders_and_channels() {
        let mut fx = Fixture::new();
        let mut nodes: Vec<Session> = (0..3).map(|_| fx.session(&["chatter", "status"])).collect();
        key(&mut nodes.iter_mut().collect::<Vec<_>>(), 1, 1, &[("chatter", 2), ("status", 3)], NOW);
        let ids: HashSet<u16> = nodes.iter().map(|s| s.sender_id().unwrap()).collect();
        assert_eq!(ids.len(), 3);
        let mut seen = HashSet::new();
        for i in 0..3_000 {
            let s = &mut nodes[i % 3];
            let ch = if i % 7 < 3 { "chatter" } else { "status" };
            let d = s.publish(ch, b"x", NOW).unwrap().remove(0);
            let p = SecurePacket::decode(&d).unwrap();
            assert!(seen.insert((p.sender_id, p.msg_seqno)), "IV reused");
        }
    }

    #[test]
    fn large_payload_fragments_and_reassembles() {
        let mut fx = Fixture::new();
        let mut a = fx.session(&["bulk"]);
        let mut b = fx.session(&["bulk"]);
        key(&mut [&mut a, &mut b], 1, 1, &[("bulk", 2)], NOW);
        let mut payload = vec![0u8; 100_000];
        ChaCha20Rng::seed_from_u64(4).fill_bytes(&mut payload);
        let dgs = a.publish("bulk", &payload, NOW).unwrap();
        assert!(dgs.len() > 1);
        assert!(dgs.iter().all(|d| d.len() <= DEFAULT_MTU));
        let mut got = None;
        for d in dgs.iter().rev() {
            got = got.or(b.receive(d, NOW));
        }
        assert_eq!(got, Some(("bulk".into(), payload)));
    }
}
