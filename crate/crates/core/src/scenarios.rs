//! Seeded end-to-end runs on a [`SimCluster`], shared by the integration
//! tests, the acceptance suite and the discovery benchmark. Every function is
//! a pure function of its arguments.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::cluster::{default_params, SimCluster, TestPki, DEFAULT_GROUP};
use crate::identity::{LcmDomain, RootStore};
use crate::session::SessionError;
use crate::transport::SimConfig;
use crate::wire::{
    peek_magic, CertBlob, Envelope, GkaRoundPayload, JoinPayload, JoinResponsePayload, Kind, Member, SecurePacket,
    MAGIC_MANAGEMENT,
};

pub const CHANNEL: &str = "chatter";
/// Virtual time allowed for all keys to agree.
pub const CONVERGENCE_LIMIT_MS: u64 = 30_000;

fn channels() -> Vec<String> {
    vec![CHANNEL.to_string()]
}

fn cluster(sim: &SimConfig, n: usize) -> Result<(SimCluster, TestPki), SessionError> {
    let mut pki = TestPki::new(default_params().suite, sim.seed, sim.start_ms)?;
    let c = SimCluster::build(sim, &mut pki, &default_params(), DEFAULT_GROUP, &channels(), n)?;
    Ok((c, pki))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvergenceRun {
    pub n: usize,
    pub seed: u64,
    /// Virtual milliseconds until every node held identical group and
    /// channel keys, if that happened within the limit.
    pub converged_ms: Option<u64>,
    pub joins: u64,
    pub responses: u64,
    pub group_key: Option<[u8; 16]>,
    pub channel_key: Option<[u8; 16]>,
    pub transcript: [u8; 32],
}

/// `n` nodes start together and run group then channel discovery. Counts
/// are taken at the moment keys agree, or at the limit.
pub fn convergence(n: usize, sim: &SimConfig) -> Result<ConvergenceRun, SessionError> {
    let (mut c, _) = cluster(sim, n)?;
    c.start_all();
    let start = c.now_ms();
    let ok = c.run_until_ready(start + CONVERGENCE_LIMIT_MS, &channels());
    let (joins, responses) = c.discovery_counts();
    let keys = c.nodes[0].session.current_key_bytes(CHANNEL);
    Ok(ConvergenceRun {
        n,
        seed: sim.seed,
        converged_ms: ok.then(|| c.now_ms() - start),
        joins,
        responses,
        group_key: keys.map(|k| k.0),
        channel_key: keys.map(|k| k.1),
        transcript: c.transcript_digest(),
    })
}

/// Senders observed in one Join against the ones the protocol allows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinInstance {
    pub scope: String,
    pub instance: u64,
    pub p: Vec<u16>,
    pub j: Vec<u16>,
    pub expected: BTreeSet<u16>,
    pub senders: BTreeSet<u16>,
}

#[derive(Debug, Clone)]
pub struct JoinRun {
    pub joins: Vec<JoinInstance>,
    /// Nodes that recorded different (P, J) for the same instance.
    pub inconsistent: usize,
    pub keys_agree: bool,
}

impl JoinRun {
    pub fn efficient(&self) -> bool {
        self.inconsistent == 0 && !self.joins.is_empty() && self.joins.iter().all(|j| j.senders == j.expected)
    }
}

/// J ∪ {first, second, last of P}.
pub fn permitted_join_senders(p: &[u16], j: &[u16]) -> BTreeSet<u16> {
    let mut s: BTreeSet<u16> = j.iter().copied().collect();
    s.extend(p.first());
    s.extend(p.get(1));
    s.extend(p.last());
    s
}

/// Round-message signers per (scope, instance) in a transcript.
fn round_senders(c: &SimCluster) -> BTreeMap<(String, u64), BTreeSet<u16>> {
    let mut out: BTreeMap<(String, u64), BTreeSet<u16>> = BTreeMap::new();
    for sent in &c.transcript {
        if peek_magic(&sent.datagram) != Ok(MAGIC_MANAGEMENT) {
            continue;
        }
        let Ok(env) = Envelope::decode(&sent.datagram) else { continue };
        if !matches!(env.kind, Kind::GkaRound1 | Kind::GkaRound2) {
            continue;
        }
        if let Ok(msg) = GkaRoundPayload::decode(&env.payload) {
            out.entry((env.scope.to_string(), msg.d)).or_default().insert(env.signer_uid);
        }
    }
    out
}

/// `p` incumbents agree, then `j` newcomers start at once. Loss-free, so
/// every scope sees exactly one KeyAgree followed by Joins.
pub fn join(p: usize, j: usize, seed: u64) -> Result<JoinRun, SessionError> {
    let sim = SimConfig { seed, loss: 0.0, ..SimConfig::default() };
    let (mut c, mut pki) = cluster(&sim, p)?;
    c.start_all();
    let limit = c.now_ms() + CONVERGENCE_LIMIT_MS;
    c.run_until_ready(limit, &channels());
    c.record = true;
    for _ in 0..j {
        let id = pki.member(DEFAULT_GROUP, &channels())?;
        let idx = c.add_member(id, pki.roots.clone(), &default_params(), DEFAULT_GROUP, &channels())?;
        c.start(idx);
    }
    let limit = c.now_ms() + CONVERGENCE_LIMIT_MS;
    let keys_agree = c.run_until_ready(limit, &channels());
    // Let trailing retransmissions land in the transcript.
    let settle = c.now_ms() + 2_000;
    c.run_until(settle);

    let senders = round_senders(&c);
    let mut records: BTreeMap<(String, u64), BTreeSet<(Vec<u16>, Vec<u16>)>> = BTreeMap::new();
    for node in &c.nodes {
        let s = &node.session;
        let discs = std::iter::once(s.group_discovery()).chain(s.channels().filter_map(|ch| s.channel_discovery(ch)));
        for d in discs {
            for a in d.agreements().iter().filter(|a| !a.p.is_empty()) {
                records.entry((d.scope().to_string(), a.instance)).or_default().insert((a.p.clone(), a.j.clone()));
            }
        }
    }
    let mut joins = Vec::new();
    let mut inconsistent = 0;
    for ((scope, instance), views) in records {
        inconsistent += views.len() - 1;
        let (p, j) = views.into_iter().next().expect("entry has a view");
        let expected = permitted_join_senders(&p, &j);
        let senders = senders.get(&(scope.clone(), instance)).cloned().unwrap_or_default();
        joins.push(JoinInstance { scope, instance, p, j, expected, senders });
    }
    Ok(JoinRun { joins, inconsistent, keys_agree })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayRun {
    pub seed: u64,
    pub injected: usize,
    /// Every honest node, joiner included, ends on one key at a fresh
    /// group instance.
    pub honest_agree: bool,
    pub group_instance: u64,
    /// Round messages rejected as stale or replayed, over all nodes.
    pub rejected: u64,
}

/// Records the round-2 messages of the initial KeyAgree, then replays them
/// from an outside endpoint throughout a later Join.
pub fn replay_round2(seed: u64) -> Result<ReplayRun, SessionError> {
    let n = 3 + (seed % 4) as usize;
    let sim = SimConfig { seed, loss: 0.0, ..SimConfig::default() };
    let (mut c, mut pki) = cluster(&sim, n)?;
    let adversary = c.add_observer();
    c.record = true;
    c.start_all();
    let limit = c.now_ms() + CONVERGENCE_LIMIT_MS;
    c.run_until_ready(limit, &channels());
    let recorded: Vec<Vec<u8>> = c
        .transcript
        .iter()
        .filter(|s| Envelope::decode(&s.datagram).is_ok_and(|e| e.kind == Kind::GkaRound2))
        .map(|s| s.datagram.clone())
        .collect();
    c.record = false;

    let id = pki.member(DEFAULT_GROUP, &channels())?;
    let idx = c.add_member(id, pki.roots.clone(), &default_params(), DEFAULT_GROUP, &channels())?;
    c.start(idx);
    let join_start = c.now_ms();
    let mut injected = 0;
    let mut t = join_start;
    while t < join_start + 4_000 {
        c.run_until(t);
        for d in &recorded {
            c.send_raw(adversary, d.clone());
            injected += 1;
        }
        t += 50;
    }
    let limit = c.now_ms() + CONVERGENCE_LIMIT_MS;
    let honest_agree = c.run_until_ready(limit, &channels());
    let group_instance = c.nodes.iter().map(|n| n.session.keys().current_group().map_or(0, |k| k.epoch())).min().unwrap_or(0);
    let rejected = c
        .nodes
        .iter()
        .flat_map(|n| {
            let s = &n.session;
            std::iter::once(s.group_discovery()).chain(s.channels().filter_map(|ch| s.channel_discovery(ch)))
        })
        .map(|d| {
            let drops = &d.stats().drops;
            ["replayed round", "wrong instance", "no matching instance", "unknown sender"]
                .iter()
                .map(|r| drops.get(r).copied().unwrap_or(0))
                .sum::<u64>()
        })
        .sum();
    Ok(ReplayRun { seed, injected, honest_agree, group_instance, rejected })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthorizationRun {
    pub seed: u64,
    /// Certificate issued by an unknown CA (with the right SANs) rather than
    /// by the trusted CA for some other group.
    pub foreign_ca: bool,
    pub honest_agree: bool,
    pub impostor_datagrams: u64,
    /// Impostor traffic that reached an application at an honest node.
    pub accepted_from_impostor: u64,
    /// Honest discoveries that ever listed the impostor's certificate.
    pub impostor_admitted: usize,
    /// Honest payloads the impostor could read.
    pub impostor_decrypted: u64,
    pub impostor_has_honest_keys: bool,
}

impl AuthorizationRun {
    pub fn isolated(&self) -> bool {
        self.honest_agree
            && self.impostor_datagrams > 0
            && self.accepted_from_impostor == 0
            && self.impostor_admitted == 0
            && self.impostor_decrypted == 0
            && !self.impostor_has_honest_keys
    }
}

const IMPOSTOR_TAG: &[u8] = b"impostor:";

/// Three honest nodes plus an impostor that runs the full protocol,
/// forges management messages and publishes data. Even seeds use a
/// certificate from an untrusted CA, odd seeds a trusted certificate for a
/// different group.
pub fn unauthorized_node(seed: u64) -> Result<AuthorizationRun, SessionError> {
    let foreign_ca = seed % 2 == 0;
    let sim = SimConfig { seed, loss: 0.0, ..SimConfig::default() };
    let (mut c, mut pki) = cluster(&sim, 3)?;
    let now = c.now_ms();
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xbad);

    let (impostor_id, impostor_group) = if foreign_ca {
        let mut rogue = TestPki::new(default_params().suite, seed ^ 0xdead, now)?;
        (rogue.member(DEFAULT_GROUP, &channels())?, DEFAULT_GROUP.to_string())
    } else {
        let other = "239.9.9.9:9999".to_string();
        (pki.member(&other, &channels())?, other)
    };
    let impostor_cert = impostor_id.certificate().clone();
    let mut roots = RootStore::default();
    roots.add_der(pki.ca.root_der())?;
    if foreign_ca {
        roots.add_der(impostor_cert.chain().last().expect("chain").as_slice())?;
    }
    let rogue_roots = Arc::new(roots);
    let imp =
        c.add_member(impostor_id.clone(), rogue_roots, &default_params(), &impostor_group, &channels())?;
    c.start_all();

    // Hand-forged management traffic for the honest scopes.
    let scopes = [LcmDomain::group_scope(DEFAULT_GROUP)?, LcmDomain::new(DEFAULT_GROUP, CHANNEL)?];
    let imp_net = c.nodes[imp].net_id;
    let claimed_uid = impostor_cert.urns().first().map_or(1, |u| u.id());
    let blob = CertBlob(impostor_cert.chain().to_vec());
    let mut forged = Vec::new();
    for scope in &scopes {
        let join = JoinPayload { t_ms: now + 300, next_instance: 1, cert: blob.clone() };
        forged.push(Envelope::signed(claimed_uid, Kind::Join, scope.clone(), join.encode(), |b| impostor_id.sign(b)));
        let me = Member { uid: claimed_uid, cert: blob.clone() };
        let resp = JoinResponsePayload::new(now + 300, 1, blob.clone(), vec![], vec![me]);
        forged.push(Envelope::signed(claimed_uid, Kind::JoinResponse, scope.clone(), resp.encode(), |b| impostor_id.sign(b)));
        for round in 1..=2u8 {
            for d in 1..=3 {
                let suite = default_params().suite;
                let x = suite.random_scalar(&mut rng);
                let element = suite.serialize(&suite.exp(&suite.generator(), &x));
                for uid in 1..=4 {
                    let msg = GkaRoundPayload { uid, round, element: element.clone(), d };
                    let kind = if round == 1 { Kind::GkaRound1 } else { Kind::GkaRound2 };
                    forged.push(Envelope::signed(uid, kind, scope.clone(), msg.encode(), |b| impostor_id.sign(b)));
                }
            }
        }
    }
    c.record = true;
    let mut t = now;
    while t < now + 3_000 {
        c.run_until(t);
        for env in &forged {
            c.send_raw(imp_net, env.encode());
        }
        for _ in 0..4 {
            let mut body = vec![0u8; rng.gen_range(17..120)];
            rng.fill_bytes(&mut body);
            let mut name = vec![0u8; rng.gen_range(2..12)];
            rng.fill_bytes(&mut name);
            let pkt = SecurePacket { msg_seqno: rng.gen(), sender_id: rng.gen_range(1..5), enc_channelname: name, body };
            c.send_raw(imp_net, pkt.encode());
        }
        t += 250;
    }
    let honest: Vec<usize> = (0..c.nodes.len()).filter(|&i| i != imp).collect();
    let limit = c.now_ms() + CONVERGENCE_LIMIT_MS;
    let honest_agree = c.run_while(limit, |c| {
        honest.iter().all(|&i| c.nodes[i].session.is_ready(CHANNEL))
            && honest.windows(2).all(|w| {
                c.nodes[w[0]].session.current_key_bytes(CHANNEL) == c.nodes[w[1]].session.current_key_bytes(CHANNEL)
            })
    });

    // Traffic both ways after the honest group settled.
    for round in 0..5 {
        for &i in &honest {
            c.publish(i, CHANNEL, format!("honest {i} {round}").as_bytes())?;
        }
        if c.nodes[imp].session.is_ready(CHANNEL) {
            c.publish(imp, CHANNEL, &[IMPOSTOR_TAG, b"payload"].concat())?;
        }
        let until = c.now_ms() + 200;
        c.run_until(until);
    }
    let impostor_datagrams = c.transcript.iter().filter(|s| s.from == imp_net).count() as u64;

    let accepted_from_impostor = honest
        .iter()
        .flat_map(|&i| c.nodes[i].delivered.iter())
        .filter(|(_, p)| p.starts_with(IMPOSTOR_TAG))
        .count() as u64;
    let fp = *impostor_cert.fingerprint();
    let impostor_admitted = honest
        .iter()
        .flat_map(|&i| {
            let s = &c.nodes[i].session;
            std::iter::once(s.group_discovery()).chain(s.channels().filter_map(|ch| s.channel_discovery(ch)))
        })
        .filter(|d| d.state().p.values().chain(d.state().j.values()).any(|cert| *cert.fingerprint() == fp))
        .count();
    let impostor_decrypted =
        c.nodes[imp].delivered.iter().filter(|(_, p)| p.starts_with(b"honest")).count() as u64;
    let honest_keys = c.nodes[honest[0]].session.current_key_bytes(CHANNEL);
    let imp_keys = c.nodes[imp].session.current_key_bytes(CHANNEL);
    let impostor_has_honest_keys = match (honest_keys, imp_keys) {
        (Some(h), Some(i)) => h.0 == i.0 || h.1 == i.1,
        _ => false,
    };
    Ok(AuthorizationRun {
        seed,
        foreign_ca,
        honest_agree,
        impostor_datagrams,
        accepted_from_impostor,
        impostor_admitted,
        impostor_decrypted,
        impostor_has_honest_keys,
    })
}
