//! End-to-end acceptance checks, one line per criterion. Runs without the
//! libtest harness so criteria execute one after another: the latency
//! criterion measures wall-clock time and must not share the CPU with the
//! simulations.
//!
//! `cargo test --test acceptance -- 3 7` runs a subset. With
//! `LCMSEC_BLESS=1` the pinned discovery counts are regenerated.

use std::collections::{BTreeSet, HashSet};
use std::net::SocketAddrV4;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use lcmsec::cluster::{default_params, SimCluster, TestPki, DEFAULT_GROUP};
use lcmsec::config::DEFAULT_MTU;
use lcmsec::crypto::{CurveSuite, P256Suite};
use lcmsec::dbgka::{Gka, InstanceLedger, Phase, RingConfig, RingMember};
use lcmsec::discovery::{compare, DiscoveryState};
use lcmsec::identity::{Identity, LcmDomain, PeerCertificate, UrnRequest, WILDCARD_CHANNEL};
use lcmsec::registry;
use lcmsec::scenarios;
use lcmsec::transport::SimConfig;
use lcmsec::wire::{encode_plain_lcm, Envelope};
use lcmsec_cli::discovery_bench::{self, DiscoveryOpts, DiscoveryRow};
use lcmsec_cli::latency::{self, datagrams_per_message, Codec, LatencyOpts};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn chans(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn random_name(rng: &mut ChaCha20Rng) -> String {
    const ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_-./";
    let len = rng.gen_range(1..=64);
    (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())] as char).collect()
}

/// Two members of the default group holding keys for `channels`.
fn keyed_pair(seed: u64, channels: &[String], wildcard: bool) -> Result<SimCluster, String> {
    let sim = SimConfig { seed, ..SimConfig::default() };
    let params = default_params();
    let mut pki = TestPki::new(params.suite.clone(), seed, sim.start_ms).map_err(err)?;
    let mut c = SimCluster::new(&sim);
    for _ in 0..2 {
        let id = if wildcard {
            let req = |channel: &str| UrnRequest { group: DEFAULT_GROUP.into(), channel: channel.into(), id: None };
            pki.issue(&[req(""), req(WILDCARD_CHANNEL)]).map_err(err)?
        } else {
            pki.member(DEFAULT_GROUP, channels).map_err(err)?
        };
        c.add_member(id, pki.roots.clone(), &params, DEFAULT_GROUP, channels).map_err(err)?;
    }
    c.start_all();
    let start = c.now_ms();
    ensure(c.run_until_ready(start + 60_000, channels), || "pair did not establish keys".into())?;
    Ok(c)
}

fn overhead() -> Check {
    const PAIRS: usize = 200;
    let mut rng = ChaCha20Rng::seed_from_u64(101);
    // Each channel costs a key agreement, so pairs draw from a pool.
    let names: BTreeSet<String> = (0..25).map(|_| random_name(&mut rng)).collect();
    let names: Vec<String> = names.into_iter().collect();
    let mut c = keyed_pair(1, &names, true)?;
    let now = c.now_ms();
    let mut overheads = BTreeSet::new();
    for _ in 0..PAIRS {
        let name = names.choose(&mut rng).expect("non-empty pool");
        let payload: Vec<u8> = (0..rng.gen_range(0..=1200)).map(|_| rng.gen()).collect();
        let secure = c.nodes[0].session.publish(name, &payload, now).map_err(err)?;
        ensure(secure.len() == 1, || format!("{name}: {} datagrams", secure.len()))?;
        let plain = encode_plain_lcm(name, 0, &payload).map_err(err)?;
        overheads.insert(secure[0].len() as i64 - plain.len() as i64);
        let got = c.nodes[1].session.receive(&secure[0], now);
        ensure(got == Some((name.clone(), payload)), || format!("{name}: did not round-trip"))?;
    }
    ensure(overheads == BTreeSet::from([18]), || format!("overheads {overheads:?}"))?;
    Ok(format!("{PAIRS} pairs over {} channels, overhead exactly 18 bytes", names.len()))
}

fn integrity() -> Check {
    let mut c = keyed_pair(2, &chans(&["chatter"]), false)?;
    let mut rng = ChaCha20Rng::seed_from_u64(202);
    let now = c.now_ms();
    let (mut altered, mut unaltered) = (0, 0);
    const TRIALS: usize = 10_000;
    for _ in 0..TRIALS {
        let payload: Vec<u8> = (0..rng.gen_range(0..=300)).map(|_| rng.gen()).collect();
        let d = c.nodes[0].session.publish("chatter", &payload, now).map_err(err)?.remove(0);
        let bit = rng.gen_range(0..d.len() * 8);
        let mut bad = d.clone();
        bad[bit / 8] ^= 1 << (bit % 8);
        match c.nodes[1].session.receive(&bad, now) {
            Some(m) if m == ("chatter".to_string(), payload.clone()) => unaltered += 1,
            Some(_) => altered += 1,
            None => {}
        }
        // The untouched original must still be accepted afterwards.
        ensure(c.nodes[1].session.receive(&d, now).is_some(), || "original rejected after a corrupted copy".into())?;
    }
    ensure(altered == 0 && unaltered == 0, || format!("{altered} altered and {unaltered} corrupted deliveries"))?;
    Ok(format!("{TRIALS} single-bit corruptions, 0 deliveries"))
}

// Key agreement driven directly, outside any session.

struct GkaNode {
    me: Identity,
    gka: Gka,
    ledger: InstanceLedger,
    seed: Option<Vec<u8>>,
}

const GKA_NOW: u64 = 1_750_000_000_000;

fn ring_member(id: &Identity) -> RingMember {
    RingMember { uid: id.certificate().urns()[0].id(), cert: id.certificate().clone() }
}

/// Broadcasts until quiescent; returns the signer of every message sent.
fn broadcast(nodes: &mut [GkaNode], mut queue: Vec<(usize, Envelope)>) -> Result<BTreeSet<u16>, String> {
    let mut senders = BTreeSet::new();
    while let Some((from, env)) = queue.pop() {
        senders.insert(env.signer_uid);
        for (k, node) in nodes.iter_mut().enumerate().filter(|(k, _)| *k != from) {
            let step = node.gka.handle(&env, &node.me, &mut node.ledger, GKA_NOW).map_err(err)?;
            if let Some(s) = step.seed {
                node.seed = Some(s.as_bytes().to_vec());
            }
            if let Some(out) = step.send {
                queue.insert(0, (k, out));
            }
        }
    }
    Ok(senders)
}

fn start(cfgs: Vec<(Identity, RingConfig)>, rng: &mut ChaCha20Rng) -> Result<(Vec<GkaNode>, Vec<(usize, Envelope)>), String> {
    let mut nodes = Vec::new();
    let mut queue = Vec::new();
    for (k, (me, cfg)) in cfgs.into_iter().enumerate() {
        let mut ledger = InstanceLedger::new();
        let (gka, out) = Gka::start(cfg, &me, &mut ledger, rng, GKA_NOW, 2_000).map_err(err)?;
        queue.extend(out.map(|o| (k, o)));
        nodes.push(GkaNode { me, gka, ledger, seed: None });
    }
    Ok((nodes, queue))
}

/// g^(x_1 x_2 + x_2 x_3 + ... + x_n x_1) from the raw scalars with plain
/// curve arithmetic.
fn ring_oracle(scalars: &[Vec<u8>]) -> Vec<u8> {
    use p256::elliptic_curve::sec1::ToEncodedPoint;
    use p256::elliptic_curve::PrimeField;
    let s: Vec<p256::Scalar> =
        scalars.iter().map(|b| p256::Scalar::from_repr(*p256::FieldBytes::from_slice(b)).unwrap()).collect();
    let e = (0..s.len()).fold(p256::Scalar::ZERO, |acc, i| acc + s[i] * s[(i + 1) % s.len()]);
    (p256::ProjectivePoint::GENERATOR * e).to_affine().to_encoded_point(true).as_bytes().to_vec()
}

/// Scalars of the active nodes in ring order.
fn ring_scalars(nodes: &[GkaNode], ring: &[u16]) -> Result<Vec<Vec<u8>>, String> {
    ring.iter()
        .map(|uid| {
            nodes
                .iter()
                .find(|n| ring_member(&n.me).uid == *uid && !n.gka.is_passive())
                .and_then(|n| n.gka.ephemeral_scalar())
                .map(|x| x.expose_bytes().to_vec())
                .ok_or_else(|| format!("no active scalar for uid {uid}"))
        })
        .collect()
}

fn key_agreement() -> Check {
    let mut rng = ChaCha20Rng::seed_from_u64(303);
    let suite: Arc<dyn CurveSuite> = Arc::new(P256Suite);
    let mut pki = TestPki::new(suite.clone(), 303, GKA_NOW).map_err(err)?;
    let ids: Vec<Identity> = (0..16).map(|_| pki.member(DEFAULT_GROUP, &[])).collect::<Result<_, _>>().map_err(err)?;
    let scope = LcmDomain::group_scope(DEFAULT_GROUP).map_err(err)?;
    let mut d = 0;
    for n in 2..=16 {
        d += 1;
        let members: Vec<RingMember> = ids[..n].iter().map(ring_member).collect();
        let cfgs = ids[..n]
            .iter()
            .map(|id| {
                let cfg = RingConfig::key_agree(scope.clone(), suite.clone(), members.clone(), ring_member(id).uid, d);
                (id.clone(), cfg)
            })
            .collect();
        let (mut nodes, queue) = start(cfgs, &mut rng)?;
        let ring = nodes[0].gka.config().ring_uids();
        let expect = ring_oracle(&ring_scalars(&nodes, &ring)?);
        broadcast(&mut nodes, queue)?;
        for node in &nodes {
            ensure(node.gka.phase() == &Phase::Done, || format!("n={n}: phase {:?}", node.gka.phase()))?;
            ensure(node.seed.as_deref() == Some(&expect[..]), || format!("n={n}: seed differs from oracle"))?;
        }
    }
    let mut joins = 0;
    for p in 2..=8usize {
        for j in 1..=4usize {
            let previous = lcmsec::dbgka::SessionSeed::from_bytes((0..33).map(|_| rng.gen()).collect());
            d += 1;
            let (pm, jm): (Vec<RingMember>, Vec<RingMember>) =
                (ids[..p].iter().map(ring_member).collect(), ids[p..p + j].iter().map(ring_member).collect());
            let cfgs = ids[..p + j]
                .iter()
                .enumerate()
                .map(|(k, id)| {
                    let seed = (k < p).then(|| previous.clone());
                    let cfg =
                        RingConfig::join(scope.clone(), suite.clone(), pm.clone(), jm.clone(), ring_member(id).uid, d, seed);
                    (id.clone(), cfg)
                })
                .collect();
            let (mut nodes, queue) = start(cfgs, &mut rng)?;
            let ring = nodes[0].gka.config().ring_uids();
            let expect = ring_oracle(&ring_scalars(&nodes, &ring)?);
            let senders = broadcast(&mut nodes, queue)?;
            ensure(senders == ring.iter().copied().collect(), || format!("|P|={p} |J|={j}: senders {senders:?}"))?;
            let passive = nodes.iter().filter(|n| n.gka.is_passive()).count();
            ensure(passive == p.saturating_sub(3), || format!("|P|={p} |J|={j}: {passive} passive"))?;
            for node in &nodes {
                let role = if node.gka.is_passive() { "passive" } else { "active" };
                ensure(node.seed.as_deref() == Some(&expect[..]), || format!("|P|={p} |J|={j}: {role} node disagrees"))?;
            }
            joins += 1;
        }
    }
    Ok(format!("KeyAgree n=2..16 and {joins} Joins match the ring oracle"))
}

fn join_efficiency() -> Check {
    let mut runs = 0;
    for p in 2..=8usize {
        for j in 1..=4usize {
            let r = scenarios::join(p, j, (p * 10 + j) as u64).map_err(err)?;
            ensure(r.inconsistent == 0, || format!("|P|={p} |J|={j}: nodes disagree on (P, J)"))?;
            ensure(!r.joins.is_empty(), || format!("|P|={p} |J|={j}: no Join ran"))?;
            for inst in &r.joins {
                ensure(inst.senders == inst.expected, || {
                    format!("|P|={p} |J|={j} {}: senders {:?}, expected {:?}", inst.scope, inst.senders, inst.expected)
                })?;
            }
            ensure(r.keys_agree, || format!("|P|={p} |J|={j}: keys differ"))?;
            runs += r.joins.len();
        }
    }
    Ok(format!("{runs} Join instances, senders exactly J plus three representatives"))
}

fn stale_round2_replay() -> Check {
    let mut injected = 0;
    for seed in 0..50 {
        let r = scenarios::replay_round2(seed).map_err(err)?;
        ensure(r.injected > 0, || format!("seed {seed}: nothing injected"))?;
        ensure(r.honest_agree, || format!("seed {seed}: honest agreement blocked"))?;
        ensure(r.group_instance >= 2, || format!("seed {seed}: ended on instance {}", r.group_instance))?;
        ensure(r.rejected > 0, || format!("seed {seed}: no stale message was rejected"))?;
        injected += r.injected;
    }
    Ok(format!("50 scenarios, {injected} stale round-2 messages, honest nodes always agree on a fresh key"))
}

/// Remembers every accepted number; accepts anything new that is less than
/// `w` behind the highest accepted.
struct RememberAll {
    w: u64,
    highest: Option<u64>,
    seen: HashSet<u32>,
}

impl RememberAll {
    fn update(&mut self, seq: u32) -> bool {
        let ok = !self.seen.contains(&seq) && self.highest.is_none_or(|h| seq as u64 + self.w > h);
        if ok {
            self.seen.insert(seq);
            self.highest = Some(self.highest.map_or(seq as u64, |h| h.max(seq as u64)));
        }
        ok
    }
}

fn trace(rng: &mut ChaCha20Rng, events: usize, w: u32) -> Vec<u32> {
    let base = rng.gen_range(0..1u32 << 20);
    let fresh = events * 4 / 5;
    // Displacement below W: each number moves at most W-1 positions.
    let mut keyed: Vec<(u64, u32)> =
        (0..fresh as u32).map(|i| (i as u64 + rng.gen_range(0..w as u64), base + i)).collect();
    keyed.sort();
    let mut out: Vec<u32> = keyed.into_iter().map(|(_, s)| s).collect();
    for _ in fresh..events {
        let at = rng.gen_range(1..out.len());
        let dup = match rng.gen_range(0..3) {
            0 => out[at - 1],
            1 => out[rng.gen_range(at.saturating_sub(2 * w as usize)..at)],
            _ => out[rng.gen_range(0..at)],
        };
        out.insert(at, dup);
    }
    out
}

fn replay_window() -> Check {
    const EVENTS: usize = 100_000;
    const W: usize = 1024;
    let mut rng = ChaCha20Rng::seed_from_u64(606);
    let strategies = registry::replay_strategies();
    let mut summary = Vec::new();
    for name in ["rfc6479", "rfc2401"] {
        let factory = strategies.get(name).map_err(err)?;
        for t in 0..3 {
            let events = trace(&mut rng, EVENTS, W as u32);
            let mut window = factory(W).map_err(err)?;
            let mut oracle = RememberAll { w: W as u64, highest: None, seen: HashSet::new() };
            let mut accepted = HashSet::new();
            for (i, &s) in events.iter().enumerate() {
                let got = window.update(s);
                ensure(got == oracle.update(s), || format!("{name} trace {t} event {i} seq {s}: window said {got}"))?;
                ensure(!got || accepted.insert(s), || format!("{name}: {s} accepted twice"))?;
            }
        }
        summary.push(name);
    }
    Ok(format!("{} x 3 traces of {EVENTS} events match the oracle, no double accepts", summary.join(", ")))
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/discovery_counts.csv")
}

fn convergence() -> Check {
    const SIZES: [usize; 5] = [2, 4, 8, 16, 32];
    let opts = DiscoveryOpts { nodes: SIZES.to_vec(), seeds: (1..=20).collect(), mu_ms: 25.0, sigma_ms: 5.0, loss: 0.1 };
    let rows = discovery_bench::run(&opts, |_| {}).map_err(err)?;
    for &n in &SIZES {
        let of_n: Vec<&DiscoveryRow> = rows.iter().filter(|r| r.nodes == n).collect();
        let ok = of_n.iter().filter(|r| r.converged).count();
        ensure(ok * 100 >= 95 * of_n.len(), || format!("N={n}: {ok}/{} converged within 30 s", of_n.len()))?;
    }
    // Same seed, same transcript: rerun one seed per size.
    for &n in &SIZES {
        let first = rows.iter().find(|r| r.nodes == n).expect("row per size");
        let again = discovery_bench::run_one(n, first.seed, &opts).map_err(err)?;
        ensure(&again == first, || format!("N={n} seed {}: rerun differs", first.seed))?;
    }
    let summary = discovery_bench::summarize(&rows);
    for w in summary.windows(2) {
        ensure(w[0].median_joins <= w[1].median_joins && w[0].median_responses <= w[1].median_responses, || {
            format!("medians decrease from N={} to N={}", w[0].nodes, w[1].nodes)
        })?;
    }
    let current: Vec<String> =
        rows.iter().map(|r| format!("{},{},{},{}", r.nodes, r.seed, r.joins, r.responses)).collect();
    let path = golden_path();
    if std::env::var_os("LCMSEC_BLESS").is_some() {
        let text = format!("nodes,seed,joins,responses\n{}\n", current.join("\n"));
        std::fs::write(&path, text).map_err(err)?;
    }
    let pinned = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let pinned: Vec<&str> = pinned.lines().skip(1).filter(|l| !l.is_empty()).collect();
    ensure(pinned == current, || {
        let diff = pinned.iter().zip(&current).find(|(a, b)| *a != b);
        format!("counts differ from {}: {diff:?}", path.display())
    })?;
    let medians: Vec<String> =
        summary.iter().map(|s| format!("N={}: {}/{}", s.nodes, s.median_joins, s.median_responses)).collect();
    Ok(format!("all sizes >=95% converged; median JOIN/response {}", medians.join(", ")))
}

fn state(pool: &[(u16, PeerCertificate)], p_mask: u32, j_mask: u32, t_ms: u64) -> DiscoveryState {
    let mut s = DiscoveryState::empty();
    for (k, (uid, cert)) in pool.iter().enumerate() {
        if p_mask >> k & 1 == 1 {
            s.p.insert(*uid, cert.clone());
        } else if j_mask >> k & 1 == 1 {
            s.j.insert(*uid, cert.clone());
        }
    }
    s.t_ms = t_ms;
    s
}

fn semilattice() -> Check {
    use std::cmp::Ordering::*;
    let mut pki = TestPki::new(default_params().suite, 808, GKA_NOW).map_err(err)?;
    let pool: Vec<(u16, PeerCertificate)> = (0..6)
        .map(|_| pki.member(DEFAULT_GROUP, &[]).map(|id| (ring_member(&id).uid, id.certificate().clone())))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let mut rng = ChaCha20Rng::seed_from_u64(808);
    let random_state = |rng: &mut ChaCha20Rng| {
        state(&pool, rng.gen_range(0..64), rng.gen_range(0..64), GKA_NOW + rng.gen_range(0..4) * 100)
    };
    for i in 0..10_000 {
        let (a, b, c) = (random_state(&mut rng), random_state(&mut rng), random_state(&mut rng));
        let (ab, bc, ac) = (compare(&a, &b), compare(&b, &c), compare(&a, &c));
        ensure(compare(&a, &a) == Equal, || format!("triple {i}: not reflexive"))?;
        ensure(compare(&b, &a) == ab.reverse(), || format!("triple {i}: not antisymmetric"))?;
        if ab != Greater && bc != Greater {
            ensure(ac != Greater, || format!("triple {i}: not transitive"))?;
        }
        if ab == Equal {
            ensure(a.p.keys().eq(b.p.keys()) && a.j.keys().eq(b.j.keys()) && a.t_ms == b.t_ms, || {
                format!("triple {i}: distinct states compare equal")
            })?;
        }
    }
    // Gossip: every schedule of pairwise max-merges that connects all
    // nodes ends with every node on the global maximum.
    for schedule in 0..1_000 {
        let k = rng.gen_range(3..9);
        let initial: Vec<DiscoveryState> = (0..k).map(|_| random_state(&mut rng)).collect();
        let top = initial.iter().max_by(|a, b| compare(a, b)).cloned().expect("non-empty");
        let mut nodes = initial.clone();
        let mut informed: Vec<HashSet<usize>> = (0..k).map(|i| HashSet::from([i])).collect();
        while informed.iter().any(|s| s.len() < k) {
            let (from, to) = (rng.gen_range(0..k), rng.gen_range(0..k));
            if compare(&nodes[from], &nodes[to]) == Greater {
                nodes[to] = nodes[from].clone();
            }
            let heard = informed[from].clone();
            informed[to].extend(heard);
        }
        ensure(nodes.iter().all(|n| compare(n, &top) == Equal), || format!("schedule {schedule}: no consensus"))?;
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        let folded = order.iter().map(|&i| initial[i].clone()).reduce(|a, b| if compare(&b, &a) == Greater { b } else { a });
        ensure(folded.is_some_and(|f| compare(&f, &top) == Equal), || format!("schedule {schedule}: fold depends on order"))?;
    }
    Ok("compare is a total order over 10^4 triples; 10^3 gossip schedules reach the same maximum".into())
}

fn latency_methodology() -> Check {
    for codec in [Codec::Lcm, Codec::Lcmsec] {
        let counts: Vec<usize> = (1..=3_000).map(|s| datagrams_per_message(codec, s, DEFAULT_MTU).unwrap()).collect();
        let first_split = counts.iter().position(|&n| n > 1).map(|i| i + 1);
        ensure(counts.windows(2).all(|w| w[0] <= w[1]), || format!("{codec:?}: datagram count not monotone"))?;
        ensure(first_split.is_some_and(|s| s <= DEFAULT_MTU), || format!("{codec:?}: first split at {first_split:?}"))?;
    }
    let port = 20_000 + (std::process::id() % 20_000) as u16;
    let group: SocketAddrV4 = format!("239.255.76.67:{port}").parse().map_err(err)?;
    let opts = LatencyOpts { count: 300, timeout: Duration::from_secs(1), ..LatencyOpts::default() };
    let rows = latency::run_udp_loopback(group, &opts).map_err(err)?;
    let mut ratios = Vec::new();
    for &size in &opts.sizes {
        let row = |codec: &str| rows.iter().find(|r| r.size == size && r.codec == codec).ok_or(format!("no {codec} row"));
        let (plain, secure) = (row("lcm")?, row("lcmsec")?);
        ensure(plain.lost + secure.lost <= opts.count / 100, || format!("{size} B: lost {}/{}", plain.lost, secure.lost))?;
        let ratio = secure.p50_us / plain.p50_us;
        ensure(ratio <= 2.0, || format!("{size} B: median {:.0} us vs {:.0} us plain", secure.p50_us, plain.p50_us))?;
        ratios.push(format!("{size} B {ratio:.2}x"));
    }
    let datagrams: Vec<usize> = opts.sizes.iter().map(|&s| rows.iter().find(|r| r.size == s).unwrap().datagrams).collect();
    ensure(datagrams[0] == 1 && datagrams.windows(2).all(|w| w[0] <= w[1]) && datagrams[3] > datagrams[2], || {
        format!("datagrams per message {datagrams:?}")
    })?;
    Ok(format!("median ratio {}; datagrams per message {datagrams:?}", ratios.join(", ")))
}

fn authorization() -> Check {
    let mut injected = 0;
    for seed in 0..10 {
        let r = scenarios::unauthorized_node(seed).map_err(err)?;
        ensure(r.isolated(), || format!("seed {seed}: {r:?}"))?;
        injected += r.impostor_datagrams;
    }
    Ok(format!("10 scenarios, {injected} impostor datagrams, none accepted, no key, nothing decrypted"))
}

fn main() {
    let selected: HashSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(&str, fn() -> Check); 10] = [
        ("spatial overhead", overhead),
        ("AEAD integrity", integrity),
        ("key agreement correctness", key_agreement),
        ("Join efficiency", join_efficiency),
        ("stale round-2 replay", stale_round2_replay),
        ("replay window", replay_window),
        ("discovery convergence", convergence),
        ("semilattice consensus", semilattice),
        ("echo latency", latency_methodology),
        ("end-to-end authorization", authorization),
    ];
    // A panic is reported on its criterion's line instead.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = Vec::new();
    for (k, (title, check)) in criteria.iter().enumerate() {
        let n = k + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {title}: {detail} ({secs:.1} s)"),
            Err(detail) => {
                println!("criterion {n:>2} FAIL  {title}: {detail} ({secs:.1} s)");
                failed.push(n);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
