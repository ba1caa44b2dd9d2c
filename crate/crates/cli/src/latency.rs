//! Echo latency: a source publishes on `ping`, a reflector republishes each
//! message on `pong`, and the source times the round trip. The plaintext
//! codec uses the same sockets and framing rules minus the security layer,
//! so the difference between codecs is the cost of the protocol.

use std::collections::HashMap;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use lcmsec::cluster::{default_params, SimCluster, TestPki};
use lcmsec::config::DEFAULT_MTU;
use lcmsec::identity::{Identity, RootStore};
use lcmsec::transport::{SimConfig, UdpEndpoint};
use lcmsec::wire::{decode_plain_lcm, peek_magic, plain_lcm_datagrams, MAGIC_LCM_LONG, MAGIC_LCM_SHORT};
use log::{debug, info, warn};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::node::{Polled, UdpNode};
use crate::{wall_ms, CliError};

pub const PING: &str = "ping";
pub const PONG: &str = "pong";
/// Reflector pongs set this bit in the plaintext seqno so a source never
/// mixes fragments of its own pings with those of the echo.
const ECHO_BIT: u32 = 1 << 31;
const READY_TIMEOUT: Duration = Duration::from_secs(30);
const WARMUP_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Codec {
    /// Plaintext LCM.
    Lcm,
    Lcmsec,
}

impl Codec {
    pub fn name(self) -> &'static str {
        match self {
            Codec::Lcm => "lcm",
            Codec::Lcmsec => "lcmsec",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyRow {
    pub codec: &'static str,
    pub transport: &'static str,
    pub size: usize,
    /// Datagrams per message, one direction.
    pub datagrams: usize,
    pub sent: usize,
    pub lost: usize,
    pub p50_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    pub mean_us: f64,
}

#[derive(Debug, Clone)]
pub struct LatencyOpts {
    pub codecs: Vec<Codec>,
    pub sizes: Vec<usize>,
    pub count: usize,
    /// Round trips discarded before measuring each size.
    pub warmup: usize,
    pub timeout: Duration,
    pub seed: u64,
}

impl Default for LatencyOpts {
    fn default() -> Self {
        LatencyOpts {
            codecs: vec![Codec::Lcm, Codec::Lcmsec],
            sizes: vec![100, 1_000, 10_000, 100_000],
            count: 200,
            warmup: 10,
            timeout: Duration::from_secs(1),
            seed: 1,
        }
    }
}

/// Nearest-rank quantile of sorted samples.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

fn summarize(codec: Codec, transport: &'static str, size: usize, datagrams: usize, sent: usize, mut rtts: Vec<f64>) -> LatencyRow {
    rtts.sort_by(f64::total_cmp);
    let mean = if rtts.is_empty() { f64::NAN } else { rtts.iter().sum::<f64>() / rtts.len() as f64 };
    LatencyRow {
        codec: codec.name(),
        transport,
        size,
        datagrams,
        sent,
        lost: sent - rtts.len(),
        p50_us: quantile(&rtts, 0.5),
        p90_us: quantile(&rtts, 0.9),
        p99_us: quantile(&rtts, 0.99),
        mean_us: mean,
    }
}

fn payload(index: u32, size: usize, fill: &[u8]) -> Vec<u8> {
    let mut p = index.to_be_bytes().to_vec();
    p.extend_from_slice(&fill[..size.saturating_sub(4)]);
    p
}

fn index_of(p: &[u8]) -> Option<u32> {
    Some(u32::from_be_bytes(p.get(..4)?.try_into().ok()?))
}

/// One-direction datagram count for a message of `size` bytes on `PING`.
pub fn datagrams_per_message(codec: Codec, size: usize, mtu: usize) -> Result<usize, CliError> {
    let body = vec![0; size.max(4)];
    Ok(match codec {
        Codec::Lcm => plain_lcm_datagrams(PING, 0, &body, mtu)?.len(),
        Codec::Lcmsec => {
            let name = vec![0; PING.len() + 1];
            let sealed = vec![0; body.len() + lcmsec::crypto::TAG_LEN];
            lcmsec::wire::fragment(&sealed, &name, 0, 1, mtu)?.len()
        }
    })
}

/// Reassembles plaintext LCM fragments. Header: magic ‖ seqno ‖ size ‖
/// offset ‖ no ‖ total; the channel name leads fragment 0.
#[derive(Default)]
pub struct PlainReassembler {
    partial: HashMap<u32, Partial>,
}

struct Partial {
    size: usize,
    total: u16,
    seen: Vec<bool>,
    remaining: u16,
    channel: Option<String>,
    buf: Vec<u8>,
}

const MAX_PARTIAL: usize = 64;

impl PlainReassembler {
    pub fn insert(&mut self, d: &[u8]) -> Option<(u32, String, Vec<u8>)> {
        match peek_magic(d).ok()? {
            MAGIC_LCM_SHORT => {
                let m = decode_plain_lcm(d).ok()?;
                Some((m.seqno, m.channel, m.payload))
            }
            MAGIC_LCM_LONG => self.insert_fragment(d),
            _ => None,
        }
    }

    fn insert_fragment(&mut self, d: &[u8]) -> Option<(u32, String, Vec<u8>)> {
        let be32 = |at: usize| d.get(at..at + 4).map(|b| u32::from_be_bytes(b.try_into().unwrap()));
        let be16 = |at: usize| d.get(at..at + 2).map(|b| u16::from_be_bytes(b.try_into().unwrap()));
        let (seqno, size, offset) = (be32(4)?, be32(8)? as usize, be32(12)? as usize);
        let (no, total) = (be16(16)?, be16(18)?);
        let mut data = &d[20..];
        if no >= total {
            return None;
        }
        if self.partial.len() >= MAX_PARTIAL && !self.partial.contains_key(&seqno) {
            self.partial.clear();
        }
        let p = self.partial.entry(seqno).or_insert_with(|| Partial {
            size,
            total,
            seen: vec![false; total as usize],
            remaining: total,
            channel: None,
            buf: vec![0; size],
        });
        if p.size != size || p.total != total || p.seen[no as usize] {
            return None;
        }
        if no == 0 {
            let nul = data.iter().position(|&c| c == 0)?;
            p.channel = Some(String::from_utf8(data[..nul].to_vec()).ok()?);
            data = &data[nul + 1..];
        }
        p.buf.get_mut(offset..offset + data.len())?.copy_from_slice(data);
        p.seen[no as usize] = true;
        p.remaining -= 1;
        if p.remaining > 0 {
            return None;
        }
        let p = self.partial.remove(&seqno)?;
        Some((seqno, p.channel?, p.buf))
    }
}

/// Echoes every ping, in both codecs, until `stop` is set.
pub fn reflect(node: &mut UdpNode, stop: &AtomicBool) -> Result<u64, CliError> {
    let mut plain = PlainReassembler::default();
    let mut echoed = 0;
    while !stop.load(Ordering::Relaxed) {
        match node.poll(Duration::from_millis(20))? {
            Polled::Delivered(ch, p) if ch == PING => match node.publish(PONG, &p) {
                Ok(_) => echoed += 1,
                Err(e) => debug!("echo failed: {e}"),
            },
            Polled::Plain(d) => {
                if let Some((seq, ch, p)) = plain.insert(&d) {
                    if ch == PING && seq & ECHO_BIT == 0 {
                        node.send_raw(&plain_lcm_datagrams(PONG, seq | ECHO_BIT, &p, DEFAULT_MTU)?)?;
                        echoed += 1;
                    }
                }
            }
            _ => {}
        }
    }
    Ok(echoed)
}

struct Source<'a> {
    node: &'a mut UdpNode,
    plain: PlainReassembler,
    seqno: u32,
}

impl Source<'_> {
    fn send(&mut self, codec: Codec, p: &[u8]) -> Result<usize, CliError> {
        match codec {
            Codec::Lcmsec => self.node.publish(PING, p),
            Codec::Lcm => {
                self.seqno = (self.seqno + 1) & !ECHO_BIT;
                let dgs = plain_lcm_datagrams(PING, self.seqno, p, DEFAULT_MTU)?;
                self.node.send_raw(&dgs)?;
                Ok(dgs.len())
            }
        }
    }

    /// Waits for the pong carrying `index`; false on timeout.
    fn await_echo(&mut self, codec: Codec, index: u32, timeout: Duration) -> Result<bool, CliError> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(false);
            }
            let echoed = match (codec, self.node.poll(left)?) {
                (Codec::Lcmsec, Polled::Delivered(ch, p)) => ch == PONG && index_of(&p) == Some(index),
                (Codec::Lcm, Polled::Plain(d)) => {
                    matches!(self.plain.insert(&d), Some((_, ch, p)) if ch == PONG && index_of(&p) == Some(index))
                }
                _ => false,
            };
            if echoed {
                return Ok(true);
            }
        }
    }

    /// Round trips until the first echo; the reflector may still lack keys.
    fn warm_up(&mut self, codec: Codec, size: usize, fill: &[u8], opts: &LatencyOpts, next: &mut u32) -> Result<(), CliError> {
        let deadline = Instant::now() + WARMUP_TIMEOUT;
        let mut warmed = 0;
        while warmed < opts.warmup.max(1) {
            if Instant::now() > deadline {
                return Err(CliError::Usage(format!("no {} echo from the reflector within {WARMUP_TIMEOUT:?}", codec.name())));
            }
            *next += 1;
            self.send(codec, &payload(*next, size, fill))?;
            if self.await_echo(codec, *next, opts.timeout.min(Duration::from_millis(200)))? {
                warmed += 1;
            }
        }
        Ok(())
    }

    /// Codecs alternate round trip by round trip, so slow drift in the
    /// host's load affects all of them alike.
    fn measure(&mut self, size: usize, opts: &LatencyOpts, next: &mut u32) -> Result<Vec<LatencyRow>, CliError> {
        let mut fill = vec![0; size];
        ChaCha20Rng::seed_from_u64(opts.seed ^ size as u64).fill_bytes(&mut fill);
        for &codec in &opts.codecs {
            self.warm_up(codec, size, &fill, opts, next)?;
        }
        let mut rtts = vec![Vec::with_capacity(opts.count); opts.codecs.len()];
        let mut datagrams = vec![0; opts.codecs.len()];
        for _ in 0..opts.count {
            for (k, &codec) in opts.codecs.iter().enumerate() {
                *next += 1;
                let p = payload(*next, size, &fill);
                let t0 = Instant::now();
                datagrams[k] = self.send(codec, &p)?;
                if self.await_echo(codec, *next, opts.timeout)? {
                    rtts[k].push(t0.elapsed().as_secs_f64() * 1e6);
                }
            }
        }
        let rows: Vec<_> = opts
            .codecs
            .iter()
            .zip(rtts)
            .zip(datagrams)
            .map(|((&codec, r), d)| summarize(codec, "udp", size, d, opts.count, r))
            .collect();
        for row in &rows {
            info!("{} {} B: p50 {:.0} us, lost {}", row.codec, size, row.p50_us, row.lost);
        }
        Ok(rows)
    }
}

/// Runs the source side against a reflector already on the group.
pub fn run_source(node: &mut UdpNode, opts: &LatencyOpts) -> Result<Vec<LatencyRow>, CliError> {
    node.wait_ready(READY_TIMEOUT)?;
    let mut src = Source { node, plain: PlainReassembler::default(), seqno: 0 };
    let mut next = 0;
    let mut rows = Vec::new();
    for &size in &opts.sizes {
        rows.extend(src.measure(size, opts, &mut next)?);
    }
    Ok(rows)
}

struct Credentials {
    cert_pem: String,
    key_pem: String,
    root_pem: String,
}

impl Credentials {
    fn node(&self, group: SocketAddrV4) -> Result<UdpNode, CliError> {
        let identity = Identity::from_pem(&self.cert_pem, &self.key_pem)?;
        let mut roots = RootStore::default();
        roots.add_pem(&self.root_pem)?;
        let endpoint = UdpEndpoint::bind_multicast(group, Ipv4Addr::UNSPECIFIED, 0)?;
        let channels = [PING.to_string(), PONG.to_string()];
        UdpNode::with_parts(identity, Arc::new(roots), &group.to_string(), &channels, default_params(), endpoint)
    }
}

/// Source and reflector in one process over loopback multicast on `group`,
/// with throwaway credentials.
pub fn run_udp_loopback(group: SocketAddrV4, opts: &LatencyOpts) -> Result<Vec<LatencyRow>, CliError> {
    let mut pki = TestPki::new(default_params().suite, opts.seed, wall_ms())?;
    let channels = [PING.to_string(), PONG.to_string()];
    let mut creds = Vec::new();
    for _ in 0..2 {
        let id = pki.member(&group.to_string(), &channels)?;
        creds.push(Credentials {
            cert_pem: id.certificate().to_pem(),
            key_pem: id.key_pem()?,
            root_pem: pki.ca.root_pem(),
        });
    }
    let refl_creds = creds.pop().expect("two members");
    let stop = Arc::new(AtomicBool::new(false));
    let reflector = {
        let stop = stop.clone();
        std::thread::spawn(move || -> Result<u64, CliError> {
            let mut node = refl_creds.node(group)?;
            node.start()?;
            reflect(&mut node, &stop)
        })
    };
    let result = creds[0].node(group).and_then(|mut node| {
        node.start()?;
        run_source(&mut node, opts)
    });
    stop.store(true, Ordering::Relaxed);
    match reflector.join() {
        Ok(Ok(echoed)) => debug!("reflector echoed {echoed} messages"),
        Ok(Err(e)) if result.is_ok() => return Err(e),
        Ok(Err(e)) => warn!("reflector: {e}"),
        Err(_) => return Err(CliError::Usage("reflector thread panicked".into())),
    }
    result
}

/// The same exchange on the simulated network: each sample is the virtual
/// link delay of both directions plus the wall-clock time spent encoding,
/// decoding and forwarding.
pub fn run_sim(sim: &SimConfig, opts: &LatencyOpts) -> Result<Vec<LatencyRow>, CliError> {
    let mut rows = Vec::new();
    for &size in &opts.sizes {
        for &codec in &opts.codecs {
            rows.push(match codec {
                Codec::Lcmsec => sim_secure(sim, size, opts)?,
                Codec::Lcm => sim_plain(sim, size, opts)?,
            });
        }
    }
    Ok(rows)
}

fn sim_secure(sim: &SimConfig, size: usize, opts: &LatencyOpts) -> Result<LatencyRow, CliError> {
    let params = default_params();
    let mut pki = TestPki::new(params.suite.clone(), opts.seed, sim.start_ms)?;
    let channels = [PING.to_string(), PONG.to_string()];
    let group = lcmsec::cluster::DEFAULT_GROUP;
    let mut c = SimCluster::build(sim, &mut pki, &params, group, &channels, 2)?;
    c.start_all();
    let start = c.now_ms();
    if !c.run_until_ready(start + READY_TIMEOUT.as_millis() as u64, &channels) {
        return Err(CliError::NotConverged("simulated pair did not establish keys".into()));
    }
    let timeout_ms = opts.timeout.as_millis() as u64;
    let mut fill = vec![0; size];
    ChaCha20Rng::seed_from_u64(opts.seed ^ size as u64).fill_bytes(&mut fill);
    let (mut rtts, mut datagrams) = (Vec::new(), 0);
    for i in 0..opts.count as u32 {
        let p = payload(i, size, &fill);
        let (t0, v0) = (Instant::now(), c.net.now_us());
        datagrams = c.publish(0, PING, &p)?;
        let got_ping = c.run_while(c.now_ms() + timeout_ms, |c| !c.nodes[1].delivered.is_empty());
        if got_ping {
            let (_, echo) = c.nodes[1].delivered.remove(0);
            c.publish(1, PONG, &echo)?;
            if c.run_while(c.now_ms() + timeout_ms, |c| !c.nodes[0].delivered.is_empty()) {
                let (_, back) = c.nodes[0].delivered.remove(0);
                if index_of(&back) == Some(i) {
                    rtts.push((c.net.now_us() - v0) as f64 + t0.elapsed().as_secs_f64() * 1e6);
                }
            }
        }
        c.nodes.iter_mut().for_each(|n| n.delivered.clear());
    }
    Ok(summarize(Codec::Lcmsec, "sim", size, datagrams, opts.count, rtts))
}

fn sim_plain(sim: &SimConfig, size: usize, opts: &LatencyOpts) -> Result<LatencyRow, CliError> {
    let mut c = SimCluster::new(sim);
    let (a, b) = (c.add_observer(), c.add_observer());
    let (mut at_a, mut at_b) = (PlainReassembler::default(), PlainReassembler::default());
    let timeout_ms = opts.timeout.as_millis() as u64;
    let mut fill = vec![0; size];
    ChaCha20Rng::seed_from_u64(opts.seed ^ size as u64).fill_bytes(&mut fill);
    let (mut rtts, mut datagrams) = (Vec::new(), 0);
    // Loss-free links deliver every datagram, so each leg waits for the
    // full count rather than decoding inside the stop predicate.
    let leg = |c: &mut SimCluster, from, to, dgs: Vec<Vec<u8>>, r: &mut PlainReassembler| {
        let n = dgs.len();
        dgs.into_iter().for_each(|d| c.send_raw(from, d));
        c.run_while(c.now_ms() + timeout_ms, |c| c.observed.len() >= n);
        let got: Vec<_> = c.observed.drain(..).filter(|(rx, _)| *rx == to).collect();
        got.iter().find_map(|(_, d)| r.insert(d))
    };
    for i in 0..opts.count as u32 {
        let p = payload(i, size, &fill);
        let (t0, v0) = (Instant::now(), c.net.now_us());
        let dgs = plain_lcm_datagrams(PING, i, &p, DEFAULT_MTU)?;
        datagrams = dgs.len();
        let Some((seq, _, echo)) = leg(&mut c, a, b, dgs, &mut at_b) else { continue };
        let back = plain_lcm_datagrams(PONG, seq | ECHO_BIT, &echo, DEFAULT_MTU)?;
        if let Some((_, _, back)) = leg(&mut c, b, a, back, &mut at_a) {
            if index_of(&back) == Some(i) {
                rtts.push((c.net.now_us() - v0) as f64 + t0.elapsed().as_secs_f64() * 1e6);
            }
        }
    }
    Ok(summarize(Codec::Lcm, "sim", size, datagrams, opts.count, rtts))
}
