//! Many sessions on one [`SimNet`], driven in virtual time. Used by the
//! integration tests and the discovery benchmark.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::crypto::CurveSuite;
use crate::identity::{CertificateAuthority, Identity, IdentityError, IssuanceLog, RootStore, UrnRequest, Validity};
use crate::registry;
use crate::session::{Session, SessionError, SessionParams};
use crate::transport::{NodeId, SimConfig, SimNet};

pub const DEFAULT_GROUP: &str = "239.255.76.67:7667";
const DAY_MS: u64 = 86_400_000;

/// Test CA plus helpers to provision member identities.
pub struct TestPki {
    pub ca: CertificateAuthority,
    pub roots: Arc<RootStore>,
    pub validity: Validity,
    rng: ChaCha20Rng,
}

impl TestPki {
    pub fn new(suite: Arc<dyn CurveSuite>, seed: u64, now_ms: u64) -> Result<Self, IdentityError> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed_cafe);
        let validity = Validity { not_before_ms: now_ms - DAY_MS, not_after_ms: now_ms + 365 * DAY_MS };
        let ca = CertificateAuthority::init(suite, &mut rng, "lcmsec test root", validity, IssuanceLog::in_memory())?;
        let mut roots = RootStore::default();
        roots.add_der(ca.root_der())?;
        Ok(TestPki { ca, roots: Arc::new(roots), validity, rng })
    }

    /// An identity holding the group URN and one URN per channel, all with
    /// automatically assigned ids.
    pub fn member(&mut self, group: &str, channels: &[String]) -> Result<Identity, IdentityError> {
        let mut reqs = vec![UrnRequest { group: group.into(), channel: String::new(), id: None }];
        reqs.extend(channels.iter().map(|c| UrnRequest { group: group.into(), channel: c.clone(), id: None }));
        self.issue(&reqs)
    }

    pub fn issue(&mut self, reqs: &[UrnRequest]) -> Result<Identity, IdentityError> {
        self.ca.issue_identity(&mut self.rng, reqs, self.validity)
    }
}

pub struct ClusterNode {
    pub session: Session,
    pub net_id: NodeId,
    pub delivered: Vec<(String, Vec<u8>)>,
}

/// What happened on the medium, for attack scenarios.
#[derive(Debug, Clone)]
pub struct Sent {
    pub at_us: u64,
    pub from: NodeId,
    pub datagram: Vec<u8>,
}

pub struct SimCluster {
    pub net: SimNet,
    seed: u64,
    pub nodes: Vec<ClusterNode>,
    by_net_id: Vec<Option<usize>>,
    /// Datagrams delivered to nodes without a session, keyed by receiver.
    pub observed: Vec<(NodeId, Vec<u8>)>,
    pub record: bool,
    pub transcript: Vec<Sent>,
    /// Running hash over every datagram sent, with time and sender.
    digest: Sha256,
}

impl SimCluster {
    pub fn new(sim: &SimConfig) -> Self {
        SimCluster {
            net: SimNet::new(sim),
            seed: sim.seed,
            nodes: Vec::new(),
            by_net_id: Vec::new(),
            observed: Vec::new(),
            record: false,
            transcript: Vec::new(),
            digest: Sha256::new(),
        }
    }

    /// `n` members of `group` on `channels`, with sessions seeded from `seed`.
    pub fn build(
        sim: &SimConfig,
        pki: &mut TestPki,
        params: &SessionParams,
        group: &str,
        channels: &[String],
        n: usize,
    ) -> Result<Self, SessionError> {
        let mut cluster = SimCluster::new(sim);
        for _ in 0..n {
            let id = pki.member(group, channels)?;
            cluster.add_member(id, pki.roots.clone(), params, group, channels)?;
        }
        Ok(cluster)
    }

    pub fn add_member(
        &mut self,
        identity: Identity,
        roots: Arc<RootStore>,
        params: &SessionParams,
        group: &str,
        channels: &[String],
    ) -> Result<usize, SessionError> {
        let idx = self.nodes.len();
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed ^ (idx as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let session = Session::new(identity, roots, group, channels, params.clone(), &mut rng, self.net.now_ms())?;
        let net_id = self.net.add_node();
        self.by_net_id.resize(net_id + 1, None);
        self.by_net_id[net_id] = Some(idx);
        self.nodes.push(ClusterNode { session, net_id, delivered: Vec::new() });
        Ok(idx)
    }

    /// A network endpoint with no session, for eavesdroppers and injectors.
    pub fn add_observer(&mut self) -> NodeId {
        let id = self.net.add_node();
        self.by_net_id.resize(id + 1, None);
        id
    }

    pub fn now_ms(&self) -> u64 {
        self.net.now_ms()
    }

    /// Hash of the full send transcript so far.
    pub fn transcript_digest(&self) -> [u8; 32] {
        self.digest.clone().finalize().into()
    }

    pub fn start(&mut self, idx: usize) {
        let now = self.now_ms();
        self.nodes[idx].session.start(now);
        self.flush(idx);
    }

    pub fn start_all(&mut self) {
        for i in 0..self.nodes.len() {
            self.start(i);
        }
    }

    fn flush(&mut self, idx: usize) {
        let out = self.nodes[idx].session.take_outgoing();
        let from = self.nodes[idx].net_id;
        for d in out {
            self.send_raw(from, d);
        }
    }

    pub fn send_raw(&mut self, from: NodeId, datagram: Vec<u8>) {
        self.net.send(from, &datagram).expect("protocol datagrams fit in UDP");
        self.digest.update(self.net.now_us().to_be_bytes());
        self.digest.update((from as u64).to_be_bytes());
        self.digest.update((datagram.len() as u64).to_be_bytes());
        self.digest.update(&datagram);
        if self.record {
            self.transcript.push(Sent { at_us: self.net.now_us(), from, datagram });
        }
    }

    /// Publishes from node `idx`; returns the datagram count.
    pub fn publish(&mut self, idx: usize, channel: &str, payload: &[u8]) -> Result<usize, SessionError> {
        let now = self.now_ms();
        let dgs = self.nodes[idx].session.publish(channel, payload, now)?;
        let n = dgs.len();
        let from = self.nodes[idx].net_id;
        for d in dgs {
            self.send_raw(from, d);
        }
        self.flush(idx);
        Ok(n)
    }

    fn next_timer_us(&self) -> Option<u64> {
        self.nodes.iter().filter_map(|n| n.session.next_wakeup()).min().map(|ms| self.net.ms_to_us(ms))
    }

    /// Processes deliveries and timers in time order until virtual time
    /// `until_ms` or until `stop` holds, checked after every event.
    pub fn run_while(&mut self, until_ms: u64, mut stop: impl FnMut(&SimCluster) -> bool) -> bool {
        let until_us = self.net.ms_to_us(until_ms);
        loop {
            if stop(self) {
                return true;
            }
            let t_net = self.net.next_event_us();
            let t_timer = self.next_timer_us();
            let next = match (t_net, t_timer) {
                (None, None) => break,
                (a, b) => a.unwrap_or(u64::MAX).min(b.unwrap_or(u64::MAX)),
            };
            if next > until_us {
                break;
            }
            if t_net.is_some_and(|t| t <= t_timer.unwrap_or(u64::MAX)) {
                let d = self.net.pop_until(until_us).expect("peeked event is due");
                let now = self.now_ms();
                match self.by_net_id.get(d.to).copied().flatten() {
                    Some(idx) => {
                        if let Some(msg) = self.nodes[idx].session.receive(&d.datagram, now) {
                            self.nodes[idx].delivered.push(msg);
                        }
                        self.flush(idx);
                    }
                    None => self.observed.push((d.to, d.datagram.to_vec())),
                }
            } else {
                self.net.advance_to(next);
                let now = self.now_ms();
                for idx in 0..self.nodes.len() {
                    if self.nodes[idx].session.next_wakeup().is_some_and(|t| t <= now) {
                        self.nodes[idx].session.on_timer(now);
                        self.flush(idx);
                    }
                }
            }
        }
        self.net.advance_to(until_us);
        stop(self)
    }

    pub fn run_until(&mut self, until_ms: u64) {
        self.run_while(until_ms, |_| false);
    }

    /// Runs until every node can publish on every channel with keys
    /// identical across nodes, or `until_ms`.
    pub fn run_until_ready(&mut self, until_ms: u64, channels: &[String]) -> bool {
        self.run_while(until_ms, |c| c.all_ready(channels) && channels.iter().all(|ch| c.keys_agree(ch)))
    }

    pub fn all_ready(&self, channels: &[String]) -> bool {
        self.nodes.iter().all(|n| channels.iter().all(|ch| n.session.is_ready(ch)))
    }

    /// Whether every node holds byte-identical current group and channel
    /// keys.
    pub fn keys_agree(&self, channel: &str) -> bool {
        let keys: Vec<_> = self.nodes.iter().map(|n| n.session.current_key_bytes(channel)).collect();
        keys.first().is_some_and(|k| k.is_some()) && keys.windows(2).all(|w| w[0] == w[1])
    }

    /// Total JOIN and JOIN_RESPONSE messages sent, over every scope.
    pub fn discovery_counts(&self) -> (u64, u64) {
        self.nodes.iter().fold((0, 0), |(j, r), n| {
            let s = &n.session;
            let discs = std::iter::once(s.group_discovery()).chain(s.channels().filter_map(|c| s.channel_discovery(c)));
            discs.fold((j, r), |(j, r), d| (j + d.stats().joins_sent, r + d.stats().responses_sent))
        })
    }
}

/// Session parameters with the default curve, replay strategy and timings.
pub fn default_params() -> SessionParams {
    SessionParams {
        suite: registry::suite_by_name("p256").expect("built in"),
        replay: *registry::replay_strategies().get("rfc6479").expect("built in"),
        window: crate::replay::DEFAULT_WINDOW,
        mtu: crate::config::DEFAULT_MTU,
        grace_ms: crate::config::DEFAULT_GRACE_MS,
        discovery: Default::default(),
    }
}
