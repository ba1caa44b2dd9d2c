use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use super::{check_size, Transport, TransportError};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    /// Independent per-link drop probability.
    pub loss: f64,
    pub mu_ms: f64,
    /// Standard deviation of the per-link delay.
    pub sigma_ms: f64,
    /// Virtual wall clock at time zero, so certificates validate.
    pub start_ms: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { seed: 0, loss: 0.0, mu_ms: 25.0, sigma_ms: 5.0, start_ms: 1_750_000_000_000 }
    }
}

#[derive(Debug, Clone)]
pub struct Delivery {
    pub at_us: u64,
    pub from: NodeId,
    pub to: NodeId,
    pub datagram: Arc<[u8]>,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct SimStats {
    pub sent: u64,
    pub enqueued: u64,
    pub lost: u64,
    pub delivered: u64,
}

type Queued = Reverse<(u64, u64, NodeId, NodeId)>;

/// Broadcast medium with sampled per-link loss and delay. Ordering emerges
/// from the delays; equal delivery times fall back to enqueue order.
pub struct SimNet {
    rng: ChaCha20Rng,
    loss: f64,
    delay: Normal<f64>,
    start_ms: u64,
    nodes: usize,
    now_us: u64,
    seq: u64,
    heap: BinaryHeap<Queued>,
    payloads: std::collections::HashMap<u64, Arc<[u8]>>,
    stats: SimStats,
}

impl std::fmt::Debug for SimNet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimNet").field("nodes", &self.nodes).field("now_us", &self.now_us).field("stats", &self.stats).finish()
    }
}

impl SimNet {
    pub fn new(cfg: &SimConfig) -> Self {
        assert!((0.0..=1.0).contains(&cfg.loss), "loss probability out of range");
        let delay = Normal::new(cfg.mu_ms * 1e3, cfg.sigma_ms * 1e3).expect("finite non-negative sigma");
        SimNet {
            rng: ChaCha20Rng::seed_from_u64(cfg.seed),
            loss: cfg.loss,
            delay,
            start_ms: cfg.start_ms,
            nodes: 0,
            now_us: 0,
            seq: 0,
            heap: BinaryHeap::new(),
            payloads: Default::default(),
            stats: SimStats::default(),
        }
    }

    pub fn add_node(&mut self) -> NodeId {
        self.nodes += 1;
        self.nodes - 1
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    /// Virtual wall-clock time in milliseconds.
    pub fn now_ms(&self) -> u64 {
        self.start_ms + self.now_us / 1000
    }

    /// Converts a virtual wall-clock time back to simulation microseconds.
    pub fn ms_to_us(&self, ms: u64) -> u64 {
        ms.saturating_sub(self.start_ms).saturating_mul(1000)
    }

    pub fn stats(&self) -> SimStats {
        self.stats
    }

    pub fn sample_delay_us(&mut self) -> u64 {
        self.delay.sample(&mut self.rng).max(0.0).round() as u64
    }

    /// Schedules delivery to every other node, each link dropping or
    /// delaying independently.
    pub fn send(&mut self, from: NodeId, datagram: &[u8]) -> Result<(), TransportError> {
        check_size(datagram)?;
        self.stats.sent += 1;
        let data: Arc<[u8]> = datagram.into();
        for to in (0..self.nodes).filter(|&n| n != from) {
            if self.loss > 0.0 && self.rng.gen_bool(self.loss) {
                self.stats.lost += 1;
                continue;
            }
            let at = self.now_us + self.sample_delay_us();
            self.enqueue(at, from, to, data.clone());
        }
        Ok(())
    }

    /// Schedules one delivery bypassing loss, for injected traffic.
    pub fn inject(&mut self, from: NodeId, to: NodeId, after_us: u64, datagram: &[u8]) {
        self.enqueue(self.now_us + after_us, from, to, datagram.into());
    }

    fn enqueue(&mut self, at: u64, from: NodeId, to: NodeId, data: Arc<[u8]>) {
        self.seq += 1;
        self.payloads.insert(self.seq, data);
        self.heap.push(Reverse((at, self.seq, from, to)));
        self.stats.enqueued += 1;
    }

    pub fn next_event_us(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse((at, ..))| *at)
    }

    /// Pops the next delivery due at or before `until_us`, advancing the
    /// clock to it.
    pub fn pop_until(&mut self, until_us: u64) -> Option<Delivery> {
        match self.heap.peek() {
            Some(Reverse((at, ..))) if *at <= until_us => {}
            _ => return None,
        }
        let Reverse((at, seq, from, to)) = self.heap.pop().expect("peeked");
        self.now_us = self.now_us.max(at);
        self.stats.delivered += 1;
        let datagram = self.payloads.remove(&seq).expect("payload stored with event");
        Some(Delivery { at_us: at, from, to, datagram })
    }

    /// Moves the clock forward; never backwards.
    pub fn advance_to(&mut self, t_us: u64) {
        self.now_us = self.now_us.max(t_us);
    }

    /// Delivers everything due up to `t_us` to `on_deliver`, which may send
    /// more traffic; then sets the clock to `t_us`.
    pub fn run_until(&mut self, t_us: u64, mut on_deliver: impl FnMut(&mut SimNet, Delivery)) {
        while let Some(d) = self.pop_until(t_us) {
            on_deliver(self, d);
        }
        self.advance_to(t_us);
    }
}

/// One node's handle on the simulated medium.
pub struct SimLink<'a> {
    pub net: &'a mut SimNet,
    pub node: NodeId,
}

impl Transport for SimLink<'_> {
    fn send(&mut self, datagram: &[u8]) -> Result<(), TransportError> {
        self.net.send(self.node, datagram)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(seed: u64, loss: f64, nodes: usize) -> SimNet {
        let mut n = SimNet::new(&SimConfig { seed, loss, ..SimConfig::default() });
        for _ in 0..nodes {
            n.add_node();
        }
        n
    }

    #[test]
    fn fan_out_and_loss() {
        let mut n = net(1, 0.0, 3);
        n.send(0, b"x").unwrap();
        assert_eq!(n.stats().enqueued, 2);
        let mut n = net(1, 1.0, 3);
        n.send(0, b"x").unwrap();
        assert_eq!(n.stats().enqueued, 0);
        assert!(matches!(n.send(0, &vec![0; 70_000]), Err(TransportError::Oversize(70_000))));
    }

    #[test]
    fn deterministic_schedule() {
        let schedule = |seed| {
            let mut n = net(seed, 0.2, 5);
            for i in 0..50 {
                n.send(i % 5, &[i as u8]).unwrap();
            }
            let mut out = Vec::new();
            n.run_until(u64::MAX, |_, d| out.push((d.at_us, d.from, d.to, d.datagram[0])));
            out
        };
        assert_eq!(schedule(7), schedule(7));
        assert_ne!(schedule(7), schedule(8));
    }

    #[test]
    fn empty_queue_jumps_clock_and_ties_keep_order() {
        let mut n = net(0, 0.0, 2);
        n.run_until(5_000, |_, _| panic!("nothing queued"));
        assert_eq!(n.now_us(), 5_000);
        n.inject(0, 1, 10, b"a");
        n.inject(0, 1, 10, b"b");
        let mut got = Vec::new();
        n.run_until(u64::MAX, |_, d| got.push(d.datagram[0]));
        assert_eq!(got, b"ab");
    }

    #[test]
    fn sends_during_delivery_are_honoured() {
        let mut n = net(3, 0.0, 2);
        n.send(0, b"ping").unwrap();
        let mut got = Vec::new();
        n.run_until(u64::MAX, |net, d| {
            got.push(d.datagram.to_vec());
            if &*d.datagram == b"ping" {
                net.send(d.to, b"pong").unwrap();
            }
        });
        assert_eq!(got, [b"ping".to_vec(), b"pong".to_vec()]);
    }

    #[test]
    fn delay_distribution_matches() {
        let mut n = net(42, 0.0, 0);
        let samples: Vec<f64> = (0..10_000).map(|_| n.sample_delay_us() as f64 / 1e3).collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64;
        assert!((mean - 25.0).abs() / 25.0 < 0.05, "mean {mean}");
        assert!((var.sqrt() - 5.0).abs() / 5.0 < 0.05, "sd {}", var.sqrt());
    }
}
