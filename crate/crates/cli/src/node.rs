//! A session bound to a real multicast socket, driven by the wall clock.

use std::sync::Arc;
use std::time::{Duration, Instant};

use lcmsec::config::SessionConfig;
use lcmsec::identity::{Identity, RootStore};
use lcmsec::session::{Session, SessionParams};
use lcmsec::transport::{Transport, UdpEndpoint};
use lcmsec::wire::{peek_magic, MAGIC_LCM_LONG, MAGIC_LCM_SHORT, MAX_DATAGRAM};
use rand::rngs::OsRng;

use crate::{wall_ms, CliError};

pub enum Polled {
    Delivered(String, Vec<u8>),
    /// A plaintext LCM datagram; sessions never see these.
    Plain(Vec<u8>),
    Idle,
}

pub struct UdpNode {
    pub session: Session,
    endpoint: UdpEndpoint,
    buf: Vec<u8>,
}

impl UdpNode {
    pub fn open(cfg: &SessionConfig) -> Result<Self, CliError> {
        let identity = Identity::load(&cfg.cert, &cfg.key)?;
        let roots = Arc::new(RootStore::from_path(&cfg.roots)?);
        let params = SessionParams::from_config(cfg)?;
        let endpoint = UdpEndpoint::bind_multicast(cfg.group, cfg.interface, cfg.ttl)?;
        Self::with_parts(identity, roots, &cfg.group_name(), &cfg.channels, params, endpoint)
    }

    pub fn with_parts(
        identity: Identity,
        roots: Arc<RootStore>,
        group: &str,
        channels: &[String],
        params: SessionParams,
        endpoint: UdpEndpoint,
    ) -> Result<Self, CliError> {
        let session = Session::new(identity, roots, group, channels, params, &mut OsRng, wall_ms())?;
        Ok(UdpNode { session, endpoint, buf: vec![0; MAX_DATAGRAM] })
    }

    pub fn start(&mut self) -> Result<(), CliError> {
        self.session.start(wall_ms());
        self.flush()
    }

    fn flush(&mut self) -> Result<(), CliError> {
        for d in self.session.take_outgoing() {
            self.endpoint.send(&d)?;
        }
        Ok(())
    }

    /// Sends raw datagrams, for the plaintext baseline.
    pub fn send_raw(&mut self, datagrams: &[Vec<u8>]) -> Result<(), CliError> {
        for d in datagrams {
            self.endpoint.send(d)?;
        }
        Ok(())
    }

    fn fire_timers(&mut self) -> Result<(), CliError> {
        let now = wall_ms();
        if self.session.next_wakeup().is_some_and(|t| t <= now) {
            self.session.on_timer(now);
        }
        self.flush()
    }

    /// Waits at most `max_wait` for one datagram, servicing protocol timers
    /// on the way.
    pub fn poll(&mut self, max_wait: Duration) -> Result<Polled, CliError> {
        self.fire_timers()?;
        let wait = match self.session.next_wakeup() {
            Some(t) => max_wait.min(Duration::from_millis(t.saturating_sub(wall_ms()))),
            None => max_wait,
        };
        let Some(n) = self.endpoint.recv_timeout(&mut self.buf, wait)? else {
            self.fire_timers()?;
            return Ok(Polled::Idle);
        };
        let datagram = &self.buf[..n];
        if matches!(peek_magic(datagram), Ok(MAGIC_LCM_SHORT | MAGIC_LCM_LONG)) {
            return Ok(Polled::Plain(datagram.to_vec()));
        }
        let got = self.session.receive(datagram, wall_ms());
        self.flush()?;
        Ok(match got {
            Some((channel, payload)) => Polled::Delivered(channel, payload),
            None => Polled::Idle,
        })
    }

    /// Runs the protocol until every channel has a key, discarding any
    /// messages that arrive meanwhile.
    pub fn wait_ready(&mut self, timeout: Duration) -> Result<(), CliError> {
        let start = Instant::now();
        let channels: Vec<String> = self.session.channels().map(str::to_string).collect();
        loop {
            let missing = channels.iter().find(|c| !self.session.is_ready(c));
            let Some(channel) = missing else { return Ok(()) };
            let elapsed = start.elapsed();
            if elapsed >= timeout {
                return Err(CliError::NoKey { channel: channel.clone(), waited_ms: elapsed.as_millis() as u64 });
            }
            self.poll((timeout - elapsed).min(Duration::from_millis(50)))?;
        }
    }

    pub fn publish(&mut self, channel: &str, payload: &[u8]) -> Result<usize, CliError> {
        let datagrams = self.session.publish(channel, payload, wall_ms())?;
        self.send_raw(&datagrams)?;
        self.flush()?;
        Ok(datagrams.len())
    }
}
