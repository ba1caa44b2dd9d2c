//! `key = value` session configuration. Blank lines and `#` comments are
//! ignored; relative paths resolve against the file's directory.

use std::net::{Ipv4Addr, SocketAddrV4};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::discovery::DiscoveryConfig;
use crate::replay::DEFAULT_WINDOW;

pub const DEFAULT_MTU: usize = 1400;
pub const DEFAULT_GRACE_MS: u64 = 10_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing required key {0:?}")]
    Missing(&'static str),
    #[error("invalid value for {key}: {msg}")]
    Invalid { key: String, msg: String },
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub group: SocketAddrV4,
    pub channels: Vec<String>,
    pub cert: PathBuf,
    pub key: PathBuf,
    pub roots: PathBuf,
    pub suite: String,
    pub replay_strategy: String,
    pub window: usize,
    pub mtu: usize,
    pub ttl: u32,
    pub interface: Ipv4Addr,
    pub grace_ms: u64,
    /// How long the demo waits for keys before giving up.
    pub startup_timeout_ms: u64,
    pub discovery: DiscoveryConfig,
}

impl SessionConfig {
    /// Defaults for everything but the group and credentials.
    pub fn new(group: SocketAddrV4, cert: PathBuf, key: PathBuf, roots: PathBuf) -> Self {
        SessionConfig {
            group,
            channels: Vec::new(),
            cert,
            key,
            roots,
            suite: "p256".into(),
            replay_strategy: "rfc6479".into(),
            window: DEFAULT_WINDOW,
            mtu: DEFAULT_MTU,
            ttl: 0,
            interface: Ipv4Addr::UNSPECIFIED,
            grace_ms: DEFAULT_GRACE_MS,
            startup_timeout_ms: 10_000,
            discovery: DiscoveryConfig::default(),
        }
    }

    /// The group scope string, `ip:port`.
    pub fn group_name(&self) -> String {
        self.group.to_string()
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.into(), source: e })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut group = None;
        let mut cert = None;
        let mut key = None;
        let mut roots = None;
        let mut rest = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, msg: format!("expected key = value, got {raw:?}") })?;
            let path = || base.join(v);
            match k {
                "group" => group = Some(v.parse::<SocketAddrV4>().map_err(|e| invalid(k, e))?),
                "cert" => cert = Some(path()),
                "key" => key = Some(path()),
                "roots" => roots = Some(path()),
                _ => rest.push((i + 1, k.to_string(), v.to_string())),
            }
        }
        let mut cfg = SessionConfig::new(
            group.ok_or(ConfigError::Missing("group"))?,
            cert.ok_or(ConfigError::Missing("cert"))?,
            key.ok_or(ConfigError::Missing("key"))?,
            roots.ok_or(ConfigError::Missing("roots"))?,
        );
        for (line, k, v) in rest {
            cfg.set(line, &k, &v)?;
        }
        if cfg.window == 0 || cfg.window % 32 != 0 {
            return Err(invalid("window", "must be a positive multiple of 32"));
        }
        Ok(cfg)
    }

    fn set(&mut self, line: usize, k: &str, v: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| invalid(k, e))
        }
        let d = &mut self.discovery;
        match k {
            "channels" => self.channels = v.split(',').map(str::trim).filter(|c| !c.is_empty()).map(String::from).collect(),
            "suite" => self.suite = v.to_string(),
            "replay_strategy" => self.replay_strategy = v.to_string(),
            "window" => self.window = num(k, v)?,
            "mtu" => self.mtu = num(k, v)?,
            "ttl" => self.ttl = num(k, v)?,
            "interface" => self.interface = num(k, v)?,
            "grace_ms" => self.grace_ms = num(k, v)?,
            "startup_timeout_ms" => self.startup_timeout_ms = num(k, v)?,
            "base_offset_ms" => d.base_offset_ms = num(k, v)?,
            "epsilon_max_ms" => d.epsilon_max_ms = num(k, v)?,
            "response_delay_min_ms" => d.response_delay_min_ms = num(k, v)?,
            "response_delay_max_ms" => d.response_delay_max_ms = num(k, v)?,
            "clock_skew_ms" => d.clock_skew_ms = num(k, v)?,
            "round_timeout_ms" => d.round_timeout_ms = num(k, v)?,
            "retransmit_ms" => d.retransmit_ms = num(k, v)?,
            "linger_ms" => d.linger_ms = num(k, v)?,
            _ => return Err(ConfigError::Syntax { line, msg: format!("unknown key {k:?}") }),
        }
        if d.response_delay_min_ms > d.response_delay_max_ms {
            return Err(invalid(k, "response delay minimum exceeds maximum"));
        }
        Ok(())
    }
}

fn invalid(key: &str, msg: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), msg: msg.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_file() {
        let text = "\
# demo node
group = 239.255.76.67:7667
channels = chatter, status
cert = certs/a.pem
key = /abs/a.key
roots = ca.pem
window = 2048
replay_strategy = rfc2401
round_timeout_ms = 500  # shorter for tests
";
        let cfg = SessionConfig::parse(text, Path::new("/etc/lcm")).unwrap();
        assert_eq!(cfg.group_name(), "239.255.76.67:7667");
        assert_eq!(cfg.channels, ["chatter", "status"]);
        assert_eq!(cfg.cert, Path::new("/etc/lcm/certs/a.pem"));
        assert_eq!(cfg.key, Path::new("/abs/a.key"));
        assert_eq!(cfg.window, 2048);
        assert_eq!(cfg.replay_strategy, "rfc2401");
        assert_eq!(cfg.discovery.round_timeout_ms, 500);
        assert_eq!(cfg.mtu, DEFAULT_MTU);
    }

    #[test]
    fn rejects_bad_input() {
        let base = "group = 239.0.0.1:1\ncert = c\nkey = k\nroots = r\n";
        assert!(matches!(SessionConfig::parse("cert = c", Path::new(".")), Err(ConfigError::Missing("group"))));
        assert!(matches!(SessionConfig::parse(&format!("{base}window = 33"), Path::new(".")), Err(ConfigError::Invalid { .. })));
        assert!(matches!(SessionConfig::parse(&format!("{base}colour = red"), Path::new(".")), Err(ConfigError::Syntax { line: 5, .. })));
        assert!(matches!(SessionConfig::parse(&format!("{base}oops"), Path::new(".")), Err(ConfigError::Syntax { .. })));
    }
}
