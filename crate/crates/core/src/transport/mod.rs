//! Datagram delivery: real UDP multicast, and a deterministic simulated
//! network driven by a virtual clock.

mod sim;
mod udp;

use thiserror::Error;

pub use sim::{Delivery, NodeId, SimConfig, SimLink, SimNet, SimStats};
pub use udp::UdpEndpoint;

use crate::wire::MAX_DATAGRAM;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("datagram of {0} bytes exceeds the UDP limit")]
    Oversize(usize),
    #[error("socket error: {0}")]
    Socket(#[from] std::io::Error),
    #[error("bad address: {0}")]
    BadAddress(String),
}

/// Anything that can put a datagram on the wire. Protocol code only sees
/// this, so simulated and real runs share every code path above it.
pub trait Transport {
    fn send(&mut self, datagram: &[u8]) -> Result<(), TransportError>;
}

fn check_size(datagram: &[u8]) -> Result<(), TransportError> {
    if datagram.len() > MAX_DATAGRAM {
        return Err(TransportError::Oversize(datagram.len()));
    }
    Ok(())
}
