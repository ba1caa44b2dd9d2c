use std::io::ErrorKind;
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, UdpSocket};
use std::time::Duration;

use socket2::{Domain, Protocol, Socket, Type};

use super::{check_size, Transport, TransportError};

/// A UDP socket sending to one destination: a multicast group, or a unicast
/// peer for point-to-point benchmarks.
#[derive(Debug)]
pub struct UdpEndpoint {
    socket: UdpSocket,
    dest: SocketAddrV4,
}

impl UdpEndpoint {
    /// Binds the group port with address reuse, joins `group` on
    /// `interface` and enables loopback so co-hosted processes hear each
    /// other.
    pub fn bind_multicast(group: SocketAddrV4, interface: Ipv4Addr, ttl: u32) -> Result<Self, TransportError> {
        if !group.ip().is_multicast() {
            return Err(TransportError::BadAddress(format!("{} is not a multicast address", group.ip())));
        }
        let socket = Socket::new(Domain::IPV4, Type::DGRAM, Some(Protocol::UDP))?;
        socket.set_reuse_address(true)?;
        #[cfg(unix)]
        socket.set_reuse_port(true)?;
        socket.bind(&SocketAddr::from((Ipv4Addr::UNSPECIFIED, group.port())).into())?;
        socket.join_multicast_v4(group.ip(), &interface)?;
        socket.set_multicast_loop_v4(true)?;
        socket.set_multicast_ttl_v4(ttl)?;
        if !interface.is_unspecified() {
            socket.set_multicast_if_v4(&interface)?;
        }
        socket.set_recv_buffer_size(4 << 20).ok();
        Ok(UdpEndpoint { socket: socket.into(), dest: group })
    }

    /// Binds `local` and sends to `peer`.
    pub fn bind_unicast(local: SocketAddrV4, peer: SocketAddrV4) -> Result<Self, TransportError> {
        let socket = UdpSocket::bind(local)?;
        Ok(UdpEndpoint { socket, dest: peer })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, TransportError> {
        Ok(self.socket.local_addr()?)
    }

    pub fn set_destination(&mut self, dest: SocketAddrV4) {
        self.dest = dest;
    }

    pub fn try_clone(&self) -> Result<Self, TransportError> {
        Ok(UdpEndpoint { socket: self.socket.try_clone()?, dest: self.dest })
    }

    /// Waits up to `timeout` for one datagram; `None` on timeout.
    pub fn recv_timeout(&self, buf: &mut [u8], timeout: Duration) -> Result<Option<usize>, TransportError> {
        self.socket.set_read_timeout(Some(timeout.max(Duration::from_micros(1))))?;
        match self.socket.recv_from(buf) {
            Ok((n, _)) => Ok(Some(n)),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

impl Transport for UdpEndpoint {
    fn send(&mut self, datagram: &[u8]) -> Result<(), TransportError> {
        check_size(datagram)?;
        self.socket.send_to(datagram, self.dest)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unicast_loopback_round_trip() {
        let a = UdpEndpoint::bind_unicast(SocketAddrV4::new(Ipv4Addr::LOCALHOST, 0), SocketAddrV4::new(Ipv4Addr::LOCALHOST, 9)).unwrap();
        let SocketAddr::V4(a_addr) = a.local_addr().unwrap() else { unreachable!() };
        let mut b = UdpEndpoint::bind_unicast(SocketAddrV4::new(Ipv4Addr::LOCALHOST, 0), a_addr).unwrap();
        b.send(b"hello").unwrap();
        let mut buf = [0u8; 64];
        let n = a.recv_timeout(&mut buf, Duration::from_secs(2)).unwrap().unwrap();
        assert_eq!(&buf[..n], b"hello");
        assert!(a.recv_timeout(&mut buf, Duration::from_millis(10)).unwrap().is_none());
    }

    #[test]
    fn rejects_non_multicast_group() {
        let err = UdpEndpoint::bind_multicast(SocketAddrV4::new(Ipv4Addr::LOCALHOST, 7667), Ipv4Addr::UNSPECIFIED, 0);
        assert!(matches!(err, Err(TransportError::BadAddress(_))));
    }
}
