pub mod cluster;
pub mod config;
pub mod crypto;
pub mod dbgka;
pub mod discovery;
pub mod identity;
pub mod registry;
pub mod replay;
pub mod scenarios;
pub mod session;
pub mod transport;
pub mod wire;
