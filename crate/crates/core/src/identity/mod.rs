//! Certificates, SAN-URN permissions, CA issuance and authorization.

mod ca;
mod cert;
mod urn;

pub use ca::{CertificateAuthority, IssuanceLog, IssuedCertificate};
pub use cert::{
    authorize, verify_chain, CertVerifier, Identity, PeerCertificate, Permission, RootStore,
    Validity, Verification,
};
pub use urn::{
    parse_san_urn, DomainUrn, LcmDomain, UrnRequest, MAX_CHANNEL_LEN, URN_PREFIX, WILDCARD_CHANNEL,
};

use thiserror::Error;

use crate::crypto::CryptoError;

#[derive(Debug, Error)]
pub enum IdentityError {
    #[error("malformed URN: {0}")]
    MalformedUrn(String),
    #[error("certificate grants no access to {0}")]
    NotAuthorized(LcmDomain),
    #[error("certificate outside its validity window")]
    Expired,
    #[error("id {id} already issued for domain {domain}")]
    DuplicateId { domain: String, id: u16 },
    #[error("no free id left for domain {0}")]
    IdExhausted(String),
    #[error("invalid certificate: {0}")]
    BadCertificate(String),
    #[error("unsupported key or signature algorithm: {0}")]
    Unsupported(String),
    #[error("certificate generation failed: {0}")]
    Generation(String),
    #[error(transparent)]
    Key(#[from] CryptoError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl IdentityError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        IdentityError::Io { path: path.display().to_string(), source }
    }
}
