use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use x509_parser::certificate::X509Certificate;
use x509_parser::extensions::GeneralName;
use x509_parser::pem::Pem;
use x509_parser::prelude::FromDer;

use super::urn::{parse_san_urn, DomainUrn, LcmDomain, URN_PREFIX};
use super::IdentityError;
use crate::crypto::{CurveSuite, SigningKey};
use crate::registry::suite_by_curve_oid;

const EC_PUBLIC_KEY_OID: &str = "1.2.840.10045.2.1";

/// Closed interval of unix milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Validity {
    pub not_before_ms: u64,
    pub not_after_ms: u64,
}

impl Validity {
    pub fn contains(&self, now_ms: u64) -> bool {
        self.not_before_ms <= now_ms && now_ms <= self.not_after_ms
    }

    fn intersect(self, other: Validity) -> Validity {
        Validity {
            not_before_ms: self.not_before_ms.max(other.not_before_ms),
            not_after_ms: self.not_after_ms.min(other.not_after_ms),
        }
    }
}

fn bad(msg: impl Into<String>) -> IdentityError {
    IdentityError::BadCertificate(msg.into())
}

pub(crate) fn parse_der(der: &[u8]) -> Result<X509Certificate<'_>, IdentityError> {
    let (rest, cert) = X509Certificate::from_der(der).map_err(|e| bad(e.to_string()))?;
    if !rest.is_empty() {
        return Err(bad("trailing bytes after certificate"));
    }
    Ok(cert)
}

fn validity_of(cert: &X509Certificate<'_>) -> Validity {
    let ms = |secs: i64| (secs.max(0) as u64).saturating_mul(1000);
    Validity {
        not_before_ms: ms(cert.validity().not_before.timestamp()),
        not_after_ms: ms(cert.validity().not_after.timestamp()),
    }
}

pub(crate) fn subject_key(cert: &X509Certificate<'_>) -> Result<(Arc<dyn CurveSuite>, Vec<u8>), IdentityError> {
    let spki = cert.public_key();
    if spki.algorithm.algorithm.to_id_string() != EC_PUBLIC_KEY_OID {
        return Err(IdentityError::Unsupported(spki.algorithm.algorithm.to_id_string()));
    }
    let curve = spki
        .algorithm
        .parameters
        .as_ref()
        .and_then(|p| p.as_oid().ok())
        .ok_or_else(|| bad("EC key without named curve"))?
        .to_id_string();
    let suite = suite_by_curve_oid(&curve).ok_or(IdentityError::Unsupported(curve))?;
    Ok((suite, spki.subject_public_key.data.to_vec()))
}

/// Whether `child` carries a valid signature by the given issuer key.
fn signed_by(child: &X509Certificate<'_>, suite: &dyn CurveSuite, issuer_key: &[u8]) -> bool {
    child.signature_algorithm.algorithm.to_id_string() == suite.signature_oid()
        && suite.verify_der(issuer_key, child.tbs_certificate.as_ref(), &child.signature_value.data)
}

/// A peer certificate with its chain, leaf first.
#[derive(Clone)]
pub struct PeerCertificate {
    chain: Vec<Vec<u8>>,
    suite: Arc<dyn CurveSuite>,
    public_key: Vec<u8>,
    urns: Vec<DomainUrn>,
    validity: Validity,
    fingerprint: [u8; 32],
}

impl PeerCertificate {
    pub fn from_chain(chain: Vec<Vec<u8>>) -> Result<Self, IdentityError> {
        let leaf_der = chain.first().ok_or_else(|| bad("empty chain"))?;
        let leaf = parse_der(leaf_der)?;
        let (suite, public_key) = subject_key(&leaf)?;
        let mut urns = Vec::new();
        if let Some(san) = leaf.subject_alternative_name().map_err(|e| bad(e.to_string()))? {
            for name in &san.value.general_names {
                if let GeneralName::URI(uri) = name {
                    if uri.starts_with(URN_PREFIX) {
                        urns.push(parse_san_urn(uri)?);
                    }
                }
            }
        }
        if urns.is_empty() {
            return Err(bad("no lcmsec SAN URN"));
        }
        let validity = validity_of(&leaf);
        for der in &chain[1..] {
            parse_der(der)?;
        }
        let fingerprint = Sha256::digest(leaf_der).into();
        Ok(PeerCertificate { chain, suite, public_key, urns, validity, fingerprint })
    }

    pub fn from_der(der: &[u8]) -> Result<Self, IdentityError> {
        Self::from_chain(vec![der.to_vec()])
    }

    /// Parses every CERTIFICATE block of a PEM bundle, leaf first.
    pub fn from_pem(pem: &str) -> Result<Self, IdentityError> {
        let mut chain = Vec::new();
        for block in Pem::iter_from_buffer(pem.as_bytes()) {
            let block = block.map_err(|e| bad(e.to_string()))?;
            if block.label == "CERTIFICATE" {
                chain.push(block.contents);
            }
        }
        Self::from_chain(chain)
    }

    pub fn to_pem(&self) -> String {
        self.chain.iter().map(|der| der_to_pem(der)).collect()
    }

    pub fn chain(&self) -> &[Vec<u8>] {
        &self.chain
    }

    pub fn leaf_der(&self) -> &[u8] {
        &self.chain[0]
    }

    pub fn suite(&self) -> &Arc<dyn CurveSuite> {
        &self.suite
    }

    pub fn public_key(&self) -> &[u8] {
        &self.public_key
    }

    pub fn urns(&self) -> &[DomainUrn] {
        &self.urns
    }

    pub fn validity(&self) -> Validity {
        self.validity
    }

    /// SHA-256 of the leaf DER.
    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    pub fn verify_signature(&self, msg: &[u8], sig: &[u8]) -> bool {
        self.suite.verify(&self.public_key, msg, sig)
    }
}

impl PartialEq for PeerCertificate {
    fn eq(&self, other: &Self) -> bool {
        self.chain == other.chain
    }
}

impl Eq for PeerCertificate {}

impl fmt::Debug for PeerCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let urns: Vec<String> = self.urns.iter().map(ToString::to_string).collect();
        f.debug_struct("PeerCertificate")
            .field("urns", &urns)
            .field("suite", &self.suite.name())
            .field("chain_len", &self.chain.len())
            .finish()
    }
}

pub(crate) fn der_to_pem(der: &[u8]) -> String {
    pem_block("CERTIFICATE", der)
}

pub(crate) fn pem_block(label: &str, der: &[u8]) -> String {
    pem::encode_config(&pem::Pem::new(label, der), pem::EncodeConfig::new().set_line_ending(pem::LineEnding::LF))
}

/// Access granted to a certificate holder on one domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permission {
    pub domain: LcmDomain,
    pub uid: u16,
}

/// Grants access to `domain` from the SAN URNs of an already verified
/// certificate. An exact channel match wins over the wildcard; among equal
/// matches the smallest id is used.
pub fn authorize(cert: &PeerCertificate, domain: &LcmDomain, now_ms: u64) -> Result<Permission, IdentityError> {
    if !cert.validity.contains(now_ms) {
        return Err(IdentityError::Expired);
    }
    cert.urns
        .iter()
        .filter(|u| u.covers(domain))
        .min_by_key(|u| (u.is_wildcard(), u.id()))
        .map(|u| Permission { domain: domain.clone(), uid: u.id() })
        .ok_or_else(|| IdentityError::NotAuthorized(domain.clone()))
}

struct Root {
    der: Vec<u8>,
    subject: Vec<u8>,
    suite: Arc<dyn CurveSuite>,
    public_key: Vec<u8>,
    validity: Validity,
}

/// Trust anchors.
#[derive(Default)]
pub struct RootStore {
    roots: Vec<Root>,
}

impl fmt::Debug for RootStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RootStore").field("roots", &self.roots.len()).finish()
    }
}

impl RootStore {
    pub fn add_der(&mut self, der: &[u8]) -> Result<(), IdentityError> {
        let cert = parse_der(der)?;
        let (suite, public_key) = subject_key(&cert)?;
        let subject = cert.subject().as_raw().to_vec();
        let validity = validity_of(&cert);
        self.roots.push(Root { der: der.to_vec(), subject, suite, public_key, validity });
        Ok(())
    }

    pub fn add_pem(&mut self, pem: &str) -> Result<(), IdentityError> {
        for block in Pem::iter_from_buffer(pem.as_bytes()) {
            let block = block.map_err(|e| bad(e.to_string()))?;
            if block.label == "CERTIFICATE" {
                self.add_der(&block.contents)?;
            }
        }
        Ok(())
    }

    /// Loads every `*.pem` / `*.crt` file of `dir`, or `dir` itself when it
    /// names a file.
    pub fn from_path(path: &Path) -> Result<Self, IdentityError> {
        let mut store = RootStore::default();
        let files = if path.is_dir() {
            let mut files: Vec<_> = std::fs::read_dir(path)
                .map_err(|e| IdentityError::io(path, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "pem" || x == "crt"))
                .collect();
            files.sort();
            files
        } else {
            vec![path.to_path_buf()]
        };
        for file in files {
            let text = std::fs::read_to_string(&file).map_err(|e| IdentityError::io(&file, e))?;
            store.add_pem(&text)?;
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    pub fn contains_der(&self, der: &[u8]) -> bool {
        self.roots.iter().any(|r| r.der == der)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verification {
    pub ok: bool,
    pub reason: Option<String>,
}

impl Verification {
    fn pass() -> Self {
        Verification { ok: true, reason: None }
    }

    fn fail(reason: impl Into<String>) -> Self {
        Verification { ok: false, reason: Some(reason.into()) }
    }
}

/// Checks chain signatures and returns the intersection of all validity
/// windows along the path.
fn chain_signatures(cert: &PeerCertificate, roots: &RootStore) -> Result<Validity, String> {
    let parsed: Vec<X509Certificate<'_>> =
        cert.chain.iter().map(|d| parse_der(d)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let mut window = validity_of(&parsed[0]);
    for pair in parsed.windows(2) {
        let (child, issuer) = (&pair[0], &pair[1]);
        if child.issuer().as_raw() != issuer.subject().as_raw() {
            return Err("issuer name does not match next certificate in chain".into());
        }
        let (suite, key) = subject_key(issuer).map_err(|e| e.to_string())?;
        if !signed_by(child, suite.as_ref(), &key) {
            return Err("bad signature inside chain".into());
        }
        window = window.intersect(validity_of(issuer));
    }
    let top = parsed.last().expect("chain non-empty");
    let root = roots
        .roots
        .iter()
        .find(|r| r.subject == top.issuer().as_raw() && signed_by(top, r.suite.as_ref(), &r.public_key))
        .ok_or_else(|| "chain does not terminate at a configured root".to_string())?;
    Ok(window.intersect(root.validity))
}

/// True iff the signature chain terminates at a root and `now_ms` lies
/// within every validity window on the path.
pub fn verify_chain(cert: &PeerCertificate, roots: &RootStore, now_ms: u64) -> Verification {
    match chain_signatures(cert, roots) {
        Err(reason) => Verification::fail(reason),
        Ok(window) if !window.contains(now_ms) => Verification::fail("outside validity window"),
        Ok(_) => Verification::pass(),
    }
}

/// [`verify_chain`] with signature results memoized by leaf fingerprint.
/// Validity is re-checked on every call.
#[derive(Debug)]
pub struct CertVerifier {
    roots: Arc<RootStore>,
    cache: HashMap<[u8; 32], Result<Validity, String>>,
}

impl CertVerifier {
    pub fn new(roots: Arc<RootStore>) -> Self {
        CertVerifier { roots, cache: HashMap::new() }
    }

    pub fn verify(&mut self, cert: &PeerCertificate, now_ms: u64) -> Verification {
        let roots = &self.roots;
        let result = self.cache.entry(cert.fingerprint).or_insert_with(|| chain_signatures(cert, roots));
        match result {
            Err(reason) => Verification::fail(reason.clone()),
            Ok(window) if !window.contains(now_ms) => Verification::fail("outside validity window"),
            Ok(_) => Verification::pass(),
        }
    }
}

/// The local node's certificate and private key.
#[derive(Clone)]
pub struct Identity {
    cert: PeerCertificate,
    key: Arc<SigningKey>,
}

impl fmt::Debug for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Identity").field("cert", &self.cert).finish_non_exhaustive()
    }
}

impl Identity {
    pub fn new(cert: PeerCertificate, key: SigningKey) -> Result<Self, IdentityError> {
        if cert.suite.public_key(&key) != cert.public_key {
            return Err(bad("private key does not match certificate"));
        }
        Ok(Identity { cert, key: Arc::new(key) })
    }

    pub fn from_pem(cert_pem: &str, key_pem: &str) -> Result<Self, IdentityError> {
        let cert = PeerCertificate::from_pem(cert_pem)?;
        let key = cert.suite.signing_key_from_pem(key_pem)?;
        Self::new(cert, key)
    }

    pub fn load(cert_path: &Path, key_path: &Path) -> Result<Self, IdentityError> {
        let cert = std::fs::read_to_string(cert_path).map_err(|e| IdentityError::io(cert_path, e))?;
        let key = std::fs::read_to_string(key_path).map_err(|e| IdentityError::io(key_path, e))?;
        Self::from_pem(&cert, &key)
    }

    pub fn certificate(&self) -> &PeerCertificate {
        &self.cert
    }

    pub fn sign(&self, msg: &[u8]) -> Vec<u8> {
        self.cert.suite.sign(&self.key, msg)
    }

    pub fn key_pem(&self) -> Result<String, IdentityError> {
        Ok(self.cert.suite.signing_key_to_pem(&self.key)?)
    }
}
