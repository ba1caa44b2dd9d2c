use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rcgen::{
    BasicConstraints, CertificateParams, DistinguishedName, DnType, IsCa, KeyIdMethod, KeyPair,
    KeyUsagePurpose, PublicKeyData, RemoteKeyPair, SanType, SerialNumber, SignatureAlgorithm,
};
use sha2::{Digest, Sha256};
use time::OffsetDateTime;

use super::cert::{der_to_pem, parse_der, subject_key, PeerCertificate, Validity};
use super::urn::{DomainUrn, UrnRequest};
use super::{Identity, IdentityError};
use crate::crypto::{CurveSuite, SigningKey, SuiteRngDyn};

/// Append-only `domain id` log of every id the CA has handed out.
#[derive(Debug, Default)]
pub struct IssuanceLog {
    path: Option<PathBuf>,
    ids: BTreeMap<String, BTreeSet<u16>>,
}

impl IssuanceLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates on first append) the log at `path`.
    pub fn open(path: &Path) -> Result<Self, IdentityError> {
        let mut log = IssuanceLog { path: Some(path.to_path_buf()), ids: BTreeMap::new() };
        match std::fs::read_to_string(path) {
            Ok(text) => {
                for (n, line) in text.lines().enumerate() {
                    let line = line.trim();
                    if line.is_empty() {
                        continue;
                    }
                    let parsed = line.rsplit_once(' ').and_then(|(d, id)| Some((d, id.parse::<u16>().ok()?)));
                    let (domain, id) = parsed.ok_or_else(|| {
                        IdentityError::MalformedUrn(format!("{}:{}: bad log line {line:?}", path.display(), n + 1))
                    })?;
                    log.ids.entry(domain.to_string()).or_default().insert(id);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(IdentityError::io(path, e)),
        }
        Ok(log)
    }

    pub fn issued(&self, domain_key: &str) -> impl Iterator<Item = u16> + '_ {
        self.ids.get(domain_key).into_iter().flatten().copied()
    }

    /// Resolves every request to a concrete URN without recording anything.
    /// Auto ids are `max + 1` over the log and earlier requests of the batch.
    fn resolve(&self, requests: &[UrnRequest]) -> Result<Vec<DomainUrn>, IdentityError> {
        let mut pending: BTreeMap<String, BTreeSet<u16>> = BTreeMap::new();
        let mut out = Vec::with_capacity(requests.len());
        for req in requests {
            let domain = format!("{}:{}", req.group, req.channel);
            let taken = |id: u16, pending: &BTreeMap<String, BTreeSet<u16>>| {
                self.ids.get(&domain).is_some_and(|s| s.contains(&id))
                    || pending.get(&domain).is_some_and(|s| s.contains(&id))
            };
            let id = match req.id {
                Some(id) if taken(id, &pending) => return Err(IdentityError::DuplicateId { domain, id }),
                Some(id) => id,
                None => {
                    let max = self
                        .ids
                        .get(&domain)
                        .and_then(|s| s.last().copied())
                        .max(pending.get(&domain).and_then(|s| s.last().copied()));
                    match max {
                        None => 1,
                        Some(u16::MAX) => return Err(IdentityError::IdExhausted(domain)),
                        Some(m) => m + 1,
                    }
                }
            };
            pending.entry(domain).or_default().insert(id);
            out.push(DomainUrn::new(req.group.clone(), req.channel.clone(), id)?);
        }
        Ok(out)
    }

    fn record(&mut self, urns: &[DomainUrn]) -> Result<(), IdentityError> {
        if let Some(path) = &self.path {
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| IdentityError::io(path, e))?;
            let lines: String = urns.iter().map(|u| format!("{} {}\n", u.domain_key(), u.id())).collect();
            file.write_all(lines.as_bytes()).and_then(|_| file.sync_data()).map_err(|e| IdentityError::io(path, e))?;
        }
        for u in urns {
            self.ids.entry(u.domain_key()).or_default().insert(u.id());
        }
        Ok(())
    }
}

/// Signs through a [`CurveSuite`] so that rcgen needs no crypto backend.
struct SuiteKey {
    suite: Arc<dyn CurveSuite>,
    key: SigningKey,
    public_key: Vec<u8>,
}

impl RemoteKeyPair for SuiteKey {
    fn public_key(&self) -> &[u8] {
        &self.public_key
    }

    fn sign(&self, msg: &[u8]) -> Result<Vec<u8>, rcgen::Error> {
        Ok(self.suite.sign_der(&self.key, msg))
    }

    fn algorithm(&self) -> &'static SignatureAlgorithm {
        self.suite.x509_algorithm()
    }
}

struct SubjectKey<'a> {
    public_key: &'a [u8],
    alg: &'static SignatureAlgorithm,
}

impl PublicKeyData for SubjectKey<'_> {
    fn der_bytes(&self) -> &[u8] {
        self.public_key
    }

    fn algorithm(&self) -> &SignatureAlgorithm {
        self.alg
    }
}

fn gen_err(e: rcgen::Error) -> IdentityError {
    IdentityError::Generation(e.to_string())
}

fn to_datetime(ms: u64) -> Result<OffsetDateTime, IdentityError> {
    let secs = i64::try_from(ms / 1000).map_err(|_| IdentityError::Generation("validity out of range".into()))?;
    OffsetDateTime::from_unix_timestamp(secs).map_err(|e| IdentityError::Generation(e.to_string()))
}

fn key_id(public_key: &[u8]) -> Vec<u8> {
    Sha256::digest(public_key)[..20].to_vec()
}

fn serial(public_key: &[u8], urns: &[DomainUrn]) -> SerialNumber {
    let mut h = Sha256::new();
    h.update(public_key);
    for u in urns {
        h.update(u.to_string().as_bytes());
        h.update([0]);
    }
    let mut bytes = h.finalize()[..16].to_vec();
    // Positive INTEGER without a leading zero octet.
    bytes[0] = (bytes[0] & 0x7f) | 0x40;
    SerialNumber::from_slice(&bytes)
}

#[derive(Debug, Clone)]
pub struct IssuedCertificate {
    pub certificate: PeerCertificate,
    pub urns: Vec<DomainUrn>,
}

/// A root CA holding its key, self-signed certificate and issuance log.
pub struct CertificateAuthority {
    suite: Arc<dyn CurveSuite>,
    key: SigningKey,
    cert_der: Vec<u8>,
    log: IssuanceLog,
}

impl std::fmt::Debug for CertificateAuthority {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CertificateAuthority").field("suite", &self.suite.name()).finish_non_exhaustive()
    }
}

impl CertificateAuthority {
    pub fn init(
        suite: Arc<dyn CurveSuite>,
        rng: &mut dyn SuiteRngDyn,
        common_name: &str,
        validity: Validity,
        log: IssuanceLog,
    ) -> Result<Self, IdentityError> {
        let key = suite.generate_signing_key(rng);
        let public_key = suite.public_key(&key);
        let mut params = CertificateParams::default();
        params.distinguished_name = DistinguishedName::new();
        params.distinguished_name.push(DnType::CommonName, common_name);
        params.is_ca = IsCa::Ca(BasicConstraints::Unconstrained);
        params.key_usages = vec![KeyUsagePurpose::KeyCertSign, KeyUsagePurpose::DigitalSignature];
        params.key_identifier_method = KeyIdMethod::PreSpecified(key_id(&public_key));
        params.serial_number = Some(serial(&public_key, &[]));
        params.not_before = to_datetime(validity.not_before_ms)?;
        params.not_after = to_datetime(validity.not_after_ms)?;
        let signer = Self::signer(&suite, &key)?;
        let cert = params.self_signed(&signer).map_err(gen_err)?;
        Ok(CertificateAuthority { suite, key, cert_der: cert.der().to_vec(), log })
    }

    pub fn from_parts(
        suite: Arc<dyn CurveSuite>,
        key: SigningKey,
        cert_der: Vec<u8>,
        log: IssuanceLog,
    ) -> Self {
        CertificateAuthority { suite, key, cert_der, log }
    }

    /// Reloads a CA written by [`Self::root_pem`] and [`Self::key_pem`].
    pub fn from_pem(root_pem: &str, key_pem: &str, log: IssuanceLog) -> Result<Self, IdentityError> {
        let block = pem::parse(root_pem).map_err(|e| IdentityError::BadCertificate(e.to_string()))?;
        let cert_der = block.into_contents();
        let (suite, public_key) = subject_key(&parse_der(&cert_der)?)?;
        let key = suite.signing_key_from_pem(key_pem)?;
        if suite.public_key(&key) != public_key {
            return Err(IdentityError::BadCertificate("CA key does not match root certificate".into()));
        }
        Ok(CertificateAuthority { suite, key, cert_der, log })
    }

    fn signer(suite: &Arc<dyn CurveSuite>, key: &SigningKey) -> Result<KeyPair, IdentityError> {
        let remote = SuiteKey { suite: suite.clone(), key: key.clone(), public_key: suite.public_key(key) };
        KeyPair::from_remote(Box::new(remote)).map_err(gen_err)
    }

    pub fn suite(&self) -> &Arc<dyn CurveSuite> {
        &self.suite
    }

    pub fn root_der(&self) -> &[u8] {
        &self.cert_der
    }

    pub fn root_pem(&self) -> String {
        der_to_pem(&self.cert_der)
    }

    pub fn key_pem(&self) -> Result<String, IdentityError> {
        Ok(self.suite.signing_key_to_pem(&self.key)?)
    }

    pub fn log(&self) -> &IssuanceLog {
        &self.log
    }

    /// Issues one certificate carrying every requested SAN URN for
    /// `subject_public_key` (uncompressed SEC1 on this CA's curve). Nothing
    /// is logged unless issuance succeeds.
    pub fn issue(
        &mut self,
        requests: &[UrnRequest],
        subject_public_key: &[u8],
        validity: Validity,
    ) -> Result<IssuedCertificate, IdentityError> {
        if requests.is_empty() {
            return Err(IdentityError::MalformedUrn("no URN requested".into()));
        }
        let urns = self.log.resolve(requests)?;
        let mut params = CertificateParams::default();
        params.distinguished_name = DistinguishedName::new();
        params.distinguished_name.push(DnType::CommonName, urns[0].to_string());
        params.subject_alt_names = urns
            .iter()
            .map(|u| {
                rcgen::Ia5String::try_from(u.to_string())
                    .map(SanType::URI)
                    .map_err(|e| IdentityError::MalformedUrn(e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        params.key_usages = vec![KeyUsagePurpose::DigitalSignature];
        params.key_identifier_method = KeyIdMethod::PreSpecified(key_id(subject_public_key));
        params.use_authority_key_identifier_extension = true;
        params.serial_number = Some(serial(subject_public_key, &urns));
        params.not_before = to_datetime(validity.not_before_ms)?;
        params.not_after = to_datetime(validity.not_after_ms)?;

        let signer = Self::signer(&self.suite, &self.key)?;
        let issuer = CertificateParams::from_ca_cert_der(&self.cert_der.clone().into())
            .map_err(gen_err)?
            .self_signed(&signer)
            .map_err(gen_err)?;
        let subject = SubjectKey { public_key: subject_public_key, alg: self.suite.x509_algorithm() };
        let cert = params.signed_by(&subject, &issuer, &signer).map_err(gen_err)?;
        let certificate = PeerCertificate::from_chain(vec![cert.der().to_vec()])?;
        self.log.record(&urns)?;
        Ok(IssuedCertificate { certificate, urns })
    }

    /// Generates a fresh key pair and issues a certificate for it.
    pub fn issue_identity(
        &mut self,
        rng: &mut dyn SuiteRngDyn,
        requests: &[UrnRequest],
        validity: Validity,
    ) -> Result<Identity, IdentityError> {
        let key = self.suite.generate_signing_key(rng);
        let issued = self.issue(requests, &self.suite.public_key(&key), validity)?;
        Identity::new(issued.certificate, key)
    }
}
