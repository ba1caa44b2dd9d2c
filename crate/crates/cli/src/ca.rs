//! File-backed certificate authority: `root.pem`, `root.key` and the
//! append-only `issued.log` live together in one directory.

use std::path::{Path, PathBuf};

use lcmsec::identity::{CertificateAuthority, DomainUrn, IssuanceLog, UrnRequest, Validity};
use lcmsec::registry;
use rand::rngs::OsRng;

use crate::{wall_ms, CliError};

pub const ROOT_CERT: &str = "root.pem";
pub const ROOT_KEY: &str = "root.key";
pub const ISSUANCE_LOG: &str = "issued.log";
const HOUR_MS: u64 = 3_600_000;
const DAY_MS: u64 = 24 * HOUR_MS;

fn validity(days: u64) -> Validity {
    let now = wall_ms();
    // Backdated by an hour to tolerate clock skew between hosts.
    Validity { not_before_ms: now - HOUR_MS, not_after_ms: now + days * DAY_MS }
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Creates a self-signed root in `dir`. Refuses to overwrite an existing
/// root.
pub fn init(dir: &Path, suite: &str, common_name: &str, days: u64) -> Result<PathBuf, CliError> {
    let suite = registry::suite_by_name(suite).map_err(|e| CliError::Usage(e.to_string()))?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let cert_path = dir.join(ROOT_CERT);
    if cert_path.exists() {
        return Err(CliError::Usage(format!("{} already exists", cert_path.display())));
    }
    let ca = CertificateAuthority::init(suite, &mut OsRng, common_name, validity(days), IssuanceLog::in_memory())?;
    write(&dir.join(ROOT_KEY), &ca.key_pem()?)?;
    write(&cert_path, &ca.root_pem())?;
    Ok(cert_path)
}

pub fn load(dir: &Path) -> Result<CertificateAuthority, CliError> {
    let read = |name: &str| {
        let p = dir.join(name);
        std::fs::read_to_string(&p).map_err(|e| CliError::io(p, e))
    };
    let log = IssuanceLog::open(&dir.join(ISSUANCE_LOG))?;
    Ok(CertificateAuthority::from_pem(&read(ROOT_CERT)?, &read(ROOT_KEY)?, log)?)
}

/// Issues one certificate carrying every URN and writes `<out>.pem` and
/// `<out>.key`. Returns the URNs with their resolved ids.
pub fn issue(dir: &Path, urns: &[String], out: &Path, days: u64) -> Result<Vec<DomainUrn>, CliError> {
    let requests = urns.iter().map(|u| u.parse::<UrnRequest>()).collect::<Result<Vec<_>, _>>()?;
    let mut ca = load(dir)?;
    let identity = ca.issue_identity(&mut OsRng, &requests, validity(days))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    write(&out.with_extension("key"), &identity.key_pem()?)?;
    write(&out.with_extension("pem"), &identity.certificate().to_pem())?;
    Ok(identity.certificate().urns().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use lcmsec::identity::{verify_chain, IdentityError, Identity, RootStore};

    const URN: &str = "urn:lcmsec:239.255.76.67:7667:chatter:auto";

    #[test]
    fn init_then_issue_assigns_ids_in_order() {
        let dir = tempfile::tempdir().unwrap();
        init(dir.path(), "p256", "test root", 30).unwrap();
        assert!(init(dir.path(), "p256", "again", 30).is_err());
        let first = issue(dir.path(), &[URN.into()], &dir.path().join("a"), 30).unwrap();
        let second = issue(dir.path(), &[URN.into(), "urn:lcmsec:239.255.76.67:7667::auto".into()], &dir.path().join("b"), 30)
            .unwrap();
        assert_eq!(first[0].id(), 1);
        assert_eq!(second.len(), 2);
        assert_eq!(second[0].id(), 2);

        let id = Identity::load(&dir.path().join("b.pem"), &dir.path().join("b.key")).unwrap();
        assert_eq!(id.certificate().urns().len(), 2);
        let roots = RootStore::from_path(&dir.path().join(ROOT_CERT)).unwrap();
        assert!(verify_chain(id.certificate(), &roots, wall_ms()).ok);
    }

    #[test]
    fn duplicate_explicit_id_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        init(dir.path(), "p384", "test root", 30).unwrap();
        let urn = "urn:lcmsec:239.255.76.67:7667:chatter:5".to_string();
        issue(dir.path(), &[urn.clone()], &dir.path().join("a"), 30).unwrap();
        let err = issue(dir.path(), &[urn], &dir.path().join("b"), 30).unwrap_err();
        assert!(matches!(err, CliError::Identity(IdentityError::DuplicateId { id: 5, .. })), "{err}");
        assert!(!dir.path().join("b.pem").exists());
    }
}
