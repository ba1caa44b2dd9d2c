//! Prime-order group and signature backends.
//!
//! Each backend implements [`CurveSuite`] and is registered by name in
//! [`crate::registry::curve_suites`]. Group elements and scalars are carried
//! as opaque byte strings so that protocol code never depends on a concrete
//! curve type; the suite decodes, validates and re-encodes on every op.

use std::fmt;

use rand::RngCore;
use rand::CryptoRng;

use super::CryptoError;

/// Element of the prime-order group, stored in uncompressed SEC1 form.
///
/// The identity is stored as the single byte `0x00`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GroupElement(Vec<u8>);

impl GroupElement {
    pub(crate) fn from_raw(bytes: Vec<u8>) -> Self {
        GroupElement(bytes)
    }

    pub(crate) fn raw(&self) -> &[u8] {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0 == [0u8]
    }
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.0.len().min(9);
        write!(f, "GroupElement({}..)", hex(&self.0[..n]))
    }
}

/// Scalar modulo the group order, big-endian, never zero.
#[derive(Clone, PartialEq, Eq)]
pub struct Scalar(Vec<u8>);

impl Scalar {
    pub(crate) fn from_raw(bytes: Vec<u8>) -> Self {
        Scalar(bytes)
    }

    pub(crate) fn raw(&self) -> &[u8] {
        &self.0
    }

    /// Big-endian bytes of the secret. Intended for test oracles.
    pub fn expose_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Scalar(..)")
    }
}

impl Drop for Scalar {
    fn drop(&mut self) {
        self.0.iter_mut().for_each(|b| *b = 0);
    }
}

/// ECDSA private key bytes for a specific suite.
#[derive(Clone, PartialEq, Eq)]
pub struct SigningKey(Vec<u8>);

impl SigningKey {
    pub(crate) fn from_raw(bytes: Vec<u8>) -> Self {
        SigningKey(bytes)
    }

    pub(crate) fn raw(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SigningKey(..)")
    }
}

impl Drop for SigningKey {
    fn drop(&mut self) {
        self.0.iter_mut().for_each(|b| *b = 0);
    }
}

/// A prime-order group together with the signature scheme over the same curve.
pub trait CurveSuite: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Object identifier of the named curve as it appears in an X.509 SPKI.
    fn curve_oid(&self) -> &'static str;

    /// Object identifier of the ECDSA-with-hash algorithm used for certificates.
    fn signature_oid(&self) -> &'static str;

    fn x509_algorithm(&self) -> &'static rcgen::SignatureAlgorithm;

    fn random_scalar(&self, rng: &mut dyn SuiteRngDyn) -> Scalar;

    /// Interprets big-endian bytes (right-aligned, truncated to the field
    /// width) as a scalar reduced mod q; zero maps to one.
    fn scalar_from_bytes(&self, bytes: &[u8]) -> Scalar;

    fn generator(&self) -> GroupElement;

    fn identity(&self) -> GroupElement;

    fn exp(&self, base: &GroupElement, s: &Scalar) -> GroupElement;

    fn op(&self, a: &GroupElement, b: &GroupElement) -> GroupElement;

    fn inv(&self, a: &GroupElement) -> GroupElement;

    /// Compressed SEC1 encoding; the identity encodes as `[0x00]`.
    fn serialize(&self, a: &GroupElement) -> Vec<u8>;

    /// Parses and validates a point. Off-curve input is rejected.
    fn deserialize(&self, bytes: &[u8]) -> Result<GroupElement, CryptoError>;

    fn generate_signing_key(&self, rng: &mut dyn SuiteRngDyn) -> SigningKey;

    /// Uncompressed SEC1 public key for `sk`.
    fn public_key(&self, sk: &SigningKey) -> Vec<u8>;

    /// Fixed-width `r || s` signature over `msg`.
    fn sign(&self, sk: &SigningKey, msg: &[u8]) -> Vec<u8>;

    fn verify(&self, public_key: &[u8], msg: &[u8], sig: &[u8]) -> bool;

    /// DER-encoded signature, as carried in X.509.
    fn sign_der(&self, sk: &SigningKey, msg: &[u8]) -> Vec<u8>;

    fn verify_der(&self, public_key: &[u8], msg: &[u8], der_sig: &[u8]) -> bool;

    fn signing_key_to_pem(&self, sk: &SigningKey) -> Result<String, CryptoError>;

    fn signing_key_from_pem(&self, pem: &str) -> Result<SigningKey, CryptoError>;
}

/// Object-safe random source accepted by suite operations.
pub trait SuiteRngDyn: RngCore + CryptoRng {}
impl<T: RngCore + CryptoRng> SuiteRngDyn for T {}

struct DynRng<'a>(&'a mut dyn SuiteRngDyn);

impl RngCore for DynRng<'_> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

impl CryptoRng for DynRng<'_> {}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

macro_rules! ecdsa_suite {
    ($ty:ident, $krate:ident, $name:literal, $curve_oid:literal, $sig_oid:literal, $alg:ident, $uint:ty) => {
        #[derive(Debug, Default, Clone, Copy)]
        pub struct $ty;

        impl $ty {
            fn point(&self, e: &GroupElement) -> $krate::ProjectivePoint {
                use $krate::elliptic_curve::sec1::FromEncodedPoint;
                if e.is_identity() {
                    return $krate::ProjectivePoint::IDENTITY;
                }
                let encoded = $krate::EncodedPoint::from_bytes(e.raw())
                    .expect("group element stored in validated form");
                Option::<$krate::AffinePoint>::from($krate::AffinePoint::from_encoded_point(&encoded))
                    .expect("group element stored in validated form")
                    .into()
            }

            fn element(&self, p: $krate::ProjectivePoint) -> GroupElement {
                use $krate::elliptic_curve::group::Group;
                use $krate::elliptic_curve::sec1::ToEncodedPoint;
                if bool::from(p.is_identity()) {
                    return GroupElement::from_raw(vec![0]);
                }
                let affine: $krate::AffinePoint = p.into();
                GroupElement::from_raw(affine.to_encoded_point(false).as_bytes().to_vec())
            }

            fn scalar(&self, s: &Scalar) -> $krate::Scalar {
                use $krate::elliptic_curve::PrimeField;
                let repr = $krate::FieldBytes::clone_from_slice(s.raw());
                Option::from($krate::Scalar::from_repr(repr)).expect("scalar stored in canonical form")
            }

            fn secret(&self, sk: &SigningKey) -> $krate::ecdsa::SigningKey {
                $krate::ecdsa::SigningKey::from_slice(sk.raw()).expect("signing key stored in canonical form")
            }
        }

        impl CurveSuite for $ty {
            fn name(&self) -> &'static str {
                $name
            }

            fn curve_oid(&self) -> &'static str {
                $curve_oid
            }

            fn signature_oid(&self) -> &'static str {
                $sig_oid
            }

            fn x509_algorithm(&self) -> &'static rcgen::SignatureAlgorithm {
                &rcgen::$alg
            }

            fn random_scalar(&self, rng: &mut dyn SuiteRngDyn) -> Scalar {
                let s = $krate::NonZeroScalar::random(&mut DynRng(rng));
                Scalar::from_raw(s.to_bytes().to_vec())
            }

            fn scalar_from_bytes(&self, bytes: &[u8]) -> Scalar {
                use $krate::elliptic_curve::ops::Reduce;
                #[allow(unused_imports)]
                use $krate::elliptic_curve::Field;
                let mut repr = $krate::FieldBytes::default();
                let n = repr.len().min(bytes.len());
                let start = repr.len() - n;
                repr[start..].copy_from_slice(&bytes[..n]);
                let mut s = <$krate::Scalar as Reduce<$uint>>::reduce_bytes(&repr);
                if bool::from(s.is_zero()) {
                    s = $krate::Scalar::ONE;
                }
                Scalar::from_raw(s.to_bytes().to_vec())
            }

            fn generator(&self) -> GroupElement {
                use $krate::elliptic_curve::group::Group;
                self.element($krate::ProjectivePoint::generator())
            }

            fn identity(&self) -> GroupElement {
                GroupElement::from_raw(vec![0])
            }

            fn exp(&self, base: &GroupElement, s: &Scalar) -> GroupElement {
                self.element(self.point(base) * self.scalar(s))
            }

            fn op(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
                self.element(self.point(a) + self.point(b))
            }

            fn inv(&self, a: &GroupElement) -> GroupElement {
                self.element(-self.point(a))
            }

            fn serialize(&self, a: &GroupElement) -> Vec<u8> {
                use $krate::elliptic_curve::sec1::ToEncodedPoint;
                if a.is_identity() {
                    return vec![0];
                }
                let affine: $krate::AffinePoint = self.point(a).into();
                affine.to_encoded_point(true).as_bytes().to_vec()
            }

            fn deserialize(&self, bytes: &[u8]) -> Result<GroupElement, CryptoError> {
                use $krate::elliptic_curve::sec1::FromEncodedPoint;
                if bytes == [0u8] {
                    return Ok(self.identity());
                }
                let encoded =
                    $krate::EncodedPoint::from_bytes(bytes).map_err(|_| CryptoError::InvalidElement)?;
                if encoded.is_identity() {
                    return Err(CryptoError::InvalidElement);
                }
                let affine: Option<$krate::AffinePoint> =
                    $krate::AffinePoint::from_encoded_point(&encoded).into();
                let affine = affine.ok_or(CryptoError::InvalidElement)?;
                // Prime-order curve: every on-curve point is in the group.
                Ok(self.element(affine.into()))
            }

            fn generate_signing_key(&self, rng: &mut dyn SuiteRngDyn) -> SigningKey {
                let sk = $krate::ecdsa::SigningKey::random(&mut DynRng(rng));
                SigningKey::from_raw(sk.to_bytes().to_vec())
            }

            fn public_key(&self, sk: &SigningKey) -> Vec<u8> {
                use $krate::elliptic_curve::sec1::ToEncodedPoint;
                self.secret(sk)
                    .verifying_key()
                    .as_affine()
                    .to_encoded_point(false)
                    .as_bytes()
                    .to_vec()
            }

            fn sign(&self, sk: &SigningKey, msg: &[u8]) -> Vec<u8> {
                use $krate::ecdsa::signature::Signer;
                let sig: $krate::ecdsa::Signature = self.secret(sk).sign(msg);
                sig.to_bytes().to_vec()
            }

            fn verify(&self, public_key: &[u8], msg: &[u8], sig: &[u8]) -> bool {
                use $krate::ecdsa::signature::Verifier;
                let Ok(vk) = $krate::ecdsa::VerifyingKey::from_sec1_bytes(public_key) else {
                    return false;
                };
                let Ok(sig) = $krate::ecdsa::Signature::from_slice(sig) else {
                    return false;
                };
                vk.verify(msg, &sig).is_ok()
            }

            fn sign_der(&self, sk: &SigningKey, msg: &[u8]) -> Vec<u8> {
                use $krate::ecdsa::signature::Signer;
                let sig: $krate::ecdsa::Signature = self.secret(sk).sign(msg);
                sig.to_der().as_bytes().to_vec()
            }

            fn verify_der(&self, public_key: &[u8], msg: &[u8], der_sig: &[u8]) -> bool {
                use $krate::ecdsa::signature::Verifier;
                let Ok(vk) = $krate::ecdsa::VerifyingKey::from_sec1_bytes(public_key) else {
                    return false;
                };
                let Ok(sig) = $krate::ecdsa::Signature::from_der(der_sig) else {
                    return false;
                };
                vk.verify(msg, &sig).is_ok()
            }

            fn signing_key_to_pem(&self, sk: &SigningKey) -> Result<String, CryptoError> {
                use $krate::pkcs8::EncodePrivateKey;
                let secret = $krate::SecretKey::from_slice(sk.raw()).map_err(|_| CryptoError::InvalidKey)?;
                secret
                    .to_pkcs8_pem(Default::default())
                    .map(|pem| pem.to_string())
                    .map_err(|_| CryptoError::InvalidKey)
            }

            fn signing_key_from_pem(&self, pem: &str) -> Result<SigningKey, CryptoError> {
                use $krate::pkcs8::DecodePrivateKey;
                let secret = $krate::SecretKey::from_pkcs8_pem(pem).map_err(|_| CryptoError::InvalidKey)?;
                Ok(SigningKey::from_raw(secret.to_bytes().to_vec()))
            }
        }
    };
}

ecdsa_suite!(
    P256Suite,
    p256,
    "p256",
    "1.2.840.10045.3.1.7",
    "1.2.840.10045.4.3.2",
    PKCS_ECDSA_P256_SHA256,
    p256::U256
);
ecdsa_suite!(
    P384Suite,
    p384,
    "p384",
    "1.3.132.0.34",
    "1.2.840.10045.4.3.3",
    PKCS_ECDSA_P384_SHA384,
    p384::U384
);
