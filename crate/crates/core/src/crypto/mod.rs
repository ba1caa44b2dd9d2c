//! Symmetric primitives: AES-128-GCM (backed by ring), AES-CTR channelname
//! encryption, the deterministic 96-bit IV and the session-seed key
//! derivation.

pub mod suite;

use std::collections::{HashSet, VecDeque};

use aes::cipher::{KeyIvInit, StreamCipher};
use hkdf::Hkdf;
use ring::aead::{Aad, LessSafeKey, Nonce, UnboundKey, AES_128_GCM};
use sha2::Sha256;
use thiserror::Error;

pub use suite::{CurveSuite, GroupElement, P256Suite, P384Suite, Scalar, SigningKey, SuiteRngDyn};

/// AEAD key length in bytes.
pub const KEY_LEN: usize = 16;
/// GCM authentication tag length in bytes.
pub const TAG_LEN: usize = 16;
/// IV length in bytes.
pub const IV_LEN: usize = 12;

const KDF_SALT: &[u8] = b"lcmsec-v1 session-seed";
const KEY_MATERIAL_LEN: usize = KEY_LEN + 2;

/// Bound on the number of IVs remembered per key by [`IvLog`].
pub const IV_LOG_CAPACITY: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("authentication tag mismatch")]
    AuthFailure,
    #[error("ciphertext shorter than the authentication tag")]
    TooShort,
    #[error("IV reused under the same key")]
    IvReuse,
    #[error("invalid group element")]
    InvalidElement,
    #[error("invalid key encoding")]
    InvalidKey,
}

/// Epoch-scoped symmetric secret derived from a completed key agreement.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyMaterial {
    key: [u8; KEY_LEN],
    salt: u16,
    epoch: u64,
}

impl KeyMaterial {
    pub fn salt(&self) -> u16 {
        self.salt
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn with_epoch(mut self, epoch: u64) -> Self {
        self.epoch = epoch;
        self
    }

    pub fn key_bytes(&self) -> &[u8; KEY_LEN] {
        &self.key
    }
}

impl std::fmt::Debug for KeyMaterial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyMaterial")
            .field("salt", &format_args!("{:#06x}", self.salt))
            .field("epoch", &self.epoch)
            .finish_non_exhaustive()
    }
}

impl Drop for KeyMaterial {
    fn drop(&mut self) {
        self.key = [0; KEY_LEN];
    }
}

/// The deterministic IV: `salt || sender_id || msg_seqno || 0x00000000`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Iv96([u8; IV_LEN]);

impl Iv96 {
    pub fn as_bytes(&self) -> &[u8; IV_LEN] {
        &self.0
    }
}

pub fn build_iv(salt: u16, sender_id: u16, msg_seqno: u32) -> Iv96 {
    let mut iv = [0u8; IV_LEN];
    iv[0..2].copy_from_slice(&salt.to_be_bytes());
    iv[2..4].copy_from_slice(&sender_id.to_be_bytes());
    iv[4..8].copy_from_slice(&msg_seqno.to_be_bytes());
    Iv96(iv)
}

fn aead_key(key: &KeyMaterial) -> LessSafeKey {
    LessSafeKey::new(UnboundKey::new(&AES_128_GCM, &key.key).expect("16-byte key"))
}

/// Seals `plaintext`, returning `ciphertext || tag`.
pub fn aead_seal(key: &KeyMaterial, iv: &Iv96, plaintext: &[u8], aad: &[u8]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(plaintext.len() + TAG_LEN);
    buf.extend_from_slice(plaintext);
    aead_key(key)
        .seal_in_place_append_tag(Nonce::assume_unique_for_key(iv.0), Aad::from(aad), &mut buf)
        .expect("AES-GCM encryption is infallible for in-range lengths");
    buf
}

pub fn aead_open(
    key: &KeyMaterial,
    iv: &Iv96,
    ciphertext_and_tag: &[u8],
    aad: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    if ciphertext_and_tag.len() < TAG_LEN {
        return Err(CryptoError::TooShort);
    }
    let mut buf = ciphertext_and_tag.to_vec();
    let len = aead_key(key)
        .open_in_place(Nonce::assume_unique_for_key(iv.0), Aad::from(aad), &mut buf)
        .map_err(|_| CryptoError::AuthFailure)?
        .len();
    buf.truncate(len);
    Ok(buf)
}

type Aes128Ctr = ctr::Ctr32BE<aes::Aes128>;

/// Block counter value for the first keystream block of a channelname.
pub const CTR_INITIAL_COUNTER: u32 = 0;

/// Incremental AES-CTR keystream over `iv || counter`.
///
/// Bytes may be fed one at a time; the stream position carries over between
/// calls, which lets a receiver stop at the channelname terminator.
pub struct CtrStream(Aes128Ctr);

impl CtrStream {
    pub fn new(key: &KeyMaterial, iv: &Iv96) -> Self {
        let mut block = [0u8; 16];
        block[..IV_LEN].copy_from_slice(&iv.0);
        block[IV_LEN..].copy_from_slice(&CTR_INITIAL_COUNTER.to_be_bytes());
        CtrStream(raw_ctr(&key.key, &block))
    }

    pub fn apply(&mut self, data: &mut [u8]) {
        self.0.apply_keystream(data);
    }

    pub fn next_byte(&mut self, byte: u8) -> u8 {
        let mut b = [byte];
        self.0.apply_keystream(&mut b);
        b[0]
    }
}

fn raw_ctr(key: &[u8; KEY_LEN], initial_block: &[u8; 16]) -> Aes128Ctr {
    Aes128Ctr::new(key.into(), initial_block.into())
}

/// XORs `data` with the AES-CTR keystream. Self-inverse.
pub fn ctr_crypt(key: &KeyMaterial, iv: &Iv96, data: &[u8]) -> Vec<u8> {
    let mut out = data.to_vec();
    CtrStream::new(key, iv).apply(&mut out);
    out
}

/// HKDF-SHA256 over the session seed; 16 key bytes then 2 salt bytes.
pub fn kdf_expand(session_seed: &[u8], context: &[u8]) -> KeyMaterial {
    let mut okm = [0u8; KEY_MATERIAL_LEN];
    expand_into(session_seed, context, &mut okm);
    let mut key = [0u8; KEY_LEN];
    key.copy_from_slice(&okm[..KEY_LEN]);
    let salt = u16::from_be_bytes([okm[KEY_LEN], okm[KEY_LEN + 1]]);
    okm = [0; KEY_MATERIAL_LEN];
    let _ = okm;
    KeyMaterial { key, salt, epoch: 0 }
}

/// Same extract-then-expand construction as [`kdf_expand`], arbitrary length.
pub fn expand_into(session_seed: &[u8], context: &[u8], out: &mut [u8]) {
    Hkdf::<Sha256>::new(Some(KDF_SALT), session_seed)
        .expand(context, out)
        .expect("output length within HKDF bound");
}

/// Records IVs handed to [`aead_seal`]/[`ctr_crypt`] per key and reports repeats.
///
/// Only the most recent [`IV_LOG_CAPACITY`] IVs per key are remembered.
#[derive(Debug, Default)]
pub struct IvLog {
    entries: std::collections::HashMap<[u8; KEY_LEN], (HashSet<Iv96>, VecDeque<Iv96>)>,
}

impl IvLog {
    pub fn record(&mut self, key: &KeyMaterial, iv: Iv96) -> Result<(), CryptoError> {
        let (seen, order) = self.entries.entry(key.key).or_default();
        if !seen.insert(iv) {
            return Err(CryptoError::IvReuse);
        }
        order.push_back(iv);
        if order.len() > IV_LOG_CAPACITY {
            if let Some(old) = order.pop_front() {
                seen.remove(&old);
            }
        }
        Ok(())
    }

    pub fn forget(&mut self, key: &KeyMaterial) {
        self.entries.remove(&key.key);
    }
}

#[cfg(test)]
pub(crate) fn test_material(key: [u8; KEY_LEN], salt: u16) -> KeyMaterial {
    KeyMaterial { key, salt, epoch: 0 }
}
