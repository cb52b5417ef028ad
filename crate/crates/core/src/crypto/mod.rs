//! Signature, public-key encryption and digest primitives.
//!
//! | Primitive  | Default algorithm                          | Size            |
//! |------------|--------------------------------------------|-----------------|
//! | Signature  | Ed25519                                    | 64 B            |
//! | Encryption | X25519 key wrap + HKDF-SHA256 + ChaCha20-Poly1305 | 48 B overhead |
//! | Digest     | SHA-256                                    | 32 B            |
//!
//! A host owns one key pair used for both roles. Its public key is the
//! Ed25519 verifying key followed by the X25519 public key; its private key
//! is the Ed25519 seed followed by the X25519 secret. Both halves are
//! derived from a 32-byte seed, so simulations are reproducible.
//!
//! Everything above this module talks to the free functions ([`sign`],
//! [`verify`], [`pk_encrypt`], [`pk_decrypt`], [`digest`]), which route
//! through [`DefaultSuite`]. Another [`CipherSuite`] can be swapped in there.

mod pki;

pub use pki::{ca_issue, ca_verify, CertDirectory, Certificate, TrustAnchor};

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;
use x25519_dalek::{PublicKey as XPublic, StaticSecret};

use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("malformed key")]
    MalformedKey,
    #[error("decryption failed")]
    Decrypt,
}

/// Network-unique host identifier. Opaque UTF-8; an IP address works but is
/// not required.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HostId(String);

impl HostId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<&str> for HostId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

impl Canonical for HostId {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.str(&self.0);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self(dec.string()?))
    }
}

macro_rules! opaque_bytes {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub Vec<u8>);

        impl $name {
            pub fn as_bytes(&self) -> &[u8] {
                &self.0
            }
        }

        impl Canonical for $name {
            fn encode_into(&self, enc: &mut Encoder) {
                enc.field(&self.0);
            }

            fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
                Ok(Self(dec.field()?.to_vec()))
            }
        }
    };
}

opaque_bytes!(PublicKey);
opaque_bytes!(
    /// Never printed; `Debug` shows only the length.
    PrivateKey
);
opaque_bytes!(Signature);
opaque_bytes!(Ciphertext);

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(&self.0))
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PrivateKey([{} bytes])", self.0.len())
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", hex::encode(&self.0))
    }
}

impl fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Ciphertext([{} bytes])", self.0.len())
    }
}

/// 32-byte digest. Serializes as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let raw = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr = raw
            .try_into()
            .map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))?;
        Ok(Self(arr))
    }
}

impl Canonical for Digest {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.0);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self(dec.array()?))
    }
}

/// A host's key pair, used both to sign and to receive encrypted data.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub public: PublicKey,
    pub private: PrivateKey,
    pub owner: HostId,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("owner", &self.owner)
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn from_seed(owner: HostId, seed: &[u8; 32]) -> Self {
        let (public, private) = DefaultSuite::derive_keypair(seed);
        Self {
            public,
            private,
            owner,
        }
    }

    pub fn generate<R: RngCore + CryptoRng>(owner: HostId, rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(owner, &seed)
    }
}

impl Canonical for KeyPair {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.nested(&self.owner)
            .nested(&self.public)
            .nested(&self.private);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let kp = Self {
            owner: dec.nested()?,
            public: dec.nested()?,
            private: dec.nested()?,
        };
        if DefaultSuite::public_from_private(&kp.private).as_ref() != Some(&kp.public) {
            return Err(DecodeError::Invalid(
                "public key does not match private key",
            ));
        }
        Ok(kp)
    }
}

/// A signature + public-key encryption + digest triple.
pub trait CipherSuite {
    fn derive_keypair(seed: &[u8; 32]) -> (PublicKey, PrivateKey);

    fn public_from_private(key: &PrivateKey) -> Option<PublicKey>;

    fn sign(key: &PrivateKey, msg: &[u8]) -> Result<Signature, CryptoError>;

    /// Never panics; malformed keys or signatures verify as `false`.
    fn verify(key: &PublicKey, msg: &[u8], sig: &Signature) -> bool;

    fn encrypt<R: RngCore + CryptoRng>(
        key: &PublicKey,
        msg: &[u8],
        rng: &mut R,
    ) -> Result<Ciphertext, CryptoError>;

    fn decrypt(key: &PrivateKey, ct: &Ciphertext) -> Result<Vec<u8>, CryptoError>;

    fn digest(msg: &[u8]) -> Digest;
}

pub type DefaultSuite = Ed25519X25519;

/// Ed25519 signatures, X25519/ChaCha20-Poly1305 hybrid encryption, SHA-256.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ed25519X25519;

const SIGN_SEED_LABEL: &[u8] = b"agentseal/v1/ed25519-seed";
const ENC_SEED_LABEL: &[u8] = b"agentseal/v1/x25519-secret";
const PKE_INFO: &[u8] = b"agentseal/v1/pke";
const HALF: usize = 32;
const EPHEMERAL_LEN: usize = 32;
const TAG_LEN: usize = 16;

fn labelled_hash(label: &[u8], data: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(label);
    h.update(data);
    h.finalize().into()
}

fn split_halves(bytes: &[u8]) -> Option<([u8; HALF], [u8; HALF])> {
    if bytes.len() != 2 * HALF {
        return None;
    }
    let (a, b) = bytes.split_at(HALF);
    Some((a.try_into().ok()?, b.try_into().ok()?))
}

fn wrap_keys(shared: &[u8; 32], ephemeral: &[u8; 32], recipient: &[u8; 32]) -> (Key, Nonce) {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(ephemeral);
    salt[32..].copy_from_slice(recipient);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut okm = [0u8; 44];
    hk.expand(PKE_INFO, &mut okm)
        .expect("44 bytes is a valid HKDF length");
    (*Key::from_slice(&okm[..32]), *Nonce::from_slice(&okm[32..]))
}

impl CipherSuite for Ed25519X25519 {
    fn derive_keypair(seed: &[u8; 32]) -> (PublicKey, PrivateKey) {
        let sign_seed = labelled_hash(SIGN_SEED_LABEL, seed);
        let enc_secret = labelled_hash(ENC_SEED_LABEL, seed);
        let private = PrivateKey([sign_seed, enc_secret].concat());
        let public = Self::public_from_private(&private).expect("derived key is well-formed");
        (public, private)
    }

    fn public_from_private(key: &PrivateKey) -> Option<PublicKey> {
        let (sign_seed, enc_secret) = split_halves(&key.0)?;
        let vk = SigningKey::from_bytes(&sign_seed).verifying_key();
        let xpub = XPublic::from(&StaticSecret::from(enc_secret));
        Some(PublicKey([vk.to_bytes(), xpub.to_bytes()].concat()))
    }

    fn sign(key: &PrivateKey, msg: &[u8]) -> Result<Signature, CryptoError> {
        let (sign_seed, _) = split_halves(&key.0).ok_or(CryptoError::MalformedKey)?;
        let sk = SigningKey::from_bytes(&sign_seed);
        Ok(Signature(sk.sign(msg).to_bytes().to_vec()))
    }

    fn verify(key: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
        let Some((vk_bytes, _)) = split_halves(&key.0) else {
            return false;
        };
        let Ok(vk) = VerifyingKey::from_bytes(&vk_bytes) else {
            return false;
        };
        let Ok(sig_bytes) = <[u8; 64]>::try_from(sig.0.as_slice()) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(&sig_bytes);
        vk.verify_strict(msg, &sig).is_ok()
    }

    fn encrypt<R: RngCore + CryptoRng>(
        key: &PublicKey,
        msg: &[u8],
        rng: &mut R,
    ) -> Result<Ciphertext, CryptoError> {
        let (_, recipient) = split_halves(&key.0).ok_or(CryptoError::MalformedKey)?;
        let mut eph_bytes = [0u8; 32];
        rng.fill_bytes(&mut eph_bytes);
        let eph = StaticSecret::from(eph_bytes);
        let eph_pub = XPublic::from(&eph).to_bytes();
        let shared = eph.diffie_hellman(&XPublic::from(recipient));
        if !shared.was_contributory() {
            return Err(CryptoError::MalformedKey);
        }
        let (k, nonce) = wrap_keys(shared.as_bytes(), &eph_pub, &recipient);
        let body = ChaCha20Poly1305::new(&k)
            .encrypt(&nonce, msg)
            .map_err(|_| CryptoError::MalformedKey)?;
        let mut out = Vec::with_capacity(EPHEMERAL_LEN + body.len());
        out.extend_from_slice(&eph_pub);
        out.extend_from_slice(&body);
        Ok(Ciphertext(out))
    }

    fn decrypt(key: &PrivateKey, ct: &Ciphertext) -> Result<Vec<u8>, CryptoError> {
        let (_, secret) = split_halves(&key.0).ok_or(CryptoError::MalformedKey)?;
        if ct.0.len() < EPHEMERAL_LEN + TAG_LEN {
            return Err(CryptoError::Decrypt);
        }
        let (eph_pub, body) = ct.0.split_at(EPHEMERAL_LEN);
        let eph_pub: [u8; 32] = eph_pub.try_into().expect("split at 32");
        let secret = StaticSecret::from(secret);
        let own_pub = XPublic::from(&secret).to_bytes();
        let shared = secret.diffie_hellman(&XPublic::from(eph_pub));
        if !shared.was_contributory() {
            return Err(CryptoError::Decrypt);
        }
        let (k, nonce) = wrap_keys(shared.as_bytes(), &eph_pub, &own_pub);
        ChaCha20Poly1305::new(&k)
            .decrypt(&nonce, body)
            .map_err(|_| CryptoError::Decrypt)
    }

    fn digest(msg: &[u8]) -> Digest {
        Digest(Sha256::digest(msg).into())
    }
}

pub fn generate_keypair(owner: HostId, seed: &[u8; 32]) -> KeyPair {
    KeyPair::from_seed(owner, seed)
}

pub fn sign(key: &PrivateKey, msg: &[u8]) -> Result<Signature, CryptoError> {
    DefaultSuite::sign(key, msg)
}

pub fn verify(key: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
    DefaultSuite::verify(key, msg, sig)
}

pub fn pk_encrypt<R: RngCore + CryptoRng>(
    key: &PublicKey,
    msg: &[u8],
    rng: &mut R,
) -> Result<Ciphertext, CryptoError> {
    DefaultSuite::encrypt(key, msg, rng)
}

pub fn pk_decrypt(key: &PrivateKey, ct: &Ciphertext) -> Result<Vec<u8>, CryptoError> {
    DefaultSuite::decrypt(key, ct)
}

pub fn digest(msg: &[u8]) -> Digest {
    DefaultSuite::digest(msg)
}

/// Derives a 32-byte seed for `label` from a scenario seed. Used wherever a
/// simulation needs an independent, reproducible stream.
pub fn derive_seed(root: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"agentseal/v1/seed");
    h.update(root.to_be_bytes());
    h.update((label.len() as u64).to_be_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}
