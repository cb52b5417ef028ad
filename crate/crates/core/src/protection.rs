//! Message protection schemes.
//!
//! | Mode                | Stored                           | Who can verify | Who can read |
//! |---------------------|----------------------------------|----------------|--------------|
//! | `PlainSigned`       | `m`, `sig(m)`                    | anyone         | anyone       |
//! | `BasicEncrypted`    | `enc_S(m, sig(m))`               | server         | server       |
//! | `ImprovedSigned`    | `crc`, `m`, `sig(crc, m)`        | anyone         | anyone       |
//! | `ImprovedEncrypted` | `enc_S(crc, m, sig(crc, m))`     | server         | server       |
//! | `PartialEncrypted`  | `crc`, `c = enc_S(m)`, `sig(crc, c)` | anyone     | server       |
//!
//! `sig` is the providing host's signature and `enc_S` encrypts to the agent
//! server's public key. The CRC block ties a message to the agent it was
//! given to: it carries digests of the server key and of the code signature
//! (which covers the agent ID), plus a freshness field that the provider
//! also registers with the route servers.

use std::fmt;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use crate::agent::{verify_code_self, Agent, DataEntry};
use crate::crypto::{
    digest, pk_decrypt, pk_encrypt, sign, verify, CertDirectory, Certificate, Ciphertext,
    CryptoError, Digest, KeyPair, PrivateKey, PublicKey, Signature, TrustAnchor,
};
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::registry::{verify_field_record, FieldRecord};
use crate::verdict::{FailReason, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtectionMode {
    PlainSigned,
    BasicEncrypted,
    ImprovedSigned,
    ImprovedEncrypted,
    PartialEncrypted,
}

impl ProtectionMode {
    pub const ALL: [ProtectionMode; 5] = [
        ProtectionMode::PlainSigned,
        ProtectionMode::BasicEncrypted,
        ProtectionMode::ImprovedSigned,
        ProtectionMode::ImprovedEncrypted,
        ProtectionMode::PartialEncrypted,
    ];

    pub fn tag(self) -> u8 {
        match self {
            ProtectionMode::PlainSigned => 1,
            ProtectionMode::BasicEncrypted => 2,
            ProtectionMode::ImprovedSigned => 3,
            ProtectionMode::ImprovedEncrypted => 4,
            ProtectionMode::PartialEncrypted => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }

    /// Whether entries in this mode carry a CRC block.
    pub fn is_bound(self) -> bool {
        matches!(
            self,
            ProtectionMode::ImprovedSigned
                | ProtectionMode::ImprovedEncrypted
                | ProtectionMode::PartialEncrypted
        )
    }

    /// Whether verification needs the server's private key.
    pub fn is_sealed(self) -> bool {
        matches!(
            self,
            ProtectionMode::BasicEncrypted | ProtectionMode::ImprovedEncrypted
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProtectionMode::PlainSigned => "plain_signed",
            ProtectionMode::BasicEncrypted => "basic_encrypted",
            ProtectionMode::ImprovedSigned => "improved_signed",
            ProtectionMode::ImprovedEncrypted => "improved_encrypted",
            ProtectionMode::PartialEncrypted => "partial_encrypted",
        }
    }
}

impl fmt::Display for ProtectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-message uniqueness token: random nonce plus the host's counter.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FreshnessField {
    pub nonce: [u8; 16],
    pub counter: u64,
}

impl fmt::Debug for FreshnessField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for FreshnessField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.counter, hex::encode(self.nonce))
    }
}

impl Serialize for FreshnessField {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl Canonical for FreshnessField {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.nonce).u64(self.counter);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            nonce: dec.array()?,
            counter: dec.u64()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrcBlock {
    pub key_crc: Digest,
    pub code_sig_crc: Digest,
    pub fresh: FreshnessField,
}

impl CrcBlock {
    /// Whether the two digests match the agent as carried.
    pub fn matches(&self, agent: &Agent) -> bool {
        self.key_crc == digest(agent.server_pub.as_bytes())
            && self.code_sig_crc == digest(agent.code_signature.as_bytes())
    }
}

impl Canonical for CrcBlock {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.nested(&self.key_crc)
            .nested(&self.code_sig_crc)
            .nested(&self.fresh);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            key_crc: dec.nested()?,
            code_sig_crc: dec.nested()?,
            fresh: dec.nested()?,
        })
    }
}

/// A protected message. Wire format: one mode-tag byte, then the
/// canonical fields of that mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtectedEntry {
    PlainSigned {
        message: Vec<u8>,
        signature: Signature,
    },
    BasicEncrypted {
        ciphertext: Ciphertext,
    },
    ImprovedSigned {
        crc: CrcBlock,
        message: Vec<u8>,
        signature: Signature,
    },
    ImprovedEncrypted {
        ciphertext: Ciphertext,
    },
    PartialEncrypted {
        crc: CrcBlock,
        inner: Ciphertext,
        signature: Signature,
    },
}

impl ProtectedEntry {
    pub fn mode(&self) -> ProtectionMode {
        match self {
            ProtectedEntry::PlainSigned { .. } => ProtectionMode::PlainSigned,
            ProtectedEntry::BasicEncrypted { .. } => ProtectionMode::BasicEncrypted,
            ProtectedEntry::ImprovedSigned { .. } => ProtectionMode::ImprovedSigned,
            ProtectedEntry::ImprovedEncrypted { .. } => ProtectionMode::ImprovedEncrypted,
            ProtectedEntry::PartialEncrypted { .. } => ProtectionMode::PartialEncrypted,
        }
    }

    /// The CRC block, when it travels in the clear.
    pub fn visible_crc(&self) -> Option<&CrcBlock> {
        match self {
            ProtectedEntry::ImprovedSigned { crc, .. }
            | ProtectedEntry::PartialEncrypted { crc, .. } => Some(crc),
            _ => None,
        }
    }
}

impl Canonical for ProtectedEntry {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.tag(self.mode().tag());
        match self {
            ProtectedEntry::PlainSigned { message, signature } => {
                enc.field(message).nested(signature);
            }
            ProtectedEntry::BasicEncrypted { ciphertext }
            | ProtectedEntry::ImprovedEncrypted { ciphertext } => {
                enc.nested(ciphertext);
            }
            ProtectedEntry::ImprovedSigned {
                crc,
                message,
                signature,
            } => {
                enc.nested(crc).field(message).nested(signature);
            }
            ProtectedEntry::PartialEncrypted {
                crc,
                inner,
                signature,
            } => {
                enc.nested(crc).nested(inner).nested(signature);
            }
        }
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let tag = dec.tag()?;
        let mode = ProtectionMode::from_tag(tag).ok_or(DecodeError::UnknownTag(tag))?;
        Ok(match mode {
            ProtectionMode::PlainSigned => ProtectedEntry::PlainSigned {
                message: dec.field()?.to_vec(),
                signature: dec.nested()?,
            },
            ProtectionMode::BasicEncrypted => ProtectedEntry::BasicEncrypted {
                ciphertext: dec.nested()?,
            },
            ProtectionMode::ImprovedSigned => ProtectedEntry::ImprovedSigned {
                crc: dec.nested()?,
                message: dec.field()?.to_vec(),
                signature: dec.nested()?,
            },
            ProtectionMode::ImprovedEncrypted => ProtectedEntry::ImprovedEncrypted {
                ciphertext: dec.nested()?,
            },
            ProtectionMode::PartialEncrypted => ProtectedEntry::PartialEncrypted {
                crc: dec.nested()?,
                inner: dec.nested()?,
                signature: dec.nested()?,
            },
        })
    }
}

/// Bytes signed for CRC-bound modes: the CRC block followed by the payload
/// (the plaintext, or the inner ciphertext for partial encryption).
pub fn bound_body(crc: &CrcBlock, payload: &[u8]) -> Vec<u8> {
    Encoder::new().nested(crc).field(payload).finish()
}

/// A signed message as a single blob, `(m, sig)`, ready to encrypt.
pub fn signed_blob(message: &[u8], signature: &Signature) -> Vec<u8> {
    Encoder::new().field(message).nested(signature).finish()
}

fn open_signed_blob(blob: &[u8]) -> Result<(Vec<u8>, Signature), FailReason> {
    let mut dec = Decoder::new(blob);
    let message = dec.field().map_err(|_| FailReason::Malformed)?.to_vec();
    let signature = dec.nested().map_err(|_| FailReason::Malformed)?;
    dec.finish().map_err(|_| FailReason::Malformed)?;
    Ok((message, signature))
}

fn sealed_bound_blob(crc: &CrcBlock, message: &[u8], signature: &Signature) -> Vec<u8> {
    Encoder::new()
        .nested(crc)
        .field(message)
        .nested(signature)
        .finish()
}

fn open_sealed_bound_blob(blob: &[u8]) -> Result<(CrcBlock, Vec<u8>, Signature), FailReason> {
    let mut dec = Decoder::new(blob);
    let crc = dec.nested().map_err(|_| FailReason::Malformed)?;
    let message = dec.field().map_err(|_| FailReason::Malformed)?.to_vec();
    let signature = dec.nested().map_err(|_| FailReason::Malformed)?;
    dec.finish().map_err(|_| FailReason::Malformed)?;
    Ok((crc, message, signature))
}

/// Output of a CRC-bound protection: the entry plus the freshness field the
/// provider must register.
#[derive(Debug, Clone)]
pub struct Bound {
    pub entry: ProtectedEntry,
    pub fresh: FreshnessField,
}

/// A host providing messages to agents. Owns the host key pair and the
/// host's single freshness stream; one logical host must use one
/// `Provider`.
#[derive(Debug, Clone)]
pub struct Provider<R> {
    keys: KeyPair,
    counter: u64,
    rng: R,
}

impl<R: RngCore + CryptoRng> Provider<R> {
    pub fn new(keys: KeyPair, rng: R) -> Self {
        Self {
            keys,
            counter: 0,
            rng,
        }
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn rng(&mut self) -> &mut R {
        &mut self.rng
    }

    pub fn next_fresh(&mut self) -> FreshnessField {
        self.counter += 1;
        let mut nonce = [0u8; 16];
        self.rng.fill_bytes(&mut nonce);
        FreshnessField {
            nonce,
            counter: self.counter,
        }
    }

    pub fn make_crc_block(&mut self, agent: &Agent) -> CrcBlock {
        CrcBlock {
            key_crc: digest(agent.server_pub.as_bytes()),
            code_sig_crc: digest(agent.code_signature.as_bytes()),
            fresh: self.next_fresh(),
        }
    }

    pub fn sign_plain(&self, message: &[u8]) -> Result<ProtectedEntry, CryptoError> {
        Ok(ProtectedEntry::PlainSigned {
            message: message.to_vec(),
            signature: sign(&self.keys.private, message)?,
        })
    }

    /// Signs with the host key, then encrypts the signed blob to the server.
    pub fn encrypt_basic(
        &mut self,
        server_pub: &PublicKey,
        message: &[u8],
    ) -> Result<ProtectedEntry, CryptoError> {
        let signature = sign(&self.keys.private, message)?;
        let ciphertext = pk_encrypt(server_pub, &signed_blob(message, &signature), &mut self.rng)?;
        Ok(ProtectedEntry::BasicEncrypted { ciphertext })
    }

    pub fn improved_sign(&mut self, agent: &Agent, message: &[u8]) -> Result<Bound, CryptoError> {
        let crc = self.make_crc_block(agent);
        let signature = sign(&self.keys.private, &bound_body(&crc, message))?;
        Ok(Bound {
            fresh: crc.fresh,
            entry: ProtectedEntry::ImprovedSigned {
                crc,
                message: message.to_vec(),
                signature,
            },
        })
    }

    pub fn improved_encrypt(
        &mut self,
        agent: &Agent,
        server_pub: &PublicKey,
        message: &[u8],
    ) -> Result<Bound, CryptoError> {
        let crc = self.make_crc_block(agent);
        let signature = sign(&self.keys.private, &bound_body(&crc, message))?;
        let ciphertext = pk_encrypt(
            server_pub,
            &sealed_bound_blob(&crc, message, &signature),
            &mut self.rng,
        )?;
        Ok(Bound {
            fresh: crc.fresh,
            entry: ProtectedEntry::ImprovedEncrypted { ciphertext },
        })
    }

    /// Encrypts only the message; the CRC block and the ciphertext are
    /// signed together so any host can check them.
    pub fn partial_encrypt(
        &mut self,
        agent: &Agent,
        server_pub: &PublicKey,
        message: &[u8],
    ) -> Result<Bound, CryptoError> {
        let crc = self.make_crc_block(agent);
        let inner = pk_encrypt(server_pub, message, &mut self.rng)?;
        let signature = sign(&self.keys.private, &bound_body(&crc, inner.as_bytes()))?;
        Ok(Bound {
            fresh: crc.fresh,
            entry: ProtectedEntry::PartialEncrypted {
                crc,
                inner,
                signature,
            },
        })
    }

    /// Protects `message` for `agent` in `mode`. Unbound modes still draw a
    /// freshness field so the provider can register its message count.
    pub fn protect(
        &mut self,
        mode: ProtectionMode,
        agent: &Agent,
        message: &[u8],
    ) -> Result<Bound, CryptoError> {
        let server_pub = agent.server_pub.clone();
        match mode {
            ProtectionMode::PlainSigned => Ok(Bound {
                entry: self.sign_plain(message)?,
                fresh: self.next_fresh(),
            }),
            ProtectionMode::BasicEncrypted => Ok(Bound {
                entry: self.encrypt_basic(&server_pub, message)?,
                fresh: self.next_fresh(),
            }),
            ProtectionMode::ImprovedSigned => self.improved_sign(agent, message),
            ProtectionMode::ImprovedEncrypted => self.improved_encrypt(agent, &server_pub, message),
            ProtectionMode::PartialEncrypted => self.partial_encrypt(agent, &server_pub, message),
        }
    }
}

/// A decrypted message plus whether its freshness field was checked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Opened {
    pub message: Vec<u8>,
    pub verdict: Verdict,
}

fn check_cert(cert: &Certificate, trust: &TrustAnchor) -> Result<(), FailReason> {
    if trust.accepts(cert) {
        Ok(())
    } else {
        Err(FailReason::BadCertificate)
    }
}

/// Checks that `crc` belongs to `agent` and, if a record is supplied, that
/// the freshness field is registered. The agent's own code signature must
/// also hold so the digests actually pin the code bytes.
fn check_binding(
    crc: &CrcBlock,
    agent: &Agent,
    cert: &Certificate,
    trust: &TrustAnchor,
    record: Option<&FieldRecord>,
) -> Result<Verdict, FailReason> {
    if let Verdict::Fail(r) = verify_code_self(agent) {
        return Err(r);
    }
    if !crc.matches(agent) {
        return Err(FailReason::CrcMismatch);
    }
    let Some(record) = record else {
        return Ok(Verdict::FreshnessUnchecked);
    };
    if &record.agent_id != agent.id()
        || record.provider != cert.subject
        || verify_field_record(record, cert, trust).is_fail()
    {
        return Err(FailReason::BadRecord);
    }
    if record.fields.contains(&crc.fresh) {
        Ok(Verdict::Pass)
    } else {
        Err(FailReason::StaleField)
    }
}

fn to_verdict(r: Result<Verdict, FailReason>) -> Verdict {
    r.unwrap_or_else(Verdict::Fail)
}

pub fn verify_plain(entry: &ProtectedEntry, cert: &Certificate, trust: &TrustAnchor) -> Verdict {
    to_verdict((|| {
        let ProtectedEntry::PlainSigned { message, signature } = entry else {
            return Err(FailReason::Malformed);
        };
        check_cert(cert, trust)?;
        if verify(&cert.subject_key, message, signature) {
            Ok(Verdict::Pass)
        } else {
            Err(FailReason::BadSignature)
        }
    })())
}

/// Decrypts with the server key, then checks the provider's signature.
pub fn decrypt_basic(
    entry: &ProtectedEntry,
    server_priv: &PrivateKey,
    cert: &Certificate,
    trust: &TrustAnchor,
) -> Result<Vec<u8>, FailReason> {
    let ProtectedEntry::BasicEncrypted { ciphertext } = entry else {
        return Err(FailReason::Malformed);
    };
    check_cert(cert, trust)?;
    let blob = pk_decrypt(server_priv, ciphertext).map_err(|_| FailReason::DecryptError)?;
    let (message, signature) = open_signed_blob(&blob)?;
    if verify(&cert.subject_key, &message, &signature) {
        Ok(message)
    } else {
        Err(FailReason::BadSignature)
    }
}

pub fn improved_verify(
    entry: &ProtectedEntry,
    agent: &Agent,
    cert: &Certificate,
    trust: &TrustAnchor,
    record: Option<&FieldRecord>,
) -> Verdict {
    to_verdict((|| {
        let ProtectedEntry::ImprovedSigned {
            crc,
            message,
            signature,
        } = entry
        else {
            return Err(FailReason::Malformed);
        };
        check_cert(cert, trust)?;
        if !verify(&cert.subject_key, &bound_body(crc, message), signature) {
            return Err(FailReason::BadSignature);
        }
        check_binding(crc, agent, cert, trust, record)
    })())
}

pub fn improved_decrypt(
    entry: &ProtectedEntry,
    agent: &Agent,
    server_priv: &PrivateKey,
    cert: &Certificate,
    trust: &TrustAnchor,
    record: Option<&FieldRecord>,
) -> Result<Opened, FailReason> {
    let ProtectedEntry::ImprovedEncrypted { ciphertext } = entry else {
        return Err(FailReason::Malformed);
    };
    check_cert(cert, trust)?;
    let blob = pk_decrypt(server_priv, ciphertext).map_err(|_| FailReason::DecryptError)?;
    let (crc, message, signature) = open_sealed_bound_blob(&blob)?;
    if !verify(&cert.subject_key, &bound_body(&crc, &message), &signature) {
        return Err(FailReason::BadSignature);
    }
    let verdict = check_binding(&crc, agent, cert, trust, record)?;
    Ok(Opened { message, verdict })
}

/// Integrity check any host can run; the message stays encrypted.
pub fn partial_verify(
    entry: &ProtectedEntry,
    agent: &Agent,
    cert: &Certificate,
    trust: &TrustAnchor,
    record: Option<&FieldRecord>,
) -> Verdict {
    to_verdict((|| {
        let ProtectedEntry::PartialEncrypted {
            crc,
            inner,
            signature,
        } = entry
        else {
            return Err(FailReason::Malformed);
        };
        check_cert(cert, trust)?;
        if !verify(
            &cert.subject_key,
            &bound_body(crc, inner.as_bytes()),
            signature,
        ) {
            return Err(FailReason::BadSignature);
        }
        check_binding(crc, agent, cert, trust, record)
    })())
}

/// Server-side decryption of a partially encrypted entry. Run
/// [`partial_verify`] first.
pub fn partial_decrypt(
    entry: &ProtectedEntry,
    server_priv: &PrivateKey,
) -> Result<Vec<u8>, FailReason> {
    let ProtectedEntry::PartialEncrypted { inner, .. } = entry else {
        return Err(FailReason::Malformed);
    };
    pk_decrypt(server_priv, inner).map_err(|_| FailReason::DecryptError)
}

/// Full check of one data-area entry: picks the provider's certificate
/// from `directory`, dispatches on mode, and decrypts when `server_priv`
/// is available. Sealed modes without the server key report `Sealed`.
pub fn check_entry(
    entry: &DataEntry,
    agent: &Agent,
    directory: &CertDirectory,
    trust: &TrustAnchor,
    record: Option<&FieldRecord>,
    server_priv: Option<&PrivateKey>,
) -> Verdict {
    let Some(cert) = directory.get(&entry.provider) else {
        return Verdict::Fail(FailReason::BadCertificate);
    };
    if cert.subject != entry.provider {
        return Verdict::Fail(FailReason::BadCertificate);
    }
    let payload = &entry.payload;
    match (payload.mode(), server_priv) {
        (ProtectionMode::PlainSigned, _) => verify_plain(payload, cert, trust),
        (ProtectionMode::ImprovedSigned, _) => improved_verify(payload, agent, cert, trust, record),
        (ProtectionMode::BasicEncrypted | ProtectionMode::ImprovedEncrypted, None) => {
            if trust.accepts(cert) {
                Verdict::Sealed
            } else {
                Verdict::Fail(FailReason::BadCertificate)
            }
        }
        (ProtectionMode::BasicEncrypted, Some(key)) => {
            to_verdict(decrypt_basic(payload, key, cert, trust).map(|_| Verdict::Pass))
        }
        (ProtectionMode::ImprovedEncrypted, Some(key)) => to_verdict(
            improved_decrypt(payload, agent, key, cert, trust, record).map(|o| o.verdict),
        ),
        (ProtectionMode::PartialEncrypted, key) => {
            let v = partial_verify(payload, agent, cert, trust, record);
            match key {
                Some(key) if !v.is_fail() => match partial_decrypt(payload, key) {
                    Ok(_) => v,
                    Err(r) => Verdict::Fail(r),
                },
                _ => v,
            }
        }
    }
}

#[cfg(test)]
mod tests;
