//! Minimal certification: a CA signs `(subject, subject_key)` pairs.

use std::collections::BTreeMap;

use super::{sign, verify, CryptoError, HostId, PrivateKey, PublicKey, Signature};
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub subject: HostId,
    pub subject_key: PublicKey,
    pub ca_signature: Signature,
}

impl Certificate {
    /// The bytes the CA signs.
    pub fn signed_bytes(subject: &HostId, key: &PublicKey) -> Vec<u8> {
        Encoder::new().nested(subject).nested(key).finish()
    }
}

impl Canonical for Certificate {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.nested(&self.subject)
            .nested(&self.subject_key)
            .nested(&self.ca_signature);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            subject: dec.nested()?,
            subject_key: dec.nested()?,
            ca_signature: dec.nested()?,
        })
    }
}

pub fn ca_issue(
    ca_priv: &PrivateKey,
    subject: HostId,
    key: PublicKey,
) -> Result<Certificate, CryptoError> {
    let ca_signature = sign(ca_priv, &Certificate::signed_bytes(&subject, &key))?;
    Ok(Certificate {
        subject,
        subject_key: key,
        ca_signature,
    })
}

pub fn ca_verify(ca_pub: &PublicKey, cert: &Certificate) -> bool {
    verify(
        ca_pub,
        &Certificate::signed_bytes(&cert.subject, &cert.subject_key),
        &cert.ca_signature,
    )
}

/// How a verifier decides whether to believe a certificate.
///
/// `Unverified` takes every certificate at face value. It exists to
/// reproduce the key-substitution attack that a CA prevents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrustAnchor {
    Ca(PublicKey),
    Unverified,
}

impl TrustAnchor {
    pub fn accepts(&self, cert: &Certificate) -> bool {
        match self {
            TrustAnchor::Ca(ca_pub) => ca_verify(ca_pub, cert),
            TrustAnchor::Unverified => true,
        }
    }
}

/// Public-key directory: the certificate currently published for each host.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CertDirectory {
    certs: BTreeMap<HostId, Certificate>,
}

impl CertDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&mut self, cert: Certificate) -> Option<Certificate> {
        self.certs.insert(cert.subject.clone(), cert)
    }

    pub fn get(&self, host: &HostId) -> Option<&Certificate> {
        self.certs.get(host)
    }

    pub fn len(&self) -> usize {
        self.certs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.certs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Certificate> {
        self.certs.values()
    }
}

impl FromIterator<Certificate> for CertDirectory {
    fn from_iter<I: IntoIterator<Item = Certificate>>(iter: I) -> Self {
        let mut dir = Self::new();
        for cert in iter {
            dir.publish(cert);
        }
        dir
    }
}

impl Canonical for CertDirectory {
    fn encode_into(&self, enc: &mut Encoder) {
        let certs: Vec<Certificate> = self.certs.values().cloned().collect();
        enc.list(&certs);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let certs: Vec<Certificate> = dec.list()?;
        let n = certs.len();
        let dir: Self = certs.into_iter().collect();
        if dir.len() != n {
            return Err(DecodeError::Invalid("duplicate certificate subject"));
        }
        Ok(dir)
    }
}
