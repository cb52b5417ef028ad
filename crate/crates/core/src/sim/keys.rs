use std::collections::BTreeMap;

use super::SetupError;
use crate::crypto::{
    ca_issue, derive_seed, CertDirectory, Certificate, CryptoError, HostId, KeyPair, PublicKey,
};
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};

/// Every key pair a scenario needs, plus the CA-issued directory.
#[derive(Debug, Clone)]
pub struct ScenarioKeys {
    pub ca: KeyPair,
    pub keys: BTreeMap<HostId, KeyPair>,
    pub certs: CertDirectory,
}

impl ScenarioKeys {
    /// Deterministic keys for `hosts` under `seed`. `keygen` and `run` agree
    /// on this derivation, so a bundle written for a seed matches the keys a
    /// run would derive for it.
    pub fn derive<'a>(
        seed: u64,
        hosts: impl IntoIterator<Item = &'a HostId>,
    ) -> Result<Self, CryptoError> {
        let ca = KeyPair::from_seed(HostId::new("ca"), &derive_seed(seed, "ca"));
        let mut keys = BTreeMap::new();
        let mut certs = CertDirectory::new();
        for host in hosts {
            let kp = KeyPair::from_seed(host.clone(), &derive_seed(seed, &format!("host/{host}")));
            certs.publish(ca_issue(&ca.private, host.clone(), kp.public.clone())?);
            keys.insert(host.clone(), kp);
        }
        Ok(Self { ca, keys, certs })
    }

    pub fn key(&self, host: &HostId) -> Result<&KeyPair, SetupError> {
        self.keys
            .get(host)
            .ok_or_else(|| SetupError::MissingKey(host.clone()))
    }

    pub fn cert(&self, host: &HostId) -> Result<&Certificate, SetupError> {
        self.certs
            .get(host)
            .ok_or_else(|| SetupError::MissingCert(host.clone()))
    }

    pub fn bundle(&self) -> CertBundle {
        CertBundle {
            ca_public: self.ca.public.clone(),
            directory: self.certs.clone(),
        }
    }
}

/// CA public key plus the published certificates; the `certs.bin` file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertBundle {
    pub ca_public: PublicKey,
    pub directory: CertDirectory,
}

impl Canonical for CertBundle {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.nested(&self.ca_public).nested(&self.directory);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            ca_public: dec.nested()?,
            directory: dec.nested()?,
        })
    }
}
