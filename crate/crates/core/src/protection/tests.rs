use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::agent::{AgentServer, DataEntry};
use crate::crypto::{ca_issue, derive_seed, HostId};
use crate::registry::build_field_record;

struct World {
    trust: TrustAnchor,
    server: AgentServer,
    certs: CertDirectory,
    hosts: Vec<Provider<ChaCha20Rng>>,
}

fn keys(label: &str) -> KeyPair {
    KeyPair::from_seed(HostId::new(label), &derive_seed(42, label))
}

fn world() -> World {
    let ca = keys("ca");
    let skeys = keys("server");
    let mut certs = CertDirectory::new();
    certs.publish(ca_issue(&ca.private, skeys.owner.clone(), skeys.public.clone()).unwrap());
    let hosts = (1..=3)
        .map(|i| {
            let k = keys(&format!("h{i}"));
            certs.publish(ca_issue(&ca.private, k.owner.clone(), k.public.clone()).unwrap());
            Provider::new(k, ChaCha20Rng::seed_from_u64(i))
        })
        .collect();
    World {
        trust: TrustAnchor::Ca(ca.public.clone()),
        server: AgentServer::new(skeys),
        certs,
        hosts,
    }
}

impl World {
    fn cert(&self, i: usize) -> &Certificate {
        self.certs.get(&self.hosts[i].keys().owner).unwrap()
    }

    fn agent(&mut self, serial: u64) -> Agent {
        self.server
            .mint(
                format!("code-{serial}").into_bytes(),
                serial,
                1,
                vec!["rs".into()],
            )
            .unwrap()
    }

    fn record(&self, i: usize, agent: &Agent, fields: Vec<FreshnessField>) -> FieldRecord {
        build_field_record(self.hosts[i].keys(), agent.id().clone(), fields).unwrap()
    }

    fn server_priv(&self) -> &PrivateKey {
        &self.server.keys().private
    }
}

#[test]
fn crc_blocks_differ_only_in_freshness() {
    let mut w = world();
    let a = w.agent(1);
    let b1 = w.hosts[0].make_crc_block(&a);
    let b2 = w.hosts[0].make_crc_block(&a);
    assert_eq!(b1.key_crc, b2.key_crc);
    assert_eq!(b1.code_sig_crc, b2.code_sig_crc);
    assert_ne!(b1.fresh, b2.fresh);
    assert!(b2.fresh.counter > b1.fresh.counter);
    assert!(b1.matches(&a));
}

#[test]
fn crc_blocks_differ_between_agents() {
    let mut w = world();
    let a = w.agent(1);
    let b = w.agent(2);
    let ba = w.hosts[0].make_crc_block(&a);
    let bb = w.hosts[0].make_crc_block(&b);
    assert_eq!(ba.key_crc, bb.key_crc);
    assert_ne!(ba.code_sig_crc, bb.code_sig_crc);
}

#[test]
fn freshness_fields_are_unique() {
    let mut w = world();
    let a = w.agent(1);
    let fresh: HashSet<_> = (0..10_000)
        .map(|_| w.hosts[0].make_crc_block(&a).fresh)
        .collect();
    assert_eq!(fresh.len(), 10_000);
}

#[test]
fn plain_signature_round_trip_and_cross_keys() {
    let w = world();
    let entry = w.hosts[0].sign_plain(b"price=10").unwrap();
    assert_eq!(verify_plain(&entry, w.cert(0), &w.trust), Verdict::Pass);
    for i in 1..3 {
        assert_eq!(
            verify_plain(&entry, w.cert(i), &w.trust),
            FailReason::BadSignature.into()
        );
    }
    let ProtectedEntry::PlainSigned { message, .. } = &entry else {
        unreachable!()
    };
    assert_eq!(message, b"price=10");
}

#[test]
fn plain_signature_bit_flips_fail() {
    let w = world();
    let entry = w.hosts[0].sign_plain(b"abc").unwrap();
    for byte in 0..3 {
        for bit in 0..8 {
            let mut e = entry.clone();
            if let ProtectedEntry::PlainSigned { message, .. } = &mut e {
                message[byte] ^= 1 << bit;
            }
            assert!(verify_plain(&e, w.cert(0), &w.trust).is_fail());
        }
    }
}

#[test]
fn basic_encryption_round_trip() {
    let mut w = world();
    let spub = w.server.keys().public.clone();
    let entry = w.hosts[0].encrypt_basic(&spub, b"secret bid").unwrap();
    assert_eq!(
        decrypt_basic(&entry, w.server_priv(), w.cert(0), &w.trust).unwrap(),
        b"secret bid"
    );
}

#[test]
fn basic_encryption_wrong_key_matrix() {
    let mut w = world();
    let spub = w.server.keys().public.clone();
    let entry = w.hosts[0].encrypt_basic(&spub, b"m").unwrap();
    for i in 0..3 {
        let wrong = w.hosts[i].keys().private.clone();
        assert_eq!(
            decrypt_basic(&entry, &wrong, w.cert(0), &w.trust),
            Err(FailReason::DecryptError)
        );
    }
}

#[test]
fn basic_encryption_inner_signer_swap_detected() {
    let mut w = world();
    let spub = w.server.keys().public.clone();
    let by_b = w.hosts[1].encrypt_basic(&spub, b"m").unwrap();
    assert_eq!(
        decrypt_basic(&by_b, w.server_priv(), w.cert(0), &w.trust),
        Err(FailReason::BadSignature)
    );
}

#[test]
fn basic_decrypt_matches_stepwise_composition() {
    let w = world();
    let spub = w.server.keys().public.clone();
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let mut host = Provider::new(w.hosts[0].keys().clone(), rng.clone());
    let entry = host.encrypt_basic(&spub, b"stepwise").unwrap();

    // Same steps by hand.
    let sig = sign(&w.hosts[0].keys().private, b"stepwise").unwrap();
    let blob = signed_blob(b"stepwise", &sig);
    let c = pk_encrypt(&spub, &blob, &mut rng).unwrap();
    assert_eq!(
        entry,
        ProtectedEntry::BasicEncrypted {
            ciphertext: c.clone()
        }
    );
    let opened = pk_decrypt(w.server_priv(), &c).unwrap();
    assert_eq!(opened, blob);
    assert!(verify(&w.hosts[0].keys().public, b"stepwise", &sig));
}

#[test]
fn improved_signature_binds_to_agent() {
    let mut w = world();
    let a = w.agent(1);
    let b = w.agent(2);
    let bound = w.hosts[0].improved_sign(&a, b"offer").unwrap();
    let rec = w.record(0, &a, vec![bound.fresh]);
    assert_eq!(
        improved_verify(&bound.entry, &a, w.cert(0), &w.trust, Some(&rec)),
        Verdict::Pass
    );
    let rec_b = w.record(0, &b, vec![bound.fresh]);
    assert_eq!(
        improved_verify(&bound.entry, &b, w.cert(0), &w.trust, Some(&rec_b)),
        FailReason::CrcMismatch.into()
    );
}

#[test]
fn improved_signature_empty_message() {
    let mut w = world();
    let a = w.agent(1);
    let bound = w.hosts[0].improved_sign(&a, b"").unwrap();
    let rec = w.record(0, &a, vec![bound.fresh]);
    assert_eq!(
        improved_verify(&bound.entry, &a, w.cert(0), &w.trust, Some(&rec)),
        Verdict::Pass
    );
}

#[test]
fn improved_signature_stale_field() {
    let mut w = world();
    let a = w.agent(1);
    let old = w.hosts[0].improved_sign(&a, b"old").unwrap();
    let new = w.hosts[0].improved_sign(&a, b"new").unwrap();
    let rec = w.record(0, &a, vec![new.fresh]);
    assert_eq!(
        improved_verify(&old.entry, &a, w.cert(0), &w.trust, Some(&rec)),
        FailReason::StaleField.into()
    );
    assert_eq!(
        improved_verify(&old.entry, &a, w.cert(0), &w.trust, None),
        Verdict::FreshnessUnchecked
    );
}

#[test]
fn improved_signature_detects_code_changes() {
    let mut w = world();
    let a = w.agent(1);
    let bound = w.hosts[0].improved_sign(&a, b"m").unwrap();
    let rec = w.record(0, &a, vec![bound.fresh]);

    let mut mutated = a.clone();
    mutated.code_area.code.push(0);
    assert_eq!(
        improved_verify(&bound.entry, &mutated, w.cert(0), &w.trust, Some(&rec)),
        FailReason::CodeTampered.into()
    );

    // Re-signing the mutated code under a fresh key changes both digests.
    let evil = keys("evil");
    mutated.code_signature = mutated.code_area.sign_with(&evil.private).unwrap();
    mutated.server_pub = evil.public.clone();
    assert_eq!(
        improved_verify(&bound.entry, &mutated, w.cert(0), &w.trust, Some(&rec)),
        FailReason::CrcMismatch.into()
    );
}

#[test]
fn improved_signature_record_checks() {
    let mut w = world();
    let a = w.agent(1);
    let bound = w.hosts[0].improved_sign(&a, b"m").unwrap();
    // Record signed by a different host.
    let mut forged = w.record(1, &a, vec![bound.fresh]);
    forged.provider = w.hosts[0].keys().owner.clone();
    assert_eq!(
        improved_verify(&bound.entry, &a, w.cert(0), &w.trust, Some(&forged)),
        FailReason::BadRecord.into()
    );
}

#[test]
fn improved_encryption_round_trip_and_opacity() {
    let mut w = world();
    let a = w.agent(1);
    let spub = a.server_pub.clone();
    let msg = b"confidential offer text";
    let bound = w.hosts[0].improved_encrypt(&a, &spub, msg).unwrap();
    let rec = w.record(0, &a, vec![bound.fresh]);
    let opened = improved_decrypt(
        &bound.entry,
        &a,
        w.server_priv(),
        w.cert(0),
        &w.trust,
        Some(&rec),
    )
    .unwrap();
    assert_eq!(opened.message, msg);
    assert_eq!(opened.verdict, Verdict::Pass);

    let wire = bound.entry.to_canonical();
    assert!(!wire.windows(msg.len()).any(|win| win == msg));
    // A third host has nothing to check against.
    let d = DataEntry {
        provider: w.hosts[0].keys().owner.clone(),
        msg_index: 1,
        payload: bound.entry.clone(),
    };
    assert_eq!(
        check_entry(&d, &a, &w.certs, &w.trust, Some(&rec), None),
        Verdict::Sealed
    );
}

#[test]
fn improved_encryption_cross_agent_swap() {
    let mut w = world();
    let a = w.agent(1);
    let b = w.agent(2);
    let bound = w.hosts[0]
        .improved_encrypt(&a, &a.server_pub.clone(), b"m")
        .unwrap();
    let rec = w.record(0, &b, vec![bound.fresh]);
    assert_eq!(
        improved_decrypt(
            &bound.entry,
            &b,
            w.server_priv(),
            w.cert(0),
            &w.trust,
            Some(&rec)
        ),
        Err(FailReason::CrcMismatch)
    );
}

#[test]
fn partial_encryption_verifiable_by_anyone() {
    let mut w = world();
    let a = w.agent(1);
    let msg = b"partial secret";
    let bound = w.hosts[0]
        .partial_encrypt(&a, &a.server_pub.clone(), msg)
        .unwrap();
    let rec = w.record(0, &a, vec![bound.fresh]);
    assert_eq!(
        partial_verify(&bound.entry, &a, w.cert(0), &w.trust, Some(&rec)),
        Verdict::Pass
    );
    let wire = bound.entry.to_canonical();
    assert!(!wire.windows(msg.len()).any(|win| win == msg));
    assert_eq!(partial_decrypt(&bound.entry, w.server_priv()).unwrap(), msg);
    assert_eq!(
        partial_decrypt(&bound.entry, &w.hosts[1].keys().private),
        Err(FailReason::DecryptError)
    );
}

#[test]
fn partial_encryption_inner_tamper() {
    let mut w = world();
    let a = w.agent(1);
    let bound = w.hosts[0]
        .partial_encrypt(&a, &a.server_pub.clone(), b"m")
        .unwrap();
    let rec = w.record(0, &a, vec![bound.fresh]);
    let ProtectedEntry::PartialEncrypted { inner, .. } = &bound.entry else {
        unreachable!()
    };
    let bits = inner.0.len() * 8;
    for bit in [0, bits / 2, bits - 1] {
        let mut e = bound.entry.clone();
        if let ProtectedEntry::PartialEncrypted { inner, .. } = &mut e {
            inner.0[bit / 8] ^= 1 << (bit % 8);
        }
        assert_eq!(
            partial_verify(&e, &a, w.cert(0), &w.trust, Some(&rec)),
            FailReason::BadSignature.into()
        );
    }
}

#[test]
fn partial_encryption_unregistered_field() {
    let mut w = world();
    let a = w.agent(1);
    let bound = w.hosts[0]
        .partial_encrypt(&a, &a.server_pub.clone(), b"m")
        .unwrap();
    let other = w.hosts[0].next_fresh();
    let rec = w.record(0, &a, vec![other]);
    assert_eq!(
        partial_verify(&bound.entry, &a, w.cert(0), &w.trust, Some(&rec)),
        FailReason::StaleField.into()
    );
}

#[test]
fn partial_encryption_empty_message() {
    let mut w = world();
    let a = w.agent(1);
    let bound = w.hosts[0]
        .partial_encrypt(&a, &a.server_pub.clone(), b"")
        .unwrap();
    assert_eq!(partial_decrypt(&bound.entry, w.server_priv()).unwrap(), b"");
}

#[test]
fn uncertified_provider_key_is_rejected() {
    let mut w = world();
    let a = w.agent(1);
    let bound = w.hosts[0].improved_sign(&a, b"m").unwrap();
    let rogue = keys("rogue-ca");
    let fake = ca_issue(
        &rogue.private,
        w.hosts[0].keys().owner.clone(),
        w.hosts[0].keys().public.clone(),
    )
    .unwrap();
    assert_eq!(
        improved_verify(&bound.entry, &a, &fake, &w.trust, None),
        FailReason::BadCertificate.into()
    );
    assert_eq!(
        improved_verify(&bound.entry, &a, &fake, &TrustAnchor::Unverified, None),
        Verdict::FreshnessUnchecked
    );
}

#[test]
fn mode_mismatch_is_malformed() {
    let w = world();
    let plain = w.hosts[0].sign_plain(b"m").unwrap();
    assert_eq!(
        partial_decrypt(&plain, w.server_priv()),
        Err(FailReason::Malformed)
    );
}

#[test]
fn wire_format_leads_with_mode_tag() {
    let mut w = world();
    let a = w.agent(1);
    for mode in ProtectionMode::ALL {
        let b = w.hosts[0].protect(mode, &a, b"x").unwrap();
        let bytes = b.entry.to_canonical();
        assert_eq!(bytes[0], mode.tag());
        assert_eq!(ProtectedEntry::from_canonical(&bytes).unwrap(), b.entry);
    }
    assert_eq!(
        ProtectedEntry::from_canonical(&[9]),
        Err(DecodeError::UnknownTag(9))
    );
}

#[test]
fn check_entry_requires_matching_certificate() {
    let mut w = world();
    let a = w.agent(1);
    let b = w.hosts[0].improved_sign(&a, b"m").unwrap();
    let entry = DataEntry {
        provider: "unknown".into(),
        msg_index: 1,
        payload: b.entry,
    };
    assert_eq!(
        check_entry(&entry, &a, &w.certs, &w.trust, None, None),
        FailReason::BadCertificate.into()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_mode_round_trips(mode_idx in 0usize..5, msg in proptest::collection::vec(any::<u8>(), 0..512), seed in any::<u64>()) {
        let mut w = world();
        let a = w.agent(1);
        let mode = ProtectionMode::ALL[mode_idx];
        let mut host = Provider::new(w.hosts[0].keys().clone(), ChaCha20Rng::seed_from_u64(seed));
        let b = host.protect(mode, &a, &msg).unwrap();
        let rec = w.record(0, &a, vec![b.fresh]);
        let cert = w.cert(0);
        let recovered = match &b.entry {
            ProtectedEntry::PlainSigned { message, .. } => {
                prop_assert_eq!(verify_plain(&b.entry, cert, &w.trust), Verdict::Pass);
                message.clone()
            }
            ProtectedEntry::BasicEncrypted { .. } => decrypt_basic(&b.entry, w.server_priv(), cert, &w.trust).unwrap(),
            ProtectedEntry::ImprovedSigned { message, .. } => {
                prop_assert_eq!(improved_verify(&b.entry, &a, cert, &w.trust, Some(&rec)), Verdict::Pass);
                message.clone()
            }
            ProtectedEntry::ImprovedEncrypted { .. } => {
                let o = improved_decrypt(&b.entry, &a, w.server_priv(), cert, &w.trust, Some(&rec)).unwrap();
                prop_assert_eq!(o.verdict, Verdict::Pass);
                o.message
            }
            ProtectedEntry::PartialEncrypted { .. } => {
                prop_assert_eq!(partial_verify(&b.entry, &a, cert, &w.trust, Some(&rec)), Verdict::Pass);
                partial_decrypt(&b.entry, w.server_priv()).unwrap()
            }
        };
        prop_assert_eq!(recovered, msg);
        let bytes = b.entry.to_canonical();
        prop_assert_eq!(ProtectedEntry::from_canonical(&bytes).unwrap(), b.entry);
    }
}
