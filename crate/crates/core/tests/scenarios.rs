use agentseal::sim::{
    catalog, run_scenario, AttackKind, HostConfig, Phase, ScenarioConfig, ScenarioKeys,
    ScenarioOutcome, SetupError, Subject,
};
use agentseal::{FailReason, HostId, ProtectionMode, RecordSource, Verdict};
use proptest::prelude::*;

fn keys_for(cfg: &ScenarioConfig) -> ScenarioKeys {
    let hosts: Vec<HostId> = std::iter::once(cfg.server.clone())
        .chain(cfg.route.iter().cloned())
        .collect();
    ScenarioKeys::derive(cfg.seed, &hosts).unwrap()
}

fn run(cfg: &ScenarioConfig) -> ScenarioOutcome {
    run_scenario(cfg, &keys_for(cfg)).unwrap()
}

fn h(id: &str) -> HostId {
    HostId::new(id)
}

#[test]
fn honest_three_hosts_improved_signed() {
    let cfg = ScenarioConfig::honest("t", 1, ProtectionMode::ImprovedSigned, &["a", "b", "c"]);
    let out = run(&cfg);
    assert!(!out.report.has_anomalies());
    let audit = out.report.final_audit.as_ref().unwrap();
    assert_eq!(audit.code, Verdict::Pass);
    let records = out.registries[0].records_for(&audit.agent);
    assert_eq!(records.len(), 3);
    assert!(records.iter().all(|r| r.fields.len() == 1));
}

#[test]
fn remove_message_shows_count_mismatch() {
    let cfg = ScenarioConfig::honest("t", 2, ProtectionMode::ImprovedSigned, &["a", "b", "c"])
        .with_attack(
            "b",
            AttackKind::RemoveMessage {
                target: h("a"),
                index: 1,
            },
        );
    let out = run(&cfg);
    let audit = out.report.final_audit.as_ref().unwrap();
    let count = audit.count(&h("a")).unwrap();
    assert_eq!((count.expected, count.present), (1, 0));
    assert_eq!(audit.erased, vec![h("a")]);
    assert!(out.report.false_attributions().is_empty());
}

#[test]
fn replace_with_old_fails_exactly_once() {
    let mut cfg = ScenarioConfig::honest(
        "t",
        3,
        ProtectionMode::ImprovedSigned,
        &["a", "b", "c", "d"],
    )
    .with_attack(
        "c",
        AttackKind::ReplaceWithOld {
            target: h("b"),
            index: 2,
        },
    );
    cfg.messages_per_visit = 2;
    let out = run(&cfg);
    let audit = out.report.final_audit.as_ref().unwrap();
    let fails: Vec<_> = audit
        .entries
        .iter()
        .filter(|e| e.verdict.is_fail())
        .collect();
    assert_eq!(fails.len(), 1);
    assert_eq!((&fails[0].provider, fails[0].index), (&h("b"), 2));
    assert_eq!(fails[0].verdict, Verdict::Fail(FailReason::StaleField));
    // The host after the attacker notices it too.
    let d = out
        .report
        .hop_checks
        .iter()
        .find(|c| c.host == h("d") && c.phase == Phase::Main)
        .unwrap();
    assert!(d
        .entries
        .iter()
        .any(|e| e.verdict == Verdict::Fail(FailReason::StaleField)));
}

#[test]
fn plain_mode_cannot_see_replays() {
    let cfg = ScenarioConfig::honest("t", 3, ProtectionMode::PlainSigned, &["a", "b", "c"])
        .with_attack(
            "b",
            AttackKind::ReplaceWithOld {
                target: h("a"),
                index: 1,
            },
        );
    let out = run(&cfg);
    assert!(!out.report.has_anomalies());
}

#[test]
fn kill_at_third_of_four_names_second() {
    let cfg = ScenarioConfig::honest(
        "t",
        4,
        ProtectionMode::PartialEncrypted,
        &["h1", "h2", "h3", "h4"],
    )
    .with_attack("h3", AttackKind::KillAgent);
    let out = run(&cfg);
    assert!(!out.report.returned);
    assert!(out.agent.is_none());
    let kill = out.report.kill.as_ref().unwrap();
    assert_eq!(kill.last_registrant, Some(h("h2")));
    assert_eq!(kill.suspect, h("h3"));
}

#[test]
fn kill_at_first_host_has_no_registrant() {
    let cfg = ScenarioConfig::honest("t", 4, ProtectionMode::ImprovedSigned, &["h1", "h2"])
        .with_attack("h1", AttackKind::KillAgent);
    let kill = run(&cfg).report.kill.unwrap();
    assert_eq!(kill.last_registrant, None);
    assert_eq!(kill.suspect, h("h1"));
}

#[test]
fn brainwash_fails_at_next_honest_hop() {
    let cfg = ScenarioConfig::honest("t", 5, ProtectionMode::ImprovedEncrypted, &["a", "b", "c"])
        .with_attack("b", AttackKind::Brainwash);
    let out = run(&cfg);
    let c = out
        .report
        .hop_checks
        .iter()
        .find(|c| c.host == h("c"))
        .unwrap();
    assert_eq!(c.code, Verdict::Fail(FailReason::KeyMismatch));
    assert!(c.quarantined);
    let audit = out.report.final_audit.as_ref().unwrap();
    assert_eq!(audit.erased, vec![h("a")]);
    assert!(out.report.false_attributions().is_empty());
}

#[test]
fn tamper_slips_past_hosts_without_server_key() {
    let mut cfg = ScenarioConfig::honest("t", 6, ProtectionMode::ImprovedSigned, &["a", "b", "c"])
        .with_attack("b", AttackKind::TamperCodeResign);
    cfg.hosts[2].server_key_known = false;
    let out = run(&cfg);
    let c = out
        .report
        .hop_checks
        .iter()
        .find(|c| c.host == h("c"))
        .unwrap();
    assert_eq!(c.code, Verdict::Pass);
    assert!(!c.quarantined);
    let audit = out.report.final_audit.as_ref().unwrap();
    assert_eq!(audit.code, Verdict::Fail(FailReason::KeyMismatch));
    // c's own entry was bound to the tampered agent and still checks out.
    assert_eq!(audit.entry(&h("c"), 1).unwrap().verdict, Verdict::Pass);
    assert!(out.report.false_attributions().is_empty());
}

#[test]
fn clones_counted_by_next_receiver() {
    let cfg = ScenarioConfig::honest("t", 7, ProtectionMode::ImprovedSigned, &["a", "b"])
        .with_attack("b", AttackKind::CloneAgent { copies: 3 });
    let out = run(&cfg);
    assert_eq!(out.report.clones.len(), 1);
    assert_eq!(out.report.clones[0].observer, h("server"));
    assert_eq!(out.report.clones[0].count, 3);
}

#[test]
fn stale_record_replay_leaves_registry_untouched() {
    let cfg = ScenarioConfig::honest("t", 8, ProtectionMode::ImprovedSigned, &["a", "b", "c"])
        .with_attack("b", AttackKind::StaleRecordReplay { target: h("a") });
    let out = run(&cfg);
    let rej = &out.report.registry_rejections;
    assert_eq!(rej.len(), 1);
    assert_eq!(rej[0].verdict, Verdict::Fail(FailReason::BadChallenge));
    assert!(rej[0].state_unchanged);
    // The live record is still the current trip's.
    let audit = out.report.final_audit.as_ref().unwrap();
    assert_eq!(audit.entry(&h("a"), 1).unwrap().verdict, Verdict::Pass);
}

#[test]
fn key_theft_finds_nothing_and_forgeries_fail() {
    let cfg = ScenarioConfig::honest(
        "t",
        9,
        ProtectionMode::PartialEncrypted,
        &["a", "b", "c", "d", "e"],
    )
    .with_attack("b", AttackKind::ColludingKeyTheft { partner: h("d") });
    let out = run(&cfg);
    let audit = out.report.final_audit.as_ref().unwrap();
    for (host, expect) in [
        ("a", Verdict::Fail(FailReason::BadSignature)),
        ("c", Verdict::Fail(FailReason::BadSignature)),
        ("e", Verdict::Pass),
    ] {
        assert_eq!(audit.entry(&h(host), 1).unwrap().verdict, expect, "{host}");
    }
    assert!(out.transcript.to_jsonl().contains("found 0 private keys"));
}

#[test]
fn middleman_without_ca_goes_unnoticed() {
    let mut cfg = ScenarioConfig::honest("t", 10, ProtectionMode::ImprovedSigned, &["a", "b", "c"])
        .with_attack("b", AttackKind::MiddlemanKeySwap { target: h("a") });
    let with_ca = run(&cfg);
    assert!(with_ca.report.anomalies.iter().any(|a| a.subject
        == Subject::Entry {
            provider: h("a"),
            index: 1
        }));
    cfg.ca_enabled = false;
    let without = run(&cfg);
    assert!(!without.report.has_anomalies());
}

#[test]
fn missing_behaviour_is_a_setup_error() {
    let mut cfg = ScenarioConfig::honest("t", 1, ProtectionMode::ImprovedSigned, &["a", "b"]);
    cfg.hosts.pop();
    assert!(matches!(
        cfg.validate(),
        Err(SetupError::MissingBehavior(_))
    ));
}

#[test]
fn missing_key_or_cert_is_a_setup_error() {
    let cfg = ScenarioConfig::honest("t", 1, ProtectionMode::ImprovedSigned, &["a", "b"]);
    let keys = ScenarioKeys::derive(1, &[h("server"), h("a")]).unwrap();
    assert!(matches!(
        run_scenario(&cfg, &keys),
        Err(SetupError::MissingKey(_))
    ));
    let mut keys = keys_for(&cfg);
    keys.certs = keys
        .certs
        .iter()
        .filter(|c| c.subject != h("b"))
        .cloned()
        .collect();
    assert!(matches!(
        run_scenario(&cfg, &keys),
        Err(SetupError::MissingCert(_))
    ));
}

#[test]
fn invalid_attack_placements_rejected() {
    let base = ScenarioConfig::honest("t", 1, ProtectionMode::ImprovedSigned, &["a", "b", "c"]);
    let bad = [
        base.clone().with_attack(
            "a",
            AttackKind::RemoveMessage {
                target: h("b"),
                index: 1,
            },
        ),
        base.clone().with_attack(
            "b",
            AttackKind::RemoveMessage {
                target: h("a"),
                index: 2,
            },
        ),
        base.clone()
            .with_attack("b", AttackKind::CloneAgent { copies: 1 }),
        base.clone()
            .with_attack("c", AttackKind::ColludingKeyTheft { partner: h("a") }),
        base.clone()
            .with_attack("a", AttackKind::KillAgent)
            .with_attack("b", AttackKind::StaleRecordReplay { target: h("a") }),
    ];
    for cfg in bad {
        assert!(
            matches!(cfg.validate(), Err(SetupError::Config(_))),
            "{cfg:?}"
        );
    }
}

#[test]
fn toml_rejects_unknown_fields() {
    let text = r#"
        name = "x"
        seed = 1
        mode = "improved_signed"
        route = ["a"]
        colour = "blue"
        [[hosts]]
        id = "a"
    "#;
    assert!(ScenarioConfig::from_toml(text).is_err());
    let fixed = text.replace("colour = \"blue\"\n", "");
    let cfg = ScenarioConfig::from_toml(&fixed).unwrap();
    assert!(cfg.ca_enabled);
    assert_eq!(cfg.route_servers, vec![h("rs-1")]);
}

#[test]
fn transcript_starts_with_seed_header() {
    let cfg = catalog::honest(42, ProtectionMode::BasicEncrypted, 2);
    let jsonl = run(&cfg).transcript.to_jsonl();
    let first: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
    assert_eq!(first["seed"], 42);
    assert!(jsonl.lines().skip(1).all(|l| l.starts_with("{\"event\":")));
}

#[test]
fn two_route_servers_agree() {
    let mut cfg = catalog::honest(3, ProtectionMode::ImprovedSigned, 3);
    cfg.route_servers = vec![h("rs-1"), h("rs-2")];
    let out = run(&cfg);
    assert!(!out.report.has_anomalies());
    assert_eq!(
        out.registries[0].snapshot().records,
        out.registries[1].snapshot().records
    );
}

fn arb_attack() -> impl Strategy<Value = Option<AttackKind>> {
    let host = prop_oneof![Just(h("h1")), Just(h("h2"))];
    prop_oneof![
        Just(None),
        (host.clone(), 1u64..3)
            .prop_map(|(target, index)| Some(AttackKind::RemoveMessage { target, index })),
        (host.clone(), 1u64..3)
            .prop_map(|(target, index)| Some(AttackKind::ReplaceWithOld { target, index })),
        Just(Some(AttackKind::TamperCodeResign)),
        Just(Some(AttackKind::KillAgent)),
        (2u64..9).prop_map(|copies| Some(AttackKind::CloneAgent { copies })),
        host.clone()
            .prop_map(|target| Some(AttackKind::MiddlemanKeySwap { target })),
        host.prop_map(|partner| Some(AttackKind::ColludingKeyTheft { partner })),
    ]
}

fn arb_config() -> impl Strategy<Value = ScenarioConfig> {
    (
        "[a-z]{1,8}",
        0u64..=i64::MAX as u64,
        0usize..5,
        any::<bool>(),
        1u64..4,
        proptest::collection::vec((arb_attack(), any::<bool>()), 1..5),
    )
        .prop_map(|(name, seed, mode, ca, mpv, hosts)| {
            let mut cfg = catalog::honest(seed, ProtectionMode::ALL[mode], hosts.len());
            cfg.name = name;
            cfg.ca_enabled = ca;
            cfg.messages_per_visit = mpv;
            for (hc, (attack, known)) in cfg.hosts.iter_mut().zip(hosts) {
                hc.attack = attack;
                hc.server_key_known = known;
            }
            cfg
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_toml_round_trip(cfg in arb_config()) {
        let text = cfg.to_toml().unwrap();
        let back: ScenarioConfig = toml::from_str(&text).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn honest_routes_are_clean(seed in 0u64..1_000_000, mode in 0usize..5, len in 1usize..7, mpv in 1u64..3) {
        let mut cfg = catalog::honest(seed, ProtectionMode::ALL[mode], len);
        cfg.messages_per_visit = mpv;
        let out = run(&cfg);
        prop_assert!(!out.report.has_anomalies(), "{:?}", out.report.anomalies);
        prop_assert_eq!(out.report.final_audit.unwrap().entries.len() as u64, len as u64 * mpv);
    }

    #[test]
    fn valid_catalog_configs_never_misattribute(name_idx in 0usize..10, seed in 0u64..10_000) {
        let (cfg, _) = catalog::attack(catalog::ATTACK_NAMES[name_idx], seed).unwrap();
        let out = run(&cfg);
        prop_assert!(out.report.has_anomalies());
        prop_assert!(out.report.false_attributions().is_empty(), "{:?}", out.report.false_attributions());
    }
}

#[test]
fn host_config_helpers() {
    let a = HostConfig::attacker("x", AttackKind::Brainwash);
    assert_eq!(a.attack, Some(AttackKind::Brainwash));
    assert!(a.server_key_known);
}
