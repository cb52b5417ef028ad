use std::fmt;

use serde::{Deserialize, Serialize};

/// Outcome of a single check. Checks never panic or error out; every
/// failure is a `Fail` with a reason.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum Verdict {
    Pass,
    /// Signature and bindings hold but no route-server record was
    /// available to check the freshness field against.
    FreshnessUnchecked,
    /// Encrypted entry; only the agent server can open it.
    Sealed,
    Fail(FailReason),
}

impl Verdict {
    pub fn is_fail(&self) -> bool {
        matches!(self, Verdict::Fail(_))
    }

    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }

    pub fn reason(&self) -> Option<FailReason> {
        match self {
            Verdict::Fail(r) => Some(*r),
            _ => None,
        }
    }
}

impl From<FailReason> for Verdict {
    fn from(r: FailReason) -> Self {
        Verdict::Fail(r)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Pass => f.write_str("pass"),
            Verdict::FreshnessUnchecked => f.write_str("freshness_unchecked"),
            Verdict::Sealed => f.write_str("sealed"),
            Verdict::Fail(r) => write!(f, "fail:{}", r.as_str()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    BadCertificate,
    KeyMismatch,
    CodeTampered,
    BadSignature,
    CrcMismatch,
    StaleField,
    BadRecord,
    DecryptError,
    Malformed,
    BadChallenge,
}

impl FailReason {
    pub const ALL: [FailReason; 10] = [
        FailReason::BadCertificate,
        FailReason::KeyMismatch,
        FailReason::CodeTampered,
        FailReason::BadSignature,
        FailReason::CrcMismatch,
        FailReason::StaleField,
        FailReason::BadRecord,
        FailReason::DecryptError,
        FailReason::Malformed,
        FailReason::BadChallenge,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FailReason::BadCertificate => "bad_certificate",
            FailReason::KeyMismatch => "key_mismatch",
            FailReason::CodeTampered => "code_tampered",
            FailReason::BadSignature => "bad_signature",
            FailReason::CrcMismatch => "crc_mismatch",
            FailReason::StaleField => "stale_field",
            FailReason::BadRecord => "bad_record",
            FailReason::DecryptError => "decrypt_error",
            FailReason::Malformed => "malformed",
            FailReason::BadChallenge => "bad_challenge",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

impl fmt::Display for FailReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Verdict {
    /// Inverse of `Display`.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pass" => Some(Verdict::Pass),
            "freshness_unchecked" => Some(Verdict::FreshnessUnchecked),
            "sealed" => Some(Verdict::Sealed),
            _ => s
                .strip_prefix("fail:")
                .and_then(FailReason::parse)
                .map(Verdict::Fail),
        }
    }
}
