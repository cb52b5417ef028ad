//! Line-delimited request/response log for route-server interactions.
//!
//! Each exchange is two lines: `> <op> <hex>` for the request and
//! `< <op> <hex>` for the response, where `<hex>` is the canonical
//! encoding of the payload. Replaying a log against a registry created
//! with the same name, trust anchor and seed reproduces every response.

use thiserror::Error;

use super::{Challenge, FieldRecord, RecordSource, RegistryError, RegistryState};
use crate::agent::AgentId;
use crate::crypto::{Certificate, HostId, Signature};
use crate::encoding::{DecodeError, Decoder, Encoder};
use crate::verdict::Verdict;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    OpenChallenge {
        host: HostId,
        agent_id: AgentId,
    },
    Submit {
        record: FieldRecord,
        challenge_sig: Signature,
        cert: Certificate,
    },
    Query {
        agent_id: AgentId,
        host: HostId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Challenge(Challenge),
    InFlight,
    Verdict(Verdict),
    Record(Option<FieldRecord>),
}

impl Request {
    pub fn op(&self) -> &'static str {
        match self {
            Request::OpenChallenge { .. } => "open_challenge",
            Request::Submit { .. } => "submit",
            Request::Query { .. } => "query",
        }
    }

    fn payload(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        match self {
            Request::OpenChallenge { host, agent_id } => enc.nested(host).nested(agent_id),
            Request::Submit {
                record,
                challenge_sig,
                cert,
            } => enc.nested(record).nested(challenge_sig).nested(cert),
            Request::Query { agent_id, host } => enc.nested(agent_id).nested(host),
        };
        enc.finish()
    }

    fn parse(op: &str, payload: &[u8]) -> Result<Self, WireError> {
        let mut dec = Decoder::new(payload);
        let req = match op {
            "open_challenge" => Request::OpenChallenge {
                host: dec.nested()?,
                agent_id: dec.nested()?,
            },
            "submit" => Request::Submit {
                record: dec.nested()?,
                challenge_sig: dec.nested()?,
                cert: dec.nested()?,
            },
            "query" => Request::Query {
                agent_id: dec.nested()?,
                host: dec.nested()?,
            },
            other => return Err(WireError::UnknownOp(other.to_string())),
        };
        dec.finish()?;
        Ok(req)
    }

    pub fn to_line(&self) -> String {
        format!("> {} {}", self.op(), hex::encode(self.payload()))
    }
}

impl Response {
    pub fn op(&self) -> &'static str {
        match self {
            Response::Challenge(_) => "challenge",
            Response::InFlight => "in_flight",
            Response::Verdict(_) => "verdict",
            Response::Record(_) => "record",
        }
    }

    fn payload(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        match self {
            Response::Challenge(c) => {
                enc.nested(c);
            }
            Response::InFlight => {}
            Response::Verdict(v) => {
                enc.str(&v.to_string());
            }
            Response::Record(r) => {
                let rs: Vec<FieldRecord> = r.iter().cloned().collect();
                enc.list(&rs);
            }
        }
        enc.finish()
    }

    fn parse(op: &str, payload: &[u8]) -> Result<Self, WireError> {
        let mut dec = Decoder::new(payload);
        let resp = match op {
            "challenge" => Response::Challenge(dec.nested()?),
            "in_flight" => Response::InFlight,
            "verdict" => {
                let s = dec.string()?;
                Response::Verdict(Verdict::parse(&s).ok_or(WireError::BadVerdict(s))?)
            }
            "record" => {
                let mut rs: Vec<FieldRecord> = dec.list()?;
                if rs.len() > 1 {
                    return Err(DecodeError::Invalid("more than one record").into());
                }
                Response::Record(rs.pop())
            }
            other => return Err(WireError::UnknownOp(other.to_string())),
        };
        dec.finish()?;
        Ok(resp)
    }

    pub fn to_line(&self) -> String {
        format!("< {} {}", self.op(), hex::encode(self.payload()))
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("line {0}: expected `> op hex` or `< op hex`")]
    Syntax(usize),
    #[error("unknown operation `{0}`")]
    UnknownOp(String),
    #[error("unknown verdict `{0}`")]
    BadVerdict(String),
    #[error("bad hex payload")]
    Hex(#[from] hex::FromHexError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("line {line}: response diverged (logged `{logged}`, replayed `{replayed}`)")]
    Diverged {
        line: usize,
        logged: String,
        replayed: String,
    },
    #[error("request on line {0} has no response")]
    Unanswered(usize),
}

impl RegistryState {
    /// Runs one request and returns its response.
    pub fn execute(&mut self, req: &Request) -> Response {
        match req {
            Request::OpenChallenge { host, agent_id } => {
                match self.open_challenge(host.clone(), agent_id.clone()) {
                    Ok(c) => Response::Challenge(c),
                    Err(RegistryError::ChallengeInFlight { .. }) => Response::InFlight,
                    Err(_) => unreachable!("open_challenge only fails with ChallengeInFlight"),
                }
            }
            Request::Submit {
                record,
                challenge_sig,
                cert,
            } => Response::Verdict(self.submit(record.clone(), challenge_sig, cert)),
            Request::Query { agent_id, host } => {
                Response::Record(self.query(agent_id, host).cloned())
            }
        }
    }

    /// Runs `req` and returns the response with both log lines.
    pub fn execute_logged(&mut self, req: &Request) -> (Response, [String; 2]) {
        let resp = self.execute(req);
        let lines = [req.to_line(), resp.to_line()];
        (resp, lines)
    }
}

fn split_line(line: &str, n: usize, marker: char) -> Result<(&str, Vec<u8>), WireError> {
    let rest = line
        .strip_prefix(marker)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or(WireError::Syntax(n))?;
    let (op, hex_payload) = rest.split_once(' ').unwrap_or((rest, ""));
    Ok((op, hex::decode(hex_payload)?))
}

pub fn parse_request(line: &str) -> Result<Request, WireError> {
    let (op, payload) = split_line(line, 0, '>')?;
    Request::parse(op, &payload)
}

pub fn parse_response(line: &str) -> Result<Response, WireError> {
    let (op, payload) = split_line(line, 0, '<')?;
    Response::parse(op, &payload)
}

/// Re-executes every logged request against `state` and checks that each
/// response matches the logged one byte for byte. Returns the number of
/// exchanges replayed.
pub fn replay<'a>(
    state: &mut RegistryState,
    lines: impl IntoIterator<Item = &'a str>,
) -> Result<usize, WireError> {
    let mut iter = lines
        .into_iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let mut count = 0;
    while let Some((n, req_line)) = iter.next() {
        let (op, payload) = split_line(req_line, n + 1, '>')?;
        let req = Request::parse(op, &payload)?;
        let (resp_n, resp_line) = iter.next().ok_or(WireError::Unanswered(n + 1))?;
        split_line(resp_line, resp_n + 1, '<')?;
        let replayed = state.execute(&req).to_line();
        if replayed != resp_line {
            return Err(WireError::Diverged {
                line: resp_n + 1,
                logged: resp_line.to_string(),
                replayed,
            });
        }
        count += 1;
    }
    Ok(count)
}
