//! Publisher and subscriber state machines.
//!
//! Both machines are driven by [`Event`]s and answer with [`Action`]s; the
//! host (the simulator or a network runtime) delivers messages, runs DNS
//! queries and fires timers. Given the same events, times and seed the
//! machines produce the same actions.
//!
//! Three variants share the code paths:
//!
//! * `Vanilla`: plain service discovery without security options.
//! * `PreDeployed`: challenge-response with certificates configured on
//!   every endpoint.
//! * `Dnssec`: endpoints and certificates come from DNSSEC-validated SVCB
//!   and TLSA records, and clients are authorized by their DNS name.

mod publisher;
mod subscriber;


use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::crypto::{Certificate, CryptoOp, KaGroup};
use crate::dnssec::{AnswerKind, RData, RrType, ValidationStatus};
use crate::records::{
    parse_client_tlsa_name, DnsName, ScopeKind, ServiceKey, TLSA_MATCH_EXACT, TLSA_SELECTOR_FULL,
};
use crate::wire::{
    SdEntry, SdHeader, SdMessage, SdOption, KEY_CHALLENGE, KEY_KEY_EXCHANGE, KEY_RESPONSE,
    KEY_SESSION_KEY,
};

pub use publisher::{ClientPhase, PublisherConfig, PublisherFsm};
pub use subscriber::{SubscriberConfig, SubscriberFsm, SubscriberPhase};

/// Virtual time in microseconds.
pub type Micros = u64;

pub const MILLIS: Micros = 1_000;
pub const SECONDS: Micros = 1_000_000;

/// Outstanding offer challenges kept per publisher.
pub const MAX_CHALLENGES: usize = 64;
/// Subscribes waiting for a client TLSA record, per publisher.
pub const MAX_PENDING_SUBSCRIBES: usize = 256;

/// Which protocol variant an endpoint runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Vanilla,
    PreDeployed,
    Dnssec,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Vanilla, Variant::PreDeployed, Variant::Dnssec];

    pub fn is_secure(self) -> bool {
        self != Variant::Vanilla
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Vanilla => "vanilla",
            Variant::PreDeployed => "pre_deployed",
            Variant::Dnssec => "dnssec",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vanilla" => Ok(Variant::Vanilla),
            "pre_deployed" | "pre-deployed" | "predeployed" => Ok(Variant::PreDeployed),
            "dnssec" => Ok(Variant::Dnssec),
            other => Err(format!(
                "unknown variant {other:?} (vanilla, pre_deployed, dnssec)"
            )),
        }
    }
}

/// Whether a service may fall back to unauthenticated operation when the
/// peer's records are missing or insecure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SecurityMode {
    #[default]
    Secure,
    InsecurePermitted,
}

/// Client-name scopes a publisher accepts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthorizationPolicy {
    accepted: BTreeSet<ScopeKind>,
}

impl AuthorizationPolicy {
    /// `None` if `kinds` is empty.
    pub fn new(kinds: impl IntoIterator<Item = ScopeKind>) -> Option<Self> {
        let accepted: BTreeSet<ScopeKind> = kinds.into_iter().collect();
        (!accepted.is_empty()).then_some(AuthorizationPolicy { accepted })
    }

    pub fn service_only() -> Self {
        Self::new([ScopeKind::ServiceSpecific]).expect("non-empty")
    }

    pub fn all() -> Self {
        Self::new(ScopeKind::ALL).expect("non-empty")
    }

    pub fn accepts(&self, kind: ScopeKind) -> bool {
        self.accepted.contains(&kind)
    }

    pub fn accepted(&self) -> impl Iterator<Item = ScopeKind> + '_ {
        self.accepted.iter().copied()
    }
}

impl Default for AuthorizationPolicy {
    fn default() -> Self {
        Self::service_only()
    }
}

/// Result of checking a client name against a publisher.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Authorization {
    Authorized(ScopeKind),
    Rejected,
}

/// A client is authorized if its name parses as a client TLSA name in the
/// publisher's vehicle, its scope kind is accepted, and every scope field
/// present in the name equals the publisher's.
pub fn authorize_client_name(
    client: &DnsName,
    publisher: &ServiceKey,
    policy: &AuthorizationPolicy,
) -> Authorization {
    let Ok(key) = parse_client_tlsa_name(client) else {
        return Authorization::Rejected;
    };
    let kind = key.kind();
    let fields_match = key.vehicle == publisher.vehicle
        && key.service.is_none_or(|s| s == publisher.scope())
        && key
            .domain
            .as_ref()
            .is_none_or(|d| publisher.domain.as_ref() == Some(d));
    if fields_match && policy.accepts(kind) {
        Authorization::Authorized(kind)
    } else {
        Authorization::Rejected
    }
}

/// Protocol timers, from the reference stack defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    pub initial_delay_min: Micros,
    pub initial_delay_max: Micros,
    pub repetitions: u32,
    pub repetition_base: Micros,
    pub cyclic_offer: Micros,
    /// How long an offer challenge can be answered.
    pub nonce_lifetime: Micros,
    /// Entry TTL in seconds for offers and subscriptions.
    pub entry_ttl: u32,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            initial_delay_min: 10 * MILLIS,
            initial_delay_max: 100 * MILLIS,
            repetitions: 3,
            repetition_base: 200 * MILLIS,
            cyclic_offer: 2 * SECONDS,
            nonce_lifetime: 2 * SECONDS,
            entry_ttl: 3,
        }
    }
}

impl Timing {
    /// Delay before repetition `k` (1-based): base, 2·base, 4·base, ...
    pub fn repetition_delay(&self, k: u32) -> Micros {
        self.repetition_base << (k.saturating_sub(1)).min(20)
    }
}

/// Why an event was not acted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cause {
    /// Offer endpoint or version differs from every Secure SVCB record.
    SvcbMismatch,
    /// SVCB answer missing or not Secure.
    InsecureSvcb,
    /// Peer TLSA answer missing or not Secure.
    InsecureTlsa,
    /// Client name not accepted by the publisher's policy.
    Unauthorized,
    /// Signature does not verify under any published certificate.
    BadSignature,
    /// Response to a nonce that was never issued, has expired or was
    /// already answered.
    StaleNonce,
    /// A required security option is absent or malformed.
    MissingSecurity,
    /// Responder name is not the peer the exchange was started with.
    UnexpectedSigner,
    /// Wrapped group key failed authentication.
    BadSessionKey,
    /// Message not expected in the current phase.
    UnexpectedPhase,
    /// Pending state dropped to stay within its cap.
    Evicted,
    /// Publisher answered with a negative acknowledgment.
    Nacked,
}

impl Cause {
    pub fn label(self) -> &'static str {
        match self {
            Cause::SvcbMismatch => "svcb_mismatch",
            Cause::InsecureSvcb => "insecure_svcb",
            Cause::InsecureTlsa => "insecure_tlsa",
            Cause::Unauthorized => "unauthorized",
            Cause::BadSignature => "bad_signature",
            Cause::StaleNonce => "stale_nonce",
            Cause::MissingSecurity => "missing_security",
            Cause::UnexpectedSigner => "unexpected_signer",
            Cause::BadSessionKey => "bad_session_key",
            Cause::UnexpectedPhase => "unexpected_phase",
            Cause::Evicted => "evicted",
            Cause::Nacked => "nacked",
        }
    }
}

impl fmt::Display for Cause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Timer identities. Each machine ignores timers that no longer apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Timer {
    FindRepetition(u32),
    OfferRepetition(u32),
    CyclicOffer,
}

/// Where a message goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Destination {
    Multicast,
    Unicast(crate::wire::Ipv4Endpoint),
}

/// Answer to a DNS query as seen by an endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsReply {
    pub name: DnsName,
    pub rtype: RrType,
    pub kind: AnswerKind,
    pub status: ValidationStatus,
    pub records: Vec<RData>,
}

impl DnsReply {
    /// The reply a host sends when resolution failed outright.
    pub fn failure(name: DnsName, rtype: RrType) -> Self {
        DnsReply {
            name,
            rtype,
            kind: AnswerKind::NxDomain,
            status: ValidationStatus::Indeterminate,
            records: Vec::new(),
        }
    }

    pub fn is_secure_data(&self) -> bool {
        self.status == ValidationStatus::Secure
            && self.kind == AnswerKind::Positive
            && !self.records.is_empty()
    }
}

impl From<crate::dnssec::Resolution> for DnsReply {
    fn from(r: crate::dnssec::Resolution) -> Self {
        DnsReply {
            name: r.name,
            rtype: r.rtype,
            kind: r.kind,
            status: r.status,
            records: r.records,
        }
    }
}

/// Input to a state machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Start,
    Message {
        from: crate::wire::Ipv4Endpoint,
        message: SdMessage,
    },
    DnsResult(DnsReply),
    Timer(Timer),
}

/// A completed handshake.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Established {
    /// Authenticated peer name; `None` when nothing was authenticated.
    pub peer: Option<DnsName>,
    pub peer_endpoint: crate::wire::Ipv4Endpoint,
    /// Whether the peer was authenticated.
    pub secure: bool,
    /// Group key epoch held after the handshake.
    pub epoch: Option<u32>,
}

/// Output of a state machine step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Send {
        to: Destination,
        message: SdMessage,
    },
    Query {
        name: DnsName,
        rtype: RrType,
    },
    SetTimer {
        timer: Timer,
        after: Micros,
    },
    /// A cryptographic operation was performed in this step.
    Crypto(CryptoOp),
    Established(Established),
    TornDown {
        peer_endpoint: crate::wire::Ipv4Endpoint,
    },
    Rejected {
        cause: Cause,
        peer: Option<String>,
    },
}

/// Statically configured certificates for the pre-deployed variant.
pub type CertificateStore = Arc<BTreeMap<DnsName, Vec<Certificate>>>;

/// Certificates in full-certificate TLSA records.
pub(crate) fn certificates_from_tlsa(records: &[RData]) -> Vec<Certificate> {
    records
        .iter()
        .filter_map(RData::as_tlsa)
        .filter(|t| t.selector == TLSA_SELECTOR_FULL && t.matching == TLSA_MATCH_EXACT)
        .filter_map(|t| Certificate::from_der(t.data.clone()).ok())
        .collect()
}

/// Digest of an entry and its non-security options. Challenge responses
/// are bound to it so that a response cannot be moved to another entry,
/// endpoint or entry type.
pub fn binding_digest(message: &SdMessage, entry: &SdEntry) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update([entry.entry_type as u8]);
    h.update(entry.service_id.to_be_bytes());
    h.update(entry.instance_id.to_be_bytes());
    h.update([entry.major_version]);
    h.update(entry.ttl.to_be_bytes());
    h.update(entry.minor_or_eventgroup.to_be_bytes());
    for option in message.options_of(entry) {
        match option {
            SdOption::Ipv4Endpoint(ep) | SdOption::Ipv4Multicast(ep) => {
                h.update([if matches!(option, SdOption::Ipv4Endpoint(_)) {
                    0x04
                } else {
                    0x14
                }]);
                h.update(ep.address.octets());
                h.update([ep.protocol]);
                h.update(ep.port.to_be_bytes());
            }
            SdOption::Configuration(items) => {
                for item in items.iter().filter(|i| {
                    !matches!(
                        i.key.as_str(),
                        KEY_CHALLENGE | KEY_RESPONSE | KEY_KEY_EXCHANGE | KEY_SESSION_KEY
                    )
                }) {
                    h.update([0x01]);
                    h.update((item.key.len() as u32).to_be_bytes());
                    h.update(item.key.as_bytes());
                    h.update((item.value.len() as u32).to_be_bytes());
                    h.update(item.value.as_bytes());
                }
            }
            SdOption::Unknown { kind, payload } => {
                h.update([*kind]);
                h.update((payload.len() as u32).to_be_bytes());
                h.update(payload);
            }
        }
    }
    h.finalize().into()
}

/// Builds single-entry SD messages with an incrementing session id.
#[derive(Debug, Clone, Default)]
pub(crate) struct MessageBuilder {
    session: u16,
}

impl MessageBuilder {
    pub(crate) fn message(&mut self, client_id: u16) -> SdMessage {
        self.session = self.session.wrapping_add(1).max(1);
        SdMessage::new(SdHeader {
            client_id,
            session_id: self.session,
            ..SdHeader::default()
        })
    }
}

/// Key-agreement group used unless configured otherwise.
pub const DEFAULT_KA_GROUP: KaGroup = KaGroup::X25519;

/// Convenience wrappers matching the step-function view of the machines.
pub fn subscriber_step(
    mut fsm: SubscriberFsm,
    event: Event,
    now: Micros,
) -> (SubscriberFsm, Vec<Action>) {
    let actions = fsm.step(event, now);
    (fsm, actions)
}

pub fn publisher_step(
    mut fsm: PublisherFsm,
    event: Event,
    now: Micros,
) -> (PublisherFsm, Vec<Action>) {
    let actions = fsm.step(event, now);
    (fsm, actions)
}
