//! Scripted network attacker.
//!
//! Each script targets one victim subscriber and follows what the parties
//! do with the attacker's messages. A message is rejected when a receiver
//! reports a rejection while handling it (or the DNS answer it caused),
//! succeeds when a receiver acts on it, and is ignored otherwise.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::engine::{Injection, Intruder, Sim, Verdict};
use super::{SimError, ADVERSARY_ADDRESS};
use crate::crypto::{sign_nonce, KeyPair, KeyUsage, Nonce, NonceContext};
use crate::discovery::{binding_digest, Action, Cause, Destination, Micros, Variant, MILLIS};
use crate::records::{client_tlsa_name, publisher_tlsa_name, DnsName};
use crate::wire::{
    security_option, AuthResponse, EntryKind, EntryType, Ipv4Endpoint, SdEntry, SdMessage,
    SdOption, SecurityOption,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScriptKind {
    /// Offer from the attacker's address for the victim's service.
    SpoofedOffer,
    /// Subscribe under the victim's name, signed with the attacker's key.
    SpoofedSubscribe,
    /// The victim's first acknowledgment with a signature by the attacker.
    ForgedAck,
    /// StopOffer to the victim and StopSubscribe to its publisher, both
    /// signed with the attacker's key.
    ForgedStop,
    /// The victim's Subscribe sent again after it was answered.
    ReplayedSubscribe,
    /// Subscribe with a valid credential issued for another service.
    UnauthorizedScope,
}

impl ScriptKind {
    pub const ALL: [ScriptKind; 6] = [
        ScriptKind::SpoofedOffer,
        ScriptKind::SpoofedSubscribe,
        ScriptKind::ForgedAck,
        ScriptKind::ForgedStop,
        ScriptKind::ReplayedSubscribe,
        ScriptKind::UnauthorizedScope,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScriptKind::SpoofedOffer => "spoofed-offer",
            ScriptKind::SpoofedSubscribe => "spoofed-subscribe",
            ScriptKind::ForgedAck => "forged-ack",
            ScriptKind::ForgedStop => "forged-stop",
            ScriptKind::ReplayedSubscribe => "replayed-subscribe",
            ScriptKind::UnauthorizedScope => "unauthorized-scope",
        }
    }

    /// STRIDE category the script exercises.
    pub fn threat(self) -> &'static str {
        match self {
            ScriptKind::SpoofedOffer | ScriptKind::SpoofedSubscribe => "spoofing",
            ScriptKind::ForgedAck => "tampering",
            ScriptKind::ForgedStop => "denial-of-service",
            ScriptKind::ReplayedSubscribe => "repudiation",
            ScriptKind::UnauthorizedScope => "elevation-of-privilege",
        }
    }

    /// What the script should achieve against `variant`.
    pub fn expected(self, variant: Variant) -> Fate {
        use ScriptKind::*;
        match (variant, self) {
            (Variant::Vanilla, _) => Fate::Succeeded,
            (Variant::PreDeployed, SpoofedOffer | UnauthorizedScope) => Fate::Succeeded,
            (_, SpoofedOffer) => Fate::Rejected(Cause::SvcbMismatch),
            (_, SpoofedSubscribe | ForgedAck | ForgedStop) => Fate::Rejected(Cause::BadSignature),
            (_, ReplayedSubscribe) => Fate::Rejected(Cause::StaleNonce),
            (_, UnauthorizedScope) => Fate::Rejected(Cause::Unauthorized),
        }
    }
}

impl fmt::Display for ScriptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScriptKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScriptKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown attack {s:?}"))
    }
}

/// What became of the attacker's messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    Rejected(Cause),
    Succeeded,
    Ignored,
    /// The trigger never occurred.
    NotFired,
}

impl fmt::Display for Fate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fate::Rejected(c) => write!(f, "rejected:{c}"),
            Fate::Succeeded => f.write_str("succeeded"),
            Fate::Ignored => f.write_str("ignored"),
            Fate::NotFired => f.write_str("not_fired"),
        }
    }
}

impl Fate {
    fn of(actions: &[Action]) -> Fate {
        if let Some(cause) = actions.iter().find_map(|a| {
            if let Action::Rejected { cause, .. } = a {
                Some(*cause)
            } else {
                None
            }
        }) {
            return Fate::Rejected(cause);
        }
        let acted = actions.iter().any(|a| {
            matches!(
                a,
                Action::Send { .. } | Action::Established(_) | Action::TornDown { .. }
            )
        });
        if acted {
            Fate::Succeeded
        } else {
            Fate::Ignored
        }
    }

    /// Combines fates of several messages: any success wins, then any
    /// rejection.
    fn combine(self, other: Fate) -> Fate {
        match (self, other) {
            (Fate::Succeeded, _) | (_, Fate::Succeeded) => Fate::Succeeded,
            (Fate::Rejected(c), _) | (_, Fate::Rejected(c)) => Fate::Rejected(c),
            (Fate::Ignored, _) | (_, Fate::Ignored) => Fate::Ignored,
            _ => Fate::NotFired,
        }
    }
}

/// Result of one script.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub script: ScriptKind,
    pub victim: DnsName,
    pub fate: Fate,
    pub expected: Fate,
    /// The victim ended the run subscribed to its genuine publisher.
    pub victim_intact: bool,
}

impl StepOutcome {
    pub fn passed(&self) -> bool {
        self.fate == self.expected
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackReport {
    pub variant: Variant,
    pub outcomes: Vec<StepOutcome>,
}

impl AttackReport {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(StepOutcome::passed)
    }

    /// One line per script.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for o in &self.outcomes {
            out.push_str(&format!(
                "attack={} threat={} variant={} victim={} fate={} expected={} victim_intact={} result={}\n",
                o.script,
                o.script.threat(),
                self.variant,
                o.victim,
                o.fate,
                o.expected,
                if o.victim_intact { "yes" } else { "no" },
                if o.passed() { "pass" } else { "FAIL" },
            ));
        }
        out
    }
}

/// A list of attacks, each run against a fresh set of state machines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdversaryScript {
    pub steps: Vec<(ScriptKind, usize)>,
}

impl Default for AdversaryScript {
    /// All six attacks against the first planned subscriber.
    fn default() -> Self {
        AdversaryScript {
            steps: ScriptKind::ALL.iter().map(|&k| (k, 0)).collect(),
        }
    }
}

impl AdversaryScript {
    /// Lines of `attack NAME [victim N]`, where N indexes the planned
    /// subscribers.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut steps = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let fields: Vec<&str> = raw
                .split('#')
                .next()
                .unwrap_or_default()
                .split_whitespace()
                .collect();
            let err = |reason: String| SimError::Parse { line, reason };
            match fields.as_slice() {
                [] => {}
                ["attack", name] => steps.push((name.parse().map_err(err)?, 0)),
                ["attack", name, "victim", n] => {
                    let n = n
                        .parse()
                        .map_err(|_| err(format!("bad victim index {n:?}")))?;
                    steps.push((name.parse().map_err(err)?, n));
                }
                _ => return Err(err("expected: attack NAME [victim N]".into())),
            }
        }
        Ok(AdversaryScript { steps })
    }

    pub fn to_text(&self) -> String {
        self.steps
            .iter()
            .map(|(k, v)| format!("attack {k} victim {v}\n"))
            .collect()
    }

    /// Runs every step on `sim` with a cold resolver cache.
    pub fn run(&self, sim: &mut Sim) -> Result<AttackReport, SimError> {
        let mut outcomes = Vec::new();
        for (i, &(kind, victim)) in self.steps.iter().enumerate() {
            let mut adversary = Adversary::new(sim, kind, victim, i as u64)?;
            sim.flush_cache();
            let outcome = sim.run(Some(&mut adversary))?;
            let intact = outcome
                .subscribers
                .iter()
                .find(|s| s.name == adversary.victim_name)
                .is_some_and(|s| {
                    s.established_at.is_some()
                        && !s.torn_down
                        && s.peer_endpoint == Some(adversary.publisher_endpoint)
                });
            let expected = kind.expected(sim.config().variant);
            outcomes.push(StepOutcome {
                script: kind,
                victim: adversary.victim_name.clone(),
                fate: adversary.fate(),
                expected,
                victim_intact: intact && !adversary.victim_defected,
            });
        }
        Ok(AttackReport {
            variant: sim.config().variant,
            outcomes,
        })
    }
}

/// State of one attack during a run.
struct Adversary {
    kind: ScriptKind,
    victim_name: DnsName,
    victim_endpoint: Ipv4Endpoint,
    service_id: u16,
    minor: u32,
    publisher_endpoint: Ipv4Endpoint,
    publisher_name: DnsName,
    rogue: Ipv4Endpoint,
    attacker_key: KeyPair,
    insider: Option<(DnsName, KeyPair)>,
    captured: Option<SdMessage>,
    victim_acked: bool,
    fired: bool,
    /// Second message of the forged-stop script is out.
    second_sent: bool,
    fates: Vec<Fate>,
    /// The victim subscribed to the attacker.
    victim_defected: bool,
}

impl Adversary {
    fn new(sim: &Sim, kind: ScriptKind, victim: usize, salt: u64) -> Result<Self, SimError> {
        let plan = &sim.config().plan;
        let sub = plan
            .subscribers
            .get(victim)
            .ok_or_else(|| SimError::Config(format!("no subscriber {victim} to attack")))?;
        let publisher = plan
            .publishers
            .iter()
            .find(|p| p.key.scope() == sub.target)
            .ok_or_else(|| SimError::Config("victim has no publisher".into()))?;
        let victim_name = client_tlsa_name(&sub.client)?;
        let victim_endpoint = sim
            .endpoints()?
            .into_iter()
            .find(|(n, _)| *n == victim_name)
            .map(|(_, ep)| ep)
            .ok_or_else(|| SimError::Config("victim is not part of the run".into()))?;
        let insider = match kind {
            ScriptKind::UnauthorizedScope => {
                let other = plan
                    .subscribers
                    .iter()
                    .find(|s| s.target != sub.target)
                    .ok_or_else(|| {
                        SimError::Config("insider attack needs a second service".into())
                    })?;
                let name = client_tlsa_name(&other.client)?;
                let key = sim
                    .key(&name)
                    .cloned()
                    .ok_or_else(|| SimError::Config(format!("no key for {name}")))?;
                Some((name, key))
            }
            _ => None,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(0xbad_c0de ^ salt);
        Ok(Adversary {
            kind,
            victim_name,
            victim_endpoint,
            service_id: publisher.key.service_id,
            minor: publisher.key.minor,
            publisher_endpoint: publisher.endpoint,
            publisher_name: publisher_tlsa_name(&publisher.key, publisher.endpoint.port)?,
            rogue: Ipv4Endpoint::udp(ADVERSARY_ADDRESS, publisher.endpoint.port),
            attacker_key: KeyPair::generate(
                sim.config().scheme,
                KeyUsage::ServiceIdentity,
                &mut rng,
            ),
            insider,
            captured: None,
            victim_acked: false,
            fired: false,
            second_sent: false,
            fates: Vec::new(),
            victim_defected: false,
        })
    }

    fn fate(&self) -> Fate {
        if !self.fired {
            return Fate::NotFired;
        }
        self.fates
            .iter()
            .fold(Fate::Ignored, |acc, f| acc.combine(*f))
    }

    fn inject(
        &mut self,
        out: &mut Vec<Injection>,
        at: Micros,
        from: Ipv4Endpoint,
        to: Destination,
        message: SdMessage,
    ) {
        self.fired = true;
        out.push(Injection {
            at,
            from,
            to,
            message,
            tag: Some(1),
        });
    }

    /// The captured Subscribe, re-pointed at the attacker and answering
    /// `nonce` as `signer` with `key`.
    fn subscribe_as(&self, nonce: u32, signer: &DnsName, key: &KeyPair) -> Option<SdMessage> {
        let mut msg = self.captured.clone()?;
        set_endpoint(&mut msg, self.rogue);
        resign(&mut msg, nonce, signer, key);
        Some(msg)
    }
}

fn offer_challenge(msg: &SdMessage) -> Option<u32> {
    let entry = msg.entries.first()?;
    msg.security_of(entry).ok()?.into_iter().find_map(|o| {
        if let SecurityOption::Challenge(c) = o {
            Some(c)
        } else {
            None
        }
    })
}

fn set_endpoint(msg: &mut SdMessage, endpoint: Ipv4Endpoint) {
    for o in msg.options.iter_mut() {
        if let SdOption::Ipv4Endpoint(ep) = o {
            *ep = endpoint;
        }
    }
}

/// Replaces the security options of the first entry.
fn rewrite_security(msg: &mut SdMessage, f: impl FnOnce(&mut Vec<SecurityOption>)) {
    let Some(entry) = msg.entries.first().copied() else {
        return;
    };
    let Ok(mut opts) = msg.security_of(&entry) else {
        return;
    };
    let Some(idx) = entry
        .option_indices()
        .find(|&i| matches!(msg.options[i], SdOption::Configuration(_)))
    else {
        return;
    };
    f(&mut opts);
    msg.options[idx] = security_option(&opts);
}

/// Sets (or adds) a Response over `nonce` signed with `key` for `signer`.
fn resign(msg: &mut SdMessage, nonce: u32, signer: &DnsName, key: &KeyPair) {
    let Some(entry) = msg.entries.first().copied() else {
        return;
    };
    let ctx = NonceContext {
        signer: signer.clone(),
        digest: binding_digest(msg, &entry),
    };
    let Ok(signature) = sign_nonce(key, Nonce(nonce), &ctx) else {
        return;
    };
    let response = SecurityOption::Response(AuthResponse {
        nonce,
        signer: signer.to_string(),
        signature,
    });
    rewrite_security(msg, |opts| {
        opts.retain(|o| !matches!(o, SecurityOption::Response(_)));
        opts.insert(0, response);
    });
}

fn latest_challenge(msg: &SdMessage) -> Option<u32> {
    offer_challenge(msg)
}

impl Intruder for Adversary {
    fn intercept(
        &mut self,
        now: Micros,
        from: Ipv4Endpoint,
        to: &Destination,
        message: &mut SdMessage,
        out: &mut Vec<Injection>,
    ) -> Verdict {
        let Some(entry) = message.entries.first().copied() else {
            return Verdict::Deliver;
        };
        if entry.service_id != self.service_id {
            return Verdict::Deliver;
        }
        let kind = entry.kind();
        let from_victim = from == self.victim_endpoint;
        let from_publisher = from == self.publisher_endpoint;
        let to_victim = *to == Destination::Unicast(self.victim_endpoint);
        if from_victim && kind == EntryKind::Subscribe {
            self.captured = Some(message.clone());
        }
        if from_publisher && to_victim && kind == EntryKind::SubscribeAck {
            let first = !self.victim_acked;
            self.victim_acked = true;
            match self.kind {
                ScriptKind::ForgedAck if first => {
                    self.fired = true;
                    let signer = self.publisher_name.clone();
                    let key = self.attacker_key.clone();
                    if let Some(nonce) = message.security_of(&entry).ok().and_then(|opts| {
                        opts.into_iter().find_map(|o| {
                            if let SecurityOption::Response(r) = o {
                                Some(r.nonce)
                            } else {
                                None
                            }
                        })
                    }) {
                        resign(message, nonce, &signer, &key);
                    }
                    return Verdict::Tagged(1);
                }
                ScriptKind::SpoofedOffer if first => {
                    let s = entry;
                    let mut spoof = SdMessage::default();
                    let offer = SdEntry::new(
                        EntryType::Offer,
                        s.service_id,
                        s.instance_id,
                        s.major_version,
                        3,
                        0,
                    );
                    let offer = SdEntry {
                        minor_or_eventgroup: self.minor,
                        ..offer
                    };
                    spoof.push_entry(
                        offer,
                        vec![SdOption::Ipv4Endpoint(self.rogue)],
                        vec![security_option(&[SecurityOption::Challenge(0x5ec0_0001)])],
                    );
                    let to = Destination::Unicast(self.victim_endpoint);
                    self.inject(out, now + 50 * MILLIS, self.rogue, to, spoof);
                }
                ScriptKind::ReplayedSubscribe if first => {
                    if let Some(captured) = self.captured.clone() {
                        let to = Destination::Unicast(self.publisher_endpoint);
                        self.inject(out, now + 100 * MILLIS, self.victim_endpoint, to, captured);
                    }
                }
                ScriptKind::ForgedStop if first => {
                    let Some(captured) = self.captured.clone() else {
                        return Verdict::Deliver;
                    };
                    let Some(challenge) = latest_challenge(&captured) else {
                        // without security a plain StopOffer is enough
                        let mut stop = SdMessage::default();
                        let e = SdEntry::new(
                            EntryType::Offer,
                            entry.service_id,
                            entry.instance_id,
                            entry.major_version,
                            0,
                            0,
                        );
                        stop.push_entry(
                            e,
                            vec![SdOption::Ipv4Endpoint(self.publisher_endpoint)],
                            vec![],
                        );
                        let to = Destination::Unicast(self.victim_endpoint);
                        self.inject(out, now + 20 * MILLIS, self.publisher_endpoint, to, stop);
                        return Verdict::Deliver;
                    };
                    let mut stop = SdMessage::default();
                    let e = SdEntry::new(
                        EntryType::Offer,
                        entry.service_id,
                        entry.instance_id,
                        entry.major_version,
                        0,
                        0,
                    );
                    stop.push_entry(
                        e,
                        vec![SdOption::Ipv4Endpoint(self.publisher_endpoint)],
                        vec![security_option(&[SecurityOption::Challenge(0)])],
                    );
                    resign(
                        &mut stop,
                        challenge,
                        &self.publisher_name,
                        &self.attacker_key,
                    );
                    rewrite_security(&mut stop, |opts| {
                        opts.retain(|o| matches!(o, SecurityOption::Response(_)))
                    });
                    let to = Destination::Unicast(self.victim_endpoint);
                    self.inject(out, now + 20 * MILLIS, self.publisher_endpoint, to, stop);
                }
                _ => {}
            }
            return Verdict::Deliver;
        }
        // later offers from the genuine publisher carry fresh nonces
        let pending = !self.fired || (self.kind == ScriptKind::ForgedStop && !self.second_sent);
        if from_publisher && kind == EntryKind::Offer && self.victim_acked && pending {
            let Some(nonce) = offer_challenge(message) else {
                // nothing to answer; send unauthenticated messages instead
                if let Some(mut msg) = self.captured.clone() {
                    if matches!(
                        self.kind,
                        ScriptKind::SpoofedSubscribe | ScriptKind::UnauthorizedScope
                    ) {
                        set_endpoint(&mut msg, self.rogue);
                        let to = Destination::Unicast(self.publisher_endpoint);
                        self.inject(out, now + 100, self.rogue, to, msg);
                    }
                }
                return Verdict::Deliver;
            };
            let msg = match self.kind {
                ScriptKind::SpoofedSubscribe => {
                    self.subscribe_as(nonce, &self.victim_name.clone(), &self.attacker_key.clone())
                }
                ScriptKind::UnauthorizedScope => {
                    let (name, key) = self.insider.clone().expect("insider credential loaded");
                    self.subscribe_as(nonce, &name, &key)
                }
                ScriptKind::ForgedStop => {
                    // StopSubscribe claiming the victim
                    self.second_sent = true;
                    self.captured.clone().map(|mut m| {
                        m.entries[0].ttl = 0;
                        resign(&mut m, nonce, &self.victim_name, &self.attacker_key);
                        m
                    })
                }
                _ => None,
            };
            if let Some(msg) = msg {
                let from = if self.kind == ScriptKind::ForgedStop {
                    self.victim_endpoint
                } else {
                    self.rogue
                };
                let to = Destination::Unicast(self.publisher_endpoint);
                self.inject(out, now + 100, from, to, msg);
            }
        }
        Verdict::Deliver
    }

    fn receive(
        &mut self,
        _now: Micros,
        from: Ipv4Endpoint,
        message: &SdMessage,
        _out: &mut Vec<Injection>,
    ) {
        if from == self.victim_endpoint
            && message
                .entries
                .first()
                .is_some_and(|e| e.kind() == EntryKind::Subscribe)
        {
            self.victim_defected = true;
        }
    }

    fn fate(&mut self, _tag: u32, _party: &str, _now: Micros, actions: &[Action]) {
        self.fates.push(Fate::of(actions));
    }
}
