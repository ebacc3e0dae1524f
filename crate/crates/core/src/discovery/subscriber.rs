use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{
    binding_digest, certificates_from_tlsa, Action, Cause, CertificateStore, Destination, DnsReply,
    Established, Event, MessageBuilder, Micros, SecurityMode, Timer, Timing, Variant,
    DEFAULT_KA_GROUP,
};
use crate::crypto::{
    derive_session_key, ka_generate, ka_shared, sign_nonce, timed, unwrap_group_key,
    verify_nonce_with, Certificate, CryptoOp, GroupKey, KaGroup, KaPrivate, KeyPair, Nonce,
    NonceContext, SessionKey, Transcript,
};
use crate::dnssec::RrType;
use crate::records::{
    client_tlsa_name, match_offer_against_svcb, publisher_service_name, publisher_tlsa_name,
    ClientKey, DnsName, ServiceKey,
};
use crate::wire::{
    security_option, EntryKind, EntryType, Ipv4Endpoint, SdEntry, SdMessage, SdOption,
    SecurityOption,
};

/// Static configuration of one subscriber.
#[derive(Debug, Clone)]
pub struct SubscriberConfig {
    pub client: ClientKey,
    /// The publisher identity this subscriber wants.
    pub service: ServiceKey,
    pub eventgroup: u16,
    /// Own unicast endpoint.
    pub endpoint: Ipv4Endpoint,
    /// Publisher port, when configured, lets the TLSA query start together
    /// with the SVCB query.
    pub publisher_port: Option<u16>,
    pub variant: Variant,
    pub mode: SecurityMode,
    /// Identity key; unused by the vanilla variant.
    pub key: Option<KeyPair>,
    /// Publisher certificates for the pre-deployed variant.
    pub certificates: CertificateStore,
    pub timing: Timing,
    pub ka_group: KaGroup,
    pub seed: u64,
}

impl SubscriberConfig {
    pub fn new(
        client: ClientKey,
        service: ServiceKey,
        endpoint: Ipv4Endpoint,
        variant: Variant,
    ) -> Self {
        SubscriberConfig {
            client,
            service,
            eventgroup: 1,
            endpoint,
            publisher_port: None,
            variant,
            mode: SecurityMode::Secure,
            key: None,
            certificates: CertificateStore::default(),
            timing: Timing::default(),
            ka_group: DEFAULT_KA_GROUP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SubscriberPhase {
    Idle,
    AwaitingOfferAndDns,
    OfferValidated,
    SubscribePending,
    Subscribed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Lookup {
    NotAsked,
    Pending(DnsName),
    Done(DnsReply),
}

#[derive(Debug, Clone)]
struct Offer {
    entry: SdEntry,
    endpoint: Ipv4Endpoint,
    challenge: Option<u32>,
}

#[derive(Debug, Clone)]
struct Peer {
    endpoint: Ipv4Endpoint,
    /// Expected responder name; `None` for vanilla or unauthenticated peers.
    name: Option<DnsName>,
    /// Publisher nonce answered in the current Subscribe.
    answered: Option<u32>,
}

/// Subscriber side of discovery and subscription for one service.
#[derive(Debug, Clone)]
pub struct SubscriberFsm {
    cfg: SubscriberConfig,
    name: DnsName,
    rng: ChaCha20Rng,
    builder: MessageBuilder,
    phase: SubscriberPhase,
    renewing: bool,
    svcb: Lookup,
    tlsa: Lookup,
    tlsa_certs: Vec<Certificate>,
    latest_offer: Option<Offer>,
    peer: Option<Peer>,
    challenge: Option<Nonce>,
    ka: Option<KaPrivate>,
    pending_ack: Option<(SdMessage, SdEntry)>,
    stop_challenge: Option<Nonce>,
    last_offer_challenge: Option<u32>,
    session: Option<SessionKey>,
    group: Option<GroupKey>,
    verified_publisher: bool,
    timings: Vec<(CryptoOp, Duration)>,
}

impl SubscriberFsm {
    pub fn new(cfg: SubscriberConfig) -> Self {
        let name = client_tlsa_name(&cfg.client).expect("client key yields a valid name");
        let rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        SubscriberFsm {
            cfg,
            name,
            rng,
            builder: MessageBuilder::default(),
            phase: SubscriberPhase::Idle,
            renewing: false,
            svcb: Lookup::NotAsked,
            tlsa: Lookup::NotAsked,
            tlsa_certs: Vec::new(),
            latest_offer: None,
            peer: None,
            challenge: None,
            ka: None,
            pending_ack: None,
            stop_challenge: None,
            last_offer_challenge: None,
            session: None,
            group: None,
            verified_publisher: false,
            timings: Vec::new(),
        }
    }

    pub fn config(&self) -> &SubscriberConfig {
        &self.cfg
    }

    pub fn name(&self) -> &DnsName {
        &self.name
    }

    pub fn phase(&self) -> SubscriberPhase {
        self.phase
    }

    pub fn group_key(&self) -> Option<&GroupKey> {
        self.group.as_ref()
    }

    pub fn session_key(&self) -> Option<&SessionKey> {
        self.session.as_ref()
    }

    /// Whether the current subscription was acknowledged with a signature
    /// that verified against the publisher's certificate.
    pub fn publisher_verified(&self) -> bool {
        self.phase == SubscriberPhase::Subscribed && self.verified_publisher
    }

    pub fn peer_endpoint(&self) -> Option<Ipv4Endpoint> {
        self.peer.as_ref().map(|p| p.endpoint)
    }

    /// Wall-clock durations of cryptographic operations since the last call.
    pub fn take_timings(&mut self) -> Vec<(CryptoOp, Duration)> {
        std::mem::take(&mut self.timings)
    }

    /// Replaces the identity key, as after a credential rollover.
    pub fn set_key(&mut self, key: KeyPair) {
        self.cfg.key = Some(key);
    }

    fn crypto<T>(&mut self, op: CryptoOp, actions: &mut Vec<Action>, f: impl FnOnce() -> T) -> T {
        let (out, elapsed) = timed(f);
        self.timings.push((op, elapsed));
        actions.push(Action::Crypto(op));
        out
    }

    fn reject(&self, cause: Cause, actions: &mut Vec<Action>) {
        let peer = self
            .peer
            .as_ref()
            .and_then(|p| p.name.as_ref())
            .map(|n| n.to_string());
        actions.push(Action::Rejected { cause, peer });
    }

    fn expected_publisher_name(&self, port: u16) -> DnsName {
        publisher_tlsa_name(&self.cfg.service, port).expect("service key yields a valid name")
    }

    fn matches_service(&self, entry: &SdEntry) -> bool {
        let s = &self.cfg.service;
        entry.service_id == s.service_id
            && entry.instance_id == s.instance_id
            && entry.major_version == s.major
    }

    pub fn step(&mut self, event: Event, now: Micros) -> Vec<Action> {
        let mut actions = Vec::new();
        match event {
            Event::Start => self.on_start(&mut actions),
            Event::Timer(timer) => self.on_timer(timer, &mut actions),
            Event::DnsResult(reply) => self.on_dns(reply, &mut actions),
            Event::Message { message, .. } => {
                for entry in message.entries.clone() {
                    if !self.matches_service(&entry) {
                        continue;
                    }
                    match entry.kind() {
                        EntryKind::Offer => self.on_offer(&message, &entry, &mut actions),
                        EntryKind::StopOffer => self.on_stop_offer(&message, &entry, &mut actions),
                        EntryKind::SubscribeAck => self.on_ack(&message, &entry, &mut actions),
                        EntryKind::SubscribeNack => {
                            if matches!(self.phase, SubscriberPhase::SubscribePending) {
                                self.phase = SubscriberPhase::AwaitingOfferAndDns;
                                self.reject(Cause::Nacked, &mut actions);
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
        let _ = now;
        actions
    }

    fn find_message(&mut self) -> SdMessage {
        let s = &self.cfg.service;
        let entry = SdEntry::new(
            EntryType::Find,
            s.service_id,
            s.instance_id,
            s.major,
            self.cfg.timing.entry_ttl,
            s.minor,
        );
        let mut msg = self.builder.message(self.cfg.client.client_id);
        msg.push_entry(entry, vec![], vec![]);
        msg
    }

    fn on_start(&mut self, actions: &mut Vec<Action>) {
        if self.phase != SubscriberPhase::Idle {
            return;
        }
        self.phase = SubscriberPhase::AwaitingOfferAndDns;
        let find = self.find_message();
        actions.push(Action::Send {
            to: Destination::Multicast,
            message: find,
        });
        if self.cfg.variant == Variant::Dnssec {
            let svcb =
                publisher_service_name(&self.cfg.service).expect("service key yields a valid name");
            actions.push(Action::Query {
                name: svcb.clone(),
                rtype: RrType::Svcb,
            });
            self.svcb = Lookup::Pending(svcb);
            if let Some(port) = self.cfg.publisher_port {
                let tlsa = self.expected_publisher_name(port);
                actions.push(Action::Query {
                    name: tlsa.clone(),
                    rtype: RrType::Tlsa,
                });
                self.tlsa = Lookup::Pending(tlsa);
            }
        }
        if self.cfg.timing.repetitions > 0 {
            actions.push(Action::SetTimer {
                timer: Timer::FindRepetition(1),
                after: self.cfg.timing.repetition_delay(1),
            });
        }
    }

    fn on_timer(&mut self, timer: Timer, actions: &mut Vec<Action>) {
        let Timer::FindRepetition(k) = timer else {
            return;
        };
        if self.phase != SubscriberPhase::AwaitingOfferAndDns || k > self.cfg.timing.repetitions {
            return;
        }
        let find = self.find_message();
        actions.push(Action::Send {
            to: Destination::Multicast,
            message: find,
        });
        if k < self.cfg.timing.repetitions {
            actions.push(Action::SetTimer {
                timer: Timer::FindRepetition(k + 1),
                after: self.cfg.timing.repetition_delay(k + 1),
            });
        }
    }

    fn on_dns(&mut self, reply: DnsReply, actions: &mut Vec<Action>) {
        match (&self.svcb, &self.tlsa) {
            (Lookup::Pending(n), _) if *n == reply.name && reply.rtype == RrType::Svcb => {
                self.svcb = Lookup::Done(reply);
                if self.latest_offer.is_some() && self.phase == SubscriberPhase::AwaitingOfferAndDns
                {
                    self.validate_latest_offer(actions);
                }
            }
            (_, Lookup::Pending(n)) if *n == reply.name && reply.rtype == RrType::Tlsa => {
                self.tlsa_certs = if reply.is_secure_data() {
                    certificates_from_tlsa(&reply.records)
                } else {
                    Vec::new()
                };
                self.tlsa = Lookup::Done(reply);
                if let Some((msg, entry)) = self.pending_ack.take() {
                    self.on_ack(&msg, &entry, actions);
                }
            }
            _ => {}
        }
    }

    fn on_offer(&mut self, msg: &SdMessage, entry: &SdEntry, actions: &mut Vec<Action>) {
        if self.phase == SubscriberPhase::Idle
            || entry.minor_or_eventgroup != self.cfg.service.minor
        {
            return;
        }
        let Some(endpoint) = msg.endpoint_of(entry) else {
            self.reject(Cause::MissingSecurity, actions);
            return;
        };
        let challenge = msg.security_of(entry).ok().and_then(|opts| {
            opts.into_iter().find_map(|o| {
                if let SecurityOption::Challenge(n) = o {
                    Some(n)
                } else {
                    None
                }
            })
        });
        if self.cfg.variant.is_secure() && challenge.is_none() {
            self.reject(Cause::MissingSecurity, actions);
            return;
        }
        // only the latest offer is kept for validation
        self.latest_offer = Some(Offer {
            entry: *entry,
            endpoint,
            challenge,
        });
        match self.cfg.variant {
            Variant::Vanilla => self.accept_offer(None, actions),
            Variant::PreDeployed => {
                let name = self.expected_publisher_name(endpoint.port);
                self.accept_offer(Some(name), actions)
            }
            Variant::Dnssec => self.validate_latest_offer(actions),
        }
    }

    fn validate_latest_offer(&mut self, actions: &mut Vec<Action>) {
        let Lookup::Done(reply) = &self.svcb else {
            return;
        };
        let Some(offer) = self.latest_offer.clone() else {
            return;
        };
        if !reply.is_secure_data() {
            self.latest_offer = None;
            if self.cfg.mode == SecurityMode::InsecurePermitted {
                self.accept_offer(None, actions);
            } else {
                self.reject(Cause::InsecureSvcb, actions);
            }
            return;
        }
        let records: Vec<_> = reply
            .records
            .iter()
            .filter_map(|r| r.as_svcb().cloned())
            .collect();
        let Some(matched) = match_offer_against_svcb(&offer.entry, &offer.endpoint, &records)
        else {
            self.latest_offer = None;
            actions.push(Action::Rejected {
                cause: Cause::SvcbMismatch,
                peer: Some(offer.endpoint.to_string()),
            });
            return;
        };
        let name = self.expected_publisher_name(matched.port);
        let stale = match &self.tlsa {
            Lookup::NotAsked => true,
            Lookup::Pending(n) => *n != name,
            Lookup::Done(r) => r.name != name,
        };
        if stale {
            actions.push(Action::Query {
                name: name.clone(),
                rtype: RrType::Tlsa,
            });
            self.tlsa = Lookup::Pending(name.clone());
            self.tlsa_certs.clear();
        }
        self.accept_offer(Some(name), actions);
    }

    /// Subscribes to the latest offer, which has passed validation.
    fn accept_offer(&mut self, name: Option<DnsName>, actions: &mut Vec<Action>) {
        let Some(offer) = self.latest_offer.take() else {
            return;
        };
        self.last_offer_challenge = offer.challenge;
        let renewal = self.phase == SubscriberPhase::Subscribed
            && self
                .peer
                .as_ref()
                .is_some_and(|p| p.endpoint == offer.endpoint);
        if self.phase == SubscriberPhase::Subscribed && !renewal {
            // a different validated publisher; start over with it
            self.drop_session();
        }
        if self.phase != SubscriberPhase::Subscribed {
            self.phase = SubscriberPhase::OfferValidated;
        }
        self.peer = Some(Peer {
            endpoint: offer.endpoint,
            name,
            answered: offer.challenge,
        });
        self.send_subscribe(offer, actions);
    }

    fn subscribe_entry(&self, ttl: u32) -> SdEntry {
        let s = &self.cfg.service;
        SdEntry::new(
            EntryType::Subscribe,
            s.service_id,
            s.instance_id,
            s.major,
            ttl,
            self.cfg.eventgroup as u32,
        )
    }

    fn send_subscribe(&mut self, offer: Offer, actions: &mut Vec<Action>) {
        let entry = self.subscribe_entry(self.cfg.timing.entry_ttl);
        let mut msg = self.builder.message(self.cfg.client.client_id);
        let own = vec![SdOption::Ipv4Endpoint(self.cfg.endpoint)];
        if !self.cfg.variant.is_secure() {
            msg.push_entry(entry, own, vec![]);
        } else {
            let Some(key) = self.cfg.key.clone() else {
                self.reject(Cause::MissingSecurity, actions);
                return;
            };
            let publisher_nonce = offer.challenge.expect("secure offers carry a challenge");
            let challenge = Nonce::random(&mut self.rng);
            let group = self.cfg.ka_group;
            let mut rng = self.rng.clone();
            let (private, share) = self.crypto(CryptoOp::KeyAgreement, actions, || {
                ka_generate(group, &mut rng)
            });
            self.rng = rng;
            // the digest covers entry and endpoint, which are fixed before signing
            let mut probe = SdMessage::default();
            probe.push_entry(entry, own.clone(), vec![]);
            let ctx = NonceContext {
                signer: self.name.clone(),
                digest: binding_digest(&probe, &probe.entries[0]),
            };
            let signature = match self.crypto(CryptoOp::Sign, actions, || {
                sign_nonce(&key, Nonce(publisher_nonce), &ctx)
            }) {
                Ok(sig) => sig,
                Err(_) => {
                    self.reject(Cause::MissingSecurity, actions);
                    return;
                }
            };
            let security = security_option(&[
                SecurityOption::Response(crate::wire::AuthResponse {
                    nonce: publisher_nonce,
                    signer: self.name.to_string(),
                    signature,
                }),
                SecurityOption::Challenge(challenge.0),
                SecurityOption::KeyExchange(share),
            ]);
            msg.push_entry(entry, own, vec![security]);
            self.challenge = Some(challenge);
            self.ka = Some(private);
        }
        if self.phase == SubscriberPhase::Subscribed {
            self.renewing = true;
        } else {
            self.phase = SubscriberPhase::SubscribePending;
        }
        actions.push(Action::Send {
            to: Destination::Unicast(offer.endpoint),
            message: msg,
        });
    }

    fn publisher_certificates(&self, name: &DnsName) -> Result<Vec<Certificate>, Option<Cause>> {
        match self.cfg.variant {
            Variant::Vanilla => Ok(Vec::new()),
            Variant::PreDeployed => self
                .cfg
                .certificates
                .get(name)
                .cloned()
                .filter(|c| !c.is_empty())
                .ok_or(Some(Cause::InsecureTlsa)),
            Variant::Dnssec => match &self.tlsa {
                Lookup::Done(r) if r.name == *name => {
                    if self.tlsa_certs.is_empty() {
                        Err(Some(Cause::InsecureTlsa))
                    } else {
                        Ok(self.tlsa_certs.clone())
                    }
                }
                // not resolved yet
                _ => Err(None),
            },
        }
    }

    fn on_ack(&mut self, msg: &SdMessage, entry: &SdEntry, actions: &mut Vec<Action>) {
        let awaiting = self.phase == SubscriberPhase::SubscribePending
            || (self.phase == SubscriberPhase::Subscribed && self.renewing);
        if !self.cfg.variant.is_secure() {
            if awaiting {
                self.finish(None, false, actions);
            } else {
                self.reject(Cause::UnexpectedPhase, actions);
            }
            return;
        }
        let Ok(security) = msg.security_of(entry) else {
            self.reject(Cause::MissingSecurity, actions);
            return;
        };
        let response = security.iter().find_map(|o| {
            if let SecurityOption::Response(r) = o {
                Some(r.clone())
            } else {
                None
            }
        });
        let wrapped = security.iter().find_map(|o| {
            if let SecurityOption::SessionKey(w) = o {
                Some(w.clone())
            } else {
                None
            }
        });
        let Some(response) = response else {
            match (wrapped, self.phase) {
                (Some(w), SubscriberPhase::Subscribed) => self.on_key_update(&w, actions),
                // the publisher could not authenticate us and fell back
                (None, _) if awaiting && self.cfg.mode == SecurityMode::InsecurePermitted => {
                    self.finish(None, false, actions)
                }
                _ => self.reject(Cause::MissingSecurity, actions),
            }
            return;
        };
        if !awaiting {
            self.reject(Cause::UnexpectedPhase, actions);
            return;
        }
        let Some(expected) = self.peer.as_ref().and_then(|p| p.name.clone()) else {
            // the offer was accepted without authentication
            if self.cfg.mode == SecurityMode::InsecurePermitted {
                self.finish(None, false, actions);
            } else {
                self.reject(Cause::InsecureSvcb, actions);
            }
            return;
        };
        if Some(response.nonce) != self.challenge.map(|n| n.0) {
            self.reject(Cause::StaleNonce, actions);
            return;
        }
        if response.signer != expected.as_str() {
            self.reject(Cause::UnexpectedSigner, actions);
            return;
        }
        let certs = match self.publisher_certificates(&expected) {
            Ok(certs) => certs,
            Err(None) => {
                self.pending_ack = Some((msg.clone(), *entry));
                return;
            }
            Err(Some(cause)) => {
                if self.cfg.mode == SecurityMode::InsecurePermitted {
                    self.finish(None, false, actions);
                } else {
                    self.reject(cause, actions);
                }
                return;
            }
        };
        let ctx = NonceContext {
            signer: expected.clone(),
            digest: binding_digest(msg, entry),
        };
        let nonce = Nonce(response.nonce);
        let verified = self.crypto(CryptoOp::Verify, actions, || {
            certs
                .iter()
                .any(|c| verify_nonce_with(c, nonce, &ctx, &response.signature))
        });
        if !verified {
            self.reject(Cause::BadSignature, actions);
            return;
        }
        let share = security.iter().find_map(|o| {
            if let SecurityOption::KeyExchange(k) = o {
                Some(k.clone())
            } else {
                None
            }
        });
        let (Some(share), Some(private)) = (share, self.ka.clone()) else {
            self.reject(Cause::MissingSecurity, actions);
            return;
        };
        let Ok(shared) = self.crypto(CryptoOp::KeyAgreement, actions, || {
            ka_shared(&private, &share)
        }) else {
            self.reject(Cause::MissingSecurity, actions);
            return;
        };
        let transcript = Transcript {
            publisher: expected.clone(),
            subscriber: self.name.clone(),
            publisher_nonce: Nonce(
                self.peer
                    .as_ref()
                    .and_then(|p| p.answered)
                    .unwrap_or_default(),
            ),
            subscriber_nonce: nonce,
        };
        let session = derive_session_key(&shared, &transcript);
        let group = match wrapped {
            Some(w) => {
                match self.crypto(CryptoOp::Unwrap, actions, || unwrap_group_key(&session, &w)) {
                    Ok(g) => Some(g),
                    Err(_) => {
                        self.reject(Cause::BadSessionKey, actions);
                        return;
                    }
                }
            }
            None => None,
        };
        self.session = Some(session);
        self.group = group;
        self.stop_challenge = self.challenge.take();
        self.ka = None;
        self.finish(Some(expected), true, actions);
    }

    fn on_key_update(&mut self, wrapped: &crate::wire::WrappedKey, actions: &mut Vec<Action>) {
        let Some(session) = self.session.clone() else {
            self.reject(Cause::UnexpectedPhase, actions);
            return;
        };
        match self.crypto(CryptoOp::Unwrap, actions, || {
            unwrap_group_key(&session, wrapped)
        }) {
            Ok(g) if self.group.as_ref().is_none_or(|old| g.epoch > old.epoch) => {
                self.group = Some(g)
            }
            Ok(_) => self.reject(Cause::StaleNonce, actions),
            Err(_) => self.reject(Cause::BadSessionKey, actions),
        }
    }

    fn finish(&mut self, peer_name: Option<DnsName>, secure: bool, actions: &mut Vec<Action>) {
        let first = self.phase != SubscriberPhase::Subscribed;
        self.phase = SubscriberPhase::Subscribed;
        self.renewing = false;
        self.verified_publisher = secure;
        if first {
            let endpoint = self
                .peer
                .as_ref()
                .map(|p| p.endpoint)
                .unwrap_or(self.cfg.endpoint);
            actions.push(Action::Established(Established {
                peer: peer_name,
                peer_endpoint: endpoint,
                secure,
                epoch: self.group.as_ref().map(|g| g.epoch),
            }));
        }
    }

    fn drop_session(&mut self) {
        self.phase = SubscriberPhase::AwaitingOfferAndDns;
        self.renewing = false;
        self.session = None;
        self.group = None;
        self.challenge = None;
        self.stop_challenge = None;
        self.ka = None;
        self.pending_ack = None;
        self.verified_publisher = false;
    }

    fn on_stop_offer(&mut self, msg: &SdMessage, entry: &SdEntry, actions: &mut Vec<Action>) {
        if !matches!(
            self.phase,
            SubscriberPhase::Subscribed | SubscriberPhase::SubscribePending
        ) {
            if !self.cfg.variant.is_secure() {
                self.latest_offer = None;
            }
            return;
        }
        let Some(peer) = self.peer.clone() else {
            return;
        };
        if self.cfg.variant.is_secure() {
            let response = msg.security_of(entry).ok().and_then(|s| {
                s.into_iter().find_map(|o| {
                    if let SecurityOption::Response(r) = o {
                        Some(r)
                    } else {
                        None
                    }
                })
            });
            let Some(response) = response else {
                self.reject(Cause::MissingSecurity, actions);
                return;
            };
            if Some(response.nonce) != self.stop_challenge.map(|n| n.0) {
                self.reject(Cause::StaleNonce, actions);
                return;
            }
            let Some(expected) = peer.name.clone() else {
                self.reject(Cause::InsecureTlsa, actions);
                return;
            };
            if response.signer != expected.as_str() {
                self.reject(Cause::UnexpectedSigner, actions);
                return;
            }
            let certs = match self.publisher_certificates(&expected) {
                Ok(c) => c,
                Err(cause) => {
                    self.reject(cause.unwrap_or(Cause::InsecureTlsa), actions);
                    return;
                }
            };
            let ctx = NonceContext {
                signer: expected,
                digest: binding_digest(msg, entry),
            };
            let nonce = Nonce(response.nonce);
            let ok = self.crypto(CryptoOp::Verify, actions, || {
                certs
                    .iter()
                    .any(|c| verify_nonce_with(c, nonce, &ctx, &response.signature))
            });
            if !ok {
                self.reject(Cause::BadSignature, actions);
                return;
            }
        }
        self.drop_session();
        self.peer = None;
        actions.push(Action::TornDown {
            peer_endpoint: peer.endpoint,
        });
    }

    /// Ends the subscription with a StopSubscribe. In secure variants the
    /// StopSubscribe answers the publisher's latest offer challenge.
    pub fn stop(&mut self, _now: Micros) -> Vec<Action> {
        let mut actions = Vec::new();
        if self.phase != SubscriberPhase::Subscribed {
            return actions;
        }
        let Some(peer) = self.peer.clone() else {
            return actions;
        };
        let entry = self.subscribe_entry(0);
        let own = vec![SdOption::Ipv4Endpoint(self.cfg.endpoint)];
        let mut msg = self.builder.message(self.cfg.client.client_id);
        if self.cfg.variant.is_secure() {
            let (Some(key), Some(nonce)) = (self.cfg.key.clone(), self.last_offer_challenge) else {
                return actions;
            };
            let mut probe = SdMessage::default();
            probe.push_entry(entry, own.clone(), vec![]);
            let ctx = NonceContext {
                signer: self.name.clone(),
                digest: binding_digest(&probe, &probe.entries[0]),
            };
            let Ok(signature) = self.crypto(CryptoOp::Sign, &mut actions, || {
                sign_nonce(&key, Nonce(nonce), &ctx)
            }) else {
                return actions;
            };
            let response = SecurityOption::Response(crate::wire::AuthResponse {
                nonce,
                signer: self.name.to_string(),
                signature,
            });
            msg.push_entry(entry, own, vec![security_option(&[response])]);
        } else {
            msg.push_entry(entry, own, vec![]);
        }
        actions.push(Action::Send {
            to: Destination::Unicast(peer.endpoint),
            message: msg,
        });
        self.drop_session();
        self.peer = None;
        actions.push(Action::TornDown {
            peer_endpoint: peer.endpoint,
        });
        actions
    }
}
