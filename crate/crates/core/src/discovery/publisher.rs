use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv4Addr;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{
    authorize_client_name, binding_digest, certificates_from_tlsa, Action, Authorization,
    AuthorizationPolicy, Cause, CertificateStore, Destination, DnsReply, Established, Event,
    MessageBuilder, Micros, SecurityMode, Timer, Timing, Variant, DEFAULT_KA_GROUP, MAX_CHALLENGES,
    MAX_PENDING_SUBSCRIBES, SECONDS,
};
use crate::crypto::{
    derive_session_key, ka_generate, ka_shared, sign_nonce, timed, verify_nonce_with,
    wrap_group_key, Certificate, CryptoOp, GroupKey, KaGroup, KeyPair, Nonce, NonceContext,
    SessionKey, Transcript,
};
use crate::dnssec::RrType;
use crate::records::{publisher_tlsa_name, DnsName, ServiceKey};
use crate::wire::{
    security_option, AuthResponse, EntryKind, EntryType, Ipv4Endpoint, SdEntry, SdMessage,
    SdOption, SecurityOption,
};

/// Static configuration of one publisher.
#[derive(Debug, Clone)]
pub struct PublisherConfig {
    pub service: ServiceKey,
    /// Unicast endpoint the service is offered on.
    pub endpoint: Ipv4Endpoint,
    /// Multicast group for the eventgroup, announced in acknowledgments.
    pub multicast: Option<Ipv4Endpoint>,
    pub eventgroup: u16,
    pub variant: Variant,
    pub mode: SecurityMode,
    pub key: Option<KeyPair>,
    pub policy: AuthorizationPolicy,
    /// Client certificates for the pre-deployed variant. Being listed is
    /// what authorizes a client there.
    pub certificates: CertificateStore,
    pub timing: Timing,
    pub ka_group: KaGroup,
    pub seed: u64,
}

impl PublisherConfig {
    pub fn new(service: ServiceKey, endpoint: Ipv4Endpoint, variant: Variant) -> Self {
        PublisherConfig {
            service,
            endpoint,
            multicast: None,
            eventgroup: 1,
            variant,
            mode: SecurityMode::Secure,
            key: None,
            policy: AuthorizationPolicy::default(),
            certificates: CertificateStore::default(),
            timing: Timing::default(),
            ka_group: DEFAULT_KA_GROUP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClientPhase {
    /// Subscribe received; waiting for the client's TLSA record.
    AwaitingTlsa,
    Subscribed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct EndpointKey(Ipv4Addr, u16, u8);

impl From<Ipv4Endpoint> for EndpointKey {
    fn from(ep: Ipv4Endpoint) -> Self {
        EndpointKey(ep.address, ep.port, ep.protocol)
    }
}

#[derive(Debug, Clone)]
struct Client {
    name: Option<DnsName>,
    endpoint: Ipv4Endpoint,
    session: Option<SessionKey>,
    /// Latest challenge from this client; StopOffers answer it.
    challenge: Option<Nonce>,
    expires: Micros,
}

#[derive(Debug, Clone)]
struct Issued {
    nonce: u32,
    at: Micros,
    answered: BTreeSet<DnsName>,
    /// Clients that answered this nonce in a StopSubscribe. Kept apart from
    /// `answered` because the binding digest already separates the two.
    stopped: BTreeSet<DnsName>,
}

#[derive(Debug, Clone)]
enum ClientCerts {
    Pending,
    /// Empty when the TLSA answer was not secure data.
    Done(Vec<Certificate>),
}

#[derive(Debug, Clone)]
struct Pending {
    name: DnsName,
    from: Ipv4Endpoint,
    message: SdMessage,
    entry: SdEntry,
}

/// Publisher side of discovery and subscription for one service.
#[derive(Debug, Clone)]
pub struct PublisherFsm {
    cfg: PublisherConfig,
    name: DnsName,
    rng: ChaCha20Rng,
    builder: MessageBuilder,
    started: bool,
    stopped: bool,
    issued: VecDeque<Issued>,
    clients: BTreeMap<EndpointKey, Client>,
    client_certs: BTreeMap<DnsName, ClientCerts>,
    pending: VecDeque<Pending>,
    group: Option<GroupKey>,
    timings: Vec<(CryptoOp, Duration)>,
}

struct ParsedSubscribe {
    endpoint: Ipv4Endpoint,
    response: AuthResponse,
    name: DnsName,
    challenge: u32,
    share: crate::wire::KeyShare,
}

impl PublisherFsm {
    pub fn new(cfg: PublisherConfig) -> Self {
        let name = publisher_tlsa_name(&cfg.service, cfg.endpoint.port)
            .expect("service key yields a valid name");
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let group = (cfg.variant.is_secure() && cfg.multicast.is_some())
            .then(|| GroupKey::generate(&mut rng));
        PublisherFsm {
            cfg,
            name,
            rng,
            builder: MessageBuilder::default(),
            started: false,
            stopped: false,
            issued: VecDeque::new(),
            clients: BTreeMap::new(),
            client_certs: BTreeMap::new(),
            pending: VecDeque::new(),
            group,
            timings: Vec::new(),
        }
    }

    pub fn config(&self) -> &PublisherConfig {
        &self.cfg
    }

    /// Name of the publisher's TLSA record, which is also its signer name.
    pub fn name(&self) -> &DnsName {
        &self.name
    }

    pub fn group_key(&self) -> Option<&GroupKey> {
        self.group.as_ref()
    }

    /// Phase of the client with this name, if any.
    pub fn client_phase(&self, name: &DnsName) -> Option<ClientPhase> {
        if self.clients.values().any(|c| c.name.as_ref() == Some(name)) {
            Some(ClientPhase::Subscribed)
        } else if self.pending.iter().any(|p| p.name == *name) {
            Some(ClientPhase::AwaitingTlsa)
        } else {
            None
        }
    }

    /// Subscribed client endpoints with their authenticated names.
    pub fn subscribers(&self) -> impl Iterator<Item = (Ipv4Endpoint, Option<&DnsName>)> + '_ {
        self.clients.values().map(|c| (c.endpoint, c.name.as_ref()))
    }

    pub fn subscriber_count(&self) -> usize {
        self.clients.len()
    }

    /// Outstanding offer challenges.
    pub fn challenges(&self) -> impl Iterator<Item = u32> + '_ {
        self.issued.iter().map(|i| i.nonce)
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    pub fn take_timings(&mut self) -> Vec<(CryptoOp, Duration)> {
        std::mem::take(&mut self.timings)
    }

    pub fn set_key(&mut self, key: KeyPair) {
        self.cfg.key = Some(key);
    }

    /// Drops cached client certificates so that the next Subscribe from each
    /// client triggers a fresh TLSA query.
    pub fn forget_certificates(&mut self) {
        self.client_certs
            .retain(|_, c| matches!(c, ClientCerts::Pending));
    }

    fn crypto<T>(&mut self, op: CryptoOp, actions: &mut Vec<Action>, f: impl FnOnce() -> T) -> T {
        let (out, elapsed) = timed(f);
        self.timings.push((op, elapsed));
        actions.push(Action::Crypto(op));
        out
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
            Event::Start => {
                if !self.started {
                    self.started = true;
                    self.stopped = false;
                    self.send_offer(Destination::Multicast, true, now, &mut actions);
                    self.schedule_after(0, &mut actions);
                }
            }
            Event::Timer(timer) => self.on_timer(timer, now, &mut actions),
            Event::DnsResult(reply) => self.on_dns(reply, now, &mut actions),
            Event::Message { from, message } => {
                if !self.started || self.stopped {
                    return actions;
                }
                for entry in message.entries.clone() {
                    if !self.matches_service(&entry) {
                        continue;
                    }
                    match entry.kind() {
                        EntryKind::Find => {
                            self.send_offer(Destination::Unicast(from), false, now, &mut actions)
                        }
                        EntryKind::Subscribe if entry.eventgroup() == self.cfg.eventgroup => {
                            self.on_subscribe(from, &message, &entry, now, &mut actions)
                        }
                        EntryKind::StopSubscribe if entry.eventgroup() == self.cfg.eventgroup => {
                            self.on_stop_subscribe(&message, &entry, now, &mut actions)
                        }
                        _ => {}
                    }
                }
            }
        }
        actions
    }

    /// Schedules the timer that follows offer repetition `k` (0 is the
    /// initial offer).
    fn schedule_after(&self, k: u32, actions: &mut Vec<Action>) {
        let t = &self.cfg.timing;
        if k < t.repetitions {
            actions.push(Action::SetTimer {
                timer: Timer::OfferRepetition(k + 1),
                after: t.repetition_delay(k + 1),
            });
        } else {
            actions.push(Action::SetTimer {
                timer: Timer::CyclicOffer,
                after: t.cyclic_offer,
            });
        }
    }

    fn on_timer(&mut self, timer: Timer, now: Micros, actions: &mut Vec<Action>) {
        if !self.started || self.stopped {
            return;
        }
        match timer {
            Timer::OfferRepetition(k) if k <= self.cfg.timing.repetitions => {
                self.send_offer(Destination::Multicast, true, now, actions);
                self.schedule_after(k, actions);
            }
            Timer::CyclicOffer => {
                self.expire_clients(now, actions);
                self.send_offer(Destination::Multicast, true, now, actions);
                self.schedule_after(self.cfg.timing.repetitions, actions);
            }
            _ => {}
        }
    }

    fn expire_clients(&mut self, now: Micros, actions: &mut Vec<Action>) {
        let expired: Vec<EndpointKey> = self
            .clients
            .iter()
            .filter(|(_, c)| c.expires <= now)
            .map(|(k, _)| *k)
            .collect();
        for key in expired {
            if let Some(client) = self.clients.remove(&key) {
                actions.push(Action::TornDown {
                    peer_endpoint: client.endpoint,
                });
            }
        }
    }

    fn issue_nonce(&mut self, now: Micros) -> u32 {
        let nonce = Nonce::random(&mut self.rng).0;
        if self.issued.len() == MAX_CHALLENGES {
            self.issued.pop_front();
        }
        self.issued.push_back(Issued {
            nonce,
            at: now,
            answered: BTreeSet::new(),
            stopped: BTreeSet::new(),
        });
        nonce
    }

    /// The challenge offers carry until the next multicast cycle.
    fn current_nonce(&mut self, now: Micros) -> u32 {
        match self.issued.back() {
            Some(i) if now < i.at + self.cfg.timing.nonce_lifetime => i.nonce,
            _ => self.issue_nonce(now),
        }
    }

    fn send_offer(&mut self, to: Destination, fresh: bool, now: Micros, actions: &mut Vec<Action>) {
        let s = &self.cfg.service;
        let entry = SdEntry::new(
            EntryType::Offer,
            s.service_id,
            s.instance_id,
            s.major,
            self.cfg.timing.entry_ttl,
            s.minor,
        );
        let endpoint = vec![SdOption::Ipv4Endpoint(self.cfg.endpoint)];
        let mut msg = self.builder.message(self.cfg.service.service_id);
        if self.cfg.variant.is_secure() {
            let nonce = if fresh {
                self.issue_nonce(now)
            } else {
                self.current_nonce(now)
            };
            msg.push_entry(
                entry,
                endpoint,
                vec![security_option(&[SecurityOption::Challenge(nonce)])],
            );
        } else {
            msg.push_entry(entry, endpoint, vec![]);
        }
        actions.push(Action::Send { to, message: msg });
    }

    /// Checks that `nonce` was issued and can still be answered by `name`.
    /// Subscribes must arrive within the nonce lifetime; stops may answer
    /// any retained nonce.
    fn nonce_fresh(&self, nonce: u32, name: &DnsName, now: Micros, stop: bool) -> bool {
        let lifetime = self.cfg.timing.nonce_lifetime;
        self.issued.iter().any(|i| {
            i.nonce == nonce
                && if stop {
                    !i.stopped.contains(name)
                } else {
                    !i.answered.contains(name) && now <= i.at + lifetime
                }
        })
    }

    fn mark_answered(&mut self, nonce: u32, name: &DnsName, stop: bool) {
        if let Some(i) = self.issued.iter_mut().find(|i| i.nonce == nonce) {
            if stop {
                &mut i.stopped
            } else {
                &mut i.answered
            }
            .insert(name.clone());
        }
    }

    fn parse_subscribe(
        &self,
        message: &SdMessage,
        entry: &SdEntry,
    ) -> Result<ParsedSubscribe, Cause> {
        let endpoint = message.endpoint_of(entry).ok_or(Cause::MissingSecurity)?;
        let security = message
            .security_of(entry)
            .map_err(|_| Cause::MissingSecurity)?;
        let mut response = None;
        let mut challenge = None;
        let mut share = None;
        for option in security {
            match option {
                SecurityOption::Response(r) => response = Some(r),
                SecurityOption::Challenge(c) => challenge = Some(c),
                SecurityOption::KeyExchange(k) => share = Some(k),
                SecurityOption::SessionKey(_) => {}
            }
        }
        let response = response.ok_or(Cause::MissingSecurity)?;
        let name = DnsName::parse(&response.signer).map_err(|_| Cause::Unauthorized)?;
        Ok(ParsedSubscribe {
            endpoint,
            response,
            name,
            challenge: challenge.ok_or(Cause::MissingSecurity)?,
            share: share.ok_or(Cause::MissingSecurity)?,
        })
    }

    fn authorized(&self, name: &DnsName) -> bool {
        match self.cfg.variant {
            Variant::Vanilla => true,
            Variant::PreDeployed => self.cfg.certificates.contains_key(name),
            Variant::Dnssec => {
                matches!(
                    authorize_client_name(name, &self.cfg.service, &self.cfg.policy),
                    Authorization::Authorized(_)
                )
            }
        }
    }

    /// Certificates for `name`: `Ok(None)` while the TLSA query is in flight.
    fn certificates_for(
        &mut self,
        name: &DnsName,
        actions: &mut Vec<Action>,
    ) -> Result<Option<Vec<Certificate>>, Cause> {
        if self.cfg.variant == Variant::PreDeployed {
            return self
                .cfg
                .certificates
                .get(name)
                .cloned()
                .map(Some)
                .ok_or(Cause::Unauthorized);
        }
        match self.client_certs.get(name) {
            Some(ClientCerts::Done(certs)) if certs.is_empty() => Err(Cause::InsecureTlsa),
            Some(ClientCerts::Done(certs)) => Ok(Some(certs.clone())),
            Some(ClientCerts::Pending) => Ok(None),
            None => {
                self.client_certs.insert(name.clone(), ClientCerts::Pending);
                actions.push(Action::Query {
                    name: name.clone(),
                    rtype: RrType::Tlsa,
                });
                Ok(None)
            }
        }
    }

    fn on_subscribe(
        &mut self,
        from: Ipv4Endpoint,
        message: &SdMessage,
        entry: &SdEntry,
        now: Micros,
        actions: &mut Vec<Action>,
    ) {
        if !self.cfg.variant.is_secure() {
            let Some(endpoint) = message.endpoint_of(entry) else {
                actions.push(Action::Rejected {
                    cause: Cause::MissingSecurity,
                    peer: Some(from.to_string()),
                });
                return;
            };
            self.acknowledge(endpoint, None, None, actions, now);
            return;
        }
        let parsed = match self.parse_subscribe(message, entry) {
            Ok(p) => p,
            Err(cause) => {
                actions.push(Action::Rejected {
                    cause,
                    peer: Some(from.to_string()),
                });
                return;
            }
        };
        let peer = Some(parsed.name.to_string());
        if !self.authorized(&parsed.name) {
            actions.push(Action::Rejected {
                cause: Cause::Unauthorized,
                peer,
            });
            return;
        }
        if !self.nonce_fresh(parsed.response.nonce, &parsed.name, now, false) {
            actions.push(Action::Rejected {
                cause: Cause::StaleNonce,
                peer,
            });
            return;
        }
        let certs = match self.certificates_for(&parsed.name, actions) {
            Ok(Some(certs)) => certs,
            Ok(None) => {
                if self.pending.len() == MAX_PENDING_SUBSCRIBES {
                    if let Some(old) = self.pending.pop_front() {
                        actions.push(Action::Rejected {
                            cause: Cause::Evicted,
                            peer: Some(old.name.to_string()),
                        });
                    }
                }
                self.pending.push_back(Pending {
                    name: parsed.name,
                    from,
                    message: message.clone(),
                    entry: *entry,
                });
                return;
            }
            Err(Cause::InsecureTlsa) if self.cfg.mode == SecurityMode::InsecurePermitted => {
                self.acknowledge(parsed.endpoint, None, None, actions, now);
                return;
            }
            Err(cause) => {
                actions.push(Action::Rejected { cause, peer });
                return;
            }
        };
        let ctx = NonceContext {
            signer: parsed.name.clone(),
            digest: binding_digest(message, entry),
        };
        let nonce = Nonce(parsed.response.nonce);
        let signature = parsed.response.signature.clone();
        let ok = self.crypto(CryptoOp::Verify, actions, || {
            certs
                .iter()
                .any(|c| verify_nonce_with(c, nonce, &ctx, &signature))
        });
        if !ok {
            actions.push(Action::Rejected {
                cause: Cause::BadSignature,
                peer,
            });
            return;
        }
        self.mark_answered(parsed.response.nonce, &parsed.name, false);
        self.acknowledge(parsed.endpoint, Some(parsed), Some(nonce), actions, now);
    }

    /// Sends a SubscribeAck and records the client. `parsed` is `None` for
    /// unauthenticated subscriptions.
    fn acknowledge(
        &mut self,
        endpoint: Ipv4Endpoint,
        parsed: Option<ParsedSubscribe>,
        answered: Option<Nonce>,
        actions: &mut Vec<Action>,
        now: Micros,
    ) {
        let s = &self.cfg.service;
        let entry = SdEntry::new(
            EntryType::SubscribeAck,
            s.service_id,
            s.instance_id,
            s.major,
            self.cfg.timing.entry_ttl,
            self.cfg.eventgroup as u32,
        );
        let first: Vec<SdOption> = self
            .cfg
            .multicast
            .map(SdOption::Ipv4Multicast)
            .into_iter()
            .collect();
        let mut msg = self.builder.message(self.cfg.service.service_id);
        let mut session = None;
        let mut challenge = None;
        let name = parsed.as_ref().map(|p| p.name.clone());
        match (parsed, answered) {
            (Some(p), Some(answered)) => {
                let Some(key) = self.cfg.key.clone() else {
                    actions.push(Action::Rejected {
                        cause: Cause::MissingSecurity,
                        peer: name.map(|n| n.to_string()),
                    });
                    return;
                };
                let group_id = self.cfg.ka_group;
                let mut rng = self.rng.clone();
                let (private, share) = self.crypto(CryptoOp::KeyAgreement, actions, || {
                    ka_generate(group_id, &mut rng)
                });
                self.rng = rng;
                let Ok(shared) = self.crypto(CryptoOp::KeyAgreement, actions, || {
                    ka_shared(&private, &p.share)
                }) else {
                    actions.push(Action::Rejected {
                        cause: Cause::MissingSecurity,
                        peer: Some(p.name.to_string()),
                    });
                    return;
                };
                let transcript = Transcript {
                    publisher: self.name.clone(),
                    subscriber: p.name.clone(),
                    publisher_nonce: answered,
                    subscriber_nonce: Nonce(p.challenge),
                };
                let key_session = derive_session_key(&shared, &transcript);
                let mut probe = SdMessage::default();
                probe.push_entry(entry, first.clone(), vec![]);
                let ctx = NonceContext {
                    signer: self.name.clone(),
                    digest: binding_digest(&probe, &probe.entries[0]),
                };
                let Ok(signature) = self.crypto(CryptoOp::Sign, actions, || {
                    sign_nonce(&key, Nonce(p.challenge), &ctx)
                }) else {
                    actions.push(Action::Rejected {
                        cause: Cause::MissingSecurity,
                        peer: Some(p.name.to_string()),
                    });
                    return;
                };
                let mut options = vec![
                    SecurityOption::Response(AuthResponse {
                        nonce: p.challenge,
                        signer: self.name.to_string(),
                        signature,
                    }),
                    SecurityOption::KeyExchange(share),
                ];
                if let Some(group) = self.group.clone() {
                    let mut rng = self.rng.clone();
                    let wrapped = self.crypto(CryptoOp::Wrap, actions, || {
                        wrap_group_key(&key_session, &group, &mut rng)
                    });
                    self.rng = rng;
                    options.push(SecurityOption::SessionKey(wrapped));
                }
                msg.push_entry(entry, first, vec![security_option(&options)]);
                session = Some(key_session);
                challenge = Some(Nonce(p.challenge));
            }
            _ => msg.push_entry(entry, first, vec![]),
        }
        let key = EndpointKey::from(endpoint);
        let fresh = self.clients.get(&key).is_none_or(|c| c.name != name);
        let expires = now + self.cfg.timing.entry_ttl as Micros * SECONDS;
        let secure = session.is_some();
        self.clients.insert(
            key,
            Client {
                name: name.clone(),
                endpoint,
                session,
                challenge,
                expires,
            },
        );
        actions.push(Action::Send {
            to: Destination::Unicast(endpoint),
            message: msg,
        });
        if fresh {
            actions.push(Action::Established(Established {
                peer: name,
                peer_endpoint: endpoint,
                secure,
                epoch: self.group.as_ref().filter(|_| secure).map(|g| g.epoch),
            }));
        }
    }

    fn on_dns(&mut self, reply: DnsReply, now: Micros, actions: &mut Vec<Action>) {
        if reply.rtype != RrType::Tlsa
            || !matches!(
                self.client_certs.get(&reply.name),
                Some(ClientCerts::Pending)
            )
        {
            return;
        }
        let certs = if reply.is_secure_data() {
            certificates_from_tlsa(&reply.records)
        } else {
            Vec::new()
        };
        self.client_certs
            .insert(reply.name.clone(), ClientCerts::Done(certs));
        let (ready, waiting): (VecDeque<Pending>, VecDeque<Pending>) =
            std::mem::take(&mut self.pending)
                .into_iter()
                .partition(|p| p.name == reply.name);
        self.pending = waiting;
        for p in ready {
            self.on_subscribe(p.from, &p.message, &p.entry, now, actions);
        }
    }

    fn on_stop_subscribe(
        &mut self,
        message: &SdMessage,
        entry: &SdEntry,
        now: Micros,
        actions: &mut Vec<Action>,
    ) {
        let Some(endpoint) = message.endpoint_of(entry) else {
            return;
        };
        let key = EndpointKey::from(endpoint);
        let Some(client) = self.clients.get(&key).cloned() else {
            return;
        };
        if self.cfg.variant.is_secure() && client.session.is_some() {
            let response = message.security_of(entry).ok().and_then(|s| {
                s.into_iter().find_map(|o| {
                    if let SecurityOption::Response(r) = o {
                        Some(r)
                    } else {
                        None
                    }
                })
            });
            let peer = client.name.as_ref().map(|n| n.to_string());
            let (Some(response), Some(name)) = (response, client.name.clone()) else {
                actions.push(Action::Rejected {
                    cause: Cause::MissingSecurity,
                    peer,
                });
                return;
            };
            if response.signer != name.as_str() {
                actions.push(Action::Rejected {
                    cause: Cause::UnexpectedSigner,
                    peer,
                });
                return;
            }
            if !self.nonce_fresh(response.nonce, &name, now, true) {
                actions.push(Action::Rejected {
                    cause: Cause::StaleNonce,
                    peer,
                });
                return;
            }
            let certs = match self.certificates_for(&name, actions) {
                Ok(Some(c)) => c,
                _ => {
                    actions.push(Action::Rejected {
                        cause: Cause::InsecureTlsa,
                        peer,
                    });
                    return;
                }
            };
            let ctx = NonceContext {
                signer: name.clone(),
                digest: binding_digest(message, entry),
            };
            let nonce = Nonce(response.nonce);
            let ok = self.crypto(CryptoOp::Verify, actions, || {
                certs
                    .iter()
                    .any(|c| verify_nonce_with(c, nonce, &ctx, &response.signature))
            });
            if !ok {
                actions.push(Action::Rejected {
                    cause: Cause::BadSignature,
                    peer,
                });
                return;
            }
            self.mark_answered(response.nonce, &name, true);
        }
        self.clients.remove(&key);
        actions.push(Action::TornDown {
            peer_endpoint: endpoint,
        });
    }

    /// Withdraws the service. Authenticated subscribers get a unicast
    /// StopOffer answering their latest challenge; a multicast StopOffer
    /// follows for everyone else.
    pub fn stop_offer(&mut self, _now: Micros) -> Vec<Action> {
        let mut actions = Vec::new();
        if !self.started || self.stopped {
            return actions;
        }
        self.stopped = true;
        self.started = false;
        let s = self.cfg.service.clone();
        let entry = SdEntry::new(
            EntryType::Offer,
            s.service_id,
            s.instance_id,
            s.major,
            0,
            s.minor,
        );
        let endpoint = vec![SdOption::Ipv4Endpoint(self.cfg.endpoint)];
        let clients: Vec<Client> = std::mem::take(&mut self.clients).into_values().collect();
        for client in &clients {
            let (Some(challenge), Some(key)) = (client.challenge, self.cfg.key.clone()) else {
                continue;
            };
            let mut probe = SdMessage::default();
            probe.push_entry(entry, endpoint.clone(), vec![]);
            let ctx = NonceContext {
                signer: self.name.clone(),
                digest: binding_digest(&probe, &probe.entries[0]),
            };
            let Ok(signature) = self.crypto(CryptoOp::Sign, &mut actions, || {
                sign_nonce(&key, challenge, &ctx)
            }) else {
                continue;
            };
            let response = SecurityOption::Response(AuthResponse {
                nonce: challenge.0,
                signer: self.name.to_string(),
                signature,
            });
            let mut msg = self.builder.message(s.service_id);
            msg.push_entry(entry, endpoint.clone(), vec![security_option(&[response])]);
            actions.push(Action::Send {
                to: Destination::Unicast(client.endpoint),
                message: msg,
            });
        }
        let mut msg = self.builder.message(s.service_id);
        msg.push_entry(entry, endpoint, vec![]);
        actions.push(Action::Send {
            to: Destination::Multicast,
            message: msg,
        });
        for client in clients {
            actions.push(Action::TornDown {
                peer_endpoint: client.endpoint,
            });
        }
        self.issued.clear();
        self.pending.clear();
        actions
    }

    /// Replaces the group key and distributes it to every authenticated
    /// subscriber except those named in `exclude`, which are dropped.
    pub fn rekey(&mut self, _now: Micros, exclude: &[DnsName]) -> Vec<Action> {
        let mut actions = Vec::new();
        let Some(old) = self.group.clone() else {
            return actions;
        };
        let next = old.rekey(&mut self.rng);
        self.group = Some(next.clone());
        let dropped: Vec<EndpointKey> = self
            .clients
            .iter()
            .filter(|(_, c)| c.name.as_ref().is_some_and(|n| exclude.contains(n)))
            .map(|(k, _)| *k)
            .collect();
        for key in dropped {
            if let Some(c) = self.clients.remove(&key) {
                actions.push(Action::TornDown {
                    peer_endpoint: c.endpoint,
                });
            }
        }
        let s = self.cfg.service.clone();
        let targets: Vec<(Ipv4Endpoint, SessionKey)> = self
            .clients
            .values()
            .filter_map(|c| c.session.clone().map(|k| (c.endpoint, k)))
            .collect();
        for (endpoint, session) in targets {
            let mut rng = self.rng.clone();
            let wrapped = self.crypto(CryptoOp::Wrap, &mut actions, || {
                wrap_group_key(&session, &next, &mut rng)
            });
            self.rng = rng;
            let entry = SdEntry::new(
                EntryType::SubscribeAck,
                s.service_id,
                s.instance_id,
                s.major,
                self.cfg.timing.entry_ttl,
                self.cfg.eventgroup as u32,
            );
            let mut msg = self.builder.message(s.service_id);
            let first: Vec<SdOption> = self
                .cfg
                .multicast
                .map(SdOption::Ipv4Multicast)
                .into_iter()
                .collect();
            msg.push_entry(
                entry,
                first,
                vec![security_option(&[SecurityOption::SessionKey(wrapped)])],
            );
            actions.push(Action::Send {
                to: Destination::Unicast(endpoint),
                message: msg,
            });
        }
        actions
    }
}
