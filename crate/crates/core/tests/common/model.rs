//! Bounded exhaustive exploration of one publisher and one subscriber under
//! an active network attacker.
//!
//! Every step picks one move: start a party, deliver or drop the head of a
//! channel, answer a pending DNS query, fire a pending timer, or inject an
//! attacker message (replays, a spoofed offer, an ack re-signed with an
//! insider key, a Subscribe from the insider). States are deduplicated by a
//! digest of their full contents, so a rejected injection that leaves both
//! machines unchanged is explored once.

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, VecDeque};
use std::hash::{Hash, Hasher};
use std::net::Ipv4Addr;

use sd_dane::crypto::{sign_nonce, KeyPair, Nonce, NonceContext};
use sd_dane::discovery::{
    binding_digest, Action, ClientPhase, Destination, DnsReply, Event, Micros, PublisherFsm,
    SubscriberFsm, Timer, Variant, MILLIS,
};
use sd_dane::dnssec::RrType;
use sd_dane::records::DnsName;
use sd_dane::wire::{
    decode_message, encode_message, security_option, AuthResponse, EntryKind, Ipv4Endpoint,
    SdMessage, SdOption, SecurityOption,
};

use super::{Pair, NOW};

/// Model time of every step. Nothing in a depth-bounded trace lives long
/// enough to expire, and a single instant lets independent steps commute.
const MODEL_TIME: Micros = 50 * MILLIS;
/// Pending timers kept per party.
const TIMER_CAP: usize = 2;
/// Attacker injections per trace.
const INJECTION_BUDGET: u8 = 2;
/// Dropped messages per trace.
const DROP_BUDGET: u8 = 1;

const PUB: usize = 0;
const SUB: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Move {
    Start(usize),
    Deliver(usize),
    Drop(usize),
    Dns(usize),
    Fire(usize),
    ReplayOffer,
    ReplaySubscribe,
    ReplayAck,
    SpoofOffer,
    ForgeAck,
    InsiderSubscribe,
}

impl Move {
    /// The party whose local state alone this move touches. Drops and
    /// injections share budgets and attacker knowledge, so they have none.
    fn local_party(self) -> Option<usize> {
        match self {
            Move::Start(p) | Move::Deliver(p) | Move::Dns(p) | Move::Fire(p) => Some(p),
            _ => None,
        }
    }

    /// Local moves of different parties commute: each pops only from its
    /// own queues and appends only to the back of the other's inbox.
    fn independent(self, other: Move) -> bool {
        matches!((self.local_party(), other.local_party()), (Some(a), Some(b)) if a != b)
    }
}

/// Set of move indices into [`MOVES`].
type MoveSet = u32;

const MOVES: [Move; 16] = [
    Move::Start(PUB),
    Move::Start(SUB),
    Move::Deliver(PUB),
    Move::Deliver(SUB),
    Move::Drop(PUB),
    Move::Drop(SUB),
    Move::Dns(PUB),
    Move::Dns(SUB),
    Move::Fire(PUB),
    Move::Fire(SUB),
    Move::ReplayOffer,
    Move::ReplaySubscribe,
    Move::ReplayAck,
    Move::SpoofOffer,
    Move::ForgeAck,
    Move::InsiderSubscribe,
];

/// Fixed identities of the explored system.
struct Cast {
    publisher_name: DnsName,
    subscriber_name: DnsName,
    insider_name: DnsName,
    insider_key: KeyPair,
    publisher_ep: Ipv4Endpoint,
    subscriber_ep: Ipv4Endpoint,
    rogue_ep: Ipv4Endpoint,
}

#[derive(Debug, Clone)]
struct State {
    publisher: PublisherFsm,
    subscriber: SubscriberFsm,
    started: [bool; 2],
    /// Inbound channel per party: (source, message).
    inbox: [VecDeque<(Ipv4Endpoint, SdMessage)>; 2],
    queries: [VecDeque<(DnsName, RrType)>; 2],
    timers: [VecDeque<Timer>; 2],
    last_offer: Option<SdMessage>,
    last_subscribe: Option<SdMessage>,
    last_ack: Option<SdMessage>,
    /// Ghost: endpoints the publisher has authenticated a subscriber at.
    authenticated: Vec<Ipv4Endpoint>,
    injections: u8,
    drops: u8,
}

impl State {
    fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        format!("{self:?}").hash(&mut h);
        h.finish()
    }
}

/// Outcome of an exploration.
#[derive(Debug, Clone, Default)]
pub struct ModelReport {
    pub variant: Option<Variant>,
    pub depth: usize,
    pub transitions: u64,
    pub distinct_states: usize,
    /// States where the subscriber held the session and group keys.
    pub keyed_states: u64,
    pub violations: Vec<String>,
}

impl ModelReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.keyed_states > 0
    }
}

pub struct Explorer<'a> {
    pair: &'a Pair,
    variant: Variant,
    cast: Cast,
    depth: usize,
    /// (remaining depth, sleep set) each state has been explored with.
    seen: HashMap<u64, Vec<(usize, MoveSet)>>,
    /// Answers are fixed for the single model instant.
    answers: HashMap<(DnsName, RrType), DnsReply>,
    report: ModelReport,
}

impl<'a> Explorer<'a> {
    pub fn new(pair: &'a Pair, variant: Variant, depth: usize) -> Self {
        let cast = Cast {
            publisher_name: pair.publisher_name(),
            subscriber_name: pair.subscriber_name(),
            insider_name: pair.insider_name(),
            insider_key: pair.keys[&pair.insider_name()].clone(),
            publisher_ep: pair.plan.publishers[0].endpoint,
            subscriber_ep: pair.subscriber(variant).endpoint,
            rogue_ep: Ipv4Endpoint::udp(
                Ipv4Addr::new(10, 0, 254, 66),
                pair.plan.publishers[0].endpoint.port,
            ),
        };
        let report = ModelReport {
            variant: Some(variant),
            depth,
            ..ModelReport::default()
        };
        Explorer {
            pair,
            variant,
            cast,
            depth,
            seen: HashMap::new(),
            answers: HashMap::new(),
            report,
        }
    }

    pub fn run(mut self) -> ModelReport {
        let variant = self.variant;
        let mut publisher = self.pair.publisher(variant);
        let mut subscriber = self.pair.subscriber(variant);
        if variant == Variant::Dnssec {
            // Everything comes from DNS; this also keeps state digests small.
            publisher.certificates = Default::default();
            subscriber.certificates = Default::default();
        }
        let state = State {
            publisher: PublisherFsm::new(publisher),
            subscriber: SubscriberFsm::new(subscriber),
            started: [false; 2],
            inbox: Default::default(),
            queries: Default::default(),
            timers: Default::default(),
            last_offer: None,
            last_subscribe: None,
            last_ack: None,
            authenticated: Vec::new(),
            injections: 0,
            drops: 0,
        };
        self.explore(state, 0, 0);
        self.report.distinct_states = self.seen.len();
        self.report
    }

    /// Depth-first search with sleep sets: after exploring move `t` from a
    /// state, `t` is put to sleep in the siblings explored later and stays
    /// asleep below them while only independent moves are taken, because
    /// that interleaving was already covered. A cached state is skipped if it
    /// was explored with at least as much depth left and a sleep set no
    /// larger than the current one.
    fn explore(&mut self, state: State, level: usize, mut sleep: MoveSet) {
        let remaining = self.depth - level;
        let digest = state.digest();
        let entries = self.seen.entry(digest).or_default();
        if entries
            .iter()
            .any(|&(r, z)| r >= remaining && z & !sleep == 0)
        {
            return;
        }
        entries.push((remaining, sleep));
        if remaining == 0 || self.report.violations.len() >= 8 {
            return;
        }
        let now = MODEL_TIME;
        for (idx, mv) in MOVES.iter().copied().enumerate() {
            if sleep & (1 << idx) != 0 {
                continue;
            }
            let child_sleep = MOVES
                .iter()
                .enumerate()
                .filter(|&(j, &u)| sleep & (1 << j) != 0 && u.independent(mv))
                .fold(0, |acc, (j, _)| acc | (1 << j));
            sleep |= 1 << idx;
            let mut next = state.clone();
            let before = self.report.violations.len();
            if !self.apply(&mut next, mv, now) {
                continue;
            }
            self.report.transitions += 1;
            if self.report.violations.len() > before {
                continue;
            }
            if let Some(v) = self.check(&next) {
                self.report
                    .violations
                    .push(format!("after {mv:?} at depth {}: {v}", level + 1));
                continue;
            }
            if next.subscriber.session_key().is_some() && next.subscriber.group_key().is_some() {
                self.report.keyed_states += 1;
            }
            self.explore(next, level + 1, child_sleep);
        }
    }

    /// Performs `mv`; false if it is not enabled in `s`.
    fn apply(&mut self, s: &mut State, mv: Move, now: Micros) -> bool {
        let injection = !matches!(
            mv,
            Move::Start(_) | Move::Deliver(_) | Move::Drop(_) | Move::Dns(_) | Move::Fire(_)
        );
        if injection {
            if s.injections >= INJECTION_BUDGET {
                return false;
            }
            s.injections += 1;
        }
        match mv {
            Move::Start(p) => {
                if s.started[p] {
                    return false;
                }
                s.started[p] = true;
                self.step(s, p, Event::Start, now);
            }
            Move::Deliver(p) => {
                let Some((from, message)) = s.inbox[p].pop_front() else {
                    return false;
                };
                self.step(s, p, Event::Message { from, message }, now);
            }
            Move::Drop(p) => {
                if s.drops >= DROP_BUDGET || s.inbox[p].pop_front().is_none() {
                    return false;
                }
                s.drops += 1;
            }
            Move::Dns(p) => {
                let Some((name, rtype)) = s.queries[p].pop_front() else {
                    return false;
                };
                let resolver = &self.pair.resolver;
                let reply = self
                    .answers
                    .entry((name.clone(), rtype))
                    .or_insert_with(|| match resolver.resolve(&name, rtype, NOW) {
                        Ok(r) => DnsReply::from(r),
                        Err(_) => DnsReply::failure(name, rtype),
                    })
                    .clone();
                self.step(s, p, Event::DnsResult(reply), now);
            }
            Move::Fire(p) => {
                let Some(timer) = s.timers[p].pop_front() else {
                    return false;
                };
                self.step(s, p, Event::Timer(timer), now);
            }
            Move::ReplayOffer => {
                let Some(m) = s.last_offer.clone() else {
                    return false;
                };
                self.step(
                    s,
                    SUB,
                    Event::Message {
                        from: self.cast.publisher_ep,
                        message: m,
                    },
                    now,
                );
            }
            Move::ReplaySubscribe => {
                let Some(m) = s.last_subscribe.clone() else {
                    return false;
                };
                self.step(
                    s,
                    PUB,
                    Event::Message {
                        from: self.cast.subscriber_ep,
                        message: m,
                    },
                    now,
                );
            }
            Move::ReplayAck => {
                let Some(m) = s.last_ack.clone() else {
                    return false;
                };
                self.step(
                    s,
                    SUB,
                    Event::Message {
                        from: self.cast.publisher_ep,
                        message: m,
                    },
                    now,
                );
            }
            Move::SpoofOffer => {
                let Some(mut m) = s.last_offer.clone() else {
                    return false;
                };
                set_endpoint(&mut m, self.cast.rogue_ep);
                self.step(
                    s,
                    SUB,
                    Event::Message {
                        from: self.cast.rogue_ep,
                        message: m,
                    },
                    now,
                );
            }
            Move::ForgeAck => {
                let (Some(mut m), Some(sub)) = (s.last_ack.clone(), s.last_subscribe.as_ref())
                else {
                    return false;
                };
                let Some(nonce) = challenge_of(sub) else {
                    return false;
                };
                resign(
                    &mut m,
                    nonce,
                    &self.cast.insider_name,
                    &self.cast.insider_key,
                );
                self.step(
                    s,
                    SUB,
                    Event::Message {
                        from: self.cast.publisher_ep,
                        message: m,
                    },
                    now,
                );
            }
            Move::InsiderSubscribe => {
                let (Some(mut m), Some(offer)) = (s.last_subscribe.clone(), s.last_offer.as_ref())
                else {
                    return false;
                };
                let Some(nonce) = challenge_of(offer) else {
                    return false;
                };
                set_endpoint(&mut m, self.cast.rogue_ep);
                resign(
                    &mut m,
                    nonce,
                    &self.cast.insider_name,
                    &self.cast.insider_key,
                );
                self.step(
                    s,
                    PUB,
                    Event::Message {
                        from: self.cast.rogue_ep,
                        message: m,
                    },
                    now,
                );
            }
        }
        true
    }

    fn step(&mut self, s: &mut State, party: usize, event: Event, now: Micros) {
        let actions = if party == PUB {
            let a = s.publisher.step(event, now);
            s.publisher.take_timings();
            a
        } else {
            let a = s.subscriber.step(event, now);
            s.subscriber.take_timings();
            a
        };
        let mut keyed_to = Vec::new();
        for action in actions {
            match action {
                Action::Send { to, message } => {
                    if party == PUB && carries_session_key(&message) {
                        keyed_to.push(to);
                    }
                    self.send(s, party, to, message)
                }
                Action::Query { name, rtype } => s.queries[party].push_back((name, rtype)),
                Action::SetTimer { timer, .. } => {
                    if !s.timers[party].contains(&timer) {
                        s.timers[party].push_back(timer);
                        while s.timers[party].len() > TIMER_CAP {
                            s.timers[party].pop_front();
                        }
                    }
                }
                Action::Established(e) => {
                    let dnssec = self.variant == Variant::Dnssec;
                    if party == PUB {
                        let authorized =
                            !dnssec || e.peer.as_ref() == Some(&self.cast.subscriber_name);
                        if e.secure && authorized {
                            s.authenticated.push(e.peer_endpoint);
                        } else {
                            self.report
                                .violations
                                .push(format!("publisher established with {:?}", e.peer));
                        }
                    } else if e.peer.as_ref() != Some(&self.cast.publisher_name)
                        || (dnssec && e.peer_endpoint != self.cast.publisher_ep)
                        || !e.secure
                    {
                        self.report
                            .violations
                            .push(format!("subscriber established with {e:?}"));
                    }
                }
                _ => {}
            }
        }
        // Keys go out in the same step the publisher establishes, so this is
        // checked once the whole step is applied.
        for to in keyed_to {
            let authenticated =
                matches!(to, Destination::Unicast(ep) if s.authenticated.contains(&ep));
            if !authenticated {
                self.report
                    .violations
                    .push(format!("session key sent to {to:?} before authentication"));
            }
        }
    }

    fn send(&mut self, s: &mut State, party: usize, to: Destination, message: SdMessage) {
        let bytes = encode_message(&message).expect("machines emit encodable messages");
        let message = decode_message(&bytes).expect("and decodable ones");
        let kinds: Vec<EntryKind> = message.entries.iter().map(|e| e.kind()).collect();
        if kinds.contains(&EntryKind::Offer) {
            s.last_offer = Some(message.clone());
        }
        if kinds.contains(&EntryKind::Subscribe) {
            s.last_subscribe = Some(message.clone());
        }
        if kinds.contains(&EntryKind::SubscribeAck) {
            s.last_ack = Some(message.clone());
        }
        let (target, target_ep, source) = if party == PUB {
            (SUB, self.cast.subscriber_ep, self.cast.publisher_ep)
        } else {
            (PUB, self.cast.publisher_ep, self.cast.subscriber_ep)
        };
        let reaches = match to {
            Destination::Multicast => true,
            Destination::Unicast(ep) => {
                ep.address == target_ep.address && ep.port == target_ep.port
            }
        };
        if reaches {
            s.inbox[target].push_back((source, message));
        }
    }

    /// Safety invariants over a reached state.
    fn check(&self, s: &State) -> Option<String> {
        let keyed = s.subscriber.session_key().is_some() || s.subscriber.group_key().is_some();
        let mutual =
            s.subscriber.publisher_verified() && s.authenticated.contains(&self.cast.subscriber_ep);
        if keyed && !mutual {
            return Some("subscriber holds key material before mutual authentication".into());
        }
        if self.variant != Variant::Dnssec {
            return None;
        }
        // Endpoint binding and name authorization come from DNS.
        if s.subscriber
            .peer_endpoint()
            .is_some_and(|ep| ep != self.cast.publisher_ep)
        {
            return Some(format!(
                "subscriber bound to {:?}",
                s.subscriber.peer_endpoint()
            ));
        }
        if s.publisher.client_phase(&self.cast.insider_name) == Some(ClientPhase::Subscribed) {
            return Some("insider subscribed".into());
        }
        None
    }
}

fn carries_session_key(message: &SdMessage) -> bool {
    message.entries.iter().any(|e| {
        message.security_of(e).is_ok_and(|opts| {
            opts.iter()
                .any(|o| matches!(o, SecurityOption::SessionKey(_)))
        })
    })
}

fn challenge_of(message: &SdMessage) -> Option<u32> {
    let entry = message.entries.first()?;
    message.security_of(entry).ok()?.into_iter().find_map(|o| {
        if let SecurityOption::Challenge(c) = o {
            Some(c)
        } else {
            None
        }
    })
}

fn set_endpoint(message: &mut SdMessage, endpoint: Ipv4Endpoint) {
    for o in message.options.iter_mut() {
        if let SdOption::Ipv4Endpoint(ep) = o {
            *ep = endpoint;
        }
    }
}

/// Replaces the Response of the first entry with one over `nonce` signed
/// by `key` as `signer`.
fn resign(message: &mut SdMessage, nonce: u32, signer: &DnsName, key: &KeyPair) {
    let Some(entry) = message.entries.first().copied() else {
        return;
    };
    let ctx = NonceContext {
        signer: signer.clone(),
        digest: binding_digest(message, &entry),
    };
    let Ok(signature) = sign_nonce(key, Nonce(nonce), &ctx) else {
        return;
    };
    let Ok(mut opts) = message.security_of(&entry) else {
        return;
    };
    let Some(idx) = entry
        .option_indices()
        .find(|&i| matches!(message.options[i], SdOption::Configuration(_)))
    else {
        return;
    };
    opts.retain(|o| !matches!(o, SecurityOption::Response(_)));
    opts.insert(
        0,
        SecurityOption::Response(AuthResponse {
            nonce,
            signer: signer.to_string(),
            signature,
        }),
    );
    message.options[idx] = security_option(&opts);
}
