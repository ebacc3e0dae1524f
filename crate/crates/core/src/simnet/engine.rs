//! The event loop: parties, message routing, the DNS model and metrics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::Ipv4Addr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::metrics::{self as m, Failure, Rejection, RunMetrics, Samples};
use super::scenario::{ComputeModel, ScenarioConfig};
use super::{SimError, ADVERSARY_ADDRESS, BASE_TIME, MULTICAST_GROUP, SD_PORT};
use crate::crypto::{Certificate, CryptoOp, KeyPair, KeyUsage};
use crate::discovery::{
    Action, Cause, Destination, DnsReply, Event, Micros, PublisherConfig, PublisherFsm,
    SubscriberConfig, SubscriberFsm, Variant, MILLIS, SECONDS,
};
use crate::dnssec::{Resolver, RrType, ZoneServer};
use crate::records::{client_tlsa_name, publisher_tlsa_name, DnsName};
use crate::wire::{decode_message, encode_message, EntryKind, Ipv4Endpoint, SdMessage};
use crate::zoneforge::{
    build_vehicle_zone, issue_plan, supplier_issue, Oem, Supplier, SupplierBundle, ValidityWindow,
};

/// A message the intruder puts on the wire.
#[derive(Debug, Clone)]
pub struct Injection {
    pub at: Micros,
    pub from: Ipv4Endpoint,
    pub to: Destination,
    pub message: SdMessage,
    /// Set to follow what receivers do with the message.
    pub tag: Option<u32>,
}

/// What happens to an intercepted message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Deliver,
    /// Deliver and report the receivers' reactions under this tag.
    Tagged(u32),
    Block,
}

/// An on-path attacker. It sees every message, can change or block it,
/// receives unicast traffic sent to [`ADVERSARY_ADDRESS`] and can inject
/// messages of its own.
pub trait Intruder {
    /// Called once before a run starts.
    fn start(&mut self, _out: &mut Vec<Injection>) {}

    fn intercept(
        &mut self,
        _now: Micros,
        _from: Ipv4Endpoint,
        _to: &Destination,
        _message: &mut SdMessage,
        _out: &mut Vec<Injection>,
    ) -> Verdict {
        Verdict::Deliver
    }

    fn receive(
        &mut self,
        _now: Micros,
        _from: Ipv4Endpoint,
        _message: &SdMessage,
        _out: &mut Vec<Injection>,
    ) {
    }

    /// Reactions of `party` to a tagged message, including reactions that
    /// waited for a DNS answer.
    fn fate(&mut self, _tag: u32, _party: &str, _now: Micros, _actions: &[Action]) {}
}

/// How one subscriber fared in a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubscriberOutcome {
    pub name: DnsName,
    pub established_at: Option<Micros>,
    pub secure: bool,
    pub peer_endpoint: Option<Ipv4Endpoint>,
    /// The subscription was later torn down.
    pub torn_down: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: RunMetrics,
    pub subscribers: Vec<SubscriberOutcome>,
}

impl RunOutcome {
    pub fn established(&self) -> usize {
        self.subscribers
            .iter()
            .filter(|s| s.established_at.is_some())
            .count()
    }
}

// Parties live for the whole simulation; boxing buys nothing.
#[allow(clippy::large_enum_variant)]
enum Machine {
    Pub(PublisherFsm),
    Sub(SubscriberFsm),
}

struct Party {
    machine: Machine,
    label: String,
    node: usize,
    endpoint: Ipv4Endpoint,
    service_id: u16,
    started_at: Option<Micros>,
    busy_until: Micros,
    /// Publisher index for subscribers.
    target: Option<usize>,
}

impl Party {
    fn step(&mut self, event: Event, now: Micros) -> Vec<Action> {
        match &mut self.machine {
            Machine::Pub(p) => p.step(event, now),
            Machine::Sub(s) => s.step(event, now),
        }
    }

    fn take_timings(&mut self) -> Vec<(CryptoOp, std::time::Duration)> {
        match &mut self.machine {
            Machine::Pub(p) => p.take_timings(),
            Machine::Sub(s) => s.take_timings(),
        }
    }

    fn is_publisher(&self) -> bool {
        matches!(self.machine, Machine::Pub(_))
    }
}

enum Item {
    Deliver {
        to: usize,
        event: Event,
        tag: Option<u32>,
    },
    Inject(Injection),
}

fn crypto_row(op: CryptoOp) -> &'static str {
    match op {
        CryptoOp::Sign => m::CREATE_SIGNATURE,
        CryptoOp::Verify => m::VERIFY_SIGNATURE,
        CryptoOp::KeyAgreement => m::KEY_AGREEMENT,
        CryptoOp::Wrap => "wrap_group_key_ms",
        CryptoOp::Unwrap => "unwrap_group_key_ms",
    }
}

fn ms(us: Micros) -> f64 {
    us as f64 / MILLIS as f64
}

/// A simulated vehicle: credentials, the signed zone, the resolver and the
/// scenario. Each [`Sim::run`] starts fresh state machines; the zone, the
/// resolver cache and the virtual wall clock carry over between runs.
pub struct Sim {
    cfg: ScenarioConfig,
    oem: Oem,
    supplier: Supplier,
    rng: ChaCha20Rng,
    bundles: Vec<SupplierBundle>,
    keys: BTreeMap<DnsName, KeyPair>,
    certs: BTreeMap<DnsName, Vec<Certificate>>,
    server: ZoneServer,
    resolver: Arc<Resolver>,
    clock: u64,
    runs_done: u64,
    subscriber_limit: Option<usize>,
}

impl std::fmt::Debug for Sim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sim")
            .field("variant", &self.cfg.variant)
            .field("clock", &self.clock)
            .finish()
    }
}

impl Sim {
    /// Issues credentials for every planned identity and signs the zone.
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x5eed_f02e);
        let window = ValidityWindow::days(BASE_TIME - 10, 365)?;
        let mut supplier = Supplier::generate("tier1", cfg.scheme, &mut rng);
        let (bundles, keys) = issue_plan(&cfg.plan, &mut supplier, window, cfg.scheme, &mut rng)?;
        let oem = Oem::generate(cfg.scheme, &mut rng);
        let zsk = KeyPair::generate(cfg.scheme, KeyUsage::ZoneSigning, &mut rng);
        let zone = build_vehicle_zone(&cfg.plan, &bundles, &oem, zsk, BASE_TIME)?;
        let mut certs: BTreeMap<DnsName, Vec<Certificate>> = BTreeMap::new();
        for b in &bundles {
            certs
                .entry(b.tlsa_name().map_err(crate::zoneforge::ForgeError::from)?)
                .or_default()
                .push(b.certificate.clone());
        }
        let server = ZoneServer::new(zone);
        let resolver = Arc::new(Resolver::new(
            oem.anchor(&cfg.plan.vehicle),
            Arc::new(server.clone()),
        ));
        Ok(Sim {
            cfg,
            oem,
            supplier,
            rng,
            bundles,
            keys,
            certs,
            server,
            resolver,
            clock: BASE_TIME,
            runs_done: 0,
            subscriber_limit: None,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn config_mut(&mut self) -> &mut ScenarioConfig {
        &mut self.cfg
    }

    pub fn resolver(&self) -> &Arc<Resolver> {
        &self.resolver
    }

    pub fn server(&self) -> &ZoneServer {
        &self.server
    }

    pub fn oem(&self) -> &Oem {
        &self.oem
    }

    pub fn bundles(&self) -> &[SupplierBundle] {
        &self.bundles
    }

    /// Identity key currently installed for a TLSA name.
    pub fn key(&self, name: &DnsName) -> Option<&KeyPair> {
        self.keys.get(name)
    }

    /// Installs a different identity key, as a software update would.
    pub fn set_key(&mut self, name: &DnsName, key: KeyPair) {
        self.keys.insert(name.clone(), key);
    }

    /// Unix time at virtual time zero of the next run.
    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Moves the wall clock forward, e.g. past record TTLs.
    pub fn advance(&mut self, secs: u64) {
        self.clock += secs;
    }

    /// Only the first `n` planned subscribers take part in runs.
    pub fn set_subscriber_limit(&mut self, n: Option<usize>) {
        self.subscriber_limit = n;
    }

    pub fn flush_cache(&self) {
        self.resolver.flush();
    }

    /// A new certificate and key for the identity behind `name`. Nothing is
    /// published or installed yet.
    pub fn issue_replacement(
        &mut self,
        name: &DnsName,
    ) -> Result<(SupplierBundle, KeyPair), SimError> {
        let target = self
            .cfg
            .plan
            .targets()
            .into_iter()
            .find(|t| t.tlsa_name().is_ok_and(|n| n == *name))
            .ok_or_else(|| SimError::Config(format!("no identity named {name}")))?;
        let window = ValidityWindow::days(self.clock - 10, 365)?;
        let binary = format!("updated binary for {name}");
        let (bundle, key) = supplier_issue(
            &mut self.supplier,
            target,
            binary.as_bytes(),
            window,
            self.cfg.scheme,
            &mut self.rng,
        )?;
        Ok((bundle, key))
    }

    /// Publishes a bundle's records next to the existing ones.
    pub fn publish(&mut self, bundle: &SupplierBundle) -> Result<(), SimError> {
        let now = self.clock;
        self.server
            .update(|zone| self.oem.publish(zone, bundle, now))?;
        let name = bundle
            .tlsa_name()
            .map_err(crate::zoneforge::ForgeError::from)?;
        let entry = self.certs.entry(name).or_default();
        if !entry.contains(&bundle.certificate) {
            entry.push(bundle.certificate.clone());
        }
        self.bundles.push(bundle.clone());
        Ok(())
    }

    /// Withdraws a bundle's certificate from the zone and the static store.
    pub fn revoke(&mut self, bundle: &SupplierBundle) -> Result<(), SimError> {
        let now = self.clock;
        self.server
            .update(|zone| self.oem.revoke(zone, bundle, now))?;
        if let Ok(name) = bundle.tlsa_name() {
            if let Some(list) = self.certs.get_mut(&name) {
                list.retain(|c| c != &bundle.certificate);
            }
        }
        self.bundles.retain(|b| b.certificate != bundle.certificate);
        Ok(())
    }

    /// Name and endpoint of every party that takes part in the next run,
    /// publishers first, then subscribers in plan order.
    pub fn endpoints(&self) -> Result<Vec<(DnsName, Ipv4Endpoint)>, SimError> {
        Ok(self
            .build_parties()?
            .into_iter()
            .map(|p| {
                (
                    DnsName::parse(&p.label).expect("labels are names"),
                    p.endpoint,
                )
            })
            .collect())
    }

    fn party_seed(&self, idx: usize) -> u64 {
        self.cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (self.runs_done << 32) ^ idx as u64
    }

    fn build_parties(&self) -> Result<Vec<Party>, SimError> {
        let cfg = &self.cfg;
        let topo = &cfg.topology;
        let first_host = topo
            .hosts()
            .next()
            .map(|(i, _)| i)
            .ok_or_else(|| SimError::Topology("no hosts".into()))?;
        let node_of = |node: &Option<String>| {
            node.as_deref()
                .and_then(|n| topo.index(n))
                .unwrap_or(first_host)
        };
        let certs = Arc::new(self.certs.clone());
        let mut parties = Vec::new();
        let mut used: BTreeSet<(Ipv4Addr, u16)> = BTreeSet::new();
        for p in &cfg.plan.publishers {
            let name = publisher_tlsa_name(&p.key, p.endpoint.port)?;
            let mut pc = PublisherConfig::new(p.key.clone(), p.endpoint, cfg.variant);
            pc.multicast = Some(Ipv4Endpoint::udp(MULTICAST_GROUP, SD_PORT));
            pc.mode = cfg.mode;
            pc.key = self.keys.get(&name).cloned();
            pc.policy = cfg.policy.clone();
            pc.certificates = certs.clone();
            pc.timing = cfg.timing;
            pc.ka_group = cfg.ka_group;
            pc.seed = self.party_seed(parties.len());
            if !used.insert((p.endpoint.address, p.endpoint.port)) {
                return Err(SimError::Config(format!(
                    "endpoint {} used twice",
                    p.endpoint
                )));
            }
            parties.push(Party {
                machine: Machine::Pub(PublisherFsm::new(pc)),
                label: name.to_string(),
                node: node_of(&p.node),
                endpoint: p.endpoint,
                service_id: p.key.service_id,
                started_at: None,
                busy_until: 0,
                target: None,
            });
        }
        let limit = self.subscriber_limit.unwrap_or(usize::MAX);
        let mut next_port: HashMap<usize, u16> = HashMap::new();
        for s in cfg.plan.subscribers.iter().take(limit) {
            let pub_idx = cfg
                .plan
                .publishers
                .iter()
                .position(|p| p.key.scope() == s.target)
                .ok_or_else(|| {
                    SimError::Config(format!(
                        "subscriber {} has no publisher",
                        s.client.client_id
                    ))
                })?;
            let publisher = &cfg.plan.publishers[pub_idx];
            let node = node_of(&s.node);
            let address = topo.address(node).expect("hosts have addresses");
            let port = next_port.entry(node).or_insert(50000);
            while used.contains(&(address, *port)) {
                *port += 1;
            }
            let endpoint = Ipv4Endpoint::udp(address, *port);
            used.insert((address, *port));
            *port += 1;
            let name = client_tlsa_name(&s.client)?;
            let mut sc = SubscriberConfig::new(
                s.client.clone(),
                publisher.key.clone(),
                endpoint,
                cfg.variant,
            );
            if cfg.publisher_port_known {
                sc.publisher_port = Some(publisher.endpoint.port);
            }
            sc.mode = cfg.mode;
            sc.key = self.keys.get(&name).cloned();
            sc.certificates = certs.clone();
            sc.timing = cfg.timing;
            sc.ka_group = cfg.ka_group;
            sc.seed = self.party_seed(parties.len());
            parties.push(Party {
                machine: Machine::Sub(SubscriberFsm::new(sc)),
                label: name.to_string(),
                node,
                endpoint,
                service_id: publisher.key.service_id,
                started_at: None,
                busy_until: 0,
                target: Some(pub_idx),
            });
        }
        Ok(parties)
    }

    /// One run of the scenario.
    pub fn run(&mut self, intruder: Option<&mut dyn Intruder>) -> Result<RunOutcome, SimError> {
        let parties = self.build_parties()?;
        let mut rng = ChaCha20Rng::seed_from_u64(
            self.cfg.seed ^ self.runs_done.wrapping_mul(0xa076_1d64_78bd_642f),
        );
        if self.cfg.offline {
            self.server.connect();
            self.resolver.preload(self.clock)?;
            self.server.disconnect();
        }
        self.resolver.reset_stats();
        let mut run = Run::new(self, parties, intruder);
        let timing = self.cfg.timing;
        for i in 0..run.parties.len() {
            let at = if timing.initial_delay_max > timing.initial_delay_min {
                rng.gen_range(timing.initial_delay_min..=timing.initial_delay_max)
            } else {
                timing.initial_delay_min
            };
            run.schedule(
                at,
                Item::Deliver {
                    to: i,
                    event: Event::Start,
                    tag: None,
                },
            );
        }
        run.rng = rng;
        run.start_intruder();
        run.pump();
        let outcome = run.finish();
        if self.cfg.offline {
            self.server.connect();
        }
        self.clock += self.cfg.duration.div_ceil(SECONDS);
        self.runs_done += 1;
        Ok(outcome)
    }
}

/// Mutable state of one run.
struct Run<'a, 'b, 'c> {
    sim: &'a Sim,
    parties: Vec<Party>,
    intruder: Option<&'b mut (dyn Intruder + 'c)>,
    queue: BTreeMap<(Micros, u64), Item>,
    seq: u64,
    rng: ChaCha20Rng,
    by_endpoint: HashMap<(Ipv4Addr, u16), usize>,
    by_service: HashMap<u16, (Vec<usize>, Vec<usize>)>,
    by_label: HashMap<String, usize>,
    metrics: RunMetrics,
    established: Vec<Option<(Micros, bool, Ipv4Endpoint)>>,
    last_cause: Vec<Option<Cause>>,
    torn_down: Vec<bool>,
    adversary_node: usize,
}

impl<'a, 'b, 'c> Run<'a, 'b, 'c> {
    fn new(
        sim: &'a Sim,
        parties: Vec<Party>,
        intruder: Option<&'b mut (dyn Intruder + 'c)>,
    ) -> Self {
        let mut by_endpoint = HashMap::new();
        let mut by_service: HashMap<u16, (Vec<usize>, Vec<usize>)> = HashMap::new();
        let mut by_label = HashMap::new();
        for (i, p) in parties.iter().enumerate() {
            by_endpoint.insert((p.endpoint.address, p.endpoint.port), i);
            let slot = by_service.entry(p.service_id).or_default();
            if p.is_publisher() {
                slot.0.push(i);
            } else {
                slot.1.push(i);
            }
            by_label.insert(p.label.clone(), i);
        }
        let n = parties.len();
        Run {
            sim,
            parties,
            intruder,
            queue: BTreeMap::new(),
            seq: 0,
            rng: ChaCha20Rng::seed_from_u64(0),
            by_endpoint,
            by_service,
            by_label,
            metrics: RunMetrics::new(sim.cfg.variant),
            established: vec![None; n],
            last_cause: vec![None; n],
            torn_down: vec![false; n],
            adversary_node: sim
                .cfg
                .topology
                .resolver()
                .expect("validated topology has a resolver"),
        }
    }

    fn schedule(&mut self, at: Micros, item: Item) {
        self.seq += 1;
        self.queue.insert((at, self.seq), item);
    }

    fn start_intruder(&mut self) {
        let mut out = Vec::new();
        if let Some(i) = self.intruder.as_mut() {
            i.start(&mut out);
        }
        for inj in out {
            self.schedule(inj.at, Item::Inject(inj));
        }
    }

    fn pump(&mut self) {
        let end = self.sim.cfg.duration;
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > end {
                break;
            }
            let ((at, _), item) = entry.remove_entry();
            match item {
                Item::Deliver { to, event, tag } => self.deliver(at, to, event, tag),
                Item::Inject(inj) => {
                    let from_node = self.adversary_node;
                    self.route(
                        inj.at.max(at),
                        from_node,
                        None,
                        inj.from,
                        inj.to,
                        inj.message,
                        inj.tag.map(Verdict::Tagged).unwrap_or(Verdict::Deliver),
                    );
                }
            }
        }
    }

    fn deliver(&mut self, at: Micros, to: usize, event: Event, tag: Option<u32>) {
        let contention = self.sim.cfg.contention;
        let party = &mut self.parties[to];
        let start = if contention {
            at.max(party.busy_until)
        } else {
            at
        };
        if matches!(event, Event::Start) {
            party.started_at = Some(start);
        }
        let actions = party.step(event, start);
        let timings = party.take_timings();
        for (op, d) in &timings {
            self.metrics.record(
                &format!("{}{}", m::MEASURED_PREFIX, crypto_row(*op)),
                d.as_secs_f64() * 1e3,
            );
        }
        let delay: Micros = match self.sim.cfg.compute {
            ComputeModel::Fixed(costs) => actions
                .iter()
                .filter_map(|a| {
                    if let Action::Crypto(op) = a {
                        Some(costs.crypto(*op))
                    } else {
                        None
                    }
                })
                .sum(),
            ComputeModel::Measured => timings.iter().map(|(_, d)| d.as_micros() as Micros).sum(),
        };
        if contention {
            self.parties[to].busy_until = start + delay;
        }
        if let (Some(tag), Some(intruder)) = (tag, self.intruder.as_mut()) {
            intruder.fate(tag, &self.parties[to].label, start, &actions);
        }
        self.apply(to, start + delay, actions, tag);
    }

    fn apply(&mut self, party: usize, now: Micros, actions: Vec<Action>, tag: Option<u32>) {
        let costs = match self.sim.cfg.compute {
            ComputeModel::Fixed(c) => Some(c),
            ComputeModel::Measured => None,
        };
        for action in actions {
            match action {
                Action::Send { to, mut message } => {
                    let from = self.parties[party].endpoint;
                    let mut verdict = Verdict::Deliver;
                    let mut out = Vec::new();
                    if let Some(intruder) = self.intruder.as_mut() {
                        verdict = intruder.intercept(now, from, &to, &mut message, &mut out);
                    }
                    for inj in out {
                        self.schedule(inj.at.max(now), Item::Inject(inj));
                    }
                    let node = self.parties[party].node;
                    self.route(now, node, Some(party), from, to, message, verdict);
                }
                Action::Query { name, rtype } => self.query(party, now, name, rtype, tag),
                Action::SetTimer { timer, after } => self.schedule(
                    now + after,
                    Item::Deliver {
                        to: party,
                        event: Event::Timer(timer),
                        tag: None,
                    },
                ),
                Action::Crypto(op) => {
                    self.metrics.record(m::CRYPTO_OPS, 1.0);
                    if let Some(c) = costs {
                        self.metrics.record(crypto_row(op), ms(c.crypto(op)));
                    }
                }
                Action::Established(e) => {
                    if !self.parties[party].is_publisher() && self.established[party].is_none() {
                        self.established[party] = Some((now, e.secure, e.peer_endpoint));
                    }
                }
                Action::Rejected { cause, peer } => {
                    self.metrics.rejections.push(Rejection {
                        time_us: now,
                        endpoint: self.parties[party].label.clone(),
                        cause,
                        peer: peer.clone(),
                    });
                    if !self.parties[party].is_publisher() {
                        self.last_cause[party] = Some(cause);
                    } else if let Some(&sub) = peer.as_ref().and_then(|p| self.by_label.get(p)) {
                        self.last_cause[sub] = Some(cause);
                    }
                }
                Action::TornDown { .. } => {
                    if !self.parties[party].is_publisher() {
                        self.torn_down[party] = true;
                    }
                }
            }
        }
    }

    fn count(&mut self, row: &str) {
        self.metrics.record(row, 1.0);
    }

    #[allow(clippy::too_many_arguments)]
    fn route(
        &mut self,
        now: Micros,
        from_node: usize,
        sender: Option<usize>,
        from: Ipv4Endpoint,
        to: Destination,
        message: SdMessage,
        verdict: Verdict,
    ) {
        // every copy crosses the wire codec
        let message = match encode_message(&message).map(|b| decode_message(&b)) {
            Ok(Ok(msg)) => msg,
            _ => {
                self.count(m::MESSAGES_UNROUTABLE);
                return;
            }
        };
        let tag = if let Verdict::Tagged(t) = verdict {
            Some(t)
        } else {
            None
        };
        let targets: Vec<usize> = match to {
            Destination::Multicast => {
                let Some(entry) = message.entries.first() else {
                    return;
                };
                let (pubs, subs) = self
                    .by_service
                    .get(&entry.service_id)
                    .cloned()
                    .unwrap_or_default();
                let list = if entry.kind() == EntryKind::Find {
                    pubs
                } else {
                    subs
                };
                list.into_iter().filter(|&i| Some(i) != sender).collect()
            }
            Destination::Unicast(ep) => match self.by_endpoint.get(&(ep.address, ep.port)) {
                Some(&i) => vec![i],
                None if ep.address == ADVERSARY_ADDRESS && self.intruder.is_some() => {
                    self.count(m::MESSAGES_SENT);
                    self.count(m::MESSAGES_DELIVERED);
                    let mut out = Vec::new();
                    if let Some(i) = self.intruder.as_mut() {
                        i.receive(now, from, &message, &mut out);
                    }
                    for inj in out {
                        self.schedule(inj.at.max(now), Item::Inject(inj));
                    }
                    return;
                }
                None => {
                    self.count(m::MESSAGES_UNROUTABLE);
                    return;
                }
            },
        };
        for t in targets {
            self.count(m::MESSAGES_SENT);
            if verdict == Verdict::Block {
                self.count(m::MESSAGES_BLOCKED);
                continue;
            }
            if self.sim.cfg.loss > 0.0 && self.rng.gen_bool(self.sim.cfg.loss) {
                self.count(m::MESSAGES_DROPPED);
                continue;
            }
            self.count(m::MESSAGES_DELIVERED);
            let at = now
                + self
                    .sim
                    .cfg
                    .topology
                    .latency(from_node, self.parties[t].node);
            self.schedule(
                at,
                Item::Deliver {
                    to: t,
                    event: Event::Message {
                        from,
                        message: message.clone(),
                    },
                    tag,
                },
            );
        }
    }

    fn query(&mut self, party: usize, now: Micros, name: DnsName, rtype: RrType, tag: Option<u32>) {
        let topo = &self.sim.cfg.topology;
        let node = self.parties[party].node;
        let resolver_node = topo.resolver().expect("validated topology has a resolver");
        let path = topo.latency(node, resolver_node) + topo.latency(resolver_node, node);
        let unix = self.sim.clock + now / SECONDS;
        let (reply, hit) = match self.sim.resolver.resolve(&name, rtype, unix) {
            Ok(r) => {
                let hit = r.from_cache;
                (DnsReply::from(r), hit)
            }
            Err(_) => (DnsReply::failure(name.clone(), rtype), false),
        };
        let cost = match self.sim.cfg.compute {
            ComputeModel::Fixed(c) => {
                if hit {
                    c.resolve_hit
                } else {
                    c.resolve_miss
                }
            }
            ComputeModel::Measured => 0,
        };
        let elapsed = path + cost;
        self.count(m::DNS_QUERIES);
        if !reply.is_secure_data() {
            self.count(m::INSECURE_ANSWERS);
        }
        let row = match (self.parties[party].is_publisher(), rtype) {
            (true, _) => m::RESOLVE_SUB_TLSA,
            (false, RrType::Svcb) => m::RESOLVE_PUB_SVCB,
            (false, _) => m::RESOLVE_PUB_TLSA,
        };
        self.metrics.record(row, ms(elapsed));
        // answers to queries a tagged message caused stay tagged
        self.schedule(
            now + elapsed,
            Item::Deliver {
                to: party,
                event: Event::DnsResult(reply),
                tag,
            },
        );
    }

    fn finish(mut self) -> RunOutcome {
        let variant = self.sim.cfg.variant;
        let mut subscribers = Vec::new();
        let mut last_per_publisher: BTreeMap<usize, Micros> = BTreeMap::new();
        let mut network_setup: Option<Micros> = None;
        let mut expected = 0;
        let mut established = 0;
        let mut insecure = 0;
        for (i, p) in self.parties.iter().enumerate() {
            let Some(target) = p.target else { continue };
            expected += 1;
            let name = DnsName::parse(&p.label).expect("labels are names");
            match self.established[i] {
                Some((at, secure, peer)) => {
                    established += 1;
                    if variant.is_secure() && !secure {
                        insecure += 1;
                    }
                    let both_up = p
                        .started_at
                        .unwrap_or(0)
                        .max(self.parties[target].started_at.unwrap_or(0));
                    self.metrics
                        .record(m::SUBSCRIPTION_SETUP, ms(at.saturating_sub(both_up)));
                    let last = last_per_publisher.entry(target).or_insert(at);
                    *last = (*last).max(at);
                    network_setup = Some(network_setup.map_or(at, |n| n.max(at)));
                    subscribers.push(SubscriberOutcome {
                        name,
                        established_at: Some(at),
                        secure,
                        peer_endpoint: Some(peer),
                        torn_down: self.torn_down[i],
                    });
                }
                None => {
                    self.metrics.failures.push(Failure {
                        subscriber: p.label.clone(),
                        cause: self.last_cause[i],
                    });
                    subscribers.push(SubscriberOutcome {
                        name,
                        established_at: None,
                        secure: false,
                        peer_endpoint: None,
                        torn_down: false,
                    });
                }
            }
        }
        for (publisher, last) in last_per_publisher {
            let first_offer = self.parties[publisher].started_at.unwrap_or(0);
            self.metrics
                .record(m::SERVICE_SETUP, ms(last.saturating_sub(first_offer)));
        }
        if let Some(n) = network_setup {
            self.metrics.record(m::NETWORK_SETUP, ms(n));
        }
        self.metrics
            .record(m::SUBSCRIPTIONS_EXPECTED, expected as f64);
        self.metrics
            .record(m::SUBSCRIPTIONS_ESTABLISHED, established as f64);
        self.metrics.record(m::INSECURE_ACKS, insecure as f64);
        self.metrics.record(
            m::UPSTREAM_FETCHES,
            self.sim.resolver.stats().fetches as f64,
        );
        self.metrics
            .record(m::REJECTIONS, self.metrics.rejections.len() as f64);
        // counters are single samples per run
        for row in [
            m::MESSAGES_SENT,
            m::MESSAGES_DELIVERED,
            m::MESSAGES_DROPPED,
            m::MESSAGES_BLOCKED,
            m::MESSAGES_UNROUTABLE,
            m::DNS_QUERIES,
            m::INSECURE_ANSWERS,
            m::CRYPTO_OPS,
        ] {
            let total = self.metrics.count(row);
            self.metrics.replace(row, total as f64);
        }
        RunOutcome {
            metrics: self.metrics,
            subscribers,
        }
    }
}

/// Runs a scenario `cfg.runs` times with a cold resolver cache each time
/// (unless offline) and merges the metrics.
pub fn simulate(cfg: ScenarioConfig) -> Result<RunMetrics, SimError> {
    let runs = cfg.runs.max(1);
    let mut sim = Sim::new(cfg)?;
    let mut merged: Option<RunMetrics> = None;
    for _ in 0..runs {
        if !sim.cfg.offline {
            sim.flush_cache();
        }
        let out = sim.run(None)?;
        match merged.as_mut() {
            Some(acc) => acc.merge(&out.metrics),
            None => merged = Some(out.metrics),
        }
    }
    Ok(merged.expect("at least one run"))
}

/// Mean subscription setup per subscriber count.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalePoint {
    pub subscribers: usize,
    pub variant: Variant,
    pub mean_setup_ms: f64,
    pub max_setup_ms: f64,
    pub established: usize,
}

/// One publisher and up to `max` subscribers on four other hosts.
pub fn scalability_config(
    max: usize,
    variant: Variant,
    seed: u64,
) -> Result<ScenarioConfig, SimError> {
    use crate::records::{ClientKey, ServiceKey};
    use crate::zoneforge::{PlannedPublisher, PlannedSubscriber, VehicleZonePlan};
    let hosts = [
        "ecu-pub",
        "ecu-sub-1",
        "ecu-sub-2",
        "ecu-sub-3",
        "ecu-sub-4",
    ];
    let topology =
        super::topology::Topology::star(2, &hosts, super::topology::DEFAULT_LINK_LATENCY)?;
    let vehicle = DnsName::parse(super::ivn::IVN_VEHICLE).expect("valid name");
    let mut plan = VehicleZonePlan::new(vehicle.clone());
    let key = ServiceKey::new(100, 1, 1, 0, vehicle.clone());
    let address = topology
        .address(topology.index("ecu-pub").expect("host exists"))
        .expect("hosts have addresses");
    plan.publishers.push(PlannedPublisher {
        key: key.clone(),
        endpoint: Ipv4Endpoint::udp(address, super::ivn::FIRST_SERVICE_PORT),
        node: Some("ecu-pub".into()),
    });
    for j in 0..max {
        plan.subscribers.push(PlannedSubscriber {
            client: ClientKey::service_specific(1000 + j as u16, key.scope(), vehicle.clone()),
            target: key.scope(),
            node: Some(hosts[1 + j % 4].into()),
        });
    }
    let mut cfg = ScenarioConfig::new(topology, plan);
    cfg.variant = variant;
    cfg.seed = seed;
    Ok(cfg)
}

/// Setup time for 1 publisher and 1..=`max` subscribers, `runs` runs per
/// count, each with a cold cache.
pub fn run_scalability(
    max: usize,
    variant: Variant,
    seed: u64,
    runs: u32,
) -> Result<Vec<ScalePoint>, SimError> {
    let mut sim = Sim::new(scalability_config(max, variant, seed)?)?;
    let mut points = Vec::new();
    for n in 1..=max {
        sim.set_subscriber_limit(Some(n));
        let mut setup = Samples::default();
        let mut established = 0;
        for _ in 0..runs.max(1) {
            sim.flush_cache();
            let out = sim.run(None)?;
            established += out.established();
            if let Some(s) = out.metrics.get(m::SUBSCRIPTION_SETUP) {
                setup.extend(s);
            }
        }
        let summary = setup.summary();
        points.push(ScalePoint {
            subscribers: n,
            variant,
            mean_setup_ms: summary.map_or(f64::NAN, |s| s.mean),
            max_setup_ms: summary.map_or(f64::NAN, |s| s.max),
            established,
        });
    }
    Ok(points)
}
