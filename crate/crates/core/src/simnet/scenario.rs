use std::fmt::Write as _;

use super::ivn::{ivn_plan, ivn_topology};
use super::topology::{NodeKind, Topology, DEFAULT_LINK_LATENCY};
use super::SimError;
use crate::crypto::{CryptoOp, KaGroup, SignatureScheme};
use crate::discovery::{
    AuthorizationPolicy, Micros, SecurityMode, Timing, Variant, MILLIS, SECONDS,
};
use crate::records::ScopeKind;
use crate::zoneforge::VehicleZonePlan;

/// Virtual cost of each modeled operation, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostTable {
    pub sign: Micros,
    pub verify: Micros,
    pub key_agreement: Micros,
    pub wrap: Micros,
    pub unwrap: Micros,
    /// Answer served from the resolver cache.
    pub resolve_hit: Micros,
    /// Answer that needed a zone fetch and validation.
    pub resolve_miss: Micros,
}

impl Default for CostTable {
    fn default() -> Self {
        CostTable {
            sign: 600,
            verify: 100,
            key_agreement: 100,
            wrap: 10,
            unwrap: 10,
            resolve_hit: 100,
            resolve_miss: 300,
        }
    }
}

impl CostTable {
    pub fn crypto(&self, op: CryptoOp) -> Micros {
        match op {
            CryptoOp::Sign => self.sign,
            CryptoOp::Verify => self.verify,
            CryptoOp::KeyAgreement => self.key_agreement,
            CryptoOp::Wrap => self.wrap,
            CryptoOp::Unwrap => self.unwrap,
        }
    }

    fn set(&mut self, name: &str, value: Micros) -> bool {
        let slot = match name {
            "sign" => &mut self.sign,
            "verify" => &mut self.verify,
            "key_agreement" => &mut self.key_agreement,
            "wrap" => &mut self.wrap,
            "unwrap" => &mut self.unwrap,
            "resolve_hit" => &mut self.resolve_hit,
            "resolve_miss" => &mut self.resolve_miss,
            _ => return false,
        };
        *slot = value;
        true
    }
}

/// How long computation takes in virtual time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComputeModel {
    /// Fixed costs; runs are reproducible.
    Fixed(CostTable),
    /// Wall-clock time of the actual operations; runs are not reproducible.
    Measured,
}

impl Default for ComputeModel {
    fn default() -> Self {
        ComputeModel::Fixed(CostTable::default())
    }
}

/// Everything a simulation run needs.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub topology: Topology,
    pub plan: VehicleZonePlan,
    pub variant: Variant,
    pub seed: u64,
    /// Independent per-delivery drop probability.
    pub loss: f64,
    pub timing: Timing,
    pub compute: ComputeModel,
    pub scheme: SignatureScheme,
    pub ka_group: KaGroup,
    pub policy: AuthorizationPolicy,
    pub mode: SecurityMode,
    /// Virtual time each run covers.
    pub duration: Micros,
    /// Preload the resolver and disconnect the zone source before running.
    pub offline: bool,
    /// Subscribers know their publisher's port and query its TLSA record
    /// right away.
    pub publisher_port_known: bool,
    pub runs: u32,
    pub link_latency: Micros,
    /// Endpoints handle one step at a time, so work queues up behind
    /// earlier work on the same endpoint.
    pub contention: bool,
}

impl ScenarioConfig {
    pub fn new(topology: Topology, plan: VehicleZonePlan) -> Self {
        ScenarioConfig {
            topology,
            plan,
            variant: Variant::Dnssec,
            seed: 1,
            loss: 0.0,
            timing: Timing::default(),
            compute: ComputeModel::default(),
            scheme: SignatureScheme::EcdsaP256Sha256,
            ka_group: crate::discovery::DEFAULT_KA_GROUP,
            policy: AuthorizationPolicy::default(),
            mode: SecurityMode::Secure,
            duration: 3 * SECONDS,
            offline: false,
            publisher_port_known: false,
            runs: 1,
            link_latency: DEFAULT_LINK_LATENCY,
            contention: false,
        }
    }

    /// The evaluation network with a plan generated from `seed`.
    pub fn ivn(seed: u64) -> Result<Self, SimError> {
        let mut cfg = ScenarioConfig::new(ivn_topology(DEFAULT_LINK_LATENCY)?, ivn_plan(seed)?);
        cfg.seed = seed;
        Ok(cfg)
    }

    /// A star with one host per distinct plan node.
    pub fn auto_topology(plan: &VehicleZonePlan, latency: Micros) -> Result<Topology, SimError> {
        let mut hosts: Vec<String> = Vec::new();
        let nodes = plan
            .publishers
            .iter()
            .map(|p| &p.node)
            .chain(plan.subscribers.iter().map(|s| &s.node));
        for node in nodes {
            let name = node.clone().unwrap_or_else(|| "host".to_string());
            if !hosts.contains(&name) {
                hosts.push(name);
            }
        }
        if hosts.is_empty() {
            hosts.push("host".into());
        }
        Topology::star(hosts.len().min(4), &hosts, latency)
    }

    /// Checks that every placed endpoint sits on a host of the topology.
    pub fn validate(&self) -> Result<(), SimError> {
        if !self.topology.is_finalized() {
            return Err(SimError::Topology("topology not finalized".into()));
        }
        if self.topology.resolver().is_none() {
            return Err(SimError::Topology("topology has no resolver".into()));
        }
        if self.topology.hosts().next().is_none() {
            return Err(SimError::Topology("topology has no hosts".into()));
        }
        let nodes = self
            .plan
            .publishers
            .iter()
            .map(|p| &p.node)
            .chain(self.plan.subscribers.iter().map(|s| &s.node));
        for node in nodes.flatten() {
            match self.topology.index(node) {
                Some(i) if self.topology.node(i).kind == NodeKind::Host => {}
                _ => {
                    return Err(SimError::Config(format!(
                        "endpoint placed on unknown host {node:?}"
                    )))
                }
            }
        }
        if !(0.0..=1.0).contains(&self.loss) {
            return Err(SimError::Config(format!(
                "loss {} outside [0, 1]",
                self.loss
            )));
        }
        self.plan
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))
    }

    /// Parses a scenario file. Plan lines (`vehicle`, `publisher`,
    /// `subscriber`) are shared with the zone plan format; the remaining
    /// keywords set up the network and the run:
    ///
    /// ```text
    /// topology ivn | switch NAME | host NAME on SWITCH | resolver on SWITCH | link A B
    /// latency_us N
    /// plan ivn SEED
    /// variant vanilla|pre_deployed|dnssec
    /// seed N | runs N | loss P | duration_ms N
    /// scheme p256|rsa | ka x25519|p256
    /// policy service,domain,vehicle | mode secure|insecure_permitted
    /// compute fixed|measured | cost sign|verify|key_agreement|wrap|unwrap|resolve_hit|resolve_miss US
    /// publisher_port known|unknown | offline on|off | contention on|off
    /// timing initial_ms MIN MAX | timing repetitions N | timing base_ms N | timing cyclic_ms N | timing nonce_ms N
    /// ```
    ///
    /// Without topology lines every distinct plan node becomes a host on a
    /// star.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut plan = VehicleZonePlan::new(
            crate::records::DnsName::parse("vehicle1.oem.").expect("valid name"),
        );
        let mut cfg = ScenarioConfig::new(Topology::new(), plan.clone());
        let mut builtin_ivn = false;
        let mut switches: Vec<String> = Vec::new();
        let mut hosts: Vec<(String, String)> = Vec::new();
        let mut resolver: Option<String> = None;
        let mut links: Vec<(String, String)> = Vec::new();
        let mut costs = CostTable::default();
        let mut measured = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let fields: Vec<&str> = raw
                .split('#')
                .next()
                .unwrap_or_default()
                .split_whitespace()
                .collect();
            if fields.is_empty() {
                continue;
            }
            let err = |reason: String| SimError::Parse { line, reason };
            let arg = |i: usize| {
                fields
                    .get(i)
                    .copied()
                    .ok_or_else(|| err(format!("{} needs a value", fields[0])))
            };
            let num = |i: usize| -> Result<u64, SimError> {
                let s = arg(i)?;
                s.parse::<u64>()
                    .map_err(|_| err(format!("bad number {s:?}")))
            };
            match fields[0] {
                "topology" => match arg(1)? {
                    "ivn" => builtin_ivn = true,
                    other => return Err(err(format!("unknown topology {other:?}"))),
                },
                "switch" => switches.push(arg(1)?.to_string()),
                "host" => {
                    if arg(2)? != "on" {
                        return Err(err("expected: host NAME on SWITCH".into()));
                    }
                    hosts.push((arg(1)?.to_string(), arg(3)?.to_string()));
                }
                "resolver" => {
                    if arg(1)? != "on" {
                        return Err(err("expected: resolver on SWITCH".into()));
                    }
                    resolver = Some(arg(2)?.to_string());
                }
                "link" => links.push((arg(1)?.to_string(), arg(2)?.to_string())),
                "latency_us" => cfg.link_latency = num(1)?,
                "plan" => match arg(1)? {
                    "ivn" => {
                        let generated = ivn_plan(num(2)?)?;
                        plan.vehicle = generated.vehicle;
                        plan.publishers.extend(generated.publishers);
                        plan.subscribers.extend(generated.subscribers);
                    }
                    other => return Err(err(format!("unknown plan generator {other:?}"))),
                },
                "variant" => cfg.variant = arg(1)?.parse().map_err(err)?,
                "seed" => cfg.seed = num(1)?,
                "runs" => cfg.runs = num(1)?.max(1) as u32,
                "loss" => {
                    let s = arg(1)?;
                    cfg.loss = s
                        .parse()
                        .map_err(|_| err(format!("bad probability {s:?}")))?;
                }
                "duration_ms" => cfg.duration = num(1)? * MILLIS,
                "scheme" => {
                    cfg.scheme = match arg(1)? {
                        "p256" => SignatureScheme::EcdsaP256Sha256,
                        "rsa" => SignatureScheme::RsaPkcs1v15Sha256,
                        other => return Err(err(format!("unknown scheme {other:?}"))),
                    }
                }
                "ka" => {
                    cfg.ka_group = match arg(1)? {
                        "x25519" => KaGroup::X25519,
                        "p256" => KaGroup::P256,
                        other => return Err(err(format!("unknown key-agreement group {other:?}"))),
                    }
                }
                "policy" => {
                    let mut kinds = Vec::new();
                    for k in arg(1)?.split(',') {
                        kinds.push(match k {
                            "service" => ScopeKind::ServiceSpecific,
                            "domain" => ScopeKind::Domain,
                            "vehicle" => ScopeKind::VehicleWide,
                            other => return Err(err(format!("unknown scope {other:?}"))),
                        });
                    }
                    cfg.policy = AuthorizationPolicy::new(kinds)
                        .ok_or_else(|| err("empty policy".into()))?;
                }
                "mode" => {
                    cfg.mode = match arg(1)? {
                        "secure" => SecurityMode::Secure,
                        "insecure_permitted" => SecurityMode::InsecurePermitted,
                        other => return Err(err(format!("unknown mode {other:?}"))),
                    }
                }
                "compute" => {
                    measured = match arg(1)? {
                        "fixed" => false,
                        "measured" => true,
                        other => return Err(err(format!("unknown compute model {other:?}"))),
                    }
                }
                "cost" => {
                    let name = arg(1)?;
                    if !costs.set(name, num(2)?) {
                        return Err(err(format!("unknown cost {name:?}")));
                    }
                }
                "publisher_port" => {
                    cfg.publisher_port_known = on_off(arg(1)?, "known", "unknown")
                        .ok_or_else(|| err("expected known|unknown".into()))?
                }
                "contention" => {
                    cfg.contention =
                        on_off(arg(1)?, "on", "off").ok_or_else(|| err("expected on|off".into()))?
                }
                "offline" => {
                    cfg.offline =
                        on_off(arg(1)?, "on", "off").ok_or_else(|| err("expected on|off".into()))?
                }
                "timing" => {
                    let t = &mut cfg.timing;
                    match arg(1)? {
                        "initial_ms" => {
                            t.initial_delay_min = num(2)? * MILLIS;
                            t.initial_delay_max = num(3)? * MILLIS;
                            if t.initial_delay_max < t.initial_delay_min {
                                return Err(err("initial delay max below min".into()));
                            }
                        }
                        "repetitions" => t.repetitions = num(2)? as u32,
                        "base_ms" => t.repetition_base = num(2)? * MILLIS,
                        "cyclic_ms" => t.cyclic_offer = num(2)? * MILLIS,
                        "nonce_ms" => t.nonce_lifetime = num(2)? * MILLIS,
                        other => return Err(err(format!("unknown timing field {other:?}"))),
                    }
                }
                _ => {
                    let handled = plan
                        .parse_line(&fields, line)
                        .map_err(|e| SimError::Config(e.to_string()))?;
                    if !handled {
                        return Err(err(format!("unknown keyword {:?}", fields[0])));
                    }
                }
            }
        }
        cfg.compute = if measured {
            ComputeModel::Measured
        } else {
            ComputeModel::Fixed(costs)
        };
        cfg.topology = if builtin_ivn {
            ivn_topology(cfg.link_latency)?
        } else if switches.is_empty() && hosts.is_empty() {
            Self::auto_topology(&plan, cfg.link_latency)?
        } else {
            let mut t = Topology::new();
            for s in &switches {
                t.add_switch(s)?;
            }
            for (h, s) in &hosts {
                t.add_host(h)?;
                t.link_by_name(s, h, cfg.link_latency)?;
            }
            let at = resolver
                .or_else(|| switches.first().cloned())
                .ok_or_else(|| SimError::Topology("no switch".into()))?;
            t.add_resolver("dns")?;
            t.link_by_name(&at, "dns", cfg.link_latency)?;
            for (a, b) in &links {
                t.link_by_name(a, b, cfg.link_latency)?;
            }
            t.finalize()?;
            t
        };
        cfg.plan = plan;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Scenario text that parses back to this configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let t = &self.topology;
        let _ = writeln!(out, "latency_us {}", self.link_latency);
        for (i, n) in t.nodes().iter().enumerate() {
            if n.kind == NodeKind::Switch {
                let _ = writeln!(out, "switch {}", n.name);
            }
            let _ = i;
        }
        for l in t.links() {
            let (a, b) = (t.node(l.a), t.node(l.b));
            match (a.kind, b.kind) {
                (NodeKind::Switch, NodeKind::Switch) => {
                    let _ = writeln!(out, "link {} {}", a.name, b.name);
                }
                (NodeKind::Switch, NodeKind::Host) => {
                    let _ = writeln!(out, "host {} on {}", b.name, a.name);
                }
                (NodeKind::Host, NodeKind::Switch) => {
                    let _ = writeln!(out, "host {} on {}", a.name, b.name);
                }
                (NodeKind::Switch, NodeKind::Resolver) => {
                    let _ = writeln!(out, "resolver on {}", a.name);
                }
                (NodeKind::Resolver, NodeKind::Switch) => {
                    let _ = writeln!(out, "resolver on {}", b.name);
                }
                _ => {}
            }
        }
        let _ = writeln!(out, "variant {}", self.variant);
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "runs {}", self.runs);
        let _ = writeln!(out, "loss {}", self.loss);
        let _ = writeln!(out, "duration_ms {}", self.duration / MILLIS);
        let scheme = match self.scheme {
            SignatureScheme::EcdsaP256Sha256 => "p256",
            SignatureScheme::RsaPkcs1v15Sha256 => "rsa",
        };
        let _ = writeln!(out, "scheme {scheme}");
        let ka = match self.ka_group {
            KaGroup::X25519 => "x25519",
            KaGroup::P256 => "p256",
        };
        let _ = writeln!(out, "ka {ka}");
        let policy: Vec<&str> = self
            .policy
            .accepted()
            .map(|k| match k {
                ScopeKind::ServiceSpecific => "service",
                ScopeKind::Domain => "domain",
                ScopeKind::VehicleWide => "vehicle",
            })
            .collect();
        let _ = writeln!(out, "policy {}", policy.join(","));
        let mode = match self.mode {
            SecurityMode::Secure => "secure",
            SecurityMode::InsecurePermitted => "insecure_permitted",
        };
        let _ = writeln!(out, "mode {mode}");
        match self.compute {
            ComputeModel::Measured => {
                let _ = writeln!(out, "compute measured");
            }
            ComputeModel::Fixed(c) => {
                let _ = writeln!(out, "compute fixed");
                for (name, v) in [
                    ("sign", c.sign),
                    ("verify", c.verify),
                    ("key_agreement", c.key_agreement),
                    ("wrap", c.wrap),
                    ("unwrap", c.unwrap),
                    ("resolve_hit", c.resolve_hit),
                    ("resolve_miss", c.resolve_miss),
                ] {
                    let _ = writeln!(out, "cost {name} {v}");
                }
            }
        }
        let _ = writeln!(
            out,
            "publisher_port {}",
            if self.publisher_port_known {
                "known"
            } else {
                "unknown"
            }
        );
        let _ = writeln!(out, "offline {}", if self.offline { "on" } else { "off" });
        let _ = writeln!(
            out,
            "contention {}",
            if self.contention { "on" } else { "off" }
        );
        let tm = &self.timing;
        let _ = writeln!(
            out,
            "timing initial_ms {} {}",
            tm.initial_delay_min / MILLIS,
            tm.initial_delay_max / MILLIS
        );
        let _ = writeln!(out, "timing repetitions {}", tm.repetitions);
        let _ = writeln!(out, "timing base_ms {}", tm.repetition_base / MILLIS);
        let _ = writeln!(out, "timing cyclic_ms {}", tm.cyclic_offer / MILLIS);
        let _ = writeln!(out, "timing nonce_ms {}", tm.nonce_lifetime / MILLIS);
        out.push_str(&self.plan.to_text());
        out
    }
}

fn on_off(value: &str, yes: &str, no: &str) -> Option<bool> {
    if value == yes {
        Some(true)
    } else if value == no {
        Some(false)
    } else {
        None
    }
}
