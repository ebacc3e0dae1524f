//! The in-vehicle evaluation network.
//!
//! The original service placement is not public. [`ivn_plan`] regenerates
//! one that matches the published aggregates: 212 publishers and 448
//! subscribers on 13 hosts, 16 local publishers per host (min 0, max 79),
//! 35 local subscribers (min 0, max 131), 2.1 subscribers per publisher
//! (min 1, max 4), and 174 remote subscribers on the busiest publishing
//! host. Nothing beyond these aggregates is claimed to match.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::metrics::{Samples, Summary};
use super::topology::Topology;
use super::SimError;
use crate::discovery::Micros;
use crate::records::{ClientKey, DnsName, ServiceKey};
use crate::wire::Ipv4Endpoint;
use crate::zoneforge::{PlannedPublisher, PlannedSubscriber, VehicleZonePlan};

/// Host name, local publishers, local subscribers.
pub const IVN_HOSTS: [(&str, usize, usize); 13] = [
    ("zone-fl", 79, 3),
    ("hpc-adas", 40, 131),
    ("hpc-infotainment", 25, 60),
    ("hpc-telematics", 18, 50),
    ("zone-fr", 12, 40),
    ("zone-rl", 10, 35),
    ("zone-rr", 8, 30),
    ("camera-front", 6, 28),
    ("camera-rear", 5, 25),
    ("lidar-front", 4, 20),
    ("lidar-rear", 3, 14),
    ("lidar-left", 2, 12),
    ("lidar-right", 0, 0),
];

/// Edge switches around the core switch.
pub const IVN_EDGE_SWITCHES: usize = 4;

/// (subscribers per publisher, number of publishers).
pub const IVN_FANOUT: [(usize, usize); 4] = [(1, 61), (2, 84), (3, 49), (4, 18)];

/// Fan-out mix of the first host's 79 publishers, giving it 174 remote
/// subscribers.
const FIRST_HOST_FANOUT: [(usize, usize); 4] = [(1, 20), (2, 31), (3, 20), (4, 8)];

pub const IVN_VEHICLE: &str = "vehicle1.oem.";

/// Port of the first publisher on a host; later ones count up.
pub const FIRST_SERVICE_PORT: u16 = 30501;

pub fn ivn_topology(latency: Micros) -> Result<Topology, SimError> {
    let hosts: Vec<&str> = IVN_HOSTS.iter().map(|h| h.0).collect();
    Topology::star(IVN_EDGE_SWITCHES, &hosts, latency)
}

fn expand(mix: &[(usize, usize)]) -> Vec<usize> {
    mix.iter()
        .flat_map(|&(f, n)| std::iter::repeat_n(f, n))
        .collect()
}

/// Generates the evaluation plan for `seed`. Service `100 + k` is the k-th
/// publisher; every subscriber has its own service-specific client name.
pub fn ivn_plan(seed: u64) -> Result<VehicleZonePlan, SimError> {
    let topology = ivn_topology(super::topology::DEFAULT_LINK_LATENCY)?;
    let vehicle = DnsName::parse(IVN_VEHICLE).expect("valid name");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let mut first = expand(&FIRST_HOST_FANOUT);
    let mut rest = expand(&IVN_FANOUT);
    for f in &first {
        let pos = rest
            .iter()
            .position(|x| x == f)
            .expect("first-host mix is a sub-multiset");
        rest.swap_remove(pos);
    }
    first.shuffle(&mut rng);
    rest.shuffle(&mut rng);
    let mut rest = rest.into_iter();

    let mut plan = VehicleZonePlan::new(vehicle.clone());
    let mut fanout = Vec::new();
    let mut home = Vec::new();
    for (h, &(name, pubs, _)) in IVN_HOSTS.iter().enumerate() {
        let (node, _) = topology.hosts().nth(h).expect("host exists");
        let address = topology.address(node).expect("hosts have addresses");
        #[allow(clippy::needless_range_loop)]
        for k in 0..pubs {
            let id = plan.publishers.len() as u16;
            let key = ServiceKey::new(100 + id, 1, 1, 0, vehicle.clone());
            let endpoint = Ipv4Endpoint::udp(address, FIRST_SERVICE_PORT + k as u16);
            plan.publishers.push(PlannedPublisher {
                key,
                endpoint,
                node: Some(name.to_string()),
            });
            fanout.push(if h == 0 {
                first[k]
            } else {
                rest.next().expect("212 fan-outs")
            });
            home.push(h);
        }
    }

    // largest fan-outs first, each subscription on the remote host with the
    // most remaining capacity
    let mut order: Vec<usize> = (0..plan.publishers.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&p| std::cmp::Reverse(fanout[p]));
    let mut capacity: Vec<usize> = IVN_HOSTS.iter().map(|h| h.2).collect();
    let mut placements: Vec<(usize, usize)> = Vec::new();
    for &p in &order {
        let mut candidates: Vec<(usize, u32, usize)> = (0..IVN_HOSTS.len())
            .filter(|&h| h != home[p] && capacity[h] > 0)
            .map(|h| (capacity[h], rng.gen::<u32>(), h))
            .collect();
        candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        if candidates.len() < fanout[p] {
            return Err(SimError::Config(format!(
                "placement for seed {seed} ran out of hosts"
            )));
        }
        for &(_, _, h) in candidates.iter().take(fanout[p]) {
            capacity[h] -= 1;
            placements.push((p, h));
        }
    }
    placements.sort();
    for (j, (p, h)) in placements.into_iter().enumerate() {
        let target = plan.publishers[p].key.scope();
        let client = ClientKey::service_specific(1000 + j as u16, target, vehicle.clone());
        plan.subscribers.push(PlannedSubscriber {
            client,
            target,
            node: Some(IVN_HOSTS[h].0.to_string()),
        });
    }
    plan.validate()
        .map_err(|e| SimError::Config(e.to_string()))?;
    Ok(plan)
}

/// Placement aggregates of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanStats {
    pub publishers: usize,
    pub subscribers: usize,
    pub record_names: usize,
    pub subscribers_per_publisher: Summary,
    pub local_publishers: Summary,
    pub local_subscribers: Summary,
    /// Subscribers on other hosts of a host's publishers.
    pub remote_subscribers: Summary,
    /// Distinct publishers on other hosts that a host's subscribers use.
    pub remote_publishers: Summary,
}

/// Aggregates of `plan` over `hosts`; hosts without any endpoint count as
/// zero.
pub fn plan_stats<S: AsRef<str>>(
    plan: &VehicleZonePlan,
    hosts: &[S],
) -> Result<PlanStats, SimError> {
    let hosts: Vec<String> = hosts.iter().map(|h| h.as_ref().to_string()).collect();
    let host_of = |node: &Option<String>| node.clone().unwrap_or_default();
    let mut fan = Samples::default();
    let mut local_pub = Samples::default();
    let mut local_sub = Samples::default();
    let mut remote_sub = Samples::default();
    let mut remote_pub = Samples::default();
    let target_host = |s: &PlannedSubscriber| {
        plan.publishers
            .iter()
            .find(|p| p.key.scope() == s.target)
            .map(|p| host_of(&p.node))
    };
    for p in &plan.publishers {
        fan.push(
            plan.subscribers
                .iter()
                .filter(|s| s.target == p.key.scope())
                .count() as f64,
        );
    }
    for h in &hosts {
        local_pub.push(
            plan.publishers
                .iter()
                .filter(|p| host_of(&p.node) == *h)
                .count() as f64,
        );
        local_sub.push(
            plan.subscribers
                .iter()
                .filter(|s| host_of(&s.node) == *h)
                .count() as f64,
        );
        remote_sub.push(
            plan.subscribers
                .iter()
                .filter(|s| host_of(&s.node) != *h && target_host(s).as_deref() == Some(h.as_str()))
                .count() as f64,
        );
        let distinct: BTreeSet<_> = plan
            .subscribers
            .iter()
            .filter(|s| host_of(&s.node) == *h && target_host(s).is_some_and(|t| t != *h))
            .map(|s| s.target)
            .collect();
        remote_pub.push(distinct.len() as f64);
    }
    let empty = || Summary {
        count: 0,
        min: 0.0,
        mean: 0.0,
        max: 0.0,
    };
    Ok(PlanStats {
        publishers: plan.publishers.len(),
        subscribers: plan.subscribers.len(),
        record_names: plan
            .record_names()
            .map_err(|e| SimError::Config(e.to_string()))?
            .len(),
        subscribers_per_publisher: fan.summary().unwrap_or_else(empty),
        local_publishers: local_pub.summary().unwrap_or_else(empty),
        local_subscribers: local_sub.summary().unwrap_or_else(empty),
        remote_subscribers: remote_sub.summary().unwrap_or_else(empty),
        remote_publishers: remote_pub.summary().unwrap_or_else(empty),
    })
}
