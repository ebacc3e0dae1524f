//! Fixtures shared by the integration targets.

#![allow(dead_code)]

pub mod model;
pub mod props;

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use sd_dane::crypto::{KeyPair, KeyUsage, SignatureScheme};
use sd_dane::discovery::{CertificateStore, PublisherConfig, SubscriberConfig, Variant};
use sd_dane::dnssec::{Resolver, ZoneServer};
use sd_dane::records::{client_tlsa_name, publisher_tlsa_name, DnsName};
use sd_dane::wire::Ipv4Endpoint;
use sd_dane::zoneforge::{
    build_vehicle_zone, issue_plan, Oem, Supplier, ValidityWindow, VehicleZonePlan,
};

pub const NOW: u64 = 1_750_000_000;
pub const P256: SignatureScheme = SignatureScheme::EcdsaP256Sha256;

/// One publisher, its legitimate subscriber, and an insider whose valid
/// credentials are scoped to a different service.
pub const PAIR_PLAN: &str = "\
vehicle vehicle1.oem.
publisher 42 1 2 3 10.0.0.2:30501/udp
publisher 43 1 2 3 10.0.0.3:30502/udp
subscriber 17 to 42 1 2
subscriber 20 to 43 1 2
";

pub struct Pair {
    pub plan: VehicleZonePlan,
    pub keys: BTreeMap<DnsName, KeyPair>,
    pub certs: CertificateStore,
    pub server: ZoneServer,
    pub resolver: Arc<Resolver>,
}

pub fn pair() -> Pair {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let plan = VehicleZonePlan::parse(PAIR_PLAN).expect("plan");
    let mut supplier = Supplier::generate("tier1", P256, &mut rng);
    let window = ValidityWindow::days(NOW - 10, 365).expect("window");
    let (bundles, keys) = issue_plan(&plan, &mut supplier, window, P256, &mut rng).expect("issue");
    let oem = Oem::generate(P256, &mut rng);
    let zsk = KeyPair::generate(P256, KeyUsage::ZoneSigning, &mut rng);
    let zone = build_vehicle_zone(&plan, &bundles, &oem, zsk, NOW).expect("zone");
    let certs: BTreeMap<DnsName, Vec<_>> = bundles
        .iter()
        .map(|b| (b.tlsa_name().expect("name"), vec![b.certificate.clone()]))
        .collect();
    let server = ZoneServer::new(zone);
    let resolver = Arc::new(Resolver::new(
        oem.anchor(&plan.vehicle),
        Arc::new(server.clone()),
    ));
    Pair {
        plan,
        keys,
        certs: Arc::new(certs),
        server,
        resolver,
    }
}

impl Pair {
    pub fn publisher_name(&self) -> DnsName {
        let p = &self.plan.publishers[0];
        publisher_tlsa_name(&p.key, p.endpoint.port).expect("name")
    }

    pub fn subscriber_name(&self) -> DnsName {
        client_tlsa_name(&self.plan.subscribers[0].client).expect("name")
    }

    pub fn insider_name(&self) -> DnsName {
        client_tlsa_name(&self.plan.subscribers[1].client).expect("name")
    }

    pub fn publisher(&self, variant: Variant) -> PublisherConfig {
        let p = &self.plan.publishers[0];
        let mut cfg = PublisherConfig::new(p.key.clone(), p.endpoint, variant);
        cfg.multicast = Some(Ipv4Endpoint::udp(Ipv4Addr::new(239, 0, 0, 1), 30490));
        cfg.key = Some(self.keys[&self.publisher_name()].clone());
        cfg.certificates = self.certs.clone();
        cfg.seed = 100;
        cfg
    }

    pub fn subscriber(&self, variant: Variant) -> SubscriberConfig {
        let p = &self.plan.publishers[0];
        let client = self.plan.subscribers[0].client.clone();
        let endpoint = Ipv4Endpoint::udp(Ipv4Addr::new(10, 0, 1, 1), 40017);
        let mut cfg = SubscriberConfig::new(client, p.key.clone(), endpoint, variant);
        cfg.key = Some(self.keys[&self.subscriber_name()].clone());
        cfg.certificates = self.certs.clone();
        cfg.seed = 200;
        cfg
    }
}
