//! Credential lifecycle between update suppliers and the OEM.
//!
//! A supplier generates an identity key and a self-signed certificate for
//! a DNS name and signs the certificate together with the digest of the
//! software binary it ships. The OEM checks that signature, then publishes
//! TLSA (and, for publishers, SVCB) records in the vehicle zone and signs
//! them with the vehicle ZSK. The two signing paths never share keys: each
//! key carries a [`KeyUsage`] tag that the signing functions enforce.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::{
    build_tlsa, match_tlsa, Certificate, CryptoError, KeyPair, KeyUsage, PublicKey, SignatureScheme,
};
use crate::dnssec::{DnssecError, RData, Record, RrType, TrustAnchor, UnixTime, Zone, DEFAULT_TTL};
use crate::records::{
    client_tlsa_name, publisher_service_name, publisher_tlsa_name, ClientKey, DnsName, RecordError,
    ScopeKind, ServiceKey, ServiceScope, SvcbParams, TLSA_MATCH_EXACT, TLSA_SELECTOR_FULL,
};
use crate::wire::{Ipv4Endpoint, PROTO_TCP, PROTO_UDP};

const BUNDLE_LABEL: &[u8] = b"sd-dane supplier bundle v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ForgeError {
    #[error("validity window is empty")]
    EmptyValidity,
    #[error("supplier signature on bundle for {name} does not verify")]
    BadBundleSignature { name: DnsName },
    #[error("certificate subject {subject:?} does not match {name}")]
    SubjectMismatch { subject: String, name: DnsName },
    #[error("bundle for {name} belongs to a different vehicle than {apex}")]
    ForeignVehicle { name: DnsName, apex: DnsName },
    #[error("no bundle for {name}")]
    MissingBundle { name: DnsName },
    #[error("name {name} declared twice")]
    DuplicateName { name: DnsName },
    #[error("subscriber {client} targets unknown publisher {service}.{instance} v{major}")]
    UnknownTarget {
        client: DnsName,
        service: u16,
        instance: u16,
        major: u8,
    },
    #[error("plan line {line}: {reason}")]
    Plan { line: usize, reason: String },
    #[error("bundle file: {0}")]
    BundleFormat(String),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Dnssec(#[from] DnssecError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Whose credential a bundle carries.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BundleTarget {
    Publisher {
        key: ServiceKey,
        endpoint: Ipv4Endpoint,
    },
    Client(ClientKey),
}

impl BundleTarget {
    /// The TLSA owner name, which is also the certificate subject.
    pub fn tlsa_name(&self) -> Result<DnsName, RecordError> {
        match self {
            BundleTarget::Publisher { key, endpoint } => publisher_tlsa_name(key, endpoint.port),
            BundleTarget::Client(key) => client_tlsa_name(key),
        }
    }

    pub fn vehicle(&self) -> &DnsName {
        match self {
            BundleTarget::Publisher { key, .. } => &key.vehicle,
            BundleTarget::Client(key) => &key.vehicle,
        }
    }

    /// The same identity in another vehicle.
    pub fn rehome(&self, vehicle: &DnsName) -> Self {
        match self {
            BundleTarget::Publisher { key, endpoint } => BundleTarget::Publisher {
                key: ServiceKey {
                    vehicle: vehicle.clone(),
                    ..key.clone()
                },
                endpoint: *endpoint,
            },
            BundleTarget::Client(key) => BundleTarget::Client(ClientKey {
                vehicle: vehicle.clone(),
                ..key.clone()
            }),
        }
    }
}

/// A certificate validity window in Unix seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidityWindow {
    pub not_before: u64,
    pub not_after: u64,
}

impl ValidityWindow {
    pub fn new(not_before: u64, not_after: u64) -> Result<Self, ForgeError> {
        if not_after <= not_before {
            return Err(ForgeError::EmptyValidity);
        }
        Ok(ValidityWindow {
            not_before,
            not_after,
        })
    }

    /// `days` days starting at `start`.
    pub fn days(start: u64, days: u64) -> Result<Self, ForgeError> {
        Self::new(start, start + days * 86_400)
    }
}

/// An update supplier with its own signing key.
#[derive(Debug, Clone)]
pub struct Supplier {
    name: String,
    key: KeyPair,
    serial: u64,
}

impl Supplier {
    pub fn generate<R: RngCore + CryptoRng>(
        name: impl Into<String>,
        scheme: SignatureScheme,
        rng: &mut R,
    ) -> Self {
        Supplier {
            name: name.into(),
            key: KeyPair::generate(scheme, KeyUsage::SupplierSigning, rng),
            serial: 0,
        }
    }

    pub fn from_key(name: impl Into<String>, key: KeyPair) -> Result<Self, ForgeError> {
        if key.usage() != KeyUsage::SupplierSigning {
            return Err(CryptoError::KeyUsage {
                requested: KeyUsage::SupplierSigning,
                actual: key.usage(),
            }
            .into());
        }
        Ok(Supplier {
            name: name.into(),
            key,
            serial: 0,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn key(&self) -> &KeyPair {
        &self.key
    }

    pub fn public_key(&self) -> PublicKey {
        self.key.public_key()
    }
}

/// What the supplier hands to the OEM: the certificate and the signed
/// binding to the software binary. The identity private key goes to the
/// ECU and is returned separately by [`supplier_issue`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupplierBundle {
    pub target: BundleTarget,
    pub certificate: Certificate,
    pub binary_digest: [u8; 32],
    pub supplier_key: PublicKey,
    pub signature: Vec<u8>,
}

fn bundle_signing_input(cert_der: &[u8], digest: &[u8; 32]) -> Vec<u8> {
    let mut data = Vec::with_capacity(BUNDLE_LABEL.len() + cert_der.len() + 32);
    data.extend_from_slice(BUNDLE_LABEL);
    data.extend_from_slice(cert_der);
    data.extend_from_slice(digest);
    data
}

impl SupplierBundle {
    /// Certificate subject matches the target name, the certificate's
    /// self-signature holds and the supplier signature verifies.
    pub fn verify(&self) -> bool {
        let Ok(name) = self.target.tlsa_name() else {
            return false;
        };
        self.certificate.subject() == name.as_str()
            && self.certificate.verify_self_signature()
            && self.supplier_key.verify(
                &bundle_signing_input(self.certificate.der(), &self.binary_digest),
                &self.signature,
            )
    }

    pub fn tlsa_name(&self) -> Result<DnsName, RecordError> {
        self.target.tlsa_name()
    }

    /// Line-oriented text form used by the command-line tools.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        match &self.target {
            BundleTarget::Publisher { key, endpoint } => {
                out.push_str(&format!(
                    "publisher {} {} {} {} {}",
                    key.service_id,
                    key.instance_id,
                    key.major,
                    key.minor,
                    format_endpoint(endpoint)
                ));
                if let Some(d) = &key.domain {
                    out.push_str(&format!(" domain {d}"));
                }
                out.push_str(&format!(" vehicle {}\n", key.vehicle));
            }
            BundleTarget::Client(key) => out.push_str(&format!(
                "client {}\n",
                client_tlsa_name(key).expect("valid key")
            )),
        }
        out.push_str(&format!(
            "binary-digest {}\n",
            hex::encode(self.binary_digest)
        ));
        out.push_str(&format!(
            "supplier-signature {}\n",
            BASE64.encode(&self.signature)
        ));
        out.push_str(&self.supplier_key.to_pem());
        out.push_str(&self.certificate.to_pem());
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ForgeError> {
        let bad = |s: &str| ForgeError::BundleFormat(s.to_string());
        let mut target = None;
        let mut digest = None;
        let mut signature = None;
        for line in text.lines().take_while(|l| !l.starts_with("-----")) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.first().copied() {
                Some("publisher") => {
                    let mut plan = VehicleZonePlan::new(DnsName::root());
                    let vehicle_at = fields
                        .iter()
                        .position(|f| *f == "vehicle")
                        .ok_or_else(|| bad("no vehicle"))?;
                    plan.vehicle = DnsName::parse(
                        fields
                            .get(vehicle_at + 1)
                            .ok_or_else(|| bad("no vehicle"))?,
                    )?;
                    plan.parse_publisher(&fields[..vehicle_at], 0)?;
                    let p = plan.publishers.pop().expect("parsed publisher");
                    target = Some(BundleTarget::Publisher {
                        key: p.key,
                        endpoint: p.endpoint,
                    });
                }
                Some("client") => {
                    let name = DnsName::parse(fields.get(1).ok_or_else(|| bad("no client name"))?)?;
                    target = Some(BundleTarget::Client(
                        crate::records::parse_client_tlsa_name(&name)?,
                    ));
                }
                Some("binary-digest") => {
                    let bytes = hex::decode(fields.get(1).ok_or_else(|| bad("no digest"))?)
                        .map_err(|e| bad(&e.to_string()))?;
                    digest = Some(
                        <[u8; 32]>::try_from(bytes.as_slice())
                            .map_err(|_| bad("digest is not 32 bytes"))?,
                    );
                }
                Some("supplier-signature") => {
                    signature = Some(
                        BASE64
                            .decode(fields.get(1).ok_or_else(|| bad("no signature"))?)
                            .map_err(|e| bad(&e.to_string()))?,
                    );
                }
                _ => {}
            }
        }
        let key_start = text
            .find("-----BEGIN PUBLIC KEY-----")
            .ok_or_else(|| bad("no supplier key"))?;
        let cert_start = text
            .find("-----BEGIN CERTIFICATE-----")
            .ok_or_else(|| bad("no certificate"))?;
        Ok(SupplierBundle {
            target: target.ok_or_else(|| bad("no publisher/client line"))?,
            certificate: Certificate::from_pem(&text[cert_start..])?,
            binary_digest: digest.ok_or_else(|| bad("no binary-digest"))?,
            supplier_key: PublicKey::from_pem(&text[key_start..cert_start])?,
            signature: signature.ok_or_else(|| bad("no supplier-signature"))?,
        })
    }
}

/// Generates an identity key and certificate for `target` and signs the
/// certificate with the binary digest. Returns the bundle for the OEM and
/// the private key for the ECU.
pub fn supplier_issue<R: RngCore + CryptoRng>(
    supplier: &mut Supplier,
    target: BundleTarget,
    binary: &[u8],
    window: ValidityWindow,
    scheme: SignatureScheme,
    rng: &mut R,
) -> Result<(SupplierBundle, KeyPair), ForgeError> {
    if window.not_after <= window.not_before {
        return Err(ForgeError::EmptyValidity);
    }
    let name = target.tlsa_name()?;
    let key = KeyPair::generate(scheme, KeyUsage::ServiceIdentity, rng);
    supplier.serial += 1;
    let certificate = Certificate::issue(
        &key,
        &name,
        window.not_before,
        window.not_after,
        supplier.serial,
    )?;
    let binary_digest: [u8; 32] = Sha256::digest(binary).into();
    let signature = supplier.key.sign(
        KeyUsage::SupplierSigning,
        &bundle_signing_input(certificate.der(), &binary_digest),
    )?;
    let bundle = SupplierBundle {
        target,
        certificate,
        binary_digest,
        supplier_key: supplier.public_key(),
        signature,
    };
    Ok((bundle, key))
}

/// Whether a certificate may be published in more than one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CertificateUniqueness {
    /// One certificate per vehicle and service; the subject names the
    /// vehicle.
    #[default]
    PerCarAndService,
    /// One certificate per service across the fleet. Only for contrast
    /// experiments: a leaked key then works in every vehicle.
    PerService,
}

/// What a publication changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublishOutcome {
    pub tlsa_added: bool,
    pub svcb_added: bool,
}

/// The OEM: holds the key-signing key and signs vehicle zones.
#[derive(Debug, Clone)]
pub struct Oem {
    ksk: KeyPair,
    uniqueness: CertificateUniqueness,
}

impl Oem {
    pub fn generate<R: RngCore + CryptoRng>(scheme: SignatureScheme, rng: &mut R) -> Self {
        Oem {
            ksk: KeyPair::generate(scheme, KeyUsage::KeySigning, rng),
            uniqueness: CertificateUniqueness::default(),
        }
    }

    pub fn from_key(ksk: KeyPair) -> Result<Self, ForgeError> {
        if ksk.usage() != KeyUsage::KeySigning {
            return Err(CryptoError::KeyUsage {
                requested: KeyUsage::KeySigning,
                actual: ksk.usage(),
            }
            .into());
        }
        Ok(Oem {
            ksk,
            uniqueness: CertificateUniqueness::default(),
        })
    }

    pub fn with_uniqueness(mut self, uniqueness: CertificateUniqueness) -> Self {
        self.uniqueness = uniqueness;
        self
    }

    pub fn ksk(&self) -> &KeyPair {
        &self.ksk
    }

    /// Trust anchor for a vehicle zone signed by this OEM.
    pub fn anchor(&self, vehicle: &DnsName) -> TrustAnchor {
        TrustAnchor::new(vehicle.clone(), &self.ksk.public_key())
    }

    /// An empty vehicle zone with a fresh ZSK whose DNSKEY rrset is signed
    /// by the KSK.
    pub fn new_vehicle_zone<R: RngCore + CryptoRng>(
        &self,
        vehicle: &DnsName,
        scheme: SignatureScheme,
        now: UnixTime,
        rng: &mut R,
    ) -> Result<Zone, ForgeError> {
        let zsk = KeyPair::generate(scheme, KeyUsage::ZoneSigning, rng);
        let mut zone = Zone::new(vehicle.clone());
        zone.install_keys(zsk, &self.ksk, now)?;
        Ok(zone)
    }

    /// Checks the bundle and publishes its records, re-signing the touched
    /// rrsets. Publishing the same bundle twice changes nothing.
    pub fn publish(
        &self,
        zone: &mut Zone,
        bundle: &SupplierBundle,
        now: UnixTime,
    ) -> Result<PublishOutcome, ForgeError> {
        let issued_name = bundle.tlsa_name()?;
        if !bundle.verify() {
            return Err(ForgeError::BadBundleSignature { name: issued_name });
        }
        let target = if bundle.target.vehicle() == zone.apex() {
            bundle.target.clone()
        } else {
            match self.uniqueness {
                CertificateUniqueness::PerCarAndService => {
                    return Err(ForgeError::ForeignVehicle {
                        name: issued_name,
                        apex: zone.apex().clone(),
                    })
                }
                CertificateUniqueness::PerService => bundle.target.rehome(zone.apex()),
            }
        };
        let tlsa_name = target.tlsa_name()?;
        let mut outcome = PublishOutcome {
            tlsa_added: false,
            svcb_added: false,
        };
        if let BundleTarget::Publisher { key, endpoint } = &target {
            let svcb = Record::new(
                publisher_service_name(key)?,
                DEFAULT_TTL,
                RData::Svcb(SvcbParams::for_service(key, *endpoint)),
            );
            outcome.svcb_added = publish_record(zone, svcb, now)?;
        }
        let tlsa = Record::new(
            tlsa_name,
            DEFAULT_TTL,
            RData::Tlsa(build_tlsa(&bundle.certificate)),
        );
        outcome.tlsa_added = publish_record(zone, tlsa, now)?;
        Ok(outcome)
    }

    /// Withdraws a certificate from the zone.
    pub fn revoke(
        &self,
        zone: &mut Zone,
        bundle: &SupplierBundle,
        now: UnixTime,
    ) -> Result<(), ForgeError> {
        let name = bundle.target.rehome(zone.apex()).tlsa_name()?;
        zone.rollover_remove(&name, &RData::Tlsa(build_tlsa(&bundle.certificate)), now)?;
        Ok(())
    }
}

fn publish_record(zone: &mut Zone, record: Record, now: UnixTime) -> Result<bool, ForgeError> {
    let present = zone
        .get(&record.name, record.data.rtype())
        .is_some_and(|s| s.rrset.rdatas().contains(&record.data));
    if present {
        return Ok(false);
    }
    zone.rollover_add(record, now)?;
    Ok(true)
}

/// A publisher in a vehicle plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedPublisher {
    pub key: ServiceKey,
    pub endpoint: Ipv4Endpoint,
    /// Host the publisher runs on, for the simulator.
    pub node: Option<String>,
}

/// A subscriber in a vehicle plan: its client identity and the service it
/// subscribes to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedSubscriber {
    pub client: ClientKey,
    pub target: ServiceScope,
    pub node: Option<String>,
}

/// All service and client identities of one vehicle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VehicleZonePlan {
    pub vehicle: DnsName,
    pub publishers: Vec<PlannedPublisher>,
    pub subscribers: Vec<PlannedSubscriber>,
}

fn format_endpoint(ep: &Ipv4Endpoint) -> String {
    let proto = if ep.protocol == PROTO_TCP {
        "tcp"
    } else {
        "udp"
    };
    format!("{}:{}/{}", ep.address, ep.port, proto)
}

/// Parses `10.0.0.2:5000/udp`; the protocol suffix defaults to UDP.
pub fn parse_endpoint(text: &str) -> Option<Ipv4Endpoint> {
    let (addr_port, proto) = match text.split_once('/') {
        Some((a, "udp")) => (a, PROTO_UDP),
        Some((a, "tcp")) => (a, PROTO_TCP),
        Some(_) => return None,
        None => (text, PROTO_UDP),
    };
    let (addr, port) = addr_port.split_once(':')?;
    Some(Ipv4Endpoint {
        address: addr.parse::<Ipv4Addr>().ok()?,
        protocol: proto,
        port: port.parse().ok()?,
    })
}

impl VehicleZonePlan {
    pub fn new(vehicle: DnsName) -> Self {
        VehicleZonePlan {
            vehicle,
            publishers: Vec::new(),
            subscribers: Vec::new(),
        }
    }

    /// Every identity that needs a bundle, publishers first.
    pub fn targets(&self) -> Vec<BundleTarget> {
        let pubs = self.publishers.iter().map(|p| BundleTarget::Publisher {
            key: p.key.clone(),
            endpoint: p.endpoint,
        });
        let subs = self
            .subscribers
            .iter()
            .map(|s| BundleTarget::Client(s.client.clone()));
        pubs.chain(subs).collect()
    }

    /// Record names the zone will hold: SVCB and TLSA per publisher, TLSA
    /// per subscriber.
    pub fn record_names(&self) -> Result<Vec<DnsName>, ForgeError> {
        let mut names = Vec::with_capacity(2 * self.publishers.len() + self.subscribers.len());
        for p in &self.publishers {
            names.push(publisher_service_name(&p.key)?);
            names.push(publisher_tlsa_name(&p.key, p.endpoint.port)?);
        }
        for s in &self.subscribers {
            names.push(client_tlsa_name(&s.client)?);
        }
        Ok(names)
    }

    /// Names are unique and each subscriber's target exists. A
    /// service-specific client name must name its target.
    pub fn validate(&self) -> Result<(), ForgeError> {
        let mut seen = BTreeSet::new();
        for name in self.record_names()? {
            if !seen.insert(name.clone()) {
                return Err(ForgeError::DuplicateName { name });
            }
        }
        let scopes: BTreeSet<ServiceScope> =
            self.publishers.iter().map(|p| p.key.scope()).collect();
        for s in &self.subscribers {
            let client = client_tlsa_name(&s.client)?;
            let unknown = || ForgeError::UnknownTarget {
                client: client.clone(),
                service: s.target.service_id,
                instance: s.target.instance_id,
                major: s.target.major,
            };
            if !scopes.contains(&s.target) {
                return Err(unknown());
            }
            if s.client.kind() == ScopeKind::ServiceSpecific && s.client.service != Some(s.target) {
                return Err(unknown());
            }
        }
        Ok(())
    }

    fn parse_publisher(&mut self, fields: &[&str], line: usize) -> Result<(), ForgeError> {
        let err = |reason: String| ForgeError::Plan { line, reason };
        if fields.len() < 6 {
            return Err(err(
                "expected: publisher SERVICE INSTANCE MAJOR MINOR ADDR:PORT[/udp|tcp]".into(),
            ));
        }
        let num = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| err(format!("bad number {s:?}")))
        };
        let service =
            u16::try_from(num(fields[1])?).map_err(|_| err("service id out of range".into()))?;
        let instance =
            u16::try_from(num(fields[2])?).map_err(|_| err("instance out of range".into()))?;
        let major = u8::try_from(num(fields[3])?).map_err(|_| err("major out of range".into()))?;
        let minor = num(fields[4])?;
        let endpoint = parse_endpoint(fields[5])
            .ok_or_else(|| err(format!("bad endpoint {:?}", fields[5])))?;
        let mut key = ServiceKey::new(service, instance, major, minor, self.vehicle.clone());
        let mut node = None;
        let mut rest = fields[6..].iter();
        while let Some(word) = rest.next() {
            let value = rest
                .next()
                .ok_or_else(|| err(format!("{word} needs a value")))?;
            match *word {
                "domain" => key = key.with_domain(*value),
                "on" => node = Some(value.to_string()),
                other => return Err(err(format!("unknown publisher attribute {other:?}"))),
            }
        }
        self.publishers.push(PlannedPublisher {
            key,
            endpoint,
            node,
        });
        Ok(())
    }

    fn parse_subscriber(&mut self, fields: &[&str], line: usize) -> Result<(), ForgeError> {
        let err = |reason: String| ForgeError::Plan { line, reason };
        if fields.len() < 6 || fields[2] != "to" {
            return Err(err(
                "expected: subscriber CLIENT to SERVICE INSTANCE MAJOR".into()
            ));
        }
        let num = |s: &str| {
            s.parse::<u16>()
                .map_err(|_| err(format!("bad number {s:?}")))
        };
        let client_id = num(fields[1])?;
        let target = ServiceScope {
            service_id: num(fields[3])?,
            instance_id: num(fields[4])?,
            major: u8::try_from(num(fields[5])?).map_err(|_| err("major out of range".into()))?,
        };
        let mut client = ClientKey::service_specific(client_id, target, self.vehicle.clone());
        let mut node = None;
        let mut rest = fields[6..].iter();
        while let Some(word) = rest.next() {
            match *word {
                "scope" => match rest.next().copied() {
                    Some("service") => {}
                    Some("vehicle") => {
                        client = ClientKey::vehicle_wide(client_id, self.vehicle.clone())
                    }
                    Some("domain") => {
                        let d = rest
                            .next()
                            .ok_or_else(|| err("scope domain needs a label".into()))?;
                        client = ClientKey::domain_wide(client_id, *d, self.vehicle.clone());
                    }
                    other => return Err(err(format!("unknown scope {other:?}"))),
                },
                "domain" => {
                    let d = rest
                        .next()
                        .ok_or_else(|| err("domain needs a label".into()))?;
                    client.domain = Some(d.to_string());
                }
                "on" => {
                    node = Some(
                        rest.next()
                            .ok_or_else(|| err("on needs a node".into()))?
                            .to_string(),
                    )
                }
                other => return Err(err(format!("unknown subscriber attribute {other:?}"))),
            }
        }
        self.subscribers.push(PlannedSubscriber {
            client,
            target,
            node,
        });
        Ok(())
    }

    /// Handles one plan line. Returns `Ok(false)` for keywords that are not
    /// part of the plan format, so that richer formats can embed plans.
    pub fn parse_line(&mut self, fields: &[&str], line: usize) -> Result<bool, ForgeError> {
        match fields.first().copied() {
            Some("vehicle") => {
                let name = fields.get(1).ok_or_else(|| ForgeError::Plan {
                    line,
                    reason: "vehicle needs a name".into(),
                })?;
                let vehicle = DnsName::parse(name).map_err(|e| ForgeError::Plan {
                    line,
                    reason: e.to_string(),
                })?;
                if !self.publishers.is_empty() || !self.subscribers.is_empty() {
                    return Err(ForgeError::Plan {
                        line,
                        reason: "vehicle must precede publishers and subscribers".into(),
                    });
                }
                self.vehicle = vehicle;
                Ok(true)
            }
            Some("publisher") => self.parse_publisher(fields, line).map(|_| true),
            Some("subscriber") => self.parse_subscriber(fields, line).map(|_| true),
            _ => Ok(false),
        }
    }

    /// Parses a plan file:
    ///
    /// ```text
    /// vehicle vehicle1.oem.
    /// publisher 42 1 2 3 10.0.0.2:5000/udp [domain D] [on NODE]
    /// subscriber 17 to 42 1 2 [scope service|domain D|vehicle] [on NODE]
    /// ```
    ///
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ForgeError> {
        let mut plan = VehicleZonePlan::new(DnsName::parse("vehicle1.oem.").expect("valid name"));
        for (idx, raw) in text.lines().enumerate() {
            let fields: Vec<&str> = raw
                .split('#')
                .next()
                .unwrap_or_default()
                .split_whitespace()
                .collect();
            if fields.is_empty() {
                continue;
            }
            if !plan.parse_line(&fields, idx + 1)? {
                return Err(ForgeError::Plan {
                    line: idx + 1,
                    reason: format!("unknown keyword {:?}", fields[0]),
                });
            }
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("vehicle {}\n", self.vehicle);
        for p in &self.publishers {
            out.push_str(&format!(
                "publisher {} {} {} {} {}",
                p.key.service_id,
                p.key.instance_id,
                p.key.major,
                p.key.minor,
                format_endpoint(&p.endpoint)
            ));
            if let Some(d) = &p.key.domain {
                out.push_str(&format!(" domain {d}"));
            }
            if let Some(n) = &p.node {
                out.push_str(&format!(" on {n}"));
            }
            out.push('\n');
        }
        for s in &self.subscribers {
            let t = &s.target;
            out.push_str(&format!(
                "subscriber {} to {} {} {}",
                s.client.client_id, t.service_id, t.instance_id, t.major
            ));
            match s.client.kind() {
                ScopeKind::ServiceSpecific => {}
                ScopeKind::Domain => out.push_str(&format!(
                    " scope domain {}",
                    s.client.domain.as_deref().unwrap_or_default()
                )),
                ScopeKind::VehicleWide => out.push_str(" scope vehicle"),
            }
            if s.client.kind() == ScopeKind::ServiceSpecific {
                if let Some(d) = &s.client.domain {
                    out.push_str(&format!(" domain {d}"));
                }
            }
            if let Some(n) = &s.node {
                out.push_str(&format!(" on {n}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Builds and signs the zone for `plan` from one bundle per identity.
pub fn build_vehicle_zone(
    plan: &VehicleZonePlan,
    bundles: &[SupplierBundle],
    oem: &Oem,
    zsk: KeyPair,
    now: UnixTime,
) -> Result<Zone, ForgeError> {
    plan.validate()?;
    let mut by_name: BTreeMap<DnsName, &SupplierBundle> = BTreeMap::new();
    for bundle in bundles {
        by_name.insert(bundle.tlsa_name()?, bundle);
    }
    let mut zone = Zone::new(plan.vehicle.clone());
    zone.install_keys(zsk, &oem.ksk, now)?;
    for target in plan.targets() {
        let name = target.tlsa_name()?;
        let bundle = by_name
            .get(&name)
            .ok_or(ForgeError::MissingBundle { name: name.clone() })?;
        if !bundle.verify() {
            return Err(ForgeError::BadBundleSignature { name });
        }
        if let BundleTarget::Publisher { key, endpoint } = &target {
            let svcb = SvcbParams::for_service(key, *endpoint);
            zone.add_record(Record::new(
                publisher_service_name(key)?,
                DEFAULT_TTL,
                RData::Svcb(svcb),
            ))?;
        }
        zone.add_record(Record::new(
            name,
            DEFAULT_TTL,
            RData::Tlsa(build_tlsa(&bundle.certificate)),
        ))?;
    }
    zone.sign(now)?;
    Ok(zone)
}

/// State of one published certificate relative to the audit horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExpiryState {
    Expired,
    ExpiringSoon,
}

impl fmt::Display for ExpiryState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExpiryState::Expired => "expired",
            ExpiryState::ExpiringSoon => "expiring",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditFinding {
    pub name: DnsName,
    pub not_after: u64,
    pub state: ExpiryState,
}

/// Published certificates that are expired or expire within `horizon`
/// seconds of `now`, soonest first. Only full-certificate TLSA records can
/// be inspected; digest records are skipped.
pub fn audit(zone: &Zone, now: UnixTime, horizon: u64) -> Vec<AuditFinding> {
    let mut out = Vec::new();
    for set in zone.signed_rrsets() {
        if set.rrset.rtype != RrType::Tlsa {
            continue;
        }
        for tlsa in set.rrset.rdatas().iter().filter_map(RData::as_tlsa) {
            if tlsa.selector != TLSA_SELECTOR_FULL || tlsa.matching != TLSA_MATCH_EXACT {
                continue;
            }
            let Ok(cert) = Certificate::from_der(tlsa.data.clone()) else {
                continue;
            };
            debug_assert!(match_tlsa(cert.der(), tlsa).unwrap_or(false));
            let state = if cert.not_after() <= now {
                ExpiryState::Expired
            } else if cert.not_after() <= now + horizon {
                ExpiryState::ExpiringSoon
            } else {
                continue;
            };
            out.push(AuditFinding {
                name: set.rrset.name.clone(),
                not_after: cert.not_after(),
                state,
            });
        }
    }
    out.sort_by(|a, b| {
        a.not_after
            .cmp(&b.not_after)
            .then_with(|| a.name.cmp(&b.name))
    });
    out
}

/// Issues bundles for every identity in `plan`, returning bundles and the
/// matching private keys keyed by TLSA name.
pub fn issue_plan<R: RngCore + CryptoRng>(
    plan: &VehicleZonePlan,
    supplier: &mut Supplier,
    window: ValidityWindow,
    scheme: SignatureScheme,
    rng: &mut R,
) -> Result<(Vec<SupplierBundle>, BTreeMap<DnsName, KeyPair>), ForgeError> {
    let mut bundles = Vec::new();
    let mut keys = BTreeMap::new();
    for target in plan.targets() {
        let name = target.tlsa_name()?;
        let binary = format!("binary for {name}");
        let (bundle, key) =
            supplier_issue(supplier, target, binary.as_bytes(), window, scheme, rng)?;
        bundles.push(bundle);
        keys.insert(name, key);
    }
    Ok((bundles, keys))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use super::*;
    use crate::dnssec::{Resolver, ValidationStatus, ZoneServer};
    use std::sync::Arc;

    const NOW: u64 = 1_750_000_000;
    const P256: SignatureScheme = SignatureScheme::EcdsaP256Sha256;

    fn vehicle() -> DnsName {
        DnsName::parse("vehicle1.oem.").unwrap()
    }

    fn golden_publisher() -> BundleTarget {
        BundleTarget::Publisher {
            key: ServiceKey::new(42, 1, 2, 3, vehicle()),
            endpoint: Ipv4Endpoint::udp(Ipv4Addr::new(10, 0, 0, 2), 5000),
        }
    }

    fn small_plan() -> VehicleZonePlan {
        VehicleZonePlan::parse(
            "vehicle vehicle1.oem.\npublisher 42 1 2 3 10.0.0.2:5000/udp on hpc1\nsubscriber 17 to 42 1 2 on zone1\n",
        )
        .unwrap()
    }

    #[test]
    fn issue_names_certificate_after_tlsa_owner() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut supplier = Supplier::generate("tier1", P256, &mut rng);
        let window = ValidityWindow::days(NOW, 365).unwrap();
        let (bundle, key) = supplier_issue(
            &mut supplier,
            golden_publisher(),
            b"fw",
            window,
            P256,
            &mut rng,
        )
        .unwrap();
        assert_eq!(
            bundle.certificate.subject(),
            "_5000._someip.3.2.1.42.service.vehicle1.oem."
        );
        assert!(bundle.verify());
        assert_eq!(key.usage(), KeyUsage::ServiceIdentity);
        assert_eq!(
            ValidityWindow::new(NOW, NOW),
            Err(ForgeError::EmptyValidity)
        );
    }

    #[test]
    fn tampered_bundle_is_refused_and_zone_unchanged() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut supplier = Supplier::generate("tier1", P256, &mut rng);
        let oem = Oem::generate(P256, &mut rng);
        let mut zone = oem
            .new_vehicle_zone(&vehicle(), P256, NOW, &mut rng)
            .unwrap();
        let window = ValidityWindow::days(NOW, 365).unwrap();
        let (mut bundle, _) = supplier_issue(
            &mut supplier,
            golden_publisher(),
            b"fw",
            window,
            P256,
            &mut rng,
        )
        .unwrap();
        bundle.binary_digest[0] ^= 1;
        let before = zone.to_text();
        assert!(matches!(
            oem.publish(&mut zone, &bundle, NOW),
            Err(ForgeError::BadBundleSignature { .. })
        ));
        assert_eq!(zone.to_text(), before);
    }

    #[test]
    fn publish_is_idempotent_and_second_certificate_coexists() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut supplier = Supplier::generate("tier1", P256, &mut rng);
        let oem = Oem::generate(P256, &mut rng);
        let mut zone = oem
            .new_vehicle_zone(&vehicle(), P256, NOW, &mut rng)
            .unwrap();
        let window = ValidityWindow::days(NOW, 365).unwrap();
        let (a, _) = supplier_issue(
            &mut supplier,
            golden_publisher(),
            b"fw",
            window,
            P256,
            &mut rng,
        )
        .unwrap();
        let first = oem.publish(&mut zone, &a, NOW).unwrap();
        assert_eq!(
            first,
            PublishOutcome {
                tlsa_added: true,
                svcb_added: true
            }
        );
        let text = zone.to_text();
        assert_eq!(
            oem.publish(&mut zone, &a, NOW + 5).unwrap(),
            PublishOutcome {
                tlsa_added: false,
                svcb_added: false
            }
        );
        assert_eq!(zone.to_text(), text);

        let (b, _) = supplier_issue(
            &mut supplier,
            golden_publisher(),
            b"fw2",
            window,
            P256,
            &mut rng,
        )
        .unwrap();
        oem.publish(&mut zone, &b, NOW).unwrap();
        let server = ZoneServer::new(zone);
        let resolver = Resolver::new(oem.anchor(&vehicle()), Arc::new(server));
        let name = b.tlsa_name().unwrap();
        let res = resolver.resolve(&name, RrType::Tlsa, NOW).unwrap();
        assert_eq!(res.records.len(), 2);
        assert_eq!(res.status, ValidationStatus::Secure);
        let svcb = resolver.resolve(
            &publisher_service_name(&ServiceKey::new(42, 1, 2, 3, vehicle())).unwrap(),
            RrType::Svcb,
            NOW,
        );
        assert_eq!(svcb.unwrap().status, ValidationStatus::Secure);
    }

    #[test]
    fn foreign_vehicle_bundle_needs_per_service_mode() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut supplier = Supplier::generate("tier1", P256, &mut rng);
        let oem = Oem::generate(P256, &mut rng);
        let other = DnsName::parse("vehicle2.oem.").unwrap();
        let mut zone = oem.new_vehicle_zone(&other, P256, NOW, &mut rng).unwrap();
        let window = ValidityWindow::days(NOW, 365).unwrap();
        let (bundle, _) = supplier_issue(
            &mut supplier,
            golden_publisher(),
            b"fw",
            window,
            P256,
            &mut rng,
        )
        .unwrap();
        assert!(matches!(
            oem.publish(&mut zone, &bundle, NOW),
            Err(ForgeError::ForeignVehicle { .. })
        ));
        let lax = oem
            .clone()
            .with_uniqueness(CertificateUniqueness::PerService);
        lax.publish(&mut zone, &bundle, NOW).unwrap();
        let name = DnsName::parse("_5000._someip.3.2.1.42.service.vehicle2.oem.").unwrap();
        assert!(zone.get(&name, RrType::Tlsa).is_some());
    }

    #[test]
    fn minimal_plan_builds_three_names() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let plan = small_plan();
        let mut supplier = Supplier::generate("tier1", P256, &mut rng);
        let oem = Oem::generate(P256, &mut rng);
        let window = ValidityWindow::days(NOW, 365).unwrap();
        let (bundles, _) = issue_plan(&plan, &mut supplier, window, P256, &mut rng).unwrap();
        let zsk = KeyPair::generate(P256, KeyUsage::ZoneSigning, &mut rng);
        let zone = build_vehicle_zone(&plan, &bundles, &oem, zsk, NOW).unwrap();
        assert_eq!(zone.record_names().len(), 3);
        assert_eq!(zone.data_rrset_count(), 3);
        assert!(zone
            .verify_all(&oem.anchor(&vehicle()), NOW)
            .iter()
            .all(|(_, _, s)| *s == ValidationStatus::Secure));

        let zsk = KeyPair::generate(P256, KeyUsage::ZoneSigning, &mut rng);
        assert!(matches!(
            build_vehicle_zone(&plan, &bundles[..1], &oem, zsk, NOW),
            Err(ForgeError::MissingBundle { .. })
        ));
    }

    #[test]
    fn plan_rejects_duplicates_and_dangling_targets() {
        let dup = "publisher 42 1 2 3 10.0.0.2:5000\npublisher 42 1 2 3 10.0.0.3:5000\n";
        assert!(matches!(
            VehicleZonePlan::parse(dup),
            Err(ForgeError::DuplicateName { .. })
        ));
        let dangling = "publisher 42 1 2 3 10.0.0.2:5000\nsubscriber 17 to 43 1 2\n";
        assert!(matches!(
            VehicleZonePlan::parse(dangling),
            Err(ForgeError::UnknownTarget { .. })
        ));
        let broad = "publisher 42 1 2 3 10.0.0.2:5000\nsubscriber 17 to 42 1 2 scope vehicle\n";
        assert_eq!(
            VehicleZonePlan::parse(broad).unwrap().subscribers[0]
                .client
                .kind(),
            ScopeKind::VehicleWide
        );
        assert!(matches!(
            VehicleZonePlan::parse("bogus 1\n"),
            Err(ForgeError::Plan { line: 1, .. })
        ));
    }

    #[test]
    fn plan_text_round_trips() {
        let text =
            "vehicle vehicle1.oem.\npublisher 42 1 2 3 10.0.0.2:5000/udp domain adas on hpc1\n\
                    subscriber 17 to 42 1 2 on zone1\nsubscriber 18 to 42 1 2 scope domain adas\n\
                    subscriber 19 to 42 1 2 scope vehicle\n";
        let plan = VehicleZonePlan::parse(text).unwrap();
        assert_eq!(VehicleZonePlan::parse(&plan.to_text()).unwrap(), plan);
    }

    #[test]
    fn bundle_text_round_trips() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let mut supplier = Supplier::generate("tier1", P256, &mut rng);
        let window = ValidityWindow::days(NOW, 30).unwrap();
        let (bundle, _) = supplier_issue(
            &mut supplier,
            golden_publisher(),
            b"fw",
            window,
            P256,
            &mut rng,
        )
        .unwrap();
        assert_eq!(
            SupplierBundle::from_text(&bundle.to_text()).unwrap(),
            bundle
        );
        let client = BundleTarget::Client(ClientKey::vehicle_wide(17, vehicle()));
        let (bundle, _) =
            supplier_issue(&mut supplier, client, b"fw", window, P256, &mut rng).unwrap();
        assert_eq!(
            SupplierBundle::from_text(&bundle.to_text()).unwrap(),
            bundle
        );
    }

    #[test]
    fn audit_reports_staggered_expiries() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut supplier = Supplier::generate("tier1", P256, &mut rng);
        let oem = Oem::generate(P256, &mut rng);
        let mut zone = oem
            .new_vehicle_zone(&vehicle(), P256, NOW, &mut rng)
            .unwrap();
        let day = 86_400;
        // client i expires i*10 days after NOW - 15 days
        for i in 0..6u16 {
            let target = BundleTarget::Client(ClientKey::vehicle_wide(100 + i, vehicle()));
            let window =
                ValidityWindow::new(NOW - 30 * day, NOW - 15 * day + i as u64 * 10 * day).unwrap();
            let (bundle, _) =
                supplier_issue(&mut supplier, target, b"fw", window, P256, &mut rng).unwrap();
            oem.publish(&mut zone, &bundle, NOW).unwrap();
        }
        let findings = audit(&zone, NOW, 30 * day);
        let states: Vec<(u16, ExpiryState)> = findings
            .iter()
            .map(|f| {
                (
                    crate::records::parse_client_tlsa_name(&f.name)
                        .unwrap()
                        .client_id,
                    f.state,
                )
            })
            .collect();
        // expiries at -15, -5, +5, +15, +25, +35 days
        assert_eq!(
            states,
            vec![
                (100, ExpiryState::Expired),
                (101, ExpiryState::Expired),
                (102, ExpiryState::ExpiringSoon),
                (103, ExpiryState::ExpiringSoon),
                (104, ExpiryState::ExpiringSoon),
            ]
        );
    }

    #[test]
    fn key_usage_separates_supplier_and_zone_signing() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let supplier_key = KeyPair::generate(P256, KeyUsage::SupplierSigning, &mut rng);
        assert!(Oem::from_key(supplier_key.clone()).is_err());
        let mut zone = Zone::new(vehicle());
        let ksk = KeyPair::generate(P256, KeyUsage::KeySigning, &mut rng);
        assert!(zone.install_keys(supplier_key.clone(), &ksk, NOW).is_err());
        let zsk = KeyPair::generate(P256, KeyUsage::ZoneSigning, &mut rng);
        assert!(Certificate::issue(&zsk, &vehicle(), NOW, NOW + 10, 1).is_err());
        assert!(Supplier::from_key("x", zsk).is_err());
    }
}
