//! DNS naming scheme for services and clients, and the SVCB/TLSA record
//! contents that bind them to endpoints and certificates.
//!
//! Publisher names read most-specific-first:
//!
//! ```text
//! _someip.<minor>.<major>.<instance>.<service>[.<domain>].service.<vehicle>.
//! _<port>._someip.<minor>.<major>.<instance>.<service>[.<domain>].service.<vehicle>.
//! _someip-client[.<major>.<instance>.<service>].<client>[.<domain>].client.<vehicle>.
//! ```
//!
//! Numeric labels are decimal without leading zeros. The domain label must
//! not be numeric and must not be `service` or `client`, which keeps every
//! name function injective.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use thiserror::Error;

use crate::wire::{Ipv4Endpoint, SdEntry, PROTO_TCP, PROTO_UDP};

/// First label of publisher names.
pub const SERVICE_PREFIX: &str = "_someip";
/// First label of client names.
pub const CLIENT_PREFIX: &str = "_someip-client";
const SERVICE_TREE: &str = "service";
const CLIENT_TREE: &str = "client";

/// Longest DNS label.
pub const MAX_LABEL: usize = 63;
/// Longest DNS name in wire form.
pub const MAX_NAME_WIRE: usize = 255;

/// Errors raised by name construction, parsing and record presentation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("invalid label {label:?}")]
    BadLabel { label: String },
    #[error("name {name} is not a {expected} name")]
    BadName {
        name: String,
        expected: &'static str,
    },
    #[error("malformed {rrtype} record data: {reason}")]
    BadRdata {
        rrtype: &'static str,
        reason: String,
    },
    #[error("port must be non-zero")]
    ZeroPort,
}

/// An absolute, lowercase DNS name.
///
/// Stored in presentation form with a trailing dot; the root is `"."`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DnsName(String);

fn check_label(label: &str) -> Result<(), RecordError> {
    let ok = !label.is_empty()
        && label.len() <= MAX_LABEL
        && label
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-' || b == b'_');
    if ok {
        Ok(())
    } else {
        Err(RecordError::BadLabel {
            label: label.to_string(),
        })
    }
}

impl DnsName {
    pub fn root() -> Self {
        DnsName(".".to_string())
    }

    /// Parses a name with or without the trailing dot. Upper-case input is
    /// folded to lower case.
    pub fn parse(text: &str) -> Result<Self, RecordError> {
        let text = text.trim();
        if text == "." {
            return Ok(DnsName::root());
        }
        let body = text.strip_suffix('.').unwrap_or(text).to_ascii_lowercase();
        if body.is_empty() {
            return Err(RecordError::BadLabel {
                label: String::new(),
            });
        }
        for label in body.split('.') {
            check_label(label)?;
        }
        let name = DnsName(format!("{body}."));
        if name.wire_len() > MAX_NAME_WIRE {
            return Err(RecordError::BadLabel { label: body });
        }
        Ok(name)
    }

    /// Builds a name from labels, most specific first.
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Result<Self, RecordError> {
        if labels.is_empty() {
            return Ok(DnsName::root());
        }
        for label in labels {
            check_label(label.as_ref())?;
        }
        let joined: Vec<&str> = labels.iter().map(AsRef::as_ref).collect();
        let name = DnsName(format!("{}.", joined.join(".")));
        if name.wire_len() > MAX_NAME_WIRE {
            return Err(RecordError::BadLabel {
                label: joined.join("."),
            });
        }
        Ok(name)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0 == "."
    }

    /// Labels from most to least specific; empty for the root.
    pub fn labels(&self) -> Vec<&str> {
        if self.is_root() {
            Vec::new()
        } else {
            self.0.trim_end_matches('.').split('.').collect()
        }
    }

    /// Number of labels, not counting the root.
    pub fn label_count(&self) -> usize {
        self.labels().len()
    }

    /// Name with `label` prepended.
    pub fn prepend(&self, label: &str) -> Result<Self, RecordError> {
        let mut labels = vec![label];
        labels.extend(self.labels());
        DnsName::from_labels(&labels)
    }

    /// Concatenation `self.suffix`; `self` is treated as relative.
    pub fn join(&self, suffix: &DnsName) -> Result<Self, RecordError> {
        let mut labels = self.labels();
        labels.extend(suffix.labels());
        DnsName::from_labels(&labels)
    }

    pub fn is_subdomain_of(&self, other: &DnsName) -> bool {
        other.is_root() || self == other || self.0.ends_with(&format!(".{}", other.0))
    }

    /// Uncompressed wire encoding.
    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.0.len() + 1);
        for label in self.labels() {
            out.push(label.len() as u8);
            out.extend_from_slice(label.as_bytes());
        }
        out.push(0);
        out
    }

    /// Decodes an uncompressed wire name at the start of `bytes`, returning
    /// the name and the number of bytes consumed.
    pub fn from_wire(bytes: &[u8]) -> Result<(Self, usize), RecordError> {
        let mut labels = Vec::new();
        let mut pos = 0;
        loop {
            let len = *bytes.get(pos).ok_or(RecordError::BadLabel {
                label: "<truncated>".into(),
            })? as usize;
            pos += 1;
            if len == 0 {
                break;
            }
            let raw = bytes.get(pos..pos + len).ok_or(RecordError::BadLabel {
                label: "<truncated>".into(),
            })?;
            let label = std::str::from_utf8(raw).map_err(|_| RecordError::BadLabel {
                label: String::from_utf8_lossy(raw).into(),
            })?;
            labels.push(label.to_string());
            pos += len;
            if pos > MAX_NAME_WIRE {
                return Err(RecordError::BadLabel {
                    label: "<too long>".into(),
                });
            }
        }
        Ok((DnsName::from_labels(&labels)?, pos))
    }

    fn wire_len(&self) -> usize {
        if self.is_root() {
            1
        } else {
            self.0.len() + 1
        }
    }
}

impl fmt::Display for DnsName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for DnsName {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DnsName::parse(s)
    }
}

fn check_domain(domain: &str) -> Result<(), RecordError> {
    check_label(domain)?;
    if domain.bytes().all(|b| b.is_ascii_digit()) || domain == SERVICE_TREE || domain == CLIENT_TREE
    {
        return Err(RecordError::BadLabel {
            label: domain.to_string(),
        });
    }
    Ok(())
}

/// Parses a canonical decimal label: no sign, no leading zeros.
fn parse_decimal<T: FromStr>(label: &str) -> Option<T> {
    let canonical = !label.is_empty()
        && label.bytes().all(|b| b.is_ascii_digit())
        && (label == "0" || !label.starts_with('0'));
    if canonical {
        label.parse().ok()
    } else {
        None
    }
}

fn is_decimal(label: &str) -> bool {
    !label.is_empty() && label.bytes().all(|b| b.is_ascii_digit())
}

/// Identity of a service instance offered by a publisher.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ServiceKey {
    pub service_id: u16,
    pub instance_id: u16,
    pub major: u8,
    pub minor: u32,
    pub domain: Option<String>,
    pub vehicle: DnsName,
}

impl ServiceKey {
    pub fn new(service_id: u16, instance_id: u16, major: u8, minor: u32, vehicle: DnsName) -> Self {
        ServiceKey {
            service_id,
            instance_id,
            major,
            minor,
            domain: None,
            vehicle,
        }
    }

    pub fn with_domain(mut self, domain: impl Into<String>) -> Self {
        self.domain = Some(domain.into());
        self
    }

    /// The (service, instance, major) triple a client scope refers to.
    pub fn scope(&self) -> ServiceScope {
        ServiceScope {
            service_id: self.service_id,
            instance_id: self.instance_id,
            major: self.major,
        }
    }
}

/// The publisher fields a service-specific client name carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ServiceScope {
    pub service_id: u16,
    pub instance_id: u16,
    pub major: u8,
}

/// How broadly a client name grants access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScopeKind {
    ServiceSpecific,
    Domain,
    VehicleWide,
}

impl ScopeKind {
    pub const ALL: [ScopeKind; 3] = [
        ScopeKind::ServiceSpecific,
        ScopeKind::Domain,
        ScopeKind::VehicleWide,
    ];
}

impl fmt::Display for ScopeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScopeKind::ServiceSpecific => "service-specific",
            ScopeKind::Domain => "domain",
            ScopeKind::VehicleWide => "vehicle-wide",
        })
    }
}

/// Identity of a subscribing client.
///
/// The scope kind follows from which optional fields are present: a service
/// scope makes the name service-specific, otherwise a domain makes it
/// domain-wide, otherwise it is vehicle-wide.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClientKey {
    pub client_id: u16,
    pub service: Option<ServiceScope>,
    pub domain: Option<String>,
    pub vehicle: DnsName,
}

impl ClientKey {
    pub fn service_specific(client_id: u16, scope: ServiceScope, vehicle: DnsName) -> Self {
        ClientKey {
            client_id,
            service: Some(scope),
            domain: None,
            vehicle,
        }
    }

    pub fn domain_wide(client_id: u16, domain: impl Into<String>, vehicle: DnsName) -> Self {
        ClientKey {
            client_id,
            service: None,
            domain: Some(domain.into()),
            vehicle,
        }
    }

    pub fn vehicle_wide(client_id: u16, vehicle: DnsName) -> Self {
        ClientKey {
            client_id,
            service: None,
            domain: None,
            vehicle,
        }
    }

    pub fn kind(&self) -> ScopeKind {
        if self.service.is_some() {
            ScopeKind::ServiceSpecific
        } else if self.domain.is_some() {
            ScopeKind::Domain
        } else {
            ScopeKind::VehicleWide
        }
    }
}

/// `_someip.<minor>.<major>.<instance>.<service>[.<domain>].service.<vehicle>.`
pub fn publisher_service_name(key: &ServiceKey) -> Result<DnsName, RecordError> {
    let mut labels = vec![
        SERVICE_PREFIX.to_string(),
        key.minor.to_string(),
        key.major.to_string(),
        key.instance_id.to_string(),
        key.service_id.to_string(),
    ];
    if let Some(domain) = &key.domain {
        check_domain(domain)?;
        labels.push(domain.clone());
    }
    labels.push(SERVICE_TREE.to_string());
    labels.extend(key.vehicle.labels().iter().map(|l| l.to_string()));
    DnsName::from_labels(&labels)
}

/// `_<port>.` followed by [`publisher_service_name`].
pub fn publisher_tlsa_name(key: &ServiceKey, port: u16) -> Result<DnsName, RecordError> {
    if port == 0 {
        return Err(RecordError::ZeroPort);
    }
    publisher_service_name(key)?.prepend(&format!("_{port}"))
}

/// `_someip-client[.<major>.<instance>.<service>].<client>[.<domain>].client.<vehicle>.`
pub fn client_tlsa_name(key: &ClientKey) -> Result<DnsName, RecordError> {
    let mut labels = vec![CLIENT_PREFIX.to_string()];
    if let Some(scope) = &key.service {
        labels.push(scope.major.to_string());
        labels.push(scope.instance_id.to_string());
        labels.push(scope.service_id.to_string());
    }
    labels.push(key.client_id.to_string());
    if let Some(domain) = &key.domain {
        check_domain(domain)?;
        labels.push(domain.clone());
    }
    labels.push(CLIENT_TREE.to_string());
    labels.extend(key.vehicle.labels().iter().map(|l| l.to_string()));
    DnsName::from_labels(&labels)
}

/// Splits `[<domain>.]<tree>.<vehicle...>` starting at `labels[0]`.
fn split_tail(labels: &[&str], tree: &str) -> Option<(Option<String>, DnsName)> {
    let (domain, rest) = match *labels.first()? {
        first if first == tree => (None, &labels[1..]),
        first => {
            if labels.get(1) != Some(&tree) || check_domain(first).is_err() {
                return None;
            }
            (Some(first.to_string()), &labels[2..])
        }
    };
    if rest.is_empty() {
        return None;
    }
    Some((domain, DnsName::from_labels(rest).ok()?))
}

/// Inverse of [`publisher_service_name`].
pub fn parse_publisher_service_name(name: &DnsName) -> Result<ServiceKey, RecordError> {
    let bad = || RecordError::BadName {
        name: name.to_string(),
        expected: "publisher service",
    };
    let labels = name.labels();
    if labels.len() < 7 || labels[0] != SERVICE_PREFIX {
        return Err(bad());
    }
    let minor = parse_decimal(labels[1]).ok_or_else(bad)?;
    let major = parse_decimal(labels[2]).ok_or_else(bad)?;
    let instance_id = parse_decimal(labels[3]).ok_or_else(bad)?;
    let service_id = parse_decimal(labels[4]).ok_or_else(bad)?;
    let (domain, vehicle) = split_tail(&labels[5..], SERVICE_TREE).ok_or_else(bad)?;
    Ok(ServiceKey {
        service_id,
        instance_id,
        major,
        minor,
        domain,
        vehicle,
    })
}

/// Inverse of [`publisher_tlsa_name`].
pub fn parse_publisher_tlsa_name(name: &DnsName) -> Result<(ServiceKey, u16), RecordError> {
    let bad = || RecordError::BadName {
        name: name.to_string(),
        expected: "publisher TLSA",
    };
    let labels = name.labels();
    let port: u16 = labels
        .first()
        .and_then(|l| l.strip_prefix('_'))
        .and_then(parse_decimal)
        .filter(|&p| p != 0)
        .ok_or_else(bad)?;
    let rest = DnsName::from_labels(&labels[1..]).map_err(|_| bad())?;
    let key = parse_publisher_service_name(&rest).map_err(|_| bad())?;
    Ok((key, port))
}

/// Inverse of [`client_tlsa_name`].
pub fn parse_client_tlsa_name(name: &DnsName) -> Result<ClientKey, RecordError> {
    let bad = || RecordError::BadName {
        name: name.to_string(),
        expected: "client TLSA",
    };
    let labels = name.labels();
    if labels.first() != Some(&CLIENT_PREFIX) {
        return Err(bad());
    }
    let numeric = labels[1..].iter().take_while(|l| is_decimal(l)).count();
    let (service, client_label) = match numeric {
        1 => (None, labels[1]),
        4 => {
            let scope = ServiceScope {
                major: parse_decimal(labels[1]).ok_or_else(bad)?,
                instance_id: parse_decimal(labels[2]).ok_or_else(bad)?,
                service_id: parse_decimal(labels[3]).ok_or_else(bad)?,
            };
            (Some(scope), labels[4])
        }
        _ => return Err(bad()),
    };
    let client_id = parse_decimal(client_label).ok_or_else(bad)?;
    let (domain, vehicle) = split_tail(&labels[1 + numeric..], CLIENT_TREE).ok_or_else(bad)?;
    Ok(ClientKey {
        client_id,
        service,
        domain,
        vehicle,
    })
}

/// The identity a TLSA owner name belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Identity {
    Publisher { key: ServiceKey, port: u16 },
    Client(ClientKey),
}

impl Identity {
    pub fn parse(name: &DnsName) -> Result<Self, RecordError> {
        if let Ok((key, port)) = parse_publisher_tlsa_name(name) {
            return Ok(Identity::Publisher { key, port });
        }
        if let Ok(key) = parse_client_tlsa_name(name) {
            return Ok(Identity::Client(key));
        }
        Err(RecordError::BadName {
            name: name.to_string(),
            expected: "publisher or client TLSA",
        })
    }

    /// The TLSA owner name of this identity.
    pub fn tlsa_name(&self) -> Result<DnsName, RecordError> {
        match self {
            Identity::Publisher { key, port } => publisher_tlsa_name(key, *port),
            Identity::Client(key) => client_tlsa_name(key),
        }
    }

    pub fn vehicle(&self) -> &DnsName {
        match self {
            Identity::Publisher { key, .. } => &key.vehicle,
            Identity::Client(key) => &key.vehicle,
        }
    }
}

/// SvcParamKey numbers used in SVCB record data.
pub mod svc_key {
    pub const PORT: u16 = 3;
    pub const IPV4HINT: u16 = 4;
    pub const INSTANCE: u16 = 65280;
    pub const MAJOR: u16 = 65281;
    pub const MINOR: u16 = 65282;
    pub const IP_PROTO: u16 = 65283;
}

/// SVCB record contents describing a publisher endpoint.
///
/// Presentation form:
/// `1 . ipv4hint=10.0.0.2 port=5000 instance=1 major=2 minor=3 ip_proto=17`
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SvcbParams {
    pub priority: u16,
    /// `.` means the owner name itself.
    pub target: DnsName,
    pub ipv4hint: Ipv4Addr,
    pub port: u16,
    pub instance: u16,
    pub major: u8,
    pub minor: u32,
    pub ip_proto: u8,
}

impl SvcbParams {
    /// Record advertising `endpoint` for `key`.
    pub fn for_service(key: &ServiceKey, endpoint: Ipv4Endpoint) -> Self {
        SvcbParams {
            priority: 1,
            target: DnsName::root(),
            ipv4hint: endpoint.address,
            port: endpoint.port,
            instance: key.instance_id,
            major: key.major,
            minor: key.minor,
            ip_proto: endpoint.protocol,
        }
    }

    pub fn endpoint(&self) -> Ipv4Endpoint {
        Ipv4Endpoint {
            address: self.ipv4hint,
            protocol: self.ip_proto,
            port: self.port,
        }
    }

    /// RFC 9460 wire form: priority, target, then parameters in key order.
    pub fn to_rdata(&self) -> Vec<u8> {
        let mut out = self.priority.to_be_bytes().to_vec();
        out.extend_from_slice(&self.target.to_wire());
        let mut param = |key: u16, value: &[u8]| {
            out.extend_from_slice(&key.to_be_bytes());
            out.extend_from_slice(&(value.len() as u16).to_be_bytes());
            out.extend_from_slice(value);
        };
        param(svc_key::PORT, &self.port.to_be_bytes());
        param(svc_key::IPV4HINT, &self.ipv4hint.octets());
        param(svc_key::INSTANCE, &self.instance.to_be_bytes());
        param(svc_key::MAJOR, &[self.major]);
        param(svc_key::MINOR, &self.minor.to_be_bytes());
        param(svc_key::IP_PROTO, &[self.ip_proto]);
        out
    }

    pub fn from_rdata(data: &[u8]) -> Result<Self, RecordError> {
        let bad = |reason: &str| RecordError::BadRdata {
            rrtype: "SVCB",
            reason: reason.to_string(),
        };
        if data.len() < 3 {
            return Err(bad("truncated"));
        }
        let priority = u16::from_be_bytes([data[0], data[1]]);
        let (target, used) = DnsName::from_wire(&data[2..])?;
        let mut builder = SvcbBuilder::new(priority, target);
        let mut pos = 2 + used;
        let mut last_key = None;
        while pos < data.len() {
            let header = data
                .get(pos..pos + 4)
                .ok_or_else(|| bad("truncated parameter"))?;
            let key = u16::from_be_bytes([header[0], header[1]]);
            let len = u16::from_be_bytes([header[2], header[3]]) as usize;
            if last_key.is_some_and(|k| k >= key) {
                return Err(bad("parameters out of order"));
            }
            last_key = Some(key);
            let value = data
                .get(pos + 4..pos + 4 + len)
                .ok_or_else(|| bad("truncated value"))?;
            builder.set_wire(key, value)?;
            pos += 4 + len;
        }
        builder.finish()
    }
}

struct SvcbBuilder {
    priority: u16,
    target: DnsName,
    ipv4hint: Option<Ipv4Addr>,
    port: Option<u16>,
    instance: Option<u16>,
    major: Option<u8>,
    minor: Option<u32>,
    ip_proto: Option<u8>,
}

fn svcb_error(reason: impl Into<String>) -> RecordError {
    RecordError::BadRdata {
        rrtype: "SVCB",
        reason: reason.into(),
    }
}

impl SvcbBuilder {
    fn new(priority: u16, target: DnsName) -> Self {
        SvcbBuilder {
            priority,
            target,
            ipv4hint: None,
            port: None,
            instance: None,
            major: None,
            minor: None,
            ip_proto: None,
        }
    }

    fn set_wire(&mut self, key: u16, v: &[u8]) -> Result<(), RecordError> {
        let wrong = || svcb_error(format!("bad length for key{key}"));
        match key {
            svc_key::PORT => {
                self.port = Some(u16::from_be_bytes(v.try_into().map_err(|_| wrong())?))
            }
            svc_key::IPV4HINT => {
                // only the first hint is kept; more than one is not produced
                if v.len() < 4 || !v.len().is_multiple_of(4) {
                    return Err(wrong());
                }
                self.ipv4hint = Some(Ipv4Addr::new(v[0], v[1], v[2], v[3]));
            }
            svc_key::INSTANCE => {
                self.instance = Some(u16::from_be_bytes(v.try_into().map_err(|_| wrong())?))
            }
            svc_key::MAJOR => {
                let [b]: [u8; 1] = v.try_into().map_err(|_| wrong())?;
                self.major = Some(b);
            }
            svc_key::MINOR => {
                self.minor = Some(u32::from_be_bytes(v.try_into().map_err(|_| wrong())?))
            }
            svc_key::IP_PROTO => {
                let [b]: [u8; 1] = v.try_into().map_err(|_| wrong())?;
                self.ip_proto = Some(b);
            }
            _ => {}
        }
        Ok(())
    }

    fn set_text(&mut self, key: &str, value: &str) -> Result<(), RecordError> {
        let number = |v: &str| -> Result<u64, RecordError> {
            v.parse()
                .map_err(|_| svcb_error(format!("bad value {v:?} for {key}")))
        };
        let key_num = match key {
            "port" => svc_key::PORT,
            "ipv4hint" => svc_key::IPV4HINT,
            "instance" => svc_key::INSTANCE,
            "major" => svc_key::MAJOR,
            "minor" => svc_key::MINOR,
            "ip_proto" => svc_key::IP_PROTO,
            other => match other
                .strip_prefix("key")
                .and_then(|n| n.parse::<u16>().ok())
            {
                Some(n) => n,
                None => return Err(svcb_error(format!("unknown key {other}"))),
            },
        };
        let range = |v: u64, max: u64| {
            if v <= max {
                Ok(v)
            } else {
                Err(svcb_error(format!("{key}={v} out of range")))
            }
        };
        match key_num {
            svc_key::IPV4HINT => {
                let first = value.split(',').next().unwrap_or_default();
                self.ipv4hint = Some(
                    first
                        .parse()
                        .map_err(|_| svcb_error(format!("bad ipv4hint {value:?}")))?,
                );
            }
            svc_key::PORT => self.port = Some(range(number(value)?, u16::MAX as u64)? as u16),
            svc_key::INSTANCE => {
                self.instance = Some(range(number(value)?, u16::MAX as u64)? as u16)
            }
            svc_key::MAJOR => self.major = Some(range(number(value)?, u8::MAX as u64)? as u8),
            svc_key::MINOR => self.minor = Some(range(number(value)?, u32::MAX as u64)? as u32),
            svc_key::IP_PROTO => self.ip_proto = Some(range(number(value)?, u8::MAX as u64)? as u8),
            _ => {}
        }
        Ok(())
    }

    fn finish(self) -> Result<SvcbParams, RecordError> {
        let missing = |k: &str| svcb_error(format!("missing {k}"));
        let ip_proto = self.ip_proto.ok_or_else(|| missing("ip_proto"))?;
        if ip_proto != PROTO_TCP && ip_proto != PROTO_UDP {
            return Err(svcb_error(format!(
                "ip_proto {ip_proto} is neither 6 nor 17"
            )));
        }
        Ok(SvcbParams {
            priority: self.priority,
            target: self.target,
            ipv4hint: self.ipv4hint.ok_or_else(|| missing("ipv4hint"))?,
            port: self.port.ok_or_else(|| missing("port"))?,
            instance: self.instance.ok_or_else(|| missing("instance"))?,
            major: self.major.ok_or_else(|| missing("major"))?,
            minor: self.minor.ok_or_else(|| missing("minor"))?,
            ip_proto,
        })
    }
}

impl fmt::Display for SvcbParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} ipv4hint={} port={} instance={} major={} minor={} ip_proto={}",
            self.priority,
            self.target,
            self.ipv4hint,
            self.port,
            self.instance,
            self.major,
            self.minor,
            self.ip_proto
        )
    }
}

impl FromStr for SvcbParams {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split_whitespace();
        let priority = parts
            .next()
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| svcb_error("missing priority"))?;
        let target = DnsName::parse(parts.next().ok_or_else(|| svcb_error("missing target"))?)?;
        let mut builder = SvcbBuilder::new(priority, target);
        for part in parts {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| svcb_error(format!("bad parameter {part:?}")))?;
            builder.set_text(key, value.trim_matches('"'))?;
        }
        builder.finish()
    }
}

/// Returns the first record whose endpoint and version fields all equal the
/// offer's.
pub fn match_offer_against_svcb<'a>(
    offer: &SdEntry,
    endpoint: &Ipv4Endpoint,
    records: &'a [SvcbParams],
) -> Option<&'a SvcbParams> {
    records.iter().find(|r| {
        r.ipv4hint == endpoint.address
            && r.port == endpoint.port
            && r.ip_proto == endpoint.protocol
            && r.instance == offer.instance_id
            && r.major == offer.major_version
            && r.minor == offer.minor_or_eventgroup
    })
}

/// DANE-EE certificate usage.
pub const TLSA_USAGE_DANE_EE: u8 = 3;
/// Selector: full certificate.
pub const TLSA_SELECTOR_FULL: u8 = 0;
/// Matching type: exact bytes.
pub const TLSA_MATCH_EXACT: u8 = 0;
/// Matching type: SHA-256 digest.
pub const TLSA_MATCH_SHA256: u8 = 1;

/// TLSA record contents.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TlsaParams {
    pub usage: u8,
    pub selector: u8,
    pub matching: u8,
    pub data: Vec<u8>,
}

impl TlsaParams {
    /// `3 0 0` record carrying the full DER certificate.
    pub fn full_certificate(der: Vec<u8>) -> Self {
        TlsaParams {
            usage: TLSA_USAGE_DANE_EE,
            selector: TLSA_SELECTOR_FULL,
            matching: TLSA_MATCH_EXACT,
            data: der,
        }
    }

    pub fn to_rdata(&self) -> Vec<u8> {
        let mut out = vec![self.usage, self.selector, self.matching];
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_rdata(data: &[u8]) -> Result<Self, RecordError> {
        if data.len() < 3 {
            return Err(RecordError::BadRdata {
                rrtype: "TLSA",
                reason: "truncated".into(),
            });
        }
        Ok(TlsaParams {
            usage: data[0],
            selector: data[1],
            matching: data[2],
            data: data[3..].to_vec(),
        })
    }
}

impl fmt::Display for TlsaParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {}",
            self.usage,
            self.selector,
            self.matching,
            hex::encode(&self.data)
        )
    }
}

impl FromStr for TlsaParams {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |reason: &str| RecordError::BadRdata {
            rrtype: "TLSA",
            reason: reason.to_string(),
        };
        let cleaned: String = s.chars().filter(|c| *c != '(' && *c != ')').collect();
        let mut parts = cleaned.split_whitespace();
        let mut field = |name: &str| -> Result<u8, RecordError> {
            parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| bad(name))
        };
        let usage = field("usage")?;
        let selector = field("selector")?;
        let matching = field("matching type")?;
        let hex_data: String = parts.collect();
        let data = hex::decode(hex_data).map_err(|_| bad("association data is not hex"))?;
        Ok(TlsaParams {
            usage,
            selector,
            matching,
            data,
        })
    }
}
