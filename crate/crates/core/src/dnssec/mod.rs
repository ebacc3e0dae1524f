//! DNSSEC for the per-vehicle zone: record types, canonical signing and
//! validation, the zone store, presentation-format zone files and a
//! validating caching resolver.
//!
//! The chain of trust has two levels. The OEM key-signing key is the trust
//! anchor and signs the zone's DNSKEY rrset; the vehicle zone-signing key in
//! that rrset signs every other rrset.

mod presentation;
mod resolver;
mod zone;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::crypto::{CryptoError, KeyPair, KeyUsage, PublicKey, SignatureScheme};
use crate::records::{DnsName, RecordError, SvcbParams, TlsaParams};

pub use presentation::{format_rrsig_time, parse_rrsig_time, parse_zone_text, ZoneText};
pub use resolver::{
    Answer, AnswerKind, CacheEntry, CachedAnswer, ExpiryPolicy, PreloadReport, Resolution,
    ResolveError, Resolver, ResolverStats, SourceError, ZoneServer, ZoneSource,
};
pub use zone::{sign_zone, Zone, ZoneKeys};

/// Default record TTL in seconds.
pub const DEFAULT_TTL: u32 = 86_400;
/// Default RRSIG validity in seconds.
pub const SIGNATURE_VALIDITY: u32 = 30 * 86_400;
/// TTL of cached negative answers in seconds.
pub const NEGATIVE_TTL: u32 = 60;
/// DNSKEY flags of a zone-signing key.
pub const FLAGS_ZSK: u16 = 256;
/// DNSKEY flags of a key-signing key (zone key + secure entry point).
pub const FLAGS_KSK: u16 = 257;
const CLASS_IN: u16 = 1;

/// Seconds since the Unix epoch. DNSSEC validity fields are the low 32
/// bits of this value.
pub type UnixTime = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DnssecError {
    #[error("zone has no signing keys")]
    MissingKey,
    #[error("name {0} is not in the zone")]
    UnknownName(DnsName),
    #[error("record not present at {0}")]
    UnknownRecord(DnsName),
    #[error("name {name} is outside zone {apex}")]
    OutOfZone { name: DnsName, apex: DnsName },
    #[error("record type {0} is managed by the signer")]
    ReservedType(RrType),
    #[error("zone file line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Record types handled by the zone store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RrType {
    Dnskey,
    Rrsig,
    Tlsa,
    Svcb,
}

impl RrType {
    pub fn code(self) -> u16 {
        match self {
            RrType::Rrsig => 46,
            RrType::Dnskey => 48,
            RrType::Tlsa => 52,
            RrType::Svcb => 64,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        match code {
            46 => Some(RrType::Rrsig),
            48 => Some(RrType::Dnskey),
            52 => Some(RrType::Tlsa),
            64 => Some(RrType::Svcb),
            _ => None,
        }
    }
}

impl fmt::Display for RrType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RrType::Dnskey => "DNSKEY",
            RrType::Rrsig => "RRSIG",
            RrType::Tlsa => "TLSA",
            RrType::Svcb => "SVCB",
        })
    }
}

impl FromStr for RrType {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "DNSKEY" => Ok(RrType::Dnskey),
            "RRSIG" => Ok(RrType::Rrsig),
            "TLSA" => Ok(RrType::Tlsa),
            "SVCB" => Ok(RrType::Svcb),
            other => Err(RecordError::BadRdata {
                rrtype: "type",
                reason: format!("unsupported type {other}"),
            }),
        }
    }
}

/// DNSKEY record contents.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dnskey {
    pub flags: u16,
    pub protocol: u8,
    pub algorithm: u8,
    pub public_key: Vec<u8>,
}

impl Dnskey {
    pub fn from_key(key: &PublicKey, flags: u16) -> Self {
        Dnskey {
            flags,
            protocol: 3,
            algorithm: key.scheme().dnssec_algorithm(),
            public_key: key.to_dnskey_bytes(),
        }
    }

    pub fn to_rdata(&self) -> Vec<u8> {
        let mut out = self.flags.to_be_bytes().to_vec();
        out.push(self.protocol);
        out.push(self.algorithm);
        out.extend_from_slice(&self.public_key);
        out
    }

    pub fn from_rdata(data: &[u8]) -> Result<Self, RecordError> {
        if data.len() < 4 {
            return Err(RecordError::BadRdata {
                rrtype: "DNSKEY",
                reason: "truncated".into(),
            });
        }
        Ok(Dnskey {
            flags: u16::from_be_bytes([data[0], data[1]]),
            protocol: data[2],
            algorithm: data[3],
            public_key: data[4..].to_vec(),
        })
    }

    /// Key tag as computed over the DNSKEY rdata.
    pub fn key_tag(&self) -> u16 {
        let mut acc: u32 = 0;
        for (i, b) in self.to_rdata().iter().enumerate() {
            acc += if i & 1 == 1 {
                *b as u32
            } else {
                (*b as u32) << 8
            };
        }
        acc += (acc >> 16) & 0xFFFF;
        (acc & 0xFFFF) as u16
    }

    pub fn is_zone_key(&self) -> bool {
        self.flags & 0x0100 != 0
    }

    pub fn public(&self) -> Option<PublicKey> {
        let scheme = SignatureScheme::from_dnssec_algorithm(self.algorithm)?;
        PublicKey::from_dnskey_bytes(scheme, &self.public_key).ok()
    }
}

/// RRSIG record contents.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rrsig {
    pub type_covered: RrType,
    pub algorithm: u8,
    pub labels: u8,
    pub original_ttl: u32,
    pub expiration: u32,
    pub inception: u32,
    pub key_tag: u16,
    pub signer: DnsName,
    pub signature: Vec<u8>,
}

impl Rrsig {
    fn header_rdata(&self) -> Vec<u8> {
        let mut out = self.type_covered.code().to_be_bytes().to_vec();
        out.push(self.algorithm);
        out.push(self.labels);
        out.extend_from_slice(&self.original_ttl.to_be_bytes());
        out.extend_from_slice(&self.expiration.to_be_bytes());
        out.extend_from_slice(&self.inception.to_be_bytes());
        out.extend_from_slice(&self.key_tag.to_be_bytes());
        out.extend_from_slice(&self.signer.to_wire());
        out
    }

    pub fn to_rdata(&self) -> Vec<u8> {
        let mut out = self.header_rdata();
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_rdata(data: &[u8]) -> Result<Self, RecordError> {
        let bad = |r: &str| RecordError::BadRdata {
            rrtype: "RRSIG",
            reason: r.to_string(),
        };
        if data.len() < 19 {
            return Err(bad("truncated"));
        }
        let type_covered = RrType::from_code(u16::from_be_bytes([data[0], data[1]]))
            .ok_or_else(|| bad("unknown covered type"))?;
        let u32_at =
            |i: usize| u32::from_be_bytes([data[i], data[i + 1], data[i + 2], data[i + 3]]);
        let (signer, used) = DnsName::from_wire(&data[18..])?;
        Ok(Rrsig {
            type_covered,
            algorithm: data[2],
            labels: data[3],
            original_ttl: u32_at(4),
            expiration: u32_at(8),
            inception: u32_at(12),
            key_tag: u16::from_be_bytes([data[16], data[17]]),
            signer,
            signature: data[18 + used..].to_vec(),
        })
    }

    /// Whether `now` lies in `[inception, expiration)`.
    pub fn is_current(&self, now: UnixTime) -> bool {
        (self.inception as u64) <= now && now < self.expiration as u64
    }
}

/// Typed record data.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RData {
    Svcb(SvcbParams),
    Tlsa(TlsaParams),
    Dnskey(Dnskey),
    Rrsig(Rrsig),
}

impl RData {
    pub fn rtype(&self) -> RrType {
        match self {
            RData::Svcb(_) => RrType::Svcb,
            RData::Tlsa(_) => RrType::Tlsa,
            RData::Dnskey(_) => RrType::Dnskey,
            RData::Rrsig(_) => RrType::Rrsig,
        }
    }

    pub fn to_wire(&self) -> Vec<u8> {
        match self {
            RData::Svcb(r) => r.to_rdata(),
            RData::Tlsa(r) => r.to_rdata(),
            RData::Dnskey(r) => r.to_rdata(),
            RData::Rrsig(r) => r.to_rdata(),
        }
    }

    pub fn from_wire(rtype: RrType, data: &[u8]) -> Result<Self, RecordError> {
        Ok(match rtype {
            RrType::Svcb => RData::Svcb(SvcbParams::from_rdata(data)?),
            RrType::Tlsa => RData::Tlsa(TlsaParams::from_rdata(data)?),
            RrType::Dnskey => RData::Dnskey(Dnskey::from_rdata(data)?),
            RrType::Rrsig => RData::Rrsig(Rrsig::from_rdata(data)?),
        })
    }

    pub fn as_svcb(&self) -> Option<&SvcbParams> {
        match self {
            RData::Svcb(r) => Some(r),
            _ => None,
        }
    }

    pub fn as_tlsa(&self) -> Option<&TlsaParams> {
        match self {
            RData::Tlsa(r) => Some(r),
            _ => None,
        }
    }

    pub fn as_dnskey(&self) -> Option<&Dnskey> {
        match self {
            RData::Dnskey(r) => Some(r),
            _ => None,
        }
    }
}

/// One resource record.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Record {
    pub name: DnsName,
    pub ttl: u32,
    pub data: RData,
}

impl Record {
    pub fn new(name: DnsName, ttl: u32, data: RData) -> Self {
        Record { name, ttl, data }
    }
}

/// All records of one owner name and type, kept in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rrset {
    pub name: DnsName,
    pub rtype: RrType,
    pub ttl: u32,
    rdatas: Vec<RData>,
}

impl Rrset {
    pub fn new(name: DnsName, rtype: RrType, ttl: u32) -> Self {
        Rrset {
            name,
            rtype,
            ttl,
            rdatas: Vec::new(),
        }
    }

    pub fn from_records(
        name: DnsName,
        ttl: u32,
        rdatas: impl IntoIterator<Item = RData>,
    ) -> Option<Self> {
        let mut iter = rdatas.into_iter().peekable();
        let rtype = iter.peek()?.rtype();
        let mut set = Rrset::new(name, rtype, ttl);
        for rd in iter {
            set.insert(rd);
        }
        Some(set)
    }

    /// Adds `data`; duplicates are ignored. Returns whether it was new.
    ///
    /// # Panics
    ///
    /// Panics if `data` is not of the rrset's type.
    pub fn insert(&mut self, data: RData) -> bool {
        assert_eq!(data.rtype(), self.rtype, "record type does not match rrset");
        let wire = data.to_wire();
        match self.rdatas.binary_search_by(|r| r.to_wire().cmp(&wire)) {
            Ok(_) => false,
            Err(pos) => {
                self.rdatas.insert(pos, data);
                true
            }
        }
    }

    pub fn remove(&mut self, data: &RData) -> bool {
        let before = self.rdatas.len();
        self.rdatas.retain(|r| r != data);
        before != self.rdatas.len()
    }

    pub fn rdatas(&self) -> &[RData] {
        &self.rdatas
    }

    pub fn is_empty(&self) -> bool {
        self.rdatas.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rdatas.len()
    }

    pub fn records(&self) -> impl Iterator<Item = Record> + '_ {
        self.rdatas
            .iter()
            .map(|d| Record::new(self.name.clone(), self.ttl, d.clone()))
    }

    /// Canonical form of the rrset as covered by a signature with
    /// `original_ttl`.
    fn canonical(&self, original_ttl: u32) -> Vec<u8> {
        let owner = self.name.to_wire();
        let mut out = Vec::new();
        let mut wires: Vec<Vec<u8>> = self.rdatas.iter().map(RData::to_wire).collect();
        wires.sort();
        wires.dedup();
        for rdata in wires {
            out.extend_from_slice(&owner);
            out.extend_from_slice(&self.rtype.code().to_be_bytes());
            out.extend_from_slice(&CLASS_IN.to_be_bytes());
            out.extend_from_slice(&original_ttl.to_be_bytes());
            out.extend_from_slice(&(rdata.len() as u16).to_be_bytes());
            out.extend_from_slice(&rdata);
        }
        out
    }
}

/// An rrset with its covering signature, as served by a zone source.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignedRrset {
    pub rrset: Rrset,
    pub rrsig: Option<Rrsig>,
}

/// Outcome of validating an rrset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ValidationStatus {
    /// Verified along an unbroken chain from the trust anchor.
    Secure,
    /// No covering signature, or a negative answer.
    Insecure,
    /// A signature exists but does not verify, or is outside its validity.
    Bogus,
    /// No usable keys to decide.
    Indeterminate,
}

impl fmt::Display for ValidationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// The OEM key-signing key configured as trust anchor for a zone.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TrustAnchor {
    pub apex: DnsName,
    pub dnskey: Dnskey,
}

impl TrustAnchor {
    pub fn new(apex: DnsName, ksk: &PublicKey) -> Self {
        TrustAnchor {
            apex,
            dnskey: Dnskey::from_key(ksk, FLAGS_KSK),
        }
    }
}

/// Signs `rrset` with `key`, which must carry `usage`.
pub fn sign_rrset(
    rrset: &Rrset,
    key: &KeyPair,
    usage: KeyUsage,
    key_tag: u16,
    signer: &DnsName,
    inception: u32,
    expiration: u32,
) -> Result<Rrsig, CryptoError> {
    let mut rrsig = Rrsig {
        type_covered: rrset.rtype,
        algorithm: key.scheme().dnssec_algorithm(),
        labels: rrset.name.label_count() as u8,
        original_ttl: rrset.ttl,
        expiration,
        inception,
        key_tag,
        signer: signer.clone(),
        signature: Vec::new(),
    };
    let mut data = rrsig.header_rdata();
    data.extend_from_slice(&rrset.canonical(rrset.ttl));
    rrsig.signature = key.sign(usage, &data)?;
    Ok(rrsig)
}

/// Checks `rrsig` over `rrset` with one candidate key.
fn verify_with(rrset: &Rrset, rrsig: &Rrsig, key: &Dnskey) -> bool {
    if key.algorithm != rrsig.algorithm || key.key_tag() != rrsig.key_tag {
        return false;
    }
    let Some(public) = key.public() else {
        return false;
    };
    let mut data = rrsig.header_rdata();
    data.extend_from_slice(&rrset.canonical(rrsig.original_ttl));
    public.verify(&data, &rrsig.signature)
}

fn rrsig_applies(rrset: &Rrset, rrsig: &Rrsig, apex: &DnsName, now: UnixTime) -> bool {
    rrsig.type_covered == rrset.rtype
        && rrsig.signer == *apex
        && rrset.name.is_subdomain_of(apex)
        && rrsig.labels as usize <= rrset.name.label_count()
        && rrsig.is_current(now)
}

/// Validates the zone's DNSKEY rrset against the trust anchor. Returns the
/// zone keys when Secure.
pub fn validate_dnskeys(
    dnskeys: &SignedRrset,
    anchor: &TrustAnchor,
    now: UnixTime,
) -> (ValidationStatus, Vec<Dnskey>) {
    let rrset = &dnskeys.rrset;
    if rrset.rtype != RrType::Dnskey || rrset.name != anchor.apex {
        return (ValidationStatus::Bogus, Vec::new());
    }
    let Some(rrsig) = &dnskeys.rrsig else {
        return (ValidationStatus::Insecure, Vec::new());
    };
    let anchor_present = rrset
        .rdatas()
        .iter()
        .any(|r| r.as_dnskey() == Some(&anchor.dnskey));
    if anchor_present
        && rrsig_applies(rrset, rrsig, &anchor.apex, now)
        && verify_with(rrset, rrsig, &anchor.dnskey)
    {
        let keys = rrset
            .rdatas()
            .iter()
            .filter_map(RData::as_dnskey)
            .filter(|k| k.is_zone_key())
            .cloned()
            .collect();
        (ValidationStatus::Secure, keys)
    } else {
        (ValidationStatus::Bogus, Vec::new())
    }
}

/// Validates `rrset` and its signature. `dnskeys` is the zone's signed
/// DNSKEY rrset, itself checked against `anchor`.
pub fn validate_rrset(
    rrset: &Rrset,
    rrsig: Option<&Rrsig>,
    dnskeys: Option<&SignedRrset>,
    anchor: &TrustAnchor,
    now: UnixTime,
) -> ValidationStatus {
    if rrset.rtype == RrType::Dnskey {
        let signed = SignedRrset {
            rrset: rrset.clone(),
            rrsig: rrsig.cloned(),
        };
        return validate_dnskeys(&signed, anchor, now).0;
    }
    let Some(rrsig) = rrsig else {
        return ValidationStatus::Insecure;
    };
    let Some(dnskeys) = dnskeys else {
        return ValidationStatus::Indeterminate;
    };
    let (key_status, keys) = validate_dnskeys(dnskeys, anchor, now);
    match key_status {
        ValidationStatus::Secure => {}
        ValidationStatus::Insecure => return ValidationStatus::Indeterminate,
        other => return other,
    }
    validate_with_keys(rrset, rrsig, &keys, &anchor.apex, now)
}

/// Validates against an already validated key set.
pub fn validate_with_keys(
    rrset: &Rrset,
    rrsig: &Rrsig,
    keys: &[Dnskey],
    apex: &DnsName,
    now: UnixTime,
) -> ValidationStatus {
    if keys.is_empty() {
        return ValidationStatus::Indeterminate;
    }
    if rrsig_applies(rrset, rrsig, apex, now) && keys.iter().any(|k| verify_with(rrset, rrsig, k)) {
        ValidationStatus::Secure
    } else {
        ValidationStatus::Bogus
    }
}

#[cfg(test)]
mod tests;
