use std::collections::{BTreeMap, BTreeSet};

use super::{
    sign_rrset, validate_dnskeys, validate_with_keys, Answer, Dnskey, DnssecError, RData, Record,
    RrType, Rrset, Rrsig, SignedRrset, TrustAnchor, UnixTime, ValidationStatus, DEFAULT_TTL,
    FLAGS_KSK, FLAGS_ZSK, SIGNATURE_VALIDITY,
};
use crate::crypto::{CryptoError, KeyPair, KeyUsage};
use crate::records::DnsName;

/// The vehicle zone-signing key and its tag.
#[derive(Debug, Clone)]
pub struct ZoneKeys {
    zsk: KeyPair,
    zsk_tag: u16,
}

impl ZoneKeys {
    pub fn zsk(&self) -> &KeyPair {
        &self.zsk
    }

    pub fn key_tag(&self) -> u16 {
        self.zsk_tag
    }
}

type RrKey = (DnsName, RrType);

/// A per-vehicle zone.
///
/// The DNSKEY rrset and its key-signing-key signature (the delegation
/// proof) live at the apex alongside the data rrsets.
#[derive(Debug, Clone)]
pub struct Zone {
    apex: DnsName,
    rrsets: BTreeMap<RrKey, Rrset>,
    /// Owner names ever given records; a name stays declared after its last
    /// record is removed so that queries for it answer NODATA.
    names: BTreeSet<DnsName>,
    signatures: BTreeMap<RrKey, Rrsig>,
    keys: Option<ZoneKeys>,
    validity: u32,
}

fn validity_window(now: UnixTime, validity: u32) -> (u32, u32) {
    let inception = now as u32;
    (inception, inception.wrapping_add(validity))
}

impl Zone {
    pub fn new(apex: DnsName) -> Self {
        Zone {
            apex,
            rrsets: BTreeMap::new(),
            names: BTreeSet::new(),
            signatures: BTreeMap::new(),
            keys: None,
            validity: SIGNATURE_VALIDITY,
        }
    }

    /// Builds a zone from parsed records and signatures. No private key is
    /// attached; call [`Zone::attach_zsk`] before re-signing.
    pub fn from_parts(
        apex: DnsName,
        records: Vec<Record>,
        rrsigs: Vec<(DnsName, Rrsig)>,
    ) -> Result<Self, DnssecError> {
        let mut zone = Zone::new(apex);
        for record in records {
            zone.check_in_zone(&record.name)?;
            let key = (record.name.clone(), record.data.rtype());
            let ttl = record.ttl;
            zone.names.insert(record.name.clone());
            zone.rrsets
                .entry(key)
                .or_insert_with(|| Rrset::new(record.name.clone(), record.data.rtype(), ttl))
                .insert(record.data);
        }
        for (name, rrsig) in rrsigs {
            zone.signatures.insert((name, rrsig.type_covered), rrsig);
        }
        Ok(zone)
    }

    pub fn apex(&self) -> &DnsName {
        &self.apex
    }

    pub fn keys(&self) -> Option<&ZoneKeys> {
        self.keys.as_ref()
    }

    /// Overrides the RRSIG validity (seconds) used by subsequent signing.
    pub fn set_signature_validity(&mut self, seconds: u32) {
        self.validity = seconds;
    }

    /// Installs a fresh zone-signing key and has the OEM key-signing key sign
    /// the resulting DNSKEY rrset.
    pub fn install_keys(
        &mut self,
        zsk: KeyPair,
        ksk: &KeyPair,
        now: UnixTime,
    ) -> Result<(), DnssecError> {
        if zsk.usage() != KeyUsage::ZoneSigning {
            return Err(CryptoError::KeyUsage {
                requested: KeyUsage::ZoneSigning,
                actual: zsk.usage(),
            }
            .into());
        }
        let zsk_key = Dnskey::from_key(&zsk.public_key(), FLAGS_ZSK);
        let ksk_key = Dnskey::from_key(&ksk.public_key(), FLAGS_KSK);
        let mut dnskeys = Rrset::new(self.apex.clone(), RrType::Dnskey, DEFAULT_TTL);
        dnskeys.insert(RData::Dnskey(zsk_key.clone()));
        dnskeys.insert(RData::Dnskey(ksk_key.clone()));
        let (inception, expiration) = validity_window(now, self.validity);
        let rrsig = sign_rrset(
            &dnskeys,
            ksk,
            KeyUsage::KeySigning,
            ksk_key.key_tag(),
            &self.apex,
            inception,
            expiration,
        )?;
        let key = (self.apex.clone(), RrType::Dnskey);
        self.rrsets.insert(key.clone(), dnskeys);
        self.signatures.insert(key, rrsig);
        self.keys = Some(ZoneKeys {
            zsk_tag: zsk_key.key_tag(),
            zsk,
        });
        Ok(())
    }

    /// Attaches the private ZSK of a zone loaded from text. The key must
    /// already be in the zone's DNSKEY rrset.
    pub fn attach_zsk(&mut self, zsk: KeyPair) -> Result<(), DnssecError> {
        if zsk.usage() != KeyUsage::ZoneSigning {
            return Err(CryptoError::KeyUsage {
                requested: KeyUsage::ZoneSigning,
                actual: zsk.usage(),
            }
            .into());
        }
        let dnskey = Dnskey::from_key(&zsk.public_key(), FLAGS_ZSK);
        let present = self
            .rrsets
            .get(&(self.apex.clone(), RrType::Dnskey))
            .is_some_and(|set| set.rdatas().iter().any(|r| r.as_dnskey() == Some(&dnskey)));
        if !present {
            return Err(DnssecError::MissingKey);
        }
        self.keys = Some(ZoneKeys {
            zsk_tag: dnskey.key_tag(),
            zsk,
        });
        Ok(())
    }

    /// The trust anchor matching the KSK in the DNSKEY rrset, if any.
    pub fn anchor(&self) -> Option<TrustAnchor> {
        let set = self.rrsets.get(&(self.apex.clone(), RrType::Dnskey))?;
        let ksk = set
            .rdatas()
            .iter()
            .filter_map(RData::as_dnskey)
            .find(|k| k.flags == FLAGS_KSK)?;
        Some(TrustAnchor {
            apex: self.apex.clone(),
            dnskey: ksk.clone(),
        })
    }

    fn check_in_zone(&self, name: &DnsName) -> Result<(), DnssecError> {
        if name.is_subdomain_of(&self.apex) {
            Ok(())
        } else {
            Err(DnssecError::OutOfZone {
                name: name.clone(),
                apex: self.apex.clone(),
            })
        }
    }

    /// Adds a data record without signing. Returns whether it was new.
    pub fn add_record(&mut self, record: Record) -> Result<bool, DnssecError> {
        self.check_in_zone(&record.name)?;
        let rtype = record.data.rtype();
        if matches!(rtype, RrType::Dnskey | RrType::Rrsig) {
            return Err(DnssecError::ReservedType(rtype));
        }
        let key = (record.name.clone(), rtype);
        self.names.insert(record.name.clone());
        let set = self
            .rrsets
            .entry(key.clone())
            .or_insert_with(|| Rrset::new(record.name.clone(), rtype, record.ttl));
        set.ttl = record.ttl;
        let added = set.insert(record.data);
        if added {
            self.signatures.remove(&key);
        }
        Ok(added)
    }

    /// Removes a data record without signing.
    pub fn remove_record(&mut self, name: &DnsName, data: &RData) -> Result<(), DnssecError> {
        if !self.names.contains(name) {
            return Err(DnssecError::UnknownName(name.clone()));
        }
        let key = (name.clone(), data.rtype());
        let set = self
            .rrsets
            .get_mut(&key)
            .ok_or_else(|| DnssecError::UnknownRecord(name.clone()))?;
        if !set.remove(data) {
            return Err(DnssecError::UnknownRecord(name.clone()));
        }
        if set.is_empty() {
            self.rrsets.remove(&key);
        }
        self.signatures.remove(&key);
        Ok(())
    }

    fn sign_one(&mut self, key: &RrKey, now: UnixTime) -> Result<(), DnssecError> {
        let keys = self.keys.as_ref().ok_or(DnssecError::MissingKey)?;
        let Some(set) = self.rrsets.get(key) else {
            self.signatures.remove(key);
            return Ok(());
        };
        let (inception, expiration) = validity_window(now, self.validity);
        let rrsig = sign_rrset(
            set,
            &keys.zsk,
            KeyUsage::ZoneSigning,
            keys.zsk_tag,
            &self.apex,
            inception,
            expiration,
        )?;
        self.signatures.insert(key.clone(), rrsig);
        Ok(())
    }

    /// Signs every data rrset with the ZSK. The DNSKEY rrset keeps the
    /// signature made by the key-signing key.
    pub fn sign(&mut self, now: UnixTime) -> Result<(), DnssecError> {
        if self.keys.is_none() {
            return Err(DnssecError::MissingKey);
        }
        let keys: Vec<RrKey> = self
            .rrsets
            .keys()
            .filter(|(_, t)| *t != RrType::Dnskey)
            .cloned()
            .collect();
        for key in keys {
            self.sign_one(&key, now)?;
        }
        Ok(())
    }

    /// Adds `record` next to any existing records of its rrset and
    /// re-signs that rrset.
    pub fn rollover_add(&mut self, record: Record, now: UnixTime) -> Result<(), DnssecError> {
        if self.keys.is_none() {
            return Err(DnssecError::MissingKey);
        }
        let key = (record.name.clone(), record.data.rtype());
        self.add_record(record)?;
        self.sign_one(&key, now)
    }

    /// Removes one record and re-signs what remains of its rrset.
    pub fn rollover_remove(
        &mut self,
        name: &DnsName,
        data: &RData,
        now: UnixTime,
    ) -> Result<(), DnssecError> {
        if self.keys.is_none() {
            return Err(DnssecError::MissingKey);
        }
        self.remove_record(name, data)?;
        self.sign_one(&(name.clone(), data.rtype()), now)
    }

    pub fn get(&self, name: &DnsName, rtype: RrType) -> Option<SignedRrset> {
        let key = (name.clone(), rtype);
        let rrset = self.rrsets.get(&key)?.clone();
        Some(SignedRrset {
            rrset,
            rrsig: self.signatures.get(&key).cloned(),
        })
    }

    /// Authoritative answer for a query.
    pub fn lookup(&self, name: &DnsName, rtype: RrType) -> Answer {
        if let Some(set) = self.get(name, rtype) {
            return Answer::Data(set);
        }
        if self.names.contains(name) || *name == self.apex {
            Answer::NoData
        } else {
            Answer::NxDomain
        }
    }

    /// All rrsets with their signatures, DNSKEY first.
    pub fn signed_rrsets(&self) -> Vec<SignedRrset> {
        let mut out: Vec<SignedRrset> = Vec::with_capacity(self.rrsets.len());
        if let Some(dnskeys) = self.get(&self.apex, RrType::Dnskey) {
            out.push(dnskeys);
        }
        for (key, rrset) in &self.rrsets {
            if key.1 != RrType::Dnskey {
                out.push(SignedRrset {
                    rrset: rrset.clone(),
                    rrsig: self.signatures.get(key).cloned(),
                });
            }
        }
        out
    }

    /// Owner names of data rrsets.
    pub fn record_names(&self) -> BTreeSet<DnsName> {
        self.rrsets
            .keys()
            .filter(|(_, t)| *t != RrType::Dnskey)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn data_rrset_count(&self) -> usize {
        self.rrsets
            .keys()
            .filter(|(_, t)| *t != RrType::Dnskey)
            .count()
    }

    pub fn rrset_count(&self) -> usize {
        self.rrsets.len()
    }

    pub fn signature_count(&self) -> usize {
        self.signatures.len()
    }

    /// Validates every rrset against `anchor`.
    pub fn verify_all(
        &self,
        anchor: &TrustAnchor,
        now: UnixTime,
    ) -> Vec<(DnsName, RrType, ValidationStatus)> {
        let mut out = Vec::with_capacity(self.rrsets.len());
        let dnskeys = self.get(&self.apex, RrType::Dnskey);
        let (key_status, keys) = match &dnskeys {
            Some(set) => validate_dnskeys(set, anchor, now),
            None => (ValidationStatus::Indeterminate, Vec::new()),
        };
        if dnskeys.is_some() {
            out.push((self.apex.clone(), RrType::Dnskey, key_status));
        }
        for (key, rrset) in &self.rrsets {
            if key.1 == RrType::Dnskey {
                continue;
            }
            let status = match self.signatures.get(key) {
                None => ValidationStatus::Insecure,
                Some(_) if key_status != ValidationStatus::Secure => match key_status {
                    ValidationStatus::Bogus => ValidationStatus::Bogus,
                    _ => ValidationStatus::Indeterminate,
                },
                Some(rrsig) => validate_with_keys(rrset, rrsig, &keys, &self.apex, now),
            };
            out.push((key.0.clone(), key.1, status));
        }
        out
    }

    /// Records and signatures in presentation order: each rrset followed by
    /// its RRSIG.
    pub fn records_with_signatures(&self) -> Vec<Record> {
        let mut out = Vec::new();
        for set in self.signed_rrsets() {
            out.extend(set.rrset.records());
            if let Some(sig) = set.rrsig {
                out.push(Record::new(
                    set.rrset.name.clone(),
                    set.rrset.ttl,
                    RData::Rrsig(sig),
                ));
            }
        }
        out
    }
}

/// Signs `zone` at `now`.
pub fn sign_zone(mut zone: Zone, now: UnixTime) -> Result<Zone, DnssecError> {
    zone.sign(now)?;
    Ok(zone)
}
