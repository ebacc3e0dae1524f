//! Validating, caching stub resolver for one vehicle zone.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use thiserror::Error;

use super::{
    validate_dnskeys, validate_rrset, validate_with_keys, Dnskey, RData, RrType, SignedRrset,
    TrustAnchor, UnixTime, ValidationStatus, Zone, NEGATIVE_TTL,
};
use crate::records::{DnsName, SvcbParams, TlsaParams};

/// An authoritative answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Answer {
    Data(SignedRrset),
    NoData,
    NxDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SourceError {
    #[error("zone source unreachable")]
    Unreachable,
}

/// Where the resolver fetches records from.
pub trait ZoneSource: Send + Sync {
    fn query(&self, name: &DnsName, rtype: RrType) -> Result<Answer, SourceError>;

    /// Every rrset of the zone, for preloading.
    fn transfer(&self) -> Result<Vec<SignedRrset>, SourceError>;
}

/// A shared, switchable authoritative server for a [`Zone`].
///
/// Clones share the zone and the connection state, so a test or the
/// simulator can disconnect the server or roll records over while a
/// resolver holds it.
#[derive(Debug, Clone)]
pub struct ZoneServer {
    zone: Arc<RwLock<Zone>>,
    connected: Arc<AtomicBool>,
    served: Arc<AtomicU64>,
}

impl ZoneServer {
    pub fn new(zone: Zone) -> Self {
        ZoneServer {
            zone: Arc::new(RwLock::new(zone)),
            connected: Arc::new(AtomicBool::new(true)),
            served: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn connect(&self) {
        self.connected.store(true, Ordering::SeqCst);
    }

    pub fn disconnect(&self) {
        self.connected.store(false, Ordering::SeqCst);
    }

    pub fn is_connected(&self) -> bool {
        self.connected.load(Ordering::SeqCst)
    }

    /// Number of queries and transfers answered.
    pub fn served(&self) -> u64 {
        self.served.load(Ordering::SeqCst)
    }

    pub fn read<R>(&self, f: impl FnOnce(&Zone) -> R) -> R {
        f(&self.zone.read())
    }

    /// Runs a mutation with exclusive access to the zone.
    pub fn update<R>(&self, f: impl FnOnce(&mut Zone) -> R) -> R {
        f(&mut self.zone.write())
    }

    fn check(&self) -> Result<(), SourceError> {
        if self.is_connected() {
            self.served.fetch_add(1, Ordering::SeqCst);
            Ok(())
        } else {
            Err(SourceError::Unreachable)
        }
    }
}

impl ZoneSource for ZoneServer {
    fn query(&self, name: &DnsName, rtype: RrType) -> Result<Answer, SourceError> {
        self.check()?;
        Ok(self.zone.read().lookup(name, rtype))
    }

    fn transfer(&self) -> Result<Vec<SignedRrset>, SourceError> {
        self.check()?;
        Ok(self.zone.read().signed_rrsets())
    }
}

/// A cached answer body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CachedAnswer {
    Data(SignedRrset),
    NoData,
    NxDomain,
}

/// One cache slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub answer: CachedAnswer,
    pub status: ValidationStatus,
    pub inserted_at: UnixTime,
    pub ttl: u32,
}

impl CacheEntry {
    pub fn is_fresh(&self, now: UnixTime) -> bool {
        now < self.inserted_at + self.ttl as u64
    }
}

/// How expired material is treated.
///
/// Only strict expiry exists: nothing is served past its TTL or signature
/// expiration. Degraded modes that keep using expired credentials have no
/// defined semantics yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[non_exhaustive]
pub enum ExpiryPolicy {
    #[default]
    Strict,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResolveError {
    #[error("SERVFAIL for {name} {rtype}: zone source unreachable and no fresh cache entry")]
    ServFail { name: DnsName, rtype: RrType },
}

/// Kind of answer returned by [`Resolver::resolve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnswerKind {
    Positive,
    NoData,
    NxDomain,
}

/// The result of one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub name: DnsName,
    pub rtype: RrType,
    pub kind: AnswerKind,
    pub records: Vec<RData>,
    pub status: ValidationStatus,
    pub from_cache: bool,
    /// The signed rrset, for endpoints that re-validate.
    pub proof: Option<SignedRrset>,
    /// The signed DNSKEY rrset used for validation.
    pub keys: Option<SignedRrset>,
}

impl Resolution {
    pub fn is_secure(&self) -> bool {
        self.status == ValidationStatus::Secure
    }

    pub fn svcb(&self) -> Vec<SvcbParams> {
        self.records
            .iter()
            .filter_map(RData::as_svcb)
            .cloned()
            .collect()
    }

    pub fn tlsa(&self) -> Vec<TlsaParams> {
        self.records
            .iter()
            .filter_map(RData::as_tlsa)
            .cloned()
            .collect()
    }
}

/// Counters exposed for tests and metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ResolverStats {
    /// Upstream queries, including DNSKEY fetches.
    pub fetches: u64,
    /// Zone transfers performed by preloading.
    pub transfers: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

/// Outcome of [`Resolver::preload`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PreloadReport {
    /// Cached rrsets, DNSKEY included.
    pub cached: usize,
    /// Cached rrsets other than DNSKEY.
    pub data_rrsets: usize,
    /// Rrsets that failed validation and were not cached.
    pub rejected: Vec<(DnsName, RrType)>,
}

type CacheKey = (DnsName, RrType);

/// A validating resolver with a trust anchor, a zone source and a cache.
///
/// Queries take `&self`; the cache sits behind a lock and counters are
/// atomic, so one resolver can serve concurrent readers.
pub struct Resolver {
    anchor: TrustAnchor,
    source: Arc<dyn ZoneSource>,
    cache: RwLock<BTreeMap<CacheKey, CacheEntry>>,
    policy: ExpiryPolicy,
    negative_ttl: u32,
    fetches: AtomicU64,
    transfers: AtomicU64,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl std::fmt::Debug for Resolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Resolver")
            .field("anchor", &self.anchor.apex)
            .field("cached", &self.cache.read().len())
            .field("stats", &self.stats())
            .finish()
    }
}

impl Resolver {
    pub fn new(anchor: TrustAnchor, source: Arc<dyn ZoneSource>) -> Self {
        Resolver {
            anchor,
            source,
            cache: RwLock::new(BTreeMap::new()),
            policy: ExpiryPolicy::Strict,
            negative_ttl: NEGATIVE_TTL,
            fetches: AtomicU64::new(0),
            transfers: AtomicU64::new(0),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn with_policy(mut self, policy: ExpiryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn policy(&self) -> ExpiryPolicy {
        self.policy
    }

    pub fn anchor(&self) -> &TrustAnchor {
        &self.anchor
    }

    pub fn stats(&self) -> ResolverStats {
        ResolverStats {
            fetches: self.fetches.load(Ordering::SeqCst),
            transfers: self.transfers.load(Ordering::SeqCst),
            cache_hits: self.hits.load(Ordering::SeqCst),
            cache_misses: self.misses.load(Ordering::SeqCst),
        }
    }

    pub fn reset_stats(&self) {
        for counter in [&self.fetches, &self.transfers, &self.hits, &self.misses] {
            counter.store(0, Ordering::SeqCst);
        }
    }

    /// Number of cache slots, fresh or not.
    pub fn cache_len(&self) -> usize {
        self.cache.read().len()
    }

    pub fn flush(&self) {
        self.cache.write().clear();
    }

    fn fresh_entry(&self, key: &CacheKey, now: UnixTime) -> Option<CacheEntry> {
        self.cache
            .read()
            .get(key)
            .filter(|e| e.is_fresh(now))
            .cloned()
    }

    fn store(&self, key: CacheKey, entry: CacheEntry) {
        if entry.ttl > 0 {
            self.cache.write().insert(key, entry);
        }
    }

    fn fetch(&self, name: &DnsName, rtype: RrType) -> Result<Answer, ResolveError> {
        self.fetches.fetch_add(1, Ordering::SeqCst);
        self.source
            .query(name, rtype)
            .map_err(|_| ResolveError::ServFail {
                name: name.clone(),
                rtype,
            })
    }

    /// Cache lifetime: the record TTL, cut short by signature expiry.
    fn lifetime(set: &SignedRrset, now: UnixTime) -> u32 {
        match &set.rrsig {
            Some(sig) => set.rrset.ttl.min(
                (sig.expiration as u64)
                    .saturating_sub(now)
                    .min(u32::MAX as u64) as u32,
            ),
            None => set.rrset.ttl,
        }
    }

    /// The validated DNSKEY rrset, from cache or upstream.
    fn zone_keys(
        &self,
        now: UnixTime,
    ) -> Result<(ValidationStatus, Vec<Dnskey>, Option<SignedRrset>), ResolveError> {
        let key = (self.anchor.apex.clone(), RrType::Dnskey);
        if let Some(entry) = self.fresh_entry(&key, now) {
            if let CachedAnswer::Data(set) = entry.answer {
                let (status, keys) = validate_dnskeys(&set, &self.anchor, now);
                return Ok((status, keys, Some(set)));
            }
        }
        match self.fetch(&self.anchor.apex, RrType::Dnskey)? {
            Answer::Data(set) => {
                let (status, keys) = validate_dnskeys(&set, &self.anchor, now);
                if status == ValidationStatus::Secure {
                    let ttl = Self::lifetime(&set, now);
                    self.store(
                        key,
                        CacheEntry {
                            answer: CachedAnswer::Data(set.clone()),
                            status,
                            inserted_at: now,
                            ttl,
                        },
                    );
                }
                Ok((status, keys, Some(set)))
            }
            _ => Ok((ValidationStatus::Indeterminate, Vec::new(), None)),
        }
    }

    fn resolution_from(
        &self,
        name: &DnsName,
        rtype: RrType,
        entry: &CacheEntry,
        from_cache: bool,
        keys: Option<SignedRrset>,
    ) -> Resolution {
        let (kind, records, proof) = match &entry.answer {
            CachedAnswer::Data(set) => (
                AnswerKind::Positive,
                set.rrset.rdatas().to_vec(),
                Some(set.clone()),
            ),
            CachedAnswer::NoData => (AnswerKind::NoData, Vec::new(), None),
            CachedAnswer::NxDomain => (AnswerKind::NxDomain, Vec::new(), None),
        };
        Resolution {
            name: name.clone(),
            rtype,
            kind,
            records,
            status: entry.status,
            from_cache,
            proof,
            keys,
        }
    }

    fn cached_keys(&self, now: UnixTime) -> Option<SignedRrset> {
        match self
            .fresh_entry(&(self.anchor.apex.clone(), RrType::Dnskey), now)?
            .answer
        {
            CachedAnswer::Data(set) => Some(set),
            _ => None,
        }
    }

    /// Answers a query from cache when fresh, otherwise from the zone
    /// source with validation. Bogus answers are returned but never cached.
    pub fn resolve(
        &self,
        name: &DnsName,
        rtype: RrType,
        now: UnixTime,
    ) -> Result<Resolution, ResolveError> {
        let key = (name.clone(), rtype);
        if let Some(entry) = self.fresh_entry(&key, now) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(self.resolution_from(name, rtype, &entry, true, self.cached_keys(now)));
        }
        self.misses.fetch_add(1, Ordering::SeqCst);

        if rtype == RrType::Dnskey && *name == self.anchor.apex {
            let (status, _, set) = self.zone_keys(now)?;
            let answer = set.map(CachedAnswer::Data).unwrap_or(CachedAnswer::NoData);
            let entry = CacheEntry {
                answer,
                status,
                inserted_at: now,
                ttl: 0,
            };
            return Ok(self.resolution_from(name, rtype, &entry, false, None));
        }

        let entry = match self.fetch(name, rtype)? {
            Answer::Data(set) => {
                let (key_status, keys, key_set) = self.zone_keys(now)?;
                let status = match (&set.rrsig, key_status) {
                    (None, _) => ValidationStatus::Insecure,
                    (Some(sig), ValidationStatus::Secure) => {
                        validate_with_keys(&set.rrset, sig, &keys, &self.anchor.apex, now)
                    }
                    (Some(_), ValidationStatus::Bogus) => ValidationStatus::Bogus,
                    (Some(_), _) => ValidationStatus::Indeterminate,
                };
                let ttl = Self::lifetime(&set, now);
                let entry = CacheEntry {
                    answer: CachedAnswer::Data(set),
                    status,
                    inserted_at: now,
                    ttl,
                };
                if status != ValidationStatus::Bogus {
                    self.store(key, entry.clone());
                }
                return Ok(self.resolution_from(name, rtype, &entry, false, key_set));
            }
            Answer::NoData => CacheEntry {
                answer: CachedAnswer::NoData,
                status: ValidationStatus::Insecure,
                inserted_at: now,
                ttl: self.negative_ttl,
            },
            Answer::NxDomain => CacheEntry {
                answer: CachedAnswer::NxDomain,
                status: ValidationStatus::Insecure,
                inserted_at: now,
                ttl: self.negative_ttl,
            },
        };
        self.store(key, entry.clone());
        Ok(self.resolution_from(name, rtype, &entry, false, None))
    }

    /// Transfers the whole zone, validates every rrset and caches those that
    /// are not Bogus.
    pub fn preload(&self, now: UnixTime) -> Result<PreloadReport, ResolveError> {
        self.transfers.fetch_add(1, Ordering::SeqCst);
        let rrsets = self.source.transfer().map_err(|_| ResolveError::ServFail {
            name: self.anchor.apex.clone(),
            rtype: RrType::Dnskey,
        })?;
        let mut report = PreloadReport::default();
        let dnskeys = rrsets
            .iter()
            .find(|s| s.rrset.rtype == RrType::Dnskey && s.rrset.name == self.anchor.apex)
            .cloned();
        let (key_status, keys) = match &dnskeys {
            Some(set) => validate_dnskeys(set, &self.anchor, now),
            None => (ValidationStatus::Indeterminate, Vec::new()),
        };
        if let Some(set) = dnskeys {
            if key_status == ValidationStatus::Secure {
                let ttl = Self::lifetime(&set, now);
                self.store(
                    (set.rrset.name.clone(), RrType::Dnskey),
                    CacheEntry {
                        answer: CachedAnswer::Data(set),
                        status: key_status,
                        inserted_at: now,
                        ttl,
                    },
                );
                report.cached += 1;
            } else {
                report
                    .rejected
                    .push((set.rrset.name.clone(), RrType::Dnskey));
            }
        }
        for set in rrsets
            .into_iter()
            .filter(|s| s.rrset.rtype != RrType::Dnskey)
        {
            let status = match (&set.rrsig, key_status) {
                (None, _) => ValidationStatus::Insecure,
                (Some(sig), ValidationStatus::Secure) => {
                    validate_with_keys(&set.rrset, sig, &keys, &self.anchor.apex, now)
                }
                (Some(_), _) => ValidationStatus::Bogus,
            };
            let key = (set.rrset.name.clone(), set.rrset.rtype);
            if status == ValidationStatus::Bogus {
                report.rejected.push(key);
                continue;
            }
            let ttl = Self::lifetime(&set, now);
            self.store(
                key,
                CacheEntry {
                    answer: CachedAnswer::Data(set),
                    status,
                    inserted_at: now,
                    ttl,
                },
            );
            report.cached += 1;
            report.data_rrsets += 1;
        }
        Ok(report)
    }

    /// Re-validates a resolution's proof against this resolver's anchor.
    pub fn verify_hook(&self, resolution: &Resolution, now: UnixTime) -> ValidationStatus {
        match &resolution.proof {
            Some(proof) => validate_rrset(
                &proof.rrset,
                proof.rrsig.as_ref(),
                resolution.keys.as_ref(),
                &self.anchor,
                now,
            ),
            None => ValidationStatus::Insecure,
        }
    }
}
