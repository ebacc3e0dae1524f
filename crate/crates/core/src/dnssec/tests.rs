use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::crypto::{build_tlsa, Certificate};
use crate::records::{publisher_service_name, publisher_tlsa_name, ServiceKey};

const NOW: UnixTime = 1_750_000_000;

struct Fixture {
    zone: Zone,
    anchor: TrustAnchor,
    svcb_name: DnsName,
    tlsa_name: DnsName,
    rng: ChaCha20Rng,
}

fn vehicle() -> DnsName {
    DnsName::parse("vehicle1.oem.").unwrap()
}

fn keyed_zone(rng: &mut ChaCha20Rng) -> (Zone, TrustAnchor) {
    let ksk = KeyPair::generate(SignatureScheme::EcdsaP256Sha256, KeyUsage::KeySigning, rng);
    let zsk = KeyPair::generate(SignatureScheme::EcdsaP256Sha256, KeyUsage::ZoneSigning, rng);
    let mut zone = Zone::new(vehicle());
    zone.install_keys(zsk, &ksk, NOW).unwrap();
    (zone, TrustAnchor::new(vehicle(), &ksk.public_key()))
}

fn cert_for(name: &DnsName, rng: &mut ChaCha20Rng) -> Certificate {
    let key = KeyPair::generate(
        SignatureScheme::EcdsaP256Sha256,
        KeyUsage::ServiceIdentity,
        rng,
    );
    Certificate::issue(&key, name, NOW - 10, NOW + 86_400 * 365, 1).unwrap()
}

fn fixture() -> Fixture {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let (mut zone, anchor) = keyed_zone(&mut rng);
    let key = ServiceKey::new(42, 1, 2, 3, vehicle());
    let svcb_name = publisher_service_name(&key).unwrap();
    let tlsa_name = publisher_tlsa_name(&key, 5000).unwrap();
    let svcb = "1 . ipv4hint=10.0.0.2 port=5000 instance=1 major=2 minor=3 ip_proto=17"
        .parse()
        .unwrap();
    zone.add_record(Record::new(
        svcb_name.clone(),
        DEFAULT_TTL,
        RData::Svcb(svcb),
    ))
    .unwrap();
    let cert = cert_for(&tlsa_name, &mut rng);
    zone.add_record(Record::new(
        tlsa_name.clone(),
        DEFAULT_TTL,
        RData::Tlsa(build_tlsa(&cert)),
    ))
    .unwrap();
    zone.sign(NOW).unwrap();
    Fixture {
        zone,
        anchor,
        svcb_name,
        tlsa_name,
        rng,
    }
}

fn resolver_for(zone: Zone, anchor: TrustAnchor) -> (Resolver, ZoneServer) {
    let server = ZoneServer::new(zone);
    (Resolver::new(anchor, Arc::new(server.clone())), server)
}

// Key tag computed as the ones'-complement style sum of 16-bit words.
fn key_tag_oracle(rdata: &[u8]) -> u16 {
    let mut sum: u64 = 0;
    for chunk in rdata.chunks(2) {
        let word = if chunk.len() == 2 {
            u16::from_be_bytes([chunk[0], chunk[1]])
        } else {
            (chunk[0] as u16) << 8
        };
        sum += word as u64;
    }
    ((sum + (sum >> 16)) & 0xFFFF) as u16
}

#[test]
fn key_tag_hand_computed() {
    // rdata 01 00 03 0d 01 02 03: 0x0100 + 0x030d + 0x0102 + 0x0300 = 0x080f
    let dnskey = Dnskey {
        flags: 256,
        protocol: 3,
        algorithm: 13,
        public_key: vec![1, 2, 3],
    };
    assert_eq!(dnskey.key_tag(), 0x080f);
}

#[test]
fn key_tag_matches_word_sum() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    for _ in 0..20 {
        let key = KeyPair::generate(
            SignatureScheme::EcdsaP256Sha256,
            KeyUsage::ZoneSigning,
            &mut rng,
        );
        let dnskey = Dnskey::from_key(&key.public_key(), FLAGS_ZSK);
        assert_eq!(dnskey.key_tag(), key_tag_oracle(&dnskey.to_rdata()));
    }
}

#[test]
fn empty_zone_signs_to_dnskey_only() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let (zone, anchor) = keyed_zone(&mut rng);
    let zone = sign_zone(zone, NOW).unwrap();
    assert_eq!(zone.rrset_count(), 1);
    assert_eq!(zone.signature_count(), 1);
    assert_eq!(
        zone.verify_all(&anchor, NOW),
        vec![(vehicle(), RrType::Dnskey, ValidationStatus::Secure)]
    );
}

#[test]
fn signing_without_keys_fails() {
    assert_eq!(Zone::new(vehicle()).sign(NOW), Err(DnssecError::MissingKey));
}

#[test]
fn fresh_rrsets_are_secure() {
    let f = fixture();
    let statuses = f.zone.verify_all(&f.anchor, NOW);
    assert_eq!(statuses.len(), 3);
    assert!(statuses
        .iter()
        .all(|(_, _, s)| *s == ValidationStatus::Secure));
}

#[test]
fn foreign_zone_key_is_bogus() {
    let f = fixture();
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let (other, other_anchor) = keyed_zone(&mut rng);
    let tlsa = f.zone.get(&f.tlsa_name, RrType::Tlsa).unwrap();
    let keys = other.get(&vehicle(), RrType::Dnskey).unwrap();
    assert_eq!(
        validate_rrset(
            &tlsa.rrset,
            tlsa.rrsig.as_ref(),
            Some(&keys),
            &other_anchor,
            NOW
        ),
        ValidationStatus::Bogus
    );
    // right keys but the wrong anchor
    let own_keys = f.zone.get(&vehicle(), RrType::Dnskey).unwrap();
    assert_eq!(
        validate_rrset(
            &tlsa.rrset,
            tlsa.rrsig.as_ref(),
            Some(&own_keys),
            &other_anchor,
            NOW
        ),
        ValidationStatus::Bogus
    );
}

#[test]
fn validity_boundaries() {
    let f = fixture();
    let tlsa = f.zone.get(&f.tlsa_name, RrType::Tlsa).unwrap();
    let keys = f.zone.get(&vehicle(), RrType::Dnskey).unwrap();
    let sig = tlsa.rrsig.clone().unwrap();
    let exp = sig.expiration as u64;
    let inc = sig.inception as u64;
    let check = |t| validate_rrset(&tlsa.rrset, tlsa.rrsig.as_ref(), Some(&keys), &f.anchor, t);
    assert_eq!(check(inc - 1), ValidationStatus::Bogus);
    assert_eq!(check(inc), ValidationStatus::Secure);
    assert_eq!(check(exp - 1), ValidationStatus::Secure);
    assert_eq!(check(exp), ValidationStatus::Bogus);
    assert_eq!(check(exp + 1), ValidationStatus::Bogus);
}

#[test]
fn missing_signature_or_keys() {
    let f = fixture();
    let tlsa = f.zone.get(&f.tlsa_name, RrType::Tlsa).unwrap();
    assert_eq!(
        validate_rrset(&tlsa.rrset, None, None, &f.anchor, NOW),
        ValidationStatus::Insecure
    );
    assert_eq!(
        validate_rrset(&tlsa.rrset, tlsa.rrsig.as_ref(), None, &f.anchor, NOW),
        ValidationStatus::Indeterminate
    );
}

/// Every single-byte change to owner name or rdata that still decodes must
/// fail validation.
#[test]
fn exhaustive_single_byte_mutations_are_bogus() {
    let f = fixture();
    let keys = f.zone.get(&vehicle(), RrType::Dnskey).unwrap();
    let mut checked = 0;
    for signed in f.zone.signed_rrsets() {
        let sig = signed.rrsig.clone().unwrap();
        for (idx, rdata) in signed.rrset.rdatas().iter().enumerate() {
            let wire = rdata.to_wire();
            for pos in 0..wire.len() {
                let mut bytes = wire.clone();
                bytes[pos] ^= 0x5a;
                let Ok(mutated) = RData::from_wire(signed.rrset.rtype, &bytes) else {
                    continue;
                };
                let mut others: Vec<RData> = signed.rrset.rdatas().to_vec();
                others[idx] = mutated;
                let set = Rrset::from_records(signed.rrset.name.clone(), signed.rrset.ttl, others)
                    .unwrap();
                let key_set = if set.rtype == RrType::Dnskey {
                    None
                } else {
                    Some(&keys)
                };
                assert_ne!(
                    validate_rrset(&set, Some(&sig), key_set, &f.anchor, NOW),
                    ValidationStatus::Secure,
                    "mutation at {pos} of {} went unnoticed",
                    signed.rrset.name
                );
                checked += 1;
            }
        }
        let name_wire = signed.rrset.name.to_wire();
        for pos in 1..name_wire.len() - 1 {
            let mut bytes = name_wire.clone();
            bytes[pos] = if bytes[pos] == b'x' { b'y' } else { b'x' };
            let Ok((name, _)) = DnsName::from_wire(&bytes) else {
                continue;
            };
            let mut set = signed.rrset.clone();
            set.name = name;
            let key_set = if set.rtype == RrType::Dnskey {
                None
            } else {
                Some(&keys)
            };
            assert_ne!(
                validate_rrset(&set, Some(&sig), key_set, &f.anchor, NOW),
                ValidationStatus::Secure
            );
            checked += 1;
        }
    }
    assert!(checked > 300, "only {checked} mutations decoded");
}

#[test]
fn signed_zone_text_round_trip_and_tamper() {
    let f = fixture();
    let text = f.zone.to_text();
    let back = Zone::from_text(&text).unwrap();
    assert_eq!(back.signed_rrsets(), f.zone.signed_rrsets());
    assert!(back
        .verify_all(&f.anchor, NOW)
        .iter()
        .all(|(_, _, s)| *s == ValidationStatus::Secure));
    assert_eq!(back.anchor(), Some(f.anchor.clone()));

    let tampered = text.replace("port=5000", "port=5001");
    let zone = Zone::from_text(&tampered).unwrap();
    let bogus: Vec<_> = zone
        .verify_all(&f.anchor, NOW)
        .into_iter()
        .filter(|(_, _, s)| *s == ValidationStatus::Bogus)
        .collect();
    assert_eq!(
        bogus,
        vec![(f.svcb_name.clone(), RrType::Svcb, ValidationStatus::Bogus)]
    );
}

#[test]
fn resolve_and_cache() {
    let f = fixture();
    let (resolver, _server) = resolver_for(f.zone.clone(), f.anchor.clone());
    let first = resolver.resolve(&f.tlsa_name, RrType::Tlsa, NOW).unwrap();
    assert_eq!(first.status, ValidationStatus::Secure);
    let tlsa = first.tlsa();
    assert_eq!(
        (tlsa[0].usage, tlsa[0].selector, tlsa[0].matching),
        (3, 0, 0)
    );
    assert!(!first.from_cache);
    let fetches = resolver.stats().fetches;
    assert_eq!(fetches, 2, "data plus DNSKEY");
    let second = resolver
        .resolve(&f.tlsa_name, RrType::Tlsa, NOW + 10)
        .unwrap();
    assert!(second.from_cache);
    assert_eq!(resolver.stats().fetches, fetches);
    assert_eq!(
        resolver.verify_hook(&second, NOW + 10),
        ValidationStatus::Secure
    );
}

#[test]
fn cache_expires_at_ttl() {
    let f = fixture();
    let (resolver, server) = resolver_for(f.zone.clone(), f.anchor.clone());
    resolver.resolve(&f.tlsa_name, RrType::Tlsa, NOW).unwrap();
    server.disconnect();
    let last_fresh = NOW + DEFAULT_TTL as u64 - 1;
    assert!(
        resolver
            .resolve(&f.tlsa_name, RrType::Tlsa, last_fresh)
            .unwrap()
            .from_cache
    );
    assert_eq!(
        resolver.resolve(&f.tlsa_name, RrType::Tlsa, NOW + DEFAULT_TTL as u64),
        Err(ResolveError::ServFail {
            name: f.tlsa_name.clone(),
            rtype: RrType::Tlsa
        })
    );
}

#[test]
fn negative_answers() {
    let f = fixture();
    let (resolver, _server) = resolver_for(f.zone.clone(), f.anchor.clone());
    let nodata = resolver.resolve(&f.tlsa_name, RrType::Svcb, NOW).unwrap();
    assert_eq!(nodata.kind, AnswerKind::NoData);
    assert_eq!(nodata.status, ValidationStatus::Insecure);
    let missing = DnsName::parse("_someip-client.9.client.vehicle1.oem.").unwrap();
    let nx = resolver.resolve(&missing, RrType::Tlsa, NOW).unwrap();
    assert_eq!(nx.kind, AnswerKind::NxDomain);
    let fetches = resolver.stats().fetches;
    assert!(
        resolver
            .resolve(&missing, RrType::Tlsa, NOW + NEGATIVE_TTL as u64 - 1)
            .unwrap()
            .from_cache
    );
    assert_eq!(resolver.stats().fetches, fetches);
    resolver
        .resolve(&missing, RrType::Tlsa, NOW + NEGATIVE_TTL as u64)
        .unwrap();
    assert_eq!(resolver.stats().fetches, fetches + 1);
}

#[test]
fn preload_and_offline() {
    let f = fixture();
    let (resolver, server) = resolver_for(f.zone.clone(), f.anchor.clone());
    let report = resolver.preload(NOW).unwrap();
    assert_eq!(report.cached, 3);
    assert_eq!(report.data_rrsets, 2);
    assert!(report.rejected.is_empty());
    server.disconnect();
    for (name, rtype) in [(&f.svcb_name, RrType::Svcb), (&f.tlsa_name, RrType::Tlsa)] {
        let r = resolver.resolve(name, rtype, NOW + 3600).unwrap();
        assert!(r.is_secure() && r.from_cache);
    }
    assert_eq!(resolver.stats().fetches, 0);
    assert_eq!(resolver.stats().transfers, 1);
}

#[test]
fn preload_empty_zone() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let (zone, anchor) = keyed_zone(&mut rng);
    let (resolver, _) = resolver_for(zone, anchor);
    assert_eq!(resolver.preload(NOW).unwrap().cached, 1);
}

#[test]
fn preload_rejects_tampered_rrset() {
    let f = fixture();
    let tampered = Zone::from_text(&f.zone.to_text().replace("port=5000", "port=5001")).unwrap();
    let (resolver, _) = resolver_for(tampered, f.anchor.clone());
    let report = resolver.preload(NOW).unwrap();
    assert_eq!(report.data_rrsets, 1);
    assert_eq!(report.rejected, vec![(f.svcb_name.clone(), RrType::Svcb)]);
}

#[test]
fn unreachable_cold_cache_is_servfail() {
    let f = fixture();
    let (resolver, server) = resolver_for(f.zone.clone(), f.anchor.clone());
    server.disconnect();
    assert!(matches!(
        resolver.resolve(&f.tlsa_name, RrType::Tlsa, NOW),
        Err(ResolveError::ServFail { .. })
    ));
    assert!(matches!(
        resolver.preload(NOW),
        Err(ResolveError::ServFail { .. })
    ));
}

#[test]
fn rollover_add_then_remove() {
    let mut f = fixture();
    let (resolver, server) = resolver_for(f.zone.clone(), f.anchor.clone());
    let old = f
        .zone
        .get(&f.tlsa_name, RrType::Tlsa)
        .unwrap()
        .rrset
        .rdatas()[0]
        .clone();
    let new_cert = cert_for(&f.tlsa_name, &mut f.rng);
    let new = RData::Tlsa(build_tlsa(&new_cert));
    server
        .update(|z| {
            z.rollover_add(
                Record::new(f.tlsa_name.clone(), DEFAULT_TTL, new.clone()),
                NOW + 5,
            )
        })
        .unwrap();
    let both = resolver
        .resolve(&f.tlsa_name, RrType::Tlsa, NOW + 5)
        .unwrap();
    assert_eq!(both.records.len(), 2);
    assert!(both.is_secure());

    server
        .update(|z| z.rollover_remove(&f.tlsa_name, &old, NOW + 6))
        .unwrap();
    server
        .update(|z| z.rollover_remove(&f.tlsa_name, &new, NOW + 6))
        .unwrap();
    let gone = resolver
        .resolve(&f.tlsa_name, RrType::Tlsa, NOW + 6 + DEFAULT_TTL as u64)
        .unwrap();
    assert_eq!(gone.kind, AnswerKind::NoData);
    assert_eq!(
        server.update(|z| z.rollover_remove(&f.tlsa_name, &old, NOW + 7)),
        Err(DnssecError::UnknownRecord(f.tlsa_name.clone()))
    );
    let stranger = DnsName::parse("_someip-client.5.client.vehicle1.oem.").unwrap();
    assert_eq!(
        server.update(|z| z.rollover_remove(&stranger, &old, NOW + 7)),
        Err(DnssecError::UnknownName(stranger.clone()))
    );
}

#[test]
fn resolver_traces_are_deterministic() {
    let trace = || {
        let f = fixture();
        let (resolver, server) = resolver_for(f.zone.clone(), f.anchor.clone());
        let mut out = Vec::new();
        for (i, name) in [&f.svcb_name, &f.tlsa_name, &f.svcb_name, &f.tlsa_name]
            .iter()
            .enumerate()
        {
            if i == 2 {
                server.disconnect();
            }
            let rtype = if i % 2 == 0 {
                RrType::Svcb
            } else {
                RrType::Tlsa
            };
            let r = resolver.resolve(name, rtype, NOW + i as u64).unwrap();
            out.push((r.records, r.status, resolver.stats().fetches));
        }
        out
    };
    assert_eq!(trace(), trace());
}

#[test]
fn out_of_zone_and_reserved_records_rejected() {
    let mut zone = Zone::new(vehicle());
    let svcb: crate::records::SvcbParams =
        "1 . ipv4hint=10.0.0.2 port=5000 instance=1 major=2 minor=3 ip_proto=17"
            .parse()
            .unwrap();
    let outside = DnsName::parse("x.other.").unwrap();
    assert!(matches!(
        zone.add_record(Record::new(outside, 60, RData::Svcb(svcb))),
        Err(DnssecError::OutOfZone { .. })
    ));
    let key = Dnskey {
        flags: 256,
        protocol: 3,
        algorithm: 13,
        public_key: vec![0; 64],
    };
    assert_eq!(
        zone.add_record(Record::new(vehicle(), 60, RData::Dnskey(key))),
        Err(DnssecError::ReservedType(RrType::Dnskey))
    );
}
