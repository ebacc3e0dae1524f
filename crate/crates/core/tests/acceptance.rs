//! One pass/fail line per acceptance criterion.
//!
//! Built without the libtest harness so the report is never captured:
//! `cargo test -p sd-dane --test acceptance`. Every criterion runs even if
//! an earlier one fails; the process exits non-zero if any failed.

mod common;

use std::net::Ipv4Addr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use sd_dane::discovery::{Cause, Variant};
use sd_dane::dnssec::{validate_rrset, RData, RrType, Rrset, ValidationStatus};
use sd_dane::records::{
    client_tlsa_name, publisher_service_name, publisher_tlsa_name, ClientKey, DnsName, ServiceKey,
    SvcbParams, TlsaParams,
};
use sd_dane::simnet::{
    run_scalability, simulate, AdversaryScript, Fate, RunMetrics, ScenarioConfig, ScriptKind, Sim,
    BASE_TIME, INSECURE_ACKS, INSECURE_ANSWERS, SERVICE_SETUP, SUBSCRIPTIONS_ESTABLISHED,
    UPSTREAM_FETCHES,
};
use sd_dane::wire::Ipv4Endpoint;

use common::model::Explorer;
use common::props;

const IVN_SEED: u64 = 1;

/// Three ECUs, three services, six subscriptions.
const SMALL: &str = "\
switch sw
host ecu-a on sw
host ecu-b on sw
host ecu-c on sw
resolver on sw
latency_us 10
vehicle vehicle1.oem.
publisher 100 1 1 0 10.0.0.1:30501/udp on ecu-a
publisher 101 1 1 0 10.0.0.2:30501/udp on ecu-b
publisher 102 1 1 0 10.0.0.2:30502/udp on ecu-b
subscriber 1000 to 100 1 1 on ecu-b
subscriber 1001 to 100 1 1 on ecu-c
subscriber 1002 to 101 1 1 on ecu-a
subscriber 1003 to 101 1 1 on ecu-c
subscriber 1004 to 102 1 1 on ecu-a
subscriber 1005 to 102 1 1 on ecu-c
";

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn small(variant: Variant) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::parse(SMALL).expect("scenario");
    cfg.variant = variant;
    cfg
}

fn ivn(variant: Variant) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::ivn(IVN_SEED).expect("ivn scenario");
    cfg.variant = variant;
    cfg
}

fn mean(m: &RunMetrics, name: &str) -> f64 {
    m.get(name).and_then(|s| s.mean()).unwrap_or(f64::NAN)
}

fn max(m: &RunMetrics, name: &str) -> f64 {
    m.get(name)
        .and_then(|s| s.summary())
        .map_or(f64::NAN, |s| s.max)
}

fn golden_names() -> Check {
    let vehicle = DnsName::parse("vehicle1.oem.").unwrap();
    let key = ServiceKey::new(42, 1, 2, 3, vehicle.clone());
    let client = ClientKey::service_specific(17, key.scope(), vehicle);
    let service = publisher_service_name(&key).unwrap();
    let tlsa = publisher_tlsa_name(&key, 5000).unwrap();
    let client_name = client_tlsa_name(&client).unwrap();
    let svcb = SvcbParams::for_service(&key, Ipv4Endpoint::udp(Ipv4Addr::new(10, 0, 0, 2), 5000))
        .to_string();
    let tlsa_value = TlsaParams::full_certificate(vec![0x30, 0x82, 0x05]).to_string();
    let ok = service.as_str() == "_someip.3.2.1.42.service.vehicle1.oem."
        && tlsa.as_str() == "_5000._someip.3.2.1.42.service.vehicle1.oem."
        && client_name.as_str() == "_someip-client.2.1.42.17.client.vehicle1.oem."
        && svcb.starts_with("1 . ipv4hint=10.0.0.2 port=5000 instance=1 ")
        && svcb.ends_with(" ip_proto=17")
        && tlsa_value.starts_with("3 0 0 ");
    ensure(
        ok,
        format!("{service} {tlsa} {client_name} svcb=\"{svcb}\" tlsa=\"{tlsa_value}\""),
    )
}

fn zone_scale() -> Check {
    let sim = Sim::new(ivn(Variant::Dnssec)).map_err(|e| e.to_string())?;
    let anchor = sim.oem().anchor(&sim.config().plan.vehicle);
    let (names, signed) = sim
        .server()
        .read(|z| (z.record_names().len(), z.signed_rrsets()));
    let now = BASE_TIME;
    let dnskeys = signed
        .iter()
        .find(|s| s.rrset.rtype == RrType::Dnskey)
        .cloned()
        .ok_or("no DNSKEY")?;
    let data: Vec<_> = signed
        .iter()
        .filter(|s| s.rrset.rtype != RrType::Dnskey)
        .collect();
    let secure = signed
        .iter()
        .filter(|s| {
            let keys = (s.rrset.rtype != RrType::Dnskey).then_some(&dnskeys);
            validate_rrset(&s.rrset, s.rrsig.as_ref(), keys, &anchor, now)
                == ValidationStatus::Secure
        })
        .count();

    // Sampled single-byte mutations of record data; each must be Bogus.
    let mut rng = ChaCha20Rng::seed_from_u64(0xb095);
    let (mut sampled, mut bogus) = (0, 0);
    while sampled < 100 {
        let s = data[rng.gen_range(0..data.len())];
        let idx = rng.gen_range(0..s.rrset.rdatas().len());
        let wire = s.rrset.rdatas()[idx].to_wire();
        let mut bytes = wire.clone();
        let pos = rng.gen_range(0..bytes.len());
        bytes[pos] ^= rng.gen_range(1..=255u8);
        let Ok(mutated) = RData::from_wire(s.rrset.rtype, &bytes) else {
            continue;
        };
        if mutated.to_wire() == wire {
            continue;
        }
        let mut rdatas = s.rrset.rdatas().to_vec();
        rdatas[idx] = mutated;
        let Some(set) = Rrset::from_records(s.rrset.name.clone(), s.rrset.ttl, rdatas) else {
            continue;
        };
        sampled += 1;
        if validate_rrset(&set, s.rrsig.as_ref(), Some(&dnskeys), &anchor, now)
            == ValidationStatus::Bogus
        {
            bogus += 1;
        }
    }
    ensure(
        names == 872 && secure == signed.len() && bogus == sampled,
        format!(
            "names={names} rrsets={} secure={secure} mutations={sampled} bogus={bogus}",
            signed.len()
        ),
    )
}

fn full_scenario() -> Check {
    let mut means = Vec::new();
    let mut detail = String::new();
    let mut ok = true;
    for variant in Variant::ALL {
        let m = simulate(ivn(variant)).map_err(|e| e.to_string())?;
        means.push(mean(&m, SERVICE_SETUP));
        if variant == Variant::Dnssec {
            let established = m.count(SUBSCRIPTIONS_ESTABLISHED);
            let insecure = m.count(INSECURE_ACKS);
            let worst = max(&m, SERVICE_SETUP);
            ok &= established == 448 && insecure == 0 && worst < 200.0;
            detail += &format!("established={established}/448 insecure_acks={insecure} max_service_setup_ms={worst:.2} ");
        }
    }
    // The same run with the real operation times instead of the model.
    let mut cfg = ivn(Variant::Dnssec);
    cfg.compute = sd_dane::simnet::ComputeModel::Measured;
    let measured = simulate(cfg).map_err(|e| e.to_string())?;
    let worst_measured = max(&measured, SERVICE_SETUP);
    ok &= measured.count(SUBSCRIPTIONS_ESTABLISHED) == 448 && worst_measured < 200.0;
    ok &= means[0] <= means[1] && means[1] <= means[2];
    detail += &format!(
        "measured_max_ms={worst_measured:.2} mean_ms vanilla={:.2} pre_deployed={:.2} dnssec={:.2}",
        means[0], means[1], means[2]
    );
    ensure(ok, detail)
}

fn scalability() -> Check {
    let mut series = Vec::new();
    for variant in Variant::ALL {
        series.push(run_scalability(50, variant, 7, 1).map_err(|e| e.to_string())?);
    }
    let complete = series
        .iter()
        .flatten()
        .all(|p| p.established == p.subscribers);
    let avg = |points: &[sd_dane::simnet::ScalePoint]| {
        points.iter().map(|p| p.mean_setup_ms).sum::<f64>() / points.len() as f64
    };
    let overhead = avg(&series[2]) - avg(&series[0]);
    let worst = series[2]
        .iter()
        .zip(&series[0])
        .map(|(d, v)| d.mean_setup_ms - v.mean_setup_ms)
        .fold(f64::MIN, f64::max);
    ensure(
        complete && overhead <= 10.0,
        format!(
            "points=3x50 complete={complete} mean_setup_ms vanilla={:.2} pre_deployed={:.2} dnssec={:.2} overhead_ms={overhead:.2} worst_point_ms={worst:.2}",
            avg(&series[0]),
            avg(&series[1]),
            avg(&series[2])
        ),
    )
}

fn stride() -> Check {
    let mut sim = Sim::new(small(Variant::Dnssec)).map_err(|e| e.to_string())?;
    let secure = AdversaryScript::default()
        .run(&mut sim)
        .map_err(|e| e.to_string())?;
    let rejected = secure
        .outcomes
        .iter()
        .filter(|o| matches!(o.fate, Fate::Rejected(_)))
        .count();
    let mut sim = Sim::new(small(Variant::Vanilla)).map_err(|e| e.to_string())?;
    let vanilla = AdversaryScript::default()
        .run(&mut sim)
        .map_err(|e| e.to_string())?;
    let spoof = vanilla
        .outcomes
        .iter()
        .find(|o| o.script == ScriptKind::SpoofedOffer)
        .map(|o| o.fate);
    let causes: Vec<String> = secure
        .outcomes
        .iter()
        .map(|o| format!("{}={}", o.script, o.fate))
        .collect();
    ensure(
        secure.all_passed() && rejected == 6 && spoof == Some(Fate::Succeeded),
        format!(
            "dnssec[{}] vanilla spoofed-offer={}",
            causes.join(" "),
            spoof.map_or("none".into(), |f| f.to_string())
        ),
    )
}

fn rollover() -> Check {
    let mut sim = Sim::new(small(Variant::Dnssec)).map_err(|e| e.to_string())?;
    let publisher = sim.config().plan.publishers[0].clone();
    let name = publisher_tlsa_name(&publisher.key, publisher.endpoint.port).unwrap();
    let old_key = sim.key(&name).ok_or("no publisher key")?.clone();
    let old_bundle = sim
        .bundles()
        .iter()
        .find(|b| b.tlsa_name().ok().as_ref() == Some(&name))
        .ok_or("no bundle")?
        .clone();
    let baseline = sim.run(None).map_err(|e| e.to_string())?.established();

    let (new_bundle, new_key) = sim.issue_replacement(&name).map_err(|e| e.to_string())?;
    sim.publish(&new_bundle).map_err(|e| e.to_string())?;
    sim.advance(86_400 + 1);
    let coexisting = sim.server().read(|z| {
        z.get(&name, RrType::Tlsa)
            .map_or(0, |s| s.rrset.rdatas().len())
    });
    let mut during = Vec::new();
    for key in [old_key.clone(), new_key.clone()] {
        sim.set_key(&name, key);
        sim.flush_cache();
        during.push(sim.run(None).map_err(|e| e.to_string())?.established());
    }

    sim.revoke(&old_bundle).map_err(|e| e.to_string())?;
    // Cached TLSA answers live for a day.
    sim.advance(86_400 + 1);
    sim.set_key(&name, old_key);
    let after_old = sim.run(None).map_err(|e| e.to_string())?;
    let bad_sig = after_old
        .metrics
        .rejections
        .iter()
        .any(|r| r.cause == Cause::BadSignature);
    sim.set_key(&name, new_key);
    let after_new = sim.run(None).map_err(|e| e.to_string())?.established();
    ensure(
        baseline == 6 && coexisting == 2 && during == [6, 6] && after_old.established() == 4 && bad_sig && after_new == 6,
        format!(
            "tlsa_records={coexisting} established before={baseline} old_during={} new_during={} old_after={} (bad_signature={bad_sig}) new_after={after_new}",
            during[0],
            during[1],
            after_old.established()
        ),
    )
}

fn offline() -> Check {
    let mut cfg = ivn(Variant::Dnssec);
    cfg.offline = true;
    let mut sim = Sim::new(cfg).map_err(|e| e.to_string())?;
    let out = sim.run(None).map_err(|e| e.to_string())?;
    let m = &out.metrics;
    let (established, fetches, insecure) = (
        out.established(),
        m.count(UPSTREAM_FETCHES),
        m.count(INSECURE_ANSWERS),
    );
    ensure(
        established == 448 && fetches == 0 && insecure == 0,
        format!(
            "established={established}/448 upstream_fetches={fetches} insecure_answers={insecure}"
        ),
    )
}

fn property_suites() -> Check {
    let mut parts = Vec::new();
    let mut ok = true;
    let mut record = |name: &str, result: Result<(), String>| {
        ok &= result.is_ok();
        parts.push(match result {
            Ok(()) => format!("{name}=ok"),
            Err(e) => format!("{name}=FAILED({e})"),
        });
    };
    record("wire_roundtrip_10k", props::wire_roundtrip(10_000));
    record("key_agreement_1k", props::key_agreement(1_000));
    let cells = props::scope_policy_matrix();
    let matrix = if cells.len() == 9 && cells.iter().all(|c| c.actual == c.expected) {
        Ok(())
    } else {
        Err(format!("{cells:?}"))
    };
    record("scope_policy_9_cells", matrix);
    let pair = common::pair();
    let model = Explorer::new(&pair, Variant::Dnssec, 12).run();
    let verdict = if model.passed() {
        Ok(())
    } else {
        Err(format!(
            "violations={:?} keyed_states={}",
            model.violations, model.keyed_states
        ))
    };
    record("fsm_depth_12", verdict);
    parts.push(format!(
        "(model transitions={} states={} keyed_states={})",
        model.transitions, model.distinct_states, model.keyed_states
    ));
    ensure(ok, parts.join(" "))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Check);
    let criteria: [Criterion; 8] = [
        ("golden-names", golden_names),
        ("zone-scale", zone_scale),
        ("full-scenario", full_scenario),
        ("scalability", scalability),
        ("stride", stride),
        ("rollover", rollover),
        ("offline", offline),
        ("property-suites", property_suites),
    ];
    let mut failed = Vec::new();
    for (n, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let (verdict, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!(
            "criterion {} {name}: {verdict} [{:.1?}] {detail}",
            n + 1,
            started.elapsed()
        );
        if result.is_err() {
            failed.push(n + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
