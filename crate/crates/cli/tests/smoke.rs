//! End-to-end runs of every subcommand against temporary directories.

use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sd_dane::wire::{
    encode_message, security_option, EntryType, Ipv4Endpoint, SdEntry, SdHeader, SdMessage,
    SdOption, SecurityOption,
};
use tempfile::TempDir;

const NOW: &str = "1750000000";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sd-dane"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[track_caller]
fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        stderr(&out),
        stdout(&out)
    );
    stdout(&out)
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

/// Builds the zone plan into `dir` with a fixed seed and time.
fn build(dir: &TempDir) {
    let plan = scenario("vehicle1.zoneplan");
    ok(&[
        "--seed",
        "3",
        "-o",
        &path(dir, ""),
        "forge",
        "build",
        "--plan",
        plan.to_str().unwrap(),
        "--now",
        NOW,
    ]);
}

#[test]
fn no_arguments_prints_help_and_exits_2() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(2));
    let text = stdout(&out) + &stderr(&out);
    assert!(text.contains("Usage"), "{text}");
    assert!(text.contains("zone"));
}

#[test]
fn bare_subcommand_prints_its_help() {
    let out = run(&["zone"]);
    assert_eq!(out.status.code(), Some(2));
    assert!((stdout(&out) + &stderr(&out)).contains("verify"));
}

#[test]
fn wire_dump_decodes_security_options() {
    let dir = TempDir::new().unwrap();
    let mut msg = SdMessage::new(SdHeader::default());
    msg.push_entry(
        SdEntry::new(EntryType::Offer, 42, 1, 2, 3, 3),
        vec![SdOption::Ipv4Endpoint(Ipv4Endpoint::udp(
            Ipv4Addr::new(10, 0, 0, 2),
            5000,
        ))],
        vec![security_option(&[SecurityOption::Challenge(0xdead_beef)])],
    );
    let bytes = encode_message(&msg).unwrap();
    let file = path(&dir, "offer.hex");
    std::fs::write(&file, hex::encode(&bytes)).unwrap();
    let text = ok(&["wire", "dump", &file]);
    assert!(text.contains("service=42"), "{text}");
    assert!(text.contains("10.0.0.2:5000"), "{text}");
    assert!(text.contains("challenge nonce=0xdeadbeef"), "{text}");

    let raw = path(&dir, "offer.bin");
    std::fs::write(&raw, &bytes).unwrap();
    assert_eq!(ok(&["wire", "dump", "--raw", &raw]), text);
}

#[test]
fn wire_dump_reports_decode_stage_on_truncated_input() {
    let dir = TempDir::new().unwrap();
    let file = path(&dir, "short.hex");
    std::fs::write(&file, "ffff8100000000").unwrap();
    let out = run(&["wire", "dump", &file]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("decode:"), "{}", stderr(&out));
}

#[test]
fn forge_build_produces_a_verifiable_zone() {
    let dir = TempDir::new().unwrap();
    build(&dir);
    for f in [
        "zone.txt",
        "anchor.txt",
        "ksk.pem",
        "zsk.pem",
        "supplier.pem",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let bundles = std::fs::read_dir(dir.path().join("bundles"))
        .unwrap()
        .count();
    let keys = std::fs::read_dir(dir.path().join("keys")).unwrap().count();
    assert_eq!((bundles, keys), (4, 4));
    let text = ok(&[
        "zone",
        "verify",
        "--zone",
        &path(&dir, "zone.txt"),
        "--anchor",
        &path(&dir, "anchor.txt"),
        "--now",
        NOW,
    ]);
    assert!(text.contains("7 rrsets, 7 secure, 0 failed"), "{text}");
}

#[test]
fn zone_verify_names_the_tampered_record() {
    let dir = TempDir::new().unwrap();
    build(&dir);
    let zone = std::fs::read_to_string(dir.path().join("zone.txt")).unwrap();
    let tampered = zone.replace("ipv4hint=10.0.0.2", "ipv4hint=10.0.0.9");
    assert_ne!(zone, tampered);
    std::fs::write(dir.path().join("tampered.txt"), tampered).unwrap();
    let out = run(&[
        "zone",
        "verify",
        "--zone",
        &path(&dir, "tampered.txt"),
        "--anchor",
        &path(&dir, "anchor.txt"),
        "--now",
        NOW,
    ]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(
        text.contains("Bogus _someip.3.2.1.42.service.vehicle1.oem. SVCB"),
        "{text}"
    );
    assert_eq!(text.matches("Bogus").count(), 1, "{text}");
}

#[test]
fn zone_verify_rejects_a_foreign_anchor() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    build(&a);
    let plan = scenario("vehicle1.zoneplan");
    ok(&[
        "--seed",
        "4",
        "-o",
        &path(&b, ""),
        "forge",
        "build",
        "--plan",
        plan.to_str().unwrap(),
        "--now",
        NOW,
    ]);
    let out = run(&[
        "zone",
        "verify",
        "--zone",
        &path(&a, "zone.txt"),
        "--anchor",
        &path(&b, "anchor.txt"),
        "--now",
        NOW,
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn zone_preload_answers_offline() {
    let dir = TempDir::new().unwrap();
    build(&dir);
    let text = ok(&[
        "zone",
        "preload",
        "--offline-check",
        "--zone",
        &path(&dir, "zone.txt"),
        "--anchor",
        &path(&dir, "anchor.txt"),
        "--now",
        NOW,
    ]);
    assert!(text.contains("cached 7 rrsets, 0 rejected"), "{text}");
    assert!(text.contains("0 not secure, 0 upstream fetches"), "{text}");
}

#[test]
fn zone_sign_rekeys_an_unsigned_zone() {
    let dir = TempDir::new().unwrap();
    build(&dir);
    let zone = std::fs::read_to_string(dir.path().join("zone.txt")).unwrap();
    let unsigned: String = zone
        .lines()
        .filter(|l| !l.contains(" RRSIG ") && !l.contains(" DNSKEY "))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(dir.path().join("unsigned.txt"), unsigned).unwrap();
    let out = path(&dir, "signed");
    ok(&[
        "--seed",
        "9",
        "-o",
        &out,
        "zone",
        "sign",
        "--zone",
        &path(&dir, "unsigned.txt"),
        "--now",
        NOW,
    ]);
    for f in ["zone.txt", "anchor.txt", "ksk.pem", "zsk.pem"] {
        assert!(dir.path().join("signed").join(f).exists(), "{f} missing");
    }
    let text = ok(&[
        "zone",
        "verify",
        "--zone",
        &path(&dir, "signed/zone.txt"),
        "--anchor",
        &path(&dir, "signed/anchor.txt"),
        "--now",
        NOW,
    ]);
    assert!(text.contains("0 failed"), "{text}");
}

#[test]
fn forge_issue_publish_and_audit() {
    let dir = TempDir::new().unwrap();
    build(&dir);
    let name = "_someip-client.99.client.vehicle1.oem.";
    ok(&[
        "-o",
        &path(&dir, "issued"),
        "forge",
        "issue",
        "--name",
        name,
        "--supplier",
        &path(&dir, "supplier.pem"),
        "--validity-days",
        "10",
        "--now",
        NOW,
    ]);
    let bundle = path(
        &dir,
        &format!("issued/{}.bundle", name.trim_end_matches('.')),
    );
    let text = ok(&[
        "-o",
        &path(&dir, "published"),
        "forge",
        "publish",
        "--zone",
        &path(&dir, "zone.txt"),
        "--zsk",
        &path(&dir, "zsk.pem"),
        "--ksk",
        &path(&dir, "ksk.pem"),
        "--bundle",
        &bundle,
        "--now",
        NOW,
    ]);
    assert!(text.contains(&format!("published {name}")), "{text}");
    let verified = ok(&[
        "zone",
        "verify",
        "--zone",
        &path(&dir, "published/zone.txt"),
        "--anchor",
        &path(&dir, "anchor.txt"),
        "--now",
        NOW,
    ]);
    assert!(verified.contains("8 rrsets, 8 secure"), "{verified}");
    let audit = ok(&[
        "forge",
        "audit",
        "--zone",
        &path(&dir, "published/zone.txt"),
        "--horizon",
        "30",
        "--now",
        NOW,
    ]);
    assert!(audit.contains(&format!("expiring {name}")), "{audit}");
    assert!(audit.contains("1 findings"), "{audit}");
}

#[test]
fn forge_issue_requires_endpoint_for_publishers() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "-o",
        &path(&dir, ""),
        "forge",
        "issue",
        "--name",
        "_5000._someip.3.2.1.42.service.vehicle1.oem.",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("needs --endpoint"),
        "{}",
        stderr(&out)
    );
    ok(&[
        "-o",
        &path(&dir, ""),
        "forge",
        "issue",
        "--name",
        "_5000._someip.3.2.1.42.service.vehicle1.oem.",
        "--endpoint",
        "10.0.0.2:5000/udp",
    ]);
}

#[test]
fn sim_run_writes_metrics_csv() {
    let dir = TempDir::new().unwrap();
    let ivn = scenario("ivn.plan");
    let args = |out: &str| {
        ok(&[
            "-o",
            out,
            "sim",
            "run",
            "--scenario",
            ivn.to_str().unwrap(),
            "--variant",
            "dnssec",
            "--seed",
            "7",
        ])
    };
    args(&path(&dir, "a"));
    args(&path(&dir, "b"));
    let a = std::fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("b/metrics.csv")).unwrap();
    assert!(a.starts_with("metric,min,mean,max\n"));
    assert!(
        a.contains("subscriptions_established,448.0000,448.0000,448.0000"),
        "{a}"
    );
    assert_eq!(a, b, "same seed must give the same CSV");
}

#[test]
fn sim_scale_writes_one_row_per_count_and_variant() {
    let dir = TempDir::new().unwrap();
    ok(&["-o", &path(&dir, ""), "sim", "scale", "--max", "3"]);
    let csv = std::fs::read_to_string(dir.path().join("scale.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 3, "{csv}");
    assert!(csv.contains("3,dnssec,"), "{csv}");
}

#[test]
fn sim_attack_reports_expected_fates() {
    let dir = TempDir::new().unwrap();
    let small = scenario("small.plan");
    for variant in ["vanilla", "pre_deployed", "dnssec"] {
        let text = ok(&[
            "-o",
            &path(&dir, variant),
            "sim",
            "attack",
            "--scenario",
            small.to_str().unwrap(),
            "--variant",
            variant,
        ]);
        assert_eq!(text.matches("result=pass").count(), 6, "{text}");
    }
    let script = path(&dir, "one.script");
    std::fs::write(&script, "attack forged-ack victim 1\n").unwrap();
    let text = ok(&[
        "-o",
        &path(&dir, ""),
        "sim",
        "attack",
        "--scenario",
        small.to_str().unwrap(),
        "--script",
        &script,
    ]);
    assert!(text.contains("attack=forged-ack"), "{text}");
    assert!(text.contains("fate=rejected:bad_signature"), "{text}");
    assert!(dir.path().join("attack.txt").exists());
}

#[test]
fn sim_plot_data_is_long_format_for_all_variants() {
    let dir = TempDir::new().unwrap();
    let small = scenario("small.plan");
    ok(&[
        "-o",
        &path(&dir, ""),
        "--config",
        small.to_str().unwrap(),
        "sim",
        "plot-data",
    ]);
    let csv = std::fs::read_to_string(dir.path().join("plot.csv")).unwrap();
    assert!(csv.starts_with("variant,metric,value\n"));
    for variant in ["vanilla", "pre_deployed", "dnssec"] {
        assert!(
            csv.contains(&format!("{variant},subscription_setup_ms,")),
            "{variant}"
        );
    }
    assert!(!csv.contains("measured_"));
}

#[test]
fn missing_scenario_names_the_stage() {
    let out = run(&["sim", "run"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).starts_with("error: scenario:"),
        "{}",
        stderr(&out)
    );
}
