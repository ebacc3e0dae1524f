//! `zone sign|verify|preload`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Subcommand};
use sd_dane::crypto::{KeyPair, KeyUsage, SignatureScheme};
use sd_dane::dnssec::{Resolver, RrType, TrustAnchor, ValidationStatus, Zone, ZoneServer};
use sd_dane::zoneforge::Oem;

use crate::support::{fail, read_text, rng, unix_now, write_out, CliResult, Stage};
use crate::GlobalOptions;

#[derive(Debug, Subcommand)]
pub enum ZoneCommand {
    /// Sign a zone file, generating keys that are not supplied.
    Sign(SignArgs),
    /// Validate every rrset against a trust anchor; exit 1 on any failure.
    Verify(VerifyArgs),
    /// Preload a resolver from a zone; with `--offline-check`, disconnect
    /// the zone and answer every rrset from cache.
    Preload(PreloadArgs),
}

#[derive(Debug, Args)]
pub struct SignArgs {
    #[arg(long)]
    pub zone: PathBuf,
    /// Key-signing key PEM; generated into the output directory if absent.
    #[arg(long)]
    pub ksk: Option<PathBuf>,
    /// Zone-signing key PEM; generated into the output directory if absent.
    #[arg(long)]
    pub zsk: Option<PathBuf>,
    #[arg(long, default_value = "p256")]
    pub scheme: SignatureScheme,
    /// Signing time in Unix seconds; defaults to the system clock.
    #[arg(long)]
    pub now: Option<u64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub zone: PathBuf,
    #[arg(long)]
    pub anchor: PathBuf,
    #[arg(long)]
    pub now: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PreloadArgs {
    #[arg(long)]
    pub zone: PathBuf,
    /// Disconnect the zone after preloading and resolve everything offline.
    #[arg(long)]
    pub offline_check: bool,
    #[arg(long)]
    pub anchor: PathBuf,
    #[arg(long)]
    pub now: Option<u64>,
}

pub fn run(cmd: ZoneCommand, global: &GlobalOptions) -> CliResult<ExitCode> {
    match cmd {
        ZoneCommand::Sign(args) => sign(args, global),
        ZoneCommand::Verify(args) => verify(args),
        ZoneCommand::Preload(args) => preload(args),
    }
}

fn load_key(path: &Path, usage: KeyUsage) -> CliResult<KeyPair> {
    KeyPair::from_pem(&read_text(path)?, usage).stage("key")
}

fn sign(args: SignArgs, global: &GlobalOptions) -> CliResult<ExitCode> {
    let now = args.now.unwrap_or_else(unix_now);
    let mut rng = rng(global);
    let unsigned = Zone::from_text(&read_text(&args.zone)?).stage("parse")?;
    let ksk = match &args.ksk {
        Some(path) => load_key(path, KeyUsage::KeySigning)?,
        None => {
            let key = KeyPair::generate(args.scheme, KeyUsage::KeySigning, &mut rng);
            write_out(global, "ksk.pem", &key.to_pem())?;
            key
        }
    };
    let zsk = match &args.zsk {
        Some(path) => load_key(path, KeyUsage::ZoneSigning)?,
        None => {
            let key = KeyPair::generate(args.scheme, KeyUsage::ZoneSigning, &mut rng);
            write_out(global, "zsk.pem", &key.to_pem())?;
            key
        }
    };
    // Old keys and signatures are dropped: the zone is re-keyed from scratch.
    let records = unsigned
        .records_with_signatures()
        .into_iter()
        .filter(|r| !matches!(r.data.rtype(), RrType::Rrsig | RrType::Dnskey))
        .collect();
    let mut zone = Zone::from_parts(unsigned.apex().clone(), records, Vec::new()).stage("zone")?;
    zone.install_keys(zsk, &ksk, now).stage("sign")?;
    zone.sign(now).stage("sign")?;
    let oem = Oem::from_key(ksk).stage("key")?;
    write_out(global, "zone.txt", &zone.to_text())?;
    write_out(global, "anchor.txt", &oem.anchor(zone.apex()).to_text())?;
    println!(
        "signed {}: {} rrsets, {} signatures",
        zone.apex(),
        zone.rrset_count(),
        zone.signature_count()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_zone_and_anchor(zone: &Path, anchor: &Path) -> CliResult<(Zone, TrustAnchor)> {
    let zone = Zone::from_text(&read_text(zone)?).stage("parse zone")?;
    let anchor = TrustAnchor::from_text(&read_text(anchor)?).stage("parse anchor")?;
    Ok((zone, anchor))
}

fn verify(args: VerifyArgs) -> CliResult<ExitCode> {
    let now = args.now.unwrap_or_else(unix_now);
    let (zone, anchor) = load_zone_and_anchor(&args.zone, &args.anchor)?;
    let results = zone.verify_all(&anchor, now);
    let mut bad = 0;
    for (name, rtype, status) in &results {
        if *status != ValidationStatus::Secure {
            bad += 1;
            println!("{status} {name} {rtype}");
        }
    }
    println!(
        "{} rrsets, {} secure, {bad} failed",
        results.len(),
        results.len() - bad
    );
    Ok(if bad == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn preload(args: PreloadArgs) -> CliResult<ExitCode> {
    let now = args.now.unwrap_or_else(unix_now);
    let (zone, anchor) = load_zone_and_anchor(&args.zone, &args.anchor)?;
    let queries: Vec<_> = zone
        .signed_rrsets()
        .into_iter()
        .map(|s| (s.rrset.name, s.rrset.rtype))
        .collect();
    let server = Arc::new(ZoneServer::new(zone));
    let resolver = Resolver::new(anchor, server.clone());
    let report = resolver.preload(now).stage("preload")?;
    for (name, rtype) in &report.rejected {
        println!("rejected {name} {rtype}");
    }
    println!(
        "cached {} rrsets, {} rejected",
        report.cached,
        report.rejected.len()
    );
    if !args.offline_check {
        return Ok(if report.rejected.is_empty() {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(1)
        });
    }
    server.disconnect();
    resolver.reset_stats();
    let mut insecure = 0;
    for (name, rtype) in &queries {
        match resolver.resolve(name, *rtype, now) {
            Ok(r) if r.is_secure() => {}
            Ok(r) => {
                insecure += 1;
                println!("{} {name} {rtype}", r.status);
            }
            Err(e) => {
                insecure += 1;
                println!("{e}");
            }
        }
    }
    let fetches = resolver.stats().fetches;
    println!(
        "answered {} offline, {insecure} not secure, {fetches} upstream fetches",
        queries.len()
    );
    if !report.rejected.is_empty() || insecure > 0 || fetches > 0 {
        return fail("preload", "zone did not preload completely");
    }
    Ok(ExitCode::SUCCESS)
}
