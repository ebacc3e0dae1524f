//! `forge issue|publish|build|audit`: the supplier and OEM workflows.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Subcommand};
use sd_dane::crypto::{KeyPair, KeyUsage, SignatureScheme};
use sd_dane::dnssec::Zone;
use sd_dane::records::{DnsName, Identity};
use sd_dane::simnet::ScenarioConfig;
use sd_dane::zoneforge::{
    audit, build_vehicle_zone, issue_plan, parse_endpoint, supplier_issue, BundleTarget, Oem,
    Supplier, SupplierBundle, ValidityWindow, VehicleZonePlan,
};

use crate::support::{fail, file_stem, read_text, rng, unix_now, write_out, CliResult, Stage};
use crate::GlobalOptions;

const DAY: u64 = 86_400;

#[derive(Debug, Subcommand)]
pub enum ForgeCommand {
    /// Supplier side: issue a certificate bundle for one TLSA name.
    Issue(IssueArgs),
    /// OEM side: publish bundles into a signed zone.
    Publish(PublishArgs),
    /// Issue every identity of a plan and build the signed vehicle zone.
    Build(BuildArgs),
    /// List certificates that are expired or expire soon.
    Audit(AuditArgs),
}

#[derive(Debug, Args)]
pub struct IssueArgs {
    /// TLSA owner name of the publisher or client.
    #[arg(long)]
    pub name: String,
    /// Publisher endpoint `ADDRESS:PORT/PROTO`; required for publishers.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Supplier signing key PEM; generated into the output directory if absent.
    #[arg(long)]
    pub supplier: Option<PathBuf>,
    #[arg(long, default_value = "supplier")]
    pub supplier_name: String,
    /// File whose digest the supplier binds to the certificate.
    #[arg(long)]
    pub binary: Option<PathBuf>,
    #[arg(long, default_value = "p256")]
    pub scheme: SignatureScheme,
    #[arg(long, default_value_t = 365)]
    pub validity_days: u64,
    #[arg(long)]
    pub now: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PublishArgs {
    #[arg(long)]
    pub zone: PathBuf,
    #[arg(long)]
    pub zsk: PathBuf,
    #[arg(long)]
    pub ksk: PathBuf,
    #[arg(long = "bundle", required = true)]
    pub bundles: Vec<PathBuf>,
    #[arg(long)]
    pub now: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Zone plan, or a scenario file containing one.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, default_value = "p256")]
    pub scheme: SignatureScheme,
    #[arg(long, default_value_t = 365)]
    pub validity_days: u64,
    #[arg(long)]
    pub now: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub zone: PathBuf,
    /// Report certificates expiring within this many days.
    #[arg(long, default_value_t = 30)]
    pub horizon: u64,
    #[arg(long)]
    pub now: Option<u64>,
}

pub fn run(cmd: ForgeCommand, global: &GlobalOptions) -> CliResult<ExitCode> {
    match cmd {
        ForgeCommand::Issue(args) => issue(args, global),
        ForgeCommand::Publish(args) => publish(args, global),
        ForgeCommand::Build(args) => build(args, global),
        ForgeCommand::Audit(args) => run_audit(args),
    }
}

fn target_for(name: &DnsName, endpoint: Option<&str>) -> CliResult<BundleTarget> {
    match Identity::parse(name).stage("name")? {
        Identity::Publisher { key, port } => {
            let Some(text) = endpoint else {
                return fail(
                    "name",
                    format!("{name} is a publisher name and needs --endpoint"),
                );
            };
            let Some(endpoint) = parse_endpoint(text) else {
                return fail("endpoint", format!("bad endpoint {text:?}"));
            };
            if endpoint.port != port {
                return fail(
                    "endpoint",
                    format!(
                        "port {} does not match port {port} in {name}",
                        endpoint.port
                    ),
                );
            }
            Ok(BundleTarget::Publisher { key, endpoint })
        }
        Identity::Client(key) => {
            if endpoint.is_some() {
                return fail(
                    "endpoint",
                    format!("{name} is a client name; drop --endpoint"),
                );
            }
            Ok(BundleTarget::Client(key))
        }
    }
}

fn issue(args: IssueArgs, global: &GlobalOptions) -> CliResult<ExitCode> {
    let now = args.now.unwrap_or_else(unix_now);
    let mut rng = rng(global);
    let name = DnsName::parse(&args.name).stage("name")?;
    let target = target_for(&name, args.endpoint.as_deref())?;
    let mut supplier = match &args.supplier {
        Some(path) => {
            let key =
                KeyPair::from_pem(&read_text(path)?, KeyUsage::SupplierSigning).stage("key")?;
            Supplier::from_key(args.supplier_name.clone(), key).stage("key")?
        }
        None => {
            let supplier = Supplier::generate(args.supplier_name.clone(), args.scheme, &mut rng);
            write_out(global, "supplier.pem", &supplier.key().to_pem())?;
            supplier
        }
    };
    let binary = match &args.binary {
        Some(path) => std::fs::read(path).stage("read")?,
        None => format!("binary for {name}").into_bytes(),
    };
    let window = ValidityWindow::days(now, args.validity_days).stage("issue")?;
    let (bundle, key) = supplier_issue(
        &mut supplier,
        target,
        &binary,
        window,
        args.scheme,
        &mut rng,
    )
    .stage("issue")?;
    let stem = file_stem(&args.name);
    write_out(global, format!("{stem}.bundle"), &bundle.to_text())?;
    write_out(global, format!("{stem}.key.pem"), &key.to_pem())?;
    println!(
        "issued {name}, valid until {}",
        bundle.certificate.not_after()
    );
    Ok(ExitCode::SUCCESS)
}

fn publish(args: PublishArgs, global: &GlobalOptions) -> CliResult<ExitCode> {
    let now = args.now.unwrap_or_else(unix_now);
    let mut zone = Zone::from_text(&read_text(&args.zone)?).stage("parse zone")?;
    let zsk = KeyPair::from_pem(&read_text(&args.zsk)?, KeyUsage::ZoneSigning).stage("key")?;
    let ksk = KeyPair::from_pem(&read_text(&args.ksk)?, KeyUsage::KeySigning).stage("key")?;
    zone.attach_zsk(zsk).stage("key")?;
    let oem = Oem::from_key(ksk).stage("key")?;
    for path in &args.bundles {
        let bundle = SupplierBundle::from_text(&read_text(path)?).stage("parse bundle")?;
        let outcome = oem.publish(&mut zone, &bundle, now).stage("publish")?;
        let name = bundle.tlsa_name().stage("publish")?;
        let verb = if outcome.tlsa_added || outcome.svcb_added {
            "published"
        } else {
            "unchanged"
        };
        println!("{verb} {name}");
    }
    write_out(global, "zone.txt", &zone.to_text())?;
    Ok(ExitCode::SUCCESS)
}

fn load_plan(path: &Path) -> CliResult<VehicleZonePlan> {
    let text = read_text(path)?;
    match VehicleZonePlan::parse(&text) {
        Ok(plan) => Ok(plan),
        // Scenario files embed a plan among other keywords.
        Err(plan_err) => match ScenarioConfig::parse(&text) {
            Ok(cfg) => Ok(cfg.plan),
            Err(_) => fail("parse plan", plan_err.to_string()),
        },
    }
}

fn build(args: BuildArgs, global: &GlobalOptions) -> CliResult<ExitCode> {
    let now = args.now.unwrap_or_else(unix_now);
    let Some(path) = args.plan.as_ref().or(global.config.as_ref()) else {
        return fail("plan", "no --plan or --config given");
    };
    let plan = load_plan(path)?;
    let mut rng = rng(global);
    let oem = Oem::generate(args.scheme, &mut rng);
    let zsk = KeyPair::generate(args.scheme, KeyUsage::ZoneSigning, &mut rng);
    let mut supplier = Supplier::generate("supplier", args.scheme, &mut rng);
    let window = ValidityWindow::days(now, args.validity_days).stage("issue")?;
    let (bundles, keys) =
        issue_plan(&plan, &mut supplier, window, args.scheme, &mut rng).stage("issue")?;
    write_out(global, "ksk.pem", &oem.ksk().to_pem())?;
    write_out(global, "zsk.pem", &zsk.to_pem())?;
    write_out(global, "supplier.pem", &supplier.key().to_pem())?;
    for bundle in &bundles {
        let name = bundle.tlsa_name().stage("issue")?.to_string();
        write_out(
            global,
            format!("bundles/{}.bundle", file_stem(&name)),
            &bundle.to_text(),
        )?;
    }
    for (name, key) in &keys {
        let name = name.to_string();
        write_out(
            global,
            format!("keys/{}.pem", file_stem(&name)),
            &key.to_pem(),
        )?;
    }
    let zone = build_vehicle_zone(&plan, &bundles, &oem, zsk, now).stage("build")?;
    write_out(global, "zone.txt", &zone.to_text())?;
    write_out(global, "anchor.txt", &oem.anchor(&plan.vehicle).to_text())?;
    println!(
        "built {}: {} publishers, {} subscribers, {} rrsets",
        plan.vehicle,
        plan.publishers.len(),
        plan.subscribers.len(),
        zone.rrset_count()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_audit(args: AuditArgs) -> CliResult<ExitCode> {
    let now = args.now.unwrap_or_else(unix_now);
    let zone = Zone::from_text(&read_text(&args.zone)?).stage("parse zone")?;
    let findings = audit(&zone, now, args.horizon * DAY);
    for f in &findings {
        let days = f.not_after.saturating_sub(now) / DAY;
        println!(
            "{} {} not_after={} ({days} days)",
            f.state, f.name, f.not_after
        );
    }
    println!("{} findings", findings.len());
    Ok(ExitCode::SUCCESS)
}
