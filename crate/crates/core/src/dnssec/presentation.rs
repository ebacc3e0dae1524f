//! Zone files in standard presentation format.
//!
//! One record per logical line: `name TTL IN TYPE rdata`. Parentheses let
//! rdata span lines and `;` starts a comment. A `$ORIGIN` line names the
//! apex.

use std::fmt::Write as _;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use chrono::{DateTime, NaiveDateTime};

use super::{Dnskey, DnssecError, RData, Record, RrType, Rrsig, TrustAnchor, Zone};
use crate::records::DnsName;

/// `YYYYMMDDHHmmSS` in UTC.
pub fn format_rrsig_time(t: u32) -> String {
    DateTime::from_timestamp(t as i64, 0)
        .map(|d| d.format("%Y%m%d%H%M%S").to_string())
        .unwrap_or_else(|| t.to_string())
}

/// Accepts `YYYYMMDDHHmmSS` or plain decimal seconds.
pub fn parse_rrsig_time(text: &str) -> Option<u32> {
    if text.len() == 14 && text.bytes().all(|b| b.is_ascii_digit()) {
        let parsed = NaiveDateTime::parse_from_str(text, "%Y%m%d%H%M%S").ok()?;
        return u32::try_from(parsed.and_utc().timestamp()).ok();
    }
    text.parse().ok()
}

fn format_rdata(data: &RData) -> String {
    match data {
        RData::Svcb(r) => r.to_string(),
        RData::Tlsa(r) => r.to_string(),
        RData::Dnskey(k) => format!(
            "{} {} {} {}",
            k.flags,
            k.protocol,
            k.algorithm,
            BASE64.encode(&k.public_key)
        ),
        RData::Rrsig(s) => format!(
            "{} {} {} {} {} {} {} {} {}",
            s.type_covered,
            s.algorithm,
            s.labels,
            s.original_ttl,
            format_rrsig_time(s.expiration),
            format_rrsig_time(s.inception),
            s.key_tag,
            s.signer,
            BASE64.encode(&s.signature)
        ),
    }
}

fn parse_rdata(rtype: RrType, fields: &[&str]) -> Result<RData, String> {
    let joined = fields.join(" ");
    match rtype {
        RrType::Svcb => joined.parse().map(RData::Svcb).map_err(|e| e.to_string()),
        RrType::Tlsa => joined.parse().map(RData::Tlsa).map_err(|e| e.to_string()),
        RrType::Dnskey => {
            if fields.len() < 4 {
                return Err("DNSKEY needs flags, protocol, algorithm and key".into());
            }
            let num = |s: &str| s.parse::<u16>().map_err(|_| format!("bad number {s:?}"));
            Ok(RData::Dnskey(Dnskey {
                flags: num(fields[0])?,
                protocol: num(fields[1])? as u8,
                algorithm: num(fields[2])? as u8,
                public_key: BASE64
                    .decode(fields[3..].concat())
                    .map_err(|e| e.to_string())?,
            }))
        }
        RrType::Rrsig => {
            if fields.len() < 9 {
                return Err("RRSIG needs nine fields".into());
            }
            let num = |s: &str| s.parse::<u32>().map_err(|_| format!("bad number {s:?}"));
            let time = |s: &str| parse_rrsig_time(s).ok_or_else(|| format!("bad time {s:?}"));
            Ok(RData::Rrsig(Rrsig {
                type_covered: fields[0]
                    .parse()
                    .map_err(|e: crate::records::RecordError| e.to_string())?,
                algorithm: num(fields[1])? as u8,
                labels: num(fields[2])? as u8,
                original_ttl: num(fields[3])?,
                expiration: time(fields[4])?,
                inception: time(fields[5])?,
                key_tag: num(fields[6])? as u16,
                signer: DnsName::parse(fields[7]).map_err(|e| e.to_string())?,
                signature: BASE64
                    .decode(fields[8..].concat())
                    .map_err(|e| e.to_string())?,
            }))
        }
    }
}

/// Parsed zone file contents.
#[derive(Debug, Clone, Default)]
pub struct ZoneText {
    pub origin: Option<DnsName>,
    pub records: Vec<Record>,
}

/// Splits text into logical lines, joining parenthesised continuations.
/// Each logical line keeps the number of the line it started on.
fn logical_lines(text: &str) -> Result<Vec<(usize, String)>, DnssecError> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut depth = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split(';').next().unwrap_or_default();
        if depth == 0 {
            start = idx + 1;
        }
        for c in line.chars() {
            match c {
                '(' => depth += 1,
                ')' => {
                    depth = depth.checked_sub(1).ok_or(DnssecError::Syntax {
                        line: idx + 1,
                        reason: "unbalanced ')'".into(),
                    })?
                }
                _ => current.push(c),
            }
        }
        current.push(' ');
        if depth == 0 {
            if !current.trim().is_empty() {
                out.push((start, current.trim().to_string()));
            }
            current.clear();
        }
    }
    if depth != 0 {
        return Err(DnssecError::Syntax {
            line: start,
            reason: "unterminated '('".into(),
        });
    }
    Ok(out)
}

/// Parses a zone file.
pub fn parse_zone_text(text: &str) -> Result<ZoneText, DnssecError> {
    let mut parsed = ZoneText::default();
    for (line, content) in logical_lines(text)? {
        let syntax = |reason: String| DnssecError::Syntax { line, reason };
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields[0].eq_ignore_ascii_case("$ORIGIN") {
            let name = fields
                .get(1)
                .ok_or_else(|| syntax("$ORIGIN without a name".into()))?;
            parsed.origin = Some(DnsName::parse(name).map_err(|e| syntax(e.to_string()))?);
            continue;
        }
        if fields.len() < 5 {
            return Err(syntax("expected: name TTL IN TYPE rdata".into()));
        }
        let name = DnsName::parse(fields[0]).map_err(|e| syntax(e.to_string()))?;
        let ttl: u32 = fields[1]
            .parse()
            .map_err(|_| syntax(format!("bad TTL {:?}", fields[1])))?;
        if !fields[2].eq_ignore_ascii_case("IN") {
            return Err(syntax(format!("unsupported class {:?}", fields[2])));
        }
        let rtype: RrType = fields[3]
            .parse()
            .map_err(|e: crate::records::RecordError| syntax(e.to_string()))?;
        let data = parse_rdata(rtype, &fields[4..]).map_err(syntax)?;
        parsed.records.push(Record::new(name, ttl, data));
    }
    Ok(parsed)
}

impl Zone {
    /// Presentation-format text of the whole zone, each rrset followed by
    /// its signature.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "$ORIGIN {}", self.apex());
        for record in self.records_with_signatures() {
            let _ = writeln!(
                out,
                "{} {} IN {} {}",
                record.name,
                record.ttl,
                record.data.rtype(),
                format_rdata(&record.data)
            );
        }
        out
    }

    /// Loads a zone from text. The apex is the `$ORIGIN`, or else the owner
    /// of the DNSKEY rrset.
    pub fn from_text(text: &str) -> Result<Zone, DnssecError> {
        let parsed = parse_zone_text(text)?;
        let apex = parsed
            .origin
            .clone()
            .or_else(|| {
                parsed
                    .records
                    .iter()
                    .find(|r| r.data.rtype() == RrType::Dnskey)
                    .map(|r| r.name.clone())
            })
            .ok_or(DnssecError::Syntax {
                line: 1,
                reason: "no $ORIGIN and no DNSKEY record".into(),
            })?;
        let mut records = Vec::new();
        let mut rrsigs = Vec::new();
        for record in parsed.records {
            match record.data {
                RData::Rrsig(sig) => rrsigs.push((record.name, sig)),
                _ => records.push(record),
            }
        }
        Zone::from_parts(apex, records, rrsigs)
    }
}

impl TrustAnchor {
    /// The anchor as a single DNSKEY line at the apex.
    pub fn to_text(&self) -> String {
        format!(
            "{} {} IN DNSKEY {}\n",
            self.apex,
            super::DEFAULT_TTL,
            format_rdata(&RData::Dnskey(self.dnskey.clone()))
        )
    }

    /// Reads the first DNSKEY record of `text`.
    pub fn from_text(text: &str) -> Result<TrustAnchor, DnssecError> {
        parse_zone_text(text)?
            .records
            .into_iter()
            .find_map(|r| match r.data {
                RData::Dnskey(dnskey) => Some(TrustAnchor {
                    apex: r.name,
                    dnskey,
                }),
                _ => None,
            })
            .ok_or(DnssecError::Syntax {
                line: 1,
                reason: "no DNSKEY record".into(),
            })
    }
}
