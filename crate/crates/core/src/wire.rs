//! SOME/IP service-discovery wire format.
//!
//! A service-discovery datagram is a 16-byte SOME/IP header followed by the
//! SD payload:
//!
//! ```text
//! +--------+--------+--------+--------+
//! | service id (0xFFFF) | method id    |
//! +--------+--------+--------+--------+
//! | length (bytes after this field)   |
//! +--------+--------+--------+--------+
//! | client id       | session id      |
//! +--------+--------+--------+--------+
//! | proto  | iface  | type   | retcode|
//! +--------+--------+--------+--------+
//! | flags  | reserved (3 bytes)       |
//! +--------+--------+--------+--------+
//! | length of entries array           |
//! | entries (16 bytes each) ...       |
//! | length of options array           |
//! | options ...                       |
//! +-----------------------------------+
//! ```
//!
//! All multi-byte fields are big-endian. The security handshake rides in
//! configuration options (see [`SecurityOption`]), so receivers that do not
//! understand it simply skip the unknown configuration keys.

use std::fmt;
use std::net::Ipv4Addr;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use thiserror::Error;

/// Service id reserved for service discovery.
pub const SD_SERVICE_ID: u16 = 0xFFFF;
/// Method id reserved for service discovery.
pub const SD_METHOD_ID: u16 = 0x8100;
/// The only SOME/IP protocol version this codec accepts.
pub const PROTOCOL_VERSION: u8 = 0x01;
/// Interface version used by SD messages.
pub const SD_INTERFACE_VERSION: u8 = 0x01;
/// SOME/IP message type "notification", used by SD.
pub const MESSAGE_TYPE_NOTIFICATION: u8 = 0x02;

/// Size of the SOME/IP header.
pub const HEADER_LEN: usize = 16;
/// Size of one SD entry.
pub const ENTRY_LEN: usize = 16;
/// Largest SD payload (bytes after the SOME/IP header) the encoder emits.
pub const MAX_PAYLOAD: usize = 1400;
/// Largest configuration item ("key=value") in bytes.
pub const MAX_CONFIG_ITEM: usize = 255;

/// Reboot flag in the SD flags byte.
pub const FLAG_REBOOT: u8 = 0x80;
/// Unicast flag in the SD flags byte.
pub const FLAG_UNICAST: u8 = 0x40;

const OPTION_CONFIGURATION: u8 = 0x01;
const OPTION_IPV4_ENDPOINT: u8 = 0x04;
const OPTION_IPV4_MULTICAST: u8 = 0x14;
const IPV4_OPTION_LEN: u16 = 9;

/// Errors raised while encoding or decoding SD messages.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("input truncated at offset {offset}")]
    Truncated { offset: usize },
    #[error("unsupported protocol version {version:#04x} at offset {offset}")]
    BadVersion { offset: usize, version: u8 },
    #[error("bad option length at offset {offset}")]
    BadOptionLength { offset: usize },
    #[error("entries array length at offset {offset} is not a multiple of {ENTRY_LEN}")]
    BadEntriesLength { offset: usize },
    #[error("unknown entry type {kind:#04x} at offset {offset}")]
    UnknownEntry { offset: usize, kind: u8 },
    #[error("malformed configuration item at offset {offset}")]
    BadConfigItem { offset: usize },
    #[error("configuration item of {len} bytes exceeds {MAX_CONFIG_ITEM}")]
    OversizeOption { len: usize },
    #[error("invalid configuration key {key:?}")]
    BadConfigKey { key: String },
    #[error("entry {entry} references missing option {index}")]
    InconsistentIndex { entry: usize, index: usize },
    #[error("SD payload of {len} bytes exceeds {MAX_PAYLOAD}")]
    Oversize { len: usize },
    #[error("malformed security option {key:?}")]
    BadSecurityOption { key: String },
}

/// The SOME/IP header of an SD message.
///
/// The length field is not stored: it is always derived from the payload
/// when encoding and checked against the input when decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SdHeader {
    pub service_id: u16,
    pub method_id: u16,
    pub client_id: u16,
    pub session_id: u16,
    pub protocol_version: u8,
    pub interface_version: u8,
    pub message_type: u8,
    pub return_code: u8,
}

impl Default for SdHeader {
    fn default() -> Self {
        SdHeader {
            service_id: SD_SERVICE_ID,
            method_id: SD_METHOD_ID,
            client_id: 0,
            session_id: 1,
            protocol_version: PROTOCOL_VERSION,
            interface_version: SD_INTERFACE_VERSION,
            message_type: MESSAGE_TYPE_NOTIFICATION,
            return_code: 0,
        }
    }
}

/// SD entry types supported by this codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum EntryType {
    Find = 0x00,
    Offer = 0x01,
    Subscribe = 0x06,
    SubscribeAck = 0x07,
}

impl EntryType {
    pub fn from_u8(value: u8) -> Option<Self> {
        match value {
            0x00 => Some(EntryType::Find),
            0x01 => Some(EntryType::Offer),
            0x06 => Some(EntryType::Subscribe),
            0x07 => Some(EntryType::SubscribeAck),
            _ => None,
        }
    }

    /// Eventgroup entries carry an eventgroup id where service entries carry
    /// the minor version.
    pub fn is_eventgroup(self) -> bool {
        matches!(self, EntryType::Subscribe | EntryType::SubscribeAck)
    }
}

/// Semantic classification of an entry; the `Stop*`/`Nack` forms are the
/// zero-TTL variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntryKind {
    Find,
    Offer,
    StopOffer,
    Subscribe,
    StopSubscribe,
    SubscribeAck,
    SubscribeNack,
}

/// One 16-byte SD entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SdEntry {
    pub entry_type: EntryType,
    pub index_1: u8,
    pub index_2: u8,
    /// Number of options in the first run (4 bits).
    pub count_1: u8,
    /// Number of options in the second run (4 bits).
    pub count_2: u8,
    pub service_id: u16,
    pub instance_id: u16,
    pub major_version: u8,
    /// Lifetime in seconds (24 bits).
    pub ttl: u32,
    /// Minor version for service entries; reserved/counter/eventgroup id for
    /// eventgroup entries.
    pub minor_or_eventgroup: u32,
}

/// Largest representable entry TTL.
pub const MAX_TTL: u32 = 0x00FF_FFFF;

impl SdEntry {
    /// A service or eventgroup entry without option references.
    pub fn new(
        entry_type: EntryType,
        service_id: u16,
        instance_id: u16,
        major_version: u8,
        ttl: u32,
        minor_or_eventgroup: u32,
    ) -> Self {
        SdEntry {
            entry_type,
            index_1: 0,
            index_2: 0,
            count_1: 0,
            count_2: 0,
            service_id,
            instance_id,
            major_version,
            ttl: ttl & MAX_TTL,
            minor_or_eventgroup,
        }
    }

    /// Classification depends on the entry type and on `ttl == 0` only.
    pub fn kind(&self) -> EntryKind {
        let stop = self.ttl == 0;
        match (self.entry_type, stop) {
            (EntryType::Find, _) => EntryKind::Find,
            (EntryType::Offer, false) => EntryKind::Offer,
            (EntryType::Offer, true) => EntryKind::StopOffer,
            (EntryType::Subscribe, false) => EntryKind::Subscribe,
            (EntryType::Subscribe, true) => EntryKind::StopSubscribe,
            (EntryType::SubscribeAck, false) => EntryKind::SubscribeAck,
            (EntryType::SubscribeAck, true) => EntryKind::SubscribeNack,
        }
    }

    pub fn is_stop(&self) -> bool {
        matches!(self.kind(), EntryKind::StopOffer | EntryKind::StopSubscribe)
    }

    /// Eventgroup id of a Subscribe/SubscribeAck entry.
    pub fn eventgroup(&self) -> u16 {
        (self.minor_or_eventgroup & 0xFFFF) as u16
    }

    /// Option indices referenced by this entry, first run then second run.
    pub fn option_indices(&self) -> impl Iterator<Item = usize> {
        let first = self.index_1 as usize..self.index_1 as usize + self.count_1 as usize;
        let second = self.index_2 as usize..self.index_2 as usize + self.count_2 as usize;
        first.chain(second)
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.push(self.entry_type as u8);
        out.push(self.index_1);
        out.push(self.index_2);
        out.push((self.count_1 << 4) | (self.count_2 & 0x0F));
        out.extend_from_slice(&self.service_id.to_be_bytes());
        out.extend_from_slice(&self.instance_id.to_be_bytes());
        out.push(self.major_version);
        out.extend_from_slice(&self.ttl.to_be_bytes()[1..]);
        out.extend_from_slice(&self.minor_or_eventgroup.to_be_bytes());
    }

    fn read(bytes: &[u8], offset: usize) -> Result<Self, WireError> {
        let b = &bytes[offset..offset + ENTRY_LEN];
        let entry_type =
            EntryType::from_u8(b[0]).ok_or(WireError::UnknownEntry { offset, kind: b[0] })?;
        Ok(SdEntry {
            entry_type,
            index_1: b[1],
            index_2: b[2],
            count_1: b[3] >> 4,
            count_2: b[3] & 0x0F,
            service_id: u16::from_be_bytes([b[4], b[5]]),
            instance_id: u16::from_be_bytes([b[6], b[7]]),
            major_version: b[8],
            ttl: u32::from_be_bytes([0, b[9], b[10], b[11]]),
            minor_or_eventgroup: u32::from_be_bytes([b[12], b[13], b[14], b[15]]),
        })
    }
}

/// Transport protocol numbers used in endpoint options.
pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

/// Address, transport protocol and port of an IPv4 endpoint option.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ipv4Endpoint {
    pub address: Ipv4Addr,
    pub protocol: u8,
    pub port: u16,
}

impl Ipv4Endpoint {
    pub fn udp(address: Ipv4Addr, port: u16) -> Self {
        Ipv4Endpoint {
            address,
            protocol: PROTO_UDP,
            port,
        }
    }
}

impl fmt::Display for Ipv4Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let proto = match self.protocol {
            PROTO_TCP => "tcp".to_string(),
            PROTO_UDP => "udp".to_string(),
            other => format!("proto{other}"),
        };
        write!(f, "{}:{}/{}", self.address, self.port, proto)
    }
}

/// One "key=value" item of a configuration option.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConfigItem {
    pub key: String,
    pub value: String,
}

impl ConfigItem {
    pub fn new(key: impl Into<String>, value: impl Into<String>) -> Self {
        ConfigItem {
            key: key.into(),
            value: value.into(),
        }
    }

    fn encoded_len(&self) -> usize {
        self.key.len() + 1 + self.value.len()
    }
}

/// An SD option.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SdOption {
    Ipv4Endpoint(Ipv4Endpoint),
    Ipv4Multicast(Ipv4Endpoint),
    Configuration(Vec<ConfigItem>),
    /// Any other option type, kept verbatim (reserved byte included).
    Unknown {
        kind: u8,
        payload: Vec<u8>,
    },
}

impl SdOption {
    fn write(&self, out: &mut Vec<u8>) -> Result<(), WireError> {
        match self {
            SdOption::Ipv4Endpoint(ep) | SdOption::Ipv4Multicast(ep) => {
                let kind = if matches!(self, SdOption::Ipv4Endpoint(_)) {
                    OPTION_IPV4_ENDPOINT
                } else {
                    OPTION_IPV4_MULTICAST
                };
                out.extend_from_slice(&IPV4_OPTION_LEN.to_be_bytes());
                out.push(kind);
                out.push(0);
                out.extend_from_slice(&ep.address.octets());
                out.push(0);
                out.push(ep.protocol);
                out.extend_from_slice(&ep.port.to_be_bytes());
            }
            SdOption::Configuration(items) => {
                let payload = encode_config_items(items)?;
                let len = u16::try_from(payload.len() + 1)
                    .map_err(|_| WireError::Oversize { len: payload.len() })?;
                out.extend_from_slice(&len.to_be_bytes());
                out.push(OPTION_CONFIGURATION);
                out.push(0);
                out.extend_from_slice(&payload);
            }
            SdOption::Unknown { kind, payload } => {
                if payload.is_empty() {
                    return Err(WireError::BadOptionLength { offset: out.len() });
                }
                let len = u16::try_from(payload.len())
                    .map_err(|_| WireError::Oversize { len: payload.len() })?;
                out.extend_from_slice(&len.to_be_bytes());
                out.push(*kind);
                out.extend_from_slice(payload);
            }
        }
        Ok(())
    }
}

/// A complete service-discovery message.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct SdMessage {
    pub header: SdHeader,
    pub flags: u8,
    pub entries: Vec<SdEntry>,
    pub options: Vec<SdOption>,
}

impl SdMessage {
    pub fn new(header: SdHeader) -> Self {
        SdMessage {
            header,
            flags: FLAG_REBOOT | FLAG_UNICAST,
            entries: Vec::new(),
            options: Vec::new(),
        }
    }

    /// Appends `entry`, placing `first` and `second` as its two option runs
    /// at the end of the options array.
    ///
    /// # Panics
    ///
    /// Panics if a run holds more than 15 options or the options array grows
    /// past 255 entries; both are hard limits of the entry layout.
    pub fn push_entry(&mut self, mut entry: SdEntry, first: Vec<SdOption>, second: Vec<SdOption>) {
        assert!(
            first.len() <= 15 && second.len() <= 15,
            "option run longer than 15"
        );
        entry.index_1 = if first.is_empty() {
            0
        } else {
            self.index_for(first.len())
        };
        entry.count_1 = first.len() as u8;
        self.options.extend(first);
        entry.index_2 = if second.is_empty() {
            0
        } else {
            self.index_for(second.len())
        };
        entry.count_2 = second.len() as u8;
        self.options.extend(second);
        self.entries.push(entry);
    }

    fn index_for(&self, run: usize) -> u8 {
        let index = self.options.len();
        assert!(index + run <= 256, "options array exceeds 256 entries");
        index as u8
    }

    /// Options referenced by `entry`, in reference order.
    pub fn options_of<'a>(&'a self, entry: &SdEntry) -> impl Iterator<Item = &'a SdOption> + 'a {
        let indices: Vec<usize> = entry.option_indices().collect();
        indices.into_iter().filter_map(move |i| self.options.get(i))
    }

    /// First IPv4 unicast endpoint referenced by `entry`.
    pub fn endpoint_of(&self, entry: &SdEntry) -> Option<Ipv4Endpoint> {
        self.options_of(entry).find_map(|o| match o {
            SdOption::Ipv4Endpoint(ep) => Some(*ep),
            _ => None,
        })
    }

    /// First IPv4 multicast endpoint referenced by `entry`.
    pub fn multicast_of(&self, entry: &SdEntry) -> Option<Ipv4Endpoint> {
        self.options_of(entry).find_map(|o| match o {
            SdOption::Ipv4Multicast(ep) => Some(*ep),
            _ => None,
        })
    }

    /// Security options carried by the configuration options of `entry`.
    pub fn security_of(&self, entry: &SdEntry) -> Result<Vec<SecurityOption>, WireError> {
        let mut found = Vec::new();
        for option in self.options_of(entry) {
            if let SdOption::Configuration(items) = option {
                found.extend(SecurityOption::from_items(items)?);
            }
        }
        Ok(found)
    }
}

/// Encodes configuration items as length-prefixed strings followed by a
/// zero terminator.
pub fn encode_config_items(items: &[ConfigItem]) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(items.iter().map(|i| i.encoded_len() + 1).sum::<usize>() + 1);
    for item in items {
        if item.key.is_empty() || item.key.contains('=') || !is_config_text(&item.key) {
            return Err(WireError::BadConfigKey {
                key: item.key.clone(),
            });
        }
        if !is_config_text(&item.value) {
            return Err(WireError::BadConfigKey {
                key: item.key.clone(),
            });
        }
        let len = item.encoded_len();
        if len > MAX_CONFIG_ITEM {
            return Err(WireError::OversizeOption { len });
        }
        out.push(len as u8);
        out.extend_from_slice(item.key.as_bytes());
        out.push(b'=');
        out.extend_from_slice(item.value.as_bytes());
    }
    out.push(0);
    Ok(out)
}

/// Decodes a configuration string. `base` is the absolute offset of `bytes`
/// and is only used for error reporting.
pub fn decode_config_items(bytes: &[u8], base: usize) -> Result<Vec<ConfigItem>, WireError> {
    let mut items = Vec::new();
    let mut pos = 0;
    loop {
        let Some(&len) = bytes.get(pos) else {
            return Err(WireError::BadConfigItem { offset: base + pos });
        };
        if len == 0 {
            if pos + 1 != bytes.len() {
                return Err(WireError::BadConfigItem {
                    offset: base + pos + 1,
                });
            }
            return Ok(items);
        }
        let start = pos + 1;
        let end = start + len as usize;
        if end > bytes.len() {
            return Err(WireError::BadConfigItem { offset: base + pos });
        }
        let text = std::str::from_utf8(&bytes[start..end])
            .ok()
            .filter(|t| is_config_text(t))
            .ok_or(WireError::BadConfigItem {
                offset: base + start,
            })?;
        let (key, value) = text.split_once('=').filter(|(k, _)| !k.is_empty()).ok_or(
            WireError::BadConfigItem {
                offset: base + start,
            },
        )?;
        items.push(ConfigItem::new(key, value));
        pos = end;
    }
}

fn is_config_text(s: &str) -> bool {
    s.bytes().all(|b| (0x20..=0x7E).contains(&b))
}

/// Encodes `msg` into a datagram.
pub fn encode_message(msg: &SdMessage) -> Result<Vec<u8>, WireError> {
    for (n, entry) in msg.entries.iter().enumerate() {
        if entry.count_1 > 15 || entry.count_2 > 15 {
            return Err(WireError::InconsistentIndex {
                entry: n,
                index: usize::MAX,
            });
        }
        if let Some(index) = entry.option_indices().find(|&i| i >= msg.options.len()) {
            return Err(WireError::InconsistentIndex { entry: n, index });
        }
    }

    let mut out = Vec::with_capacity(HEADER_LEN + 12 + msg.entries.len() * ENTRY_LEN);
    let h = &msg.header;
    out.extend_from_slice(&h.service_id.to_be_bytes());
    out.extend_from_slice(&h.method_id.to_be_bytes());
    out.extend_from_slice(&[0; 4]); // length, patched below
    out.extend_from_slice(&h.client_id.to_be_bytes());
    out.extend_from_slice(&h.session_id.to_be_bytes());
    out.extend_from_slice(&[
        h.protocol_version,
        h.interface_version,
        h.message_type,
        h.return_code,
    ]);

    out.push(msg.flags);
    out.extend_from_slice(&[0; 3]);
    out.extend_from_slice(&((msg.entries.len() * ENTRY_LEN) as u32).to_be_bytes());
    for entry in &msg.entries {
        let mut entry = *entry;
        entry.ttl &= MAX_TTL;
        entry.write(&mut out);
    }
    let options_len_at = out.len();
    out.extend_from_slice(&[0; 4]);
    for option in &msg.options {
        option.write(&mut out)?;
    }
    let options_len = (out.len() - options_len_at - 4) as u32;
    out[options_len_at..options_len_at + 4].copy_from_slice(&options_len.to_be_bytes());

    let payload = out.len() - HEADER_LEN;
    if payload > MAX_PAYLOAD {
        return Err(WireError::Oversize { len: payload });
    }
    let length = (out.len() - 8) as u32;
    out[4..8].copy_from_slice(&length.to_be_bytes());
    Ok(out)
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, WireError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(WireError::Truncated { offset })
}

/// Decodes a datagram. Never panics; every failure names the offending
/// offset.
pub fn decode_message(bytes: &[u8]) -> Result<SdMessage, WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated {
            offset: bytes.len(),
        });
    }
    let length = read_u32(bytes, 4)? as usize;
    let end = 8usize.saturating_add(length);
    if end > bytes.len() {
        return Err(WireError::Truncated {
            offset: bytes.len(),
        });
    }
    if end < bytes.len() {
        return Err(WireError::BadOptionLength { offset: end });
    }
    let header = SdHeader {
        service_id: u16::from_be_bytes([bytes[0], bytes[1]]),
        method_id: u16::from_be_bytes([bytes[2], bytes[3]]),
        client_id: u16::from_be_bytes([bytes[8], bytes[9]]),
        session_id: u16::from_be_bytes([bytes[10], bytes[11]]),
        protocol_version: bytes[12],
        interface_version: bytes[13],
        message_type: bytes[14],
        return_code: bytes[15],
    };
    if header.protocol_version != PROTOCOL_VERSION {
        return Err(WireError::BadVersion {
            offset: 12,
            version: header.protocol_version,
        });
    }

    let flags = *bytes
        .get(HEADER_LEN)
        .ok_or(WireError::Truncated { offset: HEADER_LEN })?;
    if bytes.len() < HEADER_LEN + 4 {
        return Err(WireError::Truncated {
            offset: HEADER_LEN + 1,
        });
    }
    let entries_len_at = HEADER_LEN + 4;
    let entries_len = read_u32(bytes, entries_len_at)? as usize;
    if !entries_len.is_multiple_of(ENTRY_LEN) {
        return Err(WireError::BadEntriesLength {
            offset: entries_len_at,
        });
    }
    let entries_start = entries_len_at + 4;
    let entries_end = entries_start
        .checked_add(entries_len)
        .filter(|&e| e <= bytes.len())
        .ok_or(WireError::Truncated {
            offset: entries_start,
        })?;
    let mut entries = Vec::with_capacity(entries_len / ENTRY_LEN);
    for offset in (entries_start..entries_end).step_by(ENTRY_LEN) {
        entries.push(SdEntry::read(bytes, offset)?);
    }

    let options_len = read_u32(bytes, entries_end)? as usize;
    let options_start = entries_end + 4;
    let options_end = options_start
        .checked_add(options_len)
        .filter(|&e| e <= bytes.len())
        .ok_or(WireError::Truncated {
            offset: entries_end,
        })?;
    if options_end != bytes.len() {
        return Err(WireError::BadOptionLength {
            offset: options_end,
        });
    }
    let mut options = Vec::new();
    let mut pos = options_start;
    while pos < options_end {
        let (option, next) = read_option(bytes, pos, options_end)?;
        options.push(option);
        pos = next;
    }

    for (n, entry) in entries.iter().enumerate() {
        if let Some(index) = entry.option_indices().find(|&i| i >= options.len()) {
            return Err(WireError::InconsistentIndex { entry: n, index });
        }
    }

    Ok(SdMessage {
        header,
        flags,
        entries,
        options,
    })
}

fn read_option(bytes: &[u8], at: usize, limit: usize) -> Result<(SdOption, usize), WireError> {
    if at + 3 > limit {
        return Err(WireError::BadOptionLength { offset: at });
    }
    let len = u16::from_be_bytes([bytes[at], bytes[at + 1]]) as usize;
    let kind = bytes[at + 2];
    let body_start = at + 3;
    let next = body_start + len;
    if len == 0 || next > limit {
        return Err(WireError::BadOptionLength { offset: at });
    }
    let body = &bytes[body_start..next];
    let option = match kind {
        OPTION_IPV4_ENDPOINT | OPTION_IPV4_MULTICAST => {
            if len != IPV4_OPTION_LEN as usize {
                return Err(WireError::BadOptionLength { offset: at });
            }
            let ep = Ipv4Endpoint {
                address: Ipv4Addr::new(body[1], body[2], body[3], body[4]),
                protocol: body[6],
                port: u16::from_be_bytes([body[7], body[8]]),
            };
            if kind == OPTION_IPV4_ENDPOINT {
                SdOption::Ipv4Endpoint(ep)
            } else {
                SdOption::Ipv4Multicast(ep)
            }
        }
        OPTION_CONFIGURATION => {
            SdOption::Configuration(decode_config_items(&body[1..], body_start + 1)?)
        }
        other => SdOption::Unknown {
            kind: other,
            payload: body.to_vec(),
        },
    };
    Ok((option, next))
}

/// Configuration key of the challenge option.
pub const KEY_CHALLENGE: &str = "chal";
/// Configuration key of the response option.
pub const KEY_RESPONSE: &str = "resp";
/// Configuration key of the key-exchange option.
pub const KEY_KEY_EXCHANGE: &str = "kex";
/// Configuration key of the session-key option.
pub const KEY_SESSION_KEY: &str = "skey";

/// Base64 characters per configuration item; a multiple of four so that
/// chunks can be concatenated before decoding.
const CHUNK: usize = 248;

/// A signed answer to a challenge.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AuthResponse {
    /// The challenge nonce being answered.
    pub nonce: u32,
    /// DNS name of the signer; the verifier looks up its TLSA record.
    pub signer: String,
    pub signature: Vec<u8>,
}

/// A public key-agreement share.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KeyShare {
    pub group: u16,
    pub public: Vec<u8>,
}

/// A group key wrapped under a pairwise session key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WrappedKey {
    pub key_id: u32,
    pub epoch: u32,
    pub ciphertext: Vec<u8>,
}

/// The four security payloads carried in configuration options.
///
/// Each variant uses a reserved configuration key and a base64 value. Values
/// longer than one configuration item are split across consecutive items
/// with the same key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SecurityOption {
    Challenge(u32),
    Response(AuthResponse),
    KeyExchange(KeyShare),
    SessionKey(WrappedKey),
}

impl SecurityOption {
    pub fn key(&self) -> &'static str {
        match self {
            SecurityOption::Challenge(_) => KEY_CHALLENGE,
            SecurityOption::Response(_) => KEY_RESPONSE,
            SecurityOption::KeyExchange(_) => KEY_KEY_EXCHANGE,
            SecurityOption::SessionKey(_) => KEY_SESSION_KEY,
        }
    }

    fn payload(&self) -> Vec<u8> {
        match self {
            SecurityOption::Challenge(nonce) => nonce.to_be_bytes().to_vec(),
            SecurityOption::Response(r) => {
                let mut out = Vec::with_capacity(5 + r.signer.len() + r.signature.len());
                out.extend_from_slice(&r.nonce.to_be_bytes());
                out.push(r.signer.len().min(255) as u8);
                out.extend_from_slice(&r.signer.as_bytes()[..r.signer.len().min(255)]);
                out.extend_from_slice(&r.signature);
                out
            }
            SecurityOption::KeyExchange(k) => {
                let mut out = k.group.to_be_bytes().to_vec();
                out.extend_from_slice(&k.public);
                out
            }
            SecurityOption::SessionKey(w) => {
                let mut out = w.key_id.to_be_bytes().to_vec();
                out.extend_from_slice(&w.epoch.to_be_bytes());
                out.extend_from_slice(&w.ciphertext);
                out
            }
        }
    }

    fn from_payload(key: &str, p: &[u8]) -> Result<Self, WireError> {
        let bad = || WireError::BadSecurityOption {
            key: key.to_string(),
        };
        match key {
            KEY_CHALLENGE => {
                let b: [u8; 4] = p.try_into().map_err(|_| bad())?;
                Ok(SecurityOption::Challenge(u32::from_be_bytes(b)))
            }
            KEY_RESPONSE => {
                if p.len() < 5 {
                    return Err(bad());
                }
                let nonce = u32::from_be_bytes([p[0], p[1], p[2], p[3]]);
                let name_len = p[4] as usize;
                let name = p.get(5..5 + name_len).ok_or_else(bad)?;
                let signer = String::from_utf8(name.to_vec()).map_err(|_| bad())?;
                Ok(SecurityOption::Response(AuthResponse {
                    nonce,
                    signer,
                    signature: p[5 + name_len..].to_vec(),
                }))
            }
            KEY_KEY_EXCHANGE => {
                if p.len() < 2 {
                    return Err(bad());
                }
                Ok(SecurityOption::KeyExchange(KeyShare {
                    group: u16::from_be_bytes([p[0], p[1]]),
                    public: p[2..].to_vec(),
                }))
            }
            KEY_SESSION_KEY => {
                if p.len() < 8 {
                    return Err(bad());
                }
                Ok(SecurityOption::SessionKey(WrappedKey {
                    key_id: u32::from_be_bytes([p[0], p[1], p[2], p[3]]),
                    epoch: u32::from_be_bytes([p[4], p[5], p[6], p[7]]),
                    ciphertext: p[8..].to_vec(),
                }))
            }
            _ => Err(bad()),
        }
    }

    /// Configuration items carrying this option.
    pub fn to_items(&self) -> Vec<ConfigItem> {
        let encoded = BASE64.encode(self.payload());
        if encoded.is_empty() {
            return vec![ConfigItem::new(self.key(), "")];
        }
        encoded
            .as_bytes()
            .chunks(CHUNK)
            .map(|c| ConfigItem::new(self.key(), String::from_utf8_lossy(c)))
            .collect()
    }

    /// Extracts security options from configuration items, joining split
    /// values. Items with other keys are ignored.
    pub fn from_items(items: &[ConfigItem]) -> Result<Vec<SecurityOption>, WireError> {
        let mut found = Vec::new();
        let mut i = 0;
        while i < items.len() {
            let key = items[i].key.as_str();
            if !matches!(
                key,
                KEY_CHALLENGE | KEY_RESPONSE | KEY_KEY_EXCHANGE | KEY_SESSION_KEY
            ) {
                i += 1;
                continue;
            }
            let mut joined = String::new();
            while i < items.len() && items[i].key == key {
                joined.push_str(&items[i].value);
                i += 1;
            }
            let payload =
                BASE64
                    .decode(joined.as_bytes())
                    .map_err(|_| WireError::BadSecurityOption {
                        key: key.to_string(),
                    })?;
            found.push(SecurityOption::from_payload(key, &payload)?);
        }
        Ok(found)
    }
}

/// Packs security options into one configuration option.
pub fn security_option(options: &[SecurityOption]) -> SdOption {
    SdOption::Configuration(options.iter().flat_map(|o| o.to_items()).collect())
}

/// Multi-line human readable rendering, used by `wire dump`.
pub fn describe(msg: &SdMessage) -> String {
    use std::fmt::Write as _;
    let h = &msg.header;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "header: service={:#06x} method={:#06x} client={:#06x} session={:#06x} proto={} iface={} type={:#04x} rc={}",
        h.service_id, h.method_id, h.client_id, h.session_id, h.protocol_version,
        h.interface_version, h.message_type, h.return_code
    );
    let _ = writeln!(s, "flags: {:#04x}", msg.flags);
    for (n, e) in msg.entries.iter().enumerate() {
        let _ = writeln!(
            s,
            "entry[{n}]: {:?} service={} instance={} major={} ttl={} {}={} options=[{}+{}, {}+{}]",
            e.kind(),
            e.service_id,
            e.instance_id,
            e.major_version,
            e.ttl,
            if e.entry_type.is_eventgroup() {
                "eventgroup"
            } else {
                "minor"
            },
            if e.entry_type.is_eventgroup() {
                e.eventgroup() as u32
            } else {
                e.minor_or_eventgroup
            },
            e.index_1,
            e.count_1,
            e.index_2,
            e.count_2
        );
    }
    for (n, o) in msg.options.iter().enumerate() {
        match o {
            SdOption::Ipv4Endpoint(ep) => {
                let _ = writeln!(s, "option[{n}]: ipv4-endpoint {ep}");
            }
            SdOption::Ipv4Multicast(ep) => {
                let _ = writeln!(s, "option[{n}]: ipv4-multicast {ep}");
            }
            SdOption::Configuration(items) => {
                let _ = writeln!(s, "option[{n}]: configuration");
                for item in items {
                    let _ = writeln!(s, "  {}={}", item.key, item.value);
                }
                if let Ok(sec) = SecurityOption::from_items(items) {
                    for opt in sec {
                        let _ = writeln!(s, "  => {}", describe_security(&opt));
                    }
                }
            }
            SdOption::Unknown { kind, payload } => {
                let _ = writeln!(
                    s,
                    "option[{n}]: unknown type {kind:#04x}, {} bytes",
                    payload.len()
                );
            }
        }
    }
    s
}

fn describe_security(opt: &SecurityOption) -> String {
    match opt {
        SecurityOption::Challenge(n) => format!("challenge nonce={n:#010x}"),
        SecurityOption::Response(r) => format!(
            "response nonce={:#010x} signer={} signature={} bytes",
            r.nonce,
            r.signer,
            r.signature.len()
        ),
        SecurityOption::KeyExchange(k) => {
            format!(
                "key-exchange group={:#06x} share={} bytes",
                k.group,
                k.public.len()
            )
        }
        SecurityOption::SessionKey(w) => format!(
            "session-key id={:#010x} epoch={} ciphertext={} bytes",
            w.key_id,
            w.epoch,
            w.ciphertext.len()
        ),
    }
}
