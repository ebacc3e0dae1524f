//! Property suites, callable from plain tests and from the acceptance run.

use std::net::Ipv4Addr;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use sd_dane::crypto::{
    derive_session_key, ka_generate, ka_shared, unwrap_group_key, wrap_group_key, GroupKey,
    KaGroup, Nonce, Transcript,
};
use sd_dane::discovery::{authorize_client_name, Authorization, AuthorizationPolicy};
use sd_dane::records::{client_tlsa_name, ClientKey, DnsName, ScopeKind, ServiceKey};
use sd_dane::wire::{
    decode_message, encode_message, ConfigItem, EntryType, Ipv4Endpoint, SdEntry, SdHeader,
    SdMessage, SdOption,
};

fn endpoint() -> impl Strategy<Value = Ipv4Endpoint> {
    (
        any::<u32>(),
        prop::sample::select(vec![6u8, 17]),
        any::<u16>(),
    )
        .prop_map(|(a, protocol, port)| Ipv4Endpoint {
            address: Ipv4Addr::from(a),
            protocol,
            port,
        })
}

fn config_item() -> impl Strategy<Value = ConfigItem> {
    ("[!-<>-~]{1,12}", "[ -~]{0,24}").prop_map(|(k, v)| ConfigItem::new(k, v))
}

fn option() -> impl Strategy<Value = SdOption> {
    prop_oneof![
        endpoint().prop_map(SdOption::Ipv4Endpoint),
        endpoint().prop_map(SdOption::Ipv4Multicast),
        prop::collection::vec(config_item(), 1..4).prop_map(SdOption::Configuration),
        (
            any::<u8>().prop_filter("reserved kind", |k| ![0x01, 0x04, 0x14].contains(k)),
            prop::collection::vec(any::<u8>(), 1..32)
        )
            .prop_map(|(kind, payload)| SdOption::Unknown { kind, payload }),
    ]
}

fn entry() -> impl Strategy<Value = SdEntry> {
    (
        prop::sample::select(vec![
            EntryType::Find,
            EntryType::Offer,
            EntryType::Subscribe,
            EntryType::SubscribeAck,
        ]),
        any::<u16>(),
        any::<u16>(),
        any::<u8>(),
        any::<u32>(),
        any::<u32>(),
    )
        .prop_map(|(t, sid, inst, major, ttl, minor)| SdEntry::new(t, sid, inst, major, ttl, minor))
}

/// Arbitrary well-formed messages of up to four entries.
pub fn message() -> impl Strategy<Value = SdMessage> {
    let header = (any::<[u16; 4]>(), any::<[u8; 3]>()).prop_map(|(ids, bytes)| SdHeader {
        service_id: ids[0],
        method_id: ids[1],
        client_id: ids[2],
        session_id: ids[3],
        protocol_version: 1,
        interface_version: bytes[0],
        message_type: bytes[1],
        return_code: bytes[2],
    });
    let runs = prop::collection::vec(
        (
            entry(),
            prop::collection::vec(option(), 0..3),
            prop::collection::vec(option(), 0..3),
        ),
        0..5,
    );
    (header, any::<u8>(), runs).prop_map(|(header, flags, runs)| {
        let mut msg = SdMessage::new(header);
        msg.flags = flags;
        for (e, first, second) in runs {
            msg.push_entry(e, first, second);
        }
        msg
    })
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

/// decode(encode(m)) == m, and re-encoding is byte-identical.
pub fn wire_roundtrip(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&message(), |msg| {
            let bytes =
                encode_message(&msg).map_err(|e| TestCaseError::fail(format!("encode: {e}")))?;
            let back =
                decode_message(&bytes).map_err(|e| TestCaseError::fail(format!("decode: {e}")))?;
            prop_assert_eq!(&back, &msg);
            prop_assert_eq!(encode_message(&back).ok(), Some(bytes));
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Arbitrary bytes never panic the decoder, and whatever decodes
/// re-encodes to a message that decodes to the same value.
pub fn decoder_total(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&prop::collection::vec(any::<u8>(), 0..256), |bytes| {
            if let Ok(msg) = decode_message(&bytes) {
                if let Ok(again) = encode_message(&msg) {
                    prop_assert_eq!(decode_message(&again).ok(), Some(msg));
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Both sides of an exchange derive the same secret and session key, and
/// a group key wrapped by one side unwraps on the other.
pub fn key_agreement(pairs: u32) -> Result<(), String> {
    let publisher = DnsName::parse("_5000._someip.3.2.1.42.service.vehicle1.oem.").expect("name");
    let subscriber = DnsName::parse("_someip-client.2.1.42.17.client.vehicle1.oem.").expect("name");
    let strategy = (
        any::<u64>(),
        prop::sample::select(vec![KaGroup::X25519, KaGroup::P256]),
        any::<[u32; 2]>(),
    );
    runner(pairs)
        .run(&strategy, |(seed, group, nonces)| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let (a_priv, a_share) = ka_generate(group, &mut rng);
            let (b_priv, b_share) = ka_generate(group, &mut rng);
            let ab =
                ka_shared(&a_priv, &b_share).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let ba =
                ka_shared(&b_priv, &a_share).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(ab.as_bytes(), ba.as_bytes());
            let transcript = Transcript {
                publisher: publisher.clone(),
                subscriber: subscriber.clone(),
                publisher_nonce: Nonce(nonces[0]),
                subscriber_nonce: Nonce(nonces[1]),
            };
            let k_pub = derive_session_key(&ab, &transcript);
            let k_sub = derive_session_key(&ba, &transcript);
            prop_assert!(k_pub == k_sub);
            let group_key = GroupKey::generate(&mut rng);
            let wrapped = wrap_group_key(&k_pub, &group_key, &mut rng);
            let unwrapped = unwrap_group_key(&k_sub, &wrapped)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert!(unwrapped == group_key);
            // A third party's share gives a different secret.
            let (_, c_share) = ka_generate(group, &mut rng);
            let ac =
                ka_shared(&a_priv, &c_share).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_ne!(ac.as_bytes(), ab.as_bytes());
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// One cell of the authorization matrix.
#[derive(Debug, Clone)]
pub struct MatrixCell {
    pub client: ScopeKind,
    pub policy: ScopeKind,
    pub expected: bool,
    pub actual: bool,
}

/// Every client scope kind against every single-kind policy. Client names
/// carry the publisher's own scope fields, so the decision rests on the
/// kind alone: authorized exactly on the diagonal.
pub fn scope_policy_matrix() -> Vec<MatrixCell> {
    let vehicle = DnsName::parse("vehicle1.oem.").expect("name");
    let publisher = ServiceKey::new(42, 1, 2, 3, vehicle.clone()).with_domain("adas");
    let clients = [
        ClientKey::service_specific(17, publisher.scope(), vehicle.clone()),
        ClientKey::domain_wide(18, "adas", vehicle.clone()),
        ClientKey::vehicle_wide(19, vehicle),
    ];
    let mut cells = Vec::new();
    for client in &clients {
        let name = client_tlsa_name(client).expect("name");
        for policy_kind in ScopeKind::ALL {
            let policy = AuthorizationPolicy::new([policy_kind]).expect("non-empty");
            let actual = matches!(authorize_client_name(&name, &publisher, &policy), Authorization::Authorized(k) if k == client.kind());
            cells.push(MatrixCell {
                client: client.kind(),
                policy: policy_kind,
                expected: client.kind() == policy_kind,
                actual,
            });
        }
    }
    cells
}
