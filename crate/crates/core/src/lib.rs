//! DNSSEC-backed authentication and authorization for SOME/IP service
//! discovery.
//!
//! Publishers and subscribers get DNS names derived from their SOME/IP
//! identities ([`records`]). A signed per-vehicle zone ([`dnssec`],
//! [`zoneforge`]) binds each name to an endpoint (SVCB) and a certificate
//! (TLSA). The discovery state machines ([`discovery`]) look their peers up
//! through a validating resolver, exchange signed nonces in the SD messages
//! ([`wire`]) and agree on session and group keys ([`crypto`]). [`simnet`]
//! runs all of it on a deterministic virtual network, with and without
//! authentication, and under attack.
//!
//! The guide in `book/` walks through the pieces with runnable examples.

pub mod crypto;
pub mod discovery;
pub mod dnssec;
pub mod records;
pub mod simnet;
pub mod wire;
pub mod zoneforge;

// mdbook can't run examples that depend on this crate, so each chapter is
// compiled as the doc of an empty module and its code blocks run under
// `cargo test --doc`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/naming.md")]
    mod naming {}
    #[doc = include_str!("../../../book/src/zones.md")]
    mod zones {}
    #[doc = include_str!("../../../book/src/resolver.md")]
    mod resolver {}
    #[doc = include_str!("../../../book/src/handshake.md")]
    mod handshake {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
