//! Signing keys and certificates, nonce challenge/response signatures, TLSA
//! matching, ephemeral key agreement, session-key derivation and group-key
//! wrapping.
//!
//! Every [`KeyPair`] carries a [`KeyUsage`] tag and refuses to sign for any
//! other purpose, so supplier keys cannot sign zone data and zone keys
//! cannot sign certificates.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant, SystemTime};

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes128Gcm, Nonce as GcmNonce};
use hkdf::Hkdf;
use p256::ecdsa::signature::{Signer as _, Verifier as _};
use p256::elliptic_curve::sec1::ToEncodedPoint;
use p256::pkcs8::{DecodePrivateKey, EncodePrivateKey, EncodePublicKey, LineEnding};
use rand::{CryptoRng, RngCore};
use rsa::traits::PublicKeyParts;
use rsa::{BigUint, RsaPrivateKey, RsaPublicKey};
use sha2::{Digest, Sha256};
use thiserror::Error;
use x509_cert::builder::{Builder, CertificateBuilder, Profile};
use x509_cert::der::{Decode, Encode};
use x509_cert::name::Name;
use x509_cert::serial_number::SerialNumber;
use x509_cert::spki::SubjectPublicKeyInfoOwned;
use x509_cert::time::{Time, Validity};

use crate::records::{
    DnsName, TlsaParams, TLSA_MATCH_EXACT, TLSA_MATCH_SHA256, TLSA_SELECTOR_FULL,
    TLSA_USAGE_DANE_EE,
};
use crate::wire::{KeyShare, WrappedKey};

/// RSA modulus size used by the RSA profile.
pub const RSA_BITS: usize = 2048;
/// Symmetric key size of session and group keys.
pub const SYMMETRIC_KEY_LEN: usize = 16;
const GCM_NONCE_LEN: usize = 12;

/// Domain-separation label prefixed to signed challenge data.
const NONCE_LABEL: &[u8] = b"sd-dane challenge response v1";
/// HKDF info prefix for session keys.
const SESSION_LABEL: &[u8] = b"sd-dane session key v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("key tagged {actual:?} cannot be used for {requested:?}")]
    KeyUsage {
        requested: KeyUsage,
        actual: KeyUsage,
    },
    #[error("malformed certificate: {0}")]
    MalformedCertificate(String),
    #[error("malformed key: {0}")]
    MalformedKey(String),
    #[error("unsupported TLSA parameters {usage} {selector} {matching}")]
    UnsupportedTlsaMode {
        usage: u8,
        selector: u8,
        matching: u8,
    },
    #[error("key-agreement share does not belong to group {expected:#06x}")]
    GroupMismatch { expected: u16 },
    #[error("authentication failure")]
    AuthFailure,
    #[error("validity window is empty")]
    EmptyValidity,
    #[error("signing failed: {0}")]
    Signing(String),
}

/// Signature algorithms available behind [`KeyPair`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignatureScheme {
    EcdsaP256Sha256,
    RsaPkcs1v15Sha256,
}

impl SignatureScheme {
    /// DNSSEC algorithm number.
    pub fn dnssec_algorithm(self) -> u8 {
        match self {
            SignatureScheme::EcdsaP256Sha256 => 13,
            SignatureScheme::RsaPkcs1v15Sha256 => 8,
        }
    }

    pub fn from_dnssec_algorithm(alg: u8) -> Option<Self> {
        match alg {
            13 => Some(SignatureScheme::EcdsaP256Sha256),
            8 => Some(SignatureScheme::RsaPkcs1v15Sha256),
            _ => None,
        }
    }
}

impl fmt::Display for SignatureScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignatureScheme::EcdsaP256Sha256 => "p256",
            SignatureScheme::RsaPkcs1v15Sha256 => "rsa",
        })
    }
}

impl FromStr for SignatureScheme {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "p256" | "ecdsa" => Ok(SignatureScheme::EcdsaP256Sha256),
            "rsa" | "rsa2048" => Ok(SignatureScheme::RsaPkcs1v15Sha256),
            other => Err(CryptoError::MalformedKey(format!(
                "unknown scheme {other:?}"
            ))),
        }
    }
}

/// What a key is allowed to sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeyUsage {
    /// Service or client identity: certificates and challenge responses.
    ServiceIdentity,
    /// Supplier release key: bundle signatures.
    SupplierSigning,
    /// Vehicle zone-signing key: data rrsets.
    ZoneSigning,
    /// OEM key-signing key: DNSKEY rrsets.
    KeySigning,
}

#[derive(Clone)]
enum Secret {
    Ecdsa(p256::ecdsa::SigningKey),
    Rsa(Box<RsaPrivateKey>),
}

/// A private signing key with its usage tag.
#[derive(Clone)]
pub struct KeyPair {
    usage: KeyUsage,
    secret: Secret,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("usage", &self.usage)
            .field("scheme", &self.scheme())
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    /// Generates a key. RSA generation takes tens to hundreds of
    /// milliseconds; P-256 is effectively free.
    pub fn generate<R: RngCore + CryptoRng>(
        scheme: SignatureScheme,
        usage: KeyUsage,
        rng: &mut R,
    ) -> Self {
        let secret = match scheme {
            SignatureScheme::EcdsaP256Sha256 => Secret::Ecdsa(p256::ecdsa::SigningKey::random(rng)),
            SignatureScheme::RsaPkcs1v15Sha256 => Secret::Rsa(Box::new(
                RsaPrivateKey::new(rng, RSA_BITS).expect("RSA key generation with a valid size"),
            )),
        };
        KeyPair { usage, secret }
    }

    pub fn usage(&self) -> KeyUsage {
        self.usage
    }

    pub fn scheme(&self) -> SignatureScheme {
        match self.secret {
            Secret::Ecdsa(_) => SignatureScheme::EcdsaP256Sha256,
            Secret::Rsa(_) => SignatureScheme::RsaPkcs1v15Sha256,
        }
    }

    pub fn public_key(&self) -> PublicKey {
        match &self.secret {
            Secret::Ecdsa(k) => PublicKey::Ecdsa(*k.verifying_key()),
            Secret::Rsa(k) => PublicKey::Rsa(k.to_public_key()),
        }
    }

    /// Signs `data` for `purpose`, refusing if the key is tagged otherwise.
    pub fn sign(&self, purpose: KeyUsage, data: &[u8]) -> Result<Vec<u8>, CryptoError> {
        if purpose != self.usage {
            return Err(CryptoError::KeyUsage {
                requested: purpose,
                actual: self.usage,
            });
        }
        Ok(self.sign_unchecked(data))
    }

    fn sign_unchecked(&self, data: &[u8]) -> Vec<u8> {
        match &self.secret {
            Secret::Ecdsa(k) => {
                let sig: p256::ecdsa::Signature = k.sign(data);
                sig.to_bytes().to_vec()
            }
            Secret::Rsa(k) => {
                let signer = rsa::pkcs1v15::SigningKey::<Sha256>::new((**k).clone());
                let sig: rsa::pkcs1v15::Signature = signer.sign(data);
                Box::<[u8]>::from(sig).into_vec()
            }
        }
    }

    /// PKCS#8 PEM encoding of the private key.
    pub fn to_pem(&self) -> String {
        let pem = match &self.secret {
            Secret::Ecdsa(k) => k.to_pkcs8_pem(LineEnding::LF),
            Secret::Rsa(k) => k.to_pkcs8_pem(LineEnding::LF),
        };
        pem.expect("PKCS#8 encoding of a valid key").to_string()
    }

    /// Loads a PKCS#8 PEM key, detecting the scheme.
    pub fn from_pem(pem: &str, usage: KeyUsage) -> Result<Self, CryptoError> {
        if let Ok(k) = p256::ecdsa::SigningKey::from_pkcs8_pem(pem) {
            return Ok(KeyPair {
                usage,
                secret: Secret::Ecdsa(k),
            });
        }
        RsaPrivateKey::from_pkcs8_pem(pem)
            .map(|k| KeyPair {
                usage,
                secret: Secret::Rsa(Box::new(k)),
            })
            .map_err(|e| CryptoError::MalformedKey(e.to_string()))
    }
}

/// A public verification key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PublicKey {
    Ecdsa(p256::ecdsa::VerifyingKey),
    Rsa(RsaPublicKey),
}

impl PublicKey {
    pub fn scheme(&self) -> SignatureScheme {
        match self {
            PublicKey::Ecdsa(_) => SignatureScheme::EcdsaP256Sha256,
            PublicKey::Rsa(_) => SignatureScheme::RsaPkcs1v15Sha256,
        }
    }

    pub fn verify(&self, data: &[u8], signature: &[u8]) -> bool {
        match self {
            PublicKey::Ecdsa(k) => p256::ecdsa::Signature::from_slice(signature)
                .map(|sig| k.verify(data, &sig).is_ok())
                .unwrap_or(false),
            PublicKey::Rsa(k) => {
                let verifier = rsa::pkcs1v15::VerifyingKey::<Sha256>::new(k.clone());
                rsa::pkcs1v15::Signature::try_from(signature)
                    .map(|sig| verifier.verify(data, &sig).is_ok())
                    .unwrap_or(false)
            }
        }
    }

    /// DNSKEY public-key field: `x || y` for P-256, exponent length,
    /// exponent and modulus for RSA.
    pub fn to_dnskey_bytes(&self) -> Vec<u8> {
        match self {
            PublicKey::Ecdsa(k) => k.to_encoded_point(false).as_bytes()[1..].to_vec(),
            PublicKey::Rsa(k) => {
                let e = k.e().to_bytes_be();
                let mut out = Vec::with_capacity(3 + e.len() + RSA_BITS / 8);
                if e.len() < 256 {
                    out.push(e.len() as u8);
                } else {
                    out.push(0);
                    out.extend_from_slice(&(e.len() as u16).to_be_bytes());
                }
                out.extend_from_slice(&e);
                out.extend_from_slice(&k.n().to_bytes_be());
                out
            }
        }
    }

    pub fn from_dnskey_bytes(scheme: SignatureScheme, bytes: &[u8]) -> Result<Self, CryptoError> {
        let bad = |what: &str| CryptoError::MalformedKey(what.to_string());
        match scheme {
            SignatureScheme::EcdsaP256Sha256 => {
                if bytes.len() != 64 {
                    return Err(bad("P-256 DNSKEY must be 64 bytes"));
                }
                let mut sec1 = Vec::with_capacity(65);
                sec1.push(0x04);
                sec1.extend_from_slice(bytes);
                p256::ecdsa::VerifyingKey::from_sec1_bytes(&sec1)
                    .map(PublicKey::Ecdsa)
                    .map_err(|_| bad("P-256 point not on curve"))
            }
            SignatureScheme::RsaPkcs1v15Sha256 => {
                let (e_len, start) = match bytes.first() {
                    Some(0) if bytes.len() >= 3 => {
                        (u16::from_be_bytes([bytes[1], bytes[2]]) as usize, 3)
                    }
                    Some(&n) if n > 0 => (n as usize, 1),
                    _ => return Err(bad("empty RSA DNSKEY")),
                };
                let e = bytes
                    .get(start..start + e_len)
                    .ok_or_else(|| bad("truncated exponent"))?;
                let n = &bytes[start + e_len..];
                if n.is_empty() {
                    return Err(bad("missing modulus"));
                }
                RsaPublicKey::new(BigUint::from_bytes_be(n), BigUint::from_bytes_be(e))
                    .map(PublicKey::Rsa)
                    .map_err(|e| bad(&e.to_string()))
            }
        }
    }

    /// SPKI PEM encoding.
    pub fn to_pem(&self) -> String {
        let pem = match self {
            PublicKey::Ecdsa(k) => k.to_public_key_pem(LineEnding::LF),
            PublicKey::Rsa(k) => k.to_public_key_pem(LineEnding::LF),
        };
        pem.expect("SPKI encoding of a valid key")
    }

    pub fn from_pem(pem: &str) -> Result<Self, CryptoError> {
        use p256::pkcs8::DecodePublicKey;
        if let Ok(k) = p256::ecdsa::VerifyingKey::from_public_key_pem(pem) {
            return Ok(PublicKey::Ecdsa(k));
        }
        RsaPublicKey::from_public_key_pem(pem)
            .map(PublicKey::Rsa)
            .map_err(|e| CryptoError::MalformedKey(e.to_string()))
    }

    fn to_spki(&self) -> SubjectPublicKeyInfoOwned {
        let der = match self {
            PublicKey::Ecdsa(k) => k.to_public_key_der(),
            PublicKey::Rsa(k) => k.to_public_key_der(),
        }
        .expect("SPKI encoding of a valid key");
        SubjectPublicKeyInfoOwned::from_der(der.as_bytes()).expect("round-trip of own SPKI")
    }

    fn from_spki(spki: &SubjectPublicKeyInfoOwned) -> Result<Self, CryptoError> {
        use p256::pkcs8::DecodePublicKey;
        let der = spki
            .to_der()
            .map_err(|e| CryptoError::MalformedCertificate(e.to_string()))?;
        if let Ok(k) = p256::ecdsa::VerifyingKey::from_public_key_der(&der) {
            return Ok(PublicKey::Ecdsa(k));
        }
        RsaPublicKey::from_public_key_der(&der)
            .map(PublicKey::Rsa)
            .map_err(|e| CryptoError::MalformedCertificate(e.to_string()))
    }
}

/// A parsed X.509 certificate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    der: Vec<u8>,
    subject: String,
    not_before: u64,
    not_after: u64,
    public_key: PublicKey,
}

fn x509_time(unix_secs: u64) -> Result<Time, CryptoError> {
    Time::try_from(SystemTime::UNIX_EPOCH + Duration::from_secs(unix_secs))
        .map_err(|e| CryptoError::Signing(e.to_string()))
}

impl Certificate {
    /// Issues a self-signed end-entity certificate whose common name is
    /// `subject`. Validity is `[not_before, not_after]` in Unix seconds.
    pub fn issue(
        key: &KeyPair,
        subject: &DnsName,
        not_before: u64,
        not_after: u64,
        serial: u64,
    ) -> Result<Self, CryptoError> {
        if key.usage != KeyUsage::ServiceIdentity {
            return Err(CryptoError::KeyUsage {
                requested: KeyUsage::ServiceIdentity,
                actual: key.usage,
            });
        }
        if not_after <= not_before {
            return Err(CryptoError::EmptyValidity);
        }
        let err = |e: &dyn fmt::Display| CryptoError::Signing(e.to_string());
        let name = Name::from_str(&format!("CN={}", subject.as_str())).map_err(|e| err(&e))?;
        let validity = Validity {
            not_before: x509_time(not_before)?,
            not_after: x509_time(not_after)?,
        };
        let serial = SerialNumber::new(&(serial | 1 << 62).to_be_bytes()).map_err(|e| err(&e))?;
        let profile = Profile::Leaf {
            issuer: name.clone(),
            enable_key_agreement: false,
            enable_key_encipherment: false,
        };
        let spki = key.public_key().to_spki();
        let cert = match &key.secret {
            Secret::Ecdsa(k) => CertificateBuilder::new(profile, serial, validity, name, spki, k)
                .map_err(|e| err(&e))?
                .build::<p256::ecdsa::DerSignature>(),
            Secret::Rsa(k) => {
                let signer = rsa::pkcs1v15::SigningKey::<Sha256>::new((**k).clone());
                CertificateBuilder::new(profile, serial, validity, name, spki, &signer)
                    .map_err(|e| err(&e))?
                    .build::<rsa::pkcs1v15::Signature>()
            }
        }
        .map_err(|e| err(&e))?;
        Certificate::from_der(cert.to_der().map_err(|e| err(&e))?)
    }

    pub fn from_der(der: Vec<u8>) -> Result<Self, CryptoError> {
        let malformed = |e: &dyn fmt::Display| CryptoError::MalformedCertificate(e.to_string());
        let cert = x509_cert::Certificate::from_der(&der).map_err(|e| malformed(&e))?;
        let tbs = &cert.tbs_certificate;
        let subject = tbs.subject.to_string();
        let subject = subject.strip_prefix("CN=").unwrap_or(&subject).to_string();
        let public_key = PublicKey::from_spki(&tbs.subject_public_key_info)?;
        Ok(Certificate {
            not_before: tbs.validity.not_before.to_unix_duration().as_secs(),
            not_after: tbs.validity.not_after.to_unix_duration().as_secs(),
            der,
            subject,
            public_key,
        })
    }

    pub fn to_pem(&self) -> String {
        use base64::Engine as _;
        let b64 = base64::engine::general_purpose::STANDARD.encode(&self.der);
        let mut out = String::from("-----BEGIN CERTIFICATE-----\n");
        for chunk in b64.as_bytes().chunks(64) {
            out.push_str(std::str::from_utf8(chunk).expect("base64 is ascii"));
            out.push('\n');
        }
        out.push_str("-----END CERTIFICATE-----\n");
        out
    }

    pub fn from_pem(pem: &str) -> Result<Self, CryptoError> {
        use base64::Engine as _;
        let body: String = pem
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with("-----"))
            .collect();
        let der = base64::engine::general_purpose::STANDARD
            .decode(body)
            .map_err(|e| CryptoError::MalformedCertificate(e.to_string()))?;
        Certificate::from_der(der)
    }

    pub fn der(&self) -> &[u8] {
        &self.der
    }

    /// Common name, i.e. the DNS name the certificate is published under.
    pub fn subject(&self) -> &str {
        &self.subject
    }

    pub fn not_before(&self) -> u64 {
        self.not_before
    }

    pub fn not_after(&self) -> u64 {
        self.not_after
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.public_key
    }

    /// Checks the certificate's own signature.
    pub fn verify_self_signature(&self) -> bool {
        let Ok(cert) = x509_cert::Certificate::from_der(&self.der) else {
            return false;
        };
        let Ok(tbs) = cert.tbs_certificate.to_der() else {
            return false;
        };
        let Some(sig) = cert.signature.as_bytes() else {
            return false;
        };
        match &self.public_key {
            PublicKey::Ecdsa(k) => p256::ecdsa::DerSignature::from_bytes(sig)
                .map(|s| k.verify(&tbs, &s).is_ok())
                .unwrap_or(false),
            PublicKey::Rsa(_) => self.public_key.verify(&tbs, sig),
        }
    }
}

/// A 32-bit challenge value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Nonce(pub u32);

impl Nonce {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Nonce(rng.next_u32())
    }
}

impl fmt::Display for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#010x}", self.0)
    }
}

/// What a challenge response is bound to besides the nonce: the signer's
/// name and a digest of the message that carries the response.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NonceContext {
    pub signer: DnsName,
    pub digest: [u8; 32],
}

fn nonce_signing_input(nonce: Nonce, ctx: &NonceContext) -> Vec<u8> {
    let signer = ctx.signer.as_str().as_bytes();
    let mut data = Vec::with_capacity(NONCE_LABEL.len() + 5 + signer.len() + 32);
    data.extend_from_slice(NONCE_LABEL);
    data.extend_from_slice(&nonce.0.to_be_bytes());
    data.push(signer.len() as u8);
    data.extend_from_slice(signer);
    data.extend_from_slice(&ctx.digest);
    data
}

/// Signs `nonce ‖ context` with an identity key.
pub fn sign_nonce(key: &KeyPair, nonce: Nonce, ctx: &NonceContext) -> Result<Vec<u8>, CryptoError> {
    key.sign(KeyUsage::ServiceIdentity, &nonce_signing_input(nonce, ctx))
}

/// Checks a challenge response against a parsed certificate.
pub fn verify_nonce_with(
    cert: &Certificate,
    nonce: Nonce,
    ctx: &NonceContext,
    signature: &[u8],
) -> bool {
    cert.public_key
        .verify(&nonce_signing_input(nonce, ctx), signature)
}

/// Checks a challenge response against a DER certificate.
pub fn verify_nonce(
    cert_der: &[u8],
    nonce: Nonce,
    ctx: &NonceContext,
    signature: &[u8],
) -> Result<bool, CryptoError> {
    let cert = Certificate::from_der(cert_der.to_vec())?;
    Ok(verify_nonce_with(&cert, nonce, ctx, signature))
}

/// Whether `cert_der` is the certificate a TLSA record designates.
/// Supported parameter sets are `3 0 0` and `3 0 1`.
pub fn match_tlsa(cert_der: &[u8], tlsa: &TlsaParams) -> Result<bool, CryptoError> {
    match (tlsa.usage, tlsa.selector, tlsa.matching) {
        (TLSA_USAGE_DANE_EE, TLSA_SELECTOR_FULL, TLSA_MATCH_EXACT) => Ok(tlsa.data == cert_der),
        (TLSA_USAGE_DANE_EE, TLSA_SELECTOR_FULL, TLSA_MATCH_SHA256) => {
            Ok(tlsa.data[..] == Sha256::digest(cert_der)[..])
        }
        (usage, selector, matching) => Err(CryptoError::UnsupportedTlsaMode {
            usage,
            selector,
            matching,
        }),
    }
}

/// `3 0 0` record for a certificate.
pub fn build_tlsa(cert: &Certificate) -> TlsaParams {
    TlsaParams::full_certificate(cert.der.clone())
}

/// `3 0 1` record for a certificate.
pub fn build_tlsa_digest(cert: &Certificate) -> TlsaParams {
    TlsaParams {
        usage: TLSA_USAGE_DANE_EE,
        selector: TLSA_SELECTOR_FULL,
        matching: TLSA_MATCH_SHA256,
        data: Sha256::digest(&cert.der).to_vec(),
    }
}

/// Key-agreement groups, numbered as TLS named groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KaGroup {
    X25519,
    P256,
}

impl KaGroup {
    pub fn id(self) -> u16 {
        match self {
            KaGroup::X25519 => 0x001d,
            KaGroup::P256 => 0x0017,
        }
    }

    pub fn from_id(id: u16) -> Option<Self> {
        match id {
            0x001d => Some(KaGroup::X25519),
            0x0017 => Some(KaGroup::P256),
            _ => None,
        }
    }
}

/// The private half of an ephemeral key-agreement share.
#[derive(Clone)]
pub enum KaPrivate {
    X25519(x25519_dalek::StaticSecret),
    P256(p256::SecretKey),
}

impl fmt::Debug for KaPrivate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KaPrivate({:?})", self.group())
    }
}

impl KaPrivate {
    pub fn group(&self) -> KaGroup {
        match self {
            KaPrivate::X25519(_) => KaGroup::X25519,
            KaPrivate::P256(_) => KaGroup::P256,
        }
    }
}

/// Raw key-agreement output.
#[derive(Clone, PartialEq, Eq)]
pub struct SharedSecret([u8; 32]);

impl SharedSecret {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for SharedSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SharedSecret(..)")
    }
}

/// Generates an ephemeral share in `group`.
pub fn ka_generate<R: RngCore + CryptoRng>(group: KaGroup, rng: &mut R) -> (KaPrivate, KeyShare) {
    match group {
        KaGroup::X25519 => {
            let secret = x25519_dalek::StaticSecret::random_from_rng(&mut *rng);
            let public = x25519_dalek::PublicKey::from(&secret);
            (
                KaPrivate::X25519(secret),
                KeyShare {
                    group: group.id(),
                    public: public.as_bytes().to_vec(),
                },
            )
        }
        KaGroup::P256 => {
            let secret = p256::SecretKey::random(rng);
            let public = secret
                .public_key()
                .to_encoded_point(true)
                .as_bytes()
                .to_vec();
            (
                KaPrivate::P256(secret),
                KeyShare {
                    group: group.id(),
                    public,
                },
            )
        }
    }
}

/// Computes the shared secret with a peer's share.
pub fn ka_shared(private: &KaPrivate, peer: &KeyShare) -> Result<SharedSecret, CryptoError> {
    let expected = private.group().id();
    let mismatch = CryptoError::GroupMismatch { expected };
    if peer.group != expected {
        return Err(mismatch);
    }
    match private {
        KaPrivate::X25519(secret) => {
            let bytes: [u8; 32] = peer
                .public
                .as_slice()
                .try_into()
                .map_err(|_| mismatch.clone())?;
            let shared = secret.diffie_hellman(&x25519_dalek::PublicKey::from(bytes));
            // low-order points yield an all-zero secret
            if !shared.was_contributory() {
                return Err(mismatch);
            }
            Ok(SharedSecret(*shared.as_bytes()))
        }
        KaPrivate::P256(secret) => {
            let public = p256::PublicKey::from_sec1_bytes(&peer.public).map_err(|_| mismatch)?;
            let shared = p256::ecdh::diffie_hellman(secret.to_nonzero_scalar(), public.as_affine());
            let mut out = [0u8; 32];
            out.copy_from_slice(shared.raw_secret_bytes());
            Ok(SharedSecret(out))
        }
    }
}

/// The handshake fields a session key is bound to.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Transcript {
    pub publisher: DnsName,
    pub subscriber: DnsName,
    pub publisher_nonce: Nonce,
    pub subscriber_nonce: Nonce,
}

impl Transcript {
    fn info(&self) -> Vec<u8> {
        let mut info = SESSION_LABEL.to_vec();
        for name in [&self.publisher, &self.subscriber] {
            info.push(name.as_str().len() as u8);
            info.extend_from_slice(name.as_str().as_bytes());
        }
        info.extend_from_slice(&self.publisher_nonce.0.to_be_bytes());
        info.extend_from_slice(&self.subscriber_nonce.0.to_be_bytes());
        info
    }
}

/// A pairwise symmetric key.
#[derive(Clone, PartialEq, Eq)]
pub struct SessionKey {
    pub key: [u8; SYMMETRIC_KEY_LEN],
    pub key_id: u32,
}

impl fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionKey(id={:#010x})", self.key_id)
    }
}

/// HKDF-SHA256 over the shared secret with the transcript as info.
pub fn derive_session_key(shared: &SharedSecret, transcript: &Transcript) -> SessionKey {
    let hk = Hkdf::<Sha256>::new(None, &shared.0);
    let mut okm = [0u8; SYMMETRIC_KEY_LEN + 4];
    hk.expand(&transcript.info(), &mut okm)
        .expect("output length within HKDF limit");
    let mut key = [0u8; SYMMETRIC_KEY_LEN];
    key.copy_from_slice(&okm[..SYMMETRIC_KEY_LEN]);
    let key_id = u32::from_be_bytes(okm[SYMMETRIC_KEY_LEN..].try_into().expect("4 bytes"));
    SessionKey { key, key_id }
}

/// A multicast group key sponsored by a publisher.
#[derive(Clone, PartialEq, Eq)]
pub struct GroupKey {
    pub key: [u8; SYMMETRIC_KEY_LEN],
    pub key_id: u32,
    pub epoch: u32,
}

impl fmt::Debug for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "GroupKey(id={:#010x}, epoch={})",
            self.key_id, self.epoch
        )
    }
}

impl GroupKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut key = [0u8; SYMMETRIC_KEY_LEN];
        rng.fill_bytes(&mut key);
        GroupKey {
            key,
            key_id: rng.next_u32(),
            epoch: 0,
        }
    }

    /// A fresh key with the next epoch.
    pub fn rekey<R: RngCore + CryptoRng>(&self, rng: &mut R) -> Self {
        let mut next = GroupKey::generate(rng);
        next.epoch = self.epoch + 1;
        next
    }
}

fn wrap_aad(session: &SessionKey, key_id: u32, epoch: u32) -> [u8; 12] {
    let mut aad = [0u8; 12];
    aad[..4].copy_from_slice(&session.key_id.to_be_bytes());
    aad[4..8].copy_from_slice(&key_id.to_be_bytes());
    aad[8..].copy_from_slice(&epoch.to_be_bytes());
    aad
}

/// Encrypts a group key under a session key (AES-128-GCM).
pub fn wrap_group_key<R: RngCore + CryptoRng>(
    session: &SessionKey,
    group: &GroupKey,
    rng: &mut R,
) -> WrappedKey {
    let cipher = Aes128Gcm::new_from_slice(&session.key).expect("16-byte key");
    let mut nonce = [0u8; GCM_NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let aad = wrap_aad(session, group.key_id, group.epoch);
    let ct = cipher
        .encrypt(
            &GcmNonce::from(nonce),
            Payload {
                msg: &group.key,
                aad: &aad,
            },
        )
        .expect("AES-GCM encryption of a short message");
    let mut ciphertext = nonce.to_vec();
    ciphertext.extend_from_slice(&ct);
    WrappedKey {
        key_id: group.key_id,
        epoch: group.epoch,
        ciphertext,
    }
}

/// Inverse of [`wrap_group_key`]; fails under any other session key.
pub fn unwrap_group_key(
    session: &SessionKey,
    wrapped: &WrappedKey,
) -> Result<GroupKey, CryptoError> {
    if wrapped.ciphertext.len() < GCM_NONCE_LEN {
        return Err(CryptoError::AuthFailure);
    }
    let cipher = Aes128Gcm::new_from_slice(&session.key).expect("16-byte key");
    let (nonce, ct) = wrapped.ciphertext.split_at(GCM_NONCE_LEN);
    let nonce: [u8; GCM_NONCE_LEN] = nonce.try_into().expect("split at nonce length");
    let aad = wrap_aad(session, wrapped.key_id, wrapped.epoch);
    let plain = cipher
        .decrypt(&GcmNonce::from(nonce), Payload { msg: ct, aad: &aad })
        .map_err(|_| CryptoError::AuthFailure)?;
    let key: [u8; SYMMETRIC_KEY_LEN] = plain
        .as_slice()
        .try_into()
        .map_err(|_| CryptoError::AuthFailure)?;
    Ok(GroupKey {
        key,
        key_id: wrapped.key_id,
        epoch: wrapped.epoch,
    })
}

fn publication_nonce(group: &GroupKey, seq: u64) -> [u8; GCM_NONCE_LEN] {
    let mut nonce = [0u8; GCM_NONCE_LEN];
    nonce[..4].copy_from_slice(&group.epoch.to_be_bytes());
    nonce[4..].copy_from_slice(&seq.to_be_bytes());
    nonce
}

/// Encrypts a multicast publication. `seq` must not repeat within an epoch.
pub fn seal_publication(group: &GroupKey, seq: u64, payload: &[u8]) -> Vec<u8> {
    let cipher = Aes128Gcm::new_from_slice(&group.key).expect("16-byte key");
    cipher
        .encrypt(&GcmNonce::from(publication_nonce(group, seq)), payload)
        .expect("AES-GCM encryption")
}

pub fn open_publication(
    group: &GroupKey,
    seq: u64,
    ciphertext: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    let cipher = Aes128Gcm::new_from_slice(&group.key).expect("16-byte key");
    cipher
        .decrypt(&GcmNonce::from(publication_nonce(group, seq)), ciphertext)
        .map_err(|_| CryptoError::AuthFailure)
}

/// Cryptographic operations whose cost is reported by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CryptoOp {
    Sign,
    Verify,
    KeyAgreement,
    Wrap,
    Unwrap,
}

impl CryptoOp {
    pub fn label(self) -> &'static str {
        match self {
            CryptoOp::Sign => "Create signature",
            CryptoOp::Verify => "Verify signature",
            CryptoOp::KeyAgreement => "Key agreement",
            CryptoOp::Wrap => "Wrap group key",
            CryptoOp::Unwrap => "Unwrap group key",
        }
    }
}

/// Runs `f` and returns its result with the elapsed wall-clock time.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}
