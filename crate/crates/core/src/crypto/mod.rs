//! Algorithm-agility layer: KEM, signature, AEAD, and KDF contracts with a
//! deterministic test profile, a classical profile (X25519 / Ed25519), and a
//! post-quantum profile (ML-KEM-768 / ML-DSA-65), plus the hybrid combiner
//! used to wrap unlock keys and archives.

pub mod aead;
pub mod hybrid;
pub mod kem;
pub mod sig;

pub use aead::{aead_open, aead_seal, AeadBox, NonceTracker};
pub use hybrid::{hybrid_establish, hybrid_recover, HybridCiphertext};
pub use kem::{kem_decap, kem_encap, kem_keygen, KemKeyPair, KemSchemeId};
pub use sig::{sig_keygen, sign, verify, SigKeyPair, SigSchemeId};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("unknown scheme id: {0}")]
    UnknownScheme(String),
    #[error("malformed public key for scheme {0}")]
    MalformedPublicKey(String),
    #[error("malformed secret key for scheme {0}")]
    MalformedKey(String),
    #[error("malformed ciphertext for scheme {0}")]
    MalformedCiphertext(String),
    #[error("decapsulation failure")]
    DecapFailure,
    #[error("AEAD authentication failure")]
    AuthFailure,
    #[error("nonce reuse detected for key")]
    NonceReuseDetected,
    #[error("bad seed length: expected {expected}, got {got}")]
    BadSeedLength { expected: usize, got: usize },
}
