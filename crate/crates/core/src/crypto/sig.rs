//! Signatures behind a scheme-id registry.
//!
//! "test-sig" is hash-based and forgeable by anyone holding the public key;
//! it exists so the test suite is deterministic and dependency-light.
//! "classical-sig" is Ed25519, "pq-sig" is ML-DSA-65 (deterministic mode).

use ed25519_dalek::{Signer, Verifier};
use ml_dsa::{KeyGen, MlDsa65};
use serde::{Deserialize, Serialize};

use super::CryptoError;
use crate::canonical::{sha256, sha256_concat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SigSchemeId {
    #[serde(rename = "test-sig")]
    Test,
    #[serde(rename = "classical-sig")]
    Classical,
    #[serde(rename = "pq-sig")]
    Pq,
}

impl SigSchemeId {
    pub fn from_id(id: &str) -> Result<Self, CryptoError> {
        match id {
            "test-sig" => Ok(Self::Test),
            "classical-sig" => Ok(Self::Classical),
            "pq-sig" => Ok(Self::Pq),
            other => Err(CryptoError::UnknownScheme(other.to_string())),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Self::Test => "test-sig",
            Self::Classical => "classical-sig",
            Self::Pq => "pq-sig",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigKeyPair {
    pub scheme: SigSchemeId,
    #[serde(with = "crate::canonical::hex_bytes")]
    pub public_key: Vec<u8>,
    #[serde(with = "crate::canonical::hex_bytes")]
    pub secret_key: Vec<u8>,
}

/// Deterministic keygen from a 32-byte seed.
pub fn sig_keygen(scheme: SigSchemeId, seed: &[u8]) -> Result<SigKeyPair, CryptoError> {
    let seed: [u8; 32] = seed
        .try_into()
        .map_err(|_| CryptoError::BadSeedLength { expected: 32, got: seed.len() })?;
    let (public_key, secret_key) = match scheme {
        SigSchemeId::Test => {
            let sk = sha256(&seed);
            let pk = sha256(&sk);
            (pk.to_vec(), sk.to_vec())
        }
        SigSchemeId::Classical => {
            let sk = ed25519_dalek::SigningKey::from_bytes(&seed);
            let pk = sk.verifying_key();
            (pk.to_bytes().to_vec(), sk.to_bytes().to_vec())
        }
        SigSchemeId::Pq => {
            let kp = MlDsa65::key_gen_internal(&seed.into());
            (
                kp.verifying_key().encode().to_vec(),
                // store the seed; key pairs are re-derived on use
                seed.to_vec(),
            )
        }
    };
    Ok(SigKeyPair { scheme, public_key, secret_key })
}

pub fn sign(scheme: SigSchemeId, sk: &[u8], message: &[u8]) -> Result<Vec<u8>, CryptoError> {
    match scheme {
        SigSchemeId::Test => {
            if sk.len() != 32 {
                return Err(CryptoError::MalformedKey(scheme.id().to_string()));
            }
            // sig = SHA-256(pk || message); verifiable by anyone with pk.
            let pk = sha256(sk);
            Ok(sha256_concat(&[&pk, message]).to_vec())
        }
        SigSchemeId::Classical => {
            let sk_arr: [u8; 32] = sk
                .try_into()
                .map_err(|_| CryptoError::MalformedKey(scheme.id().to_string()))?;
            let key = ed25519_dalek::SigningKey::from_bytes(&sk_arr);
            Ok(key.sign(message).to_bytes().to_vec())
        }
        SigSchemeId::Pq => {
            let seed: [u8; 32] = sk
                .try_into()
                .map_err(|_| CryptoError::MalformedKey(scheme.id().to_string()))?;
            let kp = MlDsa65::key_gen_internal(&seed.into());
            let sig = kp
                .signing_key()
                .sign_deterministic(message, b"")
                .map_err(|_| CryptoError::MalformedKey(scheme.id().to_string()))?;
            Ok(sig.encode().to_vec())
        }
    }
}

pub fn verify(scheme: SigSchemeId, pk: &[u8], message: &[u8], signature: &[u8]) -> bool {
    match scheme {
        SigSchemeId::Test => {
            pk.len() == 32 && signature == sha256_concat(&[pk, message]).as_slice()
        }
        SigSchemeId::Classical => {
            let Ok(pk_arr): Result<[u8; 32], _> = pk.try_into() else {
                return false;
            };
            let Ok(key) = ed25519_dalek::VerifyingKey::from_bytes(&pk_arr) else {
                return false;
            };
            let Ok(sig_arr): Result<[u8; 64], _> = signature.try_into() else {
                return false;
            };
            let sig = ed25519_dalek::Signature::from_bytes(&sig_arr);
            key.verify(message, &sig).is_ok()
        }
        SigSchemeId::Pq => {
            let Ok(encoded) = ml_dsa::EncodedVerifyingKey::<MlDsa65>::try_from(pk) else {
                return false;
            };
            let key = ml_dsa::VerifyingKey::<MlDsa65>::decode(&encoded);
            let Ok(sig_enc) = ml_dsa::EncodedSignature::<MlDsa65>::try_from(signature) else {
                return false;
            };
            let Some(sig) = ml_dsa::Signature::<MlDsa65>::decode(&sig_enc) else {
                return false;
            };
            key.verify_with_context(message, b"", &sig)
        }
    }
}
