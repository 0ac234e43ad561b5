//! Hybrid KEM combiner: classical and post-quantum encapsulations whose
//! shared secrets are concatenated into HKDF-SHA-256. Recovering the session
//! key requires both decapsulations to succeed.

use hkdf::Hkdf;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::kem::{kem_decap, kem_encap, KemSchemeId};
use super::CryptoError;

/// Domain-separation labels used across the system.
pub const LABEL_UNLOCK_KEY: &str = "unlock-key";
pub const LABEL_COLD_ARCHIVE: &str = "cold-archive";
pub const LABEL_CLOUD_REPLICA: &str = "cloud-replica";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HybridCiphertext {
    pub scheme_classical: KemSchemeId,
    pub scheme_pq: KemSchemeId,
    #[serde(with = "crate::canonical::hex_bytes")]
    pub ct_classical: Vec<u8>,
    #[serde(with = "crate::canonical::hex_bytes")]
    pub ct_pq: Vec<u8>,
    pub kdf_label: String,
}

fn derive(ss_classical: &[u8; 32], ss_pq: &[u8; 32], label: &str) -> [u8; 32] {
    let mut ikm = Vec::with_capacity(64);
    ikm.extend_from_slice(ss_classical);
    ikm.extend_from_slice(ss_pq);
    let hk = Hkdf::<Sha256>::new(None, &ikm);
    let mut out = [0u8; 32];
    hk.expand(label.as_bytes(), &mut out).expect("32 bytes is a valid HKDF length");
    out
}

/// Encapsulate to both recipients' public keys and derive the session key.
/// `randomness` supplies 32 bytes to each encapsulation.
pub fn hybrid_establish(
    scheme_classical: KemSchemeId,
    pk_classical: &[u8],
    scheme_pq: KemSchemeId,
    pk_pq: &[u8],
    randomness: &[u8; 64],
    label: &str,
) -> Result<(HybridCiphertext, [u8; 32]), CryptoError> {
    let r_c: [u8; 32] = randomness[..32].try_into().unwrap();
    let r_pq: [u8; 32] = randomness[32..].try_into().unwrap();
    let (ct_classical, ss_c) = kem_encap(scheme_classical, pk_classical, &r_c)?;
    let (ct_pq, ss_pq) = kem_encap(scheme_pq, pk_pq, &r_pq)?;
    let session_key = derive(&ss_c, &ss_pq, label);
    Ok((
        HybridCiphertext {
            scheme_classical,
            scheme_pq,
            ct_classical,
            ct_pq,
            kdf_label: label.to_string(),
        },
        session_key,
    ))
}

pub fn hybrid_recover(
    sk_classical: &[u8],
    sk_pq: &[u8],
    ct: &HybridCiphertext,
) -> Result<[u8; 32], CryptoError> {
    let ss_c = kem_decap(ct.scheme_classical, sk_classical, &ct.ct_classical)?;
    let ss_pq = kem_decap(ct.scheme_pq, sk_pq, &ct.ct_pq)?;
    Ok(derive(&ss_c, &ss_pq, &ct.kdf_label))
}
