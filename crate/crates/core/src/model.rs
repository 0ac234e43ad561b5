//! Signed, versioned ML model packages and rollback directives. Payloads are
//! opaque blobs; only the manifest and its signature matter here.

use serde::{Deserialize, Serialize};

use crate::canonical::{sha256, to_canonical_bytes};
use crate::crypto::sig::{sign, verify, SigKeyPair, SigSchemeId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub model_id: String,
    pub version: u64,
    #[serde(with = "crate::canonical::hex_digest")]
    pub payload_digest: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelPackage {
    pub manifest: ModelManifest,
    #[serde(with = "crate::canonical::hex_bytes")]
    pub payload: Vec<u8>,
    #[serde(with = "crate::canonical::hex_bytes")]
    pub signature: Vec<u8>,
}

impl ModelPackage {
    pub fn build(signer: &SigKeyPair, model_id: &str, version: u64, payload: Vec<u8>) -> Self {
        let manifest = ModelManifest {
            model_id: model_id.to_string(),
            version,
            payload_digest: sha256(&payload),
        };
        let signature = sign(signer.scheme, &signer.secret_key, &to_canonical_bytes(&manifest))
            .expect("valid model signing key");
        Self { manifest, payload, signature }
    }

    /// Signature over the canonical manifest, plus payload digest match.
    pub fn verify(&self, scheme: SigSchemeId, signer_pk: &[u8]) -> bool {
        sha256(&self.payload) == self.manifest.payload_digest
            && verify(scheme, signer_pk, &to_canonical_bytes(&self.manifest), &self.signature)
    }
}

/// Operator-signed authorization to install an exact earlier version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollbackDirective {
    pub model_id: String,
    pub target_version: u64,
    #[serde(with = "crate::canonical::hex_bytes")]
    pub signature: Vec<u8>,
}

#[derive(Serialize)]
struct DirectiveBody<'a> {
    model_id: &'a str,
    target_version: u64,
}

impl RollbackDirective {
    pub fn build(signer: &SigKeyPair, model_id: &str, target_version: u64) -> Self {
        let body = DirectiveBody { model_id, target_version };
        let signature = sign(signer.scheme, &signer.secret_key, &to_canonical_bytes(&body))
            .expect("valid model signing key");
        Self { model_id: model_id.to_string(), target_version, signature }
    }

    pub fn verify(&self, scheme: SigSchemeId, signer_pk: &[u8]) -> bool {
        let body = DirectiveBody { model_id: &self.model_id, target_version: self.target_version };
        verify(scheme, signer_pk, &to_canonical_bytes(&body), &self.signature)
    }
}
