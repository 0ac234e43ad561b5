//! Certificate lifecycle primitives: a three-level chain (leaf, intermediate,
//! root), CSRs, OCSP staples, and delta-CRLs. Certificates are canonical-JSON
//! structures signed by the issuer, not real X.509 DER.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::to_canonical_bytes;
use crate::clock::DAY;
use crate::crypto::sig::{sig_keygen, sign, verify, SigKeyPair, SigSchemeId};

pub const CERT_VALIDITY_MS: u64 = 365 * DAY;
pub const RENEWAL_WINDOW_MS: u64 = 30 * DAY;
pub const OCSP_NEXT_UPDATE_MS: u64 = 24 * 60 * 60 * 1_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PkiError {
    #[error("CSR self-signature invalid")]
    CsrSignatureInvalid,
    #[error("certificate signature invalid at depth {0}")]
    BadCertSignature(usize),
    #[error("certificate expired or not yet valid")]
    OutsideValidity,
    #[error("chain does not terminate at the trusted root")]
    UntrustedRoot,
    #[error("empty certificate chain")]
    EmptyChain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevocationReason {
    Unspecified,
    KeyCompromise,
    Emergency,
    Superseded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub serial: u64,
    pub subject: String,
    pub scheme: SigSchemeId,
    #[serde(with = "crate::canonical::hex_bytes")]
    pub public_key: Vec<u8>,
    pub not_before: u64,
    pub not_after: u64,
    pub issuer: String,
    #[serde(with = "crate::canonical::hex_bytes")]
    pub signature: Vec<u8>,
}

#[derive(Serialize)]
struct CertBody<'a> {
    serial: u64,
    subject: &'a str,
    scheme: SigSchemeId,
    #[serde(with = "crate::canonical::hex_bytes")]
    public_key: &'a [u8],
    not_before: u64,
    not_after: u64,
    issuer: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificateChain {
    pub leaf: Certificate,
    pub intermediate: Certificate,
    pub root: Certificate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Csr {
    pub subject: String,
    pub scheme: SigSchemeId,
    #[serde(with = "crate::canonical::hex_bytes")]
    pub public_key: Vec<u8>,
    #[serde(with = "crate::canonical::hex_bytes")]
    pub signature: Vec<u8>,
}

#[derive(Serialize)]
struct CsrBody<'a> {
    subject: &'a str,
    scheme: SigSchemeId,
    #[serde(with = "crate::canonical::hex_bytes")]
    public_key: &'a [u8],
}

impl Csr {
    /// Self-signed request proving possession of the subject key.
    pub fn new(subject: &str, keypair: &SigKeyPair) -> Self {
        let body = CsrBody {
            subject,
            scheme: keypair.scheme,
            public_key: &keypair.public_key,
        };
        let signature = sign(keypair.scheme, &keypair.secret_key, &to_canonical_bytes(&body))
            .expect("valid key");
        Self {
            subject: subject.to_string(),
            scheme: keypair.scheme,
            public_key: keypair.public_key.clone(),
            signature,
        }
    }

    pub fn verify_self_signature(&self) -> bool {
        let body = CsrBody {
            subject: &self.subject,
            scheme: self.scheme,
            public_key: &self.public_key,
        };
        verify(self.scheme, &self.public_key, &to_canonical_bytes(&body), &self.signature)
    }
}

/// In-process CA holding the root and intermediate signing keys.
#[derive(Debug)]
pub struct CertAuthority {
    pub scheme: SigSchemeId,
    root_key: SigKeyPair,
    intermediate_key: SigKeyPair,
    pub root_cert: Certificate,
    pub intermediate_cert: Certificate,
    next_serial: u64,
}

fn sign_cert(
    issuer_key: &SigKeyPair,
    serial: u64,
    subject: &str,
    scheme: SigSchemeId,
    public_key: &[u8],
    not_before: u64,
    not_after: u64,
    issuer: &str,
) -> Certificate {
    let body = CertBody {
        serial,
        subject,
        scheme,
        public_key,
        not_before,
        not_after,
        issuer,
    };
    let signature = sign(issuer_key.scheme, &issuer_key.secret_key, &to_canonical_bytes(&body))
        .expect("valid issuer key");
    Certificate {
        serial,
        subject: subject.to_string(),
        scheme,
        public_key: public_key.to_vec(),
        not_before,
        not_after,
        issuer: issuer.to_string(),
        signature,
    }
}

impl Certificate {
    pub fn verify_issued_by(&self, issuer_pk: &[u8], issuer_scheme: SigSchemeId) -> bool {
        let body = CertBody {
            serial: self.serial,
            subject: &self.subject,
            scheme: self.scheme,
            public_key: &self.public_key,
            not_before: self.not_before,
            not_after: self.not_after,
            issuer: &self.issuer,
        };
        verify(issuer_scheme, issuer_pk, &to_canonical_bytes(&body), &self.signature)
    }
}

impl CertAuthority {
    pub fn new(scheme: SigSchemeId, seed: &[u8; 32], now: u64) -> Self {
        let mut root_seed = *seed;
        root_seed[0] ^= 0xa5;
        let mut int_seed = *seed;
        int_seed[0] ^= 0x5a;
        let root_key = sig_keygen(scheme, &root_seed).unwrap();
        let intermediate_key = sig_keygen(scheme, &int_seed).unwrap();
        let root_cert = sign_cert(
            &root_key, 1, "root-ca", scheme, &root_key.public_key,
            now, now + 10 * CERT_VALIDITY_MS, "root-ca",
        );
        let intermediate_cert = sign_cert(
            &root_key, 2, "intermediate-ca", scheme, &intermediate_key.public_key,
            now, now + 5 * CERT_VALIDITY_MS, "root-ca",
        );
        Self { scheme, root_key, intermediate_key, root_cert, intermediate_cert, next_serial: 3 }
    }

    pub fn root_public_key(&self) -> &[u8] {
        &self.root_key.public_key
    }

    /// Issue a 365-day leaf from a verified CSR.
    pub fn issue_leaf(&mut self, csr: &Csr, now: u64) -> Result<CertificateChain, PkiError> {
        if !csr.verify_self_signature() {
            return Err(PkiError::CsrSignatureInvalid);
        }
        let serial = self.next_serial;
        self.next_serial += 1;
        let leaf = sign_cert(
            &self.intermediate_key, serial, &csr.subject, csr.scheme, &csr.public_key,
            now, now + CERT_VALIDITY_MS, "intermediate-ca",
        );
        Ok(CertificateChain {
            leaf,
            intermediate: self.intermediate_cert.clone(),
            root: self.root_cert.clone(),
        })
    }

    /// Staple signer is the intermediate.
    pub fn sign_staple(&self, serial: u64, revoked: bool, produced_at: u64) -> OcspStaple {
        let body = StapleBody { serial, revoked, produced_at, next_update: produced_at + OCSP_NEXT_UPDATE_MS };
        let signature = sign(self.scheme, &self.intermediate_key.secret_key, &to_canonical_bytes(&body)).unwrap();
        OcspStaple {
            serial,
            revoked,
            produced_at,
            next_update: produced_at + OCSP_NEXT_UPDATE_MS,
            signature,
        }
    }

    pub fn sign_delta_crl(&self, revoked_serials: Vec<u64>, produced_at: u64) -> DeltaCrl {
        let body = CrlBody { revoked_serials: &revoked_serials, produced_at };
        let signature = sign(self.scheme, &self.intermediate_key.secret_key, &to_canonical_bytes(&body)).unwrap();
        DeltaCrl { revoked_serials, produced_at, signature }
    }

    pub fn staple_signer_public_key(&self) -> &[u8] {
        &self.intermediate_key.public_key
    }
}

/// Validate chain signatures, validity windows, and root trust.
pub fn validate_chain(
    chain: &CertificateChain,
    trusted_root_pk: &[u8],
    scheme: SigSchemeId,
    now: u64,
) -> Result<(), PkiError> {
    if chain.root.public_key != trusted_root_pk {
        return Err(PkiError::UntrustedRoot);
    }
    if !chain.root.verify_issued_by(trusted_root_pk, scheme) {
        return Err(PkiError::BadCertSignature(2));
    }
    if !chain.intermediate.verify_issued_by(&chain.root.public_key, scheme) {
        return Err(PkiError::BadCertSignature(1));
    }
    if !chain.leaf.verify_issued_by(&chain.intermediate.public_key, scheme) {
        return Err(PkiError::BadCertSignature(0));
    }
    for cert in [&chain.leaf, &chain.intermediate, &chain.root] {
        if now < cert.not_before || now > cert.not_after {
            return Err(PkiError::OutsideValidity);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcspStaple {
    pub serial: u64,
    pub revoked: bool,
    pub produced_at: u64,
    pub next_update: u64,
    #[serde(with = "crate::canonical::hex_bytes")]
    pub signature: Vec<u8>,
}

#[derive(Serialize)]
struct StapleBody {
    serial: u64,
    revoked: bool,
    produced_at: u64,
    next_update: u64,
}

impl OcspStaple {
    pub fn verify_signature(&self, signer_pk: &[u8], scheme: SigSchemeId) -> bool {
        let body = StapleBody {
            serial: self.serial,
            revoked: self.revoked,
            produced_at: self.produced_at,
            next_update: self.next_update,
        };
        verify(scheme, signer_pk, &to_canonical_bytes(&body), &self.signature)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaCrl {
    pub revoked_serials: Vec<u64>,
    pub produced_at: u64,
    #[serde(with = "crate::canonical::hex_bytes")]
    pub signature: Vec<u8>,
}

#[derive(Serialize)]
struct CrlBody<'a> {
    revoked_serials: &'a [u64],
    produced_at: u64,
}

impl DeltaCrl {
    pub fn verify_signature(&self, signer_pk: &[u8], scheme: SigSchemeId) -> bool {
        let body = CrlBody { revoked_serials: &self.revoked_serials, produced_at: self.produced_at };
        verify(scheme, signer_pk, &to_canonical_bytes(&body), &self.signature)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ca() -> CertAuthority {
        CertAuthority::new(SigSchemeId::Test, &[9u8; 32], 1_000)
    }

    fn device_key() -> SigKeyPair {
        sig_keygen(SigSchemeId::Test, &[3u8; 32]).unwrap()
    }

    #[test]
    fn issue_and_validate_chain() {
        let mut ca = ca();
        let dk = device_key();
        let csr = Csr::new("dev-1", &dk);
        let chain = ca.issue_leaf(&csr, 2_000).unwrap();
        assert_eq!(chain.leaf.not_after - chain.leaf.not_before, CERT_VALIDITY_MS);
        validate_chain(&chain, ca.root_public_key(), SigSchemeId::Test, 3_000).unwrap();
    }

    #[test]
    fn bad_csr_rejected() {
        let mut ca = ca();
        let dk = device_key();
        let mut csr = Csr::new("dev-1", &dk);
        csr.subject = "dev-2".into(); // body no longer matches signature
        assert_eq!(ca.issue_leaf(&csr, 0).unwrap_err(), PkiError::CsrSignatureInvalid);
    }

    #[test]
    fn expired_chain_rejected() {
        let mut ca = ca();
        let chain = ca.issue_leaf(&Csr::new("dev-1", &device_key()), 2_000).unwrap();
        let err = validate_chain(&chain, ca.root_public_key(), SigSchemeId::Test, 2_000 + CERT_VALIDITY_MS + 1);
        assert_eq!(err.unwrap_err(), PkiError::OutsideValidity);
    }

    #[test]
    fn forged_leaf_rejected() {
        let mut ca = ca();
        let mut chain = ca.issue_leaf(&Csr::new("dev-1", &device_key()), 2_000).unwrap();
        chain.leaf.subject = "dev-other".into();
        assert_eq!(
            validate_chain(&chain, ca.root_public_key(), SigSchemeId::Test, 3_000).unwrap_err(),
            PkiError::BadCertSignature(0)
        );
    }

    #[test]
    fn untrusted_root_rejected() {
        let mut ca1 = ca();
        let ca2 = CertAuthority::new(SigSchemeId::Test, &[10u8; 32], 1_000);
        let chain = ca1.issue_leaf(&Csr::new("dev-1", &device_key()), 2_000).unwrap();
        assert_eq!(
            validate_chain(&chain, ca2.root_public_key(), SigSchemeId::Test, 3_000).unwrap_err(),
            PkiError::UntrustedRoot
        );
    }

    #[test]
    fn staple_and_crl_signatures() {
        let ca = ca();
        let staple = ca.sign_staple(7, false, 5_000);
        assert_eq!(staple.next_update, 5_000 + OCSP_NEXT_UPDATE_MS);
        assert!(staple.verify_signature(ca.staple_signer_public_key(), SigSchemeId::Test));
        let mut bad = staple.clone();
        bad.revoked = true;
        assert!(!bad.verify_signature(ca.staple_signer_public_key(), SigSchemeId::Test));

        let crl = ca.sign_delta_crl(vec![4, 7], 5_000);
        assert!(crl.verify_signature(ca.staple_signer_public_key(), SigSchemeId::Test));
    }
}
