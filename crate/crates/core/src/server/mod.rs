//! The cloud trust domain: device registry, challenge-response attestation,
//! policy engine, one-time grant issuance, CA and revocation services, model
//! registry, rate limiter, operator actions, and the audit chain.

pub mod policy;
pub mod ratelimit;
pub mod wire;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::audit::{AuditChain, ChainStatus};
use crate::canonical::sha256_concat;
use crate::clock::SEC;
use crate::crypto::aead::{aead_seal, AeadBox};
use crate::crypto::hybrid::{hybrid_establish, HybridCiphertext, LABEL_UNLOCK_KEY};
use crate::crypto::kem::KemSchemeId;
use crate::crypto::sig::{sig_keygen, SigKeyPair, SigSchemeId};
use crate::model::{ModelPackage, RollbackDirective};
use crate::pki::{
    CertAuthority, Certificate, CertificateChain, Csr, DeltaCrl, OcspStaple, PkiError,
    RevocationReason, RENEWAL_WINDOW_MS,
};
use crate::roots::{verify_quote_signature, AttestationQuote};
use policy::{DevicePolicy, GeoFix, PolicyFailure};
use ratelimit::{Admission, RateLimiter};
use wire::{DenyReason, Message};

pub const NONCE_TTL_MS: u64 = 120 * SEC;
pub const GRANT_TTL_MS: u64 = 300 * SEC;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ServerError {
    #[error("bad bootstrap secret")]
    BadBootstrapSecret,
    #[error("CSR signature invalid")]
    CsrSignatureInvalid,
    #[error("device already enrolled")]
    AlreadyEnrolled,
    #[error("unknown device")]
    UnknownDevice,
    #[error("device is banned")]
    DeviceBanned,
    #[error("rate limited")]
    RateLimited,
    #[error("grant preconditions not met")]
    PreconditionNotMet,
    #[error("renewal requested too early")]
    TooEarly,
    #[error("operator token invalid")]
    Unauthorized,
    #[error("no pending location approval")]
    NoPendingApproval,
    #[error("model version already published")]
    DuplicateVersion,
    #[error("unknown model version")]
    UnknownModelVersion,
    #[error("unknown certificate serial")]
    UnknownSerial,
    #[error("pki: {0}")]
    Pki(#[from] PkiError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceStatus {
    Active,
    Suspended,
    Banned,
}

#[derive(Debug, Clone)]
pub struct DeviceRecord {
    pub device_id: String,
    pub quote_scheme: SigSchemeId,
    pub quote_public_key: Vec<u8>,
    pub golden_pcrs: BTreeMap<u8, [u8; 32]>,
    pub policy: DevicePolicy,
    pub status: DeviceStatus,
    pub pending_location_approval: Option<GeoFix>,
    pub cert_serials: Vec<u64>,
    unlock_key_escrow: [u8; 32],
}

/// Which checks the server actually performs. All on in a normal build; the
/// negative-control build starts from `disabled()` to prove the scenario
/// suite notices.
#[derive(Debug, Clone, Copy)]
pub struct DefenseConfig {
    pub verify_quote_signature: bool,
    pub enforce_nonce_single_use: bool,
    pub rate_limiting: bool,
}

impl DefenseConfig {
    pub fn enabled() -> Self {
        Self { verify_quote_signature: true, enforce_nonce_single_use: true, rate_limiting: true }
    }

    pub fn disabled() -> Self {
        Self { verify_quote_signature: false, enforce_nonce_single_use: false, rate_limiting: false }
    }
}

impl Default for DefenseConfig {
    fn default() -> Self {
        if cfg!(feature = "defenses-off") {
            Self::disabled()
        } else {
            Self::enabled()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuoteVerdict {
    Accept,
    Deny(DenyReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyVerdict {
    Pass,
    Fail(PolicyFailure),
}

#[derive(Debug, Clone)]
struct NonceState {
    device_id: String,
    issued_at: u64,
    consumed: bool,
}

#[derive(Debug, Clone)]
struct GrantState {
    device_id: String,
    wrapped: HybridCiphertext,
    sealed_key: AeadBox,
    issued_at: u64,
    expires_at: u64,
    consumed: bool,
    invalidated: bool,
}

#[derive(Debug, Clone)]
struct CertState {
    revoked: Option<(RevocationReason, u64)>,
    superseded: bool,
    chain: CertificateChain,
}

/// Per-channel session state. A grant is only reachable after both an Accept
/// and a Pass inside the same session.
#[derive(Debug, Clone, Default)]
pub struct Session {
    pub device_id: Option<String>,
    pub quote_accepted: bool,
    pub policy_passed: bool,
}

/// Crypto profile shared by both trust domains.
#[derive(Debug, Clone, Copy)]
pub struct SuiteProfile {
    pub sig: SigSchemeId,
    pub kem_classical: KemSchemeId,
    pub kem_pq: KemSchemeId,
}

impl SuiteProfile {
    pub fn test() -> Self {
        Self { sig: SigSchemeId::Test, kem_classical: KemSchemeId::Test, kem_pq: KemSchemeId::Test }
    }

    pub fn production() -> Self {
        Self {
            sig: SigSchemeId::Classical,
            kem_classical: KemSchemeId::Classical,
            kem_pq: KemSchemeId::Pq,
        }
    }
}

pub struct ControlServer {
    pub profile: SuiteProfile,
    pub defense: DefenseConfig,
    ca: Mutex<CertAuthority>,
    audit_signer: SigKeyPair,
    audit: Mutex<AuditChain>,
    devices: Mutex<HashMap<String, DeviceRecord>>,
    nonces: Mutex<HashMap<[u8; 32], NonceState>>,
    grants: Mutex<HashMap<[u8; 16], GrantState>>,
    outstanding_grant: Mutex<HashMap<String, [u8; 16]>>,
    certs: Mutex<HashMap<u64, CertState>>,
    bootstrap_tokens: Mutex<HashSet<String>>,
    models: Mutex<HashMap<String, BTreeMap<u64, ModelPackage>>>,
    rollbacks: Mutex<Vec<RollbackDirective>>,
    model_signer: SigKeyPair,
    rate: Mutex<RateLimiter>,
    operator_token: String,
    emergency_bans: Mutex<HashSet<u64>>,
    rng: Mutex<ChaCha20Rng>,
}

impl ControlServer {
    pub fn new(profile: SuiteProfile, defense: DefenseConfig, seed: u64, now: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ca_seed: [u8; 32] = rng.gen();
        let audit_seed: [u8; 32] = rng.gen();
        let model_seed: [u8; 32] = rng.gen();
        Self {
            profile,
            defense,
            ca: Mutex::new(CertAuthority::new(profile.sig, &ca_seed, now)),
            audit_signer: sig_keygen(profile.sig, &audit_seed).unwrap(),
            audit: Mutex::new(AuditChain::new(profile.sig)),
            devices: Mutex::new(HashMap::new()),
            nonces: Mutex::new(HashMap::new()),
            grants: Mutex::new(HashMap::new()),
            outstanding_grant: Mutex::new(HashMap::new()),
            certs: Mutex::new(HashMap::new()),
            bootstrap_tokens: Mutex::new(HashSet::new()),
            models: Mutex::new(HashMap::new()),
            rollbacks: Mutex::new(Vec::new()),
            model_signer: sig_keygen(profile.sig, &model_seed).unwrap(),
            rate: Mutex::new(RateLimiter::default()),
            operator_token: "operator-secret".to_string(),
            emergency_bans: Mutex::new(HashSet::new()),
            rng: Mutex::new(rng),
        }
    }

    fn audit_append(&self, at: u64, event_type: &str, payload: serde_json::Value) {
        self.audit.lock().unwrap().append(&self.audit_signer, at, "server", event_type, &payload);
    }

    pub fn audit_status(&self) -> ChainStatus {
        self.audit.lock().unwrap().verify(&self.audit_signer.public_key)
    }

    pub fn audit_chain(&self) -> AuditChain {
        self.audit.lock().unwrap().clone()
    }

    pub fn audit_signer_public_key(&self) -> Vec<u8> {
        self.audit_signer.public_key.clone()
    }

    pub fn model_signer_public_key(&self) -> Vec<u8> {
        self.model_signer.public_key.clone()
    }

    pub fn root_public_key(&self) -> Vec<u8> {
        self.ca.lock().unwrap().root_public_key().to_vec()
    }

    pub fn staple_signer_public_key(&self) -> Vec<u8> {
        self.ca.lock().unwrap().staple_signer_public_key().to_vec()
    }

    pub fn operator_token(&self) -> &str {
        &self.operator_token
    }

    pub fn add_bootstrap_token(&self, token: &str) {
        self.bootstrap_tokens.lock().unwrap().insert(token.to_string());
    }

    pub fn device_status(&self, device_id: &str) -> Option<DeviceStatus> {
        self.devices.lock().unwrap().get(device_id).map(|d| d.status)
    }

    pub fn set_device_status(&self, device_id: &str, status: DeviceStatus) {
        if let Some(d) = self.devices.lock().unwrap().get_mut(device_id) {
            d.status = status;
        }
    }

    pub fn pending_location(&self, device_id: &str) -> Option<GeoFix> {
        self.devices.lock().unwrap().get(device_id).and_then(|d| d.pending_location_approval)
    }

    /// JIT provisioning: bootstrap-secret -> CSR -> CA -> chain. Also escrows
    /// the device's unlock key (the factory step at desk scale) and registers
    /// golden PCRs from the manufacturer profile.
    pub fn enroll_device(
        &self,
        bootstrap_secret: &str,
        csr: &Csr,
        golden_pcrs: BTreeMap<u8, [u8; 32]>,
        policy: DevicePolicy,
        now: u64,
    ) -> Result<(CertificateChain, [u8; 32]), ServerError> {
        if !self.bootstrap_tokens.lock().unwrap().remove(bootstrap_secret) {
            return Err(ServerError::BadBootstrapSecret);
        }
        if !csr.verify_self_signature() {
            return Err(ServerError::CsrSignatureInvalid);
        }
        let mut devices = self.devices.lock().unwrap();
        if devices.contains_key(&csr.subject) {
            return Err(ServerError::AlreadyEnrolled);
        }
        let chain = self.ca.lock().unwrap().issue_leaf(csr, now)?;
        let unlock_key: [u8; 32] = self.rng.lock().unwrap().gen();
        devices.insert(
            csr.subject.clone(),
            DeviceRecord {
                device_id: csr.subject.clone(),
                quote_scheme: csr.scheme,
                quote_public_key: csr.public_key.clone(),
                golden_pcrs,
                policy,
                status: DeviceStatus::Active,
                pending_location_approval: None,
                cert_serials: vec![chain.leaf.serial],
                unlock_key_escrow: unlock_key,
            },
        );
        self.certs.lock().unwrap().insert(
            chain.leaf.serial,
            CertState {
                revoked: None,
                superseded: false,
                chain: chain.clone(),
            },
        );
        drop(devices);
        self.audit_append(now, "enroll", json!({"device_id": csr.subject, "serial": chain.leaf.serial}));
        Ok((chain, unlock_key))
    }

    /// Fresh 32-byte nonce, 120 s validity, single use.
    pub fn issue_challenge(&self, device_id: &str, now: u64) -> Result<[u8; 32], ServerError> {
        let devices = self.devices.lock().unwrap();
        let device = devices.get(device_id).ok_or(ServerError::UnknownDevice)?;
        if device.status == DeviceStatus::Banned {
            return Err(ServerError::DeviceBanned);
        }
        drop(devices);
        if self.defense.rate_limiting
            && self.rate.lock().unwrap().admit(device_id, now) == Admission::Reject
        {
            return Err(ServerError::RateLimited);
        }
        let nonce: [u8; 32] = self.rng.lock().unwrap().gen();
        self.nonces.lock().unwrap().insert(
            nonce,
            NonceState { device_id: device_id.to_string(), issued_at: now, consumed: false },
        );
        self.audit_append(now, "challenge", json!({"device_id": device_id}));
        Ok(nonce)
    }

    /// Accept iff signature valid under the enrolled key AND the nonce is
    /// fresh and unconsumed AND the composite digest matches the golden
    /// values over the policy-bound PCRs. The nonce is consumed either way.
    pub fn verify_quote(&self, session: &mut Session, quote: &AttestationQuote, now: u64) -> QuoteVerdict {
        let verdict = self.verify_quote_inner(quote, now);
        if let QuoteVerdict::Accept = verdict {
            session.device_id = Some(quote.device_id.clone());
            session.quote_accepted = true;
        } else {
            session.quote_accepted = false;
            session.policy_passed = false;
        }
        self.audit_append(
            now,
            "quote_verdict",
            json!({"device_id": quote.device_id, "verdict": format!("{verdict:?}")}),
        );
        verdict
    }

    fn verify_quote_inner(&self, quote: &AttestationQuote, now: u64) -> QuoteVerdict {
        let devices = self.devices.lock().unwrap();
        let Some(device) = devices.get(&quote.device_id) else {
            return QuoteVerdict::Deny(DenyReason::UnknownDevice);
        };
        if device.status == DeviceStatus::Banned {
            return QuoteVerdict::Deny(DenyReason::DeviceBanned);
        }

        // nonce freshness, consumed regardless of outcome
        {
            let mut nonces = self.nonces.lock().unwrap();
            match nonces.get_mut(&quote.nonce) {
                Some(state)
                    if state.device_id == quote.device_id
                        && now <= state.issued_at + NONCE_TTL_MS =>
                {
                    if state.consumed && self.defense.enforce_nonce_single_use {
                        return QuoteVerdict::Deny(DenyReason::StaleNonce);
                    }
                    state.consumed = true;
                }
                _ => {
                    if self.defense.enforce_nonce_single_use {
                        return QuoteVerdict::Deny(DenyReason::StaleNonce);
                    }
                }
            }
        }

        if self.defense.verify_quote_signature
            && !verify_quote_signature(quote, device.quote_scheme, &device.quote_public_key)
        {
            return QuoteVerdict::Deny(DenyReason::BadSignature);
        }

        if quote.pcr_selection != device.policy.bound_pcrs {
            return QuoteVerdict::Deny(DenyReason::PcrMismatch);
        }
        let mut parts: Vec<&[u8]> = Vec::new();
        for idx in &device.policy.bound_pcrs {
            match device.golden_pcrs.get(idx) {
                Some(d) => parts.push(d),
                None => return QuoteVerdict::Deny(DenyReason::PcrMismatch),
            }
        }
        if sha256_concat(&parts) != quote.composite_digest {
            return QuoteVerdict::Deny(DenyReason::PcrMismatch);
        }
        QuoteVerdict::Accept
    }

    /// Pass iff active status, fix inside the geofence (or an approved
    /// point), and current time inside the daily window. A geofence failure
    /// records the fix for operator approval.
    pub fn evaluate_policy(&self, session: &mut Session, device_id: &str, fix: &GeoFix, now: u64) -> PolicyVerdict {
        let mut devices = self.devices.lock().unwrap();
        let verdict = match devices.get_mut(device_id) {
            None => PolicyVerdict::Fail(PolicyFailure::Status),
            Some(device) => {
                if device.status != DeviceStatus::Active {
                    PolicyVerdict::Fail(PolicyFailure::Status)
                } else if !device.policy.location_allowed(fix) {
                    device.pending_location_approval = Some(*fix);
                    PolicyVerdict::Fail(PolicyFailure::Geofence)
                } else if !device.policy.time_window.contains(now) {
                    PolicyVerdict::Fail(PolicyFailure::TimeWindow)
                } else {
                    PolicyVerdict::Pass
                }
            }
        };
        drop(devices);
        session.policy_passed = matches!(verdict, PolicyVerdict::Pass)
            && session.quote_accepted
            && session.device_id.as_deref() == Some(device_id);
        self.audit_append(
            now,
            "policy_verdict",
            json!({"device_id": device_id, "verdict": format!("{verdict:?}")}),
        );
        verdict
    }

    /// Wrap the escrowed unlock key to the session's ephemeral KEM keys.
    /// Reachable only after Accept + Pass in the same session; any previous
    /// unconsumed grant for the device is invalidated.
    pub fn issue_unlock_grant(
        &self,
        session: &Session,
        pk_classical: &[u8],
        pk_pq: &[u8],
        now: u64,
    ) -> Result<wire::UnlockGrantMsg, ServerError> {
        let device_id = match (&session.device_id, session.quote_accepted, session.policy_passed) {
            (Some(id), true, true) => id.clone(),
            _ => return Err(ServerError::PreconditionNotMet),
        };
        let unlock_key = {
            let devices = self.devices.lock().unwrap();
            devices.get(&device_id).ok_or(ServerError::UnknownDevice)?.unlock_key_escrow
        };
        let randomness: [u8; 64] = {
            let mut rng = self.rng.lock().unwrap();
            let mut r = [0u8; 64];
            rng.fill(&mut r[..]);
            r
        };
        let (wrapped, session_key) = hybrid_establish(
            self.profile.kem_classical,
            pk_classical,
            self.profile.kem_pq,
            pk_pq,
            &randomness,
            LABEL_UNLOCK_KEY,
        )
        .map_err(|_| ServerError::PreconditionNotMet)?;
        let grant_id: [u8; 16] = self.rng.lock().unwrap().gen();
        let nonce: [u8; 12] = self.rng.lock().unwrap().gen();
        let sealed_key = aead_seal(&session_key, &nonce, &unlock_key, device_id.as_bytes());

        let mut grants = self.grants.lock().unwrap();
        let mut outstanding = self.outstanding_grant.lock().unwrap();
        if let Some(prev) = outstanding.insert(device_id.clone(), grant_id) {
            if let Some(g) = grants.get_mut(&prev) {
                if !g.consumed {
                    g.invalidated = true;
                }
            }
        }
        grants.insert(
            grant_id,
            GrantState {
                device_id: device_id.clone(),
                wrapped: wrapped.clone(),
                sealed_key: sealed_key.clone(),
                issued_at: now,
                expires_at: now + GRANT_TTL_MS,
                consumed: false,
                invalidated: false,
            },
        );
        drop(grants);
        drop(outstanding);
        self.audit_append(
            now,
            "grant_issue",
            json!({"device_id": device_id, "grant_id": hex::encode(grant_id)}),
        );
        Ok(wire::UnlockGrantMsg {
            grant_id: grant_id.to_vec(),
            wrapped,
            sealed_key,
            issued_at: now,
            expires_at: now + GRANT_TTL_MS,
        })
    }

    /// Atomic single-use consumption of a grant. At most one concurrent
    /// redemption of a grant id ever succeeds.
    pub fn redeem_grant(&self, grant_id: &[u8; 16], now: u64) -> Result<wire::UnlockGrantMsg, DenyReason> {
        let mut grants = self.grants.lock().unwrap();
        let grant = grants.get_mut(grant_id).ok_or(DenyReason::NoGrant)?;
        if grant.consumed || grant.invalidated {
            return Err(DenyReason::GrantConsumed);
        }
        if now > grant.expires_at {
            return Err(DenyReason::GrantExpired);
        }
        grant.consumed = true;
        let msg = wire::UnlockGrantMsg {
            grant_id: grant_id.to_vec(),
            wrapped: grant.wrapped.clone(),
            sealed_key: grant.sealed_key.clone(),
            issued_at: grant.issued_at,
            expires_at: grant.expires_at,
        };
        let device_id = grant.device_id.clone();
        drop(grants);
        self.audit_append(
            now,
            "grant_redeem",
            json!({"device_id": device_id, "grant_id": hex::encode(grant_id)}),
        );
        Ok(msg)
    }

    /// Node-initiated renewal, allowed from exactly 30 days before expiry.
    pub fn renew_certificate(
        &self,
        device_id: &str,
        csr: &Csr,
        now: u64,
    ) -> Result<CertificateChain, ServerError> {
        let current_serial = {
            let devices = self.devices.lock().unwrap();
            let device = devices.get(device_id).ok_or(ServerError::UnknownDevice)?;
            if device.status == DeviceStatus::Banned {
                return Err(ServerError::DeviceBanned);
            }
            *device.cert_serials.last().ok_or(ServerError::UnknownSerial)?
        };
        let not_after = {
            let certs = self.certs.lock().unwrap();
            certs.get(&current_serial).ok_or(ServerError::UnknownSerial)?.chain.leaf.not_after
        };
        if now + RENEWAL_WINDOW_MS < not_after {
            return Err(ServerError::TooEarly);
        }
        if !csr.verify_self_signature() {
            return Err(ServerError::CsrSignatureInvalid);
        }
        let chain = self.ca.lock().unwrap().issue_leaf(csr, now)?;
        {
            let mut certs = self.certs.lock().unwrap();
            if let Some(old) = certs.get_mut(&current_serial) {
                old.superseded = true;
            }
            certs.insert(
                chain.leaf.serial,
                CertState {
                    revoked: None,
                    superseded: false,
                    chain: chain.clone(),
                },
            );
        }
        self.devices
            .lock()
            .unwrap()
            .get_mut(device_id)
            .expect("checked above")
            .cert_serials
            .push(chain.leaf.serial);
        self.audit_append(now, "cert_renew", json!({"device_id": device_id, "serial": chain.leaf.serial}));
        Ok(chain)
    }

    /// Signed OCSP staple, next_update 24 h out.
    pub fn ocsp_status(&self, serial: u64, now: u64) -> Result<OcspStaple, ServerError> {
        let revoked = {
            let certs = self.certs.lock().unwrap();
            certs.get(&serial).ok_or(ServerError::UnknownSerial)?.revoked.is_some()
        };
        Ok(self.ca.lock().unwrap().sign_staple(serial, revoked, now))
    }

    pub fn latest_delta_crl(&self, now: u64) -> DeltaCrl {
        let revoked: Vec<u64> = {
            let certs = self.certs.lock().unwrap();
            let mut v: Vec<u64> =
                certs.iter().filter(|(_, c)| c.revoked.is_some()).map(|(s, _)| *s).collect();
            v.sort_unstable();
            v
        };
        self.ca.lock().unwrap().sign_delta_crl(revoked, now)
    }

    pub fn is_emergency_banned(&self, serial: u64) -> bool {
        self.emergency_bans.lock().unwrap().contains(&serial)
    }

    /// Operator action: ban the device, revoke all its certificates,
    /// invalidate outstanding grants. Service resumes only after
    /// re-provisioning with a fresh bootstrap token.
    pub fn emergency_ban(&self, operator_token: &str, device_id: &str, now: u64) -> Result<(), ServerError> {
        if operator_token != self.operator_token {
            return Err(ServerError::Unauthorized);
        }
        let serials = {
            let mut devices = self.devices.lock().unwrap();
            let device = devices.get_mut(device_id).ok_or(ServerError::UnknownDevice)?;
            device.status = DeviceStatus::Banned;
            device.cert_serials.clone()
        };
        {
            let mut certs = self.certs.lock().unwrap();
            let mut bans = self.emergency_bans.lock().unwrap();
            for s in &serials {
                if let Some(c) = certs.get_mut(s) {
                    c.revoked.get_or_insert((RevocationReason::Emergency, now));
                }
                bans.insert(*s);
            }
        }
        {
            let mut grants = self.grants.lock().unwrap();
            for g in grants.values_mut() {
                if g.device_id == device_id {
                    g.invalidated = true;
                }
            }
        }
        self.audit_append(now, "emergency_ban", json!({"device_id": device_id, "serials": serials}));
        Ok(())
    }

    /// Re-provisioning after a ban: the device record is dropped so a fresh
    /// bootstrap token can enroll it again.
    pub fn deprovision(&self, operator_token: &str, device_id: &str, now: u64) -> Result<(), ServerError> {
        if operator_token != self.operator_token {
            return Err(ServerError::Unauthorized);
        }
        self.devices.lock().unwrap().remove(device_id).ok_or(ServerError::UnknownDevice)?;
        self.audit_append(now, "deprovision", json!({"device_id": device_id}));
        Ok(())
    }

    /// Operator approval of a pending out-of-fence position; the point is
    /// added with a 100 m buffer.
    pub fn approve_location(&self, operator_token: &str, device_id: &str, now: u64) -> Result<(), ServerError> {
        if operator_token != self.operator_token {
            return Err(ServerError::Unauthorized);
        }
        {
            let mut devices = self.devices.lock().unwrap();
            let device = devices.get_mut(device_id).ok_or(ServerError::UnknownDevice)?;
            let fix = device.pending_location_approval.take().ok_or(ServerError::NoPendingApproval)?;
            device.policy.approved_points.push((fix.lat, fix.lon));
        }
        self.audit_append(now, "approve_location", json!({"device_id": device_id}));
        Ok(())
    }

    pub fn publish_model(
        &self,
        model_id: &str,
        version: u64,
        payload: Vec<u8>,
        now: u64,
    ) -> Result<ModelPackage, ServerError> {
        let mut models = self.models.lock().unwrap();
        let entry = models.entry(model_id.to_string()).or_default();
        if entry.contains_key(&version) {
            return Err(ServerError::DuplicateVersion);
        }
        let pkg = ModelPackage::build(&self.model_signer, model_id, version, payload);
        entry.insert(version, pkg.clone());
        drop(models);
        self.audit_append(now, "model_publish", json!({"model_id": model_id, "version": version}));
        Ok(pkg)
    }

    pub fn publish_rollback(
        &self,
        model_id: &str,
        target_version: u64,
        now: u64,
    ) -> Result<RollbackDirective, ServerError> {
        {
            let models = self.models.lock().unwrap();
            let entry = models.get(model_id).ok_or(ServerError::UnknownModelVersion)?;
            if !entry.contains_key(&target_version) {
                return Err(ServerError::UnknownModelVersion);
            }
        }
        let d = RollbackDirective::build(&self.model_signer, model_id, target_version);
        self.rollbacks.lock().unwrap().push(d.clone());
        self.audit_append(now, "model_rollback", json!({"model_id": model_id, "target": target_version}));
        Ok(d)
    }

    pub fn latest_model(&self, model_id: &str) -> Option<ModelPackage> {
        let models = self.models.lock().unwrap();
        let entry = models.get(model_id)?;
        let directive_target = {
            let rollbacks = self.rollbacks.lock().unwrap();
            rollbacks.iter().rev().find(|d| d.model_id == model_id).map(|d| d.target_version)
        };
        match directive_target {
            Some(t) => entry.get(&t).cloned(),
            None => entry.values().next_back().cloned(),
        }
    }

    pub fn rollback_directive_for(&self, model_id: &str, version: u64) -> Option<RollbackDirective> {
        self.rollbacks
            .lock()
            .unwrap()
            .iter()
            .rev()
            .find(|d| d.model_id == model_id && d.target_version == version)
            .cloned()
    }

    pub fn model_package(&self, model_id: &str, version: u64) -> Option<ModelPackage> {
        self.models.lock().unwrap().get(model_id)?.get(&version).cloned()
    }

    pub fn rate_limit_admit(&self, client_id: Option<&str>, now: u64) -> Admission {
        let mut rate = self.rate.lock().unwrap();
        match client_id {
            Some(id) => rate.admit(id, now),
            None => rate.admit_unauthenticated(now),
        }
    }

    pub fn latest_chain_for(&self, device_id: &str) -> Option<CertificateChain> {
        let devices = self.devices.lock().unwrap();
        let serial = *devices.get(device_id)?.cert_serials.last()?;
        drop(devices);
        let certs = self.certs.lock().unwrap();
        Some(certs.get(&serial)?.chain.clone())
    }

    pub fn cert_chain_by_serial(&self, serial: u64) -> Option<CertificateChain> {
        self.certs.lock().unwrap().get(&serial).map(|c| c.chain.clone())
    }

    /// The server-side half of the wire protocol.
    pub fn handle_message(&self, session: &mut Session, msg: &Message, now: u64) -> Message {
        use wire::*;
        if self.defense.rate_limiting {
            let client = session.device_id.clone();
            if self.rate_limit_admit(client.as_deref(), now) == Admission::Reject {
                return Message::Deny(Deny { reason: DenyReason::RateLimited });
            }
        }
        match msg {
            Message::Hello(h) => {
                session.device_id = Some(h.device_id.clone());
                Message::Ack(Ack { detail: "hello".into() })
            }
            Message::ChallengeReq(r) => match self.issue_challenge(&r.device_id, now) {
                Ok(nonce) => Message::Challenge(Challenge { nonce, expires_at: now + NONCE_TTL_MS }),
                Err(ServerError::DeviceBanned) => Message::Deny(Deny { reason: DenyReason::DeviceBanned }),
                Err(ServerError::RateLimited) => Message::Deny(Deny { reason: DenyReason::RateLimited }),
                Err(_) => Message::Deny(Deny { reason: DenyReason::UnknownDevice }),
            },
            Message::QuoteSubmit(q) => {
                match self.verify_quote(session, &q.quote, now) {
                    QuoteVerdict::Deny(reason) => return Message::Deny(Deny { reason }),
                    QuoteVerdict::Accept => {}
                }
                match self.evaluate_policy(session, &q.quote.device_id, &q.fix, now) {
                    PolicyVerdict::Fail(PolicyFailure::Geofence) => {
                        return Message::Deny(Deny { reason: DenyReason::PolicyGeofence })
                    }
                    PolicyVerdict::Fail(PolicyFailure::TimeWindow) => {
                        return Message::Deny(Deny { reason: DenyReason::PolicyTimeWindow })
                    }
                    PolicyVerdict::Fail(PolicyFailure::Status) => {
                        return Message::Deny(Deny { reason: DenyReason::PolicyStatus })
                    }
                    PolicyVerdict::Pass => {}
                }
                let grant = match self.issue_unlock_grant(session, &q.session_pk_classical, &q.session_pk_pq, now) {
                    Ok(g) => g,
                    Err(_) => return Message::Deny(Deny { reason: DenyReason::PreconditionNotMet }),
                };
                // the submit doubles as the redemption request
                let grant_id: [u8; 16] = grant.grant_id.clone().try_into().unwrap();
                match self.redeem_grant(&grant_id, now) {
                    Ok(msg) => Message::UnlockGrant(Box::new(msg)),
                    Err(reason) => Message::Deny(Deny { reason }),
                }
            }
            Message::CsrSubmit(c) => {
                let device_id = match &session.device_id {
                    Some(id) => id.clone(),
                    None => return Message::Error(ErrorMsg { detail: "no session identity".into() }),
                };
                match self.renew_certificate(&device_id, &c.csr, now) {
                    Ok(chain) => Message::CertIssue(Box::new(CertIssue { chain })),
                    Err(e) => Message::Error(ErrorMsg { detail: e.to_string() }),
                }
            }
            Message::OcspReq(r) => match self.ocsp_status(r.serial, now) {
                Ok(staple) => Message::OcspResp(OcspResp { staple }),
                Err(e) => Message::Error(ErrorMsg { detail: e.to_string() }),
            },
            Message::ModelCheck(c) => match self.latest_model(&c.model_id) {
                Some(pkg) => {
                    let rollback = if pkg.manifest.version <= c.installed_version {
                        self.rollback_directive_for(&c.model_id, pkg.manifest.version)
                    } else {
                        None
                    };
                    Message::ModelOffer(Box::new(ModelOffer { package: pkg, rollback }))
                }
                None => Message::Error(ErrorMsg { detail: "no such model".into() }),
            },
            Message::ModelFetch(f) => match self.model_package(&f.model_id, f.version) {
                Some(pkg) => {
                    let rollback = self.rollback_directive_for(&f.model_id, f.version);
                    Message::ModelOffer(Box::new(ModelOffer { package: pkg, rollback }))
                }
                None => Message::Error(ErrorMsg { detail: "no such model version".into() }),
            },
            Message::Telemetry(t) => {
                let ok = {
                    let devices = self.devices.lock().unwrap();
                    devices.get(&t.device_id).is_some_and(|d| {
                        crate::crypto::sig::verify(
                            d.quote_scheme,
                            &d.quote_public_key,
                            &crate::canonical::to_canonical_bytes(&t.fix),
                            &t.signature,
                        )
                    })
                };
                self.audit_append(now, "telemetry", json!({"device_id": t.device_id, "verified": ok}));
                if ok {
                    Message::Ack(Ack { detail: "telemetry".into() })
                } else {
                    Message::Deny(Deny { reason: DenyReason::SignatureMismatch })
                }
            }
            Message::OperatorBan(b) => match self.emergency_ban(&b.token, &b.device_id, now) {
                Ok(()) => Message::Ack(Ack { detail: "banned".into() }),
                Err(e) => Message::Error(ErrorMsg { detail: e.to_string() }),
            },
            Message::OperatorApprove(a) => match self.approve_location(&a.token, &a.device_id, now) {
                Ok(()) => Message::Ack(Ack { detail: "approved".into() }),
                Err(e) => Message::Error(ErrorMsg { detail: e.to_string() }),
            },
            other => Message::Error(ErrorMsg {
                detail: format!("unexpected message type {}", other.type_name()),
            }),
        }
    }
}

/// Revocation inputs as seen by the verifying endpoint at handshake time.
#[derive(Debug, Clone, Default)]
pub struct RevocationContext {
    pub staple: Option<OcspStaple>,
    pub cached_staple: Option<OcspStaple>,
    pub crl: Option<DeltaCrl>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PeerCertVerdict {
    Accept,
    AcceptWithWarning(&'static str),
    Reject(&'static str),
}

/// Soft-fail revocation logic: staple preferred, cache fallback, delta-CRL
/// offline fallback, accept-with-warning when everything is unavailable.
/// An emergency ban always rejects, whatever the staple says.
pub fn check_peer_certificate(
    cert: &Certificate,
    ctx: &RevocationContext,
    emergency_banned: bool,
    staple_signer_pk: &[u8],
    scheme: SigSchemeId,
    now: u64,
) -> PeerCertVerdict {
    if emergency_banned {
        return PeerCertVerdict::Reject("emergency ban");
    }
    if let Some(staple) = &ctx.staple {
        if staple.serial == cert.serial
            && staple.verify_signature(staple_signer_pk, scheme)
            && now <= staple.next_update
        {
            return if staple.revoked {
                PeerCertVerdict::Reject("stapled revoked")
            } else {
                PeerCertVerdict::Accept
            };
        }
    }
    if let Some(cached) = &ctx.cached_staple {
        if cached.serial == cert.serial
            && cached.verify_signature(staple_signer_pk, scheme)
            && now <= cached.next_update
        {
            return if cached.revoked {
                PeerCertVerdict::Reject("cached revoked")
            } else {
                PeerCertVerdict::AcceptWithWarning("responder down, cached good staple")
            };
        }
    }
    if let Some(crl) = &ctx.crl {
        if crl.verify_signature(staple_signer_pk, scheme) {
            return if crl.revoked_serials.contains(&cert.serial) {
                PeerCertVerdict::Reject("listed in delta-CRL")
            } else {
                PeerCertVerdict::Accept
            };
        }
    }
    PeerCertVerdict::AcceptWithWarning("no revocation data available, soft-fail accept")
}
