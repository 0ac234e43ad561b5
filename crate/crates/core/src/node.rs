//! Edge-device agent: cold-start attestation flow, telemetry cadence, tamper
//! state machine, signed model-update client, and end-to-end payload
//! encryption. A single logical event loop over network, sensor, and clock
//! inputs; tamper transitions preempt everything else.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::audit::AuditChain;
use crate::canonical::{sha256, to_canonical_bytes};
use crate::clock::{VirtualClock, SEC};
use crate::crypto::aead::{aead_open, aead_seal, AeadBox};
use crate::crypto::hybrid::hybrid_recover;
use crate::crypto::kem::kem_keygen;
use crate::crypto::sig::{sig_keygen, sign, verify, SigKeyPair};
use crate::model::{ModelPackage, RollbackDirective};
use crate::pki::{CertificateChain, Csr};
use crate::roots::{
    assert_tamper_pin, generate_quote, measure_boot_chain, reset_platform, DeviceIdentityKey,
    Platform,
};
use crate::server::policy::{DevicePolicy, GeoFix};
use crate::server::wire::{self, DenyReason, Message};
use crate::server::{ControlServer, SuiteProfile};
use crate::volume::{
    create_volume, read_record, unlock_volume, write_record, zeroize_handle, Container, UnlockKey,
    VolumeHandle,
};

pub const TELEMETRY_PERIOD_MS: u64 = 600 * SEC;
pub const ACCEL_THRESHOLD_MS2: f64 = 2.5;
pub const ACCEL_SUSTAIN_SAMPLES: u32 = 3;
pub const LUX_DELTA_THRESHOLD: f64 = 50.0;
pub const BACKOFF_BASE_MS: u64 = 2 * SEC;
pub const BACKOFF_CAP_MS: u64 = 60 * SEC;

pub const AUDIO_LABEL: &str = "/audio";
pub const MODELS_LABEL: &str = "/models";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NodeError {
    #[error("channel down")]
    ChannelDown,
    #[error("attestation denied: {0:?}")]
    AttestationDenied(DenyReason),
    #[error("volume unlock failed")]
    UnlockFailed,
    #[error("unexpected response: {0}")]
    ProtocolViolation(String),
    #[error("operation not allowed in this lifecycle state")]
    BadState,
    #[error("model signature invalid")]
    BadSignature,
    #[error("model downgrade without a matching directive")]
    DowngradeRejected,
    #[error("model storage is locked")]
    StorageLocked,
    #[error("no established session key")]
    NoSession,
    #[error("grant replayed or malformed")]
    GrantRejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    PoweredOff,
    Measured,
    AwaitingUnlock,
    Operational,
    ReadOnlyQuarantine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TamperMode {
    Normal,
    Armed,
    Tampered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "sensor", content = "payload")]
pub enum SensorPayload {
    Gps(GeoFix),
    /// Acceleration magnitude in m/s².
    Accel(f64),
    /// Beam break and/or sudden lux rise on the case-open circuit.
    CaseOpen { beam_break: bool, lux_delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorEvent {
    pub at: u64,
    #[serde(flatten)]
    pub payload: SensorPayload,
}

/// The automated tamper responses, in their mandated order.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    AuthenticatedAlert(SensorEvent),
    ZeroizeVolatileKeys,
    NetworkReadOnly,
    SnapshotGpsFix(Option<GeoFix>),
    AppendSignedAuditRecord,
    PowerOff,
}

#[derive(Debug)]
pub struct TamperState {
    pub mode: TamperMode,
    pub armed_by: Option<String>,
    pub events: Vec<SensorEvent>,
    accel_streak: u32,
}

impl TamperState {
    fn new() -> Self {
        Self { mode: TamperMode::Normal, armed_by: None, events: Vec::new(), accel_streak: 0 }
    }
}

/// End-to-end payload envelope: AEAD body under the session key, integrity
/// digest, and an application-level signature binding the device identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadEnvelope {
    pub device_id: String,
    pub body: AeadBox,
    #[serde(with = "crate::canonical::hex_digest")]
    pub digest: [u8; 32],
    #[serde(with = "crate::canonical::hex_bytes")]
    pub signature: Vec<u8>,
}

#[derive(Serialize)]
struct EnvelopeBody<'a> {
    device_id: &'a str,
    #[serde(with = "crate::canonical::hex_digest")]
    digest: [u8; 32],
}

/// Transport abstraction: the in-process server directly, or a simulated
/// radio link that can drop frames.
pub trait Transport {
    fn exchange(&mut self, msg: &Message) -> Result<Message, NodeError>;
}

/// Zero-latency transport straight into a [`ControlServer`].
pub struct InProcessTransport<'a> {
    pub server: &'a ControlServer,
    pub session: crate::server::Session,
    pub clock: VirtualClock,
}

impl<'a> InProcessTransport<'a> {
    pub fn new(server: &'a ControlServer, clock: VirtualClock) -> Self {
        Self { server, session: crate::server::Session::default(), clock }
    }
}

impl Transport for InProcessTransport<'_> {
    fn exchange(&mut self, msg: &Message) -> Result<Message, NodeError> {
        Ok(self.server.handle_message(&mut self.session, msg, self.clock.now()))
    }
}

pub struct Node {
    pub device_id: String,
    pub profile: SuiteProfile,
    pub lifecycle: Lifecycle,
    pub tamper: TamperState,
    pub platform: Platform,
    pub identity: DeviceIdentityKey,
    pub signer: SigKeyPair,
    pub chain: Option<CertificateChain>,
    pub model_versions: HashMap<String, u64>,
    pub last_fix: Option<GeoFix>,
    pub audit: AuditChain,
    pub clock: VirtualClock,
    pub bound_pcrs: Vec<u8>,
    model_signer_pk: Vec<u8>,
    audio: Container,
    models: Container,
    audio_handle: Option<VolumeHandle>,
    models_handle: Option<VolumeHandle>,
    session_key: Vec<u8>,
    seen_grants: HashSet<[u8; 16]>,
    last_report_at: Option<u64>,
    tamper_snapshot: Option<GeoFix>,
    rng: ChaCha20Rng,
}

impl Node {
    /// Factory provisioning: generate the identity, enroll with the server
    /// using a one-time bootstrap token, create the encrypted containers
    /// under the escrowed unlock key, and drop every key copy.
    pub fn provision(
        server: &ControlServer,
        device_id: &str,
        bootstrap_token: &str,
        policy: DevicePolicy,
        golden_stages: &[(String, Vec<u8>)],
        seed: u64,
        clock: VirtualClock,
    ) -> Result<Self, crate::server::ServerError> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let key_seed: [u8; 32] = rng.gen();
        let identity = DeviceIdentityKey::generate(
            &format!("aik-{device_id}"),
            server.profile.sig,
            &key_seed,
        );
        let signer = sig_keygen(server.profile.sig, &key_seed).unwrap();

        let mut golden_platform = reset_platform();
        measure_boot_chain(&mut golden_platform, golden_stages).expect("golden stages measure");
        let mut golden = std::collections::BTreeMap::new();
        let bound_pcrs: Vec<u8> = policy.bound_pcrs.clone();
        for &i in &bound_pcrs {
            golden.insert(i, *golden_platform.bank.register(i as usize).unwrap());
        }

        let csr = Csr::new(device_id, &signer);
        let (chain, unlock_key_bytes) =
            server.enroll_device(bootstrap_token, &csr, golden, policy, clock.now())?;

        // Containers are created once at the factory; their master keys exist
        // only here and inside the keyslots from now on.
        let factory_key = UnlockKey {
            key_bytes: unlock_key_bytes,
            grant_id: [0u8; 16],
            received_at: clock.now(),
        };
        let audio_salt: [u8; 16] = rng.gen();
        let models_salt: [u8; 16] = rng.gen();
        let audio_master: [u8; 32] = rng.gen();
        let models_master: [u8; 32] = rng.gen();
        let audio = create_volume(&audio_master, &factory_key, AUDIO_LABEL, &audio_salt);
        let models = create_volume(&models_master, &factory_key, MODELS_LABEL, &models_salt);

        Ok(Self {
            device_id: device_id.to_string(),
            profile: server.profile,
            lifecycle: Lifecycle::PoweredOff,
            tamper: TamperState::new(),
            platform: reset_platform(),
            identity,
            signer,
            chain: Some(chain),
            model_versions: HashMap::new(),
            last_fix: None,
            audit: AuditChain::new(server.profile.sig),
            clock,
            bound_pcrs,
            model_signer_pk: server.model_signer_public_key(),
            audio,
            models,
            audio_handle: None,
            models_handle: None,
            session_key: Vec::new(),
            seen_grants: HashSet::new(),
            last_report_at: None,
            tamper_snapshot: None,
            rng,
        })
    }

    /// Cold-start flow: measure the boot chain, request a challenge, submit
    /// a quote with the current fix, and on grant redeem the one-time unlock
    /// key, open the volumes, and zeroize the key copy.
    pub fn cold_boot(
        &mut self,
        transport: &mut dyn Transport,
        stages: &[(String, Vec<u8>)],
        fix: GeoFix,
    ) -> Result<Lifecycle, NodeError> {
        if self.lifecycle != Lifecycle::PoweredOff {
            return Err(NodeError::BadState);
        }
        self.platform.reset();
        measure_boot_chain(&mut self.platform, stages).map_err(|_| NodeError::BadState)?;
        self.lifecycle = Lifecycle::Measured;
        self.last_fix = Some(fix);

        transport.exchange(&Message::Hello(wire::Hello {
            device_id: self.device_id.clone(),
            protocol_version: 1,
        }))?;
        let nonce = match transport.exchange(&Message::ChallengeReq(wire::ChallengeReq {
            device_id: self.device_id.clone(),
        }))? {
            Message::Challenge(c) => c.nonce,
            Message::Deny(d) => return Err(NodeError::AttestationDenied(d.reason)),
            other => return Err(NodeError::ProtocolViolation(other.type_name().into())),
        };

        let quote = generate_quote(
            &self.platform.bank,
            &self.identity,
            &self.device_id,
            &nonce,
            &self.bound_pcrs,
        )
        .map_err(|_| NodeError::BadState)?;
        self.lifecycle = Lifecycle::AwaitingUnlock;

        let seed_c: [u8; 32] = self.rng.gen();
        let seed_pq: [u8; 32] = self.rng.gen();
        let kem_c = kem_keygen(self.profile.kem_classical, &seed_c).unwrap();
        let kem_pq = kem_keygen(self.profile.kem_pq, &seed_pq).unwrap();
        let submit = Message::QuoteSubmit(Box::new(wire::QuoteSubmit {
            quote,
            fix,
            session_kem_classical: self.profile.kem_classical,
            session_pk_classical: kem_c.public_key.clone(),
            session_kem_pq: self.profile.kem_pq,
            session_pk_pq: kem_pq.public_key.clone(),
        }));
        let grant = match transport.exchange(&submit)? {
            Message::UnlockGrant(g) => g,
            Message::Deny(d) => return Err(NodeError::AttestationDenied(d.reason)),
            other => return Err(NodeError::ProtocolViolation(other.type_name().into())),
        };
        self.redeem_unlock_grant(&grant, &kem_c.secret_key, &kem_pq.secret_key)
    }

    /// Unwrap and consume an unlock grant. Replayed grant ids are rejected
    /// locally even before the server would refuse them.
    pub fn redeem_unlock_grant(
        &mut self,
        grant: &wire::UnlockGrantMsg,
        kem_sk_classical: &[u8],
        kem_sk_pq: &[u8],
    ) -> Result<Lifecycle, NodeError> {
        let grant_id: [u8; 16] =
            grant.grant_id.clone().try_into().map_err(|_| NodeError::GrantRejected)?;
        if !self.seen_grants.insert(grant_id) {
            return Err(NodeError::GrantRejected);
        }
        let session_key = hybrid_recover(kem_sk_classical, kem_sk_pq, &grant.wrapped)
            .map_err(|_| NodeError::UnlockFailed)?;
        let key_bytes: [u8; 32] = aead_open(&session_key, &grant.sealed_key)
            .map_err(|_| NodeError::UnlockFailed)?
            .try_into()
            .map_err(|_| NodeError::UnlockFailed)?;
        let mut unlock = UnlockKey { key_bytes, grant_id, received_at: self.clock.now() };

        let audio_handle =
            unlock_volume(&self.audio, &unlock).map_err(|_| NodeError::UnlockFailed)?;
        let models_handle =
            unlock_volume(&self.models, &unlock).map_err(|_| NodeError::UnlockFailed)?;
        unlock.zeroize_key();

        self.audio_handle = Some(audio_handle);
        self.models_handle = Some(models_handle);
        self.session_key = session_key.to_vec();
        self.lifecycle = Lifecycle::Operational;
        self.tamper.mode = TamperMode::Normal;
        self.tamper.armed_by = None;
        self.last_report_at = Some(self.clock.now());
        let at = self.clock.now();
        let grant_hex = hex::encode(grant_id);
        self.node_audit(at, "unlock", json!({"grant_id": grant_hex}));
        Ok(self.lifecycle)
    }

    /// Cold boot with exponential backoff over a flaky channel: base 2 s,
    /// cap 60 s, jitter ±20%, waiting on the injected clock.
    pub fn cold_boot_with_retry(
        &mut self,
        transport: &mut dyn Transport,
        stages: &[(String, Vec<u8>)],
        fix: GeoFix,
        max_attempts: u32,
    ) -> Result<Lifecycle, NodeError> {
        let mut attempt = 0u32;
        loop {
            match self.cold_boot(transport, stages, fix) {
                Err(NodeError::ChannelDown) if attempt + 1 < max_attempts => {
                    let delay = self.backoff_delay(attempt);
                    self.clock.advance(delay);
                    // a failed exchange leaves the flow half-done; restart it
                    self.lifecycle = Lifecycle::PoweredOff;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    pub fn backoff_delay(&mut self, attempt: u32) -> u64 {
        let base = (BACKOFF_BASE_MS << attempt.min(16)).min(BACKOFF_CAP_MS);
        let jitter_span = base / 5; // ±20%
        base - jitter_span + self.rng.gen_range(0..=2 * jitter_span)
    }

    /// GPS report every 600 s while operational, signed at application level.
    pub fn telemetry_tick(&mut self, now: u64) -> Option<Message> {
        if self.lifecycle != Lifecycle::Operational {
            return None;
        }
        let fix = self.last_fix?;
        let due = match self.last_report_at {
            None => true,
            Some(last) => now.saturating_sub(last) >= TELEMETRY_PERIOD_MS,
        };
        if !due {
            return None;
        }
        self.last_report_at = Some(now);
        let signature = sign(
            self.signer.scheme,
            &self.signer.secret_key,
            &to_canonical_bytes(&fix),
        )
        .expect("signer key valid");
        Some(Message::Telemetry(wire::Telemetry {
            device_id: self.device_id.clone(),
            fix,
            signature,
        }))
    }

    /// Tamper state machine. Motion above threshold for three consecutive
    /// samples arms; case-open (beam break or lux spike) fires the five
    /// ordered responses. Tampered is absorbing until re-attestation.
    pub fn on_sensor_event(&mut self, event: SensorEvent) -> Vec<Action> {
        self.tamper.events.push(event.clone());
        match event.payload {
            SensorPayload::Gps(fix) => {
                self.last_fix = Some(fix);
                Vec::new()
            }
            SensorPayload::Accel(magnitude) => {
                if magnitude > ACCEL_THRESHOLD_MS2 {
                    self.tamper.accel_streak += 1;
                } else {
                    self.tamper.accel_streak = 0;
                    return Vec::new();
                }
                if self.tamper.accel_streak >= ACCEL_SUSTAIN_SAMPLES
                    && self.tamper.mode == TamperMode::Normal
                {
                    self.tamper.mode = TamperMode::Armed;
                    self.tamper.armed_by = Some("accel".to_string());
                    let at = event.at;
                    self.node_audit(at, "tamper_armed", json!({"sensor": "accel"}));
                    return vec![Action::AuthenticatedAlert(event)];
                }
                Vec::new()
            }
            SensorPayload::CaseOpen { beam_break, lux_delta } => {
                if !beam_break && lux_delta <= LUX_DELTA_THRESHOLD {
                    return Vec::new();
                }
                if self.tamper.mode == TamperMode::Tampered {
                    return Vec::new(); // absorbing, no duplicate zeroization
                }
                self.tamper.mode = TamperMode::Tampered;
                self.execute_tamper_response(event.at)
            }
        }
    }

    /// Exactly [zeroize keys, network read-only, snapshot GPS, signed audit
    /// record, power-off], in that order, once per Tampered entry.
    fn execute_tamper_response(&mut self, at: u64) -> Vec<Action> {
        let mut actions = Vec::with_capacity(5);

        self.zeroize_volatile_keys();
        actions.push(Action::ZeroizeVolatileKeys);

        self.lifecycle = Lifecycle::ReadOnlyQuarantine;
        actions.push(Action::NetworkReadOnly);

        self.tamper_snapshot = self.last_fix;
        actions.push(Action::SnapshotGpsFix(self.tamper_snapshot));

        let snapshot = self.tamper_snapshot.map(|f| (f.lat, f.lon));
        self.node_audit(at, "tamper_response", json!({"snapshot": snapshot}));
        actions.push(Action::AppendSignedAuditRecord);

        self.lifecycle = Lifecycle::PoweredOff;
        actions.push(Action::PowerOff);

        actions
    }

    fn zeroize_volatile_keys(&mut self) {
        if let Some(h) = self.audio_handle.as_mut() {
            zeroize_handle(h);
        }
        if let Some(h) = self.models_handle.as_mut() {
            zeroize_handle(h);
        }
        let mut session = std::mem::take(&mut self.session_key);
        assert_tamper_pin(&mut self.identity, &mut [("session-key".to_string(), &mut session)]);
        self.session_key = session; // zeroed in place, kept for byte-scans
    }

    /// Volatile key material, exposed for zeroization byte-scans.
    pub fn volatile_buffers(&self) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        if let Some(h) = &self.audio_handle {
            out.push(("audio-master".to_string(), h.key_buffer().to_vec()));
        }
        if let Some(h) = &self.models_handle {
            out.push(("models-master".to_string(), h.key_buffer().to_vec()));
        }
        out.push(("session-key".to_string(), self.session_key.clone()));
        out
    }

    pub fn tamper_snapshot(&self) -> Option<GeoFix> {
        self.tamper_snapshot
    }

    /// Re-install the sealed identity from an operator-supplied seed after a
    /// tamper wipe. Must match the enrolled key or attestation keeps failing.
    pub fn reinstall_identity(&mut self, seed: u64) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let key_seed: [u8; 32] = rng.gen();
        self.identity = DeviceIdentityKey::generate(
            &format!("aik-{}", self.device_id),
            self.profile.sig,
            &key_seed,
        );
    }

    pub fn power_off(&mut self) {
        if let Some(h) = self.audio_handle.as_mut() {
            zeroize_handle(h);
        }
        if let Some(h) = self.models_handle.as_mut() {
            zeroize_handle(h);
        }
        self.audio_handle = None;
        self.models_handle = None;
        self.session_key.clear();
        self.lifecycle = Lifecycle::PoweredOff;
    }

    pub fn write_audio(&mut self, record: &[u8]) -> Result<usize, NodeError> {
        let handle = self.audio_handle.as_ref().ok_or(NodeError::StorageLocked)?;
        write_record(&mut self.audio, handle, record).map_err(|_| NodeError::StorageLocked)
    }

    pub fn read_audio(&self, index: usize) -> Result<Vec<u8>, NodeError> {
        let handle = self.audio_handle.as_ref().ok_or(NodeError::StorageLocked)?;
        read_record(&self.audio, handle, index).map_err(|_| NodeError::StorageLocked)
    }

    pub fn audio_container(&self) -> &Container {
        &self.audio
    }

    pub fn installed_version(&self, model_id: &str) -> u64 {
        self.model_versions.get(model_id).copied().unwrap_or(0)
    }

    /// Ask the server for the current package and apply it if it moves us
    /// forward (or carries a sanctioned rollback directive).
    pub fn check_model_update(
        &mut self,
        transport: &mut dyn Transport,
        model_id: &str,
    ) -> Result<Option<u64>, NodeError> {
        let installed = self.installed_version(model_id);
        let offer = match transport.exchange(&Message::ModelCheck(wire::ModelCheck {
            model_id: model_id.to_string(),
            installed_version: installed,
        }))? {
            Message::ModelOffer(o) => o,
            Message::Error(_) => return Ok(None),
            other => return Err(NodeError::ProtocolViolation(other.type_name().into())),
        };
        if offer.package.manifest.version == installed {
            return Ok(None);
        }
        self.apply_model_package(&offer.package, offer.rollback.as_ref())?;
        Ok(Some(offer.package.manifest.version))
    }

    /// Apply iff the manifest signature verifies and the version is strictly
    /// newer, unless a signed rollback directive names this exact version.
    pub fn apply_model_package(
        &mut self,
        pkg: &ModelPackage,
        rollback: Option<&RollbackDirective>,
    ) -> Result<(), NodeError> {
        if self.models_handle.as_ref().is_none_or(|h| h.is_locked()) {
            return Err(NodeError::StorageLocked);
        }
        if !pkg.verify(self.profile.sig, &self.model_signer_pk) {
            return Err(NodeError::BadSignature);
        }
        let installed = self.installed_version(&pkg.manifest.model_id);
        let moves_forward = pkg.manifest.version > installed;
        let sanctioned = rollback.is_some_and(|d| {
            d.model_id == pkg.manifest.model_id
                && d.target_version == pkg.manifest.version
                && d.verify(self.profile.sig, &self.model_signer_pk)
        });
        if !moves_forward && !sanctioned {
            return Err(NodeError::DowngradeRejected);
        }
        let handle = self.models_handle.as_ref().unwrap();
        write_record(&mut self.models, handle, &to_canonical_bytes(pkg))
            .map_err(|_| NodeError::StorageLocked)?;
        self.model_versions.insert(pkg.manifest.model_id.clone(), pkg.manifest.version);
        let at = self.clock.now();
        self.node_audit(
            at,
            "model_applied",
            json!({"model_id": pkg.manifest.model_id, "version": pkg.manifest.version}),
        );
        Ok(())
    }

    /// Encrypt feature bytes under the session key with an application-level
    /// signature binding this device's identity.
    pub fn encrypt_features(&mut self, features: &[u8]) -> Result<PayloadEnvelope, NodeError> {
        if self.lifecycle != Lifecycle::Operational || self.session_key.len() != 32 {
            return Err(NodeError::NoSession);
        }
        let key: [u8; 32] = self.session_key.clone().try_into().unwrap();
        let nonce: [u8; 12] = self.rng.gen();
        let body = aead_seal(&key, &nonce, features, self.device_id.as_bytes());
        let digest = sha256(features);
        let signed = EnvelopeBody { device_id: &self.device_id, digest };
        let signature = sign(self.signer.scheme, &self.signer.secret_key, &to_canonical_bytes(&signed))
            .expect("signer key valid");
        Ok(PayloadEnvelope { device_id: self.device_id.clone(), body, digest, signature })
    }

    pub fn session_key_bytes(&self) -> &[u8] {
        &self.session_key
    }

    fn node_audit(&mut self, at: u64, event_type: &str, payload: serde_json::Value) {
        self.audit.append(&self.signer, at, &self.device_id, event_type, &payload);
    }
}

/// Server-side envelope opening: the signature must bind the claimed device,
/// and the AEAD body must authenticate under that device's session key.
pub fn open_envelope(
    session_key: &[u8; 32],
    envelope: &PayloadEnvelope,
    expected_device: &str,
    device_pk: &[u8],
    scheme: crate::crypto::sig::SigSchemeId,
) -> Result<Vec<u8>, DenyReason> {
    if envelope.device_id != expected_device {
        return Err(DenyReason::SessionMismatch);
    }
    let signed = EnvelopeBody { device_id: &envelope.device_id, digest: envelope.digest };
    if !verify(scheme, device_pk, &to_canonical_bytes(&signed), &envelope.signature) {
        return Err(DenyReason::SignatureMismatch);
    }
    let features =
        aead_open(session_key, &envelope.body).map_err(|_| DenyReason::IntegrityFailure)?;
    if sha256(&features) != envelope.digest {
        return Err(DenyReason::IntegrityFailure);
    }
    Ok(features)
}

/// Parse a JSON-lines sensor script: one `{"at":..,"sensor":..,"payload":..}`
/// object per line.
pub fn parse_sensor_script(text: &str) -> Result<Vec<SensorEvent>, serde_json::Error> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(serde_json::from_str)
        .collect()
}
