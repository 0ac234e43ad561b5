//! Declarative attack-scenario runner. Scenarios are JSON files naming a
//! STRIDE class, a trust domain, an attack-tree branch, a script of steps,
//! and the observations the defenses are expected to produce. Each run owns
//! a fresh simulator (server, node, channel) on one virtual clock, and the
//! report digest is fully determined by (scenario, seed).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::audit::ChainStatus;
use crate::backup::{cloud_replicate, cloud_restore, hot_backup, verify_manifest, CloudBucket};
use crate::canonical::{sha256, to_canonical_bytes};
use crate::clock::{VirtualClock, SEC};
use crate::crypto::kem::{kem_keygen, KemSchemeId};
use crate::crypto::sig::{sig_keygen, SigSchemeId};
use crate::netsim::{
    connect, flood, AdversaryTap, Channel, Endpoint, NetConditions, Side, TapMode,
};
use crate::node::{Action, InProcessTransport, Lifecycle, Node, NodeError, SensorEvent, Transport};
use crate::pki::{CertAuthority, Csr};
use crate::server::policy::{DevicePolicy, GeoFix, Polygon, TimeWindow};
use crate::server::wire::Message;
use crate::server::{ControlServer, DefenseConfig, RevocationContext, Session, SuiteProfile};

/// 2026-08-26T12:00:00Z; every scenario starts here on the virtual clock.
pub const SCENARIO_START_MS: u64 = 1_787_745_600_000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario schema error: {0}")]
    ScenarioSchemaError(String),
    #[error("unknown report format: {0}")]
    UnknownFormat(String),
    #[error("no scenario files in suite directory")]
    EmptySuite,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrideClass {
    S,
    T,
    R,
    I,
    D,
    E,
}

impl StrideClass {
    pub const ALL: [StrideClass; 6] = [
        StrideClass::S,
        StrideClass::T,
        StrideClass::R,
        StrideClass::I,
        StrideClass::D,
        StrideClass::E,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StrideClass::S => "spoofing",
            StrideClass::T => "tampering",
            StrideClass::R => "repudiation",
            StrideClass::I => "information-disclosure",
            StrideClass::D => "denial-of-service",
            StrideClass::E => "elevation-of-privilege",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrustDomain {
    Device,
    Network,
    Backend,
}

impl TrustDomain {
    pub const ALL: [TrustDomain; 3] =
        [TrustDomain::Device, TrustDomain::Network, TrustDomain::Backend];

    pub fn label(self) -> &'static str {
        match self {
            TrustDomain::Device => "device",
            TrustDomain::Network => "network",
            TrustDomain::Backend => "backend",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub stride_class: StrideClass,
    pub domain: TrustDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootVariant {
    #[default]
    Normal,
    /// One bootloader stage carries a flipped bit.
    TamperedStage,
    /// The quote is signed with a key the server never enrolled.
    SpoofedKey,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    AdvanceClock {
        ms: u64,
    },
    Boot {
        #[serde(default)]
        variant: BootVariant,
        #[serde(default)]
        fix: Option<(f64, f64)>,
    },
    PowerOff,
    Sensor {
        event: SensorEvent,
    },
    OperatorBan,
    OperatorApprove,
    RevokeCert,
    Connect,
    ReplayQuote,
    ReplayGrant,
    PublishModel {
        model_id: String,
        version: u64,
    },
    OfferModel {
        model_id: String,
        version: u64,
        #[serde(default)]
        corrupt_signature: bool,
        #[serde(default)]
        with_directive: bool,
    },
    PublishRollback {
        model_id: String,
        target_version: u64,
    },
    Flood {
        rate: u64,
        duration_s: u64,
        clients: u64,
        legit_rate: u64,
    },
    HotBackupCorruption,
    CloudCompromise,
    MutateAuditCopy {
        index: usize,
    },
    FlipFrame,
    GenerateServerTraffic {
        rounds: u64,
    },
}

/// An expected observation: `pattern` must subset-match at least one entry
/// of the observation log (or none, when `absent` is set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    #[serde(rename = "match")]
    pub pattern: Value,
    #[serde(default)]
    pub absent: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub stride_class: StrideClass,
    pub domain: TrustDomain,
    /// Additional coverage-matrix cells this scenario exercises.
    #[serde(default)]
    pub extra_cells: Vec<Cell>,
    pub attack_tree_path: String,
    /// Channel conditions string; defaults to an ideal link.
    #[serde(default)]
    pub net: Option<String>,
    /// Policy preset: "open", "office-hours", or "night-window".
    #[serde(default = "default_policy_preset")]
    pub policy: String,
    pub script: Vec<Step>,
    pub expected: Vec<Expectation>,
}

fn default_policy_preset() -> String {
    "open".to_string()
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let s: Scenario = serde_json::from_str(text)
            .map_err(|e| HarnessError::ScenarioSchemaError(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.name.is_empty() {
            return Err(HarnessError::ScenarioSchemaError("empty scenario name".into()));
        }
        if self.expected.is_empty() {
            return Err(HarnessError::ScenarioSchemaError(format!(
                "scenario {} declares no expected assertions",
                self.name
            )));
        }
        if let Some(net) = &self.net {
            NetConditions::parse(net)
                .map_err(|e| HarnessError::ScenarioSchemaError(format!("bad net conditions: {e}")))?;
        }
        policy_preset(&self.policy).map(|_| ()).ok_or_else(|| {
            HarnessError::ScenarioSchemaError(format!("unknown policy preset {}", self.policy))
        })
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = vec![Cell { stride_class: self.stride_class, domain: self.domain }];
        cells.extend(self.extra_cells.iter().copied());
        cells
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AssertionResult {
    pub expectation: Expectation,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub stride_class: StrideClass,
    pub domain: TrustDomain,
    pub seed: u64,
    pub assertions: Vec<AssertionResult>,
    pub audit_intact: bool,
    pub transcript_digest: String,
    pub pass: bool,
    pub observations: Vec<Value>,
}

fn policy_preset(name: &str) -> Option<DevicePolicy> {
    let fence = Polygon { vertices: vec![(-1.0, -1.0), (-1.0, 1.0), (1.0, 1.0), (1.0, -1.0)] };
    let window = match name {
        "open" => TimeWindow::ALL_DAY,
        // the clock starts at 12:00 UTC, inside office hours
        "office-hours" => TimeWindow { start: 9 * 3_600, end: 17 * 3_600, wraps_midnight: false },
        // 00:00–01:00 UTC only; the start time is outside
        "night-window" => TimeWindow { start: 0, end: 3_600, wraps_midnight: false },
        _ => return None,
    };
    Some(DevicePolicy {
        geofence: fence,
        approved_points: vec![],
        time_window: window,
        bound_pcrs: vec![0, 1, 2],
    })
}

/// Transport wrapper that keeps copies of the last quote submission and the
/// last grant id, so replay steps can resend captured material.
struct TapTransport<'a> {
    inner: InProcessTransport<'a>,
    last_quote_submit: Option<Message>,
    last_grant_id: Option<[u8; 16]>,
}

impl Transport for TapTransport<'_> {
    fn exchange(&mut self, msg: &Message) -> Result<Message, NodeError> {
        if matches!(msg, Message::QuoteSubmit(_)) {
            self.last_quote_submit = Some(msg.clone());
        }
        let reply = self.inner.exchange(msg)?;
        if let Message::UnlockGrant(g) = &reply {
            if let Ok(id) = <[u8; 16]>::try_from(g.grant_id.as_slice()) {
                self.last_grant_id = Some(id);
            }
        }
        Ok(reply)
    }
}

struct World {
    clock: VirtualClock,
    server: ControlServer,
    node: Node,
    stages: Vec<(String, Vec<u8>)>,
    conditions: NetConditions,
    ca: CertAuthority,
    client_ep: Endpoint,
    server_ep: Endpoint,
    channel: Option<Channel>,
    captured_quote: Option<Message>,
    captured_grant: Option<[u8; 16]>,
    seed: u64,
    observations: Vec<Value>,
}

const DEVICE_ID: &str = "edge-node-1";

impl World {
    fn new(scenario: &Scenario, seed: u64, defense: DefenseConfig) -> Result<Self, HarnessError> {
        let clock = VirtualClock::new(SCENARIO_START_MS);
        let server = ControlServer::new(SuiteProfile::test(), defense, seed, clock.now());
        server.add_bootstrap_token("factory");
        let policy = policy_preset(&scenario.policy)
            .ok_or_else(|| HarnessError::ScenarioSchemaError("unknown policy".into()))?;
        let stages = vec![
            ("boot-rom".to_string(), b"rom-v1".to_vec()),
            ("bootloader".to_string(), b"loader-v3".to_vec()),
            ("kernel".to_string(), b"kernel-v7".to_vec()),
        ];
        let node = Node::provision(&server, DEVICE_ID, "factory", policy, &stages, seed, clock.clone())
            .map_err(|e| HarnessError::ScenarioSchemaError(format!("provision failed: {e}")))?;

        let mut conditions = scenario
            .net
            .as_deref()
            .map(NetConditions::parse)
            .transpose()
            .map_err(|e| HarnessError::ScenarioSchemaError(format!("bad net conditions: {e}")))?
            .unwrap_or(NetConditions { loss_prob: 0.0, jitter_ms: 0, ..Default::default() });
        conditions.seed = seed;

        // transport-layer PKI (mTLS identities are distinct from the
        // attestation identity)
        let mut ca_seed = sha256(&seed.to_be_bytes());
        ca_seed[0] ^= 0x5a;
        let mut ca = CertAuthority::new(SigSchemeId::Test, &ca_seed, clock.now());
        let ck = sig_keygen(SigSchemeId::Test, &sha256(b"tls-client")).unwrap();
        let sk = sig_keygen(SigSchemeId::Test, &sha256(b"tls-server")).unwrap();
        let client_chain = ca.issue_leaf(&Csr::new(DEVICE_ID, &ck), clock.now()).unwrap();
        let server_chain = ca.issue_leaf(&Csr::new("control-plane", &sk), clock.now()).unwrap();
        let client_ep = Endpoint {
            name: DEVICE_ID.to_string(),
            chain: client_chain,
            revocation: RevocationContext::default(),
            emergency_banned: false,
        };
        let server_ep = Endpoint {
            name: "control-plane".to_string(),
            chain: server_chain,
            revocation: RevocationContext::default(),
            emergency_banned: false,
        };

        Ok(Self {
            clock,
            server,
            node,
            stages,
            conditions,
            ca,
            client_ep,
            server_ep,
            channel: None,
            captured_quote: None,
            captured_grant: None,
            seed,
            observations: Vec::new(),
        })
    }

    fn observe(&mut self, value: Value) {
        self.observations.push(value);
    }

    fn volume_observation(&mut self) {
        let locked = self.node.lifecycle != Lifecycle::Operational;
        self.observe(json!({"kind": "volume", "locked": locked}));
    }

    fn default_fix(&self) -> GeoFix {
        GeoFix::new(0.1, 0.2, self.clock.now()).unwrap()
    }

    fn boot(&mut self, variant: BootVariant, fix: Option<(f64, f64)>) {
        if self.node.lifecycle != Lifecycle::PoweredOff {
            self.node.power_off();
        }
        let mut stages = self.stages.clone();
        if variant == BootVariant::TamperedStage {
            stages[1].1[0] ^= 0x01;
        }
        if variant == BootVariant::SpoofedKey {
            self.node.reinstall_identity(self.seed ^ 0x5EED);
        }
        let fix = match fix {
            Some((lat, lon)) => GeoFix::new(lat, lon, self.clock.now()).unwrap(),
            None => self.default_fix(),
        };
        let mut transport = TapTransport {
            inner: InProcessTransport::new(&self.server, self.clock.clone()),
            last_quote_submit: None,
            last_grant_id: None,
        };
        let result = self.node.cold_boot(&mut transport, &stages, fix);
        let quote = transport.last_quote_submit.take();
        let grant = transport.last_grant_id.take();
        if let Some(q) = quote {
            self.captured_quote = Some(q);
        }
        if let Some(g) = grant {
            self.captured_grant = Some(g);
        }
        if variant == BootVariant::SpoofedKey {
            // put the enrolled identity back so later steps see a sane device
            self.node.reinstall_identity(self.seed);
        }
        match result {
            Ok(_) => {
                let grant = self.captured_grant.map(hex::encode).unwrap_or_default();
                self.observe(json!({"kind": "boot", "result": "unlocked", "grant": grant}))
            }
            Err(NodeError::AttestationDenied(reason)) => {
                self.observe(json!({"kind": "deny", "reason": format!("{reason:?}"), "via": "boot"}))
            }
            Err(e) => self.observe(json!({"kind": "boot", "result": format!("{e:?}")})),
        }
        self.volume_observation();
    }

    fn connect_channel(&mut self) {
        let result = connect(
            &self.client_ep,
            &self.server_ep,
            self.conditions,
            self.clock.clone(),
            self.ca.root_public_key(),
            self.ca.staple_signer_public_key(),
            SigSchemeId::Test,
            self.clock.now(),
        );
        match result {
            Ok(ch) => {
                self.channel = Some(ch);
                self.observe(json!({"kind": "connect", "result": "established"}));
            }
            Err(e) => {
                self.observe(json!({"kind": "connect", "result": "rejected", "reason": format!("{e:?}")}))
            }
        }
    }

    fn run_step(&mut self, step: &Step) -> Result<(), HarnessError> {
        match step {
            Step::AdvanceClock { ms } => {
                self.clock.advance(*ms);
            }
            Step::Boot { variant, fix } => self.boot(*variant, *fix),
            Step::PowerOff => self.node.power_off(),
            Step::Sensor { event } => {
                let actions = self.node.on_sensor_event(event.clone());
                let names: Vec<&str> = actions.iter().map(action_name).collect();
                let mode = format!("{:?}", self.node.tamper.mode);
                self.observe(json!({"kind": "tamper", "mode": mode, "actions": names}));
                if actions.iter().any(|a| matches!(a, Action::ZeroizeVolatileKeys)) {
                    let all_zero = self
                        .node
                        .volatile_buffers()
                        .iter()
                        .all(|(_, buf)| buf.iter().all(|b| *b == 0));
                    self.observe(json!({"kind": "zeroized", "all_zero": all_zero}));
                    self.volume_observation();
                }
            }
            Step::OperatorBan => {
                self.server
                    .emergency_ban(self.server.operator_token(), DEVICE_ID, self.clock.now())
                    .map_err(|e| HarnessError::ScenarioSchemaError(format!("ban failed: {e}")))?;
                // the transport identity carries a fresh, clean staple; the
                // ban must reject it anyway
                let serial = self.client_ep.chain.leaf.serial;
                self.client_ep.revocation.staple =
                    Some(self.ca.sign_staple(serial, false, self.clock.now()));
                self.client_ep.emergency_banned = true;
                self.observe(json!({"kind": "operator", "action": "ban"}));
            }
            Step::OperatorApprove => {
                self.server
                    .approve_location(self.server.operator_token(), DEVICE_ID, self.clock.now())
                    .map_err(|e| HarnessError::ScenarioSchemaError(format!("approve failed: {e}")))?;
                self.observe(json!({"kind": "operator", "action": "approve"}));
            }
            Step::RevokeCert => {
                let serial = self.client_ep.chain.leaf.serial;
                self.client_ep.revocation.staple =
                    Some(self.ca.sign_staple(serial, true, self.clock.now()));
                self.observe(json!({"kind": "operator", "action": "revoke_cert"}));
            }
            Step::Connect => self.connect_channel(),
            Step::ReplayQuote => {
                let msg = self.captured_quote.clone().ok_or_else(|| {
                    HarnessError::ScenarioSchemaError("replay_quote before any boot".into())
                })?;
                let mut session = Session::default();
                let reply = self.server.handle_message(&mut session, &msg, self.clock.now());
                match reply {
                    Message::Deny(d) => self.observe(json!({
                        "kind": "deny", "reason": format!("{:?}", d.reason), "via": "replayed_quote"
                    })),
                    Message::UnlockGrant(_) => {
                        self.observe(json!({"kind": "replay_quote", "result": "grant_issued"}))
                    }
                    other => self.observe(json!({
                        "kind": "replay_quote", "result": other.type_name()
                    })),
                }
            }
            Step::ReplayGrant => {
                let grant_id = self.captured_grant.ok_or_else(|| {
                    HarnessError::ScenarioSchemaError("replay_grant before any unlock".into())
                })?;
                match self.server.redeem_grant(&grant_id, self.clock.now()) {
                    Ok(_) => self.observe(json!({"kind": "replay_grant", "result": "key_released"})),
                    Err(reason) => self.observe(json!({
                        "kind": "deny", "reason": format!("{reason:?}"), "via": "replayed_grant"
                    })),
                }
            }
            Step::PublishModel { model_id, version } => {
                let payload = format!("weights-{model_id}-v{version}").into_bytes();
                self.server
                    .publish_model(model_id, *version, payload, self.clock.now())
                    .map_err(|e| HarnessError::ScenarioSchemaError(format!("publish failed: {e}")))?;
                self.observe(json!({"kind": "model_published", "version": version}));
            }
            Step::OfferModel { model_id, version, corrupt_signature, with_directive } => {
                let mut pkg = self.server.model_package(model_id, *version).ok_or_else(|| {
                    HarnessError::ScenarioSchemaError(format!("unknown model {model_id} v{version}"))
                })?;
                if *corrupt_signature {
                    pkg.signature[0] ^= 0x01;
                }
                let directive = if *with_directive {
                    self.server.rollback_directive_for(model_id, *version)
                } else {
                    None
                };
                let result = self.node.apply_model_package(&pkg, directive.as_ref());
                match result {
                    Ok(()) => self.observe(json!({
                        "kind": "model", "result": "installed",
                        "version": self.node.installed_version(model_id)
                    })),
                    Err(e) => self.observe(json!({"kind": "model", "result": format!("{e:?}")})),
                }
            }
            Step::PublishRollback { model_id, target_version } => {
                self.server
                    .publish_rollback(model_id, *target_version, self.clock.now())
                    .map_err(|e| HarnessError::ScenarioSchemaError(format!("rollback failed: {e}")))?;
                self.observe(json!({"kind": "rollback_published", "target": target_version}));
            }
            Step::Flood { rate, duration_s, clients, legit_rate } => {
                let client_ids: Vec<String> =
                    (0..*clients).map(|i| format!("legit-{i}")).collect();
                let stats = flood(
                    &self.server,
                    *rate,
                    *duration_s,
                    &client_ids,
                    *legit_rate,
                    self.clock.now(),
                );
                self.clock.advance(duration_s * SEC);
                self.observe(json!({
                    "kind": "flood",
                    "legit_pct": (stats.legit_admitted_pct * 100.0).round() / 100.0,
                    "legit_ok": stats.legit_admitted_pct >= 90.0,
                    "attacker_suppressed": stats.attacker_admitted_pct < 5.0,
                    "p99_added_latency_ms": (stats.p99_added_latency_ms * 100.0).round() / 100.0
                }));
            }
            Step::HotBackupCorruption => {
                let signer = sig_keygen(SigSchemeId::Test, &sha256(b"backup-signer")).unwrap();
                let mut rng = rand::SeedableRng::seed_from_u64(self.seed);
                let (mut container, manifest) = hot_backup(
                    b"telemetry-db snapshot", &[9u8; 32], &signer, self.clock.now(), &mut rng,
                )
                .unwrap();
                let mid = container.len() / 2;
                container[mid] ^= 0x01;
                let day = self.clock.now() / crate::clock::DAY;
                let files = vec![(format!("db-hot-{day}.elks"), container.as_slice())];
                let report =
                    verify_manifest(&manifest, &files, &signer.public_key, SigSchemeId::Test);
                let detected = matches!(&report, Ok(r) if !r.is_ok()) || report.is_err();
                self.observe(json!({"kind": "backup", "tier": "hot", "corruption_detected": detected}));
            }
            Step::CloudCompromise => {
                let signer = sig_keygen(SigSchemeId::Test, &sha256(b"backup-signer")).unwrap();
                let kc = kem_keygen(KemSchemeId::Test, &sha256(b"operator-classical")).unwrap();
                let kq = kem_keygen(KemSchemeId::Test, &sha256(b"operator-pq")).unwrap();
                let mut rng = rand::SeedableRng::seed_from_u64(self.seed);
                let root = std::env::temp_dir().join(format!("cloud-sim-{}", self.seed));
                let mut bucket = CloudBucket::new(root, [5u8; 32]);
                let snapshot = b"telemetry-db snapshot";
                let id = cloud_replicate(
                    &mut bucket, snapshot, KemSchemeId::Test, &kc.public_key, KemSchemeId::Test,
                    &kq.public_key, &signer, &mut rng,
                )
                .unwrap();
                // the compromised provider reads every object and loses its
                // at-rest key; the client restore must not care
                let needle = b"telemetry-db";
                let exposed = bucket
                    .list()
                    .iter()
                    .filter_map(|(id, _)| bucket.get(id).ok())
                    .any(|obj| obj.windows(needle.len()).any(|w| w == needle));
                bucket.discard_provider_key();
                let restored = cloud_restore(
                    &bucket, &id, &kc.secret_key, &kq.secret_key, &signer.public_key,
                );
                self.observe(json!({
                    "kind": "cloud",
                    "plaintext_exposed": exposed,
                    "client_restore_ok": restored.as_deref() == Ok(snapshot.as_slice())
                }));
            }
            Step::MutateAuditCopy { index } => {
                let mut chain = self.server.audit_chain();
                let detected = if let Some(entry) = chain.entries.get_mut(*index) {
                    entry.at += 1;
                    chain.verify(&self.server.audit_signer_public_key()) != ChainStatus::Intact
                } else {
                    false
                };
                self.observe(json!({
                    "kind": "audit_probe",
                    "entries": chain.entries.len(),
                    "mutation_detected": detected
                }));
            }
            Step::FlipFrame => {
                let ch = self.channel.as_mut().ok_or_else(|| {
                    HarnessError::ScenarioSchemaError("flip_frame requires connect".into())
                })?;
                ch.tap = Some(AdversaryTap::new(TapMode::Observe));
                ch.send(Side::Client, b"audio-feature-batch")
                    .map_err(|e| HarnessError::ScenarioSchemaError(format!("send failed: {e}")))?;
                let _legit = ch.recv(Side::Server, u64::MAX);
                let mut bytes = ch
                    .tap
                    .as_ref()
                    .and_then(|t| t.recorded.last())
                    .map(|f| f.bytes.clone())
                    .ok_or_else(|| {
                        HarnessError::ScenarioSchemaError("tap recorded nothing".into())
                    })?;
                let mid = bytes.len() / 2;
                bytes[mid] ^= 0x01;
                ch.tap = Some(AdversaryTap::new(TapMode::Inject));
                ch.adversary_inject(Side::Server, bytes)
                    .map_err(|e| HarnessError::ScenarioSchemaError(format!("inject failed: {e}")))?;
                let verdict = ch.recv(Side::Server, u64::MAX);
                let result = match verdict {
                    Err(crate::netsim::NetError::FrameRejected) => "rejected",
                    Ok(_) => "accepted",
                    Err(_) => "lost",
                };
                self.observe(json!({"kind": "frame", "result": result}));
            }
            Step::GenerateServerTraffic { rounds } => {
                for _ in 0..*rounds {
                    let _ = self.server.issue_challenge(DEVICE_ID, self.clock.now());
                    self.clock.advance(SEC);
                }
            }
        }
        Ok(())
    }
}

fn action_name(a: &Action) -> &'static str {
    match a {
        Action::AuthenticatedAlert(_) => "AuthenticatedAlert",
        Action::ZeroizeVolatileKeys => "ZeroizeVolatileKeys",
        Action::NetworkReadOnly => "NetworkReadOnly",
        Action::SnapshotGpsFix(_) => "SnapshotGpsFix",
        Action::AppendSignedAuditRecord => "AppendSignedAuditRecord",
        Action::PowerOff => "PowerOff",
    }
}

/// Subset match: every key in `pattern` must exist in `candidate` with an
/// equal (recursively matched) value; arrays must match element-wise.
pub fn pattern_matches(pattern: &Value, candidate: &Value) -> bool {
    match (pattern, candidate) {
        (Value::Object(p), Value::Object(c)) => {
            p.iter().all(|(k, v)| c.get(k).is_some_and(|cv| pattern_matches(v, cv)))
        }
        (Value::Array(p), Value::Array(c)) => {
            p.len() == c.len() && p.iter().zip(c).all(|(pv, cv)| pattern_matches(pv, cv))
        }
        (p, c) => p == c,
    }
}

pub fn run_scenario(
    scenario: &Scenario,
    seed: u64,
    defense: DefenseConfig,
) -> Result<RunReport, HarnessError> {
    scenario.validate()?;
    let mut world = World::new(scenario, seed, defense)?;
    for step in &scenario.script {
        world.run_step(step)?;
    }

    let audit_intact = world.server.audit_status() == ChainStatus::Intact
        && world.node.audit.verify(&world.node.signer.public_key) == ChainStatus::Intact;

    let assertions: Vec<AssertionResult> = scenario
        .expected
        .iter()
        .map(|exp| {
            let found =
                world.observations.iter().any(|obs| pattern_matches(&exp.pattern, obs));
            AssertionResult { expectation: exp.clone(), pass: found != exp.absent }
        })
        .collect();
    let pass = audit_intact && assertions.iter().all(|a| a.pass);
    let transcript_digest = hex::encode(sha256(&to_canonical_bytes(&world.observations)));

    Ok(RunReport {
        scenario: scenario.name.clone(),
        stride_class: scenario.stride_class,
        domain: scenario.domain,
        seed,
        assertions,
        audit_intact,
        transcript_digest,
        pass,
        observations: world.observations,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageCell {
    pub stride_class: StrideClass,
    pub domain: TrustDomain,
    pub scenarios: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub reports: Vec<RunReport>,
    pub coverage: Vec<CoverageCell>,
    pub covered_cells: usize,
    pub total_cells: usize,
    pub aggregate_digest: String,
    pub pass: bool,
}

pub fn aggregate(scenarios: &[Scenario], reports: Vec<RunReport>, seed: u64) -> SuiteReport {
    let mut by_cell: BTreeMap<(StrideClass, TrustDomain), Vec<String>> = BTreeMap::new();
    for s in scenarios {
        for cell in s.cells() {
            by_cell.entry((cell.stride_class, cell.domain)).or_default().push(s.name.clone());
        }
    }
    let mut coverage = Vec::new();
    let mut covered = 0usize;
    for stride in StrideClass::ALL {
        for domain in TrustDomain::ALL {
            let scenarios = by_cell.get(&(stride, domain)).cloned().unwrap_or_default();
            if !scenarios.is_empty() {
                covered += 1;
            }
            coverage.push(CoverageCell { stride_class: stride, domain, scenarios });
        }
    }
    let pass = reports.iter().all(|r| r.pass);
    let aggregate_digest = hex::encode(sha256(&to_canonical_bytes(&reports)));
    SuiteReport {
        seed,
        reports,
        coverage,
        covered_cells: covered,
        total_cells: 18,
        aggregate_digest,
        pass,
    }
}

pub fn run_suite_scenarios(
    scenarios: &[Scenario],
    seed: u64,
    defense: DefenseConfig,
) -> Result<SuiteReport, HarnessError> {
    if scenarios.is_empty() {
        return Err(HarnessError::EmptySuite);
    }
    let reports: Result<Vec<RunReport>, HarnessError> =
        scenarios.iter().map(|s| run_scenario(s, seed, defense)).collect();
    Ok(aggregate(scenarios, reports?, seed))
}

/// Load every `*.json` scenario in a directory (sorted by filename) and run it.
pub fn run_suite(dir: &Path, seed: u64, defense: DefenseConfig) -> Result<SuiteReport, HarnessError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    let mut scenarios = Vec::new();
    for path in paths {
        scenarios.push(Scenario::from_json(&std::fs::read_to_string(&path)?)?);
    }
    run_suite_scenarios(&scenarios, seed, defense)
}

/// The scenarios shipped with the repository, one or more per coverage cell.
pub fn bundled_scenarios() -> Vec<Scenario> {
    const FILES: [&str; 18] = [
        include_str!("../scenarios/spoofed-quote.json"),
        include_str!("../scenarios/tampered-bootchain.json"),
        include_str!("../scenarios/replayed-quote.json"),
        include_str!("../scenarios/replayed-grant.json"),
        include_str!("../scenarios/stolen-device-geofence.json"),
        include_str!("../scenarios/out-of-window-boot.json"),
        include_str!("../scenarios/revoked-cert-handshake.json"),
        include_str!("../scenarios/emergency-ban-override.json"),
        include_str!("../scenarios/model-bad-signature.json"),
        include_str!("../scenarios/model-downgrade.json"),
        include_str!("../scenarios/sanctioned-rollback.json"),
        include_str!("../scenarios/tamper-case-open.json"),
        include_str!("../scenarios/tamper-motion-arm.json"),
        include_str!("../scenarios/dos-flood-5000.json"),
        include_str!("../scenarios/audit-tamper-detect.json"),
        include_str!("../scenarios/backup-corruption.json"),
        include_str!("../scenarios/cloud-provider-compromise.json"),
        include_str!("../scenarios/payload-integrity-flip.json"),
    ];
    FILES
        .iter()
        .map(|text| Scenario::from_json(text).expect("bundled scenario is valid"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    JunitXml,
    Markdown,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s {
            "json" => Ok(Self::Json),
            "junit-xml" => Ok(Self::JunitXml),
            "markdown" => Ok(Self::Markdown),
            other => Err(HarnessError::UnknownFormat(other.to_string())),
        }
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Render the suite report; output is byte-stable for a given report.
pub fn emit_report(report: &SuiteReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::JunitXml => {
            let failures = report.reports.iter().filter(|r| !r.pass).count();
            let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
            let _ = writeln!(
                out,
                "<testsuite name=\"attack-scenarios\" tests=\"{}\" failures=\"{}\">",
                report.reports.len(),
                failures
            );
            for r in &report.reports {
                let _ = write!(
                    out,
                    "  <testcase name=\"{}\" classname=\"{}.{}\"",
                    xml_escape(&r.scenario),
                    r.stride_class.label(),
                    r.domain.label()
                );
                if r.pass {
                    out.push_str("/>\n");
                } else {
                    out.push_str(">\n");
                    for a in r.assertions.iter().filter(|a| !a.pass) {
                        let _ = writeln!(
                            out,
                            "    <failure message=\"unmet expectation\">{}</failure>",
                            xml_escape(&a.expectation.pattern.to_string())
                        );
                    }
                    if !r.audit_intact {
                        out.push_str(
                            "    <failure message=\"audit chain broken\"></failure>\n",
                        );
                    }
                    out.push_str("  </testcase>\n");
                }
            }
            out.push_str("</testsuite>\n");
            out
        }
        ReportFormat::Markdown => {
            let mut out = String::from("# Attack scenario suite\n\n");
            let _ = writeln!(out, "Seed: `{}`", report.seed);
            let _ = writeln!(out, "Aggregate digest: `{}`", report.aggregate_digest);
            let _ = writeln!(
                out,
                "Coverage: {}/{} STRIDE × trust-domain cells\n",
                report.covered_cells, report.total_cells
            );
            out.push_str("## Coverage matrix\n\n| STRIDE | device | network | backend |\n|---|---|---|---|\n");
            for stride in StrideClass::ALL {
                let _ = write!(out, "| {} ", stride.label());
                for domain in TrustDomain::ALL {
                    let cell = report
                        .coverage
                        .iter()
                        .find(|c| c.stride_class == stride && c.domain == domain)
                        .expect("matrix is complete");
                    let _ = write!(out, "| {} ", cell.scenarios.join(", "));
                }
                out.push_str("|\n");
            }
            out.push_str("\n## Results\n\n| scenario | verdict | audit | digest |\n|---|---|---|---|\n");
            for r in &report.reports {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | `{}` |",
                    r.scenario,
                    if r.pass { "pass" } else { "FAIL" },
                    if r.audit_intact { "intact" } else { "BROKEN" },
                    &r.transcript_digest[..16]
                );
            }
            out
        }
    }
}
