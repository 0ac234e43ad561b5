//! Deterministic 4G-like transport emulator: configurable RTT, jitter, and
//! packet loss over an ordered authenticated channel, with adversary hooks
//! for interception, replay, injection, and flooding. Everything runs on the
//! injected virtual clock; identical seeds give byte-identical transcripts.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use crate::canonical::sha256;
use crate::clock::{VirtualClock, SEC};
use crate::crypto::aead::{aead_open, aead_seal, AeadBox};
use crate::crypto::sig::SigSchemeId;
use crate::node::{NodeError, Transport};
use crate::pki::{validate_chain, CertificateChain};
use crate::server::wire::Message;
use crate::server::{
    check_peer_certificate, ControlServer, PeerCertVerdict, RevocationContext, Session,
};

pub const MAX_TRANSMIT_ATTEMPTS: u32 = 4; // first try + 3 retransmits

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetError {
    #[error("bad conditions string: {0}")]
    BadConditions(String),
    #[error("{side} rejected peer certificate: {reason}")]
    PeerCertRejected { side: &'static str, reason: String },
    #[error("handshake timed out")]
    Timeout,
    #[error("channel broken: frame lost after {MAX_TRANSMIT_ATTEMPTS} attempts")]
    ChannelBroken,
    #[error("no frame delivered before the deadline")]
    DeadlineExceeded,
    #[error("channel is not established")]
    NotEstablished,
    #[error("frame failed authentication")]
    FrameRejected,
}

/// Parsed from `rtt=120ms,jitter=15ms,loss=0.05,seed=42`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetConditions {
    pub rtt_ms: u64,
    pub jitter_ms: u64,
    pub loss_prob: f64,
    pub seed: u64,
}

impl Default for NetConditions {
    fn default() -> Self {
        Self { rtt_ms: 120, jitter_ms: 0, loss_prob: 0.0, seed: 0 }
    }
}

impl NetConditions {
    pub fn parse(s: &str) -> Result<Self, NetError> {
        let mut out = Self::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| NetError::BadConditions(format!("missing '=' in {part:?}")))?;
            let bad = |_| NetError::BadConditions(format!("bad value in {part:?}"));
            match key {
                "rtt" => out.rtt_ms = parse_ms(value).ok_or_else(|| bad(()))?,
                "jitter" => out.jitter_ms = parse_ms(value).ok_or_else(|| bad(()))?,
                "loss" => {
                    out.loss_prob = value.parse().map_err(|_| bad(()))?;
                    if !(0.0..=1.0).contains(&out.loss_prob) {
                        return Err(NetError::BadConditions(format!("loss out of range: {value}")));
                    }
                }
                "seed" => out.seed = value.parse().map_err(|_| bad(()))?,
                other => {
                    return Err(NetError::BadConditions(format!("unknown key {other:?}")));
                }
            }
        }
        Ok(out)
    }
}

fn parse_ms(v: &str) -> Option<u64> {
    v.strip_suffix("ms").unwrap_or(v).parse().ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Client,
    Server,
}

impl Side {
    fn index(self) -> usize {
        match self {
            Side::Client => 0,
            Side::Server => 1,
        }
    }

    pub fn peer(self) -> Side {
        match self {
            Side::Client => Side::Server,
            Side::Server => Side::Client,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelState {
    Handshaking,
    Established,
    Closed,
}

/// One endpoint's credentials plus the revocation data its peer can see.
#[derive(Debug, Clone)]
pub struct Endpoint {
    pub name: String,
    pub chain: CertificateChain,
    /// What the verifying peer knows about this endpoint's certificate.
    pub revocation: RevocationContext,
    pub emergency_banned: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TranscriptEntry {
    pub t_send: u64,
    /// None when the attempt was lost on the air.
    pub t_deliver: Option<u64>,
    pub direction: Side,
    pub size: usize,
    #[serde(with = "crate::canonical::hex_digest")]
    pub opaque_digest: [u8; 32],
}

/// A frame as the adversary sees it: sealed bytes and a digest, never the
/// protocol plaintext.
#[derive(Debug, Clone)]
pub struct RecordedFrame {
    pub direction: Side,
    pub bytes: Vec<u8>,
    pub opaque_digest: [u8; 32],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TapMode {
    Observe,
    Replay,
    Inject,
    Drop,
}

#[derive(Debug)]
pub struct AdversaryTap {
    pub mode: TapMode,
    pub recorded: Vec<RecordedFrame>,
    /// Frames the tap will still swallow in drop mode.
    pub drop_budget: u32,
}

impl AdversaryTap {
    pub fn new(mode: TapMode) -> Self {
        Self { mode, recorded: Vec::new(), drop_budget: 0 }
    }
}

#[derive(Debug, Clone)]
struct InFlight {
    deliver_at: u64,
    bytes: Vec<u8>,
}

/// An ordered, mutually authenticated, AEAD-sealed message channel over the
/// lossy link.
// Debug is written by hand so the session key never reaches logs.
pub struct Channel {
    pub state: ChannelState,
    pub conditions: NetConditions,
    pub clock: VirtualClock,
    pub transcript: Vec<TranscriptEntry>,
    pub tap: Option<AdversaryTap>,
    key: [u8; 32],
    rng: ChaCha20Rng,
    queues: [VecDeque<InFlight>; 2], // indexed by receiving side
    nonce_counters: [u64; 2],
    last_deliver: [u64; 2],
}

impl std::fmt::Debug for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Channel")
            .field("state", &self.state)
            .field("conditions", &self.conditions)
            .field("frames", &self.transcript.len())
            .finish_non_exhaustive()
    }
}

/// Mutual authentication gate + simulated handshake. `Established` requires
/// both chains valid and both peers passing revocation checks; the handshake
/// itself consumes one RTT (with loss-induced retries).
#[allow(clippy::too_many_arguments)]
pub fn connect(
    client: &Endpoint,
    server: &Endpoint,
    conditions: NetConditions,
    clock: VirtualClock,
    trusted_root_pk: &[u8],
    staple_signer_pk: &[u8],
    scheme: SigSchemeId,
    now_validity: u64,
) -> Result<Channel, NetError> {
    for (verifier, peer) in [("server", client), ("client", server)] {
        validate_chain(&peer.chain, trusted_root_pk, scheme, now_validity).map_err(|e| {
            NetError::PeerCertRejected { side: verifier, reason: e.to_string() }
        })?;
        match check_peer_certificate(
            &peer.chain.leaf,
            &peer.revocation,
            peer.emergency_banned,
            staple_signer_pk,
            scheme,
            now_validity,
        ) {
            PeerCertVerdict::Accept | PeerCertVerdict::AcceptWithWarning(_) => {}
            PeerCertVerdict::Reject(reason) => {
                return Err(NetError::PeerCertRejected {
                    side: verifier,
                    reason: reason.to_string(),
                })
            }
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(conditions.seed);
    // handshake flight: one RTT, 3 retries under loss
    let mut delivered = false;
    for _ in 0..MAX_TRANSMIT_ATTEMPTS {
        if rng.gen::<f64>() >= conditions.loss_prob {
            delivered = true;
            break;
        }
    }
    if !delivered {
        return Err(NetError::Timeout);
    }
    clock.advance(conditions.rtt_ms);

    // session key hybrid-established during the handshake; modeled as a
    // seeded derivation shared by both ends and unknown to the tap
    let key: [u8; 32] = rng.gen();
    Ok(Channel {
        state: ChannelState::Established,
        conditions,
        clock,
        transcript: Vec::new(),
        tap: None,
        key,
        rng,
        queues: [VecDeque::new(), VecDeque::new()],
        nonce_counters: [0, 0],
        last_deliver: [0, 0],
    })
}

impl Channel {
    /// Seal and transmit toward the peer of `from`. The reliability layer
    /// retransmits lost frames up to 3 times with exponential spacing, then
    /// declares the channel broken.
    pub fn send(&mut self, from: Side, plaintext: &[u8]) -> Result<(), NetError> {
        if self.state != ChannelState::Established {
            return Err(NetError::NotEstablished);
        }
        let dir = from.index();
        let mut nonce = [0u8; 12];
        nonce[0] = dir as u8;
        nonce[4..].copy_from_slice(&self.nonce_counters[dir].to_be_bytes());
        self.nonce_counters[dir] += 1;
        let sealed = aead_seal(&self.key, &nonce, plaintext, &[dir as u8]).encode();
        self.transmit_raw(from, sealed)
    }

    /// Transmit already-sealed bytes (also the replay/injection entry point).
    pub fn transmit_raw(&mut self, from: Side, bytes: Vec<u8>) -> Result<(), NetError> {
        let digest = sha256(&bytes);
        if let Some(tap) = self.tap.as_mut() {
            tap.recorded.push(RecordedFrame {
                direction: from,
                bytes: bytes.clone(),
                opaque_digest: digest,
            });
            if tap.mode == TapMode::Drop && tap.drop_budget > 0 {
                tap.drop_budget -= 1;
                self.transcript.push(TranscriptEntry {
                    t_send: self.clock.now(),
                    t_deliver: None,
                    direction: from,
                    size: bytes.len(),
                    opaque_digest: digest,
                });
                return Err(NetError::ChannelBroken);
            }
        }

        let now = self.clock.now();
        let to = from.peer().index();
        for attempt in 0..MAX_TRANSMIT_ATTEMPTS {
            let retrans_offset = ((1u64 << attempt) - 1) * self.conditions.rtt_ms;
            let lost = self.rng.gen::<f64>() < self.conditions.loss_prob;
            if lost {
                self.transcript.push(TranscriptEntry {
                    t_send: now + retrans_offset,
                    t_deliver: None,
                    direction: from,
                    size: bytes.len(),
                    opaque_digest: digest,
                });
                continue;
            }
            let jitter = if self.conditions.jitter_ms == 0 {
                0
            } else {
                self.rng.gen_range(0..=2 * self.conditions.jitter_ms)
            };
            let one_way = self.conditions.rtt_ms / 2 + jitter;
            let one_way = one_way.saturating_sub(self.conditions.jitter_ms);
            // in-order delivery: never before the previous frame on this path
            let deliver_at = (now + retrans_offset + one_way).max(self.last_deliver[to]);
            self.last_deliver[to] = deliver_at;
            self.transcript.push(TranscriptEntry {
                t_send: now + retrans_offset,
                t_deliver: Some(deliver_at),
                direction: from,
                size: bytes.len(),
                opaque_digest: digest,
            });
            self.queues[to].push_back(InFlight { deliver_at, bytes });
            return Ok(());
        }
        self.state = ChannelState::Closed;
        Err(NetError::ChannelBroken)
    }

    /// Receive the next in-order frame for `side`, advancing virtual time to
    /// its delivery instant.
    pub fn recv(&mut self, side: Side, deadline: u64) -> Result<Vec<u8>, NetError> {
        let frame = match self.queues[side.index()].front() {
            Some(f) if f.deliver_at <= deadline => self.queues[side.index()].pop_front().unwrap(),
            _ => return Err(NetError::DeadlineExceeded),
        };
        self.clock.advance_to(frame.deliver_at);
        let (sealed, _) = AeadBox::decode(&frame.bytes).ok_or(NetError::FrameRejected)?;
        aead_open(&self.key, &sealed).map_err(|_| NetError::FrameRejected)
    }

    /// Deliver a recorded frame verbatim into the target direction's queue.
    /// The transport accepts it; higher layers must reject it.
    pub fn adversary_replay(&mut self, frame: &RecordedFrame) -> Result<(), NetError> {
        self.transmit_raw(frame.direction, frame.bytes.clone())
    }

    pub fn adversary_inject(&mut self, toward: Side, bytes: Vec<u8>) -> Result<(), NetError> {
        self.transmit_raw(toward.peer(), bytes)
    }

    /// JSON-lines transcript dump, one frame attempt per line.
    pub fn transcript_json_lines(&self) -> String {
        self.transcript
            .iter()
            .map(|e| serde_json::to_string(e).expect("transcript serializes"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Node-side transport that frames wire messages through a [`Channel`] to an
/// in-process [`ControlServer`] on the other end.
pub struct NetTransport<'a> {
    pub channel: &'a mut Channel,
    pub server: &'a ControlServer,
    pub session: Session,
    pub recv_window_ms: u64,
}

impl<'a> NetTransport<'a> {
    pub fn new(channel: &'a mut Channel, server: &'a ControlServer) -> Self {
        Self { channel, server, session: Session::default(), recv_window_ms: 10 * SEC }
    }
}

impl Transport for NetTransport<'_> {
    fn exchange(&mut self, msg: &Message) -> Result<Message, NodeError> {
        self.channel.send(Side::Client, &msg.to_frame()).map_err(|_| NodeError::ChannelDown)?;
        let deadline = self.channel.clock.now() + self.recv_window_ms;
        let inbound = self.channel.recv(Side::Server, deadline).map_err(|_| NodeError::ChannelDown)?;
        let (request, _) = Message::from_frame(&inbound)
            .map_err(|e| NodeError::ProtocolViolation(e.to_string()))?;
        let reply = self.server.handle_message(&mut self.session, &request, self.channel.clock.now());
        self.channel.send(Side::Server, &reply.to_frame()).map_err(|_| NodeError::ChannelDown)?;
        let deadline = self.channel.clock.now() + self.recv_window_ms;
        let outbound = self.channel.recv(Side::Client, deadline).map_err(|_| NodeError::ChannelDown)?;
        let (response, _) = Message::from_frame(&outbound)
            .map_err(|e| NodeError::ProtocolViolation(e.to_string()))?;
        Ok(response)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FloodStats {
    pub legit_sent: u64,
    pub legit_admitted: u64,
    pub attacker_sent: u64,
    pub attacker_admitted: u64,
    pub legit_admitted_pct: f64,
    pub attacker_admitted_pct: f64,
    pub p99_added_latency_ms: f64,
}

/// Requests the simulated front-end can serve per second; queueing beyond
/// this shows up as added latency.
const SERVICE_RATE_PER_SEC: f64 = 20_000.0;

/// Drive an unauthenticated flood plus authenticated legitimate traffic at
/// the server's admission layer for `duration_s` simulated seconds.
pub fn flood(
    server: &ControlServer,
    attack_rate_per_sec: u64,
    duration_s: u64,
    legit_clients: &[String],
    legit_rate_per_sec: u64,
    start_ms: u64,
) -> FloodStats {
    assert!(attack_rate_per_sec <= 10_000, "harness bound: rate <= 10,000 req/s");
    let mut stats = FloodStats {
        legit_sent: 0,
        legit_admitted: 0,
        attacker_sent: 0,
        attacker_admitted: 0,
        legit_admitted_pct: 0.0,
        attacker_admitted_pct: 0.0,
        p99_added_latency_ms: 0.0,
    };
    let mut latencies: Vec<f64> = Vec::new();
    for sec in 0..duration_s {
        let now = start_ms + sec * SEC;
        let mut served_this_sec = 0u64;
        // legitimate clients first within the slot; interleaving does not
        // change token-bucket outcomes, only the latency model
        for client in legit_clients {
            for _ in 0..legit_rate_per_sec {
                stats.legit_sent += 1;
                if server.rate_limit_admit(Some(client), now)
                    == crate::server::ratelimit::Admission::Admit
                {
                    stats.legit_admitted += 1;
                    served_this_sec += 1;
                    latencies.push(served_this_sec as f64 / SERVICE_RATE_PER_SEC * 1_000.0);
                }
            }
        }
        for _ in 0..attack_rate_per_sec {
            stats.attacker_sent += 1;
            if server.rate_limit_admit(None, now) == crate::server::ratelimit::Admission::Admit {
                stats.attacker_admitted += 1;
            }
        }
    }
    if stats.legit_sent > 0 {
        stats.legit_admitted_pct = 100.0 * stats.legit_admitted as f64 / stats.legit_sent as f64;
    }
    if stats.attacker_sent > 0 {
        stats.attacker_admitted_pct =
            100.0 * stats.attacker_admitted as f64 / stats.attacker_sent as f64;
    }
    if !latencies.is_empty() {
        latencies.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = ((latencies.len() as f64) * 0.99).ceil() as usize - 1;
        stats.p99_added_latency_ms = latencies[idx.min(latencies.len() - 1)];
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::sig::sig_keygen;
    use crate::node::{Lifecycle, Node};
    use crate::pki::{CertAuthority, Csr};
    use crate::server::policy::{DevicePolicy, GeoFix, Polygon, TimeWindow};
    use crate::server::wire::{self, DenyReason};
    use crate::server::{DefenseConfig, SuiteProfile};

    const NOW: u64 = 1_787_745_600_000;

    struct Pki {
        ca: CertAuthority,
        client: Endpoint,
        server: Endpoint,
    }

    fn pki() -> Pki {
        let mut ca = CertAuthority::new(SigSchemeId::Test, &[7u8; 32], NOW);
        let ck = sig_keygen(SigSchemeId::Test, &[1u8; 32]).unwrap();
        let sk = sig_keygen(SigSchemeId::Test, &[2u8; 32]).unwrap();
        let client_chain = ca.issue_leaf(&Csr::new("node-1", &ck), NOW).unwrap();
        let server_chain = ca.issue_leaf(&Csr::new("cloud", &sk), NOW).unwrap();
        Pki {
            client: Endpoint {
                name: "node-1".into(),
                chain: client_chain,
                revocation: RevocationContext::default(),
                emergency_banned: false,
            },
            server: Endpoint {
                name: "cloud".into(),
                chain: server_chain,
                revocation: RevocationContext::default(),
                emergency_banned: false,
            },
            ca,
        }
    }

    fn channel_with(p: &Pki, conditions: NetConditions, clock: VirtualClock) -> Result<Channel, NetError> {
        connect(
            &p.client,
            &p.server,
            conditions,
            clock,
            p.ca.root_public_key(),
            p.ca.staple_signer_public_key(),
            SigSchemeId::Test,
            NOW + 1,
        )
    }

    #[test]
    fn conditions_string_parses() {
        let c = NetConditions::parse("rtt=120ms,jitter=15ms,loss=0.05,seed=42").unwrap();
        assert_eq!(c, NetConditions { rtt_ms: 120, jitter_ms: 15, loss_prob: 0.05, seed: 42 });
        assert_eq!(NetConditions::parse("").unwrap(), NetConditions::default());
        assert!(NetConditions::parse("loss=1.5").is_err());
        assert!(NetConditions::parse("bogus=1").is_err());
        assert!(NetConditions::parse("rtt").is_err());
    }

    #[test]
    fn valid_credentials_establish() {
        let p = pki();
        let clock = VirtualClock::new(NOW);
        let ch = channel_with(&p, NetConditions::default(), clock.clone()).unwrap();
        assert_eq!(ch.state, ChannelState::Established);
        assert_eq!(clock.now(), NOW + 120, "handshake consumes one RTT");
    }

    #[test]
    fn revoked_client_cert_rejected_by_server() {
        let mut p = pki();
        let serial = p.client.chain.leaf.serial;
        p.client.revocation.staple = Some(p.ca.sign_staple(serial, true, NOW));
        let err = channel_with(&p, NetConditions::default(), VirtualClock::new(NOW)).unwrap_err();
        assert!(matches!(err, NetError::PeerCertRejected { side: "server", .. }), "{err:?}");
    }

    #[test]
    fn banned_peer_rejected_despite_good_staple() {
        let mut p = pki();
        let serial = p.client.chain.leaf.serial;
        p.client.revocation.staple = Some(p.ca.sign_staple(serial, false, NOW));
        p.client.emergency_banned = true;
        assert!(channel_with(&p, NetConditions::default(), VirtualClock::new(NOW)).is_err());
    }

    #[test]
    fn total_loss_times_out() {
        let p = pki();
        let conditions = NetConditions { loss_prob: 1.0, ..Default::default() };
        assert_eq!(
            channel_with(&p, conditions, VirtualClock::new(NOW)).unwrap_err(),
            NetError::Timeout
        );
    }

    #[test]
    fn one_way_latency_is_half_rtt() {
        let p = pki();
        let clock = VirtualClock::new(NOW);
        let mut ch = channel_with(&p, NetConditions::default(), clock.clone()).unwrap();
        let t0 = clock.now();
        ch.send(Side::Client, b"ping").unwrap();
        let got = ch.recv(Side::Server, t0 + 1_000).unwrap();
        assert_eq!(got, b"ping");
        assert_eq!(clock.now(), t0 + 60);
    }

    #[test]
    fn recv_honors_deadline_and_order() {
        let p = pki();
        let clock = VirtualClock::new(NOW);
        let mut ch = channel_with(&p, NetConditions::default(), clock.clone()).unwrap();
        assert_eq!(ch.recv(Side::Server, clock.now() + 10).unwrap_err(), NetError::DeadlineExceeded);
        ch.send(Side::Client, b"a").unwrap();
        ch.send(Side::Client, b"b").unwrap();
        assert_eq!(ch.recv(Side::Server, u64::MAX).unwrap(), b"a");
        assert_eq!(ch.recv(Side::Server, u64::MAX).unwrap(), b"b");
    }

    #[test]
    fn same_seed_gives_identical_transcripts() {
        let p = pki();
        let conditions = NetConditions { jitter_ms: 15, loss_prob: 0.05, seed: 42, ..Default::default() };
        let mut transcripts = Vec::new();
        for _ in 0..2 {
            let clock = VirtualClock::new(NOW);
            let mut ch = channel_with(&p, conditions, clock).unwrap();
            for i in 0..50u32 {
                let _ = ch.send(Side::Client, &i.to_be_bytes());
            }
            transcripts.push(ch.transcript_json_lines());
        }
        assert_eq!(transcripts[0], transcripts[1]);
        assert!(!transcripts[0].is_empty());
    }

    #[test]
    fn broken_channel_rate_matches_closed_form() {
        // P(all 4 attempts lost) at loss 0.5 is 0.5^4 = 0.0625
        let p = pki();
        let clock = VirtualClock::new(NOW);
        let mut ch = channel_with(&p, NetConditions { seed: 1, ..Default::default() }, clock).unwrap();
        ch.conditions.loss_prob = 0.5;
        let trials = 10_000;
        let mut broken = 0u32;
        for _ in 0..trials {
            if ch.send(Side::Client, b"x") == Err(NetError::ChannelBroken) {
                broken += 1;
                ch.state = ChannelState::Established; // fresh trial
            }
        }
        let rate = broken as f64 / trials as f64;
        assert!((rate - 0.0625).abs() < 0.02, "observed {rate}");
    }

    #[test]
    fn observe_tap_sees_only_sealed_bytes() {
        let p = pki();
        let clock = VirtualClock::new(NOW);
        let mut ch = channel_with(&p, NetConditions::default(), clock).unwrap();
        ch.tap = Some(AdversaryTap::new(TapMode::Observe));
        let secret = b"top-secret-feature-vector";
        ch.send(Side::Client, secret).unwrap();
        let tap = ch.tap.as_ref().unwrap();
        assert_eq!(tap.recorded.len(), 1);
        let bytes = &tap.recorded[0].bytes;
        assert!(
            !bytes.windows(secret.len()).any(|w| w == secret),
            "plaintext must not appear in tapped frames"
        );
    }

    #[test]
    fn drop_tap_breaks_the_frame() {
        let p = pki();
        let mut ch = channel_with(&p, NetConditions::default(), VirtualClock::new(NOW)).unwrap();
        let mut tap = AdversaryTap::new(TapMode::Drop);
        tap.drop_budget = 1;
        ch.tap = Some(tap);
        assert_eq!(ch.send(Side::Client, b"x").unwrap_err(), NetError::ChannelBroken);
        assert_eq!(ch.state, ChannelState::Established, "drop is per frame, not fatal");
        ch.send(Side::Client, b"y").unwrap();
        assert_eq!(ch.recv(Side::Server, u64::MAX).unwrap(), b"y");
    }

    #[test]
    fn injected_garbage_fails_frame_authentication() {
        let p = pki();
        let mut ch = channel_with(&p, NetConditions::default(), VirtualClock::new(NOW)).unwrap();
        ch.adversary_inject(Side::Server, b"not a sealed frame".to_vec()).unwrap();
        assert_eq!(ch.recv(Side::Server, u64::MAX).unwrap_err(), NetError::FrameRejected);
    }

    fn stages() -> Vec<(String, Vec<u8>)> {
        vec![
            ("boot-rom".into(), b"rom-v1".to_vec()),
            ("bootloader".into(), b"loader-v3".to_vec()),
            ("kernel".into(), b"kernel-v7".to_vec()),
        ]
    }

    fn policy() -> DevicePolicy {
        DevicePolicy {
            geofence: Polygon {
                vertices: vec![(-1.0, -1.0), (-1.0, 1.0), (1.0, 1.0), (1.0, -1.0)],
            },
            approved_points: vec![],
            time_window: TimeWindow::ALL_DAY,
            bound_pcrs: vec![0, 1, 2],
        }
    }

    #[test]
    fn cold_boot_over_the_emulated_link_and_replay_is_rejected() {
        let p = pki();
        let clock = VirtualClock::new(NOW);
        let server = ControlServer::new(SuiteProfile::test(), DefenseConfig::enabled(), 5, NOW);
        server.add_bootstrap_token("factory");
        let mut node =
            Node::provision(&server, "dev-1", "factory", policy(), &stages(), 21, clock.clone())
                .unwrap();

        let mut ch = channel_with(&p, NetConditions::default(), clock.clone()).unwrap();
        ch.tap = Some(AdversaryTap::new(TapMode::Observe));
        {
            let mut t = NetTransport::new(&mut ch, &server);
            let fix = GeoFix::new(0.1, 0.1, clock.now()).unwrap();
            assert_eq!(node.cold_boot(&mut t, &stages(), fix).unwrap(), Lifecycle::Operational);
        }

        // find the recorded client frame carrying the quote and replay it
        let recorded: Vec<RecordedFrame> = ch.tap.as_ref().unwrap().recorded.clone();
        let mut session = crate::server::Session::default();
        let mut saw_replay_denial = false;
        for frame in recorded.iter().filter(|f| f.direction == Side::Client) {
            ch.adversary_replay(frame).unwrap();
            let bytes = ch.recv(Side::Server, u64::MAX).unwrap();
            let (msg, _) = wire::Message::from_frame(&bytes).unwrap();
            if let wire::Message::QuoteSubmit(_) = &msg {
                match server.handle_message(&mut session, &msg, clock.now()) {
                    wire::Message::Deny(d) => {
                        assert_eq!(d.reason, DenyReason::StaleNonce);
                        saw_replay_denial = true;
                    }
                    other => panic!("replayed quote accepted: {}", other.type_name()),
                }
            }
        }
        assert!(saw_replay_denial, "transcript must contain a quote_submit frame");
    }

    #[test]
    fn flood_admits_legitimate_traffic() {
        let server = ControlServer::new(SuiteProfile::test(), DefenseConfig::enabled(), 5, NOW);
        let clients: Vec<String> = (0..10).map(|i| format!("client-{i}")).collect();
        let stats = flood(&server, 5_000, 10, &clients, 1, NOW);
        assert_eq!(stats.legit_sent, 100);
        assert!(stats.legit_admitted_pct >= 90.0, "{stats:?}");
        // unauthenticated attackers share one global bucket
        assert!(stats.attacker_admitted <= 50 + 25 * 10, "{stats:?}");
        assert!(stats.p99_added_latency_ms < 10.0);

        let calm = flood(&server, 0, 10, &clients, 1, NOW + 1_000_000);
        assert_eq!(calm.legit_admitted_pct, 100.0);
    }
}
