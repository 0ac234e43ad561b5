//! 3-2-1 backup pipeline: a hot encrypted container with signed SHA-256
//! manifests, weekly cold archives wrapped with the hybrid scheme ("PQAR"
//! files), nightly client-side-encrypted cloud replicas, and 30-day restore
//! tests. All cadences run on the injected virtual clock.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::audit::AuditChain;
use crate::canonical::{sha256, to_canonical_bytes};
use crate::clock::{day_of_week, DAY};
use crate::crypto::aead::{aead_open, aead_seal, AeadBox};
use crate::crypto::hybrid::{
    hybrid_establish, hybrid_recover, HybridCiphertext, LABEL_CLOUD_REPLICA, LABEL_COLD_ARCHIVE,
};
use crate::crypto::kem::KemSchemeId;
use crate::crypto::sig::{sign, verify, SigKeyPair, SigSchemeId};
use crate::volume::{create_volume, read_record, unlock_volume, write_record, Container, UnlockKey};

pub const PQAR_MAGIC: &[u8; 4] = b"PQAR";
pub const PQAR_VERSION: u8 = 1;
pub const HOT_LABEL: &str = "db-hot";
pub const RESTORE_TEST_PERIOD_MS: u64 = 30 * DAY;
/// Cold archives run on Sundays (0 = Monday).
pub const COLD_WEEKDAY: u64 = 6;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BackupError {
    #[error("empty snapshot")]
    EmptySnapshot,
    #[error("manifest signature invalid")]
    BadManifestSignature,
    #[error("cold-disk window is closed")]
    WindowClosed,
    #[error("archive signature invalid")]
    BadSignature,
    #[error("archive failed authentication")]
    AuthFailure,
    #[error("unsupported scheme id {0}")]
    UnsupportedScheme(u8),
    #[error("malformed archive")]
    MalformedArchive,
    #[error("bucket unavailable")]
    BucketUnavailable,
    #[error("no such object")]
    NoSuchObject,
}

// ---------------------------------------------------------------------------
// Manifests

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub size: u64,
    #[serde(with = "crate::canonical::hex_digest")]
    pub sha256: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackupManifest {
    pub created_at: u64,
    pub entries: BTreeMap<String, ManifestEntry>,
    #[serde(with = "crate::canonical::hex_bytes")]
    pub signature: Vec<u8>,
}

#[derive(Serialize)]
struct ManifestBody<'a> {
    created_at: u64,
    entries: &'a BTreeMap<String, ManifestEntry>,
}

pub fn build_manifest(
    files: &[(String, &[u8])],
    signer: &SigKeyPair,
    created_at: u64,
) -> BackupManifest {
    let entries: BTreeMap<String, ManifestEntry> = files
        .iter()
        .map(|(path, bytes)| {
            (path.clone(), ManifestEntry { size: bytes.len() as u64, sha256: sha256(bytes) })
        })
        .collect();
    let body = ManifestBody { created_at, entries: &entries };
    let signature =
        sign(signer.scheme, &signer.secret_key, &to_canonical_bytes(&body)).expect("signer valid");
    BackupManifest { created_at, entries, signature }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ManifestReport {
    pub missing: Vec<String>,
    pub extra: Vec<String>,
    pub modified: Vec<String>,
}

impl ManifestReport {
    pub fn is_ok(&self) -> bool {
        self.missing.is_empty() && self.extra.is_empty() && self.modified.is_empty()
    }
}

/// Exact set comparison of the manifest against the file set: missing,
/// extra, and modified paths are all reported. A manifest whose signature
/// does not verify is rejected outright.
pub fn verify_manifest(
    manifest: &BackupManifest,
    files: &[(String, &[u8])],
    signer_pk: &[u8],
    scheme: SigSchemeId,
) -> Result<ManifestReport, BackupError> {
    let body = ManifestBody { created_at: manifest.created_at, entries: &manifest.entries };
    if !verify(scheme, signer_pk, &to_canonical_bytes(&body), &manifest.signature) {
        return Err(BackupError::BadManifestSignature);
    }
    let mut report = ManifestReport::default();
    let present: BTreeMap<&str, &[u8]> =
        files.iter().map(|(p, b)| (p.as_str(), *b)).collect();
    for (path, entry) in &manifest.entries {
        match present.get(path.as_str()) {
            None => report.missing.push(path.clone()),
            Some(bytes) => {
                if bytes.len() as u64 != entry.size || sha256(bytes) != entry.sha256 {
                    report.modified.push(path.clone());
                }
            }
        }
    }
    for path in present.keys() {
        if !manifest.entries.contains_key(*path) {
            report.extra.push(path.to_string());
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Hot tier

/// Daily hot backup: the database snapshot goes into an encrypted container
/// labeled "db-hot" with a fresh salt and master key; the signed manifest
/// covers the container file itself.
pub fn hot_backup(
    snapshot: &[u8],
    unlock_key_bytes: &[u8; 32],
    signer: &SigKeyPair,
    now: u64,
    rng: &mut ChaCha20Rng,
) -> Result<(Vec<u8>, BackupManifest), BackupError> {
    if snapshot.is_empty() {
        return Err(BackupError::EmptySnapshot);
    }
    let unlock = UnlockKey { key_bytes: *unlock_key_bytes, grant_id: [0u8; 16], received_at: now };
    let salt: [u8; 16] = rng.gen();
    let master: [u8; 32] = rng.gen();
    let mut container = create_volume(&master, &unlock, HOT_LABEL, &salt);
    let handle = unlock_volume(&container, &unlock).expect("fresh container unlocks");
    write_record(&mut container, &handle, snapshot).expect("fresh container writable");
    let bytes = container.encode();
    let day = now / DAY;
    let manifest =
        build_manifest(&[(format!("{HOT_LABEL}-{day}.elks"), bytes.as_slice())], signer, now);
    Ok((bytes, manifest))
}

/// Open a hot container and return the snapshot record.
pub fn hot_restore(container_bytes: &[u8], unlock_key_bytes: &[u8; 32]) -> Result<Vec<u8>, BackupError> {
    let container = Container::decode(container_bytes).map_err(|_| BackupError::MalformedArchive)?;
    let unlock = UnlockKey { key_bytes: *unlock_key_bytes, grant_id: [0u8; 16], received_at: 0 };
    let handle = unlock_volume(&container, &unlock).map_err(|_| BackupError::AuthFailure)?;
    read_record(&container, &handle, 0).map_err(|_| BackupError::AuthFailure)
}

// ---------------------------------------------------------------------------
// PQAR archives (cold + cloud share the format; the KDF label differs)

fn kem_id_byte(s: KemSchemeId) -> u8 {
    match s {
        KemSchemeId::Test => 0,
        KemSchemeId::Classical => 1,
        KemSchemeId::Pq => 2,
    }
}

fn kem_from_byte(b: u8) -> Result<KemSchemeId, BackupError> {
    match b {
        0 => Ok(KemSchemeId::Test),
        1 => Ok(KemSchemeId::Classical),
        2 => Ok(KemSchemeId::Pq),
        other => Err(BackupError::UnsupportedScheme(other)),
    }
}

fn sig_id_byte(s: SigSchemeId) -> u8 {
    match s {
        SigSchemeId::Test => 0,
        SigSchemeId::Classical => 1,
        SigSchemeId::Pq => 2,
    }
}

fn sig_from_byte(b: u8) -> Result<SigSchemeId, BackupError> {
    match b {
        0 => Ok(SigSchemeId::Test),
        1 => Ok(SigSchemeId::Classical),
        2 => Ok(SigSchemeId::Pq),
        other => Err(BackupError::UnsupportedScheme(other)),
    }
}

/// Deterministic TAR-like payload: {name_len(2) ‖ name ‖ size(8) ‖ bytes}*.
pub fn pack_files(files: &[(String, Vec<u8>)]) -> Vec<u8> {
    let mut out = Vec::new();
    for (name, bytes) in files {
        out.extend_from_slice(&(name.len() as u16).to_be_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(bytes.len() as u64).to_be_bytes());
        out.extend_from_slice(bytes);
    }
    out
}

pub fn unpack_files(mut bytes: &[u8]) -> Result<Vec<(String, Vec<u8>)>, BackupError> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        if bytes.len() < 2 {
            return Err(BackupError::MalformedArchive);
        }
        let name_len = u16::from_be_bytes(bytes[..2].try_into().unwrap()) as usize;
        bytes = &bytes[2..];
        if bytes.len() < name_len + 8 {
            return Err(BackupError::MalformedArchive);
        }
        let name = String::from_utf8(bytes[..name_len].to_vec())
            .map_err(|_| BackupError::MalformedArchive)?;
        bytes = &bytes[name_len..];
        let size = u64::from_be_bytes(bytes[..8].try_into().unwrap()) as usize;
        bytes = &bytes[8..];
        if bytes.len() < size {
            return Err(BackupError::MalformedArchive);
        }
        out.push((name, bytes[..size].to_vec()));
        bytes = &bytes[size..];
    }
    Ok(out)
}

fn build_pqar(
    payload: &[u8],
    label: &str,
    kem_classical: KemSchemeId,
    pk_classical: &[u8],
    kem_pq: KemSchemeId,
    pk_pq: &[u8],
    signer: &SigKeyPair,
    rng: &mut ChaCha20Rng,
) -> Vec<u8> {
    let randomness: [u8; 64] = {
        let mut r = [0u8; 64];
        rng.fill(&mut r[..]);
        r
    };
    let (wrapped, session_key) =
        hybrid_establish(kem_classical, pk_classical, kem_pq, pk_pq, &randomness, label)
            .expect("recipient keys valid");
    let nonce: [u8; 12] = rng.gen();
    let sealed = aead_seal(&session_key, &nonce, payload, label.as_bytes());

    let mut out = Vec::new();
    out.extend_from_slice(PQAR_MAGIC);
    out.push(PQAR_VERSION);
    out.push(kem_id_byte(kem_classical));
    out.push(kem_id_byte(kem_pq));
    out.push(sig_id_byte(signer.scheme));
    out.extend_from_slice(&(wrapped.ct_classical.len() as u32).to_be_bytes());
    out.extend_from_slice(&wrapped.ct_classical);
    out.extend_from_slice(&(wrapped.ct_pq.len() as u32).to_be_bytes());
    out.extend_from_slice(&wrapped.ct_pq);
    out.extend_from_slice(&(label.len() as u16).to_be_bytes());
    out.extend_from_slice(label.as_bytes());
    out.extend_from_slice(&sealed.encode());
    // signature over everything so far: header ‖ wrapped key ‖ sealed payload
    let signature =
        sign(signer.scheme, &signer.secret_key, &sha256(&out)).expect("signer valid");
    out.extend_from_slice(&(signature.len() as u32).to_be_bytes());
    out.extend_from_slice(&signature);
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8], BackupError> {
    if bytes.len() < n {
        return Err(BackupError::MalformedArchive);
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

/// Verify-then-decrypt opening of a PQAR blob. The signature check happens
/// before any decryption; no partial plaintext can escape.
pub fn open_pqar(
    bytes: &[u8],
    sk_classical: &[u8],
    sk_pq: &[u8],
    signer_pk: &[u8],
) -> Result<Vec<u8>, BackupError> {
    let mut rest = bytes;
    let magic = take(&mut rest, 4)?;
    if magic != PQAR_MAGIC {
        return Err(BackupError::MalformedArchive);
    }
    if take(&mut rest, 1)?[0] != PQAR_VERSION {
        return Err(BackupError::MalformedArchive);
    }
    let kem_c = kem_from_byte(take(&mut rest, 1)?[0])?;
    let kem_pq = kem_from_byte(take(&mut rest, 1)?[0])?;
    let sig_scheme = sig_from_byte(take(&mut rest, 1)?[0])?;
    let ct_c_len = u32::from_be_bytes(take(&mut rest, 4)?.try_into().unwrap()) as usize;
    let ct_c = take(&mut rest, ct_c_len)?.to_vec();
    let ct_pq_len = u32::from_be_bytes(take(&mut rest, 4)?.try_into().unwrap()) as usize;
    let ct_pq = take(&mut rest, ct_pq_len)?.to_vec();
    let label_len = u16::from_be_bytes(take(&mut rest, 2)?.try_into().unwrap()) as usize;
    let label = String::from_utf8(take(&mut rest, label_len)?.to_vec())
        .map_err(|_| BackupError::MalformedArchive)?;
    let (sealed, used) = AeadBox::decode(rest).ok_or(BackupError::MalformedArchive)?;
    let mut rest = &rest[used..];
    let sig_len = u32::from_be_bytes(take(&mut rest, 4)?.try_into().unwrap()) as usize;
    let signature = take(&mut rest, sig_len)?;

    let signed_portion = &bytes[..bytes.len() - 4 - sig_len];
    if !verify(sig_scheme, signer_pk, &sha256(signed_portion), signature) {
        return Err(BackupError::BadSignature);
    }

    let wrapped = HybridCiphertext {
        scheme_classical: kem_c,
        scheme_pq: kem_pq,
        ct_classical: ct_c,
        ct_pq: ct_pq,
        kdf_label: label,
    };
    let session_key =
        hybrid_recover(sk_classical, sk_pq, &wrapped).map_err(|_| BackupError::AuthFailure)?;
    aead_open(&session_key, &sealed).map_err(|_| BackupError::AuthFailure)
}

/// Weekly cold archive, writable only inside the backup window (the emulated
/// offline disk is attached on Sundays).
#[allow(clippy::too_many_arguments)]
pub fn cold_archive(
    files: &[(String, Vec<u8>)],
    kem_classical: KemSchemeId,
    pk_classical: &[u8],
    kem_pq: KemSchemeId,
    pk_pq: &[u8],
    signer: &SigKeyPair,
    now: u64,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<u8>, BackupError> {
    if files.is_empty() {
        return Err(BackupError::EmptySnapshot);
    }
    if !cold_window_open(now) {
        return Err(BackupError::WindowClosed);
    }
    Ok(build_pqar(
        &pack_files(files),
        LABEL_COLD_ARCHIVE,
        kem_classical,
        pk_classical,
        kem_pq,
        pk_pq,
        signer,
        rng,
    ))
}

pub fn open_archive(
    bytes: &[u8],
    sk_classical: &[u8],
    sk_pq: &[u8],
    signer_pk: &[u8],
) -> Result<Vec<(String, Vec<u8>)>, BackupError> {
    unpack_files(&open_pqar(bytes, sk_classical, sk_pq, signer_pk)?)
}

pub fn cold_window_open(now: u64) -> bool {
    day_of_week(now) == COLD_WEEKDAY
}

// ---------------------------------------------------------------------------
// Cloud tier

/// Emulated object store. Objects are client-side ciphertext; the provider
/// additionally wraps them at rest on its own disk, but the serving path
/// never needs the provider key — client restores depend only on client keys.
#[derive(Debug)]
pub struct CloudBucket {
    pub root: PathBuf,
    objects: BTreeMap<String, Vec<u8>>,
    provider_key: Option<[u8; 32]>,
    next_id: u64,
    /// Remaining `put` calls that fail with a transient outage.
    pub outage_countdown: u32,
}

impl CloudBucket {
    pub fn new(root: PathBuf, provider_key: [u8; 32]) -> Self {
        Self {
            root,
            objects: BTreeMap::new(),
            provider_key: Some(provider_key),
            next_id: 0,
            outage_countdown: 0,
        }
    }

    pub fn put(&mut self, client_ciphertext: &[u8], rng: &mut ChaCha20Rng) -> Result<String, BackupError> {
        if self.outage_countdown > 0 {
            self.outage_countdown -= 1;
            return Err(BackupError::BucketUnavailable);
        }
        let id = format!("obj-{:08}", self.next_id);
        self.next_id += 1;
        self.objects.insert(id.clone(), client_ciphertext.to_vec());
        // at-rest provider wrap, written to the emulated cloud medium
        if let Some(pk) = self.provider_key {
            let nonce: [u8; 12] = rng.gen();
            let at_rest = aead_seal(&pk, &nonce, client_ciphertext, id.as_bytes()).encode();
            std::fs::create_dir_all(&self.root).ok();
            std::fs::write(self.root.join(&id), at_rest).ok();
        }
        Ok(id)
    }

    /// Serving path: returns the client-side ciphertext as stored.
    pub fn get(&self, id: &str) -> Result<Vec<u8>, BackupError> {
        self.objects.get(id).cloned().ok_or(BackupError::NoSuchObject)
    }

    /// Models the provider rotating away or losing its at-rest key; client
    /// restores must be unaffected.
    pub fn discard_provider_key(&mut self) {
        self.provider_key = None;
    }

    /// Object listing: ids and ciphertext sizes only.
    pub fn list(&self) -> Vec<(String, u64)> {
        self.objects.iter().map(|(id, b)| (id.clone(), b.len() as u64)).collect()
    }
}

/// Nightly cloud replica: client-side hybrid encryption before upload, with
/// up to 3 retries across transient outages.
#[allow(clippy::too_many_arguments)]
pub fn cloud_replicate(
    bucket: &mut CloudBucket,
    snapshot: &[u8],
    kem_classical: KemSchemeId,
    pk_classical: &[u8],
    kem_pq: KemSchemeId,
    pk_pq: &[u8],
    signer: &SigKeyPair,
    rng: &mut ChaCha20Rng,
) -> Result<String, BackupError> {
    let blob = build_pqar(
        &pack_files(&[("snapshot".to_string(), snapshot.to_vec())]),
        LABEL_CLOUD_REPLICA,
        kem_classical,
        pk_classical,
        kem_pq,
        pk_pq,
        signer,
        rng,
    );
    let mut last = BackupError::BucketUnavailable;
    for _ in 0..4 {
        match bucket.put(&blob, rng) {
            Ok(id) => return Ok(id),
            Err(e) => last = e,
        }
    }
    Err(last)
}

pub fn cloud_restore(
    bucket: &CloudBucket,
    id: &str,
    sk_classical: &[u8],
    sk_pq: &[u8],
    signer_pk: &[u8],
) -> Result<Vec<u8>, BackupError> {
    let blob = bucket.get(id)?;
    let files = open_archive(&blob, sk_classical, sk_pq, signer_pk)?;
    files
        .into_iter()
        .find(|(name, _)| name == "snapshot")
        .map(|(_, bytes)| bytes)
        .ok_or(BackupError::MalformedArchive)
}

// ---------------------------------------------------------------------------
// Schedule + restore tests

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Hot,
    Cold,
    Cloud,
    RestoreTest,
}

/// Next-due bookkeeping for the four cadences: hot daily, cloud nightly,
/// cold weekly (Sunday window), restore test every 30 days.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackupSchedule {
    last_hot_day: Option<u64>,
    last_cloud_day: Option<u64>,
    last_cold_day: Option<u64>,
    last_restore_at: u64,
}

impl BackupSchedule {
    pub fn new(start: u64) -> Self {
        Self {
            last_hot_day: None,
            last_cloud_day: None,
            last_cold_day: None,
            last_restore_at: start,
        }
    }

    pub fn restore_due(&self, now: u64) -> bool {
        now >= self.last_restore_at + RESTORE_TEST_PERIOD_MS
    }

    /// Tiers due at `now`; marks them as run.
    pub fn due_tiers(&mut self, now: u64) -> Vec<Tier> {
        let day = now / DAY;
        let mut due = Vec::new();
        if self.last_hot_day != Some(day) {
            self.last_hot_day = Some(day);
            due.push(Tier::Hot);
        }
        if self.last_cloud_day != Some(day) {
            self.last_cloud_day = Some(day);
            due.push(Tier::Cloud);
        }
        if cold_window_open(now) && self.last_cold_day != Some(day) {
            self.last_cold_day = Some(day);
            due.push(Tier::Cold);
        }
        if self.restore_due(now) {
            self.last_restore_at = now;
            due.push(Tier::RestoreTest);
        }
        due
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TierResult {
    Pass,
    Incident,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RestoreReport {
    pub hot: TierResult,
    pub cold: TierResult,
    pub cloud: TierResult,
}

impl RestoreReport {
    pub fn all_pass(&self) -> bool {
        self.hot == TierResult::Pass && self.cold == TierResult::Pass && self.cloud == TierResult::Pass
    }
}

/// Everything one restore test needs to rebuild the snapshot from scratch.
pub struct RestoreInputs<'a> {
    pub hot_container: &'a [u8],
    pub hot_unlock_key: &'a [u8; 32],
    pub cold_archive_bytes: &'a [u8],
    pub cloud: &'a CloudBucket,
    pub cloud_object: &'a str,
    pub sk_classical: &'a [u8],
    pub sk_pq: &'a [u8],
    pub archive_signer_pk: &'a [u8],
}

/// Restore all three tiers into scratch buffers and byte-compare against the
/// source-of-truth digest; any mismatch is an incident and lands in the
/// audit chain.
pub fn restore_test(
    inputs: &RestoreInputs,
    expected_sha256: [u8; 32],
    audit: &mut AuditChain,
    audit_signer: &SigKeyPair,
    now: u64,
) -> RestoreReport {
    let check = |restored: Result<Vec<u8>, BackupError>| match restored {
        Ok(bytes) if sha256(&bytes) == expected_sha256 => TierResult::Pass,
        _ => TierResult::Incident,
    };

    let hot = check(hot_restore(inputs.hot_container, inputs.hot_unlock_key));
    let cold = check(
        open_archive(
            inputs.cold_archive_bytes,
            inputs.sk_classical,
            inputs.sk_pq,
            inputs.archive_signer_pk,
        )
        .and_then(|files| {
            files
                .into_iter()
                .next()
                .map(|(_, bytes)| bytes)
                .ok_or(BackupError::MalformedArchive)
        }),
    );
    let cloud = check(cloud_restore(
        inputs.cloud,
        inputs.cloud_object,
        inputs.sk_classical,
        inputs.sk_pq,
        inputs.archive_signer_pk,
    ));

    let report = RestoreReport { hot, cold, cloud };
    for (tier, result) in [("hot", hot), ("cold", cold), ("cloud", cloud)] {
        audit.append(
            audit_signer,
            now,
            "backup",
            if result == TierResult::Pass { "restore_test_pass" } else { "restore_test_incident" },
            &json!({"tier": tier, "severity": if result == TierResult::Pass { "info" } else { "incident" }}),
        );
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::kem::kem_keygen;
    use crate::crypto::sig::sig_keygen;
    use rand::SeedableRng;

    // 2026-08-26T12:00:00Z, a Wednesday.
    const NOW: u64 = 1_787_745_600_000;
    const SNAPSHOT: &[u8] = b"telemetry-db snapshot: 41 rows, 3 tables";

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(7)
    }

    fn signer() -> SigKeyPair {
        sig_keygen(SigSchemeId::Test, &sha256(b"backup-signer")).unwrap()
    }

    fn kem_pair() -> (crate::crypto::kem::KemKeyPair, crate::crypto::kem::KemKeyPair) {
        (
            kem_keygen(KemSchemeId::Test, &sha256(b"operator-classical")).unwrap(),
            kem_keygen(KemSchemeId::Test, &sha256(b"operator-pq")).unwrap(),
        )
    }

    fn sunday() -> u64 {
        // first Sunday at or after NOW
        let mut t = NOW;
        while !cold_window_open(t) {
            t += DAY;
        }
        t
    }

    #[test]
    fn hot_backup_round_trips_and_manifest_verifies() {
        let signer = signer();
        let unlock = [9u8; 32];
        let (bytes, manifest) = hot_backup(SNAPSHOT, &unlock, &signer, NOW, &mut rng()).unwrap();
        assert_eq!(hot_restore(&bytes, &unlock).unwrap(), SNAPSHOT);
        let day = NOW / DAY;
        let files = vec![(format!("db-hot-{day}.elks"), bytes.as_slice())];
        let report =
            verify_manifest(&manifest, &files, &signer.public_key, SigSchemeId::Test).unwrap();
        assert!(report.is_ok());
    }

    #[test]
    fn consecutive_hot_backups_use_distinct_salts() {
        let signer = signer();
        let unlock = [9u8; 32];
        let mut r = rng();
        let (a, _) = hot_backup(SNAPSHOT, &unlock, &signer, NOW, &mut r).unwrap();
        let (b, _) = hot_backup(SNAPSHOT, &unlock, &signer, NOW + DAY, &mut r).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn hot_restore_with_wrong_key_fails() {
        let (bytes, _) = hot_backup(SNAPSHOT, &[9u8; 32], &signer(), NOW, &mut rng()).unwrap();
        assert_eq!(hot_restore(&bytes, &[8u8; 32]), Err(BackupError::AuthFailure));
    }

    #[test]
    fn manifest_flags_missing_extra_and_modified() {
        let signer = signer();
        let manifest = build_manifest(
            &[
                ("a.bin".into(), b"aaaa".as_slice()),
                ("b.bin".into(), b"bbbb".as_slice()),
                ("c.bin".into(), b"cccc".as_slice()),
            ],
            &signer,
            NOW,
        );
        let on_disk = vec![
            ("a.bin".to_string(), b"aaaa".as_slice()),
            ("c.bin".to_string(), b"cXcc".as_slice()),
            ("d.bin".to_string(), b"dddd".as_slice()),
        ];
        let report =
            verify_manifest(&manifest, &on_disk, &signer.public_key, SigSchemeId::Test).unwrap();
        assert_eq!(report.missing, vec!["b.bin"]);
        assert_eq!(report.extra, vec!["d.bin"]);
        assert_eq!(report.modified, vec!["c.bin"]);
    }

    #[test]
    fn tampered_manifest_signature_is_rejected() {
        let signer = signer();
        let mut manifest = build_manifest(&[("a.bin".into(), b"aaaa".as_slice())], &signer, NOW);
        manifest.signature[0] ^= 1;
        let files = vec![("a.bin".to_string(), b"aaaa".as_slice())];
        assert_eq!(
            verify_manifest(&manifest, &files, &signer.public_key, SigSchemeId::Test),
            Err(BackupError::BadManifestSignature)
        );
    }

    #[test]
    fn pack_unpack_round_trip_and_truncation() {
        let files = vec![
            ("db.sqlite".to_string(), vec![1u8; 300]),
            ("policy.json".to_string(), b"{}".to_vec()),
        ];
        let packed = pack_files(&files);
        assert_eq!(unpack_files(&packed).unwrap(), files);
        assert_eq!(unpack_files(&packed[..packed.len() - 1]), Err(BackupError::MalformedArchive));
    }

    #[test]
    fn cold_archive_round_trips_inside_window() {
        let signer = signer();
        let (kc, kq) = kem_pair();
        let files = vec![("db.sqlite".to_string(), SNAPSHOT.to_vec())];
        let bytes = cold_archive(
            &files, KemSchemeId::Test, &kc.public_key, KemSchemeId::Test, &kq.public_key,
            &signer, sunday(), &mut rng(),
        )
        .unwrap();
        let out =
            open_archive(&bytes, &kc.secret_key, &kq.secret_key, &signer.public_key).unwrap();
        assert_eq!(out, files);
    }

    #[test]
    fn cold_archive_outside_window_is_refused() {
        let signer = signer();
        let (kc, kq) = kem_pair();
        let files = vec![("db.sqlite".to_string(), SNAPSHOT.to_vec())];
        assert!(!cold_window_open(NOW));
        assert_eq!(
            cold_archive(
                &files, KemSchemeId::Test, &kc.public_key, KemSchemeId::Test, &kq.public_key,
                &signer, NOW, &mut rng(),
            )
            .unwrap_err(),
            BackupError::WindowClosed
        );
    }

    #[test]
    fn opening_archive_needs_both_kem_secrets() {
        let signer = signer();
        let (kc, kq) = kem_pair();
        let wrong = kem_keygen(KemSchemeId::Test, &sha256(b"someone-else")).unwrap();
        let files = vec![("db.sqlite".to_string(), SNAPSHOT.to_vec())];
        let bytes = cold_archive(
            &files, KemSchemeId::Test, &kc.public_key, KemSchemeId::Test, &kq.public_key,
            &signer, sunday(), &mut rng(),
        )
        .unwrap();
        assert_eq!(
            open_archive(&bytes, &wrong.secret_key, &kq.secret_key, &signer.public_key)
                .unwrap_err(),
            BackupError::AuthFailure
        );
        assert_eq!(
            open_archive(&bytes, &kc.secret_key, &wrong.secret_key, &signer.public_key)
                .unwrap_err(),
            BackupError::AuthFailure
        );
    }

    #[test]
    fn flipped_archive_byte_fails_signature_before_decrypt() {
        let signer = signer();
        let (kc, kq) = kem_pair();
        let files = vec![("db.sqlite".to_string(), SNAPSHOT.to_vec())];
        let mut bytes = cold_archive(
            &files, KemSchemeId::Test, &kc.public_key, KemSchemeId::Test, &kq.public_key,
            &signer, sunday(), &mut rng(),
        )
        .unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert_eq!(
            open_archive(&bytes, &kc.secret_key, &kq.secret_key, &signer.public_key)
                .unwrap_err(),
            BackupError::BadSignature
        );
    }

    #[test]
    fn unknown_scheme_byte_is_rejected() {
        let signer = signer();
        let (kc, kq) = kem_pair();
        let files = vec![("db.sqlite".to_string(), SNAPSHOT.to_vec())];
        let mut bytes = cold_archive(
            &files, KemSchemeId::Test, &kc.public_key, KemSchemeId::Test, &kq.public_key,
            &signer, sunday(), &mut rng(),
        )
        .unwrap();
        bytes[5] = 9; // classical KEM id slot
        assert_eq!(
            open_archive(&bytes, &kc.secret_key, &kq.secret_key, &signer.public_key)
                .unwrap_err(),
            BackupError::UnsupportedScheme(9)
        );
    }

    #[test]
    fn cloud_round_trip_survives_provider_key_loss() {
        let signer = signer();
        let (kc, kq) = kem_pair();
        let dir = tempfile::tempdir().unwrap();
        let mut bucket = CloudBucket::new(dir.path().to_path_buf(), [5u8; 32]);
        let mut r = rng();
        let id = cloud_replicate(
            &mut bucket, SNAPSHOT, KemSchemeId::Test, &kc.public_key, KemSchemeId::Test,
            &kq.public_key, &signer, &mut r,
        )
        .unwrap();
        bucket.discard_provider_key();
        let restored =
            cloud_restore(&bucket, &id, &kc.secret_key, &kq.secret_key, &signer.public_key)
                .unwrap();
        assert_eq!(restored, SNAPSHOT);
    }

    #[test]
    fn cloud_listing_and_at_rest_media_expose_no_plaintext() {
        let signer = signer();
        let (kc, kq) = kem_pair();
        let dir = tempfile::tempdir().unwrap();
        let mut bucket = CloudBucket::new(dir.path().to_path_buf(), [5u8; 32]);
        let mut r = rng();
        let id = cloud_replicate(
            &mut bucket, SNAPSHOT, KemSchemeId::Test, &kc.public_key, KemSchemeId::Test,
            &kq.public_key, &signer, &mut r,
        )
        .unwrap();
        let listing = bucket.list();
        assert_eq!(listing.len(), 1);
        assert_eq!(listing[0].0, id);
        // neither the served object nor the provider's at-rest copy contains
        // the snapshot marker
        let needle = b"telemetry-db";
        let served = bucket.get(&id).unwrap();
        assert!(!served.windows(needle.len()).any(|w| w == needle));
        let at_rest = std::fs::read(dir.path().join(&id)).unwrap();
        assert!(!at_rest.windows(needle.len()).any(|w| w == needle));
    }

    #[test]
    fn cloud_replicate_retries_through_transient_outage() {
        let signer = signer();
        let (kc, kq) = kem_pair();
        let dir = tempfile::tempdir().unwrap();
        let mut bucket = CloudBucket::new(dir.path().to_path_buf(), [5u8; 32]);
        bucket.outage_countdown = 2;
        let id = cloud_replicate(
            &mut bucket, SNAPSHOT, KemSchemeId::Test, &kc.public_key, KemSchemeId::Test,
            &kq.public_key, &signer, &mut rng(),
        )
        .unwrap();
        assert!(bucket.get(&id).is_ok());

        bucket.outage_countdown = 10;
        assert_eq!(
            cloud_replicate(
                &mut bucket, SNAPSHOT, KemSchemeId::Test, &kc.public_key, KemSchemeId::Test,
                &kq.public_key, &signer, &mut rng(),
            )
            .unwrap_err(),
            BackupError::BucketUnavailable
        );
    }

    #[test]
    fn thirty_day_schedule_counts() {
        let start = (NOW / DAY) * DAY; // midnight of day 0
        let mut schedule = BackupSchedule::new(start);
        let mut hot = 0;
        let mut cloud = 0;
        let mut cold = 0;
        let mut restores = 0;
        for i in 1..=30u64 {
            for tier in schedule.due_tiers(start + i * DAY) {
                match tier {
                    Tier::Hot => hot += 1,
                    Tier::Cloud => cloud += 1,
                    Tier::Cold => cold += 1,
                    Tier::RestoreTest => restores += 1,
                }
            }
        }
        assert_eq!(hot, 30);
        assert_eq!(cloud, 30);
        // starting on a Wednesday, four Sundays fall inside the 30-day span
        assert_eq!(cold, 4);
        assert_eq!(restores, 1);
    }

    #[test]
    fn sunday_start_sees_five_cold_windows() {
        let start = (sunday() / DAY) * DAY;
        let mut schedule = BackupSchedule::new(start);
        let mut cold = 0;
        for i in 0..30u64 {
            for tier in schedule.due_tiers(start + i * DAY) {
                if tier == Tier::Cold {
                    cold += 1;
                }
            }
        }
        assert_eq!(cold, 5);
    }

    #[test]
    fn restore_test_not_due_at_day_29() {
        let schedule = BackupSchedule::new(NOW);
        assert!(!schedule.restore_due(NOW + 29 * DAY));
        assert!(schedule.restore_due(NOW + 30 * DAY));
    }

    struct Fixture {
        signer: SigKeyPair,
        kc: crate::crypto::kem::KemKeyPair,
        kq: crate::crypto::kem::KemKeyPair,
        hot: Vec<u8>,
        cold: Vec<u8>,
        bucket: CloudBucket,
        object: String,
        _dir: tempfile::TempDir,
    }

    fn restore_fixture() -> Fixture {
        let signer = signer();
        let (kc, kq) = kem_pair();
        let mut r = rng();
        let (hot, _) = hot_backup(SNAPSHOT, &[9u8; 32], &signer, NOW, &mut r).unwrap();
        let cold = cold_archive(
            &[("db.sqlite".to_string(), SNAPSHOT.to_vec())],
            KemSchemeId::Test, &kc.public_key, KemSchemeId::Test, &kq.public_key,
            &signer, sunday(), &mut r,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut bucket = CloudBucket::new(dir.path().to_path_buf(), [5u8; 32]);
        let object = cloud_replicate(
            &mut bucket, SNAPSHOT, KemSchemeId::Test, &kc.public_key, KemSchemeId::Test,
            &kq.public_key, &signer, &mut r,
        )
        .unwrap();
        Fixture { signer, kc, kq, hot, cold, bucket, object, _dir: dir }
    }

    #[test]
    fn restore_test_passes_all_tiers_when_replicas_are_intact() {
        let f = restore_fixture();
        let mut audit = AuditChain::new(SigSchemeId::Test);
        let report = restore_test(
            &RestoreInputs {
                hot_container: &f.hot,
                hot_unlock_key: &[9u8; 32],
                cold_archive_bytes: &f.cold,
                cloud: &f.bucket,
                cloud_object: &f.object,
                sk_classical: &f.kc.secret_key,
                sk_pq: &f.kq.secret_key,
                archive_signer_pk: &f.signer.public_key,
            },
            sha256(SNAPSHOT),
            &mut audit,
            &f.signer,
            NOW + 30 * DAY,
        );
        assert!(report.all_pass());
        assert_eq!(audit.entries.len(), 3);
        assert!(audit.entries.iter().all(|e| e.event_type == "restore_test_pass"));
    }

    #[test]
    fn corrupted_cold_replica_raises_incident_for_that_tier_only() {
        let mut f = restore_fixture();
        let mid = f.cold.len() / 2;
        f.cold[mid] ^= 1;
        let mut audit = AuditChain::new(SigSchemeId::Test);
        let report = restore_test(
            &RestoreInputs {
                hot_container: &f.hot,
                hot_unlock_key: &[9u8; 32],
                cold_archive_bytes: &f.cold,
                cloud: &f.bucket,
                cloud_object: &f.object,
                sk_classical: &f.kc.secret_key,
                sk_pq: &f.kq.secret_key,
                archive_signer_pk: &f.signer.public_key,
            },
            sha256(SNAPSHOT),
            &mut audit,
            &f.signer,
            NOW + 30 * DAY,
        );
        assert_eq!(report.hot, TierResult::Pass);
        assert_eq!(report.cold, TierResult::Incident);
        assert_eq!(report.cloud, TierResult::Pass);
        let incidents: Vec<_> = audit
            .entries
            .iter()
            .filter(|e| e.event_type == "restore_test_incident")
            .collect();
        assert_eq!(incidents.len(), 1);
    }
}
