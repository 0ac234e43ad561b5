//! Hash-chained, periodically signed audit log. Append-only; any mutation or
//! truncation is detectable by re-walking the chain and the checkpoints.

use serde::{Deserialize, Serialize};

use crate::canonical::canonical_digest;
use crate::crypto::sig::{sign, verify, SigKeyPair, SigSchemeId};

pub const CHECKPOINT_PERIOD: u64 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub at: u64,
    pub actor: String,
    pub event_type: String,
    #[serde(with = "crate::canonical::hex_digest")]
    pub payload_digest: [u8; 32],
    #[serde(with = "crate::canonical::hex_digest")]
    pub prev_hash: [u8; 32],
    #[serde(with = "crate::canonical::hex_digest")]
    pub entry_hash: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub at_seq: u64,
    #[serde(with = "crate::canonical::hex_digest")]
    pub entry_hash: [u8; 32],
    #[serde(with = "crate::canonical::hex_bytes")]
    pub signature: Vec<u8>,
}

#[derive(Serialize)]
struct EntryBody<'a> {
    seq: u64,
    at: u64,
    actor: &'a str,
    event_type: &'a str,
    #[serde(with = "crate::canonical::hex_digest")]
    payload_digest: [u8; 32],
    #[serde(with = "crate::canonical::hex_digest")]
    prev_hash: [u8; 32],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditChain {
    pub entries: Vec<AuditEntry>,
    pub checkpoints: Vec<Checkpoint>,
    /// Signed commitment to the latest entry, refreshed on every append.
    /// Without it, a truncation inside the last checkpoint period would be
    /// invisible to verification.
    #[serde(default)]
    pub head: Option<Checkpoint>,
    pub signer_scheme: SigSchemeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainStatus {
    Intact,
    BrokenAt(u64),
}

impl AuditChain {
    pub fn new(signer_scheme: SigSchemeId) -> Self {
        Self { entries: Vec::new(), checkpoints: Vec::new(), head: None, signer_scheme }
    }

    pub fn append<P: Serialize>(
        &mut self,
        signer: &SigKeyPair,
        at: u64,
        actor: &str,
        event_type: &str,
        payload: &P,
    ) -> &AuditEntry {
        let seq = self.entries.len() as u64;
        let prev_hash = self.entries.last().map(|e| e.entry_hash).unwrap_or([0u8; 32]);
        let payload_digest = canonical_digest(payload);
        let body = EntryBody {
            seq,
            at,
            actor,
            event_type,
            payload_digest,
            prev_hash,
        };
        let entry_hash = canonical_digest(&body);
        self.entries.push(AuditEntry {
            seq,
            at,
            actor: actor.to_string(),
            event_type: event_type.to_string(),
            payload_digest,
            prev_hash,
            entry_hash,
        });
        let signature = sign(self.signer_scheme, &signer.secret_key, &entry_hash)
            .expect("valid audit signing key");
        if (seq + 1) % CHECKPOINT_PERIOD == 0 {
            self.checkpoints.push(Checkpoint {
                at_seq: seq,
                entry_hash,
                signature: signature.clone(),
            });
        }
        self.head = Some(Checkpoint { at_seq: seq, entry_hash, signature });
        self.entries.last().unwrap()
    }

    /// Walk the chain and checkpoints; report the first broken sequence.
    pub fn verify(&self, signer_pk: &[u8]) -> ChainStatus {
        let mut prev = [0u8; 32];
        for (i, e) in self.entries.iter().enumerate() {
            let body = EntryBody {
                seq: e.seq,
                at: e.at,
                actor: &e.actor,
                event_type: &e.event_type,
                payload_digest: e.payload_digest,
                prev_hash: e.prev_hash,
            };
            if e.seq != i as u64
                || e.prev_hash != prev
                || e.entry_hash != canonical_digest(&body)
            {
                return ChainStatus::BrokenAt(i as u64);
            }
            prev = e.entry_hash;
        }
        for cp in &self.checkpoints {
            match self.entries.get(cp.at_seq as usize) {
                Some(e) if e.entry_hash == cp.entry_hash
                    && verify(self.signer_scheme, signer_pk, &cp.entry_hash, &cp.signature) => {}
                _ => return ChainStatus::BrokenAt(cp.at_seq),
            }
        }
        // a truncated tail shows up as a missing checkpoint
        let expected_cps = self.entries.len() as u64 / CHECKPOINT_PERIOD;
        if (self.checkpoints.len() as u64) < expected_cps {
            return ChainStatus::BrokenAt(self.entries.len() as u64);
        }
        // the signed head must commit to the final entry
        match (self.entries.last(), &self.head) {
            (None, None) => ChainStatus::Intact,
            (Some(e), Some(h))
                if h.at_seq == e.seq
                    && h.entry_hash == e.entry_hash
                    && verify(self.signer_scheme, signer_pk, &h.entry_hash, &h.signature) =>
            {
                ChainStatus::Intact
            }
            _ => ChainStatus::BrokenAt(self.entries.len() as u64),
        }
    }

    pub fn count_of(&self, event_type: &str) -> usize {
        self.entries.iter().filter(|e| e.event_type == event_type).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::sig::sig_keygen;

    fn signer() -> SigKeyPair {
        sig_keygen(SigSchemeId::Test, &[8u8; 32]).unwrap()
    }

    fn chain_of(n: usize) -> (AuditChain, SigKeyPair) {
        let k = signer();
        let mut c = AuditChain::new(SigSchemeId::Test);
        for i in 0..n {
            c.append(&k, i as u64, "server", "event", &format!("payload-{i}"));
        }
        (c, k)
    }

    #[test]
    fn fresh_chain_verifies_intact() {
        let (c, k) = chain_of(40);
        assert_eq!(c.verify(&k.public_key), ChainStatus::Intact);
        assert_eq!(c.checkpoints.len(), 2);
        assert_eq!(c.entries[0].prev_hash, [0u8; 32]);
    }

    #[test]
    fn mutated_payload_breaks_at_seq() {
        let (mut c, k) = chain_of(10);
        c.entries[3].payload_digest[0] ^= 1;
        assert_eq!(c.verify(&k.public_key), ChainStatus::BrokenAt(3));
    }

    #[test]
    fn mutated_event_type_breaks() {
        let (mut c, k) = chain_of(10);
        c.entries[5].event_type = "forged".into();
        assert_eq!(c.verify(&k.public_key), ChainStatus::BrokenAt(5));
    }

    #[test]
    fn truncation_detected_by_checkpoint() {
        let (mut c, k) = chain_of(32);
        c.entries.truncate(31);
        assert!(matches!(c.verify(&k.public_key), ChainStatus::BrokenAt(31)));
        // truncating past a checkpoint boundary also fails
        // even a checkpoint-consistent truncation trips the signed head
        let (mut c2, k2) = chain_of(17);
        c2.entries.truncate(16);
        c2.checkpoints.truncate(1);
        assert_eq!(c2.verify(&k2.public_key), ChainStatus::BrokenAt(16));
    }

    #[test]
    fn dropped_or_stale_head_detected() {
        let (mut c, k) = chain_of(10);
        let stale = c.head.clone();
        c.append(&k, 10, "server", "event", &"payload-10");
        c.head = stale;
        assert_eq!(c.verify(&k.public_key), ChainStatus::BrokenAt(11));
        c.head = None;
        assert_eq!(c.verify(&k.public_key), ChainStatus::BrokenAt(11));
    }

    #[test]
    fn forged_checkpoint_signature_detected() {
        let (mut c, k) = chain_of(16);
        c.checkpoints[0].signature[0] ^= 1;
        assert_eq!(c.verify(&k.public_key), ChainStatus::BrokenAt(15));
    }
}
