//! AES-256-GCM sealing with a reuse-detecting nonce tracker.

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::sync::Mutex;

use super::CryptoError;
use crate::canonical::sha256;

pub const TAG_LEN: usize = 16;
pub const NONCE_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AeadBox {
    #[serde(with = "crate::canonical::hex_bytes")]
    pub nonce: Vec<u8>,
    #[serde(with = "crate::canonical::hex_bytes")]
    pub ciphertext: Vec<u8>,
    #[serde(with = "crate::canonical::hex_bytes")]
    pub tag: Vec<u8>,
    #[serde(with = "crate::canonical::hex_bytes")]
    pub aad: Vec<u8>,
}

impl AeadBox {
    /// Wire layout (big-endian): nonce(12) || ct_len(4) || ct || tag(16) || aad_len(4) || aad.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(NONCE_LEN + 8 + self.ciphertext.len() + TAG_LEN + self.aad.len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&(self.ciphertext.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out.extend_from_slice(&(self.aad.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.aad);
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<(Self, usize)> {
        if bytes.len() < NONCE_LEN + 4 {
            return None;
        }
        let nonce = bytes[..NONCE_LEN].to_vec();
        let ct_len = u32::from_be_bytes(bytes[NONCE_LEN..NONCE_LEN + 4].try_into().ok()?) as usize;
        let mut off = NONCE_LEN + 4;
        if bytes.len() < off + ct_len + TAG_LEN + 4 {
            return None;
        }
        let ciphertext = bytes[off..off + ct_len].to_vec();
        off += ct_len;
        let tag = bytes[off..off + TAG_LEN].to_vec();
        off += TAG_LEN;
        let aad_len = u32::from_be_bytes(bytes[off..off + 4].try_into().ok()?) as usize;
        off += 4;
        if bytes.len() < off + aad_len {
            return None;
        }
        let aad = bytes[off..off + aad_len].to_vec();
        off += aad_len;
        Some((Self { nonce, ciphertext, tag, aad }, off))
    }
}

pub fn aead_seal(key: &[u8; 32], nonce: &[u8; 12], plaintext: &[u8], aad: &[u8]) -> AeadBox {
    let cipher = Aes256Gcm::new(key.into());
    let mut ct = cipher
        .encrypt(Nonce::from_slice(nonce), Payload { msg: plaintext, aad })
        .expect("AES-GCM encryption cannot fail");
    let tag = ct.split_off(ct.len() - TAG_LEN);
    AeadBox { nonce: nonce.to_vec(), ciphertext: ct, tag, aad: aad.to_vec() }
}

pub fn aead_open(key: &[u8; 32], sealed: &AeadBox) -> Result<Vec<u8>, CryptoError> {
    if sealed.nonce.len() != NONCE_LEN || sealed.tag.len() != TAG_LEN {
        return Err(CryptoError::AuthFailure);
    }
    let cipher = Aes256Gcm::new(key.into());
    let mut ct = sealed.ciphertext.clone();
    ct.extend_from_slice(&sealed.tag);
    cipher
        .decrypt(
            Nonce::from_slice(&sealed.nonce),
            Payload { msg: &ct, aad: &sealed.aad },
        )
        .map_err(|_| CryptoError::AuthFailure)
}

/// Tracks (key, nonce) pairs and rejects reuse. Keys are tracked by digest so
/// the tracker never holds key material.
#[derive(Debug, Default)]
pub struct NonceTracker {
    seen: Mutex<HashSet<([u8; 32], [u8; 12])>>,
}

impl NonceTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check(&self, key: &[u8; 32], nonce: &[u8; 12]) -> Result<(), CryptoError> {
        let entry = (sha256(key), *nonce);
        let mut seen = self.seen.lock().unwrap();
        if !seen.insert(entry) {
            return Err(CryptoError::NonceReuseDetected);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEY: [u8; 32] = [0x42; 32];
    const NONCE: [u8; 12] = [7; 12];

    #[test]
    fn round_trip_lengths() {
        for len in [0usize, 1, 15, 16, 17, 4096] {
            let pt = vec![0xabu8; len];
            let sealed = aead_seal(&KEY, &NONCE, &pt, b"aad");
            assert_eq!(aead_open(&KEY, &sealed).unwrap(), pt, "len {len}");
        }
    }

    #[test]
    fn tamper_rejection_every_field() {
        let sealed = aead_seal(&KEY, &NONCE, b"secret payload", b"hdr");
        for mutate in [0usize, 1, 2, 3] {
            let mut m = sealed.clone();
            match mutate {
                0 => m.ciphertext[0] ^= 1,
                1 => m.tag[0] ^= 1,
                2 => m.nonce[0] ^= 1,
                _ => m.aad = b"hdX".to_vec(),
            }
            assert_eq!(aead_open(&KEY, &m).unwrap_err(), CryptoError::AuthFailure);
        }
    }

    #[test]
    fn wrong_key_rejected() {
        let sealed = aead_seal(&KEY, &NONCE, b"x", b"");
        assert!(aead_open(&[1u8; 32], &sealed).is_err());
    }

    #[test]
    fn encode_decode_round_trip() {
        let sealed = aead_seal(&KEY, &NONCE, b"payload", b"context");
        let bytes = sealed.encode();
        let (back, used) = AeadBox::decode(&bytes).unwrap();
        assert_eq!(back, sealed);
        assert_eq!(used, bytes.len());
    }

    #[test]
    fn nonce_tracker_rejects_reuse() {
        let t = NonceTracker::new();
        t.check(&KEY, &NONCE).unwrap();
        assert_eq!(t.check(&KEY, &NONCE).unwrap_err(), CryptoError::NonceReuseDetected);
        // distinct key, same nonce is fine
        t.check(&[9u8; 32], &NONCE).unwrap();
    }

    // Cross-implementation oracle: NIST-style GCM test vectors computed with
    // an independent implementation (OpenSSL 3.0, `openssl enc` offline).
    #[test]
    fn matches_independent_aes_256_gcm_vectors() {
        // key = 00..00, nonce = 00..00, empty plaintext, no aad
        let sealed = aead_seal(&[0u8; 32], &[0u8; 12], b"", b"");
        assert_eq!(hex::encode(&sealed.tag), "530f8afbc74536b9a963b4f1c4cb738b");

        // key = 00..00, nonce = 00..00, one zero block
        let sealed = aead_seal(&[0u8; 32], &[0u8; 12], &[0u8; 16], b"");
        assert_eq!(hex::encode(&sealed.ciphertext), "cea7403d4d606b6e074ec5d3baf39d18");
        assert_eq!(hex::encode(&sealed.tag), "d0d1c8a799996bf0265b98b5d48ab919");
    }

    // 10 random-input vectors generated offline with an independent
    // AES-256-GCM implementation (python cryptography, OpenSSL-backed).
    #[test]
    fn matches_independent_implementation_random_inputs() {
        let vectors = [
            ("f217259e4e69403bca245937176d3c2f4910ccf9773deaff3e8a1d7b8334913a", "4a94b2fdedbe598456da557c", "d2b5f7ea38c82840b9d876f60bd2f09802570270e9f355980bd3813f8738581f509c1ded77e69247e00ebc3db1088433b5c8d0ae00265ffe7d7a31579f8d63e19133e5b90bde475e727b06d9894bfe7ee166a6f96d2c101561843a094838fb3da2f960bf", "", "ef2738fa1cd69c93513dd65164ed5fa39c677d1f0b063c4bdff19275e971292d610bb7d7aa7ae055008a81ce0491803a817ff08a216cd9603e07461cf56fd79ed38f021cbb51a4914a4a0e3ece1919c3536c7cb4f437c5976ec7d8098c3b10a3e4ccbea6", "1496b346023ababdd8f8b9cb1bb26c80"),
            ("889d7c4a491adf5036bfc068d7ed205027aedb742c7452a6c20b37d910e73820", "fd660d21941b2b5a4e465f26", "8066f5cd55", "", "c29a65cdc7", "a8e857ec85997e45e13660289c76662e"),
            ("5427653241153799ac052c1439fa3fdb1fa2ee8a419e91994643e925a87476bc", "f0e6656d22efc9b5cb1cbf8a", "fccb49d761", "", "0021d4f417", "06b40ea3b912f368453bf12208eda230"),
            ("3f8fe8e7fda0fea320f3fa3dd68e04e07daa853b79a700600cc9e1e0c9a9dee3", "53c0de0cffdeeafe9262b205", "72d4c5d5d642b35e481c880d1f37afb531d2affb379cc8d7f125edc85fd93f021a878ffa68536f61396dad3590598b6e1596a8f485cbdeec1620c74f2800b0f656881b02ca35f2a7687371e3659bbc4e381b46a97703fb043ab4e5690a184f526253ff752f72512df5efab76291073215023f7b9fe65ce26e44c0807ed0ccf34f71f522ab109ec314fb8f5151afccaa26e12d70035da70e21b362b02f8411532ea88114f01b8055b6f4d51c0a85c8877eba21c1c5f9de0dfde694924f7d511c7a8472d3a00302307106cc40683215b4c7d6c39957b2366f0d85d90f0181afa70906edd4e572156ecd336b04b7a27c9c1b4b9206116d8542609a260f2326d583b31251b69b985b294433e3c392927f60e3e84ce43268cc03f079aa439c64470d34a469f39d0574623a62dd0f7", "dd6a130001a81ea0babd9f176b", "d0503db97336189352f04b6e78d11524830048325680f3dcd89c0a53beb1db5af65c100c5d347c2409e93ec501f1a77c03143d24489322d9b0fde7ee218c5806471fc7830fc8fd136a8d133ab2c341ae9327081d457dcd3f4b2f8dc666fbcece909d4524d1a958d4b916918ac65ef59b441c3d1e97585d56e86c21443ad08b8f0f4db2820be73a73051e67de53100f0d8f8c1682682f80ef8b19e32042ba70508c1bebbd2cbe91fc55e2819bc679991c32820bd5e706c61cf075f7e48b579cc41ca3a4de0b96da1524e97705fc4278dcbe1d598ae03a675672d88dbb9e9fc0fdc2788bc53d2f631d067c7f16b6d8f1a764a12ccba8f88e0efe4a881d8e3cdbe88c50640296ecc4449489a4819d96880368648d6f778bf8d94a854223d68dbb6edfbc11bc88a7955f6edb3e16", "9f239146b07ed7f87ca048937b6738e6"),
            ("f6afa5282afe2c404b2337092e5ed3a8a12c35787abfdaff62a29d06001214db", "87e08c46f4ecb164606ec7f3", "46505d4b550efe2f54a187bebad3695aa4baecf09a9cc067aa3ce62956d351e201e178672ad973e46f8447a869f2181f298d258bf03b01f20b0ef53ca39dc40257abf9f47dafb18a198059b828cf4af920f647d6057580240ee0cedebc9f2ce676c171bb39a83cecdcc1536c0b93e436ed58e68e0d43bd1a5e01f25449ba92d99b5d5e10dd2af33de2796fd2fa3a1438028a60b0e1cdbfe55cc440289b547a4d36319e2d80576fc0ebd3f3b31837bbbec322c44130331eb16e76009ad4092c43b12954e7d3b2a58d8d965ae2ffb996794db6268dbd79c67db7c0b5ceb44122e69f6ea2bf44e5037914ca98345542b14b39c723c628b1501afe8ed53da5ca6c", "be2b12e3", "0ca6c1b324f7e34541d28b42d1f54e3805d57b3c853dda9db8e18f2aa2da0f9ae6291cff82c598816cbc7d0a8dbe432c6ff4825820e5413efc346e180b1a29a4c79a4ef1c3d3876faf8f800398a37ce10bb95760364e90162e2770bdca3b96aaaa9fd63961c028174c071187e34bf934c82259af578b10fe8c7c6d44ce0b6419820a9836aebdc65d6c2dbfe2d000d6651ebb5ae29161b61da6aa1a66202167a0e69397230cd4a547d7457cba3bcf7db85c2877737f75827572460b6222c8334411b51b462752b738446ed8e967ad2be0c99946f38a24c9a261787bc25925a8189495086aa2d7468e6f141f724ac638bcb9611c31b92ea3cb51e123b4dbaff8", "39d7f3a7302fabf84cbc61adae1c302a"),
            ("91acc4deb7b73e186b77028a58e04d3f613b2e62ad8fb0e2cc9ab8e5c43180ce", "f97357b9c0747e918d4573f6", "", "7d94f05310176bf5a4115c1129", "", "0446e3e60ab24082fc4801126092339a"),
            ("4886ae1b1c416aa65585cf68a364590f540f1b1197730dd88b596cd401109252", "df47da9efe3bfe680de8309f", "a0ac2e1e08cf8f23fdc534c9b157f5cff3", "", "ef0548badef17a1033193c6569ecc77e8a", "383ab8a211ebe727a359ebef0b78d3f3"),
            ("ab476b418ba515b02a10d61a45f08ce3998d06b091789760f4957b92ddc7d81d", "6773e1389b0ee5657d29babb", "d6f6885a4127d544846b8a28c7c81eb021b2b3e0f216b5c9e8c0a7a56a906028db", "ce67fb07a34439709dd768806f", "3ad6b284764ef48e5e75f5acd0fa725b36b5f11f50b7ff4b06c60ecf1410b0a80d", "eb288892b5c9c3e1276ad71a37b0d449"),
            ("cb1fe2459659604be519c2a8fa78e985b820e4cbf3f2eeddcdecd131a349d364", "371aa4e35adb2e41fd79abe3", "8224bd3de8f5c050516e0314a2f61a356e", "", "248cd2577c16d968bcd819de980d9ee180", "2136b1675ca92b15eee014ce5ff6b9f3"),
            ("46380a6917b288bf3090095e242729c51c2319700885ad7ce59f54c8454e5d31", "3422175f32d130d8e0f81359", "5ece094053c5bc1ffe802845c4c5f976", "", "41e6d995b4f347c1de81eed40b846408", "32a93162b58adada94773fae99c1e4ab"),
        ];
        for (key, nonce, pt, aad, ct, tag) in vectors {
            let key: [u8; 32] = hex::decode(key).unwrap().try_into().unwrap();
            let nonce: [u8; 12] = hex::decode(nonce).unwrap().try_into().unwrap();
            let pt = hex::decode(pt).unwrap();
            let aad = hex::decode(aad).unwrap();
            let sealed = aead_seal(&key, &nonce, &pt, &aad);
            assert_eq!(hex::encode(&sealed.ciphertext), ct);
            assert_eq!(hex::encode(&sealed.tag), tag);
        }
    }
}
