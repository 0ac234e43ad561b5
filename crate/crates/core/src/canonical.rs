//! Canonical JSON encoding used for every signed or hashed structure.
//!
//! Rules: UTF-8, object keys sorted lexicographically, no insignificant
//! whitespace, integers base-10, byte fields as lowercase hex strings.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Serialize a value to its canonical JSON byte representation.
///
/// serde_json's default `Map` is a `BTreeMap`, so object keys come out
/// sorted; compact formatting omits all whitespace. Converting through
/// `Value` first normalizes struct field order as well.
pub fn to_canonical_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("canonical encoding failed");
    serde_json::to_vec(&v).expect("canonical encoding failed")
}

/// SHA-256 over the canonical encoding of `value`.
pub fn canonical_digest<T: Serialize>(value: &T) -> [u8; 32] {
    sha256(&to_canonical_bytes(value))
}

pub fn sha256(data: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(data);
    h.finalize().into()
}

pub fn sha256_concat(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// Serde helpers for 32-byte digests encoded as lowercase hex.
pub mod hex_digest {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(&s).map_err(serde::de::Error::custom)?;
        v.try_into()
            .map_err(|_| serde::de::Error::custom("expected 32 bytes"))
    }
}

/// Serde helpers for variable-length byte fields encoded as lowercase hex.
pub mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_sorted_no_whitespace() {
        let v = json!({"zebra": 1, "alpha": {"y": 2, "x": 3}, "mid": [1, 2]});
        let bytes = to_canonical_bytes(&v);
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            r#"{"alpha":{"x":3,"y":2},"mid":[1,2],"zebra":1}"#
        );
    }

    #[test]
    fn digest_stable_across_field_order() {
        let a = json!({"b": 1, "a": 2});
        let b = json!({"a": 2, "b": 1});
        assert_eq!(canonical_digest(&a), canonical_digest(&b));
    }
}
