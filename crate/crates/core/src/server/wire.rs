//! Wire protocol shared by node, server, and the network simulator:
//! 4-byte big-endian length prefix followed by a canonical JSON object with a
//! required "type" field. Unknown message types and unknown fields are
//! rejected.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical::to_canonical_bytes;
use crate::crypto::aead::AeadBox;
use crate::crypto::hybrid::HybridCiphertext;
use crate::crypto::kem::KemSchemeId;
use crate::model::{ModelPackage, RollbackDirective};
use crate::pki::{Certificate, CertificateChain, Csr, OcspStaple};
use crate::roots::AttestationQuote;
use crate::server::policy::GeoFix;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("frame truncated")]
    Truncated,
    #[error("frame is not valid JSON: {0}")]
    BadJson(String),
    #[error("missing or non-string type field")]
    MissingType,
    #[error("unknown message type: {0}")]
    UnknownType(String),
    #[error("malformed {0} message: {1}")]
    BadFields(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenyReason {
    PcrMismatch,
    BadSignature,
    StaleNonce,
    PolicyGeofence,
    PolicyTimeWindow,
    PolicyStatus,
    DeviceBanned,
    DeviceSuspended,
    GrantConsumed,
    GrantExpired,
    NoGrant,
    RateLimited,
    UnknownDevice,
    SessionMismatch,
    IntegrityFailure,
    SignatureMismatch,
    PreconditionNotMet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    pub device_id: String,
    pub protocol_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChallengeReq {
    pub device_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Challenge {
    #[serde(with = "crate::canonical::hex_digest")]
    pub nonce: [u8; 32],
    pub expires_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuoteSubmit {
    pub quote: AttestationQuote,
    pub fix: GeoFix,
    /// Ephemeral session KEM public keys the grant will be wrapped to.
    pub session_kem_classical: KemSchemeId,
    #[serde(with = "crate::canonical::hex_bytes")]
    pub session_pk_classical: Vec<u8>,
    pub session_kem_pq: KemSchemeId,
    #[serde(with = "crate::canonical::hex_bytes")]
    pub session_pk_pq: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnlockGrantMsg {
    #[serde(with = "crate::canonical::hex_bytes")]
    pub grant_id: Vec<u8>,
    pub wrapped: HybridCiphertext,
    pub sealed_key: AeadBox,
    pub issued_at: u64,
    pub expires_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Deny {
    pub reason: DenyReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsrSubmit {
    pub csr: Csr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertIssue {
    pub chain: CertificateChain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcspReq {
    pub serial: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcspResp {
    pub staple: OcspStaple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCheck {
    pub model_id: String,
    pub installed_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOffer {
    pub package: ModelPackage,
    /// Present when the offer moves the device to an earlier version.
    pub rollback: Option<RollbackDirective>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFetch {
    pub model_id: String,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Telemetry {
    pub device_id: String,
    pub fix: GeoFix,
    #[serde(with = "crate::canonical::hex_bytes")]
    pub signature: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorBan {
    pub token: String,
    pub device_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorApprove {
    pub token: String,
    pub device_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ack {
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorMsg {
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello(Hello),
    ChallengeReq(ChallengeReq),
    Challenge(Challenge),
    QuoteSubmit(Box<QuoteSubmit>),
    UnlockGrant(Box<UnlockGrantMsg>),
    Deny(Deny),
    CsrSubmit(CsrSubmit),
    CertIssue(Box<CertIssue>),
    OcspReq(OcspReq),
    OcspResp(OcspResp),
    ModelCheck(ModelCheck),
    ModelOffer(Box<ModelOffer>),
    ModelFetch(ModelFetch),
    Telemetry(Telemetry),
    OperatorBan(OperatorBan),
    OperatorApprove(OperatorApprove),
    Ack(Ack),
    Error(ErrorMsg),
}

impl Message {
    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Hello(_) => "hello",
            Message::ChallengeReq(_) => "challenge_req",
            Message::Challenge(_) => "challenge",
            Message::QuoteSubmit(_) => "quote_submit",
            Message::UnlockGrant(_) => "unlock_grant",
            Message::Deny(_) => "deny",
            Message::CsrSubmit(_) => "csr_submit",
            Message::CertIssue(_) => "cert_issue",
            Message::OcspReq(_) => "ocsp_req",
            Message::OcspResp(_) => "ocsp_resp",
            Message::ModelCheck(_) => "model_check",
            Message::ModelOffer(_) => "model_offer",
            Message::ModelFetch(_) => "model_fetch",
            Message::Telemetry(_) => "telemetry",
            Message::OperatorBan(_) => "operator_ban",
            Message::OperatorApprove(_) => "operator_approve",
            Message::Ack(_) => "ack",
            Message::Error(_) => "error",
        }
    }

    fn payload_value(&self) -> Value {
        fn v<T: Serialize>(t: &T) -> Value {
            serde_json::to_value(t).expect("message serializes")
        }
        match self {
            Message::Hello(m) => v(m),
            Message::ChallengeReq(m) => v(m),
            Message::Challenge(m) => v(m),
            Message::QuoteSubmit(m) => v(m),
            Message::UnlockGrant(m) => v(m),
            Message::Deny(m) => v(m),
            Message::CsrSubmit(m) => v(m),
            Message::CertIssue(m) => v(m),
            Message::OcspReq(m) => v(m),
            Message::OcspResp(m) => v(m),
            Message::ModelCheck(m) => v(m),
            Message::ModelOffer(m) => v(m),
            Message::ModelFetch(m) => v(m),
            Message::Telemetry(m) => v(m),
            Message::OperatorBan(m) => v(m),
            Message::OperatorApprove(m) => v(m),
            Message::Ack(m) => v(m),
            Message::Error(m) => v(m),
        }
    }

    /// Canonical JSON body with the "type" field merged in.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut obj = match self.payload_value() {
            Value::Object(o) => o,
            _ => unreachable!("all messages are objects"),
        };
        obj.insert("type".to_string(), Value::String(self.type_name().to_string()));
        to_canonical_bytes(&Value::Object(obj))
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut obj: serde_json::Map<String, Value> = serde_json::from_slice(bytes)
            .map_err(|e| WireError::BadJson(e.to_string()))?;
        let ty = match obj.remove("type") {
            Some(Value::String(s)) => s,
            _ => return Err(WireError::MissingType),
        };
        let body = Value::Object(obj);
        fn p<T: for<'de> Deserialize<'de>>(ty: &str, body: Value) -> Result<T, WireError> {
            serde_json::from_value(body)
                .map_err(|e| WireError::BadFields(ty.to_string(), e.to_string()))
        }
        Ok(match ty.as_str() {
            "hello" => Message::Hello(p(&ty, body)?),
            "challenge_req" => Message::ChallengeReq(p(&ty, body)?),
            "challenge" => Message::Challenge(p(&ty, body)?),
            "quote_submit" => Message::QuoteSubmit(Box::new(p(&ty, body)?)),
            "unlock_grant" => Message::UnlockGrant(Box::new(p(&ty, body)?)),
            "deny" => Message::Deny(p(&ty, body)?),
            "csr_submit" => Message::CsrSubmit(p(&ty, body)?),
            "cert_issue" => Message::CertIssue(Box::new(p(&ty, body)?)),
            "ocsp_req" => Message::OcspReq(p(&ty, body)?),
            "ocsp_resp" => Message::OcspResp(p(&ty, body)?),
            "model_check" => Message::ModelCheck(p(&ty, body)?),
            "model_offer" => Message::ModelOffer(Box::new(p(&ty, body)?)),
            "model_fetch" => Message::ModelFetch(p(&ty, body)?),
            "telemetry" => Message::Telemetry(p(&ty, body)?),
            "operator_ban" => Message::OperatorBan(p(&ty, body)?),
            "operator_approve" => Message::OperatorApprove(p(&ty, body)?),
            "ack" => Message::Ack(p(&ty, body)?),
            "error" => Message::Error(p(&ty, body)?),
            other => return Err(WireError::UnknownType(other.to_string())),
        })
    }

    /// Length-prefixed frame: 4-byte big-endian length + canonical JSON.
    pub fn to_frame(&self) -> Vec<u8> {
        let body = self.to_json_bytes();
        let mut out = Vec::with_capacity(4 + body.len());
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
        out
    }

    pub fn from_frame(frame: &[u8]) -> Result<(Self, usize), WireError> {
        if frame.len() < 4 {
            return Err(WireError::Truncated);
        }
        let len = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
        if frame.len() < 4 + len {
            return Err(WireError::Truncated);
        }
        Ok((Self::from_json_bytes(&frame[4..4 + len])?, 4 + len))
    }
}

/// Used by non-message signed structures that also travel as certificates.
pub fn certificate_summary(cert: &Certificate) -> String {
    format!("{}#{}", cert.subject, cert.serial)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip() {
        let msg = Message::ChallengeReq(ChallengeReq { device_id: "dev-1".into() });
        let frame = msg.to_frame();
        assert_eq!(&frame[..4], &(frame.len() as u32 - 4).to_be_bytes());
        let (back, used) = Message::from_frame(&frame).unwrap();
        assert_eq!(back, msg);
        assert_eq!(used, frame.len());
    }

    #[test]
    fn unknown_type_rejected() {
        let err = Message::from_json_bytes(br#"{"type":"bogus"}"#).unwrap_err();
        assert_eq!(err, WireError::UnknownType("bogus".to_string()));
    }

    #[test]
    fn unknown_fields_rejected() {
        let err =
            Message::from_json_bytes(br#"{"type":"challenge_req","device_id":"d","extra":1}"#)
                .unwrap_err();
        assert!(matches!(err, WireError::BadFields(t, _) if t == "challenge_req"));
    }

    #[test]
    fn missing_type_rejected() {
        assert_eq!(
            Message::from_json_bytes(br#"{"device_id":"d"}"#).unwrap_err(),
            WireError::MissingType
        );
    }

    #[test]
    fn canonical_body_is_sorted() {
        let msg = Message::Hello(Hello { device_id: "z".into(), protocol_version: 1 });
        let body = String::from_utf8(msg.to_json_bytes()).unwrap();
        assert_eq!(body, r#"{"device_id":"z","protocol_version":1,"type":"hello"}"#);
    }

    #[test]
    fn truncated_frame_rejected() {
        let frame = Message::Ack(Ack { detail: "ok".into() }).to_frame();
        assert_eq!(Message::from_frame(&frame[..frame.len() - 1]).unwrap_err(), WireError::Truncated);
    }
}
