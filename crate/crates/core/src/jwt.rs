//! HS256 tokens binding an API key to its secret.

use std::fmt;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hmac::{Hmac, Mac};
use rand::RngCore;
use serde::Deserialize;
use sha2::Sha256;

pub const API_KEY_LEN: usize = 20;
pub const API_SECRET_LEN: usize = 32;
pub const JWT_HEADER: &str = r#"{"alg":"HS256","typ":"JWT"}"#;

type HmacSha256 = Hmac<Sha256>;

#[derive(Clone, PartialEq, Eq)]
pub struct ApiCredentials {
    /// 20 random bytes, lowercase hex.
    pub api_key: String,
    /// 32 random bytes, lowercase hex. The HMAC key is the decoded bytes.
    pub api_secret: String,
}

impl fmt::Debug for ApiCredentials {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ApiCredentials")
            .field("api_key", &self.api_key)
            .field("api_secret", &"<redacted>")
            .finish()
    }
}

impl ApiCredentials {
    pub fn generate(rng: &mut impl RngCore) -> Self {
        let mut key = [0u8; API_KEY_LEN];
        let mut secret = [0u8; API_SECRET_LEN];
        rng.fill_bytes(&mut key);
        rng.fill_bytes(&mut secret);
        ApiCredentials {
            api_key: hex::encode(key),
            api_secret: hex::encode(secret),
        }
    }

    fn secret_bytes(&self) -> Vec<u8> {
        hex::decode(&self.api_secret).expect("secret is hex")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum JwtError {
    #[error("malformed token")]
    MalformedToken,
    #[error("unknown api key")]
    UnknownKey,
    #[error("bad signature")]
    BadSignature,
}

fn sign(secret: &[u8], signing_input: &str) -> HmacSha256 {
    let mut mac = HmacSha256::new_from_slice(secret).expect("hmac accepts any key length");
    mac.update(signing_input.as_bytes());
    mac
}

/// Signs `{"key":<api_key>,"iat":<iat>}` with the credentials' secret.
pub fn issue_jwt(creds: &ApiCredentials, iat: u64) -> String {
    let key = serde_json::to_string(&creds.api_key).expect("string serializes");
    let payload = format!(r#"{{"key":{key},"iat":{iat}}}"#);
    let signing_input = format!(
        "{}.{}",
        URL_SAFE_NO_PAD.encode(JWT_HEADER),
        URL_SAFE_NO_PAD.encode(payload)
    );
    let tag = sign(&creds.secret_bytes(), &signing_input)
        .finalize()
        .into_bytes();
    format!("{signing_input}.{}", URL_SAFE_NO_PAD.encode(tag))
}

#[derive(Deserialize)]
struct Header {
    alg: String,
    typ: String,
}

#[derive(Deserialize)]
struct Claims {
    key: String,
    #[allow(dead_code)]
    iat: u64,
}

/// Checks `token` and returns its api key. `lookup` maps an api key to its
/// registered credentials.
pub fn verify_jwt<'a>(
    token: &str,
    lookup: impl FnOnce(&str) -> Option<&'a ApiCredentials>,
) -> Result<String, JwtError> {
    let mut parts = token.split('.');
    let (Some(h), Some(p), Some(s), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(JwtError::MalformedToken);
    };
    let decode = |seg: &str| {
        URL_SAFE_NO_PAD
            .decode(seg)
            .map_err(|_| JwtError::MalformedToken)
    };
    let header: Header =
        serde_json::from_slice(&decode(h)?).map_err(|_| JwtError::MalformedToken)?;
    if header.alg != "HS256" || header.typ != "JWT" {
        return Err(JwtError::MalformedToken);
    }
    let claims: Claims =
        serde_json::from_slice(&decode(p)?).map_err(|_| JwtError::MalformedToken)?;
    let sig = decode(s)?;
    let creds = lookup(&claims.key).ok_or(JwtError::UnknownKey)?;
    let signing_input = &token[..h.len() + 1 + p.len()];
    sign(&creds.secret_bytes(), signing_input)
        .verify_slice(&sig)
        .map_err(|_| JwtError::BadSignature)?;
    Ok(claims.key)
}
