//! Signing keys and published key sets (JWKS).

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use jsonwebtoken::{DecodingKey, EncodingKey};
use p256::ecdsa::SigningKey as EcSigningKey;
use p256::pkcs8::EncodePrivateKey;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyError {
    #[error("unknown key id `{0}`")]
    UnknownKid(String),
    #[error("duplicate key id `{0}`")]
    DuplicateKid(String),
    #[error("unsupported key: {0}")]
    Unsupported(String),
    #[error("invalid key material: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    ES256,
    RS256,
}

impl Algorithm {
    pub(crate) fn to_jwt(self) -> jsonwebtoken::Algorithm {
        match self {
            Algorithm::ES256 => jsonwebtoken::Algorithm::ES256,
            Algorithm::RS256 => jsonwebtoken::Algorithm::RS256,
        }
    }
}

/// One public key in JWKS form. Only public parameters are representable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Jwk {
    pub kid: String,
    pub kty: String,
    pub alg: Algorithm,
    #[serde(rename = "use", default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<String>,
}

impl Jwk {
    pub(crate) fn decoding_key(&self) -> Result<DecodingKey, KeyError> {
        let missing =
            |p: &str| KeyError::Invalid(format!("{} key `{}` lacks `{p}`", self.kty, self.kid));
        match (self.kty.as_str(), self.alg) {
            ("EC", Algorithm::ES256) => {
                if self.crv.as_deref() != Some("P-256") {
                    return Err(KeyError::Unsupported(format!("curve {:?}", self.crv)));
                }
                let x = self.x.as_deref().ok_or_else(|| missing("x"))?;
                let y = self.y.as_deref().ok_or_else(|| missing("y"))?;
                DecodingKey::from_ec_components(x, y).map_err(|e| KeyError::Invalid(e.to_string()))
            }
            ("RSA", Algorithm::RS256) => {
                let n = self.n.as_deref().ok_or_else(|| missing("n"))?;
                let e = self.e.as_deref().ok_or_else(|| missing("e"))?;
                DecodingKey::from_rsa_components(n, e).map_err(|e| KeyError::Invalid(e.to_string()))
            }
            (kty, alg) => Err(KeyError::Unsupported(format!("{kty}/{alg:?}"))),
        }
    }
}

/// A published key set. Key ids are unique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(try_from = "JwksDocument")]
pub struct KeySet {
    keys: Vec<Jwk>,
}

#[derive(Deserialize)]
struct JwksDocument {
    keys: Vec<Jwk>,
}

impl TryFrom<JwksDocument> for KeySet {
    type Error = KeyError;

    fn try_from(doc: JwksDocument) -> Result<Self, Self::Error> {
        KeySet::new(doc.keys)
    }
}

impl KeySet {
    pub fn new(keys: Vec<Jwk>) -> Result<Self, KeyError> {
        let mut set = KeySet::default();
        for k in keys {
            set.insert(k)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, key: Jwk) -> Result<(), KeyError> {
        if self.get(&key.kid).is_some() {
            return Err(KeyError::DuplicateKid(key.kid));
        }
        self.keys.push(key);
        Ok(())
    }

    pub fn get(&self, kid: &str) -> Option<&Jwk> {
        self.keys.iter().find(|k| k.kid == kid)
    }

    pub fn keys(&self) -> &[Jwk] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("key set serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, KeyError> {
        serde_json::from_str(text).map_err(|e| KeyError::Invalid(e.to_string()))
    }
}

/// Private ES256 signing key with its key id.
pub struct SigningKey {
    kid: String,
    encoding: EncodingKey,
    public: Jwk,
}

impl std::fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SigningKey")
            .field("kid", &self.kid)
            .finish_non_exhaustive()
    }
}

impl SigningKey {
    pub fn generate(kid: impl Into<String>) -> Self {
        let secret = EcSigningKey::random(&mut rand::rngs::OsRng);
        Self::from_p256(kid.into(), &secret)
    }

    fn from_p256(kid: String, secret: &EcSigningKey) -> Self {
        let der = secret.to_pkcs8_der().expect("p256 key encodes as pkcs8");
        let point = secret.verifying_key().to_encoded_point(false);
        let coord =
            |c: Option<&p256::FieldBytes>| URL_SAFE_NO_PAD.encode(c.expect("uncompressed point"));
        let public = Jwk {
            kid: kid.clone(),
            kty: "EC".into(),
            alg: Algorithm::ES256,
            usage: Some("sig".into()),
            crv: Some("P-256".into()),
            x: Some(coord(point.x())),
            y: Some(coord(point.y())),
            n: None,
            e: None,
        };
        SigningKey {
            kid,
            encoding: EncodingKey::from_ec_der(der.as_bytes()),
            public,
        }
    }

    /// RS256 signing from a PKCS#8 PEM, paired with its public JWK.
    pub fn from_rsa_pem(pem: &[u8], public: Jwk) -> Result<Self, KeyError> {
        if public.alg != Algorithm::RS256 {
            return Err(KeyError::Unsupported(format!(
                "{:?} for an RSA key",
                public.alg
            )));
        }
        let encoding =
            EncodingKey::from_rsa_pem(pem).map_err(|e| KeyError::Invalid(e.to_string()))?;
        Ok(SigningKey {
            kid: public.kid.clone(),
            encoding,
            public,
        })
    }

    pub fn kid(&self) -> &str {
        &self.kid
    }

    pub fn algorithm(&self) -> Algorithm {
        self.public.alg
    }

    pub fn public_jwk(&self) -> &Jwk {
        &self.public
    }

    pub(crate) fn encoding_key(&self) -> &EncodingKey {
        &self.encoding
    }
}

/// The private side of an issuer's keys: several keys, exactly one current.
#[derive(Debug)]
pub struct KeyRing {
    keys: Vec<SigningKey>,
    current: usize,
}

impl KeyRing {
    pub fn new(first: SigningKey) -> Self {
        KeyRing {
            keys: vec![first],
            current: 0,
        }
    }

    pub fn current(&self) -> &SigningKey {
        &self.keys[self.current]
    }

    pub fn get(&self, kid: &str) -> Result<&SigningKey, KeyError> {
        self.keys
            .iter()
            .find(|k| k.kid == kid)
            .ok_or_else(|| KeyError::UnknownKid(kid.to_string()))
    }

    /// Add a key and make it current. Older keys stay published.
    pub fn rotate(&mut self, next: SigningKey) -> Result<(), KeyError> {
        if self.get(next.kid()).is_ok() {
            return Err(KeyError::DuplicateKid(next.kid.clone()));
        }
        self.keys.push(next);
        self.current = self.keys.len() - 1;
        Ok(())
    }

    pub fn public_set(&self) -> KeySet {
        KeySet {
            keys: self.keys.iter().map(|k| k.public.clone()).collect(),
        }
    }
}
