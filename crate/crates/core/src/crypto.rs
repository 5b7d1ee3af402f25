//! Key material and AES-256-GCM encryption of verification records.

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes256Gcm, Key, Nonce};
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("randomness source unavailable: {0}")]
    Randomness(String),
    /// Wrong key, wrong nonce and tampered ciphertext are deliberately
    /// indistinguishable.
    #[error("authentication failed: ciphertext, key or nonce is wrong")]
    Authentication,
    #[error("invalid key material: {0}")]
    InvalidMaterial(String),
}

/// Secret key and nonce for one record. Each pair encrypts one plaintext.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyMaterial {
    secret_key: [u8; KEY_LEN],
    nonce: [u8; NONCE_LEN],
}

impl std::fmt::Debug for KeyMaterial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyMaterial").finish_non_exhaustive()
    }
}

impl KeyMaterial {
    pub fn from_parts(secret_key: [u8; KEY_LEN], nonce: [u8; NONCE_LEN]) -> Self {
        KeyMaterial { secret_key, nonce }
    }

    pub fn from_hex(secret_key: &str, nonce: &str) -> Result<Self, CryptoError> {
        let mut k = [0u8; KEY_LEN];
        let mut n = [0u8; NONCE_LEN];
        hex::decode_to_slice(secret_key, &mut k)
            .map_err(|e| CryptoError::InvalidMaterial(format!("secretKey: {e}")))?;
        hex::decode_to_slice(nonce, &mut n)
            .map_err(|e| CryptoError::InvalidMaterial(format!("nonce: {e}")))?;
        Ok(KeyMaterial::from_parts(k, n))
    }

    pub fn secret_key(&self) -> &[u8; KEY_LEN] {
        &self.secret_key
    }

    pub fn nonce(&self) -> &[u8; NONCE_LEN] {
        &self.nonce
    }

    pub fn secret_key_hex(&self) -> String {
        hex::encode(self.secret_key)
    }

    pub fn nonce_hex(&self) -> String {
        hex::encode(self.nonce)
    }
}

#[derive(Serialize, Deserialize)]
struct HexMaterial {
    #[serde(rename = "secretKey")]
    secret_key: String,
    nonce: String,
}

impl Serialize for KeyMaterial {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        HexMaterial {
            secret_key: self.secret_key_hex(),
            nonce: self.nonce_hex(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for KeyMaterial {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = HexMaterial::deserialize(deserializer)?;
        KeyMaterial::from_hex(&raw.secret_key, &raw.nonce).map_err(serde::de::Error::custom)
    }
}

/// Ciphertext with the 16-byte GCM tag carried at its tail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherEnvelope(Vec<u8>);

impl CipherEnvelope {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        CipherEnvelope(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn tag(&self) -> Option<&[u8]> {
        self.0.len().checked_sub(TAG_LEN).map(|i| &self.0[i..])
    }
}

/// Fresh key material from the operating system's CSPRNG.
pub fn keygen() -> Result<KeyMaterial, CryptoError> {
    let mut k = [0u8; KEY_LEN];
    let mut n = [0u8; NONCE_LEN];
    OsRng
        .try_fill_bytes(&mut k)
        .and_then(|_| OsRng.try_fill_bytes(&mut n))
        .map_err(|e| CryptoError::Randomness(e.to_string()))?;
    Ok(KeyMaterial::from_parts(k, n))
}

pub fn encrypt(plaintext: &[u8], k: &KeyMaterial) -> CipherEnvelope {
    let cipher = Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&k.secret_key));
    let ct = cipher
        .encrypt(Nonce::from_slice(&k.nonce), plaintext)
        .expect("AES-GCM encryption of an in-memory buffer cannot fail");
    CipherEnvelope(ct)
}

pub fn decrypt(env: &CipherEnvelope, k: &KeyMaterial) -> Result<Vec<u8>, CryptoError> {
    let cipher = Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&k.secret_key));
    cipher
        .decrypt(Nonce::from_slice(&k.nonce), env.0.as_slice())
        .map_err(|_| CryptoError::Authentication)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn keygen_lengths_and_uniqueness() {
        let mut seen = HashSet::new();
        for _ in 0..1000 {
            let k = keygen().unwrap();
            assert_eq!(k.secret_key().len(), 32);
            assert_eq!(k.nonce().len(), 12);
            assert!(seen.insert((*k.secret_key(), *k.nonce())));
        }
    }

    #[test]
    fn hex_round_trip() {
        let k = keygen().unwrap();
        assert_eq!(
            KeyMaterial::from_hex(&k.secret_key_hex(), &k.nonce_hex()).unwrap(),
            k
        );
        let json = serde_json::to_string(&k).unwrap();
        assert!(json.contains("\"secretKey\"") && json.contains("\"nonce\""));
        assert_eq!(serde_json::from_str::<KeyMaterial>(&json).unwrap(), k);
        assert!(KeyMaterial::from_hex("00", &k.nonce_hex()).is_err());
    }

    #[test]
    fn debug_never_prints_secret() {
        let k = keygen().unwrap();
        assert!(!format!("{k:?}").contains(&k.secret_key_hex()));
    }

    #[test]
    fn nist_gcm_vector() {
        // NIST GCM test case 14: 256-bit zero key, zero IV, one zero block.
        let k = KeyMaterial::from_parts([0; 32], [0; 12]);
        let env = encrypt(&[0u8; 16], &k);
        assert_eq!(
            hex::encode(env.as_bytes()),
            "cea7403d4d606b6e074ec5d3baf39d18d0d1c8a799996bf0265b98b5d48ab919"
        );
    }

    #[test]
    fn empty_plaintext_is_tag_only() {
        let k = keygen().unwrap();
        let env = encrypt(b"", &k);
        assert_eq!(env.as_bytes().len(), TAG_LEN);
        assert_eq!(decrypt(&env, &k).unwrap(), b"");
    }

    #[test]
    fn nonce_dependence() {
        let k1 = keygen().unwrap();
        let k2 = KeyMaterial::from_parts(*k1.secret_key(), keygen().unwrap().nonce);
        assert_ne!(encrypt(b"same", &k1), encrypt(b"same", &k2));
    }

    #[test]
    fn wrong_material_fails_authentication() {
        let k = keygen().unwrap();
        let env = encrypt(b"record", &k);
        let other = keygen().unwrap();
        assert_eq!(decrypt(&env, &other), Err(CryptoError::Authentication));
        let wrong_nonce = KeyMaterial::from_parts(*k.secret_key(), *other.nonce());
        assert_eq!(
            decrypt(&env, &wrong_nonce),
            Err(CryptoError::Authentication)
        );
        let mut flipped = env.clone().into_bytes();
        flipped[0] ^= 1;
        assert_eq!(
            decrypt(&CipherEnvelope::from_bytes(flipped), &k),
            Err(CryptoError::Authentication)
        );
        assert_eq!(
            decrypt(&CipherEnvelope::from_bytes(vec![1, 2, 3]), &k),
            Err(CryptoError::Authentication)
        );
    }

    #[test]
    fn large_round_trip() {
        let k = keygen().unwrap();
        let mut data = vec![0u8; 1 << 20];
        OsRng.fill_bytes(&mut data);
        let env = encrypt(&data, &k);
        assert_eq!(env.as_bytes().len(), data.len() + TAG_LEN);
        assert_eq!(decrypt(&env, &k).unwrap(), data);
    }
}
