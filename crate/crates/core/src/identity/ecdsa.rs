//! ECDSA over P-256 with SHA-256 digests.
//!
//! Signing derives its nonce deterministically (RFC 6979), so the same key and
//! digest always produce the same signature. Curve arithmetic is delegated to
//! OpenSSL.

use std::fmt;
use std::sync::OnceLock;

use openssl::bn::{BigNum, BigNumContext};
use openssl::ec::{EcGroup, EcKey, EcPoint};
use openssl::ecdsa::EcdsaSig;
use openssl::nid::Nid;
use sha2::digest::consts::U32;
use sha2::digest::generic_array::GenericArray;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::der::{der_decode_signature, der_encode_signature, DerError};

/// Uncompressed SEC1 point length for P-256.
pub const PUBLIC_KEY_LEN: usize = 65;

// Order of the P-256 base point.
const CURVE_ORDER: [u8; 32] = [
    0xFF, 0xFF, 0xFF, 0xFF, 0x00, 0x00, 0x00, 0x00, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF,
    0xBC, 0xE6, 0xFA, 0xAD, 0xA7, 0x17, 0x9E, 0x84, 0xF3, 0xB9, 0xCA, 0xC2, 0xFC, 0x63, 0x25, 0x51,
];

#[derive(Debug, Error)]
pub enum SignatureError {
    #[error(transparent)]
    Der(#[from] DerError),
    #[error("invalid private scalar")]
    InvalidScalar,
    #[error("public key must be a {PUBLIC_KEY_LEN}-byte uncompressed point")]
    InvalidPublicKey,
    #[error("degenerate signature (retry with a different digest)")]
    Degenerate,
    #[error("crypto backend: {0}")]
    Backend(#[from] openssl::error::ErrorStack),
}

fn group() -> &'static EcGroup {
    static GROUP: OnceLock<EcGroup> = OnceLock::new();
    GROUP.get_or_init(|| EcGroup::from_curve_name(Nid::X9_62_PRIME256V1).expect("P-256 available"))
}

fn order() -> &'static BigNum {
    static ORDER: OnceLock<BigNum> = OnceLock::new();
    ORDER.get_or_init(|| BigNum::from_slice(&CURVE_ORDER).expect("static order"))
}

fn padded(n: &BigNum) -> Result<[u8; 32], SignatureError> {
    let v = n.to_vec_padded(32)?;
    let mut out = [0u8; 32];
    out.copy_from_slice(&v);
    Ok(out)
}

/// Uncompressed SEC1 encoding of a P-256 public key.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey([u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    /// Checks only the encoding shape; an off-curve point simply never verifies.
    pub fn from_sec1(bytes: &[u8]) -> Result<Self, SignatureError> {
        if bytes.len() != PUBLIC_KEY_LEN || bytes[0] != 0x04 {
            return Err(SignatureError::InvalidPublicKey);
        }
        let mut out = [0u8; PUBLIC_KEY_LEN];
        out.copy_from_slice(bytes);
        Ok(PublicKey(out))
    }

    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({}..)", hex::encode(&self.0[1..9]))
    }
}

#[derive(Clone)]
pub struct SigningKey {
    scalar: [u8; 32],
    public: PublicKey,
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKey").field("public", &self.public).finish_non_exhaustive()
    }
}

impl SigningKey {
    pub fn from_bytes(scalar: &[u8; 32]) -> Result<Self, SignatureError> {
        let d = BigNum::from_slice(scalar)?;
        if d.num_bits() == 0 || d.ucmp(order()) != std::cmp::Ordering::Less {
            return Err(SignatureError::InvalidScalar);
        }
        let mut ctx = BigNumContext::new()?;
        let mut point = EcPoint::new(group())?;
        point.mul_generator2(group(), &d, &mut ctx)?;
        let bytes = point.to_bytes(
            group(),
            openssl::ec::PointConversionForm::UNCOMPRESSED,
            &mut ctx,
        )?;
        Ok(SigningKey {
            scalar: *scalar,
            public: PublicKey::from_sec1(&bytes)?,
        })
    }

    /// Deterministically derives a key from arbitrary seed material.
    pub fn derive(seed: &[u8]) -> Self {
        let mut counter = 0u32;
        loop {
            let mut h = Sha256::new();
            h.update(b"bmac-key");
            h.update(seed);
            h.update(counter.to_be_bytes());
            let candidate: [u8; 32] = h.finalize().into();
            if let Ok(key) = SigningKey::from_bytes(&candidate) {
                return key;
            }
            counter += 1;
        }
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.public
    }

    /// Signs a 32-byte digest and returns `(r, s)`.
    pub fn sign_digest_parts(&self, digest: &[u8; 32]) -> Result<([u8; 32], [u8; 32]), SignatureError> {
        let n = order();
        let mut ctx = BigNumContext::new()?;
        let d = BigNum::from_slice(&self.scalar)?;
        let raw = BigNum::from_slice(digest)?;
        let mut z = BigNum::new()?;
        z.nnmod(&raw, n, &mut ctx)?;
        let h = padded(&z)?;

        let k_bytes = rfc6979::generate_k::<Sha256, U32>(
            GenericArray::from_slice(&self.scalar),
            GenericArray::from_slice(&CURVE_ORDER),
            GenericArray::from_slice(&h),
            &[],
        );
        let k = BigNum::from_slice(&k_bytes)?;

        let mut point = EcPoint::new(group())?;
        point.mul_generator2(group(), &k, &mut ctx)?;
        let mut x = BigNum::new()?;
        let mut y = BigNum::new()?;
        point.affine_coordinates(group(), &mut x, &mut y, &mut ctx)?;
        let mut r = BigNum::new()?;
        r.nnmod(&x, n, &mut ctx)?;
        if r.num_bits() == 0 {
            return Err(SignatureError::Degenerate);
        }

        let mut k_inv = BigNum::new()?;
        k_inv.mod_inverse(&k, n, &mut ctx)?;
        let mut rd = BigNum::new()?;
        rd.mod_mul(&r, &d, n, &mut ctx)?;
        let mut sum = BigNum::new()?;
        sum.mod_add(&z, &rd, n, &mut ctx)?;
        let mut s = BigNum::new()?;
        s.mod_mul(&k_inv, &sum, n, &mut ctx)?;
        if s.num_bits() == 0 {
            return Err(SignatureError::Degenerate);
        }
        Ok((padded(&r)?, padded(&s)?))
    }

    /// Signs a 32-byte digest and returns the DER encoding.
    pub fn sign_digest(&self, digest: &[u8; 32]) -> Result<Vec<u8>, SignatureError> {
        let (r, s) = self.sign_digest_parts(digest)?;
        Ok(der_encode_signature(&r, &s))
    }
}

pub fn sign(digest: &[u8; 32], key: &SigningKey) -> Result<Vec<u8>, SignatureError> {
    key.sign_digest(digest)
}

/// Verifies a DER signature. Malformed DER is an error; a well-formed but
/// wrong signature is `Ok(false)`.
pub fn verify(sig: &[u8], key: &PublicKey, digest: &[u8; 32]) -> Result<bool, SignatureError> {
    let (r, s) = der_decode_signature(sig)?;
    Ok(verify_parts(&r, &s, key, digest))
}

/// Verifies a signature given as fixed-width `(r, s)` scalars.
pub fn verify_parts(r: &[u8; 32], s: &[u8; 32], key: &PublicKey, digest: &[u8; 32]) -> bool {
    let attempt = || -> Result<bool, openssl::error::ErrorStack> {
        let mut ctx = BigNumContext::new()?;
        let point = EcPoint::from_bytes(group(), key.as_bytes(), &mut ctx)?;
        let eckey = EcKey::from_public_key(group(), &point)?;
        let sig = EcdsaSig::from_private_components(BigNum::from_slice(r)?, BigNum::from_slice(s)?)?;
        sig.verify(digest, &eckey)
    };
    attempt().unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unhex<const N: usize>(s: &str) -> [u8; N] {
        hex::decode(s).unwrap().try_into().unwrap()
    }

    // RFC 6979 A.2.5: P-256 key pair and SHA-256 signatures over "sample"/"test".
    const RFC_KEY: &str = "c9afa9d845ba75166b5c215767b1d6934e50c3db36e89b127b8a622b120f6721";
    const RFC_UX: &str = "60fed4ba255a9d31c961eb74c6356d68c049b8923b61fa6ce669622e60f29fb6";
    const RFC_UY: &str = "7903fe1008b8bc99a41ae9e95628bc64f2f1b20c2d7e9f5177a3c294d4462299";
    const SAMPLE_R: &str = "efd48b2aacb6a8fd1140dd9cd45e81d69d2c877b56aaf991c34d0ea84eaf3716";
    const SAMPLE_S: &str = "f7cb1c942d657c41d436c7a1b6e29f65f3e900dbb9aff4064dc4ab2f843acda8";
    const TEST_R: &str = "f1abb023518351cd71d881567b1ea663ed3efcf6c5132b354f28d3b0b7d38367";
    const TEST_S: &str = "019f4113742a2b14bd25926b49c649155f267e60d3814b4c0cc84250e46f0083";

    fn rfc_public() -> PublicKey {
        let mut bytes = vec![0x04];
        bytes.extend(unhex::<32>(RFC_UX));
        bytes.extend(unhex::<32>(RFC_UY));
        PublicKey::from_sec1(&bytes).unwrap()
    }

    #[test]
    fn known_answer_public_key() {
        let key = SigningKey::from_bytes(&unhex(RFC_KEY)).unwrap();
        assert_eq!(key.public_key(), &rfc_public());
    }

    #[test]
    fn known_answer_signatures() {
        let key = SigningKey::from_bytes(&unhex(RFC_KEY)).unwrap();
        for (msg, r, s) in [("sample", SAMPLE_R, SAMPLE_S), ("test", TEST_R, TEST_S)] {
            let digest: [u8; 32] = Sha256::digest(msg.as_bytes()).into();
            let (gr, gs) = key.sign_digest_parts(&digest).unwrap();
            assert_eq!(hex::encode(gr), r, "r for {msg}");
            assert_eq!(hex::encode(gs), s, "s for {msg}");
        }
    }

    #[test]
    fn known_answer_verification() {
        let digest: [u8; 32] = Sha256::digest(b"sample").into();
        let pk = rfc_public();
        assert!(verify_parts(&unhex(SAMPLE_R), &unhex(SAMPLE_S), &pk, &digest));
        // The "test" signature does not cover "sample".
        assert!(!verify_parts(&unhex(TEST_R), &unhex(TEST_S), &pk, &digest));
    }

    #[test]
    fn round_trip_and_tamper() {
        let key = SigningKey::derive(b"round-trip");
        let digest: [u8; 32] = Sha256::digest(b"abc").into();
        let sig = sign(&digest, &key).unwrap();
        assert!(verify(&sig, key.public_key(), &digest).unwrap());
        let mut flipped = digest;
        flipped[0] ^= 1;
        assert!(!verify(&sig, key.public_key(), &flipped).unwrap());
        let other = SigningKey::derive(b"other");
        assert!(!verify(&sig, other.public_key(), &digest).unwrap());
    }

    #[test]
    fn signing_is_deterministic() {
        let key = SigningKey::derive(b"det");
        let digest = [7u8; 32];
        assert_eq!(key.sign_digest(&digest).unwrap(), key.sign_digest(&digest).unwrap());
    }

    #[test]
    fn malformed_der_is_an_error_not_false() {
        let key = SigningKey::derive(b"der");
        let err = verify(&[0x30, 0x02, 0x02], key.public_key(), &[0u8; 32]).unwrap_err();
        assert!(matches!(err, SignatureError::Der(_)));
    }

    #[test]
    fn zero_scalars_and_bad_points_are_false() {
        let key = SigningKey::derive(b"zero");
        assert!(!verify_parts(&[0; 32], &[0; 32], key.public_key(), &[1; 32]));
        let mut bogus = *key.public_key().as_bytes();
        bogus[40] ^= 0xFF;
        let (r, s) = key.sign_digest_parts(&[1; 32]).unwrap();
        assert!(!verify_parts(&r, &s, &PublicKey::from_sec1(&bogus).unwrap(), &[1; 32]));
    }

    #[test]
    fn rejects_out_of_range_scalars() {
        assert!(SigningKey::from_bytes(&[0; 32]).is_err());
        assert!(SigningKey::from_bytes(&CURVE_ORDER).is_err());
    }

    #[test]
    fn signature_der_round_trip_is_byte_identical() {
        let key = SigningKey::derive(b"der-rt");
        for i in 0..32u8 {
            let sig = key.sign_digest(&[i; 32]).unwrap();
            let (r, s) = der_decode_signature(&sig).unwrap();
            assert_eq!(der_encode_signature(&r, &s), sig);
        }
    }
}
