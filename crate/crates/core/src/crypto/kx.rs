//! Diffie-Hellman key agreement producing pairwise PRF seeds.
//!
//! Two groups are supported: the 2048-bit MODP group (RFC 3526 group 14),
//! and a small 61-bit group over the Shamir field prime for fast test runs.
//! Neither choice affects the protocol shape; the small group is strictly a
//! speed knob and offers no security.

use rand::RngCore;
use rug::Integer;
use sha2::{Digest, Sha256};

use super::codec::{Reader, Writer};
use super::prf::Seed;
use super::CryptoError;

/// RFC 3526 group 14 modulus.
const MODP_2048_HEX: &str = "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74\
020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437\
4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED\
EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05\
98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB\
9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B\
E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718\
3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KxGroup {
    /// 2048-bit MODP group, generator 2. The default.
    Modp2048,
    /// Multiplicative group mod 2^61 - 1, generator 3. Fast, insecure,
    /// for deterministic desk-scale runs only.
    Fast61,
}

impl KxGroup {
    fn id(self) -> u8 {
        match self {
            KxGroup::Modp2048 => 1,
            KxGroup::Fast61 => 2,
        }
    }

    fn from_id(id: u8) -> Result<Self, CryptoError> {
        match id {
            1 => Ok(KxGroup::Modp2048),
            2 => Ok(KxGroup::Fast61),
            _ => Err(CryptoError::MalformedKey(format!("unknown group id {id}"))),
        }
    }

    fn prime(self) -> Integer {
        match self {
            KxGroup::Modp2048 => Integer::from_str_radix(MODP_2048_HEX, 16).unwrap(),
            KxGroup::Fast61 => Integer::from((1u64 << 61) - 1),
        }
    }

    fn generator(self) -> Integer {
        match self {
            KxGroup::Modp2048 => Integer::from(2),
            KxGroup::Fast61 => Integer::from(3),
        }
    }

    fn exponent_bytes(self) -> usize {
        match self {
            KxGroup::Modp2048 => 32,
            KxGroup::Fast61 => 7,
        }
    }

    /// Fixed serialized width of a group element.
    pub fn element_bytes(self) -> usize {
        match self {
            KxGroup::Modp2048 => 256,
            KxGroup::Fast61 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KxPrivate {
    pub group: KxGroup,
    exponent: Integer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KxPublic {
    pub group: KxGroup,
    element: Integer,
}

fn int_to_fixed(v: &Integer, width: usize) -> Vec<u8> {
    let digits = v.to_digits::<u8>(rug::integer::Order::MsfBe);
    assert!(digits.len() <= width, "element wider than group width");
    let mut out = vec![0u8; width - digits.len()];
    out.extend_from_slice(&digits);
    out
}

impl KxPrivate {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_u8(self.group.id());
        w.put_block(&int_to_fixed(&self.exponent, self.group.exponent_bytes()));
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(buf)?;
        let group = KxGroup::from_id(r.get_u8()?)?;
        let exponent = Integer::from_digits(r.get_block()?, rug::integer::Order::MsfBe);
        r.expect_end()?;
        if exponent == 0 {
            return Err(CryptoError::MalformedKey("zero exponent".into()));
        }
        Ok(KxPrivate { group, exponent })
    }
}

impl KxPublic {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_u8(self.group.id());
        w.put_block(&int_to_fixed(&self.element, self.group.element_bytes()));
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(buf)?;
        let group = KxGroup::from_id(r.get_u8()?)?;
        let element = Integer::from_digits(r.get_block()?, rug::integer::Order::MsfBe);
        r.expect_end()?;
        validate_element(group, &element)?;
        Ok(KxPublic { group, element })
    }
}

fn validate_element(group: KxGroup, y: &Integer) -> Result<(), CryptoError> {
    let p = group.prime();
    if *y <= 1 || *y >= p {
        return Err(CryptoError::MalformedKey("public element out of range".into()));
    }
    Ok(())
}

/// Generates a keypair from the supplied deterministic randomness source.
pub fn kx_keygen(group: KxGroup, rng: &mut dyn RngCore) -> (KxPrivate, KxPublic) {
    let p = group.prime();
    let exponent = loop {
        let mut buf = vec![0u8; group.exponent_bytes()];
        rng.fill_bytes(&mut buf);
        let x = Integer::from_digits(&buf, rug::integer::Order::MsfBe);
        if x > 1 && Integer::from(&x + 2) < p {
            break x;
        }
    };
    let element = group.generator().pow_mod(&exponent, &p).unwrap();
    (KxPrivate { group, exponent: exponent.clone() }, KxPublic { group, element })
}

/// Computes the shared seed; symmetric in the two parties.
pub fn agree(private: &KxPrivate, public: &KxPublic) -> Result<Seed, CryptoError> {
    if private.group != public.group {
        return Err(CryptoError::GroupMismatch);
    }
    validate_element(private.group, &public.element)?;
    let p = private.group.prime();
    let shared = public.element.clone().pow_mod(&private.exponent, &p).unwrap();
    let mut h = Sha256::new();
    h.update(b"kx-shared");
    h.update([private.group.id()]);
    h.update(int_to_fixed(&shared, private.group.element_bytes()));
    Ok(Seed(h.finalize().into()))
}
