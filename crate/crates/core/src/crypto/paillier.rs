//! Additively homomorphic encryption: Paillier with n+1 as the generator,
//! shortened-exponent randomizers, CRT decryption, and a fixed-base window
//! table so bulk encryption stays fast at desk scale.
//!
//! The plaintext space is Z_n for the public modulus n. Parameters are
//! non-production by design; modulus size is a config knob.

use rand::RngCore;
use rug::integer::Order;
use rug::Integer;

use super::codec::{Reader, Writer};
use super::CryptoError;

pub const DEFAULT_MODULUS_BITS: u32 = 1024;
const RANDOMIZER_BITS: u32 = 256;
const WINDOW_BITS: u32 = 8;

#[derive(Debug, Clone)]
pub struct HePublicKey {
    n: Integer,
    n2: Integer,
    /// Randomizer base h^n mod n^2; encryption randomness is hn^x for a
    /// short random x.
    hn: Integer,
    /// Fixed-base table: table[j][w-1] = hn^(w << (8j)) mod n^2.
    table: Vec<Vec<Integer>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeSecretKey {
    p: Integer,
    q: Integer,
    n: Integer,
    p2: Integer,
    q2: Integer,
    hp: Integer,
    hq: Integer,
    q_inv_p: Integer,
}

#[derive(Debug, Clone)]
pub struct HeKeypair {
    pub public: HePublicKey,
    pub secret: HeSecretKey,
}

/// A Paillier ciphertext, an element of Z_{n^2}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeCiphertext(pub(crate) Integer);

impl PartialEq for HePublicKey {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.hn == other.hn
    }
}
impl Eq for HePublicKey {}

fn rand_bytes(rng: &mut dyn RngCore, len: usize) -> Vec<u8> {
    let mut buf = vec![0u8; len];
    rng.fill_bytes(&mut buf);
    buf
}

/// Uniform integer in [0, bound) by rejection sampling.
fn rand_below(rng: &mut dyn RngCore, bound: &Integer) -> Integer {
    let bits = bound.significant_bits() as usize;
    let bytes = bits.div_ceil(8);
    let top_mask = if bits % 8 == 0 { 0xffu8 } else { (1u8 << (bits % 8)) - 1 };
    loop {
        let mut buf = rand_bytes(rng, bytes);
        buf[0] &= top_mask;
        let v = Integer::from_digits(&buf, Order::MsfBe);
        if &v < bound {
            return v;
        }
    }
}

fn rand_prime(rng: &mut dyn RngCore, bits: u32) -> Integer {
    let bytes = (bits as usize).div_ceil(8);
    let mut buf = rand_bytes(rng, bytes);
    buf[0] |= 0b1100_0000; // top bits set so p*q reaches full width
    buf[bytes - 1] |= 1;
    let mut candidate = Integer::from_digits(&buf, Order::MsfBe);
    candidate.next_prime_mut();
    candidate
}

fn build_table(hn: &Integer, n2: &Integer) -> Vec<Vec<Integer>> {
    let positions = (RANDOMIZER_BITS / WINDOW_BITS) as usize;
    let mut table = Vec::with_capacity(positions);
    let mut base = hn.clone();
    for _ in 0..positions {
        let mut row = Vec::with_capacity(255);
        let mut acc = base.clone();
        for _ in 0..255 {
            row.push(acc.clone());
            acc = acc * &base;
            acc %= n2;
        }
        table.push(row);
        // base <- base^256
        for _ in 0..WINDOW_BITS {
            base.square_mut();
            base %= n2;
        }
    }
    table
}

impl HePublicKey {
    /// Public plaintext modulus (n).
    pub fn plaintext_modulus(&self) -> &Integer {
        &self.n
    }

    /// Fixed serialized ciphertext width for this key size.
    pub fn ciphertext_bytes(&self) -> usize {
        (self.n.significant_bits() as usize).div_ceil(8) * 2
    }

    fn randomizer(&self, rng: &mut dyn RngCore) -> Integer {
        // hn^x via the window table: one modmul per nonzero byte of x.
        let x = rand_bytes(rng, (RANDOMIZER_BITS / 8) as usize);
        let mut acc = Integer::from(1);
        for (j, &byte) in x.iter().rev().enumerate() {
            if byte != 0 {
                acc *= &self.table[j][byte as usize - 1];
                acc %= &self.n2;
            }
        }
        acc
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_block(&self.n.to_digits::<u8>(Order::MsfBe));
        w.put_block(&self.hn.to_digits::<u8>(Order::MsfBe));
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(buf)?;
        let n = Integer::from_digits(r.get_block()?, Order::MsfBe);
        let hn = Integer::from_digits(r.get_block()?, Order::MsfBe);
        r.expect_end()?;
        if n < 2 || hn < 1 {
            return Err(CryptoError::MalformedKey("degenerate public key".into()));
        }
        let n2 = Integer::from(&n * &n);
        let table = build_table(&hn, &n2);
        Ok(HePublicKey { n, n2, hn, table })
    }
}

impl HeSecretKey {
    fn from_primes(p: Integer, q: Integer) -> Self {
        let n = Integer::from(&p * &q);
        let p2 = Integer::from(&p * &p);
        let q2 = Integer::from(&q * &q);
        // hp = L_p((1+n)^(p-1) mod p^2)^-1 mod p, likewise hq.
        let lp = |u: &Integer, modulus: &Integer| -> Integer {
            Integer::from(u - 1u8) / modulus
        };
        let gp = Integer::from(&n + 1u8)
            .pow_mod(&Integer::from(&p - 1u8), &p2)
            .unwrap();
        let hp = lp(&gp, &p).invert(&p).expect("p divides L(g^(p-1))? invalid prime");
        let gq = Integer::from(&n + 1u8)
            .pow_mod(&Integer::from(&q - 1u8), &q2)
            .unwrap();
        let hq = lp(&gq, &q).invert(&q).expect("q divides L(g^(q-1))? invalid prime");
        let q_inv_p = q.clone().invert(&p).expect("p, q not coprime");
        HeSecretKey { p, q, n, p2, q2, hp, hq, q_inv_p }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_block(&self.p.to_digits::<u8>(Order::MsfBe));
        w.put_block(&self.q.to_digits::<u8>(Order::MsfBe));
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(buf)?;
        let p = Integer::from_digits(r.get_block()?, Order::MsfBe);
        let q = Integer::from_digits(r.get_block()?, Order::MsfBe);
        r.expect_end()?;
        if p < 3 || q < 3 || p == q {
            return Err(CryptoError::MalformedKey("degenerate secret key".into()));
        }
        Ok(HeSecretKey::from_primes(p, q))
    }
}

impl HeCiphertext {
    pub fn to_bytes(&self, pk: &HePublicKey) -> Vec<u8> {
        let width = pk.ciphertext_bytes();
        let digits = self.0.to_digits::<u8>(Order::MsfBe);
        let mut w = Writer::new();
        let mut padded = vec![0u8; width - digits.len()];
        padded.extend_from_slice(&digits);
        w.put_block(&padded);
        w.finish()
    }

    pub fn from_bytes(buf: &[u8], pk: &HePublicKey) -> Result<Self, CryptoError> {
        let mut r = Reader::new(buf)?;
        let v = Integer::from_digits(r.get_block()?, Order::MsfBe);
        r.expect_end()?;
        if v >= pk.n2 {
            return Err(CryptoError::Codec("ciphertext out of range".into()));
        }
        Ok(HeCiphertext(v))
    }
}

/// Generates a keypair with an `modulus_bits`-bit modulus from the given
/// deterministic randomness source.
pub fn he_keygen(rng: &mut dyn RngCore, modulus_bits: u32) -> HeKeypair {
    assert!(modulus_bits >= 64, "modulus too small");
    let half = modulus_bits / 2;
    let p = rand_prime(rng, half);
    let q = loop {
        let q = rand_prime(rng, half);
        if q != p {
            break q;
        }
    };
    let secret = HeSecretKey::from_primes(p, q);
    let n = secret.n.clone();
    let n2 = Integer::from(&n * &n);
    let h = rand_below(rng, &n) % &n + 2u8;
    let hn = h.pow_mod(&n, &n2).unwrap();
    let table = build_table(&hn, &n2);
    HeKeypair { public: HePublicKey { n, n2, hn, table }, secret }
}

/// Encrypts `m` (must be in [0, n)). Probabilistic.
pub fn he_enc(
    pk: &HePublicKey,
    m: &Integer,
    rng: &mut dyn RngCore,
) -> Result<HeCiphertext, CryptoError> {
    if *m < 0 || *m >= pk.n {
        return Err(CryptoError::PlaintextRange);
    }
    // (1 + m*n) * hn^x mod n^2
    let gm = (Integer::from(m * &pk.n) + 1u8) % &pk.n2;
    let mut c = gm * pk.randomizer(rng);
    c %= &pk.n2;
    Ok(HeCiphertext(c))
}

pub fn he_enc_u64(
    pk: &HePublicKey,
    m: u64,
    rng: &mut dyn RngCore,
) -> Result<HeCiphertext, CryptoError> {
    he_enc(pk, &Integer::from(m), rng)
}

/// Decrypts via CRT. A ciphertext from a different keypair yields garbage,
/// not an error.
pub fn he_dec(sk: &HeSecretKey, c: &HeCiphertext) -> Integer {
    let lp = |u: &Integer, modulus: &Integer| -> Integer { Integer::from(u - 1u8) / modulus };
    let cp = c.0.clone().pow_mod(&Integer::from(&sk.p - 1u8), &sk.p2).unwrap();
    let mp = lp(&cp, &sk.p) * &sk.hp % &sk.p;
    let cq = c.0.clone().pow_mod(&Integer::from(&sk.q - 1u8), &sk.q2).unwrap();
    let mq = lp(&cq, &sk.q) * &sk.hq % &sk.q;
    // Garner recombination.
    let mut diff = (mp - &mq) % &sk.p;
    if diff < 0 {
        diff += &sk.p;
    }
    let t = diff * &sk.q_inv_p % &sk.p;
    (t * &sk.q + mq) % &sk.n
}

/// Homomorphic addition of plaintexts.
pub fn he_add(pk: &HePublicKey, a: &HeCiphertext, b: &HeCiphertext) -> HeCiphertext {
    let mut c = Integer::from(&a.0 * &b.0);
    c %= &pk.n2;
    HeCiphertext(c)
}

/// Homomorphic multiplication of the plaintext by scalar `k` (in [0, n)).
pub fn he_scalar_mul(pk: &HePublicKey, c: &HeCiphertext, k: &Integer) -> HeCiphertext {
    let k = Integer::from(k % &pk.n);
    HeCiphertext(c.0.clone().pow_mod(&k, &pk.n2).unwrap())
}

pub fn he_scalar_mul_u64(pk: &HePublicKey, c: &HeCiphertext, k: u64) -> HeCiphertext {
    he_scalar_mul(pk, c, &Integer::from(k))
}
