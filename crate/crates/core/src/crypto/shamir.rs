//! Shamir threshold secret sharing over GF(2^61 - 1), plus a byte-string
//! layer that shares arbitrary secrets limb by limb.

use rand::RngCore;

use super::field::FieldElement;
use super::CryptoError;

/// One evaluation of the sharing polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecretShare {
    /// Evaluation point, nonzero and unique within a share set.
    pub x: FieldElement,
    pub y: FieldElement,
}

/// Splits `secret` into `n` shares, any `t` of which reconstruct it.
pub fn share(
    secret: FieldElement,
    t: usize,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<SecretShare>, CryptoError> {
    if t < 1 || t > n || n as u64 >= super::field::FIELD_PRIME {
        return Err(CryptoError::InvalidThreshold { t, n });
    }
    // Degree t-1 polynomial with constant term = secret.
    let mut coeffs = Vec::with_capacity(t);
    coeffs.push(secret);
    for _ in 1..t {
        coeffs.push(FieldElement::new(rng.next_u64()));
    }
    let shares = (1..=n as u64)
        .map(|xi| {
            let x = FieldElement::new(xi);
            let mut y = FieldElement::ZERO;
            for &c in coeffs.iter().rev() {
                y = y * x + c;
            }
            SecretShare { x, y }
        })
        .collect();
    Ok(shares)
}

/// Recovers the secret by Lagrange interpolation at zero.
///
/// All supplied shares are used; at least `t` are required and evaluation
/// points must be distinct and nonzero.
pub fn reconstruct(shares: &[SecretShare], t: usize) -> Result<FieldElement, CryptoError> {
    if t < 1 {
        return Err(CryptoError::InvalidThreshold { t, n: shares.len() });
    }
    if shares.len() < t {
        return Err(CryptoError::NotEnoughShares { need: t, got: shares.len() });
    }
    let points = &shares[..t];
    for (i, s) in points.iter().enumerate() {
        if s.x == FieldElement::ZERO {
            return Err(CryptoError::ZeroSharePoint);
        }
        if points[..i].iter().any(|o| o.x == s.x) {
            return Err(CryptoError::DuplicateShare);
        }
    }
    let mut acc = FieldElement::ZERO;
    for (i, si) in points.iter().enumerate() {
        let mut num = FieldElement::ONE;
        let mut den = FieldElement::ONE;
        for (j, sj) in points.iter().enumerate() {
            if i != j {
                num = num * (-sj.x);
                den = den * (si.x - sj.x);
            }
        }
        acc = acc + si.y * num * den.inv();
    }
    Ok(acc)
}

/// Shares of a byte-string secret: one evaluation point, one field value
/// per 7-byte limb, and the original length so reconstruction is exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteShare {
    pub x: u64,
    pub limbs: Vec<FieldElement>,
    pub secret_len: usize,
}

const LIMB_BYTES: usize = 7; // 56 bits, always below the field prime

/// Shares an arbitrary byte string limb-wise with a common evaluation point
/// per recipient.
pub fn share_bytes(
    secret: &[u8],
    t: usize,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<ByteShare>, CryptoError> {
    let limbs: Vec<FieldElement> = secret
        .chunks(LIMB_BYTES)
        .map(|chunk| {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            FieldElement::new(u64::from_le_bytes(buf))
        })
        .collect();
    let mut out: Vec<ByteShare> = (1..=n as u64)
        .map(|x| ByteShare { x, limbs: Vec::with_capacity(limbs.len()), secret_len: secret.len() })
        .collect();
    for &limb in &limbs {
        let limb_shares = share(limb, t, n, rng)?;
        for (holder, ls) in out.iter_mut().zip(limb_shares) {
            debug_assert_eq!(holder.x, ls.x.value());
            holder.limbs.push(ls.y);
        }
    }
    Ok(out)
}

/// Inverse of [`share_bytes`].
pub fn reconstruct_bytes(shares: &[ByteShare], t: usize) -> Result<Vec<u8>, CryptoError> {
    if shares.len() < t {
        return Err(CryptoError::NotEnoughShares { need: t, got: shares.len() });
    }
    let first = &shares[0];
    if shares.iter().any(|s| s.limbs.len() != first.limbs.len() || s.secret_len != first.secret_len)
    {
        return Err(CryptoError::InconsistentShares("mismatched limb counts".into()));
    }
    let mut out = Vec::with_capacity(first.secret_len);
    for limb_idx in 0..first.limbs.len() {
        let limb_shares: Vec<SecretShare> = shares
            .iter()
            .map(|s| SecretShare { x: FieldElement::new(s.x), y: s.limbs[limb_idx] })
            .collect();
        let limb = reconstruct(&limb_shares, t)?;
        out.extend_from_slice(&limb.value().to_le_bytes()[..LIMB_BYTES]);
    }
    out.truncate(first.secret_len);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(42)
    }

    #[test]
    fn constant_polynomial_when_t_is_one() {
        let shares = share(FieldElement::new(5), 1, 3, &mut rng()).unwrap();
        assert!(shares.iter().all(|s| s.y == FieldElement::new(5)));
    }

    #[test]
    fn any_t_of_n_reconstructs() {
        let mut r = rng();
        for _ in 0..20 {
            let secret = FieldElement::new(r.next_u64());
            let shares = share(secret, 3, 5, &mut r).unwrap();
            // every 3-subset of the 5 shares
            for a in 0..5 {
                for b in a + 1..5 {
                    for c in b + 1..5 {
                        let sel = [shares[a], shares[b], shares[c]];
                        assert_eq!(reconstruct(&sel, 3).unwrap(), secret);
                    }
                }
            }
        }
    }

    #[test]
    fn too_few_shares_is_an_error() {
        let shares = share(FieldElement::new(9), 3, 3, &mut rng()).unwrap();
        assert_eq!(
            reconstruct(&shares[..2], 3),
            Err(CryptoError::NotEnoughShares { need: 3, got: 2 })
        );
    }

    #[test]
    fn duplicate_points_rejected() {
        let shares = share(FieldElement::new(9), 2, 3, &mut rng()).unwrap();
        let dup = [shares[0], shares[0]];
        assert_eq!(reconstruct(&dup, 2), Err(CryptoError::DuplicateShare));
    }

    /// Evaluates the unique polynomial through `points` at `x`.
    fn lagrange_eval(points: &[(FieldElement, FieldElement)], x: FieldElement) -> FieldElement {
        let mut acc = FieldElement::ZERO;
        for (i, &(xi, yi)) in points.iter().enumerate() {
            let mut num = FieldElement::ONE;
            let mut den = FieldElement::ONE;
            for (j, &(xj, _)) in points.iter().enumerate() {
                if i != j {
                    num = num * (x - xj);
                    den = den * (xi - xj);
                }
            }
            acc = acc + yi * num * den.inv();
        }
        acc
    }

    #[test]
    fn t_minus_one_shares_are_consistent_with_any_secret() {
        // For every candidate secret there exists a degree t-1 polynomial
        // agreeing with the t-1 observed shares and having that secret at
        // zero, so the shares constrain nothing.
        let shares = share(FieldElement::new(123456789), 3, 5, &mut rng()).unwrap();
        let partial = &shares[..2];
        for candidate in [0u64, 1, 777, 123456789] {
            let pts = [
                (FieldElement::ZERO, FieldElement::new(candidate)),
                (partial[0].x, partial[0].y),
                (partial[1].x, partial[1].y),
            ];
            assert_eq!(lagrange_eval(&pts, FieldElement::ZERO).value(), candidate % super::super::field::FIELD_PRIME);
            assert_eq!(lagrange_eval(&pts, partial[0].x), partial[0].y);
            assert_eq!(lagrange_eval(&pts, partial[1].x), partial[1].y);
        }
    }

    #[test]
    fn byte_secret_roundtrip() {
        let mut r = rng();
        let secret = b"a multi-limb secret value exceeding seven bytes";
        let shares = share_bytes(secret, 4, 7, &mut r).unwrap();
        let got = reconstruct_bytes(&shares[2..6], 4).unwrap();
        assert_eq!(got, secret);
    }
}
