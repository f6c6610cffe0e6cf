//! Four-round masked-sum secure aggregation with threshold dropout
//! recovery.
//!
//! Rounds: Advertise (devices publish key-agreement public keys),
//! ShareKeys (devices deal Shamir shares of their self-mask seed and of
//! their agreement private key, sealed per peer and relayed by the
//! server), MaskedInput (devices send their doubly masked vectors), and
//! Unmask (surviving devices reveal, per peer, either that peer's
//! self-mask share or its key share, never both). The server subtracts
//! survivors' self-masks and dropouts' residual pairwise masks and outputs
//! the survivor sum mod M.
//!
//! # Wire format
//!
//! Every device message starts with a one-byte format version, then:
//!
//! ```text
//! header:  session_id: block(16) | round: u8 | sender: u32
//! round 1: public_key: block
//! round 2: count: u32, then per envelope: recipient: u32 | sealed: block
//! round 3: d: u32, then d values: u64
//! round 4: count: u32, then per reveal: subject: u32 | kind: u8 (1 = self-mask
//!          share, 2 = key share) | x: u64 | secret_len: u32 | limbs: u32,
//!          then limb values: u64
//! ```
//!
//! Blocks are u32-length-prefixed; all integers are little-endian.
//! Sealed envelopes hold the recipient's two shares XOR-encrypted under
//! the pairwise agreed seed, so the relaying server cannot open them.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::crypto::codec::{Reader, Writer};
use crate::crypto::field::FieldElement;
use crate::crypto::{
    agree, expand, expand_bytes, kx_keygen, reconstruct_bytes, share_bytes, ByteShare,
    CryptoError, KxGroup, KxPrivate, KxPublic, Seed,
};

/// Default sum modulus: 32-bit histogram cells.
pub const DEFAULT_SUM_MODULUS: u64 = 1 << 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SecAggError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("message for round {got:?} while in round {expected:?}")]
    RoundMismatch { expected: Round, got: Round },
    #[error("round {round:?} has {got} survivors, need {need}")]
    InsufficientSurvivors { round: Round, got: usize, need: usize },
    #[error("device {device} revealed both share kinds for one subject")]
    BothShareKinds { device: u32 },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Round {
    Advertise,
    ShareKeys,
    MaskedInput,
    Unmask,
    Done,
}

impl Round {
    fn tag(self) -> u8 {
        match self {
            Round::Advertise => 1,
            Round::ShareKeys => 2,
            Round::MaskedInput => 3,
            Round::Unmask => 4,
            Round::Done => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecAggConfig {
    pub n: usize,
    pub t: usize,
    pub d: usize,
    pub m: u64,
    pub session_id: [u8; 16],
    pub group: KxGroup,
}

impl SecAggConfig {
    pub fn new(n: usize, t: usize, d: usize) -> Result<Self, SecAggError> {
        let cfg = SecAggConfig {
            n,
            t,
            d,
            m: DEFAULT_SUM_MODULUS,
            session_id: [0; 16],
            group: KxGroup::Modp2048,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SecAggError> {
        if self.t < 1 || self.t > self.n {
            return Err(SecAggError::InvalidConfig(format!(
                "threshold {} outside 1..={}",
                self.t, self.n
            )));
        }
        if self.d == 0 {
            return Err(SecAggError::InvalidConfig("dimension must be positive".into()));
        }
        if self.m < 2 {
            return Err(SecAggError::InvalidConfig("modulus must be at least 2".into()));
        }
        Ok(())
    }
}

fn add_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 + b as u128) % m as u128) as u64
}

fn sub_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 + (m - b % m) as u128) % m as u128) as u64
}

/// One share sent during Unmask, about one subject device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reveal {
    SelfMaskShare(ByteShare),
    KeyShare(ByteShare),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeviceMsg {
    Advertise { sender: u32, public: KxPublic },
    ShareKeys { sender: u32, envelopes: BTreeMap<u32, Vec<u8>> },
    MaskedInput { sender: u32, y: Vec<u64> },
    Unmask { sender: u32, reveals: BTreeMap<u32, Reveal> },
}

impl DeviceMsg {
    pub fn sender(&self) -> u32 {
        match self {
            DeviceMsg::Advertise { sender, .. }
            | DeviceMsg::ShareKeys { sender, .. }
            | DeviceMsg::MaskedInput { sender, .. }
            | DeviceMsg::Unmask { sender, .. } => *sender,
        }
    }

    pub fn round(&self) -> Round {
        match self {
            DeviceMsg::Advertise { .. } => Round::Advertise,
            DeviceMsg::ShareKeys { .. } => Round::ShareKeys,
            DeviceMsg::MaskedInput { .. } => Round::MaskedInput,
            DeviceMsg::Unmask { .. } => Round::Unmask,
        }
    }

    pub fn to_bytes(&self, session_id: &[u8; 16]) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_block(session_id);
        w.put_u8(self.round().tag());
        w.put_u32(self.sender());
        match self {
            DeviceMsg::Advertise { public, .. } => {
                w.put_block(&public.to_bytes());
            }
            DeviceMsg::ShareKeys { envelopes, .. } => {
                w.put_u32(envelopes.len() as u32);
                for (recipient, sealed) in envelopes {
                    w.put_u32(*recipient);
                    w.put_block(sealed);
                }
            }
            DeviceMsg::MaskedInput { y, .. } => {
                w.put_u32(y.len() as u32);
                for v in y {
                    w.put_u64(*v);
                }
            }
            DeviceMsg::Unmask { reveals, .. } => {
                w.put_u32(reveals.len() as u32);
                for (subject, reveal) in reveals {
                    w.put_u32(*subject);
                    let (kind, share) = match reveal {
                        Reveal::SelfMaskShare(s) => (1u8, s),
                        Reveal::KeyShare(s) => (2u8, s),
                    };
                    w.put_u8(kind);
                    w.put_u64(share.x);
                    w.put_u32(share.secret_len as u32);
                    w.put_u32(share.limbs.len() as u32);
                    for limb in &share.limbs {
                        w.put_u64(limb.value());
                    }
                }
            }
        }
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<(Self, [u8; 16]), SecAggError> {
        let mut r = Reader::new(buf)?;
        let session: [u8; 16] = r
            .get_block()?
            .try_into()
            .map_err(|_| SecAggError::Malformed("bad session id width".into()))?;
        let tag = r.get_u8()?;
        let sender = r.get_u32()?;
        let msg = match tag {
            1 => DeviceMsg::Advertise { sender, public: KxPublic::from_bytes(r.get_block()?)? },
            2 => {
                let count = r.get_u32()?;
                let mut envelopes = BTreeMap::new();
                for _ in 0..count {
                    let recipient = r.get_u32()?;
                    envelopes.insert(recipient, r.get_block()?.to_vec());
                }
                DeviceMsg::ShareKeys { sender, envelopes }
            }
            3 => {
                let d = r.get_u32()?;
                let mut y = Vec::with_capacity(d as usize);
                for _ in 0..d {
                    y.push(r.get_u64()?);
                }
                DeviceMsg::MaskedInput { sender, y }
            }
            4 => {
                let count = r.get_u32()?;
                let mut reveals = BTreeMap::new();
                for _ in 0..count {
                    let subject = r.get_u32()?;
                    let kind = r.get_u8()?;
                    let x = r.get_u64()?;
                    let secret_len = r.get_u32()? as usize;
                    let limb_count = r.get_u32()?;
                    let mut limbs = Vec::with_capacity(limb_count as usize);
                    for _ in 0..limb_count {
                        limbs.push(FieldElement::new(r.get_u64()?));
                    }
                    let share = ByteShare { x, limbs, secret_len };
                    let reveal = match kind {
                        1 => Reveal::SelfMaskShare(share),
                        2 => Reveal::KeyShare(share),
                        other => {
                            return Err(SecAggError::Malformed(format!("reveal kind {other}")))
                        }
                    };
                    reveals.insert(subject, reveal);
                }
                DeviceMsg::Unmask { sender, reveals }
            }
            other => return Err(SecAggError::Malformed(format!("round tag {other}"))),
        };
        r.expect_end()?;
        Ok((msg, session))
    }
}

/// Per-round server broadcast to one device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Broadcast {
    Start,
    Keys(BTreeMap<u32, KxPublic>),
    /// Survivor set after ShareKeys plus the sealed envelopes addressed to
    /// this device.
    Envelopes { u2: Vec<u32>, sealed: BTreeMap<u32, Vec<u8>> },
    /// Who delivered shares (u2) and who delivered masked input (u3).
    SurvivorSets { u2: Vec<u32>, u3: Vec<u32> },
}

impl Broadcast {
    fn round(&self) -> Round {
        match self {
            Broadcast::Start => Round::Advertise,
            Broadcast::Keys(_) => Round::ShareKeys,
            Broadcast::Envelopes { .. } => Round::MaskedInput,
            Broadcast::SurvivorSets { .. } => Round::Unmask,
        }
    }
}

fn pairwise_mask_seed(private: &KxPrivate, public: &KxPublic) -> Result<Seed, CryptoError> {
    Ok(agree(private, public)?.derive(b"pairwise-mask"))
}

fn envelope_key(private: &KxPrivate, public: &KxPublic, sender: u32) -> Result<Seed, CryptoError> {
    let mut label = b"envelope-".to_vec();
    label.extend_from_slice(&sender.to_le_bytes());
    Ok(agree(private, public)?.derive(&label))
}

fn xor_seal(key: &Seed, data: &[u8]) -> Vec<u8> {
    let stream = expand_bytes(key, data.len());
    data.iter().zip(stream).map(|(b, k)| b ^ k).collect()
}

fn encode_share_pair(b_share: &ByteShare, key_share: &ByteShare) -> Vec<u8> {
    let mut w = Writer::new();
    for share in [b_share, key_share] {
        w.put_u64(share.x);
        w.put_u32(share.secret_len as u32);
        w.put_u32(share.limbs.len() as u32);
        for limb in &share.limbs {
            w.put_u64(limb.value());
        }
    }
    w.finish()
}

fn decode_share_pair(buf: &[u8]) -> Result<(ByteShare, ByteShare), SecAggError> {
    let mut r = Reader::new(buf)?;
    let read_one = |r: &mut Reader| -> Result<ByteShare, SecAggError> {
        let x = r.get_u64()?;
        let secret_len = r.get_u32()? as usize;
        let count = r.get_u32()?;
        let mut limbs = Vec::with_capacity(count as usize);
        for _ in 0..count {
            limbs.push(FieldElement::new(r.get_u64()?));
        }
        Ok(ByteShare { x, limbs, secret_len })
    };
    let b = read_one(&mut r)?;
    let k = read_one(&mut r)?;
    r.expect_end()?;
    Ok((b, k))
}

/// One device's protocol state machine.
#[derive(Debug)]
pub struct Device {
    cfg: SecAggConfig,
    index: u32,
    rng: ChaCha20Rng,
    round: Round,
    private: KxPrivate,
    public: KxPublic,
    self_mask: Seed,
    input: Option<Vec<u64>>,
    peer_publics: BTreeMap<u32, KxPublic>,
    /// Shares received from each peer about that peer's secrets, plus our
    /// own pair of shares about ourselves.
    held_shares: BTreeMap<u32, (ByteShare, ByteShare)>,
}

impl Device {
    pub fn new(
        cfg: SecAggConfig,
        index: u32,
        input: Vec<u64>,
        seed: Seed,
    ) -> Result<Self, SecAggError> {
        cfg.validate()?;
        if input.len() != cfg.d {
            return Err(SecAggError::InvalidConfig(format!(
                "input dimension {} != {}",
                input.len(),
                cfg.d
            )));
        }
        let mut rng = ChaCha20Rng::from_seed(seed.0);
        let (private, public) = kx_keygen(cfg.group, &mut rng);
        let self_mask = Seed::from_bytes(rand::Rng::random(&mut rng));
        let input = input.iter().map(|v| v % cfg.m).collect();
        Ok(Device {
            cfg,
            index,
            rng,
            round: Round::Advertise,
            private,
            public,
            self_mask,
            input: Some(input),
            peer_publics: BTreeMap::new(),
            held_shares: BTreeMap::new(),
        })
    }

    pub fn round(&self) -> Round {
        self.round
    }

    /// The self-mask seed b_i, exposed for mask-accounting harnesses that
    /// verify pairwise cancellation from outside the protocol.
    pub fn self_mask_seed(&self) -> &Seed {
        &self.self_mask
    }

    pub fn step(&mut self, broadcast: &Broadcast) -> Result<DeviceMsg, SecAggError> {
        if broadcast.round() != self.round {
            return Err(SecAggError::RoundMismatch {
                expected: self.round,
                got: broadcast.round(),
            });
        }
        match broadcast {
            Broadcast::Start => {
                self.round = Round::ShareKeys;
                Ok(DeviceMsg::Advertise { sender: self.index, public: self.public.clone() })
            }
            Broadcast::Keys(publics) => self.share_keys(publics),
            Broadcast::Envelopes { u2, sealed } => self.masked_input(u2, sealed),
            Broadcast::SurvivorSets { u2, u3 } => self.unmask(u2, u3),
        }
    }

    fn share_keys(
        &mut self,
        publics: &BTreeMap<u32, KxPublic>,
    ) -> Result<DeviceMsg, SecAggError> {
        if publics.len() < self.cfg.t {
            return Err(SecAggError::InsufficientSurvivors {
                round: Round::ShareKeys,
                got: publics.len(),
                need: self.cfg.t,
            });
        }
        self.peer_publics = publics.clone();
        // Shares are dealt at evaluation point index+1 for every device in
        // the cohort; undelivered points are simply discarded.
        let b_shares =
            share_bytes(self.self_mask.as_bytes(), self.cfg.t, self.cfg.n, &mut self.rng)?;
        let key_shares =
            share_bytes(&self.private.to_bytes(), self.cfg.t, self.cfg.n, &mut self.rng)?;
        let mine = self.index as usize;
        self.held_shares
            .insert(self.index, (b_shares[mine].clone(), key_shares[mine].clone()));
        let mut envelopes = BTreeMap::new();
        for (&peer, public) in publics {
            if peer == self.index {
                continue;
            }
            let body = encode_share_pair(&b_shares[peer as usize], &key_shares[peer as usize]);
            let key = envelope_key(&self.private, public, self.index)?;
            envelopes.insert(peer, xor_seal(&key, &body));
        }
        self.round = Round::MaskedInput;
        Ok(DeviceMsg::ShareKeys { sender: self.index, envelopes })
    }

    fn masked_input(
        &mut self,
        u2: &[u32],
        sealed: &BTreeMap<u32, Vec<u8>>,
    ) -> Result<DeviceMsg, SecAggError> {
        if u2.len() < self.cfg.t {
            return Err(SecAggError::InsufficientSurvivors {
                round: Round::MaskedInput,
                got: u2.len(),
                need: self.cfg.t,
            });
        }
        for (&peer, envelope) in sealed {
            let public = self
                .peer_publics
                .get(&peer)
                .ok_or_else(|| SecAggError::Malformed(format!("envelope from unknown {peer}")))?;
            let key = envelope_key(&self.private, public, peer)?;
            let body = xor_seal(&key, envelope);
            self.held_shares.insert(peer, decode_share_pair(&body)?);
        }
        let x = self.input.take().ok_or_else(|| {
            SecAggError::Malformed("input already consumed".into())
        })?;
        let mut y: Vec<u64> = x
            .iter()
            .zip(expand(&self.self_mask, self.cfg.d, self.cfg.m))
            .map(|(v, mask)| add_mod(*v, mask, self.cfg.m))
            .collect();
        for &peer in u2 {
            if peer == self.index {
                continue;
            }
            let public = self
                .peer_publics
                .get(&peer)
                .ok_or_else(|| SecAggError::Malformed(format!("no public key for {peer}")))?;
            let mask = expand(&pairwise_mask_seed(&self.private, public)?, self.cfg.d, self.cfg.m);
            for (acc, m) in y.iter_mut().zip(mask) {
                *acc = if peer > self.index {
                    add_mod(*acc, m, self.cfg.m)
                } else {
                    sub_mod(*acc, m, self.cfg.m)
                };
            }
        }
        self.round = Round::Unmask;
        Ok(DeviceMsg::MaskedInput { sender: self.index, y })
    }

    fn unmask(&mut self, u2: &[u32], u3: &[u32]) -> Result<DeviceMsg, SecAggError> {
        if u3.len() < self.cfg.t {
            return Err(SecAggError::InsufficientSurvivors {
                round: Round::Unmask,
                got: u3.len(),
                need: self.cfg.t,
            });
        }
        let mut reveals = BTreeMap::new();
        for &peer in u2 {
            let Some((b_share, key_share)) = self.held_shares.get(&peer) else {
                continue;
            };
            // Exactly one kind per subject: the self-mask share for peers
            // whose masked input arrived, the key share for dropouts.
            let reveal = if u3.contains(&peer) {
                Reveal::SelfMaskShare(b_share.clone())
            } else {
                Reveal::KeyShare(key_share.clone())
            };
            reveals.insert(peer, reveal);
        }
        self.round = Round::Done;
        Ok(DeviceMsg::Unmask { sender: self.index, reveals })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerOutput {
    /// Per-device broadcasts for the next round.
    Broadcasts(BTreeMap<u32, Broadcast>),
    FinalSum(Vec<u64>),
}

/// The aggregation server's state machine.
#[derive(Debug)]
pub struct Server {
    cfg: SecAggConfig,
    round: Round,
    publics: BTreeMap<u32, KxPublic>,
    u2: Vec<u32>,
    u3: Vec<u32>,
    masked: BTreeMap<u32, Vec<u64>>,
    /// How many dropout key reconstructions the final round performed.
    pub dropout_reconstructions: usize,
}

impl Server {
    pub fn new(cfg: SecAggConfig) -> Result<Self, SecAggError> {
        cfg.validate()?;
        Ok(Server {
            cfg,
            round: Round::Advertise,
            publics: BTreeMap::new(),
            u2: Vec::new(),
            u3: Vec::new(),
            masked: BTreeMap::new(),
            dropout_reconstructions: 0,
        })
    }

    pub fn round(&self) -> Round {
        self.round
    }

    fn check_survivors(&self, round: Round, got: usize) -> Result<(), SecAggError> {
        if got < self.cfg.t {
            return Err(SecAggError::InsufficientSurvivors { round, got, need: self.cfg.t });
        }
        Ok(())
    }

    pub fn step(&mut self, messages: &[DeviceMsg]) -> Result<ServerOutput, SecAggError> {
        for m in messages {
            if m.round() != self.round {
                return Err(SecAggError::RoundMismatch { expected: self.round, got: m.round() });
            }
        }
        match self.round {
            Round::Advertise => self.collect_keys(messages),
            Round::ShareKeys => self.relay_envelopes(messages),
            Round::MaskedInput => self.collect_masked(messages),
            Round::Unmask => self.unmask(messages),
            Round::Done => Err(SecAggError::RoundMismatch {
                expected: Round::Done,
                got: Round::Done,
            }),
        }
    }

    fn collect_keys(&mut self, messages: &[DeviceMsg]) -> Result<ServerOutput, SecAggError> {
        for m in messages {
            let DeviceMsg::Advertise { sender, public } = m else { unreachable!() };
            self.publics.insert(*sender, public.clone());
        }
        self.check_survivors(Round::Advertise, self.publics.len())?;
        self.round = Round::ShareKeys;
        let out = self
            .publics
            .keys()
            .map(|&i| (i, Broadcast::Keys(self.publics.clone())))
            .collect();
        Ok(ServerOutput::Broadcasts(out))
    }

    fn relay_envelopes(&mut self, messages: &[DeviceMsg]) -> Result<ServerOutput, SecAggError> {
        self.u2 = messages.iter().map(DeviceMsg::sender).collect();
        self.u2.sort_unstable();
        self.check_survivors(Round::ShareKeys, self.u2.len())?;
        let mut per_recipient: BTreeMap<u32, BTreeMap<u32, Vec<u8>>> =
            self.u2.iter().map(|&i| (i, BTreeMap::new())).collect();
        for m in messages {
            let DeviceMsg::ShareKeys { sender, envelopes } = m else { unreachable!() };
            for (recipient, sealed) in envelopes {
                if let Some(inbox) = per_recipient.get_mut(recipient) {
                    inbox.insert(*sender, sealed.clone());
                }
            }
        }
        self.round = Round::MaskedInput;
        let u2 = self.u2.clone();
        let out = per_recipient
            .into_iter()
            .map(|(i, sealed)| (i, Broadcast::Envelopes { u2: u2.clone(), sealed }))
            .collect();
        Ok(ServerOutput::Broadcasts(out))
    }

    fn collect_masked(&mut self, messages: &[DeviceMsg]) -> Result<ServerOutput, SecAggError> {
        for m in messages {
            let DeviceMsg::MaskedInput { sender, y } = m else { unreachable!() };
            if y.len() != self.cfg.d {
                return Err(SecAggError::Malformed(format!(
                    "masked vector of dimension {}",
                    y.len()
                )));
            }
            self.masked.insert(*sender, y.clone());
        }
        self.u3 = self.masked.keys().copied().collect();
        self.check_survivors(Round::MaskedInput, self.u3.len())?;
        self.round = Round::Unmask;
        let broadcast =
            Broadcast::SurvivorSets { u2: self.u2.clone(), u3: self.u3.clone() };
        let out = self.u3.iter().map(|&i| (i, broadcast.clone())).collect();
        Ok(ServerOutput::Broadcasts(out))
    }

    fn unmask(&mut self, messages: &[DeviceMsg]) -> Result<ServerOutput, SecAggError> {
        self.check_survivors(Round::Unmask, messages.len())?;
        let mut mask_shares: BTreeMap<u32, Vec<ByteShare>> = BTreeMap::new();
        let mut key_shares: BTreeMap<u32, Vec<ByteShare>> = BTreeMap::new();
        for m in messages {
            let DeviceMsg::Unmask { reveals, .. } = m else { unreachable!() };
            for (subject, reveal) in reveals {
                match reveal {
                    Reveal::SelfMaskShare(s) => {
                        mask_shares.entry(*subject).or_default().push(s.clone())
                    }
                    Reveal::KeyShare(s) => key_shares.entry(*subject).or_default().push(s.clone()),
                }
            }
        }
        // The server must never hold both kinds for one device; that would
        // let it strip a living device's self-mask.
        if let Some(device) =
            mask_shares.keys().find(|k| key_shares.contains_key(k)).copied()
        {
            return Err(SecAggError::BothShareKinds { device });
        }

        let (d, m) = (self.cfg.d, self.cfg.m);
        let mut sum = vec![0u64; d];
        for y in self.masked.values() {
            for (acc, v) in sum.iter_mut().zip(y) {
                *acc = add_mod(*acc, *v, m);
            }
        }
        // Survivors: subtract the reconstructed self-masks.
        for &i in &self.u3 {
            let shares = mask_shares
                .get(&i)
                .ok_or_else(|| SecAggError::Malformed(format!("no self-mask shares for {i}")))?;
            let seed_bytes = reconstruct_bytes(shares, self.cfg.t)?;
            let seed = Seed::from_bytes(
                seed_bytes
                    .as_slice()
                    .try_into()
                    .map_err(|_| SecAggError::Malformed("bad self-mask seed width".into()))?,
            );
            for (acc, v) in sum.iter_mut().zip(expand(&seed, d, m)) {
                *acc = sub_mod(*acc, v, m);
            }
        }
        // Dropouts after ShareKeys: reconstruct their agreement key and
        // strip the residual pairwise masks inside survivors' vectors.
        for &dropped in self.u2.iter().filter(|i| !self.u3.contains(i)) {
            let shares = key_shares.get(&dropped).ok_or_else(|| {
                SecAggError::Malformed(format!("no key shares for dropout {dropped}"))
            })?;
            let private = KxPrivate::from_bytes(&reconstruct_bytes(shares, self.cfg.t)?)?;
            self.dropout_reconstructions += 1;
            for &alive in &self.u3 {
                let public = self.publics.get(&alive).expect("survivor advertised a key");
                let mask = expand(&pairwise_mask_seed(&private, public)?, d, m);
                // Survivor `alive` carried +mask if dropped > alive, else
                // -mask; cancel whichever it was.
                for (acc, v) in sum.iter_mut().zip(mask) {
                    *acc = if dropped > alive {
                        sub_mod(*acc, v, m)
                    } else {
                        add_mod(*acc, v, m)
                    };
                }
            }
        }
        self.round = Round::Done;
        Ok(ServerOutput::FinalSum(sum))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionOutcome {
    Sum(Vec<u64>),
    Aborted { round: Round, survivors: usize, need: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionReport {
    pub outcome: SessionOutcome,
    /// Every delivered device message, serialized in (round, sender) order.
    pub transcript: Vec<u8>,
    pub dropout_reconstructions: usize,
}

/// Derives the per-device randomness seed from a session master seed.
pub fn device_seed(master_seed: u64, index: u32) -> Seed {
    let mut base = [0u8; 32];
    base[..8].copy_from_slice(&master_seed.to_le_bytes());
    Seed::from_bytes(base).derive(b"secagg-device").derive(&index.to_le_bytes())
}

/// Drives both state machines to completion. A device listed in `drops`
/// fails to deliver its message for that round and every later one.
pub fn run_session(
    cfg: &SecAggConfig,
    inputs: &[Vec<u64>],
    drops: &BTreeMap<u32, Round>,
    master_seed: u64,
) -> Result<SessionReport, SecAggError> {
    cfg.validate()?;
    if inputs.len() != cfg.n {
        return Err(SecAggError::InvalidConfig(format!(
            "{} inputs for {} devices",
            inputs.len(),
            cfg.n
        )));
    }
    let mut devices: BTreeMap<u32, Device> = (0..cfg.n as u32)
        .map(|i| {
            Device::new(cfg.clone(), i, inputs[i as usize].clone(), device_seed(master_seed, i))
                .map(|d| (i, d))
        })
        .collect::<Result<_, _>>()?;
    let mut server = Server::new(cfg.clone())?;
    let mut transcript = Vec::new();

    let delivers = |i: u32, round: Round| drops.get(&i).is_none_or(|&dr| round < dr);

    let mut broadcasts: BTreeMap<u32, Broadcast> =
        devices.keys().map(|&i| (i, Broadcast::Start)).collect();
    for round in [Round::Advertise, Round::ShareKeys, Round::MaskedInput, Round::Unmask] {
        let mut messages = Vec::new();
        for (&i, broadcast) in &broadcasts {
            if !delivers(i, round) {
                continue;
            }
            let msg = devices.get_mut(&i).unwrap().step(broadcast)?;
            transcript.extend_from_slice(&msg.to_bytes(&cfg.session_id));
            messages.push(msg);
        }
        match server.step(&messages) {
            Ok(ServerOutput::Broadcasts(next)) => broadcasts = next,
            Ok(ServerOutput::FinalSum(sum)) => {
                return Ok(SessionReport {
                    outcome: SessionOutcome::Sum(sum),
                    transcript,
                    dropout_reconstructions: server.dropout_reconstructions,
                });
            }
            Err(SecAggError::InsufficientSurvivors { round, got, need }) => {
                return Ok(SessionReport {
                    outcome: SessionOutcome::Aborted { round, survivors: got, need },
                    transcript,
                    dropout_reconstructions: server.dropout_reconstructions,
                });
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!("protocol always terminates inside the round loop")
}
