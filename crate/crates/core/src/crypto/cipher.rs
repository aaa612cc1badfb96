//! Keyed-keystream block encryption.
//!
//! This is a stand-in cipher: ciphertext = plaintext XOR keystream, where the
//! keystream is SipHash-2-4 (128-bit output) keyed by the client key over
//! `(area, epoch, slot, counter)`. It is deterministic per context, so the
//! client can rebuild any dummy ciphertext the server holds, and it is
//! XOR-malleable, which the single-block XOR reply relies on. It provides no
//! integrity or IND-CPA guarantees.
//!
//! Plaintext layout: `checksum: u32 | tag: u64 | payload: [u8; B]`, all
//! little-endian. The checksum detects decryption under the wrong context.

use std::hash::Hasher;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use siphasher::sip::SipHasher13;
use siphasher::sip128::{Hasher128, SipHasher24};

use crate::error::Result;

pub const HEADER_BYTES: usize = 12;
const DUMMY_FLAG: u64 = 1 << 63;

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Key([u8; 16]);

impl std::fmt::Debug for Key {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Key(..)")
    }
}

impl Key {
    pub fn new(bytes: [u8; 16]) -> Self {
        Self(bytes)
    }

    pub fn from_seed(seed: u64) -> Self {
        let mut bytes = [0u8; 16];
        ChaCha20Rng::seed_from_u64(seed).fill_bytes(&mut bytes);
        Self(bytes)
    }

    pub fn bytes(&self) -> &[u8; 16] {
        &self.0
    }
}

/// Where a ciphertext lives: storage area, that area's epoch, and the slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Context {
    pub area: u32,
    pub epoch: u64,
    pub slot: u64,
}

impl Context {
    pub fn new(area: u32, epoch: u64, slot: u64) -> Self {
        Self { area, epoch, slot }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockTag {
    Real(u64),
    Dummy(u64),
}

impl BlockTag {
    fn encode(self) -> u64 {
        match self {
            BlockTag::Real(a) => a & !DUMMY_FLAG,
            BlockTag::Dummy(id) => id | DUMMY_FLAG,
        }
    }

    fn decode(raw: u64) -> Self {
        if raw & DUMMY_FLAG != 0 {
            BlockTag::Dummy(raw & !DUMMY_FLAG)
        } else {
            BlockTag::Real(raw)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub tag: BlockTag,
    pub payload: Vec<u8>,
}

impl Block {
    pub fn real(address: u64, payload: Vec<u8>) -> Self {
        Self {
            tag: BlockTag::Real(address),
            payload,
        }
    }

    pub fn dummy(id: u64, block_size: usize) -> Self {
        Self {
            tag: BlockTag::Dummy(id),
            payload: vec![0; block_size],
        }
    }

    pub fn address(&self) -> Option<u64> {
        match self.tag {
            BlockTag::Real(a) => Some(a),
            BlockTag::Dummy(_) => None,
        }
    }

    pub fn is_dummy(&self) -> bool {
        matches!(self.tag, BlockTag::Dummy(_))
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct Ciphertext(pub Vec<u8>);

impl std::fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Ciphertext({} bytes)", self.0.len())
    }
}

impl Ciphertext {
    pub fn zeroed(width: usize) -> Self {
        Self(vec![0; width])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn xor_in(&mut self, other: &Ciphertext) {
        debug_assert_eq!(self.0.len(), other.0.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a ^= b;
        }
    }
}

/// Ciphertext width for payloads of `block_size` bytes.
pub fn ciphertext_width(block_size: usize) -> usize {
    block_size + HEADER_BYTES
}

fn apply_keystream(key: &Key, ctx: Context, buf: &mut [u8]) {
    for (counter, chunk) in buf.chunks_mut(16).enumerate() {
        let mut h = SipHasher24::new_with_key(&key.0);
        h.write_u32(ctx.area);
        h.write_u64(ctx.epoch);
        h.write_u64(ctx.slot);
        h.write_u64(counter as u64);
        let ks = h.finish128().as_bytes();
        for (b, k) in chunk.iter_mut().zip(ks) {
            *b ^= k;
        }
    }
}

fn checksum(key: &Key, body: &[u8]) -> u32 {
    let mut h = SipHasher13::new_with_key(&key.0);
    h.write(body);
    h.finish() as u32
}

pub fn encrypt_block(key: &Key, ctx: Context, block: &Block) -> Ciphertext {
    let mut buf = Vec::with_capacity(ciphertext_width(block.payload.len()));
    buf.extend_from_slice(&[0; 4]);
    buf.extend_from_slice(&block.tag.encode().to_le_bytes());
    buf.extend_from_slice(&block.payload);
    let sum = checksum(key, &buf[4..]);
    buf[..4].copy_from_slice(&sum.to_le_bytes());
    apply_keystream(key, ctx, &mut buf);
    Ciphertext(buf)
}

pub fn decrypt_block(key: &Key, ctx: Context, ct: &Ciphertext) -> Result<Block> {
    let fail = || crate::Error::DecryptionFailure {
        area: ctx.area,
        epoch: ctx.epoch,
        slot: ctx.slot,
    };
    if ct.0.len() < HEADER_BYTES {
        return Err(fail());
    }
    let mut buf = ct.0.clone();
    apply_keystream(key, ctx, &mut buf);
    let stored = u32::from_le_bytes(buf[..4].try_into().expect("4 bytes"));
    if stored != checksum(key, &buf[4..]) {
        return Err(fail());
    }
    let tag = BlockTag::decode(u64::from_le_bytes(buf[4..12].try_into().expect("8 bytes")));
    Ok(Block {
        tag,
        payload: buf[HEADER_BYTES..].to_vec(),
    })
}

/// The dummy a level holds at `slot` during `epoch`: an all-zero payload
/// tagged with its slot, encrypted under the slot's own context.
pub fn make_dummy(key: &Key, level: u32, epoch: u64, slot: u64, block_size: usize) -> Ciphertext {
    encrypt_block(
        key,
        Context::new(level, epoch, slot),
        &Block::dummy(slot, block_size),
    )
}
