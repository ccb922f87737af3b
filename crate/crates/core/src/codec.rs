//! Byte-exact wire format: fixed-size slots, randomness padding, the inner
//! header grammar, and layered onion construction.
//!
//! Every inter-node payload, acknowledgement, and sender submission is
//! exactly one [`Slot`] of [`SLOT_SIZE`] bytes. A slot's padded region is a
//! two-byte length prefix, the payload, and random fill; the payload of a
//! forwarded message is itself the next layer's ciphertext, so capacity
//! shrinks with each hop while everything on the wire stays the same size.
//!
//! The inner grammar is binary: a one-byte kind tag, then for node
//! forwarding an acknowledgement digest, a length-prefixed URL and the next
//! ciphertext; for mailbox delivery and mailbox requests a 128-bit mailbox
//! identifier and the remaining bytes as body.

use rand::RngCore;
use thiserror::Error;

use crate::crypto::{
    self, ciphertext_len, encrypt, hash, max_plaintext_len, CryptoError, Digest, PublicKey,
    DIGEST_LEN,
};

/// Fixed wire size of every slot.
pub const SLOT_SIZE: usize = 4096;
/// Two bytes of the padded region hold the payload length.
pub const SLOT_PAYLOAD_MAX: usize = SLOT_SIZE - 2;
/// Default cap on onion path length. Deeper paths squeeze the payload below
/// useful size under the hybrid suite's per-layer overhead.
pub const MAX_HOPS: usize = 4;

const KIND_TO_NODE: u8 = 1;
const KIND_TO_MAILBOX: u8 = 2;
const KIND_GET: u8 = 3;
const KIND_PAYLOAD: u8 = 4;

/// Fixed header cost of a forwarding layer, excluding the URL bytes.
pub const TO_NODE_HEADER_FIXED: usize = 1 + DIGEST_LEN + 2;
/// Header cost of a mailbox delivery or request.
pub const MAILBOX_HEADER: usize = 1 + 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("payload of {len} bytes exceeds slot capacity of {max}")]
    PayloadTooLarge { len: usize, max: usize },
    #[error("payload of {len} bytes exceeds the {max}-byte capacity of this path")]
    OversizeForPath { len: usize, max: usize },
    #[error("onion path is empty")]
    EmptyPath,
    #[error("onion path of {hops} hops exceeds the {max}-hop limit")]
    TooManyHops { hops: usize, max: usize },
    #[error("onion path repeats a hop consecutively")]
    DuplicateHop,
    #[error("path layers leave no room for any payload")]
    PathTooTight,
    #[error("slot must be exactly {SLOT_SIZE} bytes, got {0}")]
    BadSlotSize(usize),
    #[error("padded slot carries an invalid length prefix")]
    BadPadding,
    #[error("invalid hex dump: {0}")]
    BadHexDump(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("unknown kind tag {0:#04x}")]
    UnknownKind(u8),
    #[error("message truncated in {0}")]
    Truncated(&'static str),
    #[error("next-hop URL is not valid UTF-8")]
    BadUrl,
    #[error("next-hop URL is empty")]
    EmptyUrl,
}

// ---------------------------------------------------------------------------
// Slot
// ---------------------------------------------------------------------------

/// A fixed-size opaque wire message.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Slot(Box<[u8; SLOT_SIZE]>);

impl Slot {
    pub fn from_vec(bytes: Vec<u8>) -> Result<Self, CodecError> {
        let len = bytes.len();
        let arr: Box<[u8; SLOT_SIZE]> = bytes
            .into_boxed_slice()
            .try_into()
            .map_err(|_| CodecError::BadSlotSize(len))?;
        Ok(Slot(arr))
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CodecError> {
        Self::from_vec(bytes.to_vec())
    }

    /// A slot of pure randomness, used for trickle dummies.
    pub fn random(rng: &mut dyn RngCore) -> Self {
        let mut arr = Box::new([0u8; SLOT_SIZE]);
        rng.fill_bytes(&mut arr[..]);
        Slot(arr)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0[..]
    }

    /// The first 32 bytes, compared against the outstanding-ACK table.
    pub fn ack_prefix(&self) -> Digest {
        Digest(self.0[..DIGEST_LEN].try_into().unwrap())
    }

    /// Fixture format: lowercase hex, 64 characters per line.
    pub fn to_hex_dump(&self) -> String {
        let full = hex::encode(&self.0[..]);
        let mut out = String::with_capacity(full.len() + full.len() / 64 + 1);
        for line in full.as_bytes().chunks(64) {
            out.push_str(std::str::from_utf8(line).unwrap());
            out.push('\n');
        }
        out
    }

    pub fn from_hex_dump(dump: &str) -> Result<Self, CodecError> {
        let compact: String = dump.chars().filter(|c| !c.is_whitespace()).collect();
        let bytes = hex::decode(&compact).map_err(|e| CodecError::BadHexDump(e.to_string()))?;
        Self::from_vec(bytes)
    }
}

impl std::fmt::Debug for Slot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Slot({}…)", hex::encode(&self.0[..8]))
    }
}

/// Pad a payload into a full slot: length prefix, payload, random fill.
pub fn pad_to_slot(payload: &[u8], rng: &mut dyn RngCore) -> Result<Slot, CodecError> {
    if payload.len() > SLOT_PAYLOAD_MAX {
        return Err(CodecError::PayloadTooLarge {
            len: payload.len(),
            max: SLOT_PAYLOAD_MAX,
        });
    }
    let mut arr = Box::new([0u8; SLOT_SIZE]);
    arr[..2].copy_from_slice(&(payload.len() as u16).to_be_bytes());
    arr[2..2 + payload.len()].copy_from_slice(payload);
    rng.fill_bytes(&mut arr[2 + payload.len()..]);
    Ok(Slot(arr))
}

/// Strip the padding of [`pad_to_slot`].
pub fn unpad(slot: &Slot) -> Result<&[u8], CodecError> {
    let len = u16::from_be_bytes(slot.0[..2].try_into().unwrap()) as usize;
    if len > SLOT_PAYLOAD_MAX {
        return Err(CodecError::BadPadding);
    }
    Ok(&slot.0[2..2 + len])
}

// ---------------------------------------------------------------------------
// Inner message grammar
// ---------------------------------------------------------------------------

/// Decrypted plaintext of one layer, parsed into headers and body.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InnerMessage {
    /// Forward `body` (the next layer's ciphertext) to `next_hop`; the
    /// forwarding node should expect `expected_ack` back.
    ToNode {
        next_hop: String,
        expected_ack: Digest,
        body: Vec<u8>,
    },
    /// Deposit `body` into the named mailbox on this node.
    ToMailbox { mailbox: u128, body: Vec<u8> },
    /// Request the content of the named mailbox.
    Get { mailbox: u128, body: Vec<u8> },
    /// Terminal payload with no addressing.
    Payload { body: Vec<u8> },
}

impl InnerMessage {
    pub fn kind_name(&self) -> &'static str {
        match self {
            InnerMessage::ToNode { .. } => "to-node",
            InnerMessage::ToMailbox { .. } => "to-mailbox",
            InnerMessage::Get { .. } => "get",
            InnerMessage::Payload { .. } => "payload",
        }
    }
}

pub fn encode_inner(msg: &InnerMessage) -> Vec<u8> {
    match msg {
        InnerMessage::ToNode {
            next_hop,
            expected_ack,
            body,
        } => {
            let url = next_hop.as_bytes();
            let mut out = Vec::with_capacity(TO_NODE_HEADER_FIXED + url.len() + body.len());
            out.push(KIND_TO_NODE);
            out.extend_from_slice(&expected_ack.0);
            out.extend_from_slice(&(url.len() as u16).to_be_bytes());
            out.extend_from_slice(url);
            out.extend_from_slice(body);
            out
        }
        InnerMessage::ToMailbox { mailbox, body } => {
            let mut out = Vec::with_capacity(MAILBOX_HEADER + body.len());
            out.push(KIND_TO_MAILBOX);
            out.extend_from_slice(&mailbox.to_be_bytes());
            out.extend_from_slice(body);
            out
        }
        InnerMessage::Get { mailbox, body } => {
            let mut out = Vec::with_capacity(MAILBOX_HEADER + body.len());
            out.push(KIND_GET);
            out.extend_from_slice(&mailbox.to_be_bytes());
            out.extend_from_slice(body);
            out
        }
        InnerMessage::Payload { body } => {
            let mut out = Vec::with_capacity(1 + body.len());
            out.push(KIND_PAYLOAD);
            out.extend_from_slice(body);
            out
        }
    }
}

/// Total on well-formed encodings; anything else is a parse error and the
/// receiving node discards the slot.
pub fn parse_inner(plaintext: &[u8]) -> Result<InnerMessage, ParseError> {
    let (&tag, rest) = plaintext
        .split_first()
        .ok_or(ParseError::Truncated("kind tag"))?;
    match tag {
        KIND_TO_NODE => {
            if rest.len() < DIGEST_LEN + 2 {
                return Err(ParseError::Truncated("forwarding header"));
            }
            let expected_ack = Digest(rest[..DIGEST_LEN].try_into().unwrap());
            let url_len =
                u16::from_be_bytes(rest[DIGEST_LEN..DIGEST_LEN + 2].try_into().unwrap()) as usize;
            let url_start = DIGEST_LEN + 2;
            if rest.len() < url_start + url_len {
                return Err(ParseError::Truncated("next-hop URL"));
            }
            let url = std::str::from_utf8(&rest[url_start..url_start + url_len])
                .map_err(|_| ParseError::BadUrl)?;
            if url.is_empty() {
                return Err(ParseError::EmptyUrl);
            }
            Ok(InnerMessage::ToNode {
                next_hop: url.to_string(),
                expected_ack,
                body: rest[url_start + url_len..].to_vec(),
            })
        }
        KIND_TO_MAILBOX | KIND_GET => {
            if rest.len() < 16 {
                return Err(ParseError::Truncated("mailbox identifier"));
            }
            let mailbox = u128::from_be_bytes(rest[..16].try_into().unwrap());
            let body = rest[16..].to_vec();
            if tag == KIND_TO_MAILBOX {
                Ok(InnerMessage::ToMailbox { mailbox, body })
            } else {
                Ok(InnerMessage::Get { mailbox, body })
            }
        }
        KIND_PAYLOAD => Ok(InnerMessage::Payload {
            body: rest.to_vec(),
        }),
        other => Err(ParseError::UnknownKind(other)),
    }
}

// ---------------------------------------------------------------------------
// Onion construction
// ---------------------------------------------------------------------------

/// A built onion: what to submit, where, and which acknowledgement digest
/// each forwarding node on the path must later receive.
#[derive(Clone, Debug)]
pub struct OnionPlan {
    pub first_hop: String,
    pub first_slot: Slot,
    /// One entry per intermediate forwarding hop, in path order.
    pub per_hop_acks: Vec<(String, Digest)>,
}

/// Largest payload an onion over `path` can carry, walking the per-layer
/// header and ciphertext overhead from the outermost slot inwards. `None`
/// when the layers alone exceed the slot.
pub fn max_onion_payload(suite: crypto::SuiteId, path_urls: &[&str]) -> Option<usize> {
    if path_urls.is_empty() {
        return None;
    }
    let mut ct_budget = SLOT_PAYLOAD_MAX;
    for next_url in path_urls.iter().skip(1) {
        let plain_budget = max_plaintext_len(suite, ct_budget)?;
        ct_budget = plain_budget.checked_sub(TO_NODE_HEADER_FIXED + next_url.len())?;
    }
    max_plaintext_len(suite, ct_budget)?.checked_sub(MAILBOX_HEADER)
}

/// Build the layered message for `path`, innermost delivery being the named
/// mailbox on the final node. Each outer layer names the next hop and the
/// hash of the next layer's full plaintext as the acknowledgement to expect.
pub fn build_onion(
    payload: &[u8],
    path: &[(String, PublicKey)],
    final_mailbox: u128,
    rng: &mut dyn RngCore,
) -> Result<OnionPlan, CodecError> {
    build_onion_with_limit(payload, path, final_mailbox, MAX_HOPS, rng)
}

/// [`build_onion`] with a caller-chosen hop cap. Deeper paths shrink the
/// payload budget per the capacity law and are rejected when nothing fits.
pub fn build_onion_with_limit(
    payload: &[u8],
    path: &[(String, PublicKey)],
    final_mailbox: u128,
    max_hops: usize,
    rng: &mut dyn RngCore,
) -> Result<OnionPlan, CodecError> {
    if path.is_empty() {
        return Err(CodecError::EmptyPath);
    }
    if path.len() > max_hops {
        return Err(CodecError::TooManyHops {
            hops: path.len(),
            max: max_hops,
        });
    }
    if path.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(CodecError::DuplicateHop);
    }
    let suite = path[0].1.suite;
    let urls: Vec<&str> = path.iter().map(|(u, _)| u.as_str()).collect();
    let max = max_onion_payload(suite, &urls).ok_or(CodecError::PathTooTight)?;
    if payload.len() > max {
        return Err(CodecError::OversizeForPath {
            len: payload.len(),
            max,
        });
    }

    let (_, last_pk) = path.last().unwrap();
    let mut plain = encode_inner(&InnerMessage::ToMailbox {
        mailbox: final_mailbox,
        body: payload.to_vec(),
    });
    let mut ct = encrypt(last_pk, &plain, rng)?;
    let mut acks_rev: Vec<(String, Digest)> = Vec::with_capacity(path.len() - 1);
    for j in (0..path.len() - 1).rev() {
        let digest = hash(&plain);
        acks_rev.push((path[j].0.clone(), digest));
        plain = encode_inner(&InnerMessage::ToNode {
            next_hop: path[j + 1].0.clone(),
            expected_ack: digest,
            body: ct,
        });
        ct = encrypt(&path[j].1, &plain, rng)?;
    }
    debug_assert_eq!(ct.len(), ciphertext_len(suite, plain.len()));
    let first_slot = pad_to_slot(&ct, rng)?;
    acks_rev.reverse();
    Ok(OnionPlan {
        first_hop: path[0].0.clone(),
        first_slot,
        per_hop_acks: acks_rev,
    })
}

/// A mailbox request slot for the given node.
pub fn build_get(
    mailbox: u128,
    node_pk: &PublicKey,
    rng: &mut dyn RngCore,
) -> Result<Slot, CodecError> {
    let plain = encode_inner(&InnerMessage::Get {
        mailbox,
        body: Vec::new(),
    });
    let ct = encrypt(node_pk, &plain, rng)?;
    pad_to_slot(&ct, rng)
}

/// An acknowledgement slot: the digest, then randomness to the fixed size.
pub fn make_ack(digest: Digest, rng: &mut dyn RngCore) -> Slot {
    let mut arr = Box::new([0u8; SLOT_SIZE]);
    arr[..DIGEST_LEN].copy_from_slice(&digest.0);
    rng.fill_bytes(&mut arr[DIGEST_LEN..]);
    Slot(arr)
}
