//! The mix node state machine: receive processing, coin-toss response
//! selection, acknowledgement bookkeeping, pool flushing and resending.
//!
//! A node holds three tables — the message pool of outgoing slots, the
//! outstanding-ACK table mapping expected digests to pooled messages, and
//! the mailboxes. Nodes never connect to each other; they can only hand a
//! slot to whichever client happens to be interacting with them, so every
//! response is either a carrier document dispatching one slot to another
//! node or the fixed static page, decided by a coin toss.
//!
//! Incoming slots are checked against the ACK table before any decryption
//! is attempted: an acknowledgement is recognized purely by its first 32
//! bytes, and removes both the table row and the pooled message it covers.
//! Undecryptable slots (noise, trickle dummies, traffic for other nodes)
//! are silently ignored beyond the coin-toss response.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::codec::{make_ack, pad_to_slot, parse_inner, unpad, InnerMessage, Slot, SLOT_SIZE};
use crate::crypto::{
    decrypt, hash, supports_reencryption, ure_reencrypt_bytes, Digest, KeyPair, DIGEST_LEN,
};

/// Default re-send interval in logical ticks.
pub const DEFAULT_RETRY_INTERVAL: u64 = 64;
/// Default cap on sends per pool entry.
pub const DEFAULT_RETRY_MAX: u32 = 16;

#[derive(Clone, Debug)]
pub struct NodeConfig {
    /// The node's own script URL; carry targets never name it.
    pub url: String,
    /// Probability that a coin toss dispatches a carrier.
    pub coin_bias: f64,
    /// Ticks before an unacknowledged entry becomes re-sendable.
    pub retry_interval: u64,
    /// Sends per entry before it is dropped; `None` retries forever.
    pub retry_max: Option<u32>,
    /// When off, the node runs the acknowledgement-free variant: a dispatch
    /// removes the entry from the pool immediately.
    pub ack_enabled: bool,
    /// Emit a dummy slot of pure randomness to a random peer when a client
    /// interaction warranted a dispatch but nothing was sendable.
    pub trickle: bool,
}

impl NodeConfig {
    pub fn new(url: impl Into<String>) -> Self {
        NodeConfig {
            url: url.into(),
            coin_bias: 0.5,
            retry_interval: DEFAULT_RETRY_INTERVAL,
            retry_max: Some(DEFAULT_RETRY_MAX),
            ack_enabled: true,
            trickle: false,
        }
    }
}

/// The outward-visible reaction to one client interaction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeResponse {
    /// Hand `slot` to the client for auto-submission to `target`.
    Carry { slot: Slot, target: String },
    /// The short, byte-identical static page.
    FixedHtml,
}

impl NodeResponse {
    pub fn is_carry(&self) -> bool {
        matches!(self, NodeResponse::Carry { .. })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            NodeResponse::Carry { .. } => "carry",
            NodeResponse::FixedHtml => "fixed-html",
        }
    }
}

/// A pool dispatch produced outside the request path (trickle dummies).
#[derive(Clone, Debug)]
pub struct Dispatch {
    pub slot: Slot,
    pub target: String,
}

/// One client stimulus: a posted slot or a bare page visit.
#[derive(Clone, Debug)]
pub enum Stimulus {
    Post { slot: Slot, referer: Option<String> },
    Visit,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolEntry {
    pub id: u64,
    pub slot: Slot,
    pub destination: String,
    /// Present while the entry awaits acknowledgement. Acknowledgement
    /// slots themselves are fire-and-forget and carry `None`.
    pub expected_ack: Option<Digest>,
    pub retries: u32,
    pub entered_at: u64,
    pub last_sent: Option<u64>,
    pub is_ack: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct AckEntry {
    pool_id: u64,
    destination: String,
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot truncated")]
    Truncated,
    #[error("unsupported snapshot version {0}")]
    BadVersion(u16),
    #[error("snapshot field out of range")]
    BadField,
}

/// The three tables of a node plus its clock and randomness source.
pub struct NodeState {
    config: NodeConfig,
    keypair: KeyPair,
    pool: Vec<PoolEntry>,
    ack_table: BTreeMap<Digest, AckEntry>,
    mailboxes: BTreeMap<u128, VecDeque<Slot>>,
    peers: Vec<String>,
    rng: ChaCha20Rng,
    clock: u64,
    next_pool_id: u64,
    dispatch_due: bool,
    decrypt_attempts: u64,
}

impl NodeState {
    pub fn new(keypair: KeyPair, config: NodeConfig, rng_seed: u64) -> Self {
        NodeState {
            config,
            keypair,
            pool: Vec::new(),
            ack_table: BTreeMap::new(),
            mailboxes: BTreeMap::new(),
            peers: Vec::new(),
            rng: ChaCha20Rng::seed_from_u64(rng_seed),
            clock: 0,
            next_pool_id: 1,
            dispatch_due: false,
            decrypt_attempts: 0,
        }
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    /// Operator knobs (coin bias, retry policy, trickle) may change at
    /// runtime; the URL must not, since peers and acknowledgements key on
    /// it.
    pub fn config_mut(&mut self) -> &mut NodeConfig {
        &mut self.config
    }

    pub fn url(&self) -> &str {
        &self.config.url
    }

    pub fn public_key(&self) -> &crate::crypto::PublicKey {
        &self.keypair.public
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn pool_entries(&self) -> &[PoolEntry] {
        &self.pool
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    /// Entries still awaiting an acknowledgement.
    pub fn unacked_len(&self) -> usize {
        self.pool.iter().filter(|e| e.expected_ack.is_some()).count()
    }

    pub fn ack_table_len(&self) -> usize {
        self.ack_table.len()
    }

    pub fn mailbox(&self, id: u128) -> Option<&VecDeque<Slot>> {
        self.mailboxes.get(&id)
    }

    pub fn mailbox_total(&self) -> usize {
        self.mailboxes.values().map(|q| q.len()).sum()
    }

    /// Number of decryption attempts made so far; acknowledgements must
    /// never cause one.
    pub fn decrypt_attempts(&self) -> u64 {
        self.decrypt_attempts
    }

    /// Add a peer URL to the random-node selection set. Duplicates and the
    /// node's own URL are no-ops.
    pub fn register_peer(&mut self, url: &str) {
        if url != self.config.url && !self.peers.iter().any(|p| p == url) {
            self.peers.push(url.to_string());
        }
    }

    pub fn peers(&self) -> &[String] {
        &self.peers
    }

    pub(crate) fn random_peer(&mut self) -> Option<String> {
        if self.peers.is_empty() {
            return None;
        }
        let idx = self.rng.random_range(0..self.peers.len());
        Some(self.peers[idx].clone())
    }

    fn coin(&mut self) -> bool {
        self.rng.random_bool(self.config.coin_bias)
    }

    /// One full client interaction: advance the clock, process the
    /// stimulus, then run the flush pass; a trickle dispatch replaces a
    /// static response. Both the simulator and the gateway go through here,
    /// so their behavior for the same stimulus sequence is identical.
    pub fn interact(&mut self, stimulus: Stimulus, now: u64) -> NodeResponse {
        self.clock = now;
        let response = match stimulus {
            Stimulus::Post { slot, referer } => self.receive(&slot, referer.as_deref()),
            Stimulus::Visit => self.visit(),
        };
        let trickle = self.config.trickle;
        match (response, self.flush_tick(now, trickle)) {
            (NodeResponse::FixedHtml, Some(dispatch)) => NodeResponse::Carry {
                slot: dispatch.slot,
                target: dispatch.target,
            },
            (response, _) => response,
        }
    }

    /// Process one posted slot. Order matters: acknowledgement check before
    /// decryption, then header dispatch, then the response coin toss.
    pub fn receive(&mut self, slot: &Slot, referer: Option<&str>) -> NodeResponse {
        debug_assert_eq!(slot.as_bytes().len(), SLOT_SIZE);

        // 1. Acknowledgement check on the raw prefix, before any key work.
        let prefix = slot.ack_prefix();
        if let Some(entry) = self.ack_table.get(&prefix) {
            if referer == Some(entry.destination.as_str()) {
                let pool_id = entry.pool_id;
                self.ack_table.remove(&prefix);
                self.pool.retain(|e| e.id != pool_id);
                return NodeResponse::FixedHtml;
            }
            // Digest hit but the referer does not name the node we sent
            // the message to: a forged referer cannot redirect removals.
            return self.coin_dispatch();
        }

        // 2. Decrypt, or treat the slot as noise.
        let Ok(ciphertext) = unpad(slot) else {
            return self.coin_dispatch();
        };
        let ciphertext = ciphertext.to_vec();
        self.decrypt_attempts += 1;
        let Some(plaintext) = decrypt(&self.keypair.secret, &ciphertext) else {
            return self.coin_dispatch();
        };
        let Ok(message) = parse_inner(&plaintext) else {
            return self.coin_dispatch();
        };

        match message {
            // 3. Mailbox request: the coin decides between handing the
            // content (addressed to a random node) to this client and the
            // static page; a miss falls back to an ordinary pool toss.
            InnerMessage::Get { mailbox, .. } => {
                let heads = self.coin();
                let exists = self.mailboxes.get(&mailbox).is_some_and(|q| !q.is_empty());
                if exists {
                    if !heads {
                        return NodeResponse::FixedHtml;
                    }
                    let Some(target) = self.random_peer() else {
                        // Degenerate network: nothing to address the
                        // content to, so it stays put.
                        return NodeResponse::FixedHtml;
                    };
                    let queue = self.mailboxes.get_mut(&mailbox).unwrap();
                    let content = queue.pop_front().unwrap();
                    if queue.is_empty() {
                        self.mailboxes.remove(&mailbox);
                    }
                    NodeResponse::Carry {
                        slot: content,
                        target,
                    }
                } else if heads {
                    self.pool_dispatch_or_due()
                } else {
                    NodeResponse::FixedHtml
                }
            }

            // 4a. Mailbox delivery: re-pad the body to a full slot, append
            // it to the queue, and acknowledge the delivering node — the
            // last forwarding hop awaits the hash of exactly this
            // plaintext.
            InnerMessage::ToMailbox { mailbox, body } => {
                if let Ok(content) = pad_to_slot(&body, &mut self.rng) {
                    self.mailboxes.entry(mailbox).or_default().push_back(content);
                }
                self.queue_ack_for_referer(&plaintext, referer);
                self.coin_dispatch()
            }

            // 4b. Forwarding: pool the re-padded next layer, register the
            // expected acknowledgement, and acknowledge the node the
            // client says it came from.
            InnerMessage::ToNode {
                next_hop,
                expected_ack,
                body,
            } => {
                let Ok(forward) = pad_to_slot(&body, &mut self.rng) else {
                    return self.coin_dispatch();
                };
                let expected = self.config.ack_enabled.then_some(expected_ack);
                let id = self.push_pool(forward, next_hop.clone(), expected, false);
                if self.config.ack_enabled {
                    self.ack_table.insert(
                        expected_ack,
                        AckEntry {
                            pool_id: id,
                            destination: next_hop,
                        },
                    );
                }
                self.queue_ack_for_referer(&plaintext, referer);
                self.coin_dispatch()
            }

            // A terminal payload with no addressing: nothing to do with it.
            InnerMessage::Payload { .. } => self.coin_dispatch(),
        }
    }

    /// Response for a stimulus-free page hit: just the coin toss.
    pub fn visit(&mut self) -> NodeResponse {
        self.coin_dispatch()
    }

    /// Time-based bookkeeping, called after a client interaction completes
    /// or when a host timer fires. Ages entries into re-send eligibility,
    /// purges exhausted ones, and — when trickle is on and a dispatch was
    /// due but nothing was sendable — emits a dummy slot of pure
    /// randomness to a uniformly random peer.
    pub fn flush_tick(&mut self, now: u64, trickle: bool) -> Option<Dispatch> {
        self.clock = now;
        self.purge_exhausted();
        let due = std::mem::take(&mut self.dispatch_due);
        if trickle && due && self.eligible_indices().is_empty() {
            if let Some(target) = self.random_peer() {
                return Some(Dispatch {
                    slot: Slot::random(&mut self.rng),
                    target,
                });
            }
        }
        None
    }

    /// Queue an acknowledgement for the node a To-message came from: the
    /// hash of the decrypted plaintext, fire-and-forget. Submissions
    /// arriving without a referer get none.
    fn queue_ack_for_referer(&mut self, plaintext: &[u8], referer: Option<&str>) {
        if !self.config.ack_enabled {
            return;
        }
        if let Some(referer) = referer {
            let digest = hash(plaintext);
            let ack_slot = make_ack(digest, &mut self.rng);
            self.push_pool(ack_slot, referer.to_string(), None, true);
        }
    }

    fn coin_dispatch(&mut self) -> NodeResponse {
        if self.coin() {
            self.pool_dispatch_or_due()
        } else {
            NodeResponse::FixedHtml
        }
    }

    fn pool_dispatch_or_due(&mut self) -> NodeResponse {
        match self.dispatch_from_pool() {
            Some(response) => response,
            None => {
                self.dispatch_due = true;
                NodeResponse::FixedHtml
            }
        }
    }

    fn eligible_indices(&self) -> Vec<usize> {
        self.pool
            .iter()
            .enumerate()
            .filter(|(_, e)| {
                e.destination != self.config.url
                    && self.config.retry_max.is_none_or(|m| e.retries < m)
                    && e.last_sent
                        .is_none_or(|t| self.clock.saturating_sub(t) > self.config.retry_interval)
            })
            .map(|(i, _)| i)
            .collect()
    }

    fn dispatch_from_pool(&mut self) -> Option<NodeResponse> {
        let eligible = self.eligible_indices();
        if eligible.is_empty() {
            return None;
        }
        let pick = eligible[self.rng.random_range(0..eligible.len())];
        let clock = self.clock;

        // Re-randomize before each send under the re-encryption suite so
        // repeated sends are unlinkable; byte suites re-send verbatim.
        if supports_reencryption(self.keypair.public.suite) {
            let entry = &self.pool[pick];
            let refreshed = if entry.is_ack {
                // An acknowledgement is a digest prefix plus randomness;
                // only the tail can be re-drawn.
                let mut bytes = entry.slot.as_bytes().to_vec();
                self.rng.fill_bytes(&mut bytes[DIGEST_LEN..]);
                Some(Slot::from_vec(bytes).unwrap())
            } else {
                unpad(&entry.slot)
                    .ok()
                    .map(|ct| ct.to_vec())
                    .and_then(|ct| ure_reencrypt_bytes(&ct, &mut self.rng))
                    .and_then(|ct| pad_to_slot(&ct, &mut self.rng).ok())
            };
            if let Some(slot) = refreshed {
                self.pool[pick].slot = slot;
            }
        }

        let entry = &mut self.pool[pick];
        entry.retries += 1;
        entry.last_sent = Some(clock);
        let slot = entry.slot.clone();
        let target = entry.destination.clone();
        if !self.config.ack_enabled {
            // Acknowledgement-free variant: sending is forgetting.
            self.pool.remove(pick);
        }
        Some(NodeResponse::Carry { slot, target })
    }

    fn push_pool(
        &mut self,
        slot: Slot,
        destination: String,
        expected_ack: Option<Digest>,
        is_ack: bool,
    ) -> u64 {
        let id = self.next_pool_id;
        self.next_pool_id += 1;
        self.pool.push(PoolEntry {
            id,
            slot,
            destination,
            expected_ack,
            retries: 0,
            entered_at: self.clock,
            last_sent: None,
            is_ack,
        });
        id
    }

    /// Drop entries that have spent their send budget and had a full retry
    /// interval to be acknowledged, together with any table rows covering
    /// them.
    fn purge_exhausted(&mut self) {
        let Some(max) = self.config.retry_max else {
            return;
        };
        let clock = self.clock;
        let interval = self.config.retry_interval;
        let mut dropped: Vec<u64> = Vec::new();
        self.pool.retain(|e| {
            let spent = e.retries >= max
                && e
                    .last_sent
                    .is_some_and(|t| clock.saturating_sub(t) > interval);
            if spent {
                dropped.push(e.id);
            }
            !spent
        });
        if !dropped.is_empty() {
            self.ack_table.retain(|_, v| !dropped.contains(&v.pool_id));
        }
    }

    // -----------------------------------------------------------------
    // Snapshot: versioned binary of the three tables plus the clock.
    // -----------------------------------------------------------------

    const SNAPSHOT_MAGIC: &'static [u8; 6] = b"PHSNAP";
    const SNAPSHOT_VERSION: u16 = 1;

    pub fn snapshot(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(Self::SNAPSHOT_MAGIC);
        out.extend_from_slice(&Self::SNAPSHOT_VERSION.to_be_bytes());
        out.extend_from_slice(&self.clock.to_be_bytes());
        out.extend_from_slice(&self.next_pool_id.to_be_bytes());
        out.push(self.dispatch_due as u8);

        out.extend_from_slice(&(self.pool.len() as u32).to_be_bytes());
        for e in &self.pool {
            out.extend_from_slice(&e.id.to_be_bytes());
            out.extend_from_slice(e.slot.as_bytes());
            out.extend_from_slice(&(e.destination.len() as u16).to_be_bytes());
            out.extend_from_slice(e.destination.as_bytes());
            match e.expected_ack {
                Some(d) => {
                    out.push(1);
                    out.extend_from_slice(&d.0);
                }
                None => out.push(0),
            }
            out.extend_from_slice(&e.retries.to_be_bytes());
            out.extend_from_slice(&e.entered_at.to_be_bytes());
            match e.last_sent {
                Some(t) => {
                    out.push(1);
                    out.extend_from_slice(&t.to_be_bytes());
                }
                None => out.push(0),
            }
            out.push(e.is_ack as u8);
        }

        out.extend_from_slice(&(self.ack_table.len() as u32).to_be_bytes());
        for (digest, entry) in &self.ack_table {
            out.extend_from_slice(&digest.0);
            out.extend_from_slice(&entry.pool_id.to_be_bytes());
            out.extend_from_slice(&(entry.destination.len() as u16).to_be_bytes());
            out.extend_from_slice(entry.destination.as_bytes());
        }

        out.extend_from_slice(&(self.mailboxes.len() as u32).to_be_bytes());
        for (id, slots) in &self.mailboxes {
            out.extend_from_slice(&id.to_be_bytes());
            out.extend_from_slice(&(slots.len() as u32).to_be_bytes());
            for s in slots {
                out.extend_from_slice(s.as_bytes());
            }
        }
        out
    }

    /// Rebuild a node from a snapshot; key material, config and randomness
    /// come from the caller as on first start.
    pub fn restore(
        keypair: KeyPair,
        config: NodeConfig,
        rng_seed: u64,
        snapshot: &[u8],
    ) -> Result<Self, SnapshotError> {
        let mut r = SnapReader {
            data: snapshot,
            off: 0,
        };
        if r.bytes(6)? != Self::SNAPSHOT_MAGIC {
            return Err(SnapshotError::BadField);
        }
        let version = r.u16()?;
        if version != Self::SNAPSHOT_VERSION {
            return Err(SnapshotError::BadVersion(version));
        }
        let mut node = NodeState::new(keypair, config, rng_seed);
        node.clock = r.u64()?;
        node.next_pool_id = r.u64()?;
        node.dispatch_due = r.u8()? != 0;

        let pool_len = r.u32()? as usize;
        for _ in 0..pool_len {
            let id = r.u64()?;
            let slot =
                Slot::from_slice(r.bytes(SLOT_SIZE)?).map_err(|_| SnapshotError::BadField)?;
            let dest_len = r.u16()? as usize;
            let destination = String::from_utf8(r.bytes(dest_len)?.to_vec())
                .map_err(|_| SnapshotError::BadField)?;
            let expected_ack = if r.u8()? != 0 {
                Some(Digest(r.bytes(DIGEST_LEN)?.try_into().unwrap()))
            } else {
                None
            };
            let retries = r.u32()?;
            let entered_at = r.u64()?;
            let last_sent = if r.u8()? != 0 { Some(r.u64()?) } else { None };
            let is_ack = r.u8()? != 0;
            node.pool.push(PoolEntry {
                id,
                slot,
                destination,
                expected_ack,
                retries,
                entered_at,
                last_sent,
                is_ack,
            });
        }

        let ack_len = r.u32()? as usize;
        for _ in 0..ack_len {
            let digest = Digest(r.bytes(DIGEST_LEN)?.try_into().unwrap());
            let pool_id = r.u64()?;
            let dest_len = r.u16()? as usize;
            let destination = String::from_utf8(r.bytes(dest_len)?.to_vec())
                .map_err(|_| SnapshotError::BadField)?;
            node.ack_table.insert(
                digest,
                AckEntry {
                    pool_id,
                    destination,
                },
            );
        }

        let mbox_len = r.u32()? as usize;
        for _ in 0..mbox_len {
            let id = u128::from_be_bytes(r.bytes(16)?.try_into().unwrap());
            let count = r.u32()? as usize;
            let mut queue = VecDeque::with_capacity(count);
            for _ in 0..count {
                queue.push_back(
                    Slot::from_slice(r.bytes(SLOT_SIZE)?).map_err(|_| SnapshotError::BadField)?,
                );
            }
            node.mailboxes.insert(id, queue);
        }
        if r.off != snapshot.len() {
            return Err(SnapshotError::BadField);
        }
        Ok(node)
    }
}

struct SnapReader<'a> {
    data: &'a [u8],
    off: usize,
}

impl<'a> SnapReader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        let end = self.off.checked_add(n).ok_or(SnapshotError::Truncated)?;
        let out = self
            .data
            .get(self.off..end)
            .ok_or(SnapshotError::Truncated)?;
        self.off = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, SnapshotError> {
        Ok(self.bytes(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, SnapshotError> {
        Ok(u16::from_be_bytes(self.bytes(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_be_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_be_bytes(self.bytes(8)?.try_into().unwrap()))
    }
}
