//! A Chaumian mix network whose inter-node transport rides covert channels
//! inside ordinary HTTP browsing.
//!
//! Mix nodes are web scripts. They never talk to each other directly: every
//! slot of ciphertext travels inside an HTML document that an unwitting
//! browser auto-submits to the next node. Senders and receivers disguise
//! their own submissions and mailbox polls as exactly that carrier traffic,
//! so an observer limited to TCP/IP and HTTP headers cannot tell them apart
//! from bystander surfers.
//!
//! The crate is organized around the wire unit, the [`codec::Slot`]: a fixed
//! 4096-byte message that is always padded with randomness. Everything else
//! builds on it:
//!
//! - [`crypto`]: pluggable encryption suites, hashing, and universal
//!   re-encryption (re-randomizing a ciphertext without the public key).
//! - [`codec`]: slot padding, the inner header grammar, and layered onion
//!   construction with per-hop acknowledgement digests.
//! - [`node`]: the mix node state machine — message pool, outstanding-ACK
//!   table, mailboxes, coin-toss dispatch, retry and trickle policies.
//! - [`channels`]: the HTTP/HTML covert channel codecs (redirect query
//!   strings, cookies, referer, auto-submit carrier documents).
//! - [`sim`]: a deterministic discrete-event simulation of nodes, linkers,
//!   surfers, senders and receivers, producing full transaction traces.
//! - [`adversary`]: the header-level observer — trace projection, anonymity
//!   sets, a fixed threshold distinguisher, and the pool-drain attack driver.
//! - [`gateway`]: a real HTTP service hosting one node, wire-compatible with
//!   the simulator's in-memory nodes.

pub mod adversary;
pub mod channels;
pub mod codec;
pub mod crypto;
pub mod gateway;
pub mod node;
pub mod sim;


pub use codec::{Slot, SLOT_SIZE};
pub use crypto::{hash, keygen, Digest, KeyPair, PublicKey, SecretKey, SuiteId};
pub use node::{NodeConfig, NodeResponse, NodeState};

