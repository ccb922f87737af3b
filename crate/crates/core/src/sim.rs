//! Deterministic discrete-event simulation of the whole ecosystem: nodes,
//! linkers, unwitting surfers, senders and receivers, producing a full
//! transaction trace for the adversary harness.
//!
//! Every client behaves identically on the wire. A visit is one GET for a
//! linker's frameset followed by the chain of POSTs the returned carrier
//! documents demand, until a static page ends the chain. Senders and
//! receivers differ only in what they substitute: when one of them holds a
//! pending submission or mailbox poll and a carrier arrives, they replace
//! the carried slot (and the form target) with their own and let the chain
//! continue. They never issue a request a surfer would not have issued, so
//! role separation exists only in payload bytes the observer cannot see.
//!
//! A consequence worth knowing when writing configs: carriers are the only
//! substitution opportunities, and an idle network emits none. Turning
//! `trickle` on lets nodes mint dummy carriers from ordinary visits, which
//! bootstraps carriage in cold or surfer-free networks.
//!
//! Time is logical: one tick is one scheduling quantum, clients act in a
//! fixed order, and a single seed determines the entire run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::channels::{AUTO_SUBMIT_DOC_LEN, STATIC_DOC_LEN};
use crate::codec::{build_get, build_onion, unpad, CodecError, OnionPlan, Slot};
use crate::crypto::{hash, keygen, SuiteId};
use crate::node::{NodeConfig, NodeResponse, NodeState, Stimulus};

/// Modeled size of request line plus headers.
const REQUEST_HEADER_BYTES: u32 = 400;
/// Modeled POST body: `m=` plus the transport-encoded slot (4/3 of 4096).
const POST_BODY_BYTES: u32 = 2 + 5462;
/// Hard cap on one visit chain; a fair coin never gets near it.
const CHAIN_CAP: u32 = 4096;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("onion construction failed for sender {sender}: {source}")]
    Onion {
        sender: usize,
        source: CodecError,
    },
    #[error("report contains no chains")]
    EmptyChains,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        hex::decode(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SenderSpec {
    /// Message payload, hex-encoded in config files.
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
    /// Node indices forming the onion path.
    pub path: Vec<usize>,
    pub mailbox: u128,
    /// Tick at which the submission intent is queued; the actual POST rides
    /// the first carrier received on or after it.
    #[serde(default)]
    pub submit_tick: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ReceiverSpec {
    pub mailbox: u128,
    /// Index of the node holding the mailbox.
    pub node: usize,
    /// Per-tick probability of queueing a mailbox poll.
    pub poll_rate: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SimConfig {
    pub n_nodes: usize,
    pub n_linkers: usize,
    pub n_surfers: usize,
    pub senders: Vec<SenderSpec>,
    pub receivers: Vec<ReceiverSpec>,
    /// Per-tick probability that a client visits a linker page.
    pub surfer_visit_rate: f64,
    pub coin_bias: f64,
    pub trickle: bool,
    pub seed: u64,
    pub max_ticks: u64,
    pub suite: SuiteId,
    pub ack_enabled: bool,
    pub retry_interval: u64,
    pub retry_max: Option<u32>,
    /// Negative-control sabotage: sender and receiver substitution POSTs
    /// are recorded at double body size, giving the adversary harness a
    /// real leak to find.
    pub broken_double_post: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_nodes: 3,
            n_linkers: 3,
            n_surfers: 0,
            senders: Vec::new(),
            receivers: Vec::new(),
            surfer_visit_rate: 0.05,
            coin_bias: 0.5,
            trickle: false,
            seed: 0,
            max_ticks: 1000,
            suite: SuiteId::Test,
            ack_enabled: true,
            retry_interval: crate::node::DEFAULT_RETRY_INTERVAL,
            retry_max: Some(crate::node::DEFAULT_RETRY_MAX),
            broken_double_post: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let mut errs = Vec::new();
        if self.n_nodes == 0 {
            errs.push("n_nodes must be at least 1".to_string());
        }
        if self.n_linkers == 0 {
            errs.push("n_linkers must be at least 1".to_string());
        }
        for (name, rate) in [
            ("surfer_visit_rate", self.surfer_visit_rate),
            ("coin_bias", self.coin_bias),
        ] {
            if !(0.0..=1.0).contains(&rate) || !rate.is_finite() {
                errs.push(format!("{name} must lie in [0, 1], got {rate}"));
            }
        }
        for (i, s) in self.senders.iter().enumerate() {
            if s.path.is_empty() {
                errs.push(format!("sender {i}: empty path"));
            }
            if s.path.iter().any(|&n| n >= self.n_nodes) {
                errs.push(format!("sender {i}: path names a node out of range"));
            }
            if s.path.windows(2).any(|w| w[0] == w[1]) {
                errs.push(format!("sender {i}: path repeats a hop consecutively"));
            }
        }
        for (i, r) in self.receivers.iter().enumerate() {
            if r.node >= self.n_nodes {
                errs.push(format!("receiver {i}: node out of range"));
            }
            if !(0.0..=1.0).contains(&r.poll_rate) || !r.poll_rate.is_finite() {
                errs.push(format!("receiver {i}: poll_rate must lie in [0, 1]"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(errs))
        }
    }

    pub fn node_url(index: usize) -> String {
        format!("http://node{index}.sim/mix")
    }

    pub fn frameset_url(index: usize) -> String {
        format!("http://node{index}.sim/frameset")
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ClientRole {
    Surfer,
    Sender,
    Receiver,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ResponseClass {
    Carrier,
    Static,
}

/// One observed HTTP transaction, with ground truth the adversary's
/// projection will strip.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TraceEvent {
    pub tick: u64,
    pub client_id: u32,
    pub client_role: ClientRole,
    pub method: Method,
    pub url: String,
    pub referer: Option<String>,
    pub request_size: u32,
    pub response_size: u32,
    pub response_class: ResponseClass,
    /// Hash of the carried slot for carrier responses; payload-derived, so
    /// only body-inspecting experiments may use it.
    pub body_digest: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DeliveryOutcome {
    pub sender: usize,
    pub delivered_tick: Option<u64>,
    pub receiver_client: Option<u32>,
}

/// Table sizes of one node when the run ended.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct NodeEndState {
    pub pool: u32,
    pub unacked: u32,
    pub ack_table: u32,
    pub mailbox_slots: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SimReport {
    pub config: SimConfig,
    pub delivered: Vec<DeliveryOutcome>,
    /// Interactions per visit chain, terminal static response included.
    pub carry_chain_lengths: Vec<u32>,
    /// Pool size per node per tick.
    pub pool_sizes_over_time: Vec<Vec<u32>>,
    /// Per-node table sizes at quiescence.
    #[serde(default)]
    pub end_state: Vec<NodeEndState>,
    pub trace: Vec<TraceEvent>,
}

/// Arithmetic mean of the recorded chain lengths.
pub fn mean_chain_length(report: &SimReport) -> Result<f64, SimError> {
    if report.carry_chain_lengths.is_empty() {
        return Err(SimError::EmptyChains);
    }
    let sum: u64 = report.carry_chain_lengths.iter().map(|&c| u64::from(c)).sum();
    Ok(sum as f64 / report.carry_chain_lengths.len() as f64)
}

/// Per-tick pool sizes, for drain analysis.
pub fn snapshot_pools(report: &SimReport) -> &[Vec<u32>] {
    &report.pool_sizes_over_time
}

fn sub_seed(seed: u64, domain: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"posthorn.sim.seed");
    h.update(seed.to_be_bytes());
    h.update(domain.as_bytes());
    h.update(index.to_be_bytes());
    let out = h.finalize();
    u64::from_be_bytes(out[..8].try_into().unwrap())
}

#[derive(Clone, Debug)]
enum Intent {
    Submit { sender: usize },
    Poll { receiver: usize },
}

struct Client {
    id: u32,
    role: ClientRole,
    intent: Option<Intent>,
    /// For senders: which sender spec this client executes, and whether the
    /// submission already happened.
    sender_index: Option<usize>,
    submitted: bool,
    /// For receivers: which receiver spec, and whether its poll matched.
    receiver_index: Option<usize>,
    delivered: bool,
}

struct World {
    config: SimConfig,
    nodes: Vec<NodeState>,
    linker_nodes: Vec<usize>,
    clients: Vec<Client>,
    plans: Vec<OnionPlan>,
    rng: ChaCha20Rng,
    trace: Vec<TraceEvent>,
    chains: Vec<u32>,
    pools: Vec<Vec<u32>>,
    delivered: Vec<DeliveryOutcome>,
}

/// Run the event loop to completion. The same config (seed included)
/// always yields the same report, byte for byte.
pub fn run(config: &SimConfig) -> Result<SimReport, SimError> {
    config.validate()?;
    let mut world = setup(config)?;
    for tick in 0..config.max_ticks {
        step(&mut world, tick);
        for (i, node) in world.nodes.iter_mut().enumerate() {
            node.flush_tick(tick, false);
            world.pools[i].push(node.pool_len() as u32);
        }
    }
    let end_state = world
        .nodes
        .iter()
        .map(|n| NodeEndState {
            pool: n.pool_len() as u32,
            unacked: n.unacked_len() as u32,
            ack_table: n.ack_table_len() as u32,
            mailbox_slots: n.mailbox_total() as u32,
        })
        .collect();
    Ok(SimReport {
        config: config.clone(),
        delivered: world.delivered,
        carry_chain_lengths: world.chains,
        pool_sizes_over_time: world.pools,
        end_state,
        trace: world.trace,
    })
}

fn setup(config: &SimConfig) -> Result<World, SimError> {
    let mut nodes = Vec::with_capacity(config.n_nodes);
    for i in 0..config.n_nodes {
        let pair = keygen(config.suite, sub_seed(config.seed, "node-key", i as u64));
        let mut node_config = NodeConfig::new(SimConfig::node_url(i));
        node_config.coin_bias = config.coin_bias;
        node_config.retry_interval = config.retry_interval;
        node_config.retry_max = config.retry_max;
        node_config.ack_enabled = config.ack_enabled;
        node_config.trickle = config.trickle;
        let mut node = NodeState::new(pair, node_config, sub_seed(config.seed, "node-rng", i as u64));
        for j in 0..config.n_nodes {
            if j != i {
                node.register_peer(&SimConfig::node_url(j));
            }
        }
        nodes.push(node);
    }

    let linker_nodes: Vec<usize> = (0..config.n_linkers).map(|j| j % config.n_nodes).collect();

    let mut rng = ChaCha20Rng::seed_from_u64(sub_seed(config.seed, "world", 0));
    let mut plans = Vec::with_capacity(config.senders.len());
    for (i, spec) in config.senders.iter().enumerate() {
        let path: Vec<(String, crate::crypto::PublicKey)> = spec
            .path
            .iter()
            .map(|&n| (nodes[n].url().to_string(), nodes[n].public_key().clone()))
            .collect();
        let plan = build_onion(&spec.payload, &path, spec.mailbox, &mut rng)
            .map_err(|source| SimError::Onion { sender: i, source })?;
        plans.push(plan);
    }

    let mut clients = Vec::new();
    let mut next_id = 0u32;
    for _ in 0..config.n_surfers {
        clients.push(Client {
            id: next_id,
            role: ClientRole::Surfer,
            intent: None,
            sender_index: None,
            submitted: false,
            receiver_index: None,
            delivered: false,
        });
        next_id += 1;
    }
    for i in 0..config.senders.len() {
        clients.push(Client {
            id: next_id,
            role: ClientRole::Sender,
            intent: None,
            sender_index: Some(i),
            submitted: false,
            receiver_index: None,
            delivered: false,
        });
        next_id += 1;
    }
    for i in 0..config.receivers.len() {
        clients.push(Client {
            id: next_id,
            role: ClientRole::Receiver,
            intent: None,
            sender_index: None,
            submitted: false,
            receiver_index: Some(i),
            delivered: false,
        });
        next_id += 1;
    }

    let delivered = (0..config.senders.len())
        .map(|sender| DeliveryOutcome {
            sender,
            delivered_tick: None,
            receiver_client: None,
        })
        .collect();

    Ok(World {
        config: config.clone(),
        nodes,
        linker_nodes,
        clients,
        plans,
        rng,
        trace: Vec::new(),
        chains: Vec::new(),
        pools: vec![Vec::new(); config.n_nodes],
        delivered,
    })
}

fn step(world: &mut World, tick: u64) {
    for c in 0..world.clients.len() {
        // Queue intents first so a visit this very tick can convert them.
        match world.clients[c].role {
            ClientRole::Sender => {
                let idx = world.clients[c].sender_index.unwrap();
                if !world.clients[c].submitted
                    && world.clients[c].intent.is_none()
                    && tick >= world.config.senders[idx].submit_tick
                {
                    world.clients[c].intent = Some(Intent::Submit { sender: idx });
                }
            }
            ClientRole::Receiver => {
                let idx = world.clients[c].receiver_index.unwrap();
                if !world.clients[c].delivered && world.clients[c].intent.is_none() {
                    let rate = world.config.receivers[idx].poll_rate;
                    if world.rng.random_bool(rate) {
                        world.clients[c].intent = Some(Intent::Poll { receiver: idx });
                    }
                }
            }
            ClientRole::Surfer => {}
        }
        if world.rng.random_bool(world.config.surfer_visit_rate) {
            visit(world, c, tick);
        }
    }
}

/// One visit: GET a linker frameset, then execute carriers until a static
/// response. Substitution happens here when the client holds an intent.
fn visit(world: &mut World, client_idx: usize, tick: u64) {
    let linker = world.linker_nodes[world.rng.random_range(0..world.linker_nodes.len())];
    let mut serving_node = linker;
    let mut response = world.nodes[serving_node].interact(Stimulus::Visit, tick);
    record(
        world,
        client_idx,
        tick,
        Method::Get,
        SimConfig::frameset_url(serving_node),
        None,
        REQUEST_HEADER_BYTES,
        &response,
    );
    let mut interactions = 1u32;

    while let NodeResponse::Carry { slot, target } = response {
        if interactions >= CHAIN_CAP {
            break;
        }
        let referer = world.nodes[serving_node].url().to_string();

        // A pending submission or poll replaces the carried slot and the
        // form target; otherwise the browser posts what it was given.
        let intent = world.clients[client_idx].intent.take();
        let (post_slot, post_target, substituted) = match intent {
            Some(Intent::Submit { sender }) => {
                world.clients[client_idx].submitted = true;
                (
                    world.plans[sender].first_slot.clone(),
                    world.plans[sender].first_hop.clone(),
                    true,
                )
            }
            Some(Intent::Poll { receiver }) => {
                let spec = world.config.receivers[receiver].clone();
                let node_pk = world.nodes[spec.node].public_key().clone();
                let get = build_get(spec.mailbox, &node_pk, &mut world.rng)
                    .expect("mailbox request always fits a slot");
                (get, world.nodes[spec.node].url().to_string(), true)
            }
            None => (slot, target, false),
        };

        let target_idx = url_to_node(&post_target).expect("carry targets are sim nodes");
        response = world.nodes[target_idx].interact(
            Stimulus::Post {
                slot: post_slot,
                referer: Some(referer.clone()),
            },
            tick,
        );

        let mut request_size = REQUEST_HEADER_BYTES + POST_BODY_BYTES;
        if substituted && world.config.broken_double_post {
            request_size = REQUEST_HEADER_BYTES + 2 * POST_BODY_BYTES;
        }
        record(
            world,
            client_idx,
            tick,
            Method::Post,
            post_target,
            Some(referer),
            request_size,
            &response,
        );
        interactions += 1;

        // A receiver inspects the response to its own poll: the carried
        // content may be its mailbox message.
        if substituted && world.clients[client_idx].role == ClientRole::Receiver {
            if let NodeResponse::Carry { slot: content, .. } = &response {
                try_extract_delivery(world, client_idx, content.clone(), tick);
            }
        }
        serving_node = target_idx;
    }
    world.chains.push(interactions);
}

fn try_extract_delivery(world: &mut World, client_idx: usize, content: Slot, tick: u64) {
    let Ok(extracted) = unpad(&content) else {
        return;
    };
    let client_id = world.clients[client_idx].id;
    let mut matched = false;
    for (s, spec) in world.config.senders.iter().enumerate() {
        if world.delivered[s].delivered_tick.is_none() && spec.payload == extracted {
            world.delivered[s].delivered_tick = Some(tick);
            world.delivered[s].receiver_client = Some(client_id);
            matched = true;
        }
    }
    if matched {
        world.clients[client_idx].delivered = true;
    }
}

#[allow(clippy::too_many_arguments)]
fn record(
    world: &mut World,
    client_idx: usize,
    tick: u64,
    method: Method,
    url: String,
    referer: Option<String>,
    request_size: u32,
    response: &NodeResponse,
) {
    let (response_class, response_size, body_digest) = match response {
        NodeResponse::Carry { slot, .. } => (
            ResponseClass::Carrier,
            AUTO_SUBMIT_DOC_LEN as u32,
            Some(hash(slot.as_bytes()).to_hex()),
        ),
        NodeResponse::FixedHtml => (ResponseClass::Static, STATIC_DOC_LEN as u32, None),
    };
    let client = &world.clients[client_idx];
    world.trace.push(TraceEvent {
        tick,
        client_id: client.id,
        client_role: client.role,
        method,
        url,
        referer,
        request_size,
        response_size,
        response_class,
        body_digest,
    });
}

fn url_to_node(url: &str) -> Option<usize> {
    url.strip_prefix("http://node")?
        .split('.')
        .next()?
        .parse()
        .ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_config() -> SimConfig {
        SimConfig {
            n_nodes: 3,
            n_linkers: 3,
            n_surfers: 40,
            surfer_visit_rate: 0.5,
            trickle: true,
            seed: 42,
            max_ticks: 600,
            ..SimConfig::default()
        }
    }

    #[test]
    fn identical_seeds_give_identical_reports() {
        let config = chain_config();
        let a = run(&config).unwrap();
        let b = run(&config).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let mut other = config;
        other.seed = 43;
        let c = run(&other).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn chain_lengths_are_geometric_with_saturated_carriage() {
        // Trickle saturates carriage, so each interaction is a carrier with
        // the coin's probability and chains average 1/(1-bias) = 2.
        let report = run(&chain_config()).unwrap();
        assert!(report.carry_chain_lengths.len() >= 10_000);
        let mean = mean_chain_length(&report).unwrap();
        assert!((1.9..=2.1).contains(&mean), "mean chain length {mean}");
    }

    #[test]
    fn zero_bias_means_single_interaction_chains() {
        let config = SimConfig {
            coin_bias: 0.0,
            n_surfers: 10,
            surfer_visit_rate: 0.5,
            max_ticks: 100,
            seed: 7,
            ..SimConfig::default()
        };
        let report = run(&config).unwrap();
        assert!(!report.carry_chain_lengths.is_empty());
        assert!(report.carry_chain_lengths.iter().all(|&c| c == 1));
        assert_eq!(mean_chain_length(&report).unwrap(), 1.0);

        assert!(matches!(
            mean_chain_length(&SimReport {
                carry_chain_lengths: vec![],
                ..report
            }),
            Err(SimError::EmptyChains)
        ));
    }

    #[test]
    fn mean_of_known_chains() {
        let report = SimReport {
            config: SimConfig::default(),
            delivered: vec![],
            carry_chain_lengths: vec![1, 3],
            pool_sizes_over_time: vec![],
            end_state: vec![],
            trace: vec![],
        };
        assert_eq!(mean_chain_length(&report).unwrap(), 2.0);
    }

    #[test]
    fn degenerate_carriage_delivers_through_receiver_polls() {
        // No surfers at all: the sender's and receiver's own visits carry
        // everything. Trickle mints the carriers they substitute into.
        let config = SimConfig {
            n_nodes: 2,
            n_linkers: 2,
            n_surfers: 0,
            senders: vec![SenderSpec {
                payload: b"lonely message".to_vec(),
                path: vec![0],
                mailbox: 0xcafe,
                submit_tick: 0,
            }],
            receivers: vec![ReceiverSpec {
                mailbox: 0xcafe,
                node: 0,
                poll_rate: 0.3,
            }],
            surfer_visit_rate: 0.3,
            trickle: true,
            seed: 11,
            max_ticks: 3000,
            ..SimConfig::default()
        };
        let report = run(&config).unwrap();
        let outcome = &report.delivered[0];
        assert!(
            outcome.delivered_tick.is_some(),
            "delivery must occur via the receiver's own poll traffic"
        );
        // The receiving client is the receiver, not the sender.
        assert_eq!(outcome.receiver_client, Some(1));
    }

    #[test]
    fn three_hop_delivery_with_surfer_cover() {
        let config = SimConfig {
            n_nodes: 3,
            n_linkers: 3,
            n_surfers: 20,
            senders: vec![SenderSpec {
                payload: b"covered delivery".to_vec(),
                path: vec![0, 1, 2],
                mailbox: 0xabcd,
                submit_tick: 10,
            }],
            receivers: vec![ReceiverSpec {
                mailbox: 0xabcd,
                node: 2,
                poll_rate: 0.1,
            }],
            surfer_visit_rate: 0.2,
            trickle: true,
            retry_interval: 32,
            seed: 5,
            max_ticks: 4000,
            ..SimConfig::default()
        };
        let report = run(&config).unwrap();
        assert!(report.delivered[0].delivered_tick.is_some());
        // Quiescence: pools and tables drain once carriage finishes.
        // (Verified at scale by the acceptance suite; here just delivery.)
    }

    #[test]
    fn hybrid_suite_delivers_end_to_end() {
        let config = SimConfig {
            n_nodes: 2,
            n_linkers: 2,
            n_surfers: 4,
            suite: SuiteId::Hybrid,
            senders: vec![SenderSpec {
                payload: b"kem-wrapped message".to_vec(),
                path: vec![0, 1],
                mailbox: 0xffff,
                submit_tick: 0,
            }],
            receivers: vec![ReceiverSpec {
                mailbox: 0xffff,
                node: 1,
                poll_rate: 0.3,
            }],
            surfer_visit_rate: 0.5,
            trickle: true,
            retry_interval: 16,
            retry_max: Some(4),
            seed: 23,
            max_ticks: 300,
            ..SimConfig::default()
        };
        let report = run(&config).unwrap();
        assert!(report.delivered[0].delivered_tick.is_some());
    }

    #[test]
    fn trace_causality_each_post_follows_a_carrier() {
        let config = SimConfig {
            n_surfers: 15,
            surfer_visit_rate: 0.4,
            trickle: true,
            seed: 9,
            max_ticks: 300,
            senders: vec![SenderSpec {
                payload: b"causal".to_vec(),
                path: vec![0, 1],
                mailbox: 1,
                submit_tick: 0,
            }],
            receivers: vec![ReceiverSpec {
                mailbox: 1,
                node: 1,
                poll_rate: 0.1,
            }],
            ..SimConfig::default()
        };
        let report = run(&config).unwrap();
        let mut last_class: std::collections::BTreeMap<u32, ResponseClass> =
            std::collections::BTreeMap::new();
        for event in &report.trace {
            if event.method == Method::Post {
                assert_eq!(
                    last_class.get(&event.client_id),
                    Some(&ResponseClass::Carrier),
                    "POST without a preceding carrier for client {}",
                    event.client_id
                );
                assert!(event.referer.is_some());
            }
            last_class.insert(event.client_id, event.response_class);
        }
        // All POSTs are the same size on the wire.
        let post_sizes: std::collections::BTreeSet<u32> = report
            .trace
            .iter()
            .filter(|e| e.method == Method::Post)
            .map(|e| e.request_size)
            .collect();
        assert_eq!(post_sizes.len(), 1);
    }

    #[test]
    fn config_validation_reports_field_diagnostics() {
        let config = SimConfig {
            n_nodes: 0,
            coin_bias: 1.5,
            senders: vec![SenderSpec {
                payload: vec![],
                path: vec![],
                mailbox: 0,
                submit_tick: 0,
            }],
            receivers: vec![ReceiverSpec {
                mailbox: 0,
                node: 9,
                poll_rate: -1.0,
            }],
            ..SimConfig::default()
        };
        match config.validate() {
            Err(SimError::InvalidConfig(errs)) => {
                assert!(errs.len() >= 4, "diagnostics: {errs:?}");
            }
            other => panic!("expected invalid config, got {other:?}"),
        }
    }

    #[test]
    fn config_json_round_trips() {
        let config = chain_config();
        let json = serde_json::to_string_pretty(&config).unwrap();
        let back: SimConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
        // Defaults fill missing fields.
        let minimal: SimConfig = serde_json::from_str("{\"seed\": 3}").unwrap();
        assert_eq!(minimal.seed, 3);
        assert_eq!(minimal.coin_bias, 0.5);
    }

    #[test]
    fn pool_series_has_one_row_per_node_and_tick() {
        let config = SimConfig {
            n_nodes: 2,
            max_ticks: 50,
            n_surfers: 2,
            seed: 1,
            ..SimConfig::default()
        };
        let report = run(&config).unwrap();
        let series = snapshot_pools(&report);
        assert_eq!(series.len(), 2);
        assert!(series.iter().all(|s| s.len() == 50));
        // No traffic that pools anything: constant zero series.
        assert!(series.iter().all(|s| s.iter().all(|&v| v == 0)));
    }
}
