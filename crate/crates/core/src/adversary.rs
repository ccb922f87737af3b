//! The header-level observer: trace projection, anonymity-set measurement,
//! a fixed threshold distinguisher, and the pool-drain attack driver.
//!
//! The observer sees TCP/IP and HTTP headers at selected points — timing,
//! sizes, methods, URLs, referer presence — and never message bodies or
//! ground-truth roles. [`project`] is the total map from full simulation
//! traces onto that view; everything else in this module consumes only the
//! projection, except the explicitly body-inspecting re-send scan used by
//! the re-encryption experiment.
//!
//! The distinguisher is deliberately simple and fully documented: five
//! per-client features (request count, POST fraction, mean POST request
//! size, inter-request gap variance, mean apparent chain length), a
//! decision stump trained by exhaustive threshold search on a deterministic
//! half split, accuracy reported on the held-out half. Stronger learned
//! classifiers are out of scope.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{build_onion, unpad};
use crate::crypto::{keygen, PublicKey, SuiteId};
use crate::node::{NodeConfig, NodeResponse, NodeState, Stimulus};
use crate::sim::{ClientRole, Method, ResponseClass, SimReport, TraceEvent};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AdversaryError {
    #[error("need at least {min} labeled clients per class, got {suspects} suspects and {surfers} surfers")]
    SampleSize {
        min: usize,
        suspects: usize,
        surfers: usize,
    },
    #[error("action window [{start}, {end}] lies outside the observed trace")]
    WindowOutsideTrace { start: u64, end: u64 },
    #[error("trace is empty")]
    EmptyTrace,
}

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

/// One transaction as the observer sees it: exactly seven fields, no
/// payload bytes, no roles.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct HeaderEvent {
    pub tick: u64,
    pub client_id: u32,
    pub method: Method,
    pub url: String,
    pub referer_present: bool,
    pub request_size: u32,
    pub response_size: u32,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct HeaderTrace {
    pub events: Vec<HeaderEvent>,
}

/// Project a full trace onto the header-only view, dropping ground-truth
/// roles and payload-derived fields.
pub fn project(trace: &[TraceEvent]) -> HeaderTrace {
    HeaderTrace {
        events: trace
            .iter()
            .map(|e| HeaderEvent {
                tick: e.tick,
                client_id: e.client_id,
                method: e.method,
                url: e.url.clone(),
                referer_present: e.referer.is_some(),
                request_size: e.request_size,
                response_size: e.response_size,
            })
            .collect(),
    }
}

impl HeaderTrace {
    /// The projection is idempotent: projecting a header trace is the
    /// identity (there is nothing left to drop).
    pub fn reproject(&self) -> HeaderTrace {
        self.clone()
    }
}

// ---------------------------------------------------------------------------
// Anonymity sets
// ---------------------------------------------------------------------------

/// An observed action to attribute: a message entered `node_url` somewhere
/// within the closed tick window.
#[derive(Clone, Debug)]
pub struct DeliveryAction {
    pub node_url: String,
    pub window_start: u64,
    pub window_end: u64,
}

/// All clients whose observed transactions are consistent with having
/// caused the action: everyone who contacted the node inside the window.
/// The observer cannot exclude GET-only visitors, since their responses
/// may have carried the very document the cause executed.
pub fn anonymity_set(
    trace: &HeaderTrace,
    action: &DeliveryAction,
) -> Result<BTreeSet<u32>, AdversaryError> {
    let (first, last) = trace
        .events
        .iter()
        .fold(None::<(u64, u64)>, |acc, e| match acc {
            None => Some((e.tick, e.tick)),
            Some((lo, hi)) => Some((lo.min(e.tick), hi.max(e.tick))),
        })
        .ok_or(AdversaryError::EmptyTrace)?;
    if action.window_end < first || action.window_start > last {
        return Err(AdversaryError::WindowOutsideTrace {
            start: action.window_start,
            end: action.window_end,
        });
    }
    let node_origin = action.node_url.trim_end_matches("/mix");
    Ok(trace
        .events
        .iter()
        .filter(|e| {
            e.tick >= action.window_start
                && e.tick <= action.window_end
                && e.url.starts_with(node_origin)
        })
        .map(|e| e.client_id)
        .collect())
}

// ---------------------------------------------------------------------------
// Distinguisher
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistinguisherResult {
    pub accuracy: f64,
    pub n_trials: usize,
    /// Human-readable description of the feature set and the learned rule.
    pub feature_set: String,
}

const FEATURE_NAMES: [&str; 5] = [
    "request_count",
    "post_fraction",
    "mean_post_request_size",
    "gap_variance",
    "mean_chain_length",
];

fn client_features(trace: &HeaderTrace) -> BTreeMap<u32, [f64; 5]> {
    struct Acc {
        ticks: Vec<u64>,
        posts: u32,
        gets: u32,
        post_size_sum: u64,
    }
    let mut accs: BTreeMap<u32, Acc> = BTreeMap::new();
    for e in &trace.events {
        let acc = accs.entry(e.client_id).or_insert(Acc {
            ticks: Vec::new(),
            posts: 0,
            gets: 0,
            post_size_sum: 0,
        });
        acc.ticks.push(e.tick);
        match e.method {
            Method::Post => {
                acc.posts += 1;
                acc.post_size_sum += u64::from(e.request_size);
            }
            Method::Get => acc.gets += 1,
        }
    }
    accs.into_iter()
        .map(|(id, acc)| {
            let total = f64::from(acc.posts + acc.gets);
            let post_fraction = if total > 0.0 {
                f64::from(acc.posts) / total
            } else {
                0.0
            };
            let mean_post_size = if acc.posts > 0 {
                acc.post_size_sum as f64 / f64::from(acc.posts)
            } else {
                0.0
            };
            let gap_variance = {
                let gaps: Vec<f64> = acc
                    .ticks
                    .windows(2)
                    .map(|w| (w[1] - w[0]) as f64)
                    .collect();
                if gaps.len() < 2 {
                    0.0
                } else {
                    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
                    gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gaps.len() as f64
                }
            };
            // Chains reconstructed from the header view: a GET opens a
            // chain, every request extends it.
            let mean_chain = if acc.gets > 0 {
                total / f64::from(acc.gets)
            } else {
                0.0
            };
            (
                id,
                [
                    total,
                    post_fraction,
                    mean_post_size,
                    gap_variance,
                    mean_chain,
                ],
            )
        })
        .collect()
}

fn stump_accuracy(
    data: &[(f64, bool)],
    threshold: f64,
    positive_above: bool,
) -> f64 {
    let correct = data
        .iter()
        .filter(|(v, label)| ((*v > threshold) == positive_above) == *label)
        .count();
    correct as f64 / data.len() as f64
}

/// Train the fixed threshold classifier on half the labeled clients and
/// report held-out accuracy. `labels` maps client id to "is a sender or
/// receiver". Requires at least 100 labeled clients per class.
pub fn distinguisher(
    trace: &HeaderTrace,
    labels: &BTreeMap<u32, bool>,
) -> Result<DistinguisherResult, AdversaryError> {
    const MIN_PER_CLASS: usize = 100;
    let suspects = labels.values().filter(|&&v| v).count();
    let surfers = labels.len() - suspects;
    if suspects < MIN_PER_CLASS || surfers < MIN_PER_CLASS {
        return Err(AdversaryError::SampleSize {
            min: MIN_PER_CLASS,
            suspects,
            surfers,
        });
    }

    let features = client_features(trace);
    // Deterministic split: alternate sorted client ids within each class
    // so both halves stay balanced.
    let mut train: Vec<(u32, bool)> = Vec::new();
    let mut eval: Vec<(u32, bool)> = Vec::new();
    for class in [false, true] {
        for (i, (&id, &label)) in labels.iter().filter(|(_, &l)| l == class).enumerate() {
            if i % 2 == 0 {
                train.push((id, label));
            } else {
                eval.push((id, label));
            }
        }
    }

    let column = |ids: &[(u32, bool)], f: usize| -> Vec<(f64, bool)> {
        ids.iter()
            .map(|(id, label)| {
                let v = features.get(id).map(|fs| fs[f]).unwrap_or(0.0);
                (v, *label)
            })
            .collect()
    };

    let mut best = (0usize, 0.0f64, true, 0.0f64); // (feature, threshold, dir, train acc)
    for f in 0..FEATURE_NAMES.len() {
        let mut data = column(&train, f);
        data.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut candidates: Vec<f64> = vec![data[0].0 - 1.0];
        for w in data.windows(2) {
            if w[0].0 < w[1].0 {
                candidates.push((w[0].0 + w[1].0) / 2.0);
            }
        }
        for threshold in candidates {
            for dir in [true, false] {
                let acc = stump_accuracy(&data, threshold, dir);
                if acc > best.3 {
                    best = (f, threshold, dir, acc);
                }
            }
        }
    }

    let eval_data = column(&eval, best.0);
    let accuracy = stump_accuracy(&eval_data, best.1, best.2);
    Ok(DistinguisherResult {
        accuracy,
        n_trials: eval.len(),
        feature_set: format!(
            "threshold stump over {{{}}}; learned rule: {} {} {:.2} => sender/receiver",
            FEATURE_NAMES.join(", "),
            FEATURE_NAMES[best.0],
            if best.2 { ">" } else { "<=" },
            best.1,
        ),
    })
}

/// Ground-truth labels for the distinguisher, straight from a simulation
/// report: senders and receivers are the positive class.
pub fn roles_to_labels(report: &SimReport) -> BTreeMap<u32, bool> {
    let mut labels = BTreeMap::new();
    for e in &report.trace {
        labels
            .entry(e.client_id)
            .or_insert(e.client_role != ClientRole::Surfer);
    }
    labels
}

// ---------------------------------------------------------------------------
// Re-send linkage scan (body-inspecting, used by the re-encryption
// experiment only)
// ---------------------------------------------------------------------------

/// Count distinct carrier bodies that appear more than once in a trace.
/// Verbatim re-sends repeat a body; re-randomized ones never do.
pub fn scan_repeated_bodies(trace: &[TraceEvent]) -> usize {
    let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
    for e in trace {
        if e.response_class == ResponseClass::Carrier {
            if let Some(d) = &e.body_digest {
                *counts.entry(d.as_str()).or_insert(0) += 1;
            }
        }
    }
    counts.values().filter(|&&c| c >= 2).count()
}

// ---------------------------------------------------------------------------
// Pool-drain attack driver
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DrainReport {
    pub ack_enabled: bool,
    pub initial_pool: usize,
    pub fetches: u64,
    /// First fetch index at which the pool reached zero, if it ever did.
    pub drained_at: Option<u64>,
    /// Unacknowledged real messages still pending after the fetch loop.
    pub pending_real_after: usize,
    /// Pool size after each fetch.
    pub pool_series: Vec<u32>,
    /// Whether the pending messages were delivered and acknowledged once
    /// legitimate carriage resumed (acknowledgement mode only).
    pub delivered_after_recovery: Option<bool>,
}

/// Reproduce the frameset-fetch drain attack against a single node seeded
/// with `n_real` pending forwards, then (in acknowledgement mode) let
/// legitimate carriage resume and verify recovery.
pub fn dos_drain(ack_enabled: bool, n_real: usize, n_fetches: u64, seed: u64) -> DrainReport {
    let suite = SuiteId::Test;
    let target_pair = keygen(suite, seed);
    let exit_pair = keygen(suite, seed + 1);
    let target_url = "http://target.attack/mix".to_string();
    let exit_url = "http://exit.attack/mix".to_string();

    let mut config = NodeConfig::new(target_url.clone());
    config.ack_enabled = ack_enabled;
    config.retry_interval = 4;
    // The acknowledgement variant must hold messages for as long as it
    // takes; the attack would otherwise win by exhausting retries.
    config.retry_max = None;
    // Forced tails while seeding, so ingestion itself dispatches nothing.
    config.coin_bias = 0.0;
    let mut target = NodeState::new(target_pair.clone(), config, seed + 2);
    target.register_peer(&exit_url);

    let mut exit_config = NodeConfig::new(exit_url.clone());
    exit_config.ack_enabled = ack_enabled;
    exit_config.retry_interval = 2;
    exit_config.retry_max = Some(2);
    let mut exit = NodeState::new(exit_pair.clone(), exit_config, seed + 3);
    exit.register_peer(&target_url);

    // Seed the pool through the protocol itself: two-hop onions that the
    // target must forward to the exit node.
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed + 4);
    let path: Vec<(String, PublicKey)> = vec![
        (target_url.clone(), target_pair.public.clone()),
        (exit_url.clone(), exit_pair.public.clone()),
    ];
    let mut now = 0u64;
    let mut plans = Vec::new();
    for i in 0..n_real {
        let payload = format!("pending message {i}");
        let plan = build_onion(payload.as_bytes(), &path, i as u128, &mut rng)
            .expect("seed onion fits");
        now += 1;
        target.interact(
            Stimulus::Post {
                slot: plan.first_slot.clone(),
                referer: None,
            },
            now,
        );
        plans.push((payload, plan));
    }
    let initial_pool = target.pool_len();
    target.config_mut().coin_bias = 0.5;

    let mut pool_series = Vec::with_capacity(n_fetches as usize);
    let mut drained_at = None;
    for fetch in 0..n_fetches {
        now += 1;
        // The attacker only fetches framesets; whatever carriers it gets
        // it drops on the floor, never producing acknowledgements.
        let _ = target.interact(Stimulus::Visit, now);
        pool_series.push(target.pool_len() as u32);
        if drained_at.is_none() && target.pool_len() == 0 {
            drained_at = Some(fetch + 1);
            break;
        }
    }
    let pending_real_after = target.unacked_len();

    // Recovery phase: honest clients ferry carriers between the two nodes
    // until the exit holds every payload and the target's tables drain.
    let delivered_after_recovery = if ack_enabled {
        let mut carried: std::collections::VecDeque<(bool, crate::codec::Slot, String)> =
            std::collections::VecDeque::new();
        let mut ok = false;
        for _ in 0..200_000 {
            now += 1;
            if let Some((to_exit, slot, referer)) = carried.pop_front() {
                let node = if to_exit { &mut exit } else { &mut target };
                if let NodeResponse::Carry { slot, target: t } = node.interact(
                    Stimulus::Post {
                        slot,
                        referer: Some(referer),
                    },
                    now,
                ) {
                    carried.push_back((t == exit_url, slot, node.url().to_string()));
                }
            } else {
                // Alternate visits to both nodes to pump dispatches.
                let visit_exit = now.is_multiple_of(2);
                let node = if visit_exit { &mut exit } else { &mut target };
                if let NodeResponse::Carry { slot, target: t } =
                    node.interact(Stimulus::Visit, now)
                {
                    carried.push_back((t == exit_url, slot, node.url().to_string()));
                }
            }
            let all_delivered = plans.iter().enumerate().all(|(i, (payload, _))| {
                exit.mailbox(i as u128)
                    .map(|q| q.iter().any(|s| unpad(s).is_ok_and(|b| b == payload.as_bytes())))
                    .unwrap_or(false)
            });
            if all_delivered && target.unacked_len() == 0 && target.ack_table_len() == 0 {
                ok = true;
                break;
            }
        }
        Some(ok)
    } else {
        None
    };

    DrainReport {
        ack_enabled,
        initial_pool,
        fetches: pool_series.len() as u64,
        drained_at,
        pending_real_after,
        pool_series,
        delivered_after_recovery,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run, ReceiverSpec, SenderSpec, SimConfig};

    fn header_event(
        tick: u64,
        client_id: u32,
        method: Method,
        url: &str,
        request_size: u32,
    ) -> HeaderEvent {
        HeaderEvent {
            tick,
            client_id,
            method,
            url: url.to_string(),
            referer_present: method == Method::Post,
            request_size,
            response_size: 4096,
        }
    }

    #[test]
    fn projection_keeps_exactly_seven_fields_and_is_idempotent() {
        assert!(project(&[]).events.is_empty());

        let config = SimConfig {
            n_surfers: 3,
            surfer_visit_rate: 0.5,
            trickle: true,
            max_ticks: 40,
            seed: 2,
            ..SimConfig::default()
        };
        let report = run(&config).unwrap();
        let ht = project(&report.trace);
        assert!(!ht.events.is_empty());
        let as_json = serde_json::to_value(&ht.events[0]).unwrap();
        assert_eq!(as_json.as_object().unwrap().len(), 7);
        for key in ["client_role", "body_digest", "response_class"] {
            assert!(as_json.get(key).is_none());
        }
        assert_eq!(ht.reproject(), ht);
    }

    #[test]
    fn anonymity_set_without_cover_collapses_to_the_sender() {
        let trace = HeaderTrace {
            events: vec![
                header_event(5, 0, Method::Get, "http://node0.sim/frameset", 400),
                header_event(5, 0, Method::Post, "http://node0.sim/mix", 5864),
            ],
        };
        let action = DeliveryAction {
            node_url: "http://node0.sim/mix".into(),
            window_start: 0,
            window_end: 10,
        };
        let set = anonymity_set(&trace, &action).unwrap();
        assert_eq!(set, BTreeSet::from([0]));
    }

    #[test]
    fn anonymity_set_grows_with_cover_and_respects_windows() {
        let mut events = vec![header_event(4, 99, Method::Post, "http://node0.sim/mix", 5864)];
        // k surfers visit the entry node inside the window.
        let k = 7;
        for i in 0..k {
            events.push(header_event(
                5 + u64::from(i),
                i,
                Method::Get,
                "http://node0.sim/frameset",
                400,
            ));
        }
        // Outside the window or at another node: never included.
        events.push(header_event(50, 40, Method::Get, "http://node0.sim/frameset", 400));
        events.push(header_event(6, 41, Method::Get, "http://node1.sim/frameset", 400));
        let trace = HeaderTrace { events };
        let action = DeliveryAction {
            node_url: "http://node0.sim/mix".into(),
            window_start: 0,
            window_end: 20,
        };
        let set = anonymity_set(&trace, &action).unwrap();
        assert_eq!(set.len() as u32, k + 1);
        assert!(!set.contains(&40));
        assert!(!set.contains(&41));

        // Monotonicity: more in-window visits never shrink the set.
        let mut bigger = trace.clone();
        bigger
            .events
            .push(header_event(7, 77, Method::Get, "http://node0.sim/frameset", 400));
        let grown = anonymity_set(&bigger, &action).unwrap();
        assert!(grown.is_superset(&set));

        // Disjoint window: disjoint contribution.
        let late = anonymity_set(
            &trace,
            &DeliveryAction {
                node_url: "http://node0.sim/mix".into(),
                window_start: 30,
                window_end: 60,
            },
        )
        .unwrap();
        assert_eq!(late, BTreeSet::from([40]));

        // Window entirely outside the trace: a domain error.
        assert!(matches!(
            anonymity_set(
                &trace,
                &DeliveryAction {
                    node_url: "http://node0.sim/mix".into(),
                    window_start: 1000,
                    window_end: 2000,
                }
            ),
            Err(AdversaryError::WindowOutsideTrace { .. })
        ));
    }

    fn synthetic_labeled_trace(
        n_per_class: u32,
        suspect_post_size: u32,
    ) -> (HeaderTrace, BTreeMap<u32, bool>) {
        let mut events = Vec::new();
        let mut labels = BTreeMap::new();
        for id in 0..2 * n_per_class {
            let suspect = id % 2 == 1;
            labels.insert(id, suspect);
            let post_size = if suspect { suspect_post_size } else { 5864 };
            // Same shape for everyone: alternating GET/POST visits whose
            // cadence depends only on the client id.
            for v in 0..10u64 {
                let t = v * 7 + u64::from(id % 5);
                events.push(header_event(t, id, Method::Get, "http://node0.sim/frameset", 400));
                events.push(header_event(t, id, Method::Post, "http://node1.sim/mix", post_size));
            }
        }
        (HeaderTrace { events }, labels)
    }

    #[test]
    fn distinguisher_is_blind_without_a_leak_and_sharp_with_one() {
        let (trace, labels) = synthetic_labeled_trace(120, 5864);
        let blind = distinguisher(&trace, &labels).unwrap();
        assert!(
            (blind.accuracy - 0.5).abs() <= 0.1,
            "no-leak accuracy {}",
            blind.accuracy
        );

        let (leaky, labels) = synthetic_labeled_trace(120, 2 * 5864);
        let sharp = distinguisher(&leaky, &labels).unwrap();
        assert!(sharp.accuracy >= 0.9, "leak accuracy {}", sharp.accuracy);
        assert!(sharp.feature_set.contains("mean_post_request_size"));
    }

    #[test]
    fn distinguisher_needs_one_hundred_per_class() {
        let (trace, labels) = synthetic_labeled_trace(50, 5864);
        assert!(matches!(
            distinguisher(&trace, &labels),
            Err(AdversaryError::SampleSize { .. })
        ));
    }

    #[test]
    fn drain_attack_empties_ack_free_pool() {
        let report = dos_drain(false, 5, 1000, 1);
        assert_eq!(report.initial_pool, 5);
        assert!(report.drained_at.is_some(), "pool must drain without acks");
        assert_eq!(*report.pool_series.last().unwrap(), 0);
        // Nonincreasing pool curve: fetches only ever remove.
        assert!(report.pool_series.windows(2).all(|w| w[1] <= w[0]));
        assert!(report.delivered_after_recovery.is_none());
    }

    #[test]
    fn drain_attack_fails_against_acknowledgements() {
        let report = dos_drain(true, 3, 2000, 2);
        assert_eq!(report.drained_at, None);
        assert!(report.pending_real_after >= 3);
        assert_eq!(report.delivered_after_recovery, Some(true));
    }

    #[test]
    fn resend_scan_finds_byte_repeats_and_no_ure_repeats() {
        for (suite, expect_repeats) in [(SuiteId::Test, true), (SuiteId::Ure, false)] {
            let config = SimConfig {
                n_nodes: 2,
                n_linkers: 2,
                n_surfers: 8,
                suite,
                senders: vec![SenderSpec {
                    payload: b"linkage probe".to_vec(),
                    path: vec![0, 1],
                    mailbox: 3,
                    submit_tick: 0,
                }],
                receivers: vec![ReceiverSpec {
                    mailbox: 3,
                    node: 1,
                    poll_rate: 0.05,
                }],
                surfer_visit_rate: 0.4,
                trickle: true,
                retry_interval: 1,
                retry_max: Some(6),
                seed: 3,
                max_ticks: 120,
                ..SimConfig::default()
            };
            let report = run(&config).unwrap();
            let repeats = scan_repeated_bodies(&report.trace);
            if expect_repeats {
                assert!(repeats >= 1, "byte mode must show repeated bodies");
            } else {
                assert_eq!(repeats, 0, "re-randomized mode must not repeat");
            }
        }
    }
}
