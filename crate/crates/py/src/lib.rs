//! Python bindings for the mix network core.
//!
//! Exposes the primitive operations (keys, encryption, hashing, universal
//! re-encryption), the slot codec and onion builder, a driveable `Node`
//! state machine, and the deterministic simulator. Everything takes
//! explicit seeds so Python-side experiments reproduce exactly.
//!
//! Build with `cargo build -p posthorn-py --release`; the smoke test under
//! `python/` copies the cdylib next to itself and imports it.

use num_bigint::BigUint;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use posthorn::channels;
use posthorn::codec;
use posthorn::crypto;
use posthorn::node::{NodeConfig, NodeResponse, NodeState, Stimulus};
use posthorn::sim;

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn parse_suite(name: &str) -> PyResult<crypto::SuiteId> {
    crypto::SuiteId::parse(name)
        .map_err(|_| PyValueError::new_err(format!("unknown suite {name:?}")))
}

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

// ---------------------------------------------------------------------------
// Crypto
// ---------------------------------------------------------------------------

/// Deterministic key generation; returns (public, secret) bytes.
#[pyfunction]
fn keygen<'py>(
    py: Python<'py>,
    suite: &str,
    seed: u64,
) -> PyResult<(Bound<'py, PyBytes>, Bound<'py, PyBytes>)> {
    let pair = crypto::keygen(parse_suite(suite)?, seed);
    Ok((
        PyBytes::new(py, &pair.public.bytes),
        PyBytes::new(py, &pair.secret.bytes),
    ))
}

#[pyfunction]
fn encrypt<'py>(
    py: Python<'py>,
    suite: &str,
    public_key: &[u8],
    message: &[u8],
    seed: u64,
) -> PyResult<Bound<'py, PyBytes>> {
    let pk = crypto::PublicKey {
        suite: parse_suite(suite)?,
        bytes: public_key.to_vec(),
    };
    let ct = crypto::encrypt(&pk, message, &mut rng(seed)).map_err(value_err)?;
    Ok(PyBytes::new(py, &ct))
}

/// Authenticated decryption; `None` means rejection, not an error.
#[pyfunction]
fn decrypt<'py>(
    py: Python<'py>,
    suite: &str,
    secret_key: &[u8],
    ciphertext: &[u8],
) -> PyResult<Option<Bound<'py, PyBytes>>> {
    let sk = crypto::SecretKey {
        suite: parse_suite(suite)?,
        bytes: secret_key.to_vec(),
    };
    Ok(crypto::decrypt(&sk, ciphertext).map(|m| PyBytes::new(py, &m)))
}

#[pyfunction]
fn hash_digest<'py>(py: Python<'py>, data: &[u8]) -> Bound<'py, PyBytes> {
    PyBytes::new(py, &crypto::hash(data).0)
}

/// Universal re-encryption over explicit group parameters, for worked
/// examples: returns the four components (a0, b0, a1, b1).
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn ure_encrypt_with(
    p: u64,
    g: u64,
    order: u64,
    public: u64,
    message: u64,
    k0: u64,
    k1: u64,
) -> PyResult<(u64, u64, u64, u64)> {
    let grp = crypto::group::Group {
        p: BigUint::from(p),
        g: BigUint::from(g),
        q: BigUint::from(order),
    };
    let c = crypto::ure_encrypt_with(
        &grp,
        &BigUint::from(public),
        &BigUint::from(message),
        &BigUint::from(k0),
        &BigUint::from(k1),
    )
    .map_err(value_err)?;
    let small = |v: &BigUint| -> u64 { v.try_into().unwrap_or(u64::MAX) };
    Ok((small(&c.a0), small(&c.b0), small(&c.a1), small(&c.b1)))
}

#[pyfunction]
fn ure_reencrypt(
    p: u64,
    g: u64,
    order: u64,
    components: (u64, u64, u64, u64),
    seed: u64,
) -> PyResult<(u64, u64, u64, u64)> {
    let grp = crypto::group::Group {
        p: BigUint::from(p),
        g: BigUint::from(g),
        q: BigUint::from(order),
    };
    let c = crypto::UreCiphertext {
        a0: BigUint::from(components.0),
        b0: BigUint::from(components.1),
        a1: BigUint::from(components.2),
        b1: BigUint::from(components.3),
    };
    let out = crypto::ure_reencrypt(&grp, &c, &mut rng(seed)).map_err(value_err)?;
    let small = |v: &BigUint| -> u64 { v.try_into().unwrap_or(u64::MAX) };
    Ok((small(&out.a0), small(&out.b0), small(&out.a1), small(&out.b1)))
}

/// `None` when the ciphertext was not produced under the matching key.
#[pyfunction]
fn ure_decrypt(
    p: u64,
    g: u64,
    order: u64,
    secret: u64,
    components: (u64, u64, u64, u64),
) -> PyResult<Option<u64>> {
    let grp = crypto::group::Group {
        p: BigUint::from(p),
        g: BigUint::from(g),
        q: BigUint::from(order),
    };
    let c = crypto::UreCiphertext {
        a0: BigUint::from(components.0),
        b0: BigUint::from(components.1),
        a1: BigUint::from(components.2),
        b1: BigUint::from(components.3),
    };
    Ok(crypto::ure_decrypt(&grp, &BigUint::from(secret), &c)
        .map(|v| (&v).try_into().unwrap_or(u64::MAX)))
}

// ---------------------------------------------------------------------------
// Codec
// ---------------------------------------------------------------------------

#[pyfunction]
fn pad_to_slot<'py>(py: Python<'py>, payload: &[u8], seed: u64) -> PyResult<Bound<'py, PyBytes>> {
    let slot = codec::pad_to_slot(payload, &mut rng(seed)).map_err(value_err)?;
    Ok(PyBytes::new(py, slot.as_bytes()))
}

#[pyfunction]
fn unpad<'py>(py: Python<'py>, slot: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
    let slot = codec::Slot::from_slice(slot).map_err(value_err)?;
    let payload = codec::unpad(&slot).map_err(value_err)?;
    Ok(PyBytes::new(py, payload))
}

/// Build the layered message. `path` is a list of (url, public_key_bytes);
/// returns a dict with `first_hop`, `first_slot`, and `per_hop_acks` as
/// (url, digest_hex) pairs.
#[pyfunction]
fn build_onion<'py>(
    py: Python<'py>,
    suite: &str,
    payload: &[u8],
    path: Vec<(String, Vec<u8>)>,
    mailbox: u128,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let suite = parse_suite(suite)?;
    let path: Vec<(String, crypto::PublicKey)> = path
        .into_iter()
        .map(|(url, bytes)| (url, crypto::PublicKey { suite, bytes }))
        .collect();
    let plan = codec::build_onion(payload, &path, mailbox, &mut rng(seed)).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("first_hop", &plan.first_hop)?;
    out.set_item("first_slot", PyBytes::new(py, plan.first_slot.as_bytes()))?;
    let acks: Vec<(String, String)> = plan
        .per_hop_acks
        .iter()
        .map(|(url, d)| (url.clone(), d.to_hex()))
        .collect();
    out.set_item("per_hop_acks", acks)?;
    Ok(out)
}

#[pyfunction]
fn build_get<'py>(
    py: Python<'py>,
    suite: &str,
    public_key: &[u8],
    mailbox: u128,
    seed: u64,
) -> PyResult<Bound<'py, PyBytes>> {
    let pk = crypto::PublicKey {
        suite: parse_suite(suite)?,
        bytes: public_key.to_vec(),
    };
    let slot = codec::build_get(mailbox, &pk, &mut rng(seed)).map_err(value_err)?;
    Ok(PyBytes::new(py, slot.as_bytes()))
}

#[pyfunction]
fn make_ack<'py>(py: Python<'py>, digest: &[u8], seed: u64) -> PyResult<Bound<'py, PyBytes>> {
    let digest = crypto::Digest::from_slice(digest)
        .ok_or_else(|| PyValueError::new_err("digest must be 32 bytes"))?;
    let slot = codec::make_ack(digest, &mut rng(seed));
    Ok(PyBytes::new(py, slot.as_bytes()))
}

// ---------------------------------------------------------------------------
// Channels
// ---------------------------------------------------------------------------

#[pyfunction]
fn validate_cookie_domain(domain: &str) -> bool {
    channels::validate_cookie_domain(domain)
}

#[pyfunction]
fn transport_encode(data: &[u8]) -> String {
    channels::transport_encode(data)
}

#[pyfunction]
fn transport_decode<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyBytes>> {
    let bytes = channels::transport_decode(text).map_err(value_err)?;
    Ok(PyBytes::new(py, &bytes))
}

// ---------------------------------------------------------------------------
// Node
// ---------------------------------------------------------------------------

fn response_dict<'py>(py: Python<'py>, response: &NodeResponse) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    match response {
        NodeResponse::Carry { slot, target } => {
            out.set_item("kind", "carry")?;
            out.set_item("slot", PyBytes::new(py, slot.as_bytes()))?;
            out.set_item("target", target)?;
        }
        NodeResponse::FixedHtml => {
            out.set_item("kind", "fixed-html")?;
        }
    }
    Ok(out)
}

/// One mix node, driven interaction by interaction.
#[pyclass]
struct Node {
    state: NodeState,
}

#[pymethods]
impl Node {
    #[new]
    #[pyo3(signature = (suite, key_seed, url, rng_seed=0, coin_bias=0.5, retry_interval=64, retry_max=16, ack_enabled=true, trickle=false))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        suite: &str,
        key_seed: u64,
        url: &str,
        rng_seed: u64,
        coin_bias: f64,
        retry_interval: u64,
        retry_max: Option<u32>,
        ack_enabled: bool,
        trickle: bool,
    ) -> PyResult<Self> {
        let pair = crypto::keygen(parse_suite(suite)?, key_seed);
        let mut config = NodeConfig::new(url);
        config.coin_bias = coin_bias;
        config.retry_interval = retry_interval;
        config.retry_max = retry_max;
        config.ack_enabled = ack_enabled;
        config.trickle = trickle;
        Ok(Node {
            state: NodeState::new(pair, config, rng_seed),
        })
    }

    fn public_key<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.state.public_key().bytes)
    }

    fn register_peer(&mut self, url: &str) {
        self.state.register_peer(url);
    }

    /// Deliver one posted slot; returns the response as a dict.
    #[pyo3(signature = (slot, now, referer=None))]
    fn post<'py>(
        &mut self,
        py: Python<'py>,
        slot: &[u8],
        now: u64,
        referer: Option<String>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let slot = codec::Slot::from_slice(slot).map_err(value_err)?;
        let response = self.state.interact(Stimulus::Post { slot, referer }, now);
        response_dict(py, &response)
    }

    /// A bare page visit (frameset fetch).
    fn visit<'py>(&mut self, py: Python<'py>, now: u64) -> PyResult<Bound<'py, PyDict>> {
        let response = self.state.interact(Stimulus::Visit, now);
        response_dict(py, &response)
    }

    fn flush_tick<'py>(
        &mut self,
        py: Python<'py>,
        now: u64,
        trickle: bool,
    ) -> PyResult<Option<Bound<'py, PyDict>>> {
        match self.state.flush_tick(now, trickle) {
            Some(dispatch) => {
                let out = PyDict::new(py);
                out.set_item("slot", PyBytes::new(py, dispatch.slot.as_bytes()))?;
                out.set_item("target", dispatch.target)?;
                Ok(Some(out))
            }
            None => Ok(None),
        }
    }

    fn pool_len(&self) -> usize {
        self.state.pool_len()
    }

    fn unacked_len(&self) -> usize {
        self.state.unacked_len()
    }

    fn ack_table_len(&self) -> usize {
        self.state.ack_table_len()
    }

    fn mailbox_slots<'py>(&self, py: Python<'py>, mailbox: u128) -> Vec<Bound<'py, PyBytes>> {
        self.state
            .mailbox(mailbox)
            .map(|q| q.iter().map(|s| PyBytes::new(py, s.as_bytes())).collect())
            .unwrap_or_default()
    }

    fn snapshot<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.state.snapshot())
    }

    fn __repr__(&self) -> String {
        format!(
            "Node(url={:?}, pool={}, acks={}, clock={})",
            self.state.url(),
            self.state.pool_len(),
            self.state.ack_table_len(),
            self.state.clock(),
        )
    }
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// Run the deterministic simulator on a JSON config; returns the report as
/// JSON (the same document the command line writes).
#[pyfunction]
fn run_simulation(config_json: &str) -> PyResult<String> {
    let config: sim::SimConfig = serde_json::from_str(config_json).map_err(value_err)?;
    let report = sim::run(&config).map_err(value_err)?;
    serde_json::to_string(&report).map_err(value_err)
}

#[pymodule]
fn posthorn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("SLOT_SIZE", codec::SLOT_SIZE)?;
    m.add_function(wrap_pyfunction!(keygen, m)?)?;
    m.add_function(wrap_pyfunction!(encrypt, m)?)?;
    m.add_function(wrap_pyfunction!(decrypt, m)?)?;
    m.add_function(wrap_pyfunction!(hash_digest, m)?)?;
    m.add_function(wrap_pyfunction!(ure_encrypt_with, m)?)?;
    m.add_function(wrap_pyfunction!(ure_reencrypt, m)?)?;
    m.add_function(wrap_pyfunction!(ure_decrypt, m)?)?;
    m.add_function(wrap_pyfunction!(pad_to_slot, m)?)?;
    m.add_function(wrap_pyfunction!(unpad, m)?)?;
    m.add_function(wrap_pyfunction!(build_onion, m)?)?;
    m.add_function(wrap_pyfunction!(build_get, m)?)?;
    m.add_function(wrap_pyfunction!(make_ack, m)?)?;
    m.add_function(wrap_pyfunction!(validate_cookie_domain, m)?)?;
    m.add_function(wrap_pyfunction!(transport_encode, m)?)?;
    m.add_function(wrap_pyfunction!(transport_decode, m)?)?;
    m.add_function(wrap_pyfunction!(run_simulation, m)?)?;
    m.add_class::<Node>()?;
    Ok(())
}
