//! HTTP service hosting one mix node: the POST script endpoint, the linker
//! frameset, the banner asset, and a health route.
//!
//! The gateway is the deployable counterpart of the simulator's in-memory
//! nodes and shares the identical [`NodeState`] machine; the HTTP layer
//! adds nothing but transport decoding. Logical time is an interaction
//! counter, so a node driven over HTTP behaves byte-for-byte like one
//! driven in memory with the same stimulus sequence and seed.
//!
//! Error hiding is deliberate: a malformed submission still receives the
//! ordinary 200 static page, identical to any idle response, so nothing on
//! the wire distinguishes garbage from protocol traffic. The frameset
//! response is produced exactly like a post response with an empty
//! stimulus — one document whose visible part is the banner and whose
//! invisible part is the transport form, when one is due.

use std::io::Read;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;

use crate::channels::{emit_carrier, transport_decode, FORM_FIELD};
use crate::channels::decode_referer;
use crate::codec::{Slot, SLOT_SIZE};
use crate::crypto::KeyPair;
use crate::node::{NodeConfig, NodeState, Stimulus};

/// 1x1 GIF stand-in for the banner advert asset.
const DEFAULT_BANNER: &[u8] = &[
    0x47, 0x49, 0x46, 0x38, 0x39, 0x61, 0x01, 0x00, 0x01, 0x00, 0x80, 0x00, 0x00, 0x00, 0x00,
    0x00, 0xff, 0xff, 0xff, 0x21, 0xf9, 0x04, 0x01, 0x00, 0x00, 0x00, 0x00, 0x2c, 0x00, 0x00,
    0x00, 0x00, 0x01, 0x00, 0x01, 0x00, 0x00, 0x02, 0x02, 0x44, 0x01, 0x00, 0x3b,
];

/// Cap on accepted request bodies; a form-encoded slot is well under this.
const MAX_BODY: usize = 64 * 1024;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("failed to bind {addr}: {source}")]
    Bind {
        addr: String,
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("snapshot restore failed: {0}")]
    Snapshot(#[from] crate::node::SnapshotError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug)]
pub struct GatewayConfig {
    /// Bind address, e.g. `127.0.0.1:0`.
    pub listen: String,
    /// The script URL peers and clients know this node by. Acknowledgement
    /// routing keys on it, so it must match what senders put in onions.
    pub public_url: String,
    pub peers: Vec<String>,
    pub coin_bias: f64,
    pub retry_interval: u64,
    pub retry_max: Option<u32>,
    pub ack_enabled: bool,
    pub trickle: bool,
    /// Node state is persisted here on shutdown and restored on start.
    pub snapshot_path: Option<PathBuf>,
    pub banner: Option<Vec<u8>>,
    pub rng_seed: u64,
    /// Background flush cadence; `None` disables the timer (time still
    /// advances with every interaction).
    pub flush_every: Option<Duration>,
    pub workers: usize,
}

impl GatewayConfig {
    pub fn new(listen: impl Into<String>, public_url: impl Into<String>) -> Self {
        GatewayConfig {
            listen: listen.into(),
            public_url: public_url.into(),
            peers: Vec::new(),
            coin_bias: 0.5,
            retry_interval: crate::node::DEFAULT_RETRY_INTERVAL,
            retry_max: Some(crate::node::DEFAULT_RETRY_MAX),
            ack_enabled: true,
            trickle: false,
            snapshot_path: None,
            banner: None,
            rng_seed: 0,
            flush_every: Some(Duration::from_secs(1)),
            workers: 4,
        }
    }

    fn node_config(&self) -> NodeConfig {
        let mut config = NodeConfig::new(self.public_url.clone());
        config.coin_bias = self.coin_bias;
        config.retry_interval = self.retry_interval;
        config.retry_max = self.retry_max;
        config.ack_enabled = self.ack_enabled;
        config.trickle = self.trickle;
        config
    }
}

/// A running gateway; dropping it without [`Gateway::shutdown`] skips the
/// snapshot write.
pub struct Gateway {
    server: Arc<tiny_http::Server>,
    node: Arc<Mutex<NodeState>>,
    clock: Arc<AtomicU64>,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
    flusher: Option<JoinHandle<()>>,
    local_addr: SocketAddr,
    snapshot_path: Option<PathBuf>,
}

/// Start serving. Restores node state from the snapshot file when one
/// exists.
pub fn serve(config: GatewayConfig, keypair: KeyPair) -> Result<Gateway, GatewayError> {
    let node_config = config.node_config();
    let mut node = match &config.snapshot_path {
        Some(path) if path.exists() => {
            let bytes = std::fs::read(path)?;
            NodeState::restore(keypair, node_config, config.rng_seed, &bytes)?
        }
        _ => NodeState::new(keypair, node_config, config.rng_seed),
    };
    for peer in &config.peers {
        node.register_peer(peer);
    }

    let server = tiny_http::Server::http(config.listen.as_str()).map_err(|source| {
        GatewayError::Bind {
            addr: config.listen.clone(),
            source,
        }
    })?;
    let local_addr = match server.server_addr() {
        tiny_http::ListenAddr::IP(addr) => addr,
        #[allow(unreachable_patterns)]
        _ => unreachable!("http listener is always an ip socket"),
    };

    let server = Arc::new(server);
    let node = Arc::new(Mutex::new(node));
    let clock = Arc::new(AtomicU64::new(0));
    let stop = Arc::new(AtomicBool::new(false));
    let banner: Arc<Vec<u8>> = Arc::new(config.banner.clone().unwrap_or_else(|| DEFAULT_BANNER.to_vec()));
    let public_url = Arc::new(config.public_url.clone());

    let mut workers = Vec::with_capacity(config.workers.max(1));
    for _ in 0..config.workers.max(1) {
        let server = Arc::clone(&server);
        let node = Arc::clone(&node);
        let clock = Arc::clone(&clock);
        let stop = Arc::clone(&stop);
        let banner = Arc::clone(&banner);
        let public_url = Arc::clone(&public_url);
        workers.push(std::thread::spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                match server.recv_timeout(Duration::from_millis(25)) {
                    Ok(Some(request)) => {
                        handle_request(request, &node, &clock, &banner, &public_url);
                    }
                    Ok(None) => {}
                    Err(_) => break,
                }
            }
        }));
    }

    let flusher = config.flush_every.map(|every| {
        let node = Arc::clone(&node);
        let clock = Arc::clone(&clock);
        let stop = Arc::clone(&stop);
        std::thread::spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                std::thread::sleep(every.min(Duration::from_millis(100)));
                // The timer only marks eligibility and purges; dispatch
                // still requires a client visit, so no trickle here.
                let now = clock.load(Ordering::SeqCst);
                if let Ok(mut n) = node.lock() {
                    n.flush_tick(now, false);
                }
            }
        })
    });

    Ok(Gateway {
        server,
        node,
        clock,
        stop,
        workers,
        flusher,
        local_addr,
        snapshot_path: config.snapshot_path,
    })
}

impl Gateway {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.local_addr)
    }

    pub fn mix_url(&self) -> String {
        format!("{}/mix", self.base_url())
    }

    /// Current node state, serialized. Also what shutdown persists.
    pub fn snapshot(&self) -> Vec<u8> {
        self.node.lock().expect("node lock").snapshot()
    }

    pub fn pool_len(&self) -> usize {
        self.node.lock().expect("node lock").pool_len()
    }

    /// Logical time: how many mix/frameset interactions have been served.
    pub fn clock(&self) -> u64 {
        self.clock.load(Ordering::SeqCst)
    }

    /// Stop accepting requests, join the workers, and persist the node
    /// snapshot (write-temp-rename, so a crash never truncates it).
    pub fn shutdown(mut self) -> Result<(), GatewayError> {
        self.stop.store(true, Ordering::SeqCst);
        self.server.unblock();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
        if let Some(f) = self.flusher.take() {
            let _ = f.join();
        }
        if let Some(path) = &self.snapshot_path {
            let snapshot = self.node.lock().expect("node lock").snapshot();
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, &snapshot)?;
            std::fs::rename(&tmp, path)?;
        }
        Ok(())
    }
}

fn handle_request(
    mut request: tiny_http::Request,
    node: &Mutex<NodeState>,
    clock: &AtomicU64,
    banner: &[u8],
    public_url: &str,
) {
    let path = request.url().split('?').next().unwrap_or("/").to_string();
    let method = request.method().clone();

    let (status, content_type, body): (u16, &str, Vec<u8>) = match (method, path.as_str()) {
        (tiny_http::Method::Post, "/mix") => {
            let referer = request
                .headers()
                .iter()
                .find(|h| h.field.equiv("Referer"))
                .map(|h| h.value.as_str().to_string());
            let mut raw = Vec::new();
            let _ = request
                .as_reader()
                .take(MAX_BODY as u64)
                .read_to_end(&mut raw);
            let now = clock.fetch_add(1, Ordering::SeqCst) + 1;
            let response = match parse_slot_field(&raw) {
                Some(slot) => {
                    let referer = referer.as_deref().and_then(decode_referer);
                    let mut n = node.lock().expect("node lock");
                    n.interact(Stimulus::Post { slot, referer }, now)
                }
                None => {
                    // Malformed submissions are logged and answered with
                    // the ordinary page; errors must not leak on the wire.
                    log::debug!("discarding malformed submission ({} bytes)", raw.len());
                    crate::node::NodeResponse::FixedHtml
                }
            };
            let doc = emit_carrier(&response, public_url);
            (200, "text/html; charset=utf-8", doc.html.into_bytes())
        }
        (tiny_http::Method::Get, "/frameset") => {
            let now = clock.fetch_add(1, Ordering::SeqCst) + 1;
            let response = {
                let mut n = node.lock().expect("node lock");
                n.interact(Stimulus::Visit, now)
            };
            let doc = emit_carrier(&response, public_url);
            (200, "text/html; charset=utf-8", doc.html.into_bytes())
        }
        (tiny_http::Method::Get, "/banner.img") => (200, "image/gif", banner.to_vec()),
        (tiny_http::Method::Get, "/health") => {
            let n = node.lock().expect("node lock");
            let body = format!(
                "{{\"status\":\"ok\",\"pool\":{},\"outstanding_acks\":{},\"clock\":{}}}\n",
                n.pool_len(),
                n.ack_table_len(),
                n.clock()
            );
            (200, "application/json", body.into_bytes())
        }
        _ => (404, "text/plain; charset=utf-8", b"not found\n".to_vec()),
    };

    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], content_type.as_bytes())
        .expect("static header");
    let _ = request.respond(
        tiny_http::Response::from_data(body)
            .with_status_code(status)
            .with_header(header),
    );
}

/// Pull the transport-encoded slot out of a form body. `None` for anything
/// that is not exactly one well-formed slot field.
fn parse_slot_field(body: &[u8]) -> Option<Slot> {
    let text = std::str::from_utf8(body).ok()?;
    for pair in text.split('&') {
        let (key, value) = pair.split_once('=')?;
        if key != FORM_FIELD {
            continue;
        }
        let decoded = form_percent_decode(value)?;
        let bytes = transport_decode(&decoded).ok()?;
        if bytes.len() != SLOT_SIZE {
            return None;
        }
        return Slot::from_vec(bytes).ok();
    }
    None
}

fn form_percent_decode(value: &str) -> Option<String> {
    let bytes = value.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'+' => {
                out.push(b' ');
                i += 1;
            }
            b'%' => {
                let pair = bytes.get(i + 1..i + 3)?;
                let s = std::str::from_utf8(pair).ok()?;
                out.push(u8::from_str_radix(s, 16).ok()?);
                i += 3;
            }
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    String::from_utf8(out).ok()
}

// ---------------------------------------------------------------------------
// A small blocking HTTP client speaking exactly the gateway's dialect;
// used by the command line and the integration tests.
// ---------------------------------------------------------------------------

pub mod client {
    use std::io::{Read, Write};
    use std::net::TcpStream;

    #[derive(Debug)]
    pub struct HttpResponse {
        pub status: u16,
        pub headers: Vec<(String, String)>,
        pub body: Vec<u8>,
        /// Total bytes received on the wire, status line and headers
        /// included.
        pub raw_len: usize,
    }

    fn split_url(url: &str) -> std::io::Result<(String, String)> {
        let rest = url.strip_prefix("http://").ok_or_else(|| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "only http:// supported")
        })?;
        let (host, path) = match rest.find('/') {
            Some(i) => (&rest[..i], &rest[i..]),
            None => (rest, "/"),
        };
        Ok((host.to_string(), path.to_string()))
    }

    fn exchange(host: &str, request: &[u8]) -> std::io::Result<HttpResponse> {
        let mut stream = TcpStream::connect(host)?;
        stream.write_all(request)?;
        let mut raw = Vec::new();
        stream.read_to_end(&mut raw)?;
        parse_response(&raw)
    }

    fn parse_response(raw: &[u8]) -> std::io::Result<HttpResponse> {
        let header_end = raw
            .windows(4)
            .position(|w| w == b"\r\n\r\n")
            .ok_or_else(|| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, "no header terminator")
            })?;
        let head = std::str::from_utf8(&raw[..header_end])
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let mut lines = head.split("\r\n");
        let status_line = lines.next().unwrap_or_default();
        let status: u16 = status_line
            .split_whitespace()
            .nth(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, "bad status line")
            })?;
        let headers: Vec<(String, String)> = lines
            .filter_map(|l| l.split_once(':'))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect();
        Ok(HttpResponse {
            status,
            headers,
            body: raw[header_end + 4..].to_vec(),
            raw_len: raw.len(),
        })
    }

    pub fn get(url: &str) -> std::io::Result<HttpResponse> {
        let (host, path) = split_url(url)?;
        let request = format!(
            "GET {path} HTTP/1.1\r\nHost: {host}\r\nConnection: close\r\n\r\n"
        );
        exchange(&host, request.as_bytes())
    }

    /// POST one form field, optionally with a referer header, exactly as a
    /// browser executing a carrier document would.
    pub fn post_form(
        url: &str,
        referer: Option<&str>,
        field: &str,
        value: &str,
    ) -> std::io::Result<HttpResponse> {
        let (host, path) = split_url(url)?;
        let body = format!("{field}={value}");
        let referer_line = referer
            .map(|r| format!("Referer: {r}\r\n"))
            .unwrap_or_default();
        let request = format!(
            "POST {path} HTTP/1.1\r\nHost: {host}\r\n{referer_line}\
             Content-Type: application/x-www-form-urlencoded\r\n\
             Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        exchange(&host, request.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_field_parsing_rejects_garbage() {
        assert!(parse_slot_field(b"").is_none());
        assert!(parse_slot_field(b"x=1").is_none());
        assert!(parse_slot_field(b"m=notbase64!!!").is_none());
        let short = format!("m={}", crate::channels::transport_encode(b"short"));
        assert!(parse_slot_field(short.as_bytes()).is_none());

        let mut rng = <rand_chacha::ChaCha20Rng as rand::SeedableRng>::seed_from_u64(1);
        let slot = crate::codec::pad_to_slot(b"ok", &mut rng).unwrap();
        let good = format!("m={}", crate::channels::transport_encode(slot.as_bytes()));
        assert_eq!(parse_slot_field(good.as_bytes()).unwrap(), slot);
        // Other fields may precede ours.
        let multi = format!(
            "a=b&m={}",
            crate::channels::transport_encode(slot.as_bytes())
        );
        assert_eq!(parse_slot_field(multi.as_bytes()).unwrap(), slot);
    }

    #[test]
    fn form_decoding_handles_escapes() {
        assert_eq!(form_percent_decode("a+b").unwrap(), "a b");
        assert_eq!(form_percent_decode("a%2Bb").unwrap(), "a+b");
        assert!(form_percent_decode("%zz").is_none());
        assert!(form_percent_decode("%2").is_none());
    }
}
