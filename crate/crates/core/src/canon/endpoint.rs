use std::fmt;

use percent_encoding::percent_decode;
use serde::{Deserialize, Serialize};

use super::{CanonError, RawHttpRequest};

/// `(method, host, path)`: the namespace key for retrieval and calibration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint {
    pub method: String,
    pub host: String,
    pub path: String,
}

impl Endpoint {
    pub fn new(method: impl Into<String>, host: impl Into<String>, path: impl Into<String>) -> Self {
        Endpoint {
            method: method.into(),
            host: host.into(),
            path: path.into(),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}{}", self.method, self.host, self.path)
    }
}

/// Percent-decodes exactly once. Invalid escapes are left in place.
pub fn decode_once(s: &[u8]) -> String {
    String::from_utf8_lossy(&percent_decode(s).collect::<Vec<u8>>()).into_owned()
}

/// Host part of an authority, without userinfo or port, lowercased.
fn authority_host(authority: &str) -> String {
    let host_port = authority.rsplit_once('@').map_or(authority, |(_, h)| h);
    let host = if let Some(rest) = host_port.strip_prefix('[') {
        // bracketed IPv6 literal
        rest.split_once(']').map_or(rest, |(h, _)| h)
    } else {
        host_port.rsplit_once(':').map_or(host_port, |(h, _)| h)
    };
    host.to_lowercase()
}

/// Splits an absolute-form target into `(authority, path-and-query)`.
fn split_absolute(target: &str) -> Option<(&str, &str)> {
    let (scheme, rest) = target.split_once("://")?;
    if scheme.is_empty() || !scheme.bytes().all(|b| b.is_ascii_alphanumeric() || b"+-.".contains(&b)) {
        return None;
    }
    let cut = rest.find(['/', '?', '#']).unwrap_or(rest.len());
    Some((&rest[..cut], &rest[cut..]))
}

/// Path-and-query portion of the request target, with any authority removed.
pub(crate) fn origin_part(target: &str) -> &str {
    split_absolute(target).map_or(target, |(_, p)| p)
}

pub fn extract_endpoint(req: &RawHttpRequest) -> Result<Endpoint, CanonError> {
    let (authority, rest) = match split_absolute(&req.target) {
        Some((a, p)) if !a.is_empty() => (Some(a.to_string()), p),
        Some((_, p)) => (None, p),
        None => (None, req.target.as_str()),
    };
    let authority = authority
        .or_else(|| req.header("host").map(str::trim).map(String::from))
        .filter(|a| !a.is_empty())
        .ok_or(CanonError::MissingHost)?;
    let host = authority_host(&authority);
    if host.is_empty() {
        return Err(CanonError::MissingHost);
    }

    let raw_path = rest.split(['?', '#']).next().unwrap_or("");
    let mut path = decode_once(raw_path.as_bytes()).to_lowercase();
    if path.is_empty() {
        path.push('/');
    }
    Ok(Endpoint {
        method: req.method.to_ascii_uppercase(),
        host,
        path,
    })
}
