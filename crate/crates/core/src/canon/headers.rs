//! Fixed header validation rules.
//!
//! A header whose value satisfies its rule is kept out of the token stream.
//! Headers that fail their rule, or have no rule, are routed to abstraction.

use super::RawHttpRequest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeaderRule {
    Host,
    DecimalInteger,
    Connection,
    AcceptEncoding,
    Accept,
    /// Attacker-controlled free text; never kept.
    AlwaysAbstract,
}

pub fn rule_for(name: &str) -> Option<HeaderRule> {
    match name {
        "host" => Some(HeaderRule::Host),
        "content-length" => Some(HeaderRule::DecimalInteger),
        "connection" => Some(HeaderRule::Connection),
        "accept-encoding" => Some(HeaderRule::AcceptEncoding),
        "accept" => Some(HeaderRule::Accept),
        "user-agent" => Some(HeaderRule::AlwaysAbstract),
        _ => None,
    }
}

impl HeaderRule {
    pub fn accepts(self, value: &str) -> bool {
        let value = value.trim();
        match self {
            HeaderRule::Host => is_valid_host(value),
            HeaderRule::DecimalInteger => {
                !value.is_empty() && value.len() <= 19 && value.bytes().all(|b| b.is_ascii_digit())
            }
            HeaderRule::Connection => list_members(value, |item| {
                matches!(item, "keep-alive" | "close" | "upgrade" | "te")
            }),
            HeaderRule::AcceptEncoding => list_members(value, |item| {
                let coding = strip_qvalue(item);
                coding.is_some_and(|c| {
                    matches!(
                        c,
                        "gzip" | "x-gzip" | "deflate" | "br" | "compress" | "identity" | "zstd" | "*"
                    )
                })
            }),
            HeaderRule::Accept => list_members(value, |item| {
                let mut params = item.split(';');
                let range = params.next().unwrap_or("").trim();
                is_media_range(range)
                    && params.all(|p| {
                        let p = p.trim();
                        p.strip_prefix("q=").map_or_else(
                            || is_token_param(p),
                            is_qvalue,
                        )
                    })
            }),
            HeaderRule::AlwaysAbstract => false,
        }
    }
}

/// Splits a header value into kept (valid) and abstraction-bound headers.
///
/// `kept` and `dropped` partition the input; `dropped` holds the names of
/// headers that go on to token abstraction.
pub fn validate_headers(req: &RawHttpRequest) -> (Vec<(String, String)>, Vec<String>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (name, value) in &req.headers {
        let lowered = value.to_lowercase();
        match rule_for(name) {
            Some(rule) if rule.accepts(&lowered) => kept.push((name.clone(), value.clone())),
            _ => dropped.push(name.clone()),
        }
    }
    (kept, dropped)
}

fn list_members(value: &str, member: impl Fn(&str) -> bool) -> bool {
    !value.is_empty() && value.split(',').all(|item| member(item.trim()))
}

fn strip_qvalue(item: &str) -> Option<&str> {
    match item.split_once(';') {
        None => Some(item.trim()),
        Some((coding, q)) => q
            .trim()
            .strip_prefix("q=")
            .filter(|q| is_qvalue(q))
            .map(|_| coding.trim()),
    }
}

fn is_qvalue(q: &str) -> bool {
    match q.split_once('.') {
        None => q == "0" || q == "1",
        Some(("0", frac)) => frac.len() <= 3 && frac.bytes().all(|b| b.is_ascii_digit()),
        Some(("1", frac)) => frac.len() <= 3 && frac.bytes().all(|b| b == b'0'),
        _ => false,
    }
}

fn is_tchar(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b"!#$&^_.+-".contains(&b)
}

fn is_media_range(range: &str) -> bool {
    let Some((ty, sub)) = range.split_once('/') else {
        return false;
    };
    let token = |s: &str| !s.is_empty() && s.bytes().all(is_tchar);
    (ty == "*" && sub == "*") || (token(ty) && (sub == "*" || token(sub)))
}

fn is_token_param(p: &str) -> bool {
    p.split_once('=').is_some_and(|(k, v)| {
        !k.is_empty() && k.bytes().all(is_tchar) && !v.is_empty() && v.bytes().all(is_tchar)
    })
}

fn parse_bounded(digits: &str, max_len: usize) -> Option<u32> {
    if digits.is_empty() || digits.len() > max_len || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// `(0≤n<256).(0≤n<256).(0≤n<256).(0≤n<256):(1≤n≤65535)`
pub fn is_ipv4_with_port(value: &str) -> bool {
    let Some((addr, port)) = value.rsplit_once(':') else {
        return false;
    };
    let octets: Vec<&str> = addr.split('.').collect();
    octets.len() == 4
        && octets
            .iter()
            .all(|o| parse_bounded(o, 3).is_some_and(|n| n < 256))
        && parse_bounded(port, 5).is_some_and(|p| (1..=65535).contains(&p))
}

fn is_dns_label(label: &str) -> bool {
    let b = label.as_bytes();
    !b.is_empty()
        && b.len() <= 63
        && b.iter().all(|c| c.is_ascii_alphanumeric() || *c == b'-')
        && b[0] != b'-'
        && b[b.len() - 1] != b'-'
}

/// Host header rule: IPv4 with port, or a DNS hostname with an optional port.
///
/// Dotted all-numeric hosts are held to the IPv4 grammar so that an
/// out-of-range address cannot pass as a hostname.
pub fn is_valid_host(value: &str) -> bool {
    let (name, port) = match value.rsplit_once(':') {
        Some((n, p)) => (n, Some(p)),
        None => (value, None),
    };
    let labels: Vec<&str> = name.split('.').collect();
    let numeric = labels
        .iter()
        .all(|l| !l.is_empty() && l.bytes().all(|b| b.is_ascii_digit()));
    if numeric {
        return is_ipv4_with_port(value);
    }
    name.len() <= 253
        && labels.iter().all(|l| is_dns_label(l))
        && port.map_or(true, |p| {
            parse_bounded(p, 5).is_some_and(|p| (1..=65535).contains(&p))
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canon::parse_raw_request;
    use proptest::prelude::*;

    #[test]
    fn host_examples() {
        assert!(is_valid_host("192.168.0.1:8080"));
        assert!(!is_valid_host("256.1.1.1:80"));
        assert!(!is_valid_host("10.0.0.1:70000"));
        assert!(!is_valid_host("10.0.0.1:0"));
        assert!(is_valid_host("localhost:8080"));
        assert!(is_valid_host("shop.example"));
        assert!(!is_valid_host("shop.example:"));
        assert!(!is_valid_host("evil.example/../x"));
        assert!(!is_valid_host("-bad.example"));
        assert!(!is_valid_host(""));
    }

    #[test]
    fn other_rules() {
        assert!(HeaderRule::DecimalInteger.accepts("42"));
        assert!(!HeaderRule::DecimalInteger.accepts("4x2"));
        assert!(HeaderRule::Connection.accepts("keep-alive"));
        assert!(HeaderRule::Connection.accepts("keep-alive, upgrade"));
        assert!(!HeaderRule::Connection.accepts("close; drop table"));
        assert!(HeaderRule::AcceptEncoding.accepts("gzip, deflate;q=0.5, br"));
        assert!(!HeaderRule::AcceptEncoding.accepts("gzip;q=2"));
        assert!(HeaderRule::Accept.accepts(
            "text/html,application/xhtml+xml,application/xml;q=0.9,*/*;q=0.8"
        ));
        assert!(HeaderRule::Accept.accepts("text/plain; charset=utf-8"));
        assert!(!HeaderRule::Accept.accepts("<script>"));
        assert!(!HeaderRule::AlwaysAbstract.accepts("mozilla/5.0"));
    }

    #[test]
    fn partition_covers_every_header() {
        let req = parse_raw_request(
            b"GET / HTTP/1.1\r\nHost: 10.0.0.1:70000\r\nUser-Agent: x\r\nContent-Length: 0\r\nCookie: a=b\r\n\r\n",
        )
        .unwrap();
        let (kept, dropped) = validate_headers(&req);
        let kept_names: Vec<_> = kept.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(kept_names, vec!["content-length"]);
        assert_eq!(dropped, vec!["host", "user-agent", "cookie"]);
    }

    fn ipv4_parts() -> impl Strategy<Value = ([u32; 4], u32)> {
        (prop::array::uniform4(0u32..400), 0u32..80000)
    }

    proptest! {
        // Regenerates the grammar from numeric parts and compares the verdict
        // with the bounds applied directly to those numbers.
        #[test]
        fn ipv4_rule_matches_grammar((octets, port) in ipv4_parts()) {
            let s = format!("{}.{}.{}.{}:{}", octets[0], octets[1], octets[2], octets[3], port);
            let expected = octets.iter().all(|&o| o < 256) && (1..=65535).contains(&port);
            prop_assert_eq!(is_ipv4_with_port(&s), expected);
            prop_assert_eq!(is_valid_host(&s), expected);
        }

        #[test]
        fn ipv4_rule_rejects_wrong_shape(octets in prop::collection::vec(0u32..256, 1..7), port in 1u32..65536) {
            let s = format!("{}:{}", octets.iter().map(|o| o.to_string()).collect::<Vec<_>>().join("."), port);
            prop_assert_eq!(is_ipv4_with_port(&s), octets.len() == 4);
        }
    }
}
