use std::fmt;
use std::str::FromStr;

use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetError, LabeledRequest};
use crate::canon::parse_raw_request;
use crate::detector::Label;
use crate::tsv;

const BUNDLED: &str = include_str!("../../data/payloads.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PayloadClass {
    Sqli,
    Xss,
    Traversal,
    Log4j,
    Cmdi,
    /// Placed in the Cookie header instead of a parameter.
    Cookie,
}

impl FromStr for PayloadClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "sqli" => PayloadClass::Sqli,
            "xss" => PayloadClass::Xss,
            "traversal" => PayloadClass::Traversal,
            "log4j" => PayloadClass::Log4j,
            "cmdi" => PayloadClass::Cmdi,
            "cookie" => PayloadClass::Cookie,
            _ => return Err(format!("unknown payload class {s:?}")),
        })
    }
}

impl fmt::Display for PayloadClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PayloadClass::Sqli => "sqli",
            PayloadClass::Xss => "xss",
            PayloadClass::Traversal => "traversal",
            PayloadClass::Log4j => "log4j",
            PayloadClass::Cmdi => "cmdi",
            PayloadClass::Cookie => "cookie",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payload {
    pub class: PayloadClass,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PayloadTable {
    pub version: u32,
    pub payloads: Vec<Payload>,
}

impl PayloadTable {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled payload table parses")
    }

    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let bad = |line: usize, msg: String| DatasetError::PayloadTable { line, msg };
        let mut lines = text.lines().enumerate();
        let version = lines
            .next()
            .and_then(|(_, l)| l.strip_prefix("payloads-version:"))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad(1, "missing payloads-version header".into()))?;
        let mut payloads = Vec::new();
        for (i, line) in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (class, text) = line
                .split_once('\t')
                .ok_or_else(|| bad(i + 1, "expected class<TAB>payload".into()))?;
            let text = tsv::unescape(text).ok_or_else(|| bad(i + 1, "bad escape".into()))?;
            if text.is_empty() || text.contains(['\r', '\n']) {
                return Err(bad(i + 1, "payload must be a non-empty single line".into()));
            }
            payloads.push(Payload {
                class: class.parse().map_err(|m| bad(i + 1, m))?,
                text,
            });
        }
        if payloads.is_empty() {
            return Err(bad(1, "table has no payloads".into()));
        }
        Ok(PayloadTable { version, payloads })
    }
}

#[derive(Clone, Copy)]
enum Value {
    Word(&'static [&'static str]),
    Number(u32, u32),
    Hex,
}

struct Template {
    method: &'static str,
    path: &'static str,
    params: &'static [(&'static str, Value)],
    form_body: bool,
}

const WORDS: &[&str] = &[
    "apple", "river", "blue", "garden", "window", "coffee", "market", "silver", "planet", "forest",
    "summer", "bridge",
];
const NAMES: &[&str] = &["alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi"];
const COLORS: &[&str] = &["red", "green", "black", "white", "yellow", "purple"];
const LANGS: &[&str] = &["en", "es", "fr", "de", "it"];
const STATUS: &[&str] = &["pending", "shipped", "delivered", "cancelled"];
const FILES: &[&str] = &["report", "invoice", "manual", "catalog", "summary"];
const YES_NO: &[&str] = &["yes", "no"];

const TEMPLATES: &[Template] = &[
    Template {
        method: "GET",
        path: "/shop/search",
        params: &[("q", Value::Word(WORDS)), ("page", Value::Number(1, 50))],
        form_body: false,
    },
    Template {
        method: "POST",
        path: "/account/login",
        params: &[
            ("user", Value::Word(NAMES)),
            ("pass", Value::Word(WORDS)),
            ("remember", Value::Word(YES_NO)),
        ],
        form_body: true,
    },
    Template {
        method: "GET",
        path: "/catalog/item",
        params: &[("id", Value::Number(1, 99_999)), ("color", Value::Word(COLORS))],
        form_body: false,
    },
    Template {
        method: "POST",
        path: "/cart/add",
        params: &[
            ("item", Value::Number(1, 9_999)),
            ("qty", Value::Number(1, 9)),
            ("note", Value::Word(WORDS)),
        ],
        form_body: true,
    },
    Template {
        method: "GET",
        path: "/profile/view",
        params: &[("user", Value::Word(NAMES)), ("lang", Value::Word(LANGS))],
        form_body: false,
    },
    Template {
        method: "PUT",
        path: "/orders/update",
        params: &[("order", Value::Number(1_000, 999_999)), ("status", Value::Word(STATUS))],
        form_body: true,
    },
    Template {
        method: "GET",
        path: "/files/download",
        params: &[("name", Value::Word(FILES)), ("token", Value::Hex)],
        form_body: false,
    },
    Template {
        method: "DELETE",
        path: "/sessions/close",
        params: &[("sid", Value::Hex)],
        form_body: false,
    },
];

const USER_AGENTS: &[&str] = &[
    "Mozilla/5.0 (X11; Linux x86_64; rv:120.0) Gecko/20100101 Firefox/120.0",
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/119.0 Safari/537.36",
    "curl/8.4.0",
];

/// Hex blob with a guaranteed digit, so it always abstracts to the hex class.
fn hex_blob(rng: &mut ChaCha8Rng) -> String {
    format!("{}{:015x}", rng.gen_range(0..10), rng.gen::<u64>() >> 4)
}

fn draw(v: Value, rng: &mut ChaCha8Rng) -> String {
    match v {
        Value::Word(ws) => ws.choose(rng).unwrap().to_string(),
        Value::Number(lo, hi) => rng.gen_range(lo..=hi).to_string(),
        Value::Hex => hex_blob(rng),
    }
}

fn encode(s: &str) -> String {
    utf8_percent_encode(s, NON_ALPHANUMERIC).to_string()
}

fn render(
    t: &Template,
    host: &str,
    params: &[(String, String)],
    ua: &str,
    cookie: &str,
) -> Vec<u8> {
    let query: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let query = query.join("&");
    let mut head = if t.form_body {
        format!("{} {} HTTP/1.1\r\n", t.method, t.path)
    } else {
        format!("{} {}?{} HTTP/1.1\r\n", t.method, t.path, query)
    };
    head += &format!("Host: {host}\r\nUser-Agent: {ua}\r\nAccept: text/html,application/json;q=0.9\r\n");
    head += &format!("Accept-Encoding: gzip, deflate\r\nConnection: keep-alive\r\nCookie: {cookie}\r\n");
    if t.form_body {
        head += "Content-Type: application/x-www-form-urlencoded\r\n";
        head += &format!("Content-Length: {}\r\n\r\n{query}", query.len());
    } else {
        head += "\r\n";
    }
    head.into_bytes()
}

/// Deterministic corpus over `endpoints` synthetic endpoints.
///
/// Normals fill each endpoint's parameter template from small value
/// grammars. Anomalies use the same template with one payload from the
/// bundled table injected into a parameter (replacing or extending its
/// value) or into the Cookie header. Output is grouped by endpoint, normals
/// first.
pub fn generate_synthetic(
    seed: u64,
    endpoints: usize,
    normals_per_endpoint: usize,
    anomalies_per_endpoint: usize,
) -> Vec<LabeledRequest> {
    let table = PayloadTable::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(endpoints * (normals_per_endpoint + anomalies_per_endpoint));
    for e in 0..endpoints {
        let t = &TEMPLATES[e % TEMPLATES.len()];
        let host = match e / TEMPLATES.len() {
            0 => "shop.example.com".to_string(),
            n => format!("shop{n}.example.com"),
        };
        let base = |rng: &mut ChaCha8Rng| {
            let params: Vec<(String, String)> =
                t.params.iter().map(|&(k, v)| (k.to_string(), draw(v, rng))).collect();
            let ua = *USER_AGENTS.choose(rng).unwrap();
            let cookie = format!("session={}", hex_blob(rng));
            (params, ua, cookie)
        };
        for _ in 0..normals_per_endpoint {
            let (params, ua, cookie) = base(&mut rng);
            out.push(LabeledRequest::new(render(t, &host, &params, ua, &cookie), Label::Normal, "synthetic"));
        }
        for _ in 0..anomalies_per_endpoint {
            let (mut params, ua, mut cookie) = base(&mut rng);
            let p = table.payloads.choose(&mut rng).unwrap();
            if p.class == PayloadClass::Cookie {
                cookie = format!("{cookie}; pref={}", p.text);
            } else {
                let slot = rng.gen_range(0..params.len());
                let value = &mut params[slot].1;
                if rng.gen_bool(0.5) {
                    *value = encode(&p.text);
                } else {
                    *value += &encode(&p.text);
                }
            }
            out.push(LabeledRequest::new(render(t, &host, &params, ua, &cookie), Label::Anomaly, "synthetic"));
        }
    }
    out
}

/// Injects `payload` into a parsed copy of `raw`: into the Cookie header for
/// the cookie class, else at the end of the query string (adding `?q=` when
/// there is none). Returns `None` when `raw` does not parse.
pub fn inject_payload(raw: &[u8], payload: &Payload) -> Option<Vec<u8>> {
    let mut req = parse_raw_request(raw).ok()?;
    if payload.class == PayloadClass::Cookie {
        let cookie = match req.header("cookie") {
            Some(c) => format!("{c}; pref={}", payload.text),
            None => format!("pref={}", payload.text),
        };
        req.set_header("cookie", cookie);
    } else {
        let enc = encode(&payload.text);
        let (base, frag) = match req.target.split_once('#') {
            Some((b, f)) => (b.to_string(), format!("#{f}")),
            None => (req.target.clone(), String::new()),
        };
        req.target = if base.contains('?') {
            format!("{base}{enc}{frag}")
        } else {
            format!("{base}?q={enc}{frag}")
        };
    }
    Some(req.to_bytes())
}

/// Pseudo-anomalies for calibrating without labeled attacks: each normal
/// receives one random payload from `table`. Unparseable inputs are
/// dropped.
pub fn pseudo_anomalies(normals: &[LabeledRequest], table: &PayloadTable, seed: u64) -> Vec<LabeledRequest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    normals
        .iter()
        .filter_map(|r| {
            let p = table.payloads.choose(&mut rng)?;
            inject_payload(&r.raw, p).map(|raw| LabeledRequest::new(raw, Label::Anomaly, "pseudo"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canon::{canonicalize_bytes, decode_once, AbstractionSchema};
    use std::collections::HashSet;

    #[test]
    fn counts_and_determinism() {
        let a = generate_synthetic(1, 3, 50, 20);
        assert_eq!(a.iter().filter(|r| r.label == Label::Normal).count(), 150);
        assert_eq!(a.iter().filter(|r| r.label == Label::Anomaly).count(), 60);
        assert_eq!(a, generate_synthetic(1, 3, 50, 20));
        assert_ne!(a, generate_synthetic(2, 3, 50, 20));
    }

    #[test]
    fn anomalies_carry_payloads_and_differ_from_normals() {
        let table = PayloadTable::bundled();
        let schema = AbstractionSchema::default();
        let corpus = generate_synthetic(7, 10, 40, 30);
        let mut normals: std::collections::HashMap<_, HashSet<Vec<String>>> = Default::default();
        for r in corpus.iter().filter(|r| r.label == Label::Normal) {
            let c = canonicalize_bytes(&r.raw, &schema).unwrap();
            normals.entry(c.endpoint).or_default().insert(c.tokens);
        }
        assert_eq!(normals.len(), 10);
        for r in corpus.iter().filter(|r| r.label == Label::Anomaly) {
            let decoded = decode_once(&r.raw);
            assert!(table.payloads.iter().any(|p| decoded.contains(&p.text)), "{decoded}");
            let c = canonicalize_bytes(&r.raw, &schema).unwrap();
            assert!(!normals[&c.endpoint].contains(&c.tokens));
        }
    }

    #[test]
    fn table_parsing() {
        let t = PayloadTable::bundled();
        assert_eq!(t.version, 1);
        assert!(t.payloads.iter().any(|p| p.text.contains('\\')));
        assert!(PayloadTable::parse("sqli\tx\n").is_err());
        assert!(PayloadTable::parse("payloads-version: 1\nbogus\tx\n").is_err());
        assert!(PayloadTable::parse("payloads-version: 1\n").is_err());
    }

    #[test]
    fn injection_round_trips_through_parser() {
        let raw = b"GET /a?x=1 HTTP/1.1\r\nHost: h\r\n\r\n";
        let p = Payload { class: PayloadClass::Sqli, text: "' or 1=1--".into() };
        let out = inject_payload(raw, &p).unwrap();
        let req = parse_raw_request(&out).unwrap();
        assert!(decode_once(req.target.as_bytes()).ends_with("1' or 1=1--"));
        let c = Payload { class: PayloadClass::Cookie, text: "<b>".into() };
        let out = inject_payload(b"GET / HTTP/1.1\r\nHost: h\r\n\r\n", &c).unwrap();
        assert_eq!(parse_raw_request(&out).unwrap().header("cookie"), Some("pref=<b>"));
        let normals = generate_synthetic(3, 2, 5, 0);
        let pseudo = pseudo_anomalies(&normals, &PayloadTable::bundled(), 9);
        assert_eq!(pseudo.len(), 10);
        assert!(pseudo.iter().all(|r| r.label == Label::Anomaly));
    }
}
