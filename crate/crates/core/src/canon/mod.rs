//! Request canonicalization: parse, decode, validate headers, extract the
//! endpoint and abstract everything else into a token sequence.

mod endpoint;
mod headers;
mod request;
mod schema;

use std::io::Read;

use flate2::read::{DeflateDecoder, GzDecoder, ZlibDecoder};
use thiserror::Error;

pub use endpoint::{decode_once, extract_endpoint, Endpoint};
pub use headers::{is_ipv4_with_port, is_valid_host, rule_for, validate_headers, HeaderRule};
pub use request::{parse_raw_request, write_container, ContainerReader, RawHttpRequest};
pub use schema::{abstract_text, AbstractionSchema, SchemaError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CanonError {
    #[error("malformed request: {0}")]
    MalformedRequest(String),
    #[error("no host could be determined for the request")]
    MissingHost,
}

/// Non-fatal conditions met while canonicalizing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CanonWarning {
    /// The body was tokenized as raw bytes.
    UnsupportedEncoding(String),
    /// The body claimed a supported coding but did not decompress.
    CorruptBody(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalRequest {
    pub endpoint: Endpoint,
    pub tokens: Vec<String>,
    /// Names of headers routed to abstraction by validation.
    pub dropped_headers: Vec<String>,
    pub warnings: Vec<CanonWarning>,
}

impl CanonicalRequest {
    /// The corpus line format: tokens separated by single spaces.
    pub fn token_line(&self) -> String {
        self.tokens.join(" ")
    }
}

const MAX_DECOMPRESSED: u64 = 16 << 20;

fn decompress(coding: &str, body: &[u8]) -> Result<Vec<u8>, CanonWarning> {
    let mut out = Vec::new();
    let res = match coding {
        "gzip" | "x-gzip" => GzDecoder::new(body)
            .take(MAX_DECOMPRESSED)
            .read_to_end(&mut out),
        // "deflate" is zlib-wrapped per the HTTP registry, but raw streams are common.
        "deflate" => match ZlibDecoder::new(body)
            .take(MAX_DECOMPRESSED)
            .read_to_end(&mut out)
        {
            Ok(n) => Ok(n),
            Err(_) => {
                out.clear();
                DeflateDecoder::new(body)
                    .take(MAX_DECOMPRESSED)
                    .read_to_end(&mut out)
            }
        },
        "identity" => return Ok(body.to_vec()),
        other => return Err(CanonWarning::UnsupportedEncoding(other.to_string())),
    };
    res.map(|_| out)
        .map_err(|e| CanonWarning::CorruptBody(format!("{coding}: {e}")))
}

/// Undoes the listed content codings, last applied first.
fn decode_body(req: &RawHttpRequest, warnings: &mut Vec<CanonWarning>) -> Vec<u8> {
    let Some(codings) = req.header("content-encoding") else {
        return req.body.clone();
    };
    let mut body = req.body.clone();
    for coding in codings.rsplit(',') {
        let coding = coding.trim().to_ascii_lowercase();
        if coding.is_empty() {
            continue;
        }
        match decompress(&coding, &body) {
            Ok(b) => body = b,
            Err(w) => {
                warnings.push(w);
                return req.body.clone();
            }
        }
    }
    body
}

pub fn canonicalize(
    req: &RawHttpRequest,
    schema: &AbstractionSchema,
) -> Result<CanonicalRequest, CanonError> {
    let endpoint = extract_endpoint(req)?;
    let mut warnings = Vec::new();
    let body = decode_body(req, &mut warnings);
    let (_, dropped) = validate_headers(req);

    let mut tokens = Vec::new();
    let target = decode_once(endpoint::origin_part(&req.target).as_bytes()).to_lowercase();
    schema::abstract_into(&target, schema, &mut tokens);
    schema::abstract_into(&req.version.to_lowercase(), schema, &mut tokens);
    for name in &dropped {
        let value = req.header(name).unwrap_or_default();
        let line = format!("{name}: {value}").to_lowercase();
        schema::abstract_into(&line, schema, &mut tokens);
    }
    let body = decode_once(&body).to_lowercase();
    schema::abstract_into(&body, schema, &mut tokens);

    Ok(CanonicalRequest {
        endpoint,
        tokens,
        dropped_headers: dropped,
        warnings,
    })
}

/// Parses and canonicalizes raw request bytes.
pub fn canonicalize_bytes(
    raw: &[u8],
    schema: &AbstractionSchema,
) -> Result<CanonicalRequest, CanonError> {
    canonicalize(&parse_raw_request(raw)?, schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::{DeflateEncoder, GzEncoder};
    use flate2::Compression;
    use std::io::Write;

    const CSIC_SQLI: &[u8] = b"POST http://localhost:8080/tienda1/publico/anadir.jsp HTTP/1.1\r\n\
User-Agent: Mozilla/5.0 (compatible; Konqueror/3.5; Linux) KHTML/3.5.8 (like Gecko)\r\n\
Pragma: no-cache\r\n\
Cache-control: no-cache\r\n\
Accept: text/xml,application/xml,application/xhtml+xml,text/html;q=0.9,text/plain;q=0.8,image/png,*/*;q=0.5\r\n\
Accept-Encoding: x-gzip, x-deflate, gzip, deflate\r\n\
Accept-Charset: utf-8, utf-8;q=0.5, *;q=0.5\r\n\
Accept-Language: en\r\n\
Host: localhost:8080\r\n\
Cookie: JSESSIONID=B92A8B48B9008CD29F622A994E0F650D\r\n\
Content-Type: application/x-www-form-urlencoded\r\n\
Connection: close\r\n\
Content-Length: 146\r\n\
\r\n\
id=2&nombre=Jam%F3n+Ib%E9rico&precio=85&cantidad=%27%3B+DROP+TABLE+usuarios%3B+SELECT+*+FROM+datos+WHERE+nombre+LIKE+%27%25&B1=A%F1adir+al+carrito";

    #[test]
    fn csic_sqli_payload_reaches_tokens() {
        let c = canonicalize_bytes(CSIC_SQLI, &AbstractionSchema::default()).unwrap();
        assert_eq!(
            c.endpoint,
            Endpoint::new("POST", "localhost", "/tienda1/publico/anadir.jsp")
        );
        for w in ["drop", "table", "usuarios", "select", "quote", "semi"] {
            assert!(c.tokens.iter().any(|t| t == w), "missing {w}: {:?}", c.tokens);
        }
        // Host, Accept, Content-Length, Connection are valid and excluded.
        for kept in ["host", "accept", "content-length", "connection"] {
            assert!(!c.dropped_headers.iter().any(|h| h == kept), "{kept}");
        }
        assert!(c.dropped_headers.iter().any(|h| h == "user-agent"));
        assert!(!c.tokens.iter().any(|t| t == "8080"));
        assert!(c.tokens.iter().all(|t| t.chars().all(char::is_alphanumeric)));
    }

    #[test]
    fn only_valid_headers_and_empty_body() {
        let schema = AbstractionSchema::default();
        let c = canonicalize_bytes(b"GET / HTTP/1.1\r\nHost: h:80\r\n\r\n", &schema).unwrap();
        assert_eq!(c.endpoint, Endpoint::new("GET", "h", "/"));
        assert_eq!(c.tokens, vec!["slash", "http", "slash", "num", "dot", "num"]);
        assert!(c.dropped_headers.is_empty());
    }

    #[test]
    fn deterministic() {
        let schema = AbstractionSchema::default();
        assert_eq!(
            canonicalize_bytes(CSIC_SQLI, &schema).unwrap(),
            canonicalize_bytes(CSIC_SQLI, &schema).unwrap()
        );
    }

    fn with_body(encoding: &str, body: &[u8]) -> Vec<u8> {
        let mut raw = format!(
            "POST /p HTTP/1.1\r\nHost: h\r\nContent-Encoding: {encoding}\r\nContent-Length: {}\r\n\r\n",
            body.len()
        )
        .into_bytes();
        raw.extend_from_slice(body);
        raw
    }

    fn tail_tokens(raw: &[u8]) -> CanonicalRequest {
        canonicalize_bytes(raw, &AbstractionSchema::default()).unwrap()
    }

    #[test]
    fn gzip_and_deflate_bodies_decompress() {
        let plain = b"user=admin&pass=%27or%271";
        let mut gz = GzEncoder::new(Vec::new(), Compression::default());
        gz.write_all(plain).unwrap();
        let gz = gz.finish().unwrap();
        let mut df = DeflateEncoder::new(Vec::new(), Compression::default());
        df.write_all(plain).unwrap();
        let df = df.finish().unwrap();

        let expected = abstract_text("user=admin&pass='or'1", &AbstractionSchema::default());
        for raw in [with_body("gzip", &gz), with_body("deflate", &df)] {
            let c = tail_tokens(&raw);
            assert!(c.warnings.is_empty());
            assert!(c.tokens.ends_with(&expected), "{:?}", c.tokens);
        }
    }

    #[test]
    fn unknown_encoding_is_soft() {
        let c = tail_tokens(&with_body("br", b"a=b"));
        assert_eq!(
            c.warnings,
            vec![CanonWarning::UnsupportedEncoding("br".into())]
        );
        assert!(c.tokens.ends_with(&["chr".into(), "equals".into(), "chr".into()]));
    }

    #[test]
    fn corrupt_gzip_falls_back_to_raw() {
        let c = tail_tokens(&with_body("gzip", b"notgzip"));
        assert!(matches!(c.warnings[..], [CanonWarning::CorruptBody(_)]));
        assert_eq!(c.tokens.last().unwrap(), "notgzip");
    }

    #[test]
    fn residual_percent_maps_through_schema() {
        let c = tail_tokens(b"GET /x?q=%2527 HTTP/1.1\r\nHost: h\r\n\r\n");
        assert!(c.tokens.windows(2).any(|w| w == ["pct", "num"]), "{:?}", c.tokens);
        assert!(!c.tokens.iter().any(|t| t == "quote"));
    }
}
