use std::io::{self, Read, Write};

use super::CanonError;

/// A parsed HTTP/1.x request, prior to any decoding.
///
/// Header names are folded to lowercase. Repeated headers are merged into
/// the position of their first occurrence with values comma-joined.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawHttpRequest {
    pub method: String,
    pub target: String,
    pub version: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl RawHttpRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    /// Replaces the value of `name`, appending the header if absent.
    pub fn set_header(&mut self, name: &str, value: impl Into<String>) {
        let value = value.into();
        match self.headers.iter_mut().find(|(n, _)| n.eq_ignore_ascii_case(name)) {
            Some(slot) => slot.1 = value,
            None => self.headers.push((name.to_ascii_lowercase(), value)),
        }
    }

    /// Serializes with CRLF line endings.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{} {} {}\r\n", self.method, self.target, self.version).into_bytes();
        for (n, v) in &self.headers {
            out.extend_from_slice(format!("{n}: {v}\r\n").as_bytes());
        }
        out.extend_from_slice(b"\r\n");
        out.extend_from_slice(&self.body);
        out
    }
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let nl = bytes.iter().position(|&b| b == b'\n')?;
    let line = &bytes[..nl];
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    Some((line, &bytes[nl + 1..]))
}

fn malformed(msg: impl Into<String>) -> CanonError {
    CanonError::MalformedRequest(msg.into())
}

/// Parses one request. The body is everything after the blank line that ends
/// the header block, passed through untouched.
pub fn parse_raw_request(text: &[u8]) -> Result<RawHttpRequest, CanonError> {
    let (line, mut rest) = split_line(text).ok_or_else(|| malformed("missing request line"))?;
    let line = std::str::from_utf8(line).map_err(|_| malformed("request line is not utf-8"))?;
    let mut parts = line.split_ascii_whitespace();
    let method = parts.next().ok_or_else(|| malformed("empty request line"))?;
    if !method.bytes().all(|b| b.is_ascii_alphabetic()) {
        return Err(malformed(format!("invalid method {method:?}")));
    }
    let target = parts
        .next()
        .ok_or_else(|| malformed("missing request target"))?;
    let version = parts.next().ok_or_else(|| malformed("missing protocol version"))?;
    if parts.next().is_some() || !version.to_ascii_uppercase().starts_with("HTTP/") {
        return Err(malformed(format!("bad request line {line:?}")));
    }

    let mut headers: Vec<(String, String)> = Vec::new();
    loop {
        let (hline, next) =
            split_line(rest).ok_or_else(|| malformed("unterminated header block"))?;
        rest = next;
        if hline.is_empty() {
            break;
        }
        let hline = String::from_utf8_lossy(hline);
        let (name, value) = hline
            .split_once(':')
            .ok_or_else(|| malformed(format!("header without colon: {hline:?}")))?;
        let name = name.trim().to_ascii_lowercase();
        if name.is_empty() {
            return Err(malformed("empty header name"));
        }
        let value = value.trim().to_string();
        match headers.iter_mut().find(|(n, _)| *n == name) {
            Some((_, existing)) => {
                existing.push_str(", ");
                existing.push_str(&value);
            }
            None => headers.push((name, value)),
        }
    }

    Ok(RawHttpRequest {
        method: method.to_ascii_uppercase(),
        target: target.to_string(),
        version: version.to_string(),
        headers,
        body: rest.to_vec(),
    })
}

/// Writes records as `u32 little-endian length | bytes`, repeated.
pub fn write_container<W: Write, I, B>(mut out: W, records: I) -> io::Result<()>
where
    I: IntoIterator<Item = B>,
    B: AsRef<[u8]>,
{
    for rec in records {
        let rec = rec.as_ref();
        let len = u32::try_from(rec.len())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "record exceeds 4 GiB"))?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(rec)?;
    }
    Ok(())
}

/// Streams records out of a length-prefixed container.
pub struct ContainerReader<R> {
    inner: R,
}

impl<R: Read> ContainerReader<R> {
    pub fn new(inner: R) -> Self {
        ContainerReader { inner }
    }
}

impl<R: Read> Iterator for ContainerReader<R> {
    type Item = io::Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut len = [0u8; 4];
        let mut filled = 0;
        while filled < 4 {
            match self.inner.read(&mut len[filled..]) {
                Ok(0) if filled == 0 => return None,
                Ok(0) => {
                    return Some(Err(io::Error::new(
                        io::ErrorKind::UnexpectedEof,
                        "truncated length prefix",
                    )))
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Some(Err(e)),
            }
        }
        let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
        Some(self.inner.read_exact(&mut buf).map(|_| buf))
    }
}
