use std::fs;
use std::path::{Path, PathBuf};

use super::{Corpus, CorpusFormat, DatasetError, LabeledRequest};
use crate::canon::{parse_raw_request, ContainerReader};
use crate::detector::Label;

fn unreadable(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::UnreadablePath {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, DatasetError> {
    fs::metadata(path).map_err(unreadable(path))?;
    match format {
        CorpusFormat::Csic => load_csic(path),
        CorpusFormat::Atrdf => load_atrdf(path),
        CorpusFormat::Container => load_container(path),
    }
}

fn label_hint(name: &str) -> Option<Label> {
    let name = name.to_ascii_lowercase();
    if name.contains("anomal") || name.contains("attack") || name.contains("malicious") {
        Some(Label::Anomaly)
    } else if name.contains("normal") || name.contains("benign") {
        Some(Label::Normal)
    } else {
        None
    }
}

/// Label from the file name, else from the nearest labeled ancestor below
/// `root`.
fn label_for(root: &Path, file: &Path) -> Option<Label> {
    let rel = file.strip_prefix(root).unwrap_or(file);
    let mut parts: Vec<String> = rel
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect();
    if parts.len() <= 1 {
        parts = vec![file.file_name()?.to_string_lossy().into_owned()];
    }
    parts.iter().rev().find_map(|p| label_hint(p))
}

fn files_under(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), DatasetError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(unreadable(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(unreadable(dir))?;
    entries.sort();
    for p in entries {
        let hidden = p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'));
        if hidden {
            continue;
        }
        if p.is_dir() {
            files_under(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Files without a label hint in their name or directory are ignored; an
/// input with no labeled file at all is an error.
fn load_csic(path: &Path) -> Result<Corpus, DatasetError> {
    let mut files = Vec::new();
    if path.is_dir() {
        files_under(path, &mut files)?;
    } else {
        files.push(path.to_path_buf());
    }
    let mut corpus = Corpus::default();
    let mut labeled = 0;
    for f in &files {
        let Some(label) = label_for(path, f) else { continue };
        labeled += 1;
        let bytes = fs::read(f).map_err(unreadable(f))?;
        let source = format!("csic:{}", f.strip_prefix(path).unwrap_or(f).display());
        let (reqs, skipped) = parse_csic_text(&bytes, label, &source);
        corpus.requests.extend(reqs);
        corpus.skipped += skipped;
    }
    if labeled == 0 {
        return Err(DatasetError::Unlabeled(path.to_path_buf()));
    }
    Ok(corpus)
}

fn is_request_line(line: &[u8]) -> bool {
    let mut parts = line.split(|&b| b == b' ').filter(|p| !p.is_empty());
    let (Some(_), Some(_), Some(v), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return false;
    };
    v.starts_with(b"HTTP/")
}

fn content_length(headers: &[&[u8]]) -> usize {
    headers
        .iter()
        .find_map(|h| {
            let s = String::from_utf8_lossy(h);
            let (name, value) = s.split_once(':')?;
            name.trim()
                .eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse().ok())
                .flatten()
        })
        .unwrap_or(0)
}

/// Splits concatenated raw requests.
///
/// A request starts at a line of the form `METHOD TARGET HTTP/x`. Its header
/// block runs to the next blank line. When the headers declare a positive
/// Content-Length, the non-blank lines that follow (up to a blank line or
/// the next request line) form the body. Text that does not start with a
/// request line is skipped up to the next request line and counted once.
pub fn parse_csic_text(bytes: &[u8], label: Label, source: &str) -> (Vec<LabeledRequest>, usize) {
    let lines: Vec<&[u8]> = bytes
        .split(|&b| b == b'\n')
        .map(|l| l.strip_suffix(b"\r").unwrap_or(l))
        .collect();
    let blank = |l: &[u8]| l.iter().all(u8::is_ascii_whitespace);
    let mut out = Vec::new();
    let mut skipped = 0;
    let mut i = 0;
    while i < lines.len() {
        if blank(lines[i]) {
            i += 1;
            continue;
        }
        if !is_request_line(lines[i]) {
            skipped += 1;
            while i < lines.len() && !is_request_line(lines[i]) {
                i += 1;
            }
            continue;
        }
        let start = lines[i];
        i += 1;
        let mut headers = Vec::new();
        while i < lines.len() && !blank(lines[i]) {
            headers.push(lines[i]);
            i += 1;
        }
        let mut body: Vec<u8> = Vec::new();
        if content_length(&headers) > 0 {
            while i < lines.len() && blank(lines[i]) {
                i += 1;
            }
            let mut first = true;
            while i < lines.len() && !blank(lines[i]) && !is_request_line(lines[i]) {
                if !first {
                    body.push(b'\n');
                }
                body.extend_from_slice(lines[i]);
                first = false;
                i += 1;
            }
        }
        let mut raw = start.to_vec();
        raw.extend_from_slice(b"\r\n");
        for h in &headers {
            raw.extend_from_slice(h);
            raw.extend_from_slice(b"\r\n");
        }
        raw.extend_from_slice(b"\r\n");
        raw.extend_from_slice(&body);
        if parse_raw_request(&raw).is_ok() {
            out.push(LabeledRequest::new(raw, label, source));
        } else {
            skipped += 1;
        }
    }
    (out, skipped)
}

const MANIFEST: &str = "labels.tsv";

/// A directory of one-request files plus `labels.tsv` (`filename<TAB>label`).
fn load_atrdf(path: &Path) -> Result<Corpus, DatasetError> {
    let (dir, manifest) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST))
    } else {
        (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
    };
    let text = fs::read_to_string(&manifest).map_err(unreadable(&manifest))?;
    let mut corpus = Corpus::default();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| DatasetError::Manifest {
            path: manifest.clone(),
            line: n + 1,
            msg,
        };
        let (file, label) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected filename<TAB>label".into()))?;
        let label: Label = label.trim().parse().map_err(bad)?;
        let fp = dir.join(file);
        let raw = fs::read(&fp).map_err(unreadable(&fp))?;
        if parse_raw_request(&raw).is_ok() {
            corpus.requests.push(LabeledRequest::new(raw, label, format!("atrdf:{file}")));
        } else {
            corpus.skipped += 1;
        }
    }
    Ok(corpus)
}

/// Length-prefixed records. Labels come from a sibling `<stem>.labels` file
/// with one label per record; without it every record is normal.
fn load_container(path: &Path) -> Result<Corpus, DatasetError> {
    let file = fs::File::open(path).map_err(unreadable(path))?;
    let records: Vec<Vec<u8>> = ContainerReader::new(std::io::BufReader::new(file))
        .collect::<Result<_, _>>()
        .map_err(unreadable(path))?;
    let sidecar = path.with_extension("labels");
    let labels: Vec<Label> = if sidecar.exists() {
        let text = fs::read_to_string(&sidecar).map_err(unreadable(&sidecar))?;
        let labels = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| {
                l.trim().parse().map_err(|msg| DatasetError::Manifest {
                    path: sidecar.clone(),
                    line: n + 1,
                    msg,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if labels.len() != records.len() {
            return Err(DatasetError::Manifest {
                path: sidecar,
                line: labels.len(),
                msg: format!("{} labels for {} records", labels.len(), records.len()),
            });
        }
        labels
    } else {
        vec![Label::Normal; records.len()]
    };
    let mut corpus = Corpus::default();
    for (raw, label) in records.into_iter().zip(labels) {
        if parse_raw_request(&raw).is_ok() {
            corpus.requests.push(LabeledRequest::new(raw, label, "container"));
        } else {
            corpus.skipped += 1;
        }
    }
    Ok(corpus)
}

/// Writes requests as a container plus label sidecar.
pub fn write_labeled_container(path: &Path, requests: &[LabeledRequest]) -> std::io::Result<()> {
    let mut buf = Vec::new();
    crate::canon::write_container(&mut buf, requests.iter().map(|r| r.raw.as_slice()))?;
    fs::write(path, buf)?;
    let labels: String = requests.iter().map(|r| format!("{}\n", r.label)).collect();
    fs::write(path.with_extension("labels"), labels)
}
