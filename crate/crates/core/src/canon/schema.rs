//! Token abstraction: maps symbols and character classes to reserved words.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

const DEFAULT_TABLE: &str = include_str!("../../data/schema-v1.tsv");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing schema-version header")]
    MissingVersion,
    #[error("missing class entry {0}")]
    MissingClass(&'static str),
}

/// Versioned symbol table plus class tokens.
///
/// Every reserved token is itself a plain word that abstracts to itself, so
/// applying the schema to its own output is a no-op.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractionSchema {
    pub version: u32,
    pub symbol_map: BTreeMap<char, String>,
    pub chr: String,
    pub num: String,
    pub hex: String,
}

impl Default for AbstractionSchema {
    fn default() -> Self {
        AbstractionSchema::parse(DEFAULT_TABLE).expect("bundled schema table is valid")
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

fn is_hex_blob(w: &str) -> bool {
    w.len() >= 8 && w.bytes().all(|b| b.is_ascii_hexdigit()) && w.bytes().any(|b| b.is_ascii_digit())
}

fn is_numeric(w: &str) -> bool {
    w.chars().all(|c| c.is_ascii_digit())
}

/// A reserved token must survive abstraction unchanged.
fn check_token(token: &str) -> Result<(), String> {
    if token.chars().count() < 2 {
        return Err(format!("token {token:?} is shorter than two characters"));
    }
    if !token.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit()) {
        return Err(format!("token {token:?} must be lowercase ascii alphanumeric"));
    }
    if is_numeric(token) || is_hex_blob(token) {
        return Err(format!("token {token:?} would itself be abstracted"));
    }
    Ok(())
}

impl AbstractionSchema {
    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        let mut lines = text.lines().enumerate();
        let version = loop {
            match lines.next() {
                None => return Err(SchemaError::MissingVersion),
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((i, l)) => {
                    let v = l
                        .strip_prefix("schema-version:")
                        .ok_or(SchemaError::MissingVersion)?;
                    break v.trim().parse::<u32>().map_err(|e| SchemaError::Parse {
                        line: i + 1,
                        msg: format!("bad version: {e}"),
                    })?;
                }
            }
        };

        let mut symbol_map = BTreeMap::new();
        let (mut chr, mut num, mut hex) = (None, None, None);
        for (i, line) in lines {
            let err = |msg: String| SchemaError::Parse { line: i + 1, msg };
            if line.trim().is_empty() || (line.starts_with('#') && !line.starts_with("#\t")) {
                continue;
            }
            let (input, token) = line
                .split_once('\t')
                .ok_or_else(|| err("expected input<TAB>token".into()))?;
            let token = token.trim_end_matches('\r');
            check_token(token).map_err(err)?;
            let slot = match input {
                "<chr>" => &mut chr,
                "<num>" => &mut num,
                "<hex>" => &mut hex,
                _ => {
                    let mut it = input.chars();
                    let (Some(c), None) = (it.next(), it.next()) else {
                        return Err(err(format!("input {input:?} is not a single character")));
                    };
                    if is_word_char(c) || c.is_whitespace() {
                        return Err(err(format!("input {c:?} is not a symbol")));
                    }
                    if symbol_map.insert(c, token.to_string()).is_some() {
                        return Err(err(format!("duplicate mapping for {c:?}")));
                    }
                    continue;
                }
            };
            *slot = Some(token.to_string());
        }
        Ok(AbstractionSchema {
            version,
            symbol_map,
            chr: chr.ok_or(SchemaError::MissingClass("<chr>"))?,
            num: num.ok_or(SchemaError::MissingClass("<num>"))?,
            hex: hex.ok_or(SchemaError::MissingClass("<hex>"))?,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("schema-version: {}\n", self.version);
        let _ = writeln!(out, "<chr>\t{}", self.chr);
        let _ = writeln!(out, "<num>\t{}", self.num);
        let _ = writeln!(out, "<hex>\t{}", self.hex);
        for (c, t) in &self.symbol_map {
            let _ = writeln!(out, "{c}\t{t}");
        }
        out
    }

    fn word_token(&self, word: &str) -> String {
        if is_numeric(word) {
            self.num.clone()
        } else if word.chars().count() == 1 {
            self.chr.clone()
        } else if is_hex_blob(word) {
            self.hex.clone()
        } else {
            word.to_string()
        }
    }

    fn symbol_token(&self, c: char) -> String {
        self.symbol_map
            .get(&c)
            .cloned()
            .unwrap_or_else(|| self.chr.clone())
    }
}

/// Splits on whitespace and symbol boundaries and applies the schema.
///
/// Expects text that is already decoded and lowercased.
pub fn abstract_text(text: &str, schema: &AbstractionSchema) -> Vec<String> {
    let mut out = Vec::new();
    abstract_into(text, schema, &mut out);
    out
}

pub(crate) fn abstract_into(text: &str, schema: &AbstractionSchema, out: &mut Vec<String>) {
    let mut word_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if is_word_char(c) {
            word_start.get_or_insert(i);
            continue;
        }
        if let Some(s) = word_start.take() {
            out.push(schema.word_token(&text[s..i]));
        }
        if !c.is_whitespace() {
            out.push(schema.symbol_token(c));
        }
    }
    if let Some(s) = word_start {
        out.push(schema.word_token(&text[s..]));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s() -> AbstractionSchema {
        AbstractionSchema::default()
    }

    #[test]
    fn documented_examples() {
        assert_eq!(abstract_text("a", &s()), vec!["chr"]);
        assert_eq!(abstract_text(":", &s()), vec!["colon"]);
        assert_eq!(abstract_text("id=12", &s()), vec!["id", "equals", "num"]);
    }

    #[test]
    fn classes() {
        assert_eq!(
            abstract_text("jsessionid=933185092e0b668b90676e0a2b0767af", &s()),
            vec!["jsessionid", "equals", "hex"]
        );
        assert_eq!(abstract_text("deadbeef", &s()), vec!["deadbeef"]);
        assert_eq!(abstract_text("x € y", &s()), vec!["chr", "chr", "chr"]);
        assert_eq!(
            abstract_text("' or 1=1--", &s()),
            vec!["quote", "or", "num", "equals", "num", "dash", "dash"]
        );
        assert!(abstract_text(" \t\n", &s()).is_empty());
    }

    #[test]
    fn bundled_table_covers_ascii_punctuation() {
        let schema = s();
        assert_eq!(schema.version, 1);
        for b in 0x21u8..0x7f {
            let c = b as char;
            if c.is_ascii_punctuation() {
                assert!(schema.symbol_map.contains_key(&c), "{c:?}");
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let schema = s();
        assert_eq!(AbstractionSchema::parse(&schema.to_text()).unwrap(), schema);
    }

    #[test]
    fn rejects_bad_tables() {
        assert_eq!(
            AbstractionSchema::parse("# nothing\n"),
            Err(SchemaError::MissingVersion)
        );
        let colliding = "schema-version: 1\n<chr>\tchr\n<num>\tnum\n<hex>\thex\n:\t12\n";
        assert!(matches!(
            AbstractionSchema::parse(colliding),
            Err(SchemaError::Parse { line: 5, .. })
        ));
        let wordy = "schema-version: 1\n<chr>\tchr\n<num>\tnum\n<hex>\thex\nab\tab\n";
        assert!(AbstractionSchema::parse(wordy).is_err());
        assert_eq!(
            AbstractionSchema::parse("schema-version: 2\n<chr>\tchr\n<num>\tnum\n"),
            Err(SchemaError::MissingClass("<hex>"))
        );
    }

    proptest! {
        #[test]
        fn idempotent(t in "\\PC{0,60}") {
            let t = t.to_lowercase();
            let once = abstract_text(&t, &s());
            let twice = abstract_text(&once.join(" "), &s());
            prop_assert_eq!(&twice, &once);
            for tok in &once {
                prop_assert!(tok.chars().all(|c| c.is_alphanumeric()));
            }
        }
    }
}
