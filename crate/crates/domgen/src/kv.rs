//! Flat `key = value` text documents.
//!
//! One line per entry, `#` comments, blank lines ignored. Dotted keys act as
//! sections (`vrex.lambda_max = 100`). The same format serves config files,
//! run manifests, and checkpoints: it diffs cleanly and needs no external
//! parser. Floats are written with [`fmt_f64`] / [`fmt_f64_exact`], both of
//! which parse back to the identical bit pattern.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Parsed document: keys with their values and source line numbers.
#[derive(Debug, Clone)]
pub struct KvMap {
    label: String,
    entries: BTreeMap<String, (usize, String)>,
}

impl KvMap {
    /// Parse from text; `label` names the source in error messages
    /// (typically the file path).
    pub fn parse(label: &str, text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(label, line_no, "expected `key = value`"));
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(Error::parse(label, line_no, "empty key"));
            }
            if entries
                .insert(key.to_string(), (line_no, value.to_string()))
                .is_some()
            {
                return Err(Error::parse(label, line_no, format!("duplicate key `{key}`")));
            }
        }
        Ok(KvMap {
            label: label.to_string(),
            entries,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        KvMap::parse(&path.display().to_string(), &text)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Start typed extraction; the reader tracks which keys get consumed so
    /// [`KvReader::finish`] can reject unknown ones.
    pub fn reader(&self) -> KvReader<'_> {
        KvReader {
            map: self,
            used: BTreeSet::new(),
        }
    }
}

/// Typed view over a [`KvMap`] that remembers every key it has served.
pub struct KvReader<'a> {
    map: &'a KvMap,
    used: BTreeSet<String>,
}

impl<'a> KvReader<'a> {
    pub fn get_str(&mut self, key: &str) -> Option<&'a str> {
        self.used.insert(key.to_string());
        self.map.entries.get(key).map(|(_, v)| v.as_str())
    }

    fn parse_with<T>(&mut self, key: &str, kind: &str, f: impl Fn(&str) -> Option<T>) -> Result<Option<T>> {
        let Some((line, raw)) = self.map.entries.get(key) else {
            self.used.insert(key.to_string());
            return Ok(None);
        };
        self.used.insert(key.to_string());
        match f(raw) {
            Some(v) => Ok(Some(v)),
            None => Err(Error::parse(
                &self.map.label,
                *line,
                format!("key `{key}`: expected {kind}, got `{raw}`"),
            )),
        }
    }

    pub fn get_u64(&mut self, key: &str) -> Result<Option<u64>> {
        self.parse_with(key, "an unsigned integer", |s| s.parse().ok())
    }

    pub fn get_usize(&mut self, key: &str) -> Result<Option<usize>> {
        self.parse_with(key, "an unsigned integer", |s| s.parse().ok())
    }

    pub fn get_f64(&mut self, key: &str) -> Result<Option<f64>> {
        self.parse_with(key, "a number", |s| s.parse().ok())
    }

    pub fn get_bool(&mut self, key: &str) -> Result<Option<bool>> {
        self.parse_with(key, "true or false", |s| match s {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        })
    }

    /// Comma-separated floats; an empty value is an empty list.
    pub fn get_list_f64(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        self.parse_with(key, "comma-separated numbers", |s| {
            if s.is_empty() {
                return Some(vec![]);
            }
            s.split(',').map(|p| p.trim().parse().ok()).collect()
        })
    }

    /// Comma-separated unsigned integers; an empty value is an empty list.
    pub fn get_list_usize(&mut self, key: &str) -> Result<Option<Vec<usize>>> {
        self.parse_with(key, "comma-separated unsigned integers", |s| {
            if s.is_empty() {
                return Some(vec![]);
            }
            s.split(',').map(|p| p.trim().parse().ok()).collect()
        })
    }

    /// Error out if the document contains keys nothing asked for — catches
    /// config typos instead of silently ignoring them.
    pub fn finish(self) -> Result<()> {
        let unknown: Vec<&String> = self
            .map
            .entries
            .keys()
            .filter(|k| !self.used.contains(*k))
            .collect();
        if unknown.is_empty() {
            return Ok(());
        }
        let (line, _) = self.map.entries[unknown[0]];
        Err(Error::parse(
            &self.map.label,
            line,
            format!(
                "unknown key{} {}",
                if unknown.len() > 1 { "s" } else { "" },
                unknown
                    .iter()
                    .map(|k| format!("`{k}`"))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        ))
    }
}

/// Ordered builder for writing documents; keys render in insertion order.
#[derive(Debug, Default, Clone)]
pub struct KvWriter {
    lines: Vec<String>,
}

impl KvWriter {
    pub fn new() -> Self {
        KvWriter::default()
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.lines.push(format!("{key} = {value}"));
        self
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        self.lines.push(format!("# {text}"));
        self
    }

    pub fn blank(&mut self) -> &mut Self {
        self.lines.push(String::new());
        self
    }

    pub fn render(&self) -> String {
        let mut out = self.lines.join("\n");
        out.push('\n');
        out
    }
}

/// Shortest representation that round-trips the exact f64 — suitable for
/// config echoes and CSV cells.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// 17-significant-digit scientific form: also bit-exact on parse, and fixed
/// width, for checkpoint number arrays.
pub fn fmt_f64_exact(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_comments_blanks_and_dotted_keys() {
        let text = "# a config\n\nvrex.lambda_max = 100\nname = spurious v2\n";
        let map = KvMap::parse("test.cfg", text).unwrap();
        let mut r = map.reader();
        assert_eq!(r.get_f64("vrex.lambda_max").unwrap(), Some(100.0));
        assert_eq!(r.get_str("name"), Some("spurious v2"));
        r.finish().unwrap();
    }

    #[test]
    fn rejects_duplicates_and_junk_lines() {
        let dup = "a = 1\na = 2\n";
        let err = KvMap::parse("d.cfg", dup).unwrap_err();
        assert!(err.to_string().contains("d.cfg:2"), "{err}");

        let junk = "a = 1\nnot a pair\n";
        let err = KvMap::parse("j.cfg", junk).unwrap_err();
        assert!(err.to_string().contains("j.cfg:2"), "{err}");
    }

    #[test]
    fn typed_errors_cite_key_and_line() {
        let map = KvMap::parse("t.cfg", "epochs = soon\n").unwrap();
        let mut r = map.reader();
        let err = r.get_u64("epochs").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("t.cfg:1") && msg.contains("`epochs`"), "{msg}");
    }

    #[test]
    fn finish_rejects_unknown_keys() {
        let map = KvMap::parse("u.cfg", "known = 1\nmystery = 2\n").unwrap();
        let mut r = map.reader();
        let _ = r.get_u64("known").unwrap();
        let err = r.finish().unwrap_err();
        assert!(err.to_string().contains("`mystery`"), "{err}");
    }

    #[test]
    fn lists_parse_including_empty() {
        let map = KvMap::parse("l.cfg", "xs = 1,2, 3\nys =\n").unwrap();
        let mut r = map.reader();
        assert_eq!(r.get_list_usize("xs").unwrap(), Some(vec![1, 2, 3]));
        assert_eq!(r.get_list_f64("ys").unwrap(), Some(vec![]));
    }

    #[test]
    fn writer_round_trips() {
        let mut w = KvWriter::new();
        w.comment("header").set("a.b", 42).set("c", fmt_f64(0.1));
        let text = w.render();
        let map = KvMap::parse("w.cfg", &text).unwrap();
        let mut r = map.reader();
        assert_eq!(r.get_u64("a.b").unwrap(), Some(42));
        assert_eq!(r.get_f64("c").unwrap(), Some(0.1));
    }

    proptest! {
        #[test]
        fn float_formats_round_trip_exactly(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let short: f64 = fmt_f64(v).parse().unwrap();
            let exact: f64 = fmt_f64_exact(v).parse().unwrap();
            prop_assert_eq!(short.to_bits(), v.to_bits());
            prop_assert_eq!(exact.to_bits(), v.to_bits());
        }
    }
}
