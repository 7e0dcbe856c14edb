use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Reversal phrases and replacement person names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    /// `key -> value`, in declaration order.
    pub reversal_pairs: Vec<(String, String)>,
    pub entity_names: Vec<String>,
}

const PAIRS: &[(&str, &str)] = &[
    ("heated extolling", "harsh questioning"),
    ("warm applause", "loud booing"),
    ("strong support", "fierce opposition"),
    ("high praise", "sharp criticism"),
    ("public admiration", "public contempt"),
    ("enthusiastic cheers", "angry protests"),
];

const NAMES: &[&str] = &[
    "Liu Xiang",
    "Maria Lopez",
    "John Carter",
    "Anna Schmidt",
    "Kenji Sato",
    "Fatima Khan",
    "Lucas Silva",
    "Olivia Brown",
];

impl Default for Lexicon {
    fn default() -> Self {
        Self {
            reversal_pairs: PAIRS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            entity_names: NAMES.iter().map(|n| n.to_string()).collect(),
        }
    }
}

impl Lexicon {
    pub fn validate(&self) -> Result<()> {
        let keys: BTreeSet<&str> = self.reversal_pairs.iter().map(|(k, _)| k.as_str()).collect();
        if keys.len() != self.reversal_pairs.len() {
            return Err(Error::Config("duplicate reversal key".into()));
        }
        if let Some((_, v)) = self.reversal_pairs.iter().find(|(_, v)| keys.contains(v.as_str())) {
            return Err(Error::Config(format!("reversal value `{v}` is also a key")));
        }
        if self
            .reversal_pairs
            .iter()
            .any(|(k, v)| k.trim().is_empty() || v.trim().is_empty())
        {
            return Err(Error::Config("empty reversal phrase".into()));
        }
        if self.entity_names.is_empty() {
            return Err(Error::Config("entity name list is empty".into()));
        }
        let names: BTreeSet<&str> = self.entity_names.iter().map(String::as_str).collect();
        if names.len() != self.entity_names.len() {
            return Err(Error::Config("entity names must be distinct".into()));
        }
        for n in &self.entity_names {
            if n.split_whitespace()
                .any(|t| !t.chars().next().is_some_and(char::is_uppercase))
            {
                return Err(Error::Config(format!("entity name `{n}` is not capitalized")));
            }
        }
        Ok(())
    }

    /// Parse `key<TAB>value` lines followed by a `[NAMES]` section with one
    /// name per line. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = Lexicon {
            reversal_pairs: Vec::new(),
            entity_names: Vec::new(),
        };
        let mut in_names = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            if line.trim() == "[NAMES]" {
                in_names = true;
                continue;
            }
            if in_names {
                lex.entity_names.push(line.trim().to_string());
            } else {
                let (k, v) = line
                    .split_once('\t')
                    .ok_or_else(|| Error::Config(format!("lexicon line {}: expected key<TAB>value", i + 1)))?;
                lex.reversal_pairs.push((k.trim().to_string(), v.trim().to_string()));
            }
        }
        lex.validate()?;
        Ok(lex)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.reversal_pairs {
            out.push_str(&format!("{k}\t{v}\n"));
        }
        out.push_str("[NAMES]\n");
        for n in &self.entity_names {
            out.push_str(n);
            out.push('\n');
        }
        out
    }
}
