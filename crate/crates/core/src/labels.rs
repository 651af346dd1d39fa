//! Ground-truth labels from volume file and directory names.
//!
//! BraTS files carry a standardized suffix and go through
//! [`parse_brats_label`]. Free-form series names (TCGA-GBM directories) go
//! through [`parse_label`], a token matcher driven by a [`RuleTable`].
//!
//! Names are split into *atoms*: maximal runs of letters or of digits, with
//! every other character acting as a delimiter. `"AX_T1-POST.GD"` becomes
//! `AX`, `T`, `1`, `POST`, `GD`. A rule token is split the same way and must
//! start on an atom boundary; all of its atoms but the last must match
//! exactly, and a trailing alphabetic atom may be a prefix of the name atom
//! (`PERF` matches `PERFUSION`, `GAD` matches `GADOLINIUM`). Digit atoms
//! always match exactly, so `T1` never fires inside `T10`, and `PD` never
//! fires inside `UPDATED` or `SPD`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five sequence classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SequenceType {
    Flair,
    T1,
    T1c,
    T2,
    Other,
}

impl SequenceType {
    /// Fixed class order used by every model head and confusion matrix.
    pub const ALL: [SequenceType; 5] =
        [SequenceType::Flair, SequenceType::T1, SequenceType::T1c, SequenceType::T2, SequenceType::Other];

    /// Class order for a `num_classes`-way head (4 drops OTHER).
    pub fn class_order(num_classes: usize) -> &'static [SequenceType] {
        &Self::ALL[..num_classes.min(5)]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SequenceType::Flair => "FLAIR",
            SequenceType::T1 => "T1",
            SequenceType::T1c => "T1C",
            SequenceType::T2 => "T2",
            SequenceType::Other => "OTHER",
        }
    }
}

impl fmt::Display for SequenceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SequenceType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FLAIR" => Ok(SequenceType::Flair),
            "T1" => Ok(SequenceType::T1),
            "T1C" | "T1CE" => Ok(SequenceType::T1c),
            "T2" => Ok(SequenceType::T2),
            "OTHER" => Ok(SequenceType::Other),
            _ => Err(Error::UnknownSequenceType(s.to_string())),
        }
    }
}

/// Outcome of a name parse. `label == None` is the UNKNOWN result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseResult {
    pub label: Option<SequenceType>,
    pub matched_tokens: Vec<String>,
    pub source_name: String,
    /// Tokens that contradicted the winning rule (e.g. `PRE` next to `GD`).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conflicting_tokens: Vec<String>,
}

impl ParseResult {
    fn unknown(source_name: &str) -> Self {
        ParseResult {
            label: None,
            matched_tokens: Vec::new(),
            source_name: source_name.to_string(),
            conflicting_tokens: Vec::new(),
        }
    }

    pub fn is_unknown(&self) -> bool {
        self.label.is_none()
    }
}

/// One labeling rule: fires when every `require` group has at least one
/// token present in the name. Lower `rank` wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRule {
    pub class: SequenceType,
    pub rank: u32,
    pub require: Vec<Vec<String>>,
    /// Tokens reported in `matched_tokens` when present, without being needed.
    #[serde(default)]
    pub optional: Vec<String>,
    /// Tokens whose presence alongside this rule is logged as a conflict.
    #[serde(default)]
    pub conflicts: Vec<String>,
}

/// Token → class table with precedence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleTable {
    pub rules: Vec<LabelRule>,
}

fn tokens(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for RuleTable {
    fn default() -> Self {
        RuleTable {
            rules: vec![
                LabelRule {
                    class: SequenceType::Other,
                    rank: 1,
                    require: vec![tokens(&["DIFF", "DWI", "DTI", "PERF", "PD"])],
                    optional: Vec::new(),
                    conflicts: Vec::new(),
                },
                LabelRule {
                    class: SequenceType::Flair,
                    rank: 2,
                    require: vec![tokens(&["FLAIR"])],
                    optional: Vec::new(),
                    conflicts: Vec::new(),
                },
                LabelRule {
                    class: SequenceType::T2,
                    rank: 3,
                    require: vec![tokens(&["T2"])],
                    optional: Vec::new(),
                    conflicts: Vec::new(),
                },
                LabelRule {
                    class: SequenceType::T1c,
                    rank: 4,
                    require: vec![tokens(&["T1"]), tokens(&["POST", "GD", "GAD"])],
                    optional: Vec::new(),
                    conflicts: tokens(&["PRE"]),
                },
                LabelRule {
                    class: SequenceType::T1,
                    rank: 5,
                    require: vec![tokens(&["T1"])],
                    optional: tokens(&["PRE"]),
                    conflicts: Vec::new(),
                },
            ],
        }
    }
}

impl RuleTable {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Applies the table to a name.
    pub fn parse(&self, name: &str) -> ParseResult {
        let atoms = atoms(name);
        let mut rules: Vec<&LabelRule> = self.rules.iter().collect();
        rules.sort_by_key(|r| r.rank);

        for rule in rules {
            let mut matched = Vec::new();
            let fires = rule.require.iter().all(|group| {
                let hits: Vec<&String> = group.iter().filter(|t| contains_token(&atoms, t)).collect();
                for hit in &hits {
                    push_unique(&mut matched, hit);
                }
                !hits.is_empty()
            });
            if !fires || rule.require.is_empty() {
                continue;
            }
            for token in rule.optional.iter().filter(|t| contains_token(&atoms, t)) {
                push_unique(&mut matched, token);
            }
            let conflicting: Vec<String> =
                rule.conflicts.iter().filter(|t| contains_token(&atoms, t)).map(|t| t.to_ascii_uppercase()).collect();
            if !conflicting.is_empty() {
                log::warn!(
                    "{name:?}: {} wins over conflicting token(s) {}",
                    rule.class,
                    conflicting.join(", ")
                );
            }
            return ParseResult {
                label: Some(rule.class),
                matched_tokens: matched,
                source_name: name.to_string(),
                conflicting_tokens: conflicting,
            };
        }
        ParseResult::unknown(name)
    }
}

fn push_unique(list: &mut Vec<String>, token: &str) {
    let token = token.to_ascii_uppercase();
    if !list.contains(&token) {
        list.push(token);
    }
}

/// Splits a name into uppercase letter runs and digit runs.
pub fn atoms(name: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut current_is_digit = false;
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            let is_digit = c.is_ascii_digit();
            if !current.is_empty() && is_digit != current_is_digit {
                out.push(std::mem::take(&mut current));
            }
            current_is_digit = is_digit;
            current.push(c.to_ascii_uppercase());
        } else if !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

fn contains_token(name_atoms: &[String], token: &str) -> bool {
    let token_atoms = atoms(token);
    if token_atoms.is_empty() || token_atoms.len() > name_atoms.len() {
        return false;
    }
    let last = token_atoms.len() - 1;
    name_atoms.windows(token_atoms.len()).any(|window| {
        window.iter().zip(&token_atoms).enumerate().all(|(j, (name_atom, tok))| {
            let alphabetic = tok.chars().all(|c| c.is_ascii_alphabetic());
            if j == last && alphabetic {
                name_atom.starts_with(tok.as_str())
            } else {
                name_atom == tok
            }
        })
    })
}

/// Labels a free-form name with the built-in rule table.
pub fn parse_label(name: &str) -> ParseResult {
    RuleTable::default().parse(name)
}

const VOLUME_EXTENSIONS: [&str; 5] = [".nii.gz", ".nii", ".mha", ".mhd", ".raw"];

/// Strips known volume extensions from a file name.
pub fn file_stem(name: &str) -> &str {
    let lower = name.to_ascii_lowercase();
    for ext in VOLUME_EXTENSIONS {
        if lower.ends_with(ext) {
            return &name[..name.len() - ext.len()];
        }
    }
    name
}

/// Labels a BraTS file from its standardized suffix token.
///
/// Handles both the 2019 NIfTI naming (`BraTS19_<case>_t1ce.nii.gz`) and the
/// 2015 MetaImage naming (`VSD.Brain.XX.O.MR_T1c.<id>.mha`). Segmentation
/// ground truth (`seg`, `OT`) is rejected.
pub fn parse_brats_label(filename: &str) -> Result<ParseResult> {
    let base = Path::new(filename).file_name().and_then(|s| s.to_str()).unwrap_or(filename);
    let stem = file_stem(base);
    let parts: Vec<String> = stem
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(|s| s.to_ascii_lowercase())
        .collect();
    let not_sequence = || Error::NotASequenceFile { name: filename.to_string() };
    if parts.iter().any(|p| p == "seg" || p == "ot") {
        return Err(not_sequence());
    }
    let (token, label) = parts
        .iter()
        .rev()
        .find_map(|p| {
            let label = match p.as_str() {
                "flair" => SequenceType::Flair,
                "t1" => SequenceType::T1,
                "t1ce" | "t1c" => SequenceType::T1c,
                "t2" => SequenceType::T2,
                _ => return None,
            };
            Some((p.to_ascii_uppercase(), label))
        })
        .ok_or_else(not_sequence)?;
    Ok(ParseResult {
        label: Some(label),
        matched_tokens: vec![token],
        source_name: filename.to_string(),
        conflicting_tokens: Vec::new(),
    })
}
