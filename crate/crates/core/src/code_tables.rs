//! Diagnosis and procedure code sets.
//!
//! Codes are matched exactly after normalization (uppercase, trimmed, dots
//! removed). There is no prefix or hierarchy matching: a table lists every
//! code it wants to match. A code listed in several tables classifies to the
//! union of their categories.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Shipped default code sets (ESKD, CKD, transplant, AKI history, RRT).
pub const DEFAULT_TABLE_CSV: &str = include_str!("../data/code_tables.csv");

#[derive(Debug, Error, PartialEq)]
pub enum CodeTableError {
    #[error("empty code")]
    EmptyCode,
    #[error("code {0:?} contains internal whitespace")]
    InvalidCode(String),
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("row {row}: duplicate entry {code} / {system} / {category}")]
    DuplicateEntry {
        row: usize,
        code: String,
        system: CodeSystem,
        category: Category,
    },
    #[error("reading code table: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CodeSystem {
    #[serde(rename = "ICD9_DIAG")]
    Icd9Diag,
    #[serde(rename = "ICD9_PROC")]
    Icd9Proc,
    #[serde(rename = "ICD10_DIAG")]
    Icd10Diag,
    #[serde(rename = "ICD10_PCS")]
    Icd10Pcs,
    #[serde(rename = "CPT")]
    Cpt,
}

impl CodeSystem {
    pub const ALL: [CodeSystem; 5] = [
        CodeSystem::Icd9Diag,
        CodeSystem::Icd9Proc,
        CodeSystem::Icd10Diag,
        CodeSystem::Icd10Pcs,
        CodeSystem::Cpt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CodeSystem::Icd9Diag => "ICD9_DIAG",
            CodeSystem::Icd9Proc => "ICD9_PROC",
            CodeSystem::Icd10Diag => "ICD10_DIAG",
            CodeSystem::Icd10Pcs => "ICD10_PCS",
            CodeSystem::Cpt => "CPT",
        }
    }
}

impl fmt::Display for CodeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CodeSystem {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CodeSystem::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown code system {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    Eskd,
    Ckd,
    KidneyTransplant,
    AkiHistory,
    Rrt,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Eskd,
        Category::Ckd,
        Category::KidneyTransplant,
        Category::AkiHistory,
        Category::Rrt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Eskd => "ESKD",
            Category::Ckd => "CKD",
            Category::KidneyTransplant => "KIDNEY_TRANSPLANT",
            Category::AkiHistory => "AKI_HISTORY",
            Category::Rrt => "RRT",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

/// Small set of categories, stored as a bitmask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct CategorySet(u8);

impl CategorySet {
    pub fn empty() -> Self {
        CategorySet(0)
    }

    pub fn insert(&mut self, category: Category) {
        self.0 |= category.bit();
    }

    pub fn contains(self, category: Category) -> bool {
        self.0 & category.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn union(self, other: CategorySet) -> CategorySet {
        CategorySet(self.0 | other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = Category> {
        Category::ALL.into_iter().filter(move |c| self.contains(*c))
    }
}

impl FromIterator<Category> for CategorySet {
    fn from_iter<I: IntoIterator<Item = Category>>(iter: I) -> Self {
        let mut set = CategorySet::empty();
        for c in iter {
            set.insert(c);
        }
        set
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeEntry {
    pub code: String,
    pub code_system: CodeSystem,
    pub category: Category,
    pub description: String,
    #[serde(default)]
    pub nonspecific: bool,
}

/// Canonical form of a code string: trimmed, uppercase, no dots.
///
/// The code system is accepted for symmetry with lookups; every system
/// currently normalizes the same way.
pub fn normalize_code(raw: &str, _system: CodeSystem) -> Result<String, CodeTableError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(CodeTableError::EmptyCode);
    }
    if trimmed.chars().any(char::is_whitespace) {
        return Err(CodeTableError::InvalidCode(raw.to_string()));
    }
    let canonical: String = trimmed
        .chars()
        .filter(|c| *c != '.')
        .map(|c| c.to_ascii_uppercase())
        .collect();
    if canonical.is_empty() {
        return Err(CodeTableError::EmptyCode);
    }
    Ok(canonical)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Slot {
    categories: CategorySet,
    nonspecific: CategorySet,
}

/// Immutable lookup table keyed by (canonical code, code system).
#[derive(Debug, Clone, Default)]
pub struct CodeTable {
    entries: Vec<CodeEntry>,
    index: HashMap<(String, CodeSystem), Slot>,
}

impl CodeTable {
    /// The code sets shipped with the crate.
    pub fn builtin() -> CodeTable {
        CodeTable::from_reader(DEFAULT_TABLE_CSV.as_bytes())
            .expect("shipped code table is well-formed")
    }

    pub fn from_entries(entries: Vec<CodeEntry>) -> Result<CodeTable, CodeTableError> {
        let mut table = CodeTable::default();
        for (i, entry) in entries.into_iter().enumerate() {
            table.push(entry, i + 1)?;
        }
        Ok(table)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<CodeTable, CodeTableError> {
        let file = std::fs::File::open(path.as_ref())
            .map_err(|e| CodeTableError::Io(format!("{}: {e}", path.as_ref().display())))?;
        CodeTable::from_reader(file)
    }

    /// Parse a delimited code-table file. Row numbers in errors count the
    /// header as row 1.
    pub fn from_reader<R: Read>(reader: R) -> Result<CodeTable, CodeTableError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(false)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| CodeTableError::Parse {
                row: 1,
                message: e.to_string(),
            })?
            .clone();
        let mut table = CodeTable::default();
        if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
            return Ok(table);
        }
        let expected = ["code", "code_system", "category", "description"];
        let names: Vec<&str> = headers.iter().collect();
        let has_flag = names.len() == 5 && names[4] == "nonspecific";
        if names.len() < 4 || names[..4] != expected || (names.len() > 4 && !has_flag) {
            return Err(CodeTableError::Parse {
                row: 1,
                message: format!("unexpected header {names:?}"),
            });
        }
        for (i, record) in rdr.records().enumerate() {
            let row = i + 2;
            let record = record.map_err(|e| CodeTableError::Parse {
                row,
                message: e.to_string(),
            })?;
            let bad = |message: String| CodeTableError::Parse { row, message };
            let code_system: CodeSystem = record[1].parse().map_err(bad)?;
            let category: Category = record[2].parse().map_err(bad)?;
            let nonspecific = if has_flag {
                match record[4].to_ascii_lowercase().as_str() {
                    "" | "false" | "0" => false,
                    "true" | "1" => true,
                    other => return Err(bad(format!("bad nonspecific flag {other:?}"))),
                }
            } else {
                false
            };
            let code = normalize_code(&record[0], code_system).map_err(|e| bad(e.to_string()))?;
            table.push(
                CodeEntry {
                    code,
                    code_system,
                    category,
                    description: record[3].to_string(),
                    nonspecific,
                },
                row,
            )?;
        }
        Ok(table)
    }

    fn push(&mut self, mut entry: CodeEntry, row: usize) -> Result<(), CodeTableError> {
        entry.code = normalize_code(&entry.code, entry.code_system)?;
        let slot = self
            .index
            .entry((entry.code.clone(), entry.code_system))
            .or_default();
        if slot.categories.contains(entry.category) {
            return Err(CodeTableError::DuplicateEntry {
                row,
                code: entry.code,
                system: entry.code_system,
                category: entry.category,
            });
        }
        slot.categories.insert(entry.category);
        if entry.nonspecific {
            slot.nonspecific.insert(entry.category);
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[CodeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All categories whose table lists this code under this system.
    /// Unknown or unparseable codes give the empty set.
    pub fn classify(&self, raw: &str, system: CodeSystem) -> CategorySet {
        self.lookup(raw, system).categories
    }

    /// Like [`CodeTable::classify`], leaving out categories for which the
    /// entry is flagged nonspecific.
    pub fn classify_specific(&self, raw: &str, system: CodeSystem) -> CategorySet {
        let slot = self.lookup(raw, system);
        CategorySet(slot.categories.0 & !slot.nonspecific.0)
    }

    fn lookup(&self, raw: &str, system: CodeSystem) -> Slot {
        match normalize_code(raw, system) {
            Ok(code) => self.index.get(&(code, system)).copied().unwrap_or_default(),
            Err(_) => Slot::default(),
        }
    }
}

/// Free-function form of [`CodeTable::from_path`].
pub fn load_code_tables(path: impl AsRef<Path>) -> Result<CodeTable, CodeTableError> {
    CodeTable::from_path(path)
}
