//! Parsed corpus, knowledge-base tables and weak entity linking.
//!
//! The corpus is read from a CoNLL-U-style file with seven tab-separated
//! columns (`INDEX SURFACE LEMMA POS NER HEAD DEPREL`). Facts, aliases and
//! the relation schema are plain TSV files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("structural error in sentence ending at line {line}: {message}")]
    Structure { line: usize, message: String },
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Named-entity tag carried by every token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityTag {
    #[serde(rename = "PERSON")]
    Person,
    #[serde(rename = "ORGANIZATION")]
    Organization,
    #[serde(rename = "LOCATION-CITY")]
    LocationCity,
    #[serde(rename = "LOCATION-STATE")]
    LocationState,
    #[serde(rename = "LOCATION-COUNTRY")]
    LocationCountry,
    #[serde(rename = "TITLE")]
    Title,
    #[serde(rename = "CRIMINAL-CHARGE")]
    CriminalCharge,
    #[serde(rename = "DATE")]
    Date,
    #[serde(rename = "NUMBER")]
    Number,
    #[serde(rename = "NONE")]
    None,
}

impl EntityTag {
    pub const ALL: [EntityTag; 10] = [
        EntityTag::Person,
        EntityTag::Organization,
        EntityTag::LocationCity,
        EntityTag::LocationState,
        EntityTag::LocationCountry,
        EntityTag::Title,
        EntityTag::CriminalCharge,
        EntityTag::Date,
        EntityTag::Number,
        EntityTag::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityTag::Person => "PERSON",
            EntityTag::Organization => "ORGANIZATION",
            EntityTag::LocationCity => "LOCATION-CITY",
            EntityTag::LocationState => "LOCATION-STATE",
            EntityTag::LocationCountry => "LOCATION-COUNTRY",
            EntityTag::Title => "TITLE",
            EntityTag::CriminalCharge => "CRIMINAL-CHARGE",
            EntityTag::Date => "DATE",
            EntityTag::Number => "NUMBER",
            EntityTag::None => "NONE",
        }
    }

    /// Coarse type used for SDP endpoint placeholders: the three location
    /// granularities collapse to `LOCATION`.
    pub fn coarse(self) -> &'static str {
        match self {
            EntityTag::LocationCity | EntityTag::LocationState | EntityTag::LocationCountry => {
                "LOCATION"
            }
            other => other.as_str(),
        }
    }

    pub fn is_entity(self) -> bool {
        self != EntityTag::None
    }
}

impl fmt::Display for EntityTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let tag = match s {
            "O" | "_" => EntityTag::None,
            other => *EntityTag::ALL
                .iter()
                .find(|t| t.as_str() == other)
                .ok_or_else(|| format!("unknown entity tag `{other}`"))?,
        };
        Ok(tag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub index: usize,
    pub surface: String,
    pub lemma: String,
    pub pos: String,
    pub entity: EntityTag,
    pub head: usize,
    pub deprel: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedSentence {
    pub doc_id: String,
    pub sentence_id: u64,
    pub tokens: Vec<Token>,
}

impl ParsedSentence {
    /// Token by 1-based index.
    pub fn token(&self, index: usize) -> Option<&Token> {
        index.checked_sub(1).and_then(|i| self.tokens.get(i))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn key(&self) -> SentenceKey {
        SentenceKey {
            doc_id: self.doc_id.clone(),
            sentence_id: self.sentence_id,
        }
    }

    pub fn text(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Checks the structural invariants. `line` locates the error report.
    pub fn validate(&self, line: usize) -> Result<(), CorpusError> {
        let structure = |message: String| CorpusError::Structure { line, message };
        if self.tokens.is_empty() {
            return Err(structure("sentence has no tokens".into()));
        }
        let n = self.tokens.len();
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.index != i + 1 {
                return Err(structure(format!(
                    "token index {} out of sequence (expected {})",
                    tok.index,
                    i + 1
                )));
            }
            if tok.head > n {
                return Err(structure(format!(
                    "token {} has dangling head {} (sentence has {n} tokens)",
                    tok.index, tok.head
                )));
            }
            if tok.head == tok.index {
                return Err(structure(format!("token {} is its own head", tok.index)));
            }
            if tok.head != 0 && tok.deprel.is_empty() {
                return Err(structure(format!(
                    "token {} has a head but no dependency label",
                    tok.index
                )));
            }
        }
        if !self.tokens.iter().any(|t| t.head == 0) {
            return Err(structure("sentence has no root token".into()));
        }
        Ok(())
    }
}

/// Identifies a sentence across the corpus; orders canonically by
/// `(doc_id, sentence_id)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SentenceKey {
    pub doc_id: String,
    pub sentence_id: u64,
}

impl fmt::Display for SentenceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.doc_id, self.sentence_id)
    }
}

fn field_or_empty(s: &str) -> String {
    if s == "_" {
        String::new()
    } else {
        s.to_string()
    }
}

/// Parses corpus text. Sentences keep their file order.
pub fn parse_corpus(text: &str) -> Result<Vec<ParsedSentence>, CorpusError> {
    let mut sentences = Vec::new();
    let mut doc_id: Option<String> = None;
    let mut sent_id: Option<u64> = None;
    let mut tokens: Vec<Token> = Vec::new();
    let mut auto_id = 0u64;

    let mut flush = |tokens: &mut Vec<Token>,
                     doc_id: &mut Option<String>,
                     sent_id: &mut Option<u64>,
                     line: usize|
     -> Result<(), CorpusError> {
        if tokens.is_empty() {
            return Ok(());
        }
        let sentence = ParsedSentence {
            doc_id: doc_id.clone().unwrap_or_default(),
            sentence_id: sent_id.take().unwrap_or(auto_id),
            tokens: std::mem::take(tokens),
        };
        auto_id = sentence.sentence_id + 1;
        sentence.validate(line)?;
        sentences.push(sentence);
        Ok(())
    };

    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut tokens, &mut doc_id, &mut sent_id, line_no)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                let value = value.trim();
                match key.trim() {
                    "doc_id" => doc_id = Some(value.to_string()),
                    "sent_id" => {
                        let id = value.parse::<u64>().map_err(|_| CorpusError::Parse {
                            line: line_no,
                            column: 1,
                            message: format!("sent_id `{value}` is not an integer"),
                        })?;
                        sent_id = Some(id);
                    }
                    _ => {}
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 7 {
            return Err(CorpusError::Parse {
                line: line_no,
                column: cols.len().min(7) + 1,
                message: format!("expected 7 tab-separated columns, found {}", cols.len()),
            });
        }
        let parse_usize = |col: usize, what: &str| -> Result<usize, CorpusError> {
            cols[col].parse::<usize>().map_err(|_| CorpusError::Parse {
                line: line_no,
                column: col + 1,
                message: format!("{what} `{}` is not a non-negative integer", cols[col]),
            })
        };
        let index = parse_usize(0, "index")?;
        if index == 0 {
            return Err(CorpusError::Parse {
                line: line_no,
                column: 1,
                message: "token index must be >= 1".into(),
            });
        }
        let head = parse_usize(5, "head")?;
        let entity = cols[4].parse::<EntityTag>().map_err(|message| CorpusError::Parse {
            line: line_no,
            column: 5,
            message,
        })?;
        if cols[1].is_empty() {
            return Err(CorpusError::Parse {
                line: line_no,
                column: 2,
                message: "empty surface form".into(),
            });
        }
        let surface = cols[1].to_string();
        let lemma = match cols[2] {
            "" | "_" => surface.clone(),
            l => l.to_string(),
        };
        tokens.push(Token {
            index,
            surface,
            lemma,
            pos: field_or_empty(cols[3]),
            entity,
            head,
            deprel: field_or_empty(cols[6]),
        });
    }
    flush(&mut tokens, &mut doc_id, &mut sent_id, last_line + 1)?;
    Ok(sentences)
}

pub fn load_corpus(path: &Path) -> Result<Vec<ParsedSentence>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    parse_corpus(&text)
}

/// Serializes sentences in the same format `parse_corpus` reads.
pub fn write_corpus<W: Write>(out: &mut W, sentences: &[ParsedSentence]) -> std::io::Result<()> {
    for s in sentences {
        writeln!(out, "# doc_id = {}", s.doc_id)?;
        writeln!(out, "# sent_id = {}", s.sentence_id)?;
        for t in &s.tokens {
            let or_dash = |v: &str| if v.is_empty() { "_".to_string() } else { v.to_string() };
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                t.index,
                t.surface,
                or_dash(&t.lemma),
                or_dash(&t.pos),
                t.entity,
                t.head,
                or_dash(&t.deprel)
            )?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KbFact {
    pub relation: String,
    pub subject_id: String,
    pub object_id: String,
}

/// One schema row: a relation with the entity types its arguments require.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub name: String,
    pub subject_type: String,
    pub object_type: String,
}

impl RelationSpec {
    pub fn accepts(&self, subject: EntityTag, object: EntityTag) -> bool {
        type_matches(&self.subject_type, subject) && type_matches(&self.object_type, object)
    }
}

/// A schema type matches a tag exactly, or as a coarse group (`LOCATION`
/// matches every `LOCATION-*` tag).
pub fn type_matches(schema_type: &str, tag: EntityTag) -> bool {
    tag.is_entity() && (schema_type == tag.as_str() || schema_type == tag.coarse())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSchema {
    relations: BTreeMap<String, RelationSpec>,
}

impl RelationSchema {
    pub fn new(specs: impl IntoIterator<Item = RelationSpec>) -> Self {
        RelationSchema {
            relations: specs.into_iter().map(|s| (s.name.clone(), s)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&RelationSpec> {
        self.relations.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.relations.contains_key(name)
    }

    /// Relations in name order.
    pub fn relations(&self) -> impl Iterator<Item = &RelationSpec> {
        self.relations.values()
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }
}

/// kb_id -> surface aliases, plus a lowercase reverse index for matching.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasTable {
    aliases: BTreeMap<String, BTreeSet<String>>,
    by_alias: BTreeMap<String, BTreeSet<String>>,
    max_tokens: usize,
}

impl AliasTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, kb_id: &str, alias: &str) {
        let alias = alias.split_whitespace().collect::<Vec<_>>().join(" ");
        if alias.is_empty() {
            return;
        }
        self.max_tokens = self.max_tokens.max(alias.split(' ').count());
        self.by_alias
            .entry(alias.to_lowercase())
            .or_default()
            .insert(kb_id.to_string());
        self.aliases
            .entry(kb_id.to_string())
            .or_default()
            .insert(alias);
    }

    pub fn aliases_of(&self, kb_id: &str) -> Option<&BTreeSet<String>> {
        self.aliases.get(kb_id)
    }

    /// Entities whose alias equals `text`, compared case-insensitively.
    pub fn lookup(&self, text: &str) -> Option<&BTreeSet<String>> {
        self.by_alias.get(&text.to_lowercase())
    }

    pub fn max_alias_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn len(&self) -> usize {
        self.aliases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aliases.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    pub facts: Vec<KbFact>,
    pub aliases: AliasTable,
    pub schema: RelationSchema,
}

impl KnowledgeBase {
    pub fn fact_set(&self) -> BTreeSet<(&str, &str, &str)> {
        self.facts
            .iter()
            .map(|f| {
                (
                    f.relation.as_str(),
                    f.subject_id.as_str(),
                    f.object_id.as_str(),
                )
            })
            .collect()
    }
}

fn tsv_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim_end_matches('\r');
        if l.trim().is_empty() || l.starts_with('#') {
            None
        } else {
            Some((i + 1, l.split('\t').collect()))
        }
    })
}

pub fn parse_schema(text: &str) -> Result<RelationSchema, CorpusError> {
    let mut specs = Vec::new();
    for (line, cols) in tsv_rows(text) {
        if cols.len() != 3 || cols.iter().any(|c| c.trim().is_empty()) {
            return Err(CorpusError::Schema {
                line,
                message: "expected `relation<TAB>subject_type<TAB>object_type`".into(),
            });
        }
        for (col, ty) in cols[1..].iter().enumerate() {
            let known = ty.trim() == "LOCATION"
                || ty
                    .trim()
                    .parse::<EntityTag>()
                    .map(|t| t.is_entity())
                    .unwrap_or(false);
            if !known {
                return Err(CorpusError::Schema {
                    line,
                    message: format!("column {}: unknown entity type `{ty}`", col + 2),
                });
            }
        }
        specs.push(RelationSpec {
            name: cols[0].trim().to_string(),
            subject_type: cols[1].trim().to_string(),
            object_type: cols[2].trim().to_string(),
        });
    }
    Ok(RelationSchema::new(specs))
}

pub fn parse_aliases(text: &str) -> Result<AliasTable, CorpusError> {
    let mut table = AliasTable::new();
    for (line, cols) in tsv_rows(text) {
        if cols.len() != 2 || cols[0].is_empty() || cols[1].trim().is_empty() {
            return Err(CorpusError::Parse {
                line,
                column: cols.len().min(2) + 1,
                message: "expected `kb_id<TAB>alias`".into(),
            });
        }
        table.insert(cols[0], cols[1]);
    }
    Ok(table)
}

/// Parses fact lines, validating relations against `schema` and dropping
/// duplicates. Facts come back sorted.
pub fn parse_facts(text: &str, schema: &RelationSchema) -> Result<Vec<KbFact>, CorpusError> {
    let mut facts = BTreeSet::new();
    for (line, cols) in tsv_rows(text) {
        if cols.len() != 3 {
            return Err(CorpusError::Parse {
                line,
                column: cols.len().min(3) + 1,
                message: "expected `relation<TAB>subject_id<TAB>object_id`".into(),
            });
        }
        if !schema.contains(cols[0]) {
            return Err(CorpusError::Schema {
                line,
                message: format!("relation `{}` is not in the schema", cols[0]),
            });
        }
        if cols[1].is_empty() || cols[2].is_empty() {
            return Err(CorpusError::Parse {
                line,
                column: if cols[1].is_empty() { 2 } else { 3 },
                message: "empty entity id".into(),
            });
        }
        facts.insert(KbFact {
            relation: cols[0].to_string(),
            subject_id: cols[1].to_string(),
            object_id: cols[2].to_string(),
        });
    }
    Ok(facts.into_iter().collect())
}

pub fn load_kb(
    facts_path: &Path,
    aliases_path: &Path,
    schema_path: &Path,
) -> Result<KnowledgeBase, CorpusError> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| CorpusError::io(p, e));
    let schema = parse_schema(&read(schema_path)?)?;
    let facts = parse_facts(&read(facts_path)?, &schema)?;
    let aliases = parse_aliases(&read(aliases_path)?)?;
    for f in &facts {
        for id in [&f.subject_id, &f.object_id] {
            if aliases.aliases_of(id).is_none() {
                log::warn!("entity `{id}` in a `{}` fact has no alias", f.relation);
            }
        }
    }
    Ok(KnowledgeBase {
        facts,
        aliases,
        schema,
    })
}

/// A linked entity mention; `first`, `last` and `head` are 1-based token
/// indices, the span is inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityMention {
    pub doc_id: String,
    pub sentence_id: u64,
    pub first: usize,
    pub last: usize,
    pub head: usize,
    pub entity_type: EntityTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kb_id: Option<String>,
}

impl EntityMention {
    pub fn overlaps(&self, other: &EntityMention) -> bool {
        self.first <= other.last && other.first <= self.last
    }

    pub fn span(&self) -> (usize, usize) {
        (self.first, self.last)
    }

    pub fn surface(&self, sentence: &ParsedSentence) -> Vec<String> {
        (self.first..=self.last)
            .filter_map(|i| sentence.token(i).map(|t| t.surface.clone()))
            .collect()
    }
}

/// The token of `[first, last]` whose head lies outside the span; the last
/// token when none or several do.
pub fn span_head(sentence: &ParsedSentence, first: usize, last: usize) -> usize {
    let exits: Vec<usize> = (first..=last)
        .filter(|&i| {
            sentence
                .token(i)
                .map(|t| t.head < first || t.head > last)
                .unwrap_or(false)
        })
        .collect();
    match exits.as_slice() {
        [only] => *only,
        _ => last,
    }
}

/// All spans of entity-tagged tokens whose joined surface equals an alias.
fn alias_matches(sentence: &ParsedSentence, aliases: &AliasTable) -> Vec<(usize, usize)> {
    let n = sentence.len();
    let max_len = aliases.max_alias_tokens();
    let mut out = Vec::new();
    for first in 1..=n {
        let mut text = String::new();
        for last in first..=(first + max_len).saturating_sub(1).min(n) {
            let tok = sentence.token(last).expect("index in range");
            if !tok.entity.is_entity() {
                break;
            }
            if last > first {
                text.push(' ');
            }
            text.push_str(&tok.surface);
            if aliases.lookup(&text).is_some() {
                out.push((first, last));
            }
        }
    }
    out
}

/// String-matches aliases against a sentence. Matches contained in a longer
/// match are dropped; remaining overlaps resolve left to right, longest
/// first. An alias shared by several entities yields one mention per entity.
pub fn detect_mentions(sentence: &ParsedSentence, aliases: &AliasTable) -> Vec<EntityMention> {
    let matches = alias_matches(sentence, aliases);
    let maximal: Vec<(usize, usize)> = matches
        .iter()
        .copied()
        .filter(|&(f, l)| {
            !matches
                .iter()
                .any(|&(f2, l2)| (f2, l2) != (f, l) && f2 <= f && l <= l2)
        })
        .collect();

    let mut chosen: Vec<(usize, usize)> = Vec::new();
    // `maximal` is sorted by start, and no two share a start.
    for (f, l) in maximal {
        if chosen.last().is_none_or(|&(_, pl)| f > pl) {
            chosen.push((f, l));
        }
    }

    let mut mentions = Vec::new();
    for (first, last) in chosen {
        let text = (first..=last)
            .map(|i| sentence.token(i).expect("in range").surface.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let head = span_head(sentence, first, last);
        let entity_type = sentence.token(head).expect("in range").entity;
        if let Some(ids) = aliases.lookup(&text) {
            for id in ids {
                mentions.push(EntityMention {
                    doc_id: sentence.doc_id.clone(),
                    sentence_id: sentence.sentence_id,
                    first,
                    last,
                    head,
                    entity_type,
                    kb_id: Some(id.clone()),
                });
            }
        }
    }
    mentions
}
