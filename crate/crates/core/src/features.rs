//! Shortest dependency paths and the per-instance feature bag.
//!
//! SDP strings look like `PERSON<-nsubj<-grew->prep_in->neighborhood->prep_of->LOCATION`:
//! nodes and edge labels alternate, each label wrapped in a pair of arrows.
//! `->` means the walk goes from governor to dependent, `<-` from dependent
//! to governor. Appositive edges are the one exception and are written
//! pointing at the anchor noun, so `Young, the officer` reads
//! `PERSON<-appos<-officer`.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::align::RelationInstance;
use crate::corpus::{EntityMention, EntityTag, ParsedSentence};

pub const NIL: &str = "nil";
pub const NUM_TOKEN: &str = "⟨NUM⟩";
pub const DATE_TOKEN: &str = "⟨DATE⟩";
/// Separates the SDP from the between-words in verb-less pattern keys.
pub const BETWEEN_MARK: &str = " ||";

const DEFAULT_TITLES: &str = include_str!("../resources/titles.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExtractionError {
    #[error("token {0} is not in the sentence")]
    MissingToken(usize),
    #[error("tokens {0} and {1} are not connected in the dependency graph")]
    Disconnected(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Walking from governor to dependent.
    Down,
    /// Walking from dependent to governor.
    Up,
}

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    label: String,
    /// True when the node owning this adjacency entry governs `to`.
    governs: bool,
}

/// Undirected view of a sentence's dependency tree; node ids are 1-based
/// token indices.
#[derive(Debug, Clone)]
pub struct DependencyGraph {
    adjacency: Vec<Vec<Edge>>,
}

impl DependencyGraph {
    pub fn new(sentence: &ParsedSentence) -> Self {
        let n = sentence.len();
        let mut adjacency = vec![Vec::new(); n + 1];
        for tok in &sentence.tokens {
            if tok.head == 0 || tok.head > n {
                continue;
            }
            adjacency[tok.head].push(Edge {
                to: tok.index,
                label: tok.deprel.clone(),
                governs: true,
            });
            adjacency[tok.index].push(Edge {
                to: tok.head,
                label: tok.deprel.clone(),
                governs: false,
            });
        }
        for edges in &mut adjacency {
            edges.sort_by_key(|e| e.to);
        }
        DependencyGraph { adjacency }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len() - 1
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency
            .get(node)
            .into_iter()
            .flat_map(|edges| edges.iter().map(|e| e.to))
    }

    fn edge(&self, from: usize, to: usize) -> Option<&Edge> {
        self.adjacency.get(from)?.iter().find(|e| e.to == to)
    }

    fn contains(&self, node: usize) -> bool {
        node >= 1 && node < self.adjacency.len()
    }

    /// Breadth-first shortest path from `from` to `to`, inclusive. Among
    /// equally short paths the one whose node sequence is lexicographically
    /// smallest wins.
    pub fn shortest_path(&self, from: usize, to: usize) -> Result<Vec<usize>, ExtractionError> {
        for node in [from, to] {
            if !self.contains(node) {
                return Err(ExtractionError::MissingToken(node));
            }
        }
        let mut dist = vec![usize::MAX; self.adjacency.len()];
        dist[to] = 0;
        let mut queue = VecDeque::from([to]);
        while let Some(node) = queue.pop_front() {
            for next in self.neighbors(node) {
                if dist[next] == usize::MAX {
                    dist[next] = dist[node] + 1;
                    queue.push_back(next);
                }
            }
        }
        if dist[from] == usize::MAX {
            return Err(ExtractionError::Disconnected(from, to));
        }
        let mut path = vec![from];
        let mut cur = from;
        while cur != to {
            // neighbours are sorted, so the first step-down is the smallest
            cur = self
                .neighbors(cur)
                .find(|&n| dist[n] + 1 == dist[cur])
                .expect("BFS distances are consistent");
            path.push(cur);
        }
        Ok(path)
    }

    /// Label and walk direction of the edge between adjacent nodes.
    pub fn step(&self, from: usize, to: usize) -> Option<(&str, Direction)> {
        self.edge(from, to).map(|e| {
            let dir = if e.governs {
                Direction::Down
            } else {
                Direction::Up
            };
            (e.label.as_str(), dir)
        })
    }
}

#[derive(Debug, Clone)]
pub struct FeatureConfig {
    /// Replace NUMBER/DATE tokens by `⟨NUM⟩`/`⟨DATE⟩` in paths and the
    /// middle token sequence.
    pub collapse: bool,
    pub titles: HashSet<String>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            collapse: true,
            titles: parse_word_list(DEFAULT_TITLES),
        }
    }
}

impl FeatureConfig {
    pub fn with_title_file(path: &Path) -> std::io::Result<Self> {
        Ok(FeatureConfig {
            titles: parse_word_list(&fs::read_to_string(path)?),
            ..Default::default()
        })
    }
}

/// One lowercase entry per line; `#` starts a comment line.
pub fn parse_word_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

fn abbreviation(coarse: &str) -> &str {
    match coarse {
        "PERSON" => "PER",
        "ORGANIZATION" => "ORG",
        "LOCATION" => "LOC",
        other => other,
    }
}

/// Endpoint placeholders; numbered abbreviations when both share a type.
pub fn placeholders(subject: EntityTag, object: EntityTag) -> (String, String) {
    let (s, o) = (subject.coarse(), object.coarse());
    if s == o {
        let a = abbreviation(s);
        (format!("{a}-1"), format!("{a}-2"))
    } else {
        (s.to_string(), o.to_string())
    }
}

fn node_word(sentence: &ParsedSentence, index: usize, collapse: bool) -> String {
    let tok = sentence.token(index).expect("path nodes are valid tokens");
    match tok.entity {
        EntityTag::Number if collapse => NUM_TOKEN.to_string(),
        EntityTag::Date if collapse => DATE_TOKEN.to_string(),
        _ => tok.surface.to_lowercase(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShortestPath {
    /// Token indices from subject head to object head.
    pub nodes: Vec<usize>,
    pub sdp: String,
    pub no_verb: bool,
}

impl ShortestPath {
    pub fn interior(&self) -> &[usize] {
        let n = self.nodes.len();
        if n <= 2 {
            &[]
        } else {
            &self.nodes[1..n - 1]
        }
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.len() - 1
    }
}

pub fn shortest_dependency_path(
    sentence: &ParsedSentence,
    graph: &DependencyGraph,
    subject: &EntityMention,
    object: &EntityMention,
    collapse: bool,
) -> Result<ShortestPath, ExtractionError> {
    let nodes = graph.shortest_path(subject.head, object.head)?;
    let (start, end) = placeholders(subject.entity_type, object.entity_type);
    let mut sdp = start;
    for pair in nodes.windows(2) {
        let (label, dir) = graph.step(pair[0], pair[1]).expect("path follows edges");
        let up = match dir {
            Direction::Up => label != "appos",
            Direction::Down => label == "appos",
        };
        let arrow = if up { "<-" } else { "->" };
        sdp.push_str(arrow);
        sdp.push_str(label);
        sdp.push_str(arrow);
        if pair[1] == object.head {
            sdp.push_str(&end);
        } else {
            sdp.push_str(&node_word(sentence, pair[1], collapse));
        }
    }
    let no_verb = !nodes[1..nodes.len() - 1].iter().any(|&i| {
        sentence
            .token(i)
            .map(|t| t.pos.starts_with('V'))
            .unwrap_or(false)
    });
    Ok(ShortestPath { nodes, sdp, no_verb })
}

/// Splits an SDP into its node segments (placeholders included) and edge
/// labels.
pub fn split_sdp(sdp: &str) -> (Vec<&str>, Vec<&str>) {
    let mut segments = Vec::new();
    let mut rest = sdp;
    loop {
        let next = [rest.find("<-"), rest.find("->")]
            .into_iter()
            .flatten()
            .min();
        match next {
            Some(i) => {
                segments.push(&rest[..i]);
                rest = &rest[i + 2..];
            }
            None => {
                segments.push(rest);
                break;
            }
        }
    }
    // `a<-l<-b` splits to [a, l, b]
    let nodes = segments.iter().step_by(2).copied().collect();
    let labels = segments.iter().skip(1).step_by(2).copied().collect();
    (nodes, labels)
}

/// Words a pattern contributes to semantic representations: the interior
/// SDP nodes, or the between-words of a verb-less pattern.
pub fn pattern_words(pattern: &str) -> Vec<String> {
    if let Some((_, between)) = pattern.split_once(BETWEEN_MARK) {
        return between.split_whitespace().map(str::to_string).collect();
    }
    let (nodes, _) = split_sdp(pattern);
    if nodes.len() <= 2 {
        return Vec::new();
    }
    nodes[1..nodes.len() - 1]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn is_punctuation(pos: &str) -> bool {
    !pos.is_empty() && !pos.chars().any(|c| c.is_alphanumeric())
}

fn surface_or_nil(sentence: &ParsedSentence, index: Option<usize>) -> String {
    index
        .and_then(|i| sentence.token(i))
        .map(|t| t.surface.clone())
        .unwrap_or_else(|| NIL.to_string())
}

/// Computes the SDP and fills `sdp`, `pattern`, `no_verb` and `features`.
pub fn annotate_instance(
    instance: &mut RelationInstance,
    sentence: &ParsedSentence,
    graph: &DependencyGraph,
    config: &FeatureConfig,
) -> Result<(), ExtractionError> {
    let path = shortest_dependency_path(
        sentence,
        graph,
        &instance.subject,
        &instance.object,
        config.collapse,
    )?;
    instance.sdp = path.sdp.clone();
    instance.no_verb = path.no_verb;
    instance.pattern = if path.no_verb {
        let mut key = path.sdp.clone();
        key.push_str(BETWEEN_MARK);
        for w in between_words(sentence, &instance.subject, &instance.object, config.collapse) {
            key.push(' ');
            key.push_str(&w);
        }
        key
    } else {
        path.sdp.clone()
    };
    instance.features = extract_features(instance, sentence, &path, config);
    Ok(())
}

fn between_range(a: &EntityMention, b: &EntityMention) -> std::ops::Range<usize> {
    let (left, right) = if a.first <= b.first { (a, b) } else { (b, a) };
    (left.last + 1)..right.first.max(left.last + 1)
}

/// Lowercased tokens strictly between the two mentions.
pub fn between_words(
    sentence: &ParsedSentence,
    a: &EntityMention,
    b: &EntityMention,
    collapse: bool,
) -> Vec<String> {
    between_range(a, b)
        .map(|i| node_word(sentence, i, collapse))
        .collect()
}

/// The lexical, syntactic and entity features of one instance.
pub fn extract_features(
    instance: &RelationInstance,
    sentence: &ParsedSentence,
    path: &ShortestPath,
    config: &FeatureConfig,
) -> Vec<String> {
    let subj = &instance.subject;
    let obj = &instance.object;
    let mut f = Vec::with_capacity(32);

    f.push(format!("sdp={}", path.sdp));

    let between: Vec<usize> = between_range(subj, obj).collect();
    let mid: Vec<String> = between
        .iter()
        .map(|&i| {
            let t = sentence.token(i).expect("in range");
            match t.entity {
                EntityTag::Number if config.collapse => NUM_TOKEN.to_string(),
                EntityTag::Date if config.collapse => DATE_TOKEN.to_string(),
                _ => t.surface.clone(),
            }
        })
        .collect();
    f.push(format!("mid_seq=\"{}\"", mid.join(" ")));
    f.push(format!("n_between={}", between.len()));
    f.push(format!(
        "first_between={}",
        mid.first().map(String::as_str).unwrap_or(NIL)
    ));
    f.push(format!(
        "last_between={}",
        mid.last().map(String::as_str).unwrap_or(NIL)
    ));
    if mid.len() > 2 {
        let others: BTreeSet<&str> = mid[1..mid.len() - 1].iter().map(String::as_str).collect();
        for w in others {
            f.push(format!("tok_between={w}"));
        }
    }

    let before = |m: &EntityMention, k: usize| m.first.checked_sub(k).filter(|&i| i >= 1);
    let after = |m: &EntityMention, k: usize| Some(m.last + k).filter(|&i| i <= sentence.len());
    f.push(format!("before1_e1={}", surface_or_nil(sentence, before(subj, 1))));
    f.push(format!("before2_e1={}", surface_or_nil(sentence, before(subj, 2))));
    f.push(format!("after1_e2={}", surface_or_nil(sentence, after(obj, 1))));
    f.push(format!("after2_e2={}", surface_or_nil(sentence, after(obj, 2))));

    let governor = |m: &EntityMention| {
        sentence
            .token(m.head)
            .map(|t| t.head)
            .filter(|&h| h != 0)
    };
    let (g1, g2) = (governor(subj), governor(obj));
    f.push(format!("e1_head={}", surface_or_nil(sentence, g1)));
    f.push(format!("e2_head={}", surface_or_nil(sentence, g2)));
    f.push(format!(
        "heads_equal={}",
        matches!((g1, g2), (Some(a), Some(b)) if a == b)
    ));

    // The SDP neighbour of each endpoint, when it is an interior node that
    // the endpoint governs.
    let dependent = |endpoint: usize, neighbour: Option<&usize>| {
        neighbour
            .copied()
            .filter(|&n| n != subj.head && n != obj.head)
            .filter(|&n| sentence.token(n).map(|t| t.head) == Some(endpoint))
    };
    let nodes = &path.nodes;
    f.push(format!(
        "e1_dep={}",
        surface_or_nil(sentence, dependent(subj.head, nodes.get(1)))
    ));
    f.push(format!(
        "e2_dep={}",
        surface_or_nil(
            sentence,
            dependent(obj.head, nodes.len().checked_sub(2).and_then(|i| nodes.get(i)))
        )
    ));

    let e1 = subj.surface(sentence).join("_");
    let e2 = obj.surface(sentence).join("_");
    f.push(format!("e1_str={e1}"));
    f.push(format!("e2_str={e2}"));
    f.push(format!("e1e2={e1}--{e2}"));
    f.push(format!("et1={}", subj.entity_type));
    f.push(format!("et2={}", obj.entity_type));
    f.push(format!("et1et2={}--{}", subj.entity_type, obj.entity_type));

    let title = between.iter().any(|&i| {
        let t = sentence.token(i).expect("in range");
        t.entity == EntityTag::Title || config.titles.contains(&t.surface.to_lowercase())
    });
    f.push(format!("title_between={title}"));
    f.push(format!(
        "order={}",
        if subj.first < obj.first { 1 } else { 2 }
    ));

    let (left, right) = if subj.first < obj.first {
        (subj, obj)
    } else {
        (obj, subj)
    };
    let mut tags = Vec::with_capacity(between.len() + 2);
    let pos_of = |i: usize| sentence.token(i).map(|t| t.pos.clone()).unwrap_or_default();
    tags.push(pos_of(left.head));
    for &i in &between {
        let pos = pos_of(i);
        if !is_punctuation(&pos) {
            tags.push(pos);
        }
    }
    tags.push(pos_of(right.head));
    f.push(format!("pos_path={}", tags.join("->")));
    f
}
