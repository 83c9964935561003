//! Online log template miner over a fixed-depth prefix tree.
//!
//! Messages are tokenized on whitespace, `key=value` tokens are split after
//! the `=`, and numeric-looking tokens are replaced by a wildcard before
//! matching. The tree routes a message by `(token count, first two tokens)`;
//! inside a leaf the most similar template wins if its similarity reaches the
//! threshold, otherwise a new template is created. Templates are never merged
//! away, only generalized.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{LogTemplate, ServiceId, TemplateId};

pub const WILDCARD: &str = "<*>";
pub const DEFAULT_SIMILARITY: f64 = 0.5;

type LeafKey = (usize, String, String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Cluster {
    id: TemplateId,
    service: ServiceId,
    tokens: Vec<String>,
}

#[derive(Debug, Clone, Default)]
struct ServiceTree {
    leaves: BTreeMap<LeafKey, Vec<usize>>,
}

/// Per-service template store. Serializes as its template list; the prefix
/// tree is rebuilt on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "StoreRepr", into = "StoreRepr")]
pub struct TemplateMiner {
    similarity: f64,
    clusters: Vec<Cluster>,
    trees: BTreeMap<ServiceId, ServiceTree>,
}

#[derive(Serialize, Deserialize)]
struct StoreRepr {
    similarity: f64,
    templates: Vec<Cluster>,
}

impl From<StoreRepr> for TemplateMiner {
    fn from(repr: StoreRepr) -> Self {
        let mut miner = TemplateMiner::with_similarity(repr.similarity);
        for cluster in repr.templates {
            let idx = miner.clusters.len();
            miner
                .trees
                .entry(cluster.service.clone())
                .or_default()
                .leaves
                .entry(leaf_key(&cluster.tokens))
                .or_default()
                .push(idx);
            miner.clusters.push(cluster);
        }
        miner
    }
}

impl From<TemplateMiner> for StoreRepr {
    fn from(m: TemplateMiner) -> Self {
        StoreRepr {
            similarity: m.similarity,
            templates: m.clusters,
        }
    }
}

impl PartialEq for TemplateMiner {
    fn eq(&self, other: &Self) -> bool {
        self.similarity == other.similarity && self.clusters == other.clusters
    }
}

impl Default for TemplateMiner {
    fn default() -> Self {
        TemplateMiner::with_similarity(DEFAULT_SIMILARITY)
    }
}

impl TemplateMiner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_similarity(similarity: f64) -> Self {
        TemplateMiner {
            similarity,
            clusters: Vec::new(),
            trees: BTreeMap::new(),
        }
    }

    /// Assigns `message` from `service` to a template, creating or
    /// generalizing one as needed.
    pub fn mine(&mut self, service: &ServiceId, message: &str) -> TemplateId {
        let tokens = tokenize(message);
        let key = leaf_key(&tokens);
        let tree = self.trees.entry(service.clone()).or_default();
        let leaf = tree.leaves.entry(key).or_default();

        let mut best: Option<(usize, f64)> = None;
        for &idx in leaf.iter() {
            let sim = similarity(&self.clusters[idx].tokens, &tokens);
            // Strictly greater keeps the oldest template on ties.
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((idx, sim));
            }
        }

        match best {
            Some((idx, sim)) if sim >= self.similarity => {
                let cluster = &mut self.clusters[idx];
                for (t, m) in cluster.tokens.iter_mut().zip(&tokens) {
                    if t != m {
                        *t = WILDCARD.to_owned();
                    }
                }
                cluster.id
            }
            _ => {
                let id = self.clusters.len() as TemplateId;
                let idx = self.clusters.len();
                self.clusters.push(Cluster {
                    id,
                    service: service.clone(),
                    tokens,
                });
                leaf.push(idx);
                id
            }
        }
    }

    /// Looks up the template a message would map to without mutating the
    /// store.
    pub fn lookup(&self, service: &ServiceId, message: &str) -> Option<TemplateId> {
        let tokens = tokenize(message);
        let leaf = self.trees.get(service)?.leaves.get(&leaf_key(&tokens))?;
        leaf.iter()
            .map(|&idx| (idx, similarity(&self.clusters[idx].tokens, &tokens)))
            .filter(|&(_, sim)| sim >= self.similarity)
            .fold(None, |best: Option<(usize, f64)>, (idx, sim)| match best {
                Some((_, b)) if b >= sim => best,
                _ => Some((idx, sim)),
            })
            .map(|(idx, _)| self.clusters[idx].id)
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn template(&self, id: TemplateId) -> Option<LogTemplate> {
        self.clusters.get(id as usize).map(|c| LogTemplate {
            template_id: c.id,
            service: c.service.clone(),
            pattern: render(&c.tokens),
        })
    }

    pub fn pattern(&self, id: TemplateId) -> Option<String> {
        self.clusters.get(id as usize).map(|c| render(&c.tokens))
    }

    pub fn service_of(&self, id: TemplateId) -> Option<&ServiceId> {
        self.clusters.get(id as usize).map(|c| &c.service)
    }

    pub fn templates(&self) -> Vec<LogTemplate> {
        (0..self.clusters.len() as TemplateId)
            .filter_map(|id| self.template(id))
            .collect()
    }
}

/// Fraction of positions where the template holds a wildcard or the same
/// token as the message. Both sides have equal length inside a leaf.
fn similarity(template: &[String], message: &[String]) -> f64 {
    if template.is_empty() {
        return 1.0;
    }
    let matching = template
        .iter()
        .zip(message)
        .filter(|(t, m)| t.as_str() == WILDCARD || t == m)
        .count();
    matching as f64 / template.len() as f64
}

fn leaf_key(tokens: &[String]) -> LeafKey {
    let first = tokens.first().cloned().unwrap_or_default();
    let second = tokens.get(1).cloned().unwrap_or_default();
    (tokens.len(), first, second)
}

pub fn tokenize(message: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in message.split_whitespace() {
        match raw.find('=') {
            Some(pos) if pos + 1 < raw.len() => {
                out.push(raw[..=pos].to_owned());
                out.push(generalize(&raw[pos + 1..]));
            }
            _ => out.push(generalize(raw)),
        }
    }
    out
}

fn generalize(token: &str) -> String {
    if is_numeric_like(token) {
        WILDCARD.to_owned()
    } else {
        token.to_owned()
    }
}

/// Numbers, IPs, durations like `12ms`, and hex identifiers (`0x..` or at
/// least eight hex digits).
fn is_numeric_like(token: &str) -> bool {
    let t = token.trim_end_matches([',', ';', ')', ']']);
    let t = t.trim_start_matches(['(', '[']);
    let t = ["ms", "us", "ns", "s", "kb", "mb", "%"]
        .iter()
        .find_map(|u| t.strip_suffix(u).filter(|rest| rest.ends_with(|c: char| c.is_ascii_digit())))
        .unwrap_or(t);
    if t.is_empty() || !t.chars().any(|c| c.is_ascii_digit()) {
        return false;
    }
    if let Some(hex) = t.strip_prefix("0x") {
        return !hex.is_empty() && hex.chars().all(|c| c.is_ascii_hexdigit());
    }
    if t.chars().all(|c| c.is_ascii_digit() || ".:-+_/".contains(c)) {
        return true;
    }
    t.len() >= 8 && t.chars().all(|c| c.is_ascii_hexdigit() || c == '-')
}

fn render(tokens: &[String]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 && !tokens[i - 1].ends_with('=') {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}
