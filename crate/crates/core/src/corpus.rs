//! Corpus ingestion: tokenization, vocabulary construction, document
//! encoding and the keyword schema file.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use log::warn;

use crate::error::{Error, Result};

/// Phrase joiner emitted by phrase miners; tokens joined by it stay whole.
pub const PHRASE_JOINER: &str = "###";

pub const DEFAULT_MIN_COUNT: usize = 3;

#[inline]
fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Lowercases and splits text into word tokens.
///
/// Whitespace and punctuation both act as boundaries and punctuation itself is
/// discarded, except that a literal `###` between two word runs glues them
/// into one phrase token (`barely###touched`).
pub fn tokenize(raw_text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in raw_text.split_whitespace() {
        let lower = chunk.to_lowercase();
        // alternate runs of word / non-word characters
        let mut runs: Vec<(bool, &str)> = Vec::new();
        let mut start = 0;
        let mut current: Option<bool> = None;
        for (i, c) in lower.char_indices() {
            let w = is_word_char(c);
            match current {
                Some(kind) if kind == w => {}
                Some(kind) => {
                    runs.push((kind, &lower[start..i]));
                    start = i;
                    current = Some(w);
                }
                None => current = Some(w),
            }
        }
        if let Some(kind) = current {
            runs.push((kind, &lower[start..]));
        }

        let mut pending: Option<String> = None;
        let mut i = 0;
        while i < runs.len() {
            let (is_word, text) = runs[i];
            if is_word {
                match pending.as_mut() {
                    Some(p) => p.push_str(text),
                    None => pending = Some(text.to_string()),
                }
            } else {
                let glue = text == PHRASE_JOINER
                    && pending.is_some()
                    && runs.get(i + 1).is_some_and(|r| r.0);
                if glue {
                    pending.as_mut().unwrap().push_str(PHRASE_JOINER);
                } else if let Some(p) = pending.take() {
                    out.push(p);
                }
            }
            i += 1;
        }
        if let Some(p) = pending {
            out.push(p);
        }
    }
    out
}

/// Token/id mapping with corpus counts. Ids are dense and ordered by
/// descending count, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from `(token, count)` pairs already in id order.
    pub fn from_entries(entries: Vec<(String, u64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyVocabulary(0));
        }
        let mut index = HashMap::with_capacity(entries.len());
        let mut tokens = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        for (id, (tok, count)) in entries.into_iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("invalid vocabulary token {tok:?}")));
            }
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {tok:?}")));
            }
            tokens.push(tok);
            counts.push(count);
        }
        Ok(Vocabulary {
            tokens,
            counts,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// `token<TAB>count` lines in id order.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            let _ = writeln!(s, "{t}\t{c}");
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, count) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: "expected token<TAB>count".into(),
            })?;
            let count = count.trim().parse::<u64>().map_err(|e| Error::Parse {
                line: n + 1,
                message: format!("bad count: {e}"),
            })?;
            entries.push((tok.to_string(), count));
        }
        Self::from_entries(entries)
    }
}

pub fn build_vocabulary<S: AsRef<str>>(documents: &[Vec<S>], min_count: usize) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(Error::invalid("min_count must be at least 1"));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for doc in documents {
        for tok in doc {
            *counts.entry(tok.as_ref()).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count as u64)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary(min_count));
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_entries(kept.into_iter().map(|(t, c)| (t.to_string(), c)).collect())
}

/// A document as a sequence of vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: usize,
    pub token_ids: Vec<usize>,
}

impl Document {
    /// True when nothing survived vocabulary filtering; such documents are
    /// excluded from classifier training.
    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }
}

pub fn encode_document<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, doc_id: usize) -> Document {
    Document {
        doc_id,
        token_ids: tokens.iter().filter_map(|t| vocab.id(t.as_ref())).collect(),
    }
}

/// Tokenizes and encodes every line of a corpus.
pub fn encode_corpus<S: AsRef<str>>(lines: &[S], vocab: &Vocabulary) -> Vec<Document> {
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| encode_document(&tokenize(l.as_ref()), vocab, i))
        .collect()
}

/// Which label dimension a topic or keyword belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dimension {
    Aspect,
    Sentiment,
}

impl Dimension {
    pub fn other(self) -> Self {
        match self {
            Dimension::Aspect => Dimension::Sentiment,
            Dimension::Sentiment => Dimension::Aspect,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Aspect => "aspect",
            Dimension::Sentiment => "sentiment",
        }
    }
}

/// Aspect and sentiment labels with their seed keywords.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicSchema {
    pub aspects: Vec<String>,
    pub sentiments: Vec<String>,
    /// Parallel to `aspects`.
    pub aspect_keywords: Vec<Vec<String>>,
    /// Parallel to `sentiments`.
    pub sentiment_keywords: Vec<Vec<String>>,
}

impl TopicSchema {
    pub fn labels(&self, dim: Dimension) -> &[String] {
        match dim {
            Dimension::Aspect => &self.aspects,
            Dimension::Sentiment => &self.sentiments,
        }
    }

    pub fn keywords(&self, dim: Dimension) -> &[Vec<String>] {
        match dim {
            Dimension::Aspect => &self.aspect_keywords,
            Dimension::Sentiment => &self.sentiment_keywords,
        }
    }

    pub fn label_index(&self, dim: Dimension, label: &str) -> Option<usize> {
        self.labels(dim).iter().position(|l| l == label)
    }

    /// Length of the shortest keyword list over both dimensions.
    pub fn min_keywords(&self) -> usize {
        self.aspect_keywords
            .iter()
            .chain(&self.sentiment_keywords)
            .map(Vec::len)
            .min()
            .unwrap_or(0)
    }

    /// Copy with every keyword list cut to its first `k` entries.
    pub fn truncated(&self, k: usize) -> Self {
        let cut = |lists: &[Vec<String>]| {
            lists
                .iter()
                .map(|l| l.iter().take(k).cloned().collect())
                .collect()
        };
        TopicSchema {
            aspects: self.aspects.clone(),
            sentiments: self.sentiments.clone(),
            aspect_keywords: cut(&self.aspect_keywords),
            sentiment_keywords: cut(&self.sentiment_keywords),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for dim in [Dimension::Aspect, Dimension::Sentiment] {
            let labels = self.labels(dim);
            if labels.len() < 2 {
                return Err(Error::Schema(format!(
                    "at least 2 {} labels required, found {}",
                    dim.name(),
                    labels.len()
                )));
            }
            let mut seen = BTreeSet::new();
            for label in labels {
                if !seen.insert(label.as_str()) {
                    return Err(Error::Schema(format!("duplicate {} label `{label}`", dim.name())));
                }
                if label.is_empty() || label.contains('|') || label.chars().any(char::is_whitespace) {
                    return Err(Error::Schema(format!(
                        "label `{label}` must be non-empty without whitespace or `|`"
                    )));
                }
            }
            for (label, kws) in labels.iter().zip(self.keywords(dim)) {
                if kws.is_empty() {
                    return Err(Error::Schema(format!("label `{label}` has an empty keyword list")));
                }
            }
        }
        Ok(())
    }

    /// Serializes back to the schema file format.
    pub fn to_schema_text(&self) -> String {
        let mut s = String::from("[aspects]\n");
        for (l, k) in self.aspects.iter().zip(&self.aspect_keywords) {
            let _ = writeln!(s, "{l}: {}", k.join(" "));
        }
        s.push_str("[sentiments]\n");
        for (l, k) in self.sentiments.iter().zip(&self.sentiment_keywords) {
            let _ = writeln!(s, "{l}: {}", k.join(" "));
        }
        s
    }
}

/// Parses the `[aspects]` / `[sentiments]` keyword file.
///
/// ```text
/// # restaurant
/// [aspects]
/// food: spicy sushi pizza taste
/// service: tips manager waitress servers
/// [sentiments]
/// good: good great nice
/// bad: bad terrible
/// ```
pub fn parse_schema(schema_text: &str) -> Result<TopicSchema> {
    let mut schema = TopicSchema {
        aspects: Vec::new(),
        sentiments: Vec::new(),
        aspect_keywords: Vec::new(),
        sentiment_keywords: Vec::new(),
    };
    let mut section: Option<Dimension> = None;
    for (n, raw) in schema_text.lines().enumerate() {
        let line_no = n + 1;
        let line = match raw.find('#') {
            // a `#` that is part of a `###` phrase is not a comment
            Some(pos) if !raw[pos..].starts_with(PHRASE_JOINER) => &raw[..pos],
            _ => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            section = match line {
                "[aspects]" => Some(Dimension::Aspect),
                "[sentiments]" => Some(Dimension::Sentiment),
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("unknown section header `{other}`"),
                    })
                }
            };
            continue;
        }
        let dim = section.ok_or_else(|| Error::Parse {
            line: line_no,
            message: "entry before any [aspects]/[sentiments] header".into(),
        })?;
        let (label, kws) = line.split_once(':').ok_or_else(|| Error::Parse {
            line: line_no,
            message: "expected `label: keyword keyword ...`".into(),
        })?;
        let label = label.trim().to_string();
        let keywords = tokenize(kws);
        let (labels, lists) = match dim {
            Dimension::Aspect => (&mut schema.aspects, &mut schema.aspect_keywords),
            Dimension::Sentiment => (&mut schema.sentiments, &mut schema.sentiment_keywords),
        };
        labels.push(label);
        lists.push(keywords);
    }
    schema.validate()?;
    Ok(schema)
}

/// Keyword ids per label after dropping out-of-vocabulary keywords.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedKeywords {
    pub aspects: Vec<Vec<usize>>,
    pub sentiments: Vec<Vec<usize>>,
}

impl ResolvedKeywords {
    pub fn of(&self, dim: Dimension) -> &[Vec<usize>] {
        match dim {
            Dimension::Aspect => &self.aspects,
            Dimension::Sentiment => &self.sentiments,
        }
    }

    /// For every vocabulary id, the `(dimension, label)` pairs it seeds.
    pub fn memberships(&self, vocab_len: usize) -> Vec<Vec<(Dimension, usize)>> {
        let mut out = vec![Vec::new(); vocab_len];
        for dim in [Dimension::Aspect, Dimension::Sentiment] {
            for (label, ids) in self.of(dim).iter().enumerate() {
                for &id in ids {
                    if !out[id].contains(&(dim, label)) {
                        out[id].push((dim, label));
                    }
                }
            }
        }
        out
    }
}

pub fn resolve_keywords(schema: &TopicSchema, vocab: &Vocabulary) -> Result<ResolvedKeywords> {
    let resolve = |dim: Dimension| -> Result<Vec<Vec<usize>>> {
        schema
            .labels(dim)
            .iter()
            .zip(schema.keywords(dim))
            .map(|(label, kws)| {
                let ids: Vec<usize> = kws
                    .iter()
                    .filter_map(|k| {
                        let id = vocab.id(k);
                        if id.is_none() {
                            warn!("keyword `{k}` of {} `{label}` is not in the vocabulary; dropped", dim.name());
                        }
                        id
                    })
                    .collect();
                if ids.is_empty() {
                    return Err(Error::Schema(format!(
                        "every keyword of {} `{label}` is out of vocabulary",
                        dim.name()
                    )));
                }
                Ok(ids)
            })
            .collect()
    };
    Ok(ResolvedKeywords {
        aspects: resolve(Dimension::Aspect)?,
        sentiments: resolve(Dimension::Sentiment)?,
    })
}
