//! Word, document and topic embeddings trained jointly so that topic
//! vectors sit among the words that describe them.

pub mod loss;
mod train;

use std::fmt::Write as _;

use rand::Rng;

use crate::corpus::{Dimension, ResolvedKeywords, TopicSchema};
use crate::error::{Error, Result};
use crate::math::{axpy, Matrix};
use crate::scalar::Scalar;

pub use loss::joint_index;
pub use train::{train_embeddings, EpochReport, LossBreakdown, TrainedEmbeddings};

pub const MODEL_MAGIC: &str = "jasen-emb";
pub const MODEL_VERSION: &str = "v1";

/// Hyperparameters of the embedding trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedHyperparams {
    pub dim: usize,
    /// Local context window half-width.
    pub window: usize,
    pub lambda_g: f64,
    pub lambda_r: f64,
    pub epochs: usize,
    pub negatives: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// word2vec-style frequent-word subsampling threshold; `None` disables it.
    pub subsample: Option<f64>,
    pub seed: u64,
    /// Worker threads. More than one switches to lock-free shared updates,
    /// which gives up bit reproducibility.
    pub threads: usize,
    /// Train joint topics and the cross regularizer. Off reproduces the
    /// "without joint topics" ablation.
    pub use_joint: bool,
    /// Replace negative sampling by the full softmax over words/documents.
    /// Quadratic cost; meant for tiny vocabularies.
    pub exact_softmax: bool,
}

impl Default for EmbedHyperparams {
    fn default() -> Self {
        EmbedHyperparams {
            dim: 100,
            window: 5,
            lambda_g: 2.5,
            lambda_r: 1.0,
            epochs: 5,
            negatives: 5,
            lr_start: 0.025,
            lr_end: 0.0001,
            subsample: None,
            seed: 42,
            threads: 1,
            use_joint: true,
            exact_softmax: false,
        }
    }
}

impl EmbedHyperparams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::invalid(msg)) };
        check(self.dim >= 1, "dim must be >= 1")?;
        check(self.window >= 1, "window must be >= 1")?;
        check(self.negatives >= 1, "negatives must be >= 1")?;
        check(self.epochs >= 1, "epochs must be >= 1")?;
        check(self.lambda_g >= 0.0 && self.lambda_g.is_finite(), "lambda_g must be >= 0")?;
        check(self.lambda_r >= 0.0 && self.lambda_r.is_finite(), "lambda_r must be >= 0")?;
        check(
            self.lr_start > 0.0 && self.lr_end > 0.0 && self.lr_end <= self.lr_start,
            "learning rates must satisfy 0 < lr_end <= lr_start",
        )?;
        check(self.threads >= 1, "threads must be >= 1")?;
        if let Some(t) = self.subsample {
            check(t > 0.0, "subsample threshold must be > 0")?;
        }
        Ok(())
    }
}

/// All trained vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel<T> {
    pub dim: usize,
    /// Token strings in vocabulary id order.
    pub words: Vec<String>,
    pub aspects: Vec<String>,
    pub sentiments: Vec<String>,
    /// Center word vectors, one row per vocabulary id.
    pub center: Matrix<T>,
    /// Context word vectors.
    pub context: Matrix<T>,
    /// One trainable vector per training document.
    pub docs: Matrix<T>,
    pub aspect_topics: Matrix<T>,
    pub sentiment_topics: Matrix<T>,
    /// Row `s * |A| + a` holds ⟨s, a⟩.
    pub joint_topics: Matrix<T>,
}

impl<T: Scalar> EmbeddingModel<T> {
    /// Fresh model: center vectors uniform in `±0.5/dim`, everything else zero.
    pub fn new<R: Rng + ?Sized>(
        words: Vec<String>,
        schema: &TopicSchema,
        n_docs: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let n_words = words.len();
        let (na, ns) = (schema.aspects.len(), schema.sentiments.len());
        EmbeddingModel {
            dim,
            center: Matrix::random_uniform(n_words, dim, 0.5 / dim as f64, rng),
            context: Matrix::zeros(n_words, dim),
            docs: Matrix::zeros(n_docs, dim),
            aspect_topics: Matrix::zeros(na, dim),
            sentiment_topics: Matrix::zeros(ns, dim),
            joint_topics: Matrix::zeros(ns * na, dim),
            words,
            aspects: schema.aspects.clone(),
            sentiments: schema.sentiments.clone(),
        }
    }

    pub fn n_aspects(&self) -> usize {
        self.aspects.len()
    }

    pub fn n_sentiments(&self) -> usize {
        self.sentiments.len()
    }

    pub fn topics(&self, dim: Dimension) -> &Matrix<T> {
        match dim {
            Dimension::Aspect => &self.aspect_topics,
            Dimension::Sentiment => &self.sentiment_topics,
        }
    }

    pub fn labels(&self, dim: Dimension) -> &[String] {
        match dim {
            Dimension::Aspect => &self.aspects,
            Dimension::Sentiment => &self.sentiments,
        }
    }

    /// Name of joint topic row `j`, formatted `sentiment|aspect`.
    pub fn joint_name(&self, j: usize) -> String {
        let na = self.n_aspects();
        format!("{}|{}", self.sentiments[j / na], self.aspects[j % na])
    }

    pub fn is_finite(&self) -> bool {
        [
            &self.center,
            &self.context,
            &self.docs,
            &self.aspect_topics,
            &self.sentiment_topics,
            &self.joint_topics,
        ]
        .iter()
        .all(|m| m.is_finite())
    }

    fn check_shapes(&self) -> Result<()> {
        let (v, d, na, ns) = (self.words.len(), self.dim, self.n_aspects(), self.n_sentiments());
        let ok = self.center.rows() == v
            && self.context.rows() == v
            && self.aspect_topics.rows() == na
            && self.sentiment_topics.rows() == ns
            && self.joint_topics.rows() == na * ns
            && [
                &self.center,
                &self.context,
                &self.docs,
                &self.aspect_topics,
                &self.sentiment_topics,
                &self.joint_topics,
            ]
            .iter()
            .all(|m| m.cols() == d);
        if ok {
            Ok(())
        } else {
            Err(Error::Format("inconsistent matrix dimensions".into()))
        }
    }

    /// Writes the text model format. Values carry 9 significant digits,
    /// which round-trips `f32` exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{MODEL_MAGIC} {MODEL_VERSION} {} {} {} {}",
            self.words.len(),
            self.dim,
            self.n_aspects(),
            self.n_sentiments()
        );
        let mut section = |name: &str, m: &Matrix<T>, row_name: &dyn Fn(usize) -> String| {
            let _ = writeln!(s, "{name} {}", m.rows());
            for (i, row) in m.iter_rows().enumerate().take(m.rows()) {
                s.push_str(&row_name(i));
                for x in row {
                    let _ = write!(s, " {:.8e}", x.as_f64());
                }
                s.push('\n');
            }
        };
        section("WORDS", &self.center, &|i| self.words[i].clone());
        section("CONTEXT", &self.context, &|i| self.words[i].clone());
        section("DOCS", &self.docs, &|i| i.to_string());
        section("ASPECT_TOPICS", &self.aspect_topics, &|i| self.aspects[i].clone());
        section("SENT_TOPICS", &self.sentiment_topics, &|i| self.sentiments[i].clone());
        section("JOINT_TOPICS", &self.joint_topics, &|i| self.joint_name(i));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let corrupt = |msg: String| Error::Format(msg);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| corrupt("empty file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != MODEL_MAGIC || fields[1] != MODEL_VERSION {
            return Err(corrupt(format!("bad header `{header}`")));
        }
        let nums: Vec<usize> = fields[2..]
            .iter()
            .map(|f| f.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| corrupt(format!("bad header number: {e}")))?;
        let (n_words, dim, na, ns) = (nums[0], nums[1], nums[2], nums[3]);

        let mut read_section = |name: &str, expect_rows: Option<usize>| -> Result<(Vec<String>, Matrix<T>)> {
            let head = lines
                .next()
                .ok_or_else(|| corrupt(format!("missing section {name}")))?;
            let (sec, rows) = head
                .split_once(' ')
                .ok_or_else(|| corrupt(format!("bad section header `{head}`")))?;
            if sec != name {
                return Err(corrupt(format!("expected section {name}, found `{sec}`")));
            }
            let rows: usize = rows
                .trim()
                .parse()
                .map_err(|_| corrupt(format!("bad row count in `{head}`")))?;
            if expect_rows.is_some_and(|r| r != rows) {
                return Err(corrupt(format!("section {name} has {rows} rows, header implies {expect_rows:?}")));
            }
            let mut names = Vec::with_capacity(rows);
            let mut data = Vec::with_capacity(rows * dim);
            for r in 0..rows {
                let line = lines
                    .next()
                    .ok_or_else(|| corrupt(format!("section {name} truncated at row {r}")))?;
                let mut parts = line.split(' ');
                names.push(parts.next().unwrap_or_default().to_string());
                let before = data.len();
                for p in parts {
                    let x: T = p
                        .parse()
                        .map_err(|_| corrupt(format!("section {name} row {r}: bad number `{p}`")))?;
                    data.push(x);
                }
                if data.len() - before != dim {
                    return Err(corrupt(format!("section {name} row {r}: expected {dim} values")));
                }
            }
            Ok((names, Matrix::from_vec(rows, dim, data)))
        };

        let (words, center) = read_section("WORDS", Some(n_words))?;
        let (ctx_words, context) = read_section("CONTEXT", Some(n_words))?;
        if ctx_words != words {
            return Err(corrupt("CONTEXT row names differ from WORDS".into()));
        }
        let (_, docs) = read_section("DOCS", None)?;
        let (aspects, aspect_topics) = read_section("ASPECT_TOPICS", Some(na))?;
        let (sentiments, sentiment_topics) = read_section("SENT_TOPICS", Some(ns))?;
        let (_, joint_topics) = read_section("JOINT_TOPICS", Some(na * ns))?;
        let model = EmbeddingModel {
            dim,
            words,
            aspects,
            sentiments,
            center,
            context,
            docs,
            aspect_topics,
            sentiment_topics,
            joint_topics,
        };
        model.check_shapes()?;
        Ok(model)
    }
}

/// Topic matrix selector for posterior queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopicSet {
    Aspect,
    Sentiment,
    Joint,
}

impl From<Dimension> for TopicSet {
    fn from(d: Dimension) -> Self {
        match d {
            Dimension::Aspect => TopicSet::Aspect,
            Dimension::Sentiment => TopicSet::Sentiment,
        }
    }
}

/// Id-based views of the loss terms, reading rows straight from the model.
impl<T: Scalar> EmbeddingModel<T> {
    pub fn topic_set(&self, set: TopicSet) -> &Matrix<T> {
        match set {
            TopicSet::Aspect => &self.aspect_topics,
            TopicSet::Sentiment => &self.sentiment_topics,
            TopicSet::Joint => &self.joint_topics,
        }
    }

    pub fn topic_posterior(&self, word: usize, set: TopicSet) -> Vec<T> {
        loss::topic_posterior(self.center.row(word), self.topic_set(set))
    }

    /// Local context term for one (center, context) pair with the given
    /// negative context words.
    pub fn local_loss_grad(&self, center: usize, context: usize, negatives: &[usize]) -> loss::PairGrad<T> {
        let negs: Vec<&[T]> = negatives.iter().map(|&n| self.context.row(n)).collect();
        loss::negative_sampling_loss_grad(self.center.row(center), self.context.row(context), &negs)
    }

    /// Global context term for a word occurring in document `doc`.
    pub fn global_loss_grad(&self, word: usize, doc: usize, negative_docs: &[usize]) -> loss::PairGrad<T> {
        let negs: Vec<&[T]> = negative_docs.iter().map(|&n| self.docs.row(n)).collect();
        loss::negative_sampling_loss_grad(self.center.row(word), self.docs.row(doc), &negs)
    }

    pub fn pure_reg_loss_grad(&self, keyword: usize, owner: usize, dim: Dimension) -> loss::SoftmaxGrad<T> {
        loss::pure_reg_loss_grad(self.center.row(keyword), self.topics(dim), owner)
    }

    pub fn joint_reg_loss_grad(&self, keyword: usize, owner: usize, dim: Dimension) -> loss::SoftmaxGrad<T> {
        loss::joint_reg_loss_grad(self.center.row(keyword), &self.joint_topics, self.n_aspects(), dim, owner)
    }

    /// `KL(U ‖ P(t | w))` on `other_dim`, the dimension the keyword does not describe.
    pub fn cross_reg_loss_grad(&self, keyword: usize, other_dim: Dimension) -> loss::SoftmaxGrad<T> {
        loss::cross_reg_loss_grad(self.center.row(keyword), self.topics(other_dim))
    }
}

fn mean_of_rows<T: Scalar>(m: &Matrix<T>, ids: &[usize]) -> Vec<T> {
    let mut out = vec![T::zero(); m.cols()];
    let w = T::one() / T::from_usize_lossy(ids.len().max(1));
    for &id in ids {
        axpy(w, m.row(id), &mut out);
    }
    out
}

/// Sets each pure topic to the mean center vector of its keywords and each
/// joint topic ⟨s, a⟩ to the midpoint of `t_s` and `t_a`.
pub fn init_topics<T: Scalar>(model: &mut EmbeddingModel<T>, keywords: &ResolvedKeywords) -> Result<()> {
    if keywords.aspects.len() != model.n_aspects() || keywords.sentiments.len() != model.n_sentiments() {
        return Err(Error::invalid("keyword lists do not match model topic counts"));
    }
    for dim in [Dimension::Aspect, Dimension::Sentiment] {
        for (label, ids) in keywords.of(dim).iter().enumerate() {
            if ids.is_empty() {
                return Err(Error::Schema(format!(
                    "{} `{}` has no in-vocabulary keyword",
                    dim.name(),
                    model.labels(dim)[label]
                )));
            }
            let mean = mean_of_rows(&model.center, ids);
            let topics = match dim {
                Dimension::Aspect => &mut model.aspect_topics,
                Dimension::Sentiment => &mut model.sentiment_topics,
            };
            topics.row_mut(label).copy_from_slice(&mean);
        }
    }
    let na = model.n_aspects();
    let half = T::lit(0.5);
    for s in 0..model.n_sentiments() {
        for a in 0..na {
            let j = joint_index(s, a, na);
            let (ts, ta) = (model.sentiment_topics.row(s).to_vec(), model.aspect_topics.row(a));
            let row: Vec<T> = ts.iter().zip(ta).map(|(&x, &y)| half * (x + y)).collect();
            model.joint_topics.row_mut(j).copy_from_slice(&row);
        }
    }
    Ok(())
}
