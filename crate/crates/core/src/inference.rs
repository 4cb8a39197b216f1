//! Embedding-space inference: soft labels for documents, representative
//! terms of a topic and a 2-D projection of all topic vectors.

use std::cmp::Ordering;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Dimension;
use crate::embedding::{joint_index, EmbeddingModel};
use crate::error::{Error, Result};
use crate::math::{axpy, cosine, dot, norm, softmax, Matrix};
use crate::scalar::Scalar;

pub const DEFAULT_TEMPERATURE: f64 = 20.0;

/// Probability vectors over aspects and sentiments for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPrediction<T> {
    pub aspect: Vec<T>,
    pub sentiment: Vec<T>,
}

impl<T: Scalar> SoftPrediction<T> {
    pub fn uniform(n_aspects: usize, n_sentiments: usize) -> Self {
        SoftPrediction {
            aspect: vec![T::one() / T::from_usize_lossy(n_aspects); n_aspects],
            sentiment: vec![T::one() / T::from_usize_lossy(n_sentiments); n_sentiments],
        }
    }

    pub fn dist(&self, dim: Dimension) -> &[T] {
        match dim {
            Dimension::Aspect => &self.aspect,
            Dimension::Sentiment => &self.sentiment,
        }
    }
}

/// Which cosine scores feed the document logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scoring {
    /// Pure-topic cosine plus the mean cosine of the matching joint topics.
    #[default]
    Combined,
    /// Mean cosine of the matching joint topics only.
    JointOnly,
    /// Pure-topic cosine only.
    MarginalOnly,
}

impl Scoring {
    pub fn name(self) -> &'static str {
        match self {
            Scoring::Combined => "combined",
            Scoring::JointOnly => "joint",
            Scoring::MarginalOnly => "marginal",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "combined" => Some(Scoring::Combined),
            "joint" => Some(Scoring::JointOnly),
            "marginal" => Some(Scoring::MarginalOnly),
            _ => None,
        }
    }
}

/// Mean center vector of the document's tokens.
pub fn document_vector<T: Scalar>(token_ids: &[usize], model: &EmbeddingModel<T>) -> Result<Vec<T>> {
    if token_ids.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let mut d = vec![T::zero(); model.dim];
    let w = T::one() / T::from_usize_lossy(token_ids.len());
    for &id in token_ids {
        axpy(w, model.center.row(id), &mut d);
    }
    Ok(d)
}

pub fn embed_predict<T: Scalar>(
    token_ids: &[usize],
    model: &EmbeddingModel<T>,
    temperature: T,
    scoring: Scoring,
) -> Result<SoftPrediction<T>> {
    let d = document_vector(token_ids, model)?;
    predict_from_vector(&d, model, temperature, scoring)
}

/// Soft prediction for an explicit document vector.
pub fn predict_from_vector<T: Scalar>(
    d: &[T],
    model: &EmbeddingModel<T>,
    temperature: T,
    scoring: Scoring,
) -> Result<SoftPrediction<T>> {
    if !(temperature > T::zero()) {
        return Err(Error::invalid("temperature must be > 0"));
    }
    if norm(d) == T::zero() {
        return Err(Error::ZeroNorm);
    }
    let (na, ns) = (model.n_aspects(), model.n_sentiments());
    let joint_cos: Vec<T> = model.joint_topics.iter_rows().map(|t| cosine(t, d)).collect();
    let use_pure = scoring != Scoring::JointOnly;
    let use_joint = scoring != Scoring::MarginalOnly;

    let aspect_logits: Vec<T> = (0..na)
        .map(|a| {
            let mut score = T::zero();
            if use_pure {
                score += cosine(model.aspect_topics.row(a), d);
            }
            if use_joint {
                let sum: T = (0..ns).map(|s| joint_cos[joint_index(s, a, na)]).sum();
                score += sum / T::from_usize_lossy(ns);
            }
            temperature * score
        })
        .collect();
    let sentiment_logits: Vec<T> = (0..ns)
        .map(|s| {
            let mut score = T::zero();
            if use_pure {
                score += cosine(model.sentiment_topics.row(s), d);
            }
            if use_joint {
                let sum: T = (0..na).map(|a| joint_cos[joint_index(s, a, na)]).sum();
                score += sum / T::from_usize_lossy(na);
            }
            temperature * score
        })
        .collect();
    Ok(SoftPrediction {
        aspect: softmax(&aspect_logits),
        sentiment: softmax(&sentiment_logits),
    })
}

/// A pure or joint topic vector of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopicRef {
    Aspect(usize),
    Sentiment(usize),
    Joint { sentiment: usize, aspect: usize },
}

impl<T: Scalar> EmbeddingModel<T> {
    pub fn topic_vector(&self, topic: TopicRef) -> &[T] {
        match topic {
            TopicRef::Aspect(a) => self.aspect_topics.row(a),
            TopicRef::Sentiment(s) => self.sentiment_topics.row(s),
            TopicRef::Joint { sentiment, aspect } => self.joint_topics.row(joint_index(sentiment, aspect, self.n_aspects())),
        }
    }

    pub fn topic_name(&self, topic: TopicRef) -> String {
        match topic {
            TopicRef::Aspect(a) => self.aspects[a].clone(),
            TopicRef::Sentiment(s) => self.sentiments[s].clone(),
            TopicRef::Joint { sentiment, aspect } => format!("{}|{}", self.sentiments[sentiment], self.aspects[aspect]),
        }
    }

    /// Every topic: aspects, then sentiments, then joint topics in
    /// sentiment-major order.
    pub fn all_topics(&self) -> Vec<TopicRef> {
        let (na, ns) = (self.n_aspects(), self.n_sentiments());
        let mut out: Vec<TopicRef> = (0..na).map(TopicRef::Aspect).collect();
        out.extend((0..ns).map(TopicRef::Sentiment));
        for sentiment in 0..ns {
            out.extend((0..na).map(|aspect| TopicRef::Joint { sentiment, aspect }));
        }
        out
    }

    /// Resolves `label` or `sentiment|aspect`. A bare label that names both
    /// an aspect and a sentiment resolves to the aspect.
    pub fn find_topic(&self, name: &str) -> Option<TopicRef> {
        if let Some((s, a)) = name.split_once('|') {
            let sentiment = self.sentiments.iter().position(|x| x == s)?;
            let aspect = self.aspects.iter().position(|x| x == a)?;
            return Some(TopicRef::Joint { sentiment, aspect });
        }
        if let Some(a) = self.aspects.iter().position(|x| x == name) {
            return Some(TopicRef::Aspect(a));
        }
        self.sentiments.iter().position(|x| x == name).map(TopicRef::Sentiment)
    }
}

/// The `n` vocabulary words closest in cosine to a topic vector, best first.
/// Seed keywords are not excluded; ties go to the lower word id.
pub fn top_terms<T: Scalar>(model: &EmbeddingModel<T>, topic: TopicRef, n: usize) -> Vec<(usize, T)> {
    let t = model.topic_vector(topic);
    let mut scored: Vec<(usize, T)> = model
        .center
        .iter_rows()
        .take(model.center.rows())
        .map(|w| cosine(w, t))
        .enumerate()
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    scored.truncate(n);
    scored
}

/// 2-D coordinates of every topic vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub points: Vec<(String, f64, f64)>,
    /// Fewer than two non-trivial principal directions were found; the
    /// missing coordinates are zero.
    pub rank_deficient: bool,
}

impl Projection {
    /// `name<TAB>x<TAB>y` lines.
    pub fn to_tsv(&self) -> String {
        self.points
            .iter()
            .map(|(n, x, y)| format!("{n}\t{x:.6}\t{y:.6}\n"))
            .collect()
    }
}

const POWER_ITERATIONS: usize = 200;
const POWER_TOLERANCE: f64 = 1e-10;

/// Top eigenvector of a symmetric PSD matrix by power iteration, kept
/// orthogonal to `against`.
fn power_iteration(cov: &Matrix<f64>, against: &[Vec<f64>], rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let d = cov.rows();
    let orthogonalize = |v: &mut Vec<f64>| {
        for u in against {
            let p = dot(v, u);
            axpy(-p, u, v);
        }
    };
    let normalize = |v: &mut Vec<f64>| {
        let n = norm(v);
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        n
    };
    let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    orthogonalize(&mut v);
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let mut next: Vec<f64> = cov.iter_rows().take(d).map(|r| dot(r, &v)).collect();
        orthogonalize(&mut next);
        let n = normalize(&mut next);
        if n == 0.0 {
            return (v, 0.0);
        }
        let diff = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        lambda = n;
        if diff < POWER_TOLERANCE {
            break;
        }
    }
    (v, lambda)
}

/// Projects the rows of `data` onto their top two principal components.
/// Returns the coordinates and how many components carry variance.
pub fn pca_2d(data: &Matrix<f64>) -> (Vec<[f64; 2]>, usize) {
    let (n, d) = (data.rows(), data.cols());
    if n == 0 {
        return (Vec::new(), 0);
    }
    let mut mean = vec![0.0; d];
    for r in data.iter_rows().take(n) {
        axpy(1.0 / n as f64, r, &mut mean);
    }
    let centered: Vec<Vec<f64>> = data
        .iter_rows()
        .take(n)
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = Matrix::<f64>::zeros(d, d);
    for r in &centered {
        for i in 0..d {
            let ri = r[i] / n as f64;
            if ri == 0.0 {
                continue;
            }
            axpy(ri, r, cov.row_mut(i));
        }
    }
    let scale = cov.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut components: Vec<Vec<f64>> = Vec::new();
    let mut rank = 0;
    for _ in 0..2.min(d) {
        let (v, lambda) = power_iteration(&cov, &components, &mut rng);
        if scale == 0.0 || lambda <= 1e-12 * scale {
            break;
        }
        components.push(v);
        rank += 1;
    }
    let coords = centered
        .iter()
        .map(|r| {
            let x = components.first().map_or(0.0, |c| dot(r, c));
            let y = components.get(1).map_or(0.0, |c| dot(r, c));
            [x, y]
        })
        .collect();
    (coords, rank)
}

/// PCA projection of all pure and joint topic vectors, in
/// [`EmbeddingModel::all_topics`] order.
pub fn project_topics_2d<T: Scalar>(model: &EmbeddingModel<T>) -> Result<Projection> {
    let topics = model.all_topics();
    if topics.len() < 2 {
        return Err(Error::invalid("need at least two topic vectors to project"));
    }
    let rows: Vec<Vec<f64>> = topics
        .iter()
        .map(|&t| model.topic_vector(t).iter().map(|x| x.as_f64()).collect())
        .collect();
    let (coords, rank) = pca_2d(&Matrix::from_rows(&rows));
    if rank < 2 {
        warn!("topic vectors span fewer than 2 dimensions; missing coordinates set to 0");
    }
    Ok(Projection {
        points: topics
            .iter()
            .zip(coords)
            .map(|(&t, [x, y])| (model.topic_name(t), x, y))
            .collect(),
        rank_deficient: rank < 2,
    })
}
