//! Loss terms of the joint-topic embedding objective and their analytic
//! gradients. Every function here is pure: it reads parameter rows and
//! returns a loss value together with gradients, leaving updates to the
//! trainer.

use crate::corpus::Dimension;
use crate::math::{dot, log_sigmoid, log_sum_exp, sigmoid, softmax, Matrix};
use crate::scalar::Scalar;

/// Loss and gradients of one negative-sampling pair.
///
/// `negatives[n]` is the gradient for the `n`-th negative row in the order
/// they were passed; repeated negatives receive one gradient per occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGrad<T> {
    pub loss: T,
    pub input: Vec<T>,
    pub positive: Vec<T>,
    pub negatives: Vec<Vec<T>>,
}

/// Negative-sampling approximation of `-log P(out | in)`:
/// `-ln σ(pos·in) - Σ ln σ(-neg·in)`.
///
/// Serves both the local context term (input = center vector, outputs =
/// context vectors) and the global context term (outputs = document vectors).
pub fn negative_sampling_loss_grad<T: Scalar>(input: &[T], positive: &[T], negatives: &[&[T]]) -> PairGrad<T> {
    let dim = input.len();
    let mut grad_in = vec![T::zero(); dim];

    let s = dot(positive, input);
    let mut loss = -log_sigmoid(s);
    // d/ds of -ln σ(s) = σ(s) - 1
    let g = sigmoid(s) - T::one();
    let grad_pos: Vec<T> = input.iter().map(|&x| g * x).collect();
    for (gi, &p) in grad_in.iter_mut().zip(positive) {
        *gi += g * p;
    }

    let mut grad_negs = Vec::with_capacity(negatives.len());
    for neg in negatives {
        let s = dot(neg, input);
        loss -= log_sigmoid(-s);
        let g = sigmoid(s);
        grad_negs.push(input.iter().map(|&x| g * x).collect());
        for (gi, &n) in grad_in.iter_mut().zip(neg.iter()) {
            *gi += g * n;
        }
    }

    PairGrad {
        loss,
        input: grad_in,
        positive: grad_pos,
        negatives: grad_negs,
    }
}

/// Loss and gradients of a softmax over a set of output rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxGrad<T> {
    pub loss: T,
    pub input: Vec<T>,
    pub outputs: Matrix<T>,
}

/// Exact `-log softmax(outputs · input)[target]`.
///
/// The exact form of the local and global context terms; only tractable for
/// tiny vocabularies and corpora, where it also serves as a reference.
pub fn full_softmax_loss_grad<T: Scalar>(input: &[T], outputs: &Matrix<T>, target: usize) -> SoftmaxGrad<T> {
    let logits: Vec<T> = outputs.iter_rows().map(|r| dot(r, input)).collect();
    let loss = log_sum_exp(&logits) - logits[target];
    let mut probs = softmax(&logits);
    probs[target] -= T::one();
    topic_style_grads(loss, input, outputs, &probs)
}

/// Shared backward pass for `loss(z)` with `z_t = rows_t · input` given
/// `dloss/dz`.
fn topic_style_grads<T: Scalar>(loss: T, input: &[T], rows: &Matrix<T>, dz: &[T]) -> SoftmaxGrad<T> {
    let mut grad_in = vec![T::zero(); input.len()];
    let mut grad_rows = Matrix::zeros(rows.rows(), rows.cols());
    for (t, row) in rows.iter_rows().enumerate() {
        let g = dz[t];
        for (gi, &r) in grad_in.iter_mut().zip(row) {
            *gi += g * r;
        }
        for (gr, &x) in grad_rows.row_mut(t).iter_mut().zip(input) {
            *gr = g * x;
        }
    }
    SoftmaxGrad {
        loss,
        input: grad_in,
        outputs: grad_rows,
    }
}

/// `P(t | w) ∝ exp(u · t)` over the rows of `topics`.
pub fn topic_posterior<T: Scalar>(word: &[T], topics: &Matrix<T>) -> Vec<T> {
    let logits: Vec<T> = topics.iter_rows().map(|t| dot(t, word)).collect();
    softmax(&logits)
}

/// `-log P(t_owner | w)` for a keyword of `owner`.
pub fn pure_reg_loss_grad<T: Scalar>(word: &[T], topics: &Matrix<T>, owner: usize) -> SoftmaxGrad<T> {
    let logits: Vec<T> = topics.iter_rows().map(|t| dot(t, word)).collect();
    let loss = log_sum_exp(&logits) - logits[owner];
    let mut dz = softmax(&logits);
    dz[owner] -= T::one();
    topic_style_grads(loss, word, topics, &dz)
}

/// Row index of joint topic ⟨s, a⟩ in the `(|S|·|A|) × dim` joint matrix.
#[inline]
pub fn joint_index(sentiment: usize, aspect: usize, n_aspects: usize) -> usize {
    sentiment * n_aspects + aspect
}

/// Whether joint row `j` belongs to `label` on dimension `dim`.
#[inline]
fn joint_in_label(j: usize, dim: Dimension, label: usize, n_aspects: usize) -> bool {
    match dim {
        Dimension::Aspect => j % n_aspects == label,
        Dimension::Sentiment => j / n_aspects == label,
    }
}

/// Sums a joint posterior over the other dimension, giving the marginal
/// over the labels of `dim`.
pub fn marginalize<T: Scalar>(joint: &[T], n_sentiments: usize, n_aspects: usize, dim: Dimension) -> Vec<T> {
    debug_assert_eq!(joint.len(), n_sentiments * n_aspects);
    let n = match dim {
        Dimension::Aspect => n_aspects,
        Dimension::Sentiment => n_sentiments,
    };
    let mut out = vec![T::zero(); n];
    for (j, &p) in joint.iter().enumerate() {
        let label = match dim {
            Dimension::Aspect => j % n_aspects,
            Dimension::Sentiment => j / n_aspects,
        };
        out[label] += p;
    }
    out
}

/// `-log Σ_{j ∈ owner} P(t_j | w)` where the joint posterior is a softmax
/// over all `|S|·|A|` joint topics and `j` ranges over the joint topics whose
/// `dim` coordinate is `owner`.
pub fn joint_reg_loss_grad<T: Scalar>(
    word: &[T],
    joint_topics: &Matrix<T>,
    n_aspects: usize,
    dim: Dimension,
    owner: usize,
) -> SoftmaxGrad<T> {
    let logits: Vec<T> = joint_topics.iter_rows().map(|t| dot(t, word)).collect();
    let lse = log_sum_exp(&logits);
    let owned: Vec<T> = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| joint_in_label(j, dim, owner, n_aspects))
        .map(|(_, &z)| z)
        .collect();
    let lse_owned = log_sum_exp(&owned);
    let loss = lse - lse_owned;
    // dL/dz_j = p_j - [j owned] · p_j / m  =  p_j - [j owned] · softmax_owned_j
    let dz: Vec<T> = logits
        .iter()
        .enumerate()
        .map(|(j, &z)| {
            let p = (z - lse).exp();
            if joint_in_label(j, dim, owner, n_aspects) {
                p - (z - lse_owned).exp()
            } else {
                p
            }
        })
        .collect();
    topic_style_grads(loss, word, joint_topics, &dz)
}

/// `KL(U ‖ P(t | w))` over the rows of `topics`, i.e. how far a keyword's
/// posterior on the dimension it does not describe is from uniform.
pub fn cross_reg_loss_grad<T: Scalar>(word: &[T], topics: &Matrix<T>) -> SoftmaxGrad<T> {
    let logits: Vec<T> = topics.iter_rows().map(|t| dot(t, word)).collect();
    let n = T::from_usize_lossy(logits.len());
    let inv_n = T::one() / n;
    let lse = log_sum_exp(&logits);
    // Σ (1/n)(ln(1/n) - ln P_i)
    let loss = logits
        .iter()
        .map(|&z| inv_n * (-n.ln() - (z - lse)))
        .sum::<T>()
        .max(T::zero());
    let dz: Vec<T> = logits.iter().map(|&z| (z - lse).exp() - inv_n).collect();
    topic_style_grads(loss, word, topics, &dz)
}

/// `KL(U ‖ p)` for an explicit distribution.
pub fn kl_uniform<T: Scalar>(p: &[T]) -> T {
    let inv_n = T::one() / T::from_usize_lossy(p.len());
    p.iter().map(|&pi| inv_n * (inv_n / pi).ln()).sum()
}
