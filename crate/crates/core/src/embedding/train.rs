use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use log::info;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{
    cross_reg_loss_grad, full_softmax_loss_grad, joint_reg_loss_grad, negative_sampling_loss_grad,
    pure_reg_loss_grad, SoftmaxGrad,
};
use super::{init_topics, EmbedHyperparams, EmbeddingModel};
use crate::corpus::{resolve_keywords, Dimension, Document, ResolvedKeywords, TopicSchema, Vocabulary};
use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::scalar::Scalar;

/// Unweighted per-term loss sums for one epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub local: f64,
    pub global: f64,
    pub reg: f64,
    pub joint: f64,
    pub cross: f64,
}

impl LossBreakdown {
    fn merge(&mut self, o: &LossBreakdown) {
        self.local += o.local;
        self.global += o.global;
        self.reg += o.reg;
        self.joint += o.joint;
        self.cross += o.cross;
    }

    /// `local + λ_g·global + λ_r·(reg + joint + cross)`
    pub fn total(&self, lambda_g: f64, lambda_r: f64) -> f64 {
        self.local + lambda_g * self.global + lambda_r * (self.reg + self.joint + self.cross)
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("local", self.local),
            ("global", self.global),
            ("reg", self.reg),
            ("joint", self.joint),
            ("cross", self.cross),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    /// The first epoch trains context terms only, before topics exist.
    pub warmup: bool,
    pub lr: f64,
    pub losses: LossBreakdown,
    pub total: f64,
}

impl EpochReport {
    pub fn log_line(&self) -> String {
        let l = &self.losses;
        format!(
            "stage=embedding epoch={} phase={} lr={:.6} local={:.6} global={:.6} reg={:.6} joint={:.6} cross={:.6} total={:.6}",
            self.epoch,
            if self.warmup { "warmup" } else { "full" },
            self.lr,
            l.local,
            l.global,
            l.reg,
            l.joint,
            l.cross,
            self.total
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainedEmbeddings<T> {
    pub model: EmbeddingModel<T>,
    pub keywords: ResolvedKeywords,
    pub reports: Vec<EpochReport>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Block {
    Center,
    Context,
    Docs,
    Aspect,
    Sentiment,
    Joint,
}

impl Block {
    fn topics(dim: Dimension) -> Self {
        match dim {
            Dimension::Aspect => Block::Aspect,
            Dimension::Sentiment => Block::Sentiment,
        }
    }
}

/// Row-level parameter access used by the SGD inner loop.
trait ParamStore<T: Scalar> {
    fn read(&mut self, block: Block, row: usize, out: &mut [T]);
    /// `row += alpha * delta`
    fn add(&mut self, block: Block, row: usize, alpha: T, delta: &[T]);
    fn rows(&self, block: Block) -> usize;

    fn read_matrix(&mut self, block: Block, dim: usize) -> Matrix<T> {
        let mut m = Matrix::zeros(self.rows(block), dim);
        for r in 0..m.rows() {
            self.read(block, r, m.row_mut(r));
        }
        m
    }

    fn add_matrix(&mut self, block: Block, alpha: T, delta: &Matrix<T>) {
        for r in 0..delta.rows() {
            self.add(block, r, alpha, delta.row(r));
        }
    }
}

impl<T: Scalar> EmbeddingModel<T> {
    fn block(&self, b: Block) -> &Matrix<T> {
        match b {
            Block::Center => &self.center,
            Block::Context => &self.context,
            Block::Docs => &self.docs,
            Block::Aspect => &self.aspect_topics,
            Block::Sentiment => &self.sentiment_topics,
            Block::Joint => &self.joint_topics,
        }
    }

    fn block_mut(&mut self, b: Block) -> &mut Matrix<T> {
        match b {
            Block::Center => &mut self.center,
            Block::Context => &mut self.context,
            Block::Docs => &mut self.docs,
            Block::Aspect => &mut self.aspect_topics,
            Block::Sentiment => &mut self.sentiment_topics,
            Block::Joint => &mut self.joint_topics,
        }
    }
}

impl<T: Scalar> ParamStore<T> for EmbeddingModel<T> {
    #[inline]
    fn read(&mut self, block: Block, row: usize, out: &mut [T]) {
        out.copy_from_slice(self.block(block).row(row));
    }

    #[inline]
    fn add(&mut self, block: Block, row: usize, alpha: T, delta: &[T]) {
        crate::math::axpy(alpha, delta, self.block_mut(block).row_mut(row));
    }

    fn rows(&self, block: Block) -> usize {
        self.block(block).rows()
    }
}

/// Parameters shared between worker threads. Each value is an `f64` bit
/// pattern in an `AtomicU64`; reads and writes are relaxed and updates are
/// unsynchronized read-modify-write, so concurrent updates to the same row
/// may be lost.
struct SharedParams {
    dim: usize,
    blocks: [Vec<AtomicU64>; 6],
}

impl SharedParams {
    fn from_model<T: Scalar>(m: &EmbeddingModel<T>) -> Self {
        let pack = |mat: &Matrix<T>| mat.as_slice().iter().map(|x| AtomicU64::new(x.as_f64().to_bits())).collect();
        SharedParams {
            dim: m.dim,
            blocks: [
                pack(&m.center),
                pack(&m.context),
                pack(&m.docs),
                pack(&m.aspect_topics),
                pack(&m.sentiment_topics),
                pack(&m.joint_topics),
            ],
        }
    }

    fn block(&self, b: Block) -> &[AtomicU64] {
        &self.blocks[b as usize]
    }

    fn write_back<T: Scalar>(&self, m: &mut EmbeddingModel<T>) {
        for b in [Block::Center, Block::Context, Block::Docs, Block::Aspect, Block::Sentiment, Block::Joint] {
            for (dst, src) in m.block_mut(b).as_mut_slice().iter_mut().zip(self.block(b)) {
                *dst = T::lit(f64::from_bits(src.load(Ordering::Relaxed)));
            }
        }
    }
}

struct SharedHandle<'a>(&'a SharedParams);

impl<T: Scalar> ParamStore<T> for SharedHandle<'_> {
    fn read(&mut self, block: Block, row: usize, out: &mut [T]) {
        let d = self.0.dim;
        for (o, a) in out.iter_mut().zip(&self.0.block(block)[row * d..(row + 1) * d]) {
            *o = T::lit(f64::from_bits(a.load(Ordering::Relaxed)));
        }
    }

    fn add(&mut self, block: Block, row: usize, alpha: T, delta: &[T]) {
        let d = self.0.dim;
        let alpha = alpha.as_f64();
        for (a, x) in self.0.block(block)[row * d..(row + 1) * d].iter().zip(delta) {
            let cur = f64::from_bits(a.load(Ordering::Relaxed));
            a.store((cur + alpha * x.as_f64()).to_bits(), Ordering::Relaxed);
        }
    }

    fn rows(&self, block: Block) -> usize {
        self.0.block(block).len() / self.0.dim.max(1)
    }
}

/// Read-only state shared by every worker during an epoch.
struct EpochContext<'a> {
    docs: &'a [Document],
    /// Indices of documents with at least one token; the sampling pool for
    /// negative documents.
    nonempty: &'a [usize],
    hp: &'a EmbedHyperparams,
    memberships: &'a [Vec<(Dimension, usize)>],
    unigram: &'a WeightedIndex<f64>,
    vocab_len: usize,
    keep_prob: Option<&'a [f64]>,
    n_aspects: usize,
    regularize: bool,
    total_work: usize,
    progress: &'a AtomicUsize,
    epoch: usize,
}

impl EpochContext<'_> {
    fn lr(&self) -> f64 {
        let done = self.progress.load(Ordering::Relaxed) as f64;
        let frac = (done / self.total_work.max(1) as f64).min(1.0);
        self.hp.lr_start - (self.hp.lr_start - self.hp.lr_end) * frac
    }
}

fn check_loss<T: Scalar>(x: T, component: &'static str, epoch: usize) -> Result<f64> {
    let v = x.as_f64();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence { component, epoch })
    }
}

fn apply_topic_grad<T: Scalar, P: ParamStore<T>>(
    store: &mut P,
    word: usize,
    block: Block,
    g: &SoftmaxGrad<T>,
    step: T,
) {
    store.add(Block::Center, word, -step, &g.input);
    store.add_matrix(block, -step, &g.outputs);
}

fn run_worker<T: Scalar, P: ParamStore<T>, R: Rng>(
    store: &mut P,
    ctx: &EpochContext<'_>,
    order: &[usize],
    rng: &mut R,
) -> Result<LossBreakdown> {
    let hp = ctx.hp;
    let dim = hp.dim;
    let epoch = ctx.epoch;
    let mut losses = LossBreakdown::default();
    let mut u = vec![T::zero(); dim];
    let mut v = vec![T::zero(); dim];
    let mut neg_buf = vec![T::zero(); dim * hp.negatives];
    let mut neg_ids = Vec::with_capacity(hp.negatives);
    let mut seq = Vec::new();
    let lambda_g = T::lit(hp.lambda_g);
    let lambda_r = T::lit(hp.lambda_r);

    for &d in order {
        let doc = &ctx.docs[d];
        seq.clear();
        match ctx.keep_prob {
            Some(keep) => seq.extend(doc.token_ids.iter().copied().filter(|&w| rng.random::<f64>() < keep[w])),
            None => seq.extend_from_slice(&doc.token_ids),
        }

        for i in 0..seq.len() {
            let lr = T::lit(ctx.lr());
            let w = seq[i];

            // local context
            let lo = i.saturating_sub(hp.window);
            let hi = (i + hp.window).min(seq.len() - 1);
            for (j, &c) in seq.iter().enumerate().take(hi + 1).skip(lo) {
                if j == i {
                    continue;
                }
                store.read(Block::Center, w, &mut u);
                if hp.exact_softmax {
                    let outputs = store.read_matrix(Block::Context, dim);
                    let g = full_softmax_loss_grad(&u, &outputs, c);
                    losses.local += check_loss(g.loss, "local", epoch)?;
                    apply_topic_grad(store, w, Block::Context, &g, lr);
                    continue;
                }
                store.read(Block::Context, c, &mut v);
                neg_ids.clear();
                if ctx.vocab_len > 1 {
                    while neg_ids.len() < hp.negatives {
                        let n = ctx.unigram.sample(rng);
                        if n != c {
                            neg_ids.push(n);
                        }
                    }
                }
                for (k, &n) in neg_ids.iter().enumerate() {
                    store.read(Block::Context, n, &mut neg_buf[k * dim..(k + 1) * dim]);
                }
                let negs: Vec<&[T]> = neg_buf.chunks_exact(dim).take(neg_ids.len()).collect();
                let g = negative_sampling_loss_grad(&u, &v, &negs);
                losses.local += check_loss(g.loss, "local", epoch)?;
                store.add(Block::Context, c, -lr, &g.positive);
                for (&n, gn) in neg_ids.iter().zip(&g.negatives) {
                    store.add(Block::Context, n, -lr, gn);
                }
                store.add(Block::Center, w, -lr, &g.input);
            }

            // global context
            let step = lr * lambda_g;
            store.read(Block::Center, w, &mut u);
            if hp.exact_softmax {
                let outputs = store.read_matrix(Block::Docs, dim);
                let g = full_softmax_loss_grad(&u, &outputs, d);
                losses.global += check_loss(g.loss, "global", epoch)?;
                apply_topic_grad(store, w, Block::Docs, &g, step);
            } else {
                store.read(Block::Docs, d, &mut v);
                neg_ids.clear();
                if ctx.nonempty.len() > 1 {
                    while neg_ids.len() < hp.negatives {
                        let n = ctx.nonempty[rng.random_range(0..ctx.nonempty.len())];
                        if n != d {
                            neg_ids.push(n);
                        }
                    }
                }
                for (k, &n) in neg_ids.iter().enumerate() {
                    store.read(Block::Docs, n, &mut neg_buf[k * dim..(k + 1) * dim]);
                }
                let negs: Vec<&[T]> = neg_buf.chunks_exact(dim).take(neg_ids.len()).collect();
                let g = negative_sampling_loss_grad(&u, &v, &negs);
                losses.global += check_loss(g.loss, "global", epoch)?;
                store.add(Block::Docs, d, -step, &g.positive);
                for (&n, gn) in neg_ids.iter().zip(&g.negatives) {
                    store.add(Block::Docs, n, -step, gn);
                }
                store.add(Block::Center, w, -step, &g.input);
            }

            // keyword regularizers, once per keyword occurrence
            if ctx.regularize {
                let step = lr * lambda_r;
                for &(dimension, label) in &ctx.memberships[w] {
                    let own = Block::topics(dimension);
                    store.read(Block::Center, w, &mut u);
                    let topics = store.read_matrix(own, dim);
                    let g = pure_reg_loss_grad(&u, &topics, label);
                    losses.reg += check_loss(g.loss, "reg", epoch)?;
                    apply_topic_grad(store, w, own, &g, step);

                    if hp.use_joint {
                        store.read(Block::Center, w, &mut u);
                        let joint = store.read_matrix(Block::Joint, dim);
                        let g = joint_reg_loss_grad(&u, &joint, ctx.n_aspects, dimension, label);
                        losses.joint += check_loss(g.loss, "joint", epoch)?;
                        apply_topic_grad(store, w, Block::Joint, &g, step);

                        let other = Block::topics(dimension.other());
                        store.read(Block::Center, w, &mut u);
                        let topics = store.read_matrix(other, dim);
                        let g = cross_reg_loss_grad(&u, &topics);
                        losses.cross += check_loss(g.loss, "cross", epoch)?;
                        apply_topic_grad(store, w, other, &g, step);
                    }
                }
            }

            ctx.progress.fetch_add(1, Ordering::Relaxed);
        }
    }
    Ok(losses)
}

fn keep_probabilities(vocab: &Vocabulary, threshold: f64) -> Vec<f64> {
    let total: u64 = vocab.counts().iter().sum();
    vocab
        .counts()
        .iter()
        .map(|&c| {
            let f = c as f64 / total.max(1) as f64;
            if f <= 0.0 {
                1.0
            } else {
                (((f / threshold).sqrt() + 1.0) * threshold / f).min(1.0)
            }
        })
        .collect()
}

/// Trains word, document and topic embeddings.
///
/// The first epoch optimizes the local and global context terms only. Topic
/// vectors are then initialized from keyword averages and the remaining
/// epochs optimize the full objective including the keyword regularizers.
pub fn train_embeddings<T: Scalar>(
    docs: &[Document],
    vocab: &Vocabulary,
    schema: &TopicSchema,
    hp: &EmbedHyperparams,
) -> Result<TrainedEmbeddings<T>> {
    hp.validate()?;
    schema.validate()?;
    if docs.iter().any(|d| d.token_ids.iter().any(|&w| w >= vocab.len())) {
        return Err(Error::invalid("document contains an id outside the vocabulary"));
    }
    let nonempty: Vec<usize> = (0..docs.len()).filter(|&i| !docs[i].is_empty()).collect();
    if nonempty.is_empty() {
        return Err(Error::invalid("corpus has no non-empty documents"));
    }
    let keywords = resolve_keywords(schema, vocab)?;
    let memberships = keywords.memberships(vocab.len());

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut model = EmbeddingModel::<T>::new(vocab.tokens().to_vec(), schema, docs.len(), hp.dim, &mut rng);

    let unigram = WeightedIndex::new(vocab.counts().iter().map(|&c| (c.max(1) as f64).powf(0.75)))
        .map_err(|e| Error::invalid(format!("unigram table: {e}")))?;
    let keep = hp.subsample.map(|t| keep_probabilities(vocab, t));
    let tokens_per_epoch: usize = docs.iter().map(Document::len).sum();
    let progress = AtomicUsize::new(0);
    let mut reports = Vec::with_capacity(hp.epochs);
    let mut order = nonempty.clone();

    for epoch in 1..=hp.epochs {
        let warmup = epoch == 1;
        if epoch == 2 {
            init_topics(&mut model, &keywords)?;
        }
        order.shuffle(&mut rng);
        let ctx = EpochContext {
            docs,
            nonempty: &nonempty,
            hp,
            memberships: &memberships,
            unigram: &unigram,
            vocab_len: vocab.len(),
            keep_prob: keep.as_deref(),
            n_aspects: schema.aspects.len(),
            regularize: !warmup,
            total_work: tokens_per_epoch * hp.epochs,
            progress: &progress,
            epoch,
        };

        let losses = if hp.threads <= 1 {
            run_worker(&mut model, &ctx, &order, &mut rng)?
        } else {
            let shared = SharedParams::from_model(&model);
            let chunk = order.len().div_ceil(hp.threads);
            let seeds: Vec<u64> = (0..hp.threads).map(|_| rng.next_u64()).collect();
            let results: Vec<Result<LossBreakdown>> = std::thread::scope(|scope| {
                let handles: Vec<_> = order
                    .chunks(chunk.max(1))
                    .zip(&seeds)
                    .map(|(part, &seed)| {
                        let shared = &shared;
                        let ctx = &ctx;
                        scope.spawn(move || {
                            let mut worker_rng = ChaCha8Rng::seed_from_u64(seed);
                            run_worker::<T, _, _>(&mut SharedHandle(shared), ctx, part, &mut worker_rng)
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("embedding worker panicked")).collect()
            });
            shared.write_back(&mut model);
            let mut total = LossBreakdown::default();
            for r in results {
                total.merge(&r?);
            }
            total
        };

        if let Some(component) = losses.first_non_finite() {
            return Err(Error::Divergence { component, epoch });
        }
        if !model.is_finite() {
            return Err(Error::Divergence {
                component: "parameters",
                epoch,
            });
        }
        let report = EpochReport {
            epoch,
            warmup,
            lr: ctx.lr(),
            losses,
            total: losses.total(hp.lambda_g, hp.lambda_r),
        };
        info!("{}", report.log_line());
        reports.push(report);
    }
    if hp.epochs == 1 {
        init_topics(&mut model, &keywords)?;
    }

    Ok(TrainedEmbeddings {
        model,
        keywords,
        reports,
    })
}
