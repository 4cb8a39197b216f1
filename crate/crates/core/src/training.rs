//! Two-phase classifier training: distillation from embedding-based soft
//! labels, then self-training against sharpened versions of the
//! classifier's own predictions.

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{encode_document, tokenize, Dimension, Document, TopicSchema, Vocabulary};
use crate::embedding::{train_embeddings, EmbedHyperparams, EmbeddingModel, TrainedEmbeddings};
use crate::error::{Error, Result};
use crate::inference::{embed_predict, Scoring, SoftPrediction, DEFAULT_TEMPERATURE};
use crate::math::argmax;
use crate::scalar::Scalar;
use crate::textcnn::{predict_batch, CnnArch, CnnHyperparams, CnnModel};

/// Soft label for every document from the embedding space. Documents whose
/// vector cannot be scored get a uniform distribution.
pub fn soft_labels<T: Scalar>(
    docs: &[&[usize]],
    model: &EmbeddingModel<T>,
    head: Dimension,
    temperature: T,
    scoring: Scoring,
) -> Result<Vec<Vec<T>>> {
    docs.iter()
        .map(|doc| match embed_predict(doc, model, temperature, scoring) {
            Ok(p) => Ok(p.dist(head).to_vec()),
            Err(Error::ZeroNorm) | Err(Error::EmptyDocument) => {
                warn!("document has no usable embedding; using a uniform soft label");
                Ok(SoftPrediction::uniform(model.n_aspects(), model.n_sentiments())
                    .dist(head)
                    .to_vec())
            }
            Err(e) => Err(e),
        })
        .collect()
}

/// One pass of shuffled mini-batch SGD against fixed targets. Returns the
/// mean per-document loss.
pub fn train_epoch<T: Scalar, R: Rng + ?Sized>(
    cnn: &mut CnnModel<T>,
    docs: &[&[usize]],
    targets: &[Vec<T>],
    hp: &CnnHyperparams,
    rng: &mut R,
) -> f64 {
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(rng);
    let lr = T::lit(hp.learning_rate);
    let mut total = 0.0;
    for chunk in order.chunks(hp.batch_size) {
        let batch: Vec<(&[usize], &[T])> = chunk.iter().map(|&i| (docs[i], targets[i].as_slice())).collect();
        let loss = cnn.distill_step(&batch, lr);
        total += loss.as_f64() * chunk.len() as f64;
    }
    total / docs.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub epoch_losses: Vec<f64>,
}

/// Distills soft targets into `cnn`, stopping early once the epoch loss
/// improves by less than `hp.pretrain_tolerance`.
pub fn pretrain_on_targets<T: Scalar, R: Rng + ?Sized>(
    cnn: &mut CnnModel<T>,
    docs: &[&[usize]],
    targets: &[Vec<T>],
    hp: &CnnHyperparams,
    rng: &mut R,
) -> Result<PretrainReport> {
    hp.validate()?;
    if docs.is_empty() {
        return Err(Error::invalid("no non-empty training documents"));
    }
    if docs.len() != targets.len() {
        return Err(Error::LengthMismatch(docs.len(), targets.len()));
    }
    let mut epoch_losses: Vec<f64> = Vec::new();
    for _ in 0..hp.pretrain_epochs {
        let loss = train_epoch(cnn, docs, targets, hp, rng);
        if !loss.is_finite() || !cnn.is_finite() {
            return Err(Error::Divergence {
                component: "distillation",
                epoch: epoch_losses.len() + 1,
            });
        }
        let improvement = epoch_losses.last().map(|&prev| prev - loss);
        epoch_losses.push(loss);
        if improvement.is_some_and(|d| d < hp.pretrain_tolerance) {
            break;
        }
    }
    Ok(PretrainReport { epoch_losses })
}

/// Computes embedding-based soft labels for `docs` and distills them into `cnn`.
#[allow(clippy::too_many_arguments)]
pub fn pretrain<T: Scalar, R: Rng + ?Sized>(
    docs: &[&[usize]],
    model: &EmbeddingModel<T>,
    cnn: &mut CnnModel<T>,
    head: Dimension,
    temperature: f64,
    scoring: Scoring,
    hp: &CnnHyperparams,
    rng: &mut R,
) -> Result<PretrainReport> {
    let targets = soft_labels(docs, model, head, T::lit(temperature), scoring)?;
    pretrain_on_targets(cnn, docs, &targets, hp, rng)
}

/// Squares each prediction, divides by the class's total predicted mass over
/// all rows and renormalizes per row.
///
/// A class with zero total mass gets a zero target column. A row whose
/// every class has zero mass is an error.
pub fn target_distribution<T: Scalar>(predictions: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    let Some(first) = predictions.first() else {
        return Ok(Vec::new());
    };
    let classes = first.len();
    if predictions.iter().any(|p| p.len() != classes) {
        return Err(Error::invalid("prediction rows differ in length"));
    }
    let mut freq = vec![T::zero(); classes];
    for row in predictions {
        for (f, &p) in freq.iter_mut().zip(row) {
            *f += p;
        }
    }
    predictions
        .iter()
        .map(|row| {
            let weighted: Vec<T> = row
                .iter()
                .zip(&freq)
                .map(|(&p, &f)| if f > T::zero() { p * p / f } else { T::zero() })
                .collect();
            let total: T = weighted.iter().copied().sum();
            if !(total > T::zero()) {
                let dead = freq.iter().position(|f| !(*f > T::zero())).unwrap_or(0);
                return Err(Error::VanishingTarget(dead));
            }
            Ok(weighted.into_iter().map(|w| w / total).collect())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfTrainEpoch {
    pub epoch: usize,
    pub loss: f64,
    /// Fraction of documents whose argmax label changed over this epoch.
    pub change_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfTrainReport {
    pub epochs: Vec<SelfTrainEpoch>,
    /// Stopped because the change rate fell below the threshold rather than
    /// hitting the epoch cap.
    pub converged: bool,
    /// Final argmax labels of the training documents.
    pub labels: Vec<usize>,
}

impl SelfTrainReport {
    pub fn change_rates(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.change_rate).collect()
    }
}

/// Repeats: predict every document, build sharpened targets, train one
/// epoch on them, and measure how many argmax labels moved. Stops when the
/// fraction moved drops below `hp.change_threshold` or after
/// `hp.max_self_train_epochs` epochs.
pub fn self_train<T: Scalar, R: Rng + ?Sized>(
    docs: &[&[usize]],
    cnn: &mut CnnModel<T>,
    hp: &CnnHyperparams,
    rng: &mut R,
) -> Result<SelfTrainReport> {
    hp.validate()?;
    let mut preds = predict_batch(docs, cnn, hp.threads);
    let mut labels: Vec<usize> = preds.iter().map(|p| argmax(p)).collect();
    let mut epochs = Vec::new();
    let mut converged = false;
    for epoch in 1..=hp.max_self_train_epochs {
        let targets = target_distribution(&preds)?;
        let loss = train_epoch(cnn, docs, &targets, hp, rng);
        if !loss.is_finite() || !cnn.is_finite() {
            return Err(Error::Divergence {
                component: "self-training",
                epoch,
            });
        }
        preds = predict_batch(docs, cnn, hp.threads);
        let new_labels: Vec<usize> = preds.iter().map(|p| argmax(p)).collect();
        let changed = labels.iter().zip(&new_labels).filter(|(a, b)| a != b).count();
        let change_rate = changed as f64 / docs.len().max(1) as f64;
        labels = new_labels;
        epochs.push(SelfTrainEpoch {
            epoch,
            loss,
            change_rate,
        });
        if change_rate < hp.change_threshold {
            converged = true;
            break;
        }
    }
    Ok(SelfTrainReport {
        epochs,
        converged,
        labels,
    })
}

/// Everything the end-to-end run needs beyond the data.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub embed: EmbedHyperparams,
    pub cnn: CnnHyperparams,
    pub arch: CnnArch,
    pub temperature: f64,
    /// Ignored (forced to marginal-only) when joint topics are disabled.
    pub scoring: Scoring,
    /// Skip self-training and keep the distilled classifiers.
    pub skip_self_train: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            embed: EmbedHyperparams::default(),
            cnn: CnnHyperparams::default(),
            arch: CnnArch::default(),
            temperature: DEFAULT_TEMPERATURE,
            scoring: Scoring::Combined,
            skip_self_train: false,
        }
    }
}

impl PipelineConfig {
    pub fn effective_scoring(&self) -> Scoring {
        if self.embed.use_joint {
            self.scoring
        } else {
            Scoring::MarginalOnly
        }
    }
}

/// Outcome of training one classifier head.
#[derive(Debug, Clone)]
pub struct HeadOutcome<T> {
    pub dimension: Dimension,
    pub cnn: CnnModel<T>,
    /// Snapshot taken after distillation, before self-training.
    pub pretrained: CnnModel<T>,
    pub pretrain: PretrainReport,
    pub self_train: SelfTrainReport,
    /// Majority final label over the training documents; used for test
    /// documents with no in-vocabulary token.
    pub fallback_label: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<T> {
    pub embedding: TrainedEmbeddings<T>,
    pub aspect: HeadOutcome<T>,
    pub sentiment: HeadOutcome<T>,
    /// `key=value` training log, one record per line.
    pub log: Vec<String>,
}

fn majority(labels: &[usize], classes: usize) -> usize {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    // first maximum wins ties
    (0..classes).fold(0, |best, c| if counts[c] > counts[best] { c } else { best })
}

fn train_head<T: Scalar>(
    dimension: Dimension,
    docs: &[&[usize]],
    model: &EmbeddingModel<T>,
    config: &PipelineConfig,
    log: &mut Vec<String>,
) -> Result<HeadOutcome<T>> {
    let stream = match dimension {
        Dimension::Aspect => 1,
        Dimension::Sentiment => 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.cnn.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream));
    let classes = model.labels(dimension).len();
    let mut cnn = CnnModel::new(model.center.clone(), classes, &config.arch, &mut rng)?;
    let head = dimension.name();

    let pretrain = pretrain(
        docs,
        model,
        &mut cnn,
        dimension,
        config.temperature,
        config.effective_scoring(),
        &config.cnn,
        &mut rng,
    )
    .map_err(|e| e.in_stage("pretrain"))?;
    for (i, loss) in pretrain.epoch_losses.iter().enumerate() {
        let line = format!("stage=pretrain head={head} epoch={} loss={loss:.6}", i + 1);
        info!("{line}");
        log.push(line);
    }
    let pretrained = cnn.clone();

    let self_train = if config.skip_self_train {
        let labels = predict_batch(docs, &cnn, config.cnn.threads)
            .iter()
            .map(|p| argmax(p))
            .collect();
        SelfTrainReport {
            epochs: Vec::new(),
            converged: false,
            labels,
        }
    } else {
        self_train(docs, &mut cnn, &config.cnn, &mut rng).map_err(|e| e.in_stage("self-train"))?
    };
    for e in &self_train.epochs {
        let line = format!(
            "stage=self_train head={head} epoch={} loss={:.6} change_rate={:.6}",
            e.epoch, e.loss, e.change_rate
        );
        info!("{line}");
        log.push(line);
    }
    log.push(format!(
        "stage=self_train head={head} converged={} epochs={}",
        self_train.converged,
        self_train.epochs.len()
    ));
    let fallback_label = majority(&self_train.labels, classes);
    Ok(HeadOutcome {
        dimension,
        cnn,
        pretrained,
        pretrain,
        self_train,
        fallback_label,
    })
}

/// Embedding training, then distillation and self-training of the aspect
/// and sentiment heads. Documents empty after filtering are excluded from
/// the classifier phases.
pub fn run_pipeline<T: Scalar>(
    docs: &[Document],
    vocab: &Vocabulary,
    schema: &TopicSchema,
    config: &PipelineConfig,
) -> Result<PipelineOutput<T>> {
    if !(config.temperature > 0.0) {
        return Err(Error::invalid("temperature must be > 0"));
    }
    config.cnn.validate()?;
    let embedding = train_embeddings::<T>(docs, vocab, schema, &config.embed).map_err(|e| e.in_stage("embedding"))?;
    let mut log: Vec<String> = embedding.reports.iter().map(|r| r.log_line()).collect();

    let train_docs: Vec<&[usize]> = docs
        .iter()
        .filter(|d| !d.is_empty())
        .map(|d| d.token_ids.as_slice())
        .collect();
    let aspect = train_head(Dimension::Aspect, &train_docs, &embedding.model, config, &mut log)?;
    let sentiment = train_head(Dimension::Sentiment, &train_docs, &embedding.model, config, &mut log)?;
    Ok(PipelineOutput {
        embedding,
        aspect,
        sentiment,
        log,
    })
}

/// Predicted labels and class probabilities for one text.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled<T> {
    pub aspect: usize,
    pub sentiment: usize,
    pub aspect_probs: Vec<T>,
    pub sentiment_probs: Vec<T>,
    /// No token survived vocabulary filtering; labels are the fallbacks.
    pub fallback: bool,
}

/// Trained aspect and sentiment heads bundled with their vocabulary.
#[derive(Debug, Clone)]
pub struct Classifier<'a, T> {
    pub vocab: &'a Vocabulary,
    pub aspect: &'a CnnModel<T>,
    pub sentiment: &'a CnnModel<T>,
    pub fallback_aspect: usize,
    pub fallback_sentiment: usize,
}

impl<T: Scalar> Classifier<'_, T> {
    pub fn encode(&self, text: &str) -> Vec<usize> {
        encode_document(&tokenize(text), self.vocab, 0).token_ids
    }

    fn one_hot(n: usize, k: usize) -> Vec<T> {
        (0..n).map(|i| if i == k { T::one() } else { T::zero() }).collect()
    }

    /// Argmax labels (lower index on ties) with their distributions.
    pub fn classify_ids(&self, ids: &[usize]) -> Labeled<T> {
        if ids.is_empty() {
            return Labeled {
                aspect: self.fallback_aspect,
                sentiment: self.fallback_sentiment,
                aspect_probs: Self::one_hot(self.aspect.classes(), self.fallback_aspect),
                sentiment_probs: Self::one_hot(self.sentiment.classes(), self.fallback_sentiment),
                fallback: true,
            };
        }
        let aspect_probs = self.aspect.forward(ids);
        let sentiment_probs = self.sentiment.forward(ids);
        Labeled {
            aspect: argmax(&aspect_probs),
            sentiment: argmax(&sentiment_probs),
            aspect_probs,
            sentiment_probs,
            fallback: false,
        }
    }

    pub fn classify(&self, text: &str) -> Labeled<T> {
        self.classify_ids(&self.encode(text))
    }

    pub fn classify_all<S: AsRef<str> + Sync>(&self, texts: &[S], threads: usize) -> Vec<Labeled<T>>
    where
        T: Scalar,
    {
        if threads <= 1 || texts.len() < 2 * threads {
            return texts.iter().map(|t| self.classify(t.as_ref())).collect();
        }
        let chunk = texts.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = texts
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|t| self.classify(t.as_ref())).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("classification worker panicked"))
                .collect()
        })
    }
}

impl<T: Scalar> PipelineOutput<T> {
    pub fn classifier<'a>(&'a self, vocab: &'a Vocabulary) -> Classifier<'a, T> {
        Classifier {
            vocab,
            aspect: &self.aspect.cnn,
            sentiment: &self.sentiment.cnn,
            fallback_aspect: self.aspect.fallback_label,
            fallback_sentiment: self.sentiment.fallback_label,
        }
    }

    /// Classifier built from the distilled heads before self-training.
    pub fn pretrained_classifier<'a>(&'a self, vocab: &'a Vocabulary) -> Classifier<'a, T> {
        Classifier {
            vocab,
            aspect: &self.aspect.pretrained,
            sentiment: &self.sentiment.pretrained,
            fallback_aspect: self.aspect.fallback_label,
            fallback_sentiment: self.sentiment.fallback_label,
        }
    }
}
