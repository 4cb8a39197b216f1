//! Sentence CNN: frozen embedding lookup, 1-D convolutions with ReLU,
//! max-over-time pooling, a linear layer and softmax. Forward and backward
//! passes are written out by hand.

use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, softmax, Matrix};
use crate::scalar::Scalar;

pub const CNN_MAGIC: &[u8; 4] = b"JCNN";
pub const CNN_VERSION: u8 = 1;

/// Filter widths and feature maps per width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CnnArch {
    pub widths: Vec<usize>,
    pub feature_maps: usize,
}

impl Default for CnnArch {
    fn default() -> Self {
        CnnArch {
            widths: vec![2, 3, 4],
            feature_maps: 20,
        }
    }
}

impl CnnArch {
    pub fn n_features(&self) -> usize {
        self.widths.len() * self.feature_maps
    }

    /// Documents are zero-padded to at least this many positions.
    pub fn min_len(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnHyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Upper bound on distillation epochs.
    pub pretrain_epochs: usize,
    /// Pre-training stops once the epoch loss improves by less than this.
    pub pretrain_tolerance: f64,
    pub max_self_train_epochs: usize,
    /// Self-training stops once fewer than this fraction of documents change label.
    pub change_threshold: f64,
    pub seed: u64,
    /// Worker threads for prediction passes.
    pub threads: usize,
}

impl Default for CnnHyperparams {
    fn default() -> Self {
        CnnHyperparams {
            learning_rate: 1e-3,
            batch_size: 16,
            pretrain_epochs: 50,
            pretrain_tolerance: 1e-4,
            max_self_train_epochs: 50,
            change_threshold: 1e-3,
            seed: 42,
            threads: 1,
        }
    }
}

impl CnnHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be > 0"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if self.threads < 1 {
            return Err(Error::invalid("threads must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.change_threshold) {
            return Err(Error::invalid("change threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// All kernels of one width.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBank<T> {
    pub width: usize,
    /// `maps × (width·dim)`; row `f` is kernel `f` flattened position-major.
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<T> {
    /// Frozen input embeddings, one row per vocabulary id.
    pub embeddings: Matrix<T>,
    pub banks: Vec<ConvBank<T>>,
    /// `features × classes`
    pub output_weights: Matrix<T>,
    pub output_bias: Vec<T>,
}

/// Gradient with the same layout as the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnGrad<T> {
    pub banks: Vec<(Matrix<T>, Vec<T>)>,
    pub output_weights: Matrix<T>,
    pub output_bias: Vec<T>,
}

struct ForwardCache<T> {
    input: Matrix<T>,
    pooled: Vec<T>,
    /// Position of the max for each feature; `None` when ReLU clipped it.
    argmax: Vec<Option<usize>>,
    logits: Vec<T>,
}

impl<T: Scalar> CnnModel<T> {
    /// Glorot-uniform kernels and output layer, zero biases.
    pub fn new<R: Rng + ?Sized>(embeddings: Matrix<T>, classes: usize, arch: &CnnArch, rng: &mut R) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("a classifier head needs at least 2 classes"));
        }
        if arch.widths.is_empty() || arch.feature_maps == 0 || arch.widths.contains(&0) {
            return Err(Error::invalid("CNN needs at least one non-zero filter width and feature map"));
        }
        let dim = embeddings.cols();
        let banks = arch
            .widths
            .iter()
            .map(|&w| {
                let limit = (6.0 / (w * dim + arch.feature_maps) as f64).sqrt();
                ConvBank {
                    width: w,
                    weights: Matrix::random_uniform(arch.feature_maps, w * dim, limit, rng),
                    bias: vec![T::zero(); arch.feature_maps],
                }
            })
            .collect();
        let features = arch.n_features();
        let limit = (6.0 / (features + classes) as f64).sqrt();
        Ok(CnnModel {
            embeddings,
            banks,
            output_weights: Matrix::random_uniform(features, classes, limit, rng),
            output_bias: vec![T::zero(); classes],
        })
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn classes(&self) -> usize {
        self.output_bias.len()
    }

    pub fn n_features(&self) -> usize {
        self.banks.iter().map(|b| b.bias.len()).sum()
    }

    pub fn arch(&self) -> CnnArch {
        CnnArch {
            widths: self.banks.iter().map(|b| b.width).collect(),
            feature_maps: self.banks.first().map_or(0, |b| b.bias.len()),
        }
    }

    fn min_len(&self) -> usize {
        self.banks.iter().map(|b| b.width).max().unwrap_or(1)
    }

    /// Token rows followed by zero rows up to the widest filter.
    fn embed(&self, token_ids: &[usize]) -> Matrix<T> {
        let dim = self.dim();
        let len = token_ids.len().max(self.min_len());
        let mut x = Matrix::zeros(len, dim);
        for (p, &id) in token_ids.iter().enumerate() {
            x.row_mut(p).copy_from_slice(self.embeddings.row(id));
        }
        x
    }

    fn forward_cached(&self, token_ids: &[usize]) -> ForwardCache<T> {
        let input = self.embed(token_ids);
        let dim = self.dim();
        let flat = input.as_slice();
        let mut pooled = Vec::with_capacity(self.n_features());
        let mut argmax = Vec::with_capacity(self.n_features());
        for bank in &self.banks {
            let span = bank.width * dim;
            let positions = input.rows() + 1 - bank.width;
            for (f, kernel) in bank.weights.iter_rows().enumerate().take(bank.bias.len()) {
                let mut best = T::neg_infinity();
                let mut best_pos = 0;
                for p in 0..positions {
                    let window = &flat[p * dim..p * dim + span];
                    let z = bank.bias[f] + crate::math::dot(kernel, window);
                    if z > best {
                        best = z;
                        best_pos = p;
                    }
                }
                if best > T::zero() {
                    pooled.push(best);
                    argmax.push(Some(best_pos));
                } else {
                    pooled.push(T::zero());
                    argmax.push(None);
                }
            }
        }
        let mut logits = self.output_bias.clone();
        for (h, wrow) in pooled.iter().zip(self.output_weights.iter_rows()) {
            if *h != T::zero() {
                crate::math::axpy(*h, wrow, &mut logits);
            }
        }
        ForwardCache {
            input,
            pooled,
            argmax,
            logits,
        }
    }

    /// Class probabilities for one document.
    pub fn forward(&self, token_ids: &[usize]) -> Vec<T> {
        softmax(&self.forward_cached(token_ids).logits)
    }

    pub fn zero_grad(&self) -> CnnGrad<T> {
        CnnGrad {
            banks: self
                .banks
                .iter()
                .map(|b| (Matrix::zeros(b.weights.rows(), b.weights.cols()), vec![T::zero(); b.bias.len()]))
                .collect(),
            output_weights: Matrix::zeros(self.output_weights.rows(), self.output_weights.cols()),
            output_bias: vec![T::zero(); self.classes()],
        }
    }

    /// Adds `scale · ∂H(target, q)/∂θ` for one document into `grad` and
    /// returns `H(target, q) = -Σ target·ln q`.
    fn accumulate(&self, token_ids: &[usize], target: &[T], scale: T, grad: &mut CnnGrad<T>) -> T {
        let cache = self.forward_cached(token_ids);
        let lse = log_sum_exp(&cache.logits);
        let loss = -target
            .iter()
            .zip(&cache.logits)
            .filter(|(&p, _)| p != T::zero())
            .map(|(&p, &z)| p * (z - lse))
            .sum::<T>();
        let target_mass: T = target.iter().copied().sum();
        // dH/dz = q·Σp - p
        let dlogits: Vec<T> = cache
            .logits
            .iter()
            .zip(target)
            .map(|(&z, &p)| scale * ((z - lse).exp() * target_mass - p))
            .collect();

        crate::math::axpy(T::one(), &dlogits, &mut grad.output_bias);
        let mut dpooled = vec![T::zero(); cache.pooled.len()];
        for (k, (&h, wrow)) in cache.pooled.iter().zip(self.output_weights.iter_rows()).enumerate() {
            if h != T::zero() {
                crate::math::axpy(h, &dlogits, grad.output_weights.row_mut(k));
            }
            dpooled[k] = crate::math::dot(wrow, &dlogits);
        }

        let dim = self.dim();
        let flat = cache.input.as_slice();
        let mut feature = 0;
        for (bank, (gw, gb)) in self.banks.iter().zip(grad.banks.iter_mut()) {
            let span = bank.width * dim;
            for f in 0..bank.bias.len() {
                if let Some(p) = cache.argmax[feature] {
                    let g = dpooled[feature];
                    gb[f] += g;
                    crate::math::axpy(g, &flat[p * dim..p * dim + span], gw.row_mut(f));
                }
                feature += 1;
            }
        }
        loss
    }

    /// Mean cross-entropy over a batch and its gradient.
    pub fn loss_and_grad<D: AsRef<[usize]>>(&self, batch: &[(D, &[T])]) -> (T, CnnGrad<T>) {
        let mut grad = self.zero_grad();
        if batch.is_empty() {
            return (T::zero(), grad);
        }
        let scale = T::one() / T::from_usize_lossy(batch.len());
        let mut total = T::zero();
        for (doc, target) in batch {
            total += self.accumulate(doc.as_ref(), target, scale, &mut grad);
        }
        (total * scale, grad)
    }

    /// `θ += alpha · grad`
    pub fn apply(&mut self, grad: &CnnGrad<T>, alpha: T) {
        for (bank, (gw, gb)) in self.banks.iter_mut().zip(&grad.banks) {
            crate::math::axpy(alpha, gw.as_slice(), bank.weights.as_mut_slice());
            crate::math::axpy(alpha, gb, &mut bank.bias);
        }
        crate::math::axpy(alpha, grad.output_weights.as_slice(), self.output_weights.as_mut_slice());
        crate::math::axpy(alpha, &grad.output_bias, &mut self.output_bias);
    }

    /// One plain SGD step on the mean batch cross-entropy against soft
    /// targets. Input embeddings stay frozen. Returns the pre-update loss.
    pub fn distill_step<D: AsRef<[usize]>>(&mut self, batch: &[(D, &[T])], lr: T) -> T {
        let (loss, grad) = self.loss_and_grad(batch);
        self.apply(&grad, -lr);
        loss
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings.is_finite()
            && self.output_weights.is_finite()
            && self.output_bias.iter().all(|x| x.is_finite())
            && self
                .banks
                .iter()
                .all(|b| b.weights.is_finite() && b.bias.iter().all(|x| x.is_finite()))
    }

    /// Trainable parameters flattened in serialization order.
    pub fn trainable_params(&self) -> Vec<T> {
        let mut out = Vec::new();
        for b in &self.banks {
            out.extend_from_slice(b.weights.as_slice());
            out.extend_from_slice(&b.bias);
        }
        out.extend_from_slice(self.output_weights.as_slice());
        out.extend_from_slice(&self.output_bias);
        out
    }

    pub fn set_trainable_params(&mut self, params: &[T]) {
        let mut rest = params;
        let mut take = |dst: &mut [T]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for b in &mut self.banks {
            take(b.weights.as_mut_slice());
            take(&mut b.bias);
        }
        take(self.output_weights.as_mut_slice());
        take(&mut self.output_bias);
        assert!(rest.is_empty(), "parameter vector too long");
    }

    /// Serializes as `JCNN`, a version byte, little-endian `u32` dimensions
    /// (vocab, dim, classes, feature maps, number of widths, widths...) and
    /// then `f32` parameter blocks: embeddings, each bank's kernels and
    /// biases, output weights, output bias.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CNN_MAGIC)?;
        w.write_all(&[CNN_VERSION])?;
        let arch = self.arch();
        let mut header = vec![
            self.embeddings.rows() as u32,
            self.dim() as u32,
            self.classes() as u32,
            arch.feature_maps as u32,
            arch.widths.len() as u32,
        ];
        header.extend(arch.widths.iter().map(|&x| x as u32));
        for v in header {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut block = |xs: &[T]| -> std::io::Result<()> {
            let mut buf = Vec::with_capacity(xs.len() * 4);
            for x in xs {
                buf.extend_from_slice(&x.as_f32().to_le_bytes());
            }
            w.write_all(&buf)
        };
        block(self.embeddings.as_slice())?;
        for b in &self.banks {
            block(b.weights.as_slice())?;
            block(&b.bias)?;
        }
        block(self.output_weights.as_slice())?;
        block(&self.output_bias)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_binary(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Format(format!("read failed: {e}")))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::Format(m.to_string());
        if bytes.len() < 5 || &bytes[..4] != CNN_MAGIC {
            return Err(corrupt("missing JCNN magic"));
        }
        if bytes[4] != CNN_VERSION {
            return Err(Error::Format(format!("unsupported CNN format version {}", bytes[4])));
        }
        let mut pos = 5;
        let u32_at = |pos: &mut usize| -> Result<usize> {
            let b = bytes.get(*pos..*pos + 4).ok_or_else(|| corrupt("truncated header"))?;
            *pos += 4;
            Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
        };
        let vocab = u32_at(&mut pos)?;
        let dim = u32_at(&mut pos)?;
        let classes = u32_at(&mut pos)?;
        let maps = u32_at(&mut pos)?;
        let n_widths = u32_at(&mut pos)?;
        if n_widths > 64 {
            return Err(corrupt("implausible number of filter widths"));
        }
        let widths: Vec<usize> = (0..n_widths).map(|_| u32_at(&mut pos)).collect::<Result<_>>()?;
        if classes < 2 || maps == 0 || widths.is_empty() || widths.contains(&0) {
            return Err(corrupt("invalid dimensions"));
        }
        let expected: usize = vocab * dim
            + widths.iter().map(|w| maps * w * dim + maps).sum::<usize>()
            + maps * widths.len() * classes
            + classes;
        if bytes.len() - pos != expected * 4 {
            return Err(Error::Format(format!(
                "expected {} parameter bytes, found {}",
                expected * 4,
                bytes.len() - pos
            )));
        }
        let mut floats = bytes[pos..]
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64));
        let mut take = |n: usize| -> Vec<T> { floats.by_ref().take(n).collect() };
        let embeddings = Matrix::from_vec(vocab, dim, take(vocab * dim));
        let banks = widths
            .iter()
            .map(|&w| ConvBank {
                width: w,
                weights: Matrix::from_vec(maps, w * dim, take(maps * w * dim)),
                bias: take(maps),
            })
            .collect();
        let features = maps * widths.len();
        let output_weights = Matrix::from_vec(features, classes, take(features * classes));
        let output_bias = take(classes);
        let model = CnnModel {
            embeddings,
            banks,
            output_weights,
            output_bias,
        };
        if !model.is_finite() {
            return Err(corrupt("non-finite parameters"));
        }
        Ok(model)
    }
}

/// Forward pass over many documents; `threads > 1` splits the list across
/// scoped worker threads. Output order matches input order.
pub fn predict_batch<T: Scalar, D: AsRef<[usize]> + Sync>(docs: &[D], model: &CnnModel<T>, threads: usize) -> Vec<Vec<T>> {
    if threads <= 1 || docs.len() < 2 * threads {
        return docs.iter().map(|d| model.forward(d.as_ref())).collect();
    }
    let chunk = docs.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = docs
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|d| model.forward(d.as_ref())).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("prediction worker panicked"))
            .collect()
    })
}

/// `H(p, q) = -Σ p ln q`
pub fn cross_entropy<T: Scalar>(p: &[T], q: &[T]) -> T {
    -p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi != T::zero())
        .map(|(&pi, &qi)| pi * qi.ln())
        .sum::<T>()
}
