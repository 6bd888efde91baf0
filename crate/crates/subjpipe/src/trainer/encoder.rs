//! The pluggable sequence-classification encoder interface and the tiny
//! deterministic reference encoder used for desk-scale verification.
//!
//! The reference encoder is a mean-of-token-embeddings model with a single
//! linear layer to three logits. It exists so the full training and
//! prediction path can be exercised and gradient-checked without external
//! weights; real encoders plug in behind [`Encoder`].

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ioutil;
use crate::labels::SentimentLogits;
use crate::par;

/// Token id reserved for out-of-vocabulary words.
pub const OOV_ID: u32 = 0;

/// A padded batch of token-id rows. Mask value 1 marks a real token; 0
/// marks padding, which must never influence logits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    ids: Vec<u32>,
    mask: Vec<u8>,
    examples: usize,
    width: usize,
}

impl TokenBatch {
    /// Pad variable-length rows to the longest row.
    pub fn from_rows<R: AsRef<[u32]>>(rows: &[R]) -> TokenBatch {
        let examples = rows.len();
        let width = rows.iter().map(|r| r.as_ref().len()).max().unwrap_or(0);
        let mut ids = vec![0u32; examples * width];
        let mut mask = vec![0u8; examples * width];
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            ids[i * width..i * width + row.len()].copy_from_slice(row);
            mask[i * width..i * width + row.len()].fill(1);
        }
        TokenBatch {
            ids,
            mask,
            examples,
            width,
        }
    }

    /// Build from an explicit id/mask matrix, e.g. to test padding rules.
    pub fn from_padded(ids: Vec<u32>, mask: Vec<u8>, examples: usize, width: usize) -> Result<TokenBatch> {
        if ids.len() != examples * width || mask.len() != examples * width {
            return Err(Error::invalid("token batch dimensions do not agree"));
        }
        Ok(TokenBatch {
            ids,
            mask,
            examples,
            width,
        })
    }

    pub fn examples(&self) -> usize {
        self.examples
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_empty(&self) -> bool {
        self.examples == 0
    }

    /// One example's id row and mask row.
    pub fn example(&self, i: usize) -> (&[u32], &[u8]) {
        let range = i * self.width..(i + 1) * self.width;
        (&self.ids[range.clone()], &self.mask[range])
    }
}

/// A trainable 3-class sequence classifier.
///
/// `forward` must be deterministic given parameters and input, and safe to
/// call concurrently; parameter updates stay exclusive to the training
/// thread. `backward` receives per-example loss gradients with respect to
/// the logits and returns the gradient over the flat parameter vector.
pub trait Encoder: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<u32>;

    fn forward(&self, batch: &TokenBatch) -> Vec<SentimentLogits>;

    fn backward(&self, batch: &TokenBatch, grad_logits: &[[f64; 3]]) -> Vec<f64>;

    /// Flat view of the trainable parameters.
    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];
}

/// Mean-of-embeddings reference model: embeddings for OOV plus each vocab
/// word, one linear layer to 3 logits, whitespace tokenizer with lowercase
/// folding. Parameters are drawn uniformly from [-0.1, 0.1] by a
/// seed-determined generator.
#[derive(Debug, Clone)]
pub struct ReferenceEncoder {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    dim: usize,
    params: Vec<f64>,
}


impl ReferenceEncoder {
    pub fn new(vocab: Vec<String>, dim: usize, seed: u64) -> Result<ReferenceEncoder> {
        if vocab.is_empty() {
            return Err(Error::invalid("reference encoder: empty vocab"));
        }
        if dim < 2 {
            return Err(Error::invalid("reference encoder: dim must be at least 2"));
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, word) in vocab.iter().enumerate() {
            if index.insert(word.clone(), (i + 1) as u32).is_some() {
                return Err(Error::invalid(format!(
                    "reference encoder: duplicate vocab word \"{word}\""
                )));
            }
        }
        let count = Self::param_count(vocab.len(), dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..count).map(|_| rng.random_range(-0.1..=0.1)).collect();
        Ok(ReferenceEncoder {
            vocab,
            index,
            dim,
            params,
        })
    }

    pub fn param_count(vocab_len: usize, dim: usize) -> usize {
        (vocab_len + 1) * dim + 3 * dim + 3
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn rows(&self) -> usize {
        self.vocab.len() + 1
    }

    fn weight_offset(&self) -> usize {
        self.rows() * self.dim
    }

    fn bias_offset(&self) -> usize {
        self.weight_offset() + 3 * self.dim
    }

    /// Mean of the unmasked token embeddings; zero when the row has no
    /// real tokens.
    fn mean_embedding(&self, ids: &[u32], mask: &[u8]) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        let mut real = 0usize;
        for (id, m) in ids.iter().zip(mask) {
            if *m == 0 {
                continue;
            }
            real += 1;
            let base = *id as usize * self.dim;
            for (d, out) in mean.iter_mut().enumerate() {
                *out += self.params[base + d];
            }
        }
        if real > 0 {
            let inv = 1.0 / real as f64;
            for v in &mut mean {
                *v *= inv;
            }
        }
        mean
    }

    fn logits_from_mean(&self, mean: &[f64]) -> [f64; 3] {
        let w = &self.params[self.weight_offset()..self.bias_offset()];
        let b = &self.params[self.bias_offset()..];
        let mut logits = [0.0; 3];
        for k in 0..3 {
            let mut acc = b[k];
            for (d, m) in mean.iter().enumerate() {
                acc += w[k * self.dim + d] * m;
            }
            logits[k] = acc;
        }
        logits
    }

    /// Save the checkpoint: vocab, dim, and the flat parameter vector with
    /// each value stored as raw f64 bits so reloads are bit-exact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("subjpipe-encoder v1\n");
        out.push_str(&format!("dim\t{}\n", self.dim));
        out.push_str(&format!("vocab\t{}\n", self.vocab.len()));
        for word in &self.vocab {
            out.push_str(word);
            out.push('\n');
        }
        out.push_str(&format!("params\t{}\n", self.params.len()));
        for p in &self.params {
            out.push_str(&format!("{:016x}\n", p.to_bits()));
        }
        ioutil::write_atomic(path, out.as_bytes())
    }

    pub fn load(path: &Path) -> Result<ReferenceEncoder> {
        let content = ioutil::read_lossy(path)?;
        let malformed = |line: usize, msg: &str| Error::Malformed {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = content.lines().enumerate();
        let mut next = |expect: &'static str| {
            lines
                .next()
                .map(|(i, l)| (i + 1, l))
                .ok_or_else(|| malformed(0, expect))
        };

        let (n, magic) = next("missing header")?;
        if magic != "subjpipe-encoder v1" {
            return Err(malformed(n, "not a subjpipe-encoder v1 checkpoint"));
        }
        let (n, dim_line) = next("missing dim")?;
        let dim: usize = dim_line
            .strip_prefix("dim\t")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| malformed(n, "bad dim line"))?;
        let (n, vocab_line) = next("missing vocab count")?;
        let vocab_len: usize = vocab_line
            .strip_prefix("vocab\t")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| malformed(n, "bad vocab line"))?;
        let mut vocab = Vec::with_capacity(vocab_len);
        for _ in 0..vocab_len {
            let (_, word) = next("truncated vocab")?;
            vocab.push(word.to_string());
        }
        let (n, params_line) = next("missing params count")?;
        let params_len: usize = params_line
            .strip_prefix("params\t")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| malformed(n, "bad params line"))?;
        if params_len != Self::param_count(vocab_len, dim) {
            return Err(malformed(n, "parameter count does not match vocab and dim"));
        }
        let mut params = Vec::with_capacity(params_len);
        for _ in 0..params_len {
            let (n, hex) = next("truncated params")?;
            let bits = u64::from_str_radix(hex, 16).map_err(|_| malformed(n, "bad param encoding"))?;
            params.push(f64::from_bits(bits));
        }

        let mut encoder = ReferenceEncoder::new(vocab, dim, 0)?;
        encoder.params = params;
        Ok(encoder)
    }
}

impl Encoder for ReferenceEncoder {
    fn tokenize(&self, text: &str) -> Vec<u32> {
        text.split_whitespace()
            .map(|word| {
                // already-lowercase ASCII words skip the allocating fold
                let id = if word.is_ascii() && !word.bytes().any(|b| b.is_ascii_uppercase()) {
                    self.index.get(word)
                } else {
                    self.index.get(word.to_lowercase().as_str())
                };
                id.copied().unwrap_or(OOV_ID)
            })
            .collect()
    }

    fn forward(&self, batch: &TokenBatch) -> Vec<SentimentLogits> {
        par::map_indices(batch.examples(), |i| {
            let (ids, mask) = batch.example(i);
            SentimentLogits(self.logits_from_mean(&self.mean_embedding(ids, mask)))
        })
    }

    fn backward(&self, batch: &TokenBatch, grad_logits: &[[f64; 3]]) -> Vec<f64> {
        assert_eq!(batch.examples(), grad_logits.len(), "gradient count mismatch");
        let dim = self.dim;
        let w_off = self.weight_offset();
        let b_off = self.bias_offset();
        let n = batch.examples();

        // Per-example pieces land in parallel in one preallocated scratch
        // buffer, one `[mean | dh | real_token_count]` row each; the
        // accumulation below then runs in example order, so results are
        // independent of the thread count.
        let width = 2 * dim + 1;
        let mut scratch = vec![0.0; n * width];
        par::fill_rows(&mut scratch, width, |i, row| {
            let (ids, mask) = batch.example(i);
            let (mean, rest) = row.split_at_mut(dim);
            let (dh, count) = rest.split_at_mut(dim);
            let mut real = 0usize;
            for (id, m) in ids.iter().zip(mask) {
                if *m == 0 {
                    continue;
                }
                real += 1;
                let base = *id as usize * dim;
                for (d, out) in mean.iter_mut().enumerate() {
                    *out += self.params[base + d];
                }
            }
            if real > 0 {
                let inv = 1.0 / real as f64;
                for v in mean.iter_mut() {
                    *v *= inv;
                }
            }
            let dl = grad_logits[i];
            let w = &self.params[w_off..b_off];
            for (d, out) in dh.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += dl[k] * w[k * dim + d];
                }
                *out = acc;
            }
            count[0] = real as f64;
        });

        let mut grad = vec![0.0; self.params.len()];
        for (i, row) in scratch.chunks(width).enumerate() {
            let mean = &row[..dim];
            let dh = &row[dim..2 * dim];
            let real = row[2 * dim] as usize;
            let dl = grad_logits[i];
            for k in 0..3 {
                grad[b_off + k] += dl[k];
                for d in 0..dim {
                    grad[w_off + k * dim + d] += dl[k] * mean[d];
                }
            }
            if real == 0 {
                continue;
            }
            let inv = 1.0 / real as f64;
            let (ids, mask) = batch.example(i);
            for (id, m) in ids.iter().zip(mask) {
                if *m == 0 {
                    continue;
                }
                let base = *id as usize * dim;
                for d in 0..dim {
                    grad[base + d] += dh[d] * inv;
                }
            }
        }
        grad
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encoder() -> ReferenceEncoder {
        let vocab = ["fact", "awful", "report", "great"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        ReferenceEncoder::new(vocab, 4, 7).unwrap()
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let a = encoder();
        let b = encoder();
        assert_eq!(a.params(), b.params());
        let c = ReferenceEncoder::new(vec!["fact".into()], 4, 8).unwrap();
        let d = ReferenceEncoder::new(vec!["fact".into()], 4, 9).unwrap();
        assert_ne!(c.params(), d.params());
    }

    #[test]
    fn parameters_start_inside_init_range() {
        let e = encoder();
        assert!(e.params().iter().all(|p| (-0.1..=0.1).contains(p)));
    }

    #[test]
    fn empty_vocab_and_tiny_dim_are_rejected() {
        assert!(ReferenceEncoder::new(vec![], 4, 0).is_err());
        assert!(ReferenceEncoder::new(vec!["x".into()], 1, 0).is_err());
        assert!(ReferenceEncoder::new(vec!["x".into(), "x".into()], 4, 0).is_err());
    }

    #[test]
    fn tokenizer_folds_case_and_maps_oov() {
        let e = encoder();
        let ids = e.tokenize("The THE the");
        assert_eq!(ids.len(), 3);
        assert!(ids.iter().all(|&id| id == ids[0]));
        assert_eq!(ids[0], OOV_ID); // "the" is not in the vocab
        let ids = e.tokenize("Fact AWFUL");
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn all_padding_row_outputs_the_bias() {
        let e = encoder();
        let batch = TokenBatch::from_padded(vec![0, 0, 0], vec![0, 0, 0], 1, 3).unwrap();
        let logits = e.forward(&batch);
        let bias = &e.params()[e.bias_offset()..];
        assert_eq!(logits[0].0.to_vec(), bias.to_vec());
    }

    #[test]
    fn padding_never_changes_logits() {
        let e = encoder();
        let rows = vec![e.tokenize("fact awful"), e.tokenize("great")];
        let tight = TokenBatch::from_rows(&rows);
        let base = e.forward(&tight);

        // same rows padded out to width 7
        let width = 7;
        let mut ids = vec![0u32; 2 * width];
        let mut mask = vec![0u8; 2 * width];
        for (i, row) in rows.iter().enumerate() {
            ids[i * width..i * width + row.len()].copy_from_slice(row);
            mask[i * width..i * width + row.len()].fill(1);
        }
        let padded = TokenBatch::from_padded(ids, mask, 2, width).unwrap();
        let out = e.forward(&padded);
        for (a, b) in base.iter().zip(&out) {
            assert_eq!(a.0, b.0); // bit-identical, not just close
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let e = encoder();
        e.save(&path).unwrap();
        let back = ReferenceEncoder::load(&path).unwrap();
        assert_eq!(back.vocab(), e.vocab());
        assert_eq!(back.dim(), e.dim());
        let bits = |enc: &ReferenceEncoder| enc.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&e));

        let batch = TokenBatch::from_rows(&[e.tokenize("fact awful great")]);
        assert_eq!(e.forward(&batch)[0].0, back.forward(&batch)[0].0);
    }

    #[test]
    fn load_rejects_corrupted_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, "something else\n").unwrap();
        assert!(ReferenceEncoder::load(&path).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut e = encoder();
        let batch = TokenBatch::from_rows(&[e.tokenize("fact awful"), e.tokenize("great report fact")]);
        // scalar objective: sum of all logits weighted by fixed coefficients
        let coeffs = [[0.3, -0.2, 0.5], [-0.1, 0.4, 0.2]];
        let objective = |enc: &ReferenceEncoder| -> f64 {
            enc.forward(&batch)
                .iter()
                .zip(&coeffs)
                .map(|(lg, c)| lg.0.iter().zip(c).map(|(v, w)| v * w).sum::<f64>())
                .sum()
        };
        let analytic = e.backward(&batch, &coeffs);
        let h = 1e-6;
        for (p, &a) in analytic.iter().enumerate() {
            let orig = e.params()[p];
            e.params_mut()[p] = orig + h;
            let up = objective(&e);
            e.params_mut()[p] = orig - h;
            let down = objective(&e);
            e.params_mut()[p] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!(
                (a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1.0),
                "param {p}: analytic {a} vs fd {fd}"
            );
        }
    }
}
