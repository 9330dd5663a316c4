//! The conditional noise-prediction network: a small tanh MLP over
//! concat(x_t, time embedding, class embedding) with an epsilon head and an
//! optional bounded variance head.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::numerics::SeededRng;

/// Fixed description of the network; hashed into checkpoints so weights can
/// never be loaded into a different topology.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub data_dim: usize,
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    pub class_dim: usize,
    pub num_classes: usize,
    pub variance_head: bool,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.num_classes == 0 || self.hidden.is_empty() {
            return Err(Error::Config(
                "architecture needs data_dim, classes and at least one hidden layer".into(),
            ));
        }
        if self.time_dim < 2 || self.time_dim % 2 != 0 {
            return Err(Error::Config("time_dim must be even and >= 2".into()));
        }
        if self.class_dim == 0 {
            return Err(Error::Config("class_dim must be positive".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.data_dim + self.time_dim + self.class_dim
    }

    /// Embedding rows; row 0 is the null condition.
    pub fn embedding_rows(&self) -> usize {
        self.num_classes + 1
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }

    /// Stable content hash of the architecture.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("architecture serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex_string(&hasher.finalize())
    }

    /// Sinusoidal time embedding, frequencies geometric from 1 down to 1e-4.
    pub fn time_embedding(&self, t: usize, out: &mut [f64]) {
        let half = self.time_dim / 2;
        let tf = t as f64;
        for i in 0..half {
            let exponent = if half > 1 { i as f64 / (half - 1) as f64 } else { 0.0 };
            let freq = libm::exp(-libm::log(10_000.0) * exponent);
            out[2 * i] = libm::sin(tf * freq);
            out[2 * i + 1] = libm::cos(tf * freq);
        }
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Parameter offsets into the flat weight vector.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    /// (weight offset, bias offset, out, in) per hidden layer.
    pub layers: Vec<(usize, usize, usize, usize)>,
    pub eps_w: usize,
    pub eps_b: usize,
    pub v_w: Option<usize>,
    pub v_b: Option<usize>,
    pub emb: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(arch: &Architecture) -> Self {
        let mut off = 0;
        let mut layers = Vec::new();
        let mut prev = arch.input_dim();
        for &h in &arch.hidden {
            let w = off;
            off += h * prev;
            let b = off;
            off += h;
            layers.push((w, b, h, prev));
            prev = h;
        }
        let eps_w = off;
        off += arch.data_dim * prev;
        let eps_b = off;
        off += arch.data_dim;
        let (v_w, v_b) = if arch.variance_head {
            let w = off;
            off += arch.data_dim * prev;
            let b = off;
            off += arch.data_dim;
            (Some(w), Some(b))
        } else {
            (None, None)
        };
        let emb = off;
        off += arch.embedding_rows() * arch.class_dim;
        Layout { layers, eps_w, eps_b, v_w, v_b, emb, total: off }
    }
}

/// Weights of the conditional denoiser.
#[derive(Debug, Clone)]
pub struct DenoiserParams {
    arch: Architecture,
    layout: Layout,
    theta: Vec<f64>,
}

/// Per-sample forward activations, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    /// Post-activation outputs of each hidden layer.
    pub hidden: Vec<Vec<f64>>,
    pub eps_hat: Vec<f64>,
    pub v: Option<Vec<f64>>,
    pub emb_row: usize,
}

impl DenoiserParams {
    pub fn new(arch: Architecture, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        if theta.len() != layout.total {
            return Err(Error::Config(format!(
                "weight vector has {} entries, architecture wants {}",
                theta.len(),
                layout.total
            )));
        }
        Ok(Self { arch, layout, theta })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let theta = vec![0.0; layout.total];
        Ok(Self { arch, layout, theta })
    }

    /// Weight init: W ~ N(0, 1/fan_in), biases zero, embeddings 0.02 N(0,1).
    pub fn init(arch: Architecture, rng: &mut SeededRng) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let layout = p.layout.clone();
        for &(w_off, _, out, inp) in &layout.layers {
            let scale = 1.0 / (inp as f64).sqrt();
            for k in 0..out * inp {
                p.theta[w_off + k] = scale * rng.standard_normal();
            }
        }
        let last = *p.arch.hidden.last().unwrap();
        let head_scale = 1.0 / (last as f64).sqrt();
        for k in 0..p.arch.data_dim * last {
            p.theta[layout.eps_w + k] = head_scale * rng.standard_normal();
        }
        if let Some(v_w) = layout.v_w {
            for k in 0..p.arch.data_dim * last {
                p.theta[v_w + k] = head_scale * rng.standard_normal();
            }
        }
        for k in 0..p.arch.embedding_rows() * p.arch.class_dim {
            p.theta[layout.emb + k] = 0.02 * rng.standard_normal();
        }
        Ok(p)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn has_variance_head(&self) -> bool {
        self.arch.variance_head
    }

    /// Maps an external class (or the null condition) to its embedding row.
    fn embedding_row(&self, class: Option<usize>) -> Result<usize> {
        match class {
            None => Ok(0),
            Some(c) if c < self.arch.num_classes => Ok(c + 1),
            Some(c) => Err(Error::Condition { class: c, num_classes: self.arch.num_classes }),
        }
    }

    fn build_input(&self, x_t: &Tensor, t: usize, class: Option<usize>) -> Result<(Vec<f64>, usize)> {
        if x_t.len() != self.arch.data_dim {
            return Err(Error::ShapeMismatch {
                expected: vec![self.arch.data_dim],
                got: x_t.shape().to_vec(),
            });
        }
        let row = self.embedding_row(class)?;
        let mut input = vec![0.0; self.arch.input_dim()];
        input[..self.arch.data_dim].copy_from_slice(x_t.data());
        self.arch
            .time_embedding(t, &mut input[self.arch.data_dim..self.arch.data_dim + self.arch.time_dim]);
        let emb_off = self.layout.emb + row * self.arch.class_dim;
        input[self.arch.data_dim + self.arch.time_dim..]
            .copy_from_slice(&self.theta[emb_off..emb_off + self.arch.class_dim]);
        Ok((input, row))
    }

    fn affine(&self, w_off: usize, b_off: usize, out: usize, inp: usize, x: &[f64], y: &mut [f64]) {
        for o in 0..out {
            let row = &self.theta[w_off + o * inp..w_off + (o + 1) * inp];
            let mut acc = self.theta[b_off + o];
            for k in 0..inp {
                acc += row[k] * x[k];
            }
            y[o] = acc;
        }
    }

    /// Forward pass keeping every activation.
    pub fn forward_cached(&self, x_t: &Tensor, t: usize, class: Option<usize>) -> Result<ForwardCache> {
        let (input, emb_row) = self.build_input(x_t, t, class)?;
        let mut hidden = Vec::with_capacity(self.layout.layers.len());
        let mut cur = input.clone();
        for &(w_off, b_off, out, inp) in &self.layout.layers {
            let mut next = vec![0.0; out];
            self.affine(w_off, b_off, out, inp, &cur, &mut next);
            for v in next.iter_mut() {
                *v = libm::tanh(*v);
            }
            hidden.push(next.clone());
            cur = next;
        }
        let last = self.layout.layers.last().unwrap();
        let last_dim = last.2;
        let mut eps_hat = vec![0.0; self.arch.data_dim];
        self.affine(self.layout.eps_w, self.layout.eps_b, self.arch.data_dim, last_dim, &cur, &mut eps_hat);
        let v = if let (Some(vw), Some(vb)) = (self.layout.v_w, self.layout.v_b) {
            let mut v_raw = vec![0.0; self.arch.data_dim];
            self.affine(vw, vb, self.arch.data_dim, last_dim, &cur, &mut v_raw);
            Some(v_raw.iter().map(|&r| sigmoid(r)).collect())
        } else {
            None
        };
        Ok(ForwardCache { input, hidden, eps_hat, v, emb_row })
    }

    /// Deterministic forward pass; `v` present iff the variance head exists.
    pub fn predict(&self, x_t: &Tensor, t: usize, class: Option<usize>) -> Result<(Tensor, Option<Tensor>)> {
        let cache = self.forward_cached(x_t, t, class)?;
        let shape = x_t.shape().to_vec();
        let eps = Tensor::new(shape.clone(), cache.eps_hat)?;
        let v = cache.v.map(|v| Tensor::new(shape, v)).transpose()?;
        Ok((eps, v))
    }

    /// Batched forward over many states sharing one time step. Returns flat
    /// row-major buffers of shape [batch, data_dim].
    pub fn forward_batch(
        &self,
        states: &[Tensor],
        t: usize,
        classes: &[Option<usize>],
    ) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let b = states.len();
        if classes.len() != b {
            return Err(Error::Parameter("states/classes length mismatch".into()));
        }
        let in_dim = self.arch.input_dim();
        let mut inputs = vec![0.0; b * in_dim];
        for (i, (x, c)) in states.iter().zip(classes).enumerate() {
            let (row, _) = self.build_input(x, t, *c)?;
            inputs[i * in_dim..(i + 1) * in_dim].copy_from_slice(&row);
        }

        let mut cur = inputs;
        let mut cur_dim = in_dim;
        for &(w_off, b_off, out, inp) in &self.layout.layers {
            let mut next = vec![0.0; b * out];
            for s in 0..b {
                let x = &cur[s * cur_dim..s * cur_dim + inp];
                let y = &mut next[s * out..(s + 1) * out];
                self.affine(w_off, b_off, out, inp, x, y);
                for v in y.iter_mut() {
                    *v = libm::tanh(*v);
                }
            }
            cur = next;
            cur_dim = out;
        }

        let d = self.arch.data_dim;
        let mut eps = vec![0.0; b * d];
        for s in 0..b {
            let x = &cur[s * cur_dim..(s + 1) * cur_dim];
            self.affine(self.layout.eps_w, self.layout.eps_b, d, cur_dim, x, &mut eps[s * d..(s + 1) * d]);
        }
        let v = if let (Some(vw), Some(vb)) = (self.layout.v_w, self.layout.v_b) {
            let mut v_out = vec![0.0; b * d];
            for s in 0..b {
                let x = &cur[s * cur_dim..(s + 1) * cur_dim];
                self.affine(vw, vb, d, cur_dim, x, &mut v_out[s * d..(s + 1) * d]);
            }
            for r in v_out.iter_mut() {
                *r = sigmoid(*r);
            }
            Some(v_out)
        } else {
            None
        };
        Ok((eps, v))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_arch(variance_head: bool) -> Architecture {
        Architecture {
            data_dim: 2,
            hidden: vec![8, 8],
            time_dim: 4,
            class_dim: 3,
            num_classes: 3,
            variance_head,
        }
    }

    #[test]
    fn zero_network_predicts_zero() {
        let p = DenoiserParams::zeros(tiny_arch(true)).unwrap();
        let x = Tensor::from_vec(vec![0.3, -0.7]).unwrap();
        let (eps, v) = p.predict(&x, 5, Some(1)).unwrap();
        assert_eq!(eps.data(), &[0.0, 0.0]);
        // Zero logits sit at the sigmoid midpoint.
        assert_eq!(v.unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn predict_is_pure() {
        let mut rng = SeededRng::new(3);
        let p = DenoiserParams::init(tiny_arch(true), &mut rng).unwrap();
        let x = Tensor::from_vec(vec![0.1, 0.2]).unwrap();
        let (a, av) = p.predict(&x, 7, Some(2)).unwrap();
        let (b, bv) = p.predict(&x, 7, Some(2)).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(av.unwrap().data(), bv.unwrap().data());
    }

    #[test]
    fn output_finite_and_shaped() {
        let mut rng = SeededRng::new(4);
        let p = DenoiserParams::init(tiny_arch(true), &mut rng).unwrap();
        let x = rng.sample_standard_normal(&[2]).unwrap();
        let (eps, v) = p.predict(&x, 3, None).unwrap();
        assert_eq!(eps.shape(), x.shape());
        assert!(eps.is_finite());
        let v = v.unwrap();
        assert!(v.data().iter().all(|&vi| (0.0..=1.0).contains(&vi)));
    }

    #[test]
    fn unknown_class_rejected() {
        let p = DenoiserParams::zeros(tiny_arch(false)).unwrap();
        let x = Tensor::from_vec(vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            p.predict(&x, 1, Some(3)),
            Err(Error::Condition { class: 3, num_classes: 3 })
        ));
    }

    #[test]
    fn null_condition_ignores_class_rows() {
        let mut rng = SeededRng::new(5);
        let mut p = DenoiserParams::init(tiny_arch(false), &mut rng).unwrap();
        let x = Tensor::from_vec(vec![0.4, 0.6]).unwrap();
        let (before, _) = p.predict(&x, 2, None).unwrap();
        // Scribble over every non-null embedding row.
        let emb = p.layout().emb;
        let dim = p.arch().class_dim;
        for k in dim..p.arch().embedding_rows() * dim {
            p.theta_mut()[emb + k] = 1234.5;
        }
        let (after, _) = p.predict(&x, 2, None).unwrap();
        assert_eq!(before.data(), after.data());
    }

    #[test]
    fn batch_forward_matches_single() {
        let mut rng = SeededRng::new(6);
        let p = DenoiserParams::init(tiny_arch(true), &mut rng).unwrap();
        let states: Vec<Tensor> = (0..5)
            .map(|_| rng.sample_standard_normal(&[2]).unwrap())
            .collect();
        let classes = vec![Some(0), Some(1), None, Some(2), Some(0)];
        let (eps, v) = p.forward_batch(&states, 9, &classes).unwrap();
        let v = v.unwrap();
        for (i, (x, c)) in states.iter().zip(&classes).enumerate() {
            let (se, sv) = p.predict(x, 9, *c).unwrap();
            for d in 0..2 {
                assert!((eps[i * 2 + d] - se.data()[d]).abs() < 1e-15);
                assert!((v[i * 2 + d] - sv.as_ref().unwrap().data()[d]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn architecture_hash_distinguishes_topologies() {
        let a = tiny_arch(true);
        let mut b = tiny_arch(true);
        b.hidden = vec![8, 9];
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), tiny_arch(true).hash());
    }
}
