use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SIZES: [usize; 4] = [1024, 512, 256, 3];
pub const DEFAULT_PARAM_COUNT: usize = 656_899;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Affine layer `y = x W + b` with `W` stored fan-in × fan-out.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer { w: DMatrix::zeros(fan_in, fan_out), b: DVector::zeros(fan_out) }
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub layers: Vec<Layer>,
    pub dropout: f64,
}

/// Same shapes as the network's layers.
pub type Gradients = Vec<Layer>;

/// Activations kept by `forward` for `backward`.
#[derive(Debug, Clone)]
pub struct Cache {
    input: DMatrix<f64>,
    /// Per hidden layer: ReLU derivative mask, dropout scale and output.
    relu: Vec<DMatrix<f64>>,
    dropout: Vec<Option<DMatrix<f64>>>,
    hidden: Vec<DMatrix<f64>>,
}

impl Mlp {
    /// Weights drawn from U(−1/√fan_in, 1/√fan_in) layer by layer in
    /// row-major order; biases zero.
    pub fn init<R: Rng>(sizes: &[usize], dropout: f64, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Invalid(format!("invalid layer sizes {sizes:?}")));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Range(format!("dropout must lie in [0, 1), got {dropout}")));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut w = DMatrix::zeros(fan_in, fan_out);
            for i in 0..fan_in {
                for j in 0..fan_out {
                    w[(i, j)] = rng.random_range(-bound..bound);
                }
            }
            layers.push(Layer { w, b: DVector::zeros(fan_out) });
        }
        let mlp = Mlp { sizes: sizes.to_vec(), layers, dropout };
        if sizes == DEFAULT_SIZES {
            assert_eq!(mlp.n_params(), DEFAULT_PARAM_COUNT);
        }
        Ok(mlp)
    }

    pub fn from_layers(layers: Vec<Layer>, dropout: f64) -> Result<Self> {
        let mut sizes = vec![layers.first().map_or(0, |l| l.w.nrows())];
        for (k, l) in layers.iter().enumerate() {
            if l.w.nrows() != *sizes.last().unwrap() || l.b.len() != l.w.ncols() {
                return Err(Error::Invalid(format!("layer {k} shapes do not chain")));
            }
            sizes.push(l.w.ncols());
        }
        if layers.is_empty() {
            return Err(Error::Invalid("network has no layers".into()));
        }
        Ok(Mlp { sizes, layers, dropout })
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Logits for a batch (one sample per row).
    ///
    /// In train mode each hidden unit is zeroed with probability `dropout`
    /// and survivors are scaled by `1/(1 − dropout)`; eval mode is
    /// deterministic.
    pub fn forward<R: Rng>(&self, x: &DMatrix<f64>, mode: Mode, rng: &mut R) -> Result<(DMatrix<f64>, Cache)> {
        if x.ncols() != self.n_inputs() {
            return Err(Error::Invalid(format!("input has {} features, network expects {}", x.ncols(), self.n_inputs())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("input contains non-finite values".into()));
        }
        let last = self.layers.len() - 1;
        let mut cache = Cache { input: x.clone(), relu: vec![], dropout: vec![], hidden: vec![] };
        let mut a = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = &a * &layer.w;
            for mut row in z.row_iter_mut() {
                row += layer.b.transpose();
            }
            if k == last {
                return Ok((z, cache));
            }
            let relu = z.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let mut h = z.component_mul(&relu);
            let mask = match mode {
                Mode::Train if self.dropout > 0.0 => {
                    let keep = 1.0 / (1.0 - self.dropout);
                    let p = self.dropout;
                    // draw row-major so the mask stream does not depend on storage order
                    let mut m = DMatrix::zeros(h.nrows(), h.ncols());
                    for i in 0..h.nrows() {
                        for j in 0..h.ncols() {
                            m[(i, j)] = if rng.random::<f64>() < p { 0.0 } else { keep };
                        }
                    }
                    h.component_mul_assign(&m);
                    Some(m)
                }
                _ => None,
            };
            cache.relu.push(relu);
            cache.dropout.push(mask);
            cache.hidden.push(h.clone());
            a = h;
        }
        unreachable!("loop returns at the output layer")
    }

    /// Eval-mode logits.
    pub fn predict_logits(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut unused = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        self.forward(x, Mode::Eval, &mut unused).map(|(z, _)| z)
    }

    /// Reverse-mode gradients given `dlogits`, the gradient of the loss with
    /// respect to the logits of the cached forward pass.
    pub fn backward(&self, cache: &Cache, dlogits: &DMatrix<f64>) -> Result<Gradients> {
        let n = cache.input.nrows();
        if dlogits.nrows() != n || dlogits.ncols() != self.n_outputs() {
            return Err(Error::Invalid(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                dlogits.nrows(),
                dlogits.ncols(),
                n,
                self.n_outputs()
            )));
        }
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        let mut delta = dlogits.clone();
        for k in (0..self.layers.len()).rev() {
            let input = if k == 0 { &cache.input } else { &cache.hidden[k - 1] };
            let w = input.transpose() * &delta;
            let b = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            grads.push(Layer { w, b });
            if k > 0 {
                let mut d = &delta * self.layers[k].w.transpose();
                if let Some(m) = &cache.dropout[k - 1] {
                    d.component_mul_assign(m);
                }
                d.component_mul_assign(&cache.relu[k - 1]);
                delta = d;
            }
        }
        grads.reverse();
        Ok(grads)
    }
}

/// Row-wise softmax.
pub fn softmax(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = logits.clone();
    for mut row in p.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

/// Mean cross-entropy over the batch and its gradient with respect to the
/// logits, `(softmax − onehot) / n`.
pub fn cross_entropy(logits: &DMatrix<f64>, targets: &[usize]) -> Result<(f64, DMatrix<f64>)> {
    let n = logits.nrows();
    if targets.len() != n {
        return Err(Error::Invalid(format!("{} targets for {} rows", targets.len(), n)));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= logits.ncols()) {
        return Err(Error::Invalid(format!("target class {t} out of range")));
    }
    let mut loss = 0.0;
    let mut grad = softmax(logits);
    for (i, &t) in targets.iter().enumerate() {
        let row = logits.row(i);
        let max = row.max();
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - logits[(i, t)];
        grad[(i, t)] -= 1.0;
    }
    let nf = n as f64;
    grad /= nf;
    Ok((loss / nf, grad))
}
