use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fully connected network with `tanh` hidden units and a linear output.
///
/// Parameters live in one flat vector; each layer stores its weights
/// row-major (`out x in`) followed by its biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    activations: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds at least the input")
    }
}

impl Mlp {
    /// Xavier-uniform hidden layers; the output layer starts with zero
    /// weights and the given biases.
    pub fn new(sizes: &[usize], output_bias: &[f64], seed: u64) -> Self {
        assert!(sizes.len() >= 2, "need at least an input and an output layer");
        assert_eq!(*sizes.last().unwrap(), output_bias.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::count(sizes));
        let layers = sizes.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            if l + 1 == layers {
                params.extend(std::iter::repeat(0.0).take(fan_in * fan_out));
                params.extend_from_slice(output_bias);
            } else {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)));
                params.extend(std::iter::repeat(0.0).take(fan_out));
            }
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Option<Self> {
        (sizes.len() >= 2 && Self::count(&sizes) == params.len()).then_some(Self { sizes, params })
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Offset and size of the last layer's weight block.
    pub fn output_weight_range(&self) -> std::ops::Range<usize> {
        let n = self.sizes.len();
        let start = Self::count(&self.sizes[..n - 1]);
        start..start + self.sizes[n - 2] * self.sizes[n - 1]
    }

    pub fn forward(&self, input: &[f64]) -> MlpCache {
        debug_assert_eq!(input.len(), self.input_size());
        let layers = self.sizes.len() - 1;
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(input.to_vec());
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let x = activations.last().unwrap();
            let mut out = b.to_vec();
            for (o, row) in w.chunks_exact(n_in).enumerate() {
                out[o] += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 < layers {
                for v in out.iter_mut() {
                    *v = v.tanh();
                }
            }
            activations.push(out);
        }
        MlpCache { activations }
    }

    /// Accumulates parameter gradients into `grad_params` and returns the
    /// gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache, grad_output: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for l in 0..layers {
            offsets.push(offset);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut grad = grad_output.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < layers {
                for (g, a) in grad.iter_mut().zip(&cache.activations[l + 1]) {
                    *g *= 1.0 - a * a;
                }
            }
            let x = &cache.activations[l];
            let off = offsets[l];
            let w = &self.params[off..off + n_in * n_out];
            let (gw, gb) = grad_params[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let mut grad_in = vec![0.0; n_in];
            for o in 0..n_out {
                let g = grad[o];
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let row = &w[o * n_in..(o + 1) * n_in];
                let grow = &mut gw[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    grow[i] += g * x[i];
                    grad_in[i] += g * row[i];
                }
            }
            grad = grad_in;
        }
        grad
    }

    /// Fills the output-layer weights with uniform noise of the given
    /// amplitude. Used to move away from the zero-weight initialization in
    /// gradient probes.
    pub fn randomize_output_layer(&mut self, amplitude: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let range = self.output_weight_range();
        for w in &mut self.params[range] {
            *w = rng.gen_range(-amplitude..amplitude);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_matches_finite_differences() {
        let mut mlp = Mlp::new(&[5, 7, 6, 3], &[0.1, -0.2, 0.3], 4);
        mlp.randomize_output_layer(0.5, 9);
        let x = [0.3, -0.1, 0.7, 0.2, -0.5];
        let w = [0.4, -1.1, 0.8];
        let loss = |m: &Mlp, x: &[f64]| -> f64 {
            m.forward(x).output().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let cache = mlp.forward(&x);
        let mut gp = vec![0.0; mlp.params().len()];
        let gx = mlp.backward(&cache, &w, &mut gp);
        let h = 1e-6;
        for k in (0..gp.len()).step_by(7) {
            let mut p = mlp.clone();
            p.params_mut()[k] += h;
            let mut m = mlp.clone();
            m.params_mut()[k] -= h;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!((fd - gp[k]).abs() < 1e-8, "param {k}: {fd} vs {}", gp[k]);
        }
        for i in 0..x.len() {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            let fd = (loss(&mlp, &xp) - loss(&mlp, &xm)) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_output_layer_emits_bias() {
        let mlp = Mlp::new(&[4, 8, 2], &[1.5, -2.0], 1);
        assert_eq!(mlp.forward(&[0.1, 0.2, 0.3, 0.4]).output(), &[1.5, -2.0]);
    }
}
