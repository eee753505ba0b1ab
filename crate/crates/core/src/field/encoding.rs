use std::f64::consts::PI;

/// Number of encoded features for `inputs` raw values and `octaves` bands.
pub fn encoded_len(inputs: usize, octaves: usize) -> usize {
    inputs * (1 + 2 * octaves)
}

/// Sinusoidal encoding `[x, sin(2^k pi x), cos(2^k pi x)]` for k in `0..octaves`.
///
/// Layout: the raw inputs first, then for each octave the sines of all
/// inputs followed by their cosines.
pub fn encode(input: &[f64], octaves: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_len(input.len(), octaves));
    out.extend_from_slice(input);
    for k in 0..octaves {
        let freq = PI * (1u64 << k) as f64;
        out.extend(input.iter().map(|x| (freq * x).sin()));
        out.extend(input.iter().map(|x| (freq * x).cos()));
    }
    out
}

/// Pulls a gradient on the encoded features back to the raw inputs.
pub fn encode_backward(input: &[f64], octaves: usize, grad_encoded: &[f64]) -> Vec<f64> {
    let n = input.len();
    let mut grad: Vec<f64> = grad_encoded[..n].to_vec();
    for k in 0..octaves {
        let freq = PI * (1u64 << k) as f64;
        let base = n * (1 + 2 * k);
        for i in 0..n {
            let (s, c) = (freq * input[i]).sin_cos();
            grad[i] += freq * (c * grad_encoded[base + i] - s * grad_encoded[base + n + i]);
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_matches_finite_differences() {
        let x = [0.1, -0.4, 0.9];
        let w: Vec<f64> = (0..encoded_len(3, 4)).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let f = |x: &[f64]| -> f64 { encode(x, 4).iter().zip(&w).map(|(a, b)| a * b).sum() };
        let g = encode_backward(&x, 4, &w);
        for i in 0..3 {
            let mut p = x;
            p[i] += 1e-6;
            let mut m = x;
            m[i] -= 1e-6;
            let fd = (f(&p) - f(&m)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6, "{fd} vs {}", g[i]);
        }
        assert_eq!(encode(&x, 4).len(), 27);
    }
}
