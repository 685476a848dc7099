use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::real::Real;

/// Frequency counts for the sinusoidal position and direction embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub n_freq_pos: usize,
    pub n_freq_dir: usize,
    pub include_input: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            n_freq_pos: 10,
            n_freq_dir: 4,
            include_input: true,
        }
    }
}

impl EncodingConfig {
    pub fn position_width(&self) -> usize {
        encoded_width(self.n_freq_pos, self.include_input)
    }

    pub fn direction_width(&self) -> usize {
        encoded_width(self.n_freq_dir, self.include_input)
    }
}

pub fn encoded_width(n_freq: usize, include_input: bool) -> usize {
    3 * (include_input as usize + 2 * n_freq)
}

/// Sinusoidal embedding of a 3-vector.
///
/// Layout: `[p (if included), sin(pi p), cos(pi p), sin(2 pi p), cos(2 pi p), ...]`
/// where each block holds the three coordinates in order.
pub fn encode(p: [f64; 3], n_freq: usize, include_input: bool) -> Vec<f64> {
    let mut out = vec![0.0; encoded_width(n_freq, include_input)];
    encode_into(p, n_freq, include_input, &mut out);
    out
}

pub fn encode_into<S: Real>(p: [f64; 3], n_freq: usize, include_input: bool, out: &mut [S]) {
    debug_assert_eq!(out.len(), encoded_width(n_freq, include_input));
    let mut o = 0;
    if include_input {
        for c in p {
            out[o] = S::of(c);
            o += 1;
        }
    }
    let mut scale = PI;
    for _ in 0..n_freq {
        let mut s = [0.0; 3];
        let mut co = [0.0; 3];
        for c in 0..3 {
            let (sv, cv) = (scale * p[c]).sin_cos();
            s[c] = sv;
            co[c] = cv;
        }
        for c in 0..3 {
            out[o + c] = S::of(s[c]);
            out[o + 3 + c] = S::of(co[c]);
        }
        o += 6;
        scale *= 2.0;
    }
}

/// Jacobian of [`encode`], one row per output feature.
pub fn encode_jacobian(p: [f64; 3], n_freq: usize, include_input: bool) -> Vec<[f64; 3]> {
    let mut rows = Vec::with_capacity(encoded_width(n_freq, include_input));
    if include_input {
        for c in 0..3 {
            let mut r = [0.0; 3];
            r[c] = 1.0;
            rows.push(r);
        }
    }
    let mut scale = PI;
    for _ in 0..n_freq {
        for c in 0..3 {
            let mut r = [0.0; 3];
            r[c] = scale * (scale * p[c]).cos();
            rows.push(r);
        }
        for c in 0..3 {
            let mut r = [0.0; 3];
            r[c] = -scale * (scale * p[c]).sin();
            rows.push(r);
        }
        scale *= 2.0;
    }
    rows
}

/// Vector-Jacobian product: gradient w.r.t. `p` given the gradient w.r.t. the
/// encoded features.
pub fn encode_backward(p: [f64; 3], n_freq: usize, include_input: bool, upstream: &[f64]) -> [f64; 3] {
    let mut g = [0.0; 3];
    let mut o = 0;
    if include_input {
        for c in 0..3 {
            g[c] += upstream[o + c];
        }
        o += 3;
    }
    let mut scale = PI;
    for _ in 0..n_freq {
        for c in 0..3 {
            let (s, co) = (scale * p[c]).sin_cos();
            g[c] += upstream[o + c] * scale * co - upstream[o + 3 + c] * scale * s;
        }
        o += 6;
        scale *= 2.0;
    }
    g
}
