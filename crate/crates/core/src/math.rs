use alloc::vec::Vec;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| libm::exp((z - max) / temperature)).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Log-softmax of `logits / temperature`.
pub fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|&z| (z - max) / temperature).collect();
    let lse = libm::log(shifted.iter().map(|&s| libm::exp(s)).sum::<f64>());
    shifted.into_iter().map(|s| s - lse).collect()
}

/// Natural-log entropy with probabilities clamped to `[eps, 1]` inside the log.
pub fn entropy(p: &[f64], eps: f64) -> f64 {
    -p.iter().map(|&v| v * libm::log(v.clamp(eps, 1.0))).sum::<f64>()
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_is_stable_and_normalized() {
        let p = softmax(&[1000.0, 1000.0, -1000.0], 1.0);
        assert!((p[0] - 0.5).abs() < 1e-12 && p[2] < 1e-300);
        let lp = log_softmax(&[1.0, 2.0, 3.0], 2.0);
        let s: f64 = lp.iter().map(|&v| libm::exp(v)).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_symmetry() {
        for x in [-30.0, -2.0, 0.0, 0.5, 40.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }
}
