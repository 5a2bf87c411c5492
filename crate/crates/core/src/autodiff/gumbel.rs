use rand::Rng;
use rand_distr::Open01;

/// `k` draws of standard Gumbel noise, `-ln(-ln u)` with `u ~ U(0, 1)`.
pub fn gumbel_noise<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    (0..k)
        .map(|_| {
            let u: f64 = rng.sample(Open01);
            -(-u.ln()).ln()
        })
        .collect()
}

/// `softmax((logits + noise) / tau)`. Entries with `-inf` logits get weight 0.
pub fn softmax_tempered(logits: &[f64], noise: &[f64], tau: f64) -> Vec<f64> {
    let z: Vec<f64> = logits.iter().zip(noise).map(|(l, g)| (l + g) / tau).collect();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| if *v == f64::NEG_INFINITY { 0.0 } else { (v - max).exp() }).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    softmax_tempered(logits, &vec![0.0; logits.len()], 1.0)
}

/// One relaxed categorical sample.
pub fn gumbel_softmax<R: Rng + ?Sized>(logits: &[f64], tau: f64, rng: &mut R) -> Vec<f64> {
    let noise = gumbel_noise(logits.len(), rng);
    softmax_tempered(logits, &noise, tau)
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
