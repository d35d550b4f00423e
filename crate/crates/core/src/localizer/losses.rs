//! Pseudo-label selection and the adaptation losses. Every loss returns its
//! value together with the gradient w.r.t. the scores it consumes.

/// Size of each pseudo-label set: `ceil(p * N / 100)`, at least one, and at
/// most `floor(N / 2)` so the sets never overlap.
pub fn pseudo_label_count(n: usize, percentile_p: f64) -> usize {
    let raw = (percentile_p * n as f64 / 100.0 - 1e-9).ceil().max(1.0) as usize;
    raw.min(n / 2)
}

/// Indices of the highest-scoring (`P`) and lowest-scoring (`N`) frames.
/// Ties go to the lowest frame index; `N` is drawn from frames outside `P`.
pub fn select_pos_neg(scores: &[f64], percentile_p: f64) -> (Vec<usize>, Vec<usize>) {
    let k = pseudo_label_count(scores.len(), percentile_p);
    let mut desc: Vec<usize> = (0..scores.len()).collect();
    desc.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut pos = desc[..k].to_vec();
    let mut asc: Vec<usize> = desc[k..].to_vec();
    asc.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut neg = asc[..k].to_vec();
    pos.sort_unstable();
    neg.sort_unstable();
    (pos, neg)
}

/// First index attaining the extreme under `better`.
fn arg_extreme(s: &[f64], set: &[usize], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = set[0];
    for &i in &set[1..] {
        if better(s[i], s[best]) {
            best = i;
        }
    }
    best
}

/// `max(0, gamma - min_P s + max_N s)`. Ties in the min/max route the
/// subgradient to the lowest index.
pub fn margin_loss(s: &[f64], pos: &[usize], neg: &[usize], gamma: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; s.len()];
    if pos.is_empty() || neg.is_empty() {
        return (0.0, grad);
    }
    let ip = arg_extreme(s, pos, |a, b| a < b);
    let in_ = arg_extreme(s, neg, |a, b| a > b);
    let v = gamma - s[ip] + s[in_];
    if v > 0.0 {
        grad[ip] -= 1.0;
        grad[in_] += 1.0;
        (v, grad)
    } else {
        (0.0, grad)
    }
}

/// `(1/N) sum_i |s_i - s_{i-1}|`, with subgradient 0 where neighbours tie.
pub fn smoothness_loss(s: &[f64]) -> (f64, Vec<f64>) {
    let n = s.len();
    let mut grad = vec![0.0; n];
    if n < 2 {
        return (0.0, grad);
    }
    let inv = 1.0 / n as f64;
    let mut total = 0.0;
    for i in 1..n {
        let d = s[i] - s[i - 1];
        total += d.abs();
        let g = if d > 0.0 {
            inv
        } else if d < 0.0 {
            -inv
        } else {
            0.0
        };
        grad[i] += g;
        grad[i - 1] -= g;
    }
    (total * inv, grad)
}

/// `mean_P (s - 1)^2 + mean_N s^2`.
pub fn byol_loss(s: &[f64], pos: &[usize], neg: &[usize]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; s.len()];
    let mut v = 0.0;
    if !pos.is_empty() {
        let inv = 1.0 / pos.len() as f64;
        for &i in pos {
            let d = s[i] - 1.0;
            v += d * d * inv;
            grad[i] += 2.0 * d * inv;
        }
    }
    if !neg.is_empty() {
        let inv = 1.0 / neg.len() as f64;
        for &i in neg {
            v += s[i] * s[i] * inv;
            grad[i] += 2.0 * s[i] * inv;
        }
    }
    (v, grad)
}
