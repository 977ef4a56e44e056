//! Small numeric helpers shared across modules.

/// Numerically stable logistic function.
#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// log(sum_i exp(x_i)) with a fixed left-to-right reduction order.
/// Returns -inf for an empty slice or all -inf entries.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &x in xs {
        if x > max {
            max = x;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for &x in xs {
        sum += (x - max).exp();
    }
    max + sum.ln()
}

/// Normalizes log-weights in place to a probability vector (linear scale).
/// Returns the log-normalizer, or -inf (leaving `out` zeroed) when every
/// entry is -inf.
pub fn normalize_log_weights(log_w: &[f64], out: &mut [f64]) -> f64 {
    debug_assert_eq!(log_w.len(), out.len());
    let lse = log_sum_exp(log_w);
    if lse == f64::NEG_INFINITY {
        out.fill(0.0);
        return f64::NEG_INFINITY;
    }
    for (o, &lw) in out.iter_mut().zip(log_w) {
        *o = (lw - lse).exp();
    }
    lse
}

/// Inverse-CDF draw from unnormalized nonnegative masses given u in [0,1).
/// Returns None when the total mass is zero. Rounding can push the threshold
/// past the running sum; the last positive-mass index absorbs it.
pub fn sample_unnormalized(mass: &[f64], u: f64) -> Option<usize> {
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let threshold = u * total;
    let mut acc = 0.0;
    let mut last_positive = None;
    for (i, &m) in mass.iter().enumerate() {
        if m > 0.0 {
            acc += m;
            last_positive = Some(i);
            if threshold < acc {
                return Some(i);
            }
        }
    }
    last_positive
}

/// Cumulative-sum lookup table for repeated categorical draws.
/// Zero-probability entries are never returned.
pub struct CategoricalCdf {
    cdf: Vec<f64>,
    last_positive: usize,
}

impl CategoricalCdf {
    /// `probs` must have positive total mass.
    pub fn new(probs: &[f64]) -> Self {
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        let mut last_positive = None;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            cdf.push(acc);
            if p > 0.0 {
                last_positive = Some(i);
            }
        }
        Self {
            cdf,
            last_positive: last_positive.expect("zero-mass categorical"),
        }
    }

    pub fn sample(&self, u: f64) -> usize {
        let total = *self.cdf.last().expect("empty categorical");
        let threshold = u * total;
        // First index whose cumulative mass strictly exceeds the threshold;
        // ties on equal cumsums always land on a positive-mass entry.
        let i = self.cdf.partition_point(|&c| c <= threshold);
        if i >= self.cdf.len() {
            self.last_positive
        } else {
            i
        }
    }
}
