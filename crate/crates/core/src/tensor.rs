//! Log-domain reductions over row-major tensors.
//!
//! Every sum over the product space is evaluated as a max-shifted
//! log-sum-exp. Marginalizations fold one axis at a time, so reducing all
//! but one axis of a tensor with `P` entries costs `O(P)`.

/// `log Σ exp(v)` over a slice; `-inf` for an empty or all `-inf` slice.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Streaming log-sum-exp accumulator that rescales when a new maximum
/// arrives.
#[derive(Debug, Clone, Copy)]
pub struct LseAccumulator {
    max: f64,
    sum: f64,
}

impl Default for LseAccumulator {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }
}

impl LseAccumulator {
    #[inline]
    pub fn push(&mut self, v: f64) {
        if v <= self.max {
            self.sum += (v - self.max).exp();
        } else if v.is_finite() {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        } else if v.is_nan() || v == f64::INFINITY {
            self.max = v;
            self.sum = 1.0;
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY || !self.max.is_finite() {
            return self.max;
        }
        self.max + self.sum.ln()
    }
}

/// Advances a row-major multi-index; returns false after the last entry.
#[inline]
pub(crate) fn advance(index: &mut [usize], shape: &[usize]) -> bool {
    for axis in (0..shape.len()).rev() {
        index[axis] += 1;
        if index[axis] < shape[axis] {
            return true;
        }
        index[axis] = 0;
    }
    false
}

/// Contracts one axis: `out[.., ..] = log Σ_t exp(data[.., t, ..] + weight[t])`.
pub(crate) fn contract_axis(
    data: &[f64],
    shape: &[usize],
    axis: usize,
    weight: &[f64],
) -> (Vec<f64>, Vec<usize>) {
    debug_assert_eq!(weight.len(), shape[axis]);
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * inner];
    let mut max = vec![f64::NEG_INFINITY; inner];
    let mut sum = vec![0.0; inner];
    for o in 0..outer {
        let block = &data[o * len * inner..(o + 1) * len * inner];
        max.fill(f64::NEG_INFINITY);
        sum.fill(0.0);
        for (t, w) in weight.iter().enumerate() {
            let row = &block[t * inner..(t + 1) * inner];
            for (m, v) in max.iter_mut().zip(row) {
                *m = m.max(v + w);
            }
        }
        for (t, w) in weight.iter().enumerate() {
            let row = &block[t * inner..(t + 1) * inner];
            for ((s, m), v) in sum.iter_mut().zip(&max).zip(row) {
                *s += (v + w - m).exp();
            }
        }
        for ((dst, m), s) in out[o * inner..(o + 1) * inner]
            .iter_mut()
            .zip(&max)
            .zip(&sum)
        {
            *dst = if *m == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                m + s.ln()
            };
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape.remove(axis);
    (out, new_shape)
}

/// Reduces every axis not listed in `keep` (sorted ascending), adding
/// `weight(axis)` along each reduced axis. Returns the reduced tensor over
/// the kept axes in their original order.
pub(crate) fn marginalize<'a>(
    data: &[f64],
    shape: &[usize],
    keep: &[usize],
    weight: impl Fn(usize) -> &'a [f64],
) -> Vec<f64> {
    let mut current: Option<(Vec<f64>, Vec<usize>)> = None;
    for axis in (0..shape.len()).rev() {
        if keep.contains(&axis) {
            continue;
        }
        let (d, s) = match &current {
            None => (data, shape),
            Some((d, s)) => (d.as_slice(), s.as_slice()),
        };
        current = Some(contract_axis(d, s, axis, weight(axis)));
    }
    match current {
        Some((d, _)) => d,
        None => data.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_direct_sum() {
        let v = [0.1, -2.0, 3.5, 0.0];
        let direct = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((logsumexp(&v) - direct).abs() < 1e-14);
        let mut acc = LseAccumulator::default();
        v.iter().for_each(|&x| acc.push(x));
        assert!((acc.value() - direct).abs() < 1e-14);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert_eq!(LseAccumulator::default().value(), f64::NEG_INFINITY);
    }

    #[test]
    fn lse_survives_extreme_scales() {
        let v = [-1000.0, -1000.0];
        assert!((logsumexp(&v) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        let mut acc = LseAccumulator::default();
        for x in [-1000.0, 800.0, 799.0] {
            acc.push(x);
        }
        assert!((acc.value() - (800.0 + (1.0 + (-1.0f64).exp()).ln())).abs() < 1e-12);
    }

    #[test]
    fn marginalize_matches_brute_force() {
        let shape = [2usize, 3, 4];
        let data: Vec<f64> = (0..24).map(|k| ((k * 7) % 11) as f64 * 0.3 - 1.0).collect();
        let w: Vec<Vec<f64>> = shape
            .iter()
            .map(|&n| (0..n).map(|t| 0.1 * t as f64 - 0.2).collect())
            .collect();
        for keep in [vec![0], vec![1], vec![2], vec![0, 2], vec![1, 2]] {
            let got = marginalize(&data, &shape, &keep, |a| w[a].as_slice());
            let kept_shape: Vec<usize> = keep.iter().map(|&a| shape[a]).collect();
            let mut expect = vec![0.0; kept_shape.iter().product()];
            let mut idx = vec![0usize; 3];
            let mut flat = 0;
            loop {
                let mut e = data[flat];
                for a in 0..3 {
                    if !keep.contains(&a) {
                        e += w[a][idx[a]];
                    }
                }
                let mut out = 0;
                for &a in &keep {
                    out = out * shape[a] + idx[a];
                }
                expect[out] += e.exp();
                flat += 1;
                if !advance(&mut idx, &shape) {
                    break;
                }
            }
            for (g, e) in got.iter().zip(&expect) {
                assert!((g - e.ln()).abs() < 1e-13, "keep {keep:?}");
            }
        }
    }
}
