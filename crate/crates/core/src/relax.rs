//! Relaxed comparators and selection operators.
//!
//! Each comparator returns the probability that the comparison holds when
//! the compared values carry independent logistic noise of scale `1/beta`.
//! `<=` and `>=` coincide with `<` and `>` under continuous noise, so only
//! the strict forms are provided.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// A tensor of probabilities (usually a scalar; elementwise for vector
/// conditions).
#[derive(Debug, Clone)]
pub struct Probability(Tensor);

impl Probability {
    /// Wraps a tensor whose entries are probabilities.
    ///
    /// Out-of-range values are reported in debug builds but left untouched so
    /// that gradient flow is never cut by a clamp.
    pub fn new(t: Tensor) -> Self {
        debug_assert!(
            t.value().iter().all(|p| (-1e-9..=1.0 + 1e-9).contains(p)),
            "probability out of range: {:?}",
            t.value()
        );
        Probability(t)
    }

    pub fn constant(p: f64) -> Self {
        Probability::new(Tensor::scalar(p))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn value(&self) -> f64 {
        self.0.item()
    }

    pub fn complement(&self) -> Probability {
        Probability(self.0.one_minus())
    }
}

/// Non-negative weights over `n` categories summing to one.
#[derive(Debug, Clone)]
pub struct CategoricalDistribution(Tensor);

impl CategoricalDistribution {
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.rank() != 1 || weights.is_empty() {
            return Err(Error::structural(format!(
                "categorical distribution must be a nonempty vector, got shape {:?}",
                weights.shape()
            )));
        }
        let v = weights.value();
        let sum: f64 = v.iter().sum();
        if v.iter().any(|w| *w < -1e-12) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::domain(
                "categorical",
                format!("weights must be non-negative and sum to 1 (sum = {sum})"),
            ));
        }
        Ok(CategoricalDistribution(weights))
    }

    pub fn one_hot(n: usize, k: usize) -> Result<Self> {
        if k >= n {
            return Err(Error::structural(format!("category {k} out of range for {n}")));
        }
        let mut w = vec![0.0; n];
        w[k] = 1.0;
        Self::new(Tensor::vector(w))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(Tensor::vector(vec![1.0 / n as f64; n]))
    }

    pub fn weights(&self) -> &Tensor {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Category with the largest weight (first on ties).
    pub fn argmax(&self) -> usize {
        hard_argmax(self.0.value())
    }
}

/// `P[a < b] = sigma_beta(b - a)`.
pub fn prob_lt(a: &Tensor, b: &Tensor, beta: f64) -> Result<Probability> {
    Ok(Probability::new(b.sub(a)?.sigmoid(beta)?))
}

/// `P[a > b] = P[b < a]`.
pub fn prob_gt(a: &Tensor, b: &Tensor, beta: f64) -> Result<Probability> {
    prob_lt(b, a, beta)
}

/// Relaxed equality: the density ratio `sech^2(beta (b - a) / 2)`, which is 1
/// when `a == b` and decays in the tails.
pub fn prob_eq(a: &Tensor, b: &Tensor, beta: f64) -> Result<Probability> {
    Ok(Probability::new(b.sub(a)?.sech2_half(beta)?))
}

/// Conjunction of independent events.
pub fn prob_and(p: &Probability, q: &Probability) -> Result<Probability> {
    Ok(Probability::new(p.0.mul(&q.0)?))
}

/// Disjunction of independent events: `p + q - p q`.
pub fn prob_or(p: &Probability, q: &Probability) -> Result<Probability> {
    // 1 - (1-p)(1-q)
    Ok(Probability::new(p.0.one_minus().mul(&q.0.one_minus())?.one_minus()))
}

/// Relaxed argmax: the softmax distribution over the entries of `x`.
pub fn soft_argmax(x: &Tensor, beta: f64) -> Result<CategoricalDistribution> {
    if x.rank() != 1 || x.is_empty() {
        return Err(Error::structural("soft_argmax expects a nonempty vector"));
    }
    Ok(CategoricalDistribution(x.softmax(beta, 0)?))
}

/// `<softmax(beta x), x>`.
pub fn soft_max(x: &Tensor, beta: f64) -> Result<Tensor> {
    soft_argmax(x, beta)?.0.dot(x)
}

/// `<softmax(-beta x), x>`.
pub fn soft_min(x: &Tensor, beta: f64) -> Result<Tensor> {
    soft_argmax(&x.neg(), beta)?.0.dot(x)
}

/// Row-wise soft minimum of a matrix, together with the row-wise weights.
pub fn soft_min_rows(x: &Tensor, beta: f64) -> Result<(Tensor, Tensor)> {
    if x.rank() != 2 {
        return Err(Error::structural("soft_min_rows expects a matrix"));
    }
    let w = x.neg().softmax(beta, 1)?;
    let m = w.mul(x)?.sum_axis(Some(1))?;
    Ok((m, w))
}

/// Probability that two categorical variables agree.
///
/// With a one-hot `y` this is the inner product (the joint probability).
/// Otherwise both are L2-normalized first (cosine similarity) so that
/// identical non-degenerate distributions compare as 1.
pub fn cat_prob_eq(
    x: &CategoricalDistribution,
    y: &CategoricalDistribution,
    y_is_one_hot: bool,
) -> Result<Probability> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            op: "cat_prob_eq",
            lhs: x.0.shape().to_vec(),
            rhs: y.0.shape().to_vec(),
        });
    }
    let inner = x.0.dot(&y.0)?;
    if y_is_one_hot {
        return Ok(Probability::new(inner));
    }
    let nx = x.0.square().sum();
    let ny = y.0.square().sum();
    if nx.item() == 0.0 || ny.item() == 0.0 {
        return Err(Error::domain("cat_prob_eq", "zero-norm distribution"));
    }
    let denom = nx.mul(&ny)?.sqrt()?;
    Ok(Probability::new(inner.div(&denom)?))
}

/// Exact argmax (first maximal index). Untracked helper for hard mode and oracles.
pub fn hard_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Exact argmin (first minimal index).
pub fn hard_argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// Tracked exact minimum: the gradient flows to the selected entry.
pub fn hard_min(x: &Tensor) -> Result<Tensor> {
    if x.is_empty() {
        return Err(Error::structural("min of an empty tensor"));
    }
    x.at(hard_argmin(x.value()))
}

pub fn hard_max(x: &Tensor) -> Result<Tensor> {
    if x.is_empty() {
        return Err(Error::structural("max of an empty tensor"));
    }
    x.at(hard_argmax(x.value()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_grad, relative_error, value_and_grad};
    use proptest::prelude::*;

    fn s(v: f64) -> Tensor {
        Tensor::scalar(v)
    }

    #[test]
    fn comparator_examples() {
        assert_eq!(prob_lt(&s(0.4), &s(0.4), 2.0).unwrap().value(), 0.5);
        assert!((prob_lt(&s(1.0), &s(2.0), 1.0).unwrap().value() - 0.7310585786300049).abs() < 1e-12);
        assert!(prob_lt(&s(2.0), &s(1.0), 1e6).unwrap().value() < 1e-12);
        assert!((prob_gt(&s(2.0), &s(1.0), 1.0).unwrap().value() - 0.7310585786300049).abs() < 1e-12);
        assert_eq!(prob_gt(&s(-3.0), &s(-3.0), 1.0).unwrap().value(), 0.5);
    }

    #[test]
    fn equality_examples() {
        assert_eq!(prob_eq(&s(1.3), &s(1.3), 5.0).unwrap().value(), 1.0);
        assert!(prob_eq(&s(0.0), &s(100.0), 1.0).unwrap().value() < 1e-40);
        assert!((prob_eq(&s(0.0), &s(2.0), 1.0).unwrap().value() - 0.41997434161402614).abs() < 1e-12);
    }

    #[test]
    fn and_or_identities() {
        let p = Probability::constant(0.37);
        assert_eq!(prob_and(&Probability::constant(1.0), &p).unwrap().value(), 0.37);
        assert!((prob_or(&Probability::constant(0.0), &p).unwrap().value() - 0.37).abs() < 1e-15);
        assert_eq!(prob_or(&Probability::constant(0.5), &Probability::constant(0.5)).unwrap().value(), 0.75);
    }

    #[test]
    fn soft_argmax_examples() {
        let u = soft_argmax(&Tensor::vector(vec![0.7; 4]), 3.0).unwrap();
        assert!(u.weights().value().iter().all(|w| (w - 0.25).abs() < 1e-15));
        let d = soft_argmax(&Tensor::vector(vec![0.0, 2f64.ln()]), 1.0).unwrap();
        assert!((d.weights().value()[1] - 2.0 / 3.0).abs() < 1e-12);
        let h = soft_argmax(&Tensor::vector(vec![1.0, 3.0, 2.0]), 1e6).unwrap();
        let expect = [0.0, 1.0, 0.0];
        for (w, e) in h.weights().value().iter().zip(expect) {
            assert!((w - e).abs() < 1e-9);
        }
        assert!(soft_argmax(&Tensor::vector(vec![]), 1.0).is_err());
    }

    #[test]
    fn soft_max_min_examples() {
        assert!((soft_max(&Tensor::vector(vec![2.5; 3]), 1.0).unwrap().item() - 2.5).abs() < 1e-15);
        assert!((soft_min(&Tensor::vector(vec![1.0, 3.0]), 1e6).unwrap().item() - 1.0).abs() < 1e-6);
        let m = soft_max(&Tensor::vector(vec![0.0, 1.0]), 1.0).unwrap().item();
        let e = std::f64::consts::E;
        assert!((m - e / (1.0 + e)).abs() < 1e-12);
    }

    #[test]
    fn categorical_equality_examples() {
        let x = CategoricalDistribution::new(Tensor::vector(vec![0.2, 0.5, 0.3])).unwrap();
        assert!((cat_prob_eq(&x, &x, false).unwrap().value() - 1.0).abs() < 1e-15);
        let a = CategoricalDistribution::one_hot(3, 0).unwrap();
        let b = CategoricalDistribution::one_hot(3, 2).unwrap();
        assert_eq!(cat_prob_eq(&a, &b, true).unwrap().value(), 0.0);
        let half = CategoricalDistribution::new(Tensor::vector(vec![0.5, 0.5])).unwrap();
        let oh = CategoricalDistribution::one_hot(2, 1).unwrap();
        assert_eq!(cat_prob_eq(&half, &oh, true).unwrap().value(), 0.5);
        assert!(cat_prob_eq(&half, &a, false).is_err());
        assert!(CategoricalDistribution::new(Tensor::vector(vec![0.5, 0.6])).is_err());
    }

    #[test]
    fn hard_limit_rounds_to_boolean() {
        let mut x = -5.0;
        while x < 5.0 {
            for gap in [1e-2, 0.1, 1.0] {
                assert_eq!(prob_lt(&s(x), &s(x + gap), 1e6).unwrap().value(), 1.0);
                assert_eq!(prob_lt(&s(x + gap), &s(x), 1e6).unwrap().value(), 0.0);
            }
            x += 0.37;
        }
    }

    #[test]
    fn comparator_gradients_match_finite_differences() {
        let beta = 1.7;
        type Op = (&'static str, Box<dyn Fn(&Tensor) -> Result<Tensor>>);
        let ops: Vec<Op> = vec![
            ("prob_lt", Box::new(move |t: &Tensor| Ok(prob_lt(&t.at(0)?, &t.at(1)?, beta)?.into_tensor()))),
            ("prob_gt", Box::new(move |t: &Tensor| Ok(prob_gt(&t.at(0)?, &t.at(1)?, beta)?.into_tensor()))),
            ("prob_eq", Box::new(move |t: &Tensor| Ok(prob_eq(&t.at(0)?, &t.at(1)?, beta)?.into_tensor()))),
            ("soft_min", Box::new(move |t: &Tensor| soft_min(t, beta))),
            ("soft_max", Box::new(move |t: &Tensor| soft_max(t, beta))),
            ("cat_prob_eq", Box::new(move |t: &Tensor| {
                let x = CategoricalDistribution(t.gather(&[0, 1], &[2])?.softmax(1.0, 0)?);
                let y = CategoricalDistribution(t.gather(&[2, 3], &[2])?.softmax(1.0, 0)?);
                Ok(cat_prob_eq(&x, &y, false)?.into_tensor())
            })),
        ];
        let mut seed = 1u64;
        for (name, f) in ops {
            for _ in 0..100 {
                seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let v: Vec<f64> = (0..4).map(|k| (((seed >> (8 * k)) & 0xff) as f64 / 64.0) - 2.0).collect();
                let x = Tensor::vector(v);
                let (_, g) = value_and_grad(&f, &x).unwrap();
                let fd = finite_difference_grad(|t| f(t).map(|v| v.item()), &x, 1e-5).unwrap();
                let err = relative_error(&g, &fd);
                assert!(err <= 1e-4, "{name}: {err:e}");
            }
        }
    }

    proptest! {
        #[test]
        fn lt_and_gt_are_complementary(a in -100.0f64..100.0, b in -100.0f64..100.0, beta in 0.01f64..50.0) {
            let p = prob_lt(&s(a), &s(b), beta).unwrap().value();
            let q = prob_gt(&s(a), &s(b), beta).unwrap().value();
            prop_assert!((p + q - 1.0).abs() <= f64::EPSILON);
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn equality_is_normalized_conjunction(a in -20.0f64..20.0, b in -20.0f64..20.0, beta in 0.01f64..10.0) {
            let e = prob_eq(&s(a), &s(b), beta).unwrap().value();
            let lt = prob_lt(&s(a), &s(b), beta).unwrap().value();
            let gt = prob_gt(&s(a), &s(b), beta).unwrap().value();
            prop_assert!((e - 4.0 * lt * gt).abs() <= 1e-12);
        }

        #[test]
        fn and_or_algebra(p in 0.0f64..=1.0, q in 0.0f64..=1.0, r in 0.0f64..=1.0) {
            let (p, q, r) = (Probability::constant(p), Probability::constant(q), Probability::constant(r));
            let v = |x: Result<Probability>| x.unwrap().value();
            prop_assert!((v(prob_and(&p, &q)) - v(prob_and(&q, &p))).abs() <= 1e-12);
            prop_assert!((v(prob_or(&p, &q)) - v(prob_or(&q, &p))).abs() <= 1e-12);
            let and_l = v(prob_and(&prob_and(&p, &q).unwrap(), &r));
            let and_r = v(prob_and(&p, &prob_and(&q, &r).unwrap()));
            prop_assert!((and_l - and_r).abs() <= 1e-12);
            let or_l = v(prob_or(&prob_or(&p, &q).unwrap(), &r));
            let or_r = v(prob_or(&p, &prob_or(&q, &r).unwrap()));
            prop_assert!((or_l - or_r).abs() <= 1e-12);
        }

        #[test]
        fn cosine_equality_is_symmetric(a in proptest::collection::vec(0.01f64..1.0, 4), b in proptest::collection::vec(0.01f64..1.0, 4)) {
            let norm = |v: Vec<f64>| { let s: f64 = v.iter().sum(); Tensor::vector(v.into_iter().map(|x| x / s).collect()) };
            let x = CategoricalDistribution::new(norm(a)).unwrap();
            let y = CategoricalDistribution::new(norm(b)).unwrap();
            let xy = cat_prob_eq(&x, &y, false).unwrap().value();
            let yx = cat_prob_eq(&y, &x, false).unwrap().value();
            prop_assert!((xy - yx).abs() <= 1e-15);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&xy));
        }
    }
}
