use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Tensor;
use crate::error::Result;

use super::ModelKind;

pub(crate) const HIDDEN: usize = 8;

/// A small feature model over a flat parameter vector. Inputs get a
/// constant-one column so every layer is affine.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Net {
    kind: ModelKind,
    inputs: usize,
    outputs: usize,
}

/// `[x | 1]` as an untracked matrix.
fn with_bias(x: &[Vec<f64>]) -> Result<Tensor> {
    let d = x.first().map_or(0, Vec::len);
    let data = x.iter().flat_map(|r| r.iter().copied().chain([1.0])).collect();
    Tensor::new(&[x.len(), d + 1], data)
}

impl Net {
    pub(crate) fn new(kind: ModelKind, inputs: usize, outputs: usize) -> Self {
        Net { kind, inputs, outputs }
    }

    pub(crate) fn num_params(&self) -> usize {
        match self.kind {
            ModelKind::Mlp => (self.inputs + 1) * HIDDEN + (HIDDEN + 1) * self.outputs,
            _ => (self.inputs + 1) * self.outputs,
        }
    }

    pub(crate) fn init(&self, rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
        let normal = Normal::new(0.0, scale).expect("positive scale");
        (0..self.num_params()).map(|_| normal.sample(rng)).collect()
    }

    /// `[m, outputs]` predictions for `m` feature rows.
    pub(crate) fn forward(&self, params: &Tensor, x: &[Vec<f64>]) -> Result<Tensor> {
        let xa = with_bias(x)?;
        let d = self.inputs + 1;
        match self.kind {
            ModelKind::Mlp => {
                let w1 = params.gather(&(0..d * HIDDEN).collect::<Vec<_>>(), &[d, HIDDEN])?;
                let off = d * HIDDEN;
                let w2 = params.gather(
                    &(off..off + (HIDDEN + 1) * self.outputs).collect::<Vec<_>>(),
                    &[HIDDEN + 1, self.outputs],
                )?;
                let h = xa.matmul(&w1)?.sigmoid(1.0)?;
                // Append the bias column: h P + C with P = [I | 0], C = [0 | 1].
                let m = x.len();
                let mut p = vec![0.0; HIDDEN * (HIDDEN + 1)];
                for i in 0..HIDDEN {
                    p[i * (HIDDEN + 1) + i] = 1.0;
                }
                let mut c = vec![0.0; m * (HIDDEN + 1)];
                for r in 0..m {
                    c[r * (HIDDEN + 1) + HIDDEN] = 1.0;
                }
                let ha = h
                    .matmul(&Tensor::new(&[HIDDEN, HIDDEN + 1], p)?)?
                    .add(&Tensor::new(&[m, HIDDEN + 1], c)?)?;
                ha.matmul(&w2)
            }
            _ => xa.matmul(&params.reshape(&[d, self.outputs])?),
        }
    }
}

/// Standard normal vector.
pub(crate) fn gaussian(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, sd).expect("positive sd");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// A batch of `k` distinct indices below `n`, in draw order.
pub(crate) fn batch(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    rand::seq::index::sample(rng, n, k).into_vec()
}

pub(crate) fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_grad, relative_error, value_and_grad};
    use rand::SeedableRng;

    #[test]
    fn shapes_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x: Vec<Vec<f64>> = (0..4).map(|_| uniform_vec(&mut rng, 3, -1.0, 1.0)).collect();
        for kind in [ModelKind::Linear, ModelKind::Mlp] {
            let net = Net::new(kind, 3, 2);
            let p = Tensor::vector(net.init(&mut rng, 0.5));
            assert_eq!(net.forward(&p, &x).unwrap().shape(), &[4, 2]);
            let f = |p: &Tensor| Ok(net.forward(p, &x)?.square().sum());
            let (_, g) = value_and_grad(f, &p).unwrap();
            let fd = finite_difference_grad(|p| Ok(f(p)?.item()), &p, 1e-5).unwrap();
            assert!(relative_error(&g, &fd) < 1e-6);
        }
    }
}
