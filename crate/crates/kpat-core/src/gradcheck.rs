//! Central finite-difference gradient verification.
//!
//! The forward pass is treated as a black box: the caller provides the
//! parameter tensors and a builder closure that assembles a scalar loss from
//! leaf nodes. Autodiff gradients are compared against `(f(x+h) - f(x-h)) / 2h`
//! coordinate by coordinate, in f64 so the comparison is not dominated by
//! rounding error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, NodeRef};
use crate::tensor::{Tensor, TensorError};

pub const DEFAULT_EPS: f64 = 1e-4;

/// Max relative error between autodiff and finite differences over sampled
/// coordinates: `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
///
/// Tensors with at most `max_coords_per_param` elements are checked fully;
/// larger ones are spot-checked at seeded random coordinates. The builder
/// must be deterministic (no dropout).
pub fn grad_check<F>(
    params: &[Tensor<f64>],
    eps: f64,
    max_coords_per_param: usize,
    seed: u64,
    mut build: F,
) -> Result<f64, TensorError>
where
    F: FnMut(&mut Graph<f64>, &[NodeRef]) -> Result<NodeRef, TensorError>,
{
    let autodiff_grads = {
        let mut g = Graph::new();
        let leaves: Vec<NodeRef> = params.iter().map(|p| g.leaf(p.clone(), true)).collect();
        let loss = build(&mut g, &leaves)?;
        if g.value(loss).numel() != 1 {
            return Err(TensorError::InvalidParameter {
                op: "grad_check",
                message: "builder must produce a scalar loss".into(),
            });
        }
        g.backward(loss)?;
        leaves
            .iter()
            .map(|&l| {
                g.grad(l)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(g.value(l).shape().to_vec()))
            })
            .collect::<Vec<_>>()
    };

    let mut eval = |perturbed: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let leaves: Vec<NodeRef> = perturbed.iter().map(|p| g.leaf(p.clone(), false)).collect();
        let loss = build(&mut g, &leaves)?;
        Ok(g.value(loss).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut max_rel_err = 0.0f64;
    for (pi, grad) in autodiff_grads.iter().enumerate() {
        let n = grad.numel();
        let coords: Vec<usize> = if n <= max_coords_per_param {
            (0..n).collect()
        } else {
            (0..max_coords_per_param).map(|_| rng.gen_range(0..n)).collect()
        };
        for ci in coords {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + eps;
            let f_plus = eval(&work)?;
            work[pi].data_mut()[ci] = orig - eps;
            let f_minus = eval(&work)?;
            work[pi].data_mut()[ci] = orig;
            let g_fd = (f_plus - f_minus) / (2.0 * eps);
            let g_ad = grad.data()[ci];
            let rel = (g_ad - g_fd).abs() / (1e-8f64).max(g_ad.abs() + g_fd.abs());
            if rel > max_rel_err {
                max_rel_err = rel;
            }
        }
    }
    Ok(max_rel_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact() {
        // f(x) = sum(x^2), gradient 2x
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::<f64>::uniform(vec![4, 5], -2.0, 2.0, &mut rng);
        let err = grad_check(&[x], DEFAULT_EPS, usize::MAX, 0, |g, leaves| {
            let sq = g.mul(leaves[0], leaves[0])?;
            g.sum_all(sq)
        })
        .unwrap();
        assert!(err < 1e-7, "relative error {err}");
    }

    #[test]
    fn single_attention_layer_checks_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = Tensor::<f64>::uniform(vec![3, 8], -1.0, 1.0, &mut rng);
        let k = Tensor::<f64>::uniform(vec![5, 8], -1.0, 1.0, &mut rng);
        let v = Tensor::<f64>::uniform(vec![5, 8], -1.0, 1.0, &mut rng);
        let err = grad_check(&[q, k, v], DEFAULT_EPS, usize::MAX, 0, |g, leaves| {
            let out = g.attention(leaves[0], leaves[1], leaves[2], None, 1.0)?;
            let sq = g.mul(out, out)?;
            g.sum_all(sq)
        })
        .unwrap();
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn layer_norm_and_cross_entropy_check_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = Tensor::<f64>::uniform(vec![4, 6], -1.5, 1.5, &mut rng);
        let gain = Tensor::<f64>::uniform(vec![6], 0.5, 1.5, &mut rng);
        let bias = Tensor::<f64>::uniform(vec![6], -0.5, 0.5, &mut rng);
        let proj = Tensor::<f64>::uniform(vec![6, 9], -0.7, 0.7, &mut rng);
        let targets = [3u32, 0, 7, 2];
        let err = grad_check(&[x, gain, bias, proj], DEFAULT_EPS, usize::MAX, 0, |g, l| {
            let normed = g.layer_norm(l[0], l[1], l[2])?;
            let logits = g.matmul(normed, l[3])?;
            g.cross_entropy(logits, &targets, u32::MAX, 0.0)
        })
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }
}
