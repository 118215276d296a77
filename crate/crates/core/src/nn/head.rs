//! Dense output layer, row softmax / elementwise sigmoid, the global
//! max / average pooling that maps frame probabilities to clip
//! probabilities, and binary cross-entropy.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::NnError;

const BCE_EPS: f64 = 1e-7;

/// Per-frame affine map, T x D -> T x N.
#[derive(Debug, Clone)]
pub struct Dense {
    /// D x N.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub d_input: Array2<f64>,
    pub d_weight: Array2<f64>,
    pub d_bias: Array1<f64>,
}

impl Dense {
    pub fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        Dense {
            weight: Array2::from_shape_fn((input, output), |_| rng.random_range(-bound..bound)),
            bias: Array1::zeros(output),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        if x.ncols() != self.weight.nrows() {
            return Err(NnError::ShapeMismatch(format!(
                "dense expects width {}, got {}",
                self.weight.nrows(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.weight) + &self.bias)
    }

    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>) -> DenseGrads {
        DenseGrads {
            d_input: dy.dot(&self.weight.t()),
            d_weight: x.t().dot(dy),
            d_bias: dy.sum_axis(ndarray::Axis(0)),
        }
    }
}

/// Row-wise softmax; every output row sums to 1.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Elementwise sigmoid.
pub fn sigmoid_mat(logits: &Array2<f64>) -> Array2<f64> {
    logits.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Global max pooling over time: T x K frame probabilities to K clip
/// probabilities, plus the winning frame per class (first index on ties).
pub fn gmp_pool(frame_probs: &Array2<f64>) -> (Array1<f64>, Vec<usize>) {
    let (t_len, k) = frame_probs.dim();
    let mut out = Array1::zeros(k);
    let mut argmax = vec![0usize; k];
    for class in 0..k {
        let mut best = 0;
        for t in 1..t_len {
            if frame_probs[[t, class]] > frame_probs[[best, class]] {
                best = t;
            }
        }
        out[class] = frame_probs[[best, class]];
        argmax[class] = best;
    }
    (out, argmax)
}

/// Route the clip gradient to the winning frame of each class.
pub fn gmp_backward(argmax: &[usize], d_clip: &Array1<f64>, t_len: usize) -> Array2<f64> {
    let k = d_clip.len();
    let mut dx = Array2::zeros((t_len, k));
    for class in 0..k {
        dx[[argmax[class], class]] += d_clip[class];
    }
    dx
}

/// Global average pooling over time.
pub fn gap_pool(frame_probs: &Array2<f64>) -> Array1<f64> {
    frame_probs.mean_axis(ndarray::Axis(0)).expect("at least one frame")
}

/// Spread the clip gradient uniformly over frames.
pub fn gap_backward(d_clip: &Array1<f64>, t_len: usize) -> Array2<f64> {
    let k = d_clip.len();
    let mut dx = Array2::zeros((t_len, k));
    for class in 0..k {
        let g = d_clip[class] / t_len as f64;
        for t in 0..t_len {
            dx[[t, class]] = g;
        }
    }
    dx
}

/// Mean binary cross-entropy over classes, with predictions clipped to
/// [eps, 1-eps]; returns the loss and its gradient with respect to the
/// (unclipped) predictions.
pub fn bce_loss(pred: &Array1<f64>, target: &[bool]) -> Result<(f64, Array1<f64>), NnError> {
    if pred.len() != target.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    let k = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array1::zeros(pred.len());
    for (i, (&p, &t)) in pred.iter().zip(target.iter()).enumerate() {
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        let t = if t { 1.0 } else { 0.0 };
        loss += -t * p.ln() - (1.0 - t) * (1.0 - p).ln();
        grad[i] = (-t / p + (1.0 - t) / (1.0 - p)) / k;
    }
    Ok((loss / k, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use ndarray::array;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_logits_softmax_is_uniform() {
        let k = 10;
        let width = 2 * k + 1;
        let probs = softmax_rows(&Array2::zeros((4, width)));
        for v in probs.iter() {
            assert!((v - 1.0 / width as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_logits_sigmoid_is_half() {
        let probs = sigmoid_mat(&Array2::zeros((3, 5)));
        assert!(probs.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut r = rng(0);
        let logits = Array2::from_shape_fn((6, 9), |_| r.random_range(-4.0..4.0));
        let probs = softmax_rows(&logits);
        for row in probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn pooling_hand_cases() {
        let constant = Array2::from_elem((4, 1), 0.3);
        assert!((gmp_pool(&constant).0[0] - 0.3).abs() < 1e-12);
        assert!((gap_pool(&constant)[0] - 0.3).abs() < 1e-12);

        let spike = array![[0.0], [0.0], [1.0], [0.0]];
        let (gmp, argmax) = gmp_pool(&spike);
        assert_eq!(gmp[0], 1.0);
        assert_eq!(argmax[0], 2);
        assert_eq!(gap_pool(&spike)[0], 0.25);
    }

    #[test]
    fn gmp_dominates_gap() {
        let mut r = rng(1);
        let frame = Array2::from_shape_fn((7, 4), |_| r.random_range(0.0..1.0));
        let (gmp, _) = gmp_pool(&frame);
        let gap = gap_pool(&frame);
        for (a, b) in gmp.iter().zip(gap.iter()) {
            assert!(a >= b);
        }
    }

    #[test]
    fn pool_gradients_match_finite_differences() {
        let mut r = rng(2);
        let frame = Array2::from_shape_fn((5, 3), |_| r.random_range(0.05..0.95));
        let d_clip = Array1::from_shape_fn(3, |_| r.random_range(-1.0..1.0));

        let (_, argmax) = gmp_pool(&frame);
        let dx = gmp_backward(&argmax, &d_clip, 5);
        let frame_vec: Vec<f64> = frame.iter().cloned().collect();
        let err = gradcheck::check(dx.as_slice().unwrap(), &frame_vec, 1e-6, |v| {
            let f = Array2::from_shape_vec(frame.raw_dim(), v.to_vec()).unwrap();
            (&gmp_pool(&f).0 * &d_clip).sum()
        });
        assert!(err < 1e-7, "gmp gradient error {err}");

        let dx = gap_backward(&d_clip, 5);
        let err = gradcheck::check(dx.as_slice().unwrap(), &frame_vec, 1e-6, |v| {
            let f = Array2::from_shape_vec(frame.raw_dim(), v.to_vec()).unwrap();
            (&gap_pool(&f) * &d_clip).sum()
        });
        assert!(err < 1e-7, "gap gradient error {err}");
    }

    #[test]
    fn bce_hand_cases() {
        // Perfect confident predictions: loss at the clip floor.
        let (loss, _) = bce_loss(&array![1.0, 0.0], &[true, false]).unwrap();
        assert!(loss < 1e-6);

        // Maximum uncertainty: ln 2.
        let (loss, _) = bce_loss(&array![0.5, 0.5, 0.5], &[true, false, true]).unwrap();
        assert!((loss - (2.0f64).ln()).abs() < 1e-12);

        assert!(bce_loss(&array![0.5], &[true, false]).is_err());
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut r = rng(3);
        let pred = Array1::from_shape_fn(6, |_| r.random_range(0.1..0.9));
        let target = [true, false, true, true, false, false];
        let (_, grad) = bce_loss(&pred, &target).unwrap();
        let pred_vec: Vec<f64> = pred.to_vec();
        let err = gradcheck::check(grad.as_slice().unwrap(), &pred_vec, 1e-6, |v| {
            bce_loss(&Array1::from_vec(v.to_vec()), &target).unwrap().0
        });
        assert!(err < 1e-8, "bce gradient error {err}");
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut r = rng(4);
        let dense = Dense::init(4, 3, &mut r);
        let x = Array2::from_shape_fn((5, 4), |_| r.random_range(-1.0..1.0));
        let proj = Array2::from_shape_fn((5, 3), |_| r.random_range(-1.0..1.0));
        let grads = dense.backward(&x, &proj);

        let w_vec: Vec<f64> = dense.weight.iter().cloned().collect();
        let err = gradcheck::check(grads.d_weight.as_slice().unwrap(), &w_vec, 1e-5, |v| {
            let mut d = dense.clone();
            d.weight = Array2::from_shape_vec(dense.weight.raw_dim(), v.to_vec()).unwrap();
            (&d.forward(&x).unwrap() * &proj).sum()
        });
        assert!(err < 1e-8, "dense weight gradient error {err}");

        let x_vec: Vec<f64> = x.iter().cloned().collect();
        let err = gradcheck::check(grads.d_input.as_slice().unwrap(), &x_vec, 1e-5, |v| {
            let xv = Array2::from_shape_vec(x.raw_dim(), v.to_vec()).unwrap();
            (&dense.forward(&xv).unwrap() * &proj).sum()
        });
        assert!(err < 1e-8, "dense input gradient error {err}");
    }

    #[test]
    fn dense_width_mismatch_is_rejected() {
        let dense = Dense::init(4, 3, &mut rng(5));
        assert!(matches!(
            dense.forward(&Array2::zeros((2, 5))),
            Err(NnError::ShapeMismatch(_))
        ));
    }
}
