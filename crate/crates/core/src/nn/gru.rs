//! Gated recurrent units and the bidirectional wrapper, with backpropagation
//! through time written out by hand.
//!
//! Cell equations (update gate z, reset gate r, candidate c):
//!
//! ```text
//! z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
//! r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
//! c_t = tanh(W_h x_t + U_h (r_t ⊙ h_{t-1}) + b_h)
//! h_t = (1 - z_t) ⊙ h_{t-1} + z_t ⊙ c_t
//! ```

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += m^T a` (accumulate the input gradient of a matvec).
fn add_matvec_transposed(out: &mut Array1<f64>, m: &Array2<f64>, a: &Array1<f64>) {
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for (o, &mij) in out.iter_mut().zip(m.row(i)) {
            *o += ai * mij;
        }
    }
}

/// `dm += a ⊗ b` (accumulate the weight gradient of a matvec).
fn add_outer(dm: &mut Array2<f64>, a: &Array1<f64>, b: ArrayView1<f64>) {
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for (d, &bj) in dm.row_mut(i).iter_mut().zip(b.iter()) {
            *d += ai * bj;
        }
    }
}

#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_z: Array2<f64>,
    pub u_z: Array2<f64>,
    pub b_z: Array1<f64>,
    pub w_r: Array2<f64>,
    pub u_r: Array2<f64>,
    pub b_r: Array1<f64>,
    pub w_h: Array2<f64>,
    pub u_h: Array2<f64>,
    pub b_h: Array1<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct GruGrads {
    pub w_z: Array2<f64>,
    pub u_z: Array2<f64>,
    pub b_z: Array1<f64>,
    pub w_r: Array2<f64>,
    pub u_r: Array2<f64>,
    pub b_r: Array1<f64>,
    pub w_h: Array2<f64>,
    pub u_h: Array2<f64>,
    pub b_h: Array1<f64>,
}

struct StepCache {
    h_prev: Array1<f64>,
    z: Array1<f64>,
    r: Array1<f64>,
    c: Array1<f64>,
    reset_h: Array1<f64>,
}

impl GruCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruCell {
            w_z: Array2::zeros((hidden, input)),
            u_z: Array2::zeros((hidden, hidden)),
            b_z: Array1::zeros(hidden),
            w_r: Array2::zeros((hidden, input)),
            u_r: Array2::zeros((hidden, hidden)),
            b_r: Array1::zeros(hidden),
            w_h: Array2::zeros((hidden, input)),
            u_h: Array2::zeros((hidden, hidden)),
            b_h: Array1::zeros(hidden),
        }
    }

    pub fn init(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut cell = Self::zeros(input, hidden);
        for (_, values) in cell.param_slices_mut() {
            // Biases stay zero; weight matrices get Glorot-uniform entries.
            if values.len() == hidden {
                continue;
            }
            let fan_sum = if values.len() == hidden * input {
                (input + hidden) as f64
            } else {
                (2 * hidden) as f64
            };
            let bound = (6.0 / fan_sum).sqrt();
            for v in values {
                *v = rng.random_range(-bound..bound);
            }
        }
        cell
    }

    pub fn hidden(&self) -> usize {
        self.b_z.len()
    }

    pub fn input_width(&self) -> usize {
        self.w_z.dim().1
    }

    /// Parameters in a fixed order, as flat slices.
    pub fn param_slices_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("w_z", self.w_z.as_slice_mut().unwrap()),
            ("u_z", self.u_z.as_slice_mut().unwrap()),
            ("b_z", self.b_z.as_slice_mut().unwrap()),
            ("w_r", self.w_r.as_slice_mut().unwrap()),
            ("u_r", self.u_r.as_slice_mut().unwrap()),
            ("b_r", self.b_r.as_slice_mut().unwrap()),
            ("w_h", self.w_h.as_slice_mut().unwrap()),
            ("u_h", self.u_h.as_slice_mut().unwrap()),
            ("b_h", self.b_h.as_slice_mut().unwrap()),
        ]
    }

    pub fn param_slices(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w_z", self.w_z.as_slice().unwrap()),
            ("u_z", self.u_z.as_slice().unwrap()),
            ("b_z", self.b_z.as_slice().unwrap()),
            ("w_r", self.w_r.as_slice().unwrap()),
            ("u_r", self.u_r.as_slice().unwrap()),
            ("b_r", self.b_r.as_slice().unwrap()),
            ("w_h", self.w_h.as_slice().unwrap()),
            ("u_h", self.u_h.as_slice().unwrap()),
            ("b_h", self.b_h.as_slice().unwrap()),
        ]
    }

    /// Run over a T x D sequence from a zero initial state.
    fn run(&self, xs: &Array2<f64>) -> (Array2<f64>, Vec<StepCache>) {
        let t_len = xs.nrows();
        let hidden = self.hidden();
        let mut hs = Array2::zeros((t_len, hidden));
        let mut caches = Vec::with_capacity(t_len);
        let mut h_prev = Array1::zeros(hidden);

        for t in 0..t_len {
            let x_t = xs.row(t);
            let mut z = self.w_z.dot(&x_t) + self.u_z.dot(&h_prev) + &self.b_z;
            z.mapv_inplace(sigmoid);
            let mut r = self.w_r.dot(&x_t) + self.u_r.dot(&h_prev) + &self.b_r;
            r.mapv_inplace(sigmoid);
            let reset_h = &r * &h_prev;
            let mut c = self.w_h.dot(&x_t) + self.u_h.dot(&reset_h) + &self.b_h;
            c.mapv_inplace(f64::tanh);
            let h = (1.0 - &z) * &h_prev + &z * &c;
            hs.row_mut(t).assign(&h);
            caches.push(StepCache {
                h_prev,
                z,
                r,
                c,
                reset_h,
            });
            h_prev = h;
        }
        (hs, caches)
    }

    /// Backprop through time. `d_hs` holds the loss gradient at every output
    /// step; returns the input gradient and parameter gradients.
    fn backprop(&self, xs: &Array2<f64>, caches: &[StepCache], d_hs: &Array2<f64>) -> (Array2<f64>, GruGrads) {
        let t_len = xs.nrows();
        let hidden = self.hidden();
        let mut grads = GruGrads::zeros_like(self);
        let mut dxs = Array2::zeros(xs.raw_dim());
        let mut carry: Array1<f64> = Array1::zeros(hidden);

        for t in (0..t_len).rev() {
            let cache = &caches[t];
            let x_t = xs.row(t);
            let dh = &d_hs.row(t) + &carry;

            // h = (1-z) h_prev + z c
            let dz = (&cache.c - &cache.h_prev) * &dh;
            let dc = &cache.z * &dh;
            let mut dh_prev = (1.0 - &cache.z) * &dh;

            let da_c = (1.0 - &cache.c * &cache.c) * &dc;
            let da_z = &cache.z * (1.0 - &cache.z) * &dz;

            // Candidate path: a_c = W_h x + U_h (r ⊙ h_prev) + b_h
            let mut d_reset_h = Array1::zeros(hidden);
            add_matvec_transposed(&mut d_reset_h, &self.u_h, &da_c);
            let dr = &d_reset_h * &cache.h_prev;
            dh_prev = dh_prev + &d_reset_h * &cache.r;
            let da_r = &cache.r * (1.0 - &cache.r) * &dr;

            add_matvec_transposed(&mut dh_prev, &self.u_z, &da_z);
            add_matvec_transposed(&mut dh_prev, &self.u_r, &da_r);

            let mut dx = Array1::zeros(xs.ncols());
            add_matvec_transposed(&mut dx, &self.w_z, &da_z);
            add_matvec_transposed(&mut dx, &self.w_r, &da_r);
            add_matvec_transposed(&mut dx, &self.w_h, &da_c);
            dxs.row_mut(t).assign(&dx);

            add_outer(&mut grads.w_z, &da_z, x_t);
            add_outer(&mut grads.u_z, &da_z, cache.h_prev.view());
            grads.b_z += &da_z;
            add_outer(&mut grads.w_r, &da_r, x_t);
            add_outer(&mut grads.u_r, &da_r, cache.h_prev.view());
            grads.b_r += &da_r;
            add_outer(&mut grads.w_h, &da_c, x_t);
            add_outer(&mut grads.u_h, &da_c, cache.reset_h.view());
            grads.b_h += &da_c;

            carry = dh_prev;
        }
        (dxs, grads)
    }
}

impl GruGrads {
    pub fn zeros_like(cell: &GruCell) -> Self {
        GruGrads {
            w_z: Array2::zeros(cell.w_z.raw_dim()),
            u_z: Array2::zeros(cell.u_z.raw_dim()),
            b_z: Array1::zeros(cell.b_z.len()),
            w_r: Array2::zeros(cell.w_r.raw_dim()),
            u_r: Array2::zeros(cell.u_r.raw_dim()),
            b_r: Array1::zeros(cell.b_r.len()),
            w_h: Array2::zeros(cell.w_h.raw_dim()),
            u_h: Array2::zeros(cell.u_h.raw_dim()),
            b_h: Array1::zeros(cell.b_h.len()),
        }
    }

    pub fn grad_slices(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w_z", self.w_z.as_slice().unwrap()),
            ("u_z", self.u_z.as_slice().unwrap()),
            ("b_z", self.b_z.as_slice().unwrap()),
            ("w_r", self.w_r.as_slice().unwrap()),
            ("u_r", self.u_r.as_slice().unwrap()),
            ("b_r", self.b_r.as_slice().unwrap()),
            ("w_h", self.w_h.as_slice().unwrap()),
            ("u_h", self.u_h.as_slice().unwrap()),
            ("b_h", self.b_h.as_slice().unwrap()),
        ]
    }

    pub fn grad_slices_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("w_z", self.w_z.as_slice_mut().unwrap()),
            ("u_z", self.u_z.as_slice_mut().unwrap()),
            ("b_z", self.b_z.as_slice_mut().unwrap()),
            ("w_r", self.w_r.as_slice_mut().unwrap()),
            ("u_r", self.u_r.as_slice_mut().unwrap()),
            ("b_r", self.b_r.as_slice_mut().unwrap()),
            ("w_h", self.w_h.as_slice_mut().unwrap()),
            ("u_h", self.u_h.as_slice_mut().unwrap()),
            ("b_h", self.b_h.as_slice_mut().unwrap()),
        ]
    }
}

/// Two GRU cells run over opposite time directions; outputs concatenated per
/// frame to T x 2H.
#[derive(Debug, Clone)]
pub struct Bgru {
    pub forward_cell: GruCell,
    pub backward_cell: GruCell,
}

pub struct BgruCache {
    forward: Vec<StepCache>,
    backward: Vec<StepCache>,
    xs_rev: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct BgruGrads {
    pub forward: GruGrads,
    pub backward: GruGrads,
}

fn reverse_rows(xs: &Array2<f64>) -> Array2<f64> {
    let mut rev = xs.clone();
    rev.invert_axis(Axis(0));
    rev
}

impl Bgru {
    pub fn init(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Bgru {
            forward_cell: GruCell::init(input, hidden, rng),
            backward_cell: GruCell::init(input, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward_cell.hidden()
    }

    pub fn forward(&self, xs: &Array2<f64>) -> (Array2<f64>, BgruCache) {
        let t_len = xs.nrows();
        let hidden = self.hidden();
        let xs_rev = reverse_rows(xs);
        let (hs_f, cache_f) = self.forward_cell.run(xs);
        let (hs_b, cache_b) = self.backward_cell.run(&xs_rev);

        let mut out = Array2::zeros((t_len, 2 * hidden));
        for t in 0..t_len {
            out.row_mut(t)
                .slice_mut(ndarray::s![..hidden])
                .assign(&hs_f.row(t));
            out.row_mut(t)
                .slice_mut(ndarray::s![hidden..])
                .assign(&hs_b.row(t_len - 1 - t));
        }
        (
            out,
            BgruCache {
                forward: cache_f,
                backward: cache_b,
                xs_rev,
            },
        )
    }

    pub fn backward(&self, xs: &Array2<f64>, cache: &BgruCache, d_out: &Array2<f64>) -> (Array2<f64>, BgruGrads) {
        let t_len = xs.nrows();
        let hidden = self.hidden();

        let mut d_f = Array2::zeros((t_len, hidden));
        let mut d_b = Array2::zeros((t_len, hidden));
        for t in 0..t_len {
            d_f.row_mut(t).assign(&d_out.row(t).slice(ndarray::s![..hidden]));
            // The backward cell saw the sequence reversed.
            d_b.row_mut(t_len - 1 - t)
                .assign(&d_out.row(t).slice(ndarray::s![hidden..]));
        }

        let (dx_f, grads_f) = self.forward_cell.backprop(xs, &cache.forward, &d_f);
        let (dx_b_rev, grads_b) = self.backward_cell.backprop(&cache.xs_rev, &cache.backward, &d_b);
        let dx = dx_f + reverse_rows(&dx_b_rev);
        (
            dx,
            BgruGrads {
                forward: grads_f,
                backward: grads_b,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_seq(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((t, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let bgru = Bgru {
            forward_cell: GruCell::zeros(3, 2),
            backward_cell: GruCell::zeros(3, 2),
        };
        let xs = random_seq(&mut rng(0), 6, 3);
        let (out, _) = bgru.forward(&xs);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tied_cells_swap_halves_under_time_reversal() {
        let mut r = rng(1);
        let cell = GruCell::init(3, 2, &mut r);
        let bgru = Bgru {
            forward_cell: cell.clone(),
            backward_cell: cell,
        };
        let xs = random_seq(&mut r, 5, 3);
        let (out, _) = bgru.forward(&xs);
        let (out_rev, _) = bgru.forward(&reverse_rows(&xs));
        let h = 2;
        for t in 0..5 {
            for i in 0..h {
                let a = out_rev[[t, i]];
                let b = out[[4 - t, h + i]];
                assert!((a - b).abs() < 1e-12, "first half vs reversed second half");
                let c = out_rev[[t, h + i]];
                let d = out[[4 - t, i]];
                assert!((c - d).abs() < 1e-12, "second half vs reversed first half");
            }
        }
    }

    fn bgru_param_vec(bgru: &Bgru) -> Vec<f64> {
        let mut v = Vec::new();
        for (_, s) in bgru.forward_cell.param_slices() {
            v.extend_from_slice(s);
        }
        for (_, s) in bgru.backward_cell.param_slices() {
            v.extend_from_slice(s);
        }
        v
    }

    fn bgru_with_params(template: &Bgru, flat: &[f64]) -> Bgru {
        let mut out = template.clone();
        let mut offset = 0;
        for (_, s) in out.forward_cell.param_slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        for (_, s) in out.backward_cell.param_slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        assert_eq!(offset, flat.len());
        out
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(2);
        let bgru = Bgru::init(3, 2, &mut r);
        let xs = random_seq(&mut r, 5, 3);
        let proj = random_seq(&mut r, 5, 4);

        let (_, cache) = bgru.forward(&xs);
        let (dx, grads) = bgru.backward(&xs, &cache, &proj);

        // Input gradient.
        let x_vec: Vec<f64> = xs.iter().cloned().collect();
        let err_x = gradcheck::check(dx.as_slice().unwrap(), &x_vec, 1e-5, |v| {
            let xv = Array2::from_shape_vec(xs.raw_dim(), v.to_vec()).unwrap();
            (&bgru.forward(&xv).0 * &proj).sum()
        });
        assert!(err_x < 1e-7, "input gradient error {err_x}");

        // All parameters at once.
        let mut analytic = Vec::new();
        for (_, s) in grads.forward.grad_slices() {
            analytic.extend_from_slice(s);
        }
        for (_, s) in grads.backward.grad_slices() {
            analytic.extend_from_slice(s);
        }
        let p_vec = bgru_param_vec(&bgru);
        let err_p = gradcheck::check(&analytic, &p_vec, 1e-5, |v| {
            let b = bgru_with_params(&bgru, v);
            (&b.forward(&xs).0 * &proj).sum()
        });
        assert!(err_p < 1e-6, "parameter gradient error {err_p}");
    }
}
