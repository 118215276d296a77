//! 2-D convolution with zero same-padding over (time, frequency), the GLU
//! block built from a pair of such convolutions, and frequency-only
//! max-pooling. Feature maps are C x T x M; the time axis is never resized.

use ndarray::{Array1, Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::NnError;

/// Valid output range when output index `i` reads input index `i + shift`.
fn shifted_range(len: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift).clamp(0, len as isize) as usize;
    (lo, hi)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Convolution with zero padding chosen so output shape equals input shape.
#[derive(Debug, Clone)]
pub struct Conv2dSame {
    /// C_out x C_in x KT x KM.
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    pub d_input: Array3<f64>,
    pub d_weight: Array4<f64>,
    pub d_bias: Array1<f64>,
}

impl Conv2dSame {
    pub fn zeros(c_in: usize, c_out: usize, kt: usize, km: usize) -> Result<Self, NnError> {
        if kt % 2 == 0 || km % 2 == 0 {
            return Err(NnError::EvenKernel(kt, km));
        }
        Ok(Conv2dSame {
            weight: Array4::zeros((c_out, c_in, kt, km)),
            bias: Array1::zeros(c_out),
        })
    }

    /// Glorot-uniform filters, zero biases.
    pub fn init(c_in: usize, c_out: usize, kt: usize, km: usize, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        let mut layer = Self::zeros(c_in, c_out, kt, km)?;
        let fan_in = (c_in * kt * km) as f64;
        let fan_out = (c_out * kt * km) as f64;
        let bound = (6.0 / (fan_in + fan_out)).sqrt();
        for w in layer.weight.iter_mut() {
            *w = rng.random_range(-bound..bound);
        }
        Ok(layer)
    }

    pub fn c_in(&self) -> usize {
        self.weight.dim().1
    }

    pub fn c_out(&self) -> usize {
        self.weight.dim().0
    }

    fn check_input(&self, x: &Array3<f64>) -> Result<(), NnError> {
        if x.dim().0 != self.c_in() {
            return Err(NnError::ShapeMismatch(format!(
                "input has {} channels, conv expects {}",
                x.dim().0,
                self.c_in()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array3<f64>) -> Result<Array3<f64>, NnError> {
        self.check_input(x)?;
        let (_, t_len, m_len) = x.dim();
        let (c_out, c_in, kt, km) = self.weight.dim();
        let (pt, pm) = ((kt / 2) as isize, (km / 2) as isize);

        let mut out = Array3::zeros((c_out, t_len, m_len));
        let x_flat = x.as_slice().expect("input is standard layout");
        let out_flat = out.as_slice_mut().expect("output is standard layout");
        let plane = t_len * m_len;

        for co in 0..c_out {
            let out_c = &mut out_flat[co * plane..(co + 1) * plane];
            let b = self.bias[co];
            out_c.fill(b);
            for ci in 0..c_in {
                let x_c = &x_flat[ci * plane..(ci + 1) * plane];
                for dt in 0..kt {
                    let st = dt as isize - pt;
                    let (t_lo, t_hi) = shifted_range(t_len, st);
                    for dm in 0..km {
                        let sm = dm as isize - pm;
                        let (m_lo, m_hi) = shifted_range(m_len, sm);
                        if m_lo >= m_hi {
                            continue;
                        }
                        let w = self.weight[[co, ci, dt, dm]];
                        if w == 0.0 {
                            continue;
                        }
                        for t in t_lo..t_hi {
                            let src_row = (t as isize + st) as usize;
                            let src = &x_c[src_row * m_len + (m_lo as isize + sm) as usize..];
                            let dst = &mut out_c[t * m_len + m_lo..t * m_len + m_hi];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += w * s;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&self, x: &Array3<f64>, dy: &Array3<f64>) -> Result<Conv2dGrads, NnError> {
        self.check_input(x)?;
        if dy.dim() != (self.c_out(), x.dim().1, x.dim().2) {
            return Err(NnError::ShapeMismatch(format!(
                "output gradient {:?} does not match conv output {:?}",
                dy.dim(),
                (self.c_out(), x.dim().1, x.dim().2)
            )));
        }
        let (_, t_len, m_len) = x.dim();
        let (c_out, c_in, kt, km) = self.weight.dim();
        let (pt, pm) = ((kt / 2) as isize, (km / 2) as isize);
        let plane = t_len * m_len;

        let x_flat = x.as_slice().expect("standard layout");
        let dy_flat = dy.as_slice().expect("standard layout");

        let mut d_input = Array3::zeros(x.raw_dim());
        let mut d_weight = Array4::zeros(self.weight.raw_dim());
        let mut d_bias = Array1::zeros(c_out);
        let dx_flat = d_input.as_slice_mut().expect("standard layout");

        for co in 0..c_out {
            let dy_c = &dy_flat[co * plane..(co + 1) * plane];
            d_bias[co] = dy_c.iter().sum();
            for ci in 0..c_in {
                let x_c = &x_flat[ci * plane..(ci + 1) * plane];
                let dx_c = &mut dx_flat[ci * plane..(ci + 1) * plane];
                for dt in 0..kt {
                    let st = dt as isize - pt;
                    let (t_lo, t_hi) = shifted_range(t_len, st);
                    for dm in 0..km {
                        let sm = dm as isize - pm;
                        let (m_lo, m_hi) = shifted_range(m_len, sm);
                        if m_lo >= m_hi {
                            continue;
                        }
                        let w = self.weight[[co, ci, dt, dm]];
                        let mut dw = 0.0;
                        for t in t_lo..t_hi {
                            let src_row = (t as isize + st) as usize;
                            let x_off = src_row * m_len + (m_lo as isize + sm) as usize;
                            let dy_row = &dy_c[t * m_len + m_lo..t * m_len + m_hi];
                            let x_row = &x_c[x_off..x_off + (m_hi - m_lo)];
                            let dx_row = &mut dx_c[x_off..x_off + (m_hi - m_lo)];
                            for ((g, xs), dxs) in dy_row.iter().zip(x_row).zip(dx_row) {
                                dw += g * xs;
                                *dxs += w * g;
                            }
                        }
                        d_weight[[co, ci, dt, dm]] = dw;
                    }
                }
            }
        }
        Ok(Conv2dGrads {
            d_input,
            d_weight,
            d_bias,
        })
    }
}

/// Gated linear unit block: `Y = (W * X + b) ⊙ σ(V * X + c)` with both paths
/// implemented as same-padded convolutions of identical shape.
#[derive(Debug, Clone)]
pub struct GluConv {
    pub linear: Conv2dSame,
    pub gate: Conv2dSame,
}

/// Activations stored for the backward pass.
#[derive(Debug, Clone)]
pub struct GluCache {
    pub linear_out: Array3<f64>,
    pub gate_sig: Array3<f64>,
}

#[derive(Debug, Clone)]
pub struct GluGrads {
    pub d_input: Array3<f64>,
    pub linear: Conv2dGrads,
    pub gate: Conv2dGrads,
}

impl GluConv {
    pub fn init(c_in: usize, c_out: usize, kt: usize, km: usize, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        Ok(GluConv {
            linear: Conv2dSame::init(c_in, c_out, kt, km, rng)?,
            gate: Conv2dSame::init(c_in, c_out, kt, km, rng)?,
        })
    }

    pub fn forward(&self, x: &Array3<f64>) -> Result<(Array3<f64>, GluCache), NnError> {
        let linear_out = self.linear.forward(x)?;
        let mut gate_sig = self.gate.forward(x)?;
        gate_sig.mapv_inplace(sigmoid);
        let y = &linear_out * &gate_sig;
        Ok((y, GluCache { linear_out, gate_sig }))
    }

    pub fn backward(&self, x: &Array3<f64>, cache: &GluCache, dy: &Array3<f64>) -> Result<GluGrads, NnError> {
        // Product rule through both branches; σ' = σ(1-σ).
        let d_linear_out = dy * &cache.gate_sig;
        let d_gate_pre = dy * &cache.linear_out * &cache.gate_sig * &cache.gate_sig.mapv(|s| 1.0 - s);
        let linear = self.linear.backward(x, &d_linear_out)?;
        let gate = self.gate.backward(x, &d_gate_pre)?;
        let d_input = &linear.d_input + &gate.d_input;
        Ok(GluGrads {
            d_input,
            linear,
            gate,
        })
    }
}

/// Max-pool along the frequency axis only; time resolution is preserved.
/// Returns the pooled map and the argmax bin per output cell (first index on
/// ties), which the backward pass routes gradient through.
pub fn freq_max_pool_forward(x: &Array3<f64>, factor: usize) -> Result<(Array3<f64>, Array3<usize>), NnError> {
    let (c, t_len, m_len) = x.dim();
    if factor == 0 || m_len % factor != 0 {
        return Err(NnError::NotDivisible { m: m_len, factor });
    }
    let m_out = m_len / factor;
    let mut out = Array3::zeros((c, t_len, m_out));
    let mut argmax = Array3::zeros((c, t_len, m_out));
    for ci in 0..c {
        for t in 0..t_len {
            for j in 0..m_out {
                let mut best = j * factor;
                let mut best_v = x[[ci, t, best]];
                for m in j * factor + 1..(j + 1) * factor {
                    if x[[ci, t, m]] > best_v {
                        best_v = x[[ci, t, m]];
                        best = m;
                    }
                }
                out[[ci, t, j]] = best_v;
                argmax[[ci, t, j]] = best;
            }
        }
    }
    Ok((out, argmax))
}

/// Scatter the pooled gradient back to the winning bins.
pub fn freq_max_pool_backward(argmax: &Array3<usize>, dy: &Array3<f64>, m_in: usize) -> Array3<f64> {
    let (c, t_len, m_out) = dy.dim();
    let mut dx = Array3::zeros((c, t_len, m_in));
    for ci in 0..c {
        for t in 0..t_len {
            for j in 0..m_out {
                dx[[ci, t, argmax[[ci, t, j]]]] += dy[[ci, t, j]];
            }
        }
    }
    dx
}
