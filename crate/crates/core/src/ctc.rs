//! Connectionist Temporal Classification over an alphabet with one blank.
//!
//! The target sequence is extended with blanks (`-, l1, -, l2, -, ...`), the
//! forward/backward variables run over the resulting trellis in log space,
//! and the loss is the negative log of the total probability of all paths
//! that collapse to the target. The gradient is taken with respect to
//! pre-softmax activations. `brute_force_total_prob` enumerates every path
//! and is the oracle the dynamic program is tested against.

use ndarray::Array2;
use thiserror::Error;

const NEG_INF: f64 = f64::NEG_INFINITY;

#[derive(Debug, Error)]
pub enum CtcError {
    #[error("token id {id} out of range for alphabet of size {n}")]
    TokenOutOfRange { id: usize, n: usize },
    #[error("target contains the blank id {0}")]
    BlankInTarget(usize),
    #[error("blank id {blank} out of range for alphabet of size {n}")]
    BlankOutOfRange { blank: usize, n: usize },
    #[error("grid must have at least one frame")]
    EmptyGrid,
    #[error("grid entry ({row},{col}) = {value} outside [0,1]")]
    EntryOutOfRange { row: usize, col: usize, value: f64 },
    #[error("grid row {row} sums to {sum}, expected 1 within 1e-6")]
    RowNotNormalized { row: usize, sum: f64 },
    #[error("{paths:.0} paths exceed the brute-force guard of 1e6")]
    TooLarge { paths: f64 },
}

/// An ordered sequence of non-blank token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq(Vec<usize>);

impl TokenSeq {
    pub fn new(ids: Vec<usize>) -> Self {
        TokenSeq(ids)
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<usize>> for TokenSeq {
    fn from(ids: Vec<usize>) -> Self {
        TokenSeq(ids)
    }
}

impl FromIterator<usize> for TokenSeq {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        TokenSeq(iter.into_iter().collect())
    }
}

/// A T x N matrix of per-frame probabilities; every row sums to 1.
#[derive(Debug, Clone)]
pub struct PosteriorGrid {
    values: Array2<f64>,
}

impl PosteriorGrid {
    pub fn new(values: Array2<f64>) -> Result<Self, CtcError> {
        if values.nrows() == 0 {
            return Err(CtcError::EmptyGrid);
        }
        for (t, row) in values.rows().into_iter().enumerate() {
            let mut sum = 0.0;
            for (k, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(CtcError::EntryOutOfRange {
                        row: t,
                        col: k,
                        value: v,
                    });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(CtcError::RowNotNormalized { row: t, sum });
            }
        }
        Ok(PosteriorGrid { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_tokens(&self) -> usize {
        self.values.ncols()
    }
}

/// The CTC lattice for one (grid, target) pair, in log space.
#[derive(Debug, Clone)]
pub struct Trellis {
    /// Modified label sequence: blank, l1, blank, ..., lU, blank (length 2U+1).
    pub extended: Vec<usize>,
    /// T x S log forward variables.
    pub alphas: Array2<f64>,
    /// T x S log backward variables.
    pub betas: Array2<f64>,
    /// Log of the total probability of all paths collapsing to the target.
    pub log_total: f64,
    /// False when the target structurally cannot be emitted in T frames.
    pub feasible: bool,
}

impl Trellis {
    /// CTC loss: negative log of the total path probability.
    pub fn loss(&self) -> f64 {
        -self.log_total
    }
}

/// Loss and gradient of the CTC objective with respect to pre-softmax logits.
#[derive(Debug, Clone)]
pub struct CtcLossGrad {
    pub loss: f64,
    pub grad: Array2<f64>,
    pub feasible: bool,
}

/// Interleave blanks: `[l1, l2, ...]` becomes `[-, l1, -, l2, -, ...]`.
pub fn extend_with_blanks(target: &TokenSeq, blank: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(2 * target.len() + 1);
    out.push(blank);
    for &id in target.ids() {
        out.push(id);
        out.push(blank);
    }
    out
}

/// The collapse mapping: merge runs of identical ids, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> TokenSeq {
    let mut out = Vec::new();
    let mut prev: Option<usize> = None;
    for &id in path {
        if prev != Some(id) && id != blank {
            out.push(id);
        }
        prev = Some(id);
    }
    TokenSeq(out)
}

/// Minimum number of frames needed to emit `target`: one per label plus one
/// separating blank between each adjacent pair of equal labels.
pub fn min_frames(target: &TokenSeq) -> usize {
    let dup_pairs = target.ids().windows(2).filter(|w| w[0] == w[1]).count();
    target.len() + dup_pairs
}

fn check_target(target: &TokenSeq, n: usize, blank: usize) -> Result<(), CtcError> {
    if blank >= n {
        return Err(CtcError::BlankOutOfRange { blank, n });
    }
    for &id in target.ids() {
        if id >= n {
            return Err(CtcError::TokenOutOfRange { id, n });
        }
        if id == blank {
            return Err(CtcError::BlankInTarget(blank));
        }
    }
    Ok(())
}

/// log(exp(a) + exp(b)) without overflow; -inf is the additive identity.
fn log_add(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Whether position `s` of the extended sequence may be entered from `s-2`:
/// only when it is a non-blank label distinct from the label at `s-2`.
fn skip_allowed(ext: &[usize], s: usize, blank: usize) -> bool {
    s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]
}

/// Forward-backward on the trellis given log probabilities (T x N).
fn forward_backward(log_probs: &Array2<f64>, ext: &[usize], blank: usize) -> (Array2<f64>, Array2<f64>, f64) {
    let t_len = log_probs.nrows();
    let s_len = ext.len();
    let mut alphas = Array2::from_elem((t_len, s_len), NEG_INF);
    let mut betas = Array2::from_elem((t_len, s_len), NEG_INF);

    alphas[[0, 0]] = log_probs[[0, ext[0]]];
    if s_len > 1 {
        alphas[[0, 1]] = log_probs[[0, ext[1]]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alphas[[t - 1, s]];
            if s >= 1 {
                acc = log_add(acc, alphas[[t - 1, s - 1]]);
            }
            if skip_allowed(ext, s, blank) {
                acc = log_add(acc, alphas[[t - 1, s - 2]]);
            }
            if acc != NEG_INF {
                alphas[[t, s]] = acc + log_probs[[t, ext[s]]];
            }
        }
    }

    betas[[t_len - 1, s_len - 1]] = log_probs[[t_len - 1, ext[s_len - 1]]];
    if s_len > 1 {
        betas[[t_len - 1, s_len - 2]] = log_probs[[t_len - 1, ext[s_len - 2]]];
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut acc = betas[[t + 1, s]];
            if s + 1 < s_len {
                acc = log_add(acc, betas[[t + 1, s + 1]]);
            }
            if s + 2 < s_len && skip_allowed(ext, s + 2, blank) {
                acc = log_add(acc, betas[[t + 1, s + 2]]);
            }
            if acc != NEG_INF {
                betas[[t, s]] = acc + log_probs[[t, ext[s]]];
            }
        }
    }

    let mut log_total = alphas[[t_len - 1, s_len - 1]];
    if s_len > 1 {
        log_total = log_add(log_total, alphas[[t_len - 1, s_len - 2]]);
    }
    (alphas, betas, log_total)
}

/// Total log probability of all paths collapsing to `target`, via the
/// dynamic program on the trellis. Structurally infeasible targets yield a
/// flagged `log_total = -inf` rather than an error.
pub fn ctc_log_prob(grid: &PosteriorGrid, target: &TokenSeq, blank: usize) -> Result<Trellis, CtcError> {
    check_target(target, grid.n_tokens(), blank)?;
    let ext = extend_with_blanks(target, blank);
    let feasible = min_frames(target) <= grid.n_frames();
    if !feasible {
        let t_len = grid.n_frames();
        return Ok(Trellis {
            alphas: Array2::from_elem((t_len, ext.len()), NEG_INF),
            betas: Array2::from_elem((t_len, ext.len()), NEG_INF),
            extended: ext,
            log_total: NEG_INF,
            feasible: false,
        });
    }
    let log_probs = grid.values().mapv(f64::ln);
    let (alphas, betas, log_total) = forward_backward(&log_probs, &ext, blank);
    Ok(Trellis {
        extended: ext,
        alphas,
        betas,
        log_total,
        feasible: true,
    })
}

/// Row-wise log-softmax.
fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(NEG_INF, f64::max);
        let log_z = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
        row.mapv_inplace(|v| v - log_z);
    }
    out
}

/// CTC loss and gradient with respect to pre-softmax activations.
///
/// `grad[t][k] = softmax(logits)[t][k] - gamma[t][k]` where `gamma[t][k]` is
/// the posterior mass the trellis assigns to token `k` at frame `t`.
/// Infeasible targets return `loss = +inf` with a zero gradient, flagged.
pub fn ctc_loss_grad(logits: &Array2<f64>, target: &TokenSeq, blank: usize) -> Result<CtcLossGrad, CtcError> {
    if logits.nrows() == 0 {
        return Err(CtcError::EmptyGrid);
    }
    check_target(target, logits.ncols(), blank)?;
    if min_frames(target) > logits.nrows() {
        return Ok(CtcLossGrad {
            loss: f64::INFINITY,
            grad: Array2::zeros(logits.raw_dim()),
            feasible: false,
        });
    }

    let log_probs = log_softmax_rows(logits);
    let ext = extend_with_blanks(target, blank);
    let (alphas, betas, log_total) = forward_backward(&log_probs, &ext, blank);

    let mut grad = log_probs.mapv(f64::exp);
    for t in 0..logits.nrows() {
        for (s, &token) in ext.iter().enumerate() {
            let a = alphas[[t, s]];
            let b = betas[[t, s]];
            if a == NEG_INF || b == NEG_INF {
                continue;
            }
            // Both alpha and beta include the emission at t; divide it out once.
            grad[[t, token]] -= (a + b - log_probs[[t, token]] - log_total).exp();
        }
    }
    Ok(CtcLossGrad {
        loss: -log_total,
        grad,
        feasible: true,
    })
}

/// Per-frame argmax (ties to the lowest id), then collapse.
pub fn best_path_decode(grid: &PosteriorGrid, blank: usize) -> TokenSeq {
    let path: Vec<usize> = grid
        .values()
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    collapse(&path, blank)
}

/// Exhaustive oracle: sum of probabilities of every path whose collapse
/// equals `target`. Guarded to N^T <= 1e6.
pub fn brute_force_total_prob(grid: &PosteriorGrid, target: &TokenSeq, blank: usize) -> Result<f64, CtcError> {
    check_target(target, grid.n_tokens(), blank)?;
    let t_len = grid.n_frames();
    let n = grid.n_tokens();
    let paths = (n as f64).powi(t_len as i32);
    if paths > 1e6 {
        return Err(CtcError::TooLarge { paths });
    }

    let mut total = 0.0;
    let mut path = vec![0usize; t_len];
    loop {
        if collapse(&path, blank) == *target {
            let mut p = 1.0;
            for (t, &id) in path.iter().enumerate() {
                p *= grid.values()[[t, id]];
            }
            total += p;
        }
        // Next path in base-N counter order.
        let mut t = 0;
        loop {
            if t == t_len {
                return Ok(total);
            }
            path[t] += 1;
            if path[t] < n {
                break;
            }
            path[t] = 0;
            t += 1;
        }
    }
}

/// Per-frame consistency of the trellis: logsumexp over s of
/// `alpha + beta - log y` must equal `log_total` at every frame.
pub fn trellis_frame_totals(trellis: &Trellis, grid: &PosteriorGrid) -> Vec<f64> {
    let log_probs = grid.values().mapv(f64::ln);
    (0..grid.n_frames())
        .map(|t| {
            let mut acc = NEG_INF;
            for (s, &token) in trellis.extended.iter().enumerate() {
                let a = trellis.alphas[[t, s]];
                let b = trellis.betas[[t, s]];
                if a == NEG_INF || b == NEG_INF {
                    continue;
                }
                acc = log_add(acc, a + b - log_probs[[t, token]]);
            }
            acc
        })
        .collect()
}
