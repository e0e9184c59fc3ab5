//! Evaluation: exact AUC scoring, cross-device consensus, and run traces.

use crate::error::Error;
use crate::optim::FlatState;
use crate::Result;

/// Exact area under the ROC curve from raw scores, ties counted half.
///
/// Computed by the rank-sum identity in `O(n log n)`: sort all scores, give
/// tied groups their midrank, and normalize the positive rank sum. The result
/// equals the `O(n^2)` pair count `mean(I[s+ > s-] + 0.5 I[s+ == s-])`
/// exactly, because midranks and half-counts are the same sums.
pub fn auc_score(scores_pos: &[f64], scores_neg: &[f64]) -> Result<f64> {
    if scores_pos.is_empty() || scores_neg.is_empty() {
        return Err(Error::EmptyScoreSet);
    }
    let n_pos = scores_pos.len();
    let n_neg = scores_neg.len();
    let mut all: Vec<(f64, bool)> = Vec::with_capacity(n_pos + n_neg);
    all.extend(scores_pos.iter().map(|&s| (s, true)));
    all.extend(scores_neg.iter().map(|&s| (s, false)));
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Ranks are 1-based; the tied block [i, j) shares the midrank.
        let midrank = (i + 1 + j) as f64 / 2.0;
        let pos_in_block = all[i..j].iter().filter(|&&(_, p)| p).count();
        rank_sum_pos += midrank * pos_in_block as f64;
        i = j;
    }

    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Maximum over coordinates of the distance from any device state to the
/// cross-device mean.
///
/// Exactly zero whenever every device holds the same value in a coordinate —
/// in particular immediately after an averaging round, for any device count.
/// (Recomputing the mean of `k` identical values rounds when `k` is not a
/// power of two, so agreement is detected before any division happens.)
pub fn consensus_gap<S: FlatState>(states: &[S]) -> Result<f64> {
    let k = states.len();
    if k == 0 {
        return Err(Error::Config("consensus gap of zero devices".into()));
    }
    let len = states[0].flat_len();
    for (i, s) in states.iter().enumerate() {
        if s.flat_len() != len {
            return Err(Error::LayoutMismatch(format!(
                "device 0 has {len} coordinates but device {i} has {}",
                s.flat_len()
            )));
        }
    }
    let mut flats = vec![vec![0.0; len]; k];
    for (s, f) in states.iter().zip(flats.iter_mut()) {
        s.write_flat(f);
    }
    let mut gap: f64 = 0.0;
    for i in 0..len {
        if flats.iter().all(|f| f[i] == flats[0][i]) {
            continue;
        }
        let mut mean = 0.0;
        for f in &flats {
            mean += f[i];
        }
        mean /= k as f64;
        for f in &flats {
            gap = gap.max((f[i] - mean).abs());
        }
    }
    Ok(gap)
}

/// One evaluation row of a federated run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    /// Completed local iterations (1-based at record time).
    pub iteration: usize,
    /// Completed averaging rounds.
    pub round: usize,
    pub algo: &'static str,
    /// Mean cross-entropy of the averaged model on the training pool.
    pub train_ce: Option<f64>,
    /// Minimax surrogate value of the averaged state on the training pool.
    pub train_auc_loss: Option<f64>,
    /// Test AUC of the averaged model.
    pub test_auc_avg_model: Option<f64>,
    /// Mean over devices of each device's own test AUC.
    pub test_auc_mean_devices: Option<f64>,
    pub consensus_gap: f64,
    /// Squared gradient norm of the outer objective (synthetic runs only).
    pub grad_norm_sq: Option<f64>,
    /// Step scale in effect at this iteration.
    pub eta_t: f64,
    /// Wall-clock milliseconds since the run started; 0 unless timing was
    /// requested, so default traces are byte-identical across machines.
    pub wall_ms: u64,
}

/// Header of the per-run trace CSV.
pub const TRACE_HEADER: &str = "iteration,round,algo,seed,train_ce,train_auc_loss,test_auc_avg_model,test_auc_mean_devices,consensus_gap,grad_norm_sq,eta_t,wall_ms";

/// Render a real with 17 significant digits, enough to round-trip f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Render one trace row (matching [`TRACE_HEADER`] order).
pub fn trace_row(rec: &MetricsRecord, seed: u64) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        rec.iteration,
        rec.round,
        rec.algo,
        seed,
        fmt_opt(rec.train_ce),
        fmt_opt(rec.train_auc_loss),
        fmt_opt(rec.test_auc_avg_model),
        fmt_opt(rec.test_auc_mean_devices),
        fmt_f64(rec.consensus_gap),
        fmt_opt(rec.grad_norm_sq),
        fmt_f64(rec.eta_t),
        rec.wall_ms
    )
}
