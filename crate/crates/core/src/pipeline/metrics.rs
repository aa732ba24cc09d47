//! Cost-saving arithmetic.

/// An accuracy curve: `(iteration, accuracy)` in increasing iteration order.
pub type Curve = [(usize, f64)];

/// First iteration at which `curve` reaches `level`.
pub fn iterations_to(curve: &Curve, level: f64) -> Option<usize> {
    curve.iter().find(|&&(_, a)| a >= level).map(|&(i, _)| i)
}

/// Fine-tuning cost comparison at the highest accuracy both curves reach.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchedSaving {
    pub level: f64,
    pub iters_searched: usize,
    pub iters_vanilla: usize,
    /// `1 - iters_searched / iters_vanilla`; negative when the searched
    /// model is slower.
    pub saving: f64,
}

/// `None` when either curve is empty.
pub fn finetune_saving(searched: &Curve, vanilla: &Curve) -> Option<MatchedSaving> {
    let peak = |c: &Curve| c.iter().map(|&(_, a)| a).fold(f64::NEG_INFINITY, f64::max);
    if searched.is_empty() || vanilla.is_empty() {
        return None;
    }
    let level = peak(searched).min(peak(vanilla));
    let iters_searched = iterations_to(searched, level)?;
    let iters_vanilla = iterations_to(vanilla, level)?;
    let saving = if iters_vanilla == 0 {
        if iters_searched == 0 {
            0.0
        } else {
            return None;
        }
    } else {
        1.0 - iters_searched as f64 / iters_vanilla as f64
    };
    Some(MatchedSaving {
        level,
        iters_searched,
        iters_vanilla,
        saving,
    })
}

pub use crate::earlystop::search_saving;

/// Both savings for one run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostMetrics {
    pub search_saving: f64,
    pub finetune: Option<MatchedSaving>,
}

pub fn cost_metrics(decision: &crate::earlystop::StopDecision, budget: usize, searched: &Curve, vanilla: &Curve) -> CostMetrics {
    CostMetrics {
        search_saving: decision.search_saving(budget),
        finetune: finetune_saving(searched, vanilla),
    }
}
