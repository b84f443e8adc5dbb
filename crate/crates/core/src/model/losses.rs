use crate::numcore::{NumError, Tape, Tensor, Var};

/// Next-fixation loss: Smooth-L1 between layer-normalised predictions and
/// stop-gradient targets, averaged over predicted positions and channels.
/// With `normalize_target` the targets are layer-normalised as well.
pub fn loss_ar(
    tape: &mut Tape,
    pred: Var,
    target: Var,
    beta: f64,
    eps: f64,
    normalize_target: bool,
) -> Result<Var, NumError> {
    let p = tape.layer_norm(pred, eps);
    let mut t = tape.stop_grad(target);
    if normalize_target {
        t = tape.layer_norm(t, eps);
    }
    tape.smooth_l1(p, t, beta)
}

/// Spatial-completion loss: both predictions and stop-gradient targets are
/// layer-normalised. An empty unvisited set contributes zero.
pub fn loss_sc(tape: &mut Tape, pred: Var, target: Var, beta: f64, eps: f64) -> Result<Var, NumError> {
    if tape.value(pred).numel() == 0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let p = tape.layer_norm(pred, eps);
    let t = tape.stop_grad(target);
    let t = tape.layer_norm(t, eps);
    tape.smooth_l1(p, t, beta)
}

/// `l_ar + lambda * l_sc`.
pub fn loss_total(tape: &mut Tape, l_ar: Var, l_sc: Var, lambda: f64) -> Result<Var, NumError> {
    let weighted = tape.scale(l_sc, lambda);
    tape.add(l_ar, weighted)
}
