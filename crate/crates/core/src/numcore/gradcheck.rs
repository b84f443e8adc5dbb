use super::{NumError, ParamGrads, ParamStore};

/// Gradients below this magnitude are compared on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `name[index]` of the coordinate with the largest relative error.
    pub worst: String,
    pub coords: usize,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares analytic gradients with central differences
/// `(f(p + h) - f(p - h)) / 2h` for every coordinate of every trainable
/// parameter in `store`.
///
/// `eval` returns the loss and, when asked, its analytic gradients.
pub fn grad_check<F>(store: &mut ParamStore, h: f64, mut eval: F) -> Result<GradCheckReport, NumError>
where
    F: FnMut(&ParamStore, bool) -> Result<(f64, Option<ParamGrads>), NumError>,
{
    let (_, grads) = eval(store, true)?;
    let grads = grads.ok_or(NumError::NotTracked)?;
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: String::new(),
        coords: 0,
    };
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.requires_grad)
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        let n = store.value(id).numel();
        for j in 0..n {
            let orig = store.value(id).data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + h;
            let (fp, _) = eval(store, false)?;
            store.get_mut(id).value.data_mut()[j] = orig - h;
            let (fm, _) = eval(store, false)?;
            store.get_mut(id).value.data_mut()[j] = orig;

            let numeric = (fp - fm) / (2.0 * h);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[j]);
            let rel = rel_err(analytic, numeric);
            report.coords += 1;
            report.max_abs_err = report.max_abs_err.max((analytic - numeric).abs());
            if report.worst.is_empty() || rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = format!("{}[{j}]", store.get(id).name);
            }
        }
    }
    Ok(report)
}
