use super::{NumError, ParamStore};

/// `target <- tau * target + (1 - tau) * online`, elementwise over the
/// parameters the two stores share by position.
///
/// `online` may hold more parameters than `target`; only the leading
/// `target.len()` entries are read.
pub fn ema_update(target: &mut ParamStore, online: &ParamStore, tau: f64) -> Result<(), NumError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(NumError::InvalidArgument(format!(
            "ema tau must be in [0, 1], got {tau}"
        )));
    }
    if online.len() < target.len() {
        return Err(NumError::InvalidArgument(format!(
            "online store has {} parameters, target needs {}",
            online.len(),
            target.len()
        )));
    }
    for (t, o) in target.params_mut().iter_mut().zip(online.params()) {
        if !t.value.same_shape(&o.value) {
            return Err(NumError::ShapeMismatch {
                op: "ema_update",
                left: t.value.shape().to_vec(),
                right: o.value.shape().to_vec(),
            });
        }
        for (tv, ov) in t.value.data_mut().iter_mut().zip(o.value.data()) {
            *tv = tau * *tv + (1.0 - tau) * ov;
        }
    }
    Ok(())
}

/// Cosine ramp of the EMA momentum from `start` at `t = 0` to `end` at
/// `t = total`. Both endpoints are returned exactly.
pub fn ema_schedule_between(t: u64, total: u64, start: f64, end: f64) -> Result<f64, NumError> {
    if t > total {
        return Err(NumError::ScheduleStep { t, total });
    }
    if total == 0 {
        return Ok(end);
    }
    let w = (1.0 - (std::f64::consts::PI * t as f64 / total as f64).cos()) / 2.0;
    Ok(start * (1.0 - w) + end * w)
}

pub const EMA_START: f64 = 0.998;
pub const EMA_END: f64 = 1.0;

/// The default 0.998 -> 1.0 momentum schedule.
pub fn ema_schedule(t: u64, total: u64) -> Result<f64, NumError> {
    ema_schedule_between(t, total, EMA_START, EMA_END)
}
