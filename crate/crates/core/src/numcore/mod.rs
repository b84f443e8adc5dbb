//! Dense tensors, reverse-mode autodiff, AdamW and EMA machinery.

mod ema;
mod gradcheck;
mod optim;
mod param;
mod tape;
mod tensor;

pub use ema::{ema_schedule, ema_schedule_between, ema_update, EMA_END, EMA_START};
pub use gradcheck::{grad_check, rel_err, GradCheckReport, REL_ERR_FLOOR};
pub use optim::{adamw_step, OptimizerState};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Bind, ParamGrads, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
pub(crate) use tape::smooth_l1_scalar;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward called on a value that does not require grad")]
    NotTracked,
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("unknown parameter id {0}")]
    UnknownParam(usize),
    #[error("parameter {0} has no gradient buffer")]
    MissingGrad(String),
    #[error("schedule step {t} beyond horizon {total}")]
    ScheduleStep { t: u64, total: u64 },
    #[error("{0}")]
    InvalidArgument(String),
}
