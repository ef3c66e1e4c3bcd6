//! Reverse-mode differentiation, loss, optimizer and learning-rate schedule.

mod loss;
mod optim;
mod store;
mod tape;

pub use loss::{cross_entropy, LossOutput, Reduction};
pub use optim::{adam_step, poly_lr, AdamState, PolySchedule};
pub use store::{ParamEntry, ParamKind, ParamStore};
pub use tape::{BnUpdate, Gradients, Tape, Var};
