//! Tape-based reverse-mode differentiation over dense ops and the sparse
//! kernels.
//!
//! Every op declares which state tensors its backward rule reads, and the
//! backward rules read *only* those saved tensors: skipping a declared save
//! makes backward abort instead of silently producing numbers. Backward
//! visits nodes in strict reverse registration order. The known-broken
//! variants (forward SpMM substituted in backward, normalization applied in
//! the wrong order, state saving skipped) exist solely behind explicit
//! pitfall flags and are unreachable from the default path.

mod optim;
mod tape;

pub use optim::{zero_grad, Optimizer, Parameter};
pub use tape::{PitfallFlags, Tape, TapeConfig, Var};
