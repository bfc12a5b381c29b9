//! Dense/sparse matrices and a reverse-mode tape over them.

mod gradcheck;
mod init;
mod params;
pub mod persist;
mod sparse;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with, DEFAULT_COORDS_PER_PARAM};
pub use init::{glorot_bound, glorot_uniform};
pub use params::Parameters;
pub use sparse::{sym_normalize, SparseMatrix};
pub use tape::{row_softmax, Gradients, Tape, Var, LOGIT_CLAMP, PROB_FLOOR};
pub use tensor::{matmul, matmul_nt, matmul_tn, Tensor};
