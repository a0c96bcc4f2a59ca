// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod body;
pub mod growth;
pub mod kinematics;
pub mod scenario;
pub mod session;
pub mod steering;
pub mod teleop;
