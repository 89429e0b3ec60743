//! Learning transmission switching decisions for DC optimal power flow.

pub mod case;
pub mod linalg;
pub mod qp;
pub mod dcopf;
pub mod ots;
pub mod diffgrad;
pub mod nn;
pub mod pipeline;
