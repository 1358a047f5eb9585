pub mod lbfgsb;

pub use lbfgsb::{minimize, Bounds, LbfgsbOptions, Minimum, Termination};
