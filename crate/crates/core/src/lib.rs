pub mod autograd;
pub mod encode;
pub mod error;
pub mod eval;
pub mod geom;
pub mod gmm;
pub mod laygen;
pub mod net;
pub mod percept;
pub mod plan;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Model32 = net::KnollingModel<f32>;
pub type Model64 = net::KnollingModel<f64>;
pub type Layout64 = geom::Layout<f64>;
pub type Record64 = geom::ScenarioRecord<f64>;
