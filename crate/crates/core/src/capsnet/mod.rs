//! Capsule network: convolutional front end, primary capsules, category
//! capsules joined by routing-by-agreement, and the margin loss.
//!
//! Convolution layers store parameters in `T` ([`Real`](crate::Real)); the
//! capsule stage (prediction vectors, routing, squash) always runs in `f64`
//! so coupling rows sum to one to within `1e-12`.

mod gradcheck;
mod loss;
mod network;
mod optim;
mod params;
mod routing;
mod spec;
mod squash;
mod train;

pub use gradcheck::{check_gradients, GradientCheck};
pub use loss::{margin_loss, margin_loss_grad, predict, MarginLoss};
pub use network::{backward, forward, CapsNet, Forward, ForwardCache};
pub use optim::Adam;
pub use params::CapsNetParams;
pub use routing::{route, route_backward, route_traced, RoutingState, RoutingTrace};
pub use spec::{Activation, CapsNetSpec};
pub use squash::{squash, squash_backward, squash_norm};
pub use train::{train_capsnet, CapsTrainCfg, TrainOutcome};
