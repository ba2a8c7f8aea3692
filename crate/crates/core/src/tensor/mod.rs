//! Dense-network substrate: matrices, ReLU/identity layers with inverted
//! dropout, hand-written backpropagation, softmax cross-entropy and MSE
//! losses, Adam, and named random streams. Everything is `f64` and
//! deterministic given the streams passed in.

mod loss;
mod matrix;
mod net;
mod optim;
mod rng;

pub use loss::{cross_entropy_loss, mse_loss, softmax, softmax_rows};
pub use matrix::Matrix;
pub use net::{Activation, DenseNet, Layer, NetGradients, Tape};
pub use optim::{Adam, AdamConfig};
pub use rng::RngStream;
