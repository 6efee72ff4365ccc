//! Neural surrogate of the trajectory simulator.

mod io;
mod mlp;
mod train;

pub use io::{decode_weights, encode_weights, load_weights, save_weights, MAGIC, VERSION};
pub use mlp::{Gradients, Mlp, Scaler};
pub use train::{train_sgd, Dataset, TrainConfig, TrainReport};
