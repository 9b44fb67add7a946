//! Everything needed to run the model end to end: synthetic data, image
//! files, the optimizer, training and evaluation loops, and checkpoints.

pub mod checkpoint;
pub mod data;
pub mod io;
pub mod optim;
pub mod pgm;
pub mod train;
