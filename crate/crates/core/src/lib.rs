pub mod cli;
pub mod codeword;
pub mod dataset;
pub mod model;
pub mod nn;
pub mod qim;
pub mod stream;
pub mod train;
