pub mod eval;
pub mod gen;
pub mod sample;
pub mod train;
