pub mod fft;
pub mod mode;
pub mod holo;
pub mod eit;
pub mod rng;
pub mod detect;
pub mod phaseref;
pub mod tomo;
pub mod bench;
pub mod config;
pub mod experiment;
pub mod io;
