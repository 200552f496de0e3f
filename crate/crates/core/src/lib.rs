pub mod autodiff;
pub mod check;
pub mod experiment;
pub mod features;
pub mod network;
pub mod piarch;
pub mod problems;
pub mod reference;
pub mod sampling;
pub mod training;
