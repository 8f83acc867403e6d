//! Generative adversarial networks for daily log-return series, with the
//! tooling to check generated data against the stylized facts of asset
//! returns.

pub mod autodiff;
pub mod losses;
pub mod market_data;
pub mod nn;
pub mod optim;
pub mod stylized_facts;
pub mod training;
