pub mod causal;
pub mod ids;
pub mod kbp;
pub mod link;
pub mod trace;
pub mod audit;
pub mod netsim;
pub mod baselines;
pub mod cli;
