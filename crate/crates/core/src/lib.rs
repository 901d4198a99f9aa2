pub mod agent;
pub mod dynamics;
pub mod env;
pub mod exec;
pub mod net;
pub mod replay;
pub mod rng;
pub mod sac;
pub mod td3;
pub mod trainer;
