pub mod cascade;
pub mod ensemble;
pub mod error;
pub mod fan;
pub mod gbt;
pub mod harness;
pub mod oracle;
pub mod orderings;
pub mod policy;
pub mod qwyc;
pub mod synth;
pub mod tabular;
