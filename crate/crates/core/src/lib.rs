pub mod cli;
pub mod eval;
pub mod gateway;
pub mod instance;
pub mod oracle;
pub mod pipeline;
pub mod spf;
pub mod svg;
pub mod verifier;
