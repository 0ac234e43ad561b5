pub mod canonical;
pub mod audit;
pub mod backup;
pub mod clock;
pub mod crypto;
pub mod harness;
pub mod model;
pub mod netsim;
pub mod node;
pub mod par;
pub mod pki;
pub mod roots;
pub mod server;
pub mod volume;
