//! Direction bits: ball state spaces whose pure states encode a direction,
//! protocols for transmitting and comparing directions, the noisiness order
//! induced by rotations, and constraints on bipartite interactions.

pub mod composite;
pub mod error;
pub mod framebit;
pub mod gpt;
pub mod interaction;
pub mod io;
pub mod group;
pub mod linalg;
pub mod lp;
pub mod protocol;
pub mod qubit;
pub mod tomography;

pub use error::{Error, Result};
