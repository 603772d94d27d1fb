pub mod continuation;
pub mod codim2;
pub mod cycles;
pub mod diagram;
pub mod equilibria;
pub mod error;
pub mod events;
pub mod homoclinic;
pub mod integrate;
pub mod io;
pub mod linalg;
pub mod model;
pub mod par;
