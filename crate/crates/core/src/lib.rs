pub mod curve;
pub mod evolution;
pub mod fitness;
pub mod rope;
pub mod search_space;
pub mod toy;
pub mod cli;
