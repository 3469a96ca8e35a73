pub mod oracles;
pub mod fuzz;
