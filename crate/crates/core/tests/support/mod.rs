pub mod bfs;
pub mod fuzz;
pub mod gradcheck;
