//! Synthetic stand-in data: random-ellipse complex phantoms, smooth coil
//! sensitivities, noisy acquisition simulation, and the on-disk dataset
//! container.

pub mod dataset;
pub mod generate;
pub mod pgm;

pub use dataset::{read_dataset, write_dataset, DatasetRecord};
pub use generate::{make_coils, make_phantom, rss, simulate_record, CoilProfile, Phantom};
pub use pgm::write_pgm;
