//! Self-similarity landscapes of known renderers: dense maps, quotient maps,
//! regions of attraction, difficulty estimates and pose descent.

mod descent;
mod difficulty;
mod map;
mod renderer;
mod roa;

pub use descent::{pose_descent, write_trajectory_csv, Descent, DescentOptions, DescentStep, CONVERGENCE_DEG, DEFAULT_MAX_ITERS};
pub use difficulty::{
    difficulty, difficulty_table, reference_maps, sample_references, write_difficulty_csv, DifficultyEntry,
    DifficultyReport,
};
pub use map::{
    distances_to_references, quotient_ssm, thread_pool, read_map_csv, ssm_grid, write_map_csv, write_map_pgm, write_pgm_sidecar,
    GridSpec, SelfSimilarityMap, DEFAULT_EQUATOR_BINS, DEFAULT_FULL_AZIMUTH_BINS, DEFAULT_FULL_ELEVATION_BINS,
    MIN_AZIMUTH_BINS,
};
pub use renderer::{self_similarity, squared_distance, ConstantRenderer, CropRenderer, PoseRenderer, SphereRenderer};
pub use roa::{grid_neighbors, monotone_margin, region_of_attraction, write_region_pbm, RegionOfAttraction, MONOTONE_MARGIN};
