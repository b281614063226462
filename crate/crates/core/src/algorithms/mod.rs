//! The relaxed reference algorithms, each written as a [`Statement`]
//! program with a thin wrapper, plus plain discrete twins in [`reference`].
//!
//! [`Statement`]: crate::program::Statement

pub mod levenshtein;
pub mod raster;
pub mod reference;
pub mod shortest_path;
pub mod sort;

pub use levenshtein::{levenshtein, one_hot_string, LDResult};
pub use raster::{
    rasterize_euclidean, rasterize_three_edges, signed_point_triangle_distance,
    transform_and_projection, Camera, Mesh2DProjection, Rendered,
};
pub use shortest_path::{bellman_ford, GridPathResult};
pub use sort::{bubble_sort, swap_count_hard, SortResult};
