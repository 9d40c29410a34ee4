//! Cone-beam digitally reconstructed radiographs: intensity views of a
//! subject volume and projected binary masks.

mod display;
mod geometry;
mod io;
mod project;

pub use display::{equalize_histogram, resize_bilinear, to_display};
pub use geometry::{ProjectionGeometry, Ray, DEFAULT_VIEW_ANGLES_DEG};
pub use io::{
    read_geometry, read_gray_pgm, read_mask_pgm, read_projection, sidecar_path, view_stem, write_geometry,
    write_gray_pgm, write_mask_pgm, write_projection, write_rgb_ppm, ProjectionSidecar,
};
pub use project::{
    project_all_views, project_all_views_with, project_binary_mask, project_binary_mask_with, project_prepared, project_view,
    project_view_with, AttenuationModel, AttenuationVolume, ProjectionImage, ProjectionKind, DEFAULT_MIN_PATH_MM,
};
