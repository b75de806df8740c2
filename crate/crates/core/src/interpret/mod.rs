//! Visualisation mathematics for trained SCCNet kernels.
//!
//! Spatial kernels become scalp topomaps through inverse-distance weighting
//! on a square grid masked to the unit disc; temporal kernels become rows of
//! a magnitude-spectrum image sorted by peak frequency. Both can be written
//! as PNG rasters with a JSON sidecar holding the raw matrix.

mod raster;
mod spectra;
mod topomap;

pub use raster::{read_sidecar, render_raster, Colormap, Raster};
pub use spectra::{kernel_spectra, temporal_spectra, SpectraImage, FFT_LEN};
pub use topomap::{idw_grid, idw_value, spatial_topomap, Electrode, TopomapGrid, DEFAULT_RESOLUTION};
