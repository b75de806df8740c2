use serde::{Deserialize, Serialize};

use crate::dataio::Montage;
use crate::models::ModelInstance;
use crate::{Error, Result};

/// Grid side length; with 65 cells the 0.25-spaced standard electrodes fall
/// exactly on grid points.
pub const DEFAULT_RESOLUTION: usize = 65;

const COINCIDENT: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Electrode {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub value: f64,
}

/// `values[row][col]`, row 0 at the top (y = 1), col 0 at the left (x = -1);
/// `None` outside the head disc.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopomapGrid {
    pub kernel_index: usize,
    pub resolution: usize,
    pub values: Vec<Vec<Option<f64>>>,
    pub electrodes: Vec<Electrode>,
}

impl TopomapGrid {
    /// Plane coordinates of grid cell `(row, col)`.
    pub fn coords(&self, row: usize, col: usize) -> (f64, f64) {
        cell_coords(self.resolution, row, col)
    }

    pub fn present(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().filter_map(|v| *v)
    }
}

fn cell_coords(resolution: usize, row: usize, col: usize) -> (f64, f64) {
    let span = (resolution - 1) as f64;
    (-1.0 + 2.0 * col as f64 / span, 1.0 - 2.0 * row as f64 / span)
}

/// Power-2 inverse-distance interpolant at `(x, y)`; exact at electrodes.
pub fn idw_value(positions: &[[f64; 2]], weights: &[f64], x: f64, y: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (p, w) in positions.iter().zip(weights) {
        let d2 = (x - p[0]).powi(2) + (y - p[1]).powi(2);
        if d2 < COINCIDENT * COINCIDENT {
            return *w;
        }
        num += w / d2;
        den += 1.0 / d2;
    }
    num / den
}

/// Interpolates per-electrode `weights` onto a `resolution` x `resolution`
/// grid over [-1, 1]^2.
pub fn idw_grid(weights: &[f64], montage: &Montage, resolution: usize, kernel_index: usize) -> Result<TopomapGrid> {
    if resolution < 2 {
        return Err(Error::Parameter(format!("resolution {resolution} is below 2")));
    }
    if weights.len() != montage.len() {
        return Err(Error::dim(
            "channels",
            format!("{} weights for a {}-electrode montage", weights.len(), montage.len()),
        ));
    }
    if montage.is_empty() {
        return Err(Error::EmptyData("montage has no electrodes".into()));
    }
    let values = (0..resolution)
        .map(|row| {
            (0..resolution)
                .map(|col| {
                    let (x, y) = cell_coords(resolution, row, col);
                    (x * x + y * y <= 1.0 + 1e-12).then(|| idw_value(&montage.positions, weights, x, y))
                })
                .collect()
        })
        .collect();
    let electrodes = montage
        .names
        .iter()
        .zip(&montage.positions)
        .zip(weights)
        .map(|((name, p), &value)| Electrode { name: name.clone(), x: p[0], y: p[1], value })
        .collect();
    Ok(TopomapGrid { kernel_index, resolution, values, electrodes })
}

/// Topomap of SCCNet spatial kernel `kernel_index`.
pub fn spatial_topomap(
    model: &ModelInstance,
    kernel_index: usize,
    montage: &Montage,
    resolution: usize,
) -> Result<TopomapGrid> {
    let kernels = model.spatial_kernels()?;
    let [nu, _, c, _] = kernels.dims4("spatial kernels")?;
    if kernel_index >= nu {
        return Err(Error::Parameter(format!("kernel index {kernel_index} out of range for {nu} kernels")));
    }
    let weights = &kernels.values()[kernel_index * c..(kernel_index + 1) * c];
    idw_grid(weights, montage, resolution, kernel_index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field() {
        let m = Montage::standard_22();
        let g = idw_grid(&[0.3; 22], &m, 33, 0).unwrap();
        assert!(g.present().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn mask_excludes_corners() {
        let m = Montage::standard_22();
        let g = idw_grid(&[1.0; 22], &m, 65, 0).unwrap();
        assert!(g.values[0][0].is_none());
        assert!(g.values[32][32].is_some());
        assert_eq!(g.coords(32, 32), (0.0, 0.0));
    }

    #[test]
    fn weight_count_mismatch() {
        let m = Montage::standard_22();
        assert!(idw_grid(&[1.0; 3], &m, 65, 0).is_err());
    }
}
