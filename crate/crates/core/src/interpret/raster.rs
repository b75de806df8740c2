use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{SpectraImage, TopomapGrid};
use crate::{Error, Result};

/// Either interpretation matrix; serialised (tagged by `kind`) as the sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Raster {
    Topomap(TopomapGrid),
    Spectra(SpectraImage),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Colormap {
    /// Blue-white-red, symmetric about zero.
    Diverging,
    /// Dark to bright, spanning the matrix range.
    Sequential,
}

impl Raster {
    pub fn default_colormap(&self) -> Colormap {
        match self {
            Raster::Topomap(_) => Colormap::Diverging,
            Raster::Spectra(_) => Colormap::Sequential,
        }
    }

    fn matrix(&self) -> Vec<Vec<Option<f64>>> {
        match self {
            Raster::Topomap(g) => g.values.clone(),
            Raster::Spectra(s) => s.rows.iter().map(|r| r.iter().map(|v| Some(*v)).collect()).collect(),
        }
    }
}

const BACKGROUND: [u8; 3] = [128, 128, 128];
const DIVERGING: [[f64; 3]; 3] = [[33.0, 102.0, 172.0], [247.0, 247.0, 247.0], [178.0, 24.0, 43.0]];
const SEQUENTIAL: [[f64; 3]; 3] = [[0.0, 0.0, 4.0], [183.0, 55.0, 121.0], [252.0, 253.0, 191.0]];

/// Maps `t` in [0, 1] through a three-stop gradient.
fn ramp(stops: &[[f64; 3]; 3], t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * 2.0;
    let (a, b, f) = if t <= 1.0 { (stops[0], stops[1], t) } else { (stops[1], stops[2], t - 1.0) };
    std::array::from_fn(|i| (a[i] + (b[i] - a[i]) * f).round() as u8)
}

fn pixels(matrix: &[Vec<Option<f64>>], colormap: Colormap) -> Vec<u8> {
    let present = || matrix.iter().flatten().filter_map(|v| *v);
    let map: Box<dyn Fn(f64) -> [u8; 3]> = match colormap {
        Colormap::Diverging => {
            let scale = present().fold(0.0f64, |m, v| m.max(v.abs()));
            Box::new(move |v| ramp(&DIVERGING, if scale > 0.0 { 0.5 + 0.5 * v / scale } else { 0.5 }))
        }
        Colormap::Sequential => {
            let lo = present().fold(f64::INFINITY, f64::min);
            let hi = present().fold(f64::NEG_INFINITY, f64::max);
            Box::new(move |v| ramp(&SEQUENTIAL, if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }))
        }
    };
    matrix
        .iter()
        .flatten()
        .flat_map(|v| v.map_or(BACKGROUND, &map))
        .collect()
}

/// Writes `raster` as an RGB PNG at `path` and its matrix as JSON next to it
/// (same stem, `.json`). Returns the sidecar path.
pub fn render_raster(raster: &Raster, colormap: Colormap, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    let matrix = raster.matrix();
    let height = matrix.len();
    let width = matrix.first().map_or(0, Vec::len);
    if height == 0 || width == 0 || matrix.iter().any(|r| r.len() != width) {
        return Err(Error::EmptyData("raster matrix is empty or ragged".into()));
    }
    let data = pixels(&matrix, colormap);

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(&data).map_err(to_io)?;
    writer.finish().map_err(to_io)?;

    let sidecar = path.with_extension("json");
    let json = serde_json::to_vec_pretty(raster)?;
    std::fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))?;
    Ok(sidecar)
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
