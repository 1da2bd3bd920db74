//! Model log-densities on a regular latitude/longitude grid of S².

use crate::error::{Error, Result};
use crate::likelihood::{log_likelihood, OdeConfig};
use crate::manifold::Manifold;
use crate::nn::ScoreField;
use crate::sde::NoisingProcess;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::fmt::Write as _;

/// One grid cell, in degrees. `log_density` is `None` when the solver failed.
#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub lat: f64,
    pub lon: f64,
    pub log_density: Option<f64>,
    /// Area of the cell on the unit sphere.
    pub area: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub nlat: usize,
    pub nlon: usize,
    pub cells: Vec<GridCell>,
}

impl DensityGrid {
    pub fn missing(&self) -> usize {
        self.cells.iter().filter(|c| c.log_density.is_none()).count()
    }

    /// Integral of the density over the cells that solved, one value per cell. of the density over the cells that solved.
    pub fn total_mass(&self) -> f64 {
        self.cells.iter().filter_map(|c| c.log_density.map(|l| l.exp() * c.area)).sum()
    }

    /// `lat lon log_density` rows; failed cells print `nan`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# lat lon log_density\n");
        for c in &self.cells {
            match c.log_density {
                Some(l) => writeln!(out, "{:.6} {:.6} {:?}", c.lat, c.lon, l).unwrap(),
                None => writeln!(out, "{:.6} {:.6} nan", c.lat, c.lon).unwrap(),
            }
        }
        out
    }
}

/// Evaluates the model density at the midpoints of an `nlat × nlon` grid.
pub fn density_grid<F: ScoreField + ?Sized>(
    process: &NoisingProcess,
    score: &F,
    nlat: usize,
    nlon: usize,
    cfg: &OdeConfig,
) -> Result<DensityGrid> {
    if process.manifold != Manifold::Sphere(2) {
        return Err(Error::InvalidArgument(format!("density grids need S2, got {}", process.manifold)));
    }
    if nlat == 0 || nlon == 0 {
        return Err(Error::InvalidArgument("grid needs at least one cell".into()));
    }
    let (dlat, dlon) = (PI / nlat as f64, 2.0 * PI / nlon as f64);
    let cells = (0..nlat * nlon)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / nlon, k % nlon);
            let lat = -PI / 2.0 + (i as f64 + 0.5) * dlat;
            let lon = -PI + (j as f64 + 0.5) * dlon;
            let (lat_deg, lon_deg) = (lat.to_degrees(), lon.to_degrees());
            let x = super::latlon_to_xyz(lat_deg, lon_deg);
            let log_density = match log_likelihood(process, score, &x, cfg) {
                Ok(p) => Some(p.log_likelihood),
                Err(e) => {
                    log::warn!("grid cell ({lat_deg:.3}, {lon_deg:.3}) missing: {e}");
                    None
                }
            };
            let area = ((lat + dlat / 2.0).sin() - (lat - dlat / 2.0).sin()) * dlon;
            GridCell { lat: lat_deg, lon: lon_deg, log_density, area }
        })
        .collect();
    Ok(DensityGrid { nlat, nlon, cells })
}
