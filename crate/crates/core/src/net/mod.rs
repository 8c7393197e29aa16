//! Spatial primitives shared by every other module: grid tessellations,
//! centroid distance matrices, daily mobility networks, and the
//! weight-distance transform.

mod io;

pub use io::{load_networks, load_tessellation, save_networks, save_tessellation};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Mean Earth radius in meters, used by the haversine distance.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Geographic bounding box in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BBox {
    pub fn new(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Self {
        BBox {
            min_lon,
            min_lat,
            max_lon,
            max_lat,
        }
    }

    pub fn width(&self) -> f64 {
        self.max_lon - self.min_lon
    }

    pub fn height(&self) -> f64 {
        self.max_lat - self.min_lat
    }

    /// Inclusive containment test on all four edges.
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        lon >= self.min_lon && lon <= self.max_lon && lat >= self.min_lat && lat <= self.max_lat
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.min_lon, self.min_lat, self.max_lon, self.max_lat]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("bbox has non-finite coordinate".into()));
        }
        if self.width() <= 0.0 || self.height() <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "degenerate bbox: width {} height {}",
                self.width(),
                self.height()
            )));
        }
        Ok(())
    }
}

/// A gap-free, overlap-free grid of square tiles covering a bounding box.
///
/// Tiles are ordered row-major: index `k = row * cols + col`, with row 0 at
/// the southern edge and column 0 at the western edge. Tiles are equal-sized
/// in degree space; `tile_side_m` reports their side in meters measured at
/// the mid-latitude of the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tessellation {
    pub bbox: BBox,
    pub rows: usize,
    pub cols: usize,
    pub tile_side_m: f64,
    /// Tile centroids as (lon, lat), row-major, length `rows * cols`.
    pub centroids: Vec<(f64, f64)>,
}

impl Tessellation {
    /// Number of tiles.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major index of the tile containing `(lon, lat)`, or `None` if the
    /// point falls outside the bounding box.
    ///
    /// Points on a shared interior edge belong to the tile with the larger
    /// index along that axis (floor semantics); points on the outer north and
    /// east edges belong to the last row/column so the box is fully covered.
    pub fn tile_of(&self, lon: f64, lat: f64) -> Option<usize> {
        if !self.bbox.contains(lon, lat) {
            return None;
        }
        let col = grid_cell(lon, self.bbox.min_lon, self.bbox.width(), self.cols);
        let row = grid_cell(lat, self.bbox.min_lat, self.bbox.height(), self.rows);
        Some(row * self.cols + col)
    }

    /// Corner ring of tile `k` as five (lon, lat) points, closed, counter-
    /// clockwise starting at the south-west corner.
    pub fn tile_ring(&self, k: usize) -> [(f64, f64); 5] {
        let (row, col) = (k / self.cols, k % self.cols);
        let dlon = self.bbox.width() / self.cols as f64;
        let dlat = self.bbox.height() / self.rows as f64;
        let w = self.bbox.min_lon + col as f64 * dlon;
        let e = self.bbox.min_lon + (col + 1) as f64 * dlon;
        let s = self.bbox.min_lat + row as f64 * dlat;
        let n = self.bbox.min_lat + (row + 1) as f64 * dlat;
        [(w, s), (e, s), (e, n), (w, n), (w, s)]
    }
}

fn grid_cell(v: f64, min: f64, extent: f64, count: usize) -> usize {
    let cell = ((v - min) / extent * count as f64).floor() as isize;
    cell.clamp(0, count as isize - 1) as usize
}

/// Build a `rows x cols` grid tessellation over `bbox`.
pub fn build_grid_tessellation(bbox: BBox, rows: usize, cols: usize) -> Result<Tessellation> {
    bbox.validate()?;
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidInput("rows and cols must be >= 1".into()));
    }
    let dlon = bbox.width() / cols as f64;
    let dlat = bbox.height() / rows as f64;
    let mut centroids = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            centroids.push((
                bbox.min_lon + (c as f64 + 0.5) * dlon,
                bbox.min_lat + (r as f64 + 0.5) * dlat,
            ));
        }
    }
    let mid_lat = (bbox.min_lat + bbox.max_lat) / 2.0;
    let mid_lon = (bbox.min_lon + bbox.max_lon) / 2.0;
    let width_m = haversine_m(bbox.min_lon, mid_lat, bbox.max_lon, mid_lat);
    let height_m = haversine_m(mid_lon, bbox.min_lat, mid_lon, bbox.max_lat);
    let tile_side_m = (width_m / cols as f64 + height_m / rows as f64) / 2.0;
    Ok(Tessellation {
        bbox,
        rows,
        cols,
        tile_side_m,
        centroids,
    })
}

/// Great-circle distance in meters between two (lon, lat) points.
pub fn haversine_m(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let p1 = lat1.to_radians();
    let p2 = lat2.to_radians();
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

/// Pairwise great-circle distances between tile centroids, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub d: Array2<f64>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.d.nrows()
    }
}

/// Distance matrix over the centroids of `tess`.
pub fn distance_matrix(tess: &Tessellation) -> DistanceMatrix {
    let n = tess.len();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        let (lon_i, lat_i) = tess.centroids[i];
        for j in (i + 1)..n {
            let (lon_j, lat_j) = tess.centroids[j];
            let dist = haversine_m(lon_i, lat_i, lon_j, lat_j);
            d[[i, j]] = dist;
            d[[j, i]] = dist;
        }
    }
    DistanceMatrix { d }
}

/// A weighted directed network over the tiles of one calendar day.
///
/// `weights[[i, j]]` is the flow from tile i to tile j: a trip count for
/// networks built from data, or a nonnegative intensity for generated ones.
/// Self-loops (diagonal entries) are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityNetwork {
    /// Calendar-day label, e.g. "2018-03-21". Used as the file stem when the
    /// network is saved.
    pub date: String,
    pub weights: Array2<f64>,
}

impl MobilityNetwork {
    pub fn new(date: impl Into<String>, weights: Array2<f64>) -> Result<Self> {
        if weights.nrows() != weights.ncols() {
            return Err(Error::Shape(format!(
                "network matrix must be square, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput(
                "network weights must be finite and nonnegative".into(),
            ));
        }
        Ok(MobilityNetwork {
            date: date.into(),
            weights,
        })
    }

    pub fn zeros(date: impl Into<String>, n: usize) -> Self {
        MobilityNetwork {
            date: date.into(),
            weights: Array2::zeros((n, n)),
        }
    }

    /// Node count.
    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    /// Total flow (sum of all entries).
    pub fn total(&self) -> f64 {
        self.weights.sum()
    }
}

/// Element-wise weight-distance transform `A / (d_km + eps)`.
///
/// Distances enter in kilometers so that the default residual `eps = 0.8`
/// is commensurate with typical inter-centroid distances; the residual is
/// added to every entry, which also keeps the diagonal (d = 0) finite.
pub fn weight_distance_transform(
    net: &MobilityNetwork,
    dist: &DistanceMatrix,
    eps: f64,
) -> Result<Array2<f64>> {
    if net.n() != dist.n() {
        return Err(Error::Shape(format!(
            "network has {} nodes but distance matrix has {}",
            net.n(),
            dist.n()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps must be > 0, got {eps}")));
    }
    let mut out = net.weights.clone();
    out.zip_mut_with(&dist.d, |w, d| *w /= d / 1000.0 + eps);
    Ok(out)
}

/// Default residual for [`weight_distance_transform`].
pub const WEIGHT_DISTANCE_EPS: f64 = 0.8;
