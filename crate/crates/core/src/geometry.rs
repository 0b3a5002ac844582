//! Layered domains, the reference cell, truncated stripes and the conforming
//! structured grids built on them.
//!
//! Every grid is a tensor product of a periodic tangential axis and a
//! non-periodic vertical axis. Nodes are numbered row by row,
//! `node = row * nx + column`, and the periodic seam is closed by wrapping the
//! column index, so the tangential node count equals the interval count.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("1/epsilon must be a positive integer, got epsilon = {0}")]
    NonIntegerInverseEpsilon(f64),
    #[error("epsilon must satisfy 0 < epsilon <= 1/2, got {0}")]
    EpsilonOutOfRange(f64),
    #[error("bulk height must be at least 1")]
    ZeroHeight,
    #[error("interface length must be at least 1")]
    ZeroSigmaLength,
    #[error("resolution must be at least 2, got {0}")]
    ResolutionTooSmall(usize),
    #[error("stripe truncation length must be at least 2, got {0}")]
    StripeTooShort(usize),
    #[error("grid is missing the {0:?} marker")]
    MissingMarker(Marker),
    #[error("grid mismatch: {0}")]
    Mismatch(String),
}

/// Which part of the layered domain a vertical interval belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    BulkPlus,
    Layer,
    BulkMinus,
}

/// Distinguished grid lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Marker {
    /// Upper layer interface `x_n = +eps` (or `S^+` of the reference cell).
    InterfacePlus,
    /// Lower layer interface `x_n = -eps` (or `S^-`).
    InterfaceMinus,
    /// The limit interface `x_n = 0` of the macroscopic domain.
    Sigma,
    Top,
    Bottom,
    /// Stripe line `y_n = 0` carrying the Dirichlet trace.
    Trace,
    /// Stripe truncation line `|y_n| = L`.
    Truncation,
}

/// The thin-layer domain `Sigma x (-eps - H, H + eps)` in two dimensions.
///
/// `epsilon` is stored through its integer inverse so that the `1/eps in N`
/// contract cannot drift under floating point arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeometry {
    pub dim: usize,
    pub height: u32,
    pub sigma_len: u32,
    pub inv_epsilon: u32,
}

impl LayerGeometry {
    pub fn from_inv_epsilon(height: u32, sigma_len: u32, inv_epsilon: u32) -> Result<Self, GeometryError> {
        if height == 0 {
            return Err(GeometryError::ZeroHeight);
        }
        if sigma_len == 0 {
            return Err(GeometryError::ZeroSigmaLength);
        }
        if inv_epsilon < 2 {
            let eps = if inv_epsilon == 0 { f64::INFINITY } else { 1.0 / inv_epsilon as f64 };
            return Err(GeometryError::EpsilonOutOfRange(eps));
        }
        Ok(Self { dim: 2, height, sigma_len, inv_epsilon })
    }

    /// Rejects any `epsilon` whose inverse is not an integer.
    pub fn new(height: u32, sigma_len: u32, epsilon: f64) -> Result<Self, GeometryError> {
        Self::from_inv_epsilon(height, sigma_len, inverse_epsilon(epsilon)?)
    }

    pub fn epsilon(&self) -> f64 {
        1.0 / self.inv_epsilon as f64
    }

    pub fn with_inv_epsilon(&self, inv_epsilon: u32) -> Result<Self, GeometryError> {
        Self::from_inv_epsilon(self.height, self.sigma_len, inv_epsilon)
    }

    /// `|Omega_eps^M| = 2 eps l`.
    pub fn layer_measure(&self) -> f64 {
        2.0 * self.sigma_len as f64 / self.inv_epsilon as f64
    }

    /// `|Omega^+| = |Omega^-| = H l`.
    pub fn bulk_measure(&self) -> f64 {
        self.height as f64 * self.sigma_len as f64
    }
}

/// Converts `epsilon` to its integer inverse, rejecting non-integral values.
pub fn inverse_epsilon(epsilon: f64) -> Result<u32, GeometryError> {
    if !(epsilon > 0.0 && epsilon <= 0.5) {
        return Err(GeometryError::EpsilonOutOfRange(epsilon));
    }
    let inv = 1.0 / epsilon;
    let rounded = inv.round();
    if (inv - rounded).abs() > 1e-9 * rounded || rounded > u32::MAX as f64 {
        return Err(GeometryError::NonIntegerInverseEpsilon(epsilon));
    }
    Ok(rounded as u32)
}

/// The reference cell `Z = Y x (-1, 1)` with `resolution` intervals per unit length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellGeometry {
    pub resolution: usize,
}

/// Orientation of a boundary-layer stripe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    /// `Y^+ = Y x (0, inf)`
    Plus,
    /// `Y^- = Y x (-inf, 0)`
    Minus,
}

impl Orientation {
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Plus => 1.0,
            Orientation::Minus => -1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Orientation::Plus => "plus",
            Orientation::Minus => "minus",
        }
    }
}

/// A semi-infinite stripe truncated at `|y_n| = length` (in cell periods).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StripeGeometry {
    pub length: usize,
    pub resolution: usize,
    pub orientation: Orientation,
}

/// Tensor-product grid: periodic tangential axis times a vertical axis with
/// region tags per vertical interval.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredGrid {
    nx: usize,
    hx: f64,
    periodic: bool,
    /// Vertical node coordinates, strictly increasing.
    ys: Vec<f64>,
    /// Region of each vertical interval (`ys.len() - 1` entries).
    tags: Vec<Region>,
    markers: Vec<(Marker, usize)>,
    /// Intervals per unit length along each axis, when the grid is uniform.
    per_unit: usize,
}

impl StructuredGrid {
    /// Uniform grid with spacing `1 / per_unit` in both directions. Vertical
    /// node `j` sits at `(j + offset) / per_unit`, computed with a single
    /// division so that coordinates are exact rationals rounded once.
    fn uniform(nx: usize, per_unit: usize, rows: std::ops::Range<i64>, tags: Vec<Region>, markers: Vec<(Marker, usize)>) -> Self {
        let ys: Vec<f64> = rows.map(|k| k as f64 / per_unit as f64).collect();
        debug_assert_eq!(ys.len(), tags.len() + 1);
        Self { nx, hx: 1.0 / per_unit as f64, periodic: true, ys, tags, markers, per_unit }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ys.len()
    }

    pub fn node_count(&self) -> usize {
        self.nx * self.ys.len()
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn per_unit(&self) -> usize {
        self.per_unit
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn tags(&self) -> &[Region] {
        &self.tags
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.hx
    }

    /// Tangential extent of the grid.
    pub fn width(&self) -> f64 {
        self.nx as f64 * self.hx
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn right(&self, i: usize) -> usize {
        if i + 1 == self.nx {
            0
        } else {
            i + 1
        }
    }

    #[inline]
    pub fn left(&self, i: usize) -> usize {
        if i == 0 {
            self.nx - 1
        } else {
            i - 1
        }
    }

    pub fn marker(&self, m: Marker) -> Option<usize> {
        self.markers.iter().find(|(k, _)| *k == m).map(|&(_, r)| r)
    }

    pub fn require_marker(&self, m: Marker) -> Result<usize, GeometryError> {
        self.marker(m).ok_or(GeometryError::MissingMarker(m))
    }

    /// Node indices on the row carrying marker `m`.
    pub fn marker_nodes(&self, m: Marker) -> Option<Vec<usize>> {
        self.marker(m).map(|j| (0..self.nx).map(|i| self.node(i, j)).collect())
    }

    /// Vertical interval range `[first, last)` of the given region, if present.
    /// Regions are contiguous on every grid built here.
    pub fn region_intervals(&self, region: Region) -> Option<std::ops::Range<usize>> {
        let first = self.tags.iter().position(|&t| t == region)?;
        let last = self.tags.iter().rposition(|&t| t == region)? + 1;
        Some(first..last)
    }

    /// Sum of element areas tagged with `region`.
    pub fn region_measure(&self, region: Region) -> f64 {
        self.tags
            .iter()
            .zip(self.ys.windows(2))
            .filter(|(t, _)| **t == region)
            .map(|(_, w)| (w[1] - w[0]) * self.width())
            .sum()
    }

    pub fn total_measure(&self) -> f64 {
        (self.ys[self.ys.len() - 1] - self.ys[0]) * self.width()
    }

    /// Sub-grid made of the rows `rows` (inclusive node range), keeping the
    /// tangential structure.
    pub fn row_slice(&self, rows: std::ops::RangeInclusive<usize>, shift: f64) -> StructuredGrid {
        let (a, b) = (*rows.start(), *rows.end());
        let ys = self.ys[a..=b].iter().map(|y| y + shift).collect();
        let tags = self.tags[a..b].to_vec();
        StructuredGrid { nx: self.nx, hx: self.hx, periodic: self.periodic, ys, tags, markers: Vec::new(), per_unit: self.per_unit }
    }
}

/// Conforming grid of the microscopic domain with `per_period_resolution`
/// intervals per cell period `eps` in both directions.
pub fn build_micro_grid(geom: &LayerGeometry, per_period_resolution: usize) -> Result<StructuredGrid, GeometryError> {
    let n = per_period_resolution;
    if n < 2 {
        return Err(GeometryError::ResolutionTooSmall(n));
    }
    let per_unit = geom.inv_epsilon as usize * n;
    let bulk_rows = geom.height as usize * per_unit;
    // layer spans 2 eps = 2n intervals
    let layer_rows = 2 * n;
    let half = (bulk_rows + n) as i64;
    let mut tags = Vec::with_capacity(2 * bulk_rows + layer_rows);
    tags.extend(std::iter::repeat_n(Region::BulkMinus, bulk_rows));
    tags.extend(std::iter::repeat_n(Region::Layer, layer_rows));
    tags.extend(std::iter::repeat_n(Region::BulkPlus, bulk_rows));
    let top = 2 * bulk_rows + layer_rows;
    let markers = vec![
        (Marker::Bottom, 0),
        (Marker::InterfaceMinus, bulk_rows),
        (Marker::InterfacePlus, bulk_rows + layer_rows),
        (Marker::Top, top),
    ];
    let nx = geom.sigma_len as usize * per_unit;
    Ok(StructuredGrid::uniform(nx, per_unit, -half..half + 1, tags, markers))
}

/// Grid of the limit domain `Sigma x (-H, H)` with the interface row `Sigma`.
pub fn build_macro_grid(height: u32, sigma_len: u32, per_unit: usize) -> Result<StructuredGrid, GeometryError> {
    if per_unit < 2 {
        return Err(GeometryError::ResolutionTooSmall(per_unit));
    }
    if height == 0 {
        return Err(GeometryError::ZeroHeight);
    }
    if sigma_len == 0 {
        return Err(GeometryError::ZeroSigmaLength);
    }
    let bulk_rows = height as usize * per_unit;
    let mut tags = vec![Region::BulkMinus; bulk_rows];
    tags.extend(std::iter::repeat_n(Region::BulkPlus, bulk_rows));
    let markers = vec![(Marker::Bottom, 0), (Marker::Sigma, bulk_rows), (Marker::Top, 2 * bulk_rows)];
    let half = bulk_rows as i64;
    Ok(StructuredGrid::uniform(sigma_len as usize * per_unit, per_unit, -half..half + 1, tags, markers))
}

/// Grid of the reference cell `Z`.
pub fn build_cell_grid(cell: &CellGeometry) -> Result<StructuredGrid, GeometryError> {
    let n = cell.resolution;
    if n < 2 {
        return Err(GeometryError::ResolutionTooSmall(n));
    }
    let tags = vec![Region::Layer; 2 * n];
    let markers = vec![(Marker::InterfaceMinus, 0), (Marker::InterfacePlus, 2 * n)];
    let half = n as i64;
    Ok(StructuredGrid::uniform(n, n, -half..half + 1, tags, markers))
}

/// Grid of the truncated stripe `Y x (0, L)` or `Y x (-L, 0)`.
pub fn build_stripe_grid(stripe: &StripeGeometry) -> Result<StructuredGrid, GeometryError> {
    let n = stripe.resolution;
    if n < 2 {
        return Err(GeometryError::ResolutionTooSmall(n));
    }
    if stripe.length < 2 {
        return Err(GeometryError::StripeTooShort(stripe.length));
    }
    let rows = stripe.length * n;
    match stripe.orientation {
        Orientation::Plus => {
            let tags = vec![Region::BulkPlus; rows];
            let markers = vec![(Marker::Trace, 0), (Marker::Truncation, rows)];
            Ok(StructuredGrid::uniform(n, n, 0..rows as i64 + 1, tags, markers))
        }
        Orientation::Minus => {
            let tags = vec![Region::BulkMinus; rows];
            let markers = vec![(Marker::Truncation, 0), (Marker::Trace, rows)];
            Ok(StructuredGrid::uniform(n, n, -(rows as i64)..1, tags, markers))
        }
    }
}
