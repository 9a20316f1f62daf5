//! Uniform interior grids on an interval or axis-aligned rectangle with
//! Dirichlet boundary bookkeeping and a boundary collar mask.

use crate::error::{LabError, Result};

/// One node of the discretized boundary.
///
/// `inner` holds the one or two interior nodes lying along the inward normal,
/// used by the one-sided Neumann stencil. Corner nodes carry no interior line
/// (the stencil sees only Dirichlet zeros) and are listed once per adjacent
/// face with half quadrature weight.
#[derive(Debug, Clone)]
pub struct BoundaryNode {
    pub position: [f64; 2],
    pub normal: [f64; 2],
    /// Boundary-measure quadrature weight (counting measure in 1D, arc length in 2D).
    pub weight: f64,
    /// First and second interior nodes along the inward normal, if any.
    pub inner: [Option<usize>; 2],
    /// Grid spacing along the normal axis.
    pub normal_spacing: f64,
}

/// Interior grid of an interval `(0, L)` or rectangle `(0, Lx) x (0, Ly)`.
#[derive(Debug, Clone)]
pub struct Grid {
    pub dim: usize,
    pub extent: [f64; 2],
    pub points: [usize; 2],
    pub spacing: [f64; 2],
    pub collar_width: f64,
    /// Boundary nodes of the closed domain.
    pub boundary: Vec<BoundaryNode>,
    /// Collar mask over interior nodes: true within `collar_width` of the boundary.
    pub collar: Vec<bool>,
}

impl Grid {
    /// Total number of interior nodes.
    pub fn len(&self) -> usize {
        if self.dim == 1 {
            self.points[0]
        } else {
            self.points[0] * self.points[1]
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature weight of one interior node.
    pub fn cell_weight(&self) -> f64 {
        if self.dim == 1 {
            self.spacing[0]
        } else {
            self.spacing[0] * self.spacing[1]
        }
    }

    /// Coordinates of interior node `idx`.
    pub fn node(&self, idx: usize) -> [f64; 2] {
        if self.dim == 1 {
            [(idx as f64 + 1.0) * self.spacing[0], 0.0]
        } else {
            let nx = self.points[0];
            let ix = idx % nx;
            let iy = idx / nx;
            [
                (ix as f64 + 1.0) * self.spacing[0],
                (iy as f64 + 1.0) * self.spacing[1],
            ]
        }
    }

    /// Flat index of the 2D interior node `(ix, iy)`.
    pub fn index2(&self, ix: usize, iy: usize) -> usize {
        iy * self.points[0] + ix
    }

    /// Distance from interior node `idx` to the boundary.
    pub fn boundary_distance(&self, idx: usize) -> f64 {
        let p = self.node(idx);
        let mut d = p[0].min(self.extent[0] - p[0]);
        if self.dim == 2 {
            d = d.min(p[1]).min(self.extent[1] - p[1]);
        }
        d
    }

    /// Indices of interior nodes in the collar.
    pub fn collar_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.collar[i]).collect()
    }

    /// Interior nodes at boundary distance in `[lo, hi)`.
    pub fn band_nodes(&self, lo: f64, hi: f64) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| {
                let d = self.boundary_distance(i);
                d >= lo && d < hi
            })
            .collect()
    }
}

/// Build a grid over `(0, extent)` (1D) or `(0, ex) x (0, ey)` (2D).
///
/// `points` counts interior nodes per axis, so `spacing * (points + 1) = extent`.
/// The collar must stay well inside the domain: a collar at least a quarter of
/// the narrowest extent would swallow the interior.
pub fn build_grid(
    dim: usize,
    extent: [f64; 2],
    points: [usize; 2],
    collar_width: f64,
) -> Result<Grid> {
    assert!(dim == 1 || dim == 2, "dim must be 1 or 2");
    let axes = dim;
    let mut min_extent = f64::INFINITY;
    for ax in 0..axes {
        if !(extent[ax] > 0.0) {
            return Err(LabError::InvalidExtent(extent[ax]));
        }
        min_extent = min_extent.min(extent[ax]);
    }
    if collar_width >= min_extent / 4.0 {
        return Err(LabError::CollarCoversDomain {
            width: collar_width,
            min_extent,
        });
    }
    for ax in 0..axes {
        if points[ax] < 8 {
            return Err(LabError::TooFewPoints {
                min: 8,
                got: points[ax],
            });
        }
    }

    let mut spacing = [0.0; 2];
    for ax in 0..axes {
        spacing[ax] = extent[ax] / (points[ax] as f64 + 1.0);
    }

    let mut grid = Grid {
        dim,
        extent,
        points,
        spacing,
        collar_width,
        boundary: Vec::new(),
        collar: Vec::new(),
    };

    grid.collar = (0..grid.len())
        .map(|i| grid.boundary_distance(i) <= collar_width + 1e-12)
        .collect();
    grid.boundary = build_boundary(&grid);
    Ok(grid)
}

fn build_boundary(grid: &Grid) -> Vec<BoundaryNode> {
    let mut nodes = Vec::new();
    if grid.dim == 1 {
        let n = grid.points[0];
        let h = grid.spacing[0];
        nodes.push(BoundaryNode {
            position: [0.0, 0.0],
            normal: [-1.0, 0.0],
            weight: 1.0,
            inner: [Some(0), if n > 1 { Some(1) } else { None }],
            normal_spacing: h,
        });
        nodes.push(BoundaryNode {
            position: [grid.extent[0], 0.0],
            normal: [1.0, 0.0],
            weight: 1.0,
            inner: [Some(n - 1), if n > 1 { Some(n - 2) } else { None }],
            normal_spacing: h,
        });
        return nodes;
    }

    let [nx, ny] = grid.points;
    let [hx, hy] = grid.spacing;
    let [lx, ly] = grid.extent;
    // Left and right faces.
    for iy in 0..ny {
        let y = (iy as f64 + 1.0) * hy;
        nodes.push(BoundaryNode {
            position: [0.0, y],
            normal: [-1.0, 0.0],
            weight: hy,
            inner: [
                Some(grid.index2(0, iy)),
                if nx > 1 { Some(grid.index2(1, iy)) } else { None },
            ],
            normal_spacing: hx,
        });
        nodes.push(BoundaryNode {
            position: [lx, y],
            normal: [1.0, 0.0],
            weight: hy,
            inner: [
                Some(grid.index2(nx - 1, iy)),
                if nx > 1 { Some(grid.index2(nx - 2, iy)) } else { None },
            ],
            normal_spacing: hx,
        });
    }
    // Bottom and top faces.
    for ix in 0..nx {
        let x = (ix as f64 + 1.0) * hx;
        nodes.push(BoundaryNode {
            position: [x, 0.0],
            normal: [0.0, -1.0],
            weight: hx,
            inner: [
                Some(grid.index2(ix, 0)),
                if ny > 1 { Some(grid.index2(ix, 1)) } else { None },
            ],
            normal_spacing: hy,
        });
        nodes.push(BoundaryNode {
            position: [x, ly],
            normal: [0.0, 1.0],
            weight: hx,
            inner: [
                Some(grid.index2(ix, ny - 1)),
                if ny > 1 { Some(grid.index2(ix, ny - 2)) } else { None },
            ],
            normal_spacing: hy,
        });
    }
    // Corners: listed once per adjacent face with half weight. Their Neumann
    // stencil only sees Dirichlet zeros, so the trace vanishes there.
    for (cx, cy) in [(0.0, 0.0), (lx, 0.0), (0.0, ly), (lx, ly)] {
        let nx_sign = if cx == 0.0 { -1.0 } else { 1.0 };
        let ny_sign = if cy == 0.0 { -1.0 } else { 1.0 };
        nodes.push(BoundaryNode {
            position: [cx, cy],
            normal: [nx_sign, 0.0],
            weight: hy / 2.0,
            inner: [None, None],
            normal_spacing: hx,
        });
        nodes.push(BoundaryNode {
            position: [cx, cy],
            normal: [0.0, ny_sign],
            weight: hx / 2.0,
            inner: [None, None],
            normal_spacing: hy,
        });
    }
    nodes
}

/// Real coefficient field on the interior nodes (e.g. p or q of the model).
#[derive(Debug, Clone)]
pub struct PotentialField {
    pub values: Vec<f64>,
    pub label: String,
}

impl PotentialField {
    pub fn from_fn(grid: &Grid, label: &str, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let p = grid.node(i);
                f(p[0], p[1])
            })
            .collect::<Vec<_>>();
        assert!(values.iter().all(|v| v.is_finite()), "potential not finite");
        PotentialField {
            values,
            label: label.to_string(),
        }
    }

    pub fn zero(grid: &Grid, label: &str) -> Self {
        PotentialField {
            values: vec![0.0; grid.len()],
            label: label.to_string(),
        }
    }

    pub fn constant(grid: &Grid, label: &str, c: f64) -> Self {
        PotentialField {
            values: vec![c; grid.len()],
            label: label.to_string(),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn interval_grid_matches_definition() {
        let g = build_grid(1, [PI, 0.0], [127, 0], 0.3).unwrap();
        assert_eq!(g.len(), 127);
        assert!((g.spacing[0] - PI / 128.0).abs() < 1e-15);
        for i in 0..g.len() {
            let x = g.node(i)[0];
            let in_collar = x <= 0.3 + 1e-12 || x >= PI - 0.3 - 1e-12;
            assert_eq!(g.collar[i], in_collar, "node {i} at x={x}");
        }
        assert_eq!(g.boundary.len(), 2);
    }

    #[test]
    fn square_grid_interior_count() {
        let g = build_grid(2, [1.0, 1.0], [31, 31], 0.15).unwrap();
        assert_eq!(g.len(), 961);
        // Collar frames the square: all four edge rows of interior nodes are flagged.
        for ix in 0..31 {
            assert!(g.collar[g.index2(ix, 0)]);
            assert!(g.collar[g.index2(ix, 30)]);
        }
        // Center is not.
        assert!(!g.collar[g.index2(15, 15)]);
    }

    #[test]
    fn collar_covering_domain_rejected() {
        let err = build_grid(1, [1.0, 0.0], [4, 0], 0.6).unwrap_err();
        assert!(matches!(err, LabError::CollarCoversDomain { .. }));
    }

    #[test]
    fn bad_extent_rejected() {
        assert!(matches!(
            build_grid(1, [-1.0, 0.0], [16, 0], 0.01),
            Err(LabError::InvalidExtent(_))
        ));
        assert!(matches!(
            build_grid(1, [1.0, 0.0], [4, 0], 0.01),
            Err(LabError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn spacing_consistency() {
        let g = build_grid(2, [2.0, 3.0], [15, 11], 0.1).unwrap();
        for ax in 0..2 {
            let recon = g.spacing[ax] * (g.points[ax] as f64 + 1.0);
            assert!((recon - g.extent[ax]).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_weights_sum_to_perimeter() {
        let g = build_grid(2, [1.0, 2.0], [19, 39], 0.05).unwrap();
        let total: f64 = g.boundary.iter().map(|b| b.weight).sum();
        // Each face is integrated by its interior-aligned nodes plus half-weight
        // corners; total weight approximates the perimeter.
        assert!((total - 6.0).abs() < 4.0 * (g.spacing[0] + g.spacing[1]));
    }
}
