//! Local occupancy grids from 2D ray tracing and global grid assembly.
//!
//! Cell `(i, j)` covers `[i·c, (i+1)·c) × [j·c, (j+1)·c)` in its frame. The
//! global grid uses the same absolute lattice in the map frame, so assembling
//! a set of nodes never depends on the order in which the grid grew.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{Point2, Transform2};
use crate::graph::NodeId;
use crate::registration::Scan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum CellState {
    Unknown = 0,
    Free = 1,
    Occupied = 2,
}

#[inline]
fn cell_of(p: &Point2, cell: f64) -> (i64, i64) {
    ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
}

/// Cells visited by the integer line from `a` to `b`, both included.
pub fn bresenham(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy) as usize + 1);
    loop {
        out.push((x, y));
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Sparse robot-frame grid. Free and occupied cell lists are sorted and
/// disjoint.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalGrid {
    pub cell_size: f64,
    pub free: Vec<(i32, i32)>,
    pub occupied: Vec<(i32, i32)>,
}

impl LocalGrid {
    pub fn is_empty(&self) -> bool {
        self.free.is_empty() && self.occupied.is_empty()
    }

    pub fn len(&self) -> usize {
        self.free.len() + self.occupied.len()
    }

    pub fn get(&self, i: i32, j: i32) -> CellState {
        if self.occupied.binary_search(&(i, j)).is_ok() {
            CellState::Occupied
        } else if self.free.binary_search(&(i, j)).is_ok() {
            CellState::Free
        } else {
            CellState::Unknown
        }
    }

    /// All known cells in ascending index order.
    pub fn cells(&self) -> impl Iterator<Item = ((i32, i32), CellState)> + '_ {
        let mut all: Vec<_> = self
            .free
            .iter()
            .map(|&c| (c, CellState::Free))
            .chain(self.occupied.iter().map(|&c| (c, CellState::Occupied)))
            .collect();
        all.sort();
        all.into_iter()
    }

    fn center(i: i32, j: i32, cell: f64) -> Point2 {
        Point2::new((i as f64 + 0.5) * cell, (j as f64 + 0.5) * cell)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridParams {
    pub cell_size: f64,
    /// Returns farther than this only clear space up to it.
    pub range_max: f64,
    /// Trace beams without a return as free up to `range_max`.
    pub ray_trace_misses: bool,
}

impl GridParams {
    pub fn new(cell_size: f64) -> Self {
        Self {
            cell_size,
            range_max: f64::INFINITY,
            ray_trace_misses: false,
        }
    }

    pub fn from_config(config: &crate::Config) -> Self {
        Self {
            cell_size: config.cell_size,
            range_max: config.grid_range_max,
            ray_trace_misses: config.grid_ray_trace_misses,
        }
    }
}

/// Ray traces a base-frame scan: each return's cell is occupied, the cells
/// from the sensor cell up to (excluding) it are free. Occupied wins when a
/// cell is both.
pub fn build_local_grid(scan: &Scan, params: &GridParams) -> Result<LocalGrid> {
    let c = params.cell_size;
    if !(c > 0.0) {
        return Err(Error::InvalidInput(format!("cell size must be > 0, got {c}")));
    }
    let origin = cell_of(&Point2::origin(), c);
    let mut free = BTreeSet::new();
    let mut occupied = BTreeSet::new();
    let clip = |angle: f64, range: f64| Point2::new(range * angle.cos(), range * angle.sin());
    let trace_free = |end: (i64, i64), include_end: bool, free: &mut BTreeSet<(i64, i64)>| {
        let line = bresenham(origin, end);
        let n = if include_end { line.len() } else { line.len() - 1 };
        free.extend(line[..n].iter().copied());
    };
    for p in &scan.points {
        let r = p.coords.norm();
        if r <= params.range_max {
            let end = cell_of(p, c);
            occupied.insert(end);
            if end != origin {
                trace_free(end, false, &mut free);
            }
        } else {
            trace_free(cell_of(&clip(p.y.atan2(p.x), params.range_max), c), true, &mut free);
        }
    }
    if params.ray_trace_misses && !scan.misses.is_empty() {
        let range = if scan.max_range > 0.0 {
            scan.max_range.min(params.range_max)
        } else {
            params.range_max
        };
        if range.is_finite() {
            for &a in &scan.misses {
                trace_free(cell_of(&clip(a, range), c), true, &mut free);
            }
        }
    }
    let narrow = |(i, j): (i64, i64)| (i as i32, j as i32);
    Ok(LocalGrid {
        cell_size: c,
        free: free.difference(&occupied).copied().map(narrow).collect(),
        occupied: occupied.into_iter().map(narrow).collect(),
    })
}

/// Dense global grid, row-major with row 0 at the lowest y.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    /// Map-frame pose of the lower-left corner of cell (0, 0).
    pub origin: Transform2,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<CellState>,
}

impl OccupancyGrid {
    pub fn empty(cell_size: f64) -> Self {
        Self {
            origin: Transform2::identity(),
            cell_size,
            width: 0,
            height: 0,
            cells: Vec::new(),
        }
    }

    pub fn get(&self, col: usize, row: usize) -> CellState {
        self.cells[row * self.width + col]
    }

    /// Map-frame center of a cell.
    pub fn cell_center(&self, col: usize, row: usize) -> Point2 {
        Point2::new(
            self.origin.x + (col as f64 + 0.5) * self.cell_size,
            self.origin.y + (row as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn count(&self, state: CellState) -> usize {
        self.cells.iter().filter(|&&c| c == state).count()
    }

    pub fn occupied_centers(&self) -> Vec<Point2> {
        let mut out = Vec::new();
        for row in 0..self.height {
            for col in 0..self.width {
                if self.get(col, row) == CellState::Occupied {
                    out.push(self.cell_center(col, row));
                }
            }
        }
        out
    }

    /// Binary PGM (P5): unknown 205, free 254, occupied 0. The first image
    /// row is the top of the map (highest y).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.width * self.height);
        for row in (0..self.height).rev() {
            for col in 0..self.width {
                out.push(match self.get(col, row) {
                    CellState::Unknown => 205,
                    CellState::Free => 254,
                    CellState::Occupied => 0,
                });
            }
        }
        out
    }

    /// Sidecar metadata for [`to_pgm`](Self::to_pgm).
    pub fn metadata(&self, image: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "image: {image}");
        let _ = writeln!(s, "resolution: {:?}", self.cell_size);
        let _ = writeln!(s, "origin: [{:?}, {:?}, {:?}]", self.origin.x, self.origin.y, self.origin.theta);
        let _ = writeln!(s, "negate: 0");
        let _ = writeln!(s, "occupied_thresh: 0.65");
        let _ = writeln!(s, "free_thresh: 0.196");
        s
    }
}

/// Growable dense layer indexed by absolute lattice coordinates.
#[derive(Debug, Clone)]
struct Layer {
    min: (i64, i64),
    width: usize,
    height: usize,
    data: Vec<CellState>,
    touched: Option<((i64, i64), (i64, i64))>,
}

impl Layer {
    fn new() -> Self {
        Self {
            min: (0, 0),
            width: 0,
            height: 0,
            data: Vec::new(),
            touched: None,
        }
    }

    fn reserve(&mut self, lo: (i64, i64), hi: (i64, i64)) {
        let inside = self.width > 0
            && lo.0 >= self.min.0
            && lo.1 >= self.min.1
            && hi.0 < self.min.0 + self.width as i64
            && hi.1 < self.min.1 + self.height as i64;
        if inside {
            return;
        }
        const MARGIN: i64 = 64;
        let (nlo, nhi) = if self.width == 0 {
            ((lo.0 - MARGIN, lo.1 - MARGIN), (hi.0 + MARGIN, hi.1 + MARGIN))
        } else {
            let cur_hi = (self.min.0 + self.width as i64 - 1, self.min.1 + self.height as i64 - 1);
            (
                (lo.0.min(self.min.0 - MARGIN), lo.1.min(self.min.1 - MARGIN)),
                (hi.0.max(cur_hi.0 + MARGIN), hi.1.max(cur_hi.1 + MARGIN)),
            )
        };
        let w = (nhi.0 - nlo.0 + 1) as usize;
        let h = (nhi.1 - nlo.1 + 1) as usize;
        let mut data = vec![CellState::Unknown; w * h];
        for row in 0..self.height {
            let dst_row = (self.min.1 + row as i64 - nlo.1) as usize;
            let dst_col = (self.min.0 - nlo.0) as usize;
            data[dst_row * w + dst_col..dst_row * w + dst_col + self.width]
                .copy_from_slice(&self.data[row * self.width..(row + 1) * self.width]);
        }
        self.min = nlo;
        self.width = w;
        self.height = h;
        self.data = data;
    }

    #[inline]
    fn set(&mut self, c: (i64, i64), v: CellState) {
        let idx = (c.1 - self.min.1) as usize * self.width + (c.0 - self.min.0) as usize;
        self.data[idx] = v;
    }

    fn apply(&mut self, pose: &Transform2, grid: &LocalGrid) {
        if grid.is_empty() {
            return;
        }
        let c = grid.cell_size;
        let project = |&(i, j): &(i32, i32)| cell_of(&pose.transform_point(&LocalGrid::center(i, j, c)), c);
        let free: Vec<_> = grid.free.iter().map(project).collect();
        let occ: Vec<_> = grid.occupied.iter().map(project).collect();
        let mut lo = (i64::MAX, i64::MAX);
        let mut hi = (i64::MIN, i64::MIN);
        for p in free.iter().chain(&occ) {
            lo = (lo.0.min(p.0), lo.1.min(p.1));
            hi = (hi.0.max(p.0), hi.1.max(p.1));
        }
        self.reserve(lo, hi);
        for &p in &free {
            self.set(p, CellState::Free);
        }
        for &p in &occ {
            self.set(p, CellState::Occupied);
        }
        self.touched = Some(match self.touched {
            None => (lo, hi),
            Some((a, b)) => ((a.0.min(lo.0), a.1.min(lo.1)), (b.0.max(hi.0), b.1.max(hi.1))),
        });
    }

    fn export(&self, cell: f64) -> OccupancyGrid {
        let Some((lo, hi)) = self.touched else {
            return OccupancyGrid::empty(cell);
        };
        let w = (hi.0 - lo.0 + 1) as usize;
        let h = (hi.1 - lo.1 + 1) as usize;
        let mut cells = Vec::with_capacity(w * h);
        for j in lo.1..=hi.1 {
            let row = (j - self.min.1) as usize * self.width;
            let start = row + (lo.0 - self.min.0) as usize;
            cells.extend_from_slice(&self.data[start..start + w]);
        }
        OccupancyGrid {
            origin: Transform2::new(lo.0 as f64 * cell, lo.1 as f64 * cell, 0.0),
            cell_size: cell,
            width: w,
            height: h,
            cells,
        }
    }
}

/// Composites local grids at their poses in ascending node id; later writes
/// override earlier ones.
pub fn assemble(
    poses: &BTreeMap<NodeId, Transform2>,
    grids: &[(NodeId, &LocalGrid)],
    cell_size: f64,
) -> Result<OccupancyGrid> {
    let mut sorted: Vec<_> = grids.to_vec();
    sorted.sort_by_key(|(id, _)| *id);
    let mut layer = Layer::new();
    for (id, g) in sorted {
        let pose = poses
            .get(&id)
            .ok_or_else(|| Error::InvalidInput(format!("no pose for the grid of node {id}")))?;
        check_cell(g, cell_size)?;
        layer.apply(pose, g);
    }
    Ok(layer.export(cell_size))
}

fn check_cell(g: &LocalGrid, cell: f64) -> Result<()> {
    if !g.is_empty() && g.cell_size != cell {
        return Err(Error::InvalidInput(format!(
            "local grid cell size {} differs from {}",
            g.cell_size, cell
        )));
    }
    Ok(())
}

/// Global grid kept up to date node by node, with a batch rebuild for when
/// poses change.
#[derive(Debug, Clone)]
pub struct GridAssembler {
    cell_size: f64,
    layer: Layer,
    applied: BTreeMap<NodeId, Transform2>,
}

impl GridAssembler {
    pub fn new(cell_size: f64) -> Self {
        Self {
            cell_size,
            layer: Layer::new(),
            applied: BTreeMap::new(),
        }
    }

    /// Poses the current grid was built from.
    pub fn applied(&self) -> &BTreeMap<NodeId, Transform2> {
        &self.applied
    }

    /// Paints one more node on top. Matches a batch rebuild only when `id`
    /// is larger than every node already applied.
    pub fn add(&mut self, id: NodeId, pose: Transform2, grid: &LocalGrid) -> Result<()> {
        check_cell(grid, self.cell_size)?;
        self.layer.apply(&pose, grid);
        self.applied.insert(id, pose);
        Ok(())
    }

    /// Whether the node set or any pose differs from what was applied by
    /// more than `tolerance`.
    pub fn is_stale(&self, poses: &BTreeMap<NodeId, Transform2>, tolerance: f64) -> bool {
        self.applied.len() != poses.len()
            || self.applied.iter().zip(poses).any(|((a, pa), (b, pb))| {
                a != b
                    || (pa.x - pb.x).abs() > tolerance
                    || (pa.y - pb.y).abs() > tolerance
                    || (pa.theta - pb.theta).abs() > tolerance
            })
    }

    /// Clears and reassembles from scratch.
    pub fn rebuild(&mut self, poses: &BTreeMap<NodeId, Transform2>, grids: &[(NodeId, &LocalGrid)]) -> Result<()> {
        let mut sorted: Vec<_> = grids.to_vec();
        sorted.sort_by_key(|(id, _)| *id);
        let mut layer = Layer::new();
        let mut applied = BTreeMap::new();
        for (id, g) in sorted {
            let pose = *poses
                .get(&id)
                .ok_or_else(|| Error::InvalidInput(format!("no pose for the grid of node {id}")))?;
            check_cell(g, self.cell_size)?;
            layer.apply(&pose, g);
            applied.insert(id, pose);
        }
        self.layer = layer;
        self.applied = applied;
        Ok(())
    }

    pub fn grid(&self) -> OccupancyGrid {
        self.layer.export(self.cell_size)
    }
}
