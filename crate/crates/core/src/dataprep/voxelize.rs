use std::collections::VecDeque;

use super::mesh::{cross, dot, sub, HouseMesh, Point};
use crate::voxcore::VoxelGrid;

/// Axis-aligned cube in world meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cube {
    pub min: Point,
    pub edge: f64,
}

impl Cube {
    pub fn centered(center: Point, edge: f64) -> Self {
        let h = edge / 2.0;
        Cube { min: [center[0] - h, center[1] - h, center[2] - h], edge }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Voxelization {
    pub grid: VoxelGrid,
    /// Zero-area triangles that were skipped.
    pub degenerate: usize,
}

/// Cells in a solid-fill lattice before falling back to a bounds-clipped lattice.
const MAX_FILL_CELLS: usize = 1 << 27;

/// Cell `i` on an axis spans `[min + i*vs, min + (i+1)*vs]`; touching counts.
struct Lattice {
    origin: [i64; 3],
    dims: [usize; 3],
    cells: Vec<u8>,
}

impl Lattice {
    fn new(origin: [i64; 3], dims: [usize; 3]) -> Self {
        Lattice { origin, dims, cells: vec![0; dims[0] * dims[1] * dims[2]] }
    }

    fn index(&self, a: usize, b: usize, c: usize) -> usize {
        a + self.dims[0] * (b + self.dims[1] * c)
    }
}

/// Inclusive cell range an interval touches.
fn cell_range(lo: f64, hi: f64, min: f64, vs: f64) -> (i64, i64) {
    (((lo - min) / vs).ceil() as i64 - 1, ((hi - min) / vs).floor() as i64)
}

fn tri_bounds(v: &[Point; 3]) -> (Point, Point) {
    let mut lo = v[0];
    let mut hi = v[0];
    for p in &v[1..] {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

/// Separating-axis triangle/box test where touching counts as overlap.
pub fn triangle_touches_box(center: Point, half: f64, tri: &[Point; 3]) -> bool {
    let v = tri.map(|p| sub(p, center));
    let e = [sub(v[1], v[0]), sub(v[2], v[1]), sub(v[0], v[2])];
    for edge in &e {
        for axis in 0..3 {
            let mut unit = [0.0; 3];
            unit[axis] = 1.0;
            let a = cross(*edge, unit);
            let p = v.map(|q| dot(q, a));
            let r = half * (a[0].abs() + a[1].abs() + a[2].abs());
            let (pmin, pmax) = (p[0].min(p[1]).min(p[2]), p[0].max(p[1]).max(p[2]));
            if pmin > r || pmax < -r {
                return false;
            }
        }
    }
    for axis in 0..3 {
        let (lo, hi) = (v[0][axis].min(v[1][axis]).min(v[2][axis]), v[0][axis].max(v[1][axis]).max(v[2][axis]));
        if lo > half || hi < -half {
            return false;
        }
    }
    let n = cross(e[0], e[1]);
    let d = dot(n, v[0]);
    let r = half * (n[0].abs() + n[1].abs() + n[2].abs());
    d.abs() <= r
}

fn is_degenerate(tri: &[Point; 3]) -> bool {
    let n = cross(sub(tri[1], tri[0]), sub(tri[2], tri[0]));
    dot(n, n) == 0.0
}

fn rasterize(lat: &mut Lattice, tri: &[Point; 3], min: Point, vs: f64) {
    let (lo, hi) = tri_bounds(tri);
    let mut range = [(0usize, 0usize); 3];
    for a in 0..3 {
        let (c0, c1) = cell_range(lo[a], hi[a], min[a], vs);
        let l0 = (c0 - lat.origin[a]).max(0);
        let l1 = (c1 - lat.origin[a]).min(lat.dims[a] as i64 - 1);
        if l0 > l1 {
            return;
        }
        range[a] = (l0 as usize, l1 as usize);
    }
    let half = vs / 2.0;
    for c in range[2].0..=range[2].1 {
        for b in range[1].0..=range[1].1 {
            for a in range[0].0..=range[0].1 {
                let g = [a as i64 + lat.origin[0], b as i64 + lat.origin[1], c as i64 + lat.origin[2]];
                let center = [0, 1, 2].map(|k| min[k] + (g[k] as f64 + 0.5) * vs);
                if triangle_touches_box(center, half, tri) {
                    let i = lat.index(a, b, c);
                    lat.cells[i] = 1;
                }
            }
        }
    }
}

/// Mark every cell not reachable from the lattice border through empty cells.
fn fill_enclosed(lat: &mut Lattice) {
    let [nx, ny, nz] = lat.dims;
    const OUTSIDE: u8 = 2;
    let mut queue = VecDeque::new();
    for c in 0..nz {
        for b in 0..ny {
            for a in 0..nx {
                let border = a == 0 || b == 0 || c == 0 || a + 1 == nx || b + 1 == ny || c + 1 == nz;
                let i = lat.index(a, b, c);
                if border && lat.cells[i] == 0 {
                    lat.cells[i] = OUTSIDE;
                    queue.push_back((a, b, c));
                }
            }
        }
    }
    while let Some((a, b, c)) = queue.pop_front() {
        let mut visit = |a: usize, b: usize, c: usize, cells: &mut Vec<u8>| {
            let i = a + nx * (b + ny * c);
            if cells[i] == 0 {
                cells[i] = OUTSIDE;
                queue.push_back((a, b, c));
            }
        };
        if a > 0 {
            visit(a - 1, b, c, &mut lat.cells);
        }
        if a + 1 < nx {
            visit(a + 1, b, c, &mut lat.cells);
        }
        if b > 0 {
            visit(a, b - 1, c, &mut lat.cells);
        }
        if b + 1 < ny {
            visit(a, b + 1, c, &mut lat.cells);
        }
        if c > 0 {
            visit(a, b, c - 1, &mut lat.cells);
        }
        if c + 1 < nz {
            visit(a, b, c + 1, &mut lat.cells);
        }
    }
    for v in lat.cells.iter_mut() {
        *v = (*v != OUTSIDE) as u8;
    }
}

/// Surface voxelization plus solid fill of every closed object.
///
/// Each closed object is flood-filled on its own lattice spanning the object's
/// full extent plus one cell, so interiors are found even when the object is
/// cut by the bounds, and open objects never leak fill into their neighbours.
pub fn voxelize(mesh: &HouseMesh, resolution: usize, bounds: Cube) -> Voxelization {
    let vs = bounds.edge / resolution as f64;
    let min = bounds.min;
    let r = resolution as i64;
    let mut grid = Lattice::new([0; 3], [resolution; 3]);
    let mut degenerate = 0;

    for group in mesh.object_groups() {
        let tris: Vec<&[Point; 3]> = group
            .iter()
            .map(|&i| &mesh.triangles[i].vertices)
            .filter(|t| {
                let bad = is_degenerate(t);
                degenerate += bad as usize;
                !bad
            })
            .collect();
        if tris.is_empty() {
            continue;
        }
        let closed = tris.len() == group.len() && mesh.is_closed(&group);
        if !closed {
            for t in tris {
                rasterize(&mut grid, t, min, vs);
            }
            continue;
        }
        let (mut lo, mut hi) = tri_bounds(tris[0]);
        for t in &tris[1..] {
            let (l, h) = tri_bounds(t);
            for a in 0..3 {
                lo[a] = lo[a].min(l[a]);
                hi[a] = hi[a].max(h[a]);
            }
        }
        let mut origin = [0i64; 3];
        let mut end = [0i64; 3];
        for a in 0..3 {
            let (c0, c1) = cell_range(lo[a], hi[a], min[a], vs);
            if c1 < 0 || c0 >= r {
                origin[a] = 0;
                end[a] = -1;
                continue;
            }
            origin[a] = c0 - 1;
            end[a] = c1 + 1;
        }
        if (0..3).any(|a| end[a] < origin[a]) {
            continue;
        }
        let mut dims = [0, 1, 2].map(|a| (end[a] - origin[a] + 1) as usize);
        if dims.iter().product::<usize>() > MAX_FILL_CELLS {
            log::warn!("solid fill lattice {dims:?} too large; clipping to bounds");
            for a in 0..3 {
                origin[a] = origin[a].max(-1);
                end[a] = end[a].min(r);
            }
            dims = [0, 1, 2].map(|a| (end[a] - origin[a] + 1) as usize);
        }
        let mut lat = Lattice::new(origin, dims);
        for t in &tris {
            rasterize(&mut lat, t, min, vs);
        }
        fill_enclosed(&mut lat);
        for c in 0..dims[2] {
            let gz = c as i64 + origin[2];
            if !(0..r).contains(&gz) {
                continue;
            }
            for b in 0..dims[1] {
                let gy = b as i64 + origin[1];
                if !(0..r).contains(&gy) {
                    continue;
                }
                for a in 0..dims[0] {
                    let gx = a as i64 + origin[0];
                    if (0..r).contains(&gx) && lat.cells[lat.index(a, b, c)] != 0 {
                        let i = grid.index(gx as usize, gy as usize, gz as usize);
                        grid.cells[i] = 1;
                    }
                }
            }
        }
    }
    if degenerate > 0 {
        log::warn!("skipped {degenerate} degenerate triangles");
    }
    let origin = min.map(|v| v as f32);
    Voxelization { grid: VoxelGrid::from_occupancy(resolution, vs as f32, origin, grid.cells), degenerate }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::PartLabel;

    #[test]
    fn box_spanning_bounds_fills_grid() {
        let mut m = HouseMesh::default();
        m.add_box("wall", PartLabel::Wall, [0.0; 3], [6.0; 3]);
        let v = voxelize(&m, 8, Cube { min: [0.0; 3], edge: 6.0 });
        assert_eq!(v.grid.occupied_count(), 512);
    }

    #[test]
    fn unit_cube_at_center() {
        let mut m = HouseMesh::default();
        m.add_box("wall", PartLabel::Wall, [-0.5; 3], [0.5; 3]);
        let g = voxelize(&m, 64, Cube::centered([0.0; 3], 48.0)).grid;
        let occ: Vec<_> = g.occupied().collect();
        assert_eq!(occ.len(), 8);
        assert!(occ.iter().all(|c| c.iter().all(|&i| i == 31 || i == 32)));
    }

    #[test]
    fn empty_and_degenerate() {
        let v = voxelize(&HouseMesh::default(), 8, Cube { min: [0.0; 3], edge: 1.0 });
        assert!(v.grid.is_empty());
        let mut m = HouseMesh::default();
        m.add_object("wall", PartLabel::Wall, &[[[0.1; 3], [0.2; 3], [0.3; 3]]]);
        let v = voxelize(&m, 8, Cube { min: [0.0; 3], edge: 1.0 });
        assert_eq!(v.degenerate, 1);
        assert!(v.grid.is_empty());
    }

    #[test]
    fn open_surface_is_not_filled() {
        let mut m = HouseMesh::default();
        let mut tris = super::super::mesh::box_triangles([1.1; 3], [6.9; 3]);
        tris.truncate(10);
        m.add_object("wall", PartLabel::Wall, &tris);
        let g = voxelize(&m, 8, Cube { min: [0.0; 3], edge: 8.0 }).grid;
        assert!(!g.get(4, 4, 4));
        assert!(g.get(1, 4, 4));
    }

    #[test]
    fn closed_box_cut_by_bounds_is_solid() {
        let mut m = HouseMesh::default();
        m.add_box("floor", PartLabel::Floor, [-20.0, -20.0, 1.1], [20.0, 20.0, 4.9]);
        let g = voxelize(&m, 8, Cube { min: [0.0; 3], edge: 8.0 }).grid;
        for z in 0..8 {
            let full = (1..5).contains(&z);
            assert!((0..8).all(|x| (0..8).all(|y| g.get(x, y, z) == full)), "layer {z}");
        }
    }

    #[test]
    fn touching_counts() {
        let tri = [[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]];
        assert!(triangle_touches_box([0.5, 0.5, 0.5], 0.5, &tri));
        assert!(!triangle_touches_box([0.5, 0.5, -0.5], 0.5, &tri));
        // Diagonal triangle passing just outside a box corner.
        let diag = [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]];
        assert!(!triangle_touches_box([-0.3, -0.3, -0.3], 0.5, &diag));
        assert!(triangle_touches_box([0.2, 0.2, 0.2], 0.5, &diag));
    }
}
