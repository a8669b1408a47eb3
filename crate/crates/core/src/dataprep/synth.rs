//! Procedural house-like models standing in for a real house dataset.
//!
//! Everything is laid out on a cell lattice first. Each element becomes a
//! closed box whose faces sit inside its boundary cells, so the mesh
//! voxelizes back to exactly the cell layout at the stage-1 resolution and
//! never lands on a lattice plane of the finer chunk grids. Exposed faces of
//! thick elements sit deeper, by a depth drawn per element from
//! `detail_inset`, which makes walls and slabs thinner than their cells:
//! finer chunk grids then carry detail that a plain subdivision of the
//! coarser grid does not.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::mesh::{filter_parts, HouseMesh, PartLabel, Point};
use super::voxelize::{voxelize, Cube};
use super::DataError;
use crate::voxcore::VoxelGrid;

pub const DEFAULT_CONFIG: &str = include_str!("../../configs/synth_house.toml");

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub voxel_size: f64,
    pub face_inset: f64,
    pub detail_inset: [f64; 2],
    pub margin: usize,
    pub footprint_fraction: [f64; 2],
    pub stories: [usize; 2],
    pub wall_height: [usize; 2],
    pub slab_thickness: usize,
    pub wall_thickness: usize,
    pub partitions: [usize; 2],
    pub windows_per_wall: [usize; 2],
    pub window_width: [usize; 2],
    pub door_width: [usize; 2],
    pub porch_probability: f64,
    pub porch_depth: [usize; 2],
    pub column_spacing: [usize; 2],
    pub parapet_probability: f64,
    pub parapet_height: usize,
    pub stair_probability: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::from_toml(DEFAULT_CONFIG).expect("bundled synth config")
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        let cfg: SynthConfig = toml::from_str(text).map_err(|e| DataError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Config(m.to_string()));
        if self.slab_thickness < 2 || self.wall_thickness < 2 {
            return bad("slabs and walls must be at least two cells thick to survive clean-up");
        }
        if !(self.face_inset > 0.0 && self.face_inset < self.voxel_size / 2.0) {
            return bad("face_inset must lie strictly inside half a cell");
        }
        // Past 5/8 of a cell a two-cell element keeps under half its voxels at 8x.
        let [dlo, dhi] = self.detail_inset;
        if !(dlo >= self.face_inset && dlo <= dhi && dhi < 0.625 * self.voxel_size) {
            return bad("detail_inset must lie between face_inset and 5/8 of a cell");
        }
        if self.wall_height[0] < 3 || self.porch_depth[0] < 3 || self.window_width[0] < 2 || self.door_width[0] < 2 {
            return bad("wall_height >= 3, porch_depth >= 3 and opening widths >= 2 are required");
        }
        let ranges = [
            self.stories,
            self.wall_height,
            self.partitions,
            self.windows_per_wall,
            self.window_width,
            self.door_width,
            self.porch_depth,
            self.column_spacing,
        ];
        if ranges.iter().any(|r| r[0] > r[1]) || self.footprint_fraction[0] > self.footprint_fraction[1] {
            return bad("range with min > max");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthHouse {
    /// Stage-1 occupancy of the filtered mesh.
    pub grid: VoxelGrid,
    /// Full labeled mesh, including doors, windows and ground.
    pub mesh: HouseMesh,
}

/// Half-open cell box.
#[derive(Clone, Copy, Debug)]
struct CellBox {
    lo: [i64; 3],
    hi: [i64; 3],
    label: PartLabel,
}

struct Builder {
    solids: Vec<CellBox>,
    /// Door and window panels: cell boxes rendered as thin slabs in the wall's middle.
    panels: Vec<(CellBox, usize)>,
}

impl Builder {
    fn solid(&mut self, lo: [i64; 3], hi: [i64; 3], label: PartLabel) {
        if (0..3).all(|a| hi[a] > lo[a]) {
            self.solids.push(CellBox { lo, hi, label });
        }
    }
}

fn pick(rng: &mut ChaCha8Rng, r: [usize; 2]) -> i64 {
    rng.random_range(r[0]..=r[1]) as i64
}

struct Band {
    /// Axis the wall runs along (0 = x, 1 = y).
    along: usize,
    /// Cell range along the wall.
    start: i64,
    end: i64,
    /// Cell range across the wall.
    across: (i64, i64),
    z: (i64, i64),
}

/// Place up to `count` more openings, keeping `keep` solid cells at both band
/// ends and at least two solid cells between any two openings.
fn place_openings(rng: &mut ChaCha8Rng, band: &Band, count: usize, width: [usize; 2], keep: i64, taken: &mut Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for _ in 0..count * 4 {
        if out.len() == count {
            break;
        }
        let w = pick(rng, width);
        let (lo, hi) = (band.start + keep, band.end - keep - w);
        if hi < lo {
            break;
        }
        let s = rng.random_range(lo..=hi);
        if taken.iter().all(|&(os, ow)| s + w + 2 <= os || os + ow + 2 <= s) {
            taken.push((s, w));
            out.push((s, w));
        }
    }
    out
}

fn band_box(band: &Band, along: (i64, i64), z: (i64, i64)) -> ([i64; 3], [i64; 3]) {
    let mut lo = [0; 3];
    let mut hi = [0; 3];
    let across = 1 - band.along;
    lo[band.along] = along.0;
    hi[band.along] = along.1;
    lo[across] = band.across.0;
    hi[across] = band.across.1;
    lo[2] = z.0;
    hi[2] = z.1;
    (lo, hi)
}

/// Emit a wall band with openings cut out; `openings` are (start, width, z range, label).
fn build_wall(b: &mut Builder, band: &Band, openings: &[(i64, i64, (i64, i64), PartLabel)]) {
    let mut cursor = band.start;
    for &(s, w, (zlo, zhi), label) in openings {
        let (lo, hi) = band_box(band, (cursor, s), band.z);
        b.solid(lo, hi, PartLabel::Wall);
        let (lo, hi) = band_box(band, (s, s + w), (band.z.0, zlo));
        b.solid(lo, hi, PartLabel::Wall);
        let (lo, hi) = band_box(band, (s, s + w), (zhi, band.z.1));
        b.solid(lo, hi, PartLabel::Wall);
        let (lo, hi) = band_box(band, (s, s + w), (zlo, zhi));
        b.panels.push((CellBox { lo, hi, label }, 1 - band.along));
        cursor = s + w;
    }
    let (lo, hi) = band_box(band, (cursor, band.end), band.z);
    b.solid(lo, hi, PartLabel::Wall);
}

fn layout(cfg: &SynthConfig, seed: u64, r: usize) -> Builder {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder { solids: Vec::new(), panels: Vec::new() };
    let (t, st) = (cfg.wall_thickness as i64, cfg.slab_thickness as i64);
    let ri = r as i64;
    let m = cfg.margin as i64;

    let porch = rng.random_bool(cfg.porch_probability);
    let porch_depth = if porch { pick(&mut rng, cfg.porch_depth) } else { 0 };
    let min_side = ((cfg.footprint_fraction[0] * r as f64) as i64).max(2 * t + 8);
    let max_w = ((cfg.footprint_fraction[1] * r as f64) as i64).min(ri - 2 * m).max(min_side);
    let max_d = max_w.min(ri - 2 * m - porch_depth).max(min_side);
    let w = rng.random_range(min_side..=max_w);
    let d = rng.random_range(min_side.min(max_d)..=max_d);
    let x0 = rng.random_range(m..=ri - m - w);
    let y0 = rng.random_range(m..=(ri - m - d - porch_depth).max(m));
    let (x1, y1) = (x0 + w, y0 + d);

    let stories = pick(&mut rng, cfg.stories) as usize;
    let heights: Vec<i64> = (0..stories).map(|_| pick(&mut rng, cfg.wall_height)).collect();

    let mut z = 1;
    let porch_end = y1 + porch_depth;
    b.solid([x0, y0, z], [x1, porch_end, z + st], PartLabel::Floor);
    z += st;
    for (s, &h) in heights.iter().enumerate() {
        let (zb, zt) = (z, z + h);
        let last = s + 1 == stories;

        // Perimeter: front/back span the full width, sides fit between them.
        let bands = [
            Band { along: 0, start: x0, end: x1, across: (y0, y0 + t), z: (zb, zt) },
            Band { along: 0, start: x0, end: x1, across: (y1 - t, y1), z: (zb, zt) },
            Band { along: 1, start: y0 + t, end: y1 - t, across: (x0, x0 + t), z: (zb, zt) },
            Band { along: 1, start: y0 + t, end: y1 - t, across: (x1 - t, x1), z: (zb, zt) },
        ];
        let door_band = if s == 0 { rng.random_range(0..4) } else { usize::MAX };
        for (i, band) in bands.iter().enumerate() {
            let n = pick(&mut rng, cfg.windows_per_wall) as usize;
            let mut taken = Vec::new();
            let mut openings: Vec<(i64, i64, (i64, i64), PartLabel)> = Vec::new();
            if i == door_band {
                for (s0, wd) in place_openings(&mut rng, band, 1, cfg.door_width, t + 2, &mut taken) {
                    openings.push((s0, wd, (zb, zt - 1), PartLabel::Door));
                }
            }
            for (s0, wd) in place_openings(&mut rng, band, n, cfg.window_width, t + 2, &mut taken) {
                openings.push((s0, wd, (zb + 1, zt - 1), PartLabel::Window));
            }
            openings.sort_by_key(|o| o.0);
            build_wall(&mut b, band, &openings);
        }

        // Partitions run wall to wall with a single door.
        let mut placed: Vec<(usize, i64)> = Vec::new();
        for _ in 0..pick(&mut rng, cfg.partitions) {
            let along = rng.random_range(0..2usize);
            let (lo, hi) = if along == 0 { (y0 + t + 3, y1 - 2 * t - 3) } else { (x0 + t + 3, x1 - 2 * t - 3) };
            if hi < lo {
                continue;
            }
            let at = rng.random_range(lo..=hi);
            if placed.iter().any(|&(a, p)| a == along && (p - at).abs() < t + 3) {
                continue;
            }
            placed.push((along, at));
            let band = if along == 0 {
                Band { along, start: x0 + t, end: x1 - t, across: (at, at + t), z: (zb, zt) }
            } else {
                Band { along, start: y0 + t, end: y1 - t, across: (at, at + t), z: (zb, zt) }
            };
            let doors: Vec<_> = place_openings(&mut rng, &band, 1, cfg.door_width, 2, &mut Vec::new())
                .into_iter()
                .map(|(s0, wd)| (s0, wd, (zb, zt - 1), PartLabel::Door))
                .collect();
            build_wall(&mut b, &band, &doors);
        }

        // Stair against the front wall, one cell per step up to the next slab.
        if s == 0 && rng.random_bool(cfg.stair_probability) {
            let room = x1 - x0 - 2 * t - 2;
            let step = if 2 * h <= room { 2 } else { 1 };
            if step * h <= room {
                let sx = x0 + t + 1;
                for k in 0..h {
                    b.solid([sx + k * step, y0 + t, zb], [sx + (k + 1) * step, y0 + t + 3, zb + k + 1], PartLabel::Stair);
                }
            }
        }

        // Free-standing porch columns; they touch nothing but the two slabs.
        if s == 0 && porch {
            let yc = porch_end - 2;
            let mut xc = x0 + 1;
            while xc <= x1 - 2 {
                b.solid([xc, yc, zb], [xc + 1, yc + 1, zt], PartLabel::Other);
                xc += pick(&mut rng, cfg.column_spacing);
            }
        }

        let slab_end = if s == 0 { porch_end } else { y1 };
        b.solid([x0, y0, zt], [x1, slab_end, zt + st], if last { PartLabel::Roof } else { PartLabel::Floor });
        z = zt + st;
    }

    if rng.random_bool(cfg.parapet_probability) && z + cfg.parapet_height as i64 <= ri {
        let zr = (z, z + cfg.parapet_height as i64);
        for band in [
            Band { along: 0, start: x0, end: x1, across: (y0, y0 + t), z: zr },
            Band { along: 0, start: x0, end: x1, across: (y1 - t, y1), z: zr },
            Band { along: 1, start: y0 + t, end: y1 - t, across: (x0, x0 + t), z: zr },
            Band { along: 1, start: y0 + t, end: y1 - t, across: (x1 - t, x1), z: zr },
        ] {
            build_wall(&mut b, &band, &[]);
        }
    }
    b
}

/// Union of the solid boxes on the cell lattice.
fn rasterize_cells(solids: &[CellBox], r: usize) -> Vec<u8> {
    let mut cells = vec![0u8; r * r * r];
    for bx in solids {
        for z in bx.lo[2]..bx.hi[2] {
            for y in bx.lo[1]..bx.hi[1] {
                for x in bx.lo[0]..bx.hi[0] {
                    cells[x as usize + r * (y as usize + r * z as usize)] = 1;
                }
            }
        }
    }
    cells
}

/// Grow each box by one cell through every face whose outside layer is
/// already solid, so touching elements overlap instead of leaving hairline
/// cracks at finer resolutions. Faces are grown one after another against the
/// grown box, which keeps the result inside the union.
fn grow_into_neighbours(bx: &CellBox, cells: &[u8], r: usize) -> CellBox {
    let ri = r as i64;
    let mut out = *bx;
    for axis in 0..3 {
        for dir in [-1i64, 1] {
            let layer = if dir < 0 { out.lo[axis] - 1 } else { out.hi[axis] };
            if !(0..ri).contains(&layer) {
                continue;
            }
            let (mut lo, mut hi) = (out.lo, out.hi);
            lo[axis] = layer;
            hi[axis] = layer + 1;
            let full = (lo[2]..hi[2]).all(|z| {
                (lo[1]..hi[1]).all(|y| (lo[0]..hi[0]).all(|x| cells[x as usize + r * (y as usize + r * z as usize)] != 0))
            });
            if full {
                if dir < 0 {
                    out.lo[axis] -= 1;
                } else {
                    out.hi[axis] += 1;
                }
            }
        }
    }
    out
}

pub fn grid_origin(resolution: usize, voxel_size: f64) -> Point {
    let h = resolution as f64 * voxel_size / 2.0;
    [-h, -h, 0.0]
}

/// Depth cap, in cells, for elements two cells thick. Past 3/8 of a 64^3
/// chunk cell per side, such an element would keep too little of itself at
/// the finest chunk level where two exposed axes meet.
const TWO_CELL_DEPTH: f64 = 0.48;

/// Smallest grid that fits a footprint, porch and margins.
pub const MIN_SYNTH_RESOLUTION: usize = 24;

/// Panics below [`MIN_SYNTH_RESOLUTION`].
pub fn synth_house(seed: u64, resolution: usize) -> SynthHouse {
    synth_house_with(&SynthConfig::default(), seed, resolution)
}

pub fn synth_house_with(cfg: &SynthConfig, seed: u64, resolution: usize) -> SynthHouse {
    assert!(resolution >= MIN_SYNTH_RESOLUTION, "synthetic houses need R >= {MIN_SYNTH_RESOLUTION}, got {resolution}");
    let b = layout(cfg, seed, resolution);
    let vs = cfg.voxel_size;
    let inset = cfg.face_inset;
    let origin = grid_origin(resolution, vs);
    let world = |c: i64, axis: usize| origin[axis] + c as f64 * vs;
    let cells = rasterize_cells(&b.solids, resolution);
    let mut depth_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5DEE_CE66_D1CE_5EED);

    let mut mesh = HouseMesh::default();
    let mut counts = std::collections::HashMap::new();
    let mut name = |label: PartLabel| {
        let n = counts.entry(label).or_insert(0usize);
        *n += 1;
        format!("{}_{:03}", label.as_str(), *n)
    };
    for bx in &b.solids {
        let g = grow_into_neighbours(bx, &cells, resolution);
        // Grown faces overlap a neighbour; thin elements keep the shallow inset.
        let deep = depth_rng.random_range(cfg.detail_inset[0]..=cfg.detail_inset[1]);
        let depth = |a: usize, grown: bool| match g.hi[a] - g.lo[a] {
            _ if grown => inset,
            ..=1 => inset,
            2 => deep.min(TWO_CELL_DEPTH * vs),
            _ => deep,
        };
        let lo = [0, 1, 2].map(|a| world(g.lo[a], a) + depth(a, g.lo[a] != bx.lo[a]));
        let hi = [0, 1, 2].map(|a| world(g.hi[a], a) - depth(a, g.hi[a] != bx.hi[a]));
        mesh.add_box(name(bx.label), bx.label, lo, hi);
    }
    for (bx, across) in &b.panels {
        let mut lo = [0, 1, 2].map(|a| world(bx.lo[a], a));
        let mut hi = [0, 1, 2].map(|a| world(bx.hi[a], a));
        let mid = (lo[*across] + hi[*across]) / 2.0;
        lo[*across] = mid - 0.05;
        hi[*across] = mid + 0.05;
        mesh.add_box(name(bx.label), bx.label, lo, hi);
    }
    let extent = resolution as f64 * vs;
    mesh.add_box(name(PartLabel::Ground), PartLabel::Ground, [origin[0] - 5.0, origin[1] - 5.0, -0.4], [origin[0] + extent + 5.0, origin[1] + extent + 5.0, 0.0]);

    let grid = voxelize(&filter_parts(&mesh), resolution, Cube { min: origin, edge: extent }).grid;
    debug_assert_eq!(grid.occupancy(), cells.as_slice());
    SynthHouse { grid, mesh }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_parses() {
        let cfg = SynthConfig::default();
        assert_eq!(cfg.voxel_size, 0.75);
        assert!(SynthConfig::from_toml("voxel_size = 1.0").is_err());
        let thin = DEFAULT_CONFIG.replace("wall_thickness = 2", "wall_thickness = 1");
        assert!(SynthConfig::from_toml(&thin).is_err());
    }

    #[test]
    fn mesh_voxelizes_to_cell_layout() {
        for seed in 0..6 {
            for r in [32, 64] {
                let cfg = SynthConfig::default();
                let b = layout(&cfg, seed, r);
                let house = synth_house(seed, r);
                assert_eq!(house.grid.occupancy(), rasterize_cells(&b.solids, r).as_slice(), "seed {seed} R {r}");
                assert!(house.mesh.triangles.iter().any(|t| t.label == PartLabel::Ground));
            }
        }
    }
}
