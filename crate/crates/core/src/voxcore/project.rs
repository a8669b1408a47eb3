use super::grid::{OccupancyField, Volume, VoxelGrid};

/// Three axis-aligned average projections of a cubic volume, each R×R, row-major.
///
/// `xy[a + R*b]` averages the z column at `(x=a, y=b)`, `yz[a + R*b]` the x column
/// at `(y=a, z=b)` and `xz[a + R*b]` the y column at `(x=a, z=b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Projections {
    pub resolution: usize,
    pub xy: Vec<f32>,
    pub yz: Vec<f32>,
    pub xz: Vec<f32>,
}

impl Projections {
    pub fn planes(&self) -> [&[f32]; 3] {
        [&self.xy, &self.yz, &self.xz]
    }
}

fn project_values(r: usize, get: impl Fn(usize) -> f32) -> Projections {
    let n = r * r;
    let (mut xy, mut yz, mut xz) = (vec![0f64; n], vec![0f64; n], vec![0f64; n]);
    for z in 0..r {
        for y in 0..r {
            for x in 0..r {
                let v = get(x + r * (y + r * z)) as f64;
                if v != 0.0 {
                    xy[x + r * y] += v;
                    yz[y + r * z] += v;
                    xz[x + r * z] += v;
                }
            }
        }
    }
    let norm = |v: Vec<f64>| v.into_iter().map(|s| (s / r as f64) as f32).collect();
    Projections { resolution: r, xy: norm(xy), yz: norm(yz), xz: norm(xz) }
}

pub fn project_2_5d(grid: &VoxelGrid) -> Projections {
    let occ = grid.occupancy();
    project_values(grid.resolution(), |i| occ[i] as f32)
}

pub fn project_field(field: &OccupancyField) -> Projections {
    let vals = field.values();
    project_values(field.resolution(), |i| vals[i])
}
