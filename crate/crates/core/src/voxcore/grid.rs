/// Dense cubic binary occupancy grid, x-fastest then y then z.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    resolution: usize,
    voxel_size: f32,
    origin: [f32; 3],
    occupancy: Vec<u8>,
}

/// Dense cubic grid of occupancy probabilities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyField {
    resolution: usize,
    voxel_size: f32,
    origin: [f32; 3],
    values: Vec<f32>,
}

/// Shared geometry accessors of cubic volumes.
pub trait Volume: Sized {
    type Value: Copy + Default;

    fn resolution(&self) -> usize;
    fn voxel_size(&self) -> f32;
    fn origin(&self) -> [f32; 3];
    fn values(&self) -> &[Self::Value];
    fn from_parts(resolution: usize, voxel_size: f32, origin: [f32; 3], values: Vec<Self::Value>) -> Self;

    fn index(&self, x: usize, y: usize, z: usize) -> usize {
        let r = self.resolution();
        x + r * (y + r * z)
    }

    /// Physical edge length in meters.
    fn extent(&self) -> f32 {
        self.resolution() as f32 * self.voxel_size()
    }
}

impl VoxelGrid {
    pub fn empty(resolution: usize, voxel_size: f32, origin: [f32; 3]) -> Self {
        assert!(resolution > 0, "grid resolution must be positive");
        Self { resolution, voxel_size, origin, occupancy: vec![0; resolution.pow(3)] }
    }

    /// Grid with unit voxel size at the origin; handy for tests and demos.
    pub fn unit(resolution: usize) -> Self {
        Self::empty(resolution, 1.0, [0.0; 3])
    }

    pub fn from_fn(resolution: usize, voxel_size: f32, origin: [f32; 3], f: impl Fn(usize, usize, usize) -> bool) -> Self {
        let mut g = Self::empty(resolution, voxel_size, origin);
        for z in 0..resolution {
            for y in 0..resolution {
                for x in 0..resolution {
                    if f(x, y, z) {
                        g.set(x, y, z, true);
                    }
                }
            }
        }
        g
    }

    /// Build from raw 0/1 values; any nonzero byte counts as occupied.
    pub fn from_occupancy(resolution: usize, voxel_size: f32, origin: [f32; 3], occupancy: Vec<u8>) -> Self {
        assert_eq!(occupancy.len(), resolution.pow(3), "occupancy length");
        let occupancy = occupancy.into_iter().map(|v| (v != 0) as u8).collect();
        Self { resolution, voxel_size, origin, occupancy }
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.occupancy[self.index(x, y, z)] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.index(x, y, z);
        self.occupancy[i] = value as u8;
    }

    pub fn occupancy(&self) -> &[u8] {
        &self.occupancy
    }

    pub fn occupancy_mut(&mut self) -> &mut [u8] {
        &mut self.occupancy
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&v| v != 0).count()
    }

    pub fn fraction(&self) -> f64 {
        self.occupied_count() as f64 / self.occupancy.len() as f64
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.iter().all(|&v| v == 0)
    }

    /// Coordinates of occupied voxels in memory order.
    pub fn occupied(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let r = self.resolution;
        self.occupancy
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(move |(i, _)| [i % r, (i / r) % r, i / (r * r)])
    }

    /// Every occupied voxel of `self` is occupied in `other`.
    pub fn is_subset_of(&self, other: &VoxelGrid) -> bool {
        self.resolution == other.resolution
            && self.occupancy.iter().zip(&other.occupancy).all(|(&a, &b)| a == 0 || b != 0)
    }

    /// Intersection over union; two empty grids count as identical.
    pub fn iou(&self, other: &VoxelGrid) -> f64 {
        assert_eq!(self.resolution, other.resolution, "iou on different resolutions");
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.occupancy.iter().zip(&other.occupancy) {
            inter += (a != 0 && b != 0) as usize;
            union += (a != 0 || b != 0) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn to_field(&self) -> OccupancyField {
        OccupancyField {
            resolution: self.resolution,
            voxel_size: self.voxel_size,
            origin: self.origin,
            values: self.occupancy.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn with_geometry(mut self, voxel_size: f32, origin: [f32; 3]) -> Self {
        self.voxel_size = voxel_size;
        self.origin = origin;
        self
    }
}

impl Volume for VoxelGrid {
    type Value = u8;

    fn resolution(&self) -> usize {
        self.resolution
    }
    fn voxel_size(&self) -> f32 {
        self.voxel_size
    }
    fn origin(&self) -> [f32; 3] {
        self.origin
    }
    fn values(&self) -> &[u8] {
        &self.occupancy
    }
    fn from_parts(resolution: usize, voxel_size: f32, origin: [f32; 3], values: Vec<u8>) -> Self {
        Self::from_occupancy(resolution, voxel_size, origin, values)
    }
}

impl OccupancyField {
    pub fn new(resolution: usize, voxel_size: f32, origin: [f32; 3], values: Vec<f32>) -> Self {
        assert_eq!(values.len(), resolution.pow(3), "field length");
        Self { resolution, voxel_size, origin, values }
    }

    pub fn constant(resolution: usize, value: f32) -> Self {
        Self::new(resolution, 1.0, [0.0; 3], vec![value; resolution.pow(3)])
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.index(x, y, z)]
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

impl Volume for OccupancyField {
    type Value = f32;

    fn resolution(&self) -> usize {
        self.resolution
    }
    fn voxel_size(&self) -> f32 {
        self.voxel_size
    }
    fn origin(&self) -> [f32; 3] {
        self.origin
    }
    fn values(&self) -> &[f32] {
        &self.values
    }
    fn from_parts(resolution: usize, voxel_size: f32, origin: [f32; 3], values: Vec<f32>) -> Self {
        Self::new(resolution, voxel_size, origin, values)
    }
}
