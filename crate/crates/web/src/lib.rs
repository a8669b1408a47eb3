//! wasm-bindgen surface for `www/index.html`: build a synthetic house, sprinkle
//! floating and sticking voxels over it, then run the clean-up pass.

use arch_core::dataprep::{synth_house, MIN_SYNTH_RESOLUTION};
use arch_core::voxcore::{clean_up, project_2_5d, Volume, VoxelGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

pub const MAX_RESOLUTION: usize = 64;

#[wasm_bindgen]
pub struct Scene {
    grid: VoxelGrid,
    rng: ChaCha8Rng,
}

#[wasm_bindgen]
impl Scene {
    /// A synthetic house; the side is clamped to the range the generator supports.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, resolution: usize) -> Scene {
        let r = resolution.clamp(MIN_SYNTH_RESOLUTION, MAX_RESOLUTION);
        Scene { grid: synth_house(seed as u64, r).grid, rng: ChaCha8Rng::seed_from_u64(seed as u64 ^ 0x5EED) }
    }

    pub fn resolution(&self) -> usize {
        self.grid.resolution()
    }

    pub fn occupied(&self) -> usize {
        self.grid.occupied_count()
    }

    /// One byte per voxel, index `x + R(y + Rz)`.
    pub fn occupancy(&self) -> Vec<u8> {
        self.grid.occupancy().to_vec()
    }

    /// Top view: fraction of each z column that is filled, `x + R·y`.
    pub fn top_view(&self) -> Vec<f32> {
        project_2_5d(&self.grid).xy
    }

    pub fn toggle(&mut self, x: usize, y: usize, z: usize) {
        let r = self.grid.resolution();
        if x < r && y < r && z < r {
            let v = self.grid.get(x, y, z);
            self.grid.set(x, y, z, !v);
        }
    }

    /// Add up to `count` isolated voxels: floaters in free space and stickers
    /// on surfaces, alternating. Returns how many were placed.
    pub fn add_noise(&mut self, count: usize) -> usize {
        let r = self.grid.resolution();
        let mut placed = 0;
        for attempt in 0..count * 400 {
            if placed == count {
                break;
            }
            let p: [usize; 3] = std::array::from_fn(|_| self.rng.random_range(1..r - 1));
            if self.grid.get(p[0], p[1], p[2]) {
                continue;
            }
            let touching = neighbours(p).filter(|n| self.grid.get(n[0], n[1], n[2])).count();
            let want_sticker = placed % 2 == 0 && attempt < count * 300;
            if touching == usize::from(want_sticker) {
                self.grid.set(p[0], p[1], p[2], true);
                placed += 1;
            }
        }
        placed
    }

    /// Run clean-up for at most `iterations` passes; returns voxels removed.
    pub fn clean(&mut self, iterations: usize) -> usize {
        let before = self.grid.occupied_count();
        self.grid = clean_up(&self.grid, iterations);
        before - self.grid.occupied_count()
    }
}

fn neighbours(p: [usize; 3]) -> impl Iterator<Item = [usize; 3]> {
    (0..6).map(move |i| {
        let mut n = p;
        n[i / 2] = if i % 2 == 0 { n[i / 2] - 1 } else { n[i / 2] + 1 };
        n
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_cleaned_back_to_the_house() {
        let mut s = Scene::new(3, 32);
        let house = s.occupancy();
        let baseline = clean_up(&s.grid, 32);
        assert_eq!(s.add_noise(20), 20);
        assert_eq!(s.occupied(), house.iter().filter(|&&v| v != 0).count() + 20);
        s.clean(32);
        assert_eq!(s.grid, baseline);
    }

    #[test]
    fn resolution_is_clamped_and_toggle_is_bounded() {
        let mut s = Scene::new(0, 4);
        assert_eq!(s.resolution(), MIN_SYNTH_RESOLUTION);
        s.toggle(999, 0, 0);
        let n = s.occupied();
        s.toggle(0, 0, 0);
        assert_eq!(s.occupied().abs_diff(n), 1);
        assert_eq!(s.top_view().len(), MIN_SYNTH_RESOLUTION.pow(2));
    }
}
