//! VXG1 (bit-packed occupancy) and VXF1 (f32 field) containers.

use std::path::Path;

use super::error::VoxError;
use super::grid::{OccupancyField, Volume, VoxelGrid};

pub const VXG1_MAGIC: &[u8; 4] = b"VXG1";
pub const VXF1_MAGIC: &[u8; 4] = b"VXF1";
pub const HEADER_LEN: usize = 24;
/// Largest resolution accepted when decoding; 1024³ is already 128 MiB packed.
pub const MAX_RESOLUTION: u64 = 1024;

struct Header {
    resolution: usize,
    voxel_size: f32,
    origin: [f32; 3],
}

fn write_header(out: &mut Vec<u8>, magic: &[u8; 4], r: usize, voxel_size: f32, origin: [f32; 3]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&(r as u32).to_le_bytes());
    out.extend_from_slice(&voxel_size.to_le_bytes());
    for c in origin {
        out.extend_from_slice(&c.to_le_bytes());
    }
}

fn f32_at(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn read_header(bytes: &[u8], magic: &[u8; 4]) -> Result<Header, VoxError> {
    if bytes.len() < 4 {
        return Err(VoxError::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if &found != magic {
        return Err(VoxError::BadMagic(found));
    }
    if bytes.len() < HEADER_LEN {
        return Err(VoxError::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    let r = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as u64;
    if r == 0 || r > MAX_RESOLUTION {
        return Err(VoxError::InvalidResolution(r));
    }
    Ok(Header {
        resolution: r as usize,
        voxel_size: f32_at(bytes, 8),
        origin: [f32_at(bytes, 12), f32_at(bytes, 16), f32_at(bytes, 20)],
    })
}

pub fn encode_vxg1(grid: &VoxelGrid) -> Vec<u8> {
    let occ = grid.occupancy();
    let mut out = Vec::with_capacity(HEADER_LEN + occ.len().div_ceil(8));
    write_header(&mut out, VXG1_MAGIC, grid.resolution(), grid.voxel_size(), grid.origin());
    for chunk in occ.chunks(8) {
        let byte = chunk.iter().enumerate().fold(0u8, |b, (i, &v)| b | (((v != 0) as u8) << i));
        out.push(byte);
    }
    out
}

pub fn decode_vxg1(bytes: &[u8]) -> Result<VoxelGrid, VoxError> {
    let h = read_header(bytes, VXG1_MAGIC)?;
    let n = h.resolution.pow(3);
    let expected = HEADER_LEN + n.div_ceil(8);
    if bytes.len() < expected {
        return Err(VoxError::Truncated { expected, found: bytes.len() });
    }
    let payload = &bytes[HEADER_LEN..expected];
    let occ = (0..n).map(|i| (payload[i / 8] >> (i % 8)) & 1).collect();
    Ok(VoxelGrid::from_occupancy(h.resolution, h.voxel_size, h.origin, occ))
}

pub fn encode_vxf1(field: &OccupancyField) -> Vec<u8> {
    let vals = field.values();
    let mut out = Vec::with_capacity(HEADER_LEN + vals.len() * 4);
    write_header(&mut out, VXF1_MAGIC, field.resolution(), field.voxel_size(), field.origin());
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_vxf1(bytes: &[u8]) -> Result<OccupancyField, VoxError> {
    let h = read_header(bytes, VXF1_MAGIC)?;
    let n = h.resolution.pow(3);
    let expected = HEADER_LEN + n * 4;
    if bytes.len() < expected {
        return Err(VoxError::Truncated { expected, found: bytes.len() });
    }
    let vals = bytes[HEADER_LEN..expected].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(OccupancyField::new(h.resolution, h.voxel_size, h.origin, vals))
}

pub fn write_vxg1(path: &Path, grid: &VoxelGrid) -> Result<(), VoxError> {
    std::fs::write(path, encode_vxg1(grid))?;
    Ok(())
}

pub fn read_vxg1(path: &Path) -> Result<VoxelGrid, VoxError> {
    decode_vxg1(&std::fs::read(path)?)
}

pub fn write_vxf1(path: &Path, field: &OccupancyField) -> Result<(), VoxError> {
    std::fs::write(path, encode_vxf1(field))?;
    Ok(())
}

pub fn read_vxf1(path: &Path) -> Result<OccupancyField, VoxError> {
    decode_vxf1(&std::fs::read(path)?)
}
