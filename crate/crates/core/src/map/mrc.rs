//! MRC2014 reader/writer. Little- and big-endian files are read (byte order
//! auto-detected from MACHST, corroborated by plausible dimensions); files
//! are always written little-endian in MODE 2 (float32).

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};
use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::map::{DensityMap, SYNTH_CONTOUR_FRACTION};

/// Fixed MRC2014 header size in bytes (256 4-byte words).
pub const HEADER_SIZE: usize = 1024;

/// Dimension safety cap: headers claiming more voxels per axis are treated
/// as corrupt. Override with [`read_mrc_with_cap`].
pub const DEFAULT_DIM_CAP: usize = 1024;

const MAP_MAGIC: &[u8; 4] = b"MAP ";
const MACHST_LE: [u8; 4] = [0x44, 0x44, 0x00, 0x00];
const MACHST_BE: [u8; 4] = [0x11, 0x11, 0x00, 0x00];
const MRC_VERSION_2014: i32 = 20140;

/// Byte range of 4-byte header word `w` (1-based, per the format spec).
#[inline]
fn word(bytes: &[u8], w: usize) -> &[u8] {
    &bytes[(w - 1) * 4..w * 4]
}

struct RawHeader {
    nx: i32,
    ny: i32,
    nz: i32,
    mode: i32,
    nxstart: i32,
    nystart: i32,
    nzstart: i32,
    mx: i32,
    my: i32,
    mz: i32,
    cella: [f32; 3],
    mapc: i32,
    mapr: i32,
    maps: i32,
    nsymbt: i32,
    origin: [f32; 3],
}

fn parse_header<B: ByteOrder>(h: &[u8]) -> RawHeader {
    RawHeader {
        nx: B::read_i32(word(h, 1)),
        ny: B::read_i32(word(h, 2)),
        nz: B::read_i32(word(h, 3)),
        mode: B::read_i32(word(h, 4)),
        nxstart: B::read_i32(word(h, 5)),
        nystart: B::read_i32(word(h, 6)),
        nzstart: B::read_i32(word(h, 7)),
        mx: B::read_i32(word(h, 8)),
        my: B::read_i32(word(h, 9)),
        mz: B::read_i32(word(h, 10)),
        cella: [
            B::read_f32(word(h, 11)),
            B::read_f32(word(h, 12)),
            B::read_f32(word(h, 13)),
        ],
        mapc: B::read_i32(word(h, 17)),
        mapr: B::read_i32(word(h, 18)),
        maps: B::read_i32(word(h, 19)),
        nsymbt: B::read_i32(word(h, 24)),
        origin: [
            B::read_f32(word(h, 50)),
            B::read_f32(word(h, 51)),
            B::read_f32(word(h, 52)),
        ],
    }
}

fn dims_sane(h: &RawHeader, cap: usize) -> bool {
    let cap = cap as i32;
    (1..=cap).contains(&h.nx) && (1..=cap).contains(&h.ny) && (1..=cap).contains(&h.nz)
}

pub fn read_mrc(path: impl AsRef<Path>) -> Result<DensityMap> {
    read_mrc_with_cap(path, DEFAULT_DIM_CAP)
}

pub fn read_mrc_with_cap(path: impl AsRef<Path>, dim_cap: usize) -> Result<DensityMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_SIZE {
        return Err(Error::InvalidMrc {
            path: path.into(),
            reason: format!("file is {} bytes, smaller than the header", bytes.len()),
        });
    }

    let machst: [u8; 4] = word(&bytes, 54).try_into().unwrap();
    // MACHST names the writing machine's byte order; a wrong or missing
    // stamp is common in the wild, so the final choice is corroborated by
    // whichever interpretation yields plausible dimensions.
    let le_first = machst[0] != MACHST_BE[0];
    let le = parse_header::<LittleEndian>(&bytes[..HEADER_SIZE]);
    let be = parse_header::<BigEndian>(&bytes[..HEADER_SIZE]);
    let (header, big_endian) = {
        let (primary, secondary, primary_big) = if le_first {
            (le, be, false)
        } else {
            (be, le, true)
        };
        if dims_sane(&primary, dim_cap) {
            (primary, primary_big)
        } else if dims_sane(&secondary, dim_cap) {
            (secondary, !primary_big)
        } else {
            let d = (primary.nx as i64, primary.ny as i64, primary.nz as i64);
            if d.0 > 0 && d.1 > 0 && d.2 > 0 {
                return Err(Error::DimsExceedCap { dims: d, cap: dim_cap });
            }
            return Err(Error::InvalidMrc {
                path: path.into(),
                reason: format!("implausible dimensions {d:?} in either byte order"),
            });
        }
    };

    if !matches!(header.mode, 0 | 1 | 2) {
        return Err(Error::UnsupportedMode {
            path: path.into(),
            mode: header.mode,
        });
    }
    if (header.mapc, header.mapr, header.maps) != (1, 2, 3) {
        return Err(Error::InvalidMrc {
            path: path.into(),
            reason: format!(
                "axis order MAPC/MAPR/MAPS = {}/{}/{} unsupported (only 1/2/3)",
                header.mapc, header.mapr, header.maps
            ),
        });
    }
    if header.mx < 1 || header.my < 1 || header.mz < 1 {
        return Err(Error::InvalidMrc {
            path: path.into(),
            reason: "MX/MY/MZ must be ≥ 1".into(),
        });
    }
    if header.nsymbt < 0 {
        return Err(Error::InvalidMrc {
            path: path.into(),
            reason: "negative NSYMBT".into(),
        });
    }

    let voxel = Vector3::new(
        header.cella[0] as f64 / header.mx as f64,
        header.cella[1] as f64 / header.my as f64,
        header.cella[2] as f64 / header.mz as f64,
    );
    if !voxel.iter().all(|v| v.is_finite() && *v > 0.0) {
        return Err(Error::InvalidMrc {
            path: path.into(),
            reason: format!("non-positive voxel size from CELLA {:?}", header.cella),
        });
    }

    let origin = if header.origin == [0.0, 0.0, 0.0] {
        Vector3::new(
            header.nxstart as f64 * voxel.x,
            header.nystart as f64 * voxel.y,
            header.nzstart as f64 * voxel.z,
        )
    } else {
        Vector3::new(
            header.origin[0] as f64,
            header.origin[1] as f64,
            header.origin[2] as f64,
        )
    };

    let (nx, ny, nz) = (
        header.nx as usize,
        header.ny as usize,
        header.nz as usize,
    );
    let count = nx * ny * nz;
    let value_size = match header.mode {
        0 => 1,
        1 => 2,
        _ => 4,
    };
    let data_start = HEADER_SIZE + header.nsymbt as usize;
    let needed = data_start + count * value_size;
    if bytes.len() < needed {
        return Err(Error::InvalidMrc {
            path: path.into(),
            reason: format!("truncated data: need {} bytes, have {}", needed, bytes.len()),
        });
    }
    let raw = &bytes[data_start..needed];
    let data: Vec<f32> = match (header.mode, big_endian) {
        (0, _) => raw.iter().map(|&b| b as i8 as f32).collect(),
        (1, false) => raw
            .chunks_exact(2)
            .map(|c| LittleEndian::read_i16(c) as f32)
            .collect(),
        (1, true) => raw
            .chunks_exact(2)
            .map(|c| BigEndian::read_i16(c) as f32)
            .collect(),
        (_, false) => raw
            .chunks_exact(4)
            .map(LittleEndian::read_f32)
            .collect(),
        (_, true) => raw.chunks_exact(4).map(BigEndian::read_f32).collect(),
    };
    if !data.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidMrc {
            path: path.into(),
            reason: "non-finite density values".into(),
        });
    }

    // MRC carries no contour level; default to the same peak fraction the
    // synthesizer uses. Callers override via config/--contour for real maps.
    let peak = data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let contour = (SYNTH_CONTOUR_FRACTION * peak as f64) as f32;
    DensityMap::new((nx, ny, nz), voxel, origin, data, contour)
}

pub fn write_mrc(map: &DensityMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    map.validate()?;
    let (nx, ny, nz) = map.dims;
    let mut header = Vec::with_capacity(HEADER_SIZE);
    let w = &mut header;
    let io_err = |_: std::io::Error| -> Error { unreachable!("Vec writes cannot fail") };

    w.write_i32::<LittleEndian>(nx as i32).map_err(io_err)?; // NX
    w.write_i32::<LittleEndian>(ny as i32).map_err(io_err)?; // NY
    w.write_i32::<LittleEndian>(nz as i32).map_err(io_err)?; // NZ
    w.write_i32::<LittleEndian>(2).map_err(io_err)?; // MODE
    w.write_i32::<LittleEndian>(0).map_err(io_err)?; // NXSTART
    w.write_i32::<LittleEndian>(0).map_err(io_err)?; // NYSTART
    w.write_i32::<LittleEndian>(0).map_err(io_err)?; // NZSTART
    w.write_i32::<LittleEndian>(nx as i32).map_err(io_err)?; // MX
    w.write_i32::<LittleEndian>(ny as i32).map_err(io_err)?; // MY
    w.write_i32::<LittleEndian>(nz as i32).map_err(io_err)?; // MZ
    for (n, v) in [
        (nx, map.voxel_size.x),
        (ny, map.voxel_size.y),
        (nz, map.voxel_size.z),
    ] {
        w.write_f32::<LittleEndian>((v * n as f64) as f32)
            .map_err(io_err)?; // CELLA
    }
    for _ in 0..3 {
        w.write_f32::<LittleEndian>(90.0).map_err(io_err)?; // CELLB
    }
    w.write_i32::<LittleEndian>(1).map_err(io_err)?; // MAPC
    w.write_i32::<LittleEndian>(2).map_err(io_err)?; // MAPR
    w.write_i32::<LittleEndian>(3).map_err(io_err)?; // MAPS
    w.write_f32::<LittleEndian>(map.min_value()).map_err(io_err)?; // DMIN
    w.write_f32::<LittleEndian>(map.max_value()).map_err(io_err)?; // DMAX
    w.write_f32::<LittleEndian>(map.mean_value() as f32)
        .map_err(io_err)?; // DMEAN
    w.write_i32::<LittleEndian>(1).map_err(io_err)?; // ISPG
    w.write_i32::<LittleEndian>(0).map_err(io_err)?; // NSYMBT
    w.write_i32::<LittleEndian>(0).map_err(io_err)?; // EXTRA word 25
    w.write_i32::<LittleEndian>(0).map_err(io_err)?; // EXTRA word 26
    w.write_i32::<LittleEndian>(MRC_VERSION_2014).map_err(io_err)?; // NVERSION (word 27)
    for _ in 28..50 {
        w.write_i32::<LittleEndian>(0).map_err(io_err)?; // EXTRA words 28-49
    }
    for v in [map.origin.x, map.origin.y, map.origin.z] {
        w.write_f32::<LittleEndian>(v as f32).map_err(io_err)?; // ORIGIN
    }
    w.extend_from_slice(MAP_MAGIC); // MAP
    w.extend_from_slice(&MACHST_LE); // MACHST
    w.write_f32::<LittleEndian>(map.rms_value() as f32)
        .map_err(io_err)?; // RMS
    w.write_i32::<LittleEndian>(0).map_err(io_err)?; // NLABL
    header.resize(HEADER_SIZE, 0);

    let mut out = header;
    out.reserve(map.data.len() * 4);
    for &v in &map.data {
        out.write_f32::<LittleEndian>(v).map_err(io_err)?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
