//! Binary grid files.
//!
//! Little-endian layout:
//!
//! | bytes        | content                                      |
//! |--------------|----------------------------------------------|
//! | 4            | magic `SDFG`                                 |
//! | 4            | version `u32` = 1                            |
//! | 12           | dims `nx, ny, nz` as `u32`                   |
//! | 48           | domain `lo.xyz, hi.xyz` as `f64`             |
//! | 1            | flags, bit 0 set when colors follow          |
//! | 4·N          | SDF values as `f32`, x-fastest               |
//! | 12·N (opt.)  | RGB triples as `f32`                         |
//!
//! with `N = nx·ny·nz` and `index = ix + nx·(iy + ny·iz)`.
//!
//! Values are stored as `f32`, so a field round-trips bit-exactly once its
//! samples are `f32`-representable (anything that was itself read from disk).

use std::path::Path;

use super::{Aabb, ColorGrid, NodeField, Rgb, SdfGrid, Vec3};
use crate::error::{Error, Result};

pub const GRID_MAGIC: &[u8; 4] = b"SDFG";
pub const GRID_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 12 + 48 + 1;
const FLAG_COLOR: u8 = 1;

pub fn encode_grid(field: &NodeField, with_color: bool) -> Vec<u8> {
    let dims = field.dims();
    let n: usize = dims.iter().product();
    let mut out = Vec::with_capacity(HEADER_LEN + n * if with_color { 16 } else { 4 });
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&GRID_VERSION.to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let dom = field.domain();
    for v in dom.lo.iter().chain(dom.hi.iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(if with_color { FLAG_COLOR } else { 0 });
    for v in field.sdf.values() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    if with_color {
        for c in field.color.values() {
            for ch in c.iter() {
                out.extend_from_slice(&(*ch as f32).to_le_bytes());
            }
        }
    }
    out
}

/// Parses a grid file image. Files without colors get a constant white
/// albedo.
pub fn decode_grid(bytes: &[u8]) -> Result<NodeField> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedHeader(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != GRID_MAGIC {
        return Err(Error::MalformedHeader("magic mismatch".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != GRID_VERSION {
        return Err(Error::MalformedHeader(format!("unsupported version {version}")));
    }
    let dims = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::MalformedHeader(format!("invalid dims {dims:?}")));
    }
    let lo = Vec3::new(f64_at(20), f64_at(28), f64_at(36));
    let hi = Vec3::new(f64_at(44), f64_at(52), f64_at(60));
    let domain = Aabb::new(lo, hi).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let flags = bytes[68];
    if flags & !FLAG_COLOR != 0 {
        return Err(Error::MalformedHeader(format!("unknown flags {flags:#04x}")));
    }
    let with_color = flags & FLAG_COLOR != 0;

    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::MalformedHeader(format!("dims {dims:?} overflow")))?;
    let expected = n * if with_color { 16 } else { 4 };
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::PayloadMismatch(format!(
            "{} trailing bytes after {n} records",
            payload.len() - expected
        )));
    }
    let f32_at = |o: usize| f32::from_le_bytes(payload[o..o + 4].try_into().unwrap()) as f64;
    let values = (0..n).map(|i| f32_at(4 * i)).collect();
    let sdf = SdfGrid::new(domain, dims, values)?;
    let color = if with_color {
        let base = 4 * n;
        let colors = (0..n)
            .map(|i| {
                let o = base + 12 * i;
                Rgb::new(f32_at(o), f32_at(o + 4), f32_at(o + 8))
            })
            .collect();
        ColorGrid::new(domain, dims, colors)?
    } else {
        ColorGrid::constant(domain, dims, Rgb::repeat(1.0))?
    };
    NodeField::new(sdf, color)
}

pub fn write_grid(path: impl AsRef<Path>, field: &NodeField) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_grid(field, true)).map_err(Error::io(path))
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<NodeField> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode_grid(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::bake;
    use proptest::prelude::*;

    fn sample(dims: [usize; 3]) -> NodeField {
        let d = Aabb::new(Vec3::new(-1.0, 0.0, 0.5), Vec3::new(1.0, 0.5, 2.0)).unwrap();
        bake(
            &|p: &Vec3| p.norm() - 0.6,
            |p| Rgb::new(p.x.abs().min(1.0), 0.25, 0.5),
            d,
            dims,
            None,
        )
        .unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_grid(&sample([2, 3, 4]), true);
        assert_eq!(&bytes[..4], b"SDFG");
        assert_eq!(bytes[4..8], 1u32.to_le_bytes());
        assert_eq!(bytes[8..12], 2u32.to_le_bytes());
        assert_eq!(bytes[16..20], 4u32.to_le_bytes());
        assert_eq!(bytes[20..28], (-1.0f64).to_le_bytes());
        assert_eq!(bytes[68], 1);
        assert_eq!(bytes.len(), HEADER_LEN + 24 * 16);
    }

    #[test]
    fn round_trip_after_f32_narrowing() {
        let f = sample([5, 4, 3]);
        let once = decode_grid(&encode_grid(&f, true)).unwrap();
        let twice = decode_grid(&encode_grid(&once, true)).unwrap();
        assert_eq!(once, twice);
        for (a, b) in f.sdf.values().iter().zip(once.sdf.values()) {
            assert_eq!(*a as f32 as f64, *b);
        }
    }

    #[test]
    fn sdf_only_files_default_to_white() {
        let f = sample([3, 3, 3]);
        let back = decode_grid(&encode_grid(&f, false)).unwrap();
        assert!(back.color.values().iter().all(|c| *c == Rgb::repeat(1.0)));
    }

    #[test]
    fn malformed_inputs() {
        let good = encode_grid(&sample([3, 3, 3]), true);

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        let e = decode_grid(&bad_magic).unwrap_err();
        assert!(e.to_string().starts_with("malformed header"), "{e}");

        let truncated = &good[..good.len() - 5];
        let e = decode_grid(truncated).unwrap_err();
        assert!(e.to_string().starts_with("truncated payload"), "{e}");

        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode_grid(&long), Err(Error::PayloadMismatch(_))));

        assert!(matches!(decode_grid(&good[..10]), Err(Error::MalformedHeader(_))));

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(matches!(decode_grid(&bad_version), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.sdfg");
        let f = decode_grid(&encode_grid(&sample([4, 4, 4]), true)).unwrap();
        write_grid(&p, &f).unwrap();
        assert_eq!(read_grid(&p).unwrap(), f);
    }

    proptest! {
        #[test]
        fn random_f32_fields_round_trip_bit_exact(
            dims in prop::array::uniform3(2usize..6),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n: usize = dims.iter().product();
            let d = Aabb::new(
                Vec3::new(rng.random_range(-5.0..0.0), rng.random_range(-5.0..0.0), -1.0),
                Vec3::new(rng.random_range(0.1..5.0), 2.0, rng.random_range(0.1..5.0)),
            ).unwrap();
            let vals: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0f32..10.0) as f64).collect();
            let cols: Vec<Rgb> = (0..n)
                .map(|_| Rgb::new(rng.random::<f32>() as f64, rng.random::<f32>() as f64, rng.random::<f32>() as f64))
                .collect();
            let f = NodeField::new(
                SdfGrid::new(d, dims, vals).unwrap(),
                ColorGrid::new(d, dims, cols).unwrap(),
            ).unwrap();
            let bytes = encode_grid(&f, true);
            let back = decode_grid(&bytes).unwrap();
            prop_assert_eq!(&back, &f);
            prop_assert_eq!(encode_grid(&back, true), bytes);
        }
    }
}
