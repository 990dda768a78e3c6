//! Binary field snapshots.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! bytes 0..4   magic "SWFL"
//! bytes 4..8   format version (u32, currently 1)
//! bytes 8..12  dimension N (u32)
//! bytes 12..16 cells per axis n_g (u32)
//! bytes 16..20 tensor rank (u32): 0 scalar, 1 vector, 2 symmetric rank-2
//! bytes 20..   payload: component planes in order, each plane row-major f64
//! ```
//!
//! Plane counts per rank: 1, N, and N(N+1)/2 (upper-triangle order). Readers
//! validate magic, version, grid parameters and payload length.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{sym_component_count, ScalarField, SymTensorField, TorusGrid, VectorField};
use crate::error::{Error, Result};

/// File magic.
pub const MAGIC: [u8; 4] = *b"SWFL";
/// Current format version.
pub const VERSION: u32 = 1;

/// A field of any supported rank, as stored in a snapshot.
#[derive(Clone, Debug)]
pub enum FieldData {
    Scalar(ScalarField),
    Vector(VectorField),
    SymTensor(SymTensorField),
}

impl FieldData {
    fn rank(&self) -> u32 {
        match self {
            FieldData::Scalar(_) => 0,
            FieldData::Vector(_) => 1,
            FieldData::SymTensor(_) => 2,
        }
    }

    fn grid(&self) -> TorusGrid {
        match self {
            FieldData::Scalar(f) => f.grid(),
            FieldData::Vector(f) => f.grid(),
            FieldData::SymTensor(f) => f.grid(),
        }
    }
}

fn write_plane(w: &mut impl Write, plane: &[f64]) -> Result<()> {
    for v in plane {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Writes a snapshot to `path`, overwriting any existing file.
pub fn write_snapshot(path: &Path, field: &FieldData) -> Result<()> {
    let grid = field.grid();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(grid.dim() as u32).to_le_bytes())?;
    w.write_all(&(grid.cells_per_axis() as u32).to_le_bytes())?;
    w.write_all(&field.rank().to_le_bytes())?;
    match field {
        FieldData::Scalar(f) => write_plane(&mut w, f.values())?,
        FieldData::Vector(f) => {
            for axis in 0..grid.dim() {
                write_plane(&mut w, f.component(axis))?;
            }
        }
        FieldData::SymTensor(f) => {
            for plane in f.planes() {
                write_plane(&mut w, plane)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_plane(r: &mut impl Read, cells: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; cells * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Reads a snapshot, validating header and payload consistency.
pub fn read_snapshot(path: &Path) -> Result<FieldData> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::MalformedSnapshot(format!(
            "bad magic {magic:?} in {}",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::MalformedSnapshot(format!(
            "unsupported version {version} in {}",
            path.display()
        )));
    }
    let dim = read_u32(&mut r)? as usize;
    let n = read_u32(&mut r)? as usize;
    let rank = read_u32(&mut r)?;
    let grid = TorusGrid::new(dim, n).map_err(|e| {
        Error::MalformedSnapshot(format!("invalid grid in {}: {e}", path.display()))
    })?;
    let cells = grid.cell_count();
    let planes = match rank {
        0 => 1,
        1 => dim,
        2 => sym_component_count(dim),
        _ => {
            return Err(Error::MalformedSnapshot(format!(
                "unknown rank {rank} in {}",
                path.display()
            )))
        }
    };
    let mut data = Vec::with_capacity(planes);
    for _ in 0..planes {
        data.push(read_plane(&mut r, cells)?);
    }
    // Reject trailing garbage.
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::MalformedSnapshot(format!(
            "trailing bytes after payload in {}",
            path.display()
        )));
    }
    let field = match rank {
        0 => FieldData::Scalar(ScalarField::from_values(grid, data.pop().expect("one plane"))?),
        1 => {
            let comps = data
                .into_iter()
                .map(|p| ScalarField::from_values(grid, p))
                .collect::<Result<Vec<_>>>()?;
            FieldData::Vector(VectorField::from_components(comps)?)
        }
        _ => FieldData::SymTensor(SymTensorField::from_planes(grid, data)?),
    };
    Ok(field)
}

/// Convenience: read a snapshot and require it to be a scalar field.
pub fn read_scalar(path: &Path) -> Result<ScalarField> {
    match read_snapshot(path)? {
        FieldData::Scalar(f) => Ok(f),
        other => Err(Error::MalformedSnapshot(format!(
            "expected scalar field in {}, found rank {}",
            path.display(),
            other.rank()
        ))),
    }
}

/// Convenience: read a snapshot and require it to be a vector field.
pub fn read_vector(path: &Path) -> Result<VectorField> {
    match read_snapshot(path)? {
        FieldData::Vector(f) => Ok(f),
        other => Err(Error::MalformedSnapshot(format!(
            "expected vector field in {}, found rank {}",
            path.display(),
            other.rank()
        ))),
    }
}

/// Convenience: read a snapshot and require it to be a symmetric tensor field.
pub fn read_sym_tensor(path: &Path) -> Result<SymTensorField> {
    match read_snapshot(path)? {
        FieldData::SymTensor(f) => Ok(f),
        other => Err(Error::MalformedSnapshot(format!(
            "expected symmetric tensor field in {}, found rank {}",
            path.display(),
            other.rank()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn scalar_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rho.fld");
        let grid = TorusGrid::new(2, 8).unwrap();
        let f =
            ScalarField::from_fn(grid, |x| 1.0 + 0.3 * (PI * x[0]).cos() * (PI * x[1]).sin())
                .unwrap();
        write_snapshot(&path, &FieldData::Scalar(f.clone())).unwrap();
        let g = read_scalar(&path).unwrap();
        assert_eq!(f.values(), g.values());
        assert_eq!(f.grid(), g.grid());
    }

    #[test]
    fn vector_and_tensor_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = TorusGrid::new(3, 4).unwrap();
        let v = VectorField::from_fn(grid, |x| [x[0], x[1] * 2.0, (PI * x[2]).sin()]).unwrap();
        let path_v = dir.path().join("v.fld");
        write_snapshot(&path_v, &FieldData::Vector(v.clone())).unwrap();
        let v2 = read_vector(&path_v).unwrap();
        for axis in 0..3 {
            assert_eq!(v.component(axis), v2.component(axis));
        }

        let t = SymTensorField::from_fn(grid, |x| {
            [x[0], x[1], x[2], -x[0], 0.5 * x[1], -x[2]]
        })
        .unwrap();
        let path_t = dir.path().join("t.fld");
        write_snapshot(&path_t, &FieldData::SymTensor(t.clone())).unwrap();
        let t2 = read_sym_tensor(&path_t).unwrap();
        assert_eq!(t.planes(), t2.planes());
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fld");

        // Wrong magic.
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(
            read_snapshot(&path),
            Err(Error::MalformedSnapshot(_))
        ));

        // Truncated payload.
        let grid = TorusGrid::new(1, 8).unwrap();
        let f = ScalarField::constant(grid, 1.0).unwrap();
        write_snapshot(&path, &FieldData::Scalar(f)).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 8]).unwrap();
        assert!(read_snapshot(&path).is_err());

        // Trailing bytes.
        let mut padded = full.clone();
        padded.push(0);
        std::fs::write(&path, &padded).unwrap();
        assert!(matches!(
            read_snapshot(&path),
            Err(Error::MalformedSnapshot(_))
        ));

        // Wrong-rank convenience accessor.
        std::fs::write(&path, &full).unwrap();
        assert!(read_vector(&path).is_err());
    }
}
