//! Field files (JSON header plus a little-endian `f64` sibling) and plot data.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::field::Field;
use crate::grid::{GridDescriptor, SpaceTimeGrid};

pub const FIELD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub schema_version: u32,
    pub name: String,
    pub grid: GridDescriptor,
    pub dims: Vec<usize>,
    /// Number of stored time slabs (1 for static fields).
    pub slabs: usize,
    pub grid_hash: String,
    pub content_hash: String,
    /// Binary file name relative to the header.
    pub data_file: String,
}

/// Writes `<dir>/<name>.json` and `<dir>/<name>.bin`; returns the header path.
pub fn write_field(dir: &Path, name: &str, field: &Field) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let grid = field.grid();
    let data_file = format!("{name}.bin");
    let mut bytes = Vec::with_capacity(field.values().len() * 8);
    for v in field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join(&data_file), bytes)?;
    let header = FieldHeader {
        schema_version: FIELD_SCHEMA_VERSION,
        name: name.into(),
        grid: grid.descriptor(),
        dims: grid.dims().to_vec(),
        slabs: field.slabs(),
        grid_hash: grid.hash(),
        content_hash: field.content_hash(),
        data_file,
    };
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, serde_json::to_string_pretty(&header)?)?;
    Ok(path)
}

pub fn read_field(header_path: &Path) -> Result<Field> {
    let header: FieldHeader = serde_json::from_str(&fs::read_to_string(header_path)?)
        .map_err(|e| LabError::Schema(format!("{}: {e}", header_path.display())))?;
    if header.schema_version != FIELD_SCHEMA_VERSION {
        return Err(LabError::Schema(format!(
            "field schema version {} is not supported (expected {FIELD_SCHEMA_VERSION})",
            header.schema_version
        )));
    }
    let grid = SpaceTimeGrid::from_descriptor(&header.grid)?;
    if grid.hash() != header.grid_hash {
        return Err(LabError::Schema("grid hash does not match the grid descriptor".into()));
    }
    let dir = header_path.parent().unwrap_or_else(|| Path::new("."));
    let bytes = fs::read(dir.join(&header.data_file))?;
    let expected = header.slabs * grid.cell_count() * 8;
    if bytes.len() != expected {
        return Err(LabError::Schema(format!(
            "data file has {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let field = Field::from_values(&grid, header.slabs, values)?;
    if field.content_hash() != header.content_hash {
        return Err(LabError::Schema("field content hash mismatch".into()));
    }
    Ok(field)
}

/// Plain whitespace-separated columns, one row per line.
pub fn write_columns(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = Vec::new();
    writeln!(out, "# {}", header.join(" "))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Profile of one slab: coordinates followed by the value.
pub fn slab_rows(field: &Field, step: usize) -> Vec<Vec<f64>> {
    let grid = field.grid();
    (0..grid.cell_count())
        .map(|c| {
            let mut row = grid.center(c)[..grid.n()].to_vec();
            row.push(field.at(c, step));
            row
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_roundtrip_is_bit_exact() {
        let g = SpaceTimeGrid::new(2, &[(0.0, 1.0), (0.0, 0.5)], 0.125, 0.25, 0.125).unwrap();
        let f = Field::from_fn(&g, |x, t| (x[0] * 3.1).sin() + x[1] * t + 1e-300);
        let dir = tempfile::tempdir().unwrap();
        let path = write_field(dir.path(), "u", &f).unwrap();
        let back = read_field(&path).unwrap();
        assert_eq!(back.values().len(), f.values().len());
        for (a, b) in back.values().iter().zip(f.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_data_is_a_schema_error() {
        let g = SpaceTimeGrid::new(1, &[(0.0, 1.0)], 0.125, 0.5, 0.25).unwrap();
        let f = Field::constant(&g, 2.0);
        let dir = tempfile::tempdir().unwrap();
        let path = write_field(dir.path(), "c", &f).unwrap();
        fs::write(dir.path().join("c.bin"), [0u8; 5]).unwrap();
        assert!(matches!(read_field(&path), Err(LabError::Schema(_))));
    }
}
