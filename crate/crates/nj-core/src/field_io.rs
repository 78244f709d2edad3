//! On-disk format for sector fields.
//!
//! One ASCII header line, `NJFIELD v1 m N h n_r n_theta R`, followed by the
//! node values as little-endian 64-bit floats, radius-major, `m` components
//! per node.  Scalar fields store one component and come back with the
//! second set to zero.  Round trips are byte exact: the radius is written
//! in shortest-round-trip decimal form.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::disk::{EquivariantField, PolarGrid};
use crate::error::{NjError, Result};
use crate::geometry::Vec2;

/// Longest header line the reader will accept.
const HEADER_CAP: usize = 200;

/// Identification a field cannot carry in its grid alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldMeta {
    /// Target components per node (1 or 2).
    pub m: usize,
    /// Symmetry order of the target rotation.
    pub n_sym: usize,
    /// Domain fold.
    pub h: usize,
}

pub fn write_field(
    w: &mut impl Write,
    field: &EquivariantField,
    meta: FieldMeta,
) -> Result<()> {
    if meta.m != 1 && meta.m != 2 {
        return Err(NjError::Parameter(format!(
            "fields carry 1 or 2 components, got {}",
            meta.m
        )));
    }
    if meta.h * meta.n_sym != field.grid.segments {
        return Err(NjError::Parameter(format!(
            "header symmetry {}x{} does not match the grid's {} sectors",
            meta.h, meta.n_sym, field.grid.segments
        )));
    }
    writeln!(
        w,
        "NJFIELD v1 {} {} {} {} {} {}",
        meta.m,
        meta.n_sym,
        meta.h,
        field.grid.n_r,
        field.grid.n_theta,
        field.grid.outer_radius
    )?;
    for v in &field.values {
        w.write_all(&v.x.to_le_bytes())?;
        if meta.m == 2 {
            w.write_all(&v.y.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_field(r: &mut impl Read) -> Result<(EquivariantField, FieldMeta)> {
    let mut header = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(NjError::Format(format!(
                "header ended at byte {} without a newline",
                header.len()
            )));
        }
        if byte[0] == b'\n' {
            break;
        }
        header.push(byte[0]);
        if header.len() > HEADER_CAP {
            return Err(NjError::Format(format!(
                "header exceeds {HEADER_CAP} bytes; not a field file"
            )));
        }
    }
    let header = String::from_utf8(header)
        .map_err(|e| NjError::Format(format!("header is not ASCII at byte {}", e.utf8_error().valid_up_to())))?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 8 {
        return Err(NjError::Format(format!(
            "header has {} fields, expected 8: {header:?}",
            tokens.len()
        )));
    }
    if tokens[0] != "NJFIELD" {
        return Err(NjError::Format(format!("bad magic {:?} at offset 0", tokens[0])));
    }
    if tokens[1] != "v1" {
        return Err(NjError::Format(format!("unsupported version {:?}", tokens[1])));
    }
    let int = |idx: usize, name: &str| -> Result<usize> {
        tokens[idx]
            .parse::<usize>()
            .map_err(|_| NjError::Format(format!("bad {name} field {:?}", tokens[idx])))
    };
    let m = int(2, "component count")?;
    let n_sym = int(3, "symmetry order")?;
    let h = int(4, "fold")?;
    let n_r = int(5, "radial cell")?;
    let n_theta = int(6, "angular cell")?;
    let outer_radius: f64 = tokens[7]
        .parse()
        .map_err(|_| NjError::Format(format!("bad radius field {:?}", tokens[7])))?;
    if m != 1 && m != 2 {
        return Err(NjError::Format(format!("component count {m} not supported")));
    }
    if n_sym < 2 || h == 0 {
        return Err(NjError::Format(format!(
            "symmetry {n_sym} with fold {h} is not a valid action"
        )));
    }
    let grid = PolarGrid::new(outer_radius, n_r, n_theta, h * n_sym)
        .map_err(|e| NjError::Format(format!("header describes an invalid grid: {e}")))?;

    let doubles = n_r * n_theta * m;
    let mut payload = vec![0u8; 8 * doubles];
    let mut filled = 0;
    while filled < payload.len() {
        let got = r.read(&mut payload[filled..])?;
        if got == 0 {
            return Err(NjError::Format(format!(
                "payload truncated at byte {}: expected {doubles} doubles for {n_r}x{n_theta} nodes",
                header.len() + 1 + filled
            )));
        }
        filled += got;
    }
    if r.read(&mut byte)? != 0 {
        return Err(NjError::Format(format!(
            "trailing data after byte {}",
            header.len() + 1 + payload.len()
        )));
    }

    let word = |k: usize| f64::from_le_bytes(payload[8 * k..8 * k + 8].try_into().unwrap());
    let values: Vec<Vec2> = (0..n_r * n_theta)
        .map(|k| {
            if m == 2 {
                Vec2::new(word(2 * k), word(2 * k + 1))
            } else {
                Vec2::new(word(k), 0.0)
            }
        })
        .collect();
    Ok((EquivariantField { grid, values }, FieldMeta { m, n_sym, h }))
}

pub fn save_field(path: &Path, field: &EquivariantField, meta: FieldMeta) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field(&mut w, field, meta)?;
    w.flush()?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<(EquivariantField, FieldMeta)> {
    read_field(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_field() -> EquivariantField {
        let grid = PolarGrid::new(7.5, 6, 9, 3).unwrap();
        let mut field = EquivariantField::zero(grid);
        for i in 0..grid.n_r {
            for j in 0..grid.n_theta {
                let s = (1.0 + i as f64) * (2.0 + j as f64);
                field.set(i, j, Vec2::new(s.sin(), (0.37 * s).cos()));
            }
        }
        field
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let field = sample_field();
        let meta = FieldMeta { m: 2, n_sym: 3, h: 1 };
        let mut bytes = Vec::new();
        write_field(&mut bytes, &field, meta).unwrap();

        let (back, got_meta) = read_field(&mut bytes.as_slice()).unwrap();
        assert_eq!(got_meta, meta);
        assert_eq!(back.grid, field.grid);
        for (a, b) in back.values.iter().zip(&field.values) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
        }

        let mut again = Vec::new();
        write_field(&mut again, &back, got_meta).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn scalar_fields_store_one_component() {
        let grid = PolarGrid::new(3.0, 4, 5, 4).unwrap();
        let mut field = EquivariantField::zero(grid);
        for (k, v) in field.values.iter_mut().enumerate() {
            *v = Vec2::new(k as f64 * 0.1 - 1.0, 0.0);
        }
        let meta = FieldMeta { m: 1, n_sym: 2, h: 2 };
        let mut bytes = Vec::new();
        write_field(&mut bytes, &field, meta).unwrap();
        assert_eq!(bytes.len() - bytes.iter().position(|&b| b == b'\n').unwrap() - 1, 8 * 20);
        let (back, _) = read_field(&mut bytes.as_slice()).unwrap();
        for (a, b) in back.values.iter().zip(&field.values) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y, 0.0);
        }
    }

    #[test]
    fn reader_rejects_malformed_input() {
        let field = sample_field();
        let meta = FieldMeta { m: 2, n_sym: 3, h: 1 };
        let mut bytes = Vec::new();
        write_field(&mut bytes, &field, meta).unwrap();

        let truncated = &bytes[..bytes.len() - 5];
        match read_field(&mut &truncated[..]) {
            Err(NjError::Format(msg)) => assert!(msg.contains("truncated")),
            other => panic!("expected format error, got {other:?}"),
        }

        let mut padded = bytes.clone();
        padded.push(0);
        match read_field(&mut padded.as_slice()) {
            Err(NjError::Format(msg)) => assert!(msg.contains("trailing")),
            other => panic!("expected format error, got {other:?}"),
        }

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(read_field(&mut magic.as_slice()), Err(NjError::Format(_))));

        let noise = b"NJFIELD v2 2 3 1 6 9 7.5\n";
        match read_field(&mut &noise[..]) {
            Err(NjError::Format(msg)) => assert!(msg.contains("version")),
            other => panic!("expected format error, got {other:?}"),
        }

        // mismatched symmetry metadata is refused on write
        assert!(matches!(
            write_field(&mut Vec::new(), &field, FieldMeta { m: 2, n_sym: 3, h: 2 }),
            Err(NjError::Parameter(_))
        ));
    }
}
