//! Field, contour and sweep serialization.
//!
//! Field CSV has the header `x,y,u` and one row per node, `y` outer and `x` inner.
//! The binary layout `OFGD` is little-endian:
//!
//! ```text
//! "OFGD" | u32 nx | u32 ny | f64 h | f64 origin_x | f64 origin_y | nx*ny f64 values
//! ```

use std::io::{Read, Write};

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::freeboundary::Chain;
use crate::grid::{Grid, ScalarField};
use crate::verify::SweepRow;

pub const FIELD_MAGIC: &[u8; 4] = b"OFGD";
const HEADER_LEN: usize = 4 + 4 + 4 + 8 * 3;

fn format_err(m: impl Into<String>) -> Error {
    Error::Format(m.into())
}

pub fn write_field_csv<W: Write>(w: W, u: &ScalarField) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "y", "u"])?;
    let g = u.grid();
    for (k, v) in u.values().iter().enumerate() {
        let [x, y] = g.point(k);
        out.write_record([x.to_string(), y.to_string(), v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a field written by [`write_field_csv`], recovering the lattice from the
/// coordinates. Rows must be in lattice order with uniform spacing.
pub fn read_field_csv<R: Read>(r: R) -> Result<ScalarField> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = rd.headers()?.clone();
    if headers.iter().map(str::trim).ne(["x", "y", "u"]) {
        return Err(format_err(format!("expected header x,y,u, got {:?}", headers.iter().collect::<Vec<_>>())));
    }
    let mut rows: Vec<[f64; 3]> = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(format_err(format!("row {}: expected 3 columns, got {}", line + 1, rec.len())));
        }
        let mut row = [0.0; 3];
        for (c, cell) in rec.iter().enumerate() {
            row[c] = cell
                .trim()
                .parse::<f64>()
                .map_err(|e| format_err(format!("row {}, column {}: {e}", line + 1, c + 1)))?;
            if !row[c].is_finite() {
                return Err(format_err(format!("row {}, column {}: non-finite value", line + 1, c + 1)));
            }
        }
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(format_err("need at least two rows"));
    }
    let nx = rows.iter().take_while(|r| r[1] == rows[0][1]).count();
    if nx < 2 || rows.len() % nx != 0 {
        return Err(format_err(format!("cannot infer a lattice: first row run has {nx} nodes of {}", rows.len())));
    }
    let ny = rows.len() / nx;
    let origin = [rows[0][0], rows[0][1]];
    let h = rows[1][0] - origin[0];
    let grid = Grid::new(nx, ny, h, origin)?;
    let tol = 1e-9 * (h + origin[0].abs().max(origin[1].abs()));
    for (k, r) in rows.iter().enumerate() {
        let [x, y] = grid.point(k);
        if (r[0] - x).abs() > tol || (r[1] - y).abs() > tol {
            return Err(format_err(format!("row {}: ({}, {}) is off the lattice, expected ({x}, {y})", k + 1, r[0], r[1])));
        }
    }
    ScalarField::from_values(grid, rows.into_iter().map(|r| r[2]).collect())
}

pub fn encode_field_bin(u: &ScalarField) -> Result<Vec<u8>> {
    let g = u.grid();
    let nx = u32::try_from(g.nx).map_err(|_| format_err("nx does not fit in u32"))?;
    let ny = u32::try_from(g.ny).map_err(|_| format_err("ny does not fit in u32"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * g.len());
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&nx.to_le_bytes());
    out.extend_from_slice(&ny.to_le_bytes());
    for v in [g.h, g.origin[0], g.origin[1]] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in u.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write_field_bin<W: Write>(mut w: W, u: &ScalarField) -> Result<()> {
    w.write_all(&encode_field_bin(u)?)?;
    Ok(())
}

pub fn read_field_bin(data: &[u8]) -> Result<ScalarField> {
    if data.len() < HEADER_LEN {
        return Err(format_err(format!("truncated header: {} bytes", data.len())));
    }
    if &data[..4] != FIELD_MAGIC {
        return Err(format_err("bad magic, expected OFGD"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(data[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(data[o..o + 8].try_into().unwrap());
    let (nx, ny) = (u32_at(4), u32_at(8));
    let (h, ox, oy) = (f64_at(12), f64_at(20), f64_at(28));
    let payload = nx
        .checked_mul(ny)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| format_err(format!("{nx} x {ny} grid overflows")))?;
    if data.len() - HEADER_LEN != payload {
        return Err(format_err(format!(
            "{nx} x {ny} grid needs {payload} payload bytes, found {}",
            data.len() - HEADER_LEN
        )));
    }
    let grid = Grid::new(nx, ny, h, [ox, oy])?;
    let values = data[HEADER_LEN..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    ScalarField::from_values(grid, values)
}

pub fn write_contours_csv<W: Write>(w: W, chains: &[Chain]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["chain_id", "x", "y"])?;
    for (id, c) in chains.iter().enumerate() {
        for p in &c.points {
            out.write_record([id.to_string(), p[0].to_string(), p[1].to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// GeoJSON `FeatureCollection`, one `LineString` per chain. Closed chains repeat
/// their first point at the end.
pub fn contours_geojson(chains: &[Chain]) -> Value {
    let features: Vec<Value> = chains
        .iter()
        .enumerate()
        .map(|(id, c)| {
            let mut coords: Vec<[f64; 2]> = c.points.clone();
            if c.closed && c.points.len() > 1 {
                coords.push(c.points[0]);
            }
            json!({
                "type": "Feature",
                "properties": { "chain_id": id, "closed": c.closed, "length": c.length() },
                "geometry": { "type": "LineString", "coordinates": coords },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
