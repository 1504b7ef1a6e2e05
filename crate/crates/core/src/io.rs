//! CSV serialization of fields and boundary data.
//!
//! Field files have one row per node, in node order:
//! `r,p,x1,x2,c0,...,cm` where `r` and `p` are the 1-based ring and angle
//! indices, `(x1, x2)` the node position and `ck` the tensor components in
//! the order of [`crate::tensor`].
//!
//! Boundary files have one row per `(p, q)` pair, in data order:
//! `p,q,mu,phi,value`.
//!
//! Numbers are written in the shortest form that parses back to the same
//! `f64`, so writing and reading is lossless.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grid::{BoundaryData, PolarGrid, TensorField};

pub fn write_field_csv<W: Write>(out: W, field: &TensorField, grid: &PolarGrid) -> Result<()> {
    field.check(grid)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["r".to_string(), "p".into(), "x1".into(), "x2".into()];
    header.extend((0..field.components()).map(|k| format!("c{k}")));
    w.write_record(&header)?;
    for i in 0..grid.node_count() {
        let (r, p) = grid.node_rp(i);
        let x = grid.node_position(i);
        let mut row = vec![r.to_string(), p.to_string(), x[0].to_string(), x[1].to_string()];
        row.extend(field.node(i).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field_csv<R: Read>(input: R, grid: &PolarGrid) -> Result<TensorField> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.len() < 5 || &header[0] != "r" || &header[1] != "p" {
        return Err(Error::ShapeMismatch("field csv must start with r,p,x1,x2 and have components".into()));
    }
    let components = header.len() - 4;
    let mut values = Vec::with_capacity(grid.node_count() * components);
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let r: usize = parse(&rec[0])?;
        let p: usize = parse(&rec[1])?;
        if i >= grid.node_count() || grid.node_rp(i) != (r, p) {
            return Err(Error::ShapeMismatch(format!("row {i} holds node ({r}, {p}) out of order")));
        }
        for k in 0..components {
            values.push(parse(&rec[4 + k])?);
        }
    }
    TensorField::from_values(grid, components - 1, values)
}

pub fn write_boundary_csv<W: Write>(out: W, data: &BoundaryData, grid: &PolarGrid) -> Result<()> {
    data.check(grid)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p", "q", "mu", "phi", "value"])?;
    for (i, v) in data.values().iter().enumerate() {
        let (p, q) = grid.data_pq(i);
        w.write_record([p.to_string(), q.to_string(), grid.mu(p).to_string(), grid.phi(q).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_boundary_csv<R: Read>(input: R, grid: &PolarGrid) -> Result<BoundaryData> {
    let mut rd = csv::Reader::from_reader(input);
    let mut values = Vec::with_capacity(grid.data_len());
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(Error::ShapeMismatch(format!("boundary row {i} has {} columns, expected 5", rec.len())));
        }
        let p: usize = parse(&rec[0])?;
        let q: usize = parse(&rec[1])?;
        if i >= grid.data_len() || grid.data_pq(i) != (p, q) {
            return Err(Error::ShapeMismatch(format!("row {i} holds pair ({p}, {q}) out of order")));
        }
        values.push(parse(&rec[4])?);
    }
    BoundaryData::from_values(grid, values)
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::ShapeMismatch(format!("cannot parse `{s}`")))
}
