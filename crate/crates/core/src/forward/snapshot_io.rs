//! Snapshot export/import: flat binary (`nx`, `ny`, row-major `f64`) and
//! CSV grids with one row of cells per line, `y` increasing downward.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DVector;

use super::{GridSpec, Snapshot};
use crate::artifact::{self, SNAPSHOT_TAG};
use crate::error::{Error, Result};

fn grid_of(s: &Snapshot) -> Result<GridSpec> {
    s.grid
        .ok_or_else(|| Error::invalid("snapshot export requires a grid"))
}

pub fn write_binary(w: &mut impl Write, s: &Snapshot) -> Result<()> {
    let g = grid_of(s)?;
    artifact::write_header(w, SNAPSHOT_TAG)?;
    artifact::write_u64(w, g.nx() as u64)?;
    artifact::write_u64(w, g.ny() as u64)?;
    artifact::write_f64s(w, s.values.iter())
}

pub fn read_binary(r: &mut impl Read) -> Result<Snapshot> {
    artifact::read_header(r, SNAPSHOT_TAG)?;
    let nx = artifact::read_u64(r)? as usize;
    let ny = artifact::read_u64(r)? as usize;
    let grid = GridSpec::new(nx, ny)?;
    let vals = artifact::read_f64s(r, grid.cells())?;
    Snapshot::on_grid(grid, DVector::from_vec(vals))
}

pub fn write_csv(w: impl Write, s: &Snapshot) -> Result<()> {
    let g = grid_of(s)?;
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for j in 0..g.ny() {
        let row: Vec<String> = (0..g.nx())
            .map(|i| format!("{:e}", s.values[g.index(i, j)]))
            .collect();
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_csv(r: impl Read) -> Result<Snapshot> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut vals = Vec::new();
    let mut nx = None;
    let mut ny = 0;
    for rec in rdr.records() {
        let rec = rec?;
        match nx {
            None => nx = Some(rec.len()),
            Some(n) if n != rec.len() => {
                return Err(Error::invalid("ragged CSV grid"));
            }
            _ => {}
        }
        for field in rec.iter() {
            vals.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("bad CSV value `{field}`: {e}")))?,
            );
        }
        ny += 1;
    }
    let grid = GridSpec::new(nx.unwrap_or(0), ny)?;
    Snapshot::on_grid(grid, DVector::from_vec(vals))
}

pub fn save_binary(path: &Path, s: &Snapshot) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_binary(&mut w, s)?;
    w.flush()?;
    Ok(())
}

pub fn load_binary(path: &Path) -> Result<Snapshot> {
    read_binary(&mut BufReader::new(File::open(path)?))
}

pub fn save_csv(path: &Path, s: &Snapshot) -> Result<()> {
    write_csv(BufWriter::new(File::create(path)?), s)
}

pub fn load_csv(path: &Path) -> Result<Snapshot> {
    read_csv(BufReader::new(File::open(path)?))
}
