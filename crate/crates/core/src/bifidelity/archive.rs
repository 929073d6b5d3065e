//! Single-file model archive. After the 16-byte header comes a `u64` entry
//! count and, per entry, a length-prefixed UTF-8 name and a length-prefixed
//! payload. Entries: `meta.csv`, `selected_params.csv`, `lf_basis.bin`,
//! `hf_basis.bin`, `training_report.csv`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::model::{BfModel, StopReason, TrainingStep};
use super::SnapshotMatrix;
use crate::artifact::{self, MATRIX_TAG};
use crate::error::{Error, Result};
use crate::forward::GridSpec;

pub const ARCHIVE_TAG: [u8; 12] = *b"BFENKF-ARCH\0";

const REPORT_HEADER: [&str; 8] = [
    "k",
    "validation_index",
    "max_lf_rel_dist",
    "lf_rel_dist",
    "hf_rel_dist",
    "r_s",
    "r_e",
    "error_bound",
];

pub fn write_report_csv(w: impl Write, report: &[TrainingStep]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(REPORT_HEADER)?;
    for s in report {
        wtr.write_record([
            s.k.to_string(),
            s.validation_index.to_string(),
            format!("{:e}", s.max_lf_rel_dist),
            format!("{:e}", s.lf_rel_dist),
            format!("{:e}", s.hf_rel_dist),
            format!("{:e}", s.rs),
            format!("{:e}", s.re),
            format!("{:e}", s.error_bound),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::invalid(format!("bad {what} `{s}` in archive")))
}

fn read_report_csv(r: impl Read) -> Result<Vec<TrainingStep>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        out.push(TrainingStep {
            k: parse(f(0), "k")?,
            validation_index: parse(f(1), "validation_index")?,
            max_lf_rel_dist: parse(f(2), "max_lf_rel_dist")?,
            lf_rel_dist: parse(f(3), "lf_rel_dist")?,
            hf_rel_dist: parse(f(4), "hf_rel_dist")?,
            rs: parse(f(5), "r_s")?,
            re: parse(f(6), "r_e")?,
            error_bound: parse(f(7), "error_bound")?,
        });
    }
    Ok(out)
}

fn basis_matrix(b: &SnapshotMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(b.n_rows(), b.state_dim(), |i, j| b.row(i)[j])
}

fn grid_fields(g: Option<GridSpec>) -> (usize, usize) {
    g.map(|g| (g.nx(), g.ny())).unwrap_or((0, 0))
}

fn grid_from(nx: usize, ny: usize) -> Result<Option<GridSpec>> {
    if nx == 0 && ny == 0 {
        Ok(None)
    } else {
        GridSpec::new(nx, ny).map(Some)
    }
}

/// Selection order, candidate index and parameters of each basis member.
pub fn write_selected_csv(w: impl Write, model: &BfModel) -> Result<()> {
    let params = model.selected_params();
    let d = params.first().map_or(0, |p| p.len());
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["rank".to_string(), "candidate_index".to_string()];
    header.extend((1..=d).map(|i| format!("z_{i}")));
    wtr.write_record(&header)?;
    for (rank, (idx, z)) in model.selected_indices.iter().zip(params).enumerate() {
        let mut row = vec![rank.to_string(), idx.to_string()];
        row.extend(z.iter().map(|v| format!("{v:e}")));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

fn encode(model: &BfModel) -> Result<Vec<(String, Vec<u8>)>> {
    let mut entries = Vec::new();

    let (lnx, lny) = grid_fields(model.lf_grid);
    let (hnx, hny) = grid_fields(model.hf_grid);
    let mut meta = csv::Writer::from_writer(Vec::new());
    meta.write_record(["key", "value"])?;
    for (k, v) in [
        ("basis_size", model.basis_size().to_string()),
        ("n_candidates", model.n_candidates.to_string()),
        ("stop_reason", model.stop_reason.as_str().to_string()),
        ("lf_nx", lnx.to_string()),
        ("lf_ny", lny.to_string()),
        ("hf_nx", hnx.to_string()),
        ("hf_ny", hny.to_string()),
        (
            "final_error_bound",
            model.final_bound.map(|b| format!("{b:e}")).unwrap_or_default(),
        ),
    ] {
        meta.write_record([k, v.as_str()])?;
    }
    entries.push(("meta.csv".to_string(), meta.into_inner().map_err(|e| e.into_error())?));

    let mut sp = Vec::new();
    write_selected_csv(&mut sp, model)?;
    entries.push(("selected_params.csv".to_string(), sp));

    for (name, basis) in [("lf_basis.bin", &model.lf_basis), ("hf_basis.bin", &model.hf_basis)] {
        let mut buf = Vec::new();
        artifact::write_matrix(&mut buf, &basis_matrix(basis))?;
        entries.push((name.to_string(), buf));
    }

    let mut report = Vec::new();
    write_report_csv(&mut report, &model.report)?;
    entries.push(("training_report.csv".to_string(), report));
    Ok(entries)
}

pub fn write_model(w: &mut impl Write, model: &BfModel) -> Result<()> {
    let entries = encode(model)?;
    artifact::write_header(w, ARCHIVE_TAG)?;
    artifact::write_u64(w, entries.len() as u64)?;
    for (name, data) in entries {
        artifact::write_u64(w, name.len() as u64)?;
        w.write_all(name.as_bytes())?;
        artifact::write_u64(w, data.len() as u64)?;
        w.write_all(&data)?;
    }
    Ok(())
}

pub fn read_model(r: &mut impl Read) -> Result<BfModel> {
    artifact::read_header(r, ARCHIVE_TAG)?;
    let n = artifact::read_u64(r)? as usize;
    let mut entries = std::collections::BTreeMap::new();
    for _ in 0..n {
        let len = artifact::read_u64(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let len = artifact::read_u64(r)? as usize;
        let mut data = vec![0u8; len];
        r.read_exact(&mut data)?;
        let name = String::from_utf8(name).map_err(|_| Error::invalid("non-UTF-8 entry name"))?;
        entries.insert(name, data);
    }
    let get = |name: &str| {
        entries
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("archive missing `{name}`")))
    };

    let mut meta = std::collections::HashMap::new();
    for rec in csv::Reader::from_reader(get("meta.csv")?).records() {
        let rec = rec?;
        meta.insert(rec[0].to_string(), rec[1].to_string());
    }
    let meta_usize = |k: &str| -> Result<usize> {
        parse(meta.get(k).map(String::as_str).unwrap_or(""), k)
    };

    let mut indices = Vec::new();
    let mut params = Vec::new();
    for rec in csv::Reader::from_reader(get("selected_params.csv")?).records() {
        let rec = rec?;
        indices.push(parse::<usize>(&rec[1], "candidate_index")?);
        let z = rec
            .iter()
            .skip(2)
            .map(|s| parse::<f64>(s, "parameter"))
            .collect::<Result<Vec<_>>>()?;
        params.push(DVector::from_vec(z));
    }

    let rows_of = |name: &str| -> Result<Vec<DVector<f64>>> {
        let mut slice = get(name)?;
        if slice.len() < 12 || slice[..12] != MATRIX_TAG {
            return Err(Error::invalid(format!("`{name}` is not a matrix artifact")));
        }
        let m = artifact::read_matrix(&mut slice)?;
        Ok(m.row_iter().map(|r| r.transpose()).collect())
    };
    let lf_basis = SnapshotMatrix::new(rows_of("lf_basis.bin")?, params.clone())?;
    let hf_basis = SnapshotMatrix::new(rows_of("hf_basis.bin")?, params)?;

    let lf_grid = grid_from(meta_usize("lf_nx")?, meta_usize("lf_ny")?)?;
    let hf_grid = grid_from(meta_usize("hf_nx")?, meta_usize("hf_ny")?)?;
    let mut model = BfModel::from_bases(lf_basis, hf_basis, lf_grid, hf_grid)?;
    if meta_usize("basis_size")? != model.basis_size() {
        return Err(Error::invalid("archive basis size disagrees with matrices"));
    }
    model.selected_indices = indices;
    model.n_candidates = meta_usize("n_candidates")?;
    model.stop_reason = meta
        .get("stop_reason")
        .and_then(|s| StopReason::parse(s))
        .ok_or_else(|| Error::invalid("bad stop_reason in archive"))?;
    model.report = read_report_csv(get("training_report.csv")?)?;
    model.final_bound = match meta.get("final_error_bound").map(|s| s.trim()) {
        None | Some("") => None,
        Some(s) => Some(parse(s, "final_error_bound")?),
    };
    Ok(model)
}

pub fn save_model(path: &Path, model: &BfModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<BfModel> {
    let file = File::open(path).map_err(|e| Error::artifact(path, e.to_string()))?;
    read_model(&mut BufReader::new(file)).map_err(|e| match e {
        Error::Io(io) => Error::artifact(path, io.to_string()),
        other => other,
    })
}
