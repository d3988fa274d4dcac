//! CSV datasets: header `x_1..x_d, omega_1..omega_d, y`, missing entries as
//! empty fields.

use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::{Array1, Array2};
use penn::datagen::SimData;

pub fn write<W: Write>(data: &SimData, out: W) -> Result<()> {
    let d = data.x.ncols();
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = (1..=d)
        .map(|j| format!("x_{j}"))
        .chain((1..=d).map(|j| format!("omega_{j}")))
        .chain(std::iter::once("y".to_string()))
        .collect();
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut record: Vec<String> = Vec::with_capacity(2 * d + 1);
        for j in 0..d {
            record.push(if data.omega[[i, j]] == 1 { data.x[[i, j]].to_string() } else { String::new() });
        }
        record.extend((0..d).map(|j| data.omega[[i, j]].to_string()));
        record.push(data.y[i].to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save(data: &SimData, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write(data, std::io::BufWriter::new(file))
}

fn parse_value(field: &str) -> Result<Option<f64>> {
    let t = field.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    let v: f64 = t.parse().with_context(|| format!("`{t}` is not a number"))?;
    if !v.is_finite() {
        bail!("`{t}` is not finite");
    }
    Ok(Some(v))
}

/// Reads a dataset. `omega_j` columns are optional; when absent they are
/// derived from which `x_j` are missing. Missing entries come back as `NaN`.
pub fn read<R: Read>(input: R) -> Result<SimData> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let find = |name: &str| header.iter().position(|h| h.trim() == name);
    let mut x_cols = Vec::new();
    while let Some(c) = find(&format!("x_{}", x_cols.len() + 1)) {
        x_cols.push(c);
    }
    let d = x_cols.len();
    if d == 0 {
        bail!("header has no `x_1` column");
    }
    let omega_cols: Vec<Option<usize>> = (1..=d).map(|j| find(&format!("omega_{j}"))).collect();
    if omega_cols.iter().any(Option::is_some) && omega_cols.iter().any(Option::is_none) {
        bail!("header lists some but not all omega columns");
    }
    let y_col = find("y").context("header has no `y` column")?;

    let (mut xs, mut omegas, mut ys) = (Vec::new(), Vec::new(), Vec::new());
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let line = i + 2;
        for (j, (&xc, oc)) in x_cols.iter().zip(&omega_cols).enumerate() {
            let x = parse_value(&record[xc]).with_context(|| format!("line {line}, x_{}", j + 1))?;
            let omega = match oc {
                Some(c) => match record[*c].trim() {
                    "0" => 0u8,
                    "1" => 1,
                    other => bail!("line {line}, omega_{}: expected 0 or 1, found `{other}`", j + 1),
                },
                None => u8::from(x.is_some()),
            };
            if (omega == 1) != x.is_some() {
                bail!("line {line}: x_{} presence disagrees with omega_{} = {omega}", j + 1, j + 1);
            }
            xs.push(x.unwrap_or(f64::NAN));
            omegas.push(omega);
        }
        let y = parse_value(&record[y_col])
            .with_context(|| format!("line {line}, y"))?
            .with_context(|| format!("line {line}: y is missing"))?;
        ys.push(y);
    }
    let n = ys.len();
    if n == 0 {
        bail!("dataset has no rows");
    }
    Ok(SimData {
        x: Array2::from_shape_vec((n, d), xs)?,
        omega: Array2::from_shape_vec((n, d), omegas)?,
        y: Array1::from(ys),
    })
}

pub fn load(path: &Path) -> Result<SimData> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read(std::io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}
