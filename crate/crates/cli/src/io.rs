//! Delimited-text input and output.
//!
//! Brood files have the header `year,laying_date,n_fledglings` (any column
//! order, extra columns ignored). Numbers are written in their shortest
//! round-trip form, so reading a written file gives back the same dataset.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use fluctsel::{Dataset, LatentStates, ModelParams, NaturalProcesses};

pub const BROOD_COLUMNS: [&str; 3] = ["year", "laying_date", "n_fledglings"];

/// Parses a brood table. Errors name the offending line of the file.
pub fn parse_broods(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().context("reading the header line")?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("header line lacks the column {name:?} (need {})", BROOD_COLUMNS.join(",")))
    };
    let (iy, iz, ix) = (col(BROOD_COLUMNS[0])?, col(BROOD_COLUMNS[1])?, col(BROOD_COLUMNS[2])?);
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.with_context(|| format!("line {line}"))?;
        let field = |j: usize| row.get(j).ok_or_else(|| anyhow!("line {line}: missing field"));
        let year: i64 = field(iy)?.parse().map_err(|_| anyhow!("line {line}: year {:?} is not an integer", field(iy).unwrap()))?;
        let z: f64 = field(iz)?
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| anyhow!("line {line}: laying date {:?} is not a finite number", field(iz).unwrap()))?;
        let raw = field(ix)?;
        let count: i64 = raw.parse().map_err(|_| anyhow!("line {line}: fledgling count {raw:?} is not an integer"))?;
        if count < 0 {
            bail!("line {line}: fledgling count {count} is negative");
        }
        let count = u32::try_from(count).map_err(|_| anyhow!("line {line}: fledgling count {count} is too large"))?;
        records.push((year, z, count));
    }
    if records.is_empty() {
        bail!("no brood rows");
    }
    Ok(Dataset::from_records(records)?)
}

pub fn read_broods(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_broods(&text).with_context(|| format!("in {}", path.display()))
}

pub fn broods_to_csv(data: &Dataset) -> String {
    let rows = data.records().map(|(y, z, x)| vec![y.to_string(), z.to_string(), x.to_string()]);
    table_to_string(&BROOD_COLUMNS, rows)
}

/// One row per year: standardized latents, then the fitness parameters they imply.
pub fn latents_to_csv(data: &Dataset, params: &ModelParams, states: &LatentStates) -> String {
    let eta = NaturalProcesses::from_states(params, states).eta;
    let header = ["year", "s_alpha", "s_theta", "s_omega", "height", "optimum", "width"];
    let rows = data.years().iter().zip(&states.states).zip(&eta).map(|((y, s), e)| {
        let mut row = vec![y.to_string()];
        row.extend(s.iter().map(f64::to_string));
        row.extend([e[0].exp().to_string(), e[1].to_string(), e[2].exp().to_string()]);
        row
    });
    table_to_string(&header, rows)
}

pub fn table_to_string<I: IntoIterator<Item = Vec<String>>>(header: &[&str], rows: I) -> String {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(header).expect("in-memory write");
    for row in rows {
        assert_eq!(row.len(), header.len(), "row width");
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Formats a number for a table cell; NaN becomes `NA`.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        v.to_string()
    }
}
