use std::fs;
use std::io::Read;
use std::path::Path;

use crate::design::{AssignmentPath, SwitchbackDesign};
use crate::error::{Error, Result};

/// Outcomes and assignments from a `t,w,y` log.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentLog {
    pub path: AssignmentPath,
    pub y: Vec<f64>,
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_design(path: &Path) -> Result<SwitchbackDesign> {
    SwitchbackDesign::from_json(&read_text(path)?).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parse a CSV log with header `t,w,y`, `t = 1..T` in order and `w` in {0, 1}.
/// Errors name the 1-based data row.
pub fn parse_log(input: impl Read) -> Result<ExperimentLog> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader.headers().map_err(|e| Error::Parse(format!("header: {e}")))?.clone();
    if header.iter().collect::<Vec<_>>() != ["t", "w", "y"] {
        return Err(Error::Parse(format!("expected header `t,w,y`, found `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let (mut w, mut y) = (Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
        let field = |k: usize| record.get(k).unwrap_or("");
        let t: usize = field(0).parse().map_err(|_| Error::Parse(format!("row {row}: t = `{}` is not a period index", field(0))))?;
        if t != row {
            return Err(Error::Parse(format!("row {row}: expected t = {row}, found {t}")));
        }
        w.push(match field(1) {
            "0" => false,
            "1" => true,
            other => return Err(Error::Parse(format!("row {row}: w = `{other}` is not 0 or 1"))),
        });
        let yt: f64 = field(2).parse().map_err(|_| Error::Parse(format!("row {row}: y = `{}` is not a number", field(2))))?;
        if !yt.is_finite() {
            return Err(Error::Parse(format!("row {row}: y must be finite")));
        }
        y.push(yt);
    }
    if y.is_empty() {
        return Err(Error::Parse("the log has no rows".into()));
    }
    Ok(ExperimentLog { path: AssignmentPath::new(w), y })
}

pub fn read_log(path: &Path) -> Result<ExperimentLog> {
    let file = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_log(file)
}

/// Check the log against the design, reporting the offending row.
pub fn check_against(log: &ExperimentLog, design: &SwitchbackDesign) -> Result<()> {
    if log.y.len() != design.horizon() {
        return Err(Error::InvalidInput(format!(
            "the log has {} rows but the design has T = {}",
            log.y.len(),
            design.horizon()
        )));
    }
    design.check_path(&log.path).map_err(|e| match e {
        Error::NotBlockwiseConstant { period } => Error::InvalidInput(format!(
            "row {period}: w = {} differs from the start of its design block",
            log.path.at(period) as u8
        )),
        other => other,
    })
}
