//! Deterministic report serialization: RFC-4180-style CSV with a mandatory
//! header row and floats at 17 significant digits, and JSON summaries that
//! encode non-finite values as null next to a status field. Identical inputs
//! produce byte-identical outputs.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

/// A float at 17 significant digits (scientific form, locale-free).
pub fn fmt_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    format!("{:.16e}", x)
}

fn csv_escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Writes a CSV table with a header row; fields are escaped as needed.
pub fn write_csv<W: Write>(
    w: &mut W,
    header: &[&str],
    rows: &[Vec<String>],
) -> std::io::Result<()> {
    writeln!(
        w,
        "{}",
        header.iter().map(|h| csv_escape(h)).collect::<Vec<_>>().join(",")
    )?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        writeln!(
            w,
            "{}",
            row.iter().map(|f| csv_escape(f)).collect::<Vec<_>>().join(",")
        )?;
    }
    Ok(())
}

pub fn write_csv_file(
    path: &Path,
    header: &[&str],
    rows: &[Vec<String>],
) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(&mut f, header, rows)
}

/// Top-level JSON report: the full run configuration is echoed verbatim so
/// reruns are self-describing.
#[derive(Debug, Serialize)]
pub struct Report<T: Serialize> {
    pub status: String,
    pub config: serde_json::Value,
    pub payload: T,
}

/// Serializes pretty JSON; non-finite floats become null (the status field
/// carries failure information instead).
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    // serde_json maps non-finite floats to null when going through Value
    let v = serde_json::to_value(value).expect("report serialization");
    serde_json::to_string_pretty(&v).expect("json formatting")
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let s = to_json_string(value);
    std::fs::write(path, s + "\n")
}
