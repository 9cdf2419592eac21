//! Binary CSV matrices, pattern lists and JSON artifacts.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use slam_core::patterns::{AttributePattern, PatternSet, QMatrix};
use slam_core::response::ResponseMatrix;

/// Reads a headerless CSV of 0/1 entries; errors name the file and line.
pub fn read_binary_csv(path: &Path) -> Result<Vec<Vec<u8>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut rows: Vec<Vec<u8>> = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("{}: malformed CSV", path.display()))?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .enumerate()
            .map(|(c, field)| match field {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => bail!(
                    "{}:{line}: column {} holds '{other}', expected 0 or 1",
                    path.display(),
                    c + 1
                ),
            })
            .collect::<Result<Vec<u8>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                bail!(
                    "{}:{line}: row has {} entries, expected {}",
                    path.display(),
                    row.len(),
                    first.len()
                );
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{}: no rows", path.display());
    }
    Ok(rows)
}

pub fn read_q(path: &Path) -> Result<QMatrix> {
    let rows = read_binary_csv(path)?;
    QMatrix::from_rows(&rows).with_context(|| format!("{}: invalid Q-matrix", path.display()))
}

pub fn read_responses(path: &Path) -> Result<ResponseMatrix> {
    let rows = read_binary_csv(path)?;
    ResponseMatrix::from_rows(&rows).with_context(|| format!("{}: invalid responses", path.display()))
}

/// Responses and Q with matching item counts.
pub fn read_design(q_path: &Path, r_path: &Path) -> Result<(QMatrix, ResponseMatrix)> {
    let q = read_q(q_path)?;
    let r = read_responses(r_path)?;
    if q.j() != r.j() {
        bail!(
            "{} has {} items but {} has {} columns",
            q_path.display(),
            q.j(),
            r_path.display(),
            r.j()
        );
    }
    Ok((q, r))
}

/// One binary string per line, attribute 1 first; blank lines and `#` comments are skipped.
pub fn read_patterns(path: &Path) -> Result<PatternSet> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut members = Vec::new();
    let mut k = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let p = AttributePattern::parse(line)
            .with_context(|| format!("{}:{}: bad pattern '{line}'", path.display(), i + 1))?;
        match k {
            None => k = Some(p.k()),
            Some(k0) if k0 != p.k() => bail!(
                "{}:{}: pattern has {} attributes, expected {k0}",
                path.display(),
                i + 1,
                p.k()
            ),
            _ => {}
        }
        members.push(p);
    }
    let Some(k) = k else {
        bail!("{}: no patterns", path.display());
    };
    members.sort();
    members.dedup();
    Ok(PatternSet::from_unsorted(k, members)?)
}

pub fn patterns_text(set: &PatternSet) -> String {
    let mut out = String::new();
    for s in set.canonical().to_strings() {
        out.push_str(&s);
        out.push('\n');
    }
    out
}

pub fn binary_csv(rows: &[Vec<u8>]) -> String {
    let mut out = String::new();
    for row in rows {
        let line: Vec<&str> = row.iter().map(|&v| if v == 1 { "1" } else { "0" }).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    let back = fs::read_to_string(path).with_context(|| format!("cannot re-read {}", path.display()))?;
    if back != text {
        bail!("{} did not round-trip", path.display());
    }
    Ok(())
}

/// Pretty JSON, re-parsed after writing to validate the artifact.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)?;
    serde_json::from_str::<serde_json::Value>(&text)
        .with_context(|| format!("{} is not valid JSON", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_binary_rows() {
        let f = file("1,0,1\n0, 1 ,1\n\n# note\n0,0,0\n");
        assert_eq!(
            read_binary_csv(f.path()).unwrap(),
            vec![vec![1, 0, 1], vec![0, 1, 1], vec![0, 0, 0]]
        );
    }

    #[test]
    fn errors_carry_line_numbers() {
        let f = file("1,0\n1,2\n");
        let e = format!("{:#}", read_binary_csv(f.path()).unwrap_err());
        assert!(e.contains(":2:") && e.contains("'2'"), "{e}");
        let f = file("1,0\n1,0\n1\n");
        let e = format!("{:#}", read_binary_csv(f.path()).unwrap_err());
        assert!(e.contains(":3:") && e.contains("expected 2"), "{e}");
    }

    #[test]
    fn pattern_round_trip() {
        let f = file("# selected\n0110\n1000\n0110\n");
        let set = read_patterns(f.path()).unwrap();
        assert_eq!(set.to_strings(), vec!["0110", "1000"]);
        assert_eq!(patterns_text(&set), "0110\n1000\n");
        let bad = file("011\n10\n");
        assert!(format!("{:#}", read_patterns(bad.path()).unwrap_err()).contains(":2:"));
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![vec![1, 0], vec![0, 1]];
        let f = file(&binary_csv(&rows));
        assert_eq!(read_binary_csv(f.path()).unwrap(), rows);
    }
}
