//! Aggregation of finished runs into one table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fbx_core::monotonicity::format_real;
use serde_json::Value;

use crate::output::RunManifest;

pub const HEADER: [&str; 9] = ["run", "command", "kind", "x0", "k_star", "lambda_star", "beta", "density_exponent", "monotone"];

/// One table row per result item: an anomalous run, a classified point or
/// a diagnosed center.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Row {
    pub run: String,
    pub command: String,
    pub kind: String,
    pub x0: String,
    pub k_star: Option<f64>,
    pub lambda_star: Option<f64>,
    pub beta: Option<f64>,
    pub density_exponent: Option<f64>,
    pub monotone: Option<bool>,
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), format_real)
}

fn short(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn point(v: &Value) -> String {
    v.as_array()
        .map(|a| a.iter().map(|x| x.as_f64().map_or("nan".into(), format_real)).collect::<Vec<_>>().join(" "))
        .unwrap_or_default()
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("missing referenced file {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn rows_for(manifest_path: &Path) -> Result<Vec<Row>, String> {
    let manifest = RunManifest::read(manifest_path)?;
    let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let run = dir.display().to_string();
    let base = Row { run: run.clone(), command: manifest.command.clone(), ..Default::default() };
    let mut rows = Vec::new();
    for output in &manifest.outputs {
        let path = dir.join(output);
        if !path.is_file() {
            return Err(format!("missing referenced file {}", path.display()));
        }
        match output.as_str() {
            "anomalous.json" => {
                let v = read_json(&path)?;
                let c = &v["classification"];
                rows.push(Row {
                    kind: c["kind"].as_str().unwrap_or("").to_string(),
                    x0: point(&c["x0"]),
                    k_star: v["k_star"].as_f64(),
                    lambda_star: v["lambda_star"]["value"].as_f64(),
                    beta: v["beta"]["beta"].as_f64(),
                    density_exponent: v["density_exponent"].as_f64(),
                    ..base.clone()
                });
            }
            "classification.json" => {
                let v = read_json(&path)?;
                for p in v["points"].as_array().into_iter().flatten() {
                    rows.push(Row {
                        kind: p["kind"].as_str().unwrap_or("").to_string(),
                        x0: point(&p["x0"]),
                        lambda_star: p["lambda_star"]["value"].as_f64(),
                        ..base.clone()
                    });
                }
            }
            "monotonicity.json" => {
                let v = read_json(&path)?;
                for c in v["centers"].as_array().into_iter().flatten() {
                    rows.push(Row {
                        x0: point(&c["center"]),
                        monotone: Some(c["report"]["pass"].as_bool().unwrap_or(false)),
                        ..base.clone()
                    });
                }
            }
            _ => {}
        }
    }
    Ok(rows)
}

/// Kind counts over all rows, in a fixed order.
pub fn kind_counts(rows: &[Row]) -> [(&'static str, usize); 3] {
    let count = |k: &str| rows.iter().filter(|r| r.kind == k).count();
    [("regular", count("regular")), ("singular", count("singular")), ("unresolved", count("unresolved"))]
}

pub fn collect(manifests: &[PathBuf]) -> Result<Vec<Row>, Vec<String>> {
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for m in manifests {
        match rows_for(m) {
            Ok(r) => rows.extend(r),
            Err(e) => errors.push(e),
        }
    }
    if errors.is_empty() {
        Ok(rows)
    } else {
        Err(errors)
    }
}

pub fn to_csv(rows: &[Row]) -> String {
    let mut s = HEADER.join(",");
    s.push('\n');
    for r in rows {
        let monotone = r.monotone.map_or("", |m| if m { "pass" } else { "fail" });
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.run,
            r.command,
            r.kind,
            r.x0,
            num(r.k_star),
            num(r.lambda_star),
            num(r.beta),
            num(r.density_exponent),
            monotone
        );
    }
    s
}

pub fn to_text(rows: &[Row]) -> String {
    let mut table: Vec<[String; 9]> = vec![HEADER.map(String::from)];
    for r in rows {
        table.push([
            r.run.clone(),
            r.command.clone(),
            r.kind.clone(),
            r.x0.split(' ').map(|x| x.parse::<f64>().map_or(x.to_string(), |v| format!("{v:.3}"))).collect::<Vec<_>>().join(" "),
            short(r.k_star),
            short(r.lambda_star),
            short(r.beta),
            short(r.density_exponent),
            r.monotone.map_or("-", |m| if m { "pass" } else { "fail" }).to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..9).map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0)).collect();
    let mut s = String::new();
    for row in &table {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(s, "{}", cells.join("  ").trim_end());
    }
    let counts = kind_counts(rows);
    let _ = writeln!(s, "{} rows; {}", rows.len(), counts.map(|(k, n)| format!("{k} {n}")).join(", "));
    s
}

/// `(csv, text)` for the given manifests.
pub fn summarize(manifests: &[PathBuf]) -> Result<(String, String), Vec<String>> {
    let rows = collect(manifests)?;
    Ok((to_csv(&rows), to_text(&rows)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_has_header_only() {
        assert_eq!(to_csv(&[]), format!("{}\n", HEADER.join(",")));
        assert!(to_text(&[]).contains("0 rows"));
    }

    #[test]
    fn counts_by_kind() {
        let rows = vec![
            Row { kind: "regular".into(), ..Default::default() },
            Row { kind: "singular".into(), ..Default::default() },
            Row { kind: "regular".into(), ..Default::default() },
        ];
        assert_eq!(kind_counts(&rows), [("regular", 2), ("singular", 1), ("unresolved", 0)]);
    }

    #[test]
    fn missing_manifest_is_an_error() {
        assert!(collect(&[PathBuf::from("/nonexistent/manifest.json")]).is_err());
    }
}
