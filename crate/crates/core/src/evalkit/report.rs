use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

pub const COLUMNS: [&str; 6] = ["PPL", "Dist-1", "Dist-2", "Empathy", "Relev.", "NSV"];

/// One model's row; absent metrics render as "-".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub ppl: Option<f64>,
    pub dist1: Option<f64>,
    pub dist2: Option<f64>,
    pub empathy: Option<f64>,
    pub relevance: Option<f64>,
    /// Signed fraction; shown as a percentage.
    pub nsv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub json: Value,
}

fn round(x: f64, places: i32) -> f64 {
    let s = 10f64.powi(places);
    (x * s).round() / s
}

impl ModelMetrics {
    /// Display-rounded values in column order.
    fn cells(&self) -> [Option<f64>; 6] {
        [
            self.ppl.map(|v| round(v, 2)),
            self.dist1.map(|v| round(v, 3)),
            self.dist2.map(|v| round(v, 3)),
            self.empathy.map(|v| round(v, 2)),
            self.relevance.map(|v| round(v, 2)),
            self.nsv.map(|v| round(v * 100.0, 1)),
        ]
    }
}

/// Table with one row per model, in the fixed column order. The JSON view
/// carries the same rounded numbers as the text (NSV in percent).
pub fn emit_report(rows: &[ModelMetrics]) -> Result<Report> {
    if rows.is_empty() {
        return Err(Error::Metric("no metric blocks".into()));
    }
    let header: Vec<String> = std::iter::once("Model".to_string()).chain(COLUMNS.iter().map(|c| c.to_string())).collect();
    let mut table = vec![header];
    let mut json_rows = Vec::new();
    for r in rows {
        let cells = r.cells();
        let decimals = [2, 3, 3, 2, 2, 1];
        let mut line = vec![r.model.clone()];
        let mut obj = Map::new();
        obj.insert("model".into(), json!(r.model));
        for (i, c) in cells.iter().enumerate() {
            let text = match (c, i) {
                (None, _) => "-".to_string(),
                (Some(v), 5) => format!("{v:.1}%"),
                (Some(v), _) => format!("{v:.*}", decimals[i]),
            };
            line.push(text);
            obj.insert(COLUMNS[i].into(), c.map_or(Value::Null, |v| json!(v)));
        }
        table.push(line);
        json_rows.push(Value::Object(obj));
    }
    let widths: Vec<usize> = (0..table[0].len()).map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut text = String::new();
    for (i, row) in table.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        text.push_str(cells.join("  ").trim_end());
        text.push('\n');
        if i == 0 {
            text.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            text.push('\n');
        }
    }
    let json = json!({ "columns": COLUMNS, "nsv_unit": "percent", "rows": json_rows });
    Ok(Report { text, json })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row_with_missing_ppl() {
        let r = emit_report(&[ModelMetrics {
            model: "retrieval".into(),
            dist1: Some(0.0912),
            dist2: Some(0.291),
            empathy: Some(1.2),
            relevance: Some(1.5),
            nsv: Some(0.285),
            ..Default::default()
        }])
        .unwrap();
        let lines: Vec<&str> = r.text.lines().collect();
        assert_eq!(lines.len(), 3);
        let cells: Vec<&str> = lines[2].split_whitespace().collect();
        assert_eq!(cells, ["retrieval", "-", "0.091", "0.291", "1.20", "1.50", "28.5%"]);
        let row = &r.json["rows"][0];
        assert!(row["PPL"].is_null());
        for (i, c) in COLUMNS.iter().enumerate().skip(1) {
            let shown: f64 = cells[i + 1].trim_end_matches('%').parse().unwrap();
            assert_eq!(row[*c].as_f64().unwrap(), shown);
        }
        let header: Vec<&str> = lines[0].split_whitespace().collect();
        assert_eq!(&header[1..], &COLUMNS);
    }

    #[test]
    fn empty_report_errors() {
        assert!(emit_report(&[]).is_err());
    }
}
