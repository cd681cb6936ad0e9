use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{Map, Value};

/// Report printer shared by every subcommand.
pub struct Reporter {
    pub seed: u64,
    pub timestamp: bool,
    pub table: bool,
}

fn flatten(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, rows);
            }
        }
        Value::String(s) => rows.push((prefix.to_string(), s.clone())),
        other => rows.push((prefix.to_string(), other.to_string())),
    }
}

fn key_value_table(v: &Value) -> String {
    let mut rows = Vec::new();
    flatten("", v, &mut rows);
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
}

impl Reporter {
    /// Print `body` as JSON (with command, seed, and timestamp) or as a table.
    pub fn emit(&self, command: &str, body: Value, table: Option<String>) {
        if self.table {
            print!("{}", table.unwrap_or_else(|| key_value_table(&body)));
            return;
        }
        let mut out = Map::new();
        out.insert("command".into(), command.into());
        out.insert("seed".into(), self.seed.into());
        if let Value::Object(m) = body {
            out.extend(m);
        } else {
            out.insert("result".into(), body);
        }
        if self.timestamp {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
            out.insert("timestamp".into(), secs.into());
        }
        let text = serde_json::to_string_pretty(&Value::Object(out)).expect("report serializes");
        println!("{text}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn nested_values_flatten_to_dotted_keys() {
        let t = key_value_table(&json!({"a": 1, "b": {"c": "x", "d": [1, 2]}}));
        assert_eq!(t, "a    1\nb.c  x\nb.d  [1,2]\n");
    }
}
