//! Result tables: one row per configuration and x position, one Dice
//! column per seed plus their mean and population standard deviation.

use crate::error::{Error, Result};

use super::plot::{render_svg, Series};

/// Mean foreground Dice of one configuration at one x position, per seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub config: String,
    /// Degradation kind name; `clean` for undegraded inputs.
    pub kind: String,
    /// Grid level (0 = clean), shift in pixels, or training-set size.
    pub x: i64,
    /// Degradation parameter at this level (0 when clean).
    pub param: f64,
    pub per_seed: Vec<f64>,
}

impl Row {
    pub fn mean(&self) -> f64 {
        self.per_seed.iter().sum::<f64>() / self.per_seed.len() as f64
    }

    /// Population standard deviation over seeds.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let var =
            self.per_seed.iter().map(|v| (v - m).powi(2)).sum::<f64>() / self.per_seed.len() as f64;
        var.sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    /// File stem, e.g. `gaussian_noise`.
    pub name: String,
    /// Header of the x column: `level`, `shift` or `train_size`.
    pub x_column: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn new(name: impl Into<String>, x_column: impl Into<String>, seeds: &[u64]) -> Self {
        Table {
            name: name.into(),
            x_column: x_column.into(),
            seeds: seeds.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn get(&self, config: &str, x: i64) -> Option<&Row> {
        self.rows.iter().find(|r| r.config == config && r.x == x)
    }

    /// Configurations in order of first appearance.
    pub fn configs(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.config.as_str()) {
                out.push(&r.config);
            }
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![
            "config".to_string(),
            "kind".into(),
            self.x_column.clone(),
            "param".into(),
            "dice_mean".into(),
            "dice_std".into(),
        ];
        header.extend(seeds.iter().map(|s| format!("seed_{s}")));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![
                r.config.clone(),
                r.kind.clone(),
                r.x.to_string(),
                r.param.to_string(),
                r.mean().to_string(),
                r.std().to_string(),
            ];
            rec.extend(r.per_seed.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let body = String::from_utf8(w.into_inner().map_err(|e| csv_err(e.into_error()))?)
            .expect("csv output is utf-8");
        Ok(format!(
            "# dice: mean over foreground classes, then over test samples; dice_mean and dice_std (population) over seeds {}\n{body}",
            seeds.join(" ")
        ))
    }
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::invalid("csv", e.to_string())
}

/// Line plot of a runner table: one series per configuration, the table's
/// x column on the x axis and `dice_mean` on the y axis.
pub fn emit_plot(table_csv: &str, title: &str) -> Result<String> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(table_csv.as_bytes());
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid("emit_plot", format!("missing column `{name}`")))
    };
    let (c_config, c_kind, c_param, c_mean) = (
        col("config")?,
        col("kind")?,
        col("param")?,
        col("dice_mean")?,
    );
    let x_name = headers.get(2).unwrap_or("x").to_string();
    let mut series: Vec<Series> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let y: f64 = field(c_mean)
            .parse()
            .map_err(|_| Error::invalid("emit_plot", format!("bad dice `{}`", field(c_mean))))?;
        let label = if x_name == "level" {
            if field(c_kind) == "clean" {
                "clean".to_string()
            } else {
                field(c_param).to_string()
            }
        } else {
            field(2).to_string()
        };
        let name = field(c_config);
        match series.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push((label, y)),
            None => series.push(Series {
                name: name.to_string(),
                points: vec![(label, y)],
            }),
        }
    }
    if series.is_empty() {
        return Err(Error::invalid("emit_plot", "empty table"));
    }
    Ok(render_svg(title, &x_name, &series))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Table {
        let mut t = Table::new("gaussian_noise", "level", &[0, 1]);
        for (config, vals) in [("pe-off", [0.9, 0.5]), ("pe-10", [0.95, 0.8])] {
            t.rows.push(Row {
                config: config.into(),
                kind: "clean".into(),
                x: 0,
                param: 0.0,
                per_seed: vec![vals[0], vals[0] - 0.02],
            });
            t.rows.push(Row {
                config: config.into(),
                kind: "gaussian_noise".into(),
                x: 1,
                param: 0.04,
                per_seed: vec![vals[1], vals[1] + 0.02],
            });
        }
        t
    }

    #[test]
    fn mean_and_population_std() {
        let r = Row {
            config: "a".into(),
            kind: "clean".into(),
            x: 0,
            param: 0.0,
            per_seed: vec![0.5, 0.7],
        };
        assert!((r.mean() - 0.6).abs() < 1e-15);
        assert!((r.std() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let csv = table().to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with("# dice:"));
        assert_eq!(
            lines[1],
            "config,kind,level,param,dice_mean,dice_std,seed_0,seed_1"
        );
        assert_eq!(lines.len(), 2 + 4);
        assert!(lines[2].starts_with("pe-off,clean,0,0,"));
    }

    #[test]
    fn plot_has_one_series_per_config() {
        let csv = table().to_csv().unwrap();
        let svg = emit_plot(&csv, "noise").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">clean<") && svg.contains(">0.04<"));
    }

    #[test]
    fn empty_table_rejected() {
        let csv = Table::new("x", "level", &[0]).to_csv().unwrap();
        assert!(emit_plot(&csv, "t").is_err());
    }
}
