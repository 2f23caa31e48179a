//! CvResult serialization: json, csv, and a human-readable table.

use crate::experiment::{ConfigResult, CvResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Table,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "table" => Ok(Format::Table),
            other => Err(format!("unknown format {other:?} (expected json|csv|table)")),
        }
    }
}

pub fn render(result: &CvResult, format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(result).expect("serializable") + "\n",
        Format::Csv => to_csv(result),
        Format::Table => to_table(result),
    }
}

fn config_label(c: &ConfigResult) -> String {
    format!(
        "L={} R={} scale={} jk={}",
        c.blocks,
        c.fc_layers,
        c.scaling,
        if c.jk { "on" } else { "off" }
    )
}

fn to_csv(result: &CvResult) -> String {
    let mut out = String::from(
        "dataset,blocks,fc_layers,scaling,jk,classifier,mean_accuracy,std_accuracy,wall_secs,error,per_fold_accuracy\n",
    );
    for c in &result.configs {
        let folds = c
            .per_fold_accuracy
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            result.dataset,
            c.blocks,
            c.fc_layers,
            c.scaling,
            c.jk,
            c.classifier,
            c.mean_accuracy,
            c.std_accuracy,
            c.wall_secs,
            c.error.clone().unwrap_or_default(),
            folds
        ));
    }
    out
}

fn to_table(result: &CvResult) -> String {
    let mut out = format!(
        "dataset {}  graphs {}  classes {}  folds {}  seed {}  gram {}  selection {}\n",
        result.dataset,
        result.num_graphs,
        result.num_classes,
        result.folds,
        result.seed,
        if result.normalized_gram {
            "normalized"
        } else {
            "raw"
        },
        result.protocol,
    );
    let mut rows: Vec<&ConfigResult> = result.configs.iter().collect();
    rows.sort_by(|a, b| {
        b.error
            .is_none()
            .cmp(&a.error.is_none())
            .then(b.mean_accuracy.total_cmp(&a.mean_accuracy))
    });
    for c in rows {
        match &c.error {
            None => out.push_str(&format!(
                "  {:<34} {:<10} {:>6.1}% ± {:>4.1}%   [{:>7.1}s]\n",
                config_label(c),
                c.classifier,
                100.0 * c.mean_accuracy,
                100.0 * c.std_accuracy,
                c.wall_secs
            )),
            Some(e) => out.push_str(&format!(
                "  {:<34} {:<10} FAILED: {e}\n",
                config_label(c),
                c.classifier
            )),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::CvResult;

    fn sample() -> CvResult {
        CvResult {
            dataset: "toy".into(),
            num_graphs: 4,
            num_classes: 2,
            folds: 2,
            seed: 0,
            normalized_gram: true,
            protocol: "per-fold-val-selection".into(),
            configs: vec![ConfigResult {
                blocks: 2,
                fc_layers: 1,
                scaling: gntk::kernel::Scaling::Sum,
                jk: false,
                classifier: "svm".into(),
                mean_accuracy: 0.9,
                std_accuracy: 0.1,
                per_fold_accuracy: vec![0.8, 1.0],
                per_fold_hyper: vec![1.0, 10.0],
                wall_secs: 0.5,
                error: None,
            }],
        }
    }

    #[test]
    fn empty_result_renders_everywhere() {
        let empty = CvResult {
            configs: vec![],
            ..sample()
        };
        let json = render(&empty, Format::Json);
        assert!(serde_json::from_str::<CvResult>(&json).is_ok());
        let csv = render(&empty, Format::Csv);
        assert_eq!(csv.lines().count(), 1); // header only
        assert!(!render(&empty, Format::Table).is_empty());
    }

    #[test]
    fn json_csv_roundtrip_values_agree() {
        let r = sample();
        let json = render(&r, Format::Json);
        let back: CvResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back.configs[0].mean_accuracy, r.configs[0].mean_accuracy);
        let csv = render(&r, Format::Csv);
        let line = csv.lines().nth(1).unwrap();
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[6].parse::<f64>().unwrap(), 0.9);
        assert_eq!(fields[7].parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn table_sorts_by_mean_descending() {
        let mut r = sample();
        let mut worse = r.configs[0].clone();
        worse.mean_accuracy = 0.5;
        worse.blocks = 9;
        r.configs.insert(0, worse);
        let table = render(&r, Format::Table);
        let first = table.lines().nth(1).unwrap();
        assert!(first.contains("L=2"), "{table}");
    }
}
