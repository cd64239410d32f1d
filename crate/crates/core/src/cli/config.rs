use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kgdata::DatasetPaths;
use crate::trainer::TrainConfig;

/// Environment variable naming the directory that holds preset datasets.
pub const DATA_ROOT_ENV: &str = "DUALCHAIN_DATA";

pub const PRESETS: [&str; 7] = ["wn18", "fb15k", "fb15k-237", "yago3-10", "fb14k", "dgi", "ddi"];

/// Keys of a config file that name files rather than hyperparameters.
const PATH_KEYS: [&str; 5] = [
    "train_path",
    "valid_path",
    "test_path",
    "descriptions_path",
    "word_vectors_path",
];

/// Hyperparameters plus input files.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub paths: DatasetPaths,
}

/// Hyperparameter overrides of a named dataset setting.
pub fn preset_table(name: &str) -> Result<toml::Table> {
    let text = match name {
        "wn18" | "fb15k" => "n_b = 5000\nepochs = 3000\nlr0 = 3e-3",
        "fb15k-237" => "n_b = 2000\nepochs = 2000\nlr0 = 3e-3\nlabel_smoothing = 0.1",
        "yago3-10" => "n_b = 30000\nepochs = 2000\nlr0 = 1e-3",
        "fb14k" => "model = \"cdcplus\"\nk = 100\nn_b = 1000\nepochs = 600\nlr0 = 3e-3",
        "dgi" => "n_b = 100\nepochs = 1000\nlr0 = 1e-3",
        "ddi" => "n_b = 300\nepochs = 1000\nlr0 = 3e-3",
        _ => {
            return Err(Error::Config(format!(
                "unknown preset `{name}` (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    };
    let mut table: toml::Table = text.parse().expect("preset tables parse");
    for (k, v) in [("k", 200), ("n_k", 64), ("d_g", 256)] {
        table.entry(k).or_insert(toml::Value::Integer(v));
    }
    table.insert("dropout".into(), toml::Value::Float(0.2));
    Ok(table)
}

/// Default data files of a preset under `root`.
pub fn preset_paths(name: &str, root: &Path) -> DatasetPaths {
    let dir = root.join(name);
    let text = name == "fb14k";
    DatasetPaths {
        train: Some(dir.join("train.txt")),
        valid: Some(dir.join("valid.txt")),
        test: Some(dir.join("test.txt")),
        descriptions: text.then(|| dir.join("descriptions.txt")),
        word_vectors: text.then(|| dir.join("word_vectors.txt")),
    }
}

pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Parses a `key=value` override. Values that are not TOML literals are
/// taken as strings.
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
    let k = k.trim().to_string();
    let v = v.trim();
    let value = format!("x = {v}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k, value))
}

/// Layers a preset, a config file and overrides, in that order.
#[derive(Debug, Default)]
pub struct ConfigBuilder {
    table: toml::Table,
    paths: DatasetPaths,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn preset(mut self, name: &str, root: &Path) -> Result<Self> {
        self.table.extend(preset_table(name)?);
        self.paths = preset_paths(name, root);
        Ok(self)
    }

    pub fn file(self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", path.display(), one_line(&e.to_string()))))?;
        self.merge(table)
    }

    pub fn merge(mut self, table: toml::Table) -> Result<Self> {
        for (k, v) in table {
            self = self.set(&k, v)?;
        }
        Ok(self)
    }

    pub fn set(mut self, key: &str, value: toml::Value) -> Result<Self> {
        if PATH_KEYS.contains(&key) {
            let p = value
                .as_str()
                .map(PathBuf::from)
                .ok_or_else(|| Error::Config(format!("{key} must be a string")))?;
            let slot = match key {
                "train_path" => &mut self.paths.train,
                "valid_path" => &mut self.paths.valid,
                "test_path" => &mut self.paths.test,
                "descriptions_path" => &mut self.paths.descriptions,
                _ => &mut self.paths.word_vectors,
            };
            *slot = Some(p);
        } else {
            self.table.insert(key.to_string(), value);
        }
        Ok(self)
    }

    pub fn build(self) -> Result<RunConfig> {
        let train: TrainConfig = toml::Value::Table(self.table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(one_line(&e.to_string())))?;
        train.validate()?;
        Ok(RunConfig {
            train,
            paths: self.paths,
        })
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{ModelKind, OptimizerKind};

    #[test]
    fn presets_follow_dataset_settings() {
        let root = Path::new("/data");
        let build = |name: &str| ConfigBuilder::new().preset(name, root).unwrap().build().unwrap();
        let ddi = build("ddi");
        assert_eq!((ddi.train.n_b, ddi.train.epochs, ddi.train.lr0), (300, 1000, 3e-3));
        assert_eq!((ddi.train.k, ddi.train.n_k, ddi.train.d_g), (200, 64, 256));
        assert_eq!(ddi.train.decay, 0.998);
        assert_eq!(ddi.paths.train, Some(PathBuf::from("/data/ddi/train.txt")));
        assert_eq!(build("fb15k-237").train.label_smoothing, 0.1);
        assert_eq!(build("yago3-10").train.n_b, 30_000);
        assert_eq!(build("dgi").train.lr0, 1e-3);
        let fb14k = build("fb14k");
        assert_eq!((fb14k.train.model, fb14k.train.k), (ModelKind::CdcPlus, 100));
        assert!(fb14k.paths.descriptions.is_some());
        for p in PRESETS {
            build(p);
        }
        assert!(matches!(
            ConfigBuilder::new().preset("nope", root),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn later_layers_win() {
        let file: toml::Table = "n_b = 64\ntrain_path = \"a.txt\"\noptimizer = \"sgd\"".parse().unwrap();
        let (k, v) = parse_override("n_b=8").unwrap();
        let cfg = ConfigBuilder::new()
            .preset("ddi", Path::new("r"))
            .unwrap()
            .merge(file)
            .unwrap()
            .set(&k, v)
            .unwrap()
            .build()
            .unwrap();
        assert_eq!(cfg.train.n_b, 8);
        assert_eq!(cfg.train.optimizer, OptimizerKind::Sgd);
        assert_eq!(cfg.paths.train, Some(PathBuf::from("a.txt")));
        assert_eq!(cfg.paths.valid, Some(PathBuf::from("r/ddi/valid.txt")));
    }

    #[test]
    fn overrides_parse_literals_and_strings() {
        assert_eq!(parse_override("lr0 = 1e-3").unwrap().1, toml::Value::Float(1e-3));
        assert_eq!(
            parse_override("model=cdcplus").unwrap().1,
            toml::Value::String("cdcplus".into())
        );
        assert_eq!(
            parse_override("norm_projection=false").unwrap().1,
            toml::Value::Boolean(false)
        );
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn bad_keys_and_values_are_config_errors() {
        let bad = |k: &str, v: &str| {
            let (k, v) = parse_override(&format!("{k}={v}")).unwrap();
            ConfigBuilder::new().set(&k, v).unwrap().build()
        };
        assert!(matches!(bad("bogus", "1"), Err(Error::Config(_))));
        assert!(matches!(bad("k", "\"many\""), Err(Error::Config(_))));
        assert!(matches!(bad("decay", "2.0"), Err(Error::Config(_))));
        assert!(ConfigBuilder::new().set("train_path", toml::Value::Integer(3)).is_err());
    }
}
