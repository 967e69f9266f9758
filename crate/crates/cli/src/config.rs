//! Run configuration: a flat `key = value` file with `[section]` headers,
//! overridden by command-line flags.
//!
//! ```text
//! dataset = denmark
//! data = data/denmark.csv
//! models = multidim, conv2d
//! horizons = 6, 24
//! seeds = 1, 2, 3
//! out = runs
//!
//! [train]
//! max_epochs = 150
//! batch_size = 64
//!
//! [conv3d]
//! learning_rate = 0.0005
//! ```
//!
//! Keys before the first header are run keys. `[train]` sets the training
//! defaults, a section named after a model kind overrides them for that
//! model, and `[schema]`/`[split]` describe a custom dataset.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use windcast::data::{parse_timestamp, DateRange, Schema, SplitConfig, Validation};
use windcast::model::ModelKind;
use windcast::train::TrainConfig;

type Section = BTreeMap<String, (usize, String)>;

/// Parsed sections, keyed by name; run keys live under `""`.
#[derive(Debug, Default)]
pub struct ConfigFile {
    sections: BTreeMap<String, Section>,
}

const RUN_KEYS: &[&str] = &["dataset", "data", "models", "horizons", "seeds", "out"];
const TRAIN_KEYS: &[&str] = &["max_epochs", "batch_size", "learning_rate", "patience"];
const SCHEMA_KEYS: &[&str] = &[
    "id",
    "cities",
    "features",
    "wind_feature",
    "targets",
    "cadence_hours",
];
const SPLIT_KEYS: &[&str] = &[
    "train",
    "validation",
    "validation_fraction",
    "test",
    "steps",
    "horizons",
];

fn config_error(msg: String) -> anyhow::Error {
    anyhow!(windcast::Error::Config(msg))
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut file = Self::default();
        let mut current = String::new();
        file.sections.insert(current.clone(), Section::new());
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_string();
                let allowed = matches!(name.as_str(), "train" | "schema" | "split")
                    || ModelKind::from_str(&name).is_ok_and(|k| k.is_trainable());
                if !allowed {
                    return Err(config_error(format!(
                        "line {line_no}: unknown section [{name}]"
                    )));
                }
                if file.sections.contains_key(&name) {
                    return Err(config_error(format!(
                        "line {line_no}: section [{name}] repeated"
                    )));
                }
                file.sections.insert(name.clone(), Section::new());
                current = name;
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_error(format!("line {line_no}: expected `key = value`")))?;
            let key = key.trim().to_string();
            let known = match current.as_str() {
                "" => RUN_KEYS,
                "schema" => SCHEMA_KEYS,
                "split" => SPLIT_KEYS,
                _ => TRAIN_KEYS,
            };
            if !known.contains(&key.as_str()) {
                let section = if current.is_empty() {
                    "run keys".to_string()
                } else {
                    format!("[{current}]")
                };
                return Err(config_error(format!(
                    "line {line_no}: unknown key `{key}` in {section}"
                )));
            }
            let section = file
                .sections
                .get_mut(&current)
                .expect("current section exists");
            if section
                .insert(key.clone(), (line_no, value.trim().to_string()))
                .is_some()
            {
                return Err(config_error(format!(
                    "line {line_no}: key `{key}` repeated"
                )));
            }
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            anyhow!(windcast::Error::Config(format!(
                "cannot read {}: {e}",
                path.display()
            )))
        })?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    fn section(&self, name: &str) -> Option<&Section> {
        self.sections.get(name)
    }

    fn get(&self, section: &str, key: &str) -> Option<&(usize, String)> {
        self.section(section).and_then(|s| s.get(key))
    }

    fn parsed<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(section, key)
            .map(|(line, v)| {
                v.parse()
                    .map_err(|e| config_error(format!("line {line}: `{key} = {v}`: {e}")))
            })
            .transpose()
    }

    fn list<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(section, key)
            .map(|(line, v)| {
                parse_list(v).map_err(|e| config_error(format!("line {line}: `{key}`: {e}")))
            })
            .transpose()
    }
}

pub fn parse_list<T: FromStr>(text: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

/// Training hyperparameters that a file section or flag may override.
#[derive(Clone, Debug, Default)]
pub struct TrainOverrides {
    pub max_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub patience: Option<usize>,
}

impl TrainOverrides {
    fn from_section(file: &ConfigFile, section: &str) -> Result<Self> {
        Ok(Self {
            max_epochs: file.parsed(section, "max_epochs")?,
            batch_size: file.parsed(section, "batch_size")?,
            learning_rate: file.parsed(section, "learning_rate")?,
            patience: file.parsed(section, "patience")?,
        })
    }

    fn apply(&self, c: &mut TrainConfig) {
        if let Some(v) = self.max_epochs {
            c.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.patience {
            c.patience = v;
        }
    }
}

/// Values given on the command line; each wins over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub dataset: Option<String>,
    pub data: Option<PathBuf>,
    pub models: Option<Vec<String>>,
    pub horizons: Option<Vec<u32>>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub train: TrainOverrides,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    /// `denmark`, `netherlands` or `custom`.
    pub dataset: String,
    pub data: Option<PathBuf>,
    pub schema: Schema,
    pub split: SplitConfig,
    pub models: Vec<ModelKind>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    train: TrainConfig,
    per_model: BTreeMap<ModelKind, TrainOverrides>,
}

pub struct Defaults {
    pub models: Vec<ModelKind>,
    pub seeds: Vec<u64>,
}

impl RunConfig {
    pub fn resolve(file: Option<&ConfigFile>, cli: &Overrides, defaults: Defaults) -> Result<Self> {
        let empty = ConfigFile::default();
        let file = file.unwrap_or(&empty);
        let dataset = cli
            .dataset
            .clone()
            .or_else(|| file.get("", "dataset").map(|(_, v)| v.clone()))
            .ok_or_else(|| {
                config_error("no dataset given (use --dataset or `dataset =`)".into())
            })?;
        let (schema, mut split) = match dataset.as_str() {
            "denmark" | "dk" => (Schema::denmark(), SplitConfig::denmark()),
            "netherlands" | "nl" => (Schema::netherlands(), SplitConfig::netherlands()),
            "custom" => (custom_schema(file)?, custom_split(file)?),
            other => {
                return Err(config_error(format!(
                    "unknown dataset `{other}` (expected denmark, netherlands or custom)"
                )))
            }
        };
        if dataset != "custom" {
            override_split(file, &mut split)?;
        }
        let dataset = match dataset.as_str() {
            "dk" => "denmark".to_string(),
            "nl" => "netherlands".to_string(),
            _ => dataset,
        };
        schema.validate()?;

        if let Some(h) = cli.horizons.clone().or(file.list("", "horizons")?) {
            split.horizons = h;
        }
        let mut seen = split.horizons.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != split.horizons.len() {
            return Err(config_error(format!(
                "duplicate horizon in {:?}",
                split.horizons
            )));
        }
        for &h in &split.horizons {
            schema.horizon_steps(h)?;
        }
        split.validate()?;

        let names = match &cli.models {
            Some(m) => Some(m.clone()),
            None => file.list::<String>("", "models")?,
        };
        let models = match names {
            None => defaults.models,
            Some(names) => parse_models(&names)?,
        };

        let seeds = cli
            .seeds
            .clone()
            .or(file.list("", "seeds")?)
            .unwrap_or(defaults.seeds);
        if seeds.is_empty() {
            return Err(config_error("no seeds given".into()));
        }
        let data = cli
            .data
            .clone()
            .or_else(|| file.get("", "data").map(|(_, v)| PathBuf::from(v)));
        let out = cli
            .out
            .clone()
            .or_else(|| file.get("", "out").map(|(_, v)| PathBuf::from(v)))
            .unwrap_or_else(|| PathBuf::from("runs"));

        let mut train = TrainConfig::default();
        TrainOverrides::from_section(file, "train")?.apply(&mut train);
        let mut per_model = BTreeMap::new();
        for kind in ModelKind::TRAINABLE {
            if file.section(kind.as_str()).is_some() {
                per_model.insert(kind, TrainOverrides::from_section(file, kind.as_str())?);
            }
        }
        cli.train.apply(&mut train);
        let config = Self {
            dataset,
            data,
            schema,
            split,
            models,
            seeds,
            out,
            train,
            per_model,
        };
        for &kind in &config.models {
            config.train_config(kind, 0).validate()?;
        }
        Ok(config)
    }

    /// Training settings of one run: `[train]`, then the model's section,
    /// then command-line flags.
    pub fn train_config(&self, kind: ModelKind, seed: u64) -> TrainConfig {
        let mut c = self.train.clone();
        if let Some(o) = self.per_model.get(&kind) {
            o.apply(&mut c);
        }
        c.seed = seed;
        c
    }

    /// Short dataset code used in artifact names.
    pub fn code(&self) -> &str {
        match self.dataset.as_str() {
            "denmark" => "dk",
            "netherlands" => "nl",
            _ => &self.schema.id,
        }
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| config_error("no data file given (use --data or `data =`)".into()))
    }

    pub fn trainable_models(&self) -> Vec<ModelKind> {
        self.models
            .iter()
            .copied()
            .filter(|k| k.is_trainable())
            .collect()
    }
}

/// Stem of the weight and trace files of one run, e.g. `multidim_dk_h6_s42`.
pub fn run_name(kind: ModelKind, code: &str, horizon: u32, seed: u64) -> String {
    format!("{}_{code}_h{horizon}_s{seed}", kind.as_str())
}

pub fn parse_models(names: &[String]) -> Result<Vec<ModelKind>> {
    let mut out = Vec::new();
    for name in names {
        if name == "all" {
            out.extend(ModelKind::TRAINABLE);
        } else {
            out.push(name.parse::<ModelKind>()?);
        }
    }
    let mut unique = Vec::new();
    for k in out {
        if !unique.contains(&k) {
            unique.push(k);
        }
    }
    Ok(unique)
}

fn required<'a>(file: &'a ConfigFile, section: &str, key: &str) -> Result<&'a str> {
    file.get(section, key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| config_error(format!("custom dataset needs `{key}` in [{section}]")))
}

fn custom_schema(file: &ConfigFile) -> Result<Schema> {
    let list = |key: &str| -> Result<Vec<String>> {
        file.list("schema", key)?
            .ok_or_else(|| config_error(format!("custom dataset needs `{key}` in [schema]")))
    };
    Ok(Schema {
        id: required(file, "schema", "id")?.to_string(),
        cities: list("cities")?,
        features: list("features")?,
        wind_feature: required(file, "schema", "wind_feature")?.to_string(),
        targets: list("targets")?,
        cadence_hours: file.parsed("schema", "cadence_hours")?.unwrap_or(1),
    })
}

fn parse_range(file: &ConfigFile, key: &str) -> Result<Option<DateRange>> {
    let Some((line, v)) = file.get("split", key) else {
        return Ok(None);
    };
    let bad = || {
        config_error(format!(
            "line {line}: `{key}` must be `start..end` timestamps, got `{v}`"
        ))
    };
    let (a, b) = v.split_once("..").ok_or_else(bad)?;
    let start = parse_timestamp(a.trim()).ok_or_else(bad)?;
    let end = parse_timestamp(b.trim()).ok_or_else(bad)?;
    Ok(Some(DateRange::new(start, end)))
}

fn override_split(file: &ConfigFile, split: &mut SplitConfig) -> Result<()> {
    if let Some(r) = parse_range(file, "train")? {
        split.train = r;
    }
    match (
        parse_range(file, "validation")?,
        file.parsed::<f64>("split", "validation_fraction")?,
    ) {
        (Some(_), Some(_)) => bail!(config_error(
            "give either `validation` or `validation_fraction`, not both".into()
        )),
        (Some(r), None) => split.validation = Validation::Range(r),
        (None, Some(f)) => split.validation = Validation::TrainTail(f),
        (None, None) => {}
    }
    if let Some(r) = parse_range(file, "test")? {
        split.test = r;
    }
    if let Some(s) = file.parsed("split", "steps")? {
        split.steps = s;
    }
    if let Some(h) = file.list("split", "horizons")? {
        split.horizons = h;
    }
    Ok(())
}

fn custom_split(file: &ConfigFile) -> Result<SplitConfig> {
    let missing = |key: &str| config_error(format!("custom dataset needs `{key}` in [split]"));
    let mut split = SplitConfig {
        train: parse_range(file, "train")?.ok_or_else(|| missing("train"))?,
        validation: Validation::TrainTail(0.1),
        test: parse_range(file, "test")?.ok_or_else(|| missing("test"))?,
        horizons: vec![1],
        steps: file
            .parsed("split", "steps")?
            .ok_or_else(|| missing("steps"))?,
    };
    override_split(file, &mut split)?;
    Ok(split)
}
