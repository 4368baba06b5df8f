use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    gen_clusters_2d, gen_rings_2d, load_idx, load_semeion, read_cache, split_dataset, ClustersSpec, Dataset,
    RingsSpec, Split,
};
use crate::error::{io_at, Error, Result};
use crate::objectives::{LossKind, ModelSpec, PerSampleObjective};
use crate::optimizers::OptimizerSpec;

/// Where a run's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Rings {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        spec: Option<RingsSpec>,
    },
    Clusters {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        spec: Option<ClustersSpec>,
    },
    Semeion {
        path: PathBuf,
    },
    /// IDX image/label pair, optionally with a separate test pair.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
    },
    /// A data set written by [`crate::data::write_cache`].
    Cache {
        path: PathBuf,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    /// Held-out fraction; no test part when absent (unless the source
    /// already carries one).
    #[serde(default)]
    pub test_fraction: Option<f64>,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_true")]
    pub stratified: bool,
}

impl DatasetConfig {
    pub fn new(source: DataSource) -> Self {
        DatasetConfig {
            source,
            test_fraction: None,
            split_seed: 0,
            stratified: true,
        }
    }

    /// Loads the data; relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let ds = match &self.source {
            DataSource::Rings { seed, spec } => gen_rings_2d(*seed, &spec.clone().unwrap_or_default())?,
            DataSource::Clusters { seed, spec } => gen_clusters_2d(*seed, &spec.clone().unwrap_or_default())?,
            DataSource::Semeion { path } => load_semeion(&resolve(path))?,
            DataSource::Cache { path } => {
                let p = resolve(path);
                read_cache(std::io::BufReader::new(std::fs::File::open(&p).map_err(io_at(&p))?))?
            }
            DataSource::Idx {
                images,
                labels,
                test_images,
                test_labels,
            } => {
                let train = load_idx(&resolve(images), &resolve(labels))?;
                match (test_images, test_labels) {
                    (Some(ti), Some(tl)) => {
                        let test = load_idx(&resolve(ti), &resolve(tl))?;
                        concat_split(train, test)?
                    }
                    (None, None) => train,
                    _ => return Err(Error::Config("test_images and test_labels go together".into())),
                }
            }
        };
        match self.test_fraction {
            Some(_) if ds.split_tags().is_some() => Err(Error::Config(
                "test_fraction given for a source that already has a test part".into(),
            )),
            Some(f) => split_dataset(&ds, f, self.split_seed, self.stratified),
            None => Ok(ds),
        }
    }
}

fn concat_split(train: Dataset, test: Dataset) -> Result<Dataset> {
    if train.dim() != test.dim() {
        return Err(Error::Data("train and test images differ in size".into()));
    }
    let classes = train.num_classes().max(test.num_classes());
    let mut features = train.features().to_vec();
    features.extend_from_slice(test.features());
    let mut labels = train.labels().to_vec();
    labels.extend_from_slice(test.labels());
    let tags = std::iter::repeat_n(Split::Train, train.len())
        .chain(std::iter::repeat_n(Split::Test, test.len()))
        .collect();
    let provenance = format!("{} + {}", train.provenance(), test.provenance());
    Dataset::new(features, train.dim(), labels, classes, provenance)?.with_split(tags)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
}

fn default_l2() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegConfig {
    #[serde(default = "default_l2")]
    pub l2: f64,
}

impl Default for RegConfig {
    fn default() -> Self {
        RegConfig { l2: default_l2() }
    }
}

fn default_config_id() -> String {
    "run".into()
}

fn default_epochs() -> usize {
    20
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_eval_every() -> usize {
    1
}

/// One experiment: data, objective, optimizer and the seeds to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_config_id")]
    pub config_id: String,
    pub dataset: DatasetConfig,
    pub model: ModelSpec,
    pub loss: LossConfig,
    #[serde(default)]
    pub reg: RegConfig,
    pub opt: OptimizerSpec,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Emit a record every this many epochs (the last epoch always).
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Directory that relative data paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_at(path))?;
        let mut cfg = RunConfig::from_toml_str(&text, overrides)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.opt.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if !(self.reg.l2 >= 0.0) {
            return Err(Error::Config(format!("reg.l2 must be >= 0, got {}", self.reg.l2)));
        }
        Ok(())
    }

    /// Objective for data of width `d_in` with `classes` labels.
    pub fn objective(&self, d_in: usize, classes: usize) -> Result<PerSampleObjective> {
        let d_out = if self.loss.kind == LossKind::BinaryCrossEntropy {
            1
        } else {
            classes
        };
        PerSampleObjective::new(self.model.clone(), self.loss.kind, self.reg.l2, d_in, d_out)
    }
}

/// Sets `a.b.c = value` in a TOML table. The value is read as TOML when it
/// parses as such and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path {key:?} crosses non-table {p:?}")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::{OptimizerKind, QRule};

    const MINIMAL: &str = r#"
        [dataset.source]
        kind = "rings"
        [model]
        kind = "linear"
        [loss]
        kind = "cross-entropy"
        [opt]
        kind = "osgd"
    "#;

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::from_toml_str(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.reg.l2, 1e-4);
        assert_eq!(cfg.opt.batch_size, 64);
        assert_eq!(cfg.opt.q, QRule::Adaptive);
        assert_eq!(cfg.seeds.len(), 10);
        assert!(cfg.dataset.stratified);
    }

    #[test]
    fn overrides_apply_and_roundtrip() {
        let cfg = RunConfig::from_toml_str(
            MINIMAL,
            &[
                "opt.q=fixed:4".into(),
                "opt.kind=\"sgd\"".into(),
                "opt.lr=0.5".into(),
                "seeds=[3, 4]".into(),
                "model.kind=mlp".into(),
                "model.hidden=[8]".into(),
                "model.activation=tanh".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.opt.q, QRule::Fixed(4));
        assert_eq!(cfg.opt.kind, OptimizerKind::Sgd);
        assert_eq!(cfg.opt.lr, 0.5);
        assert_eq!(cfg.seeds, vec![3, 4]);
        let again = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap(), &[]).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn bad_configs_rejected() {
        assert!(RunConfig::from_toml_str(MINIMAL, &["seeds=[]".into()]).is_err());
        assert!(RunConfig::from_toml_str(MINIMAL, &["opt.q=fixed:100".into()]).is_err());
        assert!(RunConfig::from_toml_str(MINIMAL, &["opt.bogus=1".into()]).is_err());
        assert!(RunConfig::from_toml_str(MINIMAL, &["novalue".into()]).is_err());
        assert!(RunConfig::from_toml_str(MINIMAL, &["opt.kind.x=1".into()]).is_err());
    }
}
