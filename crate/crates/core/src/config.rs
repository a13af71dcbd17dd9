//! Run configuration shared by every command, loaded from TOML.
//!
//! Every table is optional and falls back to its defaults. Unknown keys are
//! errors. Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::doe::DesignSpec;
use crate::error::{Error, Result};
use crate::fdc::{ConsensusTolerance, QualityBounds, ToleranceProfile};
use crate::gasel::GaConfig;
use crate::model::SplitCounts;
use crate::pretreat::MetricSetConfig;
use crate::regress::{FitConfig, Technique};
use crate::sim::{FaultKind, TruthSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Simulated or recorded dataset: manifest, regions, traces.
    pub dataset: PathBuf,
    /// Features, model bundle, reports and GA outputs.
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset: "dataset".into(),
            output: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub technique: Technique,
    pub max_lv: usize,
    pub fit: FitConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            technique: Technique::LinearPls,
            max_lv: 10,
            fit: FitConfig::default(),
        }
    }
}

/// Wafers appended after the designed experiment, run at the design center
/// with an optional injected fault and left out of every split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtraWafers {
    pub fault: FaultKind,
    pub count: usize,
}

impl Default for ExtraWafers {
    fn default() -> Self {
        ExtraWafers {
            fault: FaultKind::None,
            count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub design: DesignSpec,
    pub splits: SplitCounts,
    pub truth: TruthSpec,
    pub extra_wafers: Vec<ExtraWafers>,
    pub metrics: MetricSetConfig,
    pub model: ModelConfig,
    pub tolerance: ToleranceProfile,
    pub quality: QualityBounds,
    pub consensus: ConsensusTolerance,
    pub ga: GaConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            paths: Paths::default(),
            design: DesignSpec::default(),
            splits: SplitCounts::default(),
            truth: TruthSpec::default(),
            extra_wafers: Vec::new(),
            metrics: MetricSetConfig::default(),
            model: ModelConfig::default(),
            tolerance: ToleranceProfile::default(),
            quality: QualityBounds::default(),
            consensus: ConsensusTolerance::default(),
            ga: GaConfig::default(),
        }
    }
}

fn line_of(text: &str, offset: usize) -> u64 {
    text[..offset.min(text.len())].matches('\n').count() as u64 + 1
}

impl RunConfig {
    /// Parses TOML text; relative paths stay relative.
    pub fn parse(text: &str, origin: &Path) -> Result<RunConfig> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            msg: e.message().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Reads, validates and resolves paths against the file's directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = RunConfig::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base)?;
        Ok(config)
    }

    /// Anchors relative paths at `base` and checks each one can be created.
    pub fn resolve_paths(&mut self, base: &Path) -> Result<()> {
        for (name, p) in [("dataset", &mut self.paths.dataset), ("output", &mut self.paths.output)] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            let parent = p.parent().filter(|q| !q.as_os_str().is_empty()).unwrap_or(Path::new("."));
            if !parent.is_dir() {
                return Err(Error::Config(format!(
                    "paths.{name}: parent directory {} does not exist",
                    parent.display()
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let config = |e: Error| Error::Config(e.to_string());
        self.design.validate().map_err(config)?;
        if self.splits.total() > self.design.total_wafers {
            return Err(Error::Config(format!(
                "splits sum to {} but the design has {} wafers",
                self.splits.total(),
                self.design.total_wafers
            )));
        }
        if self.truth.oes_bins == 0 {
            return Err(Error::Config("truth.oes_bins must be positive".into()));
        }
        self.metrics.validate().map_err(config)?;
        if self.model.max_lv == 0 {
            return Err(Error::Config("model.max_lv must be at least 1".into()));
        }
        self.tolerance.validate().map_err(config)?;
        self.quality.validate().map_err(config)?;
        self.ga.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, recorded in bank manifests.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Factor;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::parse("", Path::new("x.toml")).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn overrides_and_extra_wafers() {
        let text = r#"
seed = 9

[design]
total_wafers = 43

[splits]
train = 20
validation = 13
test = 10

[model]
technique = "NNPLS"
max_lv = 4

[metrics.Machine]
Al = ["max"]

[quality.lwr.global]
lower = 0.0
upper = 0.3

[quality.lwr.per_die]
5 = { lower = 0.0, upper = 0.25 }

[[extra_wafers]]
count = 2
fault = { type = "setpoint_offset", factor = "top_power", delta = 100.0 }

[[extra_wafers]]
"#;
        let c = RunConfig::parse(text, Path::new("x.toml")).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.design.total_wafers, 43);
        assert_eq!(c.model.technique, Technique::Nnpls);
        assert_eq!(c.quality.lwr.for_die(5).upper, 0.25);
        assert_eq!(c.quality.lwr.for_die(6).upper, 0.3);
        assert_eq!(
            c.extra_wafers[0].fault,
            FaultKind::SetpointOffset { factor: Factor::TopPower, delta: 100.0 }
        );
        assert_eq!(c.extra_wafers[0].count, 2);
        assert_eq!(c.extra_wafers[1], ExtraWafers::default());
        assert_ne!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn unknown_key_names_its_line() {
        let text = "seed = 1\n\n[model]\ntechnque = \"PCR\"\n";
        match RunConfig::parse(text, Path::new("x.toml")) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 4);
                assert!(msg.contains("technque"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inconsistent_sizes_are_config_errors() {
        let text = "[design]\ntotal_wafers = 43\n";
        assert!(matches!(RunConfig::parse(text, Path::new("x")), Err(Error::Config(_))));
        let text = "[ga]\nmutation_rate = 2.0\n";
        assert!(matches!(RunConfig::parse(text, Path::new("x")), Err(Error::Config(_))));
    }

    #[test]
    fn paths_resolve_against_the_config_directory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[paths]\ndataset = \"data\"\noutput = \"missing/out\"\n").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
        std::fs::write(&path, "[paths]\ndataset = \"data\"\n").unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.paths.dataset, dir.path().join("data"));
        assert_eq!(c.paths.output, dir.path().join("out"));
    }
}
