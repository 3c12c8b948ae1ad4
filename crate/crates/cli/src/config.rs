//! Layered settings: command-line flags, then the TOML config file, then defaults.

use artikit::orchestrator::Budgets;
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::time::Duration;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub remote: RemoteSection,
    pub budgets: Option<Budgets>,
    pub verify: VerifySection,
    pub export: ExportSection,
    pub store: StoreSection,
    pub pipeline: PipelineSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteSection {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub templates: Option<PathBuf>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub frames_per_dof: Option<usize>,
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSection {
    pub resolution: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreSection {
    pub dir: Option<PathBuf>,
    pub k_good: Option<usize>,
    pub k_issue: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub fixtures: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub parallel: Option<bool>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// Resolved settings shared by all subcommands.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub templates: Option<PathBuf>,
    pub timeout: Duration,
    pub budgets: Budgets,
    pub frames_per_dof: usize,
    pub samples: usize,
    pub resolution: usize,
    pub store_dir: Option<PathBuf>,
    pub k_good: usize,
    pub k_issue: usize,
    pub fixtures: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub parallel: bool,
    pub verbosity: u8,
}

/// Values given on the command line; `None` defers to the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub templates: Option<PathBuf>,
    pub frames_per_dof: Option<usize>,
    pub samples: Option<usize>,
    pub resolution: Option<usize>,
    pub store_dir: Option<PathBuf>,
    pub fixtures: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub sequential: bool,
}

impl CliConfig {
    pub fn resolve(path: Option<PathBuf>, file: FileConfig, flags: Overrides, verbosity: u8) -> Self {
        use artikit::assembler::DEFAULT_FRAMES_PER_DOF;
        use artikit::mesh::DEFAULT_RESOLUTION;
        use artikit::store::{DEFAULT_K_GOOD, DEFAULT_K_ISSUE};
        use artikit::verifier::DEFAULT_SAMPLES;
        Self {
            config_path: path,
            seed: flags.seed.or(file.seed).unwrap_or(0),
            endpoint: flags.endpoint.or(file.remote.endpoint),
            model: flags.model.or(file.remote.model),
            templates: flags.templates.or(file.remote.templates),
            timeout: file.remote.timeout_secs.map(Duration::from_secs).unwrap_or(DEFAULT_TIMEOUT),
            budgets: file.budgets.unwrap_or_default(),
            frames_per_dof: flags.frames_per_dof.or(file.verify.frames_per_dof).unwrap_or(DEFAULT_FRAMES_PER_DOF),
            samples: flags.samples.or(file.verify.samples).unwrap_or(DEFAULT_SAMPLES),
            resolution: flags.resolution.or(file.export.resolution).unwrap_or(DEFAULT_RESOLUTION),
            store_dir: flags.store_dir.or(file.store.dir),
            k_good: file.store.k_good.unwrap_or(DEFAULT_K_GOOD),
            k_issue: file.store.k_issue.unwrap_or(DEFAULT_K_ISSUE),
            fixtures: flags.fixtures.or(file.pipeline.fixtures),
            out_dir: flags.out_dir.or(file.pipeline.out),
            parallel: !flags.sequential && file.pipeline.parallel.unwrap_or(true),
            verbosity,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = FileConfig::parse(
            "seed = 3\n[verify]\nsamples = 512\nframes_per_dof = 3\n[budgets]\ncode_regens = 4\n[remote]\nendpoint = \"http://x\"\n",
        )
        .unwrap();
        let flags = Overrides { samples: Some(1024), ..Default::default() };
        let c = CliConfig::resolve(None, file, flags, 0);
        assert_eq!(c.seed, 3);
        assert_eq!(c.samples, 1024);
        assert_eq!(c.frames_per_dof, 3);
        assert_eq!(c.budgets, Budgets { exec_retries: 5, code_regens: 4, design_rollbacks: 2 });
        assert_eq!(c.endpoint.as_deref(), Some("http://x"));
        assert_eq!(c.resolution, artikit::mesh::DEFAULT_RESOLUTION);
        assert!(c.parallel);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(FileConfig::parse("sead = 1").is_err());
        assert!(FileConfig::parse("[verify]\nframes = 2").is_err());
    }
}
