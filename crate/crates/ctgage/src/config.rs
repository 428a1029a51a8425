//! Merged run configuration: a flat `key=value` file with dotted section
//! prefixes (e.g. `train.lr0=1e-3`), command-line overrides applied on
//! top, an effective-config echo, and a run manifest with input hashes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::net1d::{Net1DConfig, StageConfig};
use crate::synth::SynthSpec;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct StatsOptions {
    /// Gap bin width in days for risk curves and heatmaps.
    pub bin_width: f64,
}

impl Default for StatsOptions {
    fn default() -> Self {
        StatsOptions { bin_width: 7.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub synth: SynthSpec,
    pub augment: AugmentConfig,
    pub model: Net1DConfig,
    pub weights: LossWeights,
    pub train: TrainConfig,
    pub stats: StatsOptions,
    /// Prior histogram step in days and probability floor.
    pub prior_step: f64,
    pub prior_epsilon: f64,
    /// Subject-level split proportions.
    pub split_ratios: (u32, u32, u32),
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            synth: SynthSpec::default(),
            augment: AugmentConfig::default(),
            model: Net1DConfig::default(),
            weights: LossWeights::default(),
            train: TrainConfig::default(),
            stats: StatsOptions::default(),
            prior_step: 1.0,
            prior_epsilon: 1e-6,
            split_ratios: (8, 1, 1),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("config key {key}: cannot parse {v:?}")))
}

/// Stage list syntax: `blocks:channels:kernel:stride` joined by `;`,
/// e.g. `2:16:7:4;2:32:5:2`.
fn parse_stages(v: &str) -> Result<Vec<StageConfig>> {
    let mut out = Vec::new();
    for part in v.split(';').filter(|p| !p.trim().is_empty()) {
        let f: Vec<&str> = part.trim().split(':').collect();
        if f.len() != 4 {
            return Err(Error::Parse(format!(
                "model.stages entry {part:?}: want blocks:channels:kernel:stride"
            )));
        }
        out.push(StageConfig {
            blocks: parse_num("model.stages", f[0])?,
            channels: parse_num("model.stages", f[1])?,
            kernel: parse_num("model.stages", f[2])?,
            stride: parse_num("model.stages", f[3])?,
        });
    }
    Ok(out)
}

fn stages_to_string(stages: &[StageConfig]) -> String {
    stages
        .iter()
        .map(|s| format!("{}:{}:{}:{}", s.blocks, s.channels, s.kernel, s.stride))
        .collect::<Vec<_>>()
        .join(";")
}

impl RunConfig {
    /// Apply one dotted `key=value` pair. Unknown keys are errors so typos
    /// fail loudly before any work starts.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            // synthetic cohort
            "synth.n_subjects" => self.synth.n_subjects = parse_num(key, v)?,
            "synth.seed" => self.synth.seed = parse_num(key, v)?,
            "synth.sessions_min" => self.synth.sessions_per_subject.0 = parse_num(key, v)?,
            "synth.sessions_max" => self.synth.sessions_per_subject.1 = parse_num(key, v)?,
            "synth.age_min" => self.synth.age_range_days.0 = parse_num(key, v)?,
            "synth.age_max" => self.synth.age_range_days.1 = parse_num(key, v)?,
            "synth.baseline_at_210" => self.synth.baseline_at_210 = parse_num(key, v)?,
            "synth.baseline_slope" => self.synth.baseline_slope = parse_num(key, v)?,
            "synth.stv_base" => self.synth.stv_base = parse_num(key, v)?,
            "synth.stv_slope" => self.synth.stv_slope = parse_num(key, v)?,
            "synth.accel_rate" => self.synth.accel_rate = parse_num(key, v)?,
            "synth.decel_rate" => self.synth.decel_rate = parse_num(key, v)?,
            "synth.noise_sd" => self.synth.noise_sd = parse_num(key, v)?,
            "synth.disease_fraction" => self.synth.disease_fraction = parse_num(key, v)?,
            "synth.short_fraction" => self.synth.short_fraction = parse_num(key, v)?,
            // augmentation
            "augment.window_len" => self.augment.window_len = parse_num(key, v)?,
            "augment.stride" => self.augment.stride = parse_num(key, v)?,
            "augment.warp_min" => self.augment.warp_range.0 = parse_num(key, v)?,
            "augment.warp_max" => self.augment.warp_range.1 = parse_num(key, v)?,
            "augment.noise_sd" => self.augment.noise_sd = parse_num(key, v)?,
            "augment.density_bins" => self.augment.density_bins = parse_num(key, v)?,
            "augment.sparse_multiplier_cap" => {
                self.augment.sparse_multiplier_cap = parse_num(key, v)?
            }
            // model
            "model.in_channels" => self.model.in_channels = parse_num(key, v)?,
            "model.stem_channels" => self.model.stem_channels = parse_num(key, v)?,
            "model.stem_kernel" => self.model.stem_kernel = parse_num(key, v)?,
            "model.stem_stride" => self.model.stem_stride = parse_num(key, v)?,
            "model.se_reduction" => self.model.se_reduction = parse_num(key, v)?,
            "model.head_hidden" => self.model.head_hidden = parse_num(key, v)?,
            "model.bn_momentum" => self.model.bn_momentum = parse_num(key, v)?,
            "model.stages" => self.model.stages = parse_stages(v)?,
            "model.preset" => {
                self.model = match v {
                    "default" => Net1DConfig::default(),
                    "small" => Net1DConfig::small(),
                    other => {
                        return Err(Error::Parse(format!("model.preset: unknown preset {other:?}")))
                    }
                }
            }
            // loss
            "loss.lambda_dist" => self.weights.lambda_dist = parse_num(key, v)?,
            "loss.lambda_point" => self.weights.lambda_point = parse_num(key, v)?,
            "loss.lambda_slope" => self.weights.lambda_slope = parse_num(key, v)?,
            "loss.eps_var" => self.weights.eps_var = parse_num(key, v)?,
            "loss.prior_step" => self.prior_step = parse_num(key, v)?,
            "loss.prior_epsilon" => self.prior_epsilon = parse_num(key, v)?,
            // trainer
            "train.lr0" => self.train.lr0 = parse_num(key, v)?,
            "train.l2_lambda" => self.train.l2_lambda = parse_num(key, v)?,
            "train.batch_size" => self.train.batch_size = parse_num(key, v)?,
            "train.max_epochs" => self.train.max_epochs = parse_num(key, v)?,
            "train.early_stop_patience" => self.train.early_stop_patience = parse_num(key, v)?,
            "train.warm_restart_t0" => self.train.warm_restart_t0 = parse_num(key, v)?,
            "train.warm_restart_t_mult" => self.train.warm_restart_t_mult = parse_num(key, v)?,
            "train.adam_beta1" => self.train.adam_beta1 = parse_num(key, v)?,
            "train.adam_beta2" => self.train.adam_beta2 = parse_num(key, v)?,
            "train.adam_eps" => self.train.adam_eps = parse_num(key, v)?,
            "train.temperature0" => self.train.temperature0 = parse_num(key, v)?,
            "train.seed" => self.train.seed = parse_num(key, v)?,
            // statistics
            "stats.bin_width" => self.stats.bin_width = parse_num(key, v)?,
            // split
            "split.train" => self.split_ratios.0 = parse_num(key, v)?,
            "split.val" => self.split_ratios.1 = parse_num(key, v)?,
            "split.test" => self.split_ratios.2 = parse_num(key, v)?,
            _ => {
                if let Some(rest) = key.strip_prefix("synth.planted_gap.") {
                    self.synth
                        .planted_gap_days
                        .insert(rest.to_string(), parse_num(key, v)?);
                } else if let Some(rest) = key.strip_prefix("synth.outcome_logit.") {
                    let parts: Vec<&str> = v.split(':').collect();
                    if parts.len() != 2 {
                        return Err(Error::Parse(format!(
                            "config key {key}: want intercept:slope, got {v:?}"
                        )));
                    }
                    self.synth.outcome_logit.insert(
                        rest.to_string(),
                        (parse_num(key, parts[0])?, parse_num(key, parts[1])?),
                    );
                } else {
                    return Err(Error::Config(format!("unknown config key {key:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("config line {}: missing '=': {raw:?}", lineno + 1))
            })?;
            self.apply(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.augment.validate()?;
        self.model.validate()?;
        self.weights.validate()?;
        self.train.validate()?;
        if self.prior_step <= 0.0 || self.prior_epsilon <= 0.0 {
            return Err(Error::Config("prior step and epsilon must be positive".into()));
        }
        if self.stats.bin_width <= 0.0 {
            return Err(Error::Config("stats.bin_width must be positive".into()));
        }
        if self.split_ratios.0 == 0 || self.split_ratios.1 == 0 || self.split_ratios.2 == 0 {
            return Err(Error::Config("split ratios must be positive".into()));
        }
        Ok(())
    }

    /// The effective configuration in the same flat format it is read
    /// from; applying the echo to a default config reproduces `self`.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(w, "# effective configuration");
        let _ = writeln!(w, "synth.n_subjects={}", self.synth.n_subjects);
        let _ = writeln!(w, "synth.seed={}", self.synth.seed);
        let _ = writeln!(w, "synth.sessions_min={}", self.synth.sessions_per_subject.0);
        let _ = writeln!(w, "synth.sessions_max={}", self.synth.sessions_per_subject.1);
        let _ = writeln!(w, "synth.age_min={}", self.synth.age_range_days.0);
        let _ = writeln!(w, "synth.age_max={}", self.synth.age_range_days.1);
        let _ = writeln!(w, "synth.baseline_at_210={}", self.synth.baseline_at_210);
        let _ = writeln!(w, "synth.baseline_slope={}", self.synth.baseline_slope);
        let _ = writeln!(w, "synth.stv_base={}", self.synth.stv_base);
        let _ = writeln!(w, "synth.stv_slope={}", self.synth.stv_slope);
        let _ = writeln!(w, "synth.accel_rate={}", self.synth.accel_rate);
        let _ = writeln!(w, "synth.decel_rate={}", self.synth.decel_rate);
        let _ = writeln!(w, "synth.noise_sd={}", self.synth.noise_sd);
        let _ = writeln!(w, "synth.disease_fraction={}", self.synth.disease_fraction);
        let _ = writeln!(w, "synth.short_fraction={}", self.synth.short_fraction);
        for (k, gap) in &self.synth.planted_gap_days {
            let _ = writeln!(w, "synth.planted_gap.{k}={gap}");
        }
        for (k, (a, b)) in &self.synth.outcome_logit {
            let _ = writeln!(w, "synth.outcome_logit.{k}={a}:{b}");
        }
        let _ = writeln!(w, "augment.window_len={}", self.augment.window_len);
        let _ = writeln!(w, "augment.stride={}", self.augment.stride);
        let _ = writeln!(w, "augment.warp_min={}", self.augment.warp_range.0);
        let _ = writeln!(w, "augment.warp_max={}", self.augment.warp_range.1);
        let _ = writeln!(w, "augment.noise_sd={}", self.augment.noise_sd);
        let _ = writeln!(w, "augment.density_bins={}", self.augment.density_bins);
        let _ = writeln!(
            w,
            "augment.sparse_multiplier_cap={}",
            self.augment.sparse_multiplier_cap
        );
        let _ = writeln!(w, "model.in_channels={}", self.model.in_channels);
        let _ = writeln!(w, "model.stem_channels={}", self.model.stem_channels);
        let _ = writeln!(w, "model.stem_kernel={}", self.model.stem_kernel);
        let _ = writeln!(w, "model.stem_stride={}", self.model.stem_stride);
        let _ = writeln!(w, "model.stages={}", stages_to_string(&self.model.stages));
        let _ = writeln!(w, "model.se_reduction={}", self.model.se_reduction);
        let _ = writeln!(w, "model.head_hidden={}", self.model.head_hidden);
        let _ = writeln!(w, "model.bn_momentum={}", self.model.bn_momentum);
        let _ = writeln!(w, "loss.lambda_dist={}", self.weights.lambda_dist);
        let _ = writeln!(w, "loss.lambda_point={}", self.weights.lambda_point);
        let _ = writeln!(w, "loss.lambda_slope={}", self.weights.lambda_slope);
        let _ = writeln!(w, "loss.eps_var={}", self.weights.eps_var);
        let _ = writeln!(w, "loss.prior_step={}", self.prior_step);
        let _ = writeln!(w, "loss.prior_epsilon={}", self.prior_epsilon);
        let _ = writeln!(w, "train.lr0={}", self.train.lr0);
        let _ = writeln!(w, "train.l2_lambda={}", self.train.l2_lambda);
        let _ = writeln!(w, "train.batch_size={}", self.train.batch_size);
        let _ = writeln!(w, "train.max_epochs={}", self.train.max_epochs);
        let _ = writeln!(w, "train.early_stop_patience={}", self.train.early_stop_patience);
        let _ = writeln!(w, "train.warm_restart_t0={}", self.train.warm_restart_t0);
        let _ = writeln!(w, "train.warm_restart_t_mult={}", self.train.warm_restart_t_mult);
        let _ = writeln!(w, "train.adam_beta1={}", self.train.adam_beta1);
        let _ = writeln!(w, "train.adam_beta2={}", self.train.adam_beta2);
        let _ = writeln!(w, "train.adam_eps={}", self.train.adam_eps);
        let _ = writeln!(w, "train.temperature0={}", self.train.temperature0);
        let _ = writeln!(w, "train.seed={}", self.train.seed);
        let _ = writeln!(w, "stats.bin_width={}", self.stats.bin_width);
        let _ = writeln!(w, "split.train={}", self.split_ratios.0);
        let _ = writeln!(w, "split.val={}", self.split_ratios.1);
        let _ = writeln!(w, "split.test={}", self.split_ratios.2);
        s
    }
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

/// Run manifest written alongside every subcommand's outputs: tool
/// version, SHA-256 of each input file, and the effective config echo.
pub fn write_manifest(
    out_dir: impl AsRef<Path>,
    inputs: &[&Path],
    config_echo: &str,
) -> Result<()> {
    let mut input_hashes = BTreeMap::new();
    for p in inputs {
        input_hashes.insert(p.display().to_string(), sha256_file(p)?);
    }
    let manifest = serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "inputs": input_hashes,
        "config": config_echo,
    });
    let out = out_dir.as_ref().join("manifest.json");
    std::fs::write(&out, serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| Error::io(out.display().to_string(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_dotted_keys() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "# comment\n\ntrain.lr0=1e-4\nsynth.n_subjects = 42\nmodel.stages=1:8:5:4;1:16:5:4\nsynth.planted_gap.premature=25\n",
        )
        .unwrap();
        assert_eq!(cfg.train.lr0, 1e-4);
        assert_eq!(cfg.synth.n_subjects, 42);
        assert_eq!(cfg.model.stages.len(), 2);
        assert_eq!(cfg.model.stages[1].channels, 16);
        assert_eq!(cfg.synth.planted_gap_days["premature"], 25.0);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply("train.learning_rate", "1").is_err());
        assert!(cfg.apply_text("no_equals_sign\n").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("train.lr0=5e-4\nmodel.preset=small\nsynth.planted_gap.gdm=-25\nsynth.outcome_logit.gdm=-2:0.05\n")
            .unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.echo()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn manifest_contains_hash() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, "hello").unwrap();
        write_manifest(dir.path(), &[input.as_path()], "train.lr0=0.001\n").unwrap();
        let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(
            v["inputs"][input.display().to_string()].as_str().unwrap(),
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        assert!(v["config"].as_str().unwrap().contains("train.lr0"));
    }
}
