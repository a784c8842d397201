//! Flat `key = value` experiment configuration.
//!
//! Every key has a default and [`ExperimentConfig::to_text`] writes all of
//! them, so a saved config reproduces a run on its own. Keys prefixed with
//! `synth.` describe the generated stream used when `dataset` is empty;
//! `sweep.` keys list the grid for the sweep command.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{load_sequence, synth_stream, LabelWeights, SynthStreamConfig, TaskSequence};
use crate::model::TrainPlan;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Task-sequence directory; `None` means generate from `synth`.
    pub dataset: Option<PathBuf>,
    pub synth: SynthStreamConfig,
    pub plan: TrainPlan,
    pub sweep_channels: Vec<usize>,
    /// Selection ratios as fractions in (0, 1].
    pub sweep_ratios: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            synth: SynthStreamConfig::default(),
            plan: TrainPlan::default(),
            sweep_channels: vec![2, 4, 6, 8],
            sweep_ratios: vec![0.2, 0.5, 0.7, 0.9],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items = value
        .split(',')
        .map(|v| parse(key, v.trim()))
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("`{key}`: empty list")));
    }
    Ok(items)
}

fn parse_auto(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn auto(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".to_string(), |v| v.to_string())
}

impl ExperimentConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.plan;
        let s = &mut self.synth;
        match key {
            "dataset" => self.dataset = (!value.is_empty()).then(|| PathBuf::from(value)),
            "seed" => p.seed = parse(key, value)?,
            "baseline" => p.baseline = value.parse()?,
            "ablation" => p.ablation = value.parse()?,
            "epochs" => p.epochs_per_task = parse(key, value)?,
            "lr" => p.adam.lr = parse(key, value)?,
            "beta1" => p.adam.beta1 = parse(key, value)?,
            "beta2" => p.adam.beta2 = parse(key, value)?,
            "adam_eps" => p.adam.eps = parse(key, value)?,
            "channels" => p.channels = parse(key, value)?,
            "stack" => p.stack = parse(key, value)?,
            "d_enc" => p.d_enc = parse(key, value)?,
            "channel_dim" => p.channel_dim = parse(key, value)?,
            "d_hid" => p.d_hid = parse_auto(key, value)?,
            "backbone_width" => p.backbone_width = parse_auto(key, value)?,
            "backbone_layers" => p.backbone_layers = parse(key, value)?,
            "select_ratio" => p.select_pct = 100.0 * parse::<f64>(key, value)?,
            "leaky_slope" => p.leaky_slope = parse(key, value)?,
            "score_init" => p.score_init = parse(key, value)?,
            "bias" => p.bias = parse_bool(key, value)?,
            "early_keep" => p.early_keep = parse_bool(key, value)?,
            "deterministic" => p.deterministic = parse_bool(key, value)?,
            "synth.seed" => s.seed = parse(key, value)?,
            "synth.num_tasks" => s.num_tasks = parse(key, value)?,
            "synth.nodes_per_task" => s.nodes_per_task = parse(key, value)?,
            "synth.num_relations" => s.num_relations = parse(key, value)?,
            "synth.num_classes" => s.num_classes = parse(key, value)?,
            "synth.feature_dim" => s.feature_dim = parse(key, value)?,
            "synth.edge_prob" => s.edge_prob = parse_list(key, value)?,
            "synth.background_edge_prob" => s.background_edge_prob = parse(key, value)?,
            "synth.affinity_concentration" => s.affinity_concentration = parse(key, value)?,
            "synth.label_weights" => {
                s.label_weights = match value {
                    "random" => LabelWeights::Random,
                    "shared" => LabelWeights::Shared,
                    _ => {
                        return Err(Error::Config(format!(
                            "`{key}`: expected random or shared, got `{value}`"
                        )))
                    }
                }
            }
            "synth.relation_gain" => s.relation_gain = parse(key, value)?,
            "synth.signal_gain" => s.signal_gain = parse(key, value)?,
            "synth.relation_feature_scale" => s.relation_feature_scale = parse(key, value)?,
            "synth.class_feature_scale" => s.class_feature_scale = parse(key, value)?,
            "synth.feature_noise" => s.feature_noise = parse(key, value)?,
            "synth.drift" => s.drift = parse(key, value)?,
            "sweep.channels" => self.sweep_channels = parse_list(key, value)?,
            "sweep.ratios" => self.sweep_ratios = parse_list(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str, source: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected `key = value`", source.display(), i + 1))
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}:{}: {m}", source.display(), i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Every key with its resolved value, one per line, readable by [`apply_text`](Self::apply_text).
    pub fn to_text(&self) -> String {
        let p = &self.plan;
        let s = &self.synth;
        let label_weights = match s.label_weights {
            LabelWeights::Shared => "shared",
            _ => "random",
        };
        let lines: Vec<(&str, String)> = vec![
            ("dataset", self.dataset.as_ref().map_or(String::new(), |d| d.display().to_string())),
            ("seed", p.seed.to_string()),
            ("baseline", p.baseline.to_string()),
            ("ablation", p.ablation.to_string()),
            ("epochs", p.epochs_per_task.to_string()),
            ("lr", p.adam.lr.to_string()),
            ("beta1", p.adam.beta1.to_string()),
            ("beta2", p.adam.beta2.to_string()),
            ("adam_eps", p.adam.eps.to_string()),
            ("channels", p.channels.to_string()),
            ("stack", p.stack.to_string()),
            ("d_enc", p.d_enc.to_string()),
            ("channel_dim", p.channel_dim.to_string()),
            ("d_hid", auto(p.d_hid)),
            ("backbone_width", auto(p.backbone_width)),
            ("backbone_layers", p.backbone_layers.to_string()),
            ("select_ratio", (p.select_pct / 100.0).to_string()),
            ("leaky_slope", p.leaky_slope.to_string()),
            ("score_init", p.score_init.to_string()),
            ("bias", p.bias.to_string()),
            ("early_keep", p.early_keep.to_string()),
            ("deterministic", p.deterministic.to_string()),
            ("synth.seed", s.seed.to_string()),
            ("synth.num_tasks", s.num_tasks.to_string()),
            ("synth.nodes_per_task", s.nodes_per_task.to_string()),
            ("synth.num_relations", s.num_relations.to_string()),
            ("synth.num_classes", s.num_classes.to_string()),
            ("synth.feature_dim", s.feature_dim.to_string()),
            ("synth.edge_prob", join(&s.edge_prob)),
            ("synth.background_edge_prob", s.background_edge_prob.to_string()),
            ("synth.affinity_concentration", s.affinity_concentration.to_string()),
            ("synth.label_weights", label_weights.to_string()),
            ("synth.relation_gain", s.relation_gain.to_string()),
            ("synth.signal_gain", s.signal_gain.to_string()),
            ("synth.relation_feature_scale", s.relation_feature_scale.to_string()),
            ("synth.class_feature_scale", s.class_feature_scale.to_string()),
            ("synth.feature_noise", s.feature_noise.to_string()),
            ("synth.drift", s.drift.to_string()),
            ("sweep.channels", join(&self.sweep_channels)),
            ("sweep.ratios", join(&self.sweep_ratios)),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        if let LabelWeights::Explicit(_) = self.synth.label_weights {
            return Err(Error::Config("explicit label weights cannot be expressed in a config file".into()));
        }
        if self.sweep_channels.contains(&0) {
            return Err(Error::Config("sweep.channels entries must be positive".into()));
        }
        if self.sweep_ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(Error::Config("sweep.ratios entries must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Loads the dataset directory or generates the configured stream.
    /// Relative dataset paths resolve against `base`.
    pub fn load_sequence(&self, base: &Path) -> Result<TaskSequence> {
        match &self.dataset {
            Some(dir) => load_sequence(&base.join(dir)),
            None => Ok(synth_stream(&self.synth)?.sequence),
        }
    }
}
