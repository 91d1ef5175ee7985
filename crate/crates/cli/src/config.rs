//! Flat `key = value` experiment configuration with dotted keys.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use seqratio::losses::LlrLossKind;
use seqratio::model::TrainConfig;
use seqratio::oracle::GaussianSource;
use seqratio::tandem::TandemFormula;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub source_classes: usize,
    pub source_dim: usize,
    pub source_separation: f64,
    pub source_sigma: f64,
    pub data_sequences: usize,
    pub data_length: usize,
    pub model_order: usize,
    pub model_formula: TandemFormula,
    pub model_hidden: usize,
    pub model_prior_ratio: bool,
    pub train_loss: String,
    pub train_beta: f64,
    pub train_penalty: f64,
    pub train_gamma: f64,
    pub train_multiplet: bool,
    pub train_learning_rate: f64,
    pub train_weight_decay: f64,
    pub train_batch_size: usize,
    pub train_iterations: usize,
    pub eval_thresholds: usize,
    pub compare_losses: Vec<String>,
    pub compare_seeds: Vec<u64>,
    pub compare_train_sequences: usize,
    pub compare_valid_sequences: usize,
    pub compare_valid_seed: u64,
    pub compare_multiplet: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            seed: None,
            source_classes: 3,
            source_dim: 2,
            source_separation: 1.0,
            source_sigma: 1.0,
            data_sequences: 2000,
            data_length: 10,
            model_order: t.order,
            model_formula: t.formula,
            model_hidden: t.hidden,
            model_prior_ratio: t.include_prior_ratio,
            train_loss: "lsel".into(),
            train_beta: 0.99,
            train_penalty: 1.0,
            train_gamma: t.gamma,
            train_multiplet: t.use_multiplet,
            train_learning_rate: t.learning_rate,
            train_weight_decay: t.weight_decay,
            train_batch_size: t.batch_size,
            train_iterations: t.iterations,
            eval_thresholds: 50,
            compare_losses: vec!["lsel".into(), "lsif".into(), "dskl".into()],
            compare_seeds: vec![1, 2, 3],
            compare_train_sequences: 2000,
            compare_valid_sequences: 2000,
            compare_valid_seed: 1_000_003,
            compare_multiplet: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> CliResult<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

pub fn parse_formula(value: &str) -> CliResult<TandemFormula> {
    match value {
        "tandem" => Ok(TandemFormula::Tandem),
        "tandemwo" => Ok(TandemFormula::TandemWithOblivion),
        other => Err(CliError::Config(format!(
            "unknown formula `{other}` (expected tandem or tandemwo)"
        ))),
    }
}

fn formula_name(f: TandemFormula) -> &'static str {
    match f {
        TandemFormula::Tandem => "tandem",
        TandemFormula::TandemWithOblivion => "tandemwo",
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment; unknown and repeated keys are errors.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(CliError::Config(format!("line {}: `{key}` set twice", n + 1)));
            }
            cfg.set(key, value)?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        match key {
            "seed" => self.seed = Some(parse(key, value)?),
            "source.classes" => self.source_classes = parse(key, value)?,
            "source.dim" => self.source_dim = parse(key, value)?,
            "source.separation" => self.source_separation = parse(key, value)?,
            "source.sigma" => self.source_sigma = parse(key, value)?,
            "data.sequences" => self.data_sequences = parse(key, value)?,
            "data.length" => self.data_length = parse(key, value)?,
            "model.order" => self.model_order = parse(key, value)?,
            "model.formula" => self.model_formula = parse_formula(value)?,
            "model.hidden" => self.model_hidden = parse(key, value)?,
            "model.prior_ratio" => self.model_prior_ratio = parse(key, value)?,
            "train.loss" => self.train_loss = value.to_string(),
            "train.beta" => self.train_beta = parse(key, value)?,
            "train.penalty" => self.train_penalty = parse(key, value)?,
            "train.gamma" => self.train_gamma = parse(key, value)?,
            "train.multiplet" => self.train_multiplet = parse(key, value)?,
            "train.learning_rate" => self.train_learning_rate = parse(key, value)?,
            "train.weight_decay" => self.train_weight_decay = parse(key, value)?,
            "train.batch_size" => self.train_batch_size = parse(key, value)?,
            "train.iterations" => self.train_iterations = parse(key, value)?,
            "eval.thresholds" => self.eval_thresholds = parse(key, value)?,
            "compare.losses" => self.compare_losses = parse_list(key, value)?,
            "compare.seeds" => self.compare_seeds = parse_list(key, value)?,
            "compare.train_sequences" => self.compare_train_sequences = parse(key, value)?,
            "compare.valid_sequences" => self.compare_valid_sequences = parse(key, value)?,
            "compare.valid_seed" => self.compare_valid_seed = parse(key, value)?,
            "compare.multiplet" => self.compare_multiplet = parse(key, value)?,
            other => return Err(CliError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Checks that do not depend on the command.
    pub fn check(&self) -> CliResult<()> {
        self.source()?;
        self.loss()?;
        for name in &self.compare_losses {
            LlrLossKind::parse(name, self.train_beta, self.train_penalty)
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        if self.data_length == 0 || self.data_sequences == 0 {
            return Err(CliError::Config("data.sequences and data.length must be positive".into()));
        }
        if self.eval_thresholds < 2 {
            return Err(CliError::Config("eval.thresholds must be at least 2".into()));
        }
        Ok(())
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| CliError::Config("no seed: set `seed` in the config or pass --seed".into()))
    }

    pub fn source(&self) -> CliResult<GaussianSource> {
        GaussianSource::ring(
            self.source_classes,
            self.source_dim,
            self.source_separation,
            self.source_sigma,
        )
        .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn loss(&self) -> CliResult<LlrLossKind> {
        LlrLossKind::parse(&self.train_loss, self.train_beta, self.train_penalty)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let cfg = TrainConfig {
            order: self.model_order,
            formula: self.model_formula,
            include_prior_ratio: self.model_prior_ratio,
            gamma: self.train_gamma,
            use_multiplet: self.train_multiplet,
            learning_rate: self.train_learning_rate,
            weight_decay: self.train_weight_decay,
            batch_size: self.train_batch_size,
            iterations: self.train_iterations,
            seed: self.seed()?,
            hidden: self.model_hidden,
            llr_loss: self.loss()?,
        };
        let mut check = cfg;
        check.iterations = check.iterations.max(1);
        check.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[String]| v.join(",");
        if let Some(seed) = self.seed {
            writeln!(f, "seed = {seed}")?;
        }
        writeln!(f, "source.classes = {}", self.source_classes)?;
        writeln!(f, "source.dim = {}", self.source_dim)?;
        writeln!(f, "source.separation = {}", self.source_separation)?;
        writeln!(f, "source.sigma = {}", self.source_sigma)?;
        writeln!(f, "data.sequences = {}", self.data_sequences)?;
        writeln!(f, "data.length = {}", self.data_length)?;
        writeln!(f, "model.order = {}", self.model_order)?;
        writeln!(f, "model.formula = {}", formula_name(self.model_formula))?;
        writeln!(f, "model.hidden = {}", self.model_hidden)?;
        writeln!(f, "model.prior_ratio = {}", self.model_prior_ratio)?;
        writeln!(f, "train.loss = {}", self.train_loss)?;
        writeln!(f, "train.beta = {}", self.train_beta)?;
        writeln!(f, "train.penalty = {}", self.train_penalty)?;
        writeln!(f, "train.gamma = {}", self.train_gamma)?;
        writeln!(f, "train.multiplet = {}", self.train_multiplet)?;
        writeln!(f, "train.learning_rate = {}", self.train_learning_rate)?;
        writeln!(f, "train.weight_decay = {}", self.train_weight_decay)?;
        writeln!(f, "train.batch_size = {}", self.train_batch_size)?;
        writeln!(f, "train.iterations = {}", self.train_iterations)?;
        writeln!(f, "eval.thresholds = {}", self.eval_thresholds)?;
        writeln!(f, "compare.losses = {}", join(&self.compare_losses))?;
        let seeds: Vec<String> = self.compare_seeds.iter().map(u64::to_string).collect();
        writeln!(f, "compare.seeds = {}", join(&seeds))?;
        writeln!(f, "compare.train_sequences = {}", self.compare_train_sequences)?;
        writeln!(f, "compare.valid_sequences = {}", self.compare_valid_sequences)?;
        writeln!(f, "compare.valid_seed = {}", self.compare_valid_seed)?;
        writeln!(f, "compare.multiplet = {}", self.compare_multiplet)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_text() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = Some(42);
        cfg.model_formula = TandemFormula::TandemWithOblivion;
        cfg.compare_seeds = vec![4, 5];
        cfg.source_separation = 0.1;
        assert_eq!(ExperimentConfig::parse(&cfg.to_string()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = ExperimentConfig::parse("# header\n\nseed = 3  # trailing\nmodel.order=2\n").unwrap();
        assert_eq!(cfg.seed, Some(3));
        assert_eq!(cfg.model_order, 2);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "model.ordr = 2",
            "seed = 1\nseed = 2",
            "seed = x",
            "just text",
            "train.loss = hinge",
            "compare.losses = lsel,nope",
            "model.formula = both",
            "eval.thresholds = 1",
            "source.sigma = 0",
        ] {
            assert!(
                matches!(ExperimentConfig::parse(text), Err(CliError::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn seed_is_required_for_training() {
        let cfg = ExperimentConfig::default();
        assert!(matches!(cfg.train_config(), Err(CliError::Config(_))));
        let cfg = ExperimentConfig { seed: Some(1), ..cfg };
        assert_eq!(cfg.train_config().unwrap().seed, 1);
    }
}
