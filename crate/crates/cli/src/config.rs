//! Flat `key = value` experiment configuration.
//!
//! `#` starts a comment, blank lines are ignored, and `ellipse` may repeat.
//! Keys under `manifest.` and `result.` are skipped, so a run manifest can be
//! fed back in as a config.

use std::fmt::Write as _;
use std::path::PathBuf;

use acid_core::engine::AcidConfig;
use acid_core::MaskPattern;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },

    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid<T>(key: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid { key: key.to_string(), message: message.into() })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parses the text into entries without interpreting values.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("");
        if body.trim().is_empty() {
            continue;
        }
        let start = body.len() - body.trim_start().len();
        let Some(eq) = body.find('=') else {
            return Err(ConfigError::Parse { line, column: start + 1, message: "expected `key = value`".into() });
        };
        let key = body[..eq].trim();
        if key.is_empty() {
            return Err(ConfigError::Parse { line, column: start + 1, message: "missing key before `=`".into() });
        }
        if let Some(pos) = key.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-')) {
            return Err(ConfigError::Parse {
                line,
                column: start + pos + 1,
                message: format!("unexpected character {:?} in key", key[pos..].chars().next().unwrap_or(' ')),
            });
        }
        let value = body[eq + 1..].trim();
        if value.is_empty() {
            return Err(ConfigError::Parse { line, column: eq + 2, message: format!("missing value for `{key}`") });
        }
        out.push(Entry { key: key.to_string(), value: value.to_string(), line });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Reconstruct,
    Ablate,
    Sweep,
    AttackNet,
    AttackAcid,
    Contraction,
    NoiseStability,
}

impl Protocol {
    pub const ALL: [Protocol; 7] = [
        Protocol::Reconstruct,
        Protocol::Ablate,
        Protocol::Sweep,
        Protocol::AttackNet,
        Protocol::AttackAcid,
        Protocol::Contraction,
        Protocol::NoiseStability,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Reconstruct => "reconstruct",
            Protocol::Ablate => "ablate",
            Protocol::Sweep => "sweep",
            Protocol::AttackNet => "attack-net",
            Protocol::AttackAcid => "attack-acid",
            Protocol::Contraction => "contraction",
            Protocol::NoiseStability => "noise-stability",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Fourier,
    Radon,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    Adjoint,
    PseudoInverse,
    Zero,
    Automap,
}

impl OperatorKind {
    fn as_str(self) -> &'static str {
        match self {
            OperatorKind::Adjoint => "adjoint",
            OperatorKind::PseudoInverse => "pinv",
            OperatorKind::Zero => "zero",
            OperatorKind::Automap => "automap",
        }
    }
}

/// `cx cy a b rotation intensity`, all as fractions of the side except the
/// rotation (radians) and intensity.
pub type EllipseLine = [f64; 6];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub protocol: Protocol,
    pub size: usize,
    pub phantom_seed: u64,
    pub ellipse_count: usize,
    pub ellipses: Vec<EllipseLine>,
    pub phantom_file: Option<PathBuf>,
    pub insert_text: Option<String>,
    pub insert_bitmap: Option<PathBuf>,
    pub insert_row: usize,
    pub insert_col: usize,
    pub insert_intensity: f64,
    pub model: ModelKind,
    pub mask: MaskPattern,
    pub sampling_rate: f64,
    pub mask_seed: u64,
    pub views: usize,
    pub operator: OperatorKind,
    pub automap_blob: Option<PathBuf>,
    pub automap_hidden: Option<usize>,
    pub automap_init_seed: u64,
    pub train_pairs: usize,
    pub train_epochs: usize,
    pub train_step: f64,
    pub train_seed: u64,
    pub acid: AcidConfig,
    /// `None` means 1.0 for Fourier data and the phantom's dynamic range for Radon data.
    pub peak: Option<f64>,
    pub noise_sigma: f64,
    pub noise_seed: u64,
    pub ablation_seeds: Vec<u64>,
    pub sweep_rates: Vec<f64>,
    pub attack_gamma: f64,
    pub attack_step: f64,
    pub attack_momentum: f64,
    pub attack_iters: usize,
    pub attack_budget: Option<f64>,
    pub attack_budget_rel: f64,
    pub attack_seeds: Vec<u64>,
    pub contraction_sigmas: Vec<f64>,
    pub stability_draws: usize,
    pub stability_sigma: f64,
    pub stability_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment_id: "run".into(),
            protocol: Protocol::Reconstruct,
            size: 64,
            phantom_seed: 1,
            ellipse_count: 8,
            ellipses: Vec::new(),
            phantom_file: None,
            insert_text: None,
            insert_bitmap: None,
            insert_row: 2,
            insert_col: 2,
            insert_intensity: 1.0,
            model: ModelKind::Fourier,
            mask: MaskPattern::Gaussian2d,
            sampling_rate: 0.3,
            mask_seed: 7,
            views: 40,
            operator: OperatorKind::Adjoint,
            automap_blob: None,
            automap_hidden: None,
            automap_init_seed: 0,
            train_pairs: 200,
            train_epochs: 300,
            train_step: 0.5,
            train_seed: 1000,
            acid: AcidConfig::default(),
            peak: None,
            noise_sigma: 0.0,
            noise_seed: 11,
            ablation_seeds: vec![11],
            sweep_rates: vec![0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
            attack_gamma: 0.0,
            attack_step: 1.0,
            attack_momentum: 0.9,
            attack_iters: 30,
            attack_budget: None,
            attack_budget_rel: 0.05,
            attack_seeds: vec![0],
            contraction_sigmas: vec![0.2, 0.5, 0.8],
            stability_draws: 20,
            stability_sigma: 0.0588,
            stability_seed: 100,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| ConfigError::Invalid { key: key.into(), message: format!("`{v}`: {e}") })
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn boolean(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => invalid(key, format!("`{v}` is not a boolean")),
    }
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let entries = parse_entries(text)?;
        let mut cfg = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        let mut explicit_ellipses = false;
        for e in &entries {
            let (k, v) = (e.key.as_str(), e.value.as_str());
            if k.starts_with("manifest.") || k.starts_with("result.") {
                continue;
            }
            if k != "ellipse" {
                if seen.contains(&k) {
                    return Err(ConfigError::Parse { line: e.line, column: 1, message: format!("duplicate key `{k}`") });
                }
                seen.push(k);
            }
            match k {
                "experiment_id" => cfg.experiment_id = v.to_string(),
                "protocol" => {
                    cfg.protocol = Protocol::parse(v).ok_or_else(|| ConfigError::Invalid {
                        key: k.into(),
                        message: format!("unknown protocol `{v}`"),
                    })?
                }
                "size" => cfg.size = num(k, v)?,
                "phantom_seed" => cfg.phantom_seed = num(k, v)?,
                "ellipse_count" => cfg.ellipse_count = num(k, v)?,
                "ellipse" => {
                    if v == "none" {
                        explicit_ellipses = true;
                        continue;
                    }
                    let xs: Vec<f64> = v.split_whitespace().map(|s| num(k, s)).collect::<Result<_, _>>()?;
                    let arr: EllipseLine = xs.try_into().map_err(|_| ConfigError::Invalid {
                        key: k.into(),
                        message: format!("line {}: expected `cx cy a b rotation intensity`", e.line),
                    })?;
                    explicit_ellipses = true;
                    cfg.ellipses.push(arr);
                }
                "phantom_file" => cfg.phantom_file = Some(PathBuf::from(v)),
                "insert_text" => cfg.insert_text = Some(v.trim_matches('"').to_string()),
                "insert_bitmap" => cfg.insert_bitmap = Some(PathBuf::from(v)),
                "insert_row" => cfg.insert_row = num(k, v)?,
                "insert_col" => cfg.insert_col = num(k, v)?,
                "insert_intensity" => cfg.insert_intensity = num(k, v)?,
                "model" => {
                    cfg.model = match v {
                        "fourier" | "mri" => ModelKind::Fourier,
                        "radon" | "ct" => ModelKind::Radon,
                        _ => return invalid(k, format!("unknown model `{v}`")),
                    }
                }
                "mask" => cfg.mask = v.parse().map_err(|_| ConfigError::Invalid { key: k.into(), message: format!("unknown mask `{v}`") })?,
                "sampling_rate" => cfg.sampling_rate = num(k, v)?,
                "mask_seed" => cfg.mask_seed = num(k, v)?,
                "views" => cfg.views = num(k, v)?,
                "operator" => {
                    cfg.operator = match v {
                        "adjoint" => OperatorKind::Adjoint,
                        "pinv" => OperatorKind::PseudoInverse,
                        "zero" => OperatorKind::Zero,
                        "automap" => OperatorKind::Automap,
                        _ => return invalid(k, format!("unknown operator `{v}`")),
                    }
                }
                "automap_blob" => cfg.automap_blob = Some(PathBuf::from(v)),
                "automap_hidden" => cfg.automap_hidden = Some(num(k, v)?),
                "automap_init_seed" => cfg.automap_init_seed = num(k, v)?,
                "train_pairs" => cfg.train_pairs = num(k, v)?,
                "train_epochs" => cfg.train_epochs = num(k, v)?,
                "train_step" => cfg.train_step = num(k, v)?,
                "train_seed" => cfg.train_seed = num(k, v)?,
                "lambda" => cfg.acid.lambda = num(k, v)?,
                "epsilon" => cfg.acid.epsilon = num(k, v)?,
                "iterations" => cfg.acid.iterations = num(k, v)?,
                "mu" => cfg.acid.mu = num(k, v)?,
                "normalize" => cfg.acid.normalize = boolean(k, v)?,
                "tolerance" => cfg.acid.tolerance = Some(num(k, v)?),
                "snapshot_every" => cfg.acid.snapshot_every = num(k, v)?,
                "peak" => cfg.peak = Some(num(k, v)?),
                "noise_sigma" => cfg.noise_sigma = num(k, v)?,
                "noise_seed" => cfg.noise_seed = num(k, v)?,
                "ablation_seeds" => cfg.ablation_seeds = list(k, v)?,
                "sweep_rates" => cfg.sweep_rates = list(k, v)?,
                "attack_gamma" => cfg.attack_gamma = num(k, v)?,
                "attack_step" => cfg.attack_step = num(k, v)?,
                "attack_momentum" => cfg.attack_momentum = num(k, v)?,
                "attack_iters" => cfg.attack_iters = num(k, v)?,
                "attack_budget" => cfg.attack_budget = Some(num(k, v)?),
                "attack_budget_rel" => cfg.attack_budget_rel = num(k, v)?,
                "attack_seeds" => cfg.attack_seeds = list(k, v)?,
                "contraction_sigmas" => cfg.contraction_sigmas = list(k, v)?,
                "stability_draws" => cfg.stability_draws = num(k, v)?,
                "stability_sigma" => cfg.stability_sigma = num(k, v)?,
                "stability_seed" => cfg.stability_seed = num(k, v)?,
                _ => return Err(ConfigError::Parse { line: e.line, column: 1, message: format!("unknown key `{k}`") }),
            }
        }
        if explicit_ellipses {
            cfg.ellipse_count = cfg.ellipses.len();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let acid = |key: &str, r: acid_core::Result<()>| r.or_else(|e| invalid(key, e.to_string()));
        if self.experiment_id.is_empty() || self.experiment_id.contains(char::is_whitespace) {
            return invalid("experiment_id", "must be a non-empty word");
        }
        if self.size < 2 {
            return invalid("size", "must be at least 2");
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return invalid("sampling_rate", "must lie in (0, 1]");
        }
        if self.mask == MaskPattern::Custom {
            return invalid("mask", "custom masks are not generated from a config");
        }
        if self.views == 0 {
            return invalid("views", "must be positive");
        }
        if !(self.acid.lambda > 0.0) {
            return invalid("lambda", "must be positive");
        }
        if !(self.acid.epsilon >= 0.0) {
            return invalid("epsilon", "must be non-negative");
        }
        if !(self.acid.mu >= 0.0) {
            return invalid("mu", "must be non-negative");
        }
        acid("iterations", self.acid.validate())?;
        if let Some(p) = self.peak {
            if !(p > 0.0) {
                return invalid("peak", "must be positive");
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return invalid("noise_sigma", "must be non-negative");
        }
        if !(self.train_step > 0.0) {
            return invalid("train_step", "must be positive");
        }
        if self.ablation_seeds.is_empty() {
            return invalid("ablation_seeds", "needs at least one seed");
        }
        if self.sweep_rates.is_empty() || self.sweep_rates.windows(2).any(|w| !(w[0] < w[1])) {
            return invalid("sweep_rates", "must be a strictly ascending non-empty list");
        }
        if self.model == ModelKind::Radon && self.sweep_rates.iter().any(|&r| r < 1.0 || r.fract() != 0.0) {
            if self.protocol == Protocol::Sweep {
                return invalid("sweep_rates", "radon sweeps take whole view counts");
            }
        }
        if self.model == ModelKind::Fourier && self.sweep_rates.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return invalid("sweep_rates", "fourier sweep rates must lie in (0, 1]");
        }
        if !(self.attack_gamma >= 0.0) {
            return invalid("attack_gamma", "must be non-negative");
        }
        if !(self.attack_step > 0.0) {
            return invalid("attack_step", "must be positive");
        }
        if !(0.0..1.0).contains(&self.attack_momentum) {
            return invalid("attack_momentum", "must lie in [0, 1)");
        }
        if let Some(b) = self.attack_budget {
            if !(b > 0.0) {
                return invalid("attack_budget", "must be positive");
            }
        }
        if !(self.attack_budget_rel > 0.0) {
            return invalid("attack_budget_rel", "must be positive");
        }
        if self.attack_seeds.is_empty() {
            return invalid("attack_seeds", "needs at least one seed");
        }
        if self.contraction_sigmas.is_empty() || self.contraction_sigmas.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
            return invalid("contraction_sigmas", "each sigma must lie in (0, 1]");
        }
        if self.stability_draws == 0 {
            return invalid("stability_draws", "must be positive");
        }
        if !(self.stability_sigma > 0.0) {
            return invalid("stability_sigma", "must be positive");
        }
        if self.insert_text.is_some() && self.insert_bitmap.is_some() {
            return invalid("insert_text", "give either insert_text or insert_bitmap, not both");
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("write to string");
        kv("experiment_id", self.experiment_id.clone());
        kv("protocol", self.protocol.as_str().into());
        kv("size", self.size.to_string());
        kv("phantom_seed", self.phantom_seed.to_string());
        kv("ellipse_count", self.ellipse_count.to_string());
        for e in &self.ellipses {
            kv("ellipse", e.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "));
        }
        if let Some(p) = &self.phantom_file {
            kv("phantom_file", p.display().to_string());
        }
        if let Some(t) = &self.insert_text {
            kv("insert_text", format!("\"{t}\""));
        }
        if let Some(p) = &self.insert_bitmap {
            kv("insert_bitmap", p.display().to_string());
        }
        kv("insert_row", self.insert_row.to_string());
        kv("insert_col", self.insert_col.to_string());
        kv("insert_intensity", self.insert_intensity.to_string());
        kv("model", match self.model {
            ModelKind::Fourier => "fourier".into(),
            ModelKind::Radon => "radon".into(),
        });
        kv("mask", self.mask.as_str().into());
        kv("sampling_rate", self.sampling_rate.to_string());
        kv("mask_seed", self.mask_seed.to_string());
        kv("views", self.views.to_string());
        kv("operator", self.operator.as_str().into());
        if let Some(p) = &self.automap_blob {
            kv("automap_blob", p.display().to_string());
        }
        if let Some(h) = self.automap_hidden {
            kv("automap_hidden", h.to_string());
        }
        kv("automap_init_seed", self.automap_init_seed.to_string());
        kv("train_pairs", self.train_pairs.to_string());
        kv("train_epochs", self.train_epochs.to_string());
        kv("train_step", self.train_step.to_string());
        kv("train_seed", self.train_seed.to_string());
        kv("lambda", self.acid.lambda.to_string());
        kv("epsilon", self.acid.epsilon.to_string());
        kv("iterations", self.acid.iterations.to_string());
        kv("mu", self.acid.mu.to_string());
        kv("normalize", self.acid.normalize.to_string());
        if let Some(t) = self.acid.tolerance {
            kv("tolerance", t.to_string());
        }
        kv("snapshot_every", self.acid.snapshot_every.to_string());
        if let Some(p) = self.peak {
            kv("peak", p.to_string());
        }
        kv("noise_sigma", self.noise_sigma.to_string());
        kv("noise_seed", self.noise_seed.to_string());
        kv("ablation_seeds", join(&self.ablation_seeds));
        kv("sweep_rates", join(&self.sweep_rates));
        kv("attack_gamma", self.attack_gamma.to_string());
        kv("attack_step", self.attack_step.to_string());
        kv("attack_momentum", self.attack_momentum.to_string());
        kv("attack_iters", self.attack_iters.to_string());
        if let Some(b) = self.attack_budget {
            kv("attack_budget", b.to_string());
        }
        kv("attack_budget_rel", self.attack_budget_rel.to_string());
        kv("attack_seeds", join(&self.attack_seeds));
        kv("contraction_sigmas", join(&self.contraction_sigmas));
        kv("stability_draws", self.stability_draws.to_string());
        kv("stability_sigma", self.stability_sigma.to_string());
        kv("stability_seed", self.stability_seed.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_and_comments() {
        let cfg = ExperimentConfig::parse(
            "# demo\nprotocol = sweep  # trailing\nlambda = 0.5\nsweep_rates = 0.1, 0.2,0.5\n\nnormalize = yes\n",
        )
        .unwrap();
        assert_eq!(cfg.protocol, Protocol::Sweep);
        assert_eq!(cfg.acid.lambda, 0.5);
        assert_eq!(cfg.sweep_rates, vec![0.1, 0.2, 0.5]);
        assert!(cfg.acid.normalize);
    }

    #[test]
    fn parse_errors_carry_position() {
        match ExperimentConfig::parse("size = 8\n  lambda 0.5\n") {
            Err(ConfigError::Parse { line, column, .. }) => assert_eq!((line, column), (2, 3)),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::parse("la$mbda = 1\n") {
            Err(ConfigError::Parse { line, column, .. }) => assert_eq!((line, column), (1, 3)),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::parse("size = 8\nsize = 9\n") {
            Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(ExperimentConfig::parse("colour = red"), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn validation_names_the_key() {
        for (text, key) in [
            ("lambda = -1", "lambda"),
            ("lambda = abc", "lambda"),
            ("sampling_rate = 1.5", "sampling_rate"),
            ("protocol = dance", "protocol"),
            ("sweep_rates = 0.5,0.1", "sweep_rates"),
            ("attack_momentum = 1", "attack_momentum"),
        ] {
            match ExperimentConfig::parse(text) {
                Err(ConfigError::Invalid { key: k, .. }) => assert_eq!(k, key),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn ellipses_and_round_trip() {
        let text = "ellipse = 0.5 0.5 0.3 0.2 0.1 1\nellipse = 0.4 0.6 0.1 0.1 0 -0.5\ninsert_text = \"CAN U SEE IT\"\ntolerance = 1e-9\nmodel = radon\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.ellipses.len(), 2);
        assert_eq!(cfg.ellipse_count, 2);
        assert_eq!(cfg.insert_text.as_deref(), Some("CAN U SEE IT"));
        let again = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(ExperimentConfig::parse(&ExperimentConfig::default().to_text()).unwrap(), ExperimentConfig::default());
        assert!(ExperimentConfig::parse("ellipse = 1 2 3").is_err());
    }

    #[test]
    fn manifest_keys_are_skipped() {
        let cfg = ExperimentConfig::parse("manifest.artifact = a.csv\nresult.psnr = 3\nsize = 16\n").unwrap();
        assert_eq!(cfg.size, 16);
    }
}
