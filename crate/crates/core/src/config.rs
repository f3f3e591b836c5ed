//! The run configuration: one JSON document covering data generation, model
//! widths, utilities, training, evaluation and serving.
//!
//! Unknown keys are rejected at every level. `--set a.b=value` style
//! overrides are applied to the JSON tree before it is deserialized.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::utilities::{UtilityKind, UtilitySpec};
use crate::data::GroupField;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub utilities: Vec<UtilitySpec>,
    pub preference: PreferenceSampling,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub serve: ServeConfig,
}

/// How training draws preference vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreferenceSampling {
    /// Each `w_i ~ U(0, w_max_i)` independently.
    Independent,
    /// Two utilities only: `λ ~ U(0, 1)`, `w = (λ, 1 − λ)`.
    Lambda,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_items: usize,
    pub n_users: usize,
    pub n_sellers: u32,
    pub n_categories: u32,
    pub prio_levels: u32,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub cold_fraction: f64,
    pub new_fraction: f64,
    /// Mean CTR logit of warm items.
    pub ctr_logit_mean: f64,
    pub quality_std: f64,
    /// Cold items' CTR logits are shifted down by this much.
    pub cold_shift: f64,
    /// Share of each candidate set drawn from the user's favourite categories.
    pub favorite_share: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub m: usize,
    pub n: usize,
    /// Gumbel noise scale of the logging policy.
    pub logging_temperature: f64,
    pub click: ClickModelConfig,
    pub demo_sessions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClickModelConfig {
    pub base: f64,
    /// Multiplier per position (1-based); positions past the end reuse the
    /// last entry.
    pub position_bias: Vec<f64>,
    pub affinity_weight: f64,
    pub ctr_weight: f64,
    pub offset: f64,
    /// Redundancy penalty per same-seller item in the window.
    pub rho: f64,
    pub window: usize,
    /// An item is relevant to a user when its affinity reaches this value.
    pub relevance_threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub item_embed: usize,
    pub enc_hidden: usize,
    pub state: usize,
    pub head_hidden: usize,
    pub hyper_hidden: usize,
    pub hyper_init_scale: f64,
    pub context_window: usize,
    pub eval_embed: usize,
    /// Hidden width of the evaluator's item/user embedding.
    pub eval_embed_hidden: usize,
    pub eval_fc: usize,
    pub eval_heads: usize,
    pub eval_rnn: usize,
    pub eval_hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_actor: f64,
    pub lr_hyper: f64,
    pub lr_eval: f64,
    pub clip: f64,
    pub batch: usize,
    pub steps: usize,
    pub eval_steps: usize,
    pub eval_batch: usize,
    /// Write a checkpoint bundle every k steps (0 disables).
    pub checkpoint_every: usize,
    /// Update θ_w̄ together with φ.
    pub joint: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k: usize,
    pub grid: usize,
    /// Utility swept by a business-mode sweep; `None` sweeps λ.
    pub axis: Option<String>,
    /// Weights for the axes that are not swept, and for the single-row
    /// evaluation written by `train`/`eval`. Defaults to `w_max / 2`.
    pub weights: Option<Vec<f64>>,
    pub test_limit: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeConfig {
    pub bind: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            utilities: lambda_utilities(),
            preference: PreferenceSampling::Lambda,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            serve: ServeConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_items: 5000,
            n_users: 2000,
            n_sellers: 40,
            n_categories: 8,
            prio_levels: 3,
            feature_dim: 8,
            feature_noise: 0.35,
            cold_fraction: 0.2,
            new_fraction: 0.2,
            ctr_logit_mean: -2.0,
            quality_std: 0.8,
            cold_shift: 1.5,
            favorite_share: 0.5,
            n_train: 50_000,
            n_test: 10_000,
            m: 20,
            n: 10,
            logging_temperature: 1.0,
            click: ClickModelConfig::default(),
            demo_sessions: 16,
        }
    }
}

impl Default for ClickModelConfig {
    fn default() -> Self {
        Self {
            base: 0.35,
            position_bias: (1..=10).map(|k| 1.0 / (1.0 + 0.25 * (k as f64 - 1.0))).collect(),
            affinity_weight: 4.0,
            ctr_weight: 1.0,
            offset: -2.0,
            rho: 0.25,
            window: 3,
            relevance_threshold: -3.0,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            item_embed: 16,
            enc_hidden: 32,
            state: 16,
            head_hidden: 16,
            hyper_hidden: 64,
            hyper_init_scale: 1e-3,
            context_window: 3,
            eval_embed: 16,
            eval_embed_hidden: 32,
            eval_fc: 4,
            eval_heads: 2,
            eval_rnn: 16,
            eval_hidden: 32,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_actor: 1e-3,
            lr_hyper: 1e-3,
            lr_eval: 2e-3,
            clip: 5.0,
            batch: 64,
            steps: 20_000,
            eval_steps: 4_000,
            eval_batch: 64,
            checkpoint_every: 0,
            joint: true,
            seed: 11,
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 5,
            grid: 11,
            axis: None,
            weights: None,
            test_limit: None,
        }
    }
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".to_string(),
        }
    }
}

/// Accuracy (learned engagement) against intent coverage.
pub fn lambda_utilities() -> Vec<UtilitySpec> {
    vec![
        UtilitySpec::new("click", UtilityKind::Engagement, 1.0),
        UtilitySpec {
            group_field: Some(GroupField::Category),
            ..UtilitySpec::new("diversity", UtilityKind::IntentDiversity, 1.0)
        },
    ]
}

/// Engagement, cold-start flow control, seller diversity and new-first
/// ordering.
pub fn business_utilities() -> Vec<UtilitySpec> {
    vec![
        UtilitySpec::new("click", UtilityKind::Engagement, 1.0),
        UtilitySpec {
            group_field: Some(GroupField::Cold),
            group_value: Some(1),
            t_e: Some(0.3),
            ..UtilitySpec::new("cold_flow", UtilityKind::Gated, 1.0)
        },
        UtilitySpec {
            group_field: Some(GroupField::Seller),
            window: Some(3),
            ..UtilitySpec::new("seller_div", UtilityKind::Diversity, 0.5)
        },
        UtilitySpec {
            group_field: Some(GroupField::New),
            priority_map: Some([("1".to_string(), 1), ("0".to_string(), 0)].into_iter().collect()),
            ..UtilitySpec::new("new_first", UtilityKind::Ordering, 0.5)
        },
    ]
}

impl RunConfig {
    /// The four-utility business preset.
    pub fn business() -> Self {
        Self {
            utilities: business_utilities(),
            preference: PreferenceSampling::Independent,
            ..Self::default()
        }
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults), applies `key=value` overrides
    /// and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(RunConfig::default())?,
        };
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        Self::from_value(value)
    }

    pub fn caps(&self) -> Vec<f64> {
        self.utilities.iter().map(|u| u.w_max).collect()
    }

    pub fn utility_names(&self) -> Vec<String> {
        self.utilities.iter().map(|u| u.name.clone()).collect()
    }

    /// Reference weights for single-row evaluation.
    pub fn eval_weights(&self) -> Vec<f64> {
        match &self.eval.weights {
            Some(w) => w.clone(),
            None => match self.preference {
                PreferenceSampling::Lambda => vec![0.5, 0.5],
                PreferenceSampling::Independent => self.caps().iter().map(|c| c / 2.0).collect(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        let bad = |m: String| Err(Error::Config(m));
        if d.n == 0 || d.n > d.m {
            return bad(format!("need 1 <= n <= m, got n={} m={}", d.n, d.m));
        }
        if d.m > d.n_items {
            return bad(format!("m={} exceeds catalog size {}", d.m, d.n_items));
        }
        if !(0.0..=1.0).contains(&d.cold_fraction) || !(0.0..=1.0).contains(&d.new_fraction) {
            return bad("cold_fraction and new_fraction must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&d.favorite_share) {
            return bad("favorite_share must lie in [0, 1]".into());
        }
        if d.n_categories == 0 || d.n_sellers == 0 || d.prio_levels == 0 || d.feature_dim == 0 {
            return bad("group cardinalities and feature_dim must be positive".into());
        }
        if d.n_users == 0 {
            return bad("n_users must be positive".into());
        }
        if d.click.position_bias.is_empty() || d.click.position_bias.iter().any(|b| *b < 0.0) {
            return bad("position_bias must be a non-empty list of non-negative values".into());
        }
        if d.click.base < 0.0 || d.click.rho < 0.0 || d.logging_temperature < 0.0 {
            return bad("click base, rho and logging_temperature must be non-negative".into());
        }
        let t = &self.train;
        for (name, v) in [("lr_actor", t.lr_actor), ("lr_hyper", t.lr_hyper), ("lr_eval", t.lr_eval)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a finite non-negative rate"));
            }
        }
        if !(t.clip > 0.0) {
            return bad("clip must be positive".into());
        }
        if t.batch == 0 || t.eval_batch == 0 {
            return bad("batch sizes must be positive".into());
        }
        let m = &self.model;
        let widths = [
            m.item_embed,
            m.enc_hidden,
            m.state,
            m.head_hidden,
            m.hyper_hidden,
            m.eval_embed,
            m.eval_embed_hidden,
            m.eval_fc,
            m.eval_rnn,
            m.eval_hidden,
        ];
        if widths.contains(&0) {
            return bad("model widths must be positive".into());
        }
        if m.eval_heads == 0 || m.eval_embed % m.eval_heads != 0 {
            return bad(format!("eval_embed {} not divisible by eval_heads {}", m.eval_embed, m.eval_heads));
        }
        if self.utilities.is_empty() {
            return bad("at least one utility is required".into());
        }
        let mut names: Vec<&str> = self.utilities.iter().map(|u| u.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.utilities.len() {
            return bad("utility names must be unique".into());
        }
        for u in &self.utilities {
            u.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.preference == PreferenceSampling::Lambda && self.utilities.len() != 2 {
            return bad("lambda preference sampling needs exactly two utilities".into());
        }
        if let Some(w) = &self.eval.weights {
            check_weights(w, &self.caps()).map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(axis) = &self.eval.axis {
            if !self.utilities.iter().any(|u| &u.name == axis) {
                return bad(format!("eval.axis `{axis}` is not a configured utility"));
            }
        }
        if self.eval.k == 0 || self.eval.grid == 0 {
            return bad("eval.k and eval.grid must be positive".into());
        }
        Ok(())
    }
}

/// Checks dimension and `0 ≤ w_i ≤ cap_i`.
pub fn check_weights(w: &[f64], caps: &[f64]) -> Result<()> {
    if w.len() != caps.len() {
        return Err(Error::Invalid(format!("expected {} weights, got {}", caps.len(), w.len())));
    }
    for (i, (&wi, &cap)) in w.iter().zip(caps).enumerate() {
        if !(wi >= 0.0 && wi <= cap) {
            return Err(Error::Invalid(format!("weight {i} = {wi} outside [0, {cap}]")));
        }
    }
    Ok(())
}

/// Applies one `dotted.path=value` override. The value is parsed as JSON and
/// falls back to a plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::Config(format!("`{part}` in `{path}` is not an index")))?;
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("index {idx} out of range in `{path}`")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::Config(format!("`{path}` descends into a scalar"))),
        };
    }
    Err(Error::Config("empty override path".into()))
}
