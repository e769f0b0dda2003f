//! Serializable task configuration with a static/dynamic split.
//!
//! Static entries fix parameter shapes; dynamic entries (initializer,
//! activation, loss variants) never do.

use super::activation::Activation;
use super::cfgtext::{self, Block, Entry, Map, MapReader, Value};
use crate::error::{Error, Result};
use crate::numkit::label_hash;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    ImageMlp,
    ImageMlpAe,
    TinyByteLm,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::ImageMlp, Family::ImageMlpAe, Family::TinyByteLm];

    pub fn name(self) -> &'static str {
        match self {
            Family::ImageMlp => "ImageMLP",
            Family::ImageMlpAe => "ImageMLPAE",
            Family::TinyByteLm => "TinyByteLM",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == name)
            .ok_or_else(|| Error::UnknownFamily(name.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AugmentationKind {
    ReparamWeights,
    GradNormalize,
    InnerEs,
    DelayedGrads,
    BatchReduce,
}

impl AugmentationKind {
    pub const ALL: [AugmentationKind; 5] = [
        AugmentationKind::ReparamWeights,
        AugmentationKind::GradNormalize,
        AugmentationKind::InnerEs,
        AugmentationKind::DelayedGrads,
        AugmentationKind::BatchReduce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentationKind::ReparamWeights => "ReparamWeights",
            AugmentationKind::GradNormalize => "GradNormalize",
            AugmentationKind::InnerEs => "InnerES",
            AugmentationKind::DelayedGrads => "DelayedGrads",
            AugmentationKind::BatchReduce => "BatchReduce",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown augmentation {name:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationSpec {
    pub kind: AugmentationKind,
    pub params: Map,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskConfig {
    pub family: Family,
    pub static_cfg: Map,
    pub dynamic_cfg: Map,
    pub augmentations: Vec<AugmentationSpec>,
}

// ------------------------------------------------------------ typed view

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Initializer {
    Orthogonal,
    Uniform,
    Normal,
}

impl Initializer {
    pub const NAMES: [&'static str; 3] = ["orthogonal", "uniform", "normal"];

    pub fn name(self) -> &'static str {
        match self {
            Initializer::Orthogonal => "orthogonal",
            Initializer::Uniform => "uniform",
            Initializer::Normal => "normal",
        }
    }

    fn from_name(s: &str) -> Self {
        match s {
            "orthogonal" => Initializer::Orthogonal,
            "uniform" => Initializer::Uniform,
            _ => Initializer::Normal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputConstraint {
    None,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReparamMode {
    Global,
    Tensor,
    Parameter,
}

impl ReparamMode {
    pub fn name(self) -> &'static str {
        match self {
            ReparamMode::Global => "global",
            ReparamMode::Tensor => "tensor",
            ReparamMode::Parameter => "parameter",
        }
    }
}

/// Allowed scale ranges for weight re-parameterization.
pub const REPARAM_RANGES: [(f64, f64); 3] = [(0.001, 1000.0), (0.01, 100.0), (0.1, 10.0)];
pub const INNER_ES_PAIRS: [usize; 5] = [1, 2, 4, 8, 16];

#[derive(Clone, Debug, PartialEq)]
pub enum Augmentation {
    Reparam {
        mode: ReparamMode,
        range: (f64, f64),
        seed: u64,
    },
    GradNormalize,
    InnerEs {
        sigma: f64,
        pairs: usize,
    },
    Delayed {
        delay: usize,
    },
    BatchReduce {
        fraction: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Architecture {
    Mlp {
        hidden: Vec<usize>,
        num_classes: usize,
        image_size: usize,
    },
    MlpAe {
        hidden: Vec<usize>,
        image_size: usize,
        log_loss: bool,
        center_data: bool,
        constrain: OutputConstraint,
    },
    ByteRnn {
        hidden: usize,
        seq_len: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedConfig {
    pub family: Family,
    pub arch: Architecture,
    pub batch_size: usize,
    pub dataset: String,
    pub initializer: Initializer,
    pub activation: Activation,
    pub init_scale: f64,
    pub augmentations: Vec<Augmentation>,
}

const MAX_WIDTH: usize = 4096;
const MAX_BATCH: usize = 1 << 16;

impl TaskConfig {
    pub fn new(family: Family, static_cfg: Map, dynamic_cfg: Map) -> Self {
        Self {
            family,
            static_cfg,
            dynamic_cfg,
            augmentations: Vec::new(),
        }
    }

    pub fn with_augmentation(mut self, kind: AugmentationKind, params: Map) -> Self {
        self.augmentations.push(AugmentationSpec { kind, params });
        self
    }

    /// Typed, range-checked view. Unknown keys are rejected.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let ctx = format!("{} static", self.family.name());
        let st = MapReader::new(&self.static_cfg, ctx);
        let dctx = format!("{} dynamic", self.family.name());
        let dy = MapReader::new(&self.dynamic_cfg, dctx);

        let batch_size = st.usize_in("batch_size", 1, MAX_BATCH)?;
        let dataset = st.str("dataset")?.to_string();
        let initializer = Initializer::from_name(dy.choice("initializer", &Initializer::NAMES)?);
        let init_scale = dy.f64_in("init_scale", 0.5, 2.0)?;

        let (arch, activation) = match self.family {
            Family::ImageMlp => {
                let hidden = st.usize_list("hidden_sizes", 1, MAX_WIDTH)?;
                if hidden.len() > 8 {
                    return Err(Error::Range("ImageMLP: at most 8 hidden layers".into()));
                }
                let arch = Architecture::Mlp {
                    hidden,
                    num_classes: st.usize_in("num_classes", 2, 1000)?,
                    image_size: st.usize_in("image_size", 2, 64)?,
                };
                let act = Activation::from_name(dy.choice("activation", &Activation::NAMES)?)?;
                (arch, act)
            }
            Family::ImageMlpAe => {
                let hidden = st.usize_list("hidden_sizes", 1, MAX_WIDTH)?;
                if hidden.len() > 8 {
                    return Err(Error::Range("ImageMLPAE: at most 8 hidden layers".into()));
                }
                let constrain = match dy.choice("constrain_output", &["none", "sigmoid", "tanh"])? {
                    "sigmoid" => OutputConstraint::Sigmoid,
                    "tanh" => OutputConstraint::Tanh,
                    _ => OutputConstraint::None,
                };
                let arch = Architecture::MlpAe {
                    hidden,
                    image_size: st.usize_in("image_size", 2, 64)?,
                    log_loss: dy.opt_bool("log_loss")?.unwrap_or(false),
                    center_data: dy.opt_bool("center_data")?.unwrap_or(false),
                    constrain,
                };
                let act = Activation::from_name(dy.choice("activation", &Activation::NAMES)?)?;
                (arch, act)
            }
            Family::TinyByteLm => {
                let arch = Architecture::ByteRnn {
                    hidden: st.usize_in("hidden_size", 1, 1024)?,
                    seq_len: st.usize_in("seq_len", 1, 1024)?,
                };
                (arch, Activation::Tanh)
            }
        };
        st.finish()?;
        dy.finish()?;

        let augmentations = self
            .augmentations
            .iter()
            .map(resolve_augmentation)
            .collect::<Result<Vec<_>>>()?;

        Ok(ResolvedConfig {
            family: self.family,
            arch,
            batch_size,
            dataset,
            initializer,
            activation,
            init_scale,
            augmentations,
        })
    }

    pub fn to_block(&self) -> Block {
        let mut b = Block::new("family", Some(self.family.name()))
            .child(Block::from_map("static", None, &self.static_cfg))
            .child(Block::from_map("dynamic", None, &self.dynamic_cfg));
        for aug in &self.augmentations {
            b = b.child(Block::from_map("augmentation", Some(aug.kind.name()), &aug.params));
        }
        b
    }

    pub fn from_block(block: &Block) -> Result<Self> {
        if block.kind != "family" {
            return Err(block.syntax_error(format!("expected `family`, found `{}`", block.kind)));
        }
        let name = block
            .label
            .as_deref()
            .ok_or_else(|| block.syntax_error("`family` needs a name label"))?;
        let family = Family::from_name(name)?;
        let mut static_cfg = None;
        let mut dynamic_cfg = None;
        let mut augmentations = Vec::new();
        for entry in &block.entries {
            match entry {
                Entry::Block(b) if b.kind == "static" && b.label.is_none() => {
                    if static_cfg.replace(b.to_map()?).is_some() {
                        return Err(b.syntax_error("duplicate `static` block"));
                    }
                }
                Entry::Block(b) if b.kind == "dynamic" && b.label.is_none() => {
                    if dynamic_cfg.replace(b.to_map()?).is_some() {
                        return Err(b.syntax_error("duplicate `dynamic` block"));
                    }
                }
                Entry::Block(b) if b.kind == "augmentation" => {
                    let kind_name = b
                        .label
                        .as_deref()
                        .ok_or_else(|| b.syntax_error("`augmentation` needs a kind label"))?;
                    augmentations.push(AugmentationSpec {
                        kind: AugmentationKind::from_name(kind_name)?,
                        params: b.to_map()?,
                    });
                }
                Entry::Block(b) => {
                    return Err(Error::UnknownKey {
                        key: b.kind.clone(),
                        context: format!("family {name}"),
                    })
                }
                Entry::Assign { key, .. } => {
                    return Err(Error::UnknownKey {
                        key: key.clone(),
                        context: format!("family {name}"),
                    })
                }
            }
        }
        Ok(Self {
            family,
            static_cfg: static_cfg.ok_or_else(|| block.syntax_error("missing `static` block"))?,
            dynamic_cfg: dynamic_cfg.ok_or_else(|| block.syntax_error("missing `dynamic` block"))?,
            augmentations,
        })
    }

    /// Stable identifier derived from the canonical text.
    pub fn task_id(&self) -> u64 {
        label_hash(&emit_config(self))
    }

    /// Identifier of the static part only; used to memoize timings.
    pub fn static_key(&self) -> String {
        let mut b = Block::new("family", Some(self.family.name()))
            .child(Block::from_map("static", None, &self.static_cfg));
        for aug in &self.augmentations {
            if aug.kind == AugmentationKind::BatchReduce || aug.kind == AugmentationKind::InnerEs {
                b = b.child(Block::from_map("augmentation", Some(aug.kind.name()), &aug.params));
            }
        }
        cfgtext::emit_document(&[b])
    }
}

fn resolve_augmentation(spec: &AugmentationSpec) -> Result<Augmentation> {
    let r = MapReader::new(&spec.params, format!("augmentation {}", spec.kind.name()));
    let aug = match spec.kind {
        AugmentationKind::ReparamWeights => {
            let mode = match r.choice("mode", &["global", "tensor", "parameter"])? {
                "global" => ReparamMode::Global,
                "tensor" => ReparamMode::Tensor,
                _ => ReparamMode::Parameter,
            };
            let lo = r.f64("scale_min")?;
            let hi = r.f64("scale_max")?;
            if !REPARAM_RANGES.contains(&(lo, hi)) {
                return Err(Error::Range(format!(
                    "ReparamWeights range ({lo}, {hi}) not one of {REPARAM_RANGES:?}"
                )));
            }
            let seed = r.opt_i64("seed")?.unwrap_or(0) as u64;
            Augmentation::Reparam {
                mode,
                range: (lo, hi),
                seed,
            }
        }
        AugmentationKind::GradNormalize => Augmentation::GradNormalize,
        AugmentationKind::InnerEs => {
            let sigma = r.f64_in("sigma", 0.001, 0.1)?;
            let pairs = r.usize_in("pairs", 1, 16)?;
            if !INNER_ES_PAIRS.contains(&pairs) {
                return Err(Error::Range(format!(
                    "InnerES pairs {pairs} not one of {INNER_ES_PAIRS:?}"
                )));
            }
            Augmentation::InnerEs { sigma, pairs }
        }
        AugmentationKind::DelayedGrads => Augmentation::Delayed {
            delay: r.usize_in("delay", 0, 8)?,
        },
        AugmentationKind::BatchReduce => {
            let fraction = r.f64("fraction")?;
            if !(fraction > 0.0 && fraction <= 1.0) || fraction < 0.01 {
                return Err(Error::Range(format!(
                    "BatchReduce fraction {fraction} outside [0.01, 1.0]"
                )));
            }
            Augmentation::BatchReduce { fraction }
        }
    };
    r.finish()?;
    Ok(aug)
}

/// Parse one `family` block and validate it.
pub fn parse_config(text: &str) -> Result<TaskConfig> {
    let doc = cfgtext::parse_document(text)?;
    let [block] = doc.as_slice() else {
        return Err(Error::Syntax {
            line: 1,
            column: 1,
            message: format!("expected exactly one `family` block, found {}", doc.len()),
        });
    };
    let cfg = TaskConfig::from_block(block)?;
    cfg.resolve()?;
    Ok(cfg)
}

/// Parse every `family` block in a document (other blocks are ignored).
pub fn parse_config_list(text: &str) -> Result<Vec<TaskConfig>> {
    let doc = cfgtext::parse_document(text)?;
    let mut out = Vec::new();
    for b in doc.iter().filter(|b| b.kind == "family") {
        let cfg = TaskConfig::from_block(b)?;
        cfg.resolve()?;
        out.push(cfg);
    }
    Ok(out)
}

pub fn emit_config(cfg: &TaskConfig) -> String {
    cfgtext::emit_document(&[cfg.to_block()])
}

pub fn canonicalize(text: &str) -> Result<String> {
    Ok(emit_config(&parse_config(text)?))
}

// ------------------------------------------------------------ builders

/// Convenience constructor for the classifier family.
pub fn image_mlp_config(
    hidden: &[usize],
    num_classes: usize,
    image_size: usize,
    batch_size: usize,
    dataset: &str,
) -> TaskConfig {
    let mut st = Map::new();
    st.insert(
        "hidden_sizes".into(),
        Value::List(hidden.iter().map(|&h| Value::Int(h as i64)).collect()),
    );
    st.insert("num_classes".into(), Value::Int(num_classes as i64));
    st.insert("image_size".into(), Value::Int(image_size as i64));
    st.insert("batch_size".into(), Value::Int(batch_size as i64));
    st.insert("dataset".into(), Value::Str(dataset.into()));
    TaskConfig::new(Family::ImageMlp, st, default_dynamic("relu", "normal", 1.0))
}

pub fn image_ae_config(hidden: &[usize], image_size: usize, batch_size: usize, dataset: &str) -> TaskConfig {
    let mut st = Map::new();
    st.insert(
        "hidden_sizes".into(),
        Value::List(hidden.iter().map(|&h| Value::Int(h as i64)).collect()),
    );
    st.insert("image_size".into(), Value::Int(image_size as i64));
    st.insert("batch_size".into(), Value::Int(batch_size as i64));
    st.insert("dataset".into(), Value::Str(dataset.into()));
    let mut dy = default_dynamic("tanh", "normal", 1.0);
    dy.insert("constrain_output".into(), Value::Str("sigmoid".into()));
    TaskConfig::new(Family::ImageMlpAe, st, dy)
}

pub fn byte_lm_config(hidden: usize, seq_len: usize, batch_size: usize, dataset: &str) -> TaskConfig {
    let mut st = Map::new();
    st.insert("hidden_size".into(), Value::Int(hidden as i64));
    st.insert("seq_len".into(), Value::Int(seq_len as i64));
    st.insert("batch_size".into(), Value::Int(batch_size as i64));
    st.insert("dataset".into(), Value::Str(dataset.into()));
    let mut dy = Map::new();
    dy.insert("initializer".into(), Value::Str("normal".into()));
    dy.insert("init_scale".into(), Value::Float(1.0));
    TaskConfig::new(Family::TinyByteLm, st, dy)
}

fn default_dynamic(activation: &str, initializer: &str, scale: f64) -> Map {
    let mut dy = Map::new();
    dy.insert("activation".into(), Value::Str(activation.into()));
    dy.insert("initializer".into(), Value::Str(initializer.into()));
    dy.insert("init_scale".into(), Value::Float(scale));
    dy
}

impl TaskConfig {
    pub fn set_dynamic(mut self, key: &str, value: Value) -> Self {
        self.dynamic_cfg.insert(key.into(), value);
        self
    }

    pub fn set_static(mut self, key: &str, value: Value) -> Self {
        self.static_cfg.insert(key.into(), value);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
family "ImageMLP" {
  static {
    hidden_sizes = [32]
    num_classes = 4
    image_size = 8
    batch_size = 16
    dataset = "synthetic:1"
  }
  dynamic {
    initializer = "orthogonal"
    activation = "relu"
    init_scale = 1.0
  }
}
"#;

    #[test]
    fn minimal_config_has_one_hidden_layer() {
        let cfg = parse_config(MINIMAL).unwrap();
        match cfg.resolve().unwrap().arch {
            Architecture::Mlp { hidden, .. } => assert_eq!(hidden, vec![32]),
            other => panic!("{other:?}"),
        }
        let canon = canonicalize(MINIMAL).unwrap();
        assert_eq!(emit_config(&parse_config(&canon).unwrap()), canon);
    }

    #[test]
    fn zero_hidden_size_is_range_error() {
        let bad = MINIMAL.replace("[32]", "[0]");
        assert!(matches!(parse_config(&bad), Err(Error::Range(_))));
    }

    #[test]
    fn unknown_key_rejected() {
        let bad = MINIMAL.replace("batch_size = 16", "batch_size = 16\n    colour = \"red\"");
        assert!(matches!(parse_config(&bad), Err(Error::UnknownKey { .. })));
    }

    #[test]
    fn unknown_family_rejected() {
        let bad = MINIMAL.replace("ImageMLP", "ConvNet");
        assert!(matches!(parse_config(&bad), Err(Error::UnknownFamily(_))));
    }

    #[test]
    fn augmentation_ranges_checked() {
        let mut p = Map::new();
        p.insert("mode".into(), Value::Str("global".into()));
        p.insert("scale_min".into(), Value::Float(0.5));
        p.insert("scale_max".into(), Value::Float(2.0));
        let cfg = parse_config(MINIMAL)
            .unwrap()
            .with_augmentation(AugmentationKind::ReparamWeights, p);
        assert!(matches!(cfg.resolve(), Err(Error::Range(_))));

        let mut p = Map::new();
        p.insert("sigma".into(), Value::Float(0.01));
        p.insert("pairs".into(), Value::Int(3));
        let cfg = parse_config(MINIMAL)
            .unwrap()
            .with_augmentation(AugmentationKind::InnerEs, p);
        assert!(matches!(cfg.resolve(), Err(Error::Range(_))));
    }
}
