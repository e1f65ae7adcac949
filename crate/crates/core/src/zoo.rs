//! Named architectures built from the JSON files under `models/`.
//!
//! Connection topologies live only in the data files. A file is either a
//! full graph (`spine-arch`) or a recipe (`spine-recipe`) deriving one model
//! from another by block repeat and width scaling, or by the MBConv rebuild
//! used for the mobile models.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{
    scale_width, BackboneGraph, BlockId, BlockKind, BlockSpec, Decoder, EntryLayers, FeatureLevel, MbConvParams,
    ResampleRegime, SpecFile, Transform, ValidationMode,
};
use crate::head::{attach_head_with, HeadConfig, HeadKind, ModelWithHead};

pub const MODEL_DIR_ENV: &str = "SPINE_MODEL_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VariantId {
    Spinenet49s,
    Spinenet49,
    Spinenet96,
    Spinenet143,
    Spinenet190,
    R35sp18,
    R23sp30,
    R14sp39,
    R0sp53,
    Resnet50fpn,
    Resnet101fpn,
    Resnet152fpn,
    Spinenet49xsMb,
    Spinenet49sMb,
    Spinenet49Mb,
}

impl VariantId {
    pub const ALL: [VariantId; 15] = [
        VariantId::Spinenet49s,
        VariantId::Spinenet49,
        VariantId::Spinenet96,
        VariantId::Spinenet143,
        VariantId::Spinenet190,
        VariantId::R35sp18,
        VariantId::R23sp30,
        VariantId::R14sp39,
        VariantId::R0sp53,
        VariantId::Resnet50fpn,
        VariantId::Resnet101fpn,
        VariantId::Resnet152fpn,
        VariantId::Spinenet49xsMb,
        VariantId::Spinenet49sMb,
        VariantId::Spinenet49Mb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantId::Spinenet49s => "spinenet49s",
            VariantId::Spinenet49 => "spinenet49",
            VariantId::Spinenet96 => "spinenet96",
            VariantId::Spinenet143 => "spinenet143",
            VariantId::Spinenet190 => "spinenet190",
            VariantId::R35sp18 => "r35sp18",
            VariantId::R23sp30 => "r23sp30",
            VariantId::R14sp39 => "r14sp39",
            VariantId::R0sp53 => "r0sp53",
            VariantId::Resnet50fpn => "resnet50fpn",
            VariantId::Resnet101fpn => "resnet101fpn",
            VariantId::Resnet152fpn => "resnet152fpn",
            VariantId::Spinenet49xsMb => "spinenet49xs_mb",
            VariantId::Spinenet49sMb => "spinenet49s_mb",
            VariantId::Spinenet49Mb => "spinenet49_mb",
        }
    }

    pub fn is_mobile(self) -> bool {
        matches!(self, VariantId::Spinenet49xsMb | VariantId::Spinenet49sMb | VariantId::Spinenet49Mb)
    }

    pub fn is_resnet_fpn(self) -> bool {
        matches!(self, VariantId::Resnet50fpn | VariantId::Resnet101fpn | VariantId::Resnet152fpn)
    }

    /// Detection resolution the published numbers use.
    pub fn default_resolution(self) -> u32 {
        match self {
            VariantId::Spinenet96 | VariantId::Resnet101fpn => 1024,
            VariantId::Spinenet143 | VariantId::Spinenet190 | VariantId::Resnet152fpn => 1280,
            VariantId::Spinenet49xsMb => 256,
            VariantId::Spinenet49sMb | VariantId::Spinenet49Mb => 384,
            _ => 640,
        }
    }

    /// RetinaNet subnet depth and width.
    pub fn retinanet_head(self, output_dim: u32) -> HeadConfig {
        match self {
            VariantId::Spinenet49s => HeadConfig::retinanet(4, 128),
            VariantId::Spinenet190 => HeadConfig::retinanet(7, 512),
            v if v.is_mobile() => HeadConfig::retinanet_separable(4, output_dim),
            _ => HeadConfig::retinanet(4, 256),
        }
    }
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase().replace('-', "");
        VariantId::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or(Error::UnknownModel(s))
    }
}

macro_rules! embedded {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../../models/", $name, ".json")))),*]
    };
}

const EMBEDDED: &[(&str, &str)] = embedded!(
    "spinenet49s",
    "spinenet49",
    "spinenet96",
    "spinenet143",
    "spinenet190",
    "r35sp18",
    "r23sp30",
    "r14sp39",
    "r0sp53",
    "resnet50fpn",
    "resnet101fpn",
    "resnet152fpn",
    "spinenet49xs_mb",
    "spinenet49s_mb",
    "spinenet49_mb",
);

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelSource {
    /// Files compiled into the binary.
    Embedded,
    /// `<dir>/<name>.json`.
    Dir(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Zoo {
    pub source: ModelSource,
}

impl Default for Zoo {
    fn default() -> Self {
        Self::embedded()
    }
}

impl Zoo {
    pub fn embedded() -> Self {
        Self {
            source: ModelSource::Embedded,
        }
    }

    pub fn from_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            source: ModelSource::Dir(dir.into()),
        }
    }

    /// `SPINE_MODEL_DIR` if set, else the embedded files.
    pub fn from_env() -> Self {
        match std::env::var_os(MODEL_DIR_ENV) {
            Some(d) if !d.is_empty() => Self::from_dir(PathBuf::from(d)),
            _ => Self::embedded(),
        }
    }

    pub fn spec_text(&self, name: &str) -> Result<String> {
        match &self.source {
            ModelSource::Embedded => EMBEDDED
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t.to_string())
                .ok_or_else(|| Error::UnknownModel(name.to_string())),
            ModelSource::Dir(dir) => {
                let path = dir.join(format!("{name}.json"));
                if !path.exists() {
                    return Err(Error::UnknownModel(name.to_string()));
                }
                std::fs::read_to_string(&path).map_err(|source| Error::Io { path, source })
            }
        }
    }

    /// Loads a named file, resolving recipes against this zoo.
    pub fn load(&self, name: &str) -> Result<BackboneGraph> {
        let text = self.spec_text(name)?;
        self.load_text(name, &text, 0)
    }

    fn load_text(&self, name: &str, text: &str, depth: usize) -> Result<BackboneGraph> {
        if depth > 8 {
            return Err(Error::Load {
                name: name.into(),
                detail: "recipe chain too deep".into(),
            });
        }
        let load_err = |detail: String| Error::Load {
            name: name.into(),
            detail,
        };
        let spec: SpecFile = serde_json::from_str(text).map_err(|e| load_err(e.to_string()))?;
        let g = match spec {
            SpecFile::Arch(doc) => doc.into_graph().map_err(|e| load_err(e.to_string()))?,
            SpecFile::Recipe(r) => {
                if r.version != crate::graph::FORMAT_VERSION {
                    return Err(load_err(format!("unsupported version {}", r.version)));
                }
                let base_text = self.spec_text(&r.base)?;
                let base = self.load_text(&r.base, &base_text, depth + 1)?;
                let mut g = match r.transform {
                    Transform::Scale {
                        repeat,
                        width_factor,
                        alpha,
                        output_dim,
                    } => {
                        let mut g = scale_variant(&base, repeat, width_factor, alpha)?;
                        g.output_dim = output_dim;
                        g
                    }
                    Transform::Mobile {
                        width_factor,
                        output_dim,
                    } => build_mobile_variant(&base, width_factor, output_dim)?,
                };
                g.name = r.name;
                g
            }
        };
        g.validated().map_err(|e| load_err(e.to_string()))
    }

    pub fn build_variant(&self, v: VariantId) -> Result<BackboneGraph> {
        self.load(v.name())
    }

    /// A zoo name or a path to a spec file.
    pub fn resolve(&self, model: &str) -> Result<BackboneGraph> {
        let looks_like_path = model.ends_with(".json") || model.contains('/') || model.contains('\\');
        if looks_like_path {
            load_spec_path(self, Path::new(model))
        } else {
            match model.parse::<VariantId>() {
                Ok(v) => self.build_variant(v),
                Err(_) => self.load(model),
            }
        }
    }

    /// Graph plus the default head of `kind` for it.
    pub fn model(&self, model: &str, kind: HeadKind) -> Result<ModelWithHead> {
        let g = self.resolve(model)?;
        with_default_head(g, kind)
    }
}

pub fn load_spec_path(zoo: &Zoo, path: &Path) -> Result<BackboneGraph> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("spec");
    zoo.load_text(name, &text, 0)
}

/// Default head of `kind` for a graph, keyed by its name when it is a zoo model.
pub fn default_head(g: &BackboneGraph, kind: HeadKind) -> HeadConfig {
    let variant = g.name.parse::<VariantId>().ok();
    match kind {
        HeadKind::Retinanet => match variant {
            Some(v) => v.retinanet_head(g.output_dim),
            None if g.regime == ResampleRegime::Separable => HeadConfig::retinanet_separable(4, g.output_dim),
            None => HeadConfig::retinanet(4, 256),
        },
        HeadKind::Maskrcnn => HeadConfig::maskrcnn(),
        HeadKind::Classifier => HeadConfig::classifier(1000),
        HeadKind::FinalFeatureClassifier => HeadConfig::final_feature_classifier(1000),
    }
}

/// Attaches the default head. A classifier on a pyramid-less or FPN graph
/// becomes the global-pool classifier on its last stem block.
pub fn with_default_head(g: BackboneGraph, kind: HeadKind) -> Result<ModelWithHead> {
    with_default_head_with(g, kind, ValidationMode::Strict)
}

pub fn with_default_head_with(mut g: BackboneGraph, kind: HeadKind, mode: ValidationMode) -> Result<ModelWithHead> {
    let kind = match kind {
        HeadKind::Classifier if g.decoder != Decoder::OutputProjections => {
            g.decoder = Decoder::None;
            HeadKind::FinalFeatureClassifier
        }
        HeadKind::FinalFeatureClassifier => {
            g.decoder = Decoder::None;
            HeadKind::FinalFeatureClassifier
        }
        k => k,
    };
    let h = default_head(&g, kind);
    attach_head_with(g, h, mode)
}

/// Repeats every block `repeat` times, scales widths by `width_factor`
/// (half-up) and replaces alpha. The entry conv and `output_dim` are kept.
pub fn scale_variant(base: &BackboneGraph, repeat: u32, width_factor: f64, alpha: f64) -> Result<BackboneGraph> {
    if repeat == 0 {
        return Err(Error::BadRepeat(repeat));
    }
    if !(width_factor > 0.0 && width_factor.is_finite()) {
        return Err(Error::BadWidthFactor(width_factor));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::BadAlpha(alpha));
    }
    let mut g = base.clone();
    for b in g.stem.iter_mut().chain(g.permuted.iter_mut()) {
        b.repeat *= repeat;
        b.width = scale_width(b.width, width_factor);
    }
    g.alpha = alpha;
    Ok(g)
}

/// Per-level MBConv widths L1..L7 before scaling.
pub const MOBILE_WIDTHS: [u32; 7] = [16, 24, 40, 80, 112, 112, 112];
pub const MOBILE_ENTRY_WIDTH: u32 = 8;

pub fn mobile_width(level: FeatureLevel, width_factor: f64) -> u32 {
    scale_width(MOBILE_WIDTHS[level.get() as usize - 1], width_factor)
}

/// Rebuilds a graph with MBConv blocks: 3x3 stride-2 entry conv at width 8
/// with no max-pool, a new L1 stem block in front of the existing stem (whose
/// first L2 block then strides), and separable resampling.
pub fn build_mobile_variant(base: &BackboneGraph, width_factor: f64, output_dim: u32) -> Result<BackboneGraph> {
    if !(width_factor > 0.0 && width_factor.is_finite()) {
        return Err(Error::BadWidthFactor(width_factor));
    }
    let mut g = base.clone();
    let l1 = FeatureLevel::new(1)?;
    let new_id: BlockId = g.next_id();
    for b in g.stem.iter_mut().chain(g.permuted.iter_mut()) {
        b.kind = BlockKind::Mbconv;
        b.width = mobile_width(b.level, width_factor);
        b.ordering += 1;
    }
    g.stem.insert(
        0,
        BlockSpec {
            id: new_id,
            ordering: 0,
            level: l1,
            kind: BlockKind::Mbconv,
            width: mobile_width(l1, width_factor),
            repeat: 1,
            is_output: false,
            is_stem: true,
        },
    );
    g.entry = EntryLayers {
        kernel: 3,
        stride: 2,
        width: scale_width(MOBILE_ENTRY_WIDTH, width_factor),
        max_pool: false,
    };
    g.regime = ResampleRegime::Separable;
    g.output_dim = output_dim;
    g.mbconv = MbConvParams::default();
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for v in VariantId::ALL {
            assert_eq!(v.name().parse::<VariantId>().unwrap(), v);
        }
        assert!(matches!("nosuch".parse::<VariantId>(), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn mobile_widths_scale_half_up() {
        let l4 = FeatureLevel::new(4).unwrap();
        assert_eq!(mobile_width(l4, 0.6), 48);
        assert_eq!(mobile_width(l4, 1.0), 80);
    }

    #[test]
    fn garbled_file_names_itself() {
        let dir = std::env::temp_dir().join(format!("spine-zoo-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("broken.json"), "{ not json").unwrap();
        let zoo = Zoo::from_dir(&dir);
        match zoo.load("broken") {
            Err(Error::Load { name, .. }) => assert_eq!(name, "broken"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(zoo.load("absent"), Err(Error::UnknownModel(_))));
        std::fs::remove_dir_all(&dir).ok();
    }
}
