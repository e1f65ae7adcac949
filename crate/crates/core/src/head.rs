//! Detection and classification heads attached to a backbone for costing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{validate_graph_with, BackboneGraph, Decoder, ValidationMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Retinanet,
    Maskrcnn,
    /// Pyramid-average classifier: upsample P4..P7 onto P3, average, pool, FC.
    Classifier,
    /// Global pool and FC on the last stem block (ResNet baselines).
    FinalFeatureClassifier,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Retinanet => "retinanet",
            HeadKind::Maskrcnn => "maskrcnn",
            HeadKind::Classifier => "classifier",
            HeadKind::FinalFeatureClassifier => "final_feature_classifier",
        }
    }

    pub fn is_classifier(self) -> bool {
        matches!(self, HeadKind::Classifier | HeadKind::FinalFeatureClassifier)
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "retinanet" => Ok(HeadKind::Retinanet),
            "maskrcnn" | "mask_rcnn" | "mask-rcnn" => Ok(HeadKind::Maskrcnn),
            "classifier" => Ok(HeadKind::Classifier),
            "final_feature_classifier" => Ok(HeadKind::FinalFeatureClassifier),
            other => Err(Error::Head(format!("unknown head kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub kind: HeadKind,
    /// 3x3 layers in each RetinaNet subnet, shared across pyramid levels.
    pub shared_conv_layers: u32,
    pub head_width: u32,
    pub num_classes: u32,
    pub anchors_per_location: u32,
    /// Separable convs in the RetinaNet subnets (mobile models).
    pub separable: bool,
    /// Mask R-CNN: proposals through the box branch.
    pub proposals: u32,
    /// Mask R-CNN: detections through the mask branch.
    pub mask_rois: u32,
    pub box_roi_size: u32,
    pub mask_roi_size: u32,
    pub rpn_width: u32,
    pub fc_width: u32,
}

impl HeadConfig {
    pub fn retinanet(shared_conv_layers: u32, head_width: u32) -> Self {
        Self {
            kind: HeadKind::Retinanet,
            shared_conv_layers,
            head_width,
            num_classes: 90,
            anchors_per_location: 9,
            separable: false,
            proposals: 1000,
            mask_rois: 100,
            box_roi_size: 7,
            mask_roi_size: 14,
            rpn_width: 256,
            fc_width: 1024,
        }
    }

    pub fn retinanet_separable(shared_conv_layers: u32, head_width: u32) -> Self {
        Self {
            separable: true,
            ..Self::retinanet(shared_conv_layers, head_width)
        }
    }

    /// RPN, 4-conv + FC box branch over 1000 proposals, 4-conv mask branch
    /// over 100 detections.
    pub fn maskrcnn() -> Self {
        Self {
            kind: HeadKind::Maskrcnn,
            shared_conv_layers: 4,
            head_width: 256,
            ..Self::retinanet(4, 256)
        }
    }

    pub fn classifier(num_classes: u32) -> Self {
        Self {
            kind: HeadKind::Classifier,
            shared_conv_layers: 0,
            num_classes,
            ..Self::retinanet(0, 256)
        }
    }

    pub fn final_feature_classifier(num_classes: u32) -> Self {
        Self {
            kind: HeadKind::FinalFeatureClassifier,
            ..Self::classifier(num_classes)
        }
    }

    /// Applies a `key=value` override (the `head.` prefix is optional).
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.strip_prefix("head.").unwrap_or(key);
        let num = || {
            value
                .parse::<u32>()
                .map_err(|_| Error::Head(format!("`{key}` expects an integer, got `{value}`")))
        };
        match key {
            "kind" => self.kind = value.parse()?,
            "shared_conv_layers" => self.shared_conv_layers = num()?,
            "head_width" => self.head_width = num()?,
            "num_classes" => self.num_classes = num()?,
            "anchors_per_location" => self.anchors_per_location = num()?,
            "proposals" => self.proposals = num()?,
            "mask_rois" => self.mask_rois = num()?,
            "box_roi_size" => self.box_roi_size = num()?,
            "mask_roi_size" => self.mask_roi_size = num()?,
            "rpn_width" => self.rpn_width = num()?,
            "fc_width" => self.fc_width = num()?,
            "separable" => {
                self.separable = value
                    .parse()
                    .map_err(|_| Error::Head(format!("`separable` expects true/false, got `{value}`")))?
            }
            other => return Err(Error::Head(format!("unknown head field `{other}`"))),
        }
        self.check()
    }

    pub fn check(&self) -> Result<()> {
        if self.head_width == 0 {
            return Err(Error::Head("head_width must be positive".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::Head("num_classes must be positive".into()));
        }
        Ok(())
    }
}

/// A validated backbone plus an optional head.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWithHead {
    pub graph: BackboneGraph,
    pub head: Option<HeadConfig>,
}

impl ModelWithHead {
    pub fn backbone(graph: BackboneGraph) -> Result<Self> {
        Self::backbone_with(graph, ValidationMode::Strict)
    }

    /// Backbone only; `Relaxed` admits damaged graphs with single-parent blocks.
    pub fn backbone_with(graph: BackboneGraph, mode: ValidationMode) -> Result<Self> {
        let report = validate_graph_with(&graph, mode);
        if !report.is_empty() {
            return Err(Error::Invalid(report));
        }
        Ok(Self { graph, head: None })
    }

    pub fn name(&self) -> &str {
        &self.graph.name
    }
}

pub fn attach_head(g: BackboneGraph, h: HeadConfig) -> Result<ModelWithHead> {
    attach_head_with(g, h, ValidationMode::Strict)
}

pub fn attach_head_with(g: BackboneGraph, h: HeadConfig, mode: ValidationMode) -> Result<ModelWithHead> {
    let report = validate_graph_with(&g, mode);
    if !report.is_empty() {
        return Err(Error::Invalid(report));
    }
    h.check()?;
    match (h.kind, g.decoder) {
        (HeadKind::FinalFeatureClassifier, Decoder::None) => {}
        (HeadKind::FinalFeatureClassifier, _) => {
            return Err(Error::Head(
                "final-feature classifier needs a graph without a pyramid decoder".into(),
            ))
        }
        (_, Decoder::None) => {
            return Err(Error::Head(format!("{} head needs pyramid levels P3..P7", h.kind)));
        }
        _ => {}
    }
    Ok(ModelWithHead { graph: g, head: Some(h) })
}
