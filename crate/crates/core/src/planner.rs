//! Scenario planning: turns an item, a scenario and an object category into
//! an ordered list of mask-conditioned edit steps.
//!
//! Every plan keeps the ground-truth region free of near objects. The only
//! step allowed inside it is the far object of a distance plan, whose mask is
//! the vanishing-point band.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    distance_mask, intrusion_mask, region_for_action, split_regions, ActionDirection, Edge, GeometryConfig,
    GeometryError, ImageDims, MaskRegion, PadSpec,
};
use crate::manifest::BenchItem;

/// Suffix appended to the prompt of a distance step.
pub const DISTANCE_SUFFIX: &str = "Make the object smaller.";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("scenario {scenario} does not apply to ground truth {gt}")]
    ScenarioInapplicable { scenario: ScenarioKind, gt: ActionDirection },
    #[error("category {category} is not eligible for the {scenario} scenario")]
    CategoryInapplicable {
        category: ObjectCategory,
        scenario: ScenarioKind,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("plan violates the ground-truth safety invariant: {0}")]
    UnsafePlacement(String),
    #[error("unknown {kind} '{value}'")]
    Unknown { kind: &'static str, value: String },
}

impl PlanError {
    /// Inapplicability is an expected outcome of the scenario x category
    /// product, not a failure.
    pub fn is_inapplicable(&self) -> bool {
        matches!(self, Self::ScenarioInapplicable { .. } | Self::CategoryInapplicable { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CategoryClass {
    Common,
    Anomalous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mobility {
    Movable,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectCategory {
    Human,
    Motorcycle,
    Bicycle,
    Cone,
    Rocks,
    Debris,
    Roadkill,
    Dog,
    Cat,
    Deer,
    Fox,
    Pig,
    Raccoon,
}

impl ObjectCategory {
    /// Common categories first, then anomalous ones.
    pub const ALL: [ObjectCategory; 13] = [
        Self::Human,
        Self::Motorcycle,
        Self::Bicycle,
        Self::Cone,
        Self::Rocks,
        Self::Debris,
        Self::Roadkill,
        Self::Dog,
        Self::Cat,
        Self::Deer,
        Self::Fox,
        Self::Pig,
        Self::Raccoon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Human => "human",
            Self::Motorcycle => "motorcycle",
            Self::Bicycle => "bicycle",
            Self::Cone => "cone",
            Self::Rocks => "rocks",
            Self::Debris => "debris",
            Self::Roadkill => "roadkill",
            Self::Dog => "dog",
            Self::Cat => "cat",
            Self::Deer => "deer",
            Self::Fox => "fox",
            Self::Pig => "pig",
            Self::Raccoon => "raccoon",
        }
    }

    pub fn class(self) -> CategoryClass {
        match self {
            Self::Human | Self::Motorcycle | Self::Bicycle | Self::Cone => CategoryClass::Common,
            _ => CategoryClass::Anomalous,
        }
    }

    pub fn mobility(self) -> Mobility {
        match self {
            Self::Cone | Self::Rocks | Self::Debris | Self::Roadkill => Mobility::Static,
            _ => Mobility::Movable,
        }
    }
}

impl fmt::Display for ObjectCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectCategory {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|c| c.name() == key)
            .ok_or_else(|| PlanError::Unknown {
                kind: "category",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Static,
    Motion,
    Intrusion,
    Distance,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [Self::Static, Self::Motion, Self::Intrusion, Self::Distance];

    pub fn name(self) -> &'static str {
        match self {
            Self::Static => "static",
            Self::Motion => "motion",
            Self::Intrusion => "intrusion",
            Self::Distance => "distance",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Self::Static => "Static",
            Self::Motion => "Motion",
            Self::Intrusion => "Intrusion",
            Self::Distance => "Distance",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| PlanError::Unknown {
                kind: "scenario",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    FacingLeft,
    FacingRight,
    FacingForward,
    FacingBackward,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [
        Self::FacingLeft,
        Self::FacingRight,
        Self::FacingForward,
        Self::FacingBackward,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::FacingLeft => "facing left",
            Self::FacingRight => "facing right",
            Self::FacingForward => "facing forward",
            Self::FacingBackward => "facing backward",
        }
    }

    /// Finds the first orientation phrase mentioned in a prompt.
    pub fn from_prompt(prompt: &str) -> Option<Self> {
        let lower = prompt.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .filter_map(|o| lower.find(o.as_str()).map(|pos| (pos, o)))
            .min_by_key(|(pos, _)| *pos)
            .map(|(_, o)| o)
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditMode {
    Default,
    Motion,
    Intrusion,
    Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditStep {
    /// Original frame, or the padded frame for intrusion steps.
    pub mask: MaskRegion,
    pub prompt: String,
    pub orientation: Orientation,
    pub mode: EditMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad: Option<PadSpec>,
    #[serde(default)]
    pub distance_suffix: bool,
}

impl EditStep {
    fn new(category: ObjectCategory, orientation: Orientation, mode: EditMode, mask: MaskRegion) -> Self {
        Self {
            mask,
            prompt: build_prompt(category, orientation),
            orientation,
            mode,
            pad: None,
            distance_suffix: mode == EditMode::Distance,
        }
    }

    /// The step's footprint on the final, unpadded image.
    pub fn final_footprint(&self, original_width: u32) -> Option<MaskRegion> {
        self.mask.to_original(original_width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditPlan {
    pub item_id: String,
    pub scenario: ScenarioKind,
    pub category: ObjectCategory,
    pub gt: ActionDirection,
    pub dims: ImageDims,
    pub steps: Vec<EditStep>,
}

impl EditPlan {
    /// Checks the structural invariants every planner guarantees.
    pub fn validate(&self) -> Result<(), PlanError> {
        let gt_region = region_for_action(self.gt, self.dims)?;
        let w = self.dims.width;
        let mut distance_steps = 0;
        for (i, step) in self.steps.iter().enumerate() {
            let frame_w = step.mask.frame.width(w);
            step.mask.check_within(frame_w, self.dims.height)?;
            if (step.mode == EditMode::Intrusion) != step.pad.is_some() {
                return Err(PlanError::UnsafePlacement(format!("step {i}: pad present iff intrusion mode")));
            }
            if (step.mode == EditMode::Distance) != step.distance_suffix {
                return Err(PlanError::UnsafePlacement(format!(
                    "step {i}: distance suffix iff distance mode"
                )));
            }
            if step.prompt != build_prompt(self.category, step.orientation) {
                return Err(PlanError::UnsafePlacement(format!("step {i}: prompt does not match template")));
            }
            let footprint = step
                .final_footprint(w)
                .ok_or_else(|| PlanError::UnsafePlacement(format!("step {i}: mask leaves nothing after crop")))?;
            if step.mode == EditMode::Distance {
                distance_steps += 1;
                if !gt_region.contains(&footprint) {
                    return Err(PlanError::UnsafePlacement(format!(
                        "step {i}: distance mask {footprint} outside ground-truth region {gt_region}"
                    )));
                }
            } else if footprint.intersects(&gt_region) {
                return Err(PlanError::UnsafePlacement(format!(
                    "step {i}: mask {footprint} intersects ground-truth region {gt_region}"
                )));
            }
        }
        let expected = usize::from(self.scenario == ScenarioKind::Distance);
        if distance_steps != expected {
            return Err(PlanError::UnsafePlacement(format!(
                "{distance_steps} distance steps in a {} plan",
                self.scenario
            )));
        }
        Ok(())
    }
}

/// `"Render a {category}, {orientation}."`
pub fn build_prompt(category: ObjectCategory, orientation: Orientation) -> String {
    format!("Render a {}, {}.", category.name(), orientation.as_str())
}

/// Prompt actually sent to the editor for a step.
pub fn effective_prompt(step: &EditStep) -> String {
    if step.mode == EditMode::Distance {
        format!("{} {DISTANCE_SUFFIX}", step.prompt)
    } else {
        step.prompt.clone()
    }
}

/// Static objects cannot move or intrude; every other pairing is allowed.
pub fn eligibility(category: ObjectCategory, scenario: ScenarioKind) -> bool {
    !(category.mobility() == Mobility::Static && matches!(scenario, ScenarioKind::Motion | ScenarioKind::Intrusion))
}

fn require_eligible(category: ObjectCategory, scenario: ScenarioKind) -> Result<(), PlanError> {
    if eligibility(category, scenario) {
        Ok(())
    } else {
        Err(PlanError::CategoryInapplicable { category, scenario })
    }
}

fn plan_of(item: &BenchItem, scenario: ScenarioKind, category: ObjectCategory, dims: ImageDims, steps: Vec<EditStep>) -> Result<EditPlan, PlanError> {
    let plan = EditPlan {
        item_id: item.id.clone(),
        scenario,
        category,
        gt: item.gt,
        dims,
        steps,
    };
    plan.validate()?;
    Ok(plan)
}

fn near_steps(gt: ActionDirection, category: ObjectCategory, dims: ImageDims) -> Result<Vec<EditStep>, PlanError> {
    let regions = split_regions(dims)?;
    Ok(ActionDirection::ALL
        .into_iter()
        .zip(regions)
        .filter(|(action, _)| *action != gt)
        .map(|(_, region)| EditStep::new(category, Orientation::FacingForward, EditMode::Default, region))
        .collect())
}

/// Front-facing objects in both non-ground-truth regions, left to right.
pub fn plan_static(item: &BenchItem, category: ObjectCategory, dims: ImageDims) -> Result<EditPlan, PlanError> {
    let steps = near_steps(item.gt, category, dims)?;
    plan_of(item, ScenarioKind::Static, category, dims, steps)
}

/// One centered object facing away from the ground-truth side.
pub fn plan_motion(item: &BenchItem, category: ObjectCategory, dims: ImageDims) -> Result<EditPlan, PlanError> {
    let orientation = match item.gt {
        ActionDirection::Right => Orientation::FacingLeft,
        ActionDirection::Left => Orientation::FacingRight,
        ActionDirection::Center => {
            return Err(PlanError::ScenarioInapplicable {
                scenario: ScenarioKind::Motion,
                gt: item.gt,
            })
        }
    };
    require_eligible(category, ScenarioKind::Motion)?;
    let center = region_for_action(ActionDirection::Center, dims)?;
    let steps = vec![EditStep::new(category, orientation, EditMode::Motion, center)];
    plan_of(item, ScenarioKind::Motion, category, dims, steps)
}

/// Objects entering from the image edges away from the ground truth, plus a
/// front-facing center object when the ground truth is a side.
pub fn plan_intrusion(
    item: &BenchItem,
    category: ObjectCategory,
    dims: ImageDims,
    cfg: &GeometryConfig,
) -> Result<EditPlan, PlanError> {
    require_eligible(category, ScenarioKind::Intrusion)?;
    let intrusion = |edge: Edge| -> Result<EditStep, PlanError> {
        let orientation = match edge {
            Edge::Left => Orientation::FacingRight,
            Edge::Right => Orientation::FacingLeft,
        };
        let mask = intrusion_mask(edge, dims, cfg)?;
        let mut step = EditStep::new(category, orientation, EditMode::Intrusion, mask);
        step.pad = Some(PadSpec::new(edge, cfg.pad_width, dims.width)?);
        Ok(step)
    };
    let center = || -> Result<EditStep, PlanError> {
        let region = region_for_action(ActionDirection::Center, dims)?;
        Ok(EditStep::new(category, Orientation::FacingForward, EditMode::Default, region))
    };
    let steps = match item.gt {
        ActionDirection::Left => vec![center()?, intrusion(Edge::Right)?],
        ActionDirection::Right => vec![intrusion(Edge::Left)?, center()?],
        ActionDirection::Center => vec![intrusion(Edge::Left)?, intrusion(Edge::Right)?],
    };
    plan_of(item, ScenarioKind::Intrusion, category, dims, steps)
}

/// Near objects outside the ground truth, then a far object in the band
/// around the vanishing point inside it. `vp_y` uses the bottom-left mask
/// convention (see [`crate::geometry::raster_row_to_mask_y`]).
pub fn plan_distance(
    item: &BenchItem,
    category: ObjectCategory,
    dims: ImageDims,
    cfg: &GeometryConfig,
    vp_y: u32,
) -> Result<EditPlan, PlanError> {
    let mut steps = near_steps(item.gt, category, dims)?;
    let gt_region = region_for_action(item.gt, dims)?;
    let far = distance_mask(&gt_region, vp_y, dims, cfg)?;
    steps.push(EditStep::new(category, Orientation::FacingForward, EditMode::Distance, far));
    plan_of(item, ScenarioKind::Distance, category, dims, steps)
}

/// Dispatches to the scenario's planner. `vp_y` is only read for distance plans.
pub fn plan(
    item: &BenchItem,
    scenario: ScenarioKind,
    category: ObjectCategory,
    dims: ImageDims,
    cfg: &GeometryConfig,
    vp_y: u32,
) -> Result<EditPlan, PlanError> {
    match scenario {
        ScenarioKind::Static => plan_static(item, category, dims),
        ScenarioKind::Motion => plan_motion(item, category, dims),
        ScenarioKind::Intrusion => plan_intrusion(item, category, dims, cfg),
        ScenarioKind::Distance => plan_distance(item, category, dims, cfg, vp_y),
    }
}
