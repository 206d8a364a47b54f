use crate::geometry::Box3;
use crate::synth::CarCategory;

/// Which pipeline step last touched a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    ModelFit,
    Stage1,
    Stage2,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::ModelFit => "fit",
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
        }
    }
}

/// A scored 3D box in the LiDAR frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: Box3,
    pub score: f64,
    pub category: CarCategory,
    pub stage: Stage,
}
