//! Set functions as used by the pipeline: max scoring, Platt-calibrated sum
//! scoring, or a trained DeepSets model.

use fpcp_core::setfn::{
    DeepSetsModel, DeepSetsScore, MaxScore, PlattParams, Readout, SetFunction, SumScore,
};
use fpcp_core::Tolerance;

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum SetModel {
    Max,
    Sum(PlattParams),
    DeepSets(DeepSetsModel),
}

/// DeepSets readout for a tolerance: expected FP count for k-FP control and
/// `P(FP > k)` for (k, delta)-FP control.
pub fn readout_for(tolerance: Tolerance) -> Readout {
    match tolerance {
        Tolerance::KFp { .. } => Readout::ExpectedFp,
        Tolerance::KDeltaFp { k, .. } => Readout::ExceedanceProb { k },
    }
}

impl SetModel {
    pub fn name(&self) -> &'static str {
        match self {
            SetModel::Max => "max",
            SetModel::Sum(_) => "platt",
            SetModel::DeepSets(_) => "deepsets",
        }
    }

    /// The set function `F(x, ·)` used to calibrate for `tolerance`.
    pub fn set_function(&self, tolerance: Tolerance) -> Box<dyn SetFunction + Sync + '_> {
        match self {
            SetModel::Max => Box::new(MaxScore),
            SetModel::Sum(platt) => Box::new(SumScore { platt: *platt }),
            SetModel::DeepSets(model) => Box::new(DeepSetsScore {
                model,
                readout: readout_for(tolerance),
            }),
        }
    }
}
