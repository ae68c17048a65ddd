//! Ablation harness: trains a list of model variants on the same data and
//! tabulates their test MAE per horizon.

use std::fmt::Write as _;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, MaeMode};
use crate::motion::Dataset;
use crate::refine::StageInput;
use crate::training::{train_loop_with, EpochMetrics, TrainOutputs, Trainer};

/// A named set of overrides on a base configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    /// Total networks in the cascade (predictor plus refinement stages).
    pub total_stages: usize,
    pub stage_input: StageInput,
    pub adversarial: bool,
}

impl Variant {
    pub fn new(name: &str, total_stages: usize, stage_input: StageInput, adversarial: bool) -> Self {
        Self {
            name: name.to_string(),
            total_stages,
            stage_input,
            adversarial,
        }
    }

    pub fn apply(&self, base: &TrainConfig) -> Result<TrainConfig> {
        if self.total_stages == 0 {
            return Err(Error::Config(format!("variant {} has no stages", self.name)));
        }
        Ok(TrainConfig {
            stages: self.total_stages - 1,
            stage_input: self.stage_input,
            adversarial: self.adversarial,
            ..base.clone()
        })
    }
}

/// Stacking versus refinement, then the adversarial model at 2, 3 and 4 stages.
pub fn standard_variants() -> Vec<Variant> {
    vec![
        Variant::new("coarse_1stage", 1, StageInput::Fused, false),
        Variant::new("coarse_2stage_stacked", 2, StageInput::Plain, false),
        Variant::new("refine_2stage", 2, StageInput::Fused, false),
        Variant::new("adversarial_2stage", 2, StageInput::Fused, true),
        Variant::new("adversarial_3stage", 3, StageInput::Fused, true),
        Variant::new("adversarial_4stage", 4, StageInput::Fused, true),
    ]
}

/// Looks up variants by name.
pub fn select_variants(names: &[&str]) -> Result<Vec<Variant>> {
    let all = standard_variants();
    names
        .iter()
        .map(|n| {
            all.iter()
                .find(|v| v.name == *n)
                .cloned()
                .ok_or_else(|| Error::Argument(format!("unknown variant {n:?}")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    /// Action-averaged MAE of the final output per horizon.
    pub mae: Vec<f64>,
    pub log: Vec<EpochMetrics>,
}

impl AblationRow {
    pub fn mean(&self) -> f64 {
        self.mae.iter().sum::<f64>() / self.mae.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub horizons_ms: Vec<u32>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// `variant,<horizon>...,mean`, one row per variant in run order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant");
        for h in &self.horizons_ms {
            let _ = write!(out, ",{h}");
        }
        out.push_str(",mean\n");
        for row in &self.rows {
            out.push_str(&row.variant);
            for v in &row.mae {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{}", row.mean());
        }
        out
    }

    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

/// Trains every variant on `train` from the same base configuration and
/// evaluates it on `test`.
pub fn run_ablation(
    train: &Dataset,
    test: &Dataset,
    base: &TrainConfig,
    variants: &[Variant],
    horizons_ms: &[u32],
    mode: MaeMode,
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let mut trainer = Trainer::new(v.apply(base)?, train.channels())?;
        let log = train_loop_with(&mut trainer, train, Some(test), &TrainOutputs::default())?;
        let report = evaluate(&trainer.model, test, &trainer.codec()?, horizons_ms, mode)?;
        rows.push(AblationRow {
            variant: v.name.clone(),
            mae: report.refined.average(),
            log,
        });
    }
    Ok(AblationTable {
        horizons_ms: horizons_ms.to_vec(),
        rows,
    })
}
