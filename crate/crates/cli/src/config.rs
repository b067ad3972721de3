use std::path::Path;

use histoport::policy::{Descriptor, PolicyConfig};
use histoport::train::TrainConfig;
use histoport::EnvConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Flat run configuration; every field is optional in the file and unknown
/// keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub pick_crop: usize,
    pub place_crop: usize,
    pub descriptor: Descriptor,
    pub kernel_size: usize,
    pub pick_fields: usize,
    pub pick_frequency: u32,
    pub pick_hidden: usize,
    pub angle_fields: usize,
    pub angle_frequency: u32,
    pub angle_head_frequency: u32,
    pub place_fields: usize,
    pub place_frequency: u32,
    pub place_layers: usize,

    pub iterations: usize,
    pub learning_rate: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub augment_rotation: bool,
    pub augment_shift: usize,
    pub seed: u64,

    pub demos: usize,
    pub first_demo_seed: u64,

    pub clearance: f64,
    pub asymmetry_angles: usize,
    pub max_rotation_iou: f64,
    pub min_cells: usize,
    pub max_cells: usize,
    pub min_diameter: f64,
    pub max_diameter: f64,
    pub max_attempts: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PolicyConfig::default();
        let t = TrainConfig::default();
        let e = EnvConfig::default();
        RunConfig {
            height: p.height,
            width: p.width,
            channels: p.channels,
            n: p.n,
            m: p.m,
            pick_crop: p.pick_crop,
            place_crop: p.place_crop,
            descriptor: p.descriptor,
            kernel_size: p.kernel_size,
            pick_fields: p.pick_fields,
            pick_frequency: p.pick_frequency,
            pick_hidden: p.pick_hidden,
            angle_fields: p.angle_fields,
            angle_frequency: p.angle_frequency,
            angle_head_frequency: p.angle_head_frequency,
            place_fields: p.place_fields,
            place_frequency: p.place_frequency,
            place_layers: p.place_layers,
            iterations: t.iterations,
            learning_rate: t.learning_rate,
            eval_every: t.eval_every,
            eval_episodes: t.eval_episodes,
            augment_rotation: t.augment_rotation,
            augment_shift: t.augment_shift,
            seed: t.seed,
            demos: 10,
            first_demo_seed: 0,
            clearance: e.clearance,
            asymmetry_angles: e.asymmetry_angles,
            max_rotation_iou: e.max_rotation_iou,
            min_cells: e.min_cells,
            max_cells: e.max_cells,
            min_diameter: e.min_diameter,
            max_diameter: e.max_diameter,
            max_attempts: e.max_attempts,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn policy(&self) -> PolicyConfig {
        PolicyConfig {
            height: self.height,
            width: self.width,
            channels: self.channels,
            n: self.n,
            m: self.m,
            pick_crop: self.pick_crop,
            place_crop: self.place_crop,
            descriptor: self.descriptor,
            kernel_size: self.kernel_size,
            pick_fields: self.pick_fields,
            pick_frequency: self.pick_frequency,
            pick_hidden: self.pick_hidden,
            angle_fields: self.angle_fields,
            angle_frequency: self.angle_frequency,
            angle_head_frequency: self.angle_head_frequency,
            place_fields: self.place_fields,
            place_frequency: self.place_frequency,
            place_layers: self.place_layers,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            eval_every: self.eval_every,
            eval_episodes: self.eval_episodes,
            augment_rotation: self.augment_rotation,
            augment_shift: self.augment_shift,
            seed: self.seed,
            policy: self.policy(),
        }
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            height: self.height,
            width: self.width,
            channels: self.channels,
            clearance: self.clearance,
            asymmetry_angles: self.asymmetry_angles,
            max_rotation_iou: self.max_rotation_iou,
            min_cells: self.min_cells,
            max_cells: self.max_cells,
            min_diameter: self.min_diameter,
            max_diameter: self.max_diameter,
            max_attempts: self.max_attempts,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.demos == 0 {
            return Err(CliError::Config("demos must be positive".into()));
        }
        self.train().validate()?;
        Ok(())
    }
}
