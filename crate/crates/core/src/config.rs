//! Run configuration: JSON schema, validation, seeded parameter sampling,
//! and the config hash recorded in dataset manifests.

use crate::error::{Error, Result};
use crate::garment::GarmentSpec;
use crate::math::Real;
use crate::perception::{CameraJitter, Intrinsics, NoiseParams};
use crate::primitives::PrimitiveTemplates;
use crate::rng;
use crate::solver::material::MaterialParams;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

/// Closed interval for a randomized scalar. `min == max` pins the value.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: Real,
    pub max: Real,
}

impl Range {
    pub const fn fixed(v: Real) -> Range {
        Range { min: v, max: v }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(Error::Config(format!(
                "{name}: invalid range [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Real {
        if self.min == self.max {
            self.min
        } else {
            rng.gen_range(self.min..self.max)
        }
    }
}

/// Garment dimension randomization, meters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GarmentRanges {
    pub body_length: Range,
    pub hem_width: Range,
    pub collar_part_length: Range,
    pub collar_part_width: Range,
    pub front_neck_drop: Range,
    pub target_edge_length: Real,
}

impl Default for GarmentRanges {
    fn default() -> Self {
        GarmentRanges {
            body_length: Range { min: 0.55, max: 0.68 },
            hem_width: Range { min: 0.44, max: 0.54 },
            collar_part_length: Range { min: 0.19, max: 0.25 },
            collar_part_width: Range { min: 0.06, max: 0.08 },
            front_neck_drop: Range { min: 0.04, max: 0.05 },
            target_edge_length: 0.02,
        }
    }
}

impl GarmentRanges {
    pub fn validate(&self) -> Result<()> {
        self.body_length.validate("garment.body_length")?;
        self.hem_width.validate("garment.hem_width")?;
        self.collar_part_length.validate("garment.collar_part_length")?;
        self.collar_part_width.validate("garment.collar_part_width")?;
        self.front_neck_drop.validate("garment.front_neck_drop")?;
        if !(self.target_edge_length > 0.0) {
            return Err(Error::Config(
                "garment.target_edge_length must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng, mesh_seed: u64, thickness: Real) -> GarmentSpec {
        GarmentSpec {
            body_length: self.body_length.sample(rng),
            hem_width: self.hem_width.sample(rng),
            collar_part_length: self.collar_part_length.sample(rng),
            collar_part_width: self.collar_part_width.sample(rng),
            front_neck_drop: self.front_neck_drop.sample(rng),
            target_edge_length: self.target_edge_length,
            thickness,
            seed: mesh_seed,
        }
    }
}

/// Material randomization. Young's modulus in Pa; density fixed per run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialRanges {
    pub youngs_modulus: Range,
    /// Shear stiffness as a fraction of the sampled Young's modulus. Woven
    /// and knit fabrics resist in-plane shear far more weakly than stretch
    /// (trellising of the yarn grid); keeping this ratio small is what lets
    /// one panel of a sewn garment lag behind the other under friction,
    /// which the drag primitive relies on to expose a single layer.
    pub shear_ratio: Range,
    pub normal_stiffness: Range,
    pub density: Real,
    pub thickness: Range,
    pub mu_cloth: Range,
    pub mu_robot: Range,
    pub mu_table: Range,
    pub damping: Range,
}

impl Default for MaterialRanges {
    fn default() -> Self {
        MaterialRanges {
            youngs_modulus: Range { min: 1.0e5, max: 3.0e6 },
            shear_ratio: Range { min: 0.005, max: 0.03 },
            normal_stiffness: Range { min: 8.0e3, max: 2.0e4 },
            density: 1000.0,
            thickness: Range { min: 1.5e-4, max: 3.0e-4 },
            mu_cloth: Range { min: 0.3, max: 0.5 },
            mu_robot: Range { min: 0.7, max: 0.9 },
            mu_table: Range { min: 0.6, max: 0.9 },
            damping: Range { min: 1.5, max: 3.0 },
        }
    }
}

impl MaterialRanges {
    pub fn validate(&self) -> Result<()> {
        self.youngs_modulus.validate("material.youngs_modulus")?;
        self.shear_ratio.validate("material.shear_ratio")?;
        self.normal_stiffness.validate("material.normal_stiffness")?;
        self.thickness.validate("material.thickness")?;
        self.mu_cloth.validate("material.mu_cloth")?;
        self.mu_robot.validate("material.mu_robot")?;
        self.mu_table.validate("material.mu_table")?;
        self.damping.validate("material.damping")?;
        if !(self.youngs_modulus.min > 0.0) {
            return Err(Error::Config("material.youngs_modulus must be positive".into()));
        }
        if !(self.density > 0.0) {
            return Err(Error::Config("material.density must be positive".into()));
        }
        if !(self.thickness.min > 0.0) {
            return Err(Error::Config("material.thickness must be positive".into()));
        }
        Ok(())
    }

    /// Sampled material plus the table friction coefficient.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> (MaterialParams, Real) {
        let e = self.youngs_modulus.sample(rng);
        let mat = MaterialParams {
            youngs_modulus: e,
            shear_stiffness: self.shear_ratio.sample(rng) * e,
            normal_stiffness: self.normal_stiffness.sample(rng),
            density: self.density,
            thickness: self.thickness.sample(rng),
            mu_cloth: self.mu_cloth.sample(rng),
            mu_robot: self.mu_robot.sample(rng),
            damping: self.damping.sample(rng),
        };
        let mu_table = self.mu_table.sample(rng);
        (mat, mu_table)
    }
}

/// Fixed workspace layout.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Top of the foam mat.
    pub table_height: Real,
    /// Garment center along x; the hem faces -x.
    pub garment_center_x: Real,
    /// Camera height above the table.
    pub camera_height: Real,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            table_height: 0.03,
            garment_center_x: 0.2,
            camera_height: 1.1,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub intrinsics: Intrinsics,
    pub jitter: CameraJitter,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            intrinsics: Intrinsics::default(),
            jitter: CameraJitter::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Grid spacing as a multiple of the target mesh edge length.
    ///
    /// 1.5 keeps 2-4 particles per cell, the usual operating point for MPM
    /// solids. Garment work cares about something else: two panels lying on
    /// top of each other can only move independently once the grid can tell
    /// them apart, so relative panel motion (dragging one layer over the
    /// other, opening the hem mouth) needs the spacing comfortably below the
    /// tent/fold scale. The manipulation pipeline therefore runs at 0.75;
    /// quadrature points keep every near-sheet node massed at that spacing.
    pub grid_spacing_factor: Real,
    /// CFL safety factor applied per substep.
    pub safety: Real,
    /// Substep budget per 50 ms control tick.
    pub max_substeps_per_tick: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            grid_spacing_factor: 1.5,
            safety: 0.9,
            max_substeps_per_tick: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutConfig {
    pub episodes: usize,
    /// Worker environments (parallelism cap).
    pub envs: usize,
    /// Keypoint candidates rolled out per bimanual stage (>= 1; the last is
    /// the heuristic choice the episode continues from).
    pub candidates: usize,
    /// Stage-2 threshold: fraction of image pixels the upper-side hem
    /// single-layer set must strictly exceed.
    pub tau_area: Real,
    /// Initial settle duration, seconds.
    pub settle_time: Real,
    /// Rest period after each primitive before observing, seconds.
    pub post_stage_settle: Real,
    /// Grasp attachment margin around the jaw volume, meters.
    pub attach_margin: Real,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            episodes: 128,
            envs: 8,
            candidates: 8,
            tau_area: 0.02,
            settle_time: 1.0,
            post_stage_settle: 0.5,
            attach_margin: 0.012,
        }
    }
}

/// Top-level run configuration. Unknown keys are rejected everywhere.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: SchemaVersion,
    pub seed: u64,
    pub garment: GarmentRanges,
    pub material: MaterialRanges,
    pub scene: SceneConfig,
    pub camera: CameraConfig,
    pub noise: NoiseParams,
    pub templates: PrimitiveTemplates,
    pub solver: SolverConfig,
    pub rollout: RolloutConfig,
}

/// Version marker that refuses to parse configs from other schema versions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SchemaVersion(pub u32);

impl Default for SchemaVersion {
    fn default() -> Self {
        SchemaVersion(SCHEMA_VERSION)
    }
}

impl<'de> Deserialize<'de> for SchemaVersion {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u32::deserialize(d)?;
        if v != SCHEMA_VERSION {
            return Err(serde::de::Error::custom(format!(
                "unsupported schema_version {v}, expected {SCHEMA_VERSION}"
            )));
        }
        Ok(SchemaVersion(v))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.garment.validate()?;
        self.material.validate()?;
        if !(self.scene.camera_height > 0.2) {
            return Err(Error::Config("scene.camera_height too small".into()));
        }
        if !(self.solver.grid_spacing_factor >= 0.5 && self.solver.grid_spacing_factor <= 4.0) {
            return Err(Error::Config(
                "solver.grid_spacing_factor must be in [0.5, 4]".into(),
            ));
        }
        if !(self.solver.safety > 0.0 && self.solver.safety <= 1.0) {
            return Err(Error::Config("solver.safety must be in (0, 1]".into()));
        }
        if self.solver.max_substeps_per_tick == 0 {
            return Err(Error::Config("solver.max_substeps_per_tick must be >= 1".into()));
        }
        if self.rollout.candidates == 0 {
            return Err(Error::Config("rollout.candidates must be >= 1".into()));
        }
        if self.rollout.envs == 0 {
            return Err(Error::Config("rollout.envs must be >= 1".into()));
        }
        if !(self.rollout.tau_area > 0.0 && self.rollout.tau_area < 1.0) {
            return Err(Error::Config("rollout.tau_area must be in (0, 1)".into()));
        }
        if !(self.rollout.attach_margin >= 0.0) {
            return Err(Error::Config("rollout.attach_margin must be >= 0".into()));
        }
        if !(self.noise.dropout >= 0.0 && self.noise.dropout <= 1.0) {
            return Err(Error::Config("noise.dropout must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<RunConfig> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| Error::Config(format!("at `{}`: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Sample episode `index`'s garment spec. Draw order is fixed.
    pub fn sample_garment(&self, index: u64) -> GarmentSpec {
        let mut grng = rng::stream(self.seed, rng::streams::GARMENT, index);
        let mesh_seed: u64 = grng.gen();
        // Thickness comes from the material stream so garment geometry and
        // material stay independently re-randomizable.
        let mut mrng = rng::stream(self.seed, rng::streams::MATERIAL, index);
        let (mat, _) = self.material.sample(&mut mrng);
        self.garment.sample(&mut grng, mesh_seed, mat.thickness)
    }

    /// Sample episode `index`'s material and table friction.
    pub fn sample_material(&self, index: u64) -> (MaterialParams, Real) {
        let mut mrng = rng::stream(self.seed, rng::streams::MATERIAL, index);
        self.material.sample(&mut mrng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_and_hashes_stably() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back = RunConfig::from_json(&json).unwrap();
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_json(r#"{"seed": 1, "bogus_key": 2}"#).unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("bogus_key"));
    }

    #[test]
    fn wrong_schema_version_rejected() {
        let err = RunConfig::from_json(r#"{"schema_version": 99}"#).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn inverted_range_rejected() {
        let mut cfg = RunConfig::default();
        cfg.material.youngs_modulus = Range { min: 2.0, max: 1.0 };
        assert!(cfg.validate().unwrap_err().is_config());
    }

    #[test]
    fn sampling_is_reproducible_and_in_range() {
        let cfg = RunConfig { seed: 77, ..RunConfig::default() };
        let a = cfg.sample_garment(3);
        let b = cfg.sample_garment(3);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let (m, mu_t) = cfg.sample_material(3);
        assert!(m.youngs_modulus >= cfg.material.youngs_modulus.min);
        assert!(m.youngs_modulus <= cfg.material.youngs_modulus.max);
        assert!(mu_t >= cfg.material.mu_table.min && mu_t <= cfg.material.mu_table.max);
        assert_ne!(cfg.sample_garment(4).seed, a.seed);
    }
}
