//! Experiment description: domain, kernel, exterior datum, initial datum,
//! horizon and stepping policy, plus the run manifest and content hashing
//! that make reruns auditable.
//!
//! Configurations are TOML files; every stepping and solver default is an
//! overridable key and `resolved_toml` echoes the fully resolved spec.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{BallWindow, Domain, GridFunction};
use crate::kernel::{ExteriorProfile, KernelSpec};
use crate::stepper::SteppingPolicy;

/// Named initial-datum families. All families produce nonnegative data for
/// nonnegative heights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDatum {
    /// `height * max(0, 1 - ((x-center)/width)^2)^2`, C^1 with support
    /// `[center-width, center+width]`.
    Bump { center: f64, width: f64, height: f64 },
    /// Trapezoid of height `height` on `|x-center| < width` with linear
    /// shoulders of width `width/4`.
    Plateau { center: f64, width: f64, height: f64 },
    TwoBumps {
        center1: f64,
        center2: f64,
        width: f64,
        height: f64,
    },
    Zero,
    /// Cell-center samples from a `x,value` CSV; the row count must match
    /// the grid.
    File { path: String },
}

impl InitialDatum {
    pub fn evaluate(&self, domain: &Domain) -> Result<GridFunction> {
        let bump = |x: f64, c: f64, w: f64, h: f64| {
            let z = (x - c) / w;
            h * (1.0 - z * z).max(0.0).powi(2)
        };
        let values: Vec<f64> = match self {
            InitialDatum::Bump {
                center,
                width,
                height,
            } => {
                if !(*width > 0.0) {
                    return Err(Error::Config("bump width must be positive".into()));
                }
                domain
                    .centers()
                    .iter()
                    .map(|&x| bump(x, *center, *width, *height))
                    .collect()
            }
            InitialDatum::Plateau {
                center,
                width,
                height,
            } => {
                if !(*width > 0.0) {
                    return Err(Error::Config("plateau width must be positive".into()));
                }
                let shoulder = width / 4.0;
                domain
                    .centers()
                    .iter()
                    .map(|&x| {
                        let d = (x - center).abs();
                        height * ((width + shoulder - d) / shoulder).clamp(0.0, 1.0)
                    })
                    .collect()
            }
            InitialDatum::TwoBumps {
                center1,
                center2,
                width,
                height,
            } => {
                if !(*width > 0.0) {
                    return Err(Error::Config("bump width must be positive".into()));
                }
                domain
                    .centers()
                    .iter()
                    .map(|&x| bump(x, *center1, *width, *height) + bump(x, *center2, *width, *height))
                    .collect()
            }
            InitialDatum::Zero => vec![0.0; domain.cells],
            InitialDatum::File { path } => {
                let gf = GridFunction::load_csv(std::path::Path::new(path), 0.0)?;
                if gf.len() != domain.cells {
                    return Err(Error::DimensionMismatch {
                        expected: domain.cells,
                        got: gf.len(),
                    });
                }
                gf.values
            }
        };
        GridFunction::new(values, 0.0)
    }

    /// Scales the datum amplitude by `k` (used by sweep drivers).
    pub fn scaled(&self, k: f64) -> InitialDatum {
        match self.clone() {
            InitialDatum::Bump {
                center,
                width,
                height,
            } => InitialDatum::Bump {
                center,
                width,
                height: k * height,
            },
            InitialDatum::Plateau {
                center,
                width,
                height,
            } => InitialDatum::Plateau {
                center,
                width,
                height: k * height,
            },
            InitialDatum::TwoBumps {
                center1,
                center2,
                width,
                height,
            } => InitialDatum::TwoBumps {
                center1,
                center2,
                width,
                height: k * height,
            },
            other => other,
        }
    }
}

fn default_exterior() -> ExteriorProfile {
    ExteriorProfile::Zero
}

/// Full experiment description; the invariants of every sub-spec are
/// enforced by [`ProblemSpec::validate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub domain: Domain,
    pub kernel: KernelSpec,
    #[serde(default = "default_exterior")]
    pub exterior: ExteriorProfile,
    pub initial: InitialDatum,
    pub horizon: f64,
    #[serde(default)]
    pub stepping: SteppingPolicy,
    #[serde(default)]
    pub nonnegativity_box: Option<BallWindow>,
    #[serde(default)]
    pub seed: u64,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.kernel.validate()?;
        self.exterior.validate_growth(self.kernel.p, self.kernel.s)?;
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config(format!(
                "horizon must be a positive finite time, got {}",
                self.horizon
            )));
        }
        self.stepping.validate()?;
        // nonnegativity-dependent verifiers require nonnegative data
        if self.nonnegativity_box.is_some() {
            let u0 = self.initial.evaluate(&self.domain)?;
            if u0.min() < 0.0 {
                return Err(Error::Config(
                    "a nonnegativity certificate was requested but the initial \
                     datum takes negative values"
                        .into(),
                ));
            }
        }
        Ok(())
    }

    /// Parses a TOML configuration, reporting line/field diagnostics.
    pub fn from_toml(text: &str) -> Result<ProblemSpec> {
        let spec: ProblemSpec =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Echoes the fully resolved configuration (all defaults filled in).
    pub fn resolved_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Content hash of the spec itself.
    pub fn hash(&self) -> Result<String> {
        let payload = serde_json::to_vec(self)?;
        Ok(hex(&Sha256::digest(&payload)))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Index entry for one persisted snapshot.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub index: usize,
    pub time: f64,
    pub file: String,
}

/// Run metadata persisted as `manifest.json`. The `content_hash` covers the
/// spec, all snapshot payloads, the step history and the extinction time;
/// wall time is recorded outside the hash so reruns with identical spec and
/// seed agree on it bit for bit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub spec: ProblemSpec,
    pub spec_hash: String,
    pub content_hash: String,
    pub wall_time_s: f64,
    pub extinction_time: Option<f64>,
    pub aborted: Option<String>,
    pub dt_history: Vec<f64>,
    pub snapshots: Vec<SnapshotEntry>,
}

/// Deterministic digest of a run's scientific payload.
pub fn content_hash(
    spec: &ProblemSpec,
    snapshots: &[GridFunction],
    dt_history: &[f64],
    extinction_time: Option<f64>,
) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(spec)?);
    for gf in snapshots {
        hasher.update(gf.time.to_le_bytes());
        for v in &gf.values {
            hasher.update(v.to_le_bytes());
        }
    }
    for dt in dt_history {
        hasher.update(dt.to_le_bytes());
    }
    match extinction_time {
        Some(t) => hasher.update(t.to_le_bytes()),
        None => hasher.update(f64::NAN.to_le_bytes()),
    }
    Ok(hex(&hasher.finalize()))
}
