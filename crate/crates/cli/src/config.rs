//! Scenario files: JSON, unknown keys rejected, validated before any
//! computation. `docs/scenario.schema.json` is generated from these types.

use std::path::Path;

use rkck::coherent::CoherentLabel;
use rkck::constraint::SearchGrid;
use rkck::oracle::Example;
use rkck::product::{LabelSequence, SequenceFamily};
use rkck::reduce::Rescale;
use rkck::{ConstraintKind, C64};
use schemars::JsonSchema;
use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Debug, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub space: SpaceSpec,
    #[serde(default)]
    pub fiducial: FiducialSpec,
    #[serde(default)]
    pub constraints: ConstraintSpec,
    pub hamiltonian: Option<HamiltonianSpec>,
    pub grid: Option<GridSpec>,
    /// Propagation times.
    #[serde(default)]
    pub times: Vec<f64>,
    pub reduce: Option<ReduceSpec>,
    pub product: Option<ProductSpec>,
    /// Closed-form comparison table written next to the kernel table.
    pub oracle: Option<OracleTableSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Clone, Debug, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub modes: usize,
    /// Levels per mode.
    pub cutoff: usize,
    /// Cap on the total occupation number.
    pub number_cap: Option<usize>,
    pub tail_tolerance: Option<f64>,
}

/// A phase-space label, either as `p`/`q` arrays or as complex `z = (q + i p)/sqrt 2`.
#[derive(Clone, Debug, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum LabelSpec {
    PQ(PqLabel),
    Z(ZLabel),
}

#[derive(Clone, Debug, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PqLabel {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ZLabel {
    /// `[re, im]` per mode.
    pub z: Vec<[f64; 2]>,
}

impl LabelSpec {
    pub fn to_label(&self) -> rkck::Result<CoherentLabel> {
        match self {
            LabelSpec::PQ(l) => CoherentLabel::new(l.p.clone(), l.q.clone()),
            LabelSpec::Z(l) => {
                let z: Vec<C64> = l.z.iter().map(|[re, im]| C64::new(*re, *im)).collect();
                CoherentLabel::from_z(&z)
            }
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FiducialSpec {
    #[default]
    Ground,
    Fock {
        occupations: Vec<usize>,
    },
    Coherent {
        label: LabelSpec,
    },
    /// Amplitudes `[re, im]` in the Fock basis; must already be normalised.
    Vector {
        amplitudes: Vec<[f64; 2]>,
    },
    /// The eigenvector picked by the Hamiltonian's shift selection.
    Selected,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, JsonSchema, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintClass {
    #[default]
    Discrete,
    SecondClass,
    ContinuousZero,
}

impl From<ConstraintClass> for ConstraintKind {
    fn from(c: ConstraintClass) -> Self {
        match c {
            ConstraintClass::Discrete => ConstraintKind::DiscreteSpectrum,
            ConstraintClass::SecondClass => ConstraintKind::SecondClass,
            ConstraintClass::ContinuousZero => ConstraintKind::ContinuousZero,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, JsonSchema, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum NamedSet {
    /// `J1, J2, J3` (three modes).
    AngularMomentum,
    /// `P_j, Q_j` for every mode.
    Canonical,
}

#[derive(Clone, Debug, Default, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    #[default]
    None,
    Operators {
        operators: Vec<String>,
        #[serde(default)]
        class: ConstraintClass,
        delta_squared: f64,
    },
    Named {
        name: NamedSet,
        delta_squared: f64,
    },
    /// `E(P_mode^2 <= delta^2)`; `mode` is 1-based.
    MomentumWindow {
        mode: usize,
        delta: Option<f64>,
    },
}

#[derive(Clone, Copy, Debug, Default, Deserialize, JsonSchema, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum BranchSpec {
    #[default]
    General,
    Commuting,
}

impl From<BranchSpec> for rkck::dynamics::Branch {
    fn from(b: BranchSpec) -> Self {
        match b {
            BranchSpec::General => rkck::dynamics::Branch::General,
            BranchSpec::Commuting => rkck::dynamics::Branch::Commuting,
        }
    }
}

#[derive(Clone, Debug, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSpec {
    pub expression: String,
    #[serde(default)]
    pub branch: BranchSpec,
}

#[derive(Clone, Debug, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    /// Explicit `[bra, ket]` pairs.
    Pairs { pairs: Vec<[LabelSpec; 2]> },
    /// Every ordered pair of the listed labels, row-major.
    Labels { labels: Vec<LabelSpec> },
    /// `count` pairs drawn uniformly from the ball `|z| <= radius` (uses `--seed`).
    Random { count: usize, radius: f64 },
}

#[derive(Clone, Debug, Default, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RescaleSpec {
    #[default]
    None,
    HalfInverseDelta,
    W {
        extent: f64,
        nodes: usize,
    },
}

impl From<&RescaleSpec> for Rescale {
    fn from(r: &RescaleSpec) -> Self {
        match r {
            RescaleSpec::None => Rescale::None,
            RescaleSpec::HalfInverseDelta => Rescale::HalfInverseDelta,
            RescaleSpec::W { extent, nodes } => Rescale::W(SearchGrid {
                extent: *extent,
                nodes: *nodes,
            }),
        }
    }
}

#[derive(Clone, Debug, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ReduceSpec {
    /// Strictly decreasing `delta` values.
    pub ladder: Vec<f64>,
    #[serde(default)]
    pub rescale: RescaleSpec,
    pub labels: Vec<LabelSpec>,
}

#[derive(Clone, Debug, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    Constant,
    FiniteSupport { offset: LabelSpec, support: usize },
    PowerLaw { amplitude: LabelSpec, alpha: f64 },
    Geometric { amplitude: LabelSpec, ratio: f64 },
    Custom { labels: Vec<LabelSpec> },
}

#[derive(Clone, Debug, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SequenceSpec {
    pub limit: LabelSpec,
    pub family: FamilySpec,
}

impl SequenceSpec {
    pub fn to_sequence(&self) -> rkck::Result<LabelSequence> {
        let limit = self.limit.to_label()?;
        let family = match &self.family {
            FamilySpec::Constant => return Ok(LabelSequence::constant(limit)),
            FamilySpec::FiniteSupport { offset, support } => SequenceFamily::FiniteSupport {
                offset: offset.to_label()?,
                support: *support,
            },
            FamilySpec::PowerLaw { amplitude, alpha } => SequenceFamily::PowerLaw {
                amplitude: amplitude.to_label()?,
                alpha: *alpha,
            },
            FamilySpec::Geometric { amplitude, ratio } => SequenceFamily::Geometric {
                amplitude: amplitude.to_label()?,
                ratio: *ratio,
            },
            FamilySpec::Custom { labels } => SequenceFamily::CustomFinite {
                labels: labels
                    .iter()
                    .map(LabelSpec::to_label)
                    .collect::<rkck::Result<_>>()?,
            },
        };
        LabelSequence::new(limit, family)
    }
}

#[derive(Clone, Debug, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ProductSpec {
    pub bra: SequenceSpec,
    pub ket: SequenceSpec,
    pub n_max: usize,
}

#[derive(Clone, Debug, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct OracleTableSpec {
    /// Example id, 1 to 4.
    pub example: u8,
    #[serde(default)]
    pub time: f64,
}

impl OracleTableSpec {
    pub fn example(&self) -> rkck::Result<Example> {
        Example::from_id(self.example)
    }
}

#[derive(Clone, Debug, Default, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Prepended to every output file name.
    #[serde(default)]
    pub prefix: String,
}

/// Parses a scenario, naming the offending field on failure.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config {
            field: path,
            message: e.into_inner().to_string(),
        }
    })
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        context: format!("reading {}", path.display()),
        source: e,
    })?;
    parse_scenario(&text)
}

/// JSON schema for scenario files.
pub fn scenario_schema() -> String {
    let schema = schemars::schema_for!(ScenarioConfig);
    let mut text = serde_json::to_string_pretty(&schema).expect("schema serialises");
    text.push('\n');
    text
}
