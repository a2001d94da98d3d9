use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::LatentShape;
use super::params::{uniform, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::conv::ConvGeometry;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    C,
    H,
    W,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::C => 0,
            Axis::H => 1,
            Axis::W => 2,
        }
    }

    /// Permutation that brings this axis to the channel position; each one
    /// is its own inverse.
    fn perm(self) -> Option<[usize; 3]> {
        match self {
            Axis::C => None,
            Axis::H => Some([1, 0, 2]),
            Axis::W => Some([2, 1, 0]),
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::C => "C",
            Axis::H => "H",
            Axis::W => "W",
        })
    }
}

/// The three teacher-to-student pairings and the axes each adapter maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    T1S1,
    T1S2,
    T2S2,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::T1S1, Scenario::T1S2, Scenario::T2S2];

    pub fn axes(self) -> &'static [Axis] {
        match self {
            Scenario::T1S1 => &[Axis::C],
            Scenario::T1S2 => &[Axis::C, Axis::H],
            Scenario::T2S2 => &[Axis::C, Axis::H, Axis::W],
        }
    }

    pub fn teacher(self) -> &'static str {
        match self {
            Scenario::T1S1 | Scenario::T1S2 => "t1",
            Scenario::T2S2 => "t2",
        }
    }

    pub fn student(self) -> &'static str {
        match self {
            Scenario::T1S1 => "s1",
            Scenario::T1S2 | Scenario::T2S2 => "s2",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::T1S1 => "t1s1",
            Scenario::T1S2 => "t1s2",
            Scenario::T2S2 => "t2s2",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scenario `{s}` (expected t1s1, t1s2 or t2s2)")))
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One 1x1 convolution acting along a single latent axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisMap {
    pub axis: Axis,
    pub from: usize,
    pub to: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BottleneckSpec {
    pub teacher: LatentShape,
    pub student: LatentShape,
    pub maps: Vec<AxisMap>,
}

/// Linear adapter from a teacher latent to a student latent: stacked 1x1
/// convolutions along C, then H, then W, with no activation in between.
#[derive(Clone, Debug, PartialEq)]
pub struct BottleneckAdapter {
    spec: BottleneckSpec,
    params: ParamSet,
}

impl BottleneckAdapter {
    /// One map per mismatched axis.
    pub fn new(teacher: LatentShape, student: LatentShape, seed: u64) -> Result<Self> {
        let t = teacher.as_array();
        let s = student.as_array();
        let axes: Vec<Axis> = [Axis::C, Axis::H, Axis::W]
            .into_iter()
            .filter(|a| t[a.index()] != s[a.index()])
            .collect();
        Self::with_axes(teacher, student, &axes, seed)
    }

    /// Maps exactly the listed axes (in C, H, W order). Fails if an axis
    /// outside the list differs between the two shapes.
    pub fn with_axes(teacher: LatentShape, student: LatentShape, axes: &[Axis], seed: u64) -> Result<Self> {
        let t = teacher.as_array();
        let s = student.as_array();
        if t.contains(&0) || s.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "latent shapes must be positive, got {teacher} and {student}"
            )));
        }
        for a in [Axis::C, Axis::H, Axis::W] {
            if !axes.contains(&a) && t[a.index()] != s[a.index()] {
                return Err(Error::ScenarioMismatch {
                    scenario: axes.iter().map(|a| a.to_string()).collect::<Vec<_>>().join("+"),
                    teacher: t,
                    student: s,
                    reason: format!("axis {a} differs ({} vs {}) but is not mapped", t[a.index()], s[a.index()]),
                });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut maps = Vec::new();
        for a in [Axis::C, Axis::H, Axis::W] {
            if !axes.contains(&a) {
                continue;
            }
            let (from, to) = (t[a.index()], s[a.index()]);
            let bound = (3.0 / from as f64).sqrt();
            params.push(format!("map_{}.weight", a.to_string().to_lowercase()), uniform(&[to, from, 1, 1], bound, &mut rng));
            params.push(format!("map_{}.bias", a.to_string().to_lowercase()), Tensor::zeros(&[to]));
            maps.push(AxisMap { axis: a, from, to });
        }
        Ok(Self {
            spec: BottleneckSpec { teacher, student, maps },
            params,
        })
    }

    pub fn for_scenario(scenario: Scenario, teacher: LatentShape, student: LatentShape, seed: u64) -> Result<Self> {
        Self::with_axes(teacher, student, scenario.axes(), seed).map_err(|e| match e {
            Error::ScenarioMismatch { teacher, student, reason, .. } => Error::ScenarioMismatch {
                scenario: scenario.name().into(),
                teacher,
                student,
                reason,
            },
            other => other,
        })
    }

    pub fn from_params(spec: BottleneckSpec, params: ParamSet) -> Result<Self> {
        let axes: Vec<Axis> = spec.maps.iter().map(|m| m.axis).collect();
        let template = Self::with_axes(spec.teacher, spec.student, &axes, 0)?;
        if template.spec != spec {
            return Err(Error::Checkpoint("bottleneck spec does not match its shapes".into()));
        }
        super::unet::check_layout(&template.params, &params)?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &BottleneckSpec {
        &self.spec
    }

    pub fn maps(&self) -> &[AxisMap] {
        &self.spec.maps
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], input: Var) -> Result<Var> {
        let shape = tape.value(input).shape();
        if shape != self.spec.teacher.as_array() {
            return Err(Error::ShapeMismatch {
                op: "bottleneck input",
                left: self.spec.teacher.as_array().to_vec(),
                right: shape.to_vec(),
            });
        }
        let geo = ConvGeometry::new((1, 1), (0, 0));
        let mut h = input;
        for (i, m) in self.spec.maps.iter().enumerate() {
            let (weight, bias) = (vars[2 * i], vars[2 * i + 1]);
            match m.axis.perm() {
                None => h = tape.conv2d(h, weight, Some(bias), geo)?,
                Some(perm) => {
                    h = tape.permute3(h, perm)?;
                    h = tape.conv2d(h, weight, Some(bias), geo)?;
                    h = tape.permute3(h, perm)?;
                }
            }
        }
        Ok(h)
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let y = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(y).clone())
    }
}
