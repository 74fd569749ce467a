//! Autonomic managers that pick the next `max_requests` from the last
//! interval's measurement.
//!
//! Sign convention everywhere: `error = reference - measured response`. A
//! response above the reference gives a negative error, and every
//! controller answers a negative error with more workers.

use crate::plant::IntervalSample;
use crate::sysid::{stable_gain_interval, ArxModel};
use crate::ConfigError;

pub trait Controller {
    fn name(&self) -> &'static str;

    /// Consumes one interval sample and returns `max_requests` for the next
    /// interval.
    fn update(&mut self, sample: &IntervalSample) -> u32;
}

/// Clamps `x` into `[u_min, u_max]`, then rounds half away from zero.
pub fn round_and_clamp(x: f64, u_min: u32, u_max: u32) -> u32 {
    let clamped = if x.is_nan() {
        f64::from(u_min)
    } else {
        x.clamp(f64::from(u_min), f64::from(u_max))
    };
    clamped.round() as u32
}

fn validate_clamp(u_min: u32, u_max: u32) -> Result<(), ConfigError> {
    if u_min == 0 || u_min > u_max {
        return Err(ConfigError::Invalid(format!(
            "need 1 <= u_min ({u_min}) <= u_max ({u_max})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PConfig {
    pub kp: f64,
    pub reference: f64,
    /// Operating-point `max_requests`; the control law acts on deviations
    /// from it.
    pub u0: f64,
    pub u_min: u32,
    pub u_max: u32,
}

impl Default for PConfig {
    fn default() -> Self {
        PConfig {
            kp: -1.5,
            reference: 20.0,
            u0: 300.0,
            u_min: 1,
            u_max: 10_000,
        }
    }
}

impl PConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        validate_clamp(self.u_min, self.u_max)?;
        if !self.kp.is_finite() || !self.u0.is_finite() {
            return Err(ConfigError::Invalid("kp and u0 must be finite".into()));
        }
        Ok(())
    }

    /// A warning when `kp` lies outside the stable interval of `model`.
    pub fn stability_warning(&self, model: &ArxModel) -> Option<String> {
        match stable_gain_interval(model) {
            Ok((lo, hi)) if self.kp > lo && self.kp < hi => None,
            Ok((lo, hi)) => Some(format!(
                "kp = {} is outside the stable interval ({lo:.6}, {hi:.6})",
                self.kp
            )),
            Err(e) => Some(format!("cannot check kp = {}: {e}", self.kp)),
        }
    }
}

/// Unrounded proportional command `u0 + kp * error`.
pub fn p_command(cfg: &PConfig, error: f64) -> f64 {
    cfg.u0 + cfg.kp * error
}

pub fn p_update(cfg: &PConfig, sample: &IntervalSample) -> u32 {
    round_and_clamp(p_command(cfg, sample.error), cfg.u_min, cfg.u_max)
}

#[derive(Debug, Clone)]
pub struct ProportionalController {
    pub cfg: PConfig,
}

impl ProportionalController {
    pub fn new(cfg: PConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(ProportionalController { cfg })
    }
}

impl Controller for ProportionalController {
    fn name(&self) -> &'static str {
        "prop"
    }

    fn update(&mut self, sample: &IntervalSample) -> u32 {
        p_update(&self.cfg, sample)
    }
}

#[derive(Debug, Clone)]
pub struct FixedController {
    pub u_fixed: u32,
}

impl Controller for FixedController {
    fn name(&self) -> &'static str {
        "fixed"
    }

    fn update(&mut self, _sample: &IntervalSample) -> u32 {
        self.u_fixed
    }
}

// ---------------------------------------------------------------------------
// Fuzzy control

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    NegLarge,
    NegSmall,
    Zero,
    PosSmall,
    PosLarge,
}

impl Term {
    pub const ALL: [Term; 5] = [
        Term::NegLarge,
        Term::NegSmall,
        Term::Zero,
        Term::PosSmall,
        Term::PosLarge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Term::NegLarge => "neglarge",
            Term::NegSmall => "negsmall",
            Term::Zero => "zero",
            Term::PosSmall => "possmall",
            Term::PosLarge => "poslarge",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Triangle with apex at `center`. An infinite foot makes the function
/// saturate at 1 on that side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MembershipFunction {
    pub term: Term,
    pub left_foot: f64,
    pub center: f64,
    pub right_foot: f64,
}

impl MembershipFunction {
    pub fn degree(&self, x: f64) -> f64 {
        if x == self.center {
            1.0
        } else if x < self.center {
            if self.left_foot == f64::NEG_INFINITY {
                1.0
            } else if x <= self.left_foot {
                0.0
            } else {
                (x - self.left_foot) / (self.center - self.left_foot)
            }
        } else if self.right_foot == f64::INFINITY {
            1.0
        } else if x >= self.right_foot {
            0.0
        } else {
            (self.right_foot - x) / (self.right_foot - self.center)
        }
    }
}

/// Five uniformly spaced triangles on [-1, 1], each foot at the
/// neighbouring apex. Degrees sum to 1 everywhere.
pub fn standard_sets() -> [MembershipFunction; 5] {
    let centers = [-1.0, -0.5, 0.0, 0.5, 1.0];
    std::array::from_fn(|i| MembershipFunction {
        term: Term::ALL[i],
        left_foot: if i == 0 {
            f64::NEG_INFINITY
        } else {
            centers[i - 1]
        },
        center: centers[i],
        right_foot: if i == 4 {
            f64::INFINITY
        } else {
            centers[i + 1]
        },
    })
}

pub fn fuzzify(mfs: &[MembershipFunction; 5], x_norm: f64) -> [f64; 5] {
    std::array::from_fn(|i| mfs[i].degree(x_norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rule {
    pub antecedent: Term,
    pub consequent: Term,
}

/// IF error is X THEN change-in-max-requests is the mirror of X.
pub const RULES: [Rule; 5] = [
    Rule {
        antecedent: Term::NegLarge,
        consequent: Term::PosLarge,
    },
    Rule {
        antecedent: Term::NegSmall,
        consequent: Term::PosSmall,
    },
    Rule {
        antecedent: Term::Zero,
        consequent: Term::Zero,
    },
    Rule {
        antecedent: Term::PosSmall,
        consequent: Term::NegSmall,
    },
    Rule {
        antecedent: Term::PosLarge,
        consequent: Term::NegLarge,
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Defuzzifier {
    /// Firing-strength-weighted mean of consequent apexes.
    #[default]
    CenterAverage,
    /// Centroid of the max-aggregated, min-clipped consequent sets over
    /// [-1, 1].
    Centroid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyConfig {
    /// Input gain: normalized error = ge * error.
    pub ge: f64,
    /// Output gain: change in max_requests = normalized output / gu.
    pub gu: f64,
    pub rules: [Rule; 5],
    pub reference: f64,
    pub u_min: u32,
    pub u_max: u32,
    pub defuzzifier: Defuzzifier,
}

impl FuzzyConfig {
    /// Defaults: an error of one full reference saturates the input, and a
    /// saturated rule moves the pool by 50 workers.
    pub fn new(reference: f64) -> Self {
        FuzzyConfig {
            ge: 1.0 / reference,
            gu: 0.02,
            rules: RULES,
            reference,
            u_min: 1,
            u_max: 10_000,
            defuzzifier: Defuzzifier::CenterAverage,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        validate_clamp(self.u_min, self.u_max)?;
        for (name, value) in [("ge", self.ge), ("gu", self.gu)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::NonPositive { name, value });
            }
        }
        if self.rules != RULES {
            return Err(ConfigError::Invalid(
                "fuzzy rule base must map each error term to its mirror".into(),
            ));
        }
        Ok(())
    }
}

const CENTROID_POINTS: usize = 2001;

/// Normalized change-in-max-requests in [-1, 1] for a normalized error.
pub fn normalized_output(
    mfs: &[MembershipFunction; 5],
    rules: &[Rule; 5],
    defuzzifier: Defuzzifier,
    e_norm: f64,
) -> f64 {
    let degrees = fuzzify(mfs, e_norm.clamp(-1.0, 1.0));
    let strengths: [(f64, &MembershipFunction); 5] = std::array::from_fn(|i| {
        (
            degrees[rules[i].antecedent.index()],
            &mfs[rules[i].consequent.index()],
        )
    });
    match defuzzifier {
        Defuzzifier::CenterAverage => {
            let total: f64 = strengths.iter().map(|s| s.0).sum();
            assert!(total > 0.0, "no rule fired for e_norm = {e_norm}");
            strengths.iter().map(|(w, mf)| w * mf.center).sum::<f64>() / total
        }
        Defuzzifier::Centroid => {
            let (mut num, mut den) = (0.0, 0.0);
            let step = 2.0 / (CENTROID_POINTS - 1) as f64;
            for i in 0..CENTROID_POINTS {
                let x = -1.0 + i as f64 * step;
                let mu = strengths
                    .iter()
                    .map(|(w, mf)| w.min(mf.degree(x)))
                    .fold(0.0, f64::max);
                let weight = if i == 0 || i == CENTROID_POINTS - 1 {
                    0.5
                } else {
                    1.0
                };
                num += weight * x * mu;
                den += weight * mu;
            }
            assert!(den > 0.0, "empty aggregate for e_norm = {e_norm}");
            num / den
        }
    }
}

/// Fuzzy controller followed by an integrator holding the absolute
/// `max_requests`.
#[derive(Debug, Clone)]
pub struct FuzzyController {
    pub cfg: FuzzyConfig,
    mfs: [MembershipFunction; 5],
    current_u: u32,
}

impl FuzzyController {
    pub fn new(cfg: FuzzyConfig, initial_u: u32) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let current_u = round_and_clamp(f64::from(initial_u), cfg.u_min, cfg.u_max);
        Ok(FuzzyController {
            cfg,
            mfs: standard_sets(),
            current_u,
        })
    }

    pub fn current_u(&self) -> u32 {
        self.current_u
    }

    /// Change in max_requests requested for `error`, before integration.
    pub fn delta_u(&self, error: f64) -> f64 {
        let e_norm = (self.cfg.ge * error).clamp(-1.0, 1.0);
        normalized_output(&self.mfs, &self.cfg.rules, self.cfg.defuzzifier, e_norm) / self.cfg.gu
    }
}

impl Controller for FuzzyController {
    fn name(&self) -> &'static str {
        "fuzzy"
    }

    fn update(&mut self, sample: &IntervalSample) -> u32 {
        let next = f64::from(self.current_u) + self.delta_u(sample.error);
        self.current_u = round_and_clamp(next, self.cfg.u_min, self.cfg.u_max);
        self.current_u
    }
}
