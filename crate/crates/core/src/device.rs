//! Memristive device model.
//!
//! A device is characterised by its low- and high-resistance bounds. Device-to-device
//! variability is drawn once per cell from normal distributions around the nominal
//! bounds; a finite number of programmable conductance states is spread uniformly
//! between the sampled bounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("invalid device parameter: {0}")]
    InvalidParameter(String),
}

/// Number of programmable conductance levels per device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "StateCountRepr", into = "StateCountRepr")]
pub enum StateCount {
    /// Any conductance between the device bounds can be programmed.
    Continuous,
    Discrete(u32),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum StateCountRepr {
    Count(u32),
    Name(String),
}

impl TryFrom<StateCountRepr> for StateCount {
    type Error = String;

    fn try_from(repr: StateCountRepr) -> Result<Self, Self::Error> {
        match repr {
            StateCountRepr::Count(n) => StateCount::discrete(n).map_err(|e| e.to_string()),
            StateCountRepr::Name(s) => s.parse(),
        }
    }
}

impl From<StateCount> for StateCountRepr {
    fn from(s: StateCount) -> Self {
        match s {
            StateCount::Continuous => StateCountRepr::Name("continuous".into()),
            StateCount::Discrete(n) => StateCountRepr::Count(n),
        }
    }
}

impl StateCount {
    pub fn discrete(n: u32) -> Result<Self, DeviceError> {
        if n < 2 {
            return Err(DeviceError::InvalidParameter(format!(
                "state count must be at least 2, got {n}"
            )));
        }
        Ok(StateCount::Discrete(n))
    }
}

impl std::fmt::Display for StateCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StateCount::Continuous => f.write_str("continuous"),
            StateCount::Discrete(n) => write!(f, "{n}"),
        }
    }
}

impl std::str::FromStr for StateCount {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("continuous") {
            return Ok(StateCount::Continuous);
        }
        let n: u32 = s
            .parse()
            .map_err(|_| format!("expected a state count or \"continuous\", got {s:?}"))?;
        StateCount::discrete(n).map_err(|e| e.to_string())
    }
}

/// Statistical description of the devices populating a crossbar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceParameters {
    /// Mean low resistance, Ω.
    pub r_on_mean: f64,
    /// Mean high resistance, Ω.
    pub r_off_mean: f64,
    /// Standard deviation of R_ON in Ω. R_OFF uses twice this value.
    pub sigma: f64,
    pub n_states: StateCount,
    /// Floor applied to sampled resistances, Ω.
    pub r_min: f64,
}

impl Default for DeviceParameters {
    fn default() -> Self {
        Self {
            r_on_mean: 100.0,
            r_off_mean: 2500.0,
            sigma: 0.0,
            n_states: StateCount::Continuous,
            r_min: 1.0,
        }
    }
}

impl DeviceParameters {
    /// Ideal devices with the given nominal bounds.
    pub fn ideal(r_on_mean: f64, r_off_mean: f64) -> Self {
        Self {
            r_on_mean,
            r_off_mean,
            ..Self::default()
        }
    }

    pub fn with_variability(mut self, sigma: f64, n_states: StateCount) -> Self {
        self.sigma = sigma;
        self.n_states = n_states;
        self
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let bad = |msg: String| Err(DeviceError::InvalidParameter(msg));
        if !(self.r_on_mean.is_finite() && self.r_on_mean > 0.0) {
            return bad(format!("r_on_mean must be positive, got {}", self.r_on_mean));
        }
        if !(self.r_off_mean.is_finite() && self.r_off_mean > self.r_on_mean) {
            return bad(format!(
                "r_off_mean ({}) must exceed r_on_mean ({})",
                self.r_off_mean, self.r_on_mean
            ));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad(format!("sigma must be non-negative, got {}", self.sigma));
        }
        if !(self.r_min.is_finite() && self.r_min > 0.0) {
            return bad(format!("r_min must be positive, got {}", self.r_min));
        }
        if let StateCount::Discrete(n) = self.n_states {
            StateCount::discrete(n)?;
        }
        Ok(())
    }

    /// Nominal fully-on conductance, S.
    pub fn g_on(&self) -> f64 {
        1.0 / self.r_on_mean
    }

    /// Nominal fully-off conductance, S.
    pub fn g_off(&self) -> f64 {
        1.0 / self.r_off_mean
    }
}

/// A single sampled device.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceInstance {
    pub r_on: f64,
    pub r_off: f64,
    /// Permitted conductances in increasing order; empty means no quantization.
    pub states: Vec<f64>,
}

impl DeviceInstance {
    /// Lowest and highest reachable conductance. Overlapped devices (r_on ≥ r_off)
    /// report the sorted pair.
    pub fn range(&self) -> (f64, f64) {
        let a = 1.0 / self.r_off;
        let b = 1.0 / self.r_on;
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    /// Conductance actually stored when programming `target`.
    pub fn program(&self, target: f64) -> f64 {
        if self.states.is_empty() {
            let (lo, hi) = self.range();
            target.clamp(lo, hi)
        } else {
            quantize(target, &self.states)
        }
    }
}

/// RNG dedicated to one cell: stream `index` of a ChaCha8 generator keyed by `seed`.
///
/// Every cell of a layer draws from its own stream, so sampling order and thread
/// count never change the sampled devices.
pub fn cell_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws one device. `R_ON ~ N(r_on_mean, σ²)` and `R_OFF ~ N(r_off_mean, (2σ)²)`,
/// both clamped to `r_min`.
pub fn sample_device<R: Rng + ?Sized>(params: &DeviceParameters, rng: &mut R) -> DeviceInstance {
    let (r_on, r_off) = if params.sigma == 0.0 {
        (params.r_on_mean, params.r_off_mean)
    } else {
        let on = Normal::new(params.r_on_mean, params.sigma).expect("validated sigma");
        let off = Normal::new(params.r_off_mean, 2.0 * params.sigma).expect("validated sigma");
        (on.sample(rng), off.sample(rng))
    };
    let mut device = DeviceInstance {
        r_on: r_on.max(params.r_min),
        r_off: r_off.max(params.r_min),
        states: Vec::new(),
    };
    device.states = build_states(&device, params.n_states);
    device
}

/// Uniformly spaced conductance levels between `1/r_off` and `1/r_on`.
///
/// An overlapped device (`r_on ≥ r_off`) degenerates to the sorted pair of its two
/// conductances, collapsed to one state when they coincide.
pub fn build_states(device: &DeviceInstance, n_states: StateCount) -> Vec<f64> {
    let n = match n_states {
        StateCount::Continuous => return Vec::new(),
        StateCount::Discrete(n) => n as usize,
    };
    let g_off = 1.0 / device.r_off;
    let g_on = 1.0 / device.r_on;
    if g_on <= g_off {
        return if g_on == g_off { vec![g_on] } else { vec![g_on, g_off] };
    }
    let step = (g_on - g_off) / (n - 1) as f64;
    let mut states: Vec<f64> = (0..n).map(|i| g_off + step * i as f64).collect();
    states[n - 1] = g_on;
    states
}

/// Projects `g` onto the nearest entry of `states` (sorted ascending). Midpoint
/// ties, up to rounding noise, go to the lower state. An empty list is the
/// identity.
pub fn quantize(g: f64, states: &[f64]) -> f64 {
    let Some((&first, rest)) = states.split_first() else {
        return g;
    };
    if rest.is_empty() || g <= first {
        return first;
    }
    let upper = states.partition_point(|&s| s < g);
    if upper == states.len() {
        return states[upper - 1];
    }
    let (lo, hi) = (states[upper - 1], states[upper]);
    // Tolerance absorbs rounding in the state grid so that nominal midpoints tie.
    let tol = 1e-9 * (hi - lo);
    if (g - lo) <= (hi - g) + tol {
        lo
    } else {
        hi
    }
}

/// Current-mirror offset conductance for the single-column scheme,
/// `g_m = -2 / (R_ON + R_OFF)`.
pub fn mirror_offset(r_on_mean: f64, r_off_mean: f64) -> Result<f64, DeviceError> {
    if !(r_on_mean.is_finite() && r_on_mean > 0.0 && r_off_mean.is_finite() && r_off_mean > 0.0) {
        return Err(DeviceError::InvalidParameter(format!(
            "mirror offset needs positive resistances, got ({r_on_mean}, {r_off_mean})"
        )));
    }
    Ok(-2.0 / (r_on_mean + r_off_mean))
}
