//! Seedable samplers and complementary CDFs for the service, generation and
//! arrival-delay distributions, plus a grid checker for the
//! New-Better-than-Used property `F̄(τ + t) ≤ F̄(τ)·F̄(t)`.
//!
//! Every distribution has a canonical text form used in experiment files:
//!
//! ```text
//! exp(rate=1.0)                 exp(mean=0.25)
//! gamma(k=4,mean=1.0)           gamma(k=4,scale=0.25)
//! shifted_exp(shift=0.25,mean=0.25)
//! erlang(k=2,mean=0.5)          erlang(k=2,rate=4)
//! const(2.0)
//! two_point(1,100,0.5)          # value 1 w.p. 0.5, value 100 otherwise
//! ```

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma};
use serde::{Deserialize, Serialize};
use text_form::TextForm;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistributionError {
    #[error("invalid parameter for {family}: {reason}")]
    InvalidParameter { family: &'static str, reason: String },
    #[error("cannot parse distribution `{text}`: {reason}")]
    Parse { text: String, reason: String },
    #[error("{0} cannot be rescaled to a target mean")]
    NotRescalable(String),
}

fn invalid(family: &'static str, reason: impl Into<String>) -> DistributionError {
    DistributionError::InvalidParameter {
        family,
        reason: reason.into(),
    }
}

/// A validated distribution descriptor. Construct through the checked
/// constructors or [`FromStr`]; the variants are public for matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DistributionSpec {
    Exponential { rate: f64 },
    Gamma { shape: f64, scale: f64 },
    ShiftedExponential { shift: f64, rate: f64 },
    Erlang { k: u32, rate: f64 },
    Constant { value: f64 },
    TwoPoint { low: f64, high: f64, p_low: f64 },
}

fn positive(family: &'static str, name: &str, v: f64) -> Result<f64, DistributionError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(invalid(
            family,
            format!("{name} must be a positive finite number, got {v}"),
        ))
    }
}

fn non_negative(family: &'static str, name: &str, v: f64) -> Result<f64, DistributionError> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(invalid(
            family,
            format!("{name} must be a non-negative finite number, got {v}"),
        ))
    }
}

impl DistributionSpec {
    pub fn exponential(rate: f64) -> Result<Self, DistributionError> {
        Ok(Self::Exponential {
            rate: positive("exp", "rate", rate)?,
        })
    }

    pub fn exponential_mean(mean: f64) -> Result<Self, DistributionError> {
        Self::exponential(1.0 / positive("exp", "mean", mean)?)
    }

    pub fn gamma(shape: f64, scale: f64) -> Result<Self, DistributionError> {
        Ok(Self::Gamma {
            shape: positive("gamma", "k", shape)?,
            scale: positive("gamma", "scale", scale)?,
        })
    }

    /// Gamma with shape `k` normalised to the given mean (`scale = mean / k`).
    pub fn gamma_mean(shape: f64, mean: f64) -> Result<Self, DistributionError> {
        let shape = positive("gamma", "k", shape)?;
        Self::gamma(shape, positive("gamma", "mean", mean)? / shape)
    }

    pub fn shifted_exponential(shift: f64, rate: f64) -> Result<Self, DistributionError> {
        Ok(Self::ShiftedExponential {
            shift: non_negative("shifted_exp", "shift", shift)?,
            rate: positive("shifted_exp", "rate", rate)?,
        })
    }

    pub fn erlang(k: u32, rate: f64) -> Result<Self, DistributionError> {
        if k == 0 {
            return Err(invalid("erlang", "k must be at least 1"));
        }
        Ok(Self::Erlang {
            k,
            rate: positive("erlang", "rate", rate)?,
        })
    }

    pub fn erlang_mean(k: u32, mean: f64) -> Result<Self, DistributionError> {
        Self::erlang(k, f64::from(k) / positive("erlang", "mean", mean)?)
    }

    pub fn constant(value: f64) -> Result<Self, DistributionError> {
        Ok(Self::Constant {
            value: non_negative("const", "value", value)?,
        })
    }

    pub fn two_point(low: f64, high: f64, p_low: f64) -> Result<Self, DistributionError> {
        let low = non_negative("two_point", "first value", low)?;
        let high = non_negative("two_point", "second value", high)?;
        if !(0.0..=1.0).contains(&p_low) {
            return Err(invalid(
                "two_point",
                format!("probability must lie in [0, 1], got {p_low}"),
            ));
        }
        Ok(Self::TwoPoint { low, high, p_low })
    }

    /// Re-checks the parameter constraints; used after deserialisation of
    /// hand-built values.
    pub fn validate(self) -> Result<Self, DistributionError> {
        match self {
            Self::Exponential { rate } => Self::exponential(rate),
            Self::Gamma { shape, scale } => Self::gamma(shape, scale),
            Self::ShiftedExponential { shift, rate } => Self::shifted_exponential(shift, rate),
            Self::Erlang { k, rate } => Self::erlang(k, rate),
            Self::Constant { value } => Self::constant(value),
            Self::TwoPoint { low, high, p_low } => Self::two_point(low, high, p_low),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Self::Exponential { .. } => "exp",
            Self::Gamma { .. } => "gamma",
            Self::ShiftedExponential { .. } => "shifted_exp",
            Self::Erlang { .. } => "erlang",
            Self::Constant { .. } => "const",
            Self::TwoPoint { .. } => "two_point",
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Exponential { rate } => 1.0 / rate,
            Self::Gamma { shape, scale } => shape * scale,
            Self::ShiftedExponential { shift, rate } => shift + 1.0 / rate,
            Self::Erlang { k, rate } => f64::from(k) / rate,
            Self::Constant { value } => value,
            Self::TwoPoint { low, high, p_low } => p_low * low + (1.0 - p_low) * high,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Self::Exponential { rate } | Self::ShiftedExponential { rate, .. } => 1.0 / (rate * rate),
            Self::Gamma { shape, scale } => shape * scale * scale,
            Self::Erlang { k, rate } => f64::from(k) / (rate * rate),
            Self::Constant { .. } => 0.0,
            Self::TwoPoint { low, high, p_low } => p_low * (1.0 - p_low) * (high - low).powi(2),
        }
    }

    pub fn is_exponential(&self) -> bool {
        matches!(self, Self::Exponential { .. })
            || matches!(self, Self::Gamma { shape, .. } if *shape == 1.0)
            || matches!(self, Self::Erlang { k: 1, .. })
    }

    /// Rate of the exponential distribution this spec is equal to, if any.
    pub fn exponential_rate(&self) -> Option<f64> {
        match *self {
            Self::Exponential { rate } => Some(rate),
            Self::Gamma { shape: 1.0, scale } => Some(1.0 / scale),
            Self::Erlang { k: 1, rate } => Some(rate),
            _ => None,
        }
    }

    /// Same family and shape, rescaled so that `mean()` equals `mean`.
    pub fn with_mean(&self, mean: f64) -> Result<Self, DistributionError> {
        match *self {
            Self::Exponential { .. } => Self::exponential_mean(mean),
            Self::Gamma { shape, .. } => Self::gamma_mean(shape, mean),
            Self::Erlang { k, .. } => Self::erlang_mean(k, mean),
            Self::Constant { .. } => Self::constant(positive("const", "mean", mean)?),
            Self::TwoPoint { low, high, p_low } => {
                let factor = positive("two_point", "mean", mean)? / self.mean();
                Self::two_point(low * factor, high * factor, p_low)
            }
            Self::ShiftedExponential { .. } => Err(DistributionError::NotRescalable(self.to_string())),
        }
    }

    /// Builds a reusable sampler for this spec.
    pub fn sampler(&self) -> Sampler {
        let kind = match *self {
            Self::Exponential { rate } => SamplerKind::Exp(Exp::new(rate).expect("validated rate"), 0.0),
            Self::ShiftedExponential { shift, rate } => {
                SamplerKind::Exp(Exp::new(rate).expect("validated rate"), shift)
            }
            Self::Gamma { shape, scale } => SamplerKind::Gamma(Gamma::new(shape, scale).expect("validated gamma")),
            Self::Erlang { k, rate } => SamplerKind::Erlang(k, Exp::new(rate).expect("validated rate")),
            Self::Constant { value } => SamplerKind::Const(value),
            Self::TwoPoint { low, high, p_low } => SamplerKind::TwoPoint(low, high, p_low),
        };
        Sampler { kind }
    }

    /// One draw from `stream`, advancing its draw counter.
    pub fn sample(&self, stream: &mut RngStream) -> f64 {
        self.sampler().draw(stream)
    }

    /// `P[Z > x]`.
    pub fn ccdf(&self, x: f64) -> f64 {
        match *self {
            Self::Exponential { rate } => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-rate * x).exp()
                }
            }
            Self::ShiftedExponential { shift, rate } => {
                if x <= shift {
                    1.0
                } else {
                    (-rate * (x - shift)).exp()
                }
            }
            Self::Gamma { shape, scale } => {
                if x <= 0.0 {
                    1.0
                } else {
                    statrs::function::gamma::gamma_ur(shape, x / scale).clamp(0.0, 1.0)
                }
            }
            Self::Erlang { k, rate } => {
                if x <= 0.0 {
                    return 1.0;
                }
                let y = rate * x;
                // e^{-y} Σ_{n<k} y^n / n!
                let mut term = (-y).exp();
                let mut sum = term;
                for n in 1..k {
                    term *= y / f64::from(n);
                    sum += term;
                }
                sum.clamp(0.0, 1.0)
            }
            Self::Constant { value } => {
                if x < value {
                    1.0
                } else {
                    0.0
                }
            }
            Self::TwoPoint { low, high, p_low } => {
                let mut p = 0.0;
                if x < low {
                    p += p_low;
                }
                if x < high {
                    p += 1.0 - p_low;
                }
                p
            }
        }
    }

    /// `E[min(Z_1, ..., Z_r)]` for i.i.d. copies, in closed form where one
    /// exists. Gamma and Erlang with shape > 1 return `None`.
    pub fn mean_of_min(&self, r: usize) -> Option<f64> {
        let r = r as f64;
        match *self {
            Self::Exponential { rate } => Some(1.0 / (r * rate)),
            Self::ShiftedExponential { shift, rate } => Some(shift + 1.0 / (r * rate)),
            Self::Constant { value } => Some(value),
            Self::Erlang { k: 1, rate } => Some(1.0 / (r * rate)),
            Self::Gamma { shape: 1.0, scale } => Some(scale / r),
            _ => None,
        }
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Exponential { rate } => write!(f, "exp(rate={rate})"),
            Self::Gamma { shape, scale } => write!(f, "gamma(k={shape},scale={scale})"),
            Self::ShiftedExponential { shift, rate } => {
                write!(f, "shifted_exp(shift={shift},rate={rate})")
            }
            Self::Erlang { k, rate } => write!(f, "erlang(k={k},rate={rate})"),
            Self::Constant { value } => write!(f, "const({value})"),
            Self::TwoPoint { low, high, p_low } => write!(f, "two_point({low},{high},{p_low})"),
        }
    }
}

impl FromStr for DistributionSpec {
    type Err = DistributionError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let form = TextForm::parse(text).map_err(|reason| DistributionError::Parse {
            text: text.to_string(),
            reason,
        })?;
        let parse_err = |reason: String| DistributionError::Parse {
            text: text.to_string(),
            reason,
        };
        let spec = match form.name.as_str() {
            "exp" | "exponential" => match (form.get("rate"), form.get("mean")) {
                (Some(rate), None) => Self::exponential(rate.map_err(parse_err)?),
                (None, Some(mean)) => Self::exponential_mean(mean.map_err(parse_err)?),
                _ => Err(parse_err("expected exactly one of rate= or mean=".into())),
            },
            "gamma" => {
                let k = form.require("k").map_err(parse_err)?;
                match (form.get("scale"), form.get("mean")) {
                    (Some(scale), None) => Self::gamma(k, scale.map_err(parse_err)?),
                    (None, Some(mean)) => Self::gamma_mean(k, mean.map_err(parse_err)?),
                    _ => Err(parse_err("expected exactly one of scale= or mean=".into())),
                }
            }
            "shifted_exp" => {
                let shift = form.require("shift").map_err(parse_err)?;
                match (form.get("rate"), form.get("mean")) {
                    (Some(rate), None) => Self::shifted_exponential(shift, rate.map_err(parse_err)?),
                    (None, Some(mean)) => {
                        let mean = positive("shifted_exp", "mean", mean.map_err(parse_err)?)?;
                        Self::shifted_exponential(shift, 1.0 / mean)
                    }
                    _ => Err(parse_err("expected exactly one of rate= or mean=".into())),
                }
            }
            "erlang" => {
                let k = form.require("k").map_err(parse_err)?;
                if k.fract() != 0.0 || k < 1.0 || k > f64::from(u32::MAX) {
                    return Err(parse_err(format!("k must be a positive integer, got {k}")));
                }
                let k = k as u32;
                match (form.get("rate"), form.get("mean")) {
                    (Some(rate), None) => Self::erlang(k, rate.map_err(parse_err)?),
                    (None, Some(mean)) => Self::erlang_mean(k, mean.map_err(parse_err)?),
                    _ => Err(parse_err("expected exactly one of rate= or mean=".into())),
                }
            }
            "const" | "constant" => {
                let v = form.positional(0).map_err(parse_err)?;
                Self::constant(v)
            }
            "two_point" => {
                let low = form.positional(0).map_err(parse_err)?;
                let high = form.positional(1).map_err(parse_err)?;
                let p = form.positional(2).map_err(parse_err)?;
                Self::two_point(low, high, p)
            }
            other => Err(parse_err(format!("unknown distribution family `{other}`"))),
        }?;
        form.ensure_consumed().map_err(parse_err)?;
        Ok(spec)
    }
}

impl TryFrom<String> for DistributionSpec {
    type Error = DistributionError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<DistributionSpec> for String {
    fn from(spec: DistributionSpec) -> Self {
        spec.to_string()
    }
}

/// Small parser for `name(arg, key=value, ...)`.
mod text_form {
    use std::cell::RefCell;

    pub(super) struct TextForm {
        pub name: String,
        positional: Vec<String>,
        named: Vec<(String, String)>,
        used: RefCell<Vec<bool>>,
        positional_used: RefCell<usize>,
    }

    impl TextForm {
        pub fn parse(text: &str) -> Result<Self, String> {
            let text = text.trim();
            let open = text.find('(').ok_or("missing `(`")?;
            if !text.ends_with(')') {
                return Err("missing closing `)`".into());
            }
            let name = text[..open].trim().to_ascii_lowercase();
            if name.is_empty() {
                return Err("missing family name".into());
            }
            let inner = &text[open + 1..text.len() - 1];
            let mut positional = Vec::new();
            let mut named = Vec::new();
            if !inner.trim().is_empty() {
                for part in inner.split(',') {
                    let part = part.trim();
                    if part.is_empty() {
                        return Err("empty argument".into());
                    }
                    match part.split_once('=') {
                        Some((k, v)) => named.push((k.trim().to_ascii_lowercase(), v.trim().to_string())),
                        None => {
                            if !named.is_empty() {
                                return Err("positional argument after named argument".into());
                            }
                            positional.push(part.to_string())
                        }
                    }
                }
            }
            let used = RefCell::new(vec![false; named.len()]);
            Ok(Self {
                name,
                positional,
                named,
                used,
                positional_used: RefCell::new(0),
            })
        }

        fn number(key: &str, raw: &str) -> Result<f64, String> {
            raw.parse::<f64>()
                .map_err(|_| format!("`{key}` is not a number: `{raw}`"))
        }

        pub fn get(&self, key: &str) -> Option<Result<f64, String>> {
            let idx = self.named.iter().position(|(k, _)| k == key)?;
            self.used.borrow_mut()[idx] = true;
            Some(Self::number(key, &self.named[idx].1))
        }

        pub fn require(&self, key: &str) -> Result<f64, String> {
            self.get(key).unwrap_or_else(|| Err(format!("missing `{key}=`")))
        }

        pub fn positional(&self, idx: usize) -> Result<f64, String> {
            let raw = self
                .positional
                .get(idx)
                .ok_or_else(|| format!("missing positional argument {}", idx + 1))?;
            let mut used = self.positional_used.borrow_mut();
            *used = (*used).max(idx + 1);
            Self::number("argument", raw)
        }

        pub fn ensure_consumed(&self) -> Result<(), String> {
            if *self.positional_used.borrow() < self.positional.len() {
                return Err("too many positional arguments".into());
            }
            for (i, used) in self.used.borrow().iter().enumerate() {
                if !used {
                    return Err(format!("unexpected argument `{}`", self.named[i].0));
                }
            }
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum SamplerKind {
    Exp(Exp<f64>, f64),
    Gamma(Gamma<f64>),
    Erlang(u32, Exp<f64>),
    Const(f64),
    TwoPoint(f64, f64, f64),
}

/// Pre-built sampler for one [`DistributionSpec`].
#[derive(Debug, Clone, Copy)]
pub struct Sampler {
    kind: SamplerKind,
}

impl Sampler {
    pub fn draw(&self, stream: &mut RngStream) -> f64 {
        stream.draws += 1;
        self.sample(&mut stream.rng)
    }
}

impl Distribution<f64> for Sampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            SamplerKind::Exp(exp, shift) => shift + exp.sample(rng),
            SamplerKind::Gamma(g) => g.sample(rng),
            SamplerKind::Erlang(k, exp) => (0..k).map(|_| exp.sample(rng)).sum(),
            SamplerKind::Const(v) => v,
            SamplerKind::TwoPoint(low, high, p) => {
                if rng.random::<f64>() < p {
                    low
                } else {
                    high
                }
            }
        }
    }
}

/// What a random stream is used for. Streams with different purposes or
/// indices derived from one seed are independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamPurpose {
    Generation,
    ArrivalDelay,
    Service,
    Coupling,
    Experiment,
    Other(u64),
}

impl StreamPurpose {
    fn tag(self) -> u64 {
        match self {
            Self::Generation => 1,
            Self::ArrivalDelay => 2,
            Self::Service => 3,
            Self::Coupling => 4,
            Self::Experiment => 5,
            Self::Other(x) => 0x1000_0000 ^ x,
        }
    }
}

pub(crate) fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a list of words into one 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut state = 0x243F_6A88_85A3_08D3u64;
    let mut out = 0;
    for &p in parts {
        state ^= p;
        out = splitmix64(&mut state);
        state ^= out.rotate_left(17);
    }
    out
}

/// A deterministic random stream identified by `(seed, purpose, index)`.
/// `draws` counts samples taken through [`Sampler::draw`].
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    purpose: StreamPurpose,
    index: u64,
    draws: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, purpose: StreamPurpose, index: u64) -> Self {
        let mut state = derive_seed(&[seed, purpose.tag(), index]);
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Self {
            seed,
            purpose,
            index,
            draws: 0,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn purpose(&self) -> StreamPurpose {
        self.purpose
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}

/// Outcome of [`check_nbu`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NbuReport {
    pub holds: bool,
    /// max over the grid of `F̄(τ+t) − F̄(τ)·F̄(t)`.
    pub worst_violation: f64,
    pub worst_at: (f64, f64),
}

pub fn check_nbu(spec: &DistributionSpec, grid: &[(f64, f64)], tol: f64) -> NbuReport {
    let mut worst = f64::NEG_INFINITY;
    let mut worst_at = (0.0, 0.0);
    for &(tau, t) in grid {
        debug_assert!(tau >= 0.0 && t >= 0.0);
        let gap = spec.ccdf(tau + t) - spec.ccdf(tau) * spec.ccdf(t);
        if gap > worst {
            worst = gap;
            worst_at = (tau, t);
        }
    }
    if grid.is_empty() {
        worst = 0.0;
    }
    NbuReport {
        holds: worst <= tol,
        worst_violation: worst,
        worst_at,
    }
}

pub const DEFAULT_NBU_TOLERANCE: f64 = 1e-9;

/// 51×51 uniform lattice over `[0, 5·mean]²`.
pub fn default_nbu_grid(spec: &DistributionSpec) -> Vec<(f64, f64)> {
    let upper = 5.0 * spec.mean();
    let n = 51;
    let step = upper / (n - 1) as f64;
    let mut grid = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            grid.push((i as f64 * step, j as f64 * step));
        }
    }
    grid
}

/// The NBU-family distributions shipped as named presets.
pub fn nbu_presets() -> Vec<(&'static str, DistributionSpec)> {
    let mut presets = vec![
        ("exp-mean-1", DistributionSpec::exponential(1.0).unwrap()),
        (
            "shifted-exp-0.25-0.25",
            DistributionSpec::shifted_exponential(0.25, 4.0).unwrap(),
        ),
        ("erlang-2-mean-1", DistributionSpec::erlang_mean(2, 1.0).unwrap()),
        ("const-1", DistributionSpec::constant(1.0).unwrap()),
    ];
    for (name, k) in [
        ("gamma-k1-mean-1", 1.0),
        ("gamma-k2-mean-1", 2.0),
        ("gamma-k4-mean-1", 4.0),
        ("gamma-k6.5-mean-1", 6.5),
        ("gamma-k8-mean-1", 8.0),
        ("gamma-k12.5-mean-1", 12.5),
        ("gamma-k16-mean-1", 16.0),
    ] {
        presets.push((name, DistributionSpec::gamma_mean(k, 1.0).unwrap()));
    }
    presets
}
