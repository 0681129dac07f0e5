//! Executable property suite for the spectral kernel and the view generator.
//!
//! Every check draws its own random instances from a seeded stream and
//! compares against a direct `O(L^2)` evaluation or a closed form, so a
//! report can be regenerated from `(config, seed)` alone.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frera::{self, CritMask, DistortionVector, ImportanceVector, ThresholdMode};
use crate::spectral::{self, Spectrum, TimeSeries};

/// Tolerance for transform identities.
pub const SPECTRAL_TOL: f64 = 1e-9;
/// Tolerance for closed-form identities of the mask.
pub const IDENTITY_TOL: f64 = 1e-12;
/// Tolerance for mask/convolution equivalence.
pub const CONVOLUTION_TOL: f64 = 1e-8;
/// Allowed deviation of the hard-threshold acceptance rate from `sigmoid(s)`.
pub const BERNOULLI_TOL: f64 = 0.01;
pub const BERNOULLI_DRAWS: usize = 100_000;
pub const BERNOULLI_TAU: f64 = 0.01;

/// Deliberate defects used to show the suite detects them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    /// Negates the mirrored half of the spectrum before inverting.
    InverseSign,
}

impl std::str::FromStr for Mutation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inverse_sign" => Ok(Mutation::InverseSign),
            other => Err(Error::InvalidArgument(format!(
                "unknown mutation {other:?} (expected inverse_sign)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Spectral,
    Frera,
}

impl Suite {
    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Spectral => "spectral",
            Suite::Frera => "frera",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropertyConfig {
    pub sizes: Vec<usize>,
    pub channels: Vec<usize>,
    /// Random instances per identity and shape.
    pub trials: usize,
    pub seed: u64,
    pub suites: Vec<Suite>,
    pub mutation: Option<Mutation>,
}

impl Default for PropertyConfig {
    fn default() -> Self {
        Self {
            sizes: vec![8, 37, 128],
            channels: vec![1, 3],
            trials: 100,
            seed: 0,
            suites: vec![Suite::Spectral, Suite::Frera],
            mutation: None,
        }
    }
}

impl PropertyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.iter().any(|&l| l < 2) {
            return Err(Error::InvalidArgument("property sizes must be non-empty and >= 2".into()));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::InvalidArgument("property channels must be non-empty and >= 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("property trials must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one identity at one shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub suite: Suite,
    pub identity: String,
    pub length: Option<usize>,
    pub channels: Option<usize>,
    pub trials: usize,
    /// Largest observed error.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// The first failing input.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub results: Vec<PropertyResult>,
    pub mutation: Option<Mutation>,
}

impl PropertyReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyResult> {
        self.results.iter().filter(|r| !r.passed)
    }

    /// Names of the identities that failed at least once.
    pub fn violated(&self) -> Vec<&str> {
        let names: BTreeSet<&str> = self.failures().map(|r| r.identity.as_str()).collect();
        names.into_iter().collect()
    }
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<9} {:<26} {:>5} {:>3} {:>6} {:>11} {:>9}  result",
            "suite", "identity", "L", "D", "trials", "worst", "tol"
        )?;
        let dash = |v: Option<usize>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
        for r in &self.results {
            writeln!(
                f,
                "{:<9} {:<26} {:>5} {:>3} {:>6} {:>11.3e} {:>9.1e}  {}",
                r.suite.as_str(),
                r.identity,
                dash(r.length),
                dash(r.channels),
                r.trials,
                r.worst,
                r.tolerance,
                if r.passed { "PASS" } else { "FAIL" }
            )?;
        }
        for r in self.failures() {
            if let Some(case) = &r.failure {
                writeln!(f, "FAILED {} (L={}, D={}): {case}", r.identity, dash(r.length), dash(r.channels))?;
            }
        }
        let failed = self.failures().count();
        if let Some(m) = self.mutation {
            writeln!(f, "mutation: {m:?}")?;
        }
        write!(f, "{} of {} checks passed", self.results.len() - failed, self.results.len())
    }
}

/// Direct evaluation of `X(m) = sum_n x(n) exp(-2 pi i m n / L)` for all `L`
/// components of one channel.
pub fn naive_dft(x: &[f64]) -> Vec<Complex64> {
    let len = x.len();
    (0..len)
        .map(|m| {
            x.iter()
                .enumerate()
                .map(|(n, &v)| v * twiddle((m * n) % len, len, -1.0))
                .sum()
        })
        .collect()
}

/// Direct evaluation of `x(n) = (1/L) sum_m X(m) exp(2 pi i m n / L)`,
/// returning the real part.
pub fn naive_idft(spectrum: &[Complex64]) -> Vec<f64> {
    let len = spectrum.len();
    (0..len)
        .map(|n| {
            let acc: Complex64 = spectrum
                .iter()
                .enumerate()
                .map(|(m, &c)| c * twiddle((m * n) % len, len, 1.0))
                .sum();
            acc.re / len as f64
        })
        .collect()
}

fn twiddle(k: usize, len: usize, sign: f64) -> Complex64 {
    Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / len as f64)
}

struct Checker {
    suite: Suite,
    identity: &'static str,
    length: Option<usize>,
    channels: Option<usize>,
    tolerance: f64,
    trials: usize,
    worst: f64,
    failure: Option<String>,
}

impl Checker {
    fn new(suite: Suite, identity: &'static str, shape: Option<(usize, usize)>, tolerance: f64) -> Self {
        Self {
            suite,
            identity,
            length: shape.map(|s| s.0),
            channels: shape.map(|s| s.1),
            tolerance,
            trials: 0,
            worst: 0.0,
            failure: None,
        }
    }

    fn record(&mut self, error: f64, case: impl FnOnce() -> String) {
        self.trials += 1;
        let error = if error.is_nan() { f64::INFINITY } else { error };
        if error > self.worst {
            self.worst = error;
        }
        if !(error <= self.tolerance) && self.failure.is_none() {
            self.failure = Some(format!("error {error:.3e}; {}", case()));
        }
    }

    fn finish(self) -> PropertyResult {
        PropertyResult {
            suite: self.suite,
            identity: self.identity.to_string(),
            length: self.length,
            channels: self.channels,
            trials: self.trials,
            worst: self.worst,
            tolerance: self.tolerance,
            passed: self.failure.is_none() && self.trials > 0,
            failure: self.failure,
        }
    }
}

fn describe(values: &Array2<f64>) -> String {
    const SHOWN: usize = 16;
    let flat: Vec<String> = values.iter().take(SHOWN).map(|v| format!("{v:.6}")).collect();
    let more = if values.len() > SHOWN {
        format!(", ... ({} values)", values.len())
    } else {
        String::new()
    };
    format!("x (row-major L x D) = [{}{more}]", flat.join(", "))
}

fn random_series<R: Rng>(len: usize, channels: usize, rng: &mut R) -> TimeSeries {
    let values = Array2::from_shape_fn((len, channels), |_| rng.sample::<f64, _>(StandardNormal));
    TimeSeries::new(values, None).expect("finite gaussian draws")
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

struct Inverse(Option<Mutation>);

impl Inverse {
    fn apply(&self, spec: &Spectrum) -> Array2<f64> {
        match self.0 {
            None => spectral::inverse_rdft_array(spec, 1.0),
            Some(Mutation::InverseSign) => spectral::inverse_rdft_array(spec, -1.0),
        }
    }
}

fn spectral_suite(len: usize, channels: usize, cfg: &PropertyConfig, out: &mut Vec<PropertyResult>) {
    let shape = Some((len, channels));
    let inverse = Inverse(cfg.mutation);
    let mut rng = stream(cfg.seed, (len as u64) << 8 | channels as u64);
    let s = Suite::Spectral;
    let mut round_trip = Checker::new(s, "round_trip", shape, SPECTRAL_TOL);
    let mut parseval = Checker::new(s, "parseval", shape, SPECTRAL_TOL);
    let mut symmetry = Checker::new(s, "conjugate_symmetry", shape, SPECTRAL_TOL);
    let mut linearity = Checker::new(s, "linearity", shape, SPECTRAL_TOL);
    let mut forward_oracle = Checker::new(s, "forward_matches_direct", shape, SPECTRAL_TOL);
    let mut inverse_oracle = Checker::new(s, "inverse_matches_direct", shape, SPECTRAL_TOL);
    let mut convolution = Checker::new(s, "convolution_theorem", shape, SPECTRAL_TOL);

    for trial in 0..cfg.trials {
        let x = random_series(len, channels, &mut rng);
        let z = random_series(len, channels, &mut rng);
        let alpha: f64 = rng.sample(StandardNormal);
        let beta: f64 = rng.sample(StandardNormal);
        let case = |x: &TimeSeries| format!("trial {trial}, seed {}, {}", cfg.seed, describe(x.values()));

        let spec = spectral::forward_rdft(&x);
        let back = inverse.apply(&spec);
        round_trip.record(max_abs_diff(&back, x.values()), || case(&x));

        let full = spectral::full_spectrum(&spec);
        let spectral_energy = full.iter().map(|c| c.norm_sqr()).sum::<f64>() / len as f64;
        let time_energy = x.values().iter().map(|v| v * v).sum::<f64>();
        let rebuilt_energy = back.iter().map(|v| v * v).sum::<f64>();
        let rel = |a: f64| (a - spectral_energy).abs() / spectral_energy.max(f64::MIN_POSITIVE);
        parseval.record(rel(time_energy).max(rel(rebuilt_energy)), || case(&x));

        let mut sym_err: f64 = 0.0;
        let mut fwd_err: f64 = 0.0;
        let mut inv_err: f64 = 0.0;
        for d in 0..channels {
            let col: Vec<f64> = x.channel(d).to_vec();
            let direct = naive_dft(&col);
            for m in 1..len {
                sym_err = sym_err.max((full[[len - m, d]] - full[[m, d]].conj()).norm());
                sym_err = sym_err.max((full[[m, d]] - direct[m]).norm());
            }
            sym_err = sym_err.max((full[[0, d]] - direct[0]).norm());
            for m in 0..spec.num_components() {
                fwd_err = fwd_err.max((spec.values()[[m, d]] - direct[m]).norm());
            }
            let reference = naive_idft(&direct);
            for n in 0..len {
                inv_err = inv_err.max((back[[n, d]] - reference[n]).abs());
            }
        }
        symmetry.record(sym_err, || case(&x));
        forward_oracle.record(fwd_err, || case(&x));
        inverse_oracle.record(inv_err, || case(&x));

        let combo = TimeSeries::new(x.values() * alpha + z.values() * beta, None).expect("finite");
        let lhs = spectral::forward_rdft(&combo);
        let rhs = spectral::forward_rdft(&z);
        let lin_err = lhs
            .values()
            .iter()
            .zip(spec.values().iter().zip(rhs.values()))
            .map(|(l, (a, b))| (l - (a * alpha + b * beta)).norm())
            .fold(0.0, f64::max);
        linearity.record(lin_err, || format!("alpha {alpha}, beta {beta}; {}", case(&x)));

        let kernel: Vec<f64> = z.channel(0).to_vec();
        let conv = spectral::circular_convolve(&kernel, &x).expect("matching lengths");
        let conv_full = spectral::full_spectrum(&spectral::forward_rdft(&conv));
        let kernel_full = naive_dft(&kernel);
        let mut conv_err: f64 = 0.0;
        for d in 0..channels {
            for m in 0..len {
                conv_err = conv_err.max((conv_full[[m, d]] - kernel_full[m] * full[[m, d]]).norm());
            }
        }
        convolution.record(conv_err, || format!("kernel = z[:, 0]; {}", case(&x)));
    }

    let mut orthogonality = Checker::new(s, "basis_orthogonality", shape, SPECTRAL_TOL * len as f64);
    if channels == cfg.channels[0] {
        for m in 0..len {
            for q in 0..len {
                let ip = spectral::basis_inner_product(m, q, len).expect("indices in range");
                let target = if m == q { len as f64 } else { 0.0 };
                orthogonality.record((ip - Complex64::new(target, 0.0)).norm(), || format!("m={m}, q={q}"));
            }
        }
    }

    for c in [round_trip, parseval, symmetry, linearity, forward_oracle, inverse_oracle, convolution] {
        out.push(c.finish());
    }
    if orthogonality.trials > 0 {
        let mut r = orthogonality.finish();
        r.channels = None;
        out.push(r);
    }
}

fn random_scores<R: Rng>(len: usize, rng: &mut R) -> ImportanceVector {
    let scale = rng.gen_range(0.1..3.0);
    let v = (0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    ImportanceVector::new(v).expect("finite scores")
}

fn frera_suite(len: usize, channels: usize, cfg: &PropertyConfig, out: &mut Vec<PropertyResult>) {
    let shape = Some((len, channels));
    let f = spectral::num_components(len);
    let mut rng = stream(cfg.seed, 1 << 32 | (len as u64) << 8 | channels as u64);
    let s = Suite::Frera;
    let mut range = Checker::new(s, "mask_in_open_unit", shape, 0.0);
    let mut simplification = Checker::new(s, "gumbel_logit_form", shape, IDENTITY_TOL);
    let mut normalization = Checker::new(s, "distortion_mean_one", shape, IDENTITY_TOL);
    let mut kernel = Checker::new(s, "mask_equals_convolution", shape, CONVOLUTION_TOL);

    for trial in 0..cfg.trials {
        let scores = random_scores(f, &mut rng);
        let tau_w = rng.gen_range(0.05..2.0);
        let crit = frera::sample_crit_mask(&scores, tau_w, &mut rng).expect("valid temperature");
        let case = || format!("trial {trial}, seed {}, tau_w {tau_w}, s = {:?}", cfg.seed, scores.scores());

        let outside = crit.weights().iter().filter(|&&w| !(w > 0.0 && w < 1.0)).count();
        range.record(outside as f64, case);

        let worst = scores
            .scores()
            .iter()
            .zip(crit.noise())
            .map(|(&si, &eps)| {
                let a = frera::gumbel_sigmoid_literal(si, eps, tau_w);
                let b = frera::gumbel_sigmoid(si, eps, tau_w);
                (a - b).abs()
            })
            .fold(0.0, f64::max);
        simplification.record(worst, case);

        for mode in [ThresholdMode::Mean, ThresholdMode::Median, ThresholdMode::MeanPlusStd] {
            let dist = frera::compute_distortion(&scores, mode);
            if dist.unimportant().is_empty() {
                continue;
            }
            let mean = dist.unimportant().iter().map(|&i| dist.weights()[i]).sum::<f64>()
                / dist.unimportant().len() as f64;
            normalization.record((mean - 1.0).abs(), || format!("mode {}; {}", mode.as_str(), case()));
        }

        let x = random_series(len, channels, &mut rng);
        let view = frera::augment(&x, &crit, &DistortionVector::zeros(f, ThresholdMode::Mean))
            .expect("matching shapes");
        let k = frera::mask_kernel(crit.weights(), len).expect("valid gains");
        let conv = spectral::circular_convolve(&k, &x).expect("matching lengths");
        kernel.record(max_abs_diff(&view.values, conv.values()), || {
            format!("{}; {}", case(), describe(x.values()))
        });
    }
    for c in [range, simplification, normalization, kernel] {
        out.push(c.finish());
    }
}

/// Hard-thresholded samples at a small temperature behave like
/// `Bernoulli(sigmoid(s))`.
fn bernoulli_limit(cfg: &PropertyConfig) -> PropertyResult {
    let mut rng = stream(cfg.seed, 2 << 32);
    let targets = [-2.0, 0.0, 1.0];
    let scores = ImportanceVector::new(targets.to_vec()).expect("finite");
    let mut hits = [0usize; 3];
    for _ in 0..BERNOULLI_DRAWS {
        let mask: CritMask = frera::sample_crit_mask(&scores, BERNOULLI_TAU, &mut rng).expect("valid");
        for (h, w) in hits.iter_mut().zip(mask.hardened()) {
            *h += w as usize;
        }
    }
    let mut check = Checker::new(Suite::Frera, "hard_mask_bernoulli", None, BERNOULLI_TOL);
    for (&s, &h) in targets.iter().zip(&hits) {
        let rate = h as f64 / BERNOULLI_DRAWS as f64;
        check.record((rate - frera::sigmoid(s)).abs(), || {
            format!("s = {s}, rate {rate:.4}, sigmoid(s) {:.4}, {BERNOULLI_DRAWS} draws", frera::sigmoid(s))
        });
    }
    check.finish()
}

fn distortion_example() -> PropertyResult {
    let mut check = Checker::new(Suite::Frera, "distortion_example", None, 0.0);
    let cases: [(&[f64], &[f64]); 3] = [
        (&[1.0, -2.0, -4.0, 3.0], &[0.0, 2.0 / 3.0, 4.0 / 3.0, 0.0]),
        (&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]),
        (&[-1.0, -1.0, -1.0], &[0.0, 0.0, 0.0]),
    ];
    for (s, expected) in cases {
        let dist = frera::compute_distortion(&ImportanceVector::new(s.to_vec()).expect("finite"), ThresholdMode::Mean);
        let err = dist
            .weights()
            .iter()
            .zip(expected)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        check.record(err, || format!("s = {s:?}, got {:?}, expected {expected:?}", dist.weights()));
    }
    check.finish()
}

/// Runs the configured suites at every `(L, D)` pair.
pub fn run_properties(cfg: &PropertyConfig) -> Result<PropertyReport> {
    cfg.validate()?;
    let mut results = Vec::new();
    for suite in &cfg.suites {
        for &len in &cfg.sizes {
            for &channels in &cfg.channels {
                match suite {
                    Suite::Spectral => spectral_suite(len, channels, cfg, &mut results),
                    Suite::Frera => frera_suite(len, channels, cfg, &mut results),
                }
            }
        }
        if *suite == Suite::Frera {
            results.push(bernoulli_limit(cfg));
            results.push(distortion_example());
        }
    }
    Ok(PropertyReport {
        results,
        mutation: cfg.mutation,
    })
}
