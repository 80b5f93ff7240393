//! Monte Carlo experiment harness: named trial scenarios over fresh
//! test-split scenes, binned distance histograms, a rank-sum comparison
//! between runs, and an SVG rendering of the result panels.
//!
//! Every trial draws its own scene from a seed derived from the master
//! seed and the trial index, so growing `n_trials` extends a run without
//! disturbing the trials already present, and two runs with the same
//! config are identical down to the bit.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::controller::{
    run_detect_then_control, run_one_shot, run_trial, ControllerConfig, ControllerError,
    DistanceSource, NoiseModel, OneShotGrid, TrialResult,
};
use crate::dataset::{graspable_scene, DatasetError, Split};
use crate::geometry::{ObjectInstance, Scene};
use crate::math;
use crate::model::Network;
use crate::oracle::{GridSpec, GripperModel, OracleField, PoseMetric};
use crate::rng::{self, tags};

#[cfg(not(feature = "std"))]
use crate::math::Libm as _;

/// Histogram bin width in meters, matching the reported 3 cm bins.
pub const HISTOGRAM_BIN_WIDTH: f64 = 0.03;

/// Noise scale the `*_NOISE` scenarios fall back to when none is set.
pub const DEFAULT_NOISE_SCALE: f64 = 0.4;

/// The named experiment scenarios. The first five compare the closed-loop
/// controller against the one-shot baseline with and without kinematic
/// noise; the last two compare a one-shot network prediction against the
/// same prediction refined by the controller.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    /// No motion: report the distance at the sampled initial pose.
    Init,
    /// Closed-loop controller, exact kinematics.
    Ctr,
    /// Closed-loop controller under kinematic noise.
    CtrNoise,
    /// One-shot global argmin, blind approach, exact kinematics.
    OneShot,
    /// One-shot global argmin under kinematic noise.
    OneShotNoise,
    /// One-shot global argmin, meant to run with a network source.
    CnnOnly,
    /// One-shot move for `detect_steps`, then the closed loop takes over.
    CnnCtr,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::Init,
        Scenario::Ctr,
        Scenario::CtrNoise,
        Scenario::OneShot,
        Scenario::OneShotNoise,
        Scenario::CnnOnly,
        Scenario::CnnCtr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Init => "INIT",
            Scenario::Ctr => "CTR",
            Scenario::CtrNoise => "CTR_NOISE",
            Scenario::OneShot => "ONESHOT",
            Scenario::OneShotNoise => "ONESHOT_NOISE",
            Scenario::CnnOnly => "CNN_ONLY",
            Scenario::CnnCtr => "CNN_CTR",
        }
    }

    pub fn parse(s: &str) -> Option<Scenario> {
        Scenario::ALL.into_iter().find(|sc| sc.name() == s)
    }

    /// Noise scale a scenario actually applies. The `*_NOISE` scenarios
    /// always perturb (falling back to [`DEFAULT_NOISE_SCALE`]); their
    /// noise-free counterparts never do, by definition; the network
    /// scenarios only when a scale is configured explicitly.
    fn noise_scale(self, configured: Option<f64>) -> Option<f64> {
        match self {
            Scenario::Init | Scenario::Ctr | Scenario::OneShot => None,
            Scenario::CtrNoise | Scenario::OneShotNoise => {
                Some(configured.unwrap_or(DEFAULT_NOISE_SCALE))
            }
            Scenario::CnnOnly | Scenario::CnnCtr => configured,
        }
    }
}

/// Distance source driving the motion: the per-scene exact field, or one
/// trained network shared by every trial.
#[derive(Clone, Copy, Debug)]
pub enum Source<'a> {
    Oracle,
    Cnn(&'a Network<f32>),
}

#[derive(Clone, Copy, Debug)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub n_trials: usize,
    pub master_seed: u64,
    pub controller: ControllerConfig,
    /// See [`Scenario::noise_scale`] for how scenarios consume this.
    pub noise_scale: Option<f64>,
    pub one_shot_grid: OneShotGrid,
    /// Blind sub-steps before hand-off in the detect-then-control scenario.
    pub detect_steps: usize,
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario) -> Self {
        ExperimentConfig {
            scenario,
            n_trials: 100,
            master_seed: 0,
            controller: ControllerConfig::default(),
            noise_scale: None,
            one_shot_grid: OneShotGrid::default(),
            detect_steps: 15,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HarnessError {
    NoTrials,
    Dataset(DatasetError),
    Controller(ControllerError),
    /// Distances must be finite and non-negative.
    BadSample { value: f64 },
    EmptySamples,
    /// Histograms can only be compared or plotted at one bin width.
    BinMismatch { a: f64, b: f64 },
}

impl From<DatasetError> for HarnessError {
    fn from(e: DatasetError) -> Self {
        HarnessError::Dataset(e)
    }
}

impl From<ControllerError> for HarnessError {
    fn from(e: ControllerError) -> Self {
        HarnessError::Controller(e)
    }
}

impl core::fmt::Display for HarnessError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            HarnessError::NoTrials => write!(f, "an experiment needs at least one trial"),
            HarnessError::Dataset(e) => write!(f, "{e}"),
            HarnessError::Controller(e) => write!(f, "{e}"),
            HarnessError::BadSample { value } => {
                write!(f, "distance {value} is not a finite non-negative number")
            }
            HarnessError::EmptySamples => write!(f, "empty sample set"),
            HarnessError::BinMismatch { a, b } => {
                write!(f, "histogram bin widths differ: {a} vs {b}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for HarnessError {}

/// Final-distance distribution of one experiment; bin `i` covers
/// `[i·bin_width, (i+1)·bin_width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<u64>,
    /// The raw distances, sorted ascending; the exact order statistics
    /// stay available to [`compare`] instead of their binned shadows.
    pub samples: Vec<f64>,
    pub median: f64,
    pub mean: f64,
    /// Fraction of trials that ended under 0.03 m.
    pub fraction_below_3cm: f64,
}

impl Histogram {
    pub fn from_distances(distances: &[f64], bin_width: f64) -> Result<Histogram, HarnessError> {
        assert!(bin_width > 0.0);
        if distances.is_empty() {
            return Err(HarnessError::EmptySamples);
        }
        for &d in distances {
            if !d.is_finite() || d < 0.0 {
                return Err(HarnessError::BadSample { value: d });
            }
        }
        let mut samples = distances.to_vec();
        samples.sort_by(f64::total_cmp);
        let n = samples.len();
        let n_bins = (samples[n - 1] / bin_width) as usize + 1;
        let mut counts = alloc::vec![0u64; n_bins];
        for &d in &samples {
            counts[(d / bin_width) as usize] += 1;
        }
        let median = if n % 2 == 1 {
            samples[n / 2]
        } else {
            0.5 * (samples[n / 2 - 1] + samples[n / 2])
        };
        let mean = samples.iter().sum::<f64>() / n as f64;
        let below = samples.iter().take_while(|d| **d < 0.03).count();
        Ok(Histogram {
            bin_width,
            counts,
            samples,
            median,
            mean,
            fraction_below_3cm: below as f64 / n as f64,
        })
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub scenario: Scenario,
    /// Final distance of every trial, in trial order.
    pub distances: Vec<f64>,
    pub histogram: Histogram,
}

/// Run `cfg.n_trials` independent trials of the configured scenario on
/// fresh test-split scenes drawn from `library`. Trial `i` lives entirely
/// off `derive(master_seed, [TRIAL, i])`: its scene redraws, its initial
/// pose, its candidate stream, and its noise stream.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    library: &[ObjectInstance],
    source: &Source<'_>,
) -> Result<ExperimentResult, HarnessError> {
    if cfg.n_trials == 0 {
        return Err(HarnessError::NoTrials);
    }
    let gripper = GripperModel::default();
    let grid = GridSpec::default();
    let noise_scale = cfg.scenario.noise_scale(cfg.noise_scale);
    let mut distances = Vec::with_capacity(cfg.n_trials);
    for index in 0..cfg.n_trials {
        let trial_seed = rng::derive(cfg.master_seed, &[tags::TRIAL, index as u64]);
        let (scene, set) =
            graspable_scene(trial_seed, Split::Test, index, library, &gripper, &grid)?;
        let field = OracleField { set, metric: PoseMetric::default() };
        let nm = noise_scale.map(|scale| NoiseModel { scale, seed: trial_seed });
        let result = match source {
            Source::Oracle => run_scenario(cfg, &scene, &field, &field, nm.as_ref(), trial_seed)?,
            Source::Cnn(net) => run_scenario(cfg, &scene, &field, *net, nm.as_ref(), trial_seed)?,
        };
        distances.push(result.final_distance);
    }
    let histogram = Histogram::from_distances(&distances, HISTOGRAM_BIN_WIDTH)?;
    Ok(ExperimentResult { scenario: cfg.scenario, distances, histogram })
}

fn run_scenario<D: DistanceSource + ?Sized>(
    cfg: &ExperimentConfig,
    scene: &Scene,
    truth: &OracleField,
    d: &D,
    nm: Option<&NoiseModel>,
    seed: u64,
) -> Result<TrialResult, ControllerError> {
    match cfg.scenario {
        Scenario::Init => {
            let still = ControllerConfig { iterations: 0, ..cfg.controller };
            run_trial(scene, truth, d, &still, nm, seed)
        }
        Scenario::Ctr | Scenario::CtrNoise => run_trial(scene, truth, d, &cfg.controller, nm, seed),
        Scenario::OneShot | Scenario::OneShotNoise | Scenario::CnnOnly => {
            run_one_shot(scene, truth, d, &cfg.controller, nm, seed, &cfg.one_shot_grid)
        }
        Scenario::CnnCtr => run_detect_then_control(
            scene,
            truth,
            d,
            &cfg.controller,
            nm,
            seed,
            &cfg.one_shot_grid,
            cfg.detect_steps,
        ),
    }
}

/// Two-sided Mann–Whitney rank-sum result: `u` is the statistic of the
/// first sample, `z` its tie-corrected normal approximation with
/// continuity correction, `p` the two-sided tail mass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankSum {
    pub u: f64,
    pub z: f64,
    pub p: f64,
}

pub fn rank_sum(a: &[f64], b: &[f64]) -> RankSum {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut all: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let mut rank_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && all[j].0 == all[i].0 {
            j += 1;
        }
        // Positions i+1..=j share the average rank of the tie group.
        let avg = (i + 1 + j) as f64 / 2.0;
        let t = (j - i) as f64;
        for item in &all[i..j] {
            if item.1 {
                rank_a += avg;
            }
        }
        tie_term += t * t * t - t;
        i = j;
    }
    let u = rank_a - na * (na + 1.0) / 2.0;
    let total = na + nb;
    let mean = na * nb / 2.0;
    let var = na * nb / 12.0 * ((total + 1.0) - tie_term / (total * (total - 1.0)));
    if var <= 0.0 {
        return RankSum { u, z: 0.0, p: 1.0 };
    }
    let diff = u - mean;
    // Continuity correction: shrink toward zero, never across it.
    let adjusted = diff.signum() * (diff.abs() - 0.5).max(0.0);
    let z = adjusted / var.sqrt();
    let p = (2.0 * math::normal_cdf(-z.abs())).min(1.0);
    RankSum { u, z, p }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub median_a: f64,
    pub median_b: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub rank_sum: RankSum,
    /// One line suitable for a terminal: medians, p, and who is lower.
    pub verdict: String,
}

pub fn compare(a: &Histogram, b: &Histogram) -> Result<CompareReport, HarnessError> {
    if a.bin_width != b.bin_width {
        return Err(HarnessError::BinMismatch { a: a.bin_width, b: b.bin_width });
    }
    if a.samples.is_empty() || b.samples.is_empty() {
        return Err(HarnessError::EmptySamples);
    }
    let rs = rank_sum(&a.samples, &b.samples);
    let verdict = if rs.p >= 0.05 {
        format!(
            "no significant difference: median {:.4} m vs {:.4} m (rank-sum p = {:.3})",
            a.median, b.median, rs.p
        )
    } else {
        let (who, lo, hi) = if a.median < b.median {
            ("A", a.median, b.median)
        } else if b.median < a.median {
            ("B", b.median, a.median)
        } else if a.mean <= b.mean {
            ("A", a.mean, b.mean)
        } else {
            ("B", b.mean, a.mean)
        };
        format!("{who} lower: {lo:.4} m vs {hi:.4} m (rank-sum p = {:.3e})", rs.p)
    };
    Ok(CompareReport {
        median_a: a.median,
        median_b: b.median,
        mean_a: a.mean,
        mean_b: b.mean,
        rank_sum: rs,
        verdict,
    })
}

const SVG_PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn xml_escape(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            _ => out.push(c),
        }
    }
}

/// Render grouped-bar panels, one series per histogram, x-axis in meters.
/// A pure function of its input: identical series give identical bytes.
pub fn render_svg(series: &[(&str, &Histogram)]) -> Result<String, HarnessError> {
    if series.is_empty() {
        return Err(HarnessError::EmptySamples);
    }
    let bin_width = series[0].1.bin_width;
    for (_, h) in series {
        if h.bin_width != bin_width {
            return Err(HarnessError::BinMismatch { a: bin_width, b: h.bin_width });
        }
    }
    let n_bins = series.iter().map(|(_, h)| h.counts.len()).max().unwrap_or(1).max(1);
    let max_count =
        series.iter().flat_map(|(_, h)| h.counts.iter().copied()).max().unwrap_or(0).max(1);

    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const ML: f64 = 56.0;
    const MR: f64 = 18.0;
    const MT: f64 = 18.0;
    const MB: f64 = 48.0;
    let plot_w = W - ML - MR;
    let plot_h = H - MT - MB;
    let slot = plot_w / n_bins as f64;
    let bar = slot * 0.9 / series.len() as f64;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!("<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"));

    for (s, (_, h)) in series.iter().enumerate() {
        let color = SVG_PALETTE[s % SVG_PALETTE.len()];
        for (i, &c) in h.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let height = plot_h * c as f64 / max_count as f64;
            let x = ML + i as f64 * slot + slot * 0.05 + s as f64 * bar;
            let y = MT + plot_h - height;
            svg.push_str(&format!(
                "<rect class=\"bar\" x=\"{x:.2}\" y=\"{y:.2}\" width=\"{bar:.2}\" \
                 height=\"{height:.2}\" fill=\"{color}\"/>\n"
            ));
        }
    }

    // Axes.
    let x0 = ML;
    let y0 = MT + plot_h;
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{MT}\" x2=\"{x0}\" y2=\"{y0}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{:.2}\" y2=\"{y0}\" stroke=\"black\"/>\n",
        ML + plot_w
    ));
    // Label every k-th bin edge so the text keeps fitting as bins grow.
    let step = n_bins.div_ceil(8);
    let mut i = 0;
    while i <= n_bins {
        let x = ML + i as f64 * slot;
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{y0}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
            y0 + 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{:.2}</text>\n",
            y0 + 18.0,
            i as f64 * bin_width
        ));
        i += step;
    }
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">final distance to nearest grasp \
         (m)</text>\n",
        ML + plot_w / 2.0,
        y0 + 38.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{y0}\" text-anchor=\"end\">0</text>\n",
        ML - 6.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{max_count}</text>\n",
        ML - 6.0,
        MT + 10.0
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.2})\">\
         trials</text>\n",
        MT + plot_h / 2.0,
        MT + plot_h / 2.0
    ));

    // Legend, top right, one swatch per series.
    for (s, (name, _)) in series.iter().enumerate() {
        let color = SVG_PALETTE[s % SVG_PALETTE.len()];
        let y = MT + 8.0 + 18.0 * s as f64;
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{y:.2}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\n",
            W - MR - 140.0
        ));
        svg.push_str(&format!(
            "<text class=\"legend\" x=\"{:.2}\" y=\"{:.2}\">",
            W - MR - 124.0,
            y + 10.0
        ));
        xml_escape(name, &mut svg);
        svg.push_str("</text>\n");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
