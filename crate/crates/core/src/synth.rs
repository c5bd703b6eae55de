//! Deterministic two-domain synthetic corpus.
//!
//! The source domain is voiced-speech-like: harmonic series with formant
//! emphasis, vibrato and syllable envelopes, with categories separated by
//! fundamental-frequency band. The target domain is ship-like: propeller
//! tonal lines at multiples of a blade rate plus broadband noise amplitude
//! modulated at the shaft rate.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    build_manifest_at_rate, clip_samples, write_wav, AudioBuffer, CategoryMap, DatasetManifest,
    SplitRatios, WavSampleFormat,
};

pub const PEAK: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::Config(format!("unknown domain `{other}` (expected source or target)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub domain: Domain,
    pub num_categories: usize,
    pub clips_per_category: usize,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    pub snr_db_range: (f64, f64),
    pub seed: u64,
    /// Length of each written file; a multiple of `clip_seconds`.
    /// Defaults to one clip per file.
    #[serde(default)]
    pub file_seconds: Option<f64>,
    #[serde(default)]
    pub split_ratios: SplitRatios,
}

impl SynthSpec {
    /// 4 categories x 200 one-second clips.
    pub fn desk_source(seed: u64) -> Self {
        Self {
            domain: Domain::Source,
            num_categories: 4,
            clips_per_category: 200,
            clip_seconds: 1.0,
            sample_rate: 16_000,
            snr_db_range: (-5.0, 20.0),
            seed,
            file_seconds: None,
            split_ratios: SplitRatios::default(),
        }
    }

    /// 4 categories x 2000 one-second clips, the pretraining corpus of the
    /// transfer experiment.
    pub fn pretrain_source(seed: u64) -> Self {
        Self { clips_per_category: 2000, ..Self::desk_source(seed) }
    }

    /// 4 categories x 40 one-second clips: 30 train and 10 validation each.
    pub fn desk_target_train(seed: u64) -> Self {
        Self {
            domain: Domain::Target,
            clips_per_category: 40,
            snr_db_range: (-5.0, 10.0),
            split_ratios: SplitRatios { train: 0.75, validation: 0.25, test: 0.0 },
            ..Self::desk_source(seed)
        }
    }

    /// 4 categories x 20 two-second files, all test, cut into one-second clips.
    pub fn desk_target_test(seed: u64) -> Self {
        Self {
            file_seconds: Some(2.0),
            clips_per_category: 40,
            split_ratios: SplitRatios { train: 0.0, validation: 0.0, test: 1.0 },
            ..Self::desk_target_train(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_categories < 2 {
            return fail("at least two categories are needed".into());
        }
        if self.clips_per_category < 1 {
            return fail("clips_per_category must be at least 1".into());
        }
        let (lo, hi) = self.snr_db_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return fail(format!("invalid SNR range ({lo}, {hi})"));
        }
        if self.sample_rate < 8000 {
            return fail(format!("sample rate {} Hz is too low for the signal models", self.sample_rate));
        }
        self.split_ratios.validate()?;
        clip_samples(self.sample_rate, self.clip_seconds)?;
        let per_file = self.clips_per_file()?;
        if !self.clips_per_category.is_multiple_of(per_file) {
            return fail(format!(
                "{} clips per category is not a multiple of {per_file} clips per file",
                self.clips_per_category
            ));
        }
        Ok(())
    }

    pub fn clips_per_file(&self) -> Result<usize> {
        let Some(f) = self.file_seconds else { return Ok(1) };
        let ratio = f / self.clip_seconds;
        let k = ratio.round();
        if !(k >= 1.0 && (ratio - k).abs() < 1e-9) {
            return Err(Error::Config(format!(
                "file length {f} s is not a whole number of {} s clips",
                self.clip_seconds
            )));
        }
        Ok(k as usize)
    }

    pub fn files_per_category(&self) -> Result<usize> {
        Ok(self.clips_per_category / self.clips_per_file()?)
    }

    fn file_samples(&self) -> Result<usize> {
        Ok(clip_samples(self.sample_rate, self.clip_seconds)? * self.clips_per_file()?)
    }

    pub fn category_names(&self) -> Vec<String> {
        (0..self.num_categories)
            .map(|k| format!("{}_{k}", self.domain.as_str()))
            .collect()
    }

    fn rng(&self, category: usize, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let domain = match self.domain {
            Domain::Source => 1u64,
            Domain::Target => 2,
        };
        rng.set_stream((domain << 56) | ((category as u64) << 32) | index as u64);
        rng
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Add white noise at `snr_db` relative to the power of `signal`, then
/// scale the peak to [`PEAK`].
fn finish(mut signal: Vec<f64>, snr_db: f64, sample_rate: u32, rng: &mut ChaCha8Rng) -> AudioBuffer {
    let noise_std = (mean_square(&signal) / 10f64.powf(snr_db / 10.0)).sqrt();
    for s in &mut signal {
        *s += noise_std * gaussian(rng);
    }
    let peak = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { PEAK / peak } else { 0.0 };
    let samples = signal.iter().map(|v| (v * gain) as f32).collect();
    AudioBuffer::new(samples, sample_rate).expect("finite synthetic audio")
}

/// Fundamental-frequency band of source category `k` out of `c`: 90-250 Hz
/// split evenly, so four categories get 40 Hz bands starting at 90 Hz.
pub fn source_f0_band(k: usize, c: usize) -> (f64, f64) {
    let w = 160.0 / c as f64;
    (90.0 + w * k as f64, 90.0 + w * (k + 1) as f64)
}

/// Speech-like file: harmonics with 1/n decay and two formant emphases,
/// vibrato, syllable-like on/off envelope, white noise.
pub fn gen_source_file(spec: &SynthSpec, category: usize, index: usize) -> Result<AudioBuffer> {
    let n = spec.file_samples()?;
    let sr = spec.sample_rate as f64;
    let mut rng = spec.rng(category, index);
    let (lo, hi) = source_f0_band(category, spec.num_categories);
    let f0 = rng.random_range(lo..hi);
    let vib_rate = rng.random_range(3.0..6.0);
    let vib_depth = rng.random_range(0.005..0.03);
    let vib_phase = rng.random_range(0.0..2.0 * PI);
    let formants = [
        (rng.random_range(300.0..900.0), rng.random_range(80.0..160.0), 4.0),
        (rng.random_range(1000.0..2800.0), rng.random_range(120.0..250.0), 3.0),
    ];
    // band-limited channel: the lowest few partials may be missing
    let first = rng.random_range(1..=3usize);
    let partials = ((0.45 * sr / (f0 * 1.05)).floor() as usize).clamp(8, 40);
    let amps: Vec<f64> = (1..=partials)
        .map(|h| {
            if h < first {
                return 0.0;
            }
            let f = h as f64 * f0;
            let emphasis: f64 = formants.iter().map(|&(fc, bw, g)| g * (-((f - fc) / bw).powi(2)).exp()).sum();
            (1.0 + emphasis) / h as f64
        })
        .collect();
    let phases: Vec<f64> = (0..partials).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let env = syllable_envelope(n, sr, &mut rng);

    let mut signal = vec![0.0; n];
    let mut theta = 0.0f64;
    for (t, s) in signal.iter_mut().enumerate() {
        let inst = f0 * (1.0 + vib_depth * (2.0 * PI * vib_rate * t as f64 / sr + vib_phase).sin());
        theta += 2.0 * PI * inst / sr;
        if env[t] == 0.0 {
            continue;
        }
        let v: f64 = amps
            .iter()
            .zip(&phases)
            .enumerate()
            .map(|(h, (&a, &p))| a * ((h + 1) as f64 * theta + p).sin())
            .sum();
        *s = env[t] * v;
    }
    let snr = rng.random_range(spec.snr_db_range.0..=spec.snr_db_range.1);
    Ok(finish(signal, snr, spec.sample_rate, &mut rng))
}

/// Alternating voiced segments (0.3-0.8 s) and gaps (0.05-0.2 s) with 20 ms
/// raised-cosine ramps.
fn syllable_envelope(n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut env = vec![0.0; n];
    let ramp = (0.02 * sr) as usize;
    let mut t = (rng.random_range(0.0..0.15) * sr) as usize;
    while t < n {
        let len = (rng.random_range(0.3..0.8) * sr) as usize;
        for i in 0..len.min(n - t) {
            let edge = i.min(len - 1 - i);
            env[t + i] = if edge < ramp {
                0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
            } else {
                1.0
            };
        }
        t += len + (rng.random_range(0.05..0.2) * sr) as usize;
    }
    env
}

/// Drawn parameters of one target-domain recording.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetParams {
    pub shaft_hz: f64,
    pub blade_hz: f64,
    /// (frequency, amplitude, phase) of each tonal line.
    pub lines: Vec<(f64, f64, f64)>,
    pub modulation_depth: f64,
    /// Rate and floor of the common slow fading of the tonal lines
    /// (multipath interference).
    pub fade_hz: f64,
    pub fade_floor: f64,
    /// Cutoff of the one-pole low-pass shaping the broadband noise.
    pub noise_cutoff_hz: f64,
    /// Broadband-to-tonal power ratio in dB.
    pub broadband_db: f64,
    pub snr_db: f64,
}

/// Shaft-rate band of target category `k` out of `c`: 2-12 Hz split evenly.
pub fn target_shaft_band(k: usize, c: usize) -> (f64, f64) {
    let w = 10.0 / c as f64;
    (2.0 + w * k as f64, 2.0 + w * (k + 1) as f64)
}

/// Nominal blade rate (tonal-line spacing) of target category `k`. The
/// rates share the source f0 range but not its category order.
pub fn target_blade_hz(k: usize) -> f64 {
    const ORDER: [usize; 4] = [2, 0, 3, 1];
    100.0 + 45.0 * ORDER.get(k).copied().unwrap_or(k) as f64
}

pub fn target_params(spec: &SynthSpec, category: usize, index: usize) -> TargetParams {
    let mut rng = spec.rng(category, index);
    let (lo, hi) = target_shaft_band(category, spec.num_categories);
    let shaft_hz = rng.random_range(lo..hi);
    let blade_hz = target_blade_hz(category) * rng.random_range(0.96..1.04);
    let nyquist_guard = 0.45 * spec.sample_rate as f64;
    // two resonant emphases over the line series, like hull resonances
    let resonances = [
        (rng.random_range(200.0..1200.0), rng.random_range(100.0..300.0), rng.random_range(1.0..4.0)),
        (rng.random_range(1000.0..3000.0), rng.random_range(150.0..400.0), rng.random_range(1.0..4.0)),
    ];
    let first = rng.random_range(1..=3usize);
    let mut lines = Vec::new();
    let mut j = first;
    while (j as f64) * blade_hz < 3000.0f64.min(nyquist_guard) {
        if j < first + 3 || rng.random_bool(0.8) {
            let f = j as f64 * blade_hz;
            let emphasis: f64 = resonances.iter().map(|&(fc, bw, g)| g * (-((f - fc) / bw).powi(2)).exp()).sum();
            let amp = rng.random_range(0.5..1.0) * (1.0 + emphasis) / (j as f64).powf(0.7);
            lines.push((f, amp, rng.random_range(0.0..2.0 * PI)));
        }
        j += 1;
    }
    let span = (spec.num_categories - 1).max(1) as f64;
    TargetParams {
        shaft_hz,
        blade_hz,
        lines,
        modulation_depth: 0.05 + 0.1 * category as f64 / span,
        fade_hz: rng.random_range(0.8..2.5),
        fade_floor: rng.random_range(0.0..0.3),
        noise_cutoff_hz: rng.random_range(400.0..3000.0),
        broadband_db: rng.random_range(-6.0..6.0),
        snr_db: rng.random_range(spec.snr_db_range.0..=spec.snr_db_range.1),
    }
}

/// Sum of the tonal lines only, unfaded and unnormalized.
pub fn render_tonals(params: &TargetParams, n: usize, sample_rate: u32) -> Vec<f64> {
    let sr = sample_rate as f64;
    (0..n)
        .map(|t| {
            let time = t as f64 / sr;
            params
                .lines
                .iter()
                .map(|&(f, a, p)| a * (2.0 * PI * f * time + p).sin())
                .sum()
        })
        .collect()
}

/// Ship-like file: slowly fading tonal lines, low-passed broadband noise
/// amplitude modulated at the shaft rate, ambient white noise.
pub fn gen_target_file(spec: &SynthSpec, category: usize, index: usize) -> Result<AudioBuffer> {
    let n = spec.file_samples()?;
    let params = target_params(spec, category, index);
    let sr = spec.sample_rate as f64;
    // continue the same stream after the parameter draws
    let mut rng = spec.rng(category, index);
    rng.set_word_pos(1 << 20);

    let mut signal = render_tonals(&params, n, spec.sample_rate);
    let fade_phase = rng.random_range(0.0..2.0 * PI);
    for (t, s) in signal.iter_mut().enumerate() {
        let c = 0.5 + 0.5 * (2.0 * PI * params.fade_hz * t as f64 / sr + fade_phase).sin();
        *s *= params.fade_floor + (1.0 - params.fade_floor) * c;
    }
    let tonal_power = mean_square(&signal);
    let alpha = 1.0 - (-2.0 * PI * params.noise_cutoff_hz / sr).exp();
    let mod_phase = rng.random_range(0.0..2.0 * PI);
    let mut state = 0.0;
    let mut broadband: Vec<f64> = (0..n)
        .map(|t| {
            state += alpha * (gaussian(&mut rng) - state);
            let m = 1.0 + params.modulation_depth * (2.0 * PI * params.shaft_hz * t as f64 / sr + mod_phase).sin();
            m * state
        })
        .collect();
    let scale = (tonal_power * 10f64.powf(params.broadband_db / 10.0) / mean_square(&broadband)).sqrt();
    broadband.iter_mut().for_each(|b| *b *= scale);
    signal.iter_mut().zip(&broadband).for_each(|(s, b)| *s += b);
    Ok(finish(signal, params.snr_db, spec.sample_rate, &mut rng))
}

pub fn gen_file(spec: &SynthSpec, category: usize, index: usize) -> Result<AudioBuffer> {
    match spec.domain {
        Domain::Source => gen_source_file(spec, category, index),
        Domain::Target => gen_target_file(spec, category, index),
    }
}

/// Relative path of a generated file.
pub fn file_id(spec: &SynthSpec, category: usize, index: usize) -> String {
    format!("{0}_{category}/{0}_{category}_{index:04}.wav", spec.domain.as_str())
}

/// Write the corpus under `out` as 16-bit WAVs plus `labels.csv`, and build
/// and save `manifest.json`.
pub fn generate(spec: &SynthSpec, out: impl AsRef<Path>) -> Result<DatasetManifest> {
    spec.validate()?;
    let out = out.as_ref();
    let files = spec.files_per_category()?;
    let jobs: Vec<(usize, usize)> = (0..spec.num_categories)
        .flat_map(|k| (0..files).map(move |i| (k, i)))
        .collect();
    jobs.par_iter().try_for_each(|&(k, i)| {
        let path = out.join(file_id(spec, k, i));
        let dir = path.parent().expect("file id has a directory");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_wav(&path, &gen_file(spec, k, i)?, WavSampleFormat::Pcm16)
    })?;

    let names = spec.category_names();
    let mut labels = csv::Writer::from_path(out.join("labels.csv"))?;
    labels.write_record(["path", "label"])?;
    for &(k, i) in &jobs {
        labels.write_record([file_id(spec, k, i), names[k].clone()])?;
    }
    labels.flush().map_err(|e| Error::io(out.join("labels.csv"), e))?;
    std::fs::write(out.join("synth_spec.json"), serde_json::to_string_pretty(spec)?)
        .map_err(|e| Error::io(out.join("synth_spec.json"), e))?;

    let manifest = build_manifest_at_rate(
        out,
        &CategoryMap::identity(&names)?,
        spec.clip_seconds,
        spec.split_ratios,
        spec.seed,
        spec.sample_rate,
    )?;
    manifest.save(out.join("manifest.json"))?;
    Ok(manifest)
}

pub fn gen_source(spec: &SynthSpec, out: impl AsRef<Path>) -> Result<DatasetManifest> {
    if spec.domain != Domain::Source {
        return Err(Error::Config("gen_source needs a source-domain spec".into()));
    }
    generate(spec, out)
}

pub fn gen_target(spec: &SynthSpec, out: impl AsRef<Path>) -> Result<DatasetManifest> {
    if spec.domain != Domain::Target {
        return Err(Error::Config("gen_target needs a target-domain spec".into()));
    }
    generate(spec, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{log_mel, MelConfig};
    use crate::ingest::{read_wav, Split};

    fn small(domain: Domain) -> SynthSpec {
        SynthSpec {
            domain,
            clips_per_category: 40,
            ..SynthSpec::desk_source(3)
        }
    }

    /// Time-averaged log-mel vector of a clip.
    fn mean_log_mel(buf: &AudioBuffer) -> Vec<f64> {
        let f = log_mel(buf, &MelConfig::default()).unwrap();
        let mut m = vec![0.0; f.dim()];
        for t in 0..f.len() {
            m.iter_mut().zip(f.frame(t)).for_each(|(a, &v)| *a += v as f64 / f.len() as f64);
        }
        m
    }

    /// Nearest class mean on time-averaged log-mel vectors.
    struct CentroidOracle {
        means: Vec<Vec<f64>>,
    }

    impl CentroidOracle {
        fn fit(x: &[Vec<f64>], y: &[usize], c: usize) -> Self {
            let d = x[0].len();
            let mut means = vec![vec![0.0; d]; c];
            let mut counts = vec![0.0; c];
            for (v, &k) in x.iter().zip(y) {
                means[k].iter_mut().zip(v).for_each(|(m, a)| *m += a);
                counts[k] += 1.0;
            }
            for (m, n) in means.iter_mut().zip(counts) {
                m.iter_mut().for_each(|v| *v /= n);
            }
            Self { means }
        }

        fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> f64 {
            let correct = x
                .iter()
                .zip(y)
                .filter(|(v, &k)| {
                    let dist = |m: &Vec<f64>| m.iter().zip(v.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                    let best = (0..self.means.len())
                        .min_by(|&a, &b| dist(&self.means[a]).total_cmp(&dist(&self.means[b])))
                        .unwrap();
                    best == k
                })
                .count();
            correct as f64 / y.len() as f64
        }
    }

    fn features(spec: &SynthSpec) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..spec.clips_per_category {
            for k in 0..spec.num_categories {
                x.push(mean_log_mel(&gen_file(spec, k, i).unwrap()));
                y.push(k);
            }
        }
        (x, y)
    }

    fn holdout(spec: &SynthSpec) -> f64 {
        let (x, y) = features(spec);
        let cut = x.len() * 4 / 5;
        CentroidOracle::fit(&x[..cut], &y[..cut], spec.num_categories).accuracy(&x[cut..], &y[cut..])
    }

    #[test]
    fn source_categories_are_separable() {
        let acc = holdout(&small(Domain::Source));
        assert!(acc > 1.5 * 0.25, "held-out centroid accuracy {acc}");
    }

    #[test]
    fn target_categories_are_separable() {
        let acc = holdout(&small(Domain::Target));
        assert!(acc > 1.5 * 0.25, "held-out centroid accuracy {acc}");
    }

    #[test]
    fn domains_are_distinct() {
        let (xs, ys) = features(&small(Domain::Source));
        let (xt, yt) = features(&small(Domain::Target));
        let acc = CentroidOracle::fit(&xs, &ys, 4).accuracy(&xt, &yt);
        assert!(acc < 1.5 * 0.25, "source centroids on target: {acc}");
    }

    #[test]
    fn tonal_lines_show_up_in_the_dft() {
        let spec = small(Domain::Target);
        for (k, i) in [(0, 0), (2, 5), (3, 9)] {
            let p = target_params(&spec, k, i);
            let n = 16_000;
            let x = render_tonals(&p, n, 16_000);
            // Hann-windowed naive DFT magnitude, 1 Hz bins, up to 3.1 kHz
            let xw: Vec<f64> = x
                .iter()
                .enumerate()
                .map(|(t, &v)| v * (0.5 - 0.5 * (2.0 * PI * t as f64 / n as f64).cos()))
                .collect();
            let mag: Vec<f64> = (0..3100)
                .map(|b| {
                    let w = 2.0 * PI * b as f64 / n as f64;
                    let (re, im) = xw.iter().enumerate().fold((0.0, 0.0), |(r, m), (t, &v)| {
                        (r + v * (w * t as f64).cos(), m - v * (w * t as f64).sin())
                    });
                    (re * re + im * im).sqrt()
                })
                .collect();
            let top = mag.iter().cloned().fold(0.0, f64::max);
            let weakest = p.lines.iter().map(|l| l.1).fold(f64::MAX, f64::min);
            let strongest = p.lines.iter().map(|l| l.1).fold(0.0, f64::max);
            for &(f, a, _) in &p.lines {
                let bin = f.round() as usize;
                let local = (bin - 1..=bin + 1).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap();
                // a local maximum within one bin of the line, of the right size
                assert!(mag[local] >= mag[local - 1] && mag[local] >= mag[local + 1], "line at {f} Hz");
                assert!(mag[local] >= 0.5 * top * a / strongest, "line at {f} Hz too weak");
            }
            // halfway between lines the spectrum is empty
            let gap = (1.5 * p.blade_hz).round() as usize;
            assert!(mag[gap] < 0.01 * top * weakest / strongest);
        }
    }

    #[test]
    fn generation_is_deterministic_bounded_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            clips_per_category: 4,
            file_seconds: Some(2.0),
            ..small(Domain::Target)
        };
        let a = generate(&spec, dir.path().join("a")).unwrap();
        let b = generate(&spec, dir.path().join("b")).unwrap();
        for k in 0..4 {
            for i in 0..2 {
                let id = file_id(&spec, k, i);
                let fa = std::fs::read(dir.path().join("a").join(&id)).unwrap();
                let fb = std::fs::read(dir.path().join("b").join(&id)).unwrap();
                assert_eq!(fa, fb);
                let wav = read_wav(dir.path().join("a").join(&id)).unwrap();
                assert!(wav.samples().iter().all(|s| s.abs() <= 0.9 + 1.0 / 32768.0));
                // 16-bit round trip of the generator output
                let direct = gen_file(&spec, k, i).unwrap();
                let err = direct
                    .samples()
                    .iter()
                    .zip(wav.samples())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f32, f32::max);
                assert!(err <= 1.0 / 32768.0, "round trip error {err}");
            }
        }
        assert_eq!(a.records.len(), 16);
        assert!(a.counts().iter().all(|c| c.iter().sum::<usize>() == 4));
        assert_eq!(a.records.iter().map(|r| (r.clip_index, r.split)).collect::<Vec<_>>(),
                   b.records.iter().map(|r| (r.clip_index, r.split)).collect::<Vec<_>>());
        let src = SynthSpec { clips_per_category: 3, ..small(Domain::Source) };
        let m = gen_source(&src, dir.path().join("s")).unwrap();
        assert_eq!(m.records.len(), 12);
        let buf = read_wav(dir.path().join("s").join(file_id(&src, 1, 2))).unwrap();
        let peak = buf.samples().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!((peak - 0.9).abs() < 1e-4);
        assert!(gen_target(&src, dir.path().join("x")).is_err());
    }

    #[test]
    fn desk_presets_have_expected_shapes() {
        let t = SynthSpec::desk_target_train(0);
        assert_eq!(t.split_ratios.apportion(t.clips_per_category), [30, 10, 0]);
        let t = SynthSpec::desk_target_test(0);
        assert_eq!(t.files_per_category().unwrap(), 20);
        assert_eq!(t.split_ratios.apportion(40), [0, 0, 40]);
        assert!(SynthSpec { clips_per_category: 3, ..t }.validate().is_err());
        let _ = Split::Test;
    }
}
