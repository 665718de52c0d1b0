//! Synthetic frame-feature generation.
//!
//! Two phenomena drive the design. First, identity pairs can share an
//! appearance vector exactly and differ only in motion frequency, so their
//! per-frame feature distributions match (same mean, same covariance: one
//! sinusoid along one shared direction with a random phase) while their
//! temporal autocorrelations differ — per-frame cues cannot separate them,
//! temporal cues can. Second, occlusion windows replace frames with a shared
//! occluder vector, which carries no identity information at all.
//!
//! Generation is a pure function of (spec, seed); every tracklet draws from
//! its own counter-addressed stream so order of rendering never matters.

use crate::error::{GltrError, Result};
use crate::features::SequenceRecord;
use crate::rng::SplitMix64;
use crate::tensor::RealMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct MotionPattern {
    /// Cycles per frame; keep below 0.5 to stay under Nyquist.
    pub frequency: f64,
    pub phase: f64,
    pub amplitude: f64,
    /// Unit vector the sinusoid moves along.
    pub direction: Vec<f64>,
}

/// Frames in [start, end) are replaced by the occluder.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionWindow {
    pub start: usize,
    pub end: usize,
    pub occluder: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackletSpec {
    pub person_id: u32,
    pub camera_id: u32,
    pub length: usize,
    pub appearance: Vec<f64>,
    pub motion: MotionPattern,
    pub noise_sigma: f64,
    pub occlusions: Vec<OcclusionWindow>,
}

impl TrackletSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(GltrError::InvalidArgument("tracklet length must be >= 1".into()));
        }
        let d = self.appearance.len();
        if self.motion.direction.len() != d {
            return Err(GltrError::DimensionMismatch(
                "motion direction and appearance dimension differ".into(),
            ));
        }
        let norm: f64 = self.motion.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(GltrError::InvalidArgument(format!(
                "motion direction must be unit length, norm is {norm}"
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(GltrError::InvalidArgument("noise_sigma must be >= 0".into()));
        }
        let mut sorted: Vec<(usize, usize)> = Vec::new();
        for occ in &self.occlusions {
            if occ.start >= occ.end || occ.end > self.length {
                return Err(GltrError::InvalidArgument(format!(
                    "occlusion [{}, {}) outside [0, {})",
                    occ.start, occ.end, self.length
                )));
            }
            if occ.occluder.len() != d {
                return Err(GltrError::DimensionMismatch(
                    "occluder dimension differs from appearance".into(),
                ));
            }
            sorted.push((occ.start, occ.end));
        }
        sorted.sort_unstable();
        for pair in sorted.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(GltrError::InvalidArgument(
                    "occlusion intervals overlap".into(),
                ));
            }
        }
        Ok(())
    }

    fn occluder_at(&self, t: usize) -> Option<&[f64]> {
        self.occlusions
            .iter()
            .find(|o| o.start <= t && t < o.end)
            .map(|o| o.occluder.as_slice())
    }
}

/// Render frames: appearance + amplitude*sin(2*pi*f*t + phase)*direction +
/// gaussian noise; occluded frames use the occluder instead.
pub fn render_tracklet(spec: &TrackletSpec, rng: &mut SplitMix64) -> Result<RealMatrix> {
    spec.validate()?;
    let d = spec.appearance.len();
    let mut out = RealMatrix::zeros(d, spec.length);
    for t in 0..spec.length {
        let base: Vec<f64> = match spec.occluder_at(t) {
            Some(occluder) => occluder.to_vec(),
            None => {
                let wave = spec.motion.amplitude
                    * (2.0 * std::f64::consts::PI * spec.motion.frequency * t as f64
                        + spec.motion.phase)
                        .sin();
                (0..d)
                    .map(|c| spec.appearance[c] + wave * spec.motion.direction[c])
                    .collect()
            }
        };
        for c in 0..d {
            *out.at_mut(c, t) = base[c] + spec.noise_sigma * rng.gaussian();
        }
    }
    Ok(out)
}

/// Knobs of the toy benchmark generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub num_identities: usize,
    pub cameras: usize,
    /// Tracklets rendered per identity per camera.
    pub tracklets_per_id_per_cam: usize,
    /// How many of those go to the train split (the rest are eval).
    pub train_tracklets_per_id_per_cam: usize,
    pub frame_dim: usize,
    pub tracklet_len: usize,
    /// Fraction of identities arranged into look-alike pairs.
    pub lookalike_fraction: f64,
    /// Cosine similarity of a pair's appearance vectors (1.0 = identical).
    pub appearance_similarity: f64,
    pub appearance_scale: f64,
    pub amplitude: f64,
    pub noise_sigma: f64,
    pub freq_min: f64,
    pub freq_max: f64,
    /// Frequency offset separating the two members of a pair.
    pub freq_pair_gap: f64,
    /// Probability that a tracklet carries one occlusion window.
    pub occlusion_probability: f64,
    /// Occlusion window length as a fraction of the tracklet.
    pub occlusion_fraction: f64,
    /// Occluder vectors shared across the whole benchmark.
    pub num_occluders: usize,
    pub occluder_scale: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            num_identities: 20,
            cameras: 2,
            tracklets_per_id_per_cam: 3,
            train_tracklets_per_id_per_cam: 2,
            frame_dim: 16,
            tracklet_len: 32,
            lookalike_fraction: 1.0,
            appearance_similarity: 1.0,
            appearance_scale: 1.0,
            amplitude: 0.8,
            noise_sigma: 0.05,
            freq_min: 0.04,
            freq_max: 0.22,
            freq_pair_gap: 0.16,
            occlusion_probability: 0.5,
            occlusion_fraction: 0.25,
            num_occluders: 2,
            occluder_scale: 1.2,
            seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_identities < 2 {
            return Err(GltrError::InvalidArgument("need at least 2 identities".into()));
        }
        if self.cameras < 2 {
            return Err(GltrError::InvalidArgument("need at least 2 cameras".into()));
        }
        if self.tracklets_per_id_per_cam == 0 {
            return Err(GltrError::InvalidArgument(
                "need at least one tracklet per identity per camera".into(),
            ));
        }
        if self.train_tracklets_per_id_per_cam >= self.tracklets_per_id_per_cam {
            return Err(GltrError::InvalidArgument(
                "train tracklets must leave at least one eval tracklet per identity per camera"
                    .into(),
            ));
        }
        if self.frame_dim == 0 || self.tracklet_len == 0 {
            return Err(GltrError::InvalidArgument(
                "frame_dim and tracklet_len must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.lookalike_fraction)
            || !(0.0..=1.0).contains(&self.appearance_similarity)
            || !(0.0..=1.0).contains(&self.occlusion_probability)
            || !(0.0..1.0).contains(&self.occlusion_fraction)
        {
            return Err(GltrError::InvalidArgument(
                "fractions must lie in [0, 1]".into(),
            ));
        }
        if self.freq_min <= 0.0 || self.freq_max <= self.freq_min {
            return Err(GltrError::InvalidArgument("bad frequency range".into()));
        }
        if self.freq_max + self.freq_pair_gap >= 0.5 {
            return Err(GltrError::InvalidArgument(
                "freq_max + freq_pair_gap must stay below 0.5 (Nyquist)".into(),
            ));
        }
        if self.occlusion_probability > 0.0 && self.num_occluders == 0 {
            return Err(GltrError::InvalidArgument(
                "occlusions requested but num_occluders is 0".into(),
            ));
        }
        Ok(())
    }
}

/// One identity's generation parameters.
#[derive(Debug, Clone)]
pub struct IdentityProfile {
    pub person_id: u32,
    pub appearance: Vec<f64>,
    pub frequency: f64,
    pub amplitude: f64,
    pub direction: Vec<f64>,
}

/// The generated splits plus the shared occluders and identity profiles
/// (handy for rendering extra tracklets against the same world).
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: Vec<SequenceRecord>,
    pub query: Vec<SequenceRecord>,
    pub gallery: Vec<SequenceRecord>,
    pub identities: Vec<IdentityProfile>,
    pub occluders: Vec<Vec<f64>>,
}

fn random_unit(rng: &mut SplitMix64, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

/// Unit vector orthogonal to `v`.
fn random_orthogonal(rng: &mut SplitMix64, v: &[f64]) -> Vec<f64> {
    loop {
        let mut w = random_unit(rng, v.len());
        let dot: f64 = w.iter().zip(v).map(|(a, b)| a * b).sum();
        for (wi, vi) in w.iter_mut().zip(v) {
            *wi -= dot * vi;
        }
        let norm: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return w.iter().map(|x| x / norm).collect();
        }
    }
}

const IDENTITY_STREAM: u64 = 1 << 40;
const TRACKLET_STREAM: u64 = 2 << 40;

/// Build the train/query/gallery splits. Per identity pair (when paired):
/// shared appearance (up to the configured cosine similarity), shared motion
/// direction and amplitude, frequencies `f` and `f + freq_pair_gap`. Queries
/// are one eval tracklet per identity from camera 1; the remaining eval
/// tracklets form the gallery; train tracklets never overlap either.
pub fn generate_benchmark(cfg: &BenchmarkConfig) -> Result<Benchmark> {
    cfg.validate()?;
    let d = cfg.frame_dim;
    let mut world_rng = SplitMix64::fork(cfg.seed, IDENTITY_STREAM);

    let occluders: Vec<Vec<f64>> = (0..cfg.num_occluders)
        .map(|_| {
            random_unit(&mut world_rng, d)
                .into_iter()
                .map(|x| x * cfg.occluder_scale)
                .collect()
        })
        .collect();

    let num_paired = ((cfg.lookalike_fraction * cfg.num_identities as f64 / 2.0).floor() as usize)
        .min(cfg.num_identities / 2);
    let mut identities: Vec<IdentityProfile> = Vec::with_capacity(cfg.num_identities);
    let mut id = 0u32;
    for _ in 0..num_paired {
        let appearance_a: Vec<f64> = random_unit(&mut world_rng, d)
            .into_iter()
            .map(|x| x * cfg.appearance_scale)
            .collect();
        let appearance_b = if cfg.appearance_similarity >= 1.0 {
            appearance_a.clone()
        } else {
            let unit_a: Vec<f64> =
                appearance_a.iter().map(|x| x / cfg.appearance_scale).collect();
            let orth = random_orthogonal(&mut world_rng, &unit_a);
            let s = cfg.appearance_similarity;
            let c = (1.0 - s * s).sqrt();
            (0..d)
                .map(|i| cfg.appearance_scale * (s * unit_a[i] + c * orth[i]))
                .collect()
        };
        let direction = random_unit(&mut world_rng, d);
        let f1 = world_rng.uniform(cfg.freq_min, cfg.freq_max);
        let f2 = f1 + cfg.freq_pair_gap;
        identities.push(IdentityProfile {
            person_id: id,
            appearance: appearance_a,
            frequency: f1,
            amplitude: cfg.amplitude,
            direction: direction.clone(),
        });
        identities.push(IdentityProfile {
            person_id: id + 1,
            appearance: appearance_b,
            frequency: f2,
            amplitude: cfg.amplitude,
            direction,
        });
        id += 2;
    }
    while (id as usize) < cfg.num_identities {
        identities.push(IdentityProfile {
            person_id: id,
            appearance: random_unit(&mut world_rng, d)
                .into_iter()
                .map(|x| x * cfg.appearance_scale)
                .collect(),
            frequency: world_rng.uniform(cfg.freq_min, cfg.freq_max),
            amplitude: cfg.amplitude,
            direction: random_unit(&mut world_rng, d),
        });
        id += 1;
    }

    let mut train = Vec::new();
    let mut query = Vec::new();
    let mut gallery = Vec::new();
    let mut counter = 0u64;
    for profile in &identities {
        for cam in 1..=cfg.cameras as u32 {
            let mut eval_emitted = 0usize;
            for slot in 0..cfg.tracklets_per_id_per_cam {
                let mut rng = SplitMix64::fork(cfg.seed, TRACKLET_STREAM + counter);
                counter += 1;
                let record = SequenceRecord {
                    person_id: profile.person_id,
                    camera_id: cam,
                    features: render_one(cfg, profile, &occluders, &mut rng)?,
                };
                if slot < cfg.train_tracklets_per_id_per_cam {
                    train.push(record);
                } else if cam == 1 && eval_emitted == 0 {
                    query.push(record);
                    eval_emitted += 1;
                } else {
                    gallery.push(record);
                    eval_emitted += 1;
                }
            }
        }
    }
    Ok(Benchmark { train, query, gallery, identities, occluders })
}

/// Render one tracklet for an identity against the shared occluders; used by
/// the benchmark generator and for drawing extra probe tracklets.
pub fn render_one(
    cfg: &BenchmarkConfig,
    profile: &IdentityProfile,
    occluders: &[Vec<f64>],
    rng: &mut SplitMix64,
) -> Result<RealMatrix> {
    let occluded = cfg.occlusion_probability > 0.0 && rng.next_f64() < cfg.occlusion_probability;
    let occlusions = if occluded {
        let len = ((cfg.tracklet_len as f64 * cfg.occlusion_fraction).round() as usize)
            .clamp(1, cfg.tracklet_len);
        let start = rng.below(cfg.tracklet_len - len + 1);
        let occluder = occluders[rng.below(occluders.len())].clone();
        vec![OcclusionWindow { start, end: start + len, occluder }]
    } else {
        Vec::new()
    };
    let spec = TrackletSpec {
        person_id: profile.person_id,
        camera_id: 0,
        length: cfg.tracklet_len,
        appearance: profile.appearance.clone(),
        motion: MotionPattern {
            frequency: profile.frequency,
            phase: rng.uniform(0.0, 2.0 * std::f64::consts::PI),
            amplitude: profile.amplitude,
            direction: profile.direction.clone(),
        },
        noise_sigma: cfg.noise_sigma,
        occlusions,
    };
    render_tracklet(&spec, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain_spec(d: usize, t: usize) -> TrackletSpec {
        let mut dir = vec![0.0; d];
        dir[0] = 1.0;
        TrackletSpec {
            person_id: 1,
            camera_id: 0,
            length: t,
            appearance: (0..d).map(|c| c as f64 * 0.1 + 1.0).collect(),
            motion: MotionPattern { frequency: 0.1, phase: 0.0, amplitude: 0.0, direction: dir },
            noise_sigma: 0.0,
            occlusions: Vec::new(),
        }
    }

    #[test]
    fn silent_spec_renders_constant_appearance() {
        let spec = plain_spec(4, 8);
        let mut rng = SplitMix64::new(1);
        let out = render_tracklet(&spec, &mut rng).unwrap();
        for t in 0..8 {
            for c in 0..4 {
                assert_eq!(out.at(c, t), spec.appearance[c]);
            }
        }
    }

    #[test]
    fn lookalike_pair_same_marginals_different_autocorrelation() {
        // Shared appearance, direction, amplitude, noise; only the frequency
        // differs. The per-frame marginal under a random phase has mean =
        // appearance and covariance (a^2/2) dir dir^T + sigma^2 I for ANY
        // frequency, so the two specs are per-frame indistinguishable by
        // construction. Their lag-1 autocorrelations cos(2*pi*f) differ
        // because cos is injective below Nyquist.
        let mut a = plain_spec(4, 32);
        a.motion.amplitude = 1.0;
        a.motion.frequency = 0.05;
        let mut b = a.clone();
        b.motion.frequency = 0.15;

        assert_eq!(a.appearance, b.appearance);
        assert_eq!(a.motion.direction, b.motion.direction);
        assert_eq!(a.motion.amplitude, b.motion.amplitude);
        assert_eq!(a.noise_sigma, b.noise_sigma);
        let lag1 = |f: f64| (2.0 * std::f64::consts::PI * f).cos();
        assert!((lag1(a.motion.frequency) - lag1(b.motion.frequency)).abs() > 0.1);

        // Empirical check of the analytic claim: time-average over many
        // random phases approaches the shared appearance for both.
        for spec in [&mut a, &mut b] {
            let mut sum = [0.0; 4];
            let runs = 200;
            for k in 0..runs {
                let mut rng = SplitMix64::fork(7, k);
                spec.motion.phase = rng.uniform(0.0, 2.0 * std::f64::consts::PI);
                let tr = render_tracklet(spec, &mut rng).unwrap();
                for c in 0..4 {
                    sum[c] += tr.row(c).iter().sum::<f64>() / 32.0;
                }
            }
            for c in 0..4 {
                assert!((sum[c] / runs as f64 - spec.appearance[c]).abs() < 0.05);
            }
        }
    }

    #[test]
    fn occluded_frames_sit_near_the_occluder() {
        let mut spec = plain_spec(6, 16);
        spec.motion.amplitude = 0.1;
        spec.noise_sigma = 0.01;
        let occluder: Vec<f64> = (0..6).map(|c| -2.0 - c as f64 * 0.3).collect();
        spec.occlusions = vec![OcclusionWindow { start: 6, end: 10, occluder: occluder.clone() }];
        let mut rng = SplitMix64::new(9);
        let out = render_tracklet(&spec, &mut rng).unwrap();
        let dist = |col: Vec<f64>, target: &[f64]| {
            col.iter()
                .zip(target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        for t in 6..10 {
            let to_occ = dist(out.column(t), &occluder);
            let to_app = dist(out.column(t), &spec.appearance);
            assert!(to_occ < to_app, "frame {t}: {to_occ} vs {to_app}");
        }
        for t in (0..6).chain(10..16) {
            let to_occ = dist(out.column(t), &occluder);
            let to_app = dist(out.column(t), &spec.appearance);
            assert!(to_app < to_occ, "clean frame {t}");
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = plain_spec(4, 8);
        spec.motion.direction = vec![0.7, 0.7, 0.7, 0.0]; // not unit
        assert!(render_tracklet(&spec, &mut SplitMix64::new(1)).is_err());

        let mut spec = plain_spec(4, 8);
        spec.occlusions = vec![OcclusionWindow { start: 5, end: 12, occluder: vec![0.0; 4] }];
        assert!(spec.validate().is_err()); // end out of range

        let mut spec = plain_spec(4, 8);
        spec.occlusions = vec![
            OcclusionWindow { start: 1, end: 4, occluder: vec![0.0; 4] },
            OcclusionWindow { start: 3, end: 6, occluder: vec![0.0; 4] },
        ];
        assert!(spec.validate().is_err()); // overlap
    }

    #[test]
    fn benchmark_counts_and_split_disjointness() {
        let cfg = BenchmarkConfig::default();
        let bench = generate_benchmark(&cfg).unwrap();
        assert_eq!(bench.query.len(), 20);
        assert!(bench.gallery.len() >= 20);
        assert_eq!(
            bench.train.len(),
            20 * 2 * cfg.train_tracklets_per_id_per_cam
        );
        // Every identity appears once in the query split, from camera 1.
        let mut seen = std::collections::HashSet::new();
        for q in &bench.query {
            assert_eq!(q.camera_id, 1);
            assert!(seen.insert(q.person_id));
        }
        // No bitwise-identical features across splits.
        for q in &bench.query {
            for t in &bench.train {
                assert_ne!(q.features.data(), t.features.data());
            }
        }
    }

    #[test]
    fn benchmark_is_deterministic() {
        let cfg = BenchmarkConfig { seed: 42, ..BenchmarkConfig::default() };
        let a = generate_benchmark(&cfg).unwrap();
        let b = generate_benchmark(&cfg).unwrap();
        assert_eq!(a.train.len(), b.train.len());
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.features.data(), y.features.data());
        }
        for (x, y) in a.query.iter().zip(&b.query) {
            assert_eq!(x.features.data(), y.features.data());
        }
    }

    #[test]
    fn paired_identities_share_appearance_at_similarity_one() {
        let cfg = BenchmarkConfig::default();
        let bench = generate_benchmark(&cfg).unwrap();
        for pair in bench.identities.chunks(2) {
            assert_eq!(pair[0].appearance, pair[1].appearance);
            assert_eq!(pair[0].direction, pair[1].direction);
            assert!(
                (pair[1].frequency - pair[0].frequency - cfg.freq_pair_gap).abs() < 1e-12
            );
        }
    }

    #[test]
    fn similarity_dial_controls_appearance_cosine() {
        let cfg = BenchmarkConfig {
            appearance_similarity: 0.8,
            ..BenchmarkConfig::default()
        };
        let bench = generate_benchmark(&cfg).unwrap();
        for pair in bench.identities.chunks(2) {
            let a = &pair[0].appearance;
            let b = &pair[1].appearance;
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((dot / (na * nb) - 0.8).abs() < 1e-9);
        }
    }

    #[test]
    fn config_validation_catches_bad_setups() {
        let cfg = BenchmarkConfig { cameras: 1, ..BenchmarkConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = BenchmarkConfig {
            train_tracklets_per_id_per_cam: 3,
            ..BenchmarkConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = BenchmarkConfig { freq_max: 0.45, ..BenchmarkConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
