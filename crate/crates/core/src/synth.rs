//! Deterministic synthetic corpus with known style and content factors.
//!
//! Each speaker renders motion as
//! `amplitude · viseme[token(t)] + pout · POUT + jaw · JAW`, low-passed with
//! the speaker's time constant, plus Gaussian noise. The paired audio is a
//! per-token two-tone signal. Every random draw comes from a ChaCha stream
//! keyed by `(seed, purpose)`, so the corpus is a pure function of
//! [`GenConfig`].

use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    write_index_list, ContentScript, MotionSequence, Sample, ScriptSegment, TemplateMesh, Waveform,
};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Identity, SampleEntry, Split, MANIFEST_VERSION};
use crate::{tensor_io, wav};

/// Ground-truth speaking style of one synthetic speaker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakerStyleParams {
    pub amplitude_scale: f64,
    pub pout_coeff: f64,
    /// mm
    pub jaw_open_bias: f64,
    /// frames
    pub smooth_tau: f64,
}

impl SpeakerStyleParams {
    pub const NEUTRAL: Self = Self {
        amplitude_scale: 1.0,
        pout_coeff: 0.0,
        jaw_open_bias: 0.0,
        smooth_tau: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude_scale > 0.0) || !(self.smooth_tau >= 1.0) {
            return Err(Error::Config(format!(
                "style needs amplitude_scale > 0 and smooth_tau ≥ 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// One localized base displacement field per content token.
#[derive(Debug, Clone, PartialEq)]
pub struct VisemeTable {
    /// `P×V×3`
    pub patterns: Array3<f32>,
}

impl VisemeTable {
    pub fn token_count(&self) -> usize {
        self.patterns.shape()[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub speakers: usize,
    pub tokens: usize,
    pub vertices: usize,
    pub motion_rate: f64,
    pub audio_rate: u32,
    pub clips_per_speaker: usize,
    pub clip_seconds: f64,
    /// Motion noise std, mm.
    pub noise_std: f64,
    pub audio_noise_std: f64,
    pub seed: u64,
    /// The last `unseen_speakers` speakers are held out of training entirely.
    pub unseen_speakers: usize,
    /// Per seen speaker, the last `seen_test_clips` clips form `test_seen`.
    pub seen_test_clips: usize,
    /// Token durations are drawn uniformly from this frame range.
    pub min_token_frames: usize,
    pub max_token_frames: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            speakers: 8,
            tokens: 12,
            vertices: 120,
            motion_rate: 25.0,
            audio_rate: 1600,
            clips_per_speaker: 40,
            clip_seconds: 6.0,
            noise_std: 0.02,
            audio_noise_std: 0.01,
            seed: 7,
            unseen_speakers: 2,
            seen_test_clips: 8,
            min_token_frames: 3,
            max_token_frames: 8,
        }
    }
}

const TONE_GRID_HZ: (u32, u32, u32) = (80, 720, 10);
const TONE_AMPLITUDE: f64 = 0.2;

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.speakers < 2 {
            return fail(format!("need at least 2 speakers, got {}", self.speakers));
        }
        if self.speakers - self.unseen_speakers.min(self.speakers) < 2 {
            return fail("need at least 2 seen speakers for training".into());
        }
        if self.tokens < 2 {
            return fail(format!("need at least 2 tokens, got {}", self.tokens));
        }
        let grid = ((TONE_GRID_HZ.1 - TONE_GRID_HZ.0) / TONE_GRID_HZ.2 + 1) as usize;
        if 2 * self.tokens > grid {
            return fail(format!("at most {} tokens fit the tone grid", grid / 2));
        }
        if self.vertices < 8 {
            return fail(format!("need at least 8 vertices, got {}", self.vertices));
        }
        if !(self.motion_rate > 0.0) || self.audio_rate == 0 || !(self.clip_seconds > 0.0) {
            return fail("rates and clip length must be positive".into());
        }
        let spf = self.audio_rate as f64 / self.motion_rate;
        if spf.fract() != 0.0 {
            return fail(format!(
                "audio rate {} must be an integer multiple of motion rate {}",
                self.audio_rate, self.motion_rate
            ));
        }
        if self.clip_frames() == 0 {
            return fail("clips are shorter than one frame".into());
        }
        if self.clips_per_speaker == 0 || self.seen_test_clips >= self.clips_per_speaker {
            return fail("seen_test_clips must be smaller than clips_per_speaker".into());
        }
        if self.min_token_frames == 0 || self.max_token_frames < self.min_token_frames {
            return fail("token frame range is empty".into());
        }
        if !(self.noise_std >= 0.0) || !(self.audio_noise_std >= 0.0) {
            return fail("noise std must be non-negative".into());
        }
        Ok(())
    }

    pub fn clip_frames(&self) -> usize {
        (self.clip_seconds * self.motion_rate).round() as usize
    }

    pub fn samples_per_frame(&self) -> usize {
        (self.audio_rate as f64 / self.motion_rate).round() as usize
    }

    pub fn seen_speakers(&self) -> usize {
        self.speakers - self.unseen_speakers
    }
}

/// RNG streams, one per purpose, so adding draws in one place never shifts another.
mod stream {
    pub const VISEMES: u64 = 1;
    pub const TONES: u64 = 2;
    pub const SPEAKER: u64 = 1 << 16;
    pub const CLIP: u64 = 1 << 32;
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn clip_stream(speaker: usize, clip: usize, purpose: u64) -> u64 {
    stream::CLIP + (((speaker as u64) << 20 | clip as u64) << 2) + purpose
}

/// Neutral face on a Fermat spiral (mm), with the lips around `(0, -30)`.
pub fn make_template(vertices: usize) -> Result<(TemplateMesh, [usize; 2])> {
    const GOLDEN: f64 = 2.399_963_229_728_653;
    let radius = 80.0;
    let c = radius / (vertices as f64).sqrt();
    let pts = Array2::from_shape_fn((vertices, 3), |(i, k)| {
        let r = c * (i as f64 + 0.5).sqrt();
        let th = i as f64 * GOLDEN;
        (match k {
            0 => r * th.cos(),
            1 => 1.2 * r * th.sin(),
            _ => 30.0 * (1.0 - (r / radius).powi(2)),
        }) as f32
    });
    let mouth = (0.0f64, -30.0f64);
    let dist = |i: usize| {
        let dx = pts[[i, 0]] as f64 - mouth.0;
        let dy = pts[[i, 1]] as f64 - mouth.1;
        dx * dx + dy * dy
    };
    let mut order: Vec<usize> = (0..vertices).collect();
    order.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)));
    let n_lip = (vertices / 5).max(4);
    let lips: Vec<usize> = order[..n_lip].to_vec();
    let upper = *lips
        .iter()
        .filter(|&&i| pts[[i, 1]] as f64 >= mouth.1)
        .min_by(|&&a, &&b| dist(a).total_cmp(&dist(b)))
        .unwrap_or(&lips[0]);
    let lower = *lips
        .iter()
        .filter(|&&i| (pts[[i, 1]] as f64) < mouth.1 && i != upper)
        .min_by(|&&a, &&b| dist(a).total_cmp(&dist(b)))
        .unwrap_or(&lips[1]);
    let template = TemplateMesh::new(pts, lips)?;
    Ok((template, [upper, lower]))
}

/// Fixed unit fields: pouting pushes every lip vertex out of plane, the jaw
/// field opens the lower lip.
pub fn style_fields(template: &TemplateMesh) -> (Array2<f32>, Array2<f32>) {
    let v = template.vertex_count();
    let mut pout = Array2::zeros((v, 3));
    let mut jaw = Array2::zeros((v, 3));
    for &i in &template.lip_mask {
        pout[[i, 2]] = 1.0;
        if template.vertices[[i, 1]] < -30.0 {
            jaw[[i, 1]] = -1.0;
        }
    }
    (pout, jaw)
}

pub fn make_viseme_table(seed: u64, tokens: usize, vertices: usize, lip_mask: &[usize]) -> Result<VisemeTable> {
    if tokens < 2 {
        return Err(Error::Config(format!("need at least 2 tokens, got {tokens}")));
    }
    if let Some(&bad) = lip_mask.iter().find(|&&i| i >= vertices) {
        return Err(Error::Range(format!("lip index {bad} outside [0, {vertices})")));
    }
    let mut rng = rng(seed, stream::VISEMES);
    let normal = Normal::new(0.0f64, 1.5).expect("valid std");
    let mut patterns = Array3::zeros((tokens, vertices, 3));
    for p in 0..tokens {
        for &v in lip_mask {
            for k in 0..3 {
                patterns[[p, v, k]] = normal.sample(&mut rng) as f32;
            }
        }
    }
    Ok(VisemeTable { patterns })
}

/// Style parameters of speaker `k`, drawn from the documented ranges.
pub fn sample_speaker(seed: u64, k: usize) -> SpeakerStyleParams {
    let mut rng = rng(seed, stream::SPEAKER + k as u64);
    SpeakerStyleParams {
        amplitude_scale: rng.random_range(0.5..=2.0),
        pout_coeff: rng.random_range(0.0..=1.0),
        jaw_open_bias: rng.random_range(-1.0..=1.0),
        smooth_tau: rng.random_range(1.0..=4.0),
    }
}

/// Two distinct frequencies (Hz) per token on a 10 Hz grid.
pub fn make_tone_table(seed: u64, tokens: usize) -> Vec<[f64; 2]> {
    let (lo, hi, step) = TONE_GRID_HZ;
    let mut grid: Vec<u32> = (lo..=hi).step_by(step as usize).collect();
    let mut rng = rng(seed, stream::TONES);
    // Partial Fisher-Yates: the first 2P entries are a uniform draw without replacement.
    for i in 0..(2 * tokens).min(grid.len()) {
        let j = rng.random_range(i..grid.len());
        grid.swap(i, j);
    }
    (0..tokens)
        .map(|p| [grid[2 * p] as f64, grid[2 * p + 1] as f64])
        .collect()
}

pub fn random_script(cfg: &GenConfig, rng: &mut impl Rng) -> ContentScript {
    let frames = cfg.clip_frames();
    let mut segments = Vec::new();
    let mut start = 0;
    let mut prev: Option<u32> = None;
    while start < frames {
        let len = rng.random_range(cfg.min_token_frames..=cfg.max_token_frames);
        let mut token = rng.random_range(0..cfg.tokens as u32);
        if Some(token) == prev {
            token = (token + 1) % cfg.tokens as u32;
        }
        let end = (start + len).min(frames);
        segments.push(ScriptSegment {
            token: Some(token),
            start,
            end,
        });
        prev = Some(token);
        start = end;
    }
    ContentScript { segments }
}

/// Renders displacements for `script`. `noise_seed` selects the noise stream.
pub fn render_motion(
    style: &SpeakerStyleParams,
    script: &ContentScript,
    table: &VisemeTable,
    template: &TemplateMesh,
    cfg: &GenConfig,
    noise_seed: u64,
) -> Result<MotionSequence> {
    style.validate()?;
    let frames = script.frames();
    script.validate(frames, Some(table.token_count()))?;
    if frames == 0 {
        return Err(Error::Range("script is empty".into()));
    }
    let v = table.patterns.shape()[1];
    if v != template.vertex_count() {
        return Err(Error::Shape(format!(
            "viseme table has {v} vertices, template has {}",
            template.vertex_count()
        )));
    }
    let (pout, jaw) = style_fields(template);
    let offset: Array2<f64> =
        pout.mapv(|x| x as f64 * style.pout_coeff) + jaw.mapv(|x| x as f64 * style.jaw_open_bias);
    let mut out = Array3::<f32>::zeros((frames, v, 3));
    let mut state = Array2::<f64>::zeros((v, 3));
    let mut rng = rng(cfg.seed, noise_seed);
    let noise = (cfg.noise_std > 0.0).then(|| Normal::new(0.0, cfg.noise_std).expect("valid std"));
    for (t, token) in script.frame_tokens().into_iter().enumerate() {
        let mut target = offset.clone();
        if let Some(tok) = token {
            let pattern = table.patterns.index_axis(Axis(0), tok as usize);
            target.zip_mut_with(&pattern, |a, &p| *a += style.amplitude_scale * p as f64);
        }
        if t == 0 {
            state.assign(&target);
        } else {
            let alpha = 1.0 / style.smooth_tau;
            state.zip_mut_with(&target, |y, &x| *y = (1.0 - alpha) * *y + alpha * x);
        }
        let mut frame = out.index_axis_mut(Axis(0), t);
        frame.zip_mut_with(&state, |o, &y| *o = y as f32);
        if let Some(noise) = &noise {
            frame.mapv_inplace(|o| (o as f64 + noise.sample(&mut rng)) as f32);
        }
    }
    MotionSequence::new(out, cfg.motion_rate)
}

/// Renders the two-tone audio track for `script`.
pub fn render_waveform(script: &ContentScript, tones: &[[f64; 2]], cfg: &GenConfig, noise_seed: u64) -> Waveform {
    let spf = cfg.samples_per_frame();
    let fw = cfg.audio_rate as f64;
    let mut samples = vec![0.0f64; script.frames() * spf];
    for seg in &script.segments {
        if let Some(tok) = seg.token {
            let [f1, f2] = tones[tok as usize];
            for n in seg.start * spf..seg.end * spf {
                let t = n as f64 / fw;
                samples[n] = TONE_AMPLITUDE
                    * ((2.0 * std::f64::consts::PI * f1 * t).sin() + (2.0 * std::f64::consts::PI * f2 * t).sin());
            }
        }
    }
    if cfg.audio_noise_std > 0.0 {
        let mut rng = rng(cfg.seed, noise_seed);
        let noise = Normal::new(0.0, cfg.audio_noise_std).expect("valid std");
        for s in &mut samples {
            *s += noise.sample(&mut rng);
        }
    }
    Waveform {
        samples: samples.into_iter().map(|s| s.clamp(-1.0, 1.0) as f32).collect(),
        sample_rate: cfg.audio_rate,
    }
}

/// Everything needed to render clips, derived once from the config.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub cfg: GenConfig,
    pub template: TemplateMesh,
    pub lip_pair: [usize; 2],
    pub visemes: VisemeTable,
    pub tones: Vec<[f64; 2]>,
    pub speakers: Vec<SpeakerStyleParams>,
}

impl Corpus {
    pub fn new(cfg: GenConfig) -> Result<Self> {
        cfg.validate()?;
        let (template, lip_pair) = make_template(cfg.vertices)?;
        let visemes = make_viseme_table(cfg.seed, cfg.tokens, cfg.vertices, &template.lip_mask)?;
        let tones = make_tone_table(cfg.seed, cfg.tokens);
        let speakers = (0..cfg.speakers).map(|k| sample_speaker(cfg.seed, k)).collect();
        Ok(Self {
            cfg,
            template,
            lip_pair,
            visemes,
            tones,
            speakers,
        })
    }

    pub fn split_of(&self, speaker: usize, clip: usize) -> Split {
        if speaker >= self.cfg.seen_speakers() {
            Split::TestUnseen
        } else if clip >= self.cfg.clips_per_speaker - self.cfg.seen_test_clips {
            Split::TestSeen
        } else {
            Split::Train
        }
    }

    pub fn script(&self, speaker: usize, clip: usize) -> ContentScript {
        random_script(&self.cfg, &mut rng(self.cfg.seed, clip_stream(speaker, clip, 0)))
    }

    pub fn clip(&self, speaker: usize, clip: usize) -> Result<Sample> {
        let script = self.script(speaker, clip);
        let motion = render_motion(
            &self.speakers[speaker],
            &script,
            &self.visemes,
            &self.template,
            &self.cfg,
            clip_stream(speaker, clip, 1),
        )?;
        let waveform = render_waveform(&script, &self.tones, &self.cfg, clip_stream(speaker, clip, 2));
        Sample::new(speaker, motion, waveform, Some(script))
    }
}

pub fn speaker_name(k: usize) -> String {
    format!("spk{k:02}")
}

pub fn clip_stem(speaker: usize, clip: usize) -> String {
    format!("samples/{}_clip{clip:03}", speaker_name(speaker))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[derive(Serialize)]
struct GroundTruth<'a> {
    speakers: &'a [SpeakerStyleParams],
    tones_hz: &'a [[f64; 2]],
    lip_pair: [usize; 2],
}

/// Writes the full corpus under `out_dir` and returns its manifest.
pub fn generate_dataset(cfg: &GenConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let corpus = Corpus::new(cfg.clone())?;
    let mkdir = |p: &Path| {
        std::fs::create_dir_all(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })
    };
    mkdir(out_dir)?;
    mkdir(&out_dir.join("samples"))?;
    tensor_io::write_tensor(out_dir.join("template.mimt"), &corpus.template.vertices.clone().into_dyn())?;
    write_index_list(&out_dir.join("lip_mask.mimt"), &corpus.template.lip_mask)?;
    tensor_io::write_tensor(out_dir.join("visemes.mimt"), &corpus.visemes.patterns.clone().into_dyn())?;
    write_json(&out_dir.join("gen_config.json"), cfg)?;
    write_json(
        &out_dir.join("ground_truth.json"),
        &GroundTruth {
            speakers: &corpus.speakers,
            tones_hz: &corpus.tones,
            lip_pair: corpus.lip_pair,
        },
    )?;

    let mut entries = Vec::new();
    for speaker in 0..cfg.speakers {
        for clip in 0..cfg.clips_per_speaker {
            let sample = corpus.clip(speaker, clip)?;
            let stem = clip_stem(speaker, clip);
            sample.motion.save(&out_dir.join(format!("{stem}.motion.mimt")))?;
            wav::write_wav(out_dir.join(format!("{stem}.wav")), &sample.waveform)?;
            write_json(&out_dir.join(format!("{stem}.script.json")), sample.script.as_ref().expect("synthetic"))?;
            entries.push(SampleEntry {
                stem,
                identity_id: speaker,
                split: corpus.split_of(speaker, clip),
                duration: sample.duration(),
                has_script: true,
            });
        }
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        motion_rate: cfg.motion_rate,
        audio_rate: cfg.audio_rate,
        template: "template.mimt".into(),
        lip_mask: "lip_mask.mimt".into(),
        lip_pair: Some(corpus.lip_pair),
        tokens: Some(cfg.tokens),
        identities: (0..cfg.speakers)
            .map(|id| Identity {
                id,
                name: speaker_name(id),
            })
            .collect(),
        samples: entries,
        root: out_dir.to_path_buf(),
    };
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, manifest.to_json()).map_err(|e| Error::Io { path, source: e })?;
    Ok(manifest)
}

/// Loads a viseme table written by [`generate_dataset`].
pub fn load_viseme_table(path: &Path) -> Result<VisemeTable> {
    let arr: ArrayD<f32> = tensor_io::read_tensor(path)?;
    let patterns = arr
        .into_dimensionality()
        .map_err(|_| Error::Shape(format!("{}: viseme table must be rank 3", path.display())))?;
    Ok(VisemeTable { patterns })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::load_manifest;

    fn small_cfg() -> GenConfig {
        GenConfig {
            speakers: 3,
            tokens: 4,
            vertices: 20,
            clips_per_speaker: 3,
            clip_seconds: 2.0,
            unseen_speakers: 1,
            seen_test_clips: 1,
            ..GenConfig::default()
        }
    }

    fn script(tokens: &[(u32, usize)]) -> ContentScript {
        let mut start = 0;
        ContentScript {
            segments: tokens
                .iter()
                .map(|&(t, n)| {
                    let s = ScriptSegment { token: Some(t), start, end: start + n };
                    start += n;
                    s
                })
                .collect(),
        }
    }

    #[test]
    fn viseme_table_is_deterministic_and_localized() {
        let (tpl, _) = make_template(40).unwrap();
        let a = make_viseme_table(3, 5, 40, &tpl.lip_mask).unwrap();
        let b = make_viseme_table(3, 5, 40, &tpl.lip_mask).unwrap();
        assert_eq!(a, b);
        for v in 0..40 {
            if tpl.lip_mask.binary_search(&v).is_err() {
                for p in 0..5 {
                    for k in 0..3 {
                        assert_eq!(a.patterns[[p, v, k]], 0.0);
                    }
                }
            }
        }
        let two = make_viseme_table(3, 2, 40, &tpl.lip_mask).unwrap();
        let d: f32 = (&two.patterns.index_axis(Axis(0), 0) - &two.patterns.index_axis(Axis(0), 1))
            .mapv(|x| x * x)
            .sum();
        assert!(d > 0.0);
        assert!(make_viseme_table(3, 1, 40, &tpl.lip_mask).is_err());
    }

    #[test]
    fn speakers_are_deterministic_and_in_range() {
        let seed = GenConfig::default().seed;
        let all: Vec<_> = (0..8).map(|k| sample_speaker(seed, k)).collect();
        assert_eq!(all[3], sample_speaker(seed, 3));
        for (i, a) in all.iter().enumerate() {
            assert!((0.5..=2.0).contains(&a.amplitude_scale));
            assert!((0.0..=1.0).contains(&a.pout_coeff));
            assert!((-1.0..=1.0).contains(&a.jaw_open_bias));
            assert!((1.0..=4.0).contains(&a.smooth_tau));
            for b in &all[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn neutral_style_reproduces_patterns() {
        let cfg = GenConfig { noise_std: 0.0, vertices: 30, tokens: 4, ..GenConfig::default() };
        let (tpl, _) = make_template(30).unwrap();
        let table = make_viseme_table(1, 4, 30, &tpl.lip_mask).unwrap();
        let sc = script(&[(2, 3), (0, 4), (3, 2)]);
        let m = render_motion(&SpeakerStyleParams::NEUTRAL, &sc, &table, &tpl, &cfg, 9).unwrap();
        for (t, tok) in sc.frame_tokens().into_iter().enumerate() {
            assert_eq!(m.frames.index_axis(Axis(0), t), table.patterns.index_axis(Axis(0), tok.unwrap() as usize));
        }
    }

    #[test]
    fn doubling_amplitude_doubles_frames() {
        let cfg = GenConfig { noise_std: 0.0, vertices: 30, tokens: 4, ..GenConfig::default() };
        let (tpl, _) = make_template(30).unwrap();
        let table = make_viseme_table(1, 4, 30, &tpl.lip_mask).unwrap();
        let sc = script(&[(1, 5), (2, 6), (0, 4)]);
        let base = SpeakerStyleParams { amplitude_scale: 0.7, smooth_tau: 2.5, ..SpeakerStyleParams::NEUTRAL };
        let double = SpeakerStyleParams { amplitude_scale: 1.4, ..base };
        let a = render_motion(&base, &sc, &table, &tpl, &cfg, 0).unwrap();
        let b = render_motion(&double, &sc, &table, &tpl, &cfg, 0).unwrap();
        assert_eq!(a.frames.mapv(|x| 2.0 * x), b.frames);
    }

    #[test]
    fn rendering_is_deterministic() {
        let corpus = Corpus::new(small_cfg()).unwrap();
        assert_eq!(corpus.clip(1, 2).unwrap(), corpus.clip(1, 2).unwrap());
        assert_ne!(corpus.clip(1, 2).unwrap().motion, corpus.clip(1, 1).unwrap().motion);
    }

    #[test]
    fn script_gap_is_an_error() {
        let cfg = GenConfig { vertices: 30, tokens: 4, ..GenConfig::default() };
        let (tpl, _) = make_template(30).unwrap();
        let table = make_viseme_table(1, 4, 30, &tpl.lip_mask).unwrap();
        let gap = ContentScript {
            segments: vec![
                ScriptSegment { token: Some(0), start: 0, end: 2 },
                ScriptSegment { token: Some(1), start: 3, end: 5 },
            ],
        };
        assert!(render_motion(&SpeakerStyleParams::NEUTRAL, &gap, &table, &tpl, &cfg, 0).is_err());
    }

    #[test]
    fn silence_is_silent() {
        let cfg = GenConfig { audio_noise_std: 0.0, ..GenConfig::default() };
        let sc = ContentScript { segments: vec![ScriptSegment { token: None, start: 0, end: 12 }] };
        let tones = make_tone_table(cfg.seed, cfg.tokens);
        let w = render_waveform(&sc, &tones, &cfg, 0);
        assert_eq!(w.samples.len(), 768);
        assert!(w.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn tone_table_is_distinct() {
        let tones = make_tone_table(7, 12);
        let mut all: Vec<f64> = tones.iter().flatten().copied().collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        assert_eq!(all.len(), 24);
        assert_eq!(tones, make_tone_table(7, 12));
    }

    #[test]
    fn dataset_splits_and_determinism() {
        let cfg = small_cfg();
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(m.split_identities(Split::Train), vec![0, 1]);
        assert_eq!(m.split_identities(Split::TestSeen), vec![0, 1]);
        assert_eq!(m.split_identities(Split::TestUnseen), vec![2]);
        let loaded = load_manifest(dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded.samples, m.samples);

        let again = tempfile::tempdir().unwrap();
        generate_dataset(&cfg, again.path()).unwrap();
        for entry in walk(dir.path()) {
            let rel = entry.strip_prefix(dir.path()).unwrap();
            assert_eq!(std::fs::read(&entry).unwrap(), std::fs::read(again.path().join(rel)).unwrap(), "{rel:?}");
        }
    }

    fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
        let mut out = Vec::new();
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn config_validation() {
        assert!(GenConfig { speakers: 1, ..GenConfig::default() }.validate().is_err());
        assert!(GenConfig { unseen_speakers: 7, ..GenConfig::default() }.validate().is_err());
        assert!(GenConfig { audio_rate: 1000, motion_rate: 30.0, ..GenConfig::default() }.validate().is_err());
        GenConfig::default().validate().unwrap();
    }
}
