//! Desk-scale corpus whose ground-truth MOS depends on prosody.
//!
//! Each utterance is a harmonic tone following a planted F0 contour, with a
//! planted phone alignment. Its prosodic quality is
//!
//! ```text
//! g = -(2 * z_D + z_S) / sqrt(5)
//! ```
//!
//! where `D` is the duration-weighted mean of `|ln(d / 0.08 s)|` over the
//! non-silence phones, `S` is the mean absolute F0 slope in semitones per
//! second along the contour, and `z_X = (X - mean_X) / std_X` uses the fixed
//! constants [`DURATION_STATS`] and [`SLOPE_STATS`], which are the population
//! moments of the generator's own prosody distribution. The true MOS is
//! `clip(3 + beta * g + system_offset + noise, 1, 5)`.
//!
//! Phone boundaries leave no trace in the audio, so durations are visible
//! only through alignments. The system offset sets the spectral tilt of the
//! tone, so system identity is visible in the spectrogram.

use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{write_ratings, DatasetManifest, FeatureFile, RatingRecord, UtteranceEntry};
use crate::error::{Error, Result};
use crate::features::{
    serialize_alignment, write_embedding, EmbeddingArray, LinguisticDims, PhonemeAlignment,
    Vocabulary, SILENCE,
};
use crate::signal::{write_wav, Waveform};
use crate::util::{mix_seed, rng};

const SAMPLE_RATE: u32 = 16_000;
const BASE_DURATION: f64 = 0.08;
const MIN_DURATION: f64 = 0.035;
const EDGE_SILENCE: f64 = 0.06;
const KNOT_SPACING: f64 = 0.12;
const RAMP: f64 = 0.01;
const HARMONICS: usize = 8;
const AMPLITUDE: f64 = 0.3;
const LEXICON_SIZE: usize = 200;

/// `(mean, std)` of `D` under the generator's prosody distribution.
pub const DURATION_STATS: (f64, f64) = (0.2492, 0.1850);
/// `(mean, std)` of `S` under the generator's prosody distribution.
pub const SLOPE_STATS: (f64, f64) = (16.92, 11.74);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub utterances: usize,
    pub systems: usize,
    pub texts: usize,
    pub listeners: usize,
    pub ratings_per_utterance: usize,
    /// Weight of prosodic quality in the true MOS.
    pub beta: f64,
    /// Standard deviation of both the truth noise and the per-rating noise.
    pub noise: f64,
    pub listener_bias_scale: f64,
    pub system_offset_scale: f64,
    /// Upper bound of the per-utterance log-duration spread.
    pub max_duration_irregularity: f64,
    /// Upper bound of the per-utterance contour spread in semitones.
    pub max_pitch_spread: f64,
    pub token_dim: usize,
    pub token_layers: usize,
    pub utterance_dim: usize,
    pub encoder_dim: usize,
    pub hit_size: usize,
    pub clean_hit_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            utterances: 200,
            systems: 10,
            texts: 40,
            listeners: 20,
            ratings_per_utterance: 4,
            beta: 0.5,
            noise: 0.3,
            listener_bias_scale: 0.2,
            system_offset_scale: 0.4,
            max_duration_irregularity: 0.6,
            max_pitch_spread: 4.0,
            token_dim: 16,
            token_layers: 4,
            utterance_dim: 16,
            encoder_dim: 16,
            hit_size: 5,
            clean_hit_rate: 0.9,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("utterances", self.utterances),
            ("systems", self.systems),
            ("texts", self.texts),
            ("listeners", self.listeners),
            ("ratings_per_utterance", self.ratings_per_utterance),
            ("token_dim", self.token_dim),
            ("token_layers", self.token_layers),
            ("utterance_dim", self.utterance_dim),
            ("encoder_dim", self.encoder_dim),
            ("hit_size", self.hit_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.ratings_per_utterance > self.listeners {
            return Err(Error::Config(
                "more ratings per utterance than listeners".into(),
            ));
        }
        let reals = [
            ("beta", self.beta),
            ("noise", self.noise),
            ("listener_bias_scale", self.listener_bias_scale),
            ("system_offset_scale", self.system_offset_scale),
            ("max_duration_irregularity", self.max_duration_irregularity),
            ("max_pitch_spread", self.max_pitch_spread),
        ];
        if let Some((name, v)) = reals.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!(
                "{name} = {v} must be finite and non-negative"
            )));
        }
        if !(0.0..=1.0).contains(&self.clean_hit_rate) {
            return Err(Error::Config("clean_hit_rate must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Phones with durations in samples, and contour knots in semitones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedProsody {
    pub phones: Vec<(String, usize)>,
    pub knots: Vec<(f64, f64)>,
    pub base_f0: f64,
}

impl PlantedProsody {
    pub fn total_samples(&self) -> usize {
        self.phones.iter().map(|p| p.1).sum()
    }

    /// Contour in semitones relative to `base_f0` at time `t` seconds.
    pub fn semitones(&self, t: f64) -> f64 {
        let k = ((t / KNOT_SPACING).floor() as usize).min(self.knots.len() - 2);
        let (t0, s0) = self.knots[k];
        let (t1, s1) = self.knots[k + 1];
        s0 + (s1 - s0) * ((t - t0) / (t1 - t0)).clamp(0.0, 1.0)
    }

    pub fn f0(&self, t: f64) -> f64 {
        self.base_f0 * (self.semitones(t) / 12.0).exp2()
    }
}

/// Raw duration irregularity `D` and slope magnitude `S`.
pub fn planted_quality(p: &PlantedProsody) -> (f64, f64) {
    let sr = SAMPLE_RATE as f64;
    let (mut weighted, mut total) = (0.0, 0.0);
    for (phone, n) in &p.phones {
        if phone != SILENCE {
            let d = *n as f64 / sr;
            weighted += d * (d / BASE_DURATION).ln().abs();
            total += d;
        }
    }
    let climb: f64 = p.knots.windows(2).map(|w| (w[1].1 - w[0].1).abs()).sum();
    let span = p.knots.last().unwrap().0 - p.knots[0].0;
    (weighted / total, climb / span)
}

fn quality_score(p: &PlantedProsody) -> f64 {
    let (d, s) = planted_quality(p);
    let zd = (d - DURATION_STATS.0) / DURATION_STATS.1;
    let zs = (s - SLOPE_STATS.0) / SLOPE_STATS.1;
    -(2.0 * zd + zs) / 5f64.sqrt()
}

struct Word {
    phones: Vec<usize>,
    tag: usize,
}

fn lexicon(seed: u64, phones: &Vocabulary, tags: &Vocabulary) -> Vec<Word> {
    let mut r = rng(mix_seed(&[seed, 0x1e71c0]));
    (0..LEXICON_SIZE)
        .map(|_| Word {
            phones: (0..r.gen_range(2..=3))
                .map(|_| r.gen_range(1..phones.len()))
                .collect(),
            tag: r.gen_range(0..tags.len()),
        })
        .collect()
}

fn text_words(seed: u64, text: usize) -> Vec<usize> {
    let mut r = rng(mix_seed(&[seed, 0x7e47, text as u64]));
    (0..r.gen_range(2..=3))
        .map(|_| r.gen_range(0..LEXICON_SIZE))
        .collect()
}

fn sample_prosody<R: Rng>(phone_seq: &[&str], spec: &SyntheticSpec, r: &mut R) -> PlantedProsody {
    let sr = SAMPLE_RATE as f64;
    let irregularity = r.gen_range(0.0..=spec.max_duration_irregularity);
    let spread = r.gen_range(0.0..=spec.max_pitch_spread);
    let base_f0 = r.gen_range(100.0..160.0);
    let edge = (EDGE_SILENCE * sr).round() as usize;
    let mut phones = vec![(SILENCE.to_string(), edge)];
    for &p in phone_seq {
        let eps: f64 = r.sample(StandardNormal);
        let d = (BASE_DURATION * (irregularity * eps).exp()).max(MIN_DURATION);
        phones.push((p.to_string(), (d * sr).round() as usize));
    }
    phones.push((SILENCE.to_string(), edge));
    let total = phones.iter().map(|p| p.1).sum::<usize>() as f64 / sr;
    let n_knots = (total / KNOT_SPACING).ceil() as usize + 1;
    let knots = (0..n_knots)
        .map(|k| {
            let z: f64 = r.sample(StandardNormal);
            (k as f64 * KNOT_SPACING, spread * z.clamp(-1.5, 1.5))
        })
        .collect();
    PlantedProsody {
        phones,
        knots,
        base_f0,
    }
}

/// Planned utterance before any file is written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticUtterance {
    pub id: String,
    pub system: usize,
    pub text: usize,
    pub words: Vec<usize>,
    pub prosody: PlantedProsody,
    pub quality: f64,
    pub truth: f64,
}

struct Plan {
    utterances: Vec<SyntheticUtterance>,
    system_offsets: Vec<f64>,
    ratings: Vec<RatingRecord>,
}

fn system_id(s: usize) -> String {
    format!("sys{s:03}")
}

fn text_id(t: usize) -> String {
    format!("txt{t:04}")
}

fn plan(spec: &SyntheticSpec) -> Result<Plan> {
    spec.validate()?;
    let phones = Vocabulary::default_phones();
    let tags = Vocabulary::default_tags();
    let lex = lexicon(spec.seed, &phones, &tags);
    let mut r = rng(mix_seed(&[spec.seed, 0x5157]));
    let system_offsets: Vec<f64> = (0..spec.systems)
        .map(|_| spec.system_offset_scale * r.sample::<f64, _>(StandardNormal))
        .collect();

    let mut utterances = Vec::with_capacity(spec.utterances);
    for i in 0..spec.utterances {
        let system = i % spec.systems;
        let text = r.gen_range(0..spec.texts);
        let words = text_words(spec.seed, text);
        let seq: Vec<&str> = words
            .iter()
            .flat_map(|&w| &lex[w].phones)
            .map(|&p| phones.symbol(p).unwrap())
            .collect();
        let mut ur = rng(mix_seed(&[spec.seed, 0xa0d10, i as u64]));
        let prosody = sample_prosody(&seq, spec, &mut ur);
        let quality = quality_score(&prosody);
        let noise = spec.noise * ur.sample::<f64, _>(StandardNormal);
        let truth = (3.0 + spec.beta * quality + system_offsets[system] + noise).clamp(1.0, 5.0);
        utterances.push(SyntheticUtterance {
            id: format!("utt{i:05}"),
            system,
            text,
            words,
            prosody,
            quality,
            truth,
        });
    }

    let mut lr = rng(mix_seed(&[spec.seed, 0x115e]));
    let listeners: Vec<(String, f64)> = (0..spec.listeners)
        .map(|_| {
            let u: f64 = lr.gen();
            let locale = if u < 0.6 {
                "US"
            } else if u < 0.8 {
                "GB"
            } else {
                "CA"
            };
            (
                locale.to_string(),
                spec.listener_bias_scale * lr.sample::<f64, _>(StandardNormal),
            )
        })
        .collect();
    let mut per_listener = vec![0usize; spec.listeners];
    let mut ratings = Vec::with_capacity(spec.utterances * spec.ratings_per_utterance);
    for u in &utterances {
        let mut chosen = sample(&mut lr, spec.listeners, spec.ratings_per_utterance).into_vec();
        chosen.sort_unstable();
        for l in chosen {
            let hit = per_listener[l] / spec.hit_size;
            per_listener[l] += 1;
            let clean = rng(mix_seed(&[spec.seed, 0xc1ea, l as u64, hit as u64]))
                .gen_bool(spec.clean_hit_rate);
            let raw = u.truth + listeners[l].1 + spec.noise * lr.sample::<f64, _>(StandardNormal);
            ratings.push(RatingRecord {
                utterance_id: u.id.clone(),
                system_id: system_id(u.system),
                text_id: text_id(u.text),
                listener_id: format!("lis{l:04}"),
                locale: listeners[l].0.clone(),
                score: raw.round().clamp(1.0, 5.0),
                is_clean: clean,
                hit_id: format!("lis{l:04}-h{hit:03}"),
            });
        }
    }
    Ok(Plan {
        utterances,
        system_offsets,
        ratings,
    })
}

/// The ratings table alone, without synthesizing audio.
pub fn synthetic_ratings(spec: &SyntheticSpec) -> Result<Vec<RatingRecord>> {
    Ok(plan(spec)?.ratings)
}

fn render(p: &PlantedProsody, tilt: f64) -> Result<Waveform> {
    let sr = SAMPLE_RATE as f64;
    let n = p.total_samples();
    let voiced_from = p.phones[0].1;
    let voiced_to = n - p.phones.last().unwrap().1;
    let ramp = RAMP * sr;
    let weights: Vec<f64> = (1..=HARMONICS).map(|k| (k as f64).powf(-tilt)).collect();
    let norm: f64 = weights.iter().sum();
    let mut phase = 0.0;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            phase += 2.0 * PI * p.f0(t) / sr;
            if i < voiced_from || i >= voiced_to {
                return 0.0;
            }
            let edge = ((i - voiced_from) as f64).min((voiced_to - 1 - i) as f64);
            let env = if edge < ramp {
                0.5 - 0.5 * (PI * edge / ramp).cos()
            } else {
                1.0
            };
            let tone: f64 = weights
                .iter()
                .enumerate()
                .map(|(k, w)| w * ((k + 1) as f64 * phase).sin())
                .sum();
            AMPLITUDE * env * tone / norm
        })
        .collect();
    Waveform::new(samples, SAMPLE_RATE)
}

fn gaussian_rows(seed: &[u64], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let mut parts = seed.to_vec();
        parts.push(r as u64);
        let mut g = rng(mix_seed(&parts));
        out.extend((0..cols).map(|_| (g.sample::<f64, _>(StandardNormal) / SQRT_2) as f32));
    }
    out
}

/// Writes the corpus (audio, alignments, POS tags, embeddings, ratings,
/// planted truths and `manifest.json`) into `out` and returns the manifest.
pub fn generate_synthetic(spec: &SyntheticSpec, out: &Path) -> Result<DatasetManifest> {
    let plan = plan(spec)?;
    let phones = Vocabulary::default_phones();
    let tags = Vocabulary::default_tags();
    let lex = lexicon(spec.seed, &phones, &tags);
    for sub in ["wav", "align", "pos", "emb"] {
        let dir = out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let sr = SAMPLE_RATE as f64;

    let entries = plan
        .utterances
        .par_iter()
        .map(|u| -> Result<UtteranceEntry> {
            let tilt = (1.0 - 1.25 * plan.system_offsets[u.system]).clamp(0.2, 2.5);
            let wave = render(&u.prosody, tilt)?;
            let audio = PathBuf::from(format!("wav/{}.wav", u.id));
            write_wav(&out.join(&audio), &wave)?;

            let mut t = 0usize;
            let mut segs = Vec::with_capacity(u.prosody.phones.len());
            for (p, n) in &u.prosody.phones {
                segs.push((p.as_str(), t as f64 / sr, (t + n) as f64 / sr));
                t += n;
            }
            let alignment = PathBuf::from(format!("align/{}.txt", u.id));
            let text = serialize_alignment(&PhonemeAlignment::from_segments(segs, &phones)?);
            write_file(&out.join(&alignment), text.as_bytes())?;

            let pos = PathBuf::from(format!("pos/{}.pos", u.id));
            let tag_line: Vec<&str> = u
                .words
                .iter()
                .map(|&w| tags.symbol(lex[w].tag).unwrap())
                .collect();
            write_file(
                &out.join(&pos),
                format!("{}\n", tag_line.join(" ")).as_bytes(),
            )?;

            let n_words = u.words.len();
            let mut tok = Vec::with_capacity(spec.token_layers * n_words * spec.token_dim);
            for layer in 0..spec.token_layers {
                for &w in &u.words {
                    tok.extend(gaussian_rows(
                        &[spec.seed, 0x70c, w as u64, layer as u64],
                        1,
                        spec.token_dim,
                    ));
                }
            }
            let token_hidden = PathBuf::from(format!("emb/{}.tok.emb", u.id));
            write_embedding(
                &out.join(&token_hidden),
                &EmbeddingArray::new(spec.token_layers, n_words, spec.token_dim, tok)?,
            )?;

            let utt = gaussian_rows(&[spec.seed, 0x077, u.text as u64], 1, spec.utterance_dim);
            let utterance_embedding = PathBuf::from(format!("emb/{}.utt.emb", u.id));
            write_embedding(
                &out.join(&utterance_embedding),
                &EmbeddingArray::new(1, 1, spec.utterance_dim, utt)?,
            )?;

            let phone_ids: Vec<usize> = u
                .words
                .iter()
                .flat_map(|&w| lex[w].phones.iter().copied())
                .collect();
            let mut enc = Vec::with_capacity(phone_ids.len() * spec.encoder_dim);
            for (pos_in_text, &p) in phone_ids.iter().enumerate() {
                enc.extend(gaussian_rows(
                    &[spec.seed, 0xe2c, p as u64, pos_in_text as u64],
                    1,
                    spec.encoder_dim,
                ));
            }
            let encoder_outputs = PathBuf::from(format!("emb/{}.enc.emb", u.id));
            write_embedding(
                &out.join(&encoder_outputs),
                &EmbeddingArray::new(1, phone_ids.len(), spec.encoder_dim, enc)?,
            )?;

            Ok(UtteranceEntry {
                id: u.id.clone(),
                system_id: system_id(u.system),
                text_id: text_id(u.text),
                audio,
                alignment,
                features: [
                    (FeatureFile::PosTags, pos),
                    (FeatureFile::TokenHidden, token_hidden),
                    (FeatureFile::UtteranceEmbedding, utterance_embedding),
                    (FeatureFile::EncoderOutputs, encoder_outputs),
                ]
                .into_iter()
                .collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    write_ratings(&out.join("ratings.csv"), &plan.ratings)?;
    let mut truth = String::from("utterance_id,system_id,quality,truth\n");
    for u in &plan.utterances {
        let _ = writeln!(
            truth,
            "{},{},{},{}",
            u.id,
            system_id(u.system),
            u.quality,
            u.truth
        );
    }
    write_file(&out.join("truth.csv"), truth.as_bytes())?;

    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        sample_rate: SAMPLE_RATE,
        phones,
        linguistic: LinguisticDims {
            tagset: tags,
            token_dim: spec.token_dim,
            utterance_dim: spec.utterance_dim,
            encoder_dim: spec.encoder_dim,
        },
        ratings_file: "ratings.csv".into(),
        utterances: entries,
        ratings: plan.ratings,
    };
    manifest.save()?;
    Ok(manifest)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Planned utterances (prosody, quality, truth) for `spec`.
pub fn plan_utterances(spec: &SyntheticSpec) -> Result<Vec<SyntheticUtterance>> {
    Ok(plan(spec)?.utterances)
}
