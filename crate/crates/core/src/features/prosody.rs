use serde::{Deserialize, Serialize};

use super::PhonemeAlignment;
use crate::error::{Error, Result};
use crate::signal::{ContourState, FrameGrid, PitchTrack};

const STD_FLOOR: f64 = 1e-8;

/// One entry per phone: inventory id, mean F0 and duration. Values are in
/// Hz and seconds until [`ZNormStats::normalize`] is applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProsodicSequence {
    pub phone_ids: Vec<usize>,
    pub f0: Vec<f64>,
    pub duration: Vec<f64>,
    pub normalized: bool,
}

impl ProsodicSequence {
    pub fn len(&self) -> usize {
        self.phone_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phone_ids.is_empty()
    }
}

/// Phone-level values repeated over each phone's frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameAlignedProsodic {
    pub phone_ids: Vec<usize>,
    pub f0: Vec<f64>,
    pub duration: Vec<f64>,
    /// Index of the phone each frame was taken from.
    pub source: Vec<usize>,
}

impl FrameAlignedProsodic {
    pub fn len(&self) -> usize {
        self.phone_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phone_ids.is_empty()
    }
}

/// Mean F0 over the frames whose centre lies in each phone's `[start, end)`.
pub fn phoneme_prosodic_features(
    track: &PitchTrack,
    alignment: &PhonemeAlignment,
) -> Result<ProsodicSequence> {
    if track.state == ContourState::AllUnvoiced {
        return Err(Error::InvalidArgument(
            "pitch track has no voiced frame".into(),
        ));
    }
    let grid = &track.grid;
    let mut out = ProsodicSequence {
        phone_ids: Vec::with_capacity(alignment.len()),
        f0: Vec::with_capacity(alignment.len()),
        duration: Vec::with_capacity(alignment.len()),
        normalized: false,
    };
    let mut frame = 0;
    for seg in alignment.segments() {
        while frame < track.len() && grid.center_time(frame) < seg.start {
            frame += 1;
        }
        let (mut sum, mut count) = (0.0, 0usize);
        while frame < track.len() && seg.contains(grid.center_time(frame)) {
            sum += track.f0[frame];
            count += 1;
            frame += 1;
        }
        if count == 0 {
            return Err(Error::InvalidArgument(format!(
                "phone {} at [{}, {}) covers no frame centre (hop {} samples)",
                seg.phone, seg.start, seg.end, grid.hop
            )));
        }
        out.phone_ids.push(seg.phone_id);
        out.f0.push(sum / count as f64);
        out.duration.push(seg.duration());
    }
    Ok(out)
}

/// Corpus statistics of log-F0 and duration over phones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZNormStats {
    pub log_f0_mean: f64,
    pub log_f0_std: f64,
    pub duration_mean: f64,
    pub duration_std: f64,
}

impl ZNormStats {
    pub fn fit<'a>(sequences: impl IntoIterator<Item = &'a ProsodicSequence>) -> Result<Self> {
        let (mut lf, mut du) = (Vec::new(), Vec::new());
        for s in sequences {
            if s.normalized {
                return Err(Error::InvalidArgument(
                    "statistics need raw prosodic values".into(),
                ));
            }
            for (&f, &d) in s.f0.iter().zip(&s.duration) {
                if f <= 0.0 {
                    return Err(Error::InvalidArgument(format!("non-positive F0 {f}")));
                }
                lf.push(f.ln());
                du.push(d);
            }
        }
        if lf.is_empty() {
            return Err(Error::InvalidArgument(
                "no phones to compute statistics from".into(),
            ));
        }
        let (lm, ls) = mean_std(&lf);
        let (dm, ds) = mean_std(&du);
        Ok(ZNormStats {
            log_f0_mean: lm,
            log_f0_std: ls.max(STD_FLOOR),
            duration_mean: dm,
            duration_std: ds.max(STD_FLOOR),
        })
    }

    pub fn normalize(&self, seq: &ProsodicSequence) -> Result<ProsodicSequence> {
        if seq.normalized {
            return Err(Error::InvalidArgument(
                "sequence is already normalized".into(),
            ));
        }
        if let Some(f) = seq.f0.iter().find(|f| **f <= 0.0) {
            return Err(Error::InvalidArgument(format!("non-positive F0 {f}")));
        }
        Ok(ProsodicSequence {
            phone_ids: seq.phone_ids.clone(),
            f0: seq
                .f0
                .iter()
                .map(|f| (f.ln() - self.log_f0_mean) / self.log_f0_std)
                .collect(),
            duration: seq
                .duration
                .iter()
                .map(|d| (d - self.duration_mean) / self.duration_std)
                .collect(),
            normalized: true,
        })
    }
}

/// Population mean and standard deviation, accumulated relative to the
/// first value so that constant inputs give exactly zero spread.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let shift = xs[0];
    let n = xs.len() as f64;
    let d: Vec<f64> = xs.iter().map(|x| x - shift).collect();
    let dm = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - dm).powi(2)).sum::<f64>() / n;
    (shift + dm, var.sqrt())
}

/// Gives every frame the values of the phone containing its centre. Frames
/// in a gap take the following phone, frames past the end take the last.
pub fn align_to_frames(
    seq: &ProsodicSequence,
    alignment: &PhonemeAlignment,
    grid: &FrameGrid,
) -> Result<FrameAlignedProsodic> {
    if seq.len() != alignment.len() {
        return Err(Error::shape(
            "align_to_frames",
            format!(
                "{} prosodic entries for {} phones",
                seq.len(),
                alignment.len()
            ),
        ));
    }
    let span = alignment.end() * grid.sample_rate as f64 - grid.first_center as f64;
    let implied = (span / grid.hop as f64).ceil().max(0.0) as usize;
    if implied.abs_diff(grid.n_frames) > 1 {
        return Err(Error::shape(
            "align_to_frames",
            format!(
                "alignment implies {implied} frames but the spectrogram has {}",
                grid.n_frames
            ),
        ));
    }
    let segs = alignment.segments();
    let mut out = FrameAlignedProsodic {
        phone_ids: Vec::with_capacity(grid.n_frames),
        f0: Vec::with_capacity(grid.n_frames),
        duration: Vec::with_capacity(grid.n_frames),
        source: Vec::with_capacity(grid.n_frames),
    };
    let mut p = 0;
    for i in 0..grid.n_frames {
        let t = grid.center_time(i);
        while p + 1 < segs.len() && segs[p].end <= t {
            p += 1;
        }
        out.phone_ids.push(seq.phone_ids[p]);
        out.f0.push(seq.f0[p]);
        out.duration.push(seq.duration[p]);
        out.source.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Vocabulary;
    use proptest::prelude::*;

    const SR: u32 = 16_000;

    fn grid(n: usize) -> FrameGrid {
        FrameGrid {
            sample_rate: SR,
            hop: 160,
            first_center: 0,
            n_frames: n,
        }
    }

    fn smoothed(f0: Vec<f64>) -> PitchTrack {
        let n = f0.len();
        PitchTrack {
            voiced: vec![true; n],
            f0,
            grid: grid(n),
            state: ContourState::Smoothed,
        }
    }

    fn align(items: &[(&str, f64, f64)]) -> PhonemeAlignment {
        PhonemeAlignment::from_segments(items.iter().copied(), &Vocabulary::default_phones())
            .unwrap()
    }

    #[test]
    fn constant_track_mean_and_duration() {
        let t = smoothed(vec![100.0; 40]);
        let p = phoneme_prosodic_features(&t, &align(&[("AH", 0.1, 0.3)])).unwrap();
        assert_eq!(p.f0, vec![100.0]);
        assert!((p.duration[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn ramp_mean_matches_direct_average() {
        let n = 50;
        let t = smoothed(
            (0..n)
                .map(|i| 100.0 + 100.0 * i as f64 / (n - 1) as f64)
                .collect(),
        );
        let a = align(&[("SIL", 0.0, 0.05), ("AA", 0.05, 0.26), ("SIL", 0.26, 0.5)]);
        let p = phoneme_prosodic_features(&t, &a).unwrap();
        let covered: Vec<f64> = (0..n)
            .filter(|&i| a.segments()[1].contains(t.grid.center_time(i)))
            .map(|i| t.f0[i])
            .collect();
        let oracle = covered.iter().sum::<f64>() / covered.len() as f64;
        assert!((p.f0[1] - oracle).abs() < 1e-12);
    }

    #[test]
    fn phone_between_frame_centres_is_an_error() {
        let t = smoothed(vec![100.0; 20]);
        let err = phoneme_prosodic_features(&t, &align(&[("AH", 0.0, 0.011), ("T", 0.011, 0.019)]))
            .unwrap_err();
        assert!(err.to_string().contains("covers no frame"));
    }

    #[test]
    fn identical_corpus_normalizes_to_zero() {
        let s = ProsodicSequence {
            phone_ids: vec![1, 2],
            f0: vec![120.0, 120.0],
            duration: vec![0.1, 0.1],
            normalized: false,
        };
        let stats = ZNormStats::fit([&s, &s, &s]).unwrap();
        let z = stats.normalize(&s).unwrap();
        assert!(z.f0.iter().chain(&z.duration).all(|&v| v == 0.0));
    }

    #[test]
    fn frames_follow_phone_spans() {
        let seq = ProsodicSequence {
            phone_ids: vec![3, 4],
            f0: vec![1.0, 2.0],
            duration: vec![0.02, 0.03],
            normalized: false,
        };
        let f = align_to_frames(
            &seq,
            &align(&[("AH", 0.0, 0.02), ("T", 0.02, 0.05)]),
            &grid(5),
        )
        .unwrap();
        assert_eq!(f.f0, vec![1.0, 1.0, 2.0, 2.0, 2.0]);
        assert_eq!(f.phone_ids, vec![3, 3, 4, 4, 4]);
    }

    #[test]
    fn boundary_on_centre_goes_to_later_phone() {
        let seq = ProsodicSequence {
            phone_ids: vec![1, 2],
            f0: vec![1.0, 2.0],
            duration: vec![0.01, 0.01],
            normalized: false,
        };
        // Frame 1 is centred at exactly 0.01 s.
        let f = align_to_frames(
            &seq,
            &align(&[("AH", 0.0, 0.01), ("T", 0.01, 0.02)]),
            &grid(2),
        )
        .unwrap();
        assert_eq!(f.source, vec![0, 1]);
    }

    #[test]
    fn frame_count_mismatch_is_rejected() {
        let seq = ProsodicSequence {
            phone_ids: vec![1],
            f0: vec![1.0],
            duration: vec![0.1],
            normalized: false,
        };
        let a = align(&[("AH", 0.0, 0.1)]);
        assert!(align_to_frames(&seq, &a, &grid(10)).is_ok());
        assert!(align_to_frames(&seq, &a, &grid(11)).is_ok());
        assert!(align_to_frames(&seq, &a, &grid(12)).is_err());
        assert!(align_to_frames(&seq, &a, &grid(8)).is_err());
    }

    fn random_alignment(durs: &[u32]) -> PhonemeAlignment {
        let inv = Vocabulary::default_phones();
        let mut t = 0.0;
        let mut items = Vec::new();
        for (i, &d) in durs.iter().enumerate() {
            let end = t + d as f64 / 1000.0;
            items.push((inv.symbol(1 + i % 39).unwrap(), t, end));
            t = end;
        }
        PhonemeAlignment::from_segments(items, &inv).unwrap()
    }

    proptest! {
        #[test]
        fn frame_lookup_matches_brute_force(durs in proptest::collection::vec(11u32..200, 1..30)) {
            let a = random_alignment(&durs);
            let n = ((a.end() * SR as f64) / 160.0).ceil() as usize;
            let seq = ProsodicSequence {
                phone_ids: a.segments().iter().map(|s| s.phone_id).collect(),
                f0: (0..a.len()).map(|i| 100.0 + i as f64).collect(),
                duration: a.segments().iter().map(|s| s.duration()).collect(),
                normalized: false,
            };
            let g = grid(n);
            let f = align_to_frames(&seq, &a, &g).unwrap();
            for i in 0..n {
                let t = g.center_time(i);
                let expect = a.segments().iter().position(|s| s.contains(t)).unwrap_or(a.len() - 1);
                prop_assert_eq!(f.source[i], expect);
            }
        }

        #[test]
        fn grouping_frames_recovers_phones(durs in proptest::collection::vec(11u32..200, 1..30)) {
            let a = random_alignment(&durs);
            let n = ((a.end() * SR as f64) / 160.0).ceil() as usize;
            let t = smoothed((0..n).map(|i| 80.0 + (i as f64 * 0.37).sin().abs() * 100.0).collect());
            let seq = phoneme_prosodic_features(&t, &a).unwrap();
            let f = align_to_frames(&seq, &a, &t.grid).unwrap();
            let mut recovered = ProsodicSequence { phone_ids: vec![], f0: vec![], duration: vec![], normalized: false };
            for i in 0..f.len() {
                if i == 0 || f.source[i] != f.source[i - 1] {
                    recovered.phone_ids.push(f.phone_ids[i]);
                    recovered.f0.push(f.f0[i]);
                    recovered.duration.push(f.duration[i]);
                }
            }
            prop_assert_eq!(recovered, seq.clone());
            let total: f64 = seq.duration.iter().sum();
            prop_assert!((total - (a.end() - a.start())).abs() < 1e-9);
        }
    }
}
