use serde::{Deserialize, Serialize};

use super::Vocabulary;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub phone: String,
    pub phone_id: usize,
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    /// Half-open membership test `start <= t < end`.
    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }
}

/// Sorted, non-overlapping phone segments in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhonemeAlignment {
    segments: Vec<Segment>,
}

impl PhonemeAlignment {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.segments.first().map_or(0.0, |s| s.start)
    }

    pub fn end(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.end)
    }

    /// Builds an alignment from `(phone, start, end)` triples, applying the
    /// same validation as [`parse_alignment`].
    pub fn from_segments<'a>(
        items: impl IntoIterator<Item = (&'a str, f64, f64)>,
        inventory: &Vocabulary,
    ) -> Result<Self> {
        let mut segments: Vec<Segment> = Vec::new();
        for (line, (phone, start, end)) in items.into_iter().enumerate() {
            let err = |detail: String| Error::Parse {
                line: line + 1,
                detail,
            };
            if !start.is_finite() || !end.is_finite() || start < 0.0 {
                return Err(err(format!("invalid start time {start}")));
            }
            if end <= start {
                return Err(err(format!("end {end} is not after start {start}")));
            }
            if let Some(prev) = segments.last() {
                if start < prev.end {
                    return Err(err(format!(
                        "segment starting at {start} overlaps previous ending at {}",
                        prev.end
                    )));
                }
            }
            let phone_id = inventory
                .id(phone)
                .ok_or_else(|| err(format!("unknown phone {phone}")))?;
            segments.push(Segment {
                phone: phone.to_string(),
                phone_id,
                start,
                end,
            });
        }
        if segments.is_empty() {
            return Err(Error::Parse {
                line: 0,
                detail: "alignment has no segments".into(),
            });
        }
        Ok(PhonemeAlignment { segments })
    }
}

/// Parses `start end phone` lines; blank lines are skipped.
pub fn parse_alignment(text: &str, inventory: &Vocabulary) -> Result<PhonemeAlignment> {
    let mut items = Vec::new();
    let mut line_numbers = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let err = |detail: String| Error::Parse {
            line: n + 1,
            detail,
        };
        if fields.len() != 3 {
            return Err(err(format!(
                "expected `start end phone`, found {} fields",
                fields.len()
            )));
        }
        let time = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| err(format!("bad time {s:?}: {e}")))
        };
        items.push((fields[2], time(fields[0])?, time(fields[1])?));
        line_numbers.push(n + 1);
    }
    PhonemeAlignment::from_segments(items, inventory).map_err(|e| match e {
        Error::Parse { line, detail } if line > 0 => Error::Parse {
            line: line_numbers[line - 1],
            detail,
        },
        other => other,
    })
}

pub fn serialize_alignment(alignment: &PhonemeAlignment) -> String {
    alignment
        .segments
        .iter()
        .map(|s| format!("{} {} {}\n", s.start, s.end, s.phone))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn phones() -> Vocabulary {
        Vocabulary::default_phones()
    }

    #[test]
    fn parses_two_segments() {
        let a = parse_alignment("0.0 0.1 AH\n0.1 0.3 T", &phones()).unwrap();
        assert_eq!(a.len(), 2);
        assert!((a.segments()[0].duration() - 0.1).abs() < 1e-12);
        assert!((a.segments()[1].duration() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn overlap_reports_line_two() {
        match parse_alignment("0.0 0.2 AH\n0.1 0.3 T\n", &phones()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn line_numbers_count_blank_lines() {
        match parse_alignment("0.0 0.2 AH\n\n0.2 0.3 QQ\n", &phones()) {
            Err(Error::Parse { line, detail }) => {
                assert_eq!(line, 3);
                assert!(detail.contains("QQ"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_negative_and_empty_segments() {
        assert!(parse_alignment("-0.1 0.2 AH", &phones()).is_err());
        assert!(parse_alignment("0.2 0.2 AH", &phones()).is_err());
        assert!(parse_alignment("0.2 AH", &phones()).is_err());
        assert!(parse_alignment("\n\n", &phones()).is_err());
    }

    #[test]
    fn fuzzed_alignment_round_trips() {
        let inv = phones();
        for seed in 0..20 {
            let mut rng = crate::util::rng(seed);
            let mut t = rng.gen_range(0.0..0.2);
            let mut items = Vec::new();
            for _ in 0..50 {
                let end = t + rng.gen_range(0.01..0.3);
                let phone = inv.symbol(rng.gen_range(0..inv.len())).unwrap();
                items.push((phone, t, end));
                t = if rng.gen_bool(0.2) {
                    end + rng.gen_range(0.0..0.05)
                } else {
                    end
                };
            }
            let a = PhonemeAlignment::from_segments(items, &inv).unwrap();
            let text = serialize_alignment(&a);
            let b = parse_alignment(&text, &inv).unwrap();
            assert_eq!(a, b);
            assert_eq!(serialize_alignment(&b), text);
        }
    }
}
