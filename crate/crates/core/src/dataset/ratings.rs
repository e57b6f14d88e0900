use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One listener's rating of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub utterance_id: String,
    pub system_id: String,
    pub text_id: String,
    pub listener_id: String,
    pub locale: String,
    pub score: f64,
    #[serde(serialize_with = "bool_as_int", deserialize_with = "int_as_bool")]
    pub is_clean: bool,
    pub hit_id: String,
}

fn bool_as_int<S: serde::Serializer>(v: &bool, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_u8(u8::from(*v))
}

fn int_as_bool<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    let raw = String::deserialize(d)?;
    match raw.trim() {
        "1" | "true" | "True" => Ok(true),
        "0" | "false" | "False" => Ok(false),
        other => Err(serde::de::Error::custom(format!(
            "invalid is_clean value {other:?}"
        ))),
    }
}

impl RatingRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [
            ("utterance_id", &self.utterance_id),
            ("system_id", &self.system_id),
            ("text_id", &self.text_id),
            ("listener_id", &self.listener_id),
            ("hit_id", &self.hit_id),
        ] {
            if v.trim().is_empty() {
                return Err(format!("empty {name}"));
            }
        }
        if !(1.0..=5.0).contains(&self.score) {
            return Err(format!("score {} outside [1, 5]", self.score));
        }
        Ok(())
    }
}

pub fn read_ratings(path: &Path) -> Result<Vec<RatingRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize::<RatingRecord>().enumerate() {
        // Line 1 is the header.
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            detail: format!("{}: {e}", path.display()),
        })?;
        rec.validate().map_err(|detail| Error::Parse {
            line,
            detail: format!("{}: {detail}", path.display()),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_ratings(path: &Path, records: &[RatingRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format("ratings csv", format!("{}: {other:?}", path.display())),
    }
}

/// Mean rating per utterance.
pub fn utterance_truths(records: &[RatingRecord]) -> BTreeMap<String, f64> {
    crate::metrics::system_aggregate(records.iter().map(|r| (r.utterance_id.clone(), r.score)))
}

pub fn utterance_systems(records: &[RatingRecord]) -> BTreeMap<String, String> {
    records
        .iter()
        .map(|r| (r.utterance_id.clone(), r.system_id.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(u: &str, score: f64) -> RatingRecord {
        RatingRecord {
            utterance_id: u.into(),
            system_id: "s".into(),
            text_id: "t".into(),
            listener_id: "l".into(),
            locale: "US".into(),
            score,
            is_clean: true,
            hit_id: "h".into(),
        }
    }

    #[test]
    fn csv_round_trip_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let recs = vec![
            rec("a", 3.0),
            RatingRecord {
                is_clean: false,
                ..rec("b", 4.5)
            },
        ];
        write_ratings(&path, &recs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "utterance_id,system_id,text_id,listener_id,locale,score,is_clean,hit_id\n"
        ));
        assert_eq!(read_ratings(&path).unwrap(), recs);
    }

    #[test]
    fn out_of_range_score_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        std::fs::write(
            &path,
            "utterance_id,system_id,text_id,listener_id,locale,score,is_clean,hit_id\na,s,t,l,US,3,1,h\nb,s,t,l,US,7,1,h\n",
        )
        .unwrap();
        match read_ratings(&path) {
            Err(Error::Parse { line, detail }) => {
                assert_eq!(line, 3);
                assert!(detail.contains("outside"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truths_are_mean_ratings() {
        let t = utterance_truths(&[rec("a", 3.0), rec("a", 4.0), rec("b", 2.0)]);
        assert_eq!(t["a"], 3.5);
        assert_eq!(t["b"], 2.0);
    }
}
