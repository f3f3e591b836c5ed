//! Items, users, logged samples and the line-delimited JSON dataset format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContentType {
    Text,
    Image,
    Video,
}

impl ContentType {
    pub const ALL: [ContentType; 3] = [ContentType::Text, ContentType::Image, ContentType::Video];

    pub fn index(self) -> usize {
        match self {
            ContentType::Text => 0,
            ContentType::Image => 1,
            ContentType::Video => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: u64,
    pub seller: u32,
    pub category: u32,
    pub ctype: ContentType,
    pub prio: u32,
    pub cold: bool,
    pub new: bool,
    pub ctr: f64,
    pub features: Vec<f64>,
}

/// Item attribute that defines a grouping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupField {
    Seller,
    Category,
    Ctype,
    Prio,
    Cold,
    New,
}

impl Item {
    /// Group label of this item under `field`; flags map to 0/1.
    pub fn group(&self, field: GroupField) -> i64 {
        match field {
            GroupField::Seller => i64::from(self.seller),
            GroupField::Category => i64::from(self.category),
            GroupField::Ctype => self.ctype.index() as i64,
            GroupField::Prio => i64::from(self.prio),
            GroupField::Cold => i64::from(self.cold),
            GroupField::New => i64::from(self.new),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub id: u64,
    pub features: Vec<f64>,
}

/// One logged impression: the candidate set, the list that was shown and
/// per-position `[exposed, clicked]` flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogSample {
    pub user: UserProfile,
    pub candidates: Vec<Item>,
    pub exposure: Vec<u64>,
    pub engagement: Vec<[u8; 2]>,
}

impl LogSample {
    /// Candidate indices of the exposure list.
    pub fn exposure_indices(&self) -> Result<Vec<usize>> {
        self.exposure
            .iter()
            .map(|id| {
                self.candidates
                    .iter()
                    .position(|c| c.id == *id)
                    .ok_or_else(|| crate::Error::Invalid(format!("exposed id {id} is not a candidate")))
            })
            .collect()
    }

    pub fn clicks(&self) -> Vec<f64> {
        self.engagement.iter().map(|e| f64::from(e[1])).collect()
    }

    /// Checks the structural invariants of a sample.
    pub fn validate(&self) -> Result<()> {
        let idx = self.exposure_indices()?;
        let mut seen = idx.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != idx.len() {
            return invalid("exposure list repeats an item");
        }
        if self.engagement.len() != self.exposure.len() {
            return invalid("engagement rows do not match exposure length");
        }
        let mut ids: Vec<u64> = self.candidates.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.candidates.len() {
            return invalid("candidate ids are not distinct");
        }
        Ok(())
    }
}

pub fn write_jsonl(path: &Path, samples: &[LogSample]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<LogSample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: LogSample = serde_json::from_str(&line)
            .map_err(|e| crate::Error::Invalid(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        out.push(sample);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn item(id: u64) -> Item {
        Item {
            id,
            seller: 1,
            category: 2,
            ctype: ContentType::Video,
            prio: 0,
            cold: true,
            new: false,
            ctr: 0.25,
            features: vec![0.5, -1.0],
        }
    }

    #[test]
    fn sample_serializes_with_the_documented_keys() {
        let s = LogSample {
            user: UserProfile { id: 3, features: vec![1.0] },
            candidates: vec![item(9)],
            exposure: vec![9],
            engagement: vec![[1, 0]],
        };
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(
            text,
            r#"{"user":{"id":3,"features":[1.0]},"candidates":[{"id":9,"seller":1,"category":2,"ctype":"video","prio":0,"cold":true,"new":false,"ctr":0.25,"features":[0.5,-1.0]}],"exposure":[9],"engagement":[[1,0]]}"#
        );
        let back: LogSample = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn validate_rejects_foreign_and_repeated_exposures() {
        let mut s = LogSample {
            user: UserProfile { id: 0, features: vec![] },
            candidates: vec![item(1), item(2)],
            exposure: vec![1, 2],
            engagement: vec![[1, 0], [1, 1]],
        };
        assert!(s.validate().is_ok());
        s.exposure = vec![1, 1];
        assert!(s.validate().is_err());
        s.exposure = vec![1, 7];
        assert!(s.validate().is_err());
    }

    #[test]
    fn group_labels() {
        let it = item(1);
        assert_eq!(it.group(GroupField::Cold), 1);
        assert_eq!(it.group(GroupField::New), 0);
        assert_eq!(it.group(GroupField::Ctype), 2);
        assert_eq!(it.group(GroupField::Category), 2);
    }
}
