use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// person_id of images without identity labels (target domain).
pub const UNLABELED: i64 = -1;

pub const MANIFEST_HEADER: [&str; 7] = [
    "image_id",
    "person_id",
    "camera_id",
    "split",
    "feature",
    "keypoints",
    "labelmap",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "gallery" => Ok(Split::Gallery),
            other => Err(Error::Parse(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_id: String,
    pub person_id: i64,
    pub camera_id: i64,
    pub split: Split,
    pub feature: Option<String>,
    pub keypoints: Option<String>,
    pub labelmap: Option<String>,
}

impl ManifestEntry {
    pub fn is_labeled(&self) -> bool {
        self.person_id != UNLABELED
    }
}

fn cell(s: &str) -> Option<&str> {
    let t = s.trim();
    (!t.is_empty()).then_some(t)
}

fn parse_int(s: &str, what: &str, row: usize) -> Result<i64> {
    s.parse()
        .map_err(|_| Error::Parse(format!("row {row}: bad {what} {s:?}")))
}

pub fn load_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != MANIFEST_HEADER {
        return Err(Error::Parse(format!(
            "manifest header {:?}, expected {:?}",
            names, MANIFEST_HEADER
        )));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let image_id = cell(&rec[0])
            .ok_or_else(|| Error::Parse(format!("row {row}: empty image_id")))?
            .to_string();
        let split: Split = cell(&rec[3])
            .ok_or_else(|| Error::Parse(format!("row {row}: empty split")))?
            .parse()?;
        let person = cell(&rec[1])
            .map(|s| parse_int(s, "person_id", row))
            .transpose()?;
        let camera = cell(&rec[2])
            .map(|s| parse_int(s, "camera_id", row))
            .transpose()?;
        if split != Split::Train {
            if person.is_none() {
                return Err(Error::MissingField {
                    image_id,
                    split: split.to_string(),
                    field: "person_id",
                });
            }
            if camera.is_none() {
                return Err(Error::MissingField {
                    image_id,
                    split: split.to_string(),
                    field: "camera_id",
                });
            }
        }
        if !seen.insert(image_id.clone()) {
            return Err(Error::DuplicateImageId(image_id));
        }
        out.push(ManifestEntry {
            image_id,
            person_id: person.unwrap_or(UNLABELED),
            camera_id: camera.unwrap_or(-1),
            split,
            feature: cell(&rec[4]).map(str::to_string),
            keypoints: cell(&rec[5]).map(str::to_string),
            labelmap: cell(&rec[6]).map(str::to_string),
        });
    }
    Ok(out)
}

/// Writes entries in manifest CSV form. UNLABELED ids are written as empty cells.
pub fn write_manifest(entries: &[ManifestEntry]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(MANIFEST_HEADER)?;
    for e in entries {
        let person = if e.split == Split::Train && e.person_id == UNLABELED {
            String::new()
        } else {
            e.person_id.to_string()
        };
        let camera = if e.split == Split::Train && e.camera_id == -1 {
            String::new()
        } else {
            e.camera_id.to_string()
        };
        w.write_record([
            e.image_id.as_str(),
            &person,
            &camera,
            &e.split.to_string(),
            e.feature.as_deref().unwrap_or(""),
            e.keypoints.as_deref().unwrap_or(""),
            e.labelmap.as_deref().unwrap_or(""),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "image_id,person_id,camera_id,split,feature,keypoints,labelmap\n";

    #[test]
    fn query_without_person_id_rejected() {
        let text = format!("{HEADER}q1,,3,query,f.etns,,\n");
        assert!(matches!(
            load_manifest(&text),
            Err(Error::MissingField {
                field: "person_id",
                ..
            })
        ));
        let text = format!("{HEADER}q1,4,,gallery,f.etns,,\n");
        assert!(matches!(
            load_manifest(&text),
            Err(Error::MissingField {
                field: "camera_id",
                ..
            })
        ));
    }

    #[test]
    fn two_rows_keep_order() {
        let text = format!("{HEADER}b,7,1,query,b.etns,kp.jsonl,\na,,,train,a.etns,,a_lbl.etns\n");
        let m = load_manifest(&text).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].image_id, "b");
        assert_eq!(m[0].person_id, 7);
        assert_eq!(m[0].keypoints.as_deref(), Some("kp.jsonl"));
        assert_eq!(m[1].person_id, UNLABELED);
        assert!(!m[1].is_labeled());
        assert_eq!(m[1].labelmap.as_deref(), Some("a_lbl.etns"));
    }

    #[test]
    fn malformed_input_rejected() {
        assert!(matches!(
            load_manifest("id,pid\nx,1\n"),
            Err(Error::Parse(_))
        ));
        let text = format!("{HEADER}a,1,1,query,,,\na,1,2,gallery,,,\n");
        assert!(matches!(
            load_manifest(&text),
            Err(Error::DuplicateImageId(_))
        ));
        let text = format!("{HEADER}a,x,1,query,,,\n");
        assert!(matches!(load_manifest(&text), Err(Error::Parse(_))));
        let text = format!("{HEADER}a,1,1,test,,,\n");
        assert!(matches!(load_manifest(&text), Err(Error::Parse(_))));
    }

    fn arb_entry() -> impl Strategy<Value = ManifestEntry> {
        (
            0usize..3,
            -1i64..50,
            -1i64..6,
            proptest::option::of("[a-z0-9_/.]{1,12}"),
            proptest::option::of("[a-z0-9_/.]{1,12}"),
            proptest::option::of("[a-z0-9_/.]{1,12}"),
        )
            .prop_map(|(s, pid, cam, f, k, l)| ManifestEntry {
                image_id: String::new(),
                person_id: pid,
                camera_id: cam,
                split: [Split::Train, Split::Query, Split::Gallery][s],
                feature: f,
                keypoints: k,
                labelmap: l,
            })
    }

    proptest! {
        #[test]
        fn manifest_round_trips(mut entries in proptest::collection::vec(arb_entry(), 0..8)) {
            for (i, e) in entries.iter_mut().enumerate() {
                e.image_id = format!("img{i}");
            }
            let text = write_manifest(&entries).unwrap();
            prop_assert_eq!(load_manifest(&text).unwrap(), entries);
        }
    }
}
