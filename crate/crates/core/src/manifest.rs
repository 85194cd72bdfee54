//! JSON dataset manifest and the in-memory dataset it describes.
//!
//! A manifest lives next to its data. Paths inside it are relative to the
//! manifest's directory; each sample `stem` resolves to
//! `<stem>.motion.mimt`, `<stem>.wav` and (when `has_script`)
//! `<stem>.script.json`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{check_durations, ContentScript, MotionSequence, Sample, TemplateMesh};
use crate::error::{Error, Result};
use crate::wav;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    TestSeen,
    TestUnseen,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::TestSeen => "test_seen",
            Split::TestUnseen => "test_unseen",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test_seen" => Ok(Split::TestSeen),
            "test_unseen" => Ok(Split::TestUnseen),
            other => Err(Error::Config(format!(
                "unknown split {other:?} (expected train, test_seen or test_unseen)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identity {
    pub id: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub stem: String,
    pub identity_id: usize,
    pub split: Split,
    pub duration: f64,
    #[serde(default)]
    pub has_script: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub motion_rate: f64,
    pub audio_rate: u32,
    pub template: String,
    pub lip_mask: String,
    /// Upper/lower lip vertex pair used for lip-distance curves.
    #[serde(default)]
    pub lip_pair: Option<[usize; 2]>,
    /// Number of content tokens when scripts are present.
    #[serde(default)]
    pub tokens: Option<usize>,
    pub identities: Vec<Identity>,
    pub samples: Vec<SampleEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn identity_count(&self) -> usize {
        self.identities.len()
    }

    pub fn motion_path(&self, entry: &SampleEntry) -> PathBuf {
        self.root.join(format!("{}.motion.mimt", entry.stem))
    }

    pub fn audio_path(&self, entry: &SampleEntry) -> PathBuf {
        self.root.join(format!("{}.wav", entry.stem))
    }

    pub fn script_path(&self, entry: &SampleEntry) -> PathBuf {
        self.root.join(format!("{}.script.json", entry.stem))
    }

    pub fn template_path(&self) -> PathBuf {
        self.root.join(&self.template)
    }

    pub fn lip_mask_path(&self) -> PathBuf {
        self.root.join(&self.lip_mask)
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = (usize, &SampleEntry)> {
        self.samples
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.split == split)
    }

    /// Identity ids appearing in `split`, ascending.
    pub fn split_identities(&self, split: Split) -> Vec<usize> {
        self.entries(split)
            .map(|(_, e)| e.identity_id)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Parses the manifest text and checks everything that does not need the filesystem.
    pub fn from_json(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut manifest: DatasetManifest =
            serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        manifest.root = root.into();
        manifest.validate_structure()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    fn validate_structure(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        if !(self.motion_rate > 0.0) || self.audio_rate == 0 {
            return Err(Error::Manifest("motion and audio rates must be positive".into()));
        }
        for (i, ident) in self.identities.iter().enumerate() {
            if ident.id != i {
                return Err(Error::Manifest(format!(
                    "identity ids must be 0..N in order; entry {i} has id {}",
                    ident.id
                )));
            }
        }
        let n = self.identities.len();
        let mut stems: HashMap<&str, Split> = HashMap::new();
        for entry in &self.samples {
            if entry.identity_id >= n {
                return Err(Error::Range(format!(
                    "sample {} has identity_id {} outside [0, {n})",
                    entry.stem, entry.identity_id
                )));
            }
            if entry.stem.is_empty() || Path::new(&entry.stem).is_absolute() || entry.stem.contains("..") {
                return Err(Error::Manifest(format!("invalid sample stem {:?}", entry.stem)));
            }
            if let Some(prev) = stems.insert(&entry.stem, entry.split) {
                return Err(Error::Manifest(format!(
                    "overlapping splits: sample {} listed in both {prev} and {}",
                    entry.stem, entry.split
                )));
            }
        }
        let train = self.split_identities(Split::Train);
        for id in self.split_identities(Split::TestUnseen) {
            if train.binary_search(&id).is_ok() {
                return Err(Error::Manifest(format!(
                    "overlapping splits: identity {id} is in both train and test_unseen"
                )));
            }
        }
        Ok(())
    }

    fn load_entry(&self, entry: &SampleEntry, template: &TemplateMesh) -> Result<Sample> {
        let motion = MotionSequence::load(&self.motion_path(entry), self.motion_rate)?;
        if motion.vertex_count() != template.vertex_count() {
            return Err(Error::Shape(format!(
                "{}: {} vertices but the template has {}",
                self.motion_path(entry).display(),
                motion.vertex_count(),
                template.vertex_count()
            )));
        }
        let waveform = wav::read_wav(self.audio_path(entry))?;
        if waveform.sample_rate != self.audio_rate {
            return Err(Error::Manifest(format!(
                "{}: sample rate {} differs from manifest rate {}",
                self.audio_path(entry).display(),
                waveform.sample_rate,
                self.audio_rate
            )));
        }
        check_durations(&motion, &waveform)
            .map_err(|e| Error::Manifest(format!("sample {}: {e}", entry.stem)))?;
        if (motion.duration() - entry.duration).abs() > 1.0 / self.motion_rate {
            return Err(Error::Manifest(format!(
                "sample {}: manifest duration {} but motion lasts {}",
                entry.stem,
                entry.duration,
                motion.duration()
            )));
        }
        let script = if entry.has_script {
            let path = self.script_path(entry);
            let script = ContentScript::load(&path)?;
            script
                .validate(motion.len(), self.tokens)
                .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
            Some(script)
        } else {
            None
        };
        Sample::new(entry.identity_id, motion, waveform, script)
    }
}

/// Reads and fully validates a manifest, including every referenced file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    Ok(Dataset::open(path)?.manifest)
}

/// A validated manifest with every sample resident in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub template: TemplateMesh,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = DatasetManifest::from_json(&text, root)?;
        let template = TemplateMesh::load(&manifest.template_path(), &manifest.lip_mask_path())?;
        if let Some([a, b]) = manifest.lip_pair {
            if template.lip_mask.binary_search(&a).is_err() || template.lip_mask.binary_search(&b).is_err() {
                return Err(Error::Manifest(format!("lip pair ({a}, {b}) is not inside the lip mask")));
            }
        }
        let samples = manifest
            .samples
            .iter()
            .map(|entry| manifest.load_entry(entry, &template))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            manifest,
            template,
            samples,
        })
    }

    pub fn split(&self, split: Split) -> Vec<(usize, &Sample)> {
        self.manifest
            .entries(split)
            .map(|(i, _)| (i, &self.samples[i]))
            .collect()
    }

    pub fn identity_count(&self) -> usize {
        self.manifest.identity_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text(samples: &str) -> String {
        format!(
            r#"{{"version":1,"motion_rate":25.0,"audio_rate":1600,"template":"t.mimt","lip_mask":"l.mimt",
            "identities":[{{"id":0,"name":"a"}},{{"id":1,"name":"b"}}],"samples":[{samples}]}}"#
        )
    }

    #[test]
    fn structure_ok() {
        let m = DatasetManifest::from_json(
            &text(r#"{"stem":"a0","identity_id":0,"split":"train","duration":6.0},
                     {"stem":"b0","identity_id":1,"split":"train","duration":6.0},
                     {"stem":"a1","identity_id":0,"split":"test_seen","duration":6.0},
                     {"stem":"b1","identity_id":1,"split":"test_seen","duration":6.0}"#),
            "/tmp",
        )
        .unwrap();
        assert_eq!(m.identity_count(), 2);
        assert_eq!(m.entries(Split::TestSeen).count(), 2);
    }

    #[test]
    fn identity_out_of_range() {
        let err = DatasetManifest::from_json(
            &text(r#"{"stem":"a0","identity_id":2,"split":"train","duration":6.0}"#),
            "/tmp",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Range(_)), "{err}");
    }

    #[test]
    fn overlapping_splits() {
        let err = DatasetManifest::from_json(
            &text(r#"{"stem":"a0","identity_id":0,"split":"train","duration":6.0},
                     {"stem":"a0","identity_id":0,"split":"test_seen","duration":6.0}"#),
            "/tmp",
        )
        .unwrap_err();
        assert!(err.to_string().contains("overlapping"), "{err}");

        let err = DatasetManifest::from_json(
            &text(r#"{"stem":"a0","identity_id":0,"split":"train","duration":6.0},
                     {"stem":"a1","identity_id":0,"split":"test_unseen","duration":6.0}"#),
            "/tmp",
        )
        .unwrap_err();
        assert!(err.to_string().contains("overlapping"), "{err}");
    }

    #[test]
    fn split_names_roundtrip() {
        for s in [Split::Train, Split::TestSeen, Split::TestUnseen] {
            assert_eq!(s.to_string().parse::<Split>().unwrap(), s);
        }
        assert!("dev".parse::<Split>().is_err());
    }
}
