use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_sequence, Scene};
use crate::error::{Error, Result};
use crate::frame::{ChannelTag, VideoSequence};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// `manifest.json`: the sequences of a dataset and where each channel lives.
///
/// Channel paths are resolved relative to the directory holding the
/// manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub sequence_id: String,
    pub channels: BTreeMap<ChannelTag, PathBuf>,
    pub fps: f64,
    pub length: usize,
}

impl ManifestEntry {
    /// Clean fluorescence plus a reference video.
    pub fn is_simulation_ready(&self) -> bool {
        self.channels.contains_key(&ChannelTag::FluorescenceClean)
            && self.channels.contains_key(&ChannelTag::Reference)
    }
}

impl DatasetManifest {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            format_version: MANIFEST_FORMAT_VERSION,
            entries: Vec::new(),
            base_dir: base_dir.into(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported manifest format_version {}", m.format_version),
            ));
        }
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn entry(&self, sequence_id: &str) -> Result<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.sequence_id == sequence_id)
            .ok_or_else(|| Error::param(format!("no manifest entry '{sequence_id}'")))
    }

    /// The named entry, or the only entry when `sequence_id` is `None`.
    pub fn select(&self, sequence_id: Option<&str>) -> Result<&ManifestEntry> {
        match sequence_id {
            Some(id) => self.entry(id),
            None => match self.entries.as_slice() {
                [only] => Ok(only),
                [] => Err(Error::param("manifest has no entries")),
                _ => Err(Error::param(
                    "manifest has several entries; choose one with --entry",
                )),
            },
        }
    }

    pub fn channel_path(&self, entry: &ManifestEntry, tag: ChannelTag) -> Result<PathBuf> {
        entry
            .channels
            .get(&tag)
            .map(|p| self.base_dir.join(p))
            .ok_or_else(|| Error::MissingChannel(format!("{} has no {tag}", entry.sequence_id)))
    }

    pub fn load_channel(&self, entry: &ManifestEntry, tag: ChannelTag) -> Result<VideoSequence> {
        let path = self.channel_path(entry, tag)?;
        let seq = load_sequence(&path, tag)?;
        if seq.len() != entry.length {
            return Err(Error::format(
                path,
                format!("{} frames, manifest declares {}", seq.len(), entry.length),
            ));
        }
        Ok(seq)
    }

    /// Loads the clean, reference and (when present) leakage channels.
    pub fn load_scene(&self, entry: &ManifestEntry) -> Result<Scene> {
        if !entry.is_simulation_ready() {
            return Err(Error::MissingChannel(format!(
                "{} needs fluorescence_clean and reference",
                entry.sequence_id
            )));
        }
        let clean = self.load_channel(entry, ChannelTag::FluorescenceClean)?;
        let reference = self.load_channel(entry, ChannelTag::Reference)?;
        let leakage = if entry.channels.contains_key(&ChannelTag::Leakage) {
            Some(self.load_channel(entry, ChannelTag::Leakage)?)
        } else {
            None
        };
        Scene::new(entry.sequence_id.clone(), clean, reference, leakage)
    }

    /// Checks that every referenced path resolves to a sequence of the
    /// declared length.
    pub fn validate(&self) -> Result<()> {
        for entry in &self.entries {
            for &tag in entry.channels.keys() {
                self.load_channel(entry, tag)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frameio::{save_sequence, FrameFormat};
    use crate::Frame;

    #[test]
    fn round_trip_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let seq = VideoSequence::new(
            vec![Frame::filled(4, 4, 0.5); 3],
            30.0,
            ChannelTag::Reference,
        )
        .unwrap();
        save_sequence(&seq, dir.path().join("ref"), FrameFormat::Png16).unwrap();
        save_sequence(
            &seq.clone().with_tag(ChannelTag::FluorescenceClean),
            dir.path().join("clean"),
            FrameFormat::Png16,
        )
        .unwrap();

        let mut m = DatasetManifest::new(dir.path());
        m.entries.push(ManifestEntry {
            sequence_id: "a".into(),
            channels: BTreeMap::from([
                (ChannelTag::Reference, PathBuf::from("ref")),
                (ChannelTag::FluorescenceClean, PathBuf::from("clean")),
            ]),
            fps: 30.0,
            length: 3,
        });
        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();

        let back = DatasetManifest::load(&path).unwrap();
        assert_eq!(back.entries, m.entries);
        back.validate().unwrap();
        let scene = back.load_scene(back.select(None).unwrap()).unwrap();
        assert_eq!(scene.len(), 3);
        assert!(scene.leakage.is_none());

        let mut wrong = back.clone();
        wrong.entries[0].length = 4;
        assert!(wrong.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        fs::write(&path, r#"{"format_version":1,"entries":[],"extra":true}"#).unwrap();
        assert!(DatasetManifest::load(&path).is_err());
    }

    #[test]
    fn missing_reference_is_not_simulation_ready() {
        let entry = ManifestEntry {
            sequence_id: "x".into(),
            channels: BTreeMap::from([(ChannelTag::FluorescenceClean, PathBuf::from("c"))]),
            fps: 30.0,
            length: 1,
        };
        assert!(!entry.is_simulation_ready());
        let m = DatasetManifest::new(".");
        assert!(matches!(
            m.load_scene(&entry),
            Err(Error::MissingChannel(_))
        ));
    }
}
