//! Dataset manifests, the binary feature-file format, and a synthetic
//! domain-shift generator for verification at desk scale.

mod format;
mod synth;

pub use format::{read_feature_file, write_feature_file, FEATURE_MAGIC, FEATURE_VERSION};
pub use synth::{generate_synthetic_pair, DomainShift, SynthConfig, SyntheticPair};

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FeatureMap;

/// Which side of the adaptation problem a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// One sample: identity labels are present exactly for source-domain
/// records; target records are unlabeled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: u32,
    pub identity: Option<u32>,
    pub camera: u32,
    pub domain: Domain,
    pub feature_index: u32,
}

/// On-disk manifest binding sample records to a feature file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub feature_file: String,
    pub map_shape: [usize; 3],
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn num_samples(&self) -> usize {
        self.records.len()
    }

    /// Structural checks against the bound feature file.
    pub fn validate(&self, feature_count: usize, map_shape: (usize, usize, usize)) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.sample_id) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate sample_id {} in manifest",
                    r.sample_id
                )));
            }
            let labeled = r.identity.is_some();
            if labeled != (r.domain == Domain::Source) {
                return Err(Error::InvalidConfig(format!(
                    "sample {} violates labeling rule: identity must be present iff domain is source",
                    r.sample_id
                )));
            }
            if r.feature_index as usize >= feature_count {
                return Err(Error::InvalidConfig(format!(
                    "sample {} feature_index {} out of range ({} maps in feature file)",
                    r.sample_id, r.feature_index, feature_count
                )));
            }
        }
        let (c, h, w) = map_shape;
        if feature_count > 0 && self.map_shape != [c, h, w] {
            return Err(Error::InvalidConfig(format!(
                "manifest map_shape {:?} disagrees with feature file {:?}",
                self.map_shape,
                [c, h, w]
            )));
        }
        Ok(())
    }
}

/// A manifest with its feature maps loaded in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
    pub maps: Vec<FeatureMap>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn map_shape(&self) -> (usize, usize, usize) {
        self.maps.first().map_or((0, 0, 0), FeatureMap::shape)
    }

    /// The feature map bound to a record.
    pub fn map_for(&self, record: &SampleRecord) -> &FeatureMap {
        &self.maps[record.feature_index as usize]
    }

    /// Maps in record order (record `i` -> its bound map).
    pub fn maps_in_record_order(&self) -> Vec<FeatureMap> {
        self.records.iter().map(|r| self.map_for(r).clone()).collect()
    }

    /// Load a manifest and its feature file. A relative `feature_file` is
    /// resolved against the manifest's directory.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest_path)?;
        let manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("manifest {}: {e}", manifest_path.display())))?;
        let feature_path = {
            let p = Path::new(&manifest.feature_file);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                manifest_path.parent().unwrap_or_else(|| Path::new(".")).join(p)
            }
        };
        let maps = read_feature_file(&feature_path)?;
        let shape = maps.first().map_or((0, 0, 0), FeatureMap::shape);
        manifest.validate(maps.len(), shape)?;
        Ok(Self { records: manifest.records, maps })
    }

    /// Write `<stem>_features.bin` and `<stem>_manifest.json` under `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<DatasetManifest> {
        std::fs::create_dir_all(dir)?;
        let feature_name = format!("{stem}_features.bin");
        write_feature_file(&self.maps, &dir.join(&feature_name))?;
        let (c, h, w) = self.map_shape();
        let manifest = DatasetManifest {
            feature_file: feature_name,
            map_shape: [c, h, w],
            records: self.records.clone(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(dir.join(format!("{stem}_manifest.json")), json)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: u32, identity: Option<u32>, domain: Domain, fi: u32) -> SampleRecord {
        SampleRecord { sample_id: id, identity, camera: 0, domain, feature_index: fi }
    }

    #[test]
    fn manifest_rejects_out_of_range_feature_index() {
        let m = DatasetManifest {
            feature_file: "f.bin".into(),
            map_shape: [2, 2, 2],
            records: vec![record(0, Some(1), Domain::Source, 5)],
        };
        assert!(matches!(m.validate(3, (2, 2, 2)), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn manifest_rejects_duplicate_sample_ids() {
        let m = DatasetManifest {
            feature_file: "f.bin".into(),
            map_shape: [2, 2, 2],
            records: vec![
                record(7, Some(0), Domain::Source, 0),
                record(7, Some(1), Domain::Source, 1),
            ],
        };
        assert!(matches!(m.validate(3, (2, 2, 2)), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn manifest_enforces_identity_iff_source() {
        let unlabeled_source = DatasetManifest {
            feature_file: "f.bin".into(),
            map_shape: [2, 2, 2],
            records: vec![record(0, None, Domain::Source, 0)],
        };
        assert!(unlabeled_source.validate(1, (2, 2, 2)).is_err());
        let labeled_target = DatasetManifest {
            feature_file: "f.bin".into(),
            map_shape: [2, 2, 2],
            records: vec![record(0, Some(3), Domain::Target, 0)],
        };
        assert!(labeled_target.validate(1, (2, 2, 2)).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let maps = vec![
            FeatureMap::new(2, 2, 2, (0..8).map(|v| v as f32).collect()).unwrap(),
            FeatureMap::new(2, 2, 2, (8..16).map(|v| v as f32).collect()).unwrap(),
        ];
        let ds = Dataset {
            records: vec![
                record(0, Some(0), Domain::Source, 0),
                record(1, Some(1), Domain::Source, 1),
            ],
            maps,
        };
        ds.save(dir.path(), "toy").unwrap();
        let loaded = Dataset::load(&dir.path().join("toy_manifest.json")).unwrap();
        assert_eq!(loaded.records, ds.records);
        assert_eq!(loaded.maps, ds.maps);
    }
}
