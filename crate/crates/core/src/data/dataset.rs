use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::container::{read_container, write_container};
use super::phantom::{generate_phantom, PhantomSpec};
use crate::error::{param_err, Error, Result};
use crate::fourier::ComplexTensor;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn file(self) -> String {
        format!("{}.cplx", self.name())
    }

    pub fn reference_file(self) -> String {
        format!("{}.ref.cplx", self.name())
    }
}

/// Phantom template plus split sizes. Image `i` of a split uses seed
/// `phantom.seed + offset + i`, where the offsets stack the splits in
/// train, val, test order, so seed ranges never overlap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub phantom: PhantomSpec,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            phantom: PhantomSpec::default(),
            train: 280,
            val: 40,
            test: 80,
        }
    }
}

impl DatasetSpec {
    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    /// Half-open seed range of a split.
    pub fn seeds(&self, split: Split) -> std::ops::Range<u64> {
        let offset = match split {
            Split::Train => 0,
            Split::Val => self.train,
            Split::Test => self.train + self.val,
        } as u64;
        let start = self.phantom.seed + offset;
        start..start + self.count(split) as u64
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        let total = (self.train + self.val + self.test) as u64;
        if self.phantom.seed.checked_add(total).is_none() {
            return param_err("seed range overflows u64");
        }
        Ok(())
    }

    pub fn generate(&self, split: Split) -> Result<Dataset> {
        self.validate()?;
        let mut targets = Vec::with_capacity(self.count(split));
        let mut references = self.phantom.paired_contrast.then(Vec::new);
        for seed in self.seeds(split) {
            let (image, paired) = generate_phantom(&PhantomSpec {
                seed,
                ..self.phantom.clone()
            })?;
            targets.push(peak_normalized(image));
            if let (Some(refs), Some(p)) = (references.as_mut(), paired) {
                refs.push(peak_normalized(p));
            }
        }
        Ok(Dataset {
            split,
            targets,
            references,
        })
    }

    /// Writes all three splits and `manifest.json` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<DatasetManifest> {
        std::fs::create_dir_all(dir)?;
        let mut splits = Vec::new();
        for split in Split::ALL {
            let data = self.generate(split)?;
            write_container(dir.join(split.file()), &data.targets)?;
            if let Some(r) = &data.references {
                write_container(dir.join(split.reference_file()), r)?;
            }
            let seeds = self.seeds(split);
            splits.push(SplitManifest {
                split,
                count: data.len(),
                seed_start: seeds.start,
                seed_end: seeds.end,
                file: split.file(),
                reference_file: data.references.is_some().then(|| split.reference_file()),
            });
        }
        let manifest = DatasetManifest {
            version: MANIFEST_VERSION,
            height: self.phantom.size,
            width: self.phantom.size,
            spec: self.clone(),
            splits,
        };
        crate::io::write_atomic(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )?;
        Ok(manifest)
    }
}

fn peak_normalized(x: ComplexTensor) -> ComplexTensor {
    let peak = x.magnitude().into_iter().fold(0.0, f64::max);
    if peak > 0.0 {
        x.map(|z| z / peak)
    } else {
        x
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub split: Split,
    pub count: usize,
    pub seed_start: u64,
    pub seed_end: u64,
    pub file: String,
    pub reference_file: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub spec: DatasetSpec,
    pub splits: Vec<SplitManifest>,
}

impl DatasetManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let m: Self = serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "manifest version {}, expected {MANIFEST_VERSION}",
                m.version
            )));
        }
        Ok(m)
    }

    pub fn split(&self, split: Split) -> Option<&SplitManifest> {
        self.splits.iter().find(|s| s.split == split)
    }
}

/// Images of one split; every target and reference peaks at magnitude 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub targets: Vec<ComplexTensor>,
    pub references: Option<Vec<ComplexTensor>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Loads a split written by [`DatasetSpec::write_all`].
    pub fn load(dir: &Path, split: Split) -> Result<Self> {
        let manifest = DatasetManifest::read(dir)?;
        let entry = manifest
            .split(split)
            .ok_or_else(|| Error::Format(format!("manifest has no {} split", split.name())))?;
        let path = |f: &str| -> PathBuf { dir.join(f) };
        let targets = read_container(path(&entry.file))?;
        if targets.len() != entry.count {
            return Err(Error::Format(format!(
                "{} holds {} images, manifest says {}",
                entry.file,
                targets.len(),
                entry.count
            )));
        }
        let references = match &entry.reference_file {
            Some(f) => {
                let r = read_container(path(f))?;
                if r.len() != targets.len() {
                    return Err(Error::Format(format!(
                        "{f} holds {} images, expected {}",
                        r.len(),
                        targets.len()
                    )));
                }
                Some(r)
            }
            None => None,
        };
        Ok(Self {
            split,
            targets,
            references,
        })
    }

    /// First `n` images (all of them when `n` exceeds the split).
    pub fn truncated(mut self, n: usize) -> Self {
        self.targets.truncate(n);
        if let Some(r) = self.references.as_mut() {
            r.truncate(n);
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges_are_disjoint_and_contiguous() {
        let spec = DatasetSpec::default();
        let (a, b, c) = (
            spec.seeds(Split::Train),
            spec.seeds(Split::Val),
            spec.seeds(Split::Test),
        );
        assert_eq!((a.end, b.end), (b.start, c.start));
        assert_eq!(
            (a.end - a.start, b.end - b.start, c.end - c.start),
            (280, 40, 80)
        );
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            phantom: PhantomSpec {
                size: 16,
                ..PhantomSpec::default()
            },
            train: 3,
            val: 1,
            test: 2,
        };
        let m = spec.write_all(dir.path()).unwrap();
        assert_eq!(DatasetManifest::read(dir.path()).unwrap(), m);
        let test = Dataset::load(dir.path(), Split::Test).unwrap();
        assert_eq!(test.len(), 2);
        assert_eq!(test.references.as_ref().unwrap().len(), 2);
        let fresh = spec.generate(Split::Test).unwrap();
        // stored as f32
        for (a, b) in test.targets.iter().zip(&fresh.targets) {
            assert!(a.max_abs_diff(b) < 1e-6);
        }
    }
}
