//! Directory importers for ModelNet-style classification data and
//! PartNet-style per-category segmentation data.
//!
//! ModelNet layout (the normal-resampled release):
//!
//! ```text
//! root/
//!   <prefix>_train.txt        one shape id per line, e.g. `chair_0001`
//!   <prefix>_test.txt
//!   <class>/<shape id>.txt    comma or space separated `x y z nx ny nz`
//! ```
//!
//! When no split lists exist, `root/<class>/<split>/*.{txt,xyzn}` is used.
//!
//! PartNet layout: `root/<category>/<split>/*.{txt,xyzn}` with the part label
//! in a seventh column.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_xyzn, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: Split,
    pub class_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if e.label >= self.class_names.len() {
                return Err(Error::Dataset(format!(
                    "{}: label {} outside a table of {} classes",
                    e.path.display(),
                    e.label,
                    self.class_names.len()
                )));
            }
            if !e.path.is_file() {
                return Err(Error::Dataset(format!("{} does not exist", e.path.display())));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    /// Reads every referenced file. Part counts are taken from the largest
    /// label seen.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let mut clouds = Vec::with_capacity(self.entries.len());
        let mut n_parts = 0;
        for e in &self.entries {
            let c = read_xyzn(&e.path)?.with_class(e.label);
            if let Some(p) = &c.parts {
                n_parts = n_parts.max(p.iter().max().map_or(0, |m| m + 1));
            }
            clouds.push(c);
        }
        Ok(Dataset {
            clouds,
            class_names: self.class_names.clone(),
            n_parts,
        })
    }
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

fn class_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let dirs: Vec<(String, PathBuf)> = read_dir_sorted(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .filter_map(|p| Some((p.file_name()?.to_str()?.to_string(), p)))
        .collect();
    if dirs.is_empty() {
        return Err(Error::Dataset(format!("{} has no class directories", root.display())));
    }
    Ok(dirs)
}

fn point_files(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(read_dir_sorted(dir)?
        .into_iter()
        .filter(|p| {
            p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("txt" | "xyzn"))
        })
        .collect())
}

fn split_list(root: &Path, split: Split) -> Result<Option<PathBuf>> {
    let suffix = format!("_{split}.txt");
    Ok(read_dir_sorted(root)?.into_iter().find(|p| {
        p.is_file()
            && p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(&suffix))
    }))
}

fn per_split_dirs(root: &Path, split: Split) -> Result<DatasetManifest> {
    let classes = class_dirs(root)?;
    let mut entries = Vec::new();
    let mut any_split = false;
    for (label, (_, dir)) in classes.iter().enumerate() {
        let sub = dir.join(split.as_str());
        if sub.is_dir() {
            any_split = true;
            entries.extend(point_files(&sub)?.into_iter().map(|path| ManifestEntry { path, label }));
        }
    }
    if !any_split {
        return Err(Error::Dataset(format!(
            "no `{split}` split under {}",
            root.display()
        )));
    }
    Ok(DatasetManifest {
        split,
        class_names: classes.into_iter().map(|(n, _)| n).collect(),
        entries,
    })
}

pub fn import_modelnet(root: impl AsRef<Path>, split: Split) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let Some(list) = split_list(root, split)? else {
        return per_split_dirs(root, split);
    };
    let classes = class_dirs(root)?;
    let names: Vec<String> = classes.iter().map(|(n, _)| n.clone()).collect();
    let text = fs::read_to_string(&list).map_err(|e| Error::io(list.display().to_string(), e))?;
    let mut entries = Vec::new();
    for id in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let class = id
            .rsplit_once('_')
            .map(|(c, _)| c)
            .ok_or_else(|| Error::Dataset(format!("shape id {id:?} has no class prefix")))?;
        let label = names
            .binary_search_by(|n| n.as_str().cmp(class))
            .map_err(|_| Error::Dataset(format!("shape id {id:?}: unknown class {class:?}")))?;
        let path = classes[label].1.join(format!("{id}.txt"));
        entries.push(ManifestEntry { path, label });
    }
    let m = DatasetManifest {
        split,
        class_names: names,
        entries,
    };
    m.validate()?;
    Ok(m)
}

pub fn import_partnet(root: impl AsRef<Path>, split: Split) -> Result<DatasetManifest> {
    let m = per_split_dirs(root.as_ref(), split)?;
    m.validate()?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    const POINT: &str = "0,0,0,0,0,1\n1,0,0,1,0,0\n";

    fn tree(with_lists: bool) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let r = dir.path();
        let mut train = String::new();
        for class in ["mug", "chair"] {
            fs::create_dir(r.join(class)).unwrap();
            for i in 1..=2 {
                let id = format!("{class}_{i:04}");
                if with_lists {
                    fs::write(r.join(class).join(format!("{id}.txt")), POINT).unwrap();
                    train.push_str(&id);
                    train.push('\n');
                } else {
                    fs::create_dir_all(r.join(class).join("train")).unwrap();
                    fs::write(r.join(class).join("train").join(format!("{id}.xyzn")), "0 0 0 0 0 1 1\n").unwrap();
                }
            }
        }
        if with_lists {
            fs::write(r.join("mini_train.txt"), train).unwrap();
        }
        dir
    }

    #[test]
    fn modelnet_split_lists() {
        let t = tree(true);
        let m = import_modelnet(t.path(), Split::Train).unwrap();
        assert_eq!(m.entries.len(), 4);
        assert_eq!(m.class_names, vec!["chair", "mug"]);
        assert_eq!(m.entries[0].label, 1);
        let ds = m.load_dataset().unwrap();
        assert_eq!(ds.len(), 4);
        assert!(import_modelnet(t.path(), Split::Test).is_err());
    }

    #[test]
    fn partnet_split_dirs_and_manifest_round_trip() {
        let t = tree(false);
        let m = import_partnet(t.path(), Split::Train).unwrap();
        assert_eq!(m.entries.len(), 4);
        assert_eq!(m.entries[0].label, 0);
        assert_eq!(m.load_dataset().unwrap().n_parts, 2);
        let f = t.path().join("manifest.json");
        m.save(&f).unwrap();
        assert_eq!(DatasetManifest::load(&f).unwrap(), m);
        assert!(import_partnet(t.path(), Split::Test).is_err());
    }

    #[test]
    fn empty_root_fails() {
        let dir = tempfile::tempdir().unwrap();
        assert!(import_modelnet(dir.path(), Split::Train).is_err());
        assert!(import_partnet(dir.path(), Split::Train).is_err());
    }
}
