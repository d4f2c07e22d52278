//! Checkpoint archive: a text manifest next to a little-endian f32 blob.
//!
//! Manifest layout (`<stem>.manifest`), one record per line:
//!
//! ```text
//! avnav-checkpoint 1
//! meta <key> <value>
//! tensor <name> <dim>x<dim>... <offset> <count>
//! ```
//!
//! `offset` and `count` are in f32 elements into `<stem>.bin`. Names and meta
//! keys must not contain whitespace.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

const MAGIC: &str = "avnav-checkpoint 1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn manifest_path(stem: &Path) -> PathBuf {
    stem.with_extension("manifest")
}

pub fn blob_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

fn check_token(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(TensorError::Format(format!("invalid {kind} {s:?}")));
    }
    Ok(())
}

impl Archive {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let mut manifest = String::from(MAGIC);
        manifest.push('\n');
        for (k, v) in &self.meta {
            check_token("meta key", k)?;
            check_token("meta value", v)?;
            manifest.push_str(&format!("meta {k} {v}\n"));
        }
        let total: usize = self.tensors.iter().map(|(_, t)| t.numel()).sum();
        let mut blob = Vec::with_capacity(total * 4);
        let mut offset = 0;
        for (name, t) in &self.tensors {
            check_token("tensor name", name)?;
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            manifest.push_str(&format!("tensor {name} {} {offset} {}\n", dims.join("x"), t.numel()));
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            offset += t.numel();
        }
        if let Some(dir) = stem.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(manifest_path(stem), manifest)?;
        fs::write(blob_path(stem), blob)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let manifest = fs::read_to_string(manifest_path(stem))?;
        let blob = fs::read(blob_path(stem))?;
        if blob.len() % 4 != 0 {
            return Err(TensorError::Format("blob length is not a multiple of 4".into()));
        }
        let floats: Vec<f32> = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();

        let mut lines = manifest.lines();
        if lines.next() != Some(MAGIC) {
            return Err(TensorError::Format("missing checkpoint header".into()));
        }
        let mut archive = Archive::default();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["meta", k, v] => {
                    archive.meta.insert((*k).to_string(), (*v).to_string());
                }
                ["tensor", name, dims, offset, count] => {
                    let bad = |what: &str| TensorError::Format(format!("{what} in line {line:?}"));
                    let shape: Vec<usize> = dims
                        .split('x')
                        .map(str::parse)
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("bad shape"))?;
                    let offset: usize = offset.parse().map_err(|_| bad("bad offset"))?;
                    let count: usize = count.parse().map_err(|_| bad("bad count"))?;
                    let data = floats
                        .get(offset..offset + count)
                        .ok_or_else(|| bad("range outside blob"))?
                        .to_vec();
                    archive.tensors.push(((*name).to_string(), Tensor::new(&shape, data)?));
                }
                _ => return Err(TensorError::Format(format!("unrecognized line {line:?}"))),
            }
        }
        Ok(archive)
    }
}
