//! Directory-backed persistence, one folder per job.
//!
//! ```text
//! <root>/slices/<id>.png         uploaded slice
//! <root>/slices/<id>.png.json    sidecar, 16-bit slices only
//! <root>/jobs/<id>/job.json      slice id, state, iteration, field version
//! <root>/jobs/<id>/config.json
//! <root>/jobs/<id>/prompts.json
//! <root>/jobs/<id>/phi.raster    level set, f64
//! <root>/jobs/<id>/snapshots/<iteration>.json
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use figac::config::PipelineConfig;
use figac::edges::PromptSet;
use figac::io::{decode_raster, encode_raster, sidecar_path, ContourDoc, RasterType, Sidecar};
use figac::ScalarField;
use serde::{Deserialize, Serialize};

use crate::job::JobState;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobRecord {
    pub slice_id: String,
    pub state: JobState,
    pub iteration: usize,
    pub field_version: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

/// Writes through a temporary file so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

fn to_json(v: &impl Serialize) -> Vec<u8> {
    serde_json::to_vec_pretty(v).expect("records serialize")
}

fn io_err(e: impl std::fmt::Display) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e.to_string())
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("slices"))?;
        fs::create_dir_all(root.join("jobs"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn slice_path(&self, id: &str) -> PathBuf {
        self.root.join("slices").join(format!("{id}.png"))
    }

    fn job_dir(&self, id: &str) -> PathBuf {
        self.root.join("jobs").join(id)
    }

    pub fn save_slice(&self, id: &str, png: &[u8], sidecar: Option<&Sidecar>) -> io::Result<()> {
        let path = self.slice_path(id);
        write_atomic(&path, png)?;
        if let Some(s) = sidecar {
            write_atomic(&sidecar_path(&path), &to_json(s))?;
        }
        Ok(())
    }

    pub fn slice_ids(&self) -> io::Result<Vec<String>> {
        let mut ids = Vec::new();
        for e in fs::read_dir(self.root.join("slices"))? {
            let name = e?.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".png") {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn load_slice(&self, id: &str) -> io::Result<(Vec<u8>, Option<Sidecar>)> {
        let path = self.slice_path(id);
        let png = fs::read(&path)?;
        let side = sidecar_path(&path);
        let sidecar = if side.exists() {
            Some(Sidecar::from_json(&fs::read(side)?).map_err(io_err)?)
        } else {
            None
        };
        Ok((png, sidecar))
    }

    pub fn save_job(&self, id: &str, record: &JobRecord, config: &PipelineConfig, phi: &ScalarField) -> io::Result<()> {
        let dir = self.job_dir(id);
        fs::create_dir_all(dir.join("snapshots"))?;
        write_atomic(&dir.join("config.json"), &to_json(config))?;
        write_atomic(&dir.join("prompts.json"), &to_json(&config.prompts))?;
        write_atomic(&dir.join("phi.raster"), &encode_raster(phi, RasterType::F64))?;
        write_atomic(&dir.join("job.json"), &to_json(record))
    }

    pub fn save_snapshot(&self, id: &str, doc: &ContourDoc) -> io::Result<()> {
        let dir = self.job_dir(id).join("snapshots");
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join(format!("{:06}.json", doc.iteration)), &to_json(doc))
    }

    pub fn job_ids(&self) -> io::Result<Vec<String>> {
        let mut ids = Vec::new();
        for e in fs::read_dir(self.root.join("jobs"))? {
            let e = e?;
            if e.path().join("job.json").exists() {
                ids.push(e.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn load_job(&self, id: &str) -> io::Result<(JobRecord, PipelineConfig, ScalarField, Vec<ContourDoc>)> {
        let dir = self.job_dir(id);
        let record: JobRecord = serde_json::from_slice(&fs::read(dir.join("job.json"))?).map_err(io_err)?;
        let mut config = PipelineConfig::from_json(&fs::read(dir.join("config.json"))?).map_err(io_err)?;
        config.prompts = PromptSet::from_json(&fs::read(dir.join("prompts.json"))?).map_err(io_err)?;
        let phi = decode_raster(&fs::read(dir.join("phi.raster"))?).map_err(io_err)?;
        let mut snapshots = Vec::new();
        if let Ok(entries) = fs::read_dir(dir.join("snapshots")) {
            for e in entries {
                let path = e?.path();
                if path.extension().is_some_and(|x| x == "json") {
                    snapshots.push(serde_json::from_slice(&fs::read(path)?).map_err(io_err)?);
                }
            }
        }
        Ok((record, config, phi, snapshots))
    }
}
