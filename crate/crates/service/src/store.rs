//! On-disk project documents and the single-writer handle around them.
//!
//! Layout: `<root>/<project_id>/project.json`, replaced whole on every
//! write by writing a sibling temp file and renaming it over the original.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use thiserror::Error;

use storyloom_core::bsv::{BsvGraph, ViewKind};
use storyloom_core::{BatchId, DimensionId};

use crate::project::{Project, ProjectError};

pub const PROJECT_FILE: &str = "project.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a project document: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("unknown project {0:?}")]
    UnknownProject(String),
    #[error("project {0:?} already exists")]
    Exists(String),
    #[error(transparent)]
    Project(#[from] ProjectError),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `contents` to `path` so readers see either the old or the new file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io(dir))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("file")
    ));
    let mut f = fs::File::create(&tmp).map_err(io(&tmp))?;
    f.write_all(contents).map_err(io(&tmp))?;
    f.sync_all().map_err(io(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io(path))
}

pub fn to_document(project: &Project) -> String {
    let mut s = serde_json::to_string_pretty(project).expect("project serializes");
    s.push('\n');
    s
}

pub fn from_document(text: &str, path: &Path) -> Result<Project, StoreError> {
    serde_json::from_str(text).map_err(|e| StoreError::Corrupt {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_project(dir: &Path) -> Result<Project, StoreError> {
    let path = dir.join(PROJECT_FILE);
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    from_document(&text, &path)
}

pub fn save_project(dir: &Path, project: &Project) -> Result<(), StoreError> {
    write_atomic(&dir.join(PROJECT_FILE), to_document(project).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct GraphKey {
    revision: u64,
    batch: Option<BatchId>,
    dims: Vec<DimensionId>,
    view: ViewKind,
    compare: bool,
}

/// One project with a single writer. Writers work on a copy and swap it in
/// when done, so readers never wait on model calls.
#[derive(Debug)]
pub struct ProjectHandle {
    dir: PathBuf,
    writer: Mutex<()>,
    current: RwLock<Arc<Project>>,
    graphs: Mutex<HashMap<GraphKey, Arc<BsvGraph>>>,
}

impl ProjectHandle {
    pub fn new(dir: PathBuf, project: Project) -> Self {
        Self {
            dir,
            writer: Mutex::new(()),
            current: RwLock::new(Arc::new(project)),
            graphs: Mutex::new(HashMap::new()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn snapshot(&self) -> Arc<Project> {
        self.current.read().unwrap().clone()
    }

    /// Runs `f` on a copy of the project. On success the copy is saved and
    /// becomes current; on error nothing changes.
    pub fn write<T, E>(&self, f: impl FnOnce(&mut Project) -> Result<T, E>) -> Result<T, StoreError>
    where
        E: Into<StoreError>,
    {
        let _guard = self.writer.lock().unwrap();
        let mut copy = (*self.snapshot()).clone();
        let out = f(&mut copy).map_err(Into::into)?;
        copy.touch();
        save_project(&self.dir, &copy)?;
        *self.current.write().unwrap() = Arc::new(copy);
        self.graphs.lock().unwrap().clear();
        Ok(out)
    }

    /// Graphs are pure derivations, so they are memoized per revision and
    /// never written to disk.
    pub fn graph(
        &self,
        dims: &[DimensionId],
        batch: Option<BatchId>,
        view: ViewKind,
        compare: bool,
    ) -> Result<Arc<BsvGraph>, ProjectError> {
        let project = self.snapshot();
        let key = GraphKey {
            revision: project.revision,
            batch,
            dims: dims.to_vec(),
            view,
            compare,
        };
        if let Some(g) = self.graphs.lock().unwrap().get(&key) {
            return Ok(g.clone());
        }
        let g = Arc::new(project.graph(dims, batch, view, compare)?);
        self.graphs.lock().unwrap().insert(key, g.clone());
        Ok(g)
    }
}

/// All projects under one root directory.
#[derive(Debug)]
pub struct ProjectStore {
    root: PathBuf,
    open: Mutex<HashMap<String, Arc<ProjectHandle>>>,
}

impl ProjectStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            open: Mutex::new(HashMap::new()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn valid_id(id: &str) -> bool {
        !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    }

    /// Creates a project; without an id the next free `projN` is used.
    pub fn create(&self, id: Option<&str>, init: impl FnOnce(&mut Project) -> Result<(), ProjectError>) -> Result<Arc<ProjectHandle>, StoreError> {
        let mut open = self.open.lock().unwrap();
        let id = match id {
            Some(id) if Self::valid_id(id) => id.to_string(),
            Some(id) => return Err(StoreError::UnknownProject(id.to_string())),
            None => (1..)
                .map(|n| format!("proj{n}"))
                .find(|c| !open.contains_key(c) && !self.root.join(c).exists())
                .expect("unbounded"),
        };
        let dir = self.root.join(&id);
        if open.contains_key(&id) || dir.join(PROJECT_FILE).exists() {
            return Err(StoreError::Exists(id));
        }
        let mut project = Project::new(&id);
        init(&mut project)?;
        save_project(&dir, &project)?;
        let handle = Arc::new(ProjectHandle::new(dir, project));
        open.insert(id, handle.clone());
        Ok(handle)
    }

    pub fn get(&self, id: &str) -> Result<Arc<ProjectHandle>, StoreError> {
        if !Self::valid_id(id) {
            return Err(StoreError::UnknownProject(id.to_string()));
        }
        let mut open = self.open.lock().unwrap();
        if let Some(h) = open.get(id) {
            return Ok(h.clone());
        }
        let dir = self.root.join(id);
        if !dir.join(PROJECT_FILE).exists() {
            return Err(StoreError::UnknownProject(id.to_string()));
        }
        let handle = Arc::new(ProjectHandle::new(dir.clone(), load_project(&dir)?));
        open.insert(id.to_string(), handle.clone());
        Ok(handle)
    }
}
