use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use super::{cache_key, GenerationRequest, GenerationResult};

/// Content-addressed response store: `<root>/<model_id>/<digest>`, one JSON file per request.
///
/// Writes go through a temporary file and a rename, so concurrent writers of the same key
/// leave one complete file behind (last writer wins; identical keys carry identical results).
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ResponseCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, request: &GenerationRequest) -> PathBuf {
        self.root
            .join(sanitize_model_id(&request.model_id))
            .join(cache_key(request))
    }

    pub fn get(&self, request: &GenerationRequest) -> io::Result<Option<GenerationResult>> {
        let path = self.path_for(request);
        match fs::read(&path) {
            Ok(bytes) => match serde_json::from_slice::<GenerationResult>(&bytes) {
                Ok(mut result) => {
                    result.cache_hit = true;
                    Ok(Some(result))
                }
                // A torn or foreign file is treated as a miss and overwritten later.
                Err(_) => Ok(None),
            },
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn put(&self, request: &GenerationRequest, result: &GenerationResult) -> io::Result<()> {
        let path = self.path_for(request);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir)?;
        let mut stored = result.clone();
        stored.cache_hit = false;
        let bytes = serde_json::to_vec_pretty(&stored).map_err(io::Error::other)?;
        let tmp = dir.join(format!(
            ".{}.{}.tmp",
            path.file_name().unwrap().to_string_lossy(),
            unique_suffix()
        ));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_data()?;
        }
        fs::rename(&tmp, &path)
    }
}

fn unique_suffix() -> String {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    format!("{}-{}", std::process::id(), COUNTER.fetch_add(1, Ordering::Relaxed))
}

/// Model ids like `org/model:tag` become a single path component.
pub(crate) fn sanitize_model_id(model_id: &str) -> String {
    model_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}
