use super::{CompletionBackend, ProviderError, RawResponse};
use std::path::PathBuf;

/// File-backed provider.
///
/// Layout: `<root>/<task_id>/<label>/<sample_index>.txt`, each file holding one
/// raw response. A missing task directory counts as a provider failure.
#[derive(Debug, Clone)]
pub struct ReplayProvider {
    label: String,
    root: PathBuf,
}

impl ReplayProvider {
    pub fn new(label: String, root: PathBuf) -> Self {
        ReplayProvider { label, root }
    }
}

impl CompletionBackend for ReplayProvider {
    fn label(&self) -> &str {
        &self.label
    }

    fn complete(&self, task_id: &str, _prompt: &str, n: usize) -> Result<Vec<RawResponse>, ProviderError> {
        let dir = self.root.join(task_id).join(&self.label);
        if !dir.is_dir() {
            return Err(ProviderError::Unavailable {
                label: self.label.clone(),
                task_id: task_id.to_string(),
            });
        }
        let mut out = Vec::new();
        for sample_index in 0..n {
            let path = dir.join(format!("{sample_index}.txt"));
            match std::fs::read_to_string(&path) {
                Ok(text) => out.push(RawResponse { sample_index, text }),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => {
                    return Err(ProviderError::Transport {
                        label: self.label.clone(),
                        message: format!("{}: {e}", path.display()),
                    })
                }
            }
        }
        Ok(out)
    }
}
