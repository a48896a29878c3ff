use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Guidance, GuidanceError, NullGuidance, PhotometricGuidance, PhotometricTarget, RemoteGuidance};
use crate::field::FieldRegistry;
use crate::render::Image;
use crate::scene::{load_scene, ObjectGroup, SceneDescription};

fn default_timeout_ms() -> u64 {
    30_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum GuidanceMode {
    /// `target` is a PFM compared against every prompt; `reference` is a
    /// scene file whose renders serve as per-prompt targets.
    Photometric {
        #[serde(default)]
        target: Option<PathBuf>,
        #[serde(default)]
        reference: Option<PathBuf>,
    },
    Remote {
        #[serde(default)]
        endpoint: Option<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
    /// Zero image gradient; only the shape loss drives training.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    #[serde(flatten)]
    pub mode: GuidanceMode,
    /// Object prompts keyed by field id or proxy id, used for local steps.
    #[serde(default)]
    pub prompt_overrides: BTreeMap<String, String>,
    /// Passed through to the oracle with every request.
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl GuidanceConfig {
    pub fn new(mode: GuidanceMode) -> Self {
        Self { mode, prompt_overrides: BTreeMap::new(), params: Map::new() }
    }

    /// Parses the command-line form `photometric:PATH`, `remote[:URL]` or
    /// `none`. A photometric path ending in `.json` is a reference scene.
    pub fn parse_flag(flag: &str, default_endpoint: Option<&str>) -> Result<Self, GuidanceError> {
        let (kind, arg) = match flag.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (flag, None),
        };
        let mode = match kind {
            "photometric" => {
                let path = PathBuf::from(arg.filter(|a| !a.is_empty()).ok_or_else(|| {
                    GuidanceError::Config("photometric guidance needs a target path".into())
                })?);
                if path.extension().is_some_and(|e| e == "json") {
                    GuidanceMode::Photometric { target: None, reference: Some(path) }
                } else {
                    GuidanceMode::Photometric { target: Some(path), reference: None }
                }
            }
            "remote" => GuidanceMode::Remote {
                endpoint: arg.filter(|a| !a.is_empty()).or(default_endpoint).map(str::to_owned),
                timeout_ms: default_timeout_ms(),
            },
            "none" => GuidanceMode::None,
            other => return Err(GuidanceError::Config(format!("unknown guidance mode {other:?}"))),
        };
        Ok(Self::new(mode))
    }
}

/// Which prompt each kind of training step sends.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PromptRouting {
    pub overrides: BTreeMap<String, String>,
}

impl PromptRouting {
    /// Override for the group's field id, then for its representative proxy,
    /// then the representative proxy's own prompt.
    pub fn object_prompt(&self, scene: &SceneDescription, group: &ObjectGroup) -> String {
        let rep = group.representative(scene);
        self.overrides
            .get(&group.field_id)
            .or_else(|| self.overrides.get(&rep.id))
            .cloned()
            .unwrap_or_else(|| rep.prompt.clone())
    }

    pub fn scene_prompt(&self, scene: &SceneDescription) -> String {
        scene.scene_prompt.clone()
    }
}

/// A ready-to-use oracle plus the prompt routing and pass-through params.
#[derive(Clone)]
pub struct GuidanceHandle {
    pub guidance: Arc<dyn Guidance>,
    pub prompts: PromptRouting,
    pub params: Map<String, Value>,
    pub kind: &'static str,
}

impl GuidanceHandle {
    pub fn new(guidance: Arc<dyn Guidance>, kind: &'static str) -> Self {
        Self { guidance, prompts: PromptRouting::default(), params: Map::new(), kind }
    }
}

impl std::fmt::Debug for GuidanceHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GuidanceHandle").field("kind", &self.kind).field("prompts", &self.prompts).finish()
    }
}

/// Builds the oracle a config describes; relative paths resolve against `base_dir`.
pub fn select_guidance(config: &GuidanceConfig, base_dir: &Path) -> Result<GuidanceHandle, GuidanceError> {
    let (guidance, kind): (Arc<dyn Guidance>, _) = match &config.mode {
        GuidanceMode::Photometric { target, reference } => {
            let image = target
                .as_ref()
                .map(|p| Image::read_pfm(crate::field::resolve(base_dir, p)))
                .transpose()
                .map_err(|e| GuidanceError::Config(format!("target image: {e}")))?;
            let mut g = match reference {
                Some(path) => {
                    let path = crate::field::resolve(base_dir, path);
                    let scene = load_scene(&path).map_err(|e| GuidanceError::Config(format!("reference scene: {e}")))?;
                    let dir = path.parent().unwrap_or(Path::new("."));
                    let fields = FieldRegistry::load_for_scene(&scene, dir)
                        .map_err(|e| GuidanceError::Config(format!("reference fields: {e}")))?;
                    PhotometricGuidance::from_reference(scene, fields)
                }
                None => PhotometricGuidance::default(),
            };
            match image {
                Some(img) => g.fallback = Some(PhotometricTarget::Image(Arc::new(img))),
                None if reference.is_none() => {
                    return Err(GuidanceError::Config("photometric guidance needs a target image or reference scene".into()))
                }
                None => {}
            }
            (Arc::new(g), "photometric")
        }
        GuidanceMode::Remote { endpoint, timeout_ms } => {
            let endpoint = endpoint
                .as_deref()
                .filter(|e| !e.is_empty())
                .ok_or_else(|| GuidanceError::Config("remote guidance needs an endpoint".into()))?;
            (Arc::new(RemoteGuidance::new(endpoint, Duration::from_millis(*timeout_ms))), "remote")
        }
        GuidanceMode::None => (Arc::new(NullGuidance), "none"),
    };
    Ok(GuidanceHandle {
        guidance,
        prompts: PromptRouting { overrides: config.prompt_overrides.clone() },
        params: config.params.clone(),
        kind,
    })
}
