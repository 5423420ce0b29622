//! TOML configuration and media loading.
//!
//! Relative paths resolve against the configuration file's directory.
//! Credential fields (`api_key`) may reference environment variables as
//! `${NAME}`; no other field is interpolated.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::arbitration::{ArbitrationPolicy, SynonymTable};
use crate::deliberation::{RemoteBackend, ScriptedBackend, TextBackend};
use crate::error::{Error, Result};
use crate::evidence::{load_knowledge_dir, Embedder, VectorIndex, DEFAULT_CHUNK_OVERLAP, DEFAULT_CHUNK_SIZE, DEFAULT_TOP_K};
use crate::fusion::FusionConfig;
use crate::orchestration::{ExpertSpec, RoutingTable};
use crate::reporting::{GrowthCharts, ReflectionConfig};
use crate::toolkit::{Adapter, FixtureStore, RemoteTool, ToolRegistry};
use crate::types::{ImageRef, TaskKind, VideoRef};
use crate::workflows::{CaptionTable, Engine, KeyframeConfig, LmpConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolConfig {
    pub id: String,
    pub task: TaskKind,
    /// Directory of `<image_id>.json` fixture responses.
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    /// Base URL of a tool service.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub timeout_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Scripted {
        #[serde(default)]
        script: Option<PathBuf>,
    },
    Remote(RemoteBackend),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Scripted { script: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RagConfig {
    #[serde(default)]
    pub knowledge_dir: Option<PathBuf>,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
    #[serde(default = "default_chunk_overlap")]
    pub chunk_overlap: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub embedder: Embedder,
}

fn default_chunk_size() -> usize {
    DEFAULT_CHUNK_SIZE
}
fn default_chunk_overlap() -> usize {
    DEFAULT_CHUNK_OVERLAP
}
fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

impl Default for RagConfig {
    fn default() -> Self {
        Self {
            knowledge_dir: None,
            chunk_size: DEFAULT_CHUNK_SIZE,
            chunk_overlap: DEFAULT_CHUNK_OVERLAP,
            top_k: DEFAULT_TOP_K,
            embedder: Embedder::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Growth-chart CSV.
    #[serde(default)]
    pub charts: Option<PathBuf>,
    #[serde(default)]
    pub routing: Option<PathBuf>,
    #[serde(default)]
    pub synonyms: Option<PathBuf>,
    #[serde(default)]
    pub captioning: Option<PathBuf>,
    /// Where `ask --item` looks up `<image>.json|png|pgm`.
    #[serde(default)]
    pub images_dir: Option<PathBuf>,
    /// Let the report writer reword reports.
    #[serde(default)]
    pub polish: bool,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub arbitration: ArbitrationPolicy,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub rag: RagConfig,
    #[serde(default)]
    pub keyframes: KeyframeConfig,
    #[serde(default)]
    pub reflection: ReflectionConfig,
    #[serde(default)]
    pub lmp: Option<LmpConfig>,
    #[serde(default)]
    pub tools: Vec<ToolConfig>,
    #[serde(default)]
    pub experts: Vec<ExpertSpec>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn env_re() -> Regex {
    Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("valid regex")
}

/// Expands `${NAME}` from the environment; unset variables are an error.
pub fn interpolate_env(value: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String> {
    let re = env_re();
    let mut missing = None;
    let out = re.replace_all(value, |c: &regex::Captures| match lookup(&c[1]) {
        Some(v) => v,
        None => {
            missing.get_or_insert_with(|| c[1].to_string());
            String::new()
        }
    });
    match missing {
        Some(name) => Err(Error::Config(format!("environment variable {name} is not set"))),
        None => Ok(out.into_owned()),
    }
}

impl Config {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        Self::parse_with_env(text, base_dir, |k| std::env::var(k).ok())
    }

    pub fn parse_with_env(text: &str, base_dir: &Path, env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        if let BackendConfig::Remote(r) = &mut cfg.backend {
            if let Some(k) = &r.api_key {
                r.api_key = Some(interpolate_env(k, &env)?);
            }
        }
        if let Embedder::Remote { api_key: Some(k), .. } = &mut cfg.rag.embedder {
            *k = interpolate_env(k, &env)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn must_exist(&self, p: &Option<PathBuf>, what: &str) -> Result<()> {
        if let Some(p) = p {
            let full = self.resolve(p);
            if !full.exists() {
                return Err(Error::Config(format!("{what} {} does not exist", full.display())));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.fusion.validate()?;
        if !(self.arbitration.tool_weight.is_finite() && self.arbitration.tool_weight > 0.0) {
            return Err(Error::Config("arbitration.tool_weight must be positive".into()));
        }
        if self.rag.top_k == 0 || self.rag.chunk_size <= self.rag.chunk_overlap {
            return Err(Error::Config("rag needs top_k >= 1 and chunk_size > chunk_overlap".into()));
        }
        let k = &self.keyframes;
        if !(k.threshold > 0.0 && k.threshold < 1.0) || k.window == 0 || k.max_per_plane == 0 {
            return Err(Error::Config(
                "keyframes need threshold in (0,1), window >= 1 and max_per_plane >= 1".into(),
            ));
        }
        let r = &self.reflection;
        if !(0.0 <= r.low_percentile && r.low_percentile < r.high_percentile && r.high_percentile <= 100.0) {
            return Err(Error::Config("reflection percentiles must satisfy 0 <= low < high <= 100".into()));
        }
        self.must_exist(&self.charts, "chart file")?;
        self.must_exist(&self.routing, "routing table")?;
        self.must_exist(&self.synonyms, "synonym table")?;
        self.must_exist(&self.captioning, "captioning table")?;
        self.must_exist(&self.images_dir, "image directory")?;
        self.must_exist(&self.rag.knowledge_dir, "knowledge directory")?;
        if let BackendConfig::Scripted { script } = &self.backend {
            self.must_exist(script, "voter script")?;
        }
        for t in &self.tools {
            match (&t.fixtures, &t.endpoint) {
                (Some(_), None) => self.must_exist(&t.fixtures, &format!("fixture directory of {}", t.id))?,
                (None, Some(_)) => {}
                _ => {
                    return Err(Error::Config(format!(
                        "tool {} needs exactly one of `fixtures` or `endpoint`",
                        t.id
                    )))
                }
            }
        }
        for e in &self.experts {
            e.validate()?;
            if let Some(t) = e.tools.iter().find(|t| !self.tools.iter().any(|c| &c.id == *t)) {
                return Err(Error::Config(format!("expert {} uses unknown tool {t}", e.id)));
            }
        }
        Ok(())
    }

    pub fn build_registry(&self) -> Result<ToolRegistry> {
        let mut reg = ToolRegistry::new();
        for t in &self.tools {
            let adapter = match (&t.fixtures, &t.endpoint) {
                (Some(dir), _) => Adapter::InProcess(Arc::new(FixtureStore::load_dir(&self.resolve(dir))?)),
                (None, Some(url)) => {
                    let mut client = RemoteTool::new(url.clone());
                    if let Some(ms) = t.timeout_ms {
                        client = client.with_timeout(Duration::from_millis(ms));
                    }
                    Adapter::Remote(client)
                }
                (None, None) => unreachable!("validated"),
            };
            reg.register(t.id.clone(), t.task, adapter)?;
        }
        Ok(reg)
    }

    pub fn build_backend(&self) -> Result<TextBackend> {
        Ok(match &self.backend {
            BackendConfig::Scripted { script: Some(p) } => TextBackend::Scripted(ScriptedBackend::load(&self.resolve(p))?),
            BackendConfig::Scripted { script: None } => TextBackend::Scripted(ScriptedBackend::new()),
            BackendConfig::Remote(r) => TextBackend::Remote(r.clone()),
        })
    }

    pub fn build_engine(&self) -> Result<Engine> {
        let mut e = Engine::new(self.build_registry()?, self.experts.clone());
        if let Some(p) = &self.routing {
            e.routing = RoutingTable::load(&self.resolve(p))?;
        }
        if let Some(p) = &self.synonyms {
            e.synonyms = SynonymTable::load(&self.resolve(p))?;
        }
        if let Some(p) = &self.captioning {
            let p = self.resolve(p);
            e.captions = CaptionTable::parse(&std::fs::read_to_string(&p).map_err(|err| Error::io(&p, err))?)?;
        }
        if let Some(p) = &self.charts {
            e.charts = GrowthCharts::load(&self.resolve(p))?;
        }
        if let Some(dir) = &self.rag.knowledge_dir {
            let docs = load_knowledge_dir(&self.resolve(dir))?;
            e.index = Some(VectorIndex::from_documents(
                self.rag.embedder.clone(),
                &docs,
                self.rag.chunk_size,
                self.rag.chunk_overlap,
            )?);
        }
        e.backend = self.build_backend()?;
        e.fusion = self.fusion.clone();
        e.arbitration = self.arbitration.clone();
        e.top_k = self.rag.top_k;
        e.reflection = self.reflection;
        e.keyframes = self.keyframes.clone();
        e.lmp = self.lmp.clone();
        e.polish = self.polish;
        Ok(e)
    }

    /// Finds `<id>.json`, `<id>.png` or `<id>.pgm` in the image directory.
    pub fn find_image(&self, id: &str) -> Result<PathBuf> {
        let dir = self
            .images_dir
            .as_ref()
            .map(|d| self.resolve(d))
            .ok_or_else(|| Error::Config("images_dir is not configured".into()))?;
        ["json", "png", "pgm"]
            .iter()
            .map(|ext| dir.join(format!("{id}.{ext}")))
            .find(|p| p.exists())
            .ok_or_else(|| Error::Config(format!("no image {id} in {}", dir.display())))
    }
}

/// Reads an image: serialized `ImageRef` JSON, or PNG/PGM with the given
/// pixel spacing (id = file stem).
pub fn load_image(path: &Path, spacing_mm_per_px: f64) -> Result<ImageRef> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return Ok(serde_json::from_str(&text)?);
    }
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let g = img.to_luma8();
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    ImageRef::new(id, g.width(), g.height(), g.into_raw(), spacing_mm_per_px, path.display().to_string())
}

/// Reads every image file of a directory, in name order, as one video.
pub fn load_frames(dir: &Path, spacing_mm_per_px: f64, frame_rate: f64) -> Result<VideoRef> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| ["json", "png", "pgm"].contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    let frames = paths
        .iter()
        .map(|p| load_image(p, spacing_mm_per_px))
        .collect::<Result<Vec<_>>>()?;
    let id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    VideoRef::new(id, frames, frame_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_only_expands_known_variables() {
        let env = |k: &str| (k == "KEY").then(|| "s3cret".to_string());
        assert_eq!(interpolate_env("Bearer ${KEY}", env).unwrap(), "Bearer s3cret");
        assert!(interpolate_env("${NOPE}", env).is_err());
    }

    #[test]
    fn credentials_are_interpolated_other_fields_are_not() {
        let text = r#"
            images_dir = "."
            [backend]
            mode = "remote"
            endpoint = "http://localhost:1/${KEY}"
            model = "m"
            api_key = "${KEY}"
        "#;
        let cfg = Config::parse_with_env(text, Path::new("."), |_| Some("abc".into())).unwrap();
        let BackendConfig::Remote(r) = &cfg.backend else { panic!() };
        assert_eq!(r.api_key.as_deref(), Some("abc"));
        assert_eq!(r.endpoint, "http://localhost:1/${KEY}");
    }

    #[test]
    fn rejects_out_of_range_constants_and_missing_files() {
        assert!(Config::parse("[keyframes]\nthreshold = 1.5\n", Path::new(".")).is_err());
        assert!(Config::parse("charts = \"no/such.csv\"\n", Path::new(".")).is_err());
        assert!(Config::parse("[rag]\nchunk_size = 10\nchunk_overlap = 10\n", Path::new(".")).is_err());
        let t = "[[tools]]\nid = \"t\"\ntask = \"hc\"\n";
        assert!(Config::parse(t, Path::new(".")).is_err());
    }
}
