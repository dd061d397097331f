//! Generation actions: prompt rendering, provider configuration, and
//! sampling candidate implementations from a code model or a local corpus.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::lql::render_lql;
use crate::par::{map_ordered, Parallelism};
use crate::pipeline::{ActionDecl, StudyScript};
use crate::srm::{Implementation, StimulusMatrix};
use crate::value::Value;

pub const DEFAULT_REQUEST_TIMEOUT_MS: u64 = 60_000;
pub const OPENAI_BASE_URL: &str = "https://api.openai.com/v1";
pub const OLLAMA_BASE_URL: &str = "http://localhost:11434/v1";

const PLACEHOLDERS: [&str; 3] = ["lql", "matrixId", "name"];

#[derive(Debug, Error, PartialEq)]
pub enum GenerateError {
    #[error("unknown placeholder `{{{{{0}}}}}`")]
    UnknownPlaceholder(String),
    #[error("prompt `{0}` has an empty body")]
    EmptyPrompt(String),
    #[error("provider config: {0}")]
    Config(String),
    #[error("mock directory {path}: {message}")]
    MockDir { path: String, message: String },
    #[error("provider at {url} is unreachable: {message}")]
    Unavailable { url: String, message: String },
    #[error("provider returned HTTP {status}: {excerpt}")]
    Http { status: u16, excerpt: String },
    #[error("provider request timed out after {0} ms")]
    Timeout(u64),
    #[error("malformed provider response: {0}")]
    Malformed(String),
}

impl GenerateError {
    /// The provider could not be reached at all (as opposed to answering badly).
    pub fn is_unavailable(&self) -> bool {
        matches!(self, GenerateError::Unavailable { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub body: String,
}

/// Names inside `{{ }}` in order of appearance.
fn placeholders(body: &str) -> impl Iterator<Item = (usize, usize, &str)> + '_ {
    let mut from = 0;
    std::iter::from_fn(move || {
        let start = from + body[from..].find("{{")?;
        let end = start + 2 + body[start + 2..].find("}}")?;
        from = end + 2;
        Some((start, end + 2, body[start + 2..end].trim()))
    })
}

impl PromptTemplate {
    pub fn check(&self) -> Result<(), GenerateError> {
        if self.body.trim().is_empty() {
            return Err(GenerateError::EmptyPrompt(self.id.clone()));
        }
        match placeholders(&self.body).find(|(_, _, name)| !PLACEHOLDERS.contains(name)) {
            Some((_, _, name)) => Err(GenerateError::UnknownPlaceholder(name.to_string())),
            None => Ok(()),
        }
    }
}

pub fn render_prompt(t: &PromptTemplate, m: &StimulusMatrix) -> Result<String, GenerateError> {
    t.check()?;
    let mut out = String::with_capacity(t.body.len());
    let mut last = 0;
    for (start, end, name) in placeholders(&t.body) {
        out.push_str(&t.body[last..start]);
        match name {
            "lql" => out.push_str(&render_lql(&m.signature)),
            "matrixId" => out.push_str(&m.id),
            "name" => out.push_str(&m.signature.name),
            _ => unreachable!("checked"),
        }
        last = end;
    }
    out.push_str(&t.body[last..]);
    Ok(out)
}

/// Contents of the first fenced block, or the whole response trimmed.
pub fn extract_code(response: &str) -> String {
    let Some(open) = response.find("```") else {
        return response.trim().to_string();
    };
    let after = &response[open + 3..];
    // The rest of the opening line is a language tag.
    let body = match after.find('\n') {
        Some(nl) => &after[nl + 1..],
        None => return String::new(),
    };
    let inner = match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    };
    inner.trim().to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provider {
    OpenAi,
    Ollama,
    Mock,
}

impl Provider {
    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "openai" => Some(Provider::OpenAi),
            "ollama" => Some(Provider::Ollama),
            "mock" => Some(Provider::Mock),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Provider::OpenAi => "openai",
            Provider::Ollama => "ollama",
            Provider::Mock => "mock",
        }
    }
}

#[derive(Clone, PartialEq)]
pub struct ProviderConfig {
    pub provider: Provider,
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub samples: usize,
    pub temperature: Option<f64>,
    pub request_timeout_ms: u64,
    pub mock_dir: Option<PathBuf>,
    /// Ask for all samples in one request (`n = samples`).
    pub batch: bool,
    pub parallelism: usize,
}

impl fmt::Debug for ProviderConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProviderConfig")
            .field("provider", &self.provider)
            .field("base_url", &self.base_url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("model", &self.model)
            .field("samples", &self.samples)
            .field("temperature", &self.temperature)
            .field("request_timeout_ms", &self.request_timeout_ms)
            .field("mock_dir", &self.mock_dir)
            .field("batch", &self.batch)
            .field("parallelism", &self.parallelism)
            .finish()
    }
}

fn config_str(script: &StudyScript, action: &ActionDecl, key: &str) -> Result<Option<String>, GenerateError> {
    match script.config_value(action, key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Str(s)) => Ok(Some(s)),
        Some(other) => Err(GenerateError::Config(format!("`{key}` must be a string, found {other}"))),
    }
}

fn config_int(script: &StudyScript, action: &ActionDecl, key: &str) -> Result<Option<i64>, GenerateError> {
    match script.config_value(action, key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Int(n)) => Ok(Some(n)),
        Some(other) => Err(GenerateError::Config(format!("`{key}` must be an integer, found {other}"))),
    }
}

fn positive(key: &str, n: i64) -> Result<u64, GenerateError> {
    u64::try_from(n)
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| GenerateError::Config(format!("`{key}` must be positive, found {n}")))
}

impl ProviderConfig {
    /// Reads provider settings from an action's config (falling back to
    /// globals). `apiKey = "env:VAR"` is resolved from the environment.
    pub fn from_action(script: &StudyScript, action: &ActionDecl) -> Result<Self, GenerateError> {
        let provider = match config_str(script, action, "provider")? {
            Some(name) => Provider::parse(&name).ok_or_else(|| GenerateError::Config(format!("unknown provider `{name}`")))?,
            None => action
                .implied_provider()
                .and_then(Provider::parse)
                .ok_or_else(|| GenerateError::Config("no provider configured".into()))?,
        };
        let base_url = match config_str(script, action, "baseUrl")? {
            Some(url) => url,
            None => match provider {
                Provider::Ollama => match script.config_value(action, "servers") {
                    Some(Value::List(servers)) => match servers.first() {
                        Some(Value::Str(s)) => format!("{}/v1", s.trim_end_matches('/')),
                        _ => OLLAMA_BASE_URL.to_string(),
                    },
                    _ => OLLAMA_BASE_URL.to_string(),
                },
                _ => OPENAI_BASE_URL.to_string(),
            },
        };
        let api_key = match config_str(script, action, "apiKey")? {
            Some(k) => match k.strip_prefix("env:") {
                Some(var) => std::env::var(var).ok().filter(|v| !v.is_empty()),
                None => {
                    if provider != Provider::Mock {
                        log::warn!("action `{}` has a literal apiKey in the script", action.name);
                    }
                    Some(k)
                }
            },
            None => None,
        };
        let model = match (config_str(script, action, "model")?, provider) {
            (Some(m), _) => m,
            (None, Provider::Mock) => "mock".to_string(),
            (None, _) => return Err(GenerateError::Config(format!("{} provider requires `model`", provider.as_str()))),
        };
        let samples = match config_int(script, action, "samples")? {
            Some(n) => positive("samples", n)? as usize,
            None => 1,
        };
        let temperature = match script.config_value(action, "temperature") {
            None | Some(Value::Null) => None,
            Some(Value::Float(t)) => Some(t),
            Some(Value::Int(t)) => Some(t as f64),
            Some(other) => return Err(GenerateError::Config(format!("`temperature` must be a number, found {other}"))),
        };
        let request_timeout_ms = match config_int(script, action, "requestTimeoutMs")? {
            Some(n) => positive("requestTimeoutMs", n)?,
            None => DEFAULT_REQUEST_TIMEOUT_MS,
        };
        let mock_dir = config_str(script, action, "mockDir")?.map(PathBuf::from);
        if provider == Provider::Mock && mock_dir.is_none() {
            return Err(GenerateError::Config("mock provider requires `mockDir`".into()));
        }
        let batch = match script.config_value(action, "batch") {
            None => false,
            Some(Value::Bool(b)) => b,
            Some(other) => return Err(GenerateError::Config(format!("`batch` must be a boolean, found {other}"))),
        };
        let parallelism = match config_int(script, action, "parallelism")? {
            Some(n) => positive("parallelism", n)? as usize,
            None => 4,
        };
        Ok(Self { provider, base_url, api_key, model, samples, temperature, request_timeout_ms, mock_dir, batch, parallelism })
    }

    /// Resolves a relative `mockDir` against the directory holding the script.
    pub fn resolve_paths(mut self, base: &Path) -> Self {
        if let Some(dir) = &self.mock_dir {
            if dir.is_relative() {
                self.mock_dir = Some(base.join(dir));
            }
        }
        self
    }

    fn scrub(&self, text: &str) -> String {
        match &self.api_key {
            Some(k) if !k.is_empty() => text.replace(k.as_str(), "<redacted>"),
            _ => text.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCandidate {
    pub impl_id: String,
    pub source_text: String,
    pub raw_response: String,
    pub provenance: BTreeMap<String, String>,
    /// Set when the response held no usable code.
    pub load_error: Option<String>,
}

impl From<GeneratedCandidate> for Implementation {
    fn from(c: GeneratedCandidate) -> Self {
        Implementation { impl_id: c.impl_id, source_text: c.source_text, provenance: c.provenance, load_error: c.load_error }
    }
}

/// Samples `cfg.samples` candidates, ordered by sample index. Ids are
/// `<prefix>-<matrixId>-s<k>`.
pub fn generate_candidates(
    cfg: &ProviderConfig,
    prompt: &str,
    prompt_id: &str,
    matrix_id: &str,
    prefix: &str,
) -> Result<Vec<GeneratedCandidate>, GenerateError> {
    let responses = match cfg.provider {
        Provider::Mock => mock_responses(cfg)?,
        Provider::OpenAi | Provider::Ollama => chat_responses(cfg, prompt)?,
    };
    Ok(responses
        .into_iter()
        .enumerate()
        .map(|(i, raw)| {
            let k = i + 1;
            let source_text = match cfg.provider {
                Provider::Mock => raw.clone(),
                _ => extract_code(&raw),
            };
            let load_error = source_text.trim().is_empty().then(|| "empty completion: no code in response".to_string());
            let provenance = BTreeMap::from([
                ("model".to_string(), cfg.model.clone()),
                ("provider".to_string(), cfg.provider.as_str().to_string()),
                ("promptId".to_string(), prompt_id.to_string()),
                ("sampleIndex".to_string(), k.to_string()),
            ]);
            GeneratedCandidate { impl_id: format!("{prefix}-{matrix_id}-s{k}"), source_text, raw_response: raw, provenance, load_error }
        })
        .collect())
}

fn mock_responses(cfg: &ProviderConfig) -> Result<Vec<String>, GenerateError> {
    let dir = cfg.mock_dir.as_deref().ok_or_else(|| GenerateError::Config("mock provider requires `mockDir`".into()))?;
    let err = |message: String| GenerateError::MockDir { path: dir.display().to_string(), message };
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| err(e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "py"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(err("no *.py files".into()));
    }
    let texts = files
        .iter()
        .map(|p| std::fs::read_to_string(p).map_err(|e| err(format!("{}: {e}", p.display()))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((0..cfg.samples).map(|i| texts[i % texts.len()].clone()).collect())
}

fn chat_responses(cfg: &ProviderConfig, prompt: &str) -> Result<Vec<String>, GenerateError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_millis(cfg.request_timeout_ms))
        .build()
        .map_err(|e| GenerateError::Config(cfg.scrub(&e.to_string())))?;
    let url = format!("{}/chat/completions", cfg.base_url.trim_end_matches('/'));
    if cfg.batch {
        let out = chat_request(cfg, &client, &url, prompt, cfg.samples)?;
        if out.len() != cfg.samples {
            return Err(GenerateError::Malformed(format!("asked for {} choices, got {}", cfg.samples, out.len())));
        }
        return Ok(out);
    }
    let indices: Vec<usize> = (0..cfg.samples).collect();
    map_ordered(&indices, Parallelism::from_threads(cfg.parallelism), |_| {
        chat_request(cfg, &client, &url, prompt, 1).map(|mut v| v.swap_remove(0))
    })
    .into_iter()
    .collect()
}

fn chat_request(
    cfg: &ProviderConfig,
    client: &reqwest::blocking::Client,
    url: &str,
    prompt: &str,
    n: usize,
) -> Result<Vec<String>, GenerateError> {
    let mut body = json!({
        "model": cfg.model,
        "messages": [{"role": "user", "content": prompt}],
    });
    if let Some(t) = cfg.temperature {
        body["temperature"] = json!(t);
    }
    if n > 1 {
        body["n"] = json!(n);
    }
    let mut req = client.post(url).json(&body);
    if let Some(key) = &cfg.api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(|e| {
        if e.is_timeout() {
            GenerateError::Timeout(cfg.request_timeout_ms)
        } else {
            GenerateError::Unavailable { url: url.to_string(), message: cfg.scrub(&e.to_string()) }
        }
    })?;
    let status = resp.status();
    let text = resp.text().map_err(|e| {
        if e.is_timeout() {
            GenerateError::Timeout(cfg.request_timeout_ms)
        } else {
            GenerateError::Malformed(cfg.scrub(&e.to_string()))
        }
    })?;
    if !status.is_success() {
        let excerpt: String = cfg.scrub(&text).chars().take(200).collect();
        return Err(GenerateError::Http { status: status.as_u16(), excerpt });
    }
    let json: Json = serde_json::from_str(&text).map_err(|e| GenerateError::Malformed(e.to_string()))?;
    let choices = json["choices"]
        .as_array()
        .ok_or_else(|| GenerateError::Malformed("response has no `choices` array".into()))?;
    if choices.is_empty() {
        return Err(GenerateError::Malformed("response has no choices".into()));
    }
    Ok(choices.iter().map(|c| c["message"]["content"].as_str().unwrap_or_default().to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::parse_study;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    fn template(body: &str) -> PromptTemplate {
        PromptTemplate { id: "p".into(), body: body.into() }
    }

    #[test]
    fn renders_lql_between_backticks() {
        let m = crate::srm::tests::base64_matrix();
        let out = render_prompt(&template("implement ```{{lql}}``` for {{matrixId}} ({{ name }})"), &m).unwrap();
        assert!(out.starts_with(&format!("implement ```{}```", render_lql(&m.signature))), "{out}");
        assert!(out.ends_with("for base64 (Base64)"));
    }

    #[test]
    fn plain_and_bad_templates() {
        let m = crate::srm::tests::base64_matrix();
        assert_eq!(render_prompt(&template("no placeholders {here}"), &m).unwrap(), "no placeholders {here}");
        assert_eq!(render_prompt(&template("{{nope}}"), &m), Err(GenerateError::UnknownPlaceholder("nope".into())));
        assert!(matches!(template("  ").check(), Err(GenerateError::EmptyPrompt(_))));
    }

    #[test]
    fn extracts_code() {
        assert_eq!(extract_code("```python\ndef f(): pass\n```"), "def f(): pass");
        assert_eq!(extract_code("Here:\n```py\nfirst()\n```\nand\n```\nsecond()\n```"), "first()");
        assert_eq!(extract_code("  def g():\n    return 1\n"), "def g():\n    return 1");
        assert_eq!(extract_code("```python\nunterminated()"), "unterminated()");
        assert_eq!(extract_code("Sorry, I can't."), "Sorry, I can't.");
        assert_eq!(extract_code("```\n```"), "");
    }

    fn script_with(config: &str) -> StudyScript {
        parse_study(&format!(
            "study \"s\" {{\n let samples = 3\n action \"g\" type = GenerateCodeOpenAI {{\n {config}\n prompt \"\"\"x\"\"\"\n }}\n}}"
        ))
        .unwrap()
    }

    fn cfg(config: &str) -> Result<ProviderConfig, GenerateError> {
        let s = script_with(config);
        ProviderConfig::from_action(&s, &s.actions[0])
    }

    #[test]
    fn config_defaults_and_overrides() {
        let c = cfg("model = \"gpt-4o-mini\"").unwrap();
        assert_eq!(c.provider, Provider::OpenAi);
        assert_eq!(c.base_url, OPENAI_BASE_URL);
        assert_eq!(c.samples, 3);
        assert_eq!(c.request_timeout_ms, DEFAULT_REQUEST_TIMEOUT_MS);
        assert!(matches!(cfg(""), Err(GenerateError::Config(_))));
        assert!(matches!(cfg("provider = \"mock\""), Err(GenerateError::Config(_))));
        let m = cfg("provider = \"mock\"\n mockDir = \"c\"").unwrap();
        assert_eq!(m.provider, Provider::Mock);
        assert_eq!(m.resolve_paths(Path::new("/base")).mock_dir.unwrap(), PathBuf::from("/base/c"));
        assert!(matches!(cfg("model = \"m\"\n samples = 0"), Err(GenerateError::Config(_))));
        let o = cfg("provider = \"ollama\"\n model = \"llama3\"\n servers = [\"http://gpu:11434/\"]").unwrap();
        assert_eq!(o.base_url, "http://gpu:11434/v1");
        assert_eq!(cfg("model = \"m\"\n temperature = 0").unwrap().temperature, Some(0.0));
    }

    #[test]
    fn api_key_is_resolved_and_redacted() {
        std::env::set_var("TDSE_TEST_KEY_1", "sk-secret-123");
        let c = cfg("model = \"m\"\n apiKey = \"env:TDSE_TEST_KEY_1\"").unwrap();
        assert_eq!(c.api_key.as_deref(), Some("sk-secret-123"));
        assert!(!format!("{c:?}").contains("sk-secret-123"));
        assert_eq!(c.scrub("bad key sk-secret-123"), "bad key <redacted>");
        assert_eq!(cfg("model = \"m\"\n apiKey = \"env:TDSE_TEST_UNSET_KEY\"").unwrap().api_key, None);
    }

    fn mock_cfg(dir: &Path, samples: usize) -> ProviderConfig {
        ProviderConfig {
            provider: Provider::Mock,
            base_url: String::new(),
            api_key: None,
            model: "mock".into(),
            samples,
            temperature: None,
            request_timeout_ms: 1000,
            mock_dir: Some(dir.to_path_buf()),
            batch: false,
            parallelism: 1,
        }
    }

    #[test]
    fn mock_cycles_sorted_files() {
        let dir = tempfile::tempdir().unwrap();
        for (name, body) in [("b.py", "B = 2\n"), ("a.py", "A = 1\n"), ("notes.txt", "skip")] {
            std::fs::write(dir.path().join(name), body).unwrap();
        }
        let out = generate_candidates(&mock_cfg(dir.path(), 5), "", "p", "m", "gen").unwrap();
        let ids: Vec<_> = out.iter().map(|c| c.impl_id.as_str()).collect();
        assert_eq!(ids, ["gen-m-s1", "gen-m-s2", "gen-m-s3", "gen-m-s4", "gen-m-s5"]);
        let texts: Vec<_> = out.iter().map(|c| c.source_text.as_str()).collect();
        assert_eq!(texts, ["A = 1\n", "B = 2\n", "A = 1\n", "B = 2\n", "A = 1\n"]);
        assert_eq!(out[3].provenance["sampleIndex"], "4");
        assert_eq!(out, generate_candidates(&mock_cfg(dir.path(), 5), "", "p", "m", "gen").unwrap());
    }

    #[test]
    fn mock_errors_and_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(generate_candidates(&mock_cfg(dir.path(), 1), "", "p", "m", "g"), Err(GenerateError::MockDir { .. })));
        std::fs::write(dir.path().join("empty.py"), "  \n").unwrap();
        let out = generate_candidates(&mock_cfg(dir.path(), 1), "", "p", "m", "g").unwrap();
        assert!(out[0].load_error.is_some());
        let missing = dir.path().join("missing");
        assert!(matches!(generate_candidates(&mock_cfg(&missing, 1), "", "p", "m", "g"), Err(GenerateError::MockDir { .. })));
    }

    type Requests = Arc<Mutex<Vec<(String, String)>>>;

    /// Serves `responses` in order, one per connection, recording request bodies.
    fn serve(responses: Vec<(u16, String)>) -> (String, Requests) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut len = 0;
                let mut head = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line.trim().is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                log.lock().unwrap().push((head, String::from_utf8(buf).unwrap()));
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (url, seen)
    }

    fn chat(content: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    fn http_cfg(url: &str, samples: usize) -> ProviderConfig {
        ProviderConfig {
            provider: Provider::OpenAi,
            base_url: url.into(),
            api_key: Some("sk-test".into()),
            model: "gpt-4o-mini".into(),
            samples,
            temperature: Some(0.2),
            request_timeout_ms: 5000,
            mock_dir: None,
            batch: false,
            parallelism: 1,
        }
    }

    #[test]
    fn one_request_per_sample() {
        let (url, seen) = serve(vec![(200, chat("```python\nA = 1\n```")), (200, chat("no code here")), (200, chat(""))]);
        let out = generate_candidates(&http_cfg(&url, 3), "write it", "p", "base64", "generate").unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].source_text, "A = 1");
        assert_eq!(out[1].source_text, "no code here");
        assert!(out[2].load_error.is_some() && out[0].load_error.is_none());
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 3);
        assert!(seen[0].0.starts_with("POST /v1/chat/completions"));
        assert!(seen[0].0.to_ascii_lowercase().contains("authorization: bearer sk-test"));
        let body: Json = serde_json::from_str(&seen[0].1).unwrap();
        assert_eq!(body["model"], "gpt-4o-mini");
        assert_eq!(body["messages"][0]["content"], "write it");
        assert_eq!(body["temperature"], 0.2);
    }

    #[test]
    fn batched_request() {
        let two = json!({"choices": [{"message": {"content": "A = 1"}}, {"message": {"content": "B = 2"}}]}).to_string();
        let (url, seen) = serve(vec![(200, two)]);
        let mut c = http_cfg(&url, 2);
        c.batch = true;
        let out = generate_candidates(&c, "x", "p", "m", "g").unwrap();
        assert_eq!(out.iter().map(|c| c.source_text.as_str()).collect::<Vec<_>>(), ["A = 1", "B = 2"]);
        assert!(seen.lock().unwrap()[0].1.contains("\"n\":2"));
    }

    #[test]
    fn http_errors_are_scrubbed() {
        let (url, _) = serve(vec![(401, "{\"error\": \"bad key sk-test\"}".into())]);
        match generate_candidates(&http_cfg(&url, 1), "x", "p", "m", "g") {
            Err(GenerateError::Http { status, excerpt }) => {
                assert_eq!(status, 401);
                assert!(excerpt.contains("<redacted>") && !excerpt.contains("sk-test"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unreachable_provider() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let err = generate_candidates(&http_cfg(&format!("http://127.0.0.1:{port}/v1"), 1), "x", "p", "m", "g").unwrap_err();
        assert!(err.is_unavailable(), "{err:?}");
    }
}
