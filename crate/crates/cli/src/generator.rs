//! Confounder generation backends behind one trait: a real HTTP LLM client
//! running the three-stage process (variable generation, distribution
//! identification, per-individual parameter inference), a deterministic
//! scripted generator driven by a proposal file, and a synthetic oracle that
//! perturbs the planted confounder.
//!
//! Every backend is checked against the request's exclusion list before a
//! proposal is returned.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use vigor_core::confounder::{sample_values, ConfounderProposal, DistributionSpec, ProposalError};
use vigor_core::dataset::Dataset;
use vigor_core::rng;

use crate::config::GeneratorSettings;

const VAR_PROMPT: &str = include_str!("../resources/prompts/var.txt");
const DIST_PROMPT: &str = include_str!("../resources/prompts/dist.txt");
const PARAM_PROMPT: &str = include_str!("../resources/prompts/param.txt");
const SYSTEM_PROMPT: &str = include_str!("../resources/prompts/system.txt");
const FORMAT_REMINDER: &str = include_str!("../resources/prompts/format_reminder.txt");

/// Re-prompts (with a format reminder appended) before a malformed LLM
/// response becomes a hard failure.
const MAX_REPROMPTS: usize = 3;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("unparseable generator output: {message}; raw response logged")]
    Format { message: String, raw: String },
    #[error("proposal name {name:?} collides with the exclusion list")]
    NameCollision { name: String },
    #[error("scripted proposal list exhausted at round {round}")]
    ScriptExhausted { round: usize },
    #[error("script file error: {0}")]
    Script(String),
    #[error("oracle backend needs a ground-truth sidecar (generator.truth_path)")]
    MissingTruth,
    #[error(transparent)]
    Proposal(#[from] ProposalError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// What the orchestrator sends a generator each round. Never contains the
/// planted confounder or the true treatment effect.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorRequest {
    pub schema_description: String,
    pub round: usize,
    /// Rendered feedback from the previous round; empty in round 1.
    pub feedback_text: String,
    pub exclusion_list: Vec<String>,
    pub n: usize,
}

impl GeneratorRequest {
    /// Builds the round request from the observable dataset schema.
    pub fn from_dataset(
        dataset: &Dataset,
        round: usize,
        feedback_text: String,
        exclusion_list: Vec<String>,
    ) -> Self {
        let schema_description = format!(
            "{} individuals; covariates: {}; treatment column t (binary); outcome column y (binary).",
            dataset.len(),
            dataset.column_names.join(", "),
        );
        Self {
            schema_description,
            round,
            feedback_text,
            exclusion_list,
            n: dataset.len(),
        }
    }
}

/// One generation backend.
pub trait ConfounderGenerator {
    fn generate(&mut self, request: &GeneratorRequest) -> Result<ConfounderProposal, GeneratorError>;
}

fn reject_excluded(
    proposal: ConfounderProposal,
    request: &GeneratorRequest,
) -> Result<ConfounderProposal, GeneratorError> {
    if request
        .exclusion_list
        .iter()
        .any(|n| n.eq_ignore_ascii_case(&proposal.name))
    {
        return Err(GeneratorError::NameCollision { name: proposal.name });
    }
    if proposal.values.len() != request.n {
        return Err(GeneratorError::Proposal(ProposalError::LengthMismatch {
            expected: request.n,
            got: proposal.values.len(),
        }));
    }
    Ok(proposal)
}

// ---------------------------------------------------------------------------
// Scripted backend
// ---------------------------------------------------------------------------

/// One entry of the script file: either explicit values, per-row parameters,
/// or shared parameters expanded to every row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub name: String,
    #[serde(default)]
    pub explanation: String,
    /// "normal" or "bernoulli".
    pub kind: String,
    #[serde(default)]
    pub mean: Option<f64>,
    #[serde(default)]
    pub std: Option<f64>,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub per_row: Option<Vec<Vec<f64>>>,
    /// Explicit values; bypasses sampling entirely.
    #[serde(default)]
    pub values: Option<Vec<f64>>,
}

impl ScriptEntry {
    fn distribution(&self, n: usize) -> Result<DistributionSpec, GeneratorError> {
        match self.kind.as_str() {
            "normal" => {
                let params = if let Some(rows) = &self.per_row {
                    rows.iter()
                        .map(|r| match r.as_slice() {
                            [m, s] => Ok((*m, *s)),
                            other => Err(GeneratorError::Script(format!(
                                "normal per_row entries need [mean, std], got {other:?}"
                            ))),
                        })
                        .collect::<Result<Vec<_>, _>>()?
                } else {
                    let m = self.mean.unwrap_or(0.0);
                    let s = self.std.unwrap_or(1.0);
                    vec![(m, s); n]
                };
                Ok(DistributionSpec::Normal { params })
            }
            "bernoulli" => {
                let params = if let Some(rows) = &self.per_row {
                    rows.iter()
                        .map(|r| match r.as_slice() {
                            [p] => Ok(*p),
                            other => Err(GeneratorError::Script(format!(
                                "bernoulli per_row entries need [p], got {other:?}"
                            ))),
                        })
                        .collect::<Result<Vec<_>, _>>()?
                } else {
                    vec![self.p.unwrap_or(0.5); n]
                };
                Ok(DistributionSpec::Bernoulli { params })
            }
            other => Err(GeneratorError::Script(format!("unknown distribution kind {other:?}"))),
        }
    }
}

/// Replays an ordered list of proposals: entry `k-1` answers round `k`.
pub struct ScriptedGenerator {
    entries: Vec<ScriptEntry>,
    sample_seed: u64,
}

impl ScriptedGenerator {
    pub fn from_path(path: &Path, sample_seed: u64) -> Result<Self, GeneratorError> {
        let raw = fs::read_to_string(path)?;
        let entries: Vec<ScriptEntry> =
            serde_json::from_str(&raw).map_err(|e| GeneratorError::Script(e.to_string()))?;
        Ok(Self { entries, sample_seed })
    }

    pub fn from_entries(entries: Vec<ScriptEntry>, sample_seed: u64) -> Self {
        Self { entries, sample_seed }
    }
}

impl ConfounderGenerator for ScriptedGenerator {
    fn generate(&mut self, request: &GeneratorRequest) -> Result<ConfounderProposal, GeneratorError> {
        let entry = self
            .entries
            .get(request.round - 1)
            .ok_or(GeneratorError::ScriptExhausted { round: request.round })?;
        let distribution = entry.distribution(request.n)?;
        let values = match &entry.values {
            Some(v) => v.clone(),
            None => sample_values(
                &distribution,
                request.n,
                self.sample_seed.wrapping_add(request.round as u64),
            )?,
        };
        reject_excluded(
            ConfounderProposal {
                name: entry.name.clone(),
                explanation: entry.explanation.clone(),
                distribution,
                values,
            },
            request,
        )
    }
}

// ---------------------------------------------------------------------------
// Oracle backend
// ---------------------------------------------------------------------------

/// Perturbs the planted confounder: round `k` returns `U* + sigma_k * N(0,1)`,
/// a dial from perfect confounder (sigma 0) to pure noise. The corruption of
/// the encoder/decoder input happens downstream (min-max scaling is part of
/// model input preparation), so sigma 0 returns the planted values verbatim.
pub struct OracleGenerator {
    u_star: Vec<f64>,
    noise_schedule: Vec<f64>,
    sample_seed: u64,
}

impl OracleGenerator {
    pub fn new(u_star: Vec<f64>, noise_schedule: Vec<f64>, sample_seed: u64) -> Self {
        let noise_schedule = if noise_schedule.is_empty() { vec![0.0] } else { noise_schedule };
        Self { u_star, noise_schedule, sample_seed }
    }
}

impl ConfounderGenerator for OracleGenerator {
    fn generate(&mut self, request: &GeneratorRequest) -> Result<ConfounderProposal, GeneratorError> {
        let sigma =
            self.noise_schedule[(request.round - 1).min(self.noise_schedule.len() - 1)];
        let distribution = DistributionSpec::Normal {
            params: self.u_star.iter().map(|&m| (m, sigma)).collect(),
        };
        let values = sample_values(
            &distribution,
            request.n,
            self.sample_seed.wrapping_add(request.round as u64),
        )?;
        reject_excluded(
            ConfounderProposal {
                name: format!("Oracle Confounder r{} (noise {})", request.round, sigma),
                explanation: String::from(
                    "Synthetic oracle proposal derived from the planted confounder.",
                ),
                distribution,
                values,
            },
            request,
        )
    }
}

// ---------------------------------------------------------------------------
// LLM response parsing
// ---------------------------------------------------------------------------

/// Extracts the outermost balanced `{...}` block, tolerating surrounding
/// prose, and parses it as JSON. Truncated or unbalanced payloads fail closed.
pub fn parse_llm_response(raw: &str) -> Result<serde_json::Value, GeneratorError> {
    let start = raw.find('{').ok_or_else(|| GeneratorError::Format {
        message: String::from("no JSON object found"),
        raw: raw.to_string(),
    })?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, ch) in raw[start..].char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_string = false;
            }
            continue;
        }
        match ch {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    let block = &raw[start..start + offset + 1];
                    return serde_json::from_str(block).map_err(|e| GeneratorError::Format {
                        message: format!("JSON parse failed: {e}"),
                        raw: raw.to_string(),
                    });
                }
            }
            _ => {}
        }
    }
    Err(GeneratorError::Format {
        message: String::from("unbalanced JSON object (truncated payload?)"),
        raw: raw.to_string(),
    })
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

/// Chat-completions client implementing the three-stage generation process.
/// Parameter inference is chunked (`chunk_size` rows per call) and
/// reassembled by row index.
pub struct LlmHttpGenerator {
    settings: GeneratorSettings,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    /// Row-rendered covariate table (no t/y, no ground truth).
    row_table: Vec<String>,
    capture_counter: usize,
}

impl LlmHttpGenerator {
    pub fn new(settings: GeneratorSettings, dataset: &Dataset) -> Result<Self, GeneratorError> {
        let api_key = std::env::var(&settings.api_key_env).ok();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(settings.timeout_secs))
            .build()
            .map_err(|e| GeneratorError::Transport { attempts: 0, message: e.to_string() })?;
        let row_table = (0..dataset.len())
            .map(|r| {
                let cells: Vec<String> = dataset
                    .column_names
                    .iter()
                    .enumerate()
                    .map(|(c, name)| format!("{name}={:.4}", dataset.x.get(r, c)))
                    .collect();
                format!("{r}: {}", cells.join(", "))
            })
            .collect();
        Ok(Self {
            settings,
            api_key,
            client,
            row_table,
            capture_counter: 0,
        })
    }

    fn capture(&mut self, kind: &str, round: usize, body: &str) {
        if let Some(dir) = self.settings.capture_dir.clone() {
            let _ = fs::create_dir_all(&dir);
            let path: PathBuf =
                dir.join(format!("round{round}_{:03}_{kind}.json", self.capture_counter));
            let _ = fs::write(path, body);
            self.capture_counter += 1;
        }
    }

    fn post_chat(&mut self, round: usize, system: &str, user: &str) -> Result<String, GeneratorError> {
        let body = ChatRequest {
            model: &self.settings.model,
            messages: vec![
                ChatMessage { role: "system", content: system },
                ChatMessage { role: "user", content: user },
            ],
            temperature: self.settings.temperature,
        };
        let body_json = serde_json::to_string(&body).expect("request serializes");
        self.capture("request", round, &body_json);

        let mut last_err = String::new();
        let attempts = self.settings.max_retries.max(1);
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(500 * attempt as u64));
            }
            let mut req = self
                .client
                .post(&self.settings.endpoint)
                .header("Content-Type", "application/json")
                .body(body_json.clone());
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", format!("Bearer {key}"));
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    if !status.is_success() {
                        last_err = format!("HTTP {status}: {text}");
                        continue;
                    }
                    self.capture("response", round, &text);
                    let parsed: ChatResponse =
                        serde_json::from_str(&text).map_err(|e| GeneratorError::Format {
                            message: format!("response envelope: {e}"),
                            raw: text.clone(),
                        })?;
                    let content = parsed
                        .choices
                        .first()
                        .map(|c| c.message.content.clone())
                        .ok_or_else(|| GeneratorError::Format {
                            message: String::from("empty choices"),
                            raw: text,
                        })?;
                    return Ok(content);
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(GeneratorError::Transport { attempts, message: last_err })
    }

    /// Sends `user`, re-prompting with a format reminder on parse failures.
    fn ask_json(
        &mut self,
        round: usize,
        system: &str,
        user: &str,
    ) -> Result<serde_json::Value, GeneratorError> {
        let mut prompt = user.to_string();
        let mut last = None;
        for _ in 0..MAX_REPROMPTS {
            let content = self.post_chat(round, system, &prompt)?;
            match parse_llm_response(&content) {
                Ok(value) => return Ok(value),
                Err(e) => {
                    prompt.push_str(FORMAT_REMINDER);
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn infer_params(
        &mut self,
        request: &GeneratorRequest,
        system: &str,
        name: &str,
        explanation: &str,
        kind: &str,
    ) -> Result<DistributionSpec, GeneratorError> {
        let n = request.n;
        let chunk = self.settings.chunk_size.max(1);
        let mut normal: Vec<Option<(f64, f64)>> = vec![None; n];
        let mut bern: Vec<Option<f64>> = vec![None; n];
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let rows = self.row_table[start..end].join("\n");
            let user = PARAM_PROMPT
                .replace("{name}", name)
                .replace("{explanation}", explanation)
                .replace("{kind}", kind)
                .replace("{rows}", &rows);
            let value = self.ask_json(request.round, system, &user)?;
            let params = value
                .get("params")
                .and_then(|p| p.as_array())
                .ok_or_else(|| GeneratorError::Format {
                    message: String::from("missing params array"),
                    raw: value.to_string(),
                })?;
            for entry in params {
                let row = entry.get("row").and_then(|r| r.as_u64()).ok_or_else(|| {
                    GeneratorError::Format {
                        message: String::from("param entry missing row index"),
                        raw: value.to_string(),
                    }
                })? as usize;
                if row < start || row >= end {
                    return Err(GeneratorError::Format {
                        message: format!("row {row} outside chunk {start}..{end}"),
                        raw: value.to_string(),
                    });
                }
                if kind == "normal" {
                    let mean = entry.get("mean").and_then(|v| v.as_f64());
                    let std = entry.get("std").and_then(|v| v.as_f64());
                    match (mean, std) {
                        (Some(m), Some(s)) => normal[row] = Some((m, s)),
                        _ => {
                            return Err(GeneratorError::Format {
                                message: format!("row {row}: missing mean/std"),
                                raw: value.to_string(),
                            })
                        }
                    }
                } else {
                    let p = entry.get("p").and_then(|v| v.as_f64());
                    match p {
                        Some(p) => bern[row] = Some(p),
                        None => {
                            return Err(GeneratorError::Format {
                                message: format!("row {row}: missing p"),
                                raw: value.to_string(),
                            })
                        }
                    }
                }
            }
            let missing: Vec<usize> = (start..end)
                .filter(|&r| {
                    if kind == "normal" { normal[r].is_none() } else { bern[r].is_none() }
                })
                .collect();
            if !missing.is_empty() {
                return Err(GeneratorError::Format {
                    message: format!("chunk {start}..{end} left rows without params: {missing:?}"),
                    raw: value.to_string(),
                });
            }
            start = end;
        }
        Ok(if kind == "normal" {
            DistributionSpec::Normal {
                params: normal.into_iter().map(|p| p.expect("checked")).collect(),
            }
        } else {
            DistributionSpec::Bernoulli {
                params: bern.into_iter().map(|p| p.expect("checked")).collect(),
            }
        })
    }
}

impl ConfounderGenerator for LlmHttpGenerator {
    fn generate(&mut self, request: &GeneratorRequest) -> Result<ConfounderProposal, GeneratorError> {
        let system = SYSTEM_PROMPT.replace("{schema}", &request.schema_description);

        // Stage 1: variable generation. Feedback from the previous round is
        // included verbatim from round 2 on, never in round 1.
        let feedback_block = if request.round > 1 && !request.feedback_text.is_empty() {
            format!("\nFeedback from the previous round:\n{}\n", request.feedback_text)
        } else {
            String::new()
        };
        let exclusions = if request.exclusion_list.is_empty() {
            String::from("none")
        } else {
            request.exclusion_list.join(", ")
        };
        let user = VAR_PROMPT
            .replace("{round}", &request.round.to_string())
            .replace("{feedback_block}", &feedback_block)
            .replace("{exclusions}", &exclusions);
        let var = self.ask_json(request.round, &system, &user)?;
        let name = var
            .get("name")
            .and_then(|v| v.as_str())
            .ok_or_else(|| GeneratorError::Format {
                message: String::from("missing name"),
                raw: var.to_string(),
            })?
            .to_string();
        let explanation = var
            .get("explanation")
            .and_then(|v| v.as_str())
            .unwrap_or_default()
            .to_string();

        // Stage 2: distribution identification.
        let user = DIST_PROMPT
            .replace("{name}", &name)
            .replace("{explanation}", &explanation);
        let dist = self.ask_json(request.round, &system, &user)?;
        let kind = dist
            .get("distribution")
            .and_then(|v| v.as_str())
            .map(str::to_lowercase)
            .ok_or_else(|| GeneratorError::Format {
                message: String::from("missing distribution"),
                raw: dist.to_string(),
            })?;
        if kind != "normal" && kind != "bernoulli" {
            return Err(GeneratorError::Format {
                message: format!("unsupported distribution {kind:?}"),
                raw: dist.to_string(),
            });
        }

        // Stage 3: per-individual parameter inference, chunked.
        let distribution = self.infer_params(request, &system, &name, &explanation, &kind)?;
        let values = sample_values(
            &distribution,
            request.n,
            self.settings.sample_seed.wrapping_add(request.round as u64),
        )?;
        reject_excluded(
            ConfounderProposal { name, explanation, distribution, values },
            request,
        )
    }
}

/// Convenience: correlation attenuation helper for oracle tests; the
/// theoretical correlation of `U* + sigma N` with `U*` is `1/sqrt(1+sigma^2)`.
pub fn oracle_expected_correlation(sigma: f64) -> f64 {
    1.0 / (1.0 + sigma * sigma).sqrt()
}
