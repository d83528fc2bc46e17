//! Client for an external target labeler (a hosted language model).
//!
//! The request is a prompt naming the taxonomy followed by the post; the
//! response is expected to be a single category name. Tests and offline runs
//! use [`ReplayTransport`], which answers from a file of recorded
//! request/response pairs. The HTTP transport is compiled only with the
//! `live-labeler` feature.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::lexicon::Lexicon;
use super::taxonomy::TargetTaxonomy;
use crate::error::{Error, Result};
use crate::losses::SoftLabel;

pub const ENDPOINT_VAR: &str = "DISENTANGLE_LABELER_URL";
pub const KEY_VAR: &str = "DISENTANGLE_LABELER_KEY";
pub const MODEL_VAR: &str = "DISENTANGLE_LABELER_MODEL";

/// `{categories}` and `{post}` are substituted.
pub const DEFAULT_TEMPLATE: &str = "Which group of people is the post below about? \
Reply with exactly one category from this list: {categories}.\n\nPost: {post}\nCategory:";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate(pub String);

impl Default for PromptTemplate {
    fn default() -> Self {
        Self(DEFAULT_TEMPLATE.to_string())
    }
}

impl PromptTemplate {
    pub fn render(&self, taxonomy: &TargetTaxonomy, post: &str) -> String {
        self.0
            .replace("{categories}", &taxonomy.classes().join(", "))
            .replace("{post}", post)
    }
}

pub trait Transport {
    /// Sends one prompt and returns the raw reply text.
    fn send(&mut self, request: &str) -> std::result::Result<String, String>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: String,
    pub response: String,
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn send(&mut self, request: &str) -> std::result::Result<String, String> {
        (**self).send(request)
    }
}

/// Answers from recorded exchanges; unknown requests fail like a network
/// error would.
#[derive(Clone, Debug, Default)]
pub struct ReplayTransport {
    replies: HashMap<String, String>,
    pub calls: usize,
}

impl ReplayTransport {
    pub fn new(exchanges: impl IntoIterator<Item = Exchange>) -> Self {
        Self {
            replies: exchanges
                .into_iter()
                .map(|e| (e.request, e.response))
                .collect(),
            calls: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path)?;
        let mut ex = Vec::new();
        for (n, line) in body
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            ex.push(
                serde_json::from_str::<Exchange>(line).map_err(|e| {
                    Error::Labeler(format!("{} line {}: {e}", path.display(), n + 1))
                })?,
            );
        }
        Ok(Self::new(ex))
    }
}

impl Transport for ReplayTransport {
    fn send(&mut self, request: &str) -> std::result::Result<String, String> {
        self.calls += 1;
        self.replies
            .get(request)
            .cloned()
            .ok_or_else(|| "no recorded response for request".to_string())
    }
}

/// Connection settings for a live labeler, read from the environment.
#[derive(Clone, Debug)]
pub struct LiveSettings {
    pub endpoint: String,
    pub api_key: String,
    pub model: String,
}

impl LiveSettings {
    pub fn from_env() -> Result<Self> {
        let get = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        let (Some(endpoint), Some(api_key)) = (get(ENDPOINT_VAR), get(KEY_VAR)) else {
            return Err(Error::Labeler(format!(
                "live labeling needs credentials: set {ENDPOINT_VAR} to a chat-completions URL and {KEY_VAR} to its API key \
                 (optionally {MODEL_VAR}), or use replay fixtures instead"
            )));
        };
        Ok(Self {
            endpoint,
            api_key,
            model: get(MODEL_VAR).unwrap_or_else(|| "gpt-4".into()),
        })
    }
}

#[cfg(feature = "live-labeler")]
pub struct HttpTransport {
    settings: LiveSettings,
    agent: ureq::Agent,
}

#[cfg(feature = "live-labeler")]
impl HttpTransport {
    pub fn new(settings: LiveSettings) -> Self {
        Self {
            settings,
            agent: ureq::Agent::new_with_defaults(),
        }
    }
}

#[cfg(feature = "live-labeler")]
impl Transport for HttpTransport {
    fn send(&mut self, request: &str) -> std::result::Result<String, String> {
        let body = serde_json::json!({
            "model": self.settings.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": request}],
        });
        let mut resp = self
            .agent
            .post(&self.settings.endpoint)
            .header(
                "Authorization",
                &format!("Bearer {}", self.settings.api_key),
            )
            .send_json(&body)
            .map_err(|e| e.to_string())?;
        let v: serde_json::Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| "response has no message content".to_string())
    }
}

/// Builds the live transport, or explains why it is unavailable.
pub fn live_transport() -> Result<Box<dyn Transport>> {
    let settings = LiveSettings::from_env()?;
    #[cfg(feature = "live-labeler")]
    {
        Ok(Box::new(HttpTransport::new(settings)))
    }
    #[cfg(not(feature = "live-labeler"))]
    {
        let _ = settings;
        Err(Error::Labeler(
            "this build has no HTTP transport; rebuild with `--features live-labeler`".into(),
        ))
    }
}

/// How an external label was obtained.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "detail")]
pub enum LabelProvenance {
    Parsed(String),
    Unparseable(String),
    Fallback(String),
}

/// Matches a reply against the taxonomy: an exact (case-insensitive) name
/// first, otherwise the single category whose name occurs in the reply.
pub fn parse_category(reply: &str, taxonomy: &TargetTaxonomy) -> Option<usize> {
    let cleaned = reply
        .trim()
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace());
    if let Some(i) = taxonomy.index(cleaned) {
        return Some(i);
    }
    let lower = reply.to_lowercase();
    let hits: Vec<usize> = taxonomy
        .classes()
        .iter()
        .enumerate()
        .filter(|(_, c)| lower.contains(&c.to_lowercase()))
        .map(|(i, _)| i)
        .collect();
    match hits.as_slice() {
        [one] => Some(*one),
        _ => None,
    }
}

pub struct LlmLabeler<'a> {
    pub transport: Box<dyn Transport + 'a>,
    pub taxonomy: TargetTaxonomy,
    pub template: PromptTemplate,
    pub retries: usize,
    pub fallback: Lexicon,
}

impl<'a> LlmLabeler<'a> {
    pub fn new(
        transport: Box<dyn Transport + 'a>,
        taxonomy: TargetTaxonomy,
        fallback: Lexicon,
    ) -> Self {
        Self {
            transport,
            taxonomy,
            template: PromptTemplate::default(),
            retries: 2,
            fallback,
        }
    }

    pub fn label(&mut self, text: &str) -> (SoftLabel<f64>, LabelProvenance) {
        let request = self.template.render(&self.taxonomy, text);
        let mut last_err = String::new();
        for _ in 0..=self.retries {
            match self.transport.send(&request) {
                Ok(reply) => {
                    return match parse_category(&reply, &self.taxonomy) {
                        Some(k) => (
                            SoftLabel::one_hot(self.taxonomy.len(), k)
                                .expect("index from taxonomy"),
                            LabelProvenance::Parsed(self.taxonomy.classes()[k].clone()),
                        ),
                        None => {
                            warn!("unparseable labeler reply {reply:?}; using a uniform label");
                            (
                                SoftLabel::uniform(self.taxonomy.len())
                                    .expect("taxonomy has >= 2 classes"),
                                LabelProvenance::Unparseable(reply),
                            )
                        }
                    };
                }
                Err(e) => last_err = e,
            }
        }
        warn!(
            "labeler transport failed after {} attempts ({last_err}); falling back to the lexicon",
            self.retries + 1
        );
        (
            self.fallback.label(text),
            LabelProvenance::Fallback(last_err),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeler(ex: Vec<Exchange>) -> LlmLabeler<'static> {
        let t = TargetTaxonomy::default();
        let lex = Lexicon::seed(&t).unwrap();
        LlmLabeler::new(Box::new(ReplayTransport::new(ex)), t, lex)
    }

    fn exchange(post: &str, reply: &str) -> Exchange {
        Exchange {
            request: PromptTemplate::default().render(&TargetTaxonomy::default(), post),
            response: reply.into(),
        }
    }

    #[test]
    fn parses_replies() {
        let t = TargetTaxonomy::default();
        assert_eq!(parse_category("Religion", &t), Some(6));
        assert_eq!(parse_category(" religion.\n", &t), Some(6));
        assert_eq!(
            parse_category("The target is Immigration Status.", &t),
            Some(3)
        );
        assert_eq!(parse_category("Sexual Preferences", &t), Some(8));
        assert_eq!(parse_category("Race or Religion", &t), None);
        assert_eq!(parse_category("unknown gibberish", &t), None);
    }

    #[test]
    fn replay_labels_and_fallbacks() {
        let mut l = labeler(vec![
            exchange("p1", "Religion"),
            exchange("p2", "unknown gibberish"),
        ]);
        let (y, prov) = l.label("p1");
        assert_eq!(y.argmax(), 6);
        assert_eq!(y.confidence(), 1.0);
        assert_eq!(prov, LabelProvenance::Parsed("Religion".into()));
        let (y, prov) = l.label("p2");
        assert_eq!(y, SoftLabel::uniform(9).unwrap());
        assert!(matches!(prov, LabelProvenance::Unparseable(_)));
        // unrecorded: retried, then the lexicon answers
        let (y, prov) = l.label("the mosque");
        assert_eq!(y.argmax(), 6);
        assert!(matches!(prov, LabelProvenance::Fallback(_)));
    }

    #[test]
    fn retries_before_falling_back() {
        let mut replay = ReplayTransport::default();
        {
            let t = TargetTaxonomy::default();
            let lex = Lexicon::seed(&t).unwrap();
            let mut l = LlmLabeler::new(Box::new(&mut replay), t, lex);
            l.retries = 3;
            l.label("anything");
        }
        assert_eq!(replay.calls, 4);
    }

    #[test]
    fn missing_credentials_are_refused() {
        if std::env::var(KEY_VAR).is_err() {
            let err = LiveSettings::from_env().unwrap_err().to_string();
            assert!(err.contains(KEY_VAR));
        }
    }
}
