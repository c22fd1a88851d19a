//! Vision-language services: HTTP, deterministic mocks and transcript replay.

use std::collections::HashMap;
use std::path::Path;
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use depthvision_core::io::{decode_png, encode_png};
use depthvision_core::lama::{mean_luminance, to_gray, DEFAULT_L_LOW};
use depthvision_core::simgen::{Answer, ObjectClass};
use depthvision_core::ImageRgb;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VlmError};
use crate::transcript::read_transcript;

/// One question about one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VlmRequest {
    pub sample_id: String,
    pub model: String,
    pub prompt: String,
    /// 8-bit PNG, base64 encoded.
    pub image_base64: String,
    pub temperature: f64,
}

impl VlmRequest {
    pub fn new(sample_id: &str, model: &str, prompt: &str, image: &ImageRgb) -> Self {
        Self {
            sample_id: sample_id.to_string(),
            model: model.to_string(),
            prompt: prompt.to_string(),
            image_base64: STANDARD.encode(encode_png(image)),
            temperature: 0.0,
        }
    }

    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        STANDARD
            .decode(&self.image_base64)
            .map_err(|e| VlmError::Malformed(format!("image is not base64: {e}")))
    }

    pub fn image(&self) -> Result<ImageRgb> {
        decode_png(&self.png_bytes()?).map_err(VlmError::Malformed)
    }
}

pub trait Endpoint: Send + Sync {
    fn query(&self, req: &VlmRequest) -> Result<String>;
}

#[derive(Serialize)]
struct HttpBody<'a> {
    model: &'a str,
    prompt: &'a str,
    image_base64: &'a str,
    temperature: f64,
}

#[derive(Deserialize)]
struct HttpReply {
    text: String,
}

/// POSTs `{model, prompt, image_base64, temperature}` and expects `{text}`.
pub struct HttpEndpoint {
    url: String,
    agent: ureq::Agent,
    pub attempts: u32,
    pub backoff: Duration,
}

impl HttpEndpoint {
    pub fn new(url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: url.to_string(),
            agent,
            attempts: 3,
            backoff: Duration::from_millis(200),
        }
    }

    fn attempt(&self, req: &VlmRequest) -> Result<String> {
        let body = HttpBody {
            model: &req.model,
            prompt: &req.prompt,
            image_base64: &req.image_base64,
            temperature: req.temperature,
        };
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| VlmError::Unavailable(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(VlmError::Unavailable(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(VlmError::Malformed(format!("status {status}")));
        }
        let reply: HttpReply = resp
            .body_mut()
            .read_json()
            .map_err(|e| VlmError::Malformed(e.to_string()))?;
        Ok(reply.text)
    }
}

impl Endpoint for HttpEndpoint {
    /// Retries unavailable-type failures with exponential backoff.
    fn query(&self, req: &VlmRequest) -> Result<String> {
        let mut delay = self.backoff;
        let mut last = None;
        for attempt in 0..self.attempts.max(1) {
            if attempt > 0 {
                thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(req) {
                Ok(text) => return Ok(text),
                Err(e @ VlmError::Unavailable(_)) => {
                    log::warn!("{}: attempt {} failed: {e}", req.sample_id, attempt + 1);
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MockPolicy {
    /// Always answers the ground truth.
    Oracle,
    /// Answers the ground truth iff the image's mean luminance reaches the
    /// threshold; otherwise a seeded wrong answer.
    Luminance { threshold: f64 },
}

/// Deterministic stand-in for a vision-language model that knows the
/// ground truth of every sample it may be asked about.
pub struct MockEndpoint {
    pub policy: MockPolicy,
    pub seed: u64,
    truth: HashMap<String, Answer>,
}

impl MockEndpoint {
    pub fn new(policy: MockPolicy, seed: u64, truth: HashMap<String, Answer>) -> Self {
        Self { policy, seed, truth }
    }

    fn wrong_answer(&self, sample_id: &str, truth: Answer) -> Answer {
        let h = sample_id
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ h);
        match truth {
            Answer::Number(n) => {
                let k = rng.random_range(0..n + 5);
                Answer::Number(if k >= n { k + 1 } else { k })
            }
            Answer::Class(c) => {
                let others: Vec<_> = ObjectClass::ALL.into_iter().filter(|&o| o != c).collect();
                Answer::Class(others[rng.random_range(0..others.len())])
            }
        }
    }
}

impl Endpoint for MockEndpoint {
    fn query(&self, req: &VlmRequest) -> Result<String> {
        let truth = *self
            .truth
            .get(&req.sample_id)
            .ok_or_else(|| VlmError::Malformed(format!("unknown sample {}", req.sample_id)))?;
        let answer = match self.policy {
            MockPolicy::Oracle => truth,
            MockPolicy::Luminance { threshold } => {
                let l = mean_luminance(&to_gray(&req.image()?))?;
                if l >= threshold {
                    truth
                } else {
                    self.wrong_answer(&req.sample_id, truth)
                }
            }
        };
        Ok(format!("The answer is {answer}."))
    }
}

/// Answers from a previously recorded transcript.
pub struct ReplayEndpoint {
    responses: HashMap<String, Option<String>>,
}

impl ReplayEndpoint {
    pub fn open(path: &Path) -> Result<Self> {
        let responses = read_transcript(path)?
            .into_iter()
            .map(|e| (e.sample_id, e.response))
            .collect();
        Ok(Self { responses })
    }
}

impl Endpoint for ReplayEndpoint {
    fn query(&self, req: &VlmRequest) -> Result<String> {
        match self.responses.get(&req.sample_id) {
            Some(Some(text)) => Ok(text.clone()),
            Some(None) => Err(VlmError::Unavailable("no answer in the recording".into())),
            None => Err(VlmError::NotRecorded(req.sample_id.clone())),
        }
    }
}

/// Parsed form of an endpoint spec string.
#[derive(Clone, Debug, PartialEq)]
pub enum EndpointSpec {
    Http(String),
    Mock { policy: MockPolicy, seed: u64 },
    Replay(std::path::PathBuf),
}

impl EndpointSpec {
    /// `http(s)://...`, `mock` (= `mock:oracle`), `mock:oracle`,
    /// `mock:luminance`, optionally followed by `:<seed>`, or `replay:<path>`.
    pub fn parse(s: &str) -> Result<Self> {
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(Self::Http(s.to_string()));
        }
        if let Some(path) = s.strip_prefix("replay:") {
            return Ok(Self::Replay(path.into()));
        }
        let mut parts = s.split(':');
        if parts.next() != Some("mock") {
            return Err(VlmError::UnknownEndpoint(s.into()));
        }
        let policy = match parts.next() {
            None | Some("oracle") => MockPolicy::Oracle,
            Some("luminance") => MockPolicy::Luminance {
                threshold: DEFAULT_L_LOW,
            },
            Some(_) => return Err(VlmError::UnknownEndpoint(s.into())),
        };
        let seed = match parts.next() {
            None => 0,
            Some(v) => v.parse().map_err(|_| VlmError::UnknownEndpoint(s.into()))?,
        };
        if parts.next().is_some() {
            return Err(VlmError::UnknownEndpoint(s.into()));
        }
        Ok(Self::Mock { policy, seed })
    }

    pub fn is_mock(&self) -> bool {
        matches!(self, Self::Mock { .. })
    }

    /// Builds the endpoint; mocks receive the ground-truth table.
    pub fn build(&self, truth: HashMap<String, Answer>, timeout: Duration) -> Result<Box<dyn Endpoint>> {
        Ok(match self {
            Self::Http(url) => Box::new(HttpEndpoint::new(url, timeout)),
            Self::Mock { policy, seed } => Box::new(MockEndpoint::new(*policy, *seed, truth)),
            Self::Replay(path) => Box::new(ReplayEndpoint::open(path)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> HashMap<String, Answer> {
        HashMap::from([
            ("a".to_string(), Answer::Number(2)),
            ("b".to_string(), Answer::Class(ObjectClass::Car)),
        ])
    }

    #[test]
    fn request_image_round_trips() {
        let img = ImageRgb::from_fn(5, 4, |u, v| [u as f64 / 4.0, v as f64 / 3.0, 0.2]).unwrap();
        let req = VlmRequest::new("a", "m", "p", &img);
        let back = req.image().unwrap();
        assert_eq!(req.temperature, 0.0);
        // PNG stores round(255 v); the decoded image re-encodes identically
        assert_eq!(encode_png(&back), req.png_bytes().unwrap());
    }

    #[test]
    fn luminance_mock_switches_on_brightness() {
        let mock = MockEndpoint::new(MockPolicy::Luminance { threshold: 0.15 }, 0, truth());
        let bright = ImageRgb::filled(4, 4, [0.5; 3]).unwrap();
        let dark = ImageRgb::filled(4, 4, [0.05; 3]).unwrap();
        for id in ["a", "b"] {
            let t = truth()[id].to_string();
            assert!(mock.query(&VlmRequest::new(id, "m", "q", &bright)).unwrap().contains(&t));
            let wrong = mock.query(&VlmRequest::new(id, "m", "q", &dark)).unwrap();
            assert!(!wrong.contains(&t), "{wrong}");
            // temperature-0 determinism
            assert_eq!(wrong, mock.query(&VlmRequest::new(id, "m", "q", &dark)).unwrap());
        }
    }

    #[test]
    fn wrong_answers_are_never_the_truth() {
        let mock = MockEndpoint::new(MockPolicy::Oracle, 9, HashMap::new());
        for n in 0..30 {
            for i in 0..20 {
                let id = format!("s{i}");
                assert_ne!(mock.wrong_answer(&id, Answer::Number(n)), Answer::Number(n));
            }
        }
        for c in ObjectClass::ALL {
            assert_ne!(mock.wrong_answer("x", Answer::Class(c)), Answer::Class(c));
        }
    }

    #[test]
    fn endpoint_specs() {
        assert_eq!(
            EndpointSpec::parse("mock").unwrap(),
            EndpointSpec::Mock {
                policy: MockPolicy::Oracle,
                seed: 0
            }
        );
        assert_eq!(
            EndpointSpec::parse("mock:luminance:7").unwrap(),
            EndpointSpec::Mock {
                policy: MockPolicy::Luminance { threshold: 0.15 },
                seed: 7
            }
        );
        assert!(matches!(EndpointSpec::parse("http://x:1/v").unwrap(), EndpointSpec::Http(_)));
        assert!(matches!(EndpointSpec::parse("replay:t.jsonl").unwrap(), EndpointSpec::Replay(_)));
        for bad in ["mock:foo", "ftp://x", "mock:oracle:x", "mock:oracle:1:2"] {
            assert!(EndpointSpec::parse(bad).is_err(), "{bad}");
        }
    }
}
