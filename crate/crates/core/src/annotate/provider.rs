use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use serde::Serialize;

use super::LabelSequence;
use crate::error::{Error, Result};
use crate::script::ActionLabel;

/// Environment variable holding the bearer token for [`HttpProvider`].
pub const TOKEN_ENV: &str = "ITRYON_PROVIDER_TOKEN";

/// Instruction sent with every remote verification request.
pub const VERIFY_PROMPT: &str =
    "You are checking one frame of a video of a person wearing a garment. \
Decide whether the person is visibly performing the named action on the garment in this frame. \
Reply with exactly one lowercase word, true or false, and nothing else.";

/// One frame to judge: its index in the clip and a raw `f32` feature blob
/// of shape `[C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDescriptor {
    pub index: usize,
    pub shape: [usize; 3],
    pub values: Vec<f32>,
}

impl FrameDescriptor {
    /// Little-endian `f32` bytes of the feature blob.
    pub fn blob(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// Judges whether a frame shows the given action.
pub trait VerdictProvider: Sync {
    fn verdict(&self, frame: &FrameDescriptor, label: ActionLabel) -> Result<bool>;
}

/// Replays labels read from a label file, indexed by frame.
#[derive(Clone, Debug)]
pub struct ScriptedProvider {
    labels: LabelSequence,
}

impl ScriptedProvider {
    pub fn new(labels: LabelSequence) -> Self {
        Self { labels }
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Ok(Self::new(LabelSequence::load(path)?))
    }
}

impl VerdictProvider for ScriptedProvider {
    fn verdict(&self, frame: &FrameDescriptor, _: ActionLabel) -> Result<bool> {
        self.labels.0.get(frame.index).copied().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "label file has {} entries, no frame {}",
                self.labels.len(),
                frame.index
            ))
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConstantProvider(pub bool);

impl VerdictProvider for ConstantProvider {
    fn verdict(&self, _: &FrameDescriptor, _: ActionLabel) -> Result<bool> {
        Ok(self.0)
    }
}

#[derive(Clone, Debug)]
pub struct HttpProviderConfig {
    pub url: String,
    pub token: Option<String>,
    /// Attempts per frame, including the first.
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff: Duration,
    pub timeout: Duration,
}

impl HttpProviderConfig {
    /// Defaults with the token taken from [`TOKEN_ENV`] when set.
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            attempts: 3,
            backoff: Duration::from_millis(200),
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Serialize)]
struct VerdictRequest<'a> {
    frame: String,
    prompt: &'a str,
    action: &'a str,
}

/// POSTs `{"frame", "prompt", "action"}` JSON and expects the body `true`
/// or `false`.
pub struct HttpProvider {
    config: HttpProviderConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Result<Self> {
        if config.attempts == 0 {
            return Err(Error::InvalidArgument(
                "at least one attempt is required".into(),
            ));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, agent })
    }

    fn attempt(&self, frame: &FrameDescriptor, body: &str) -> std::result::Result<bool, Attempt> {
        let mut req = self
            .agent
            .post(&self.config.url)
            .header("Content-Type", "application/json");
        if let Some(token) = &self.config.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send(body).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        if !status.is_success() {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        match text.trim() {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(Attempt::Fatal(Error::MalformedVerdict {
                frame: frame.index,
                body: text,
            })),
        }
    }
}

impl VerdictProvider for HttpProvider {
    fn verdict(&self, frame: &FrameDescriptor, label: ActionLabel) -> Result<bool> {
        let body = serde_json::to_string(&VerdictRequest {
            frame: base64::engine::general_purpose::STANDARD.encode(frame.blob()),
            prompt: VERIFY_PROMPT,
            action: label.name(),
        })?;
        let mut delay = self.config.backoff;
        let mut last = String::new();
        for attempt in 0..self.config.attempts {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(frame, &body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => last = msg,
            }
        }
        Err(Error::Transport {
            frame: frame.index,
            attempts: self.config.attempts,
            message: last,
        })
    }
}

/// Verdicts for `frames` in order, querying at most `concurrency` frames at
/// once. The first failure in frame order is returned.
pub fn annotate_frames(
    frames: &[FrameDescriptor],
    label: ActionLabel,
    provider: &dyn VerdictProvider,
    concurrency: usize,
) -> Result<LabelSequence> {
    let workers = concurrency.clamp(1, frames.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<bool>>>> =
        Mutex::new((0..frames.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(frame) = frames.get(i) else { break };
                let v = provider.verdict(frame, label);
                slots.lock().expect("worker panicked")[i] = Some(v);
            });
        }
    });
    let slots = slots.into_inner().expect("worker panicked");
    slots
        .into_iter()
        .map(|v| v.expect("every frame visited"))
        .collect::<Result<Vec<_>>>()
        .map(LabelSequence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    fn frames(n: usize) -> Vec<FrameDescriptor> {
        (0..n)
            .map(|i| FrameDescriptor {
                index: i,
                shape: [1, 1, 2],
                values: vec![i as f32, -1.5],
            })
            .collect()
    }

    #[test]
    fn scripted_and_constant() {
        let labels = LabelSequence::from_bits(&[0, 1, 1, 0, 1]).unwrap();
        let out = annotate_frames(
            &frames(5),
            ActionLabel::AdjustHem,
            &ScriptedProvider::new(labels.clone()),
            3,
        )
        .unwrap();
        assert_eq!(out, labels);
        let out = annotate_frames(
            &frames(7),
            ActionLabel::AdjustHem,
            &ConstantProvider(true),
            2,
        )
        .unwrap();
        assert_eq!(out.0, vec![true; 7]);
        assert!(annotate_frames(
            &frames(6),
            ActionLabel::AdjustHem,
            &ScriptedProvider::new(labels),
            1
        )
        .is_err());
        assert!(
            annotate_frames(&[], ActionLabel::Other, &ConstantProvider(true), 4)
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn order_independent_of_completion() {
        struct Slow;
        impl VerdictProvider for Slow {
            fn verdict(&self, f: &FrameDescriptor, _: ActionLabel) -> Result<bool> {
                std::thread::sleep(Duration::from_millis(((7 - f.index % 8) * 2) as u64));
                Ok(f.index % 3 == 0)
            }
        }
        let out = annotate_frames(&frames(16), ActionLabel::Other, &Slow, 5).unwrap();
        assert_eq!(out.0, (0..16).map(|i| i % 3 == 0).collect::<Vec<_>>());
    }

    struct Served {
        url: String,
        requests: Arc<Mutex<Vec<(String, String)>>>,
    }

    /// Minimal HTTP/1.1 server answering each request with the next
    /// `(status, body)` pair from `replies`, cycling.
    fn serve(replies: Vec<(u16, &'static str)>) -> Served {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/verify", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        std::thread::spawn(move || {
            for (n, stream) in listener.incoming().enumerate() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut headers = String::new();
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    headers.push_str(&line);
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                log.lock()
                    .unwrap()
                    .push((headers, String::from_utf8(body).unwrap()));
                let (status, text) = replies[n % replies.len()];
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        Served { url, requests }
    }

    fn client(url: &str, token: Option<&str>) -> HttpProvider {
        HttpProvider::new(HttpProviderConfig {
            url: url.into(),
            token: token.map(str::to_string),
            attempts: 3,
            backoff: Duration::from_millis(1),
            timeout: Duration::from_secs(5),
        })
        .unwrap()
    }

    #[test]
    fn http_request_shape_and_verdicts() {
        let srv = serve(vec![(200, "true"), (200, "false\n")]);
        let p = client(&srv.url, Some("s3cret"));
        let f = &frames(2)[1];
        assert!(p.verdict(f, ActionLabel::RollSleeves).unwrap());
        assert!(!p.verdict(f, ActionLabel::RollSleeves).unwrap());
        let reqs = srv.requests.lock().unwrap();
        let (headers, body) = &reqs[0];
        assert!(headers.starts_with("POST /verify"));
        assert!(headers
            .to_ascii_lowercase()
            .contains("authorization: bearer s3cret"));
        let json: serde_json::Value = serde_json::from_str(body).unwrap();
        assert_eq!(json["action"], "roll_sleeves");
        assert_eq!(json["prompt"], VERIFY_PROMPT);
        let blob = base64::engine::general_purpose::STANDARD
            .decode(json["frame"].as_str().unwrap())
            .unwrap();
        assert_eq!(blob, f.blob());
        assert_eq!(json.as_object().unwrap().len(), 3);
    }

    #[test]
    fn http_malformed_names_frame() {
        let srv = serve(vec![(200, "maybe")]);
        let err = client(&srv.url, None)
            .verdict(&frames(5)[4], ActionLabel::Other)
            .unwrap_err();
        assert!(
            matches!(&err, Error::MalformedVerdict { frame: 4, body } if body == "maybe"),
            "{err}"
        );
        // malformed replies are not retried
        assert_eq!(srv.requests.lock().unwrap().len(), 1);
    }

    #[test]
    fn http_retries_then_succeeds() {
        let srv = serve(vec![(503, "busy"), (500, "oops"), (200, "true")]);
        assert!(client(&srv.url, None)
            .verdict(&frames(1)[0], ActionLabel::DonDoff)
            .unwrap());
        assert_eq!(srv.requests.lock().unwrap().len(), 3);
    }

    #[test]
    fn http_gives_up_after_budget() {
        let srv = serve(vec![(503, "busy")]);
        let err = client(&srv.url, None)
            .verdict(&frames(3)[2], ActionLabel::DonDoff)
            .unwrap_err();
        assert!(
            matches!(
                err,
                Error::Transport {
                    frame: 2,
                    attempts: 3,
                    ..
                }
            ),
            "{err}"
        );
        // nothing listening
        let dead = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            format!("http://{}/", l.local_addr().unwrap())
        };
        assert!(matches!(
            client(&dead, None).verdict(&frames(1)[0], ActionLabel::Other),
            Err(Error::Transport { .. })
        ));
    }

    #[test]
    fn http_annotation_in_order() {
        let srv = serve(vec![(200, "true"), (200, "true"), (200, "true")]);
        let out = annotate_frames(
            &frames(9),
            ActionLabel::AdjustCollar,
            &client(&srv.url, None),
            3,
        )
        .unwrap();
        assert_eq!(out.0, vec![true; 9]);
    }
}
