use std::io::Read;
use std::path::PathBuf;
use std::time::Duration;

use base64::Engine;
use url::Url;

use crate::error::{Error, Result};

pub const ENV_USER: &str = "DDE_CATALOG_USER";
pub const ENV_PASS: &str = "DDE_CATALOG_PASS";
pub const ENV_ENDPOINT: &str = "DDE_CATALOG_ENDPOINT";

/// Byte source for catalog queries and scene downloads.
pub trait Transport: Send + Sync {
    fn open(&self, url: &Url) -> Result<Box<dyn Read + Send>>;

    fn get(&self, url: &Url) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.open(url)?
            .read_to_end(&mut buf)
            .map_err(|e| transport_io(url, e))?;
        Ok(buf)
    }
}

pub(crate) fn transport_io(url: &Url, e: std::io::Error) -> Error {
    Error::Transport {
        message: format!("{url}: {e}"),
        retryable: true,
    }
}

/// Serves `file://` URLs from disk, ignoring any query string. Used for fixtures and
/// for catalogs mirrored to a local directory.
#[derive(Debug, Default, Clone)]
pub struct FileTransport;

impl Transport for FileTransport {
    fn open(&self, url: &Url) -> Result<Box<dyn Read + Send>> {
        let path: PathBuf = url
            .to_file_path()
            .map_err(|_| Error::Argument(format!("not a file URL: {url}")))?;
        let f = std::fs::File::open(&path).map_err(|e| Error::Transport {
            message: format!("{}: {e}", path.display()),
            retryable: false,
        })?;
        Ok(Box::new(f))
    }
}

/// HTTP(S) client with optional basic auth.
pub struct HttpTransport {
    agent: ureq::Agent,
    auth: Option<String>,
}

impl HttpTransport {
    pub fn new(credentials: Option<(String, String)>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(timeout)).build();
        let auth = credentials.map(|(u, p)| {
            format!("Basic {}", base64::engine::general_purpose::STANDARD.encode(format!("{u}:{p}")))
        });
        HttpTransport {
            agent: ureq::Agent::new_with_config(config),
            auth,
        }
    }

    /// Credentials from `DDE_CATALOG_USER` / `DDE_CATALOG_PASS` when both are set.
    pub fn from_env() -> Self {
        let creds = match (std::env::var(ENV_USER), std::env::var(ENV_PASS)) {
            (Ok(u), Ok(p)) => Some((u, p)),
            _ => None,
        };
        Self::new(creds, Duration::from_secs(300))
    }
}

fn classify(url: &Url, e: ureq::Error) -> Error {
    let retryable = match &e {
        ureq::Error::StatusCode(code) => *code == 429 || *code >= 500,
        ureq::Error::Io(_)
        | ureq::Error::Timeout(_)
        | ureq::Error::HostNotFound
        | ureq::Error::ConnectionFailed
        | ureq::Error::BodyStalled => true,
        _ => false,
    };
    let message = match e {
        ureq::Error::StatusCode(401) | ureq::Error::StatusCode(403) => {
            format!("{url}: authentication rejected (set {ENV_USER} and {ENV_PASS})")
        }
        other => format!("{url}: {other}"),
    };
    Error::Transport { message, retryable }
}

impl Transport for HttpTransport {
    fn open(&self, url: &Url) -> Result<Box<dyn Read + Send>> {
        let mut req = self.agent.get(url.as_str());
        if let Some(a) = &self.auth {
            req = req.header("Authorization", a);
        }
        let resp = req.call().map_err(|e| classify(url, e))?;
        Ok(Box::new(resp.into_body().into_with_config().limit(u64::MAX).reader()))
    }
}

/// Transport matching the endpoint scheme.
pub fn transport_for(endpoint: &Url) -> Result<Box<dyn Transport>> {
    match endpoint.scheme() {
        "file" => Ok(Box::new(FileTransport)),
        "http" | "https" => Ok(Box::new(HttpTransport::from_env())),
        other => Err(Error::Argument(format!("unsupported catalog scheme `{other}`"))),
    }
}

/// Run `f` up to `attempts` times while it fails with a retryable transport error.
pub fn with_retry<T>(attempts: u32, backoff: Duration, mut f: impl FnMut() -> Result<T>) -> Result<T> {
    let mut k = 0;
    loop {
        match f() {
            Err(Error::Transport { message, retryable: true }) if k + 1 < attempts => {
                log::warn!("retrying after transport error: {message}");
                std::thread::sleep(backoff * 2u32.pow(k));
                k += 1;
            }
            other => return other,
        }
    }
}
