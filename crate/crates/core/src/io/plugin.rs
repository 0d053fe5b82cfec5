//! File-based bridge to external interpolation and denoising processes.
//!
//! For every request the bridge creates a fresh working directory holding the
//! input frames as 8-bit binary PGM and a `request.json`:
//!
//! ```json
//! {"version": 1, "role": "interpolate", "width": 352, "height": 288,
//!  "timestamps": [0.25, 0.5, 0.75], "sigma": null,
//!  "inputs": ["input_0.pgm", "input_1.pgm"]}
//! ```
//!
//! The plugin command is run through `sh -c` with the working directory as
//! its last argument (also exported as `VALC_PLUGIN_DIR`). It writes its
//! output PGMs and then `response.json`, which must appear last:
//!
//! ```json
//! {"version": 1, "outputs": ["output_0.pgm", "output_1.pgm", "output_2.pgm"], "error": null}
//! ```
//!
//! The directory is removed when the request finishes.

use std::fs;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::io::pgm::{read_pgm, write_pgm};
use crate::vfi::InterpolationRequest;

pub const PROTOCOL_VERSION: u32 = 1;
pub const REQUEST_FILE: &str = "request.json";
pub const RESPONSE_FILE: &str = "response.json";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PluginRole {
    Interpolate,
    Denoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginRequest {
    pub version: u32,
    pub role: PluginRole,
    pub width: usize,
    pub height: usize,
    pub timestamps: Vec<f64>,
    pub sigma: Option<f64>,
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginResponse {
    pub version: u32,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PluginBridge {
    command: String,
    timeout: Duration,
}

struct KillOnDrop(Child);

impl Drop for KillOnDrop {
    fn drop(&mut self) {
        if let Ok(None) = self.0.try_wait() {
            let _ = self.0.kill();
        }
        let _ = self.0.wait();
    }
}

impl PluginBridge {
    pub fn new(command: impl Into<String>) -> Self {
        PluginBridge {
            command: command.into(),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn interpolate(&self, request: &InterpolationRequest<'_>) -> Result<Vec<Frame>> {
        self.run(
            PluginRole::Interpolate,
            &[request.frame_a, request.frame_b],
            &request.timestamps,
            None,
            request.timestamps.len(),
        )
    }

    pub fn denoise(&self, frame: &Frame, sigma: f64) -> Result<Frame> {
        let mut out = self.run(PluginRole::Denoise, &[frame], &[], Some(sigma), 1)?;
        Ok(out.remove(0))
    }

    fn run(
        &self,
        role: PluginRole,
        inputs: &[&Frame],
        timestamps: &[f64],
        sigma: Option<f64>,
        expected: usize,
    ) -> Result<Vec<Frame>> {
        let (width, height) = (inputs[0].width(), inputs[0].height());
        let dir = tempfile::Builder::new()
            .prefix("valc-plugin-")
            .tempdir()
            .map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let mut names = Vec::with_capacity(inputs.len());
        for (k, frame) in inputs.iter().enumerate() {
            let name = format!("input_{k}.pgm");
            write_pgm(dir.path().join(&name), frame)?;
            names.push(name);
        }
        let request = PluginRequest {
            version: PROTOCOL_VERSION,
            role,
            width,
            height,
            timestamps: timestamps.to_vec(),
            sigma,
            inputs: names,
        };
        let req_path = dir.path().join(REQUEST_FILE);
        fs::write(&req_path, serde_json::to_vec_pretty(&request)?)
            .map_err(|e| Error::io(&req_path, e))?;

        let response = self.spawn_and_wait(dir.path())?;
        if response.version != PROTOCOL_VERSION {
            return Err(Error::Plugin(format!(
                "protocol version {} (expected {PROTOCOL_VERSION})",
                response.version
            )));
        }
        if let Some(err) = response.error {
            return Err(Error::Plugin(format!("plugin reported: {err}")));
        }
        if response.outputs.len() != expected {
            return Err(Error::Plugin(format!(
                "expected {expected} output frames, got {}",
                response.outputs.len()
            )));
        }
        response
            .outputs
            .iter()
            .map(|name| {
                if Path::new(name).components().count() != 1 {
                    return Err(Error::Plugin(format!("output {name:?} escapes working dir")));
                }
                let frame = read_pgm(dir.path().join(name))?;
                if frame.width() != width || frame.height() != height {
                    return Err(Error::Plugin(format!(
                        "output {name} is {}x{}, expected {width}x{height}",
                        frame.width(),
                        frame.height()
                    )));
                }
                Ok(frame)
            })
            .collect()
    }

    fn spawn_and_wait(&self, dir: &Path) -> Result<PluginResponse> {
        let child = Command::new("sh")
            .arg("-c")
            .arg(format!("exec {} \"$1\"", self.command))
            .arg("valc-plugin")
            .arg(dir)
            .env("VALC_PLUGIN_DIR", dir)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .spawn()
            .map_err(|e| Error::Plugin(format!("cannot start {:?}: {e}", self.command)))?;
        let mut child = KillOnDrop(child);
        let resp_path = dir.join(RESPONSE_FILE);
        let deadline = Instant::now() + self.timeout;
        let mut exited = None;
        loop {
            if let Ok(bytes) = fs::read(&resp_path) {
                match serde_json::from_slice::<PluginResponse>(&bytes) {
                    Ok(resp) => return Ok(resp),
                    Err(e) if exited.is_some() => {
                        return Err(Error::Plugin(format!("malformed response: {e}")))
                    }
                    // possibly still being written
                    Err(_) => {}
                }
            }
            if exited.is_some() {
                return Err(Error::Plugin(format!(
                    "plugin exited ({}) without writing {RESPONSE_FILE}",
                    exited.unwrap()
                )));
            }
            if let Ok(Some(status)) = child.0.try_wait() {
                // one more pass to pick up a response written just before exit
                exited = Some(status);
                continue;
            }
            if Instant::now() >= deadline {
                return Err(Error::Plugin(format!(
                    "timed out after {:?}",
                    self.timeout
                )));
            }
            thread::sleep(Duration::from_millis(5));
        }
    }
}
