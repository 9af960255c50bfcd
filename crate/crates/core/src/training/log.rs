use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::StepRecord;

pub const LOSS_LOG_HEADER: &str = "step,direction,d_loss,g_gan,g_l1,g_total";

/// Append-only CSV of logged steps.
pub struct LossLog {
    path: PathBuf,
    file: File,
}

impl LossLog {
    /// Open for a run that has completed `completed_steps` steps. Rows past
    /// that point (left by an interrupted run) are dropped so a resumed run
    /// writes the same log as an uninterrupted one.
    pub fn open(path: &Path, completed_steps: u64) -> Result<Self> {
        let mut keep = vec![LOSS_LOG_HEADER.to_string()];
        if completed_steps > 0 && path.exists() {
            let f = File::open(path).map_err(|e| Error::io(path, e))?;
            for line in BufReader::new(f).lines().skip(1) {
                let line = line.map_err(|e| Error::io(path, e))?;
                let step: u64 = line
                    .split(',')
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Dataset(format!("{}: malformed loss log row `{line}`", path.display())))?;
                if step <= completed_steps {
                    keep.push(line);
                }
            }
        }
        let mut body = keep.join("\n");
        body.push('\n');
        fs::write(path, body).map_err(|e| Error::io(path, e))?;
        let file = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(LossLog {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, r: &StepRecord) -> Result<()> {
        let l = &r.losses;
        writeln!(
            self.file,
            "{},{},{},{},{},{}",
            r.step, r.direction, l.d_loss, l.g_gan_loss, l.g_l1_loss, l.g_total
        )
        .map_err(|e| Error::io(&self.path, e))
    }
}
