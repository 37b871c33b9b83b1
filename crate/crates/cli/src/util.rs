use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use semisup::featpipe::SAMPLE_RATE;

use crate::error::{CliError, Result};

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so a failed command never leaves a partial artifact behind.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    with_atomic_file(path, |w| w.write_all(bytes).map_err(CliError::from_io))
}

/// Runs `fill` against a temporary file and renames it to `path` on success.
pub fn with_atomic_file<F>(path: impl AsRef<Path>, fill: F) -> Result<()>
where
    F: FnOnce(&mut std::io::BufWriter<&mut fs::File>) -> Result<()>,
{
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::file(dir, e))?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush().map_err(|e| CliError::file(path, e))?;
    }
    tmp.persist(path)
        .map_err(|e| CliError::file(path, e.error))?;
    Ok(())
}

impl CliError {
    pub(crate) fn from_io(e: std::io::Error) -> Self {
        CliError::Core(semisup::Error::Io(e))
    }
}

pub fn save_model(path: impl AsRef<Path>, model: &semisup::nncore::ModelParams<f32>) -> Result<()> {
    with_atomic_file(path, |w| Ok(model.write_checkpoint(w)?))
}

pub fn ensure_dir(path: impl AsRef<Path>) -> Result<()> {
    fs::create_dir_all(path.as_ref()).map_err(|e| CliError::file(path, e))
}

pub fn require_file(path: impl AsRef<Path>) -> Result<()> {
    let p = path.as_ref();
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::data(format!("{}: no such file", p.display())))
    }
}

/// Mono 16 kHz WAV, integer or float samples, scaled to [-1, 1].
pub fn read_wav(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let rdr = hound::WavReader::open(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let spec = rdr.spec();
    if spec.channels != 1 || spec.sample_rate != SAMPLE_RATE {
        return Err(CliError::data(format!(
            "{}: need mono {SAMPLE_RATE} Hz audio, got {} channel(s) at {} Hz",
            path.display(),
            spec.channels,
            spec.sample_rate
        )));
    }
    let bad = |e: hound::Error| CliError::data(format!("{}: {e}", path.display()));
    match spec.sample_format {
        hound::SampleFormat::Float => rdr
            .into_samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(bad),
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            rdr.into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()
                .map_err(bad)
        }
    }
}

pub fn write_wav(path: impl AsRef<Path>, samples: &[f32]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut cursor = std::io::Cursor::new(Vec::new());
    {
        let mut w =
            hound::WavWriter::new(&mut cursor, spec).map_err(|e| CliError::data(e.to_string()))?;
        for &s in samples {
            w.write_sample(s)
                .map_err(|e| CliError::data(e.to_string()))?;
        }
        w.finalize().map_err(|e| CliError::data(e.to_string()))?;
    }
    write_atomic(path, &cursor.into_inner())
}

/// One class index per 10 ms analysis frame, whitespace separated.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| CliError::file(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| CliError::file(path, e))?;
        for tok in line.split_whitespace() {
            out.push(
                tok.parse().map_err(|_| {
                    CliError::data(format!("{}: bad label {tok:?}", path.display()))
                })?,
            );
        }
    }
    Ok(out)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 3);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}
