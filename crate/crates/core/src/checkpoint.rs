//! Checkpoint files: a text manifest (config, array names, shapes, byte
//! offsets) followed by little-endian f32 arrays.

use std::fs;
use std::path::Path;

use crate::encoder::{ModelConfig, ParameterSet};
use crate::numeric::Scalar;
use crate::trainer::OptimizerState;
use crate::{Error, Result};

const MAGIC: &str = "bertdesk-checkpoint 1";
const SEPARATOR: &str = "---\n";

/// Everything needed to continue training: parameters, optimizer moments and
/// the position in the phase schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ParameterSet<T>,
    pub optimizer: Option<OptimizerState<T>>,
    /// Index of the phase in progress.
    pub phase: usize,
    /// Steps completed within `phase`.
    pub step: u64,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(params: ParameterSet<T>) -> Self {
        Self {
            params,
            optimizer: None,
            phase: 0,
            step: 0,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut arrays: Vec<(String, Vec<usize>, &[T])> = Vec::new();
        for (name, t) in self.params.tensors() {
            arrays.push((name, t.shape.clone(), &t.data));
        }
        let mut header = format!("{MAGIC}\n");
        for (k, v) in self.params.config.to_pairs() {
            header.push_str(&format!("config.{k}={v}\n"));
        }
        header.push_str(&format!("phase={}\nstep={}\n", self.phase, self.step));
        if let Some(opt) = &self.optimizer {
            header.push_str(&format!("adam_t={}\n", opt.t));
            for (prefix, set) in [("adam.m.", &opt.m), ("adam.v.", &opt.v)] {
                for (name, t) in set.tensors() {
                    arrays.push((format!("{prefix}{name}"), t.shape.clone(), &t.data));
                }
            }
        }
        let mut blob = Vec::new();
        for (name, shape, data) in &arrays {
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            header.push_str(&format!("array {name} {} {}\n", dims.join("x"), blob.len()));
            for &v in data.iter() {
                blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        header.push_str(SEPARATOR);
        let mut out = header.into_bytes();
        out.extend_from_slice(&blob);
        out
    }

    /// Parses a checkpoint; with `expected`, a config mismatch is an error
    /// listing every differing field.
    pub fn from_bytes(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let split = find(bytes, SEPARATOR.as_bytes()).ok_or_else(|| bad("missing manifest terminator".into()))?;
        let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("manifest is not UTF-8".into()))?;
        let blob = &bytes[split + SEPARATOR.len()..];
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("not a checkpoint file or unsupported version".into()));
        }
        let mut config_pairs = Vec::new();
        let mut arrays = Vec::new();
        let (mut phase, mut step, mut adam_t) = (0usize, 0u64, None);
        for line in lines {
            if let Some(rest) = line.strip_prefix("array ") {
                let parts: Vec<&str> = rest.split(' ').collect();
                if parts.len() != 3 {
                    return Err(bad(format!("malformed array line '{line}'")));
                }
                let shape = parts[1]
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad(format!("bad shape in '{line}'")))?;
                let offset: usize = parts[2].parse().map_err(|_| bad(format!("bad offset in '{line}'")))?;
                arrays.push((parts[0].to_string(), shape, offset));
            } else if let Some((k, v)) = line.split_once('=') {
                let num = |v: &str| v.parse::<u64>().map_err(|_| bad(format!("bad value in '{line}'")));
                match k {
                    "phase" => phase = num(v)? as usize,
                    "step" => step = num(v)?,
                    "adam_t" => adam_t = Some(num(v)?),
                    _ => match k.strip_prefix("config.") {
                        Some(key) => config_pairs.push((key.to_string(), v.to_string())),
                        None => return Err(bad(format!("unknown manifest key '{k}'"))),
                    },
                }
            } else {
                return Err(bad(format!("malformed manifest line '{line}'")));
            }
        }
        let config = ModelConfig::tiny(1)
            .with_pairs(config_pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .and_then(|c| c.validate().map(|_| c))
            .map_err(|e| bad(format!("invalid config: {e}")))?;
        if let Some(want) = expected {
            let diff = want.diff(&config);
            if !diff.is_empty() {
                return Err(bad(format!("config mismatch (expected != file): {}", diff.join("; "))));
            }
        }

        let mut lookup = std::collections::HashMap::new();
        for (name, shape, offset) in &arrays {
            lookup.insert(name.as_str(), (shape, *offset));
        }
        let mut fill = |set: &mut ParameterSet<T>, prefix: &str| -> Result<()> {
            for (name, t) in set.tensors_mut() {
                let full = format!("{prefix}{name}");
                let (shape, offset) = lookup
                    .remove(full.as_str())
                    .ok_or_else(|| bad(format!("array {full} missing")))?;
                if *shape != t.shape {
                    return Err(bad(format!("array {full}: shape {:?} in file, {:?} expected", shape, t.shape)));
                }
                let end = offset + 4 * t.data.len();
                let raw = blob.get(offset..end).ok_or_else(|| bad(format!("array {full} truncated")))?;
                for (dst, chunk) in t.data.iter_mut().zip(raw.chunks_exact(4)) {
                    *dst = T::of(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
                }
            }
            Ok(())
        };
        let mut params = ParameterSet::zeros(&config);
        fill(&mut params, "")?;
        let optimizer = match adam_t {
            Some(t) => {
                let mut m = ParameterSet::zeros(&config);
                let mut v = ParameterSet::zeros(&config);
                fill(&mut m, "adam.m.")?;
                fill(&mut v, "adam.v.")?;
                Some(OptimizerState { m, v, t })
            }
            None => None,
        };
        if let Some(extra) = lookup.keys().next() {
            return Err(bad(format!("unexpected array {extra}")));
        }
        Ok(Self {
            params,
            optimizer,
            phase,
            step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, expected)
    }
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}
