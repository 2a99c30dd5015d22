//! Plain-text key=value configuration with optional [section] headers.
//! A key inside `[hmc]` is addressed as `hmc.step`; dotted keys work the
//! same without the header. `#` starts a comment.

use gptape::error::{Error, Result};
use gptape::foundation::PriorSpec;
use std::collections::HashMap;
use std::path::Path;

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: HashMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = HashMap::new();
        let mut prefix = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(section) = line.strip_prefix('[') {
                let section = section.strip_suffix(']').ok_or_else(|| {
                    Error::Parse(format!("line {}: unterminated section header", lineno + 1))
                })?;
                prefix = section.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected key = value", lineno + 1))
            })?;
            let mut key = key.trim().to_string();
            if !prefix.is_empty() {
                key = format!("{prefix}.{key}");
            }
            if key.is_empty() {
                return Err(Error::Parse(format!("line {}: empty key", lineno + 1)));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Config { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn str_or(&self, key: &str, default: &str) -> String {
        self.get(key).unwrap_or(default).to_string()
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Parse(format!("config key {key:?} is required")))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::Parse(format!("config key {key:?}: bad integer {s:?}"))),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::Parse(format!("config key {key:?}: bad number {s:?}"))),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(s) => Err(Error::Parse(format!(
                "config key {key:?}: expected true/false, got {s:?}"
            ))),
        }
    }

    /// Parses `1:6` as an inclusive range or `1,2,4` as a list.
    pub fn usize_list_or(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        let Some(s) = self.get(key) else {
            return Ok(default.to_vec());
        };
        if let Some((a, b)) = s.split_once(':') {
            let lo: usize = a.trim().parse().map_err(|_| {
                Error::Parse(format!("config key {key:?}: bad range start {a:?}"))
            })?;
            let hi: usize = b.trim().parse().map_err(|_| {
                Error::Parse(format!("config key {key:?}: bad range end {b:?}"))
            })?;
            if lo == 0 || hi < lo {
                return Err(Error::Parse(format!("config key {key:?}: bad range {s:?}")));
            }
            return Ok((lo..=hi).collect());
        }
        s.split(',')
            .map(|part| {
                part.trim().parse().map_err(|_| {
                    Error::Parse(format!("config key {key:?}: bad list entry {part:?}"))
                })
            })
            .collect()
    }

    /// All `prior.<param> = spec` entries.
    pub fn priors(&self) -> Result<Vec<(String, PriorSpec)>> {
        let mut out = Vec::new();
        for (k, v) in &self.values {
            if let Some(name) = k.strip_prefix("prior.") {
                out.push((name.to_string(), parse_prior(v)?));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }

    /// Comma-separated parameter names under `fix = ...`.
    pub fn fixed_params(&self) -> Vec<String> {
        self.get("fix")
            .map(|s| {
                s.split(',')
                    .map(|p| p.trim().to_string())
                    .filter(|p| !p.is_empty())
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// `gaussian(mean,variance)`, `gamma(shape,rate)` or `uniform(low,high)`.
pub fn parse_prior(text: &str) -> Result<PriorSpec> {
    let text = text.trim();
    let open = text
        .find('(')
        .ok_or_else(|| Error::Parse(format!("bad prior {text:?}")))?;
    let name = &text[..open];
    let rest = text[open + 1..]
        .strip_suffix(')')
        .ok_or_else(|| Error::Parse(format!("bad prior {text:?}")))?;
    let args: Vec<f64> = rest
        .split(',')
        .map(|a| {
            a.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad prior argument {a:?}")))
        })
        .collect::<Result<_>>()?;
    if args.len() != 2 {
        return Err(Error::Parse(format!("prior {name:?} needs 2 arguments")));
    }
    match name {
        "gaussian" => Ok(PriorSpec::Gaussian { mean: args[0], variance: args[1] }),
        "gamma" => Ok(PriorSpec::Gamma { shape: args[0], rate: args[1] }),
        "uniform" => Ok(PriorSpec::Uniform { low: args[0], high: args[1] }),
        other => Err(Error::Parse(format!("unknown prior kind {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_dotted_keys() {
        let cfg = Config::parse(
            "model = svgp\nkernel = rbf() # comment\n[hmc]\nstep = 0.05\nleapfrog = 12\n",
        )
        .unwrap();
        assert_eq!(cfg.get("model"), Some("svgp"));
        assert_eq!(cfg.get("kernel"), Some("rbf()"));
        assert_eq!(cfg.f64_or("hmc.step", 0.0).unwrap(), 0.05);
        assert_eq!(cfg.usize_or("hmc.leapfrog", 0).unwrap(), 12);
    }

    #[test]
    fn range_and_list_values() {
        let cfg = Config::parse("a = 1:4\nb = 2,5,9\n").unwrap();
        assert_eq!(cfg.usize_list_or("a", &[]).unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(cfg.usize_list_or("b", &[]).unwrap(), vec![2, 5, 9]);
        assert_eq!(cfg.usize_list_or("c", &[7]).unwrap(), vec![7]);
    }

    #[test]
    fn priors_and_fix() {
        let cfg = Config::parse(
            "prior.kernel.rbf.variance = gamma(2, 0.5)\nprior.noise = gaussian(0,1)\nfix = a, b\n",
        )
        .unwrap();
        let priors = cfg.priors().unwrap();
        assert_eq!(priors.len(), 2);
        assert_eq!(priors[0].0, "kernel.rbf.variance");
        assert_eq!(cfg.fixed_params(), vec!["a", "b"]);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(Config::parse("just words\n").is_err());
        assert!(Config::parse("[unterminated\n").is_err());
        assert!(parse_prior("gamma(1)").is_err());
        assert!(parse_prior("cauchy(0,1)").is_err());
    }
}
