//! Flat `key = value` run configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::env::EnvModel;
use crate::error::{Error, Result};
use crate::walk::WalkKernel;

/// Every recognised key with its default and meaning. An empty default means "auto".
pub const KEYS: &[(&str, &str, &str)] = &[
    ("env.family", "gaussian", "gaussian | two-point | uniform"),
    ("env.a", "-1", "two-point: value carrying mass p"),
    ("env.b", "1", "two-point: value carrying mass 1 - p"),
    ("env.p", "0.5", "two-point: mass of a"),
    ("env.lo", "0", "uniform: lower end"),
    ("env.hi", "1", "uniform: upper end"),
    ("walk.kind", "srw", "srw | nu1 | nu2"),
    ("walk.d", "3", "dimension"),
    (
        "walk.rmax",
        "",
        "truncation radius of nu1/nu2 (auto: mass loss < 1e-10)",
    ),
    (
        "walk.quad_points",
        "16",
        "initial quadrature points per axis for the Green function",
    ),
    ("walk.horizon", "10000", "renewal table horizon"),
    ("field.mode", "point", "point | plane"),
    ("field.box", "", "plane half-width (auto: smallest boundary-free box)"),
    ("field.nmax", "50", "horizon N"),
    ("run.beta", "0.3", "inverse temperature"),
    ("run.A", "2,4,8,16", "overshoot levels"),
    ("run.R", "1000", "replicas"),
    ("run.seed", "1", "master seed"),
    ("run.p", "2", "moment order"),
    ("run.ngrid", "", "horizons for growth and scaling fits"),
    (
        "run.u",
        "1.5,2,3",
        "levels u for supermultiplicativity and localization",
    ),
    ("run.delta", "0.1,0.03,0.01", "localization thresholds"),
    ("run.k", "", "Hill order statistics (auto: floor(sqrt(R)))"),
    ("run.tol", "1e-10", "root and quadrature tolerance"),
    (
        "run.g",
        "min2",
        "spine test function: one | min2 | inv1p | above1 | inv",
    ),
    ("fluct.radius", "1", "bump radius"),
    ("fluct.amplitude", "1", "bump amplitude"),
    ("out.dir", "out", "output directory"),
    ("checkpoint.every", "10000", "replicas between checkpoints"),
    ("checkpoint.seconds", "60", "seconds between checkpoints"),
    (
        "checkpoint.halt_after",
        "",
        "stop once this many replicas are done (resume later)",
    ),
];

/// Defaults that differ per subcommand.
fn command_defaults(command: &str) -> &'static [(&'static str, &'static str)] {
    match command {
        "evolve" => &[("run.R", "1")],
        "tail" => &[("field.nmax", "200")],
        "overshoot" => &[("field.nmax", "200")],
        "localize" => &[("field.nmax", "200"), ("run.u", "4")],
        "second-moment" => &[("field.nmax", "20"), ("run.beta", "0.2")],
        "moment-growth" => &[("run.ngrid", "10,20,40")],
        "fluct" => &[("run.ngrid", "16,32,64,128"), ("run.R", "500"), ("run.beta", "0.2")],
        "spine-check" => &[("field.nmax", "20")],
        "oracle-check" => &[
            ("walk.d", "1"),
            ("field.nmax", "6"),
            ("env.family", "two-point"),
            ("run.R", "100"),
        ],
        _ => &[],
    }
}

fn is_known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_text(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::invalid(
                "config",
                format!("{origin}:{}: expected key = value", i + 1),
            ));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Reads a config file: either `key = value` text or a run manifest, whose
/// `config` object is replayed.
pub fn read_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    if text.trim_start().starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(&text)?;
        let Some(cfg) = v.get("config").and_then(|c| c.as_object()) else {
            return Err(Error::invalid(
                "config",
                format!("{} has no config object", path.display()),
            ));
        };
        return cfg
            .iter()
            .map(|(k, v)| match v.as_str() {
                Some(s) => Ok((k.clone(), s.to_string())),
                None => Err(Error::invalid(k, "manifest values must be strings")),
            })
            .collect();
    }
    parse_text(&text, &path.display().to_string())
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: String,
    values: BTreeMap<String, String>,
    explicit: BTreeSet<String>,
}

impl RunConfig {
    /// Defaults, then subcommand defaults, then `layers` in order.
    pub fn resolve(command: &str, layers: &[Vec<(String, String)>]) -> Result<Self> {
        let mut values: BTreeMap<String, String> =
            KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect();
        for (k, v) in command_defaults(command) {
            values.insert(k.to_string(), v.to_string());
        }
        let mut explicit = BTreeSet::new();
        for layer in layers {
            for (k, v) in layer {
                if !is_known(k) {
                    return Err(Error::invalid(k, "unknown configuration key"));
                }
                values.insert(k.clone(), v.clone());
                explicit.insert(k.clone());
            }
        }
        let cfg = RunConfig {
            command: command.to_string(),
            values,
            explicit,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let beta = self.f64("run.beta")?;
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::invalid(
                "run.beta",
                format!("must be a finite value >= 0, got {beta}"),
            ));
        }
        self.model()?;
        self.kernel_params()?;
        self.u64("run.seed")?;
        self.u64("run.R")?;
        self.u32("field.nmax")?;
        Ok(())
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    /// `key = value` lines in key order; the text the config hash is taken over.
    pub fn canonical(&self) -> String {
        let mut s = format!("command = {}\n", self.command);
        for (k, v) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }

    /// Hash of the keys that affect results: everything except the output
    /// directory and the checkpoint schedule. Checkpoints are keyed on it.
    pub fn run_hash(&self) -> String {
        let mut s = format!("command = {}\n", self.command);
        for (k, v) in &self.values {
            if k != "out.dir" && !k.starts_with("checkpoint.") {
                s.push_str(&format!("{k} = {v}\n"));
            }
        }
        hex(&Sha256::digest(s.as_bytes()))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| Error::invalid(key, format!("cannot parse {raw:?}")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.parse(key)
    }

    pub fn u32(&self, key: &str) -> Result<u32> {
        self.parse(key)
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.parse(key)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parse(key)
    }

    /// `None` when the key is left on auto.
    pub fn opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    pub fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::invalid(key, format!("cannot parse list entry {:?}", s.trim())))
            })
            .collect()
    }

    pub fn model(&self) -> Result<EnvModel> {
        match self.raw("env.family") {
            "gaussian" => Ok(EnvModel::gaussian()),
            "two-point" => EnvModel::two_point(self.f64("env.a")?, self.f64("env.b")?, self.f64("env.p")?),
            "uniform" => EnvModel::uniform(self.f64("env.lo")?, self.f64("env.hi")?),
            other => Err(Error::invalid("env.family", format!("unknown family {other:?}"))),
        }
    }

    fn kernel_params(&self) -> Result<(String, usize, Option<u64>)> {
        let kind = self.raw("walk.kind").to_string();
        if !matches!(kind.as_str(), "srw" | "nu1" | "nu2") {
            return Err(Error::invalid("walk.kind", format!("unknown kernel {kind:?}")));
        }
        Ok((kind, self.usize("walk.d")?, self.opt("walk.rmax")?))
    }

    pub fn kernel(&self) -> Result<WalkKernel> {
        let (kind, d, rmax) = self.kernel_params()?;
        match kind.as_str() {
            "srw" => WalkKernel::srw(d),
            "nu1" => {
                if d != 1 {
                    return Err(Error::invalid("walk.d", "nu1 lives on Z"));
                }
                WalkKernel::nu1(rmax)
            }
            _ => WalkKernel::nu2(d, rmax),
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn layers_override_in_order() {
        let c = RunConfig::resolve("tail", &[kv(&[("run.beta", "0.4")]), kv(&[("run.beta", "0.5")])]).unwrap();
        assert_eq!(c.f64("run.beta").unwrap(), 0.5);
        assert_eq!(c.u32("field.nmax").unwrap(), 200);
        assert!(c.is_explicit("run.beta"));
        assert!(!c.is_explicit("run.R"));
    }

    #[test]
    fn unknown_and_bad_keys_name_the_key() {
        let e = RunConfig::resolve("tail", &[kv(&[("run.betta", "0.4")])]).unwrap_err();
        assert!(e.to_string().contains("run.betta"));
        let e = RunConfig::resolve("tail", &[kv(&[("run.beta", "-1")])]).unwrap_err();
        assert!(e.to_string().contains("run.beta"));
        assert_eq!(e.exit_code(), 2);
        assert!(RunConfig::resolve("tail", &[kv(&[("env.family", "cauchy")])]).is_err());
    }

    #[test]
    fn text_format() {
        let parsed = parse_text("# comment\nrun.beta = 0.2  # trailing\n\nwalk.d=4\n", "t").unwrap();
        assert_eq!(parsed, kv(&[("run.beta", "0.2"), ("walk.d", "4")]));
        assert!(parse_text("run.beta 0.2", "t").is_err());
    }

    #[test]
    fn hash_tracks_values() {
        let a = RunConfig::resolve("tail", &[]).unwrap();
        let b = RunConfig::resolve("tail", &[kv(&[("run.seed", "2")])]).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), RunConfig::resolve("tail", &[]).unwrap().hash());
        let c = RunConfig::resolve("tail", &[kv(&[("checkpoint.halt_after", "5"), ("out.dir", "x")])]).unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.run_hash(), c.run_hash());
        let replay = parse_text(&a.canonical().lines().skip(1).collect::<Vec<_>>().join("\n"), "t").unwrap();
        assert_eq!(RunConfig::resolve("tail", &[replay]).unwrap().hash(), a.hash());
    }
}
