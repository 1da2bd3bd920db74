//! Resolution of a run configuration from defaults, a config file and
//! command-line overrides.

use crate::CliError;
use rsgm_core::config::{parse_bool, parse_value, KeyValues};
use rsgm_core::data::{fixture_csv, load_latlon_csv, parse_latlon_csv, synth_so3_mixture, synth_torus_target, Dataset};
use rsgm_core::likelihood::OdeConfig;
use rsgm_core::nn::NetworkSpec;
use rsgm_core::sde::{NoiseSchedule, NoisingProcess, ProcessKind, SamplerConfig};
use rsgm_core::train::{LossKind, LossSpec, TrainConfig};
use rsgm_core::{FrameScheme, Manifold};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "RSGM_OUTPUT_DIR";

const KNOWN_KEYS: &[&str] = &[
    "manifold",
    "dataset",
    "n_data",
    "torus_sigma",
    "mixture_components",
    "data_seed",
    "process",
    "langevin_gamma",
    "beta_min",
    "beta_max",
    "eps",
    "horizon",
    "frame",
    "layers",
    "width",
    "loss",
    "weighting",
    "probes",
    "hk_order",
    "hk_tau",
    "hk_method",
    "batch_size",
    "iters",
    "lr",
    "learning_rate",
    "beta1",
    "beta2",
    "warmup",
    "forward_steps",
    "steps",
    "corrector",
    "corrector_steps",
    "snr",
    "rtol",
    "atol",
    "max_steps",
    "retraction",
    "seed",
    "output",
];

#[derive(Clone, Debug)]
pub struct RunConfig {
    /// Every resolved key, as recorded in the manifest.
    pub raw: KeyValues,
    pub manifold: Manifold,
    pub dataset: Option<String>,
    pub process: NoisingProcess,
    pub net: NetworkSpec,
    pub loss: LossSpec,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub ode: OdeConfig,
    pub seed: u64,
    pub output: PathBuf,
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl RunConfig {
    /// File entries override defaults and `overrides` override the file.
    pub fn resolve(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self, CliError> {
        let mut raw = KeyValues::default();
        if let Some(path) = file {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
            raw = KeyValues::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        }
        for o in overrides {
            let (k, v) = KeyValues::parse_override(o).map_err(config_err)?;
            raw.set(&k, &v);
        }
        if let Some(s) = seed {
            raw.set("seed", &s.to_string());
        }
        Self::from_kv(raw)
    }

    pub fn from_kv(raw: KeyValues) -> Result<Self, CliError> {
        if let Some((k, _)) = raw.iter().find(|(k, _)| !KNOWN_KEYS.contains(k)) {
            return Err(CliError::Config(format!("unknown config key '{k}'")));
        }
        let get = |k: &str| raw.get(k);
        let manifold: Manifold =
            get("manifold").ok_or_else(|| CliError::Config("config must set 'manifold'".into()))?.parse().map_err(config_err)?;
        let num =
            |k: &str, default: f64| -> Result<f64, CliError> { get(k).map_or(Ok(default), |v| parse_value(k, v).map_err(config_err)) };
        let int =
            |k: &str, default: usize| -> Result<usize, CliError> { get(k).map_or(Ok(default), |v| parse_value(k, v).map_err(config_err)) };

        let seed: u64 = get("seed").map_or(Ok(0), |v| parse_value("seed", v).map_err(config_err))?;
        let schedule = NoiseSchedule {
            horizon: num("horizon", 1.0)?,
            eps: num("eps", 1e-3)?,
            beta_min: num("beta_min", 0.001)?,
            beta_max: num("beta_max", 10.0)?,
        };
        schedule.validate().map_err(config_err)?;
        let default_process = match manifold {
            Manifold::Euclidean(_) => "ou",
            Manifold::Hyperbolic(_) => "langevin",
            _ => "brownian",
        };
        let kind = match get("process").unwrap_or(default_process).to_ascii_lowercase().as_str() {
            "brownian" => ProcessKind::BrownianCompact,
            "ou" => ProcessKind::EuclideanOU,
            "langevin" => ProcessKind::LangevinWrapped { mu: manifold.origin(), gamma: num("langevin_gamma", 1.0)? },
            other => return Err(CliError::Config(format!("unknown process '{other}'"))),
        };
        let process = NoisingProcess::new(manifold, kind, schedule).map_err(config_err)?;

        let default_frame = match manifold {
            Manifold::Torus(_) => FrameScheme::Coordinates,
            Manifold::SpecialOrthogonal => FrameScheme::LieFrame,
            _ => FrameScheme::Projected,
        };
        let frame = get("frame").map_or(Ok(default_frame), |v| v.parse()).map_err(config_err)?;
        let mut net = NetworkSpec::new(manifold, frame)
            .map_err(config_err)?
            .with_hidden(int("layers", 3)?, int("width", 512)?)
            .map_err(config_err)?;
        net.horizon = schedule.horizon;

        let default_loss = match (manifold, &process.kind) {
            (Manifold::Torus(_), ProcessKind::BrownianCompact) | (_, ProcessKind::EuclideanOU) => LossKind::DsmExact,
            (Manifold::Sphere(_), _) => LossKind::DsmTruncated,
            _ => LossKind::DsmVaradhan,
        };
        let mut loss = LossSpec::new(default_loss);
        loss.apply(&raw).map_err(config_err)?;
        loss.validate(&process).map_err(config_err)?;

        let mut train = TrainConfig { seed, ..Default::default() };
        train.apply(&raw).map_err(config_err)?;

        let corrector = get("corrector").map_or(Ok(false), |v| parse_bool("corrector", v)).map_err(config_err)?;
        let sampler = SamplerConfig {
            steps: int("steps", 100)?,
            corrector_steps: if corrector { int("corrector_steps", 1)? } else { 0 },
            snr: num("snr", 0.15)?,
        };
        if sampler.steps == 0 {
            return Err(CliError::Config("sampler steps must be positive".into()));
        }
        let ode = OdeConfig {
            rtol: num("rtol", 1e-5)?,
            atol: num("atol", 1e-5)?,
            max_steps: int("max_steps", 100_000)?,
            retraction: get("retraction")
                .map_or(Ok(rsgm_core::likelihood::Retraction::ProjectEachStep), |v| v.parse())
                .map_err(config_err)?,
        };
        ode.validate().map_err(config_err)?;

        let dataset = get("dataset").map(str::to_string);
        if let Some(d) = &dataset {
            if !d.contains(':') && !Path::new(d).exists() {
                return Err(CliError::Config(format!("dataset file not found: {d}")));
            }
        }
        let output = match get("output") {
            Some(o) => PathBuf::from(o),
            None => std::env::var_os(OUTPUT_ENV).map_or_else(|| PathBuf::from("rsgm-out"), PathBuf::from),
        };
        Ok(RunConfig { raw, manifold, dataset, process, net, loss, train, sampler, ode, seed, output })
    }

    /// SHA-256 of the canonical config text.
    pub fn hash_hex(&self) -> String {
        Sha256::digest(self.raw.to_text().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Loads or generates the dataset; generators are `synth:torus`,
    /// `synth:so3` and `fixture:<name>`.
    pub fn load_dataset(&self) -> Result<Dataset, CliError> {
        let spec = self.dataset.as_deref().ok_or_else(|| CliError::Config("config must set 'dataset'".into()))?;
        let int = |k: &str, default: usize| -> Result<usize, CliError> {
            self.raw.get(k).map_or(Ok(default), |v| parse_value(k, v).map_err(config_err))
        };
        let data_seed: u64 = self.raw.get("data_seed").map_or(Ok(self.seed), |v| parse_value("data_seed", v).map_err(config_err))?;
        let n = int("n_data", 10_000)?;
        let mut rng = rsgm_core::stream_rng(data_seed, 1);
        let ds = match spec.split_once(':') {
            Some(("synth", "torus")) => {
                let Manifold::Torus(d) = self.manifold else {
                    return Err(CliError::Config("synth:torus needs a torus manifold".into()));
                };
                let sigma = self.raw.get("torus_sigma").map_or(Ok(0.2), |v| parse_value("torus_sigma", v)).map_err(config_err)?;
                let target = synth_torus_target(d, sigma, data_seed).map_err(config_err)?;
                Dataset::new(self.manifold, (0..n).map(|_| target.sample(&mut rng)).collect(), data_seed, spec)
            }
            Some(("synth", "so3")) => {
                if self.manifold != Manifold::SpecialOrthogonal {
                    return Err(CliError::Config("synth:so3 needs the SO3 manifold".into()));
                }
                let mix = synth_so3_mixture(int("mixture_components", 16)?, data_seed).map_err(config_err)?;
                Dataset::new(self.manifold, (0..n).map(|_| mix.sample(&mut rng)).collect(), data_seed, spec)
            }
            Some(("fixture", name)) => {
                let text = fixture_csv(name).map_err(config_err)?;
                Dataset::new(Manifold::Sphere(2), parse_latlon_csv(&text).map_err(config_err)?, data_seed, spec)
            }
            Some(_) => return Err(CliError::Config(format!("unknown dataset generator '{spec}'"))),
            None if spec.ends_with(".csv") => load_latlon_csv(Path::new(spec), data_seed),
            None => Dataset::load(Path::new(spec)),
        }
        .map_err(|e| CliError::Config(format!("dataset {spec}: {e}")))?;
        if ds.manifold != self.manifold {
            return Err(CliError::Config(format!("dataset lives on {} but the run is on {}", ds.manifold, self.manifold)));
        }
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(pairs: &[(&str, &str)]) -> KeyValues {
        let mut k = KeyValues::default();
        for (a, b) in pairs {
            k.set(a, b);
        }
        k
    }

    #[test]
    fn defaults_follow_the_manifold() {
        let c = RunConfig::from_kv(kv(&[("manifold", "T2")])).unwrap();
        assert_eq!(c.net.scheme, FrameScheme::Coordinates);
        assert_eq!(c.loss.kind, LossKind::DsmExact);
        let c = RunConfig::from_kv(kv(&[("manifold", "so3")])).unwrap();
        assert_eq!(c.net.scheme, FrameScheme::LieFrame);
        assert_eq!(c.loss.kind, LossKind::DsmVaradhan);
        let c = RunConfig::from_kv(kv(&[("manifold", "S2"), ("corrector", "on")])).unwrap();
        assert_eq!(c.loss.kind, LossKind::DsmTruncated);
        assert_eq!(c.sampler.corrector_steps, 1);
    }

    #[test]
    fn precedence_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("run.cfg");
        std::fs::write(&f, "manifold = S2\niters = 5\nseed = 3 # from the file\n").unwrap();
        let c = RunConfig::resolve(Some(&f), &["iters=7".into()], None).unwrap();
        assert_eq!((c.train.iters, c.seed), (7, 3));
        let c = RunConfig::resolve(Some(&f), &[], Some(9)).unwrap();
        assert_eq!(c.seed, 9);
        assert!(matches!(RunConfig::from_kv(kv(&[("manifold", "S2"), ("itres", "5")])), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::from_kv(kv(&[("iters", "5")])), Err(CliError::Config(_))));
        assert!(
            matches!(RunConfig::from_kv(kv(&[("manifold", "S2"), ("dataset", "/no/such.csv")])), Err(CliError::Config(m)) if m.contains("/no/such.csv"))
        );
        assert!(RunConfig::from_kv(kv(&[("manifold", "S2"), ("loss", "dsm_exact")])).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_kv(kv(&[("manifold", "S2")])).unwrap();
        let b = RunConfig::from_kv(kv(&[("manifold", "S2"), ("iters", "3")])).unwrap();
        assert_ne!(a.hash_hex(), b.hash_hex());
        assert_eq!(a.hash_hex().len(), 64);
    }
}
