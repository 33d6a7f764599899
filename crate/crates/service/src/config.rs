//! Service configuration: defaults, then a TOML file, then environment
//! variables prefixed `DUELBENCH_` (nested keys joined with `__`).

use std::path::{Path, PathBuf};

use duelbench::platform::PlatformConfig;
use duelbench::qa::QaConfig;
use duelbench::ranking::{BootstrapConfig, FitConfig};
use duelbench::scheduler::SchedulerConfig;
use figment::providers::{Env, Format, Serialized, Toml};
use figment::Figment;
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "DUELBENCH_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    /// Directory holding the built annotation UI, served at `/`.
    pub static_dir: Option<PathBuf>,
    /// Bearer token required for administrative calls; open when unset.
    pub admin_token: Option<String>,
    /// Origins allowed to call the API from a browser. `["*"]` allows any.
    pub cors_allowed_origins: Vec<String>,
    /// How often overdue sessions are expired, in milliseconds.
    pub expiry_sweep_ms: u64,
    pub sync_writes: bool,
    pub qa: QaConfig,
    pub fit: FitConfig,
    pub scheduler: SchedulerConfig,
    pub bootstrap: BootstrapConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("duelbench-data"),
            static_dir: None,
            admin_token: None,
            cors_allowed_origins: Vec::new(),
            expiry_sweep_ms: 30_000,
            sync_writes: true,
            qa: QaConfig::default(),
            fit: FitConfig::default(),
            scheduler: SchedulerConfig::default(),
            bootstrap: BootstrapConfig::default(),
        }
    }
}

impl ServiceConfig {
    /// Layers the optional file and the environment over the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, figment::Error> {
        let mut figment = Figment::from(Serialized::defaults(ServiceConfig::default()));
        if let Some(path) = path {
            if !path.is_file() {
                return Err(figment::Error::from(format!("config file {} not found", path.display())));
            }
            figment = figment.merge(Toml::file(path));
        }
        figment.merge(Env::prefixed(ENV_PREFIX).split("__")).extract()
    }

    pub fn platform_config(&self) -> PlatformConfig {
        PlatformConfig {
            data_dir: Some(self.data_dir.clone()),
            qa: self.qa,
            fit: self.fit,
            scheduler: self.scheduler,
            bootstrap: self.bootstrap,
            sync_writes: self.sync_writes,
            retain_log: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use figment::Jail;

    use super::*;

    #[test]
    fn defaults_without_sources() {
        Jail::expect_with(|_| {
            assert_eq!(ServiceConfig::load(None).unwrap(), ServiceConfig::default());
            Ok(())
        });
    }

    #[test]
    fn file_then_environment() {
        Jail::expect_with(|jail| {
            jail.create_file(
                "service.toml",
                r#"
                    listen = "0.0.0.0:9000"
                    cors_allowed_origins = ["http://localhost:5173"]
                    [qa]
                    min_time_ms_per_task = 1500
                    [scheduler]
                    seed = 7
                "#,
            )?;
            jail.set_env("DUELBENCH_SCHEDULER__SEED", "11");
            jail.set_env("DUELBENCH_ADMIN_TOKEN", "s3cret");
            let config = ServiceConfig::load(Some(Path::new("service.toml"))).unwrap();
            assert_eq!(config.listen, "0.0.0.0:9000");
            assert_eq!(config.qa.min_time_ms_per_task, 1500);
            assert_eq!(config.qa.failures_to_disqualify, 2);
            assert_eq!(config.scheduler.seed, 11);
            assert_eq!(config.admin_token.as_deref(), Some("s3cret"));
            assert_eq!(config.cors_allowed_origins, vec!["http://localhost:5173".to_string()]);
            Ok(())
        });
    }

    #[test]
    fn missing_file_is_an_error() {
        Jail::expect_with(|_| {
            assert!(ServiceConfig::load(Some(Path::new("nope.toml"))).is_err());
            Ok(())
        });
    }
}
