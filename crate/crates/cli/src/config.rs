//! Sensor configuration from a TOML file or an inline `key=value` list.

use std::path::Path;

use anyhow::{Context, Result};
use modspike_core::{SensorConfig, Validate};

/// Accepts a path to a TOML file, or pairs separated by commas, semicolons
/// or newlines (`threshold=2,readout_rate_hz=1000,reset=zero`). Bare string
/// values need no quotes.
pub fn parse_sensor_config(spec: Option<&str>) -> Result<SensorConfig> {
    let cfg = match spec {
        None => SensorConfig::default(),
        Some(s) if Path::new(s).is_file() => {
            let text = std::fs::read_to_string(s).with_context(|| format!("reading {s}"))?;
            toml::from_str(&text).with_context(|| format!("parsing {s}"))?
        }
        Some(s) => toml::from_str(&inline_to_toml(s)?).context("parsing --config")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn inline_to_toml(s: &str) -> Result<String> {
    let mut out = String::new();
    for pair in s.split([',', ';', '\n']).map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .with_context(|| format!("expected key=value, got {pair:?}"))?;
        let (k, v) = (k.trim(), v.trim());
        let line = format!("{k} = {v}");
        // bare words such as `zero` become strings
        if toml::from_str::<toml::Table>(&line).is_ok() {
            out.push_str(&line);
        } else {
            out.push_str(&format!("{k} = {:?}", v));
        }
        out.push('\n');
    }
    Ok(out)
}
