//! Method specs for `compare`: `name[:key=value]*`.

use rrnit_core::{Method, SolverConfig};

pub fn parse_method_spec(spec: &str, base: &SolverConfig) -> Result<SolverConfig, String> {
    let mut parts = spec.split(':');
    let name = parts.next().unwrap_or_default();
    let method: Method = name.parse().map_err(|e| format!("{spec}: {e}"))?;
    let mut cfg = SolverConfig {
        method,
        ..base.clone()
    };
    for part in parts {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| format!("{spec}: expected key=value, got `{part}`"))?;
        let num = || value.parse::<f64>().map_err(|_| format!("{spec}: `{key}` needs a number, got `{value}`"));
        match key {
            "p" => cfg.p = num()?,
            "q" => cfg.q = num()?,
            "lambda-bar" => cfg.lambda_bar = num()?,
            "tau" => cfg.tau = num()?,
            "max-outer" => {
                cfg.max_outer = value
                    .parse()
                    .map_err(|_| format!("{spec}: `max-outer` needs an integer, got `{value}`"))?
            }
            "m1" => cfg.multiplier.greedy = switch(spec, value)?,
            "m2" => cfg.multiplier.over_relax = switch(spec, value)?,
            "m3" => cfg.multiplier.warm_start = switch(spec, value)?,
            "warm-start" => cfg.multiplier.warm_start_mode = value.parse().map_err(|e| format!("{spec}: {e}"))?,
            other => return Err(format!("{spec}: unknown key `{other}`")),
        }
    }
    cfg.validate().map_err(|e| format!("{spec}: {e}"))?;
    Ok(cfg)
}

fn switch(spec: &str, value: &str) -> Result<bool, String> {
    match value {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => Err(format!("{spec}: expected on/off, got `{other}`")),
    }
}
