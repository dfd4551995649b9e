//! Plain `key = value` configuration files with explicit types.

use crate::error::{Error, Result};
use crate::inference::{InferenceConfig, InferenceMode};
use crate::trainer::TrainConfig;

/// Apply a config file on top of defaults; unknown keys are rejected so typos
/// cannot silently fall back to defaults.
pub fn apply_config(text: &str, train: &mut TrainConfig, infer: &mut InferenceConfig) -> Result<()> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                offset: lineno as u64,
                detail: format!("expected `key = value`, got `{}`", line),
            });
        };
        apply_key(key.trim(), value.trim(), train, infer)
            .map_err(|e| Error::Config(format!("line {}: {}", lineno + 1, e)))?;
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{}` for `{}`", value, key)))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{}` for `{}`", value, key))),
    }
}

fn apply_key(key: &str, value: &str, t: &mut TrainConfig, i: &mut InferenceConfig) -> Result<()> {
    match key {
        "way" | "m" => t.way = parse(key, value)?,
        "shots" | "k" => t.shots = parse(key, value)?,
        "queries_per_class" | "t" => t.queries_per_class = parse(key, value)?,
        "episodes" => t.episodes = parse(key, value)?,
        "tau" => t.tau = parse(key, value)?,
        "learning_rate" => t.learning_rate = parse(key, value)?,
        "weight_decay" => t.weight_decay = parse(key, value)?,
        "grad_accumulation" => t.grad_accumulation = parse(key, value)?,
        "seed" => t.seed = parse(key, value)?,
        "d_o" => t.d_o = parse(key, value)?,
        "d" => t.d = parse(key, value)?,
        "d_e" => t.d_e = parse(key, value)?,
        "eta" => t.eta = parse(key, value)?,
        "film_hidden" => t.film_hidden = parse(key, value)?,
        "dpaa_layers" => t.dpaa_layers = parse(key, value)?,
        "dpaa_heads" => t.dpaa_heads = parse(key, value)?,
        "shared_kv" => t.shared_kv = parse_bool(key, value)?,
        "stage_a_learning_rate" => t.stage_a_learning_rate = parse(key, value)?,
        "stage_a_iterations" => t.stage_a_iterations = parse(key, value)?,
        "l_max" => t.l_max = Some(parse(key, value)?),
        "weight_by_size" => t.weight_by_size = parse_bool(key, value)?,
        "conv1_channels" => t.conv1_channels = parse(key, value)?,
        "conv2_channels" => t.conv2_channels = parse(key, value)?,
        "conv_kernel" => t.conv_kernel = parse(key, value)?,
        "conv_stride" => t.conv_stride = parse(key, value)?,
        "mode" => i.mode = InferenceMode::parse(value)?,
        "propagation_alpha" => i.propagation_alpha = parse(key, value)?,
        "propagation_iterations" => i.propagation_iterations = parse(key, value)?,
        "refine_blend" => i.refine_blend = parse(key, value)?,
        "score_blend" => i.score_blend = parse(key, value)?,
        _ => return Err(Error::Config(format!("unknown configuration key `{}`", key))),
    }
    Ok(())
}

/// Render the fully resolved configuration (for `--show-config`).
pub fn render_config(t: &TrainConfig, i: &InferenceConfig) -> String {
    format!(
        "way = {}\nshots = {}\nqueries_per_class = {}\nepisodes = {}\ntau = {}\nlearning_rate = {}\nweight_decay = {}\ngrad_accumulation = {}\nseed = {}\nd_o = {}\nd = {}\nd_e = {}\neta = {}\nfilm_hidden = {}\ndpaa_layers = {}\ndpaa_heads = {}\nshared_kv = {}\nstage_a_learning_rate = {}\nstage_a_iterations = {}\nl_max = {}\nweight_by_size = {}\nconv1_channels = {}\nconv2_channels = {}\nconv_kernel = {}\nconv_stride = {}\nmode = {}\npropagation_alpha = {}\npropagation_iterations = {}\nrefine_blend = {}\nscore_blend = {}\n",
        t.way,
        t.shots,
        t.queries_per_class,
        t.episodes,
        t.tau,
        t.learning_rate,
        t.weight_decay,
        t.grad_accumulation,
        t.seed,
        t.d_o,
        t.d,
        t.d_e,
        t.eta,
        t.film_hidden,
        t.dpaa_layers,
        t.dpaa_heads,
        t.shared_kv,
        t.stage_a_learning_rate,
        t.stage_a_iterations,
        t.l_max.map(|v| v.to_string()).unwrap_or_else(|| "auto".into()),
        t.weight_by_size,
        t.conv1_channels,
        t.conv2_channels,
        t.conv_kernel,
        t.conv_stride,
        i.mode.name(),
        i.propagation_alpha,
        i.propagation_iterations,
        i.refine_blend,
        i.score_blend,
    )
}
