//! Run configuration shared by the CLI subcommands: a flat `key = value`
//! file whose keys mirror the command-line flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::deblur::{FinalStep, TileMode};
use crate::error::{Error, Result};
use crate::io::DEFAULT_GAMMA;
use crate::kv::{parse_num, parse_pairs};
use crate::pipeline::PipelineConfig;

const WHAT: &str = "run config";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub seed: u64,
    /// Directory for patch and solver diagnostics.
    pub report: Option<PathBuf>,
    /// Decoding gamma for PNG inputs.
    pub gamma: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            seed: 0,
            report: None,
            gamma: DEFAULT_GAMMA,
        }
    }
}

fn parse_opt<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v.eq_ignore_ascii_case("auto") || v.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse_num(key, v, WHAT).map(Some)
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::format(WHAT, format!("bad value for {key}: {v:?}"))),
    }
}

/// `off` or `NxM`.
pub fn parse_tiles(v: &str) -> Result<TileMode> {
    let v = v.trim().to_ascii_lowercase();
    if v == "off" || v == "1x1" {
        return Ok(TileMode::Off);
    }
    let (x, y) = v
        .split_once('x')
        .ok_or_else(|| Error::format(WHAT, format!("tiles must be off or NxM, got {v:?}")))?;
    Ok(TileMode::Grid {
        tiles_x: parse_num("tiles", x, WHAT)?,
        tiles_y: parse_num("tiles", y, WHAT)?,
    })
}

/// `rl:<iterations>` or `wiener:<reg>`.
pub fn parse_final_step(v: &str) -> Result<FinalStep> {
    let v = v.trim().to_ascii_lowercase();
    let (kind, arg) = v.split_once(':').unwrap_or((v.as_str(), ""));
    match kind {
        "rl" => Ok(FinalStep::RichardsonLucy {
            iterations: if arg.is_empty() { 30 } else { parse_num("final_step", arg, WHAT)? },
        }),
        "wiener" => Ok(FinalStep::Wiener {
            reg: if arg.is_empty() { 1e-2 } else { parse_num("final_step", arg, WHAT)? },
        }),
        _ => Err(Error::format(WHAT, format!("final_step must be rl:N or wiener:R, got {v:?}"))),
    }
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
}

impl RunConfig {
    /// Sets one key. Keys are the long flag names with `-` folded to `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().to_ascii_lowercase().replace('-', "_");
        let v = value.trim();
        let p = &mut self.pipeline;
        let k = key.as_str();
        match k {
            "patch_size" => p.selection.patch_size = parse_num(k, v, WHAT)?,
            "stride" => p.selection.stride = parse_opt(k, v)?,
            "ts" => p.selection.saturation_threshold = parse_num(k, v, WHAT)?,
            "tau_b" => p.selection.tau_b = parse_num(k, v, WHAT)?,
            "tau_g" => p.selection.tau_g = parse_opt(k, v)?,
            "top_n" => p.selection.top_n = parse_num(k, v, WHAT)?,
            "proxy_iterations" => p.selection.proxy_iterations = parse_num(k, v, WHAT)?,
            "proxy_kernel_size" => p.selection.proxy_kernel_size = parse_num(k, v, WHAT)?,
            "dark_quantile" => p.dark_quantile = parse_num(k, v, WHAT)?,
            "lambda" => p.solver.lambda = parse_num(k, v, WHAT)?,
            "max_iters" => p.solver.max_iters = parse_num(k, v, WHAT)?,
            "step" => p.solver.step = parse_num(k, v, WHAT)?,
            "tol" => p.solver.tol = parse_num(k, v, WHAT)?,
            "wiener_reg" => p.solver.wiener_reg = parse_num(k, v, WHAT)?,
            "noise_sigma" => p.solver.noise_sigma = parse_opt(k, v)?,
            "kernel_size" => p.deblur.kernel_size = parse_num(k, v, WHAT)?,
            "pyramid_levels" => p.deblur.pyramid_levels = parse_opt(k, v)?,
            "outer_iters" => p.deblur.outer_iters = parse_num(k, v, WHAT)?,
            "image_reg" => p.deblur.image_reg = parse_num(k, v, WHAT)?,
            "kernel_reg" => p.deblur.kernel_reg = parse_num(k, v, WHAT)?,
            "final_step" => p.deblur.final_step = parse_final_step(v)?,
            "tiles" => p.deblur.tile_mode = parse_tiles(v)?,
            "no_saturation" => p.no_saturation = parse_bool(k, v)?,
            "report" => self.report = (!v.is_empty()).then(|| PathBuf::from(v)),
            "seed" => self.seed = parse_num(k, v, WHAT)?,
            "gamma" => self.gamma = parse_num(k, v, WHAT)?,
            _ => return Err(Error::format(WHAT, format!("unknown key {key}"))),
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_pairs(text, WHAT)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        if !(self.gamma > 0.0) {
            return Err(Error::invalid(format!("gamma must be > 0, got {}", self.gamma)));
        }
        Ok(())
    }

    /// Every key with its resolved value; parses back to an equal config.
    pub fn to_kv_string(&self) -> String {
        let p = &self.pipeline;
        let (s, d) = (&p.selection, &p.deblur);
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("patch_size", s.patch_size.to_string());
        put("stride", opt_str(&s.stride));
        put("ts", s.saturation_threshold.to_string());
        put("tau_b", s.tau_b.to_string());
        put("tau_g", opt_str(&s.tau_g));
        put("top_n", s.top_n.to_string());
        put("proxy_iterations", s.proxy_iterations.to_string());
        put("proxy_kernel_size", s.proxy_kernel_size.to_string());
        put("dark_quantile", p.dark_quantile.to_string());
        put("lambda", p.solver.lambda.to_string());
        put("max_iters", p.solver.max_iters.to_string());
        put("step", p.solver.step.to_string());
        put("tol", p.solver.tol.to_string());
        put("wiener_reg", p.solver.wiener_reg.to_string());
        put("noise_sigma", opt_str(&p.solver.noise_sigma));
        put("kernel_size", d.kernel_size.to_string());
        put("pyramid_levels", opt_str(&d.pyramid_levels));
        put("outer_iters", d.outer_iters.to_string());
        put("image_reg", d.image_reg.to_string());
        put("kernel_reg", d.kernel_reg.to_string());
        put(
            "final_step",
            match d.final_step {
                FinalStep::RichardsonLucy { iterations } => format!("rl:{iterations}"),
                FinalStep::Wiener { reg } => format!("wiener:{reg}"),
            },
        );
        put(
            "tiles",
            match d.tile_mode {
                TileMode::Off => "off".to_string(),
                TileMode::Grid { tiles_x, tiles_y } => format!("{tiles_x}x{tiles_y}"),
            },
        );
        put("no_saturation", p.no_saturation.to_string());
        put("report", self.report.as_ref().map_or(String::new(), |r| r.display().to_string()));
        put("seed", self.seed.to_string());
        put("gamma", self.gamma.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_kv(&cfg.to_kv_string()).unwrap(), cfg);
    }

    #[test]
    fn keys_accept_flag_spelling() {
        let cfg = RunConfig::from_kv("patch-size = 32\ntau-g = 0.4\ntiles = 2x3\nfinal-step = wiener:0.05\n").unwrap();
        assert_eq!(cfg.pipeline.selection.patch_size, 32);
        assert_eq!(cfg.pipeline.selection.tau_g, Some(0.4));
        assert_eq!(cfg.pipeline.deblur.tile_mode, TileMode::Grid { tiles_x: 2, tiles_y: 3 });
        assert_eq!(cfg.pipeline.deblur.final_step, FinalStep::Wiener { reg: 0.05 });
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_kv("colour = red\n").is_err());
        assert!(RunConfig::from_kv("top_n = many\n").is_err());
        assert!(RunConfig::from_kv("tiles = 3\n").is_err());
        assert!(RunConfig::from_kv("no_saturation = maybe\n").is_err());
    }

    proptest! {
        #[test]
        fn round_trips_arbitrary_values(
            patch in 8usize..256,
            ts in 0.5f64..1.0,
            lambda in 0.0f64..1.0,
            tiles in proptest::option::of((1usize..5, 1usize..5)),
            tau_g in proptest::option::of(0.0f64..100.0),
            iters in 1usize..100,
            seed in any::<u64>(),
            no_sat in any::<bool>(),
        ) {
            let mut cfg = RunConfig::default();
            cfg.pipeline.selection.patch_size = patch;
            cfg.pipeline.selection.saturation_threshold = ts;
            cfg.pipeline.selection.tau_g = tau_g;
            cfg.pipeline.solver.lambda = lambda;
            cfg.pipeline.deblur.tile_mode = match tiles {
                Some((x, y)) if x * y > 1 => TileMode::Grid { tiles_x: x, tiles_y: y },
                _ => TileMode::Off,
            };
            cfg.pipeline.deblur.final_step = FinalStep::RichardsonLucy { iterations: iters };
            cfg.pipeline.no_saturation = no_sat;
            cfg.seed = seed;
            cfg.report = Some(PathBuf::from("diag"));
            prop_assert_eq!(RunConfig::from_kv(&cfg.to_kv_string()).unwrap(), cfg);
        }
    }
}
