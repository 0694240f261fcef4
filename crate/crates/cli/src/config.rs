//! Run configuration: one JSON document plus flag overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use captain_core::conditioning::Conditioning;
use captain_core::denoiser::{GaussianMixtureModel, MemorizationStrength, MemorizingDenoiser, MixtureDenoiser};
use captain_core::formats::{load_attention, load_gm, read_latent, read_text};
use captain_core::inject::{InjectionConfig, WindowSetting};
use captain_core::latent::{Latent, SoftMap};
use captain_core::metrics::AblationGrid;
use captain_core::schedule::NoiseSchedule;
use captain_core::spatial::{ConceptMaskProvider, FixedMap, StackConcept, SyntheticBe, DEFAULT_BE_WINDOW};
use captain_core::window::InjectionWindow;
use captain_core::world::{World, WorldConfig};

use crate::failure::{CliResult, Failure};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Captain,
    Vanilla,
}

/// Keys beside the injection settings. Paths are relative to the config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Inputs {
    pub mode: Mode,
    pub x_r: Option<PathBuf>,
    pub mem_target: Option<PathBuf>,
    pub gm_model: Option<PathBuf>,
    pub gm_unconditional: Option<PathBuf>,
    pub conditioning: Option<PathBuf>,
    pub prompt: Option<String>,
    pub attention: Option<PathBuf>,
    pub memorization: Option<MemorizationStrength>,
    pub world: Option<WorldConfig>,
    pub grid: Option<AblationGrid>,
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub injection: InjectionConfig,
    pub inputs: Inputs,
}

/// Flags that override the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Run configuration JSON
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// LOW:HIGH, or "auto" to locate it from a preliminary pass
    #[arg(long)]
    pub window: Option<String>,
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long = "cfg-scale")]
    pub cfg_scale: Option<f64>,
}

fn parse_window(text: &str) -> CliResult<WindowSetting> {
    if text == "auto" {
        return Ok(WindowSetting::Auto);
    }
    let (lo, hi) = text
        .split_once(':')
        .ok_or_else(|| Failure::usage(format!("window {text:?} is not LOW:HIGH")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Failure::usage(format!("window bound {s:?} is not an integer")))
    };
    Ok(WindowSetting::Fixed(InjectionWindow::new(parse(lo)?, parse(hi)?)?))
}

/// Splits the document into injection keys and the remaining inputs, so an
/// unknown key anywhere is rejected.
pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    let value: Value = serde_json::from_str(text)?;
    let Value::Object(doc) = value else {
        return Err(Failure::usage("config must be a JSON object"));
    };
    let injection_keys: Vec<String> = match serde_json::to_value(InjectionConfig::default())? {
        Value::Object(m) => m.keys().cloned().collect(),
        _ => unreachable!("InjectionConfig serializes to an object"),
    };
    let (mut inj, mut rest) = (Map::new(), Map::new());
    for (k, v) in doc {
        if injection_keys.contains(&k) {
            inj.insert(k, v);
        } else {
            rest.insert(k, v);
        }
    }
    Ok(RunConfig {
        injection: serde_json::from_value(Value::Object(inj))?,
        inputs: serde_json::from_value(Value::Object(rest))?,
    })
}

impl RunConfig {
    /// Reads the config (or defaults), applies flags, and validates.
    pub fn load(over: &Overrides) -> CliResult<(Self, PathBuf)> {
        let (mut cfg, base) = match &over.config {
            Some(path) => {
                let text = read_text(path)?;
                let cfg = parse_config(&text)
                    .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (cfg, base)
            }
            None => (RunConfig::default(), PathBuf::new()),
        };
        let inj = &mut cfg.injection;
        if let Some(v) = over.seed {
            inj.seed = v;
        }
        if let Some(v) = over.delta {
            inj.delta = v;
        }
        if let Some(v) = over.tau {
            inj.tau = v;
        }
        if let Some(w) = &over.window {
            inj.window = parse_window(w)?;
        }
        if let Some(v) = over.cutoff {
            inj.cutoff = v;
        }
        if let Some(v) = over.eta {
            inj.eta = v;
        }
        if let Some(v) = over.cfg_scale {
            inj.cfg_scale = v;
        }
        inj.validate()?;
        cfg.inputs.resolve_paths(&base)?;
        Ok((cfg, base))
    }
}

impl Inputs {
    fn paths_mut(&mut self) -> [&mut Option<PathBuf>; 6] {
        [
            &mut self.x_r,
            &mut self.mem_target,
            &mut self.gm_model,
            &mut self.gm_unconditional,
            &mut self.conditioning,
            &mut self.attention,
        ]
    }

    /// Makes paths absolute against the config directory and checks they exist.
    fn resolve_paths(&mut self, base: &Path) -> CliResult {
        for p in self.paths_mut().into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.is_file() {
                return Err(Failure::usage(format!("input file {} does not exist", p.display())));
            }
        }
        if self.gm_model.is_none() {
            if self.gm_unconditional.is_some() {
                return Err(Failure::usage("gm_unconditional needs gm_model"));
            }
        } else if self.mem_target.is_none() {
            return Err(Failure::usage("a gm_model config also needs mem_target"));
        }
        Ok(())
    }
}

/// Everything a generation needs, loaded from files or the built-in scenario.
pub struct Scene {
    pub denoiser: MemorizingDenoiser<MixtureDenoiser>,
    pub reference: Latent,
    pub mem_target: Latent,
    pub conditioning: Conditioning,
    pub be: SyntheticBe,
    pub concept: Box<dyn ConceptMaskProvider>,
}

fn mean_of_means(gm: &GaussianMixtureModel) -> CliResult<Latent> {
    let (c, h, w) = gm.shape();
    let mut acc = Latent::zeros(c, h, w);
    for comp in gm.components() {
        acc = acc.lincomb(1.0, &comp.mean, comp.weight)?;
    }
    Ok(acc)
}

impl Scene {
    pub fn load(cfg: &RunConfig) -> CliResult<Self> {
        let inputs = &cfg.inputs;
        let schedule = NoiseSchedule::stable_diffusion(cfg.injection.eta)?;
        let attention = inputs.attention.as_deref().map(load_attention).transpose()?.map(|(stack, _)| stack);

        let (base, mem_target, default_ref, default_cond, default_strength, world_attention) = match &inputs.gm_model {
            None => {
                let world = World::build_with_schedule(inputs.world.clone().unwrap_or_default(), schedule)?;
                let base = world.base_denoiser()?;
                let strength = MemorizationStrength::Linear { w_max: world.config.w_max };
                let attn = world.attention.clone();
                (base, world.mem_target, world.reference, world.conditioning, strength, Some(attn))
            }
            Some(path) => {
                let cond = load_gm(path)?;
                let uncond = match &inputs.gm_unconditional {
                    Some(p) => load_gm(p)?,
                    None => cond.clone(),
                };
                let mem = read_latent(inputs.mem_target.as_deref().expect("checked on load"))?;
                let embedding = mean_of_means(&cond)?;
                let conditioning = Conditioning {
                    prompt: inputs.prompt.clone().unwrap_or_default(),
                    embedding,
                };
                let reference = mean_of_means(&cond)?;
                let base = MixtureDenoiser::new(cond, uncond, schedule)?;
                (base, mem, reference, conditioning, MemorizationStrength::Constant { w: 0.0 }, None)
            }
        };
        let mem_target = match (&inputs.gm_model, &inputs.mem_target) {
            (None, Some(p)) => read_latent(p)?,
            _ => mem_target,
        };
        let reference = match &inputs.x_r {
            Some(p) => read_latent(p)?,
            None => default_ref,
        };
        let mut conditioning = match &inputs.conditioning {
            Some(p) => Conditioning {
                prompt: default_cond.prompt.clone(),
                embedding: read_latent(p)?,
            },
            None => default_cond,
        };
        if let Some(p) = &inputs.prompt {
            conditioning.prompt = p.clone();
        }
        reference.ensure_same_shape(&mem_target)?;
        conditioning.embedding.ensure_same_shape(&mem_target)?;

        let strength = inputs.memorization.unwrap_or(default_strength);
        let denoiser = MemorizingDenoiser::new(
            base,
            captain_core::denoiser::MemorizationSpec {
                target: mem_target.clone(),
                strength,
            },
        )?;
        let attention = attention.or(world_attention);
        let (_, h, w) = mem_target.shape();
        let concept: Box<dyn ConceptMaskProvider> = match attention {
            Some(stack) => Box::new(StackConcept { stack }),
            None => Box::new(FixedMap(SoftMap::filled(h, w, 1.0)?)),
        };
        Ok(Self {
            denoiser,
            be: SyntheticBe {
                target: mem_target.clone(),
                window: DEFAULT_BE_WINDOW,
            },
            reference,
            mem_target,
            conditioning,
            concept,
        })
    }
}
