//! Toy scenario with a planted memorized sample.
//!
//! A "concept" is a smooth pattern confined to a central object blob. The
//! conditional mixture holds several instances of that concept (shared
//! concept pattern plus instance-specific high-frequency detail). The
//! unconditional mixture adds instances of unrelated concepts. The memorized
//! target is one more instance of the prompt concept, and the reference latent
//! is yet another instance: semantically aligned, visually distinct.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::Conditioning;
use crate::denoiser::{
    GaussianMixtureModel, MemorizationSpec, MemorizationStrength, MemorizingDenoiser, MixtureComponent,
    MixtureDenoiser,
};
use crate::error::Result;
use crate::latent::Latent;
use crate::schedule::NoiseSchedule;
use crate::spatial::{AttentionStack, AttentionTensor, StackConcept, SyntheticBe, DEFAULT_BE_WINDOW};
use crate::spectral::{frequency_blend_init, make_frequency_masks};

/// Knobs of the toy scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub channels: usize,
    pub size: usize,
    /// Instances of the prompt concept in the conditional mixture.
    pub concept_instances: usize,
    /// Unrelated concepts added to the unconditional mixture.
    pub other_concepts: usize,
    pub component_variance: f64,
    /// Scale of instance detail relative to the concept pattern.
    pub detail_scale: f64,
    pub background_scale: f64,
    pub w_max: f64,
    pub seed: u64,
    pub concept_word: String,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            channels: 4,
            size: 16,
            concept_instances: 4,
            other_concepts: 4,
            component_variance: 0.05,
            detail_scale: 1.0,
            background_scale: 0.3,
            w_max: 0.8,
            seed: 7,
            concept_word: "hippo".into(),
        }
    }
}

pub struct World {
    pub config: WorldConfig,
    pub schedule: NoiseSchedule,
    pub conditional: GaussianMixtureModel,
    pub unconditional: GaussianMixtureModel,
    pub mem_target: Latent,
    pub reference: Latent,
    pub conditioning: Conditioning,
    pub attention: AttentionStack,
    /// Prompt words aligned with the attention stack's token map.
    pub words: Vec<String>,
}

fn band(rng: &mut ChaCha8Rng, c: usize, n: usize, cutoff: f64, low: bool) -> Result<Latent> {
    let noise = Latent::randn(c, n, n, rng);
    let zeros = Latent::zeros(c, n, n);
    let masks = make_frequency_masks(n, n, cutoff)?;
    let out = if low {
        frequency_blend_init(&zeros, &noise, &masks)?
    } else {
        frequency_blend_init(&noise, &zeros, &masks)?
    };
    Ok(out.standardize_channels())
}

fn blob(n: usize) -> Vec<f64> {
    let centre = (n as f64 - 1.0) / 2.0;
    let r = n as f64 / 4.0;
    (0..n * n)
        .map(|i| {
            let (y, x) = ((i / n) as f64, (i % n) as f64);
            (-((y - centre).powi(2) + (x - centre).powi(2)) / (2.0 * r * r)).exp()
        })
        .collect()
}

fn masked(pattern: &Latent, mask: &[f64]) -> Result<Latent> {
    let plane = pattern.plane_len();
    let data = pattern
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, v)| v * mask[i % plane])
        .collect();
    let (c, h, w) = pattern.shape();
    Latent::new(c, h, w, data)
}

impl World {
    pub fn build(config: WorldConfig) -> Result<Self> {
        Self::build_with_schedule(config, NoiseSchedule::stable_diffusion(0.0)?)
    }

    pub fn build_with_schedule(config: WorldConfig, schedule: NoiseSchedule) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (c, n) = (config.channels, config.size);
        let object = blob(n);

        let instance = |rng: &mut ChaCha8Rng, concept: &Latent| -> Result<Latent> {
            let detail = masked(&band(rng, c, n, 0.5, false)?, &object)?;
            let background = band(rng, c, n, 0.3, true)?;
            concept
                .lincomb(1.0, &detail, config.detail_scale)?
                .lincomb(1.0, &background, config.background_scale)
        };

        let concept = masked(&band(&mut rng, c, n, 0.35, true)?, &object)?;
        let mem_target = instance(&mut rng, &concept)?;
        let reference = instance(&mut rng, &concept)?;
        let mut cond_components = Vec::new();
        for _ in 0..config.concept_instances {
            cond_components.push(MixtureComponent {
                mean: instance(&mut rng, &concept)?,
                variance: config.component_variance,
                weight: 1.0,
            });
        }
        let mut uncond_components = cond_components.clone();
        for _ in 0..config.other_concepts {
            let other = masked(&band(&mut rng, c, n, 0.35, true)?, &object)?;
            uncond_components.push(MixtureComponent {
                mean: instance(&mut rng, &other)?,
                variance: config.component_variance,
                weight: 1.0,
            });
        }
        let conditional = GaussianMixtureModel::normalized(cond_components)?;
        let unconditional = GaussianMixtureModel::normalized(uncond_components)?;

        let words: Vec<String> = ["a", "photo", "of", "the", config.concept_word.as_str()]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let attention = concept_attention(&mut rng, &object, n, words.len())?;

        Ok(Self {
            conditioning: Conditioning {
                prompt: words.join(" "),
                embedding: concept,
            },
            config,
            schedule,
            conditional,
            unconditional,
            mem_target,
            reference,
            attention,
            words,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.mem_target.shape()
    }

    pub fn base_denoiser(&self) -> Result<MixtureDenoiser> {
        MixtureDenoiser::new(self.conditional.clone(), self.unconditional.clone(), self.schedule.clone())
    }

    pub fn memorizing_denoiser(&self, strength: MemorizationStrength) -> Result<MemorizingDenoiser<MixtureDenoiser>> {
        MemorizingDenoiser::new(
            self.base_denoiser()?,
            MemorizationSpec {
                target: self.mem_target.clone(),
                strength,
            },
        )
    }

    /// Memorizing denoiser with the configured linear ramp.
    pub fn default_denoiser(&self) -> Result<MemorizingDenoiser<MixtureDenoiser>> {
        self.memorizing_denoiser(MemorizationStrength::Linear { w_max: self.config.w_max })
    }

    pub fn be_provider(&self) -> SyntheticBe {
        SyntheticBe {
            target: self.mem_target.clone(),
            window: DEFAULT_BE_WINDOW,
        }
    }

    pub fn concept_provider(&self) -> StackConcept {
        StackConcept {
            stack: self.attention.clone(),
        }
    }
}

/// Two layers (8×8 and full resolution) of two heads each. Token 0 is a start
/// token, tokens `1..=words` map to the prompt words, and the final token is an
/// end token. The last word's token attends to the object blob.
fn concept_attention(rng: &mut ChaCha8Rng, object: &[f64], n: usize, words: usize) -> Result<AttentionStack> {
    let tokens = words + 2;
    let concept_token = words;
    let mut entries = Vec::new();
    for side in [n / 2, n] {
        let side = side.max(1);
        let q = side * side;
        let heads = 2;
        let mut data = Vec::with_capacity(heads * q * tokens);
        for _ in 0..heads {
            for qi in 0..q {
                let (y, x) = (qi / side, qi % side);
                let oy = (y * n + n / 2) / side;
                let ox = (x * n + n / 2) / side;
                let focus = object[oy.min(n - 1) * n + ox.min(n - 1)];
                let mut row: Vec<f64> = (0..tokens).map(|_| rng.random::<f64>() * 0.1 + 0.05).collect();
                row[0] += 0.5;
                row[concept_token] += 2.0 * focus;
                let total: f64 = row.iter().sum();
                data.extend(row.into_iter().map(|v| v / total));
            }
        }
        entries.push(AttentionTensor::new(heads, q, tokens, data)?);
    }
    let mut token_words = vec![None];
    token_words.extend((0..words).map(Some));
    token_words.push(None);
    AttentionStack::new(entries, token_words, vec![concept_token])
}
