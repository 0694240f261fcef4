//! Latent-space stand-ins for copy detection and prompt alignment, and the
//! ablation sweep over injection settings.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditioning::Conditioning;
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::formats::write_atomic;
use crate::inject::{run_captain, InjectionConfig, Providers};
use crate::latent::Latent;

fn cosine_metric(a: &Latent, b: &Latent, what: &str) -> Result<f64> {
    a.cosine(b)?
        .ok_or_else(|| Error::UndefinedMetric(format!("{what}: zero-norm latent")))
}

/// Cosine of the flattened final latent against the memorized target.
pub fn sscd_analog(final_latent: &Latent, mem_target: &Latent) -> Result<f64> {
    cosine_metric(final_latent, mem_target, "sscd_analog")
}

/// Cosine of the flattened final latent against the conditioning vector.
pub fn align_analog(final_latent: &Latent, cond: &Conditioning) -> Result<f64> {
    cosine_metric(final_latent, &cond.embedding, "align_analog")
}

/// FNV-1a over the bit patterns of every element.
pub fn latent_digest(latent: &Latent) -> u64 {
    latent.as_slice().iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
        v.to_bits()
            .to_le_bytes()
            .iter()
            .fold(h, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub sscd_analog: f64,
    pub align_analog: f64,
    pub mask_area_mean: f64,
    pub window_low: usize,
    pub window_high: usize,
    pub fallback_rate: f64,
    pub latent_digest: u64,
    pub seed: u64,
    pub config: InjectionConfig,
}

/// Which interventions a sweep row enables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationRow {
    pub init: bool,
    pub injection: bool,
}

impl AblationRow {
    pub const INIT_ONLY: Self = Self { init: true, injection: false };
    pub const INJECTION_ONLY: Self = Self { init: false, injection: true };
    pub const FULL: Self = Self { init: true, injection: true };
    pub const ALL_ROWS: [Self; 3] = [Self::INIT_ONLY, Self::INJECTION_ONLY, Self::FULL];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub deltas: Vec<f64>,
    pub taus: Vec<f64>,
    pub rows: Vec<AblationRow>,
}

impl AblationGrid {
    /// δ ∈ {0.1, 0.2} across the three ablation rows at the default τ.
    pub fn delta_table() -> Self {
        Self {
            deltas: vec![0.1, 0.2],
            taus: vec![crate::spatial::DEFAULT_TAU],
            rows: AblationRow::ALL_ROWS.to_vec(),
        }
    }

    /// τ ∈ {0.1, …, 0.5} for the full method at the default δ.
    pub fn tau_table() -> Self {
        Self {
            deltas: vec![crate::inject::DEFAULT_DELTA],
            taus: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            rows: vec![AblationRow::FULL],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.deltas.is_empty() || self.taus.is_empty() || self.rows.is_empty() {
            return Err(Error::param("ablation grid has an empty axis"));
        }
        Ok(())
    }
}

/// One grid point and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub delta: f64,
    pub tau: f64,
    pub init: bool,
    pub injection: bool,
    pub seed: u64,
}

impl SweepCell {
    fn config(&self, base: &InjectionConfig) -> InjectionConfig {
        InjectionConfig {
            delta: self.delta,
            tau: self.tau,
            init: self.init,
            injection: self.injection,
            seed: self.seed,
            ..base.clone()
        }
    }
}

/// Cells in row, δ, τ, seed order.
pub fn grid_cells(grid: &AblationGrid, seeds: &[u64]) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for row in &grid.rows {
        for &delta in &grid.deltas {
            for &tau in &grid.taus {
                for &seed in seeds {
                    cells.push(SweepCell {
                        delta,
                        tau,
                        init: row.init,
                        injection: row.injection,
                        seed,
                    });
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell: SweepCell,
    pub metrics: Option<RunMetrics>,
    pub error: Option<String>,
}

/// Everything a cell run needs besides its config.
pub struct Scenario<'a, D: ?Sized> {
    pub denoiser: &'a D,
    pub reference: &'a Latent,
    pub mem_target: &'a Latent,
    pub conditioning: &'a Conditioning,
    pub providers: Providers<'a>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Zero uses rayon's default.
    pub workers: usize,
    /// Finished cells are stored here and reused on the next run.
    pub checkpoint_dir: Option<PathBuf>,
}

pub fn run_cell<D: Denoiser + ?Sized>(scenario: &Scenario<'_, D>, cfg: &InjectionConfig) -> Result<RunMetrics> {
    let result = run_captain(
        scenario.denoiser,
        scenario.reference,
        scenario.conditioning,
        scenario.providers,
        cfg,
    )?;
    Ok(RunMetrics {
        sscd_analog: sscd_analog(&result.final_latent, scenario.mem_target)?,
        align_analog: align_analog(&result.final_latent, scenario.conditioning)?,
        mask_area_mean: result.mean_mask_area(),
        window_low: result.window_used.t_low,
        window_high: result.window_used.t_high,
        fallback_rate: result.fallback_rate(),
        latent_digest: latent_digest(&result.final_latent),
        seed: cfg.seed,
        config: cfg.clone(),
    })
}

fn checkpoint_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("cell_{index:06}.json"))
}

fn load_checkpoint(dir: &Path, index: usize, cell: &SweepCell) -> Option<CellRecord> {
    let text = std::fs::read_to_string(checkpoint_path(dir, index)).ok()?;
    let rec: CellRecord = serde_json::from_str(&text).ok()?;
    (rec.cell == *cell && rec.metrics.is_some()).then_some(rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub cells: Vec<CellRecord>,
    /// Cells taken from checkpoints instead of being run.
    #[serde(skip)]
    pub resumed: usize,
}

pub fn ablation_sweep<D: Denoiser + ?Sized>(
    base: &InjectionConfig,
    grid: &AblationGrid,
    seeds: &[u64],
    scenario: &Scenario<'_, D>,
    options: &SweepOptions,
) -> Result<SweepTable> {
    grid.validate()?;
    if seeds.is_empty() {
        return Err(Error::param("sweep needs at least one seed"));
    }
    if let Some(dir) = &options.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let cells = grid_cells(grid, seeds);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| Error::param(format!("worker pool: {e}")))?;
    let records: Vec<(CellRecord, bool)> = pool.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(i, cell)| {
                if let Some(rec) = options.checkpoint_dir.as_deref().and_then(|d| load_checkpoint(d, i, cell)) {
                    return (rec, true);
                }
                let rec = match run_cell(scenario, &cell.config(base)) {
                    Ok(m) => CellRecord {
                        cell: *cell,
                        metrics: Some(m),
                        error: None,
                    },
                    Err(e) => {
                        log::warn!("cell {i} failed: {e}");
                        CellRecord {
                            cell: *cell,
                            metrics: None,
                            error: Some(e.to_string()),
                        }
                    }
                };
                if let (Some(dir), Some(_)) = (&options.checkpoint_dir, &rec.metrics) {
                    let saved = serde_json::to_vec(&rec)
                        .map_err(Error::from)
                        .and_then(|b| write_atomic(&checkpoint_path(dir, i), &b));
                    if let Err(e) = saved {
                        log::warn!("checkpoint for cell {i} not written: {e}");
                    }
                }
                (rec, false)
            })
            .collect()
    });
    let resumed = records.iter().filter(|(_, r)| *r).count();
    Ok(SweepTable {
        cells: records.into_iter().map(|(c, _)| c).collect(),
        resumed,
    })
}

pub const CSV_HEADER: [&str; 11] = [
    "delta",
    "tau",
    "init",
    "injection",
    "seed",
    "sscd_analog",
    "align_analog",
    "mask_area_mean",
    "window_low",
    "window_high",
    "fallback_rate",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

fn stat(values: &[f64]) -> Option<Stat> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(Stat { mean, std: var.sqrt() })
}

/// Seed-aggregated metrics for one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub delta: f64,
    pub tau: f64,
    pub init: bool,
    pub injection: bool,
    pub runs: usize,
    pub failures: Vec<String>,
    pub sscd_analog: Option<Stat>,
    pub align_analog: Option<Stat>,
    pub mask_area_mean: Option<Stat>,
    pub fallback_rate: Option<Stat>,
}

impl SweepTable {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.metrics.is_none()).count()
    }

    /// One line per cell; failed cells keep their grid columns and leave metrics blank.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for rec in &self.cells {
            let c = &rec.cell;
            let mut row = vec![
                c.delta.to_string(),
                c.tau.to_string(),
                c.init.to_string(),
                c.injection.to_string(),
                c.seed.to_string(),
            ];
            match &rec.metrics {
                Some(m) => row.extend([
                    m.sscd_analog.to_string(),
                    m.align_analog.to_string(),
                    m.mask_area_mean.to_string(),
                    m.window_low.to_string(),
                    m.window_high.to_string(),
                    m.fallback_rate.to_string(),
                ]),
                None => row.extend(std::iter::repeat_n(String::new(), 6)),
            }
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::input(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }

    /// Groups seeds per grid point, keeping first-appearance order.
    pub fn summary(&self) -> Vec<CellSummary> {
        let mut groups: Vec<(SweepCell, Vec<&CellRecord>)> = Vec::new();
        for rec in &self.cells {
            let same = |g: &SweepCell| {
                g.delta == rec.cell.delta
                    && g.tau == rec.cell.tau
                    && g.init == rec.cell.init
                    && g.injection == rec.cell.injection
            };
            match groups.iter_mut().find(|(g, _)| same(g)) {
                Some((_, v)) => v.push(rec),
                None => groups.push((rec.cell, vec![rec])),
            }
        }
        groups
            .into_iter()
            .map(|(g, recs)| {
                let ok: Vec<&RunMetrics> = recs.iter().filter_map(|r| r.metrics.as_ref()).collect();
                let pick = |f: fn(&RunMetrics) -> f64| stat(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
                CellSummary {
                    delta: g.delta,
                    tau: g.tau,
                    init: g.init,
                    injection: g.injection,
                    runs: ok.len(),
                    failures: recs.iter().filter_map(|r| r.error.clone()).collect(),
                    sscd_analog: pick(|m| m.sscd_analog),
                    align_analog: pick(|m| m.align_analog),
                    mask_area_mean: pick(|m| m.mask_area_mean),
                    fallback_rate: pick(|m| m.fallback_rate),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analog_examples() {
        let m = Latent::from_fn(1, 2, 2, |_, y, x| (y * 2 + x) as f64 - 1.5).unwrap();
        assert!((sscd_analog(&m, &m).unwrap() - 1.0).abs() < 1e-15);
        assert!((sscd_analog(&m.scale(-1.0).unwrap(), &m).unwrap() + 1.0).abs() < 1e-15);
        let ortho = Latent::new(1, 2, 2, vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        assert_eq!(sscd_analog(&ortho, &Latent::filled(1, 2, 2, 1.0)).unwrap(), 0.0);
        assert!(matches!(
            sscd_analog(&Latent::zeros(1, 2, 2), &m),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn grid_order_and_shape() {
        let grid = AblationGrid::delta_table();
        let cells = grid_cells(&grid, &[5, 6]);
        assert_eq!(cells.len(), 3 * 2 * 2);
        assert_eq!(
            (cells[0].init, cells[0].injection, cells[0].delta, cells[0].seed),
            (true, false, 0.1, 5)
        );
        assert_eq!(cells[1].seed, 6);
        assert_eq!(cells[2].delta, 0.2);
        assert!(cells[11].init && cells[11].injection);
        assert_eq!(AblationGrid::tau_table().taus.len(), 5);
    }

    #[test]
    fn digest_sees_every_bit() {
        let a = Latent::filled(1, 1, 2, 1.0);
        let b = Latent::new(1, 1, 2, vec![1.0, f64::from_bits(1.0f64.to_bits() + 1)]).unwrap();
        assert_ne!(latent_digest(&a), latent_digest(&b));
        assert_eq!(latent_digest(&a), latent_digest(&a.clone()));
    }

    #[test]
    fn stats() {
        let s = stat(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert!(stat(&[]).is_none());
    }
}
