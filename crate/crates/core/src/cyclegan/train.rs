//! Training state, one optimisation step, and the loss history.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{discriminator_pass, generator_pass, GanLoss, LossWeights};
use super::model::{ArchConfig, ModelBundle};
use super::pool::ImagePool;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub pool_capacity: usize,
    pub weights: LossWeights,
    pub gan_loss: GanLoss,
    pub adam: AdamConfig,
    /// Zero the generators' last layer so training starts from gray output.
    pub zero_init_output: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 1,
            pool_capacity: 50,
            weights: LossWeights::default(),
            gan_loss: GanLoss::Log,
            adam: AdamConfig::default(),
            zero_init_output: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be positive"));
        }
        if self.pool_capacity > 0 && self.pool_capacity < self.batch_size {
            return Err(Error::param("pool capacity must be at least the batch size"));
        }
        let a = &self.adam;
        if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::param(format!("invalid optimiser settings {a:?}")));
        }
        Ok(())
    }
}

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub adv_d_pa: f64,
    pub adv_d_us: f64,
    /// Sum of both generators' adversarial terms.
    pub adv_g: f64,
    pub cycle: f64,
    pub opposite: f64,
    pub total: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "step,L_adv_d_PA,L_adv_d_US,L_adv_g,L_cycle,L_opposite,total";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.adv_d_pa, self.adv_d_us, self.adv_g, self.cycle, self.opposite, self.total
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return Err(Error::param(format!("loss row needs 7 fields: `{line}`")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::param(format!("bad number `{s}` in loss row")));
        Ok(LossRecord {
            step: f[0].parse().map_err(|_| Error::param(format!("bad step `{}`", f[0])))?,
            adv_d_pa: num(f[1])?,
            adv_d_us: num(f[2])?,
            adv_g: num(f[3])?,
            cycle: num(f[4])?,
            opposite: num(f[5])?,
            total: num(f[6])?,
        })
    }
}

pub fn write_loss_csv(records: &[LossRecord], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{}", LossRecord::CSV_HEADER)?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn read_loss_csv(text: &str) -> Result<Vec<LossRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == LossRecord::CSV_HEADER => {}
        _ => return Err(Error::param("loss CSV header missing")),
    }
    lines.filter(|l| !l.trim().is_empty()).map(LossRecord::parse_csv_row).collect()
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub bundle: ModelBundle,
    pub config: TrainConfig,
    pub opt_g_pa: Adam,
    pub opt_g_us: Adam,
    pub opt_d_pa: Adam,
    pub opt_d_us: Adam,
    pub pool_pa: ImagePool,
    pub pool_us: ImagePool,
    pub step: u64,
    pub epoch: u64,
    pub seed: u64,
    history: Vec<LossRecord>,
    pub(crate) rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(arch: ArchConfig, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut bundle = ModelBundle::new(arch, seed)?;
        if config.zero_init_output {
            bundle.zero_generator_outputs();
        }
        let adam = |n: usize| Adam::new(config.adam, n);
        Ok(TrainState {
            opt_g_pa: adam(bundle.g_pa.param_count()),
            opt_g_us: adam(bundle.g_us.param_count()),
            opt_d_pa: adam(bundle.d_pa.param_count()),
            opt_d_us: adam(bundle.d_us.param_count()),
            pool_pa: ImagePool::new(config.pool_capacity),
            pool_us: ImagePool::new(config.pool_capacity),
            bundle,
            config,
            step: 0,
            epoch: 0,
            seed,
            history: Vec::new(),
            // separate stream from the initialisation draws
            rng: {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(1);
                r
            },
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        bundle: ModelBundle,
        config: TrainConfig,
        opts: [Adam; 4],
        pools: [ImagePool; 2],
        step: u64,
        epoch: u64,
        seed: u64,
        history: Vec<LossRecord>,
        rng: ChaCha8Rng,
    ) -> Self {
        let [opt_g_pa, opt_g_us, opt_d_pa, opt_d_us] = opts;
        let [pool_pa, pool_us] = pools;
        TrainState {
            bundle,
            config,
            opt_g_pa,
            opt_g_us,
            opt_d_pa,
            opt_d_us,
            pool_pa,
            pool_us,
            step,
            epoch,
            seed,
            history,
            rng,
        }
    }

    /// Append-only loss history.
    pub fn history(&self) -> &[LossRecord] {
        &self.history
    }

    /// One generator update on fresh fakes, then one update of each
    /// discriminator on pooled fakes. All gradients are computed before any
    /// parameter moves, so a non-finite loss leaves the state untouched.
    pub fn train_step(&mut self, x: &Tensor, y: &Tensor) -> Result<LossRecord> {
        self.bundle.check_batch(x)?;
        self.bundle.check_batch(y)?;
        let cfg = self.config.clone();
        let gp = generator_pass(&self.bundle, &cfg.weights, cfg.gan_loss, x, y)?;
        if !gp.losses.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                components: gp.losses.to_string(),
            });
        }

        let saved = (self.pool_pa.clone(), self.pool_us.clone(), self.rng.clone());
        let pooled_pa = self.pool_pa.query(&gp.fake_pa, &mut self.rng);
        let pooled_us = self.pool_us.query(&gp.fake_us, &mut self.rng);
        let (l_d_pa, g_d_pa) = discriminator_pass(&self.bundle.d_pa, y, &pooled_pa, cfg.gan_loss)?;
        let (l_d_us, g_d_us) = discriminator_pass(&self.bundle.d_us, x, &pooled_us, cfg.gan_loss)?;
        if !l_d_pa.is_finite() || !l_d_us.is_finite() {
            (self.pool_pa, self.pool_us, self.rng) = saved;
            return Err(Error::NonFiniteLoss {
                step: self.step,
                components: format!("{} adv_d_pa={l_d_pa} adv_d_us={l_d_us}", gp.losses),
            });
        }

        self.opt_g_pa.step(self.bundle.g_pa.params_mut(), &gp.grad_g_pa);
        self.opt_g_us.step(self.bundle.g_us.params_mut(), &gp.grad_g_us);
        self.opt_d_pa.step(self.bundle.d_pa.params_mut(), &g_d_pa);
        self.opt_d_us.step(self.bundle.d_us.params_mut(), &g_d_us);

        self.step += 1;
        let record = LossRecord {
            step: self.step,
            adv_d_pa: l_d_pa,
            adv_d_us: l_d_us,
            adv_g: gp.losses.adversarial(),
            cycle: gp.losses.cycle,
            opposite: gp.losses.opposite,
            total: gp.losses.total,
        };
        self.history.push(record);
        Ok(record)
    }

    /// Generator phase alone: updates `g_pa` and `g_us` and returns the fresh fakes.
    pub fn generator_step(&mut self, x: &Tensor, y: &Tensor) -> Result<(Tensor, Tensor)> {
        let gp = generator_pass(&self.bundle, &self.config.weights, self.config.gan_loss, x, y)?;
        if !gp.losses.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                components: gp.losses.to_string(),
            });
        }
        self.opt_g_pa.step(self.bundle.g_pa.params_mut(), &gp.grad_g_pa);
        self.opt_g_us.step(self.bundle.g_us.params_mut(), &gp.grad_g_us);
        Ok((gp.fake_pa, gp.fake_us))
    }

    /// Discriminator phase alone, with pooled fakes. Returns `(L_d_PA, L_d_US)`.
    pub fn discriminator_step(&mut self, x: &Tensor, y: &Tensor, fake_pa: &Tensor, fake_us: &Tensor) -> Result<(f64, f64)> {
        let form = self.config.gan_loss;
        let pooled_pa = self.pool_pa.query(fake_pa, &mut self.rng);
        let pooled_us = self.pool_us.query(fake_us, &mut self.rng);
        let (l_pa, g_pa) = discriminator_pass(&self.bundle.d_pa, y, &pooled_pa, form)?;
        let (l_us, g_us) = discriminator_pass(&self.bundle.d_us, x, &pooled_us, form)?;
        if !l_pa.is_finite() || !l_us.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                components: format!("adv_d_pa={l_pa} adv_d_us={l_us}"),
            });
        }
        self.opt_d_pa.step(self.bundle.d_pa.params_mut(), &g_pa);
        self.opt_d_us.step(self.bundle.d_us.params_mut(), &g_us);
        Ok((l_pa, l_us))
    }

    /// One pass over the ultrasound set. Each ultrasound image is paired with
    /// an independently shuffled anatomy image (the domains are unpaired).
    pub fn train_epoch(&mut self, us: &[Tensor], pa: &[Tensor]) -> Result<Vec<LossRecord>> {
        if us.is_empty() || pa.is_empty() {
            return Err(Error::param("both domains need at least one image"));
        }
        let bs = self.config.batch_size;
        let mut order_us: Vec<usize> = (0..us.len()).collect();
        let mut order_pa: Vec<usize> = (0..pa.len()).collect();
        order_us.shuffle(&mut self.rng);
        order_pa.shuffle(&mut self.rng);
        let mut records = Vec::new();
        for (b, chunk) in order_us.chunks(bs).enumerate() {
            let xs: Vec<Tensor> = chunk.iter().map(|&i| us[i].clone()).collect();
            let ys: Vec<Tensor> = (0..chunk.len())
                .map(|k| pa[order_pa[(b * bs + k) % pa.len()]].clone())
                .collect();
            records.push(self.train_step(&Tensor::stack(&xs)?, &Tensor::stack(&ys)?)?);
        }
        self.epoch += 1;
        Ok(records)
    }
}
