//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "EAGANCK\0" | u32 format_version | u64 header_len | JSON header
//! | f64 blobs (params, Adam m/v, pool images, history) | u32 crc32
//! ```
//!
//! The checksum covers every byte before it. The version is checked before
//! the checksum so that files from another format version are reported as
//! incompatible rather than corrupt.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::model::{discriminator_layers, generator_layers, ArchConfig, ModelBundle};
use super::pool::ImagePool;
use super::train::{LossRecord, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::nn::{Adam, Network, Tensor};

pub const MAGIC: &[u8; 8] = b"EAGANCK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch: ArchConfig,
    config: TrainConfig,
    step: u64,
    epoch: u64,
    seed: u64,
    rng_seed: [u8; 32],
    rng_stream: u64,
    /// Decimal string; u128 does not fit a JSON number.
    rng_word_pos: String,
    adam_t: [u64; 4],
    param_counts: [usize; 4],
    pool_capacity: usize,
    pool_lens: [usize; 2],
    /// `[c, h, w]` of every pooled image.
    pool_item_shape: [usize; 3],
    history_len: usize,
}

const HISTORY_FIELDS: usize = 7;

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(state: &TrainState) -> Result<Vec<u8>> {
    let b = &state.bundle;
    let nets = [&b.g_pa, &b.g_us, &b.d_pa, &b.d_us];
    let opts = [&state.opt_g_pa, &state.opt_g_us, &state.opt_d_pa, &state.opt_d_us];
    let pools = [&state.pool_pa, &state.pool_us];
    let item_shape = pools
        .iter()
        .flat_map(|p| p.images().first())
        .map(|t| [t.c, t.h, t.w])
        .next()
        .unwrap_or([b.arch.generator.channels, b.arch.resolution, b.arch.resolution]);
    for img in pools.iter().flat_map(|p| p.images()) {
        if [img.c, img.h, img.w] != item_shape || img.n != 1 {
            return Err(Error::Invariant("pooled images differ in shape".into()));
        }
    }
    let header = Header {
        arch: b.arch.clone(),
        config: state.config.clone(),
        step: state.step,
        epoch: state.epoch,
        seed: state.seed,
        rng_seed: state.rng.get_seed(),
        rng_stream: state.rng.get_stream(),
        rng_word_pos: state.rng.get_word_pos().to_string(),
        adam_t: opts.map(|o| o.t),
        param_counts: nets.map(|n| n.param_count()),
        pool_capacity: state.pool_pa.capacity(),
        pool_lens: pools.map(|p| p.len()),
        pool_item_shape: item_shape,
        history_len: state.history().len(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Invariant(format!("header encoding: {e}")))?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for net in nets {
        put_f64s(&mut out, net.params());
    }
    for opt in opts {
        put_f64s(&mut out, &opt.m);
        put_f64s(&mut out, &opt.v);
    }
    for pool in pools {
        for img in pool.images() {
            put_f64s(&mut out, &img.data);
        }
    }
    for r in state.history() {
        put_f64s(
            &mut out,
            &[r.step as f64, r.adv_d_pa, r.adv_d_us, r.adv_g, r.cycle, r.opposite, r.total],
        );
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Corrupt("payload shorter than its header declares".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Corrupt("blob size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    let fixed = MAGIC.len() + 4 + 8;
    if bytes.len() < fixed + 4 {
        return Err(Error::Corrupt(format!("file is only {} bytes", bytes.len())));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Corrupt("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::IncompatibleVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Corrupt(format!(
            "checksum mismatch (stored {stored:08x}, computed {actual:08x})"
        )));
    }

    let mut rd = Reader { bytes: body, pos: 12 };
    let header_len = u64::from_le_bytes(rd.take(8)?.try_into().expect("8 bytes"));
    let header_len = usize::try_from(header_len).map_err(|_| Error::Corrupt("header length overflow".into()))?;
    let header: Header =
        serde_json::from_slice(rd.take(header_len)?).map_err(|e| Error::Corrupt(format!("header: {e}")))?;
    header.arch.validate()?;
    header.config.validate()?;

    let g_layers = generator_layers(&header.arch.generator);
    let d_layers = discriminator_layers(&header.arch.discriminator);
    let layer_sets = [&g_layers, &g_layers, &d_layers, &d_layers];
    let mut nets = Vec::with_capacity(4);
    for (layers, &n) in layer_sets.iter().zip(&header.param_counts) {
        nets.push(Network::new((*layers).clone(), rd.f64s(n)?)?);
    }
    let mut opts = Vec::with_capacity(4);
    for (&n, &t) in header.param_counts.iter().zip(&header.adam_t) {
        let mut opt = Adam::new(header.config.adam, n);
        opt.m = rd.f64s(n)?;
        opt.v = rd.f64s(n)?;
        opt.t = t;
        opts.push(opt);
    }
    let [c, h, w] = header.pool_item_shape;
    let mut pools = Vec::with_capacity(2);
    for &len in &header.pool_lens {
        if len > header.pool_capacity {
            return Err(Error::Corrupt("pool holds more images than its capacity".into()));
        }
        let mut images = Vec::with_capacity(len);
        for _ in 0..len {
            images.push(Tensor::from_vec(1, c, h, w, rd.f64s(c * h * w)?)?);
        }
        pools.push(ImagePool::from_parts(header.pool_capacity, images));
    }
    let mut history = Vec::with_capacity(header.history_len);
    for _ in 0..header.history_len {
        let f = rd.f64s(HISTORY_FIELDS)?;
        history.push(LossRecord {
            step: f[0] as u64,
            adv_d_pa: f[1],
            adv_d_us: f[2],
            adv_g: f[3],
            cycle: f[4],
            opposite: f[5],
            total: f[6],
        });
    }
    if rd.pos != body.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", body.len() - rd.pos)));
    }

    let word_pos: u128 = header
        .rng_word_pos
        .parse()
        .map_err(|_| Error::Corrupt("rng position".into()))?;
    let mut rng = ChaCha8Rng::from_seed(header.rng_seed);
    rng.set_stream(header.rng_stream);
    rng.set_word_pos(word_pos);

    let mut nets = nets.into_iter();
    let mut next = || nets.next().expect("four networks");
    let bundle = ModelBundle {
        arch: header.arch,
        g_pa: next(),
        g_us: next(),
        d_pa: next(),
        d_us: next(),
    };
    let opts: [Adam; 4] = opts.try_into().expect("four optimisers");
    let pools: [ImagePool; 2] = pools.try_into().expect("two pools");
    Ok(TrainState::from_parts(
        bundle,
        header.config,
        opts,
        pools,
        header.step,
        header.epoch,
        header.seed,
        history,
        rng,
    ))
}

/// Writes through a temporary sibling and renames, so a crash never leaves
/// a half-written checkpoint under the final name.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(state)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
