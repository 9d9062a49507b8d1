//! Binary persistence for [`FlowModel`].
//!
//! Little-endian layout: a `CSWF` magic, a format version, the run header
//! (dimensions, K/H/M, amplifier, step size, noise, schedule text, optional
//! image shape and occlusion mask, dataset digest, quantization and table
//! lengths), then K step blocks of {projection seed, H x (target table,
//! particle table)}, and a trailing 64-bit FNV-1a checksum over everything
//! before it. Quantized tables store f32 values; full-precision tables
//! store f64 so replay stays bit-exact through a save/load cycle.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::flow::{CdfPair, FlowModel, Quantization, StepRecord};
use crate::projections::ImageShape;

const MAGIC: &[u8; 4] = b"CSWF";
const VERSION: u32 = 1;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn save_model(model: &FlowModel, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<FlowModel> {
    let bytes = std::fs::read(path)?;
    decode(&bytes)
}

fn table_lens(model: &FlowModel) -> Result<(u32, u32)> {
    let first = model
        .records
        .first()
        .and_then(|r| r.tables.first())
        .ok_or_else(|| Error::invalid("cannot persist a model with no recorded tables"))?;
    let lens = (first.target.len() as u32, first.particle.len() as u32);
    for (k, rec) in model.records.iter().enumerate() {
        for (h, pair) in rec.tables.iter().enumerate() {
            if (pair.target.len() as u32, pair.particle.len() as u32) != lens {
                return Err(Error::invalid(format!(
                    "ragged table sizes at step {k}, projection {h}"
                )));
            }
        }
    }
    Ok(lens)
}

fn encode(model: &FlowModel) -> Result<Vec<u8>> {
    if model.records.len() != model.steps {
        return Err(Error::invalid(format!(
            "model has {} records but K = {}",
            model.records.len(),
            model.steps
        )));
    }
    let (len_target, len_particle) = table_lens(model)?;
    let wide = matches!(model.quantization, Quantization::Full);

    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION).unwrap();
    out.write_u64::<LittleEndian>(model.x_dim as u64).unwrap();
    out.write_u64::<LittleEndian>(model.y_dim as u64).unwrap();
    out.write_u64::<LittleEndian>(model.steps as u64).unwrap();
    out.write_u64::<LittleEndian>(model.projections_per_step as u64)
        .unwrap();
    out.write_u64::<LittleEndian>(model.particles as u64).unwrap();
    out.write_f64::<LittleEndian>(model.amplifier).unwrap();
    out.write_f64::<LittleEndian>(model.step_size).unwrap();
    out.write_f64::<LittleEndian>(model.noise).unwrap();
    let sched = model.schedule_text.as_bytes();
    out.write_u32::<LittleEndian>(sched.len() as u32).unwrap();
    out.extend_from_slice(sched);
    match model.image_shape {
        None => out.push(0),
        Some(s) => {
            out.push(1);
            out.write_u32::<LittleEndian>(s.channels as u32).unwrap();
            out.write_u32::<LittleEndian>(s.height as u32).unwrap();
            out.write_u32::<LittleEndian>(s.width as u32).unwrap();
        }
    }
    match &model.mask {
        None => out.push(0),
        Some(mask) => {
            out.push(1);
            out.write_u64::<LittleEndian>(mask.len() as u64).unwrap();
            let mut byte = 0u8;
            for (i, &bit) in mask.iter().enumerate() {
                if bit {
                    byte |= 1 << (i % 8);
                }
                if i % 8 == 7 {
                    out.push(byte);
                    byte = 0;
                }
            }
            if mask.len() % 8 != 0 {
                out.push(byte);
            }
        }
    }
    out.extend_from_slice(&model.dataset_digest);
    let q = match model.quantization {
        Quantization::Full => 0u32,
        Quantization::Knots(k) => k,
    };
    out.write_u32::<LittleEndian>(q).unwrap();
    out.write_u32::<LittleEndian>(len_target).unwrap();
    out.write_u32::<LittleEndian>(len_particle).unwrap();

    let mut write_table = |out: &mut Vec<u8>, values: &[f64]| {
        if wide {
            for &v in values {
                out.write_f64::<LittleEndian>(v).unwrap();
            }
        } else {
            for &v in values {
                out.write_f32::<LittleEndian>(v as f32).unwrap();
            }
        }
    };
    for rec in &model.records {
        out.write_u64::<LittleEndian>(rec.seed).unwrap();
        for pair in &rec.tables {
            write_table(&mut out, &pair.target);
            write_table(&mut out, &pair.particle);
        }
    }
    let checksum = fnv1a64(&out);
    out.write_u64::<LittleEndian>(checksum).unwrap();
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<FlowModel> {
    if bytes.len() < MAGIC.len() + 4 + 8 {
        return Err(Error::Corrupt("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if fnv1a64(body) != stored {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }
    let mut cur = Cursor::new(body);
    let short = |_e: std::io::Error| Error::Corrupt("truncated model file".into());

    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(short)?;
    if &magic != MAGIC {
        return Err(Error::Corrupt(format!("bad magic {magic:?}")));
    }
    let version = cur.read_u32::<LittleEndian>().map_err(short)?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let x_dim = cur.read_u64::<LittleEndian>().map_err(short)? as usize;
    let y_dim = cur.read_u64::<LittleEndian>().map_err(short)? as usize;
    let steps = cur.read_u64::<LittleEndian>().map_err(short)? as usize;
    let h_count = cur.read_u64::<LittleEndian>().map_err(short)? as usize;
    let particles = cur.read_u64::<LittleEndian>().map_err(short)? as usize;
    let amplifier = cur.read_f64::<LittleEndian>().map_err(short)?;
    let step_size = cur.read_f64::<LittleEndian>().map_err(short)?;
    let noise = cur.read_f64::<LittleEndian>().map_err(short)?;
    let sched_len = cur.read_u32::<LittleEndian>().map_err(short)? as usize;
    let mut sched = vec![0u8; sched_len];
    cur.read_exact(&mut sched).map_err(short)?;
    let schedule_text =
        String::from_utf8(sched).map_err(|_| Error::Corrupt("schedule text not UTF-8".into()))?;
    let image_shape = match cur.read_u8().map_err(short)? {
        0 => None,
        _ => {
            let c = cur.read_u32::<LittleEndian>().map_err(short)? as usize;
            let h = cur.read_u32::<LittleEndian>().map_err(short)? as usize;
            let w = cur.read_u32::<LittleEndian>().map_err(short)? as usize;
            Some(ImageShape::new(c, h, w)?)
        }
    };
    let mask = match cur.read_u8().map_err(short)? {
        0 => None,
        _ => {
            let nbits = cur.read_u64::<LittleEndian>().map_err(short)? as usize;
            let mut packed = vec![0u8; nbits.div_ceil(8)];
            cur.read_exact(&mut packed).map_err(short)?;
            Some((0..nbits).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect())
        }
    };
    let mut digest = [0u8; 32];
    cur.read_exact(&mut digest).map_err(short)?;
    let q = cur.read_u32::<LittleEndian>().map_err(short)?;
    let quantization = if q == 0 {
        Quantization::Full
    } else {
        Quantization::Knots(q)
    };
    let len_target = cur.read_u32::<LittleEndian>().map_err(short)? as usize;
    let len_particle = cur.read_u32::<LittleEndian>().map_err(short)? as usize;
    let wide = q == 0;

    let mut records = Vec::with_capacity(steps);
    for _ in 0..steps {
        let seed = cur.read_u64::<LittleEndian>().map_err(short)?;
        let mut tables = Vec::with_capacity(h_count);
        for _ in 0..h_count {
            let mut read_table = |len: usize| -> Result<Vec<f64>> {
                let mut v = Vec::with_capacity(len);
                for _ in 0..len {
                    v.push(if wide {
                        cur.read_f64::<LittleEndian>().map_err(short)?
                    } else {
                        cur.read_f32::<LittleEndian>().map_err(short)? as f64
                    });
                }
                Ok(v)
            };
            let target = read_table(len_target)?;
            let particle = read_table(len_particle)?;
            tables.push(CdfPair { target, particle });
        }
        records.push(StepRecord { seed, tables });
    }
    if cur.position() != body.len() as u64 {
        return Err(Error::Corrupt("trailing bytes after step records".into()));
    }
    Ok(FlowModel {
        x_dim,
        y_dim,
        steps,
        projections_per_step: h_count,
        particles,
        amplifier,
        step_size,
        noise,
        schedule_text,
        image_shape,
        mask,
        dataset_digest: digest,
        quantization,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_model(q: Quantization) -> FlowModel {
        let tables = |k: u64| {
            (0..2)
                .map(|h| CdfPair {
                    target: vec![k as f64, k as f64 + 1.0, k as f64 + 2.0],
                    particle: vec![-1.0, h as f64],
                })
                .collect()
        };
        FlowModel {
            x_dim: 2,
            y_dim: 1,
            steps: 1,
            projections_per_step: 2,
            particles: 4,
            amplifier: 10.0,
            step_size: 2.0,
            noise: 0.0,
            schedule_text: "uniform".into(),
            image_shape: None,
            mask: Some(vec![true, false, true]),
            dataset_digest: [7u8; 32],
            quantization: q,
            records: vec![StepRecord {
                seed: 99,
                tables: tables(0),
            }],
        }
    }

    #[test]
    fn round_trip_is_field_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cswf");
        let model = toy_model(Quantization::Full);
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cswf");
        let model = toy_model(Quantization::Full);
        save_model(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Corrupt(_))));

        let mut flipped = bytes.clone();
        flipped[20] ^= 0xff;
        std::fs::write(&path, &flipped).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Corrupt(_))));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cswf");
        let model = toy_model(Quantization::Full);
        let mut bytes = encode(&model).unwrap();
        // bump the version field and re-seal the checksum
        bytes[4] = 2;
        let n = bytes.len();
        let sum = fnv1a64(&bytes[..n - 8]);
        bytes[n - 8..].copy_from_slice(&sum.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(Error::UnsupportedVersion { found: 2, .. })
        ));
    }

    #[test]
    fn quantized_file_size_matches_format_arithmetic() {
        // K = 100 steps, H = 64 projections, Q = 1024 knots: payload is
        // K * H * 2 * Q * 4 bytes plus a small header.
        let (k, h, q) = (100usize, 64usize, 1024usize);
        let knot_values: Vec<f64> = (0..q).map(|i| i as f32 as f64).collect();
        let tables: Vec<CdfPair> = (0..h)
            .map(|_| CdfPair {
                target: knot_values.clone(),
                particle: knot_values.clone(),
            })
            .collect();
        let model = FlowModel {
            x_dim: 784,
            y_dim: 0,
            steps: k,
            projections_per_step: h,
            particles: 1000,
            amplifier: 0.0,
            step_size: 784.0,
            noise: 0.0,
            schedule_text: "uniform".into(),
            image_shape: None,
            mask: None,
            dataset_digest: [0u8; 32],
            quantization: Quantization::Knots(q as u32),
            records: (0..k)
                .map(|i| StepRecord {
                    seed: i as u64,
                    tables: tables.clone(),
                })
                .collect(),
        };
        let bytes = encode(&model).unwrap();
        let payload = k * h * 2 * q * 4;
        assert!(
            (bytes.len() as f64 - payload as f64).abs() <= 0.05 * payload as f64,
            "file {} vs payload {payload}",
            bytes.len()
        );
    }
}
