//! Versioned binary checkpoint: model parameters, optional extractor
//! snapshot, and the replay buffer (including its generator state) in one
//! container file. Round-trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::buffer::MemoryBuffer;
use crate::data::Example;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::model::{ExtractorParams, ExtractorSnapshot, HeadParams, LinearLayer, ModelState};
use crate::trainer::RunState;

const MAGIC: &[u8; 8] = b"CCLFPCK\x01";
const VERSION: u32 = 1;

struct Writer<W: Write> {
    out: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.out.write_all(&[v])?;
        Ok(())
    }

    fn u32(&mut self, v: u32) -> Result<()> {
        self.out.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        self.out.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn u128(&mut self, v: u128) -> Result<()> {
        self.out.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        for v in vs {
            self.out.write_all(&v.to_bits().to_le_bytes())?;
        }
        Ok(())
    }

    fn matrix(&mut self, m: &DenseMatrix) -> Result<()> {
        self.u64(m.rows() as u64)?;
        self.u64(m.cols() as u64)?;
        self.f64s(m.data())
    }

    fn layer(&mut self, l: &LinearLayer) -> Result<()> {
        self.matrix(&l.weight)?;
        self.matrix(&l.bias)
    }

    fn extractor(&mut self, e: &ExtractorParams) -> Result<()> {
        self.u32(e.layers().len() as u32)?;
        for layer in e.layers() {
            self.layer(layer)?;
        }
        Ok(())
    }

    fn example(&mut self, e: &Example) -> Result<()> {
        self.u64(e.input.len() as u64)?;
        self.f64s(&e.input)?;
        self.u64(e.label as u64)?;
        self.u64(e.task_id as u64)
    }
}

struct Reader<R: Read> {
    input: R,
    offset: usize,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.input.read_exact(&mut buf).map_err(|e| {
            Error::data(format!(
                "checkpoint truncated at offset {}: {}",
                self.offset, e
            ))
        })?;
        self.offset += n;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.bytes(16)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.bytes(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }

    fn matrix(&mut self) -> Result<DenseMatrix> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        DenseMatrix::from_vec(rows, cols, self.f64s(rows * cols)?)
    }

    fn layer(&mut self) -> Result<LinearLayer> {
        Ok(LinearLayer {
            weight: self.matrix()?,
            bias: self.matrix()?,
        })
    }

    fn extractor(&mut self) -> Result<ExtractorParams> {
        let count = self.u32()? as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            layers.push(self.layer()?);
        }
        ExtractorParams::from_layers(layers)
    }

    fn example(&mut self) -> Result<Example> {
        let width = self.u64()? as usize;
        let input = self.f64s(width)?;
        let label = self.u64()? as usize;
        let task_id = self.u64()? as usize;
        Ok(Example {
            input,
            label,
            task_id,
        })
    }
}

/// Write model, snapshot and buffer into one container file.
pub fn save(path: &Path, state: &RunState) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = Writer {
        out: std::io::BufWriter::new(file),
    };
    w.out.write_all(MAGIC)?;
    w.u32(VERSION)?;

    w.extractor(&state.model.extractor)?;
    match &state.model.head {
        HeadParams::Single(layer) => {
            w.u8(0)?;
            w.layer(layer)?;
        }
        HeadParams::Multi {
            classes_per_task,
            embedding_width,
            heads,
        } => {
            w.u8(1)?;
            w.u64(*classes_per_task as u64)?;
            w.u64(*embedding_width as u64)?;
            w.u32(heads.len() as u32)?;
            for head in heads {
                w.layer(head)?;
            }
        }
    }

    match &state.snapshot {
        Some(snapshot) => {
            w.u8(1)?;
            w.extractor(snapshot.params())?;
        }
        None => w.u8(0)?,
    }

    match &state.buffer {
        Some(buffer) => {
            w.u8(1)?;
            w.u64(buffer.capacity() as u64)?;
            w.u64(buffer.seen_count())?;
            let (seed, word_pos, stream) = buffer.rng_state();
            w.out.write_all(&seed)?;
            w.u128(word_pos)?;
            w.u64(stream)?;
            w.u32(buffer.slots().len() as u32)?;
            for slot in buffer.slots() {
                w.example(slot)?;
            }
        }
        None => w.u8(0)?,
    }
    w.out.flush()?;
    Ok(())
}

/// Read a container written by [`save`].
pub fn load(path: &Path) -> Result<RunState> {
    let file = std::fs::File::open(path)?;
    let mut r = Reader {
        input: std::io::BufReader::new(file),
        offset: 0,
    };
    let magic = r.bytes(8)?;
    if magic != MAGIC {
        return Err(Error::data(format!(
            "{}: not a checkpoint file (bad magic at offset 0)",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::data(format!(
            "{}: unsupported checkpoint version {}",
            path.display(),
            version
        )));
    }

    let extractor = r.extractor()?;
    let head = match r.u8()? {
        0 => HeadParams::Single(r.layer()?),
        1 => {
            let classes_per_task = r.u64()? as usize;
            let embedding_width = r.u64()? as usize;
            let count = r.u32()? as usize;
            let mut heads = Vec::with_capacity(count);
            for _ in 0..count {
                heads.push(r.layer()?);
            }
            HeadParams::Multi {
                classes_per_task,
                embedding_width,
                heads,
            }
        }
        other => {
            return Err(Error::data(format!(
                "{}: unknown head tag {} at offset {}",
                path.display(),
                other,
                r.offset - 1
            )))
        }
    };

    let snapshot = match r.u8()? {
        0 => None,
        _ => Some(ExtractorSnapshot::take(&r.extractor()?)),
    };

    let buffer = match r.u8()? {
        0 => None,
        _ => {
            let capacity = r.u64()? as usize;
            let seen = r.u64()?;
            let seed: [u8; 32] = r.bytes(32)?.try_into().unwrap();
            let word_pos = r.u128()?;
            let stream = r.u64()?;
            let count = r.u32()? as usize;
            let mut slots = Vec::with_capacity(count);
            for _ in 0..count {
                slots.push(r.example()?);
            }
            Some(MemoryBuffer::restore(
                capacity,
                slots,
                seen,
                (seed, word_pos, stream),
            ))
        }
    };

    Ok(RunState {
        model: ModelState { extractor, head },
        snapshot,
        buffer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_synthetic, Scenario, SyntheticOptions};
    use crate::losses::LossConfig;
    use crate::trainer::{run_scenario, Method, TrainConfig};

    fn tmp(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("cclfp-ckpt-{}-{}", std::process::id(), name));
        p
    }

    fn trained_state(scenario: Scenario, method: Method) -> RunState {
        let stream = build_synthetic(&SyntheticOptions {
            task_count: 2,
            classes_per_task: 2,
            per_class: 15,
            test_per_class: 5,
            width: 5,
            scenario,
            ..Default::default()
        })
        .unwrap();
        let mut config = TrainConfig::new(
            method,
            LossConfig {
                w: 0.2,
                eta: 0.1,
                tau: 0.1,
                alpha: 0.1,
                beta: 0.1,
                distance_eps: 1e-12,
            },
            5,
        );
        config.hidden_widths = vec![8];
        config.buffer_capacity = 12;
        run_scenario(&stream, &config).unwrap().state
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let state = trained_state(Scenario::ClassIncremental, Method::CclFpPlus);
        let path = tmp("roundtrip");
        save(&path, &state).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.model, state.model);
        assert_eq!(
            loaded.snapshot.as_ref().map(|s| s.params()),
            state.snapshot.as_ref().map(|s| s.params())
        );
        let (a, b) = (loaded.buffer.unwrap(), state.buffer.unwrap());
        assert_eq!(a.slots(), b.slots());
        assert_eq!(a.seen_count(), b.seen_count());
        assert_eq!(a.rng_state(), b.rng_state());

        // saving the reloaded state reproduces the same bytes
        let path2 = tmp("roundtrip2");
        let reloaded = load(&path).unwrap();
        save(
            &path2,
            &RunState {
                model: reloaded.model,
                snapshot: reloaded.snapshot,
                buffer: reloaded.buffer,
            },
        )
        .unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
        std::fs::remove_file(path).ok();
        std::fs::remove_file(path2).ok();
    }

    #[test]
    fn multi_head_and_bufferless_states_round_trip() {
        let state = trained_state(Scenario::TaskIncremental, Method::Finetune);
        assert!(state.buffer.is_none());
        let path = tmp("multihead");
        save(&path, &state).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.model, state.model);
        assert!(loaded.buffer.is_none());
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn rejects_foreign_files() {
        let path = tmp("garbage");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(load(&path), Err(Error::Data(_))));
        std::fs::remove_file(path).ok();
    }
}
