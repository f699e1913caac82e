//! Binary checkpoints for a trained translator/discriminator pair.
//!
//! Layout: `b"GGAN"`, format version (u32 LE), header length (u64 LE), JSON
//! header, little-endian f64 payload in parameter-table order, then the
//! FNV-1a 64 checksum of the payload bytes (u64 LE).

use std::fs;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::discriminator::{DiscriminatorConfig, DiscriminatorModel};
use crate::error::{Error, Result};
use crate::numerics::{DenseTensor, Prng};
use crate::train::TrainConfig;
use crate::translator::{TranslatorConfig, TranslatorModel};

pub const MAGIC: &[u8; 4] = b"GGAN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    translator: TranslatorConfig,
    discriminator: DiscriminatorConfig,
    train: Option<TrainConfig>,
    seed: u64,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub translator: TranslatorModel,
    pub discriminator: DiscriminatorModel,
    /// Training configuration the models came from, if any.
    pub train: Option<TrainConfig>,
    pub seed: u64,
}

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn all_tensors(ck: &Checkpoint) -> Vec<(String, &DenseTensor)> {
    let mut out = ck.translator.named_tensors();
    out.extend(ck.discriminator.named_tensors());
    out
}

/// Serializes `ck` to the checkpoint byte format.
pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let tensors = all_tensors(ck);
    let header = Header {
        translator: ck.translator.config.clone(),
        discriminator: ck.discriminator.config.clone(),
        train: ck.train.clone(),
        seed: ck.seed,
        params: tensors
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Format(format!("header: {e}")))?;
    let mut payload = Vec::with_capacity(8 * tensors.iter().map(|(_, t)| t.len()).sum::<usize>());
    for (_, t) in &tensors {
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(4 + 4 + 8 + header.len() + payload.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&checksum(&payload).to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses checkpoint bytes. The parameter table must match the model layout
/// implied by the stored configs exactly.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let header_len = r.u64("header length")?;
    let header_len = usize::try_from(header_len).map_err(|_| Error::Format("header length overflow".into()))?;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
        .map_err(|e| Error::Format(format!("header: {e}")))?;
    header.translator.validate()?;
    header.discriminator.validate()?;

    let init = Prng::new(header.seed);
    let mut ck = Checkpoint {
        translator: TranslatorModel::new(header.translator.clone(), &init)?,
        discriminator: DiscriminatorModel::new(header.discriminator.clone(), &init)?,
        train: header.train.clone(),
        seed: header.seed,
    };
    let expected: Vec<ParamEntry> = all_tensors(&ck)
        .into_iter()
        .map(|(name, t)| ParamEntry {
            name,
            shape: t.shape().to_vec(),
        })
        .collect();
    if expected != header.params {
        return Err(Error::Format("parameter table does not match the stored configs".into()));
    }

    let count: usize = expected.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    let payload = r.take(8 * count, "payload")?;
    let stored = r.u64("checksum")?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let computed = checksum(payload);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let targets = ck
        .translator
        .tensors_mut()
        .into_iter()
        .chain(ck.discriminator.tensors_mut());
    for t in targets {
        for slot in t.data_mut() {
            *slot = values.next().expect("payload length checked");
        }
    }
    Ok(ck)
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, encode(ck)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiplex::tests::random_network;
    use crate::translator::{Noise, Tap};

    fn sample() -> Checkpoint {
        let (mut translator, mut discriminator) = (
            TranslatorModel::new(TranslatorConfig::new(6), &Prng::new(3)).unwrap(),
            DiscriminatorModel::new(DiscriminatorConfig::new(6), &Prng::new(3)).unwrap(),
        );
        // Move away from the seeded init so a load that only re-initializes fails.
        let mut rng = Prng::new(9);
        for t in translator.tensors_mut().into_iter().chain(discriminator.tensors_mut()) {
            for v in t.data_mut() {
                *v += 0.01 * rng.normal();
            }
        }
        Checkpoint {
            translator,
            discriminator,
            train: Some(TrainConfig::default()),
            seed: 3,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let back = decode(&encode(&ck).unwrap()).unwrap();
        assert_eq!(back, ck);
        let src = random_network(&mut Prng::new(1), 6);
        let a = ck.translator.translate(&src, Noise::Zero, Tap::None).unwrap().predicted;
        let b = back.translator.translate(&src, Noise::Zero, Tap::None).unwrap().predicted;
        assert_eq!(a.weights().data(), b.weights().data());
    }

    #[test]
    fn every_truncation_is_a_format_error() {
        let bytes = encode(&sample()).unwrap();
        for len in [0, 3, 7, 15, 40, bytes.len() / 2, bytes.len() - 9, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..len]), Err(Error::Format(_))), "len {len}");
        }
    }

    #[test]
    fn payload_corruption_is_a_checksum_mismatch() {
        let mut bytes = encode(&sample()).unwrap();
        let k = bytes.len() - 20;
        bytes[k] ^= 0x01;
        assert!(matches!(decode(&bytes), Err(Error::ChecksumMismatch { .. })));
    }

    #[test]
    fn bad_magic_and_version() {
        let bytes = encode(&sample()).unwrap();
        let mut m = bytes.clone();
        m[0] = b'X';
        assert!(matches!(decode(&m), Err(Error::Format(_))));
        let mut v = bytes;
        v[4] = 2;
        assert!(matches!(decode(&v), Err(Error::Format(_))));
    }

    #[test]
    fn checksum_is_fnv1a() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(checksum(b""), 0xcbf29ce484222325);
        assert_eq!(checksum(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(checksum(b"foobar"), 0x85944171f73967e8);
    }
}
