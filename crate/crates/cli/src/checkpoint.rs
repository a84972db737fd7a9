//! Binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes  "SCMCTSCK"
//! version  u16
//! F        u16      step feature count
//! F_e      u16      eval feature count
//! role     u8
//! reserved u8       zero
//! seed     u64
//! revision u32
//! weights  (F + F_e) x f64, step weights first
//! ```

use std::path::Path;

use scmcts_core::policy::{CheckpointTag, PolicyParams, Role, EVAL_FEATURES, STEP_FEATURES};

use crate::error::{io_error, CheckpointError, Error, Result};

pub const MAGIC: [u8; 8] = *b"SCMCTSCK";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 8 + 2 + 2 + 2 + 1 + 1 + 8 + 4;
pub const ENCODED_LEN: usize = HEADER_LEN + 8 * (STEP_FEATURES + EVAL_FEATURES);

pub fn encode(params: &PolicyParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(ENCODED_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(STEP_FEATURES as u16).to_le_bytes());
    out.extend_from_slice(&(EVAL_FEATURES as u16).to_le_bytes());
    out.push(params.tag.role.code());
    out.push(0);
    out.extend_from_slice(&params.tag.seed.to_le_bytes());
    out.extend_from_slice(&params.tag.revision.to_le_bytes());
    for w in params.step_weights.iter().chain(&params.eval_weights) {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.bytes[self.at..self.at + N].try_into().expect("length checked");
        self.at += N;
        out
    }
}

pub fn decode(bytes: &[u8]) -> Result<PolicyParams, CheckpointError> {
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(CheckpointError::Truncated {
            len: bytes.len(),
            expected: HEADER_LEN,
        });
    }
    let mut r = Reader { bytes, at: MAGIC.len() };
    let version = u16::from_le_bytes(r.take());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    for (which, expected) in [("step feature", STEP_FEATURES), ("eval feature", EVAL_FEATURES)] {
        let found = u16::from_le_bytes(r.take());
        if usize::from(found) != expected {
            return Err(CheckpointError::Dimension {
                which,
                found,
                expected: expected as u16,
            });
        }
    }
    let [role, _reserved] = r.take();
    let role = Role::from_code(role).ok_or(CheckpointError::UnknownRole(role))?;
    let seed = u64::from_le_bytes(r.take());
    let revision = u32::from_le_bytes(r.take());
    if bytes.len() < ENCODED_LEN {
        return Err(CheckpointError::Truncated {
            len: bytes.len(),
            expected: ENCODED_LEN,
        });
    }
    if bytes.len() > ENCODED_LEN {
        return Err(CheckpointError::TrailingBytes {
            extra: bytes.len() - ENCODED_LEN,
        });
    }
    let mut params = PolicyParams::zeros(CheckpointTag { role, seed, revision });
    for w in params.step_weights.iter_mut().chain(params.eval_weights.iter_mut()) {
        *w = f64::from_le_bytes(r.take());
    }
    if !params.is_finite() {
        return Err(CheckpointError::NonFinite);
    }
    Ok(params)
}

pub fn save_checkpoint(params: &PolicyParams, path: &Path) -> Result<()> {
    std::fs::write(path, encode(params)).map_err(io_error(path))
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams> {
    let bytes = std::fs::read(path).map_err(io_error(path))?;
    decode(&bytes).map_err(|source| Error::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use scmcts_core::policy::PolicyConfig;

    fn sample() -> PolicyParams {
        let mut p = PolicyParams::initial(7, &PolicyConfig { init_scale: 0.3 });
        p.eval_weights[2] = -1.25e-7;
        p.tag.revision = 42;
        p
    }

    #[test]
    fn round_trip_is_exact() {
        let p = sample();
        let bytes = encode(&p);
        assert_eq!(bytes.len(), ENCODED_LEN);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn every_truncation_is_an_error() {
        let bytes = encode(&sample());
        for len in 0..bytes.len() {
            assert!(decode(&bytes[..len]).is_err(), "len {len}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(decode(&long), Err(CheckpointError::TrailingBytes { extra: 1 }));
    }

    #[test]
    fn header_mismatches() {
        let bytes = encode(&sample());
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(matches!(decode(&v), Err(CheckpointError::Version { found: 9, .. })));
        let mut f = bytes.clone();
        f[10] = (STEP_FEATURES + 1) as u8;
        assert!(matches!(
            decode(&f),
            Err(CheckpointError::Dimension { which: "step feature", .. })
        ));
        let mut fe = bytes.clone();
        fe[12] = 3;
        assert!(matches!(
            decode(&fe),
            Err(CheckpointError::Dimension { which: "eval feature", found: 3, .. })
        ));
        let mut m = bytes;
        m[0] = b'X';
        assert_eq!(decode(&m), Err(CheckpointError::BadMagic));
    }
}
