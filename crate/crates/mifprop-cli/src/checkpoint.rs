use ndarray::Array2;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"MIFP";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: bad magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint truncated or corrupt: {0}")]
    Corrupt(&'static str),
    #[error("checkpoint is missing array '{0}'")]
    MissingArray(String),
    #[error("array '{name}' has {got} values, expected {expected}")]
    ArrayLength { name: String, expected: usize, got: usize },
}

/// Full training state at a point in time: everything `cmd_train` needs to
/// continue bit-identically. On disk this is the little-endian `MIFP`
/// container: magic, version, then length-prefixed named f64 arrays
/// (`widths`, `seed`, `hyper`, `counters`, then `w{l}`/`m{l}`/`u{l}` per
/// layer, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub widths: Vec<usize>,
    /// Master seed; epoch shuffles and layer inits derive from it, so no
    /// raw generator state needs saving.
    pub seed: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Adam steps taken.
    pub adam_t: u64,
    /// Next epoch to run.
    pub epoch: u64,
    /// Training iterations completed.
    pub iteration: u64,
    pub weights: Vec<Array2<f64>>,
    pub adam_m: Vec<Array2<f64>>,
    pub adam_u: Vec<Array2<f64>>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut arrays: Vec<(String, Vec<f64>)> = Vec::new();
        arrays.push(("widths".into(), self.widths.iter().map(|&w| w as f64).collect()));
        arrays.push((
            "seed".into(),
            vec![(self.seed >> 32) as u32 as f64, (self.seed & 0xFFFF_FFFF) as u32 as f64],
        ));
        arrays.push(("hyper".into(), vec![self.lr, self.beta1, self.beta2, self.epsilon]));
        arrays.push((
            "counters".into(),
            vec![self.adam_t as f64, self.epoch as f64, self.iteration as f64],
        ));
        for (l, ((w, m), u)) in self
            .weights
            .iter()
            .zip(&self.adam_m)
            .zip(&self.adam_u)
            .enumerate()
        {
            arrays.push((format!("w{l}"), w.iter().copied().collect()));
            arrays.push((format!("m{l}"), m.iter().copied().collect()));
            arrays.push((format!("u{l}"), u.iter().copied().collect()));
        }

        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
        for (name, data) in &arrays {
            bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
            bytes.extend_from_slice(name.as_bytes());
            bytes.extend_from_slice(&(data.len() as u32).to_le_bytes());
            for &v in data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let count = r.u32()? as usize;
        let mut arrays: Vec<(String, Vec<f64>)> = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| CheckpointError::Corrupt("array name is not UTF-8"))?
                .to_string();
            let data_len = r.u32()? as usize;
            let mut data = Vec::with_capacity(data_len);
            for _ in 0..data_len {
                data.push(f64::from_le_bytes(
                    r.take(8)?.try_into().expect("take returned 8 bytes"),
                ));
            }
            arrays.push((name, data));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt("trailing bytes after the last array"));
        }

        let get = |name: &str| -> Result<&Vec<f64>, CheckpointError> {
            arrays
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, d)| d)
                .ok_or_else(|| CheckpointError::MissingArray(name.to_string()))
        };
        let fixed = |name: &str, len: usize| -> Result<&Vec<f64>, CheckpointError> {
            let data = get(name)?;
            if data.len() != len {
                return Err(CheckpointError::ArrayLength {
                    name: name.to_string(),
                    expected: len,
                    got: data.len(),
                });
            }
            Ok(data)
        };

        let widths: Vec<usize> = get("widths")?.iter().map(|&v| v as usize).collect();
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(CheckpointError::Corrupt("bad widths array"));
        }
        let seed_halves = fixed("seed", 2)?;
        let seed = ((seed_halves[0] as u64) << 32) | seed_halves[1] as u64;
        let hyper = fixed("hyper", 4)?.clone();
        let counters = fixed("counters", 3)?.clone();

        let mut weights = Vec::new();
        let mut adam_m = Vec::new();
        let mut adam_u = Vec::new();
        for l in 0..widths.len() - 1 {
            let shape = (widths[l + 1], widths[l]);
            let expect = shape.0 * shape.1;
            for (prefix, dest) in
                [("w", &mut weights), ("m", &mut adam_m), ("u", &mut adam_u)]
            {
                let name = format!("{prefix}{l}");
                let data = fixed(&name, expect)?.clone();
                dest.push(
                    Array2::from_shape_vec(shape, data)
                        .expect("length checked against shape"),
                );
            }
        }

        Ok(Self {
            widths,
            seed,
            lr: hyper[0],
            beta1: hyper[1],
            beta2: hyper[2],
            epsilon: hyper[3],
            adam_t: counters[0] as u64,
            epoch: counters[1] as u64,
            iteration: counters[2] as u64,
            weights,
            adam_m,
            adam_u,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(&self.to_bytes())?;
        file.sync_all()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or(CheckpointError::Corrupt("length overflow"))?;
        if end > self.bytes.len() {
            return Err(CheckpointError::Corrupt("unexpected end of file"));
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("take returned 4 bytes"),
        ))
    }
}
