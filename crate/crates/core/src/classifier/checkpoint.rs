//! Model checkpoint file.
//!
//! Layout: 8-byte magic `QSPECMDL`, u32 LE format version, u32 LE length of a
//! JSON header, the header itself, then every parameter as f64 LE.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelDims};
use crate::embeddings::EmbeddingSpec;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"QSPECMDL";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    dims: ModelDims,
    seed: u64,
    embedding: String,
    n_params: usize,
}

impl Model {
    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        let header = serde_json::to_vec(&Header {
            dims: self.dims(),
            seed: self.seed(),
            embedding: self.embedding().to_string(),
            n_params: self.num_params(),
        })?;
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        for p in self.params() {
            out.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a model checkpoint".into()));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        input.read_exact(&mut word)?;
        let mut header = vec![0u8; u32::from_le_bytes(word) as usize];
        input.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)?;
        let embedding: EmbeddingSpec = header.embedding.parse()?;
        let mut raw = vec![0u8; header.n_params * 8];
        input
            .read_exact(&mut raw)
            .map_err(|_| Error::Checkpoint("truncated parameter payload".into()))?;
        let params = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let provider = embedding.build()?;
        Model::from_parts(header.dims, params, header.seed, embedding, provider)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let m = Model::new(ModelDims::desk(64), EmbeddingSpec::default(), 11).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = Model::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.dims(), m.dims());
        assert_eq!(back.predict("zip code").unwrap(), m.predict("zip code").unwrap());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = Model::new(ModelDims::desk(64), EmbeddingSpec::default(), 1).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Model::read_from(&mut bad.as_slice()), Err(Error::Checkpoint(_))));
        buf.truncate(buf.len() - 3);
        assert!(matches!(Model::read_from(&mut buf.as_slice()), Err(Error::Checkpoint(_))));
    }
}
