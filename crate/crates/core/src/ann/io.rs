//! Single-file binary index format (little endian).
//!
//! ```text
//! magic    8 bytes  "BRANNIDX"
//! version  u32
//! dim      u32
//! count    u64
//! degree   u32
//! build_beam u32, search_beam u32, k_neighbors u32, distance u8, seed u64
//! entry    u32, max_level u32
//! vectors  count * dim f64
//! per node: level u8, then per layer: len u32, ids u32 * len
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

use super::{Distance, HnswIndex, IndexConfig};

const MAGIC: &[u8; 8] = b"BRANNIDX";
const VERSION: u32 = 1;

impl HnswIndex {
    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_u32::<LE>(VERSION)?;
        out.write_u32::<LE>(self.dim as u32)?;
        out.write_u64::<LE>(self.len() as u64)?;
        out.write_u32::<LE>(self.config.graph_degree as u32)?;
        out.write_u32::<LE>(self.config.build_beam as u32)?;
        out.write_u32::<LE>(self.config.search_beam as u32)?;
        out.write_u32::<LE>(self.config.k_neighbors as u32)?;
        out.write_u8(match self.config.distance {
            Distance::Euclidean => 0,
            Distance::Cosine => 1,
        })?;
        out.write_u64::<LE>(self.config.seed)?;
        out.write_u32::<LE>(self.entry)?;
        out.write_u32::<LE>(self.max_level as u32)?;
        for v in &self.vectors {
            out.write_f64::<LE>(*v)?;
        }
        for node in &self.links {
            out.write_u8((node.len() - 1) as u8)?;
            for layer in node {
                out.write_u32::<LE>(layer.len() as u32)?;
                for id in layer {
                    out.write_u32::<LE>(*id)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self> {
        let corrupt = |e: std::io::Error| Error::CorruptIndex(e.to_string());
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(corrupt)?;
        if &magic != MAGIC {
            return Err(Error::CorruptIndex("bad magic".into()));
        }
        let version = input.read_u32::<LE>().map_err(corrupt)?;
        if version != VERSION {
            return Err(Error::CorruptIndex(format!("unsupported version {version}")));
        }
        let dim = input.read_u32::<LE>().map_err(corrupt)? as usize;
        let count = input.read_u64::<LE>().map_err(corrupt)? as usize;
        let graph_degree = input.read_u32::<LE>().map_err(corrupt)? as usize;
        let build_beam = input.read_u32::<LE>().map_err(corrupt)? as usize;
        let search_beam = input.read_u32::<LE>().map_err(corrupt)? as usize;
        let k_neighbors = input.read_u32::<LE>().map_err(corrupt)? as usize;
        let distance = match input.read_u8().map_err(corrupt)? {
            0 => Distance::Euclidean,
            1 => Distance::Cosine,
            d => return Err(Error::CorruptIndex(format!("unknown distance tag {d}"))),
        };
        let seed = input.read_u64::<LE>().map_err(corrupt)?;
        let entry = input.read_u32::<LE>().map_err(corrupt)?;
        let max_level = input.read_u32::<LE>().map_err(corrupt)? as usize;
        let mut vectors = vec![0.0; count * dim];
        input.read_f64_into::<LE>(&mut vectors).map_err(corrupt)?;
        let mut links = Vec::with_capacity(count);
        for _ in 0..count {
            let level = input.read_u8().map_err(corrupt)? as usize;
            let mut node = Vec::with_capacity(level + 1);
            for _ in 0..=level {
                let len = input.read_u32::<LE>().map_err(corrupt)? as usize;
                let mut ids = vec![0u32; len];
                input.read_u32_into::<LE>(&mut ids).map_err(corrupt)?;
                if ids.iter().any(|&id| id as usize >= count) {
                    return Err(Error::CorruptIndex("neighbor id out of range".into()));
                }
                node.push(ids);
            }
            links.push(node);
        }
        if count == 0 || entry as usize >= count {
            return Err(Error::CorruptIndex("entry point out of range".into()));
        }
        let config = IndexConfig {
            k_neighbors,
            graph_degree,
            build_beam,
            search_beam,
            distance,
            seed,
        };
        Ok(Self {
            config,
            dim,
            vectors,
            links,
            entry,
            max_level,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }
}
