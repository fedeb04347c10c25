//! Field dumps: a JSON header followed by the masked values as raw
//! little-endian `f64`.
//!
//! Layout: the magic line `SPLABFIELD1\n`, the header length as a
//! little-endian `u64`, the header JSON, then `cells` values in the grid's
//! masked order (x fastest).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::scalar::Real;

const MAGIC: &[u8] = b"SPLABFIELD1\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub dims: [usize; 3],
    pub h: f64,
    pub origin: [f64; 3],
    /// Alternating run lengths over the full cell array in linear order,
    /// starting with a masked-out run (possibly empty).
    pub mask_runs: Vec<usize>,
    pub cells: usize,
    pub domain: DomainSpec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldDump {
    pub header: FieldHeader,
    pub values: Vec<f64>,
}

pub fn mask_runs(mask: &[bool]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut state = false;
    let mut count = 0;
    for &m in mask {
        if m != state {
            runs.push(count);
            state = m;
            count = 0;
        }
        count += 1;
    }
    runs.push(count);
    runs
}

pub fn expand_runs(runs: &[usize]) -> Vec<bool> {
    let mut mask = Vec::with_capacity(runs.iter().sum());
    for (k, &n) in runs.iter().enumerate() {
        mask.extend(std::iter::repeat(k % 2 == 1).take(n));
    }
    mask
}

impl FieldDump {
    pub fn from_grid<T: Real>(u: &ScalarField<T>, grid: &Grid<T>) -> Result<Self> {
        u.check(grid)?;
        let domain = grid.spec.cast();
        Ok(Self {
            header: FieldHeader {
                dims: grid.dims,
                h: grid.h.as_f64(),
                origin: grid.origin.map(|v| v.as_f64()),
                mask_runs: mask_runs(&grid.mask),
                cells: grid.len(),
                domain,
            },
            values: u.values.iter().map(|v| v.as_f64()).collect(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        let total: usize = h.dims.iter().product();
        if h.mask_runs.iter().sum::<usize>() != total {
            return Err(Error::Contract(format!("mask runs cover {} cells, grid has {total}", h.mask_runs.iter().sum::<usize>())));
        }
        let inside: usize = h.mask_runs.iter().skip(1).step_by(2).sum();
        if inside != h.cells || self.values.len() != h.cells {
            return Err(Error::Contract(format!("header lists {} cells, mask has {inside}, data has {}", h.cells, self.values.len())));
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        self.validate()?;
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(8 * self.values.len());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; MAGIC.len()];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(Error::Contract("not a field dump".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let header: FieldHeader = serde_json::from_slice(&header)?;
        let mut raw = Vec::new();
        r.read_to_end(&mut raw)?;
        if raw.len() != 8 * header.cells {
            return Err(Error::Contract(format!("expected {} value bytes, found {}", 8 * header.cells, raw.len())));
        }
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let dump = Self { header, values };
        dump.validate()?;
        Ok(dump)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }

    pub fn mask(&self) -> Vec<bool> {
        expand_runs(&self.header.mask_runs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    #[test]
    fn runs_round_trip() {
        for mask in [vec![], vec![true], vec![false, false], vec![true, false, true, true, false]] {
            assert_eq!(expand_runs(&mask_runs(&mask)), mask);
        }
        assert_eq!(mask_runs(&[true, true, false]), vec![0, 2, 1]);
    }

    #[test]
    fn dump_round_trip_is_byte_identical() {
        let g = build_grid(&DomainSpec::<f64>::ball([0.0; 3], 1.0).unwrap(), 6.0, 1).unwrap();
        let u = g.sample(|x| (x[0] + 2.0 * x[1]).sin() + 1e-300);
        let d = FieldDump::from_grid(&u, &g).unwrap();
        assert_eq!(d.mask(), g.mask);
        let mut a = Vec::new();
        d.write_to(&mut a).unwrap();
        let back = FieldDump::read_from(&a[..]).unwrap();
        assert_eq!(back, d);
        let mut b = Vec::new();
        back.write_to(&mut b).unwrap();
        assert_eq!(a, b);
        assert!(FieldDump::read_from(&a[..a.len() - 1]).is_err());
    }
}
