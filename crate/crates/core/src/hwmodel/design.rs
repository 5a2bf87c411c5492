use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nas::LayerDims;
use crate::{Error, Result};

/// Number of pipelined sub-accelerators.
pub const NUM_SUB_ACCELERATORS: usize = 10;

/// Loop dimension of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dim {
    M,
    C,
    E,
    F,
    R,
    S,
}

impl Dim {
    pub const ALL: [Dim; 6] = [Dim::M, Dim::C, Dim::E, Dim::F, Dim::R, Dim::S];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Dim> {
        Dim::ALL.get(i).copied()
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// PE interconnect, which fixes the spatially unrolled dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Noc {
    OutputParallel,
    KernelParallel,
    KernelOutputParallel,
}

impl Noc {
    pub const ALL: [Noc; 3] = [Noc::OutputParallel, Noc::KernelParallel, Noc::KernelOutputParallel];
}

/// Dimensions that may have `tile_pe > 1` under `noc`.
pub fn spatial_dims(noc: Noc) -> &'static [Dim] {
    match noc {
        Noc::OutputParallel => &[Dim::M, Dim::E, Dim::F],
        Noc::KernelParallel => &[Dim::M, Dim::C],
        Noc::KernelOutputParallel => &[Dim::M, Dim::R, Dim::F],
    }
}

/// Dataflow of one layer. Arrays are indexed by [`Dim::index`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mapping {
    /// Outermost first.
    pub loop_order_dram: [Dim; 6],
    pub loop_order_gb: [Dim; 6],
    pub tile_gb: [usize; 6],
    pub tile_pe: [usize; 6],
}

impl Mapping {
    /// Whole layer in one buffer tile on a single PE.
    pub fn single_pe(layer: &LayerDims) -> Self {
        Mapping { loop_order_dram: Dim::ALL, loop_order_gb: Dim::ALL, tile_gb: layer.as_array(), tile_pe: [1; 6] }
    }

    pub fn pes(&self) -> usize {
        self.tile_pe.iter().product()
    }

    /// Factorisation and loop-order problems of this mapping for `layer`.
    pub fn structural_violations(&self, layer: &LayerDims, noc: Noc) -> Vec<String> {
        let dims = layer.as_array();
        let mut out = Vec::new();
        for d in Dim::ALL {
            let (n, g, p) = (dims[d.index()], self.tile_gb[d.index()], self.tile_pe[d.index()]);
            if p == 0 || g == 0 || g % p != 0 || n % g != 0 {
                out.push(format!("{d}: tile_pe {p} | tile_gb {g} | {n} does not hold"));
            }
            if p > 1 && !spatial_dims(noc).contains(&d) {
                out.push(format!("{d} is not spatial under {noc:?} but tile_pe is {p}"));
            }
        }
        for (name, order) in [("dram", &self.loop_order_dram), ("gb", &self.loop_order_gb)] {
            let mut seen = [false; 6];
            for d in order {
                seen[d.index()] = true;
            }
            if seen.iter().any(|s| !s) {
                out.push(format!("loop_order_{name} is not a permutation"));
            }
        }
        out
    }
}

/// Hardware budget of the target device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Platform {
    pub freq_hz: f64,
    /// Words per cycle.
    pub dram_bw: f64,
    /// Words per cycle.
    pub gb_bw: f64,
    /// Global buffer size in words.
    pub gb_capacity: usize,
    /// Register file words per PE; reuse inside the PE is folded into the
    /// GB traffic, so this is informational.
    pub rf_capacity: usize,
    /// Upper bound on PEs per sub-accelerator.
    pub pe_limit: usize,
    pub bytes_per_word: usize,
}

impl Default for Platform {
    fn default() -> Self {
        Platform {
            freq_hz: 200e6,
            dram_bw: 16.0,
            gb_bw: 64.0,
            gb_capacity: 512 * 1024,
            rf_capacity: 64,
            pe_limit: 900,
            bytes_per_word: 2,
        }
    }
}

impl Platform {
    pub fn validate(&self) -> Result<()> {
        let ok = self.freq_hz > 0.0
            && self.dram_bw > 0.0
            && self.gb_bw > 0.0
            && self.gb_capacity > 0
            && self.rf_capacity > 0
            && self.pe_limit > 0
            && self.bytes_per_word > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Param("platform values must all be positive".into()))
        }
    }
}

/// A concrete accelerator: NoC, PE budget, one mapping and one
/// sub-accelerator id per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceleratorDesign {
    pub noc: Noc,
    pub max_pes: usize,
    pub assignment: Vec<usize>,
    #[serde(rename = "mapping")]
    pub mappings: Vec<Mapping>,
}

impl AcceleratorDesign {
    /// Every layer on sub-accelerator 0 with a single-PE mapping.
    pub fn baseline(layers: &[LayerDims]) -> Self {
        AcceleratorDesign {
            noc: Noc::OutputParallel,
            max_pes: 1,
            assignment: vec![0; layers.len()],
            mappings: layers.iter().map(Mapping::single_pe).collect(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("design serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Param(format!("accelerator design: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        AcceleratorDesign::from_toml(&fs::read_to_string(path)?).map_err(|e| Error::format(path, e))
    }
}
