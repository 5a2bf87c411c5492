use serde::{Deserialize, Serialize};

use crate::hwmodel::{
    enumerate_tilings, spatial_dims, AcceleratorDesign, Dim, Mapping, Noc, Platform, NUM_SUB_ACCELERATORS,
};
use crate::nas::LayerDims;
use crate::{Error, Result};

/// Loop orders of one layer: searched slot by slot, or held fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OrderMenu {
    Free,
    Fixed { dram: [Dim; 6], gb: [Dim; 6] },
}

/// Options for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMenu {
    /// `(tile_pe, tile_gb)` options per dimension.
    pub tilings: [Vec<(usize, usize)>; 6],
    pub orders: OrderMenu,
    /// Allowed sub-accelerator ids.
    pub assignment: Vec<usize>,
}

/// Menus of every design parameter for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub nocs: Vec<Noc>,
    pub pes: Vec<usize>,
    pub layers: Vec<LayerMenu>,
}

/// What a design parameter controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Noc,
    Pes,
    Tiling {
        layer: usize,
        dim: Dim,
    },
    /// Slot `slot` of the DRAM (`level = 0`) or GB (`level = 1`) loop order;
    /// its options are the six dims, masked once picked.
    Order {
        layer: usize,
        level: usize,
        slot: usize,
    },
    Assign {
        layer: usize,
    },
}

/// One categorical parameter and its option count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSpec {
    pub kind: ParamKind,
    pub options: usize,
}

/// Powers of two below `limit`, then `limit` itself.
pub fn pes_menu(limit: usize) -> Vec<usize> {
    let mut out: Vec<usize> =
        std::iter::successors(Some(1usize), |p| p.checked_mul(2)).take_while(|&p| p < limit).collect();
    out.push(limit);
    out
}

fn permutations(items: &[Dim]) -> Vec<Vec<Dim>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

impl SearchSpace {
    /// Every NoC, the PE menu of `platform`, all divisor-chain tilings, free
    /// loop orders and all ten sub-accelerators for every layer.
    pub fn full(layers: &[LayerDims], platform: &Platform) -> Self {
        SearchSpace {
            nocs: Noc::ALL.to_vec(),
            pes: pes_menu(platform.pe_limit),
            layers: layers
                .iter()
                .map(|l| {
                    let dims = l.as_array();
                    LayerMenu {
                        tilings: std::array::from_fn(|d| enumerate_tilings(dims[d])),
                        orders: OrderMenu::Free,
                        assignment: (0..NUM_SUB_ACCELERATORS).collect(),
                    }
                })
                .collect(),
        }
    }

    pub fn validate(&self, layers: &[LayerDims]) -> Result<()> {
        if self.layers.len() != layers.len() {
            return Err(Error::Shape(format!("{} layer menus for {} layers", self.layers.len(), layers.len())));
        }
        if self.nocs.is_empty() || self.pes.is_empty() || self.pes.contains(&0) {
            return Err(Error::Param("NoC and PE menus must be non-empty and positive".into()));
        }
        for (menu, l) in self.layers.iter().zip(layers) {
            let dims = l.as_array();
            for d in 0..6 {
                if menu.tilings[d].is_empty() {
                    return Err(Error::Param(format!("{}: empty tiling menu for {:?}", l.name, Dim::ALL[d])));
                }
                if let Some(&(p, g)) =
                    menu.tilings[d].iter().find(|&&(p, g)| p == 0 || g == 0 || g % p != 0 || dims[d] % g != 0)
                {
                    return Err(Error::Param(format!("{}: tiling ({p}, {g}) does not divide {}", l.name, dims[d])));
                }
            }
            if menu.assignment.is_empty() || menu.assignment.iter().any(|&a| a >= NUM_SUB_ACCELERATORS) {
                return Err(Error::Param(format!("{}: bad assignment menu", l.name)));
            }
        }
        Ok(())
    }

    /// Categorical parameters in a fixed order.
    pub fn params(&self) -> Vec<ParamSpec> {
        let mut out = vec![
            ParamSpec { kind: ParamKind::Noc, options: self.nocs.len() },
            ParamSpec { kind: ParamKind::Pes, options: self.pes.len() },
        ];
        for (layer, m) in self.layers.iter().enumerate() {
            for dim in Dim::ALL {
                out.push(ParamSpec { kind: ParamKind::Tiling { layer, dim }, options: m.tilings[dim.index()].len() });
            }
            if m.orders == OrderMenu::Free {
                for level in 0..2 {
                    for slot in 0..6 {
                        out.push(ParamSpec { kind: ParamKind::Order { layer, level, slot }, options: 6 });
                    }
                }
            }
            out.push(ParamSpec { kind: ParamKind::Assign { layer }, options: m.assignment.len() });
        }
        out
    }

    /// Number of distinct parameter settings (a free loop order counts its
    /// 720 permutations).
    pub fn size(&self) -> f64 {
        let mut total = (self.nocs.len() * self.pes.len()) as f64;
        for m in &self.layers {
            total *= m.tilings.iter().map(|t| t.len() as f64).product::<f64>();
            if m.orders == OrderMenu::Free {
                total *= 720.0 * 720.0;
            }
            total *= m.assignment.len() as f64;
        }
        total
    }

    /// Build the design selected by `choices` (one index per entry of
    /// [`SearchSpace::params`]). Spatial tiles on dims the chosen NoC cannot
    /// unroll are set to 1.
    pub fn decode(&self, choices: &[usize]) -> AcceleratorDesign {
        let params = self.params();
        debug_assert_eq!(params.len(), choices.len());
        let noc = self.nocs[choices[0]];
        let max_pes = self.pes[choices[1]];
        let spatial = spatial_dims(noc);
        let mut mappings: Vec<Mapping> = self
            .layers
            .iter()
            .map(|m| {
                let (dram, gb) = match m.orders {
                    OrderMenu::Fixed { dram, gb } => (dram, gb),
                    OrderMenu::Free => (Dim::ALL, Dim::ALL),
                };
                Mapping { loop_order_dram: dram, loop_order_gb: gb, tile_gb: [1; 6], tile_pe: [1; 6] }
            })
            .collect();
        let mut assignment = vec![0; self.layers.len()];
        for (p, &c) in params.iter().zip(choices).skip(2) {
            match p.kind {
                ParamKind::Tiling { layer, dim } => {
                    let (pe, gbt) = self.layers[layer].tilings[dim.index()][c];
                    let m = &mut mappings[layer];
                    m.tile_gb[dim.index()] = gbt;
                    m.tile_pe[dim.index()] = if spatial.contains(&dim) { pe } else { 1 };
                }
                ParamKind::Order { layer, level, slot } => {
                    let d = Dim::from_index(c).expect("order choice is a dim index");
                    let m = &mut mappings[layer];
                    if level == 0 {
                        m.loop_order_dram[slot] = d;
                    } else {
                        m.loop_order_gb[slot] = d;
                    }
                }
                ParamKind::Assign { layer } => assignment[layer] = self.layers[layer].assignment[c],
                ParamKind::Noc | ParamKind::Pes => unreachable!(),
            }
        }
        AcceleratorDesign { noc, max_pes, assignment, mappings }
    }

    /// Visit every design of the space, as a choice vector, in mixed-radix
    /// order. Free loop orders are enumerated as whole permutations.
    pub(crate) fn for_each_choice<F: FnMut(&[usize])>(&self, mut visit: F) {
        let params = self.params();
        let perms: Vec<Vec<usize>> =
            permutations(&Dim::ALL).into_iter().map(|p| p.iter().map(|d| d.index()).collect()).collect();
        // Radix groups: either a single parameter, or the six slots of one loop order.
        let mut groups: Vec<(usize, usize, bool)> = Vec::new();
        let mut i = 0;
        while i < params.len() {
            if let ParamKind::Order { .. } = params[i].kind {
                groups.push((i, perms.len(), true));
                i += 6;
            } else {
                groups.push((i, params[i].options, false));
                i += 1;
            }
        }
        let mut digits = vec![0usize; groups.len()];
        let mut choices = vec![0usize; params.len()];
        loop {
            for (g, &(start, _, is_order)) in groups.iter().enumerate() {
                if is_order {
                    choices[start..start + 6].copy_from_slice(&perms[digits[g]]);
                } else {
                    choices[start] = digits[g];
                }
            }
            visit(&choices);
            let mut g = groups.len();
            loop {
                if g == 0 {
                    return;
                }
                g -= 1;
                digits[g] += 1;
                if digits[g] < groups[g].1 {
                    break;
                }
                digits[g] = 0;
            }
        }
    }

    /// Uniformly random choice vector.
    pub(crate) fn random_choice<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        use rand::seq::SliceRandom;
        let params = self.params();
        let mut out = Vec::with_capacity(params.len());
        let mut i = 0;
        while i < params.len() {
            if let ParamKind::Order { .. } = params[i].kind {
                let mut p: Vec<usize> = (0..6).collect();
                p.shuffle(rng);
                out.extend(p);
                i += 6;
            } else {
                out.push(rng.random_range(0..params[i].options));
                i += 1;
            }
        }
        out
    }
}
