//! Inverted-residual (MobileBlock) search space.
//!
//! An architecture is a list of units; each unit is a stack of layers and
//! every layer picks a kernel size and an expansion ratio. The text form is
//! `k<kernel>e<expansion>` per layer, layers joined by `,`, units by `;`.
//! Depth is implicit in the number of layers.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceConfig {
    pub n_units: usize,
    pub depth_choices: Vec<u32>,
    pub kernel_choices: Vec<u32>,
    pub expansion_choices: Vec<u32>,
    pub input_resolution: u32,
    pub stem_channels: u32,
    pub unit_out_channels: Vec<u32>,
    pub unit_strides: Vec<u32>,
}

impl Default for SpaceConfig {
    /// Five units, depths {2,3,4}, kernels {3,5,7}, expansions {3,4,6} on a
    /// MobileNet-like channel profile at 224×224.
    fn default() -> Self {
        Self {
            n_units: 5,
            depth_choices: vec![2, 3, 4],
            kernel_choices: vec![3, 5, 7],
            expansion_choices: vec![3, 4, 6],
            input_resolution: 224,
            stem_channels: 16,
            unit_out_channels: vec![16, 24, 40, 80, 160],
            unit_strides: vec![1, 2, 2, 2, 2],
        }
    }
}

impl SpaceConfig {
    /// The 144-architecture space used for exhaustive checks: two units,
    /// depths {2,3}, kernels {3,5}, expansion {3}.
    pub fn toy() -> Self {
        Self {
            n_units: 2,
            depth_choices: vec![2, 3],
            kernel_choices: vec![3, 5],
            expansion_choices: vec![3],
            input_resolution: 224,
            stem_channels: 16,
            unit_out_channels: vec![24, 40],
            unit_strides: vec![2, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_units == 0 {
            return bad("space.n_units must be positive".into());
        }
        for (name, set) in [
            ("depth", &self.depth_choices),
            ("kernel", &self.kernel_choices),
            ("expansion", &self.expansion_choices),
        ] {
            if set.is_empty() {
                return bad(format!("{name} choice set is empty"));
            }
            if set.contains(&0) {
                return bad(format!("{name} choices must be positive"));
            }
            if set.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("{name} choices must be strictly increasing"));
            }
        }
        if self.unit_out_channels.len() != self.n_units || self.unit_strides.len() != self.n_units {
            return bad(format!(
                "unit channel and stride lists must have {} entries",
                self.n_units
            ));
        }
        if self.unit_out_channels.contains(&0) || self.stem_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.unit_strides.iter().any(|&s| s != 1 && s != 2) {
            return bad("unit strides must be 1 or 2".into());
        }
        if self.input_resolution == 0 {
            return bad("input resolution must be positive".into());
        }
        Ok(())
    }

    pub fn max_depth(&self) -> u32 {
        *self.depth_choices.iter().max().expect("validated non-empty")
    }

    /// Every layer at its smallest setting.
    pub fn min_arch(&self) -> Architecture {
        self.uniform_arch(
            self.depth_choices[0],
            self.kernel_choices[0],
            self.expansion_choices[0],
        )
    }

    /// Every layer at its largest setting; also the maximum-MAdds architecture.
    pub fn max_arch(&self) -> Architecture {
        self.uniform_arch(
            *self.depth_choices.last().unwrap(),
            *self.kernel_choices.last().unwrap(),
            *self.expansion_choices.last().unwrap(),
        )
    }

    fn uniform_arch(&self, depth: u32, kernel: u32, expansion: u32) -> Architecture {
        Architecture {
            units: (0..self.n_units)
                .map(|_| UnitSpec {
                    layers: vec![LayerSpec { kernel, expansion }; depth as usize],
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kernel: u32,
    pub expansion: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnitSpec {
    pub layers: Vec<LayerSpec>,
}

impl UnitSpec {
    pub fn depth(&self) -> u32 {
        self.layers.len() as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Architecture {
    pub units: Vec<UnitSpec>,
}

impl Architecture {
    pub fn validate(&self, cfg: &SpaceConfig) -> Result<()> {
        if self.units.len() != cfg.n_units {
            return Err(Error::Shape(format!(
                "architecture has {} units, space expects {}",
                self.units.len(),
                cfg.n_units
            )));
        }
        for (u, unit) in self.units.iter().enumerate() {
            if !cfg.depth_choices.contains(&unit.depth()) {
                return Err(Error::Shape(format!(
                    "unit {u} has depth {}, allowed {:?}",
                    unit.depth(),
                    cfg.depth_choices
                )));
            }
            for layer in &unit.layers {
                check_token(layer, cfg)?;
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> String {
        self.to_string()
    }

    pub fn depths(&self) -> impl Iterator<Item = u32> + '_ {
        self.units.iter().map(UnitSpec::depth)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (u, unit) in self.units.iter().enumerate() {
            if u > 0 {
                f.write_str(";")?;
            }
            for (l, layer) in unit.layers.iter().enumerate() {
                if l > 0 {
                    f.write_str(",")?;
                }
                write!(f, "k{}e{}", layer.kernel, layer.expansion)?;
            }
        }
        Ok(())
    }
}

impl Serialize for Architecture {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.encode())
    }
}

impl<'de> Deserialize<'de> for Architecture {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Grammar-only parse, no choice-set validation.
impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut units = Vec::new();
        let mut offset = 0;
        for unit_text in s.split(';') {
            let mut layers = Vec::new();
            let mut layer_offset = offset;
            for token in unit_text.split(',') {
                layers.push(parse_layer(token, layer_offset)?);
                layer_offset += token.len() + 1;
            }
            units.push(UnitSpec { layers });
            offset += unit_text.len() + 1;
        }
        Ok(Architecture { units })
    }
}

fn parse_layer(token: &str, position: usize) -> Result<LayerSpec> {
    let err = |at: usize, message: &str| Error::Parse {
        position: position + at,
        message: format!("{message} in `{token}`"),
    };
    let rest = token
        .strip_prefix('k')
        .ok_or_else(|| err(0, "expected `k`"))?;
    let kernel_len = rest.bytes().take_while(u8::is_ascii_digit).count();
    if kernel_len == 0 {
        return Err(err(1, "expected kernel size"));
    }
    let after = &rest[kernel_len..];
    let exp_text = after
        .strip_prefix('e')
        .ok_or_else(|| err(1 + kernel_len, "expected `e`"))?;
    if exp_text.is_empty() || !exp_text.bytes().all(|b| b.is_ascii_digit()) {
        return Err(err(2 + kernel_len, "expected expansion ratio"));
    }
    let kernel = rest[..kernel_len]
        .parse()
        .map_err(|_| err(1, "kernel size out of range"))?;
    let expansion = exp_text
        .parse()
        .map_err(|_| err(2 + kernel_len, "expansion ratio out of range"))?;
    Ok(LayerSpec { kernel, expansion })
}

fn check_token(layer: &LayerSpec, cfg: &SpaceConfig) -> Result<()> {
    let token = || format!("k{}e{}", layer.kernel, layer.expansion);
    if !cfg.kernel_choices.contains(&layer.kernel) {
        return Err(Error::InvalidToken {
            token: token(),
            message: format!("kernel {} not in {:?}", layer.kernel, cfg.kernel_choices),
        });
    }
    if !cfg.expansion_choices.contains(&layer.expansion) {
        return Err(Error::InvalidToken {
            token: token(),
            message: format!(
                "expansion {} not in {:?}",
                layer.expansion, cfg.expansion_choices
            ),
        });
    }
    Ok(())
}

pub fn encode(a: &Architecture) -> String {
    a.encode()
}

/// Parses and validates an architecture against `cfg`.
pub fn decode(s: &str, cfg: &SpaceConfig) -> Result<Architecture> {
    let arch: Architecture = s.parse()?;
    if arch.units.len() != cfg.n_units {
        return Err(Error::Shape(format!(
            "`{s}` has {} units, space expects {}",
            arch.units.len(),
            cfg.n_units
        )));
    }
    for unit in &arch.units {
        for layer in &unit.layers {
            check_token(layer, cfg)?;
        }
    }
    arch.validate(cfg)?;
    Ok(arch)
}

/// Raw multiply-adds of one inverted-residual layer at output size `h×w`:
/// 1×1 expansion, k×k depthwise, 1×1 projection.
pub fn layer_madds(c_in: u64, c_out: u64, expansion: u64, kernel: u64, h: u64, w: u64) -> u64 {
    let hidden = expansion * c_in;
    h * w * (c_in * hidden + hidden * kernel * kernel + hidden * c_out)
}

/// Raw multiply-adds of the stem: 3×3 stride-2 convolution from RGB.
pub fn stem_madds(cfg: &SpaceConfig) -> u64 {
    let s = stem_resolution(cfg) as u64;
    s * s * 3 * 9 * cfg.stem_channels as u64
}

fn stem_resolution(cfg: &SpaceConfig) -> u32 {
    cfg.input_resolution.div_ceil(2)
}

fn raw_madds(a: &Architecture, cfg: &SpaceConfig) -> u64 {
    let mut total = stem_madds(cfg);
    let mut size = stem_resolution(cfg);
    let mut c_in = cfg.stem_channels as u64;
    for (u, unit) in a.units.iter().enumerate() {
        let c_out = cfg.unit_out_channels[u] as u64;
        if cfg.unit_strides[u] == 2 {
            size = size.div_ceil(2);
        }
        for layer in &unit.layers {
            let hw = size as u64;
            total += layer_madds(c_in, c_out, layer.expansion as u64, layer.kernel as u64, hw, hw);
            c_in = c_out;
        }
    }
    total
}

/// Multiply-adds in millions.
pub fn madds(a: &Architecture, cfg: &SpaceConfig) -> f64 {
    raw_madds(a, cfg) as f64 / 1e6
}

fn unit_options_per_depth(cfg: &SpaceConfig) -> Vec<(u32, u128)> {
    let per_layer = (cfg.kernel_choices.len() * cfg.expansion_choices.len()) as u128;
    cfg.depth_choices
        .iter()
        .map(|&d| (d, per_layer.checked_pow(d).unwrap_or(u128::MAX)))
        .collect()
}

/// `(Σ_d (|K|·|E|)^d)^n_units`, saturating at `u128::MAX`.
pub fn space_size(cfg: &SpaceConfig) -> u128 {
    let per_unit = unit_options_per_depth(cfg)
        .iter()
        .fold(0u128, |acc, &(_, n)| acc.saturating_add(n));
    per_unit
        .checked_pow(cfg.n_units as u32)
        .unwrap_or(u128::MAX)
}

fn unit_options(cfg: &SpaceConfig) -> Vec<UnitSpec> {
    let tokens: Vec<LayerSpec> = cfg
        .kernel_choices
        .iter()
        .flat_map(|&kernel| {
            cfg.expansion_choices
                .iter()
                .map(move |&expansion| LayerSpec { kernel, expansion })
        })
        .collect();
    let mut out = Vec::new();
    for &d in &cfg.depth_choices {
        let mut partial: Vec<Vec<LayerSpec>> = vec![Vec::new()];
        for _ in 0..d {
            partial = partial
                .into_iter()
                .flat_map(|p| {
                    tokens.iter().map(move |t| {
                        let mut next = p.clone();
                        next.push(*t);
                        next
                    })
                })
                .collect();
        }
        out.extend(partial.into_iter().map(|layers| UnitSpec { layers }));
    }
    out
}

/// Every architecture exactly once, sorted by encoded string.
pub fn enumerate(cfg: &SpaceConfig, cap: u128) -> Result<Vec<Architecture>> {
    let size = space_size(cfg);
    if size > cap {
        return Err(Error::SpaceTooLarge { size, cap });
    }
    let options = unit_options(cfg);
    let mut archs: Vec<Vec<UnitSpec>> = vec![Vec::new()];
    for _ in 0..cfg.n_units {
        archs = archs
            .into_iter()
            .flat_map(|prefix| {
                options.iter().map(move |unit| {
                    let mut next = prefix.clone();
                    next.push(unit.clone());
                    next
                })
            })
            .collect();
    }
    let mut keyed: Vec<(String, Architecture)> = archs
        .into_iter()
        .map(|units| {
            let a = Architecture { units };
            (a.encode(), a)
        })
        .collect();
    keyed.sort_by(|x, y| x.0.cmp(&y.0));
    Ok(keyed.into_iter().map(|(_, a)| a).collect())
}

/// Uniform draw over the whole space: each unit's depth is chosen with
/// probability proportional to the number of unit configurations at that
/// depth, then every layer token uniformly.
pub fn random_arch(cfg: &SpaceConfig, seed: u64) -> Architecture {
    let mut rng = rng_from_seed(seed);
    let depth_weights: Vec<(u32, f64)> = unit_options_per_depth(cfg)
        .into_iter()
        .map(|(d, n)| (d, n as f64))
        .collect();
    let total: f64 = depth_weights.iter().map(|(_, w)| w).sum();
    let units = (0..cfg.n_units)
        .map(|_| {
            let mut pick = rng.random::<f64>() * total;
            let mut depth = depth_weights.last().unwrap().0;
            for &(d, w) in &depth_weights {
                if pick < w {
                    depth = d;
                    break;
                }
                pick -= w;
            }
            let layers = (0..depth)
                .map(|_| LayerSpec {
                    kernel: cfg.kernel_choices[rng.random_range(0..cfg.kernel_choices.len())],
                    expansion: cfg.expansion_choices
                        [rng.random_range(0..cfg.expansion_choices.len())],
                })
                .collect();
            UnitSpec { layers }
        })
        .collect();
    Architecture { units }
}
