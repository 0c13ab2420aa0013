//! Flat parameter storage for the architecture adjuster.
//!
//! All tensors live in one `Vec<f64>`; [`Tensor`] names the slices. The order
//! of [`Tensor::ALL`] is also the on-disk order.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::search_space::SpaceConfig;

pub const MAGIC: &[u8; 4] = b"AXPT";
pub const FORMAT_VERSION: u32 = 1;

/// Sizes of every controller component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControllerShape {
    pub n_units: usize,
    pub max_depth: usize,
    pub n_depth: usize,
    pub n_kernel: usize,
    pub n_expansion: usize,
    pub encoder_hidden: usize,
    pub encoder_out: usize,
    pub n_buckets: usize,
    pub bucket_dim: usize,
    pub token_dim: usize,
    pub hidden: usize,
}

/// Hidden sizes that are not implied by the search space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkSizes {
    pub encoder_hidden: usize,
    pub encoder_out: usize,
    pub n_buckets: usize,
    pub bucket_dim: usize,
    pub token_dim: usize,
    pub hidden: usize,
}

impl Default for NetworkSizes {
    fn default() -> Self {
        Self {
            encoder_hidden: 32,
            encoder_out: 32,
            n_buckets: 8,
            bucket_dim: 16,
            token_dim: 16,
            hidden: 64,
        }
    }
}

impl ControllerShape {
    pub fn new(space: &SpaceConfig, sizes: NetworkSizes) -> Self {
        Self {
            n_units: space.n_units,
            max_depth: space.max_depth() as usize,
            n_depth: space.depth_choices.len(),
            n_kernel: space.kernel_choices.len(),
            n_expansion: space.expansion_choices.len(),
            encoder_hidden: sizes.encoder_hidden,
            encoder_out: sizes.encoder_out,
            n_buckets: sizes.n_buckets,
            bucket_dim: sizes.bucket_dim,
            token_dim: sizes.token_dim,
            hidden: sizes.hidden,
        }
    }

    /// Width of one unit's one-hot block: depth, then per layer slot a kernel
    /// and an expansion one-hot, each with an extra "off" slot.
    pub fn unit_block(&self) -> usize {
        self.n_depth + self.max_depth * (self.n_kernel + 1 + self.n_expansion + 1)
    }

    pub fn input_dim(&self) -> usize {
        self.n_units * self.unit_block()
    }

    pub fn state_dim(&self) -> usize {
        self.encoder_out + self.bucket_dim
    }

    /// Start token, then depth, kernel and expansion choices.
    pub fn n_tokens(&self) -> usize {
        1 + self.n_depth + self.n_kernel + self.n_expansion
    }

    /// Decision positions: per unit one depth slot and a kernel and an
    /// expansion slot per layer.
    pub fn n_slots(&self) -> usize {
        self.n_units * (1 + 2 * self.max_depth)
    }

    pub fn slot(&self, kind_offset: usize, unit: usize, layer: usize) -> usize {
        let within = if kind_offset == 0 { 0 } else { 2 * layer + kind_offset };
        unit * (1 + 2 * self.max_depth) + within
    }

    pub fn dims(&self, t: Tensor) -> (usize, usize) {
        let h = self.hidden;
        match t {
            Tensor::EncW1 => (self.encoder_hidden, self.input_dim()),
            Tensor::EncB1 => (self.encoder_hidden, 1),
            Tensor::EncW2 => (self.encoder_out, self.encoder_hidden),
            Tensor::EncB2 => (self.encoder_out, 1),
            Tensor::BucketEmb => (self.n_buckets, self.bucket_dim),
            Tensor::InitW => (h, self.state_dim()),
            Tensor::InitB => (h, 1),
            Tensor::TokenEmb => (self.n_tokens(), self.token_dim),
            Tensor::SlotEmb => (self.n_slots(), self.token_dim),
            Tensor::GruWx => (3 * h, self.token_dim),
            Tensor::GruWh => (3 * h, h),
            Tensor::GruBx => (3 * h, 1),
            Tensor::GruBh => (3 * h, 1),
            Tensor::DepthW => (self.n_depth, h),
            Tensor::DepthB => (self.n_depth, 1),
            Tensor::KernelW => (self.n_kernel, h),
            Tensor::KernelB => (self.n_kernel, 1),
            Tensor::ExpansionW => (self.n_expansion, h),
            Tensor::ExpansionB => (self.n_expansion, 1),
        }
    }

    fn to_array(self) -> Vec<f64> {
        [
            self.n_units,
            self.max_depth,
            self.n_depth,
            self.n_kernel,
            self.n_expansion,
            self.encoder_hidden,
            self.encoder_out,
            self.n_buckets,
            self.bucket_dim,
            self.token_dim,
            self.hidden,
        ]
        .iter()
        .map(|&v| v as f64)
        .collect()
    }

    fn from_array(a: &[f64]) -> Result<Self> {
        if a.len() != 11 || a.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
            return Err(Error::InvalidData("malformed controller shape header".into()));
        }
        let v: Vec<usize> = a.iter().map(|&x| x as usize).collect();
        Ok(Self {
            n_units: v[0],
            max_depth: v[1],
            n_depth: v[2],
            n_kernel: v[3],
            n_expansion: v[4],
            encoder_hidden: v[5],
            encoder_out: v[6],
            n_buckets: v[7],
            bucket_dim: v[8],
            token_dim: v[9],
            hidden: v[10],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tensor {
    EncW1,
    EncB1,
    EncW2,
    EncB2,
    BucketEmb,
    InitW,
    InitB,
    TokenEmb,
    SlotEmb,
    GruWx,
    GruWh,
    GruBx,
    GruBh,
    DepthW,
    DepthB,
    KernelW,
    KernelB,
    ExpansionW,
    ExpansionB,
}

impl Tensor {
    pub const ALL: [Tensor; 19] = [
        Tensor::EncW1,
        Tensor::EncB1,
        Tensor::EncW2,
        Tensor::EncB2,
        Tensor::BucketEmb,
        Tensor::InitW,
        Tensor::InitB,
        Tensor::TokenEmb,
        Tensor::SlotEmb,
        Tensor::GruWx,
        Tensor::GruWh,
        Tensor::GruBx,
        Tensor::GruBh,
        Tensor::DepthW,
        Tensor::DepthB,
        Tensor::KernelW,
        Tensor::KernelB,
        Tensor::ExpansionW,
        Tensor::ExpansionB,
    ];

    pub fn is_head(self) -> bool {
        matches!(
            self,
            Tensor::DepthW
                | Tensor::DepthB
                | Tensor::KernelW
                | Tensor::KernelB
                | Tensor::ExpansionW
                | Tensor::ExpansionB
        )
    }
}

/// All learnable controller weights. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    space: SpaceConfig,
    shape: ControllerShape,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl ControllerParams {
    pub fn zeros(space: &SpaceConfig, shape: ControllerShape) -> Self {
        let mut offsets = Vec::with_capacity(Tensor::ALL.len() + 1);
        let mut total = 0;
        for t in Tensor::ALL {
            offsets.push(total);
            let (r, c) = shape.dims(t);
            total += r * c;
        }
        offsets.push(total);
        Self {
            space: space.clone(),
            shape,
            offsets,
            data: vec![0.0; total],
        }
    }

    /// Every weight uniform in `[-scale, scale]`.
    pub fn random(space: &SpaceConfig, shape: ControllerShape, seed: u64, scale: f64) -> Self {
        let mut p = Self::zeros(space, shape);
        let mut rng = rng_from_seed(seed);
        for v in &mut p.data {
            *v = rng.random_range(-scale..=scale);
        }
        p
    }

    /// [`ControllerParams::random`] with zeroed output heads, so the initial
    /// policy is uniform over every decision.
    pub fn init(space: &SpaceConfig, shape: ControllerShape, seed: u64, scale: f64) -> Self {
        let mut p = Self::random(space, shape, seed, scale);
        p.zero_heads();
        p
    }

    pub fn zero_heads(&mut self) {
        for t in Tensor::ALL.into_iter().filter(|t| t.is_head()) {
            self.get_mut(t).fill(0.0);
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            data: vec![0.0; self.data.len()],
            ..self.clone()
        }
    }

    pub fn space(&self) -> &SpaceConfig {
        &self.space
    }

    pub fn shape(&self) -> &ControllerShape {
        &self.shape
    }

    fn index(t: Tensor) -> usize {
        Tensor::ALL.iter().position(|&x| x == t).expect("listed")
    }

    pub fn get(&self, t: Tensor) -> &[f64] {
        let i = Self::index(t);
        &self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn get_mut(&mut self, t: Tensor) -> &mut [f64] {
        let i = Self::index(t);
        &mut self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// `AXPT`, format version (u32), array count (u32), then each array as a
    /// u64 length followed by that many f64 values, all little-endian. Array
    /// 0 is the shape header; the tensors follow in [`Tensor::ALL`] order.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(Tensor::ALL.len() as u32 + 1).to_le_bytes())?;
        let mut write_array = |a: &[f64]| -> Result<()> {
            w.write_all(&(a.len() as u64).to_le_bytes())?;
            for v in a {
                w.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        };
        write_array(&self.shape.to_array())?;
        for t in Tensor::ALL {
            write_array(self.get(t))?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read, space: &SpaceConfig) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::InvalidData("not a controller parameter file".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(Error::InvalidData(format!(
                "unsupported controller format version {version}"
            )));
        }
        r.read_exact(&mut word)?;
        let count = u32::from_le_bytes(word) as usize;
        if count != Tensor::ALL.len() + 1 {
            return Err(Error::InvalidData(format!(
                "expected {} arrays, found {count}",
                Tensor::ALL.len() + 1
            )));
        }
        let mut read_array = |max_len: usize| -> Result<Vec<f64>> {
            let mut len = [0u8; 8];
            r.read_exact(&mut len)?;
            let len = u64::from_le_bytes(len) as usize;
            if len > max_len {
                return Err(Error::InvalidData(format!("array length {len} is implausible")));
            }
            let mut buf = vec![0u8; len * 8];
            r.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let shape = ControllerShape::from_array(&read_array(64)?)?;
        let expected = ControllerShape::new(
            space,
            NetworkSizes {
                encoder_hidden: shape.encoder_hidden,
                encoder_out: shape.encoder_out,
                n_buckets: shape.n_buckets,
                bucket_dim: shape.bucket_dim,
                token_dim: shape.token_dim,
                hidden: shape.hidden,
            },
        );
        if expected != shape {
            return Err(Error::Shape(
                "controller file does not match the search space".into(),
            ));
        }
        let mut params = Self::zeros(space, shape);
        for t in Tensor::ALL {
            let want = params.get(t).len();
            let a = read_array(want)?;
            if a.len() != want {
                return Err(Error::Shape(format!("tensor {t:?}: {} values, expected {want}", a.len())));
            }
            params.get_mut(t).copy_from_slice(&a);
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::with_capacity(self.data.len() * 8 + 256);
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, space: &SpaceConfig) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice(), space)
    }
}
