//! Voxel-grid robot morphologies: representation, validity, mutation and
//! (de)serialization.
//!
//! Cells are stored row-major with row 0 at the top of the robot.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Material of a single voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
#[repr(u8)]
pub enum VoxelType {
    Empty = 0,
    Rigid = 1,
    Soft = 2,
    HorizontalActuator = 3,
    VerticalActuator = 4,
}

impl VoxelType {
    pub const ALL: [VoxelType; 5] = [
        VoxelType::Empty,
        VoxelType::Rigid,
        VoxelType::Soft,
        VoxelType::HorizontalActuator,
        VoxelType::VerticalActuator,
    ];

    /// The four non-empty materials.
    pub const MATERIALS: [VoxelType; 4] = [
        VoxelType::Rigid,
        VoxelType::Soft,
        VoxelType::HorizontalActuator,
        VoxelType::VerticalActuator,
    ];

    pub const MAX_CODE: u8 = 4;

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn is_empty(self) -> bool {
        self == VoxelType::Empty
    }

    pub fn is_actuator(self) -> bool {
        matches!(
            self,
            VoxelType::HorizontalActuator | VoxelType::VerticalActuator
        )
    }
}

impl From<VoxelType> for u8 {
    fn from(v: VoxelType) -> u8 {
        v.code()
    }
}

impl TryFrom<u8> for VoxelType {
    type Error = String;

    fn try_from(code: u8) -> std::result::Result<Self, String> {
        VoxelType::from_code(code).ok_or_else(|| format!("voxel code {code} is not in 0..=4"))
    }
}

/// One reason a genome fails validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    NoVoxels,
    Disconnected,
    NoActuator,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoVoxels => f.write_str("no non-empty voxel"),
            Violation::Disconnected => f.write_str("non-empty voxels are not 4-connected"),
            Violation::NoActuator => f.write_str("no actuator voxel"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationResult {
    pub violations: Vec<Violation>,
}

impl ValidationResult {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Deserialize)]
struct GenomeRepr {
    width: usize,
    height: usize,
    cells: Vec<VoxelType>,
}

impl TryFrom<GenomeRepr> for Genome {
    type Error = Error;

    fn try_from(r: GenomeRepr) -> Result<Genome> {
        Genome::new(r.width, r.height, r.cells)
    }
}

/// A `width` x `height` grid of voxel materials.
///
/// A `Genome` value always has consistent dimensions but is not necessarily
/// valid as a robot; use [`Genome::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "GenomeRepr")]
pub struct Genome {
    width: usize,
    height: usize,
    cells: Vec<VoxelType>,
}

/// Largest cell count `enumerate_all` accepts (5^9 assignments).
pub const ENUMERATION_LIMIT: usize = 9;

/// Attempts `mutate` makes before giving up.
pub const MUTATION_ATTEMPTS: usize = 100;

/// Attempts `random_genome` makes before giving up.
pub const RANDOM_ATTEMPTS: usize = 1000;

pub const DEFAULT_MUTATION_RATE: f64 = 0.1;

impl Genome {
    pub fn new(width: usize, height: usize, cells: Vec<VoxelType>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidGenome(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if cells.len() != width * height {
            return Err(Error::InvalidGenome(format!(
                "{width}x{height} grid needs {} cells, got {}",
                width * height,
                cells.len()
            )));
        }
        Ok(Genome {
            width,
            height,
            cells,
        })
    }

    /// Builds a genome from raw codes; panics on bad codes or dimensions.
    /// Intended for fixtures.
    pub fn from_codes(width: usize, height: usize, codes: &[u8]) -> Self {
        let cells = codes
            .iter()
            .map(|&c| VoxelType::from_code(c).expect("voxel code out of range"))
            .collect();
        Genome::new(width, height, cells).expect("bad fixture dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[VoxelType] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> VoxelType {
        self.cells[row * self.width + col]
    }

    /// `(row, col, type)` for every non-empty voxel, row-major.
    pub fn voxels(&self) -> impl Iterator<Item = (usize, usize, VoxelType)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_empty())
            .map(|(i, &v)| (i / self.width, i % self.width, v))
    }

    pub fn actuator_count(&self) -> usize {
        self.cells.iter().filter(|v| v.is_actuator()).count()
    }

    /// Left-right reflection.
    pub fn mirrored(&self) -> Genome {
        let mut cells = Vec::with_capacity(self.cells.len());
        for row in 0..self.height {
            for col in (0..self.width).rev() {
                cells.push(self.get(row, col));
            }
        }
        Genome {
            width: self.width,
            height: self.height,
            cells,
        }
    }

    pub fn validate(&self) -> ValidationResult {
        let mut violations = Vec::new();
        let occupied = self.cells.iter().filter(|v| !v.is_empty()).count();
        if occupied == 0 {
            violations.push(Violation::NoVoxels);
        } else if self.largest_component_from_first() != occupied {
            violations.push(Violation::Disconnected);
        }
        if self.actuator_count() == 0 {
            violations.push(Violation::NoActuator);
        }
        ValidationResult { violations }
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    /// Size of the 4-connected component containing the first non-empty cell.
    fn largest_component_from_first(&self) -> usize {
        let Some(start) = self.cells.iter().position(|v| !v.is_empty()) else {
            return 0;
        };
        let (w, h) = (self.width, self.height);
        let mut seen = vec![false; self.cells.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 0;
        while let Some(i) = queue.pop_front() {
            count += 1;
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if !seen[j] && !self.cells[j].is_empty() {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        count
    }

    /// Per-voxel uniform resampling at `per_voxel_rate`, retried until the
    /// offspring is valid. Pure function of `(self, rng_seed, per_voxel_rate)`.
    pub fn mutate(&self, rng_seed: u64, per_voxel_rate: f64) -> Result<Genome> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        self.mutate_with(&mut rng, per_voxel_rate)
    }

    pub fn mutate_with<R: Rng + ?Sized>(&self, rng: &mut R, per_voxel_rate: f64) -> Result<Genome> {
        if !(0.0..=1.0).contains(&per_voxel_rate) {
            return Err(Error::Config(format!(
                "mutation rate {per_voxel_rate} outside [0, 1]"
            )));
        }
        for _ in 0..MUTATION_ATTEMPTS {
            let cells = self
                .cells
                .iter()
                .map(|&v| {
                    if rng.random_bool(per_voxel_rate) {
                        VoxelType::ALL[rng.random_range(0..5)]
                    } else {
                        v
                    }
                })
                .collect();
            let child = Genome {
                width: self.width,
                height: self.height,
                cells,
            };
            if child.is_valid() {
                return Ok(child);
            }
        }
        Err(Error::RepairExhausted {
            attempts: MUTATION_ATTEMPTS,
        })
    }

    /// Every valid genome of the given size, ordered by the base-5 number
    /// formed by the cell codes (cell 0 most significant).
    pub fn enumerate_all(width: usize, height: usize) -> Result<Vec<Genome>> {
        let n = width * height;
        if width == 0 || height == 0 || n > ENUMERATION_LIMIT {
            return Err(Error::SizeTooLarge {
                width,
                height,
                limit: ENUMERATION_LIMIT,
            });
        }
        let total = 5usize.pow(n as u32);
        let mut out = Vec::new();
        let mut cells = vec![VoxelType::Empty; n];
        for mut k in 0..total {
            for slot in cells.iter_mut().rev() {
                *slot = VoxelType::ALL[k % 5];
                k /= 5;
            }
            let g = Genome {
                width,
                height,
                cells: cells.clone(),
            };
            if g.is_valid() {
                out.push(g);
            }
        }
        Ok(out)
    }

    /// Text form: `W H` header then `H` rows of `W` space-separated codes.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.width, self.height);
        for row in self.cells.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| v.code().to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Genome> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, 1, "missing `W H` header"))?;
        let dims: Vec<&str> = header.split_whitespace().collect();
        if dims.len() != 2 {
            return Err(Error::parse(
                hline + 1,
                dims.len().min(2) + 1,
                "header must be exactly `W H`",
            ));
        }
        let parse_dim = |s: &str, field: usize| -> Result<usize> {
            match s.parse::<usize>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(Error::parse(hline + 1, field, format!("bad dimension `{s}`"))),
            }
        };
        let width = parse_dim(dims[0], 1)?;
        let height = parse_dim(dims[1], 2)?;

        let mut cells = Vec::with_capacity(width * height);
        for row in 0..height {
            let (lno, line) = lines.next().ok_or_else(|| {
                Error::parse(hline + 2 + row, 1, format!("expected {height} rows, got {row}"))
            })?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != width {
                return Err(Error::parse(
                    lno + 1,
                    fields.len().min(width) + 1,
                    format!("expected {width} cells, got {}", fields.len()),
                ));
            }
            for (f, tok) in fields.iter().enumerate() {
                let v = tok
                    .parse::<u8>()
                    .ok()
                    .and_then(VoxelType::from_code)
                    .ok_or_else(|| {
                        Error::parse(lno + 1, f + 1, format!("`{tok}` is not a voxel code 0..=4"))
                    })?;
                cells.push(v);
            }
        }
        if let Some((lno, _)) = lines.next() {
            return Err(Error::parse(lno + 1, 1, "trailing data after grid"));
        }
        Genome::new(width, height, cells)
    }
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl FromStr for Genome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Genome> {
        Genome::from_text(s)
    }
}

/// Uniform-code random genome, resampled until valid.
pub fn random_genome(width: usize, height: usize, seed: u64) -> Result<Genome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_genome_with(&mut rng, width, height)
}

pub fn random_genome_with<R: Rng + ?Sized>(rng: &mut R, width: usize, height: usize) -> Result<Genome> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidGenome(format!(
            "dimensions must be positive, got {width}x{height}"
        )));
    }
    for _ in 0..RANDOM_ATTEMPTS {
        let cells = (0..width * height)
            .map(|_| VoxelType::ALL[rng.random_range(0..5)])
            .collect();
        let g = Genome {
            width,
            height,
            cells,
        };
        if g.is_valid() {
            return Ok(g);
        }
    }
    Err(Error::RepairExhausted {
        attempts: RANDOM_ATTEMPTS,
    })
}
