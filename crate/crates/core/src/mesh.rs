//! Structured cell-centered quadrilateral mesh of a 2D channel with an
//! optional sine bump on the lower wall, and the stencil relation oracle.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::instrumentation::{Category, QueryCounters};

pub const N_FACES: usize = 4;
/// Blocks per Jacobian row: the cell itself plus its four face neighbors.
pub const STENCIL_SIZE: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Face {
    East = 0,
    West = 1,
    North = 2,
    South = 3,
}

impl Face {
    pub const ALL: [Face; N_FACES] = [Face::East, Face::West, Face::North, Face::South];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn opposite(self) -> Face {
        match self {
            Face::East => Face::West,
            Face::West => Face::East,
            Face::North => Face::South,
            Face::South => Face::North,
        }
    }

    /// Stencil slot of the neighbor across this face (slot 0 is the cell).
    pub fn slot(self) -> usize {
        self.index() + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Interior,
    SlipWall,
    Inlet,
    Outlet,
    /// Ghost state pinned to the freestream.
    Farfield,
}

impl BoundaryTag {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryTag::Interior => "interior",
            BoundaryTag::SlipWall => "slip_wall",
            BoundaryTag::Inlet => "inlet",
            BoundaryTag::Outlet => "outlet",
            BoundaryTag::Farfield => "farfield",
        }
    }
}

/// What a stencil slot refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Related {
    Cell(usize),
    /// Boundary face: the ghost state is a function of `owner`'s state.
    Ghost { owner: usize, tag: BoundaryTag },
}

impl Related {
    pub fn cell(self) -> Option<usize> {
        match self {
            Related::Cell(c) => Some(c),
            Related::Ghost { .. } => None,
        }
    }
}

/// How the lower and upper channel walls are treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WallTreatment {
    #[default]
    SlipWall,
    /// Replace both walls by freestream ghosts (used for metric checks).
    Farfield,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelSpec {
    pub nx: usize,
    pub ny: usize,
    /// Bump height as a fraction of the channel height.
    pub bump_height: f64,
    pub length_x: f64,
    pub length_y: f64,
    pub walls: WallTreatment,
}

impl ChannelSpec {
    pub fn new(nx: usize, ny: usize, bump_height: f64) -> Self {
        Self {
            nx,
            ny,
            bump_height,
            length_x: 3.0,
            length_y: 1.0,
            walls: WallTreatment::SlipWall,
        }
    }

    /// Lower wall height at `x`: a sin² bump over the middle third.
    pub fn lower_wall(&self, x: f64) -> f64 {
        let a = self.length_x / 3.0;
        let b = 2.0 * self.length_x / 3.0;
        if self.bump_height == 0.0 || x <= a || x >= b {
            return 0.0;
        }
        let s = (std::f64::consts::PI * (x - a) / (b - a)).sin();
        self.bump_height * self.length_y * s * s
    }
}

#[derive(Clone, Debug)]
pub struct StencilMap {
    neighbor: Vec<[Related; STENCIL_SIZE]>,
}

impl StencilMap {
    pub fn len(&self) -> usize {
        self.neighbor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbor.is_empty()
    }

    pub fn row(&self, i: usize) -> &[Related; STENCIL_SIZE] {
        &self.neighbor[i]
    }

    /// Cells related to `i` (itself first, then face neighbors).
    pub fn cells(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbor[i].iter().filter_map(|r| r.cell())
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    spec: ChannelSpec,
    volume: Vec<f64>,
    normal: Vec<[[f64; 2]; N_FACES]>,
    tag: Vec<[BoundaryTag; N_FACES]>,
    centroid: Vec<[f64; 2]>,
    stencil: StencilMap,
}

/// Builds a channel mesh with slip walls, inlet on the west and outlet on
/// the east boundary.
pub fn build_channel_mesh(nx: usize, ny: usize, bump_height: f64) -> Result<Mesh> {
    Mesh::channel(ChannelSpec::new(nx, ny, bump_height))
}

impl Mesh {
    pub fn channel(spec: ChannelSpec) -> Result<Mesh> {
        let ChannelSpec { nx, ny, .. } = spec;
        if nx < 4 || ny < 2 {
            return Err(Error::DimensionTooSmall { nx, ny });
        }
        if !(0.0..0.5).contains(&spec.bump_height) {
            return Err(Error::InvalidBump(spec.bump_height));
        }
        if !(spec.length_x > 0.0 && spec.length_y > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "channel lengths must be positive (got {} x {})",
                spec.length_x, spec.length_y
            )));
        }

        let xs: Vec<f64> = (0..=nx)
            .map(|ix| spec.length_x * ix as f64 / nx as f64)
            .collect();
        let vertex = |ix: usize, iy: usize| -> [f64; 2] {
            let x = xs[ix];
            let lo = spec.lower_wall(x);
            [x, lo + (spec.length_y - lo) * iy as f64 / ny as f64]
        };
        // outward normal of the counter-clockwise edge a -> b
        let edge = |a: [f64; 2], b: [f64; 2]| [b[1] - a[1], -(b[0] - a[0])];

        let wall = match spec.walls {
            WallTreatment::SlipWall => BoundaryTag::SlipWall,
            WallTreatment::Farfield => BoundaryTag::Farfield,
        };

        let n = nx * ny;
        let mut volume = Vec::with_capacity(n);
        let mut normal = Vec::with_capacity(n);
        let mut tag = Vec::with_capacity(n);
        let mut centroid = Vec::with_capacity(n);
        let mut neighbor = Vec::with_capacity(n);
        for ix in 0..nx {
            for iy in 0..ny {
                let i = ix * ny + iy;
                let (sw, se, ne, nw) = (
                    vertex(ix, iy),
                    vertex(ix + 1, iy),
                    vertex(ix + 1, iy + 1),
                    vertex(ix, iy + 1),
                );
                let vol = 0.5 * ((ne[0] - sw[0]) * (nw[1] - se[1]) - (nw[0] - se[0]) * (ne[1] - sw[1]));
                if !(vol > 0.0) {
                    return Err(Error::DegenerateCell { cell: i, volume: vol });
                }
                volume.push(vol);
                let mut nrm = [[0.0; 2]; N_FACES];
                nrm[Face::East.index()] = edge(se, ne);
                nrm[Face::North.index()] = edge(ne, nw);
                nrm[Face::West.index()] = edge(nw, sw);
                nrm[Face::South.index()] = edge(sw, se);
                normal.push(nrm);
                centroid.push([
                    0.25 * (sw[0] + se[0] + ne[0] + nw[0]),
                    0.25 * (sw[1] + se[1] + ne[1] + nw[1]),
                ]);

                let mut t = [BoundaryTag::Interior; N_FACES];
                let mut row = [Related::Cell(i); STENCIL_SIZE];
                let mut link = |face: Face, other: Option<usize>, bc: BoundaryTag| {
                    match other {
                        Some(c) => row[face.slot()] = Related::Cell(c),
                        None => {
                            t[face.index()] = bc;
                            row[face.slot()] = Related::Ghost { owner: i, tag: bc };
                        }
                    }
                };
                link(Face::East, (ix + 1 < nx).then(|| i + ny), BoundaryTag::Outlet);
                link(Face::West, (ix > 0).then(|| i - ny), BoundaryTag::Inlet);
                link(Face::North, (iy + 1 < ny).then(|| i + 1), wall);
                link(Face::South, (iy > 0).then(|| i - 1), wall);
                tag.push(t);
                neighbor.push(row);
            }
        }

        Ok(Mesh {
            spec,
            volume,
            normal,
            tag,
            centroid,
            stencil: StencilMap { neighbor },
        })
    }

    pub fn spec(&self) -> &ChannelSpec {
        &self.spec
    }

    pub fn nx(&self) -> usize {
        self.spec.nx
    }

    pub fn ny(&self) -> usize {
        self.spec.ny
    }

    pub fn n_cells(&self) -> usize {
        self.volume.len()
    }

    pub fn cell_index(&self, ix: usize, iy: usize) -> usize {
        ix * self.spec.ny + iy
    }

    pub fn cell_coords(&self, i: usize) -> (usize, usize) {
        (i / self.spec.ny, i % self.spec.ny)
    }

    pub fn volume(&self, i: usize) -> f64 {
        self.volume[i]
    }

    /// Outward normal of `face`, scaled by the face length.
    pub fn normal(&self, i: usize, face: Face) -> [f64; 2] {
        self.normal[i][face.index()]
    }

    pub fn face_length(&self, i: usize, face: Face) -> f64 {
        let n = self.normal(i, face);
        n[0].hypot(n[1])
    }

    pub fn boundary_tag(&self, i: usize, face: Face) -> BoundaryTag {
        self.tag[i][face.index()]
    }

    pub fn centroid(&self, i: usize) -> [f64; 2] {
        self.centroid[i]
    }

    pub fn stencil(&self) -> &StencilMap {
        &self.stencil
    }

    /// Neighbor across `face`, or the ghost descriptor on a boundary.
    pub fn across(&self, i: usize, face: Face) -> Related {
        self.stencil.neighbor[i][face.slot()]
    }

    /// The O_l oracle: index of the `p`-th related cell of cell `i`.
    pub fn stencil_oracle(&self, i: usize, p: usize, counters: &QueryCounters) -> Result<Related> {
        if i >= self.n_cells() {
            return Err(Error::IndexOutOfRange {
                what: "cell",
                index: i,
                limit: self.n_cells(),
            });
        }
        if p >= STENCIL_SIZE {
            return Err(Error::IndexOutOfRange {
                what: "stencil slot",
                index: p,
                limit: STENCIL_SIZE,
            });
        }
        counters.quantum(Category::Stencil, 1);
        Ok(self.stencil.neighbor[i][p])
    }

    /// Plain-text dump, one cell per line:
    /// `index volume n_E n_W n_N n_S nx_E ny_E nx_W ny_W nx_N ny_N nx_S ny_S`.
    /// Boundary neighbors are written as their tag name.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n_cells() {
            let _ = write!(out, "{i} {:.17e}", self.volume[i]);
            for face in Face::ALL {
                match self.across(i, face) {
                    Related::Cell(c) => {
                        let _ = write!(out, " {c}");
                    }
                    Related::Ghost { tag, .. } => {
                        let _ = write!(out, " {}", tag.name());
                    }
                }
            }
            for face in Face::ALL {
                let n = self.normal(i, face);
                let _ = write!(out, " {:.17e} {:.17e}", n[0], n[1]);
            }
            out.push('\n');
        }
        out
    }
}
