//! Binary occupancy grids shared by the metrics and geometry code.

use crate::error::{Error, Result};

/// Boolean grid with `x` varying fastest, plus physical voxel spacing (mm).
///
/// 2-D images use `nz == 1`; index `(x, y)` then corresponds to image
/// column `x` and row `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<bool>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::dim(format!("mask extents must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::arg(format!("spacing must be positive, got {spacing:?}")));
        }
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::dim(format!(
                "mask {dims:?} needs {} voxels, got {}",
                dims.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn empty(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        let n = dims.iter().product();
        Self::new(dims, spacing, vec![false; n]).expect("valid dims")
    }

    /// A 2-D `height x width` mask with unit spacing.
    pub fn image(height: usize, width: usize) -> Self {
        Self::empty([width, height, 1], [1.0, 1.0, 1.0])
    }

    pub fn from_fn(dims: [usize; 3], spacing: [f64; 3], f: impl Fn(usize, usize, usize) -> bool) -> Self {
        let mut m = Self::empty(dims, spacing);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let i = m.index(x, y, z);
                    m.data[i] = f(x, y, z);
                }
            }
        }
        m
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.dims[0];
        let y = (i / self.dims[0]) % self.dims[1];
        [x, y, i / (self.dims[0] * self.dims[1])]
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn same_grid(&self, other: &BinaryMask) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::dim(format!(
                "mask grids differ: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.same_grid(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect();
        BinaryMask::new(self.dims, self.spacing, data)
    }

    /// Face-connected (6-neighbourhood) dilation by one voxel.
    pub fn dilate6(&self) -> BinaryMask {
        let mut out = self.clone();
        for (i, &v) in self.data.iter().enumerate() {
            if !v {
                continue;
            }
            for n in self.neighbors6(i).into_iter().flatten() {
                out.data[n] = true;
            }
        }
        out
    }

    /// The six face neighbours of voxel `i`; `None` where the grid ends.
    pub fn neighbors6(&self, i: usize) -> [Option<usize>; 6] {
        let [x, y, z] = self.coords(i);
        let [nx, ny, nz] = self.dims;
        let sx = 1;
        let sy = nx;
        let sz = nx * ny;
        [
            (x > 0).then(|| i - sx),
            (x + 1 < nx).then(|| i + sx),
            (y > 0).then(|| i - sy),
            (y + 1 < ny).then(|| i + sy),
            (z > 0).then(|| i - sz),
            (z + 1 < nz).then(|| i + sz),
        ]
    }

    /// Axes with more than one voxel; a 2-D grid has no z boundary.
    pub fn active_axes(&self) -> [bool; 3] {
        [self.dims[0] > 1, self.dims[1] > 1, self.dims[2] > 1]
    }

    /// Foreground voxels with at least one 6-neighbour that is background
    /// or lies beyond the grid along an axis of extent > 1.
    pub fn boundary_voxels(&self) -> Vec<usize> {
        let active = self.active_axes();
        (0..self.data.len())
            .filter(|&i| self.data[i])
            .filter(|&i| {
                self.neighbors6(i)
                    .iter()
                    .enumerate()
                    .any(|(k, n)| match n {
                        Some(j) => !self.data[*j],
                        None => active[k / 2],
                    })
            })
            .collect()
    }

    /// Voxel centers in voxel units or, with `physical`, in millimetres.
    pub fn voxel_center(&self, i: usize, physical: bool) -> [f64; 3] {
        let c = self.coords(i);
        let s = if physical { self.spacing } else { [1.0; 3] };
        [c[0] as f64 * s[0], c[1] as f64 * s[1], c[2] as f64 * s[2]]
    }
}
