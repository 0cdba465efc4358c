//! The eight symmetries of the square, applied jointly to an image pair and
//! its label.

use crate::error::{Error, Result};

/// Element of the dihedral group of order 8: `rotation` quarter turns
/// followed by an optional horizontal flip. Index 0 is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DihedralTransform(u8);

/// 2×2 integer matrix acting on doubled, centred pixel coordinates.
type Mat2 = [[i32; 2]; 2];

const QUARTER_TURN: Mat2 = [[0, 1], [-1, 0]];
const FLIP: Mat2 = [[-1, 0], [0, 1]];
const IDENTITY: Mat2 = [[1, 0], [0, 1]];

fn mul(a: Mat2, b: Mat2) -> Mat2 {
    let mut m = [[0; 2]; 2];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    m
}

impl DihedralTransform {
    pub const IDENTITY: DihedralTransform = DihedralTransform(0);

    pub fn new(index: u8) -> Result<Self> {
        if index < 8 {
            Ok(DihedralTransform(index))
        } else {
            Err(Error::Config(format!("dihedral index {index} outside 0..8")))
        }
    }

    pub fn all() -> impl Iterator<Item = DihedralTransform> {
        (0..8).map(DihedralTransform)
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn rotation(self) -> u8 {
        self.0 % 4
    }

    pub fn flipped(self) -> bool {
        self.0 >= 4
    }

    fn matrix(self) -> Mat2 {
        let mut m = IDENTITY;
        for _ in 0..self.rotation() {
            m = mul(QUARTER_TURN, m);
        }
        if self.flipped() {
            m = mul(FLIP, m);
        }
        m
    }

    fn from_matrix(m: Mat2) -> Self {
        Self::all().find(|t| t.matrix() == m).expect("the group is closed")
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(self, other: DihedralTransform) -> Self {
        Self::from_matrix(mul(self.matrix(), other.matrix()))
    }

    pub fn inverse(self) -> Self {
        Self::all()
            .find(|t| t.compose(self) == Self::IDENTITY)
            .expect("every element has an inverse")
    }

    /// Where pixel `(y, x)` of an `n × n` patch lands.
    pub fn map_point(self, y: usize, x: usize, n: usize) -> (usize, usize) {
        let m = self.matrix();
        let (u, v) = (2 * x as i32 - (n as i32 - 1), 2 * y as i32 - (n as i32 - 1));
        let (u2, v2) = (m[0][0] * u + m[0][1] * v, m[1][0] * u + m[1][1] * v);
        (((v2 + n as i32 - 1) / 2) as usize, ((u2 + n as i32 - 1) / 2) as usize)
    }

    /// Transforms every `n × n` plane of a planar buffer.
    pub fn apply_planes<T: Copy + Default>(self, planes: &[T], n: usize) -> Result<Vec<T>> {
        let plane = n * n;
        if plane == 0 || !planes.len().is_multiple_of(plane) {
            return Err(Error::Shape(format!(
                "buffer of {} values is not a stack of {n}x{n} planes",
                planes.len()
            )));
        }
        if self == Self::IDENTITY {
            return Ok(planes.to_vec());
        }
        let mut out = vec![T::default(); planes.len()];
        for (src, dst) in planes.chunks(plane).zip(out.chunks_mut(plane)) {
            for y in 0..n {
                for x in 0..n {
                    let (ty, tx) = self.map_point(y, x, n);
                    dst[ty * n + tx] = src[y * n + x];
                }
            }
        }
        Ok(out)
    }
}
