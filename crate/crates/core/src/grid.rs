//! Rectangular tensor grids, multilinear interpolation and the `HJBV1` value-file format.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DomainBox;

/// Default cap on the total number of grid nodes.
pub const DEFAULT_NODE_CAP: usize = 20_000_000;

const MAGIC: &[u8; 5] = b"HJBV1";

/// Tensor grid over a box with `nodes[i] ≥ 3` nodes per axis, 1 to 3 axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectGrid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    nodes: Vec<usize>,
    spacing: Vec<f64>,
}

impl RectGrid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, nodes: Vec<usize>) -> Result<Self> {
        Self::with_cap(lower, upper, nodes, DEFAULT_NODE_CAP)
    }

    pub fn with_cap(lower: Vec<f64>, upper: Vec<f64>, nodes: Vec<usize>, cap: usize) -> Result<Self> {
        let dim = lower.len();
        if !(1..=3).contains(&dim) || upper.len() != dim || nodes.len() != dim {
            return Err(Error::InvalidParameter(format!(
                "grid needs 1-3 axes with matching lower/upper/nodes (got {}, {}, {})",
                lower.len(),
                upper.len(),
                nodes.len()
            )));
        }
        DomainBox::new(lower.clone(), upper.clone())?;
        if let Some(n) = nodes.iter().find(|&&n| n < 3) {
            return Err(Error::InvalidParameter(format!("each axis needs at least 3 nodes, got {n}")));
        }
        let total = nodes.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n));
        match total {
            Some(t) if t <= cap => {}
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "grid with nodes {nodes:?} exceeds the node cap {cap}"
                )))
            }
        }
        let spacing = (0..dim).map(|i| (upper[i] - lower[i]) / (nodes[i] - 1) as f64).collect();
        Ok(RectGrid { lower, upper, nodes, spacing })
    }

    /// Same box, `nodes` per axis.
    pub fn uniform(domain: &DomainBox, nodes: usize) -> Result<Self> {
        Self::new(domain.lower.clone(), domain.upper.clone(), vec![nodes; domain.dim()])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }
    pub fn upper(&self) -> &[f64] {
        &self.upper
    }
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }
    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }
    /// Largest cell width.
    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(0.0, f64::max)
    }
    pub fn len(&self) -> usize {
        self.nodes.iter().product()
    }
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn domain(&self) -> DomainBox {
        DomainBox { lower: self.lower.clone(), upper: self.upper.clone() }
    }

    /// Row-major multi-index of a flat node index (last axis fastest).
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            idx[d] = flat % self.nodes[d];
            flat /= self.nodes[d];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.nodes).fold(0, |acc, (i, n)| acc * n + i)
    }

    pub fn node_coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.nodes[axis] {
            self.upper[axis]
        } else {
            self.lower[axis] + i as f64 * self.spacing[axis]
        }
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .into_iter()
            .enumerate()
            .map(|(d, i)| self.node_coord(d, i))
            .collect()
    }

    /// Every node coordinate, in flat order.
    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.node(k)).collect()
    }

    /// Whether the node is at least `margin` cells away from every face.
    pub fn is_interior(&self, flat: usize, margin: usize) -> bool {
        self.multi_index(flat)
            .iter()
            .zip(&self.nodes)
            .all(|(&i, &n)| i >= margin && i + margin < n)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().enumerate().all(|(d, v)| {
                let slack = 1e-12 * (self.upper[d] - self.lower[d]);
                *v >= self.lower[d] - slack && *v <= self.upper[d] + slack
            })
    }

    /// Componentwise clamp into the box.
    pub fn clamp_to_box(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(d, v)| v.clamp(self.lower[d], self.upper[d]))
            .collect()
    }

    /// Multilinear interpolation of node `values` at `x`, without a box check.
    pub(crate) fn interp_unchecked(&self, values: &[f64], x: &[f64]) -> f64 {
        match x.len() {
            1 => {
                let (i, s) = self.cell(0, x[0]);
                values[i] + s * (values[i + 1] - values[i])
            }
            2 => {
                let (i, s) = self.cell(0, x[0]);
                let (j, t) = self.cell(1, x[1]);
                let k = i * self.nodes[1] + j;
                let near = values[k] + t * (values[k + 1] - values[k]);
                let k = k + self.nodes[1];
                let far = values[k] + t * (values[k + 1] - values[k]);
                near + s * (far - near)
            }
            _ => self.interp_general(values, x),
        }
    }

    /// Lower cell index along `axis` and the fractional offset inside it.
    #[inline]
    fn cell(&self, axis: usize, v: f64) -> (usize, f64) {
        let top = self.nodes[axis] - 1;
        let t = ((v - self.lower[axis]) / self.spacing[axis]).clamp(0.0, top as f64);
        let i = (t as usize).min(top - 1);
        (i, t - i as f64)
    }

    fn interp_general(&self, values: &[f64], x: &[f64]) -> f64 {
        let dim = self.dim();
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for d in 0..dim {
            let t = ((x[d] - self.lower[d]) / self.spacing[d]).clamp(0.0, (self.nodes[d] - 1) as f64);
            let i = (t.floor() as usize).min(self.nodes[d] - 2);
            base[d] = i;
            frac[d] = t - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut flat = 0usize;
            for d in 0..dim {
                let bit = (corner >> d) & 1;
                w *= if bit == 1 { frac[d] } else { 1.0 - frac[d] };
                flat = flat * self.nodes[d] + base[d] + bit;
            }
            if w != 0.0 {
                acc += w * values[flat];
            }
        }
        acc
    }
}

/// Metadata attached to a solved field; not persisted in value files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub objective: String,
    pub achieved_change: f64,
    pub iterations: usize,
}

/// Node values of an approximation of the value function on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub grid: RectGrid,
    pub values: Vec<f64>,
    pub lambda: f64,
    pub meta: FieldMeta,
}

impl ValueField {
    pub fn new(grid: RectGrid, values: Vec<f64>, lambda: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("discount must be positive, got {lambda}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("value field construction"));
        }
        Ok(ValueField { grid, values, lambda, meta: FieldMeta::default() })
    }

    /// Samples `u` at every node.
    pub fn from_fn(grid: RectGrid, lambda: f64, u: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|k| u(&grid.node(k))).collect();
        Self::new(grid, values, lambda)
    }

    /// Multilinear interpolation; errors outside the box.
    pub fn interpolate(&self, x: &[f64]) -> Result<f64> {
        if !self.grid.contains(x) {
            return Err(Error::OutsideBox { point: x.to_vec() });
        }
        Ok(self.grid.interp_unchecked(&self.values, x))
    }

    /// Central differences of the interpolant with step `h_i`, one-sided within `h_i` of a face.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        if !self.grid.contains(x) {
            return Err(Error::OutsideBox { point: x.to_vec() });
        }
        let x = self.grid.clamp_to_box(x);
        let mut g = vec![0.0; x.len()];
        let mut probe = x.clone();
        for d in 0..x.len() {
            let h = self.grid.spacing[d];
            let up = (x[d] + h).min(self.grid.upper[d]);
            let down = (x[d] - h).max(self.grid.lower[d]);
            probe[d] = up;
            let fu = self.grid.interp_unchecked(&self.values, &probe);
            probe[d] = down;
            let fd = self.grid.interp_unchecked(&self.values, &probe);
            probe[d] = x[d];
            g[d] = (fu - fd) / (up - down);
        }
        Ok(g)
    }

    pub fn clamp_to_box(&self, x: &[f64]) -> Vec<f64> {
        self.grid.clamp_to_box(x)
    }

    /// Local bound `Σ_d max|Δ²_d u|/8` on the multilinear interpolation error near `x`,
    /// from nodal second differences around the cell containing `x`.
    pub fn interpolation_error_bound(&self, x: &[f64]) -> f64 {
        let g = &self.grid;
        let x = g.clamp_to_box(x);
        let dim = g.dim();
        let mut base = vec![0usize; dim];
        for d in 0..dim {
            let t = (x[d] - g.lower[d]) / g.spacing[d];
            base[d] = (t.floor() as usize).min(g.nodes[d] - 2);
        }
        let mut total = 0.0;
        for d in 0..dim {
            let mut worst = 0.0f64;
            // both cell corners along d, every corner combination along the other axes
            for corner in 0..(1usize << dim) {
                let mut idx: Vec<usize> = (0..dim).map(|e| base[e] + ((corner >> e) & 1)).collect();
                let i = idx[d];
                if i == 0 || i + 1 >= g.nodes[d] {
                    continue;
                }
                idx[d] = i - 1;
                let a = self.values[g.flat_index(&idx)];
                idx[d] = i;
                let b = self.values[g.flat_index(&idx)];
                idx[d] = i + 1;
                let c = self.values[g.flat_index(&idx)];
                worst = worst.max((a - 2.0 * b + c).abs());
            }
            total += worst / 8.0;
        }
        total
    }

    /// Writes the `HJBV1` little-endian format.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(6 + 24 * self.grid.dim() + 8 * (self.values.len() + 1));
        buf.extend_from_slice(MAGIC);
        buf.push(self.grid.dim() as u8);
        for d in 0..self.grid.dim() {
            buf.extend_from_slice(&self.grid.lower[d].to_le_bytes());
            buf.extend_from_slice(&self.grid.upper[d].to_le_bytes());
            buf.extend_from_slice(&(self.grid.nodes[d] as u64).to_le_bytes());
        }
        buf.extend_from_slice(&self.lambda.to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Reads the `HJBV1` format; the grid node cap is not enforced on read.
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(5)? != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let dim = cur.take(1)?[0] as usize;
        let mut lower = Vec::with_capacity(dim);
        let mut upper = Vec::with_capacity(dim);
        let mut nodes = Vec::with_capacity(dim);
        for _ in 0..dim {
            lower.push(cur.f64()?);
            upper.push(cur.f64()?);
            nodes.push(usize::try_from(cur.u64()?).map_err(|_| Error::Format("node count overflow".into()))?);
        }
        let grid = RectGrid::with_cap(lower, upper, nodes, usize::MAX).map_err(|e| Error::Format(e.to_string()))?;
        let lambda = cur.f64()?;
        let n = grid.len();
        if cur.remaining() != 8 * n {
            return Err(Error::Format(format!("expected {} value bytes, found {}", 8 * n, cur.remaining())));
        }
        let values = (0..n).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        ValueField::new(grid, values, lambda).map_err(|e| Error::Format(e.to_string()))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> RectGrid {
        RectGrid::new(vec![-1.0], vec![1.0], vec![n]).unwrap()
    }

    #[test]
    fn constant_and_linear_fields() {
        let c = ValueField::from_fn(line(11), 0.1, |_| 3.0).unwrap();
        assert_eq!(c.interpolate(&[0.123]).unwrap(), 3.0);
        assert_eq!(c.gradient(&[0.4]).unwrap(), vec![0.0]);

        let lin = ValueField::from_fn(line(21), 0.1, |x| 2.0 * x[0]).unwrap();
        assert!((lin.interpolate(&[0.37]).unwrap() - 0.74).abs() < 1e-14);
        assert!((lin.gradient(&[0.5]).unwrap()[0] - 2.0).abs() < 1e-12);
        // one-sided near the faces
        assert!((lin.gradient(&[0.99]).unwrap()[0] - 2.0).abs() < 1e-12);
        assert!((lin.gradient(&[-1.0]).unwrap()[0] - 2.0).abs() < 1e-12);

        let g2 = RectGrid::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![5, 9]).unwrap();
        let plane = ValueField::from_fn(g2, 0.1, |x| x[0] + x[1]).unwrap();
        assert!((plane.interpolate(&[0.25, 0.5]).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn quadratic_gradient_matches_riccati_slope() {
        let c = 0.4756246;
        let grid = RectGrid::new(vec![-2.0], vec![2.0], vec![401]).unwrap();
        let vf = ValueField::from_fn(grid, 0.1, |x| c * x[0] * x[0]).unwrap();
        let g = vf.gradient(&[0.8]).unwrap()[0];
        assert!((g - 0.76100).abs() < 1e-4, "{g}");
    }

    #[test]
    fn outside_box_is_an_error() {
        let vf = ValueField::from_fn(line(5), 0.1, |x| x[0]).unwrap();
        assert!(matches!(vf.interpolate(&[1.5]), Err(Error::OutsideBox { .. })));
        assert!(vf.gradient(&[-1.01]).is_err());
    }

    #[test]
    fn clamp() {
        let g = RectGrid::new(vec![-2.0, -2.0], vec![2.0, 2.0], vec![5, 5]).unwrap();
        assert_eq!(g.clamp_to_box(&[-5.0, 0.3]), vec![-2.0, 0.3]);
        assert_eq!(g.clamp_to_box(&[0.1, 0.3]), vec![0.1, 0.3]);
        let g1 = line(5);
        assert_eq!(g1.clamp_to_box(&[3.0]), vec![1.0]);
    }

    #[test]
    fn grid_validation() {
        assert!(RectGrid::new(vec![0.0], vec![1.0], vec![2]).is_err());
        assert!(RectGrid::new(vec![1.0], vec![0.0], vec![5]).is_err());
        assert!(RectGrid::new(vec![0.0; 4], vec![1.0; 4], vec![3; 4]).is_err());
        assert!(RectGrid::with_cap(vec![0.0, 0.0], vec![1.0, 1.0], vec![100, 100], 9_999).is_err());
    }

    #[test]
    fn index_round_trip() {
        let g = RectGrid::new(vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 3.0], vec![3, 4, 5]).unwrap();
        for k in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(k)), k);
        }
        assert_eq!(g.node(g.len() - 1), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn file_format_layout() {
        let vf = ValueField::from_fn(line(3), 0.25, |x| x[0]).unwrap();
        let bytes = vf.to_bytes();
        assert_eq!(&bytes[..5], b"HJBV1");
        assert_eq!(bytes[5], 1);
        assert_eq!(bytes.len(), 5 + 1 + 24 + 8 + 3 * 8);
        assert_eq!(f64::from_le_bytes(bytes[30..38].try_into().unwrap()), 0.25);
        let back = ValueField::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert!(ValueField::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ValueField::from_bytes(&bad).is_err());
    }
}
