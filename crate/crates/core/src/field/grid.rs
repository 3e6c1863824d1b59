//! Compact storage for fields supported on row-convex regions of `Z^d`.
//!
//! A region is described by one interval of the last coordinate for every
//! prefix `(x_1, ..., x_{d-1})` in a bounding box. Values of a row are stored
//! contiguously, so a kernel step becomes a shifted `axpy` between rows.

use crate::walk::WalkKernel;

/// One kernel step split into its prefix and last coordinate.
#[derive(Debug, Clone)]
pub(crate) struct Shift {
    pub pre: Vec<i64>,
    pub last: i64,
    pub mass: f64,
}

impl Shift {
    /// Shifts for `out(x) = sum_s nu(s) in(x - s)`.
    pub fn forward(kernel: &WalkKernel) -> Vec<Shift> {
        Self::build(kernel, 1)
    }

    /// Shifts for `out(x) = sum_s nu(s) in(x + s)`.
    pub fn backward(kernel: &WalkKernel) -> Vec<Shift> {
        Self::build(kernel, -1)
    }

    fn build(kernel: &WalkKernel, sign: i64) -> Vec<Shift> {
        let d = kernel.dim();
        kernel
            .steps()
            .iter()
            .zip(kernel.masses())
            .map(|(s, &mass)| Shift {
                pre: s[..d - 1].iter().map(|c| sign * c).collect(),
                last: sign * s[d - 1],
                mass,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Row {
    lo: i64,
    hi: i64,
    offset: usize,
    len: usize,
}

impl Row {
    const EMPTY: Row = Row {
        lo: 1,
        hi: 0,
        offset: 0,
        len: 0,
    };

    fn len(&self) -> usize {
        self.len
    }
}

/// Row intervals over a prefix bounding box, before storage is attached.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pre_lo: Vec<i64>,
    pre_shape: Vec<usize>,
    intervals: Vec<(i64, i64)>,
}

/// With `stride == 2` a row holds only the sites `lo, lo + 2, ..., hi`; this
/// is exact for kernels whose steps all have coordinate sums of one parity.
#[derive(Debug, Clone)]
pub(crate) struct Grid {
    dim: usize,
    stride: i64,
    pre_lo: Vec<i64>,
    pre_shape: Vec<usize>,
    rows: Vec<Row>,
    pub values: Vec<f64>,
}

/// Advances `coords` (within `lo .. lo + shape`) in row-major order.
fn odometer(coords: &mut [i64], lo: &[i64], shape: &[usize]) {
    for i in (0..coords.len()).rev() {
        coords[i] += 1;
        if coords[i] < lo[i] + shape[i] as i64 {
            return;
        }
        coords[i] = lo[i];
    }
}

impl Grid {
    /// A single site carrying `value`.
    pub fn single(site: &[i64], value: f64, stride: i64) -> Grid {
        let dim = site.len();
        let layout = Layout {
            pre_lo: site[..dim - 1].to_vec(),
            pre_shape: vec![1; dim - 1],
            intervals: vec![(site[dim - 1], site[dim - 1])],
        };
        let mut g = Grid::empty(dim, stride);
        g.reset(layout, value);
        g
    }

    /// The cube `[-half, half]^d` filled with `value`.
    pub fn cube(dim: usize, half: i64, value: f64) -> Grid {
        let side = (2 * half + 1) as usize;
        let layout = Layout {
            pre_lo: vec![-half; dim - 1],
            pre_shape: vec![side; dim - 1],
            intervals: vec![(-half, half); side.pow(dim as u32 - 1)],
        };
        let mut g = Grid::empty(dim, 1);
        g.reset(layout, value);
        g
    }

    pub fn empty(dim: usize, stride: i64) -> Grid {
        Grid {
            dim,
            stride,
            pre_lo: vec![0; dim - 1],
            pre_shape: vec![0; dim - 1],
            rows: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Replaces the region by `layout`, filling every site with `fill`.
    /// Existing allocations are reused.
    pub fn reset(&mut self, layout: Layout, fill: f64) {
        self.pre_lo = layout.pre_lo;
        self.pre_shape = layout.pre_shape;
        self.rows.clear();
        let mut offset = 0;
        for (lo, hi) in layout.intervals {
            let row = if hi < lo {
                Row::EMPTY
            } else {
                let len = ((hi - lo) / self.stride + 1) as usize;
                Row { lo, hi, offset, len }
            };
            offset += row.len();
            self.rows.push(row);
        }
        self.values.clear();
        self.values.resize(offset, fill);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    fn row_index(&self, prefix: &[i64]) -> Option<usize> {
        let mut idx = 0usize;
        for i in 0..self.dim - 1 {
            let c = prefix[i] - self.pre_lo[i];
            if c < 0 || c >= self.pre_shape[i] as i64 {
                return None;
            }
            idx = idx * self.pre_shape[i] + c as usize;
        }
        Some(idx)
    }

    fn source_row(&self, target_prefix: &[i64], shift: &[i64], buf: &mut [i64]) -> Option<Row> {
        for i in 0..buf.len() {
            buf[i] = target_prefix[i] - shift[i];
        }
        let r = self.rows[self.row_index(buf)?];
        (r.len() > 0).then_some(r)
    }

    pub fn get(&self, site: &[i64]) -> f64 {
        let Some(idx) = self.row_index(&site[..self.dim - 1]) else {
            return 0.0;
        };
        let r = self.rows[idx];
        let x = site[self.dim - 1];
        if x < r.lo || x > r.hi || (x - r.lo) % self.stride != 0 {
            0.0
        } else {
            self.values[r.offset + ((x - r.lo) / self.stride) as usize]
        }
    }

    /// Visits every stored site in canonical (lexicographic) order.
    pub fn for_each<F: FnMut(&[i64], f64)>(&self, mut f: F) {
        self.for_each_row(|site, row| {
            for (k, &v) in self.values[row.offset..row.offset + row.len()].iter().enumerate() {
                site[self.dim - 1] = row.lo + k as i64 * self.stride;
                f(site, v);
            }
        });
    }

    /// Visits every nonempty row mutably, in canonical order. The callback
    /// gets the row's site buffer (prefix filled in), its first last-coordinate
    /// and stride, and its values.
    pub fn for_each_row_mut<F>(&mut self, mut f: F) -> crate::Result<()>
    where
        F: FnMut(&mut [i64], i64, i64, &mut [f64]) -> crate::Result<()>,
    {
        let dim = self.dim;
        let mut site = vec![0i64; dim];
        site[..dim - 1].copy_from_slice(&self.pre_lo);
        for ri in 0..self.rows.len() {
            let row = self.rows[ri];
            if row.len() > 0 {
                f(
                    &mut site,
                    row.lo,
                    self.stride,
                    &mut self.values[row.offset..row.offset + row.len()],
                )?;
            }
            odometer(&mut site[..dim - 1], &self.pre_lo, &self.pre_shape);
        }
        Ok(())
    }

    fn for_each_row<F: FnMut(&mut [i64], Row)>(&self, mut f: F) {
        let dim = self.dim;
        let mut site = vec![0i64; dim];
        site[..dim - 1].copy_from_slice(&self.pre_lo);
        for &row in &self.rows {
            if row.len() > 0 {
                f(&mut site, row);
            }
            odometer(&mut site[..dim - 1], &self.pre_lo, &self.pre_shape);
        }
    }

    /// All stored sites in canonical order.
    pub fn sites(&self) -> Vec<Vec<i64>> {
        let mut out = Vec::with_capacity(self.len());
        self.for_each(|s, _| out.push(s.to_vec()));
        out
    }

    /// Sum of all values, accumulated row by row in canonical order.
    pub fn sum(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| self.values[r.offset..r.offset + r.len()].iter().sum::<f64>())
            .sum()
    }

    /// `{x + s : x in region, s in shifts}`, with each row replaced by its hull.
    pub fn dilate(&self, shifts: &[Shift]) -> Layout {
        let dm = self.dim - 1;
        let mut pre_lo = self.pre_lo.clone();
        let mut pre_shape = self.pre_shape.clone();
        for i in 0..dm {
            let min = shifts.iter().map(|s| s.pre[i]).min().unwrap_or(0);
            let max = shifts.iter().map(|s| s.pre[i]).max().unwrap_or(0);
            pre_lo[i] += min;
            pre_shape[i] += (max - min) as usize;
        }
        let nrows: usize = pre_shape.iter().product();
        let mut intervals = Vec::with_capacity(nrows);
        let mut q = pre_lo.clone();
        let mut buf = vec![0i64; dm];
        for _ in 0..nrows {
            let mut lo = i64::MAX;
            let mut hi = i64::MIN;
            for s in shifts {
                if let Some(r) = self.source_row(&q, &s.pre, &mut buf) {
                    lo = lo.min(r.lo + s.last);
                    hi = hi.max(r.hi + s.last);
                }
            }
            intervals.push(if lo <= hi { (lo, hi) } else { (1, 0) });
            odometer(&mut q, &pre_lo, &pre_shape);
        }
        Layout {
            pre_lo,
            pre_shape,
            intervals,
        }
    }

    /// `{x : x - s in region for every s in shifts}`.
    pub fn erode(&self, shifts: &[Shift]) -> Layout {
        let dm = self.dim - 1;
        let nrows = self.rows.len();
        let mut intervals = Vec::with_capacity(nrows);
        let mut q = self.pre_lo.clone();
        let mut buf = vec![0i64; dm];
        for _ in 0..nrows {
            let mut lo = i64::MIN;
            let mut hi = i64::MAX;
            for s in shifts {
                match self.source_row(&q, &s.pre, &mut buf) {
                    Some(r) => {
                        lo = lo.max(r.lo + s.last);
                        hi = hi.min(r.hi + s.last);
                    }
                    None => {
                        lo = 1;
                        hi = 0;
                        break;
                    }
                }
            }
            intervals.push(if lo <= hi { (lo, hi) } else { (1, 0) });
            odometer(&mut q, &self.pre_lo, &self.pre_shape);
        }
        Layout {
            pre_lo: self.pre_lo.clone(),
            pre_shape: self.pre_shape.clone(),
            intervals,
        }
    }

    #[cfg(test)]
    pub fn stride(&self) -> i64 {
        self.stride
    }

    /// Overwrites `target` (whose layout is already set) with
    /// `target(x) = sum_s s.mass * self(x - s)`. Each site accumulates the
    /// shifts in the order given, starting from zero.
    pub fn convolve_into(&self, target: &mut Grid, shifts: &[Shift]) {
        let dm = self.dim - 1;
        target.values.iter_mut().for_each(|v| *v = 0.0);
        let mut q = target.pre_lo.clone();
        let mut buf = vec![0i64; dm];
        for ri in 0..target.rows.len() {
            let t = target.rows[ri];
            if t.len() > 0 {
                for s in shifts {
                    let Some(r) = self.source_row(&q, &s.pre, &mut buf) else {
                        continue;
                    };
                    let st = self.stride;
                    debug_assert_eq!((r.lo + s.last - t.lo).rem_euclid(st), 0);
                    let lo = t.lo.max(r.lo + s.last);
                    let hi = t.hi.min(r.hi + s.last);
                    if lo > hi {
                        continue;
                    }
                    let n = ((hi - lo) / st + 1) as usize;
                    let dst = t.offset + ((lo - t.lo) / st) as usize;
                    let src = r.offset + ((lo - s.last - r.lo) / st) as usize;
                    let m = s.mass;
                    let out = &mut target.values[dst..dst + n];
                    let inp = &self.values[src..src + n];
                    for (o, &i) in out.iter_mut().zip(inp) {
                        *o += m * i;
                    }
                }
            }
            odometer(&mut q, &target.pre_lo, &target.pre_shape);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn to_map(g: &Grid) -> BTreeMap<Vec<i64>, f64> {
        let mut m = BTreeMap::new();
        g.for_each(|s, v| {
            if v != 0.0 {
                m.insert(s.to_vec(), v);
            }
        });
        m
    }

    #[test]
    fn convolution_matches_apply_d() {
        for d in 1..=3 {
            let k = WalkKernel::srw(d).unwrap();
            let shifts = Shift::forward(&k);
            let mut g = Grid::single(&vec![0; d], 1.0, 2);
            let mut reference: BTreeMap<Vec<i64>, f64> = [(vec![0; d], 1.0)].into();
            for _ in 0..4 {
                let mut next = Grid::empty(d, 2);
                next.reset(g.dilate(&shifts), 0.0);
                g.convolve_into(&mut next, &shifts);
                g = next;
                reference = k.reversed().apply_d(&reference);
            }
            let got = to_map(&g);
            assert_eq!(got.len(), reference.len());
            for (s, v) in &reference {
                assert!((got[s] - v).abs() < 1e-15, "{s:?}");
            }
        }
    }

    #[test]
    fn erosion_undoes_dilation_of_a_cube() {
        let k = WalkKernel::srw(2).unwrap();
        let back = Shift::backward(&k);
        let cube = Grid::cube(2, 2, 1.0);
        let mut g = cube.clone();
        for _ in 0..3 {
            let mut next = Grid::empty(2, 1);
            next.reset(g.dilate(&Shift::forward(&k)), 1.0);
            g = next;
        }
        for _ in 0..3 {
            let mut next = Grid::empty(2, 1);
            next.reset(g.erode(&back), 1.0);
            g = next;
        }
        assert_eq!(to_map(&g), to_map(&cube));
    }

    #[test]
    fn asymmetric_kernel_dilation() {
        let k = WalkKernel::finite_support(2, [(vec![1, 0], 0.5), (vec![0, 2], 0.5)]).unwrap();
        let shifts = Shift::forward(&k);
        let g = Grid::single(&[0, 0], 1.0, 1);
        let mut next = Grid::empty(2, 1);
        next.reset(g.dilate(&shifts), 0.0);
        g.convolve_into(&mut next, &shifts);
        assert_eq!(next.get(&[1, 0]), 0.5);
        assert_eq!(next.get(&[0, 2]), 0.5);
        assert_eq!(next.get(&[0, 0]), 0.0);
        assert_eq!(next.sum(), 1.0);
    }
}
