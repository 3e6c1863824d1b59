//! Where the environment values `omega(n, x)` come from.

use std::collections::HashMap;

use crate::env::EnvModel;
use crate::error::{Error, Result};
use crate::rng::{point_extend, tag, SplitMix64, StreamKey};

/// A read-only environment indexed by time `n >= 1` and site `x`.
pub trait EnvSource: Sync {
    fn omega(&self, time: u32, site: &[i64]) -> Result<f64>;

    /// Fills `out[k]` with `omega(time, x_k)`, where `x_k` is `site` with its
    /// last coordinate replaced by `lo + k * stride`. Entries whose `mass[k]`
    /// is zero may be left unset.
    fn omega_row(
        &self,
        time: u32,
        site: &mut [i64],
        lo: i64,
        stride: i64,
        mass: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let last = site.len() - 1;
        for (k, (o, &m)) in out.iter_mut().zip(mass).enumerate() {
            if m != 0.0 {
                site[last] = lo + k as i64 * stride;
                *o = self.omega(time, site)?;
            }
        }
        Ok(())
    }
}

impl<E: EnvSource + ?Sized> EnvSource for &E {
    fn omega(&self, time: u32, site: &[i64]) -> Result<f64> {
        (**self).omega(time, site)
    }

    fn omega_row(
        &self,
        time: u32,
        site: &mut [i64],
        lo: i64,
        stride: i64,
        mass: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        (**self).omega_row(time, site, lo, stride, mass, out)
    }
}

/// Environment generated lazily from a hash of `(key, time, site)`.
#[derive(Debug, Clone, Copy)]
pub struct HashedEnv {
    model: EnvModel,
    key: StreamKey,
}

impl HashedEnv {
    pub fn new(model: EnvModel, key: StreamKey) -> Self {
        HashedEnv { model, key }
    }

    /// The environment of replica `replica` under `master_seed`.
    pub fn for_replica(model: EnvModel, master_seed: u64, replica: u64) -> Self {
        Self::new(
            model,
            StreamKey::new(master_seed).replica(replica).child(tag::ENVIRONMENT),
        )
    }

    pub fn model(&self) -> EnvModel {
        self.model
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    #[inline]
    pub fn value(&self, time: u32, site: &[i64]) -> f64 {
        let mut rng = SplitMix64::new(self.key.point(time, site));
        self.model.sample(&mut rng)
    }
}

impl EnvSource for HashedEnv {
    #[inline]
    fn omega(&self, time: u32, site: &[i64]) -> Result<f64> {
        Ok(self.value(time, site))
    }

    fn omega_row(&self, time: u32, site: &mut [i64], lo: i64, stride: i64, _: &[f64], out: &mut [f64]) -> Result<()> {
        let prefix = self.key.point_prefix(time, &site[..site.len() - 1]);
        for (k, o) in out.iter_mut().enumerate() {
            let mut rng = SplitMix64::new(point_extend(prefix, lo + k as i64 * stride));
            *o = self.model.sample(&mut rng);
        }
        Ok(())
    }
}

/// An explicitly tabulated environment; lookups outside the table fail.
#[derive(Debug, Clone, Default)]
pub struct TableEnv {
    values: HashMap<(u32, Vec<i64>), f64>,
}

impl TableEnv {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, time: u32, site: Vec<i64>, omega: f64) {
        self.values.insert((time, site), omega);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Copies `source` on the given space-time points.
    pub fn capture<E: EnvSource>(source: &E, points: impl IntoIterator<Item = (u32, Vec<i64>)>) -> Result<Self> {
        let mut t = TableEnv::new();
        for (time, site) in points {
            let w = source.omega(time, &site)?;
            t.insert(time, site, w);
        }
        Ok(t)
    }
}

impl EnvSource for TableEnv {
    fn omega(&self, time: u32, site: &[i64]) -> Result<f64> {
        self.values
            .get(&(time, site.to_vec()))
            .copied()
            .ok_or_else(|| Error::MissingEnvironment {
                time,
                site: site.to_vec(),
            })
    }
}

/// `base` with a few space-time points replaced.
#[derive(Debug, Clone)]
pub struct Overridden<E> {
    base: E,
    by_time: Vec<Vec<(Vec<i64>, f64)>>,
}

impl<E: EnvSource> Overridden<E> {
    pub fn new(base: E) -> Self {
        Overridden {
            base,
            by_time: Vec::new(),
        }
    }

    /// Sets `omega(time, site) = value`, replacing any earlier override there.
    pub fn set(&mut self, time: u32, site: Vec<i64>, value: f64) {
        let t = time as usize;
        if self.by_time.len() <= t {
            self.by_time.resize(t + 1, Vec::new());
        }
        let slot = &mut self.by_time[t];
        match slot.iter_mut().find(|(s, _)| *s == site) {
            Some(entry) => entry.1 = value,
            None => slot.push((site, value)),
        }
    }

    pub fn base(&self) -> &E {
        &self.base
    }
}

impl<E: EnvSource> EnvSource for Overridden<E> {
    #[inline]
    fn omega(&self, time: u32, site: &[i64]) -> Result<f64> {
        if let Some(slot) = self.by_time.get(time as usize) {
            if let Some((_, v)) = slot.iter().find(|(s, _)| s == site) {
                return Ok(*v);
            }
        }
        self.base.omega(time, site)
    }

    fn omega_row(
        &self,
        time: u32,
        site: &mut [i64],
        lo: i64,
        stride: i64,
        mass: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        self.base.omega_row(time, site, lo, stride, mass, out)?;
        let Some(slot) = self.by_time.get(time as usize) else {
            return Ok(());
        };
        let last = site.len() - 1;
        for (s, v) in slot {
            let off = s[last] - lo;
            if s[..last] == site[..last] && off >= 0 && off % stride == 0 {
                if let Some(o) = out.get_mut((off / stride) as usize) {
                    *o = *v;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashed_env_is_a_pure_function_of_the_point() {
        let e = HashedEnv::for_replica(EnvModel::gaussian(), 9, 4);
        let a = e.value(3, &[1, -2]);
        let _ = e.value(5, &[0, 0]);
        assert_eq!(a, e.value(3, &[1, -2]));
        assert_ne!(a, e.value(3, &[-2, 1]));
        assert_ne!(a, HashedEnv::for_replica(EnvModel::gaussian(), 9, 5).value(3, &[1, -2]));
    }

    #[test]
    fn row_lookup_agrees_with_pointwise_lookup() {
        let base = HashedEnv::for_replica(EnvModel::gaussian(), 2, 3);
        let mut o = Overridden::new(base);
        o.set(4, vec![1, 5], -3.0);
        let mass = [1.0; 4];
        for stride in [1, 2] {
            let mut out = [0.0; 4];
            let mut site = vec![1, 0];
            o.omega_row(4, &mut site, -1, stride, &mass, &mut out).unwrap();
            for (k, w) in out.iter().enumerate() {
                let x = -1 + k as i64 * stride;
                assert_eq!(*w, o.omega(4, &[1, x]).unwrap());
            }
        }
        let mut out = [0.0; 4];
        o.omega_row(4, &mut [1, 0], -1, 2, &mass, &mut out).unwrap();
        assert_eq!(out[3], -3.0);
    }

    #[test]
    fn table_reports_missing_points() {
        let mut t = TableEnv::new();
        t.insert(1, vec![1], 0.5);
        assert_eq!(t.omega(1, &[1]).unwrap(), 0.5);
        assert!(matches!(
            t.omega(1, &[-1]),
            Err(Error::MissingEnvironment { time: 1, .. })
        ));
    }

    #[test]
    fn overrides_take_precedence() {
        let base = HashedEnv::for_replica(EnvModel::gaussian(), 1, 0);
        let mut o = Overridden::new(base);
        o.set(2, vec![0, 1], 7.0);
        assert_eq!(o.omega(2, &[0, 1]).unwrap(), 7.0);
        assert_eq!(o.omega(2, &[0, 0]).unwrap(), base.value(2, &[0, 0]));
        assert_eq!(o.omega(1, &[0, 1]).unwrap(), base.value(1, &[0, 1]));
    }
}
