//! Bucketed gradient synchronization over virtual ranks.
//!
//! Collective communication is modelled functionally: what matters for bit
//! reproducibility is the order in which contributions are combined, and
//! that order is a function of the participant ranks and of the bucket each
//! parameter lands in. Pinning both (fixed virtual ranks plus a checkpointed
//! [`BucketMap`]) pins the result.

use crate::detcore::reduce::{reduce_sum, ReduceVariant};
use crate::detcore::rng::Rng64;
use crate::error::{Error, Result};
use crate::wire::{Reader, Writer};

/// Ordered partition of parameter indices into communication buckets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketMap {
    pub cap: usize,
    pub buckets: Vec<Vec<u32>>,
}

impl BucketMap {
    /// Static reverse-topological packing: highest parameter index first.
    pub fn initial(param_count: usize, cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::Config("bucket capacity must be >= 1".into()));
        }
        let order: Vec<u32> = (0..param_count as u32).rev().collect();
        Ok(Self::pack(&order, cap))
    }

    /// Repack buckets in gradient arrival order.
    pub fn rebuild_from_arrival(arrival: &[u32], cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::Config("bucket capacity must be >= 1".into()));
        }
        check_permutation(arrival)?;
        Ok(Self::pack(arrival, cap))
    }

    fn pack(order: &[u32], cap: usize) -> Self {
        Self {
            cap,
            buckets: order.chunks(cap).map(<[u32]>::to_vec).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.buckets.iter().map(Vec::len).collect()
    }

    /// Every index in `[0, param_count)` exactly once.
    pub fn validate(&self, param_count: usize) -> Result<()> {
        let flat: Vec<u32> = self.buckets.iter().flatten().copied().collect();
        if flat.len() != param_count {
            return Err(Error::Input(format!(
                "bucket map covers {} indices, expected {param_count}",
                flat.len()
            )));
        }
        check_permutation(&flat)
    }

    pub fn encode(&self, w: &mut Writer) {
        w.len_u32(self.cap);
        w.len_u32(self.buckets.len());
        for b in &self.buckets {
            w.len_u32(b.len());
            for &i in b {
                w.u32(i);
            }
        }
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let cap = r.u32()? as usize;
        let n = r.len(4)?;
        let mut buckets = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.len(4)?;
            buckets.push((0..len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?);
        }
        Ok(Self { cap, buckets })
    }
}

fn check_permutation(perm: &[u32]) -> Result<()> {
    let mut seen = vec![false; perm.len()];
    for &i in perm {
        match seen.get_mut(i as usize) {
            Some(s) if !*s => *s = true,
            Some(_) => return Err(Error::Input(format!("index {i} appears twice"))),
            None => {
                return Err(Error::Input(format!(
                    "index {i} out of range for {} parameters",
                    perm.len()
                )))
            }
        }
    }
    Ok(())
}

/// The order in which gradients reach the communication layer for a given
/// participant layout. Real arrival order depends on channel setup timing;
/// here it is a seeded shuffle keyed on the layout so that a different
/// layout after a restart produces a different order.
pub fn simulated_arrival_order(param_count: usize, layout: &[usize]) -> Vec<u32> {
    let mut key = vec![0x4255_434B_4554u64, layout.len() as u64];
    key.extend(layout.iter().map(|&t| t as u64));
    let mut rng = Rng64::keyed(&key);
    let mut order: Vec<u32> = (0..param_count as u32).collect();
    rng.shuffle(&mut order);
    order
}

/// Sum of per-participant gradient vectors, `replicas[k]` belonging to rank
/// `k`.
///
/// `Sequential` combines ranks in ascending order for every parameter.
/// `Tree(f)` models a segmented ring collective: a parameter at position `q`
/// of a bucket of length `L` falls into segment `s = q·P / L`, whose
/// reduction starts at rank `(s + 1) mod P` and walks the ring; the rotated
/// contributions are combined with an `f`-ary tree. Under `Tree` the result
/// therefore depends on the bucket map as well as on the ranks.
pub fn allreduce_sum(replicas: &[Vec<f64>], bm: &BucketMap, variant: ReduceVariant) -> Result<Vec<f64>> {
    let first = replicas
        .first()
        .ok_or_else(|| Error::Input("allreduce needs at least one replica".into()))?;
    let len = first.len();
    if let Some((k, r)) = replicas.iter().enumerate().find(|(_, r)| r.len() != len) {
        return Err(Error::Input(format!(
            "replica {k} has length {}, expected {len}",
            r.len()
        )));
    }
    if bm.param_count() != len {
        return Err(Error::Input(format!(
            "bucket map covers {} parameters, replicas have {len}",
            bm.param_count()
        )));
    }
    let p = replicas.len();
    let mut out = vec![0.0; len];
    let mut contrib = vec![0.0; p];
    for bucket in &bm.buckets {
        let blen = bucket.len();
        for (q, &idx) in bucket.iter().enumerate() {
            let idx = idx as usize;
            let start = match variant {
                ReduceVariant::Sequential => 0,
                ReduceVariant::Tree(_) => (q * p / blen + 1) % p,
            };
            for (slot, c) in contrib.iter_mut().enumerate() {
                *c = replicas[(start + slot) % p][idx];
            }
            out[idx] = reduce_sum(&contrib, variant);
        }
    }
    Ok(out)
}

/// Mean of the replicas: [`allreduce_sum`] divided by the replica count.
pub fn allreduce(replicas: &[Vec<f64>], bm: &BucketMap, variant: ReduceVariant) -> Result<Vec<f64>> {
    let mut out = allreduce_sum(replicas, bm, variant)?;
    let n = replicas.len() as f64;
    for v in &mut out {
        *v /= n;
    }
    Ok(out)
}
