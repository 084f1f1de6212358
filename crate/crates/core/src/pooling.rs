//! Max pooling of part features over region bands.
//!
//! Invisible bands are not pooled; their part is the C-dimensional zero vector.

use rayon::prelude::*;

use crate::data::{read_matrix, write_matrix, Tensor3};
use crate::error::{Error, Result};
use crate::regions::{pcb_stripes, RegionBand};

/// P pooled part vectors of length C with per-part visibility.
#[derive(Debug, Clone, PartialEq)]
pub struct PartFeatureSet {
    dim: usize,
    values: Vec<f32>,
    visible: Vec<bool>,
}

impl PartFeatureSet {
    /// Builds a set from row-major `P × dim` values. Invisible parts must be zero.
    pub fn new(dim: usize, values: Vec<f32>, visible: Vec<bool>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidShape("part dimension is zero".into()));
        }
        if values.len() != dim * visible.len() {
            return Err(Error::LengthMismatch {
                expected: dim * visible.len(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        for (p, &vis) in visible.iter().enumerate() {
            if !vis && values[p * dim..(p + 1) * dim].iter().any(|&v| v != 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "invisible part {p} is not the zero vector"
                )));
            }
        }
        Ok(Self {
            dim,
            values,
            visible,
        })
    }

    pub fn num_parts(&self) -> usize {
        self.visible.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn part(&self, p: usize) -> &[f32] {
        &self.values[p * self.dim..(p + 1) * self.dim]
    }

    pub fn parts(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn visible(&self) -> &[bool] {
        &self.visible
    }

    pub fn num_visible(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    /// Part-feature file: 2-D f32 ETNS of shape `P × (C + 1)`, last column is
    /// the visibility flag (0 or 1).
    pub fn to_bytes(&self) -> Vec<u8> {
        let cols = self.dim + 1;
        let mut out = Vec::with_capacity(self.num_parts() * cols);
        for (part, &vis) in self.parts().zip(&self.visible) {
            out.extend_from_slice(part);
            out.push(if vis { 1.0 } else { 0.0 });
        }
        write_matrix(self.num_parts(), cols, &out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (rows, cols, data) = read_matrix(bytes)?;
        if cols < 2 {
            return Err(Error::InvalidShape(format!(
                "part-feature file needs at least 2 columns, has {cols}"
            )));
        }
        let dim = cols - 1;
        let mut values = Vec::with_capacity(rows * dim);
        let mut visible = Vec::with_capacity(rows);
        for row in data.chunks_exact(cols) {
            values.extend_from_slice(&row[..dim]);
            visible.push(match row[dim] {
                0.0 => false,
                1.0 => true,
                other => {
                    return Err(Error::Parse(format!("visibility flag {other} is not 0 or 1")))
                }
            });
        }
        Self::new(dim, values, visible)
    }
}

fn pool_band(fmap: &Tensor3, band: &RegionBand, out: &mut [f32]) {
    for (c, slot) in out.iter_mut().enumerate() {
        *slot = fmap
            .rows(c, band.row_start, band.row_end)
            .iter()
            .copied()
            .fold(f32::NEG_INFINITY, f32::max);
    }
}

/// Max-pools each visible band over its rows and all columns. Works for any
/// band list, not only the nine PAP regions.
pub fn pap_pool(fmap: &Tensor3, bands: &[RegionBand]) -> Result<PartFeatureSet> {
    let dim = fmap.channels();
    let mut values = vec![0.0f32; bands.len() * dim];
    let mut visible = vec![false; bands.len()];
    for (p, band) in bands.iter().enumerate() {
        if !band.visible {
            continue;
        }
        if band.row_start >= band.row_end || band.row_end > fmap.height() {
            return Err(Error::BandOutOfRange {
                part: p,
                start: band.row_start,
                end: band.row_end,
                height: fmap.height(),
            });
        }
        pool_band(fmap, band, &mut values[p * dim..(p + 1) * dim]);
        visible[p] = true;
    }
    Ok(PartFeatureSet {
        dim,
        values,
        visible,
    })
}

pub fn pcb_pool(fmap: &Tensor3, parts: usize) -> Result<PartFeatureSet> {
    pap_pool(fmap, &pcb_stripes(parts, fmap.height())?)
}

pub fn global_pool(fmap: &Tensor3) -> PartFeatureSet {
    let dim = fmap.channels();
    let n = fmap.height() * fmap.width();
    let values = fmap
        .values()
        .chunks_exact(n)
        .map(|ch| ch.iter().copied().fold(f32::NEG_INFINITY, f32::max))
        .collect();
    PartFeatureSet {
        dim,
        values,
        visible: vec![true],
    }
}

/// Pools many images; `pool` is applied independently per item so the output
/// order and values do not depend on the thread schedule.
pub fn pool_batch<T, F>(items: &[T], pool: F) -> Result<Vec<PartFeatureSet>>
where
    T: Sync,
    F: Fn(&T) -> Result<PartFeatureSet> + Sync + Send,
{
    items.par_iter().map(pool).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn band(start: usize, end: usize) -> RegionBand {
        RegionBand {
            part_id: 0,
            row_start: start,
            row_end: end,
            visible: true,
        }
    }

    #[test]
    fn max_of_four() {
        let f = Tensor3::new(1, 2, 2, vec![1.0, 3.0, 2.0, 0.0]).unwrap();
        let s = pap_pool(&f, &[band(0, 2)]).unwrap();
        assert_eq!(s.part(0), &[3.0]);
    }

    #[test]
    fn invisible_band_is_zero() {
        let f = Tensor3::filled(3, 4, 2, 5.0).unwrap();
        let s = pap_pool(&f, &[band(0, 2), RegionBand::invisible(1)]).unwrap();
        assert_eq!(s.part(1), &[0.0; 3]);
        assert_eq!(s.visible(), &[true, false]);
        assert_eq!(s.num_visible(), 1);
    }

    #[test]
    fn out_of_range_band() {
        let f = Tensor3::filled(1, 4, 1, 0.0).unwrap();
        assert!(matches!(
            pap_pool(&f, &[band(2, 5)]),
            Err(Error::BandOutOfRange { end: 5, .. })
        ));
    }

    #[test]
    fn pcb_small_cases() {
        let f = Tensor3::new(1, 4, 1, vec![1.0, 5.0, 2.0, 7.0]).unwrap();
        let s = pcb_pool(&f, 2).unwrap();
        assert_eq!(s.values(), &[5.0, 7.0]);
        let k = Tensor3::filled(2, 6, 3, -1.5).unwrap();
        let s = pcb_pool(&k, 3).unwrap();
        assert!(s.values().iter().all(|&v| v == -1.5));
        assert_eq!(global_pool(&k).values(), &[-1.5, -1.5]);
        let px = Tensor3::new(1, 1, 1, vec![4.25]).unwrap();
        assert_eq!(global_pool(&px).values(), &[4.25]);
        assert!(pcb_pool(&px, 2).is_err());
    }

    #[test]
    fn part_file_rejects_bad_flags() {
        let bytes = write_matrix(1, 2, &[1.0, 0.5]);
        assert!(PartFeatureSet::from_bytes(&bytes).is_err());
        let bytes = write_matrix(1, 2, &[1.0, 0.0]);
        assert!(PartFeatureSet::from_bytes(&bytes).is_err());
    }

    fn arb_map() -> impl Strategy<Value = Tensor3> {
        (1usize..4, 6usize..20, 1usize..5).prop_flat_map(|(c, h, w)| {
            proptest::collection::vec(-10f32..10.0, c * h * w)
                .prop_map(move |v| Tensor3::new(c, h, w, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn stripes_via_pap_equal_pcb(f in arb_map(), p in 1usize..7) {
            let bands = pcb_stripes(p, f.height()).unwrap();
            prop_assert_eq!(pap_pool(&f, &bands).unwrap(), pcb_pool(&f, p).unwrap());
        }

        #[test]
        fn pcb_one_is_global(f in arb_map()) {
            prop_assert_eq!(pcb_pool(&f, 1).unwrap(), global_pool(&f));
        }

        #[test]
        fn monotone_and_permutation_invariant(f in arb_map(), idx in any::<prop::sample::Index>(), bump in 0f32..5.0) {
            let bands = pcb_stripes(3, f.height()).unwrap();
            let before = pap_pool(&f, &bands).unwrap();
            let mut v = f.values().to_vec();
            let i = idx.index(v.len());
            v[i] += bump;
            let g = Tensor3::new(f.channels(), f.height(), f.width(), v).unwrap();
            let after = pap_pool(&g, &bands).unwrap();
            for (a, b) in before.values().iter().zip(after.values()) {
                prop_assert!(b >= a);
            }
            // reversing rows within each channel's band keeps the band maxima
            let (c, h, w) = (f.channels(), f.height(), f.width());
            let mut shuffled = f.values().to_vec();
            for ch in 0..c {
                for b in &bands {
                    let lo = (ch * h + b.row_start) * w;
                    let hi = (ch * h + b.row_end) * w;
                    shuffled[lo..hi].reverse();
                }
            }
            let s = Tensor3::new(c, h, w, shuffled).unwrap();
            prop_assert_eq!(pap_pool(&s, &bands).unwrap(), before);
        }

        #[test]
        fn part_file_round_trips(f in arb_map(), hide in proptest::collection::vec(any::<bool>(), 4)) {
            let mut bands = pcb_stripes(4, f.height()).unwrap();
            for (b, h) in bands.iter_mut().zip(hide) {
                if h { *b = RegionBand::invisible(b.part_id); }
            }
            let s = pap_pool(&f, &bands).unwrap();
            prop_assert_eq!(PartFeatureSet::from_bytes(&s.to_bytes()).unwrap(), s);
        }
    }
}
