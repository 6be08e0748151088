use crate::raster::{Pixel, Raster};

/// `true` where a pixel has at least one in-raster 4-neighbour with a different label.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMap {
    mask: Raster<bool>,
}

impl BoundaryMap {
    pub fn mask(&self) -> &Raster<bool> {
        &self.mask
    }

    #[inline]
    pub fn is_boundary(&self, p: Pixel) -> bool {
        self.mask.get(p).copied().unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.mask.data().iter().filter(|&&b| b).count()
    }

    pub fn from_mask(mask: Raster<bool>) -> Self {
        Self { mask }
    }
}

pub fn extract_boundary(labels: &Raster<u16>) -> BoundaryMap {
    let (w, h) = labels.dims();
    let mask = Raster::from_fn(w, h, |x, y| {
        let l = *labels.at(x, y);
        (x > 0 && *labels.at(x - 1, y) != l)
            || (x + 1 < w && *labels.at(x + 1, y) != l)
            || (y > 0 && *labels.at(x, y - 1) != l)
            || (y + 1 < h && *labels.at(x, y + 1) != l)
    });
    BoundaryMap { mask }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(labels: &Raster<u16>) -> Raster<bool> {
        let (w, h) = labels.dims();
        Raster::from_fn(w, h, |x, y| {
            let p = Pixel::new(x as i32, y as i32);
            [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dx, dy)| {
                labels
                    .get(Pixel::new(p.x + dx, p.y + dy))
                    .is_some_and(|&q| q != labels[p])
            })
        })
    }

    #[test]
    fn uniform_raster_has_no_boundary() {
        let labels = Raster::filled(9, 7, 3u16);
        assert_eq!(extract_boundary(&labels).count(), 0);
    }

    #[test]
    fn halves_produce_two_columns() {
        let labels = Raster::from_fn(10, 6, |x, _| if x < 4 { 1u16 } else { 2 });
        let b = extract_boundary(&labels);
        for y in 0..6 {
            for x in 0..10 {
                assert_eq!(*b.mask().at(x, y), x == 3 || x == 4, "({x}, {y})");
            }
        }
    }

    fn voronoi(w: usize, h: usize, seeds: &[(usize, usize)]) -> Raster<u16> {
        Raster::from_fn(w, h, |x, y| {
            let (i, _) = seeds
                .iter()
                .enumerate()
                .map(|(i, &(sx, sy))| {
                    let d = (x as i64 - sx as i64).pow(2) + (y as i64 - sy as i64).pow(2);
                    (i, d)
                })
                .min_by_key(|&(i, d)| (d, i))
                .unwrap();
            (i % 3) as u16 + 1
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force_on_voronoi(
            w in 2usize..64, h in 2usize..64,
            seeds in proptest::collection::vec((0usize..64, 0usize..64), 1..12),
        ) {
            let labels = voronoi(w, h, &seeds);
            let b = extract_boundary(&labels);
            prop_assert_eq!(b.mask(), &brute_force(&labels));
            // symmetry: a boundary pixel's differing 4-neighbour is itself boundary
            for y in 0..h {
                for x in 0..w {
                    let p = Pixel::new(x as i32, y as i32);
                    for (dx, dy) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                        let q = Pixel::new(p.x + dx, p.y + dy);
                        if let Some(&lq) = labels.get(q) {
                            if lq != labels[p] {
                                prop_assert!(b.is_boundary(p) && b.is_boundary(q));
                            }
                        }
                    }
                }
            }
        }

        #[test]
        fn matches_brute_force_on_noise(
            w in 2usize..40, h in 2usize..40, seed in any::<u64>(),
        ) {
            let mut s = seed | 1;
            let labels = Raster::from_fn(w, h, |_, _| {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                (s % 3) as u16
            });
            let b = extract_boundary(&labels);
            prop_assert_eq!(b.mask(), &brute_force(&labels));
        }
    }
}
