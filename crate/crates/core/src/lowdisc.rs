//! Owen-scrambled Sobol points on the unit box.

/// Largest dimension supported by the underlying Sobol tables.
pub const MAX_DIM: usize = sobol_burley::NUM_DIMENSIONS as usize;

/// `count` scrambled Sobol points in `[0,1)^dim`, stored row-major.
pub fn sobol_points(count: usize, dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim <= MAX_DIM, "dimension {dim} exceeds Sobol tables");
    let scramble = (seed ^ (seed >> 32)) as u32;
    let mut out = Vec::with_capacity(count * dim);
    for i in 0..count {
        for d in 0..dim {
            out.push(sobol_burley::sample(i as u32, d as u32, scramble) as f64);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_in_unit_box_and_distinct() {
        let pts = sobol_points(64, 3, 11);
        assert_eq!(pts.len(), 64 * 3);
        assert!(pts.iter().all(|v| (0.0..1.0).contains(v)));
        let rows: Vec<&[f64]> = pts.chunks(3).collect();
        for i in 0..rows.len() {
            for j in 0..i {
                assert_ne!(rows[i], rows[j]);
            }
        }
        assert_eq!(pts, sobol_points(64, 3, 11));
    }

    #[test]
    fn one_dimensional_points_stratify() {
        let mut pts = sobol_points(16, 1, 5);
        pts.sort_by(f64::total_cmp);
        for (i, v) in pts.iter().enumerate() {
            assert!(*v >= i as f64 / 16.0 && *v < (i + 1) as f64 / 16.0);
        }
    }
}
