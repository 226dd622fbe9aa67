use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};

/// Coordinates of each row on the top two principal components. Columns are
/// centered, so each output column has zero mean. Component signs are fixed
/// so the largest-magnitude loading is positive.
pub fn project_2d(features: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n, k) = features.dim();
    let mut out = Array2::zeros((n, 2));
    if n == 0 || k == 0 {
        return out;
    }
    let mean = features.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centered = DMatrix::from_fn(n, k, |i, j| features[[i, j]] - mean[j]);
    let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    for (slot, &c) in order.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(c).into_owned();
        let pivot = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
        if pivot < 0.0 {
            v = -v;
        }
        let coords = &centered * v;
        for i in 0..n {
            out[[i, slot]] = coords[i];
        }
    }
    // remove rounding drift so the mean is zero to machine precision
    for mut col in out.columns_mut() {
        let m = col.mean().unwrap_or(0.0);
        col.mapv_inplace(|v| v - m);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn recovers_the_dominant_direction() {
        let x = array![[-2.0, -2.0, 0.1], [-1.0, -1.0, -0.1], [1.0, 1.0, -0.1], [2.0, 2.0, 0.1]];
        let p = project_2d(x.view());
        let expected = [-2.0, -1.0, 1.0, 2.0].map(|v: f64| v * 2f64.sqrt());
        for i in 0..4 {
            assert!((p[[i, 0]] - expected[i]).abs() < 1e-9);
        }
        assert!(p.column(0).sum().abs() < 1e-12);
        assert!(p.column(1).sum().abs() < 1e-12);
    }

    #[test]
    fn single_feature_leaves_second_axis_flat() {
        let x = array![[1.0], [2.0], [6.0]];
        let p = project_2d(x.view());
        assert!(p.column(1).iter().all(|&v| v == 0.0));
        assert!((p[[2, 0]] - 3.0).abs() < 1e-12);
    }
}
