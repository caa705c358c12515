use nalgebra::{DMatrix, SymmetricEigen};

use crate::geom::Point3;

/// Splits frontier positions into one or two spatial clusters.
///
/// The affinity is Gaussian with width `sigma` (self-affinity 1) and the
/// symmetric normalized Laplacian is decomposed. Two clusters are declared
/// when the gap above the second eigenvalue exceeds the gap below it (the
/// third eigenvalue is taken as 1 for two points) and the clusters, labelled
/// by the sign of the Fiedler vector, have centroids strictly more than
/// `min_distance` apart. Point 0 always gets label 0.
pub fn detect_bifurcation(positions: &[Point3], sigma: f64, min_distance: f64) -> Vec<usize> {
    let n = positions.len();
    let single = vec![0; n];
    if n < 2 || !(sigma > 0.0) {
        return single;
    }
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let d2 = (positions[i] - positions[j]).norm_squared();
            a[(i, j)] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let inv_sqrt_deg: Vec<f64> = (0..n).map(|i| 1.0 / a.row(i).sum().sqrt()).collect();
    let mut lap = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            lap[(i, j)] -= a[(i, j)] * inv_sqrt_deg[i] * inv_sqrt_deg[j];
        }
    }
    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]).then(x.cmp(&y)));
    let l1 = eig.eigenvalues[order[0]];
    let l2 = eig.eigenvalues[order[1]];
    let l3 = if n > 2 { eig.eigenvalues[order[2]] } else { 1.0 };
    if !(l3 - l2 > l2 - l1) {
        return single;
    }

    let fiedler: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, order[1])] * inv_sqrt_deg[i]).collect();
    let flip = fiedler.iter().find(|x| **x != 0.0).is_some_and(|x| *x > 0.0);
    let labels: Vec<usize> = fiedler
        .iter()
        .map(|&x| {
            let x = if flip { -x } else { x };
            usize::from(x > 0.0)
        })
        .collect();
    let mut sums = [Point3::zeros(); 2];
    let mut counts = [0usize; 2];
    for (p, &l) in positions.iter().zip(&labels) {
        sums[l] += p;
        counts[l] += 1;
    }
    if counts.contains(&0) {
        return single;
    }
    let separation = (sums[0] / counts[0] as f64 - sums[1] / counts[1] as f64).norm();
    if separation > min_distance {
        labels
    } else {
        single
    }
}
