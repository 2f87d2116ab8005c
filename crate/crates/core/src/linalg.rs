//! Determinant and adjugate of small dense matrices.

pub type Mat5 = [[f64; 5]; 5];

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det<const N: usize>(m: &[[f64; N]; N]) -> f64 {
    let mut a = *m;
    let mut det = 1.0;
    for col in 0..N {
        let pivot = (col..N)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        if a[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            a.swap(pivot, col);
            det = -det;
        }
        let p = a[col][col];
        det *= p;
        for row in col + 1..N {
            let f = a[row][col] / p;
            if f != 0.0 {
                let (top, rest) = a.split_at_mut(row);
                for (x, p) in rest[0][col..].iter_mut().zip(&top[col][col..]) {
                    *x -= f * p;
                }
            }
        }
    }
    det
}

fn minor(m: &Mat5, skip_row: usize, skip_col: usize) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for (r, row) in (0..5).filter(|&r| r != skip_row).enumerate() {
        for (c, col) in (0..5).filter(|&c| c != skip_col).enumerate() {
            out[r][c] = m[row][col];
        }
    }
    out
}

/// Classical adjoint, `adj(M)[i][j] = (-1)^(i+j) det(M without row j, column i)`.
/// Never divides by `det(M)`, so it is well defined for singular `M`.
pub fn adjugate(m: &Mat5) -> Mat5 {
    let mut adj = [[0.0; 5]; 5];
    for (i, row) in adj.iter_mut().enumerate() {
        for (j, entry) in row.iter_mut().enumerate() {
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            *entry = sign * det(&minor(m, j, i));
        }
    }
    adj
}

pub fn mat_vec(m: &Mat5, v: &[f64; 5]) -> [f64; 5] {
    let mut out = [0.0; 5];
    for (o, row) in out.iter_mut().zip(m) {
        *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
    out
}

pub fn mat_mul(a: &Mat5, b: &Mat5) -> Mat5 {
    let mut out = [[0.0; 5]; 5];
    for i in 0..5 {
        for j in 0..5 {
            out[i][j] = (0..5).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}
