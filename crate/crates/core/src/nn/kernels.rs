//! Batched forward kernels and their vector-Jacobian products. The tape and
//! the tape-free inference paths call the same forward kernels, so both
//! produce bit-identical values.

use super::matrix::{gemm, Matrix};

pub fn affine(terms: &[(&Matrix, &Matrix)], bias: &Matrix) -> Matrix {
    let rows = terms.first().map_or(0, |(x, _)| x.rows);
    let mut out = Matrix::zeros(rows, bias.cols);
    for (k, (x, w)) in terms.iter().enumerate() {
        gemm(1.0, x, false, w, false, if k == 0 { 0.0 } else { 1.0 }, &mut out);
    }
    for r in 0..rows {
        for (o, b) in out.row_mut(r).iter_mut().zip(&bias.data) {
            *o += b;
        }
    }
    out
}

pub fn elu(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { v } else { v.exp_m1() })
}

const EXP_SERIES: f64 = 1e-6;
const EXP_JAC_SERIES: f64 = 1e-2;

pub fn quat_exp_rows(t: &Matrix) -> Matrix {
    assert_eq!(t.cols, 3, "tangent rows must have 3 columns");
    let mut out = Matrix::zeros(t.rows, 4);
    for r in 0..t.rows {
        let [a, b, c] = [t.get(r, 0), t.get(r, 1), t.get(r, 2)];
        let th2 = a * a + b * b + c * c;
        let th = th2.sqrt();
        let (w, s) = if th < EXP_SERIES {
            (1.0 - th2 / 8.0, 0.5 - th2 / 48.0)
        } else {
            ((0.5 * th).cos(), (0.5 * th).sin() / th)
        };
        out.row_mut(r).copy_from_slice(&[w, s * a, s * b, s * c]);
    }
    out
}

pub fn quat_exp_rows_backward(t: &Matrix, g: &Matrix) -> Matrix {
    let mut gt = Matrix::zeros(t.rows, 3);
    for r in 0..t.rows {
        let tv = [t.get(r, 0), t.get(r, 1), t.get(r, 2)];
        let th2 = tv.iter().map(|v| v * v).sum::<f64>();
        let th = th2.sqrt();
        // q = (cos(θ/2), s(θ) t), s = sin(θ/2)/θ, c = s'(θ)/θ
        let (s, c) = if th < EXP_JAC_SERIES {
            (0.5 - th2 / 48.0 + th2 * th2 / 3840.0, -1.0 / 24.0 + th2 / 960.0)
        } else {
            let (sh, ch) = (0.5 * th).sin_cos();
            (sh / th, (0.5 * th * ch - sh) / (th2 * th))
        };
        let gr = g.row(r);
        let gv = [gr[1], gr[2], gr[3]];
        let gv_dot_t: f64 = gv.iter().zip(&tv).map(|(a, b)| a * b).sum();
        for j in 0..3 {
            // dw/dt_j = -s t_j / 2
            gt.set(r, j, -0.5 * s * tv[j] * gr[0] + s * gv[j] + c * tv[j] * gv_dot_t);
        }
    }
    gt
}

#[inline]
fn hamilton(a: &[f64], b: &[f64]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

pub fn quat_mul_rows(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.shape(), b.shape(), "quat_mul shape mismatch");
    assert_eq!(a.cols, 4, "quaternion rows must have 4 columns");
    let mut out = Matrix::zeros(a.rows, 4);
    for r in 0..a.rows {
        out.row_mut(r).copy_from_slice(&hamilton(a.row(r), b.row(r)));
    }
    out
}

/// For `q = a ⊗ b`: `ga = g ⊗ conj(b)`, `gb = conj(a) ⊗ g`.
pub fn quat_mul_rows_backward(a: &Matrix, b: &Matrix, g: &Matrix) -> (Matrix, Matrix) {
    let mut ga = Matrix::zeros(a.rows, 4);
    let mut gb = Matrix::zeros(a.rows, 4);
    for r in 0..a.rows {
        let (ar, br, gr) = (a.row(r), b.row(r), g.row(r));
        let bc = [br[0], -br[1], -br[2], -br[3]];
        let ac = [ar[0], -ar[1], -ar[2], -ar[3]];
        ga.row_mut(r).copy_from_slice(&hamilton(gr, &bc));
        gb.row_mut(r).copy_from_slice(&hamilton(&ac, gr));
    }
    (ga, gb)
}

pub fn normalize_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..x.rows {
        let row = out.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

pub fn normalize_rows_backward(x: &Matrix, y: &Matrix, g: &Matrix) -> Matrix {
    let mut gx = Matrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let n = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            continue;
        }
        let (yr, gr) = (y.row(r), g.row(r));
        let yg: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
            *o = (gr[c] - yr[c] * yg) / n;
        }
    }
    gx
}

/// Returns canonicalized rows and the applied per-row sign.
pub fn canonical_rows(x: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = x.clone();
    let mut signs = vec![1.0; x.rows];
    for r in 0..x.rows {
        let row = out.row_mut(r);
        let lead = row.iter().copied().find(|v| *v != 0.0).unwrap_or(0.0);
        if lead < 0.0 {
            signs[r] = -1.0;
            row.iter_mut().for_each(|v| *v = -*v);
        }
    }
    (out, signs)
}

pub fn quat_to_6d_rows(q: &Matrix) -> Matrix {
    assert_eq!(q.cols, 4, "quaternion rows must have 4 columns");
    let mut out = Matrix::zeros(q.rows, 6);
    for r in 0..q.rows {
        let [w, x, y, z] = [q.get(r, 0), q.get(r, 1), q.get(r, 2), q.get(r, 3)];
        out.row_mut(r).copy_from_slice(&[
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y + w * z),
            2.0 * (x * z - w * y),
            2.0 * (x * y - w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z + w * x),
        ]);
    }
    out
}

pub fn quat_to_6d_rows_backward(q: &Matrix, g: &Matrix) -> Matrix {
    let mut gq = Matrix::zeros(q.rows, 4);
    for r in 0..q.rows {
        let [w, x, y, z] = [q.get(r, 0), q.get(r, 1), q.get(r, 2), q.get(r, 3)];
        let gr = g.row(r);
        // rows: d(out_k)/d(w, x, y, z)
        let jac = [
            [0.0, 0.0, -4.0 * y, -4.0 * z],
            [2.0 * z, 2.0 * y, 2.0 * x, 2.0 * w],
            [-2.0 * y, 2.0 * z, -2.0 * w, 2.0 * x],
            [-2.0 * z, 2.0 * y, 2.0 * x, -2.0 * w],
            [0.0, -4.0 * x, 0.0, -4.0 * z],
            [2.0 * x, 2.0 * w, 2.0 * z, 2.0 * y],
        ];
        let out = gq.row_mut(r);
        for (k, jr) in jac.iter().enumerate() {
            for c in 0..4 {
                out[c] += gr[k] * jr[c];
            }
        }
    }
    gq
}

/// `B x c -> B x 1` row sums of squares.
pub fn row_sum_sq(x: &Matrix) -> Matrix {
    Matrix::from_vec(x.rows, 1, (0..x.rows).map(|r| x.row(r).iter().map(|v| v * v).sum()).collect())
}

fn unit4(row: &[f64]) -> ([f64; 4], f64) {
    let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    ([row[0] / n, row[1] / n, row[2] / n, row[3] / n], n)
}

/// Returns `(c, s)` with `c = <a, b>` and `s = |vec(conj(a) ⊗ b)|`.
fn cos_sin(a: &[f64; 4], b: &[f64; 4]) -> (f64, f64) {
    let c = a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3];
    let vx = a[0] * b[1] - a[1] * b[0] - a[2] * b[3] + a[3] * b[2];
    let vy = a[0] * b[2] + a[1] * b[3] - a[2] * b[0] - a[3] * b[1];
    let vz = a[0] * b[3] - a[1] * b[2] + a[2] * b[1] - a[3] * b[0];
    (c, (vx * vx + vy * vy + vz * vz).sqrt())
}

/// Squared geodesic angle between quaternion rows, `B x 4, B x 4 -> B x 1`.
/// Invariant to the scale and sign of either row.
pub fn geodesic_sq_rows(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!((a.cols, b.cols), (4, 4), "quaternion rows must have 4 columns");
    let mut out = Matrix::zeros(a.rows, 1);
    for r in 0..a.rows {
        let (ua, _) = unit4(a.row(r));
        let (ub, _) = unit4(b.row(r));
        let (c, s) = cos_sin(&ua, &ub);
        let d = 2.0 * s.atan2(c.abs());
        out.data[r] = d * d;
    }
    out
}

pub fn geodesic_sq_rows_backward(a: &Matrix, b: &Matrix, g: &Matrix) -> (Matrix, Matrix) {
    let mut ga = Matrix::zeros(a.rows, 4);
    let mut gb = Matrix::zeros(b.rows, 4);
    for r in 0..a.rows {
        let (ua, na) = unit4(a.row(r));
        let (ub, nb) = unit4(b.row(r));
        let (c, s) = cos_sin(&ua, &ub);
        let d = 2.0 * s.atan2(c.abs());
        // d(d^2)/dc for unit inputs; d / s -> 2 as the angle vanishes
        let ratio = if s < 1e-12 { 2.0 } else { d / s };
        let k = -4.0 * ratio * c.signum() * g.data[r];
        for i in 0..4 {
            ga.row_mut(r)[i] = k * (ub[i] - c * ua[i]) / na;
            gb.row_mut(r)[i] = k * (ua[i] - c * ub[i]) / nb;
        }
    }
    (ga, gb)
}
