// Raw row-major kernels shared by the tape ops.

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×k] += g[m×n] · b[k×n]ᵀ`
pub(crate) fn matmul_nt_acc(g: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (&gv, &bv) in grow.iter().zip(brow) {
                s += gv * bv;
            }
            c[i * k + p] += s;
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · g[m×n]`
pub(crate) fn matmul_tn_acc(a: &[f64], g: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &gv) in crow.iter_mut().zip(grow) {
                *cv += av * gv;
            }
        }
    }
}

/// Logistic sigmoid in the overflow-free branch form.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
