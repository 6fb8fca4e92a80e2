//! Direct same-padding 2-D convolution over channels-last maps.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct Geometry {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl Geometry {
    pub fn check(input: &[usize], kernel: &[usize]) -> Result<Self> {
        let bad = || Error::Shape {
            op: "conv2d",
            lhs: input.to_vec(),
            rhs: kernel.to_vec(),
        };
        let (&[h, w, cin], &[kh, kw, kcin, cout]) = (input, kernel) else {
            return Err(bad());
        };
        if kh != kw || kh % 2 == 0 || kcin != cin {
            return Err(bad());
        }
        Ok(Geometry {
            h,
            w,
            cin,
            cout,
            k: kh,
        })
    }

    // Valid (output, input) index pairs along one axis for kernel tap `d`.
    #[inline]
    fn span(&self, n: usize, d: usize) -> (usize, usize) {
        let pad = self.k / 2;
        let lo = pad.saturating_sub(d);
        let hi = (n + pad).saturating_sub(d).min(n);
        (lo, hi)
    }
}

pub fn forward(g: &Geometry, input: &[f64], kernel: &[f64]) -> Vec<f64> {
    let Geometry { h, w, cin, cout, k } = *g;
    let pad = k / 2;
    let mut out = vec![0.0; h * w * cout];
    for dy in 0..k {
        let (ylo, yhi) = g.span(h, dy);
        for dx in 0..k {
            let (xlo, xhi) = g.span(w, dx);
            let kbase = (dy * k + dx) * cin * cout;
            let ktap = &kernel[kbase..kbase + cin * cout];
            for y in ylo..yhi {
                let iy = y + dy - pad;
                for x in xlo..xhi {
                    let ix = x + dx - pad;
                    let px = &input[(iy * w + ix) * cin..][..cin];
                    let o = &mut out[(y * w + x) * cout..][..cout];
                    for (c, &a) in px.iter().enumerate() {
                        if a == 0.0 {
                            continue;
                        }
                        let row = &ktap[c * cout..(c + 1) * cout];
                        for (d, &kv) in o.iter_mut().zip(row) {
                            *d += a * kv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates dL/d(input) into `dst`.
pub fn backward_input(g: &Geometry, gout: &[f64], kernel: &[f64], dst: &mut [f64]) {
    let Geometry { w, cin, cout, k, h } = *g;
    let pad = k / 2;
    for dy in 0..k {
        let (ylo, yhi) = g.span(h, dy);
        for dx in 0..k {
            let (xlo, xhi) = g.span(w, dx);
            let kbase = (dy * k + dx) * cin * cout;
            let ktap = &kernel[kbase..kbase + cin * cout];
            for y in ylo..yhi {
                let iy = y + dy - pad;
                for x in xlo..xhi {
                    let ix = x + dx - pad;
                    let go = &gout[(y * w + x) * cout..][..cout];
                    let d = &mut dst[(iy * w + ix) * cin..][..cin];
                    for (c, dc) in d.iter_mut().enumerate() {
                        let row = &ktap[c * cout..(c + 1) * cout];
                        let mut t = 0.0;
                        for (a, b) in go.iter().zip(row) {
                            t += a * b;
                        }
                        *dc += t;
                    }
                }
            }
        }
    }
}

/// Accumulates dL/d(kernel) into `dst`.
pub fn backward_kernel(g: &Geometry, gout: &[f64], input: &[f64], dst: &mut [f64]) {
    let Geometry { w, cin, cout, k, h } = *g;
    let pad = k / 2;
    for dy in 0..k {
        let (ylo, yhi) = g.span(h, dy);
        for dx in 0..k {
            let (xlo, xhi) = g.span(w, dx);
            let kbase = (dy * k + dx) * cin * cout;
            let ktap = &mut dst[kbase..kbase + cin * cout];
            for y in ylo..yhi {
                let iy = y + dy - pad;
                for x in xlo..xhi {
                    let ix = x + dx - pad;
                    let go = &gout[(y * w + x) * cout..][..cout];
                    let px = &input[(iy * w + ix) * cin..][..cin];
                    for (c, &a) in px.iter().enumerate() {
                        if a == 0.0 {
                            continue;
                        }
                        let row = &mut ktap[c * cout..(c + 1) * cout];
                        for (d, &gv) in row.iter_mut().zip(go) {
                            *d += a * gv;
                        }
                    }
                }
            }
        }
    }
}

/// Textbook seven-loop convolution; the reference the fast loops are tested against.
pub fn forward_naive(g: &Geometry, input: &[f64], kernel: &[f64]) -> Vec<f64> {
    let Geometry { h, w, cin, cout, k } = *g;
    let pad = k as isize / 2;
    let mut out = vec![0.0; h * w * cout];
    for y in 0..h {
        for x in 0..w {
            for o in 0..cout {
                let mut acc = 0.0;
                for dy in 0..k {
                    for dx in 0..k {
                        let iy = y as isize + dy as isize - pad;
                        let ix = x as isize + dx as isize - pad;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for c in 0..cin {
                            acc += input[((iy as usize) * w + ix as usize) * cin + c]
                                * kernel[((dy * k + dx) * cin + c) * cout + o];
                        }
                    }
                }
                out[(y * w + x) * cout + o] = acc;
            }
        }
    }
    out
}
