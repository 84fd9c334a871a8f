use rayon::prelude::*;

use super::{Grad2D, Image, Projected2D, RenderConfig};
use crate::real::Real;
use crate::scene::{Camera, Viewport};

/// One entry of a pixel's front-to-back list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution<T> {
    /// Index into the projected list (not the global id).
    pub local: u32,
    pub alpha: T,
    /// Transmittance in front of this Gaussian.
    pub trans: T,
}

/// Saved forward state needed by the backward pass.
#[derive(Debug, Clone)]
pub struct RenderAux<T> {
    pub viewport: Viewport,
    /// Local indices sorted by `(depth, id)`.
    pub order: Vec<u32>,
    /// CSR offsets into `entries`, one per viewport pixel plus one.
    pub offsets: Vec<u32>,
    pub entries: Vec<Contribution<T>>,
    pub final_trans: Vec<T>,
    /// Row boundaries of the pixel bands, relative to the viewport.
    pub bands: Vec<(u32, u32)>,
}

impl<T: Real> RenderAux<T> {
    pub fn pixel_entries(&self, pixel: usize) -> &[Contribution<T>] {
        &self.entries[self.offsets[pixel] as usize..self.offsets[pixel + 1] as usize]
    }

    /// Bytes held by the saved lists.
    pub fn bytes(&self) -> usize {
        self.entries.len() * (4 + 2 * T::BYTES)
            + self.offsets.len() * 4
            + self.final_trans.len() * T::BYTES
            + self.order.len() * 4
    }
}

fn depth_order<T: Real>(proj: &[Projected2D<T>]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..proj.len() as u32).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&proj[a as usize], &proj[b as usize]);
        pa.depth.partial_cmp(&pb.depth).unwrap_or(std::cmp::Ordering::Equal).then(pa.id.cmp(&pb.id))
    });
    order
}

fn band_rows(height: u32, bands: usize) -> Vec<(u32, u32)> {
    let n = bands.clamp(1, height.max(1) as usize) as u32;
    (0..n).map(|b| (b * height / n, (b + 1) * height / n)).collect()
}

/// Calls `f(pixel_index_in_viewport, dx, dy)` for every pixel of rows `[y0, y1)`
/// (viewport-relative) covered by `p`.
#[inline]
fn for_each_covered<T: Real>(
    p: &Projected2D<T>,
    vp: &Viewport,
    rows: (u32, u32),
    cutoff: Option<T>,
    mut f: impl FnMut(usize, T, T),
) {
    let half = T::c(0.5);
    let (xa, xb, ya, yb) = match cutoff {
        Some(k) => {
            let ex = k * p.cov2d[0].sqrt();
            let ey = k * p.cov2d[2].sqrt();
            let lo_x = (p.mean2d[0] - ex - half).ceil().f64();
            let hi_x = (p.mean2d[0] + ex - half).floor().f64();
            let lo_y = (p.mean2d[1] - ey - half).ceil().f64();
            let hi_y = (p.mean2d[1] + ey - half).floor().f64();
            let xa = lo_x.max(vp.x0 as f64);
            let xb = (hi_x + 1.0).min(vp.x1 as f64);
            let ya = lo_y.max((vp.y0 + rows.0) as f64);
            let yb = (hi_y + 1.0).min((vp.y0 + rows.1) as f64);
            if !(xa < xb && ya < yb) {
                return;
            }
            (xa as u32, xb as u32, ya as u32, yb as u32)
        }
        None => (vp.x0, vp.x1, vp.y0 + rows.0, vp.y0 + rows.1),
    };
    let k2 = cutoff.map(|k| k * k);
    let w = vp.width() as usize;
    for y in ya..yb {
        let dy = T::of_usize(y as usize) + half - p.mean2d[1];
        let row = (y - vp.y0) as usize * w;
        for x in xa..xb {
            let dx = T::of_usize(x as usize) + half - p.mean2d[0];
            if let Some(k2) = k2 {
                if p.power(dx, dy) > k2 {
                    continue;
                }
            }
            f(row + (x - vp.x0) as usize, dx, dy);
        }
    }
}

struct BandOut<T> {
    color: Vec<T>,
    counts: Vec<u32>,
    entries: Vec<Contribution<T>>,
    final_trans: Vec<T>,
}

fn forward_band<T: Real>(
    proj: &[Projected2D<T>],
    order: &[u32],
    vp: &Viewport,
    rows: (u32, u32),
    cfg: &RenderConfig,
) -> BandOut<T> {
    let w = vp.width() as usize;
    let base = rows.0 as usize * w;
    let npix = (rows.1 - rows.0) as usize * w;
    let cutoff = cfg.raster_sigma.filter(|s| s.is_finite()).map(T::c);

    // Candidate lists in depth order, as CSR.
    let mut cand_off = vec![0u32; npix + 1];
    for &j in order {
        for_each_covered(&proj[j as usize], vp, rows, cutoff, |pix, _, _| cand_off[pix - base + 1] += 1);
    }
    for i in 0..npix {
        cand_off[i + 1] += cand_off[i];
    }
    let mut fill = cand_off.clone();
    let mut cand = vec![0u32; cand_off[npix] as usize];
    for &j in order {
        for_each_covered(&proj[j as usize], vp, rows, cutoff, |pix, _, _| {
            let s = &mut fill[pix - base];
            cand[*s as usize] = j;
            *s += 1;
        });
    }

    let half = T::c(0.5);
    let amax = T::c(cfg.alpha_max);
    let tmin = T::c(cfg.t_min);
    let bg = cfg.background.rgb::<T>();
    let mut out = BandOut {
        color: vec![T::zero(); npix * 3],
        counts: vec![0; npix],
        entries: Vec::with_capacity(cand.len()),
        final_trans: vec![T::one(); npix],
    };
    for i in 0..npix {
        let gx = vp.x0 as usize + (base + i) % w;
        let gy = vp.y0 as usize + (base + i) / w;
        let px = T::of_usize(gx) + half;
        let py = T::of_usize(gy) + half;
        let mut t = T::one();
        let mut c = [T::zero(); 3];
        let start = out.entries.len();
        for &j in &cand[cand_off[i] as usize..cand_off[i + 1] as usize] {
            let p = &proj[j as usize];
            let q = p.power(px - p.mean2d[0], py - p.mean2d[1]);
            let alpha = (p.alpha_base * (-half * q).exp()).min(amax);
            let next = t * (T::one() - alpha);
            if next < tmin {
                break;
            }
            for ch in 0..3 {
                c[ch] += p.rgb[ch] * alpha * t;
            }
            out.entries.push(Contribution { local: j, alpha, trans: t });
            t = next;
        }
        out.counts[i] = (out.entries.len() - start) as u32;
        out.final_trans[i] = t;
        for ch in 0..3 {
            out.color[3 * i + ch] = c[ch] + t * bg[ch];
        }
    }
    out
}

/// Depth-sorted front-to-back compositing over the camera's viewport.
pub fn rasterize_forward<T: Real>(proj: &[Projected2D<T>], cam: &Camera<T>, cfg: &RenderConfig) -> (Image<T>, RenderAux<T>) {
    let vp = cam.viewport;
    let order = depth_order(proj);
    let bands = band_rows(vp.height(), cfg.bands);
    let outs: Vec<BandOut<T>> = bands.par_iter().map(|&rows| forward_band(proj, &order, &vp, rows, cfg)).collect();

    let npix = vp.pixels();
    let mut image = Image::new(vp.width(), vp.height());
    let mut offsets = Vec::with_capacity(npix + 1);
    offsets.push(0u32);
    let mut entries = Vec::with_capacity(outs.iter().map(|o| o.entries.len()).sum());
    let mut final_trans = Vec::with_capacity(npix);
    let mut pix = 0;
    for o in outs {
        image.data[3 * pix..3 * pix + o.color.len()].copy_from_slice(&o.color);
        pix += o.counts.len();
        for &cnt in &o.counts {
            let last = *offsets.last().unwrap();
            offsets.push(last + cnt);
        }
        entries.extend(o.entries);
        final_trans.extend(o.final_trans);
    }
    let aux = RenderAux {
        viewport: vp,
        order,
        offsets,
        entries,
        final_trans,
        bands,
    };
    (image, aux)
}

fn backward_band<T: Real>(
    aux: &RenderAux<T>,
    proj: &[Projected2D<T>],
    rows: (u32, u32),
    cfg: &RenderConfig,
    dl: &Image<T>,
) -> Vec<Grad2D<T>> {
    let vp = &aux.viewport;
    let w = vp.width() as usize;
    let half = T::c(0.5);
    let two = T::c(2.0);
    let amax = T::c(cfg.alpha_max);
    let bg = cfg.background.rgb::<T>();
    let mut grads = vec![Grad2D::zero(); proj.len()];
    for i in rows.0 as usize * w..rows.1 as usize * w {
        let list = aux.pixel_entries(i);
        if list.is_empty() {
            continue;
        }
        let g_pix = [dl.data[3 * i], dl.data[3 * i + 1], dl.data[3 * i + 2]];
        let px = T::of_usize(vp.x0 as usize + i % w) + half;
        let py = T::of_usize(vp.y0 as usize + i / w) + half;
        // Color accumulated behind the current entry, background included.
        let tf = aux.final_trans[i];
        let mut acc = [tf * bg[0], tf * bg[1], tf * bg[2]];
        for e in list.iter().rev() {
            let j = e.local as usize;
            let p = &proj[j];
            let g = &mut grads[j];
            let wgt = e.alpha * e.trans;
            let one_minus = T::one() - e.alpha;
            let mut dl_dalpha = T::zero();
            for ch in 0..3 {
                g.rgb[ch] += wgt * g_pix[ch];
                dl_dalpha += g_pix[ch] * (p.rgb[ch] * e.trans - acc[ch] / one_minus);
                acc[ch] += p.rgb[ch] * wgt;
            }
            let dx = px - p.mean2d[0];
            let dy = py - p.mean2d[1];
            let gauss = (-half * p.power(dx, dy)).exp();
            if p.alpha_base * gauss > amax {
                continue;
            }
            g.opacity += gauss * dl_dalpha;
            let dl_dq = -half * gauss * p.alpha_base * dl_dalpha;
            g.conic[0] += dl_dq * dx * dx;
            g.conic[1] += dl_dq * two * dx * dy;
            g.conic[2] += dl_dq * dy * dy;
            let [a, b, c] = p.conic;
            g.mean2d[0] += dl_dq * (-two * (a * dx + b * dy));
            g.mean2d[1] += dl_dq * (-two * (b * dx + c * dy));
        }
    }
    grads
}

/// Per-Gaussian 2D gradients, in the order of `proj`.
///
/// Within a band, pixels are visited in row-major order; bands are reduced
/// in order, so the result depends only on the band count.
pub fn rasterize_backward<T: Real>(
    aux: &RenderAux<T>,
    proj: &[Projected2D<T>],
    _cam: &Camera<T>,
    cfg: &RenderConfig,
    dl_dimage: &Image<T>,
) -> Vec<Grad2D<T>> {
    assert_eq!(
        (dl_dimage.width, dl_dimage.height),
        (aux.viewport.width(), aux.viewport.height()),
        "gradient image does not match the viewport"
    );
    let per_band: Vec<Vec<Grad2D<T>>> =
        aux.bands.par_iter().map(|&rows| backward_band(aux, proj, rows, cfg, dl_dimage)).collect();
    let mut it = per_band.into_iter();
    let mut total = it.next().unwrap_or_else(|| vec![Grad2D::zero(); proj.len()]);
    for band in it {
        for (t, b) in total.iter_mut().zip(&band) {
            t.accumulate(b);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn splat(id: u32, m: [f64; 2], var: f64, depth: f64, alpha: f64) -> Projected2D<f64> {
        Projected2D {
            id,
            mean2d: m,
            cov2d: [var, 0.0, var],
            conic: [1.0 / var, 0.0, 1.0 / var],
            depth,
            rgb: [1.0, 0.5, 0.25],
            rgb_clamped: [false; 3],
            alpha_base: alpha,
        }
    }

    fn cam() -> Camera<f64> {
        Camera::new(crate::math::identity(), [0.0; 3], 10.0, 10.0, 4.0, 4.0, 8, 8, 0.01, 100.0).unwrap()
    }

    #[test]
    fn ties_broken_by_id() {
        let p = vec![splat(5, [1.0, 1.0], 1.0, 2.0, 0.5), splat(2, [1.0, 1.0], 1.0, 2.0, 0.5), splat(9, [1.0, 1.0], 1.0, 1.0, 0.5)];
        assert_eq!(depth_order(&p), vec![2, 1, 0]);
    }

    #[test]
    fn transmittance_non_increasing_and_truncated() {
        let proj: Vec<_> = (0..20).map(|i| splat(i, [4.0, 4.0], 4.0, 1.0 + i as f64, 0.9)).collect();
        let (_, aux) = rasterize_forward(&proj, &cam(), &RenderConfig::default());
        for p in 0..64 {
            let list = aux.pixel_entries(p);
            for w in list.windows(2) {
                assert!(w[1].trans <= w[0].trans);
            }
            for e in list {
                assert!(e.trans * (1.0 - e.alpha) >= 1e-4);
            }
            assert!(aux.final_trans[p] >= 1e-4);
        }
    }

    #[test]
    fn saturated_occluder_hides_the_gaussian_behind() {
        let front = splat(0, [4.0, 4.0], 1e5, 1.0, 1.0);
        let back = splat(1, [4.0, 4.0], 1.0, 2.0, 0.8);
        let proj = vec![front, back];
        let c = cam();
        let cfg = RenderConfig::default();
        let (_, aux) = rasterize_forward(&proj, &c, &cfg);
        let mut dl = Image::new(8, 8);
        dl.data.iter_mut().enumerate().for_each(|(i, v)| *v = 1.0 + (i % 3) as f64);
        let g = rasterize_backward(&aux, &proj, &c, &cfg, &dl);
        let mag = |g: &Grad2D<f64>| {
            (g.mean2d.iter().chain(&g.conic).chain(&g.rgb).map(|v| v * v).sum::<f64>() + g.opacity * g.opacity).sqrt()
        };
        assert!(mag(&g[1]) <= 1e-3 * mag(&g[0]), "{} vs {}", mag(&g[1]), mag(&g[0]));
    }
}
