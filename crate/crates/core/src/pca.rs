//! Principal-component coloring of per-point features.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Eigenvalues at or below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-10;

/// Eigenpairs of a symmetric matrix by cyclic Jacobi rotations, sorted by
/// descending eigenvalue. `a` is row-major `n × n`; eigenvectors are the
/// returned columns, stored row-major.
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j].powi(2))
            .sum();
        if off.sqrt() <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[k * n + dst] = v[k * n + src];
        }
    }
    (values, vectors)
}

/// Leading principal directions of row-major `n × c` features.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// Up to three unit directions, largest-magnitude entry positive.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

pub fn pca_basis(features: &[f64], n: usize, c: usize) -> Result<PcaBasis> {
    if n < 3 || c == 0 || features.len() != n * c {
        return Err(Error::DegenerateInput(format!(
            "PCA needs at least 3 rows of {c} channels, got {} values",
            features.len()
        )));
    }
    let mut mean = vec![0.0; c];
    for row in features.chunks(c) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; c * c];
    let mut centered = vec![0.0; c];
    for row in features.chunks(c) {
        for ((d, &x), &m) in centered.iter_mut().zip(row).zip(&mean) {
            *d = x - m;
        }
        for i in 0..c {
            let di = centered[i];
            for j in i..c {
                cov[i * c + j] += di * centered[j];
            }
        }
    }
    for i in 0..c {
        for j in i..c {
            let x = cov[i * c + j] / (n - 1) as f64;
            cov[i * c + j] = x;
            cov[j * c + i] = x;
        }
    }
    let (values, vectors) = symmetric_eigen(&cov, c);
    let top = values.first().copied().unwrap_or(0.0);
    let mut components = Vec::new();
    let mut eigenvalues = Vec::new();
    for k in 0..c.min(3) {
        if top <= 0.0 || values[k] <= RANK_TOLERANCE * top {
            break;
        }
        let mut dir: Vec<f64> = (0..c).map(|i| vectors[i * c + k]).collect();
        let lead = dir
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if lead < 0.0 {
            dir.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(dir);
        eigenvalues.push(values[k]);
    }
    Ok(PcaBasis {
        mean,
        components,
        eigenvalues,
    })
}

/// Projects features onto their top three principal components and
/// min-max normalizes each to `[0, 1]`. Missing or flat channels are 0.5.
pub fn export_pca_colors(features: &[f64], n: usize, c: usize) -> Result<Vec<[f64; 3]>> {
    let basis = pca_basis(features, n, c)?;
    let mut colors = vec![[0.5; 3]; n];
    for (k, dir) in basis.components.iter().enumerate() {
        let proj: Vec<f64> = features
            .chunks(c)
            .map(|row| row.iter().zip(&basis.mean).zip(dir).map(|((x, m), d)| (x - m) * d).sum())
            .collect();
        let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(1.0) {
            continue;
        }
        for (color, p) in colors.iter_mut().zip(&proj) {
            color[k] = (p - lo) / (hi - lo);
        }
    }
    Ok(colors)
}

/// ASCII PLY with float positions and 8-bit colors.
pub fn write_colored_ply(path: &Path, positions: &[Vec3], colors: &[[f64; 3]]) -> Result<()> {
    if positions.len() != colors.len() {
        return Err(Error::Configuration(format!(
            "{} positions for {} colors",
            positions.len(),
            colors.len()
        )));
    }
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", positions.len()));
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    for (p, c) in positions.iter().zip(colors) {
        let byte = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
        out.push_str(&format!(
            "{} {} {} {} {} {}\n",
            p.x as f32,
            p.y as f32,
            p.z as f32,
            byte(c[0]),
            byte(c[1]),
            byte(c[2])
        ));
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
