//! Least-squares 3x4 color matrices mapping black-level-corrected camera
//! RAW colors to the canonical linear sRGB space.

use crate::error::{ensure, Error, Result};
use crate::image::Image;

/// Corresponding RAW and reference colors of calibration-chart patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub raw_colors: Vec<[f64; 3]>,
    pub reference_colors: Vec<[f64; 3]>,
    pub black_level: [f64; 3],
}

/// Affine map `out = T * [rgb - black; 1]` stored row-major as 3x4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorMatrix {
    pub rows: [[f64; 4]; 3],
}

impl ColorMatrix {
    pub const IDENTITY: ColorMatrix = ColorMatrix {
        rows: [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
    };

    pub fn apply(&self, rgb: [f64; 3]) -> [f64; 3] {
        self.rows.map(|r| r[0] * rgb[0] + r[1] * rgb[1] + r[2] * rgb[2] + r[3])
    }
}

/// Result of [`fit_color_matrix`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationFit {
    pub matrix: ColorMatrix,
    /// Root mean squared per-patch color error (Euclidean over channels).
    pub rms_residual: f64,
}

/// Solves `min sum |T [r - black; 1] - ref|^2` independently per output
/// channel via Householder QR of the `N x 4` design matrix.
pub fn fit_color_matrix(patches: &PatchSet) -> Result<CalibrationFit> {
    let n = patches.raw_colors.len();
    ensure!(
        n == patches.reference_colors.len(),
        Shape,
        "{} raw patches but {} reference patches",
        n,
        patches.reference_colors.len()
    );
    ensure!(n >= 4, IllPosed, "{} patches cannot determine 4 unknowns per channel (need at least 4)", n);

    let design: Vec<[f64; 4]> = patches
        .raw_colors
        .iter()
        .map(|c| {
            let b = patches.black_level;
            [c[0] - b[0], c[1] - b[1], c[2] - b[2], 1.0]
        })
        .collect();
    let qr = Householder::factor(&design)?;
    let mut rows = [[0.0; 4]; 3];
    for (ch, row) in rows.iter_mut().enumerate() {
        let rhs: Vec<f64> = patches.reference_colors.iter().map(|c| c[ch]).collect();
        *row = qr.solve(&rhs);
    }
    let matrix = ColorMatrix { rows };
    let sse: f64 = patches
        .raw_colors
        .iter()
        .zip(&patches.reference_colors)
        .map(|(raw, reference)| {
            let out = apply_to_color(&matrix, *raw, patches.black_level);
            (0..3).map(|c| (out[c] - reference[c]).powi(2)).sum::<f64>()
        })
        .sum();
    Ok(CalibrationFit { matrix, rms_residual: (sse / n as f64).sqrt() })
}

fn apply_to_color(m: &ColorMatrix, rgb: [f64; 3], black: [f64; 3]) -> [f64; 3] {
    m.apply([rgb[0] - black[0], rgb[1] - black[1], rgb[2] - black[2]])
}

/// Per pixel `T * [in - black; 1]`, clamped below at zero only.
pub fn apply_color_matrix(image: &Image, matrix: &ColorMatrix, black_level: [f64; 3]) -> Image {
    let mut out = image.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let rgb = apply_to_color(matrix, [px[0] as f64, px[1] as f64, px[2] as f64], black_level);
        for c in 0..3 {
            px[c] = rgb[c].max(0.0) as f32;
        }
    }
    out
}

/// Householder QR of a tall `N x 4` matrix.
struct Householder {
    // Reflected matrix: R in the upper triangle, reflectors below.
    a: Vec<[f64; 4]>,
    betas: [f64; 4],
    diag: [f64; 4],
}

impl Householder {
    fn factor(design: &[[f64; 4]]) -> Result<Self> {
        let mut a = design.to_vec();
        let n = a.len();
        let scale = design.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut betas = [0.0; 4];
        let mut diag = [0.0; 4];
        for k in 0..4 {
            let norm = (k..n).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
            if norm <= 1e-12 * scale * (n as f64).sqrt() {
                return Err(Error::IllPosed(format!(
                    "design matrix [raw - black | 1] is rank deficient: column {} ({}) is a linear combination of the previous ones",
                    k,
                    ["R", "G", "B", "offset"][k]
                )));
            }
            let alpha = if a[k][k] > 0.0 { -norm } else { norm };
            let v0 = a[k][k] - alpha;
            // v = [v0, a[k+1..][k]], beta = 2 / (v . v)
            let vv = v0 * v0 + (k + 1..n).map(|i| a[i][k] * a[i][k]).sum::<f64>();
            a[k][k] = v0;
            let beta = if vv == 0.0 { 0.0 } else { 2.0 / vv };
            for j in k + 1..4 {
                let dot: f64 = (k..n).map(|i| a[i][k] * a[i][j]).sum();
                for i in k..n {
                    a[i][j] -= beta * dot * a[i][k];
                }
            }
            betas[k] = beta;
            diag[k] = alpha;
        }
        Ok(Householder { a, betas, diag })
    }

    fn solve(&self, rhs: &[f64]) -> [f64; 4] {
        let n = self.a.len();
        let mut y = rhs.to_vec();
        for k in 0..4 {
            let dot: f64 = (k..n).map(|i| self.a[i][k] * y[i]).sum();
            for i in k..n {
                y[i] -= self.betas[k] * dot * self.a[i][k];
            }
        }
        let mut x = [0.0; 4];
        for k in (0..4).rev() {
            let s: f64 = (k + 1..4).map(|j| self.a[k][j] * x[j]).sum();
            x[k] = (y[k] - s) / self.diag[k];
        }
        x
    }
}
