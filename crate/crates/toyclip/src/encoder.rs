use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Linear image and text encoders mapping into a shared `d_out` space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// `d_out × d_img`
    pub w_img: Array2<f64>,
    /// `d_out × d_txt`
    pub w_txt: Array2<f64>,
    pub b_img: Option<Array1<f64>>,
    pub b_txt: Option<Array1<f64>>,
}

/// Unit-norm embeddings plus the pre-normalization norms needed for the
/// backward pass.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub unit: Array2<f64>,
    pub norms: Array1<f64>,
}

const NORM_FLOOR: f64 = 1e-12;

fn normalize_rows(z: Array2<f64>) -> Encoded {
    let norms: Array1<f64> = z
        .axis_iter(Axis(0))
        .map(|r| r.dot(&r).sqrt().max(NORM_FLOOR))
        .collect();
    let unit = &z / &norms.view().insert_axis(Axis(1));
    Encoded { unit, norms }
}

/// Gradient through `x / ‖x‖` for each row.
fn normalize_backward(enc: &Encoded, grad_unit: &Array2<f64>) -> Array2<f64> {
    let mut out = grad_unit.clone();
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let u = enc.unit.row(i);
        let proj = u.dot(&row);
        row.zip_mut_with(&u, |g, &ui| *g -= ui * proj);
        row /= enc.norms[i];
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub w_img: Array2<f64>,
    pub w_txt: Array2<f64>,
    pub b_img: Option<Array1<f64>>,
    pub b_txt: Option<Array1<f64>>,
}

impl EncoderParams {
    /// Gaussian init with variance `1 / fan_in`.
    pub fn init<R: Rng>(d_img: usize, d_txt: usize, d_out: usize, bias: bool, rng: &mut R) -> Self {
        let mut gauss = |rows: usize, cols: usize| {
            let scale = 1.0 / (cols as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal) * scale)
        };
        let w_img = gauss(d_out, d_img);
        let w_txt = gauss(d_out, d_txt);
        Self {
            w_img,
            w_txt,
            b_img: bias.then(|| Array1::zeros(d_out)),
            b_txt: bias.then(|| Array1::zeros(d_out)),
        }
    }

    pub fn d_out(&self) -> usize {
        self.w_img.nrows()
    }

    pub fn is_finite(&self) -> bool {
        let finite = |a: &[f64]| a.iter().all(|v| v.is_finite());
        self.w_img.iter().all(|v| v.is_finite())
            && self.w_txt.iter().all(|v| v.is_finite())
            && self.b_img.as_ref().is_none_or(|b| finite(b.as_slice().unwrap_or(&[])))
            && self.b_txt.as_ref().is_none_or(|b| finite(b.as_slice().unwrap_or(&[])))
    }

    fn project(w: &Array2<f64>, b: Option<&Array1<f64>>, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&w.t());
        if let Some(b) = b {
            z += b;
        }
        z
    }

    pub fn encode_images(&self, x: ArrayView2<f64>) -> Encoded {
        normalize_rows(Self::project(&self.w_img, self.b_img.as_ref(), x))
    }

    pub fn encode_texts(&self, x: ArrayView2<f64>) -> Encoded {
        normalize_rows(Self::project(&self.w_txt, self.b_txt.as_ref(), x))
    }

    /// Parameter gradients given loss gradients with respect to the unit
    /// embeddings of both sides.
    pub fn backward(
        &self,
        x_img: ArrayView2<f64>,
        img: &Encoded,
        grad_img_unit: &Array2<f64>,
        x_txt: ArrayView2<f64>,
        txt: &Encoded,
        grad_txt_unit: &Array2<f64>,
    ) -> EncoderGrads {
        let dz_img = normalize_backward(img, grad_img_unit);
        let dz_txt = normalize_backward(txt, grad_txt_unit);
        EncoderGrads {
            w_img: dz_img.t().dot(&x_img),
            w_txt: dz_txt.t().dot(&x_txt),
            b_img: self.b_img.as_ref().map(|_| dz_img.sum_axis(Axis(0))),
            b_txt: self.b_txt.as_ref().map(|_| dz_txt.sum_axis(Axis(0))),
        }
    }

    pub(crate) fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.w_img.as_slice_mut().expect("standard layout"),
            self.w_txt.as_slice_mut().expect("standard layout"),
        ];
        if let Some(b) = self.b_img.as_mut() {
            out.push(b.as_slice_mut().expect("contiguous"));
        }
        if let Some(b) = self.b_txt.as_mut() {
            out.push(b.as_slice_mut().expect("contiguous"));
        }
        out
    }
}

impl EncoderGrads {
    pub(crate) fn slices(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.w_img.as_slice().expect("standard layout"),
            self.w_txt.as_slice().expect("standard layout"),
        ];
        if let Some(b) = self.b_img.as_ref() {
            out.push(b.as_slice().expect("contiguous"));
        }
        if let Some(b) = self.b_txt.as_ref() {
            out.push(b.as_slice().expect("contiguous"));
        }
        out
    }
}
