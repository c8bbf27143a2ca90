use super::layers::{self, Dims};
use super::{Block, ModelParams};
use crate::error::{Error, Result};
use crate::real::Real;

/// A batch of single-channel images, row-major, `len` images back to back.
#[derive(Debug, Clone, Copy)]
pub struct ImageBatch<'a, R> {
    pub data: &'a [R],
    pub len: usize,
    pub height: usize,
    pub width: usize,
}

impl<'a, R> ImageBatch<'a, R> {
    pub fn new(data: &'a [R], len: usize, height: usize, width: usize) -> Result<Self> {
        if data.len() != len * height * width {
            return Err(Error::Shape(format!(
                "{} values for {len} images of {height}x{width}",
                data.len()
            )));
        }
        Ok(ImageBatch {
            data,
            len,
            height,
            width,
        })
    }
}

/// Softmax outputs of both heads on both views, plus backbone features.
/// Strong-view entries are `None` when only the weak view was evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBundle<R> {
    pub batch: usize,
    pub classes: usize,
    pub p_w_p: Vec<R>,
    pub p_w_n: Vec<R>,
    pub p_s_p: Option<Vec<R>>,
    pub p_s_n: Option<Vec<R>>,
    pub features_w: Vec<R>,
    pub features_s: Option<Vec<R>>,
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct ForwardCache<R> {
    in_dims: Dims,
    cols1: Vec<R>,
    act1: Vec<R>,
    pool1_arg: Vec<u32>,
    d1: Dims,
    cols2: Vec<R>,
    act2: Vec<R>,
    pool2_arg: Vec<u32>,
    d2: Dims,
    /// Features of all images (weak rows first, then strong rows).
    features: Vec<R>,
}

/// Result of [`forward`]: predictions plus what [`backward`] needs.
#[derive(Debug, Clone)]
pub struct Forward<R> {
    pub predictions: PredictionBundle<R>,
    pub(crate) cache: ForwardCache<R>,
}

impl<R: Real> Forward<R> {
    /// True when both passes took the same branch at every ReLU and pool,
    /// i.e. the network is the same smooth function around both points.
    pub fn same_regime(&self, other: &Forward<R>) -> bool {
        let a = &self.cache;
        let b = &other.cache;
        let pos = |v: &[R], w: &[R]| {
            v.len() == w.len()
                && v.iter()
                    .zip(w)
                    .all(|(x, y)| (*x > R::zero()) == (*y > R::zero()))
        };
        a.pool1_arg == b.pool1_arg
            && a.pool2_arg == b.pool2_arg
            && pos(&a.act1, &b.act1)
            && pos(&a.act2, &b.act2)
    }
}

/// Runs the backbone on the weak batch (and the strong batch, when given)
/// and applies both heads to every view.
pub fn forward<R: Real>(
    params: &ModelParams<R>,
    weak: ImageBatch<'_, R>,
    strong: Option<ImageBatch<'_, R>>,
) -> Result<Forward<R>> {
    let arch = *params.arch();
    let n = weak.len;
    let mut joined;
    let input: &[R] = match &strong {
        Some(s) => {
            if (s.len, s.height, s.width) != (weak.len, weak.height, weak.width) {
                return Err(Error::Shape(format!(
                    "weak batch {}x{}x{} vs strong batch {}x{}x{}",
                    weak.len, weak.height, weak.width, s.len, s.height, s.width
                )));
            }
            joined = Vec::with_capacity(2 * weak.data.len());
            joined.extend_from_slice(weak.data);
            joined.extend_from_slice(s.data);
            &joined
        }
        None => weak.data,
    };
    if weak.height < 4 || weak.width < 4 {
        return Err(Error::Shape(format!(
            "images must be at least 4x4, got {}x{}",
            weak.height, weak.width
        )));
    }
    let images = if strong.is_some() { 2 * n } else { n };
    let in_dims = Dims {
        n: images,
        h: weak.height,
        w: weak.width,
        c: 1,
    };

    let mut cols1 = Vec::new();
    layers::im2col3x3(input, in_dims, &mut cols1);
    let mut act1 = Vec::new();
    layers::conv_forward(
        &cols1,
        in_dims.pixels(),
        params.block(Block::Conv1Weight),
        params.block(Block::Conv1Bias),
        &mut act1,
    );
    layers::relu_inplace(&mut act1);
    let c1_dims = Dims {
        c: arch.conv1,
        ..in_dims
    };
    let (pool1, pool1_arg, d1) = layers::maxpool2(&act1, c1_dims);

    let mut cols2 = Vec::new();
    layers::im2col3x3(&pool1, d1, &mut cols2);
    let mut act2 = Vec::new();
    layers::conv_forward(
        &cols2,
        d1.pixels(),
        params.block(Block::Conv2Weight),
        params.block(Block::Conv2Bias),
        &mut act2,
    );
    layers::relu_inplace(&mut act2);
    let c2_dims = Dims {
        c: arch.conv2,
        ..d1
    };
    let (pool2, pool2_arg, d2) = layers::maxpool2(&act2, c2_dims);
    let features = layers::global_avg_pool(&pool2, d2);

    let classes = arch.num_classes;
    let head = |feat: &[R], w: Block, b: Block| {
        let mut z = layers::affine(feat, feat.len() / arch.feature_dim(), params.block(w), params.block(b));
        layers::softmax_rows(&mut z, classes);
        z
    };
    let dim = arch.feature_dim();
    let (fw, fs) = features.split_at(n * dim);
    let predictions = PredictionBundle {
        batch: n,
        classes,
        p_w_p: head(fw, Block::PccWeight, Block::PccBias),
        p_w_n: head(fw, Block::NccWeight, Block::NccBias),
        p_s_p: strong.is_some().then(|| head(fs, Block::PccWeight, Block::PccBias)),
        p_s_n: strong.is_some().then(|| head(fs, Block::NccWeight, Block::NccBias)),
        features_w: fw.to_vec(),
        features_s: strong.is_some().then(|| fs.to_vec()),
    };
    Ok(Forward {
        predictions,
        cache: ForwardCache {
            in_dims,
            cols1,
            act1,
            pool1_arg,
            d1,
            cols2,
            act2,
            pool2_arg,
            d2,
            features,
        },
    })
}

/// Loss gradients with respect to each head's logits on each view
/// (`batch x C`, `None` meaning zero).
#[derive(Debug, Clone, Default)]
pub struct LogitGrads<R> {
    pub pcc_weak: Option<Vec<R>>,
    pub pcc_strong: Option<Vec<R>>,
    pub ncc_weak: Option<Vec<R>>,
    pub ncc_strong: Option<Vec<R>>,
}

/// Backpropagates logit gradients through both heads and the shared backbone.
pub fn backward<R: Real>(
    params: &ModelParams<R>,
    fwd: &Forward<R>,
    g: &LogitGrads<R>,
) -> Result<ModelParams<R>> {
    let arch = *params.arch();
    let c = &fwd.cache;
    let n = fwd.predictions.batch;
    let dim = arch.feature_dim();
    let has_strong = c.in_dims.n == 2 * n;
    if (g.pcc_strong.is_some() || g.ncc_strong.is_some()) && !has_strong {
        return Err(Error::Shape(
            "strong-view gradient supplied but the forward pass had no strong view".into(),
        ));
    }

    let mut grads = params.zeros_like();
    let mut dfeat = vec![R::zero(); c.features.len()];
    let mut any = false;
    let heads = [
        (&g.pcc_weak, 0usize, Block::PccWeight, Block::PccBias),
        (&g.pcc_strong, 1, Block::PccWeight, Block::PccBias),
        (&g.ncc_weak, 0, Block::NccWeight, Block::NccBias),
        (&g.ncc_strong, 1, Block::NccWeight, Block::NccBias),
    ];
    for (dl, view, wb, bb) in heads {
        let Some(dl) = dl else { continue };
        if dl.len() != n * arch.num_classes {
            return Err(Error::Shape(format!("logit gradient for {wb} has wrong size")));
        }
        any = true;
        let rows = view * n * dim..(view + 1) * n * dim;
        let mut dw = std::mem::take(&mut grads.tensors[wb.index()]);
        let mut db = std::mem::take(&mut grads.tensors[bb.index()]);
        layers::affine_backward(
            &c.features[rows.clone()],
            n,
            params.block(wb),
            dl,
            &mut dw,
            &mut db,
            &mut dfeat[rows],
        );
        grads.tensors[wb.index()] = dw;
        grads.tensors[bb.index()] = db;
    }

    if any {
        let c2_dims = Dims {
            c: arch.conv2,
            ..c.d1
        };
        let dpool2 = layers::global_avg_pool_backward(&dfeat, c.d2);
        let mut dact2 = layers::maxpool2_backward(&dpool2, &c.pool2_arg, c2_dims.len());
        layers::relu_backward(&c.act2, &mut dact2);
        let mut dcols2 = Vec::new();
        {
            let (w2, rest) = split_two(&mut grads, Block::Conv2Weight, Block::Conv2Bias);
            layers::conv_backward(
                &c.cols2,
                c.d1.pixels(),
                params.block(Block::Conv2Weight),
                &dact2,
                w2,
                rest,
                Some(&mut dcols2),
            );
        }
        let mut dpool1 = vec![R::zero(); c.d1.len()];
        layers::col2im3x3(&dcols2, c.d1, &mut dpool1);
        let c1_dims = Dims {
            c: arch.conv1,
            ..c.in_dims
        };
        let mut dact1 = layers::maxpool2_backward(&dpool1, &c.pool1_arg, c1_dims.len());
        layers::relu_backward(&c.act1, &mut dact1);
        let (w1, b1) = split_two(&mut grads, Block::Conv1Weight, Block::Conv1Bias);
        layers::conv_backward(
            &c.cols1,
            c.in_dims.pixels(),
            params.block(Block::Conv1Weight),
            &dact1,
            w1,
            b1,
            None,
        );
    }

    if let Some(block) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient {
            block: block.name().to_string(),
        });
    }
    Ok(grads)
}

fn split_two<R>(p: &mut ModelParams<R>, a: Block, b: Block) -> (&mut [R], &mut [R]) {
    debug_assert_eq!(a.index() + 1, b.index());
    let (lo, hi) = p.tensors.split_at_mut(b.index());
    (&mut lo[a.index()], &mut hi[0])
}
