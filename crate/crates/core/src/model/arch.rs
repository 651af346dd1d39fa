//! The five backbones, laid out like their torchvision counterparts with an
//! n-channel stem and a K-way head.

use tch::nn::{self, ModuleT};
use tch::Tensor;

use super::Architecture;

pub(super) fn build(p: &nn::Path, arch: Architecture, n: i64, k: i64) -> Box<dyn ModuleT> {
    match arch {
        Architecture::Resnet18 => Box::new(resnet18(p, n, k)),
        Architecture::Alexnet => Box::new(alexnet(p, n, k)),
        Architecture::Squeezenet11 => Box::new(squeezenet11(p, n, k)),
        Architecture::Mobilenetv2 => Box::new(mobilenet_v2(p, n, k)),
        Architecture::Vgg16 => Box::new(vgg16(p, n, k)),
    }
}

pub(super) fn first_layer_name(arch: Architecture) -> &'static str {
    match arch {
        Architecture::Resnet18 => "conv1.weight",
        Architecture::Mobilenetv2 => "features.0.0.weight",
        _ => "features.0.weight",
    }
}

fn conv(p: nn::Path, c_in: i64, c_out: i64, k: i64, stride: i64, padding: i64, bias: bool) -> nn::Conv2D {
    nn::conv2d(p, c_in, c_out, k, nn::ConvConfig { stride, padding, bias, ..Default::default() })
}

fn max_pool(xs: &Tensor, k: i64, stride: i64, padding: i64, ceil: bool) -> Tensor {
    xs.max_pool2d([k, k], [stride, stride], [padding, padding], [1, 1], ceil)
}

fn basic_block(p: nn::Path, c_in: i64, c_out: i64, stride: i64) -> impl ModuleT {
    let conv1 = conv(&p / "conv1", c_in, c_out, 3, stride, 1, false);
    let bn1 = nn::batch_norm2d(&p / "bn1", c_out, Default::default());
    let conv2 = conv(&p / "conv2", c_out, c_out, 3, 1, 1, false);
    let bn2 = nn::batch_norm2d(&p / "bn2", c_out, Default::default());
    let downsample = (stride != 1 || c_in != c_out).then(|| {
        let d = &p / "downsample";
        (conv(&d / "0", c_in, c_out, 1, stride, 0, false), nn::batch_norm2d(&d / "1", c_out, Default::default()))
    });
    nn::func_t(move |xs, train| {
        let ys = xs.apply(&conv1).apply_t(&bn1, train).relu().apply(&conv2).apply_t(&bn2, train);
        let shortcut = match &downsample {
            Some((c, bn)) => xs.apply(c).apply_t(bn, train),
            None => xs.shallow_clone(),
        };
        (ys + shortcut).relu()
    })
}

fn resnet18(p: &nn::Path, n: i64, k: i64) -> nn::SequentialT {
    let conv1 = conv(p / "conv1", n, 64, 7, 2, 3, false);
    let bn1 = nn::batch_norm2d(p / "bn1", 64, Default::default());
    let mut seq = nn::seq_t()
        .add(conv1)
        .add(bn1)
        .add_fn(|xs| max_pool(&xs.relu(), 3, 2, 1, false));
    let mut c_in = 64;
    for (i, c_out) in [64, 128, 256, 512].into_iter().enumerate() {
        let layer = p / format!("layer{}", i + 1);
        let stride = if i == 0 { 1 } else { 2 };
        seq = seq.add(basic_block(&layer / "0", c_in, c_out, stride)).add(basic_block(&layer / "1", c_out, c_out, 1));
        c_in = c_out;
    }
    seq.add_fn(|xs| xs.adaptive_avg_pool2d([1, 1]).flatten(1, -1)).add(nn::linear(p / "fc", 512, k, Default::default()))
}

fn alexnet(p: &nn::Path, n: i64, k: i64) -> nn::SequentialT {
    let f = p / "features";
    let c = p / "classifier";
    nn::seq_t()
        .add(conv(&f / "0", n, 64, 11, 4, 2, true))
        .add_fn(|xs| max_pool(&xs.relu(), 3, 2, 0, false))
        .add(conv(&f / "3", 64, 192, 5, 1, 2, true))
        .add_fn(|xs| max_pool(&xs.relu(), 3, 2, 0, false))
        .add(conv(&f / "6", 192, 384, 3, 1, 1, true))
        .add_fn(Tensor::relu)
        .add(conv(&f / "8", 384, 256, 3, 1, 1, true))
        .add_fn(Tensor::relu)
        .add(conv(&f / "10", 256, 256, 3, 1, 1, true))
        .add_fn(|xs| max_pool(&xs.relu(), 3, 2, 0, false).adaptive_avg_pool2d([6, 6]).flatten(1, -1))
        .add_fn_t(|xs, train| xs.dropout(0.5, train))
        .add(nn::linear(&c / "1", 256 * 6 * 6, 4096, Default::default()))
        .add_fn_t(|xs, train| xs.relu().dropout(0.5, train))
        .add(nn::linear(&c / "4", 4096, 4096, Default::default()))
        .add_fn(Tensor::relu)
        .add(nn::linear(&c / "6", 4096, k, Default::default()))
}

fn fire(p: nn::Path, c_in: i64, squeeze: i64, e1: i64, e3: i64) -> impl ModuleT {
    let sq = conv(&p / "squeeze", c_in, squeeze, 1, 1, 0, true);
    let ex1 = conv(&p / "expand1x1", squeeze, e1, 1, 1, 0, true);
    let ex3 = conv(&p / "expand3x3", squeeze, e3, 3, 1, 1, true);
    nn::func_t(move |xs, _| {
        let s = xs.apply(&sq).relu();
        Tensor::cat(&[s.apply(&ex1).relu(), s.apply(&ex3).relu()], 1)
    })
}

fn squeezenet11(p: &nn::Path, n: i64, k: i64) -> nn::SequentialT {
    let f = p / "features";
    let head = nn::conv2d(
        p / "classifier" / "1",
        512,
        k,
        1,
        nn::ConvConfig { ws_init: nn::Init::Randn { mean: 0.0, stdev: 0.01 }, ..Default::default() },
    );
    nn::seq_t()
        .add(conv(&f / "0", n, 64, 3, 2, 0, true))
        .add_fn(|xs| max_pool(&xs.relu(), 3, 2, 0, true))
        .add(fire(&f / "3", 64, 16, 64, 64))
        .add(fire(&f / "4", 128, 16, 64, 64))
        .add_fn(|xs| max_pool(xs, 3, 2, 0, true))
        .add(fire(&f / "6", 128, 32, 128, 128))
        .add(fire(&f / "7", 256, 32, 128, 128))
        .add_fn(|xs| max_pool(xs, 3, 2, 0, true))
        .add(fire(&f / "9", 256, 48, 192, 192))
        .add(fire(&f / "10", 384, 48, 192, 192))
        .add(fire(&f / "11", 384, 64, 256, 256))
        .add(fire(&f / "12", 512, 64, 256, 256))
        .add_fn_t(|xs, train| xs.dropout(0.5, train))
        .add(head)
        .add_fn(|xs| xs.relu().adaptive_avg_pool2d([1, 1]).flatten(1, -1))
}

fn conv_bn_relu6(p: nn::Path, c_in: i64, c_out: i64, k: i64, stride: i64, groups: i64) -> nn::SequentialT {
    let cfg = nn::ConvConfig { stride, padding: (k - 1) / 2, groups, bias: false, ..Default::default() };
    nn::seq_t()
        .add(nn::conv2d(&p / "0", c_in, c_out, k, cfg))
        .add(nn::batch_norm2d(&p / "1", c_out, Default::default()))
        .add_fn(|xs| xs.clamp(0.0, 6.0))
}

fn inverted_residual(p: nn::Path, c_in: i64, c_out: i64, stride: i64, expand: i64) -> impl ModuleT {
    let hidden = c_in * expand;
    let c = &p / "conv";
    let mut body = nn::seq_t();
    let mut idx = 0;
    if expand != 1 {
        body = body.add(conv_bn_relu6(&c / "0", c_in, hidden, 1, 1, 1));
        idx = 1;
    }
    body = body
        .add(conv_bn_relu6(&c / idx.to_string(), hidden, hidden, 3, stride, hidden))
        .add(conv(&c / (idx + 1).to_string(), hidden, c_out, 1, 1, 0, false))
        .add(nn::batch_norm2d(&c / (idx + 2).to_string(), c_out, Default::default()));
    let residual = stride == 1 && c_in == c_out;
    nn::func_t(move |xs, train| {
        let ys = xs.apply_t(&body, train);
        if residual {
            ys + xs
        } else {
            ys
        }
    })
}

fn mobilenet_v2(p: &nn::Path, n: i64, k: i64) -> nn::SequentialT {
    let f = p / "features";
    let mut seq = nn::seq_t().add(conv_bn_relu6(&f / "0", n, 32, 3, 2, 1));
    let settings: [(i64, i64, i64, i64); 7] =
        [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2), (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)];
    let mut c_in = 32;
    let mut idx = 1;
    for (t, c, reps, s) in settings {
        for r in 0..reps {
            let stride = if r == 0 { s } else { 1 };
            seq = seq.add(inverted_residual(&f / idx.to_string(), c_in, c, stride, t));
            c_in = c;
            idx += 1;
        }
    }
    seq.add(conv_bn_relu6(&f / idx.to_string(), c_in, 1280, 1, 1, 1))
        .add_fn_t(|xs, train| xs.adaptive_avg_pool2d([1, 1]).flatten(1, -1).dropout(0.2, train))
        .add(nn::linear(p / "classifier" / "1", 1280, k, Default::default()))
}

fn vgg16(p: &nn::Path, n: i64, k: i64) -> nn::SequentialT {
    let f = p / "features";
    let c = p / "classifier";
    let layout: [i64; 18] = [64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0];
    let mut seq = nn::seq_t();
    let mut c_in = n;
    let mut idx = 0;
    for width in layout {
        if width == 0 {
            seq = seq.add_fn(|xs| max_pool(xs, 2, 2, 0, false));
            idx += 1;
        } else {
            seq = seq.add(conv(&f / idx.to_string(), c_in, width, 3, 1, 1, true)).add_fn(Tensor::relu);
            c_in = width;
            idx += 2;
        }
    }
    seq.add_fn(|xs| xs.adaptive_avg_pool2d([7, 7]).flatten(1, -1))
        .add(nn::linear(&c / "0", 512 * 7 * 7, 4096, Default::default()))
        .add_fn_t(|xs, train| xs.relu().dropout(0.5, train))
        .add(nn::linear(&c / "3", 4096, 4096, Default::default()))
        .add_fn_t(|xs, train| xs.relu().dropout(0.5, train))
        .add(nn::linear(&c / "6", 4096, k, Default::default()))
}
