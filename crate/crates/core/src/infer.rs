//! Whole-image inference on focal stacks read from disk.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::networks::{init_model, NetKind, WidthConfig};
use crate::nn::{Checkpoint, Model};
use crate::tensor::Tensor;
use crate::train::checkpoint_prefixes;

/// Builds `kind` at `width` and fills it from the checkpoint at `path`.
pub fn load_model(kind: NetKind, width: &WidthConfig, path: &Path) -> Result<Model<f32>> {
    let mut model = init_model(kind, width, 0)?;
    Checkpoint::read(path)?.load_into(&mut model, &checkpoint_prefixes(kind))?;
    Ok(model)
}

/// Largest extent not above `n` that is a multiple of `m`.
fn floor_to(n: usize, m: usize) -> Result<usize> {
    let v = n / m * m;
    if v == 0 {
        return Err(Error::Shape(format!("extent {n} is smaller than the network's multiple {m}")));
    }
    Ok(v)
}

/// `[1, slices·channels, h, w]` tensor of `slices`, cropped at the bottom and
/// right to multiples of `multiple`.
pub fn stack_tensor(slices: &[Image], multiple: usize) -> Result<Tensor<f32>> {
    let first = slices.first().ok_or_else(|| Error::Usage("empty focal stack".into()))?;
    let (w0, h0, c) = (first.width(), first.height(), first.channels());
    if slices.iter().any(|s| (s.width(), s.height(), s.channels()) != (w0, h0, c)) {
        return Err(Error::Shape("focal stack slices differ in size".into()));
    }
    let (w, h) = (floor_to(w0, multiple)?, floor_to(h0, multiple)?);
    let mut data = Vec::with_capacity(slices.len() * c * w * h);
    for s in slices {
        let s = if (w, h) == (w0, h0) { s.clone() } else { s.crop(0, 0, w, h)? };
        data.extend(s.to_planar());
    }
    Tensor::from_vec(&[1, slices.len() * c, h, w], data)
}

fn check_slices(kind: NetKind, width: &WidthConfig, slices: &[Image]) -> Result<()> {
    if slices.len() != width.slices {
        return Err(Error::Usage(format!(
            "{} expects {} focal slices, got {}",
            kind.display_name(),
            width.slices,
            slices.len()
        )));
    }
    Ok(())
}

fn tensor_image(t: Tensor<f32>, clamp: bool) -> Result<Image> {
    let (_, c, h, w) = t.dims4()?;
    let mut data = t.into_data();
    if clamp {
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    Image::from_planar(w, h, c, &data)
}

/// All-in-focus image from EDoFNet.
pub fn infer_edof(model: &Model<f32>, width: &WidthConfig, stack: &[Image]) -> Result<Image> {
    check_slices(NetKind::Edof, width, stack)?;
    let x = stack_tensor(stack, model.graph().spatial_multiple)?;
    tensor_image(model.infer(&[("stack", &x)])?, true)
}

/// Normalised disparity in `[0, 1]` for the left view.
///
/// FocusNet and FocusNet-v2 read `left` only. StereoNet needs `right` and an
/// EDoFNet to turn both stacks into all-in-focus images; BDfFNet needs
/// `right`.
pub fn infer_depth(
    kind: NetKind,
    model: &Model<f32>,
    width: &WidthConfig,
    left: &[Image],
    right: Option<&[Image]>,
    edof: Option<&Model<f32>>,
) -> Result<Image> {
    let m = model.graph().spatial_multiple;
    let need_right = || right.ok_or_else(|| Error::Usage(format!("{} needs a right focal stack", kind.display_name())));
    check_slices(kind, width, left)?;
    if let Some(r) = right {
        check_slices(kind, width, r)?;
    }
    let out = match kind {
        NetKind::Edof => return Err(Error::Usage("EDoFNet predicts colour, not disparity".into())),
        NetKind::Focus | NetKind::Focus2 => model.infer(&[("stack", &stack_tensor(left, m)?)])?,
        NetKind::Stereo => {
            let edof = edof.ok_or_else(|| Error::Usage("StereoNet needs an EDoFNet checkpoint".into()))?;
            let em = edof.graph().spatial_multiple;
            let l = edof.infer(&[("stack", &stack_tensor(left, m.max(em))?)])?;
            let r = edof.infer(&[("stack", &stack_tensor(need_right()?, m.max(em))?)])?;
            model.infer(&[("left", &l), ("right", &r)])?
        }
        NetKind::Bdff => {
            let (l, r) = (stack_tensor(left, m)?, stack_tensor(need_right()?, m)?);
            if l.shape() != r.shape() {
                return Err(Error::Shape("left and right stacks differ in size".into()));
            }
            model.infer(&[("left_stack", &l), ("right_stack", &r)])?
        }
    };
    tensor_image(out, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(n: usize, w: usize, h: usize) -> Vec<Image> {
        (0..n)
            .map(|k| Image::from_fn(w, h, 3, |x, y, c| ((x * 7 + y * 3 + c + k) % 11) as f32 / 10.0))
            .collect()
    }

    #[test]
    fn stack_tensor_crops_to_multiple() {
        let t = stack_tensor(&stack(2, 19, 17), 8).unwrap();
        assert_eq!(t.shape(), &[1, 6, 16, 16]);
        assert!(stack_tensor(&stack(2, 7, 17), 8).is_err());
        assert!(stack_tensor(&[], 8).is_err());
    }

    #[test]
    fn depth_is_clamped_and_inputs_checked() {
        let w = WidthConfig::tiny();
        let m = init_model(NetKind::Focus, &w, 1).unwrap();
        let d = infer_depth(NetKind::Focus, &m, &w, &stack(2, 16, 16), None, None).unwrap();
        assert_eq!((d.width(), d.height(), d.channels()), (16, 16, 1));
        assert!(d.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(infer_depth(NetKind::Focus, &m, &w, &stack(3, 16, 16), None, None).is_err());
        let b = init_model(NetKind::Bdff, &w, 1).unwrap();
        assert!(infer_depth(NetKind::Bdff, &b, &w, &stack(2, 16, 16), None, None).is_err());
        let s = init_model(NetKind::Stereo, &w, 1).unwrap();
        let e = init_model(NetKind::Edof, &w, 1).unwrap();
        let l = stack(2, 16, 16);
        assert!(infer_depth(NetKind::Stereo, &s, &w, &l, Some(&l), None).is_err());
        let d = infer_depth(NetKind::Stereo, &s, &w, &l, Some(&l), Some(&e)).unwrap();
        assert_eq!(d.width(), 16);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let w = WidthConfig::tiny();
        let mut m = init_model(NetKind::Edof, &w, 5).unwrap();
        m.params.values_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v += 0.01));
        let x = stack_tensor(&stack(2, 8, 8), 1).unwrap();
        m.forward(&[("stack", &x)], crate::nn::Mode::Train).unwrap();
        let p = dir.path().join("edof.ckpt");
        Checkpoint::from_model(&m, None).write(&p).unwrap();
        let back = load_model(NetKind::Edof, &w, &p).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.running, m.running);
        let img = infer_edof(&back, &w, &stack(2, 8, 8)).unwrap();
        assert_eq!(img.channels(), 3);
        assert!(load_model(NetKind::Focus, &w, &p).is_err());
    }
}
