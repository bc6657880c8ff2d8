//! Layer-stack parsing for the `--layers` flag.
//!
//! Syntax: comma-separated layer specs, either `dense:OUT` or
//! `conv:FILTERS:KERNEL`. Hidden layers get the saturating activation so
//! intermediate signals stay inside [-1, 1]; the last layer is linear.

use anyhow::{bail, Result};
use seofp::nn::{Activation, LayerKind, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchLayer {
    Dense { out_units: usize },
    Conv { filters: usize, kernel: usize },
}

pub fn parse_layers(spec: &str) -> Result<Vec<ArchLayer>> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let fields: Vec<&str> = part.trim().split(':').collect();
        let layer = match fields.as_slice() {
            ["dense", units] => ArchLayer::Dense {
                out_units: units.parse()?,
            },
            ["conv", filters, kernel] => ArchLayer::Conv {
                filters: filters.parse()?,
                kernel: kernel.parse()?,
            },
            _ => bail!("bad layer spec `{part}`; expected dense:OUT or conv:FILTERS:KERNEL"),
        };
        out.push(layer);
    }
    if out.is_empty() {
        bail!("at least one layer is required");
    }
    Ok(out)
}

/// Expands parsed layers into concrete shapes for a 1-channel input of
/// `frame` samples. The stack must map the input back to its own shape
/// (1 channel, same length) so it can serve as a denoiser.
pub fn build_specs(arch: &[ArchLayer], frame: usize) -> Result<Vec<(LayerKind, Activation)>> {
    let mut specs = Vec::with_capacity(arch.len());
    let mut channels = 1usize;
    let mut len = frame;
    for (i, layer) in arch.iter().enumerate() {
        let last = i + 1 == arch.len();
        let activation = if last {
            Activation::Identity
        } else {
            Activation::Clamp
        };
        let kind = match *layer {
            ArchLayer::Dense { out_units } => {
                let kind = LayerKind::Dense {
                    in_units: channels * len,
                    out_units,
                };
                channels = 1;
                len = out_units;
                kind
            }
            ArchLayer::Conv { filters, kernel } => {
                let kind = LayerKind::Conv1d {
                    filters,
                    kernel,
                    in_channels: channels,
                };
                channels = filters;
                kind
            }
        };
        specs.push((kind, activation));
    }
    if channels != 1 || len != frame {
        bail!(
            "layer stack maps {frame} samples to {channels}x{len}; a denoiser must \
             preserve the input shape"
        );
    }
    Ok(specs)
}

/// Whether the first layer consumes fixed-size frames (dense) or whole
/// utterances (convolutional).
pub fn wants_frames(arch: &[ArchLayer]) -> bool {
    matches!(arch.first(), Some(ArchLayer::Dense { .. }))
}

/// Input shape a stored model expects: (channels, fixed length if any).
pub fn model_input_shape(model: &Model) -> Result<(usize, Option<usize>)> {
    match model.layers.first() {
        Some(layer) => Ok(match layer.kind {
            LayerKind::Dense { in_units, .. } => (1, Some(in_units)),
            LayerKind::Conv1d { in_channels, .. } => (in_channels, None),
        }),
        None => bail!("model has no layers"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_mixed_stack() {
        let arch = parse_layers("conv:8:9, conv:1:9").unwrap();
        assert_eq!(
            arch,
            vec![
                ArchLayer::Conv {
                    filters: 8,
                    kernel: 9
                },
                ArchLayer::Conv {
                    filters: 1,
                    kernel: 9
                },
            ]
        );
        let specs = build_specs(&arch, 64).unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[0].1, Activation::Clamp);
        assert_eq!(specs[1].1, Activation::Identity);
    }

    #[test]
    fn dense_stack_must_restore_frame() {
        let arch = parse_layers("dense:16,dense:8").unwrap();
        assert!(build_specs(&arch, 16).is_err());
        let arch = parse_layers("dense:8,dense:16").unwrap();
        assert!(build_specs(&arch, 16).is_ok());
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_layers("lstm:4").is_err());
        assert!(parse_layers("").is_err());
        assert!(parse_layers("dense").is_err());
    }
}
