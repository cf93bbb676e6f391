use std::fmt::Write as _;

use crate::{Error, Result};

/// Activation shape of one sample: channels × (nx, ny, nz). Flat feature
/// vectors use dims `[1, 1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub c: usize,
    pub d: [usize; 3],
}

impl Shape {
    pub fn new(c: usize, d: [usize; 3]) -> Self {
        Self { c, d }
    }

    pub fn flat(n: usize) -> Self {
        Self { c: n, d: [1, 1, 1] }
    }

    pub fn spatial(&self) -> usize {
        self.d[0] * self.d[1] * self.d[2]
    }

    pub fn len(&self) -> usize {
        self.c * self.spatial()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// Zero padding `kernel/2` on every side.
    Conv3d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    },
    BatchNorm {
        channels: usize,
        eps: f64,
        momentum: f64,
    },
    PRelu {
        channels: usize,
    },
    MaxPool2,
    Flatten,
    FullyConnected {
        inputs: usize,
        outputs: usize,
    },
    Sigmoid,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv3d { .. } => "conv",
            LayerSpec::BatchNorm { .. } => "bn",
            LayerSpec::PRelu { .. } => "prelu",
            LayerSpec::MaxPool2 => "maxpool2",
            LayerSpec::Flatten => "flatten",
            LayerSpec::FullyConnected { .. } => "fc",
            LayerSpec::Sigmoid => "sigmoid",
        }
    }

    pub fn batch_norm(channels: usize) -> Self {
        LayerSpec::BatchNorm { channels, eps: BN_EPS, momentum: BN_MOMENTUM }
    }

    /// Lengths of the trainable arrays, in storage order.
    pub fn param_sizes(&self) -> Vec<usize> {
        match *self {
            LayerSpec::Conv3d { in_ch, out_ch, kernel, .. } => vec![out_ch * in_ch * kernel.pow(3), out_ch],
            LayerSpec::BatchNorm { channels, .. } => vec![channels, channels],
            LayerSpec::PRelu { channels } => vec![channels],
            LayerSpec::FullyConnected { inputs, outputs } => vec![outputs * inputs, outputs],
            _ => Vec::new(),
        }
    }

    /// Lengths of the non-trainable state arrays (running mean and variance).
    pub fn state_sizes(&self) -> Vec<usize> {
        match *self {
            LayerSpec::BatchNorm { channels, .. } => vec![channels, channels],
            _ => Vec::new(),
        }
    }

    /// Output shape for input `s`, or a message naming what does not fit.
    pub fn output_shape(&self, s: Shape) -> std::result::Result<Shape, String> {
        match *self {
            LayerSpec::Conv3d { in_ch, out_ch, kernel, stride } => {
                if in_ch != s.c {
                    return Err(format!("expects {in_ch} input channels, got {}", s.c));
                }
                if kernel == 0 || stride == 0 || out_ch == 0 {
                    return Err("kernel, stride and channels must be positive".into());
                }
                let pad = kernel / 2;
                let mut d = [0; 3];
                for a in 0..3 {
                    let span = s.d[a] + 2 * pad;
                    if span < kernel {
                        return Err(format!("kernel {kernel} larger than padded extent {span}"));
                    }
                    d[a] = (span - kernel) / stride + 1;
                }
                Ok(Shape::new(out_ch, d))
            }
            LayerSpec::BatchNorm { channels, eps, momentum } => {
                if channels != s.c {
                    return Err(format!("expects {channels} channels, got {}", s.c));
                }
                if !(eps > 0.0) || !(0.0..=1.0).contains(&momentum) {
                    return Err("eps must be > 0 and momentum in [0, 1]".into());
                }
                Ok(s)
            }
            LayerSpec::PRelu { channels } => {
                if channels != s.c {
                    return Err(format!("expects {channels} channels, got {}", s.c));
                }
                Ok(s)
            }
            LayerSpec::MaxPool2 => {
                if s.d.iter().any(|&n| n < 2) {
                    return Err(format!("cannot pool dims {:?}", s.d));
                }
                Ok(Shape::new(s.c, [s.d[0] / 2, s.d[1] / 2, s.d[2] / 2]))
            }
            LayerSpec::Flatten => Ok(Shape::flat(s.len())),
            LayerSpec::FullyConnected { inputs, outputs } => {
                if inputs != s.len() {
                    return Err(format!("expects {inputs} inputs, got {}", s.len()));
                }
                if outputs == 0 {
                    return Err("zero outputs".into());
                }
                Ok(Shape::flat(outputs))
            }
            LayerSpec::Sigmoid => Ok(s),
        }
    }
}

/// Ordered layers plus the input shape and the regression output size.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
    pub output_dim: usize,
}

impl NetSpec {
    /// Shapes after every layer; `shapes[0]` is the input.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shapes = vec![self.input];
        if self.input.is_empty() {
            return Err(Error::InvalidArgument("empty network input".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let next = l
                .output_shape(*shapes.last().unwrap())
                .map_err(|m| Error::DimensionMismatch(format!("layer {i} ({}): {m}", l.name())))?;
            shapes.push(next);
        }
        let last = *shapes.last().unwrap();
        if last != Shape::flat(self.output_dim) {
            return Err(Error::DimensionMismatch(format!("network ends in {last:?}, expected {} flat outputs", self.output_dim)));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    /// Five conv blocks and two fully connected layers for a single-channel
    /// volume. Channel widths are `w, 2w, 4w, 4w, 8w`; pools follow blocks
    /// 1, 2, 3 and 5 while every dim is still at least 2.
    pub fn loadings_regressor(input: [usize; 3], output_dim: usize, width: usize, hidden: usize) -> Result<Self> {
        let chans = [width, 2 * width, 4 * width, 4 * width, 8 * width];
        let pool_after = [true, true, true, false, true];
        let mut layers = Vec::new();
        let mut shape = Shape::new(1, input);
        for (b, &out) in chans.iter().enumerate() {
            let block = [
                LayerSpec::Conv3d { in_ch: shape.c, out_ch: out, kernel: 3, stride: 1 },
                LayerSpec::batch_norm(out),
                LayerSpec::PRelu { channels: out },
            ];
            for l in block {
                shape = l.output_shape(shape).map_err(Error::DimensionMismatch)?;
                layers.push(l);
            }
            if pool_after[b] && shape.d.iter().all(|&n| n >= 2) {
                shape = LayerSpec::MaxPool2.output_shape(shape).map_err(Error::DimensionMismatch)?;
                layers.push(LayerSpec::MaxPool2);
            }
        }
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::FullyConnected { inputs: shape.len(), outputs: hidden });
        layers.push(LayerSpec::PRelu { channels: hidden });
        layers.push(LayerSpec::FullyConnected { inputs: hidden, outputs: output_dim });
        let spec = Self { input: Shape::new(1, input), layers, output_dim };
        spec.validate()?;
        Ok(spec)
    }

    /// `inputs → hidden → 1` with a sigmoid output.
    pub fn mlp(inputs: usize, hidden: usize) -> Result<Self> {
        let spec = Self {
            input: Shape::flat(inputs),
            layers: vec![
                LayerSpec::FullyConnected { inputs, outputs: hidden },
                LayerSpec::PRelu { channels: hidden },
                LayerSpec::FullyConnected { inputs: hidden, outputs: 1 },
                LayerSpec::Sigmoid,
            ],
            output_dim: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// One line per layer, e.g. `conv 1 8 3 1`.
    pub fn to_ascii(&self) -> String {
        let mut s = String::new();
        let i = self.input;
        writeln!(s, "input {} {} {} {}", i.c, i.d[0], i.d[1], i.d[2]).unwrap();
        for l in &self.layers {
            match *l {
                LayerSpec::Conv3d { in_ch, out_ch, kernel, stride } => writeln!(s, "conv {in_ch} {out_ch} {kernel} {stride}"),
                LayerSpec::BatchNorm { channels, eps, momentum } => writeln!(s, "bn {channels} {eps:e} {momentum}"),
                LayerSpec::PRelu { channels } => writeln!(s, "prelu {channels}"),
                LayerSpec::MaxPool2 => writeln!(s, "maxpool2"),
                LayerSpec::Flatten => writeln!(s, "flatten"),
                LayerSpec::FullyConnected { inputs, outputs } => writeln!(s, "fc {inputs} {outputs}"),
                LayerSpec::Sigmoid => writeln!(s, "sigmoid"),
            }
            .unwrap();
        }
        writeln!(s, "output {}", self.output_dim).unwrap();
        s
    }

    pub fn from_ascii(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::format("network spec", format!("cannot parse '{line}'"));
        let mut input = None;
        let mut layers = Vec::new();
        let mut output = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split_whitespace().collect();
            let u = |i: usize| f.get(i).and_then(|t| t.parse::<usize>().ok()).ok_or_else(|| bad(line));
            let x = |i: usize| f.get(i).and_then(|t| t.parse::<f64>().ok()).ok_or_else(|| bad(line));
            match f[0] {
                "input" => input = Some(Shape::new(u(1)?, [u(2)?, u(3)?, u(4)?])),
                "conv" => layers.push(LayerSpec::Conv3d { in_ch: u(1)?, out_ch: u(2)?, kernel: u(3)?, stride: u(4)? }),
                "bn" => layers.push(LayerSpec::BatchNorm { channels: u(1)?, eps: x(2)?, momentum: x(3)? }),
                "prelu" => layers.push(LayerSpec::PRelu { channels: u(1)? }),
                "maxpool2" => layers.push(LayerSpec::MaxPool2),
                "flatten" => layers.push(LayerSpec::Flatten),
                "fc" => layers.push(LayerSpec::FullyConnected { inputs: u(1)?, outputs: u(2)? }),
                "sigmoid" => layers.push(LayerSpec::Sigmoid),
                "output" => output = Some(u(1)?),
                _ => return Err(bad(line)),
            }
        }
        let spec = Self {
            input: input.ok_or_else(|| Error::format("network spec", "missing input line"))?,
            layers,
            output_dim: output.ok_or_else(|| Error::format("network spec", "missing output line"))?,
        };
        spec.validate()?;
        Ok(spec)
    }
}
