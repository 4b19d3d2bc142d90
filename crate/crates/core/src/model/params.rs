//! The trainable hyperparameters and their flat unconstrained encoding.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::exact::GpwdNoise;
use crate::interp::InterpField;
use crate::kernels::KernelParams;
use crate::transform::{
    from_positive, positive_derivative, to_positive, KERNEL_FLOOR, NOISE_FLOOR, TEMPERATURE_FLOOR,
};

/// Kernel, interpolation field and noise variances.
#[derive(Debug, Clone, PartialEq)]
pub struct DsoftkiParams {
    pub kernel: KernelParams,
    pub field: InterpField,
    pub noise: GpwdNoise,
}

/// Named slices of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Lengthscales,
    Scale,
    Points,
    Temperatures,
    ValueNoise,
    GradientNoise,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Lengthscales,
        ParamGroup::Scale,
        ParamGroup::Points,
        ParamGroup::Temperatures,
        ParamGroup::ValueNoise,
        ParamGroup::GradientNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Lengthscales => "lengthscale",
            ParamGroup::Scale => "scale",
            ParamGroup::Points => "points",
            ParamGroup::Temperatures => "temperatures",
            ParamGroup::ValueNoise => "value_noise",
            ParamGroup::GradientNoise => "gradient_noise",
        }
    }
}

/// Offsets of each [`ParamGroup`] inside the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    groups: Vec<(ParamGroup, Range<usize>)>,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.groups.last().map_or(0, |(_, r)| r.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self, group: ParamGroup) -> Range<usize> {
        self.groups
            .iter()
            .find(|(g, _)| *g == group)
            .map(|(_, r)| r.clone())
            .expect("every group is present")
    }

    pub fn groups(&self) -> impl Iterator<Item = (ParamGroup, Range<usize>)> + '_ {
        self.groups.iter().cloned()
    }

    pub fn group_of(&self, index: usize) -> ParamGroup {
        self.groups
            .iter()
            .find(|(_, r)| r.contains(&index))
            .map(|(g, _)| *g)
            .expect("index inside layout")
    }
}

/// Gradient with respect to the constrained (natural) parameters.
#[derive(Debug, Clone)]
pub(crate) struct ParamGradient {
    pub lengthscales: Vec<f64>,
    pub scale: f64,
    pub points: DMatrix<f64>,
    /// Per-row temperature gradient; tied rows are summed when flattening.
    pub temperatures: DMatrix<f64>,
    pub value_noise: f64,
    pub gradient_noise: f64,
}

impl DsoftkiParams {
    /// Lengthscale 1, scale 1, unit temperatures, and the given noise variances.
    pub fn initial(points: DMatrix<f64>, shared_temperature: bool, noise: GpwdNoise) -> Self {
        let d = points.ncols();
        let field = if shared_temperature {
            InterpField::with_shared_temperature(points, &vec![1.0; d])
        } else {
            let t = DMatrix::from_element(points.nrows(), d, 1.0);
            InterpField::new(points, t)
        };
        DsoftkiParams {
            kernel: KernelParams::isotropic(d, 1.0, 1.0),
            field,
            noise,
        }
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn num_points(&self) -> usize {
        self.field.num_points()
    }

    pub fn layout(&self) -> ParamLayout {
        let (m, d) = (self.num_points(), self.dim());
        let t_len = if self.field.shared_temperature { d } else { m * d };
        let sizes = [
            (ParamGroup::Lengthscales, d),
            (ParamGroup::Scale, 1),
            (ParamGroup::Points, m * d),
            (ParamGroup::Temperatures, t_len),
            (ParamGroup::ValueNoise, 1),
            (ParamGroup::GradientNoise, 1),
        ];
        let mut start = 0;
        let groups = sizes
            .iter()
            .map(|(g, n)| {
                let r = start..start + n;
                start += n;
                (*g, r)
            })
            .collect();
        ParamLayout { groups }
    }

    /// Flat unconstrained encoding; points are row-major.
    pub fn to_unconstrained(&self) -> DVector<f64> {
        let (m, d) = (self.num_points(), self.dim());
        let mut out = Vec::with_capacity(self.layout().len());
        out.extend(
            self.kernel
                .lengthscales
                .iter()
                .map(|l| from_positive(*l, KERNEL_FLOOR)),
        );
        out.push(from_positive(self.kernel.scale, KERNEL_FLOOR));
        for j in 0..m {
            for k in 0..d {
                out.push(self.field.points[(j, k)]);
            }
        }
        let t_rows = if self.field.shared_temperature { 1 } else { m };
        for j in 0..t_rows {
            for k in 0..d {
                out.push(from_positive(self.field.temperatures[(j, k)], TEMPERATURE_FLOOR));
            }
        }
        out.push(from_positive(self.noise.value, NOISE_FLOOR));
        out.push(from_positive(self.noise.gradient, NOISE_FLOOR));
        DVector::from_vec(out)
    }

    /// Parameters decoded from `raw`, keeping shapes and flags of `self`.
    pub fn with_unconstrained(&self, raw: &DVector<f64>) -> Self {
        let layout = self.layout();
        assert_eq!(raw.len(), layout.len(), "parameter vector length");
        let (m, d) = (self.num_points(), self.dim());
        let slice = |g: ParamGroup| &raw.as_slice()[layout.range(g)];
        let lengthscales = slice(ParamGroup::Lengthscales)
            .iter()
            .map(|v| to_positive(*v, KERNEL_FLOOR))
            .collect();
        let scale = to_positive(slice(ParamGroup::Scale)[0], KERNEL_FLOOR);
        let points = DMatrix::from_row_slice(m, d, slice(ParamGroup::Points));
        let traw = slice(ParamGroup::Temperatures);
        let temperatures = DMatrix::from_fn(m, d, |j, k| {
            let idx = if self.field.shared_temperature { k } else { j * d + k };
            to_positive(traw[idx], TEMPERATURE_FLOOR)
        });
        DsoftkiParams {
            kernel: KernelParams {
                lengthscales,
                scale,
            },
            field: InterpField {
                points,
                temperatures,
                eps: self.field.eps,
                shared_temperature: self.field.shared_temperature,
            },
            noise: GpwdNoise {
                value: to_positive(slice(ParamGroup::ValueNoise)[0], NOISE_FLOOR),
                gradient: to_positive(slice(ParamGroup::GradientNoise)[0], NOISE_FLOOR),
            },
        }
    }

    /// Chains a natural-parameter gradient through the positivity maps.
    pub(crate) fn flatten_gradient(&self, g: &ParamGradient) -> DVector<f64> {
        let raw = self.to_unconstrained();
        let layout = self.layout();
        let (m, d) = (self.num_points(), self.dim());
        let mut out = DVector::zeros(layout.len());
        let r = layout.range(ParamGroup::Lengthscales);
        for k in 0..d {
            out[r.start + k] = g.lengthscales[k] * positive_derivative(raw[r.start + k]);
        }
        let r = layout.range(ParamGroup::Scale);
        out[r.start] = g.scale * positive_derivative(raw[r.start]);
        let r = layout.range(ParamGroup::Points);
        for j in 0..m {
            for k in 0..d {
                out[r.start + j * d + k] = g.points[(j, k)];
            }
        }
        let r = layout.range(ParamGroup::Temperatures);
        for j in 0..m {
            for k in 0..d {
                let idx = if self.field.shared_temperature { k } else { j * d + k };
                out[r.start + idx] += g.temperatures[(j, k)];
            }
        }
        for idx in r {
            out[idx] *= positive_derivative(raw[idx]);
        }
        let r = layout.range(ParamGroup::ValueNoise);
        out[r.start] = g.value_noise * positive_derivative(raw[r.start]);
        let r = layout.range(ParamGroup::GradientNoise);
        out[r.start] = g.gradient_noise * positive_derivative(raw[r.start]);
        out
    }
}
